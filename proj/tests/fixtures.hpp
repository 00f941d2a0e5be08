// fixtures.hpp - shared test fixtures: a 6-token, 3-expert, top-1 routing
// problem small enough to verify every number by hand.
//
// Scores (rows sum to 1, so logits = log(scores) softmax back to them):
//   t0: 0.90 0.06 0.04   -> expert 0
//   t1: 0.80 0.12 0.08   -> expert 0
//   t2: 0.70 0.20 0.10   -> expert 0
//   t3: 0.60 0.15 0.25   -> expert 0
//   t4: 0.10 0.80 0.10   -> expert 1
//   t5: 0.10 0.20 0.70   -> expert 2
// Loads [4,1,1]; expected load 2; at gamma=1 the capacity is 2, so expert 0
// overflows by 2 and the score rule drops t2 and t3.

#pragma once

#include "capmoe/gating.hpp"
#include "capmoe/trace.hpp"

namespace fixtures {

inline capmoe::ScoreMatrix six_token_scores() {
    capmoe::ScoreMatrix scores(6, 3);
    scores << 0.90, 0.06, 0.04,  //
        0.80, 0.12, 0.08,        //
        0.70, 0.20, 0.10,        //
        0.60, 0.15, 0.25,        //
        0.10, 0.80, 0.10,        //
        0.10, 0.20, 0.70;
    return scores;
}

inline capmoe::RoutingTrace six_token_trace() {
    capmoe::RoutingTrace trace;
    trace.layer_id = 0;
    trace.num_tokens = 6;
    trace.num_experts = 3;
    trace.top_k = 1;
    trace.logits = six_token_scores().array().log();
    return trace;
}

}  // namespace fixtures
