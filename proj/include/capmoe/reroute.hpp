// reroute.hpp - iterative capacity-aware token rerouting

#pragma once

#include <cstdint>
#include <vector>

#include "capmoe/capacity.hpp"

namespace capmoe {

struct RerouteConfig {
    int rounds = 2;  // R >= 1
    std::int64_t capacity = kUnboundedCapacity;
    int top_k = 1;
};

struct RoundStats {
    LoadVector loads;          // expert loads over the round's surviving selection
    std::int64_t dropped = 0;  // mappings zeroed during the round
};

struct RerouteResult {
    AssignmentSet final;           // last round's selection after its drop step
    std::vector<RoundStats> per_round;  // exactly cfg.rounds entries
    ScoreMatrix updated_scores;    // input scores with every dropped entry zeroed
};

// Runs R rounds of: top-k reselection over the strictly positive entries of
// the working score matrix, then a score-rule drop of each overflowed
// expert's excess mappings (zeroing them so rejected tokens reselect among
// the remaining experts in later rounds). A round that drops nothing is a
// fixed point; remaining rounds are elided and reported unchanged.
RerouteResult reroute(const ScoreMatrix& scores, const RerouteConfig& cfg);

struct RerouteSweepEntry {
    int rounds = 0;
    std::int64_t retained = 0;          // |final| after this many rounds
    std::int64_t dropped_in_round = 0;
    LoadVector loads;
};

// Summaries for R = 1..max_rounds from a single pass; the entry for R equals
// truncating a longer run after round R (rounds are prefix-deterministic).
std::vector<RerouteSweepEntry> reroute_sweep(const ScoreMatrix& scores, int top_k,
                                             std::int64_t capacity, int max_rounds);

}  // namespace capmoe
