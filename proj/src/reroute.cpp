#include "capmoe/reroute.hpp"

#include <algorithm>

namespace capmoe {
namespace {

struct RoundOutcome {
    AssignmentSet survivors;
    LoadVector loads;
    std::int64_t dropped = 0;
};

// One reselection + drop round over `work`, zeroing victim entries in place.
RoundOutcome run_round(ScoreMatrix& work, int top_k, std::int64_t capacity) {
    const Eigen::Index num_experts = work.cols();
    AssignmentSet selection = topk_select(work, top_k);

    std::vector<std::vector<std::size_t>> buckets(static_cast<std::size_t>(num_experts));
    for (std::size_t i = 0; i < selection.size(); ++i) {
        buckets[static_cast<std::size_t>(selection[i].expert)].push_back(i);
    }

    RoundOutcome outcome;
    std::vector<char> is_dropped(selection.size(), 0);
    for (Eigen::Index expert = 0; expert < num_experts; ++expert) {
        const auto& bucket = buckets[static_cast<std::size_t>(expert)];
        const auto load = static_cast<std::int64_t>(bucket.size());
        if (capacity == kUnboundedCapacity || load <= capacity) {
            continue;
        }
        const std::int64_t overflow = load - capacity;
        std::vector<std::pair<double, Eigen::Index>> entries;
        entries.reserve(bucket.size());
        for (std::size_t pos : bucket) {
            entries.emplace_back(selection[pos].score, selection[pos].token);
        }
        for (std::size_t local : detail::lowest_score_victims(entries, overflow)) {
            const std::size_t pos = bucket[local];
            is_dropped[pos] = 1;
            work(selection[pos].token, expert) = 0.0;
            ++outcome.dropped;
        }
    }

    outcome.survivors.reserve(selection.size() - static_cast<std::size_t>(outcome.dropped));
    for (std::size_t i = 0; i < selection.size(); ++i) {
        if (!is_dropped[i]) {
            outcome.survivors.push_back(selection[i]);
        }
    }
    outcome.loads = expert_load(outcome.survivors, num_experts);
    return outcome;
}

void validate_args(const ScoreMatrix& scores, int top_k, std::int64_t capacity, int rounds) {
    if (rounds < 1) {
        throw std::invalid_argument("reroute: rounds must be >= 1");
    }
    if (top_k < 1 || top_k > scores.cols()) {
        throw std::invalid_argument("reroute: top_k must satisfy 1 <= k <= n");
    }
    if (capacity < 0) {
        throw std::invalid_argument("reroute: capacity must be >= 0");
    }
}

}  // namespace

RerouteResult reroute(const ScoreMatrix& scores, const RerouteConfig& cfg) {
    validate_args(scores, cfg.top_k, cfg.capacity, cfg.rounds);

    RerouteResult result;
    result.updated_scores = scores;
    result.per_round.reserve(static_cast<std::size_t>(cfg.rounds));

    bool at_fixed_point = false;
    RoundOutcome outcome;
    for (int round = 0; round < cfg.rounds; ++round) {
        if (!at_fixed_point) {
            outcome = run_round(result.updated_scores, cfg.top_k, cfg.capacity);
            at_fixed_point = outcome.dropped == 0;
        }
        // At a fixed point every later round reselects the same mappings and
        // drops nothing, so the recorded stats repeat unchanged.
        result.per_round.push_back({outcome.loads, outcome.dropped});
    }
    result.final = std::move(outcome.survivors);
    return result;
}

std::vector<RerouteSweepEntry> reroute_sweep(const ScoreMatrix& scores, int top_k,
                                             std::int64_t capacity, int max_rounds) {
    validate_args(scores, top_k, capacity, max_rounds);

    std::vector<RerouteSweepEntry> entries;
    entries.reserve(static_cast<std::size_t>(max_rounds));
    ScoreMatrix work = scores;
    bool at_fixed_point = false;
    RoundOutcome outcome;
    for (int round = 0; round < max_rounds; ++round) {
        if (!at_fixed_point) {
            outcome = run_round(work, top_k, capacity);
            at_fixed_point = outcome.dropped == 0;
        }
        RerouteSweepEntry entry;
        entry.rounds = round + 1;
        entry.retained = static_cast<std::int64_t>(outcome.survivors.size());
        entry.dropped_in_round = outcome.dropped;
        entry.loads = outcome.loads;
        entries.push_back(std::move(entry));
    }
    return entries;
}

}  // namespace capmoe
