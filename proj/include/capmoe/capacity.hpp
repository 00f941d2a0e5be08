// capacity.hpp - expert capacity and overflow token dropping

#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "capmoe/gating.hpp"

namespace capmoe {

// Sentinel for "no capacity limit".
inline constexpr std::int64_t kUnboundedCapacity = std::numeric_limits<std::int64_t>::max();

enum class DropMetric {
    order,          // drop the latest token ids from an overflowed expert
    reverse_order,  // drop the earliest token ids
    random,         // drop uniformly at random (seeded, order-independent)
    score,          // drop the lowest-score mappings
};

DropMetric drop_metric_from_string(const std::string& name);
std::string to_string(DropMetric metric);

struct CapacityPolicy {
    double gamma = std::numeric_limits<double>::infinity();  // > 0; +inf = unbounded
    DropMetric metric = DropMetric::score;
    std::uint64_t seed = 0;  // consumed by the random metric only
};

using MappingKey = std::pair<Eigen::Index, Eigen::Index>;  // (token, expert)

struct DropResult {
    AssignmentSet retained;
    std::vector<MappingKey> dropped;  // sorted by (token, expert)
    std::int64_t capacity = kUnboundedCapacity;
    ScoreMatrix masked_scores;  // input scores with dropped entries zeroed
};

// C = ceil(gamma * t*k/n); gamma = +inf returns kUnboundedCapacity. Products
// that land within 1e-9 of an integer are snapped to it before the ceiling,
// so a fractional gamma never drops a token an exact-real capacity would keep.
std::int64_t capacity_limit(double gamma, std::int64_t num_tokens, int top_k,
                            std::int64_t num_experts);

// Per expert with load N_j > capacity, drops exactly N_j - capacity mappings
// chosen by the policy metric. For the score metric the threshold is the
// (N_j - C)-th smallest score over the expert's assigned mappings; ties at
// the threshold drop higher token ids first so exactly N_j - C go.
DropResult drop_overflow(const ScoreMatrix& scores, const AssignmentSet& assignments,
                         std::int64_t capacity, const CapacityPolicy& policy);

// Total dropped-token proportion: sum_i max(0, N_i - C) / sum_i N_i.
double dropped_fraction(const LoadVector& loads, std::int64_t capacity);

// Baseline that skips the floor(fraction * n) lowest-load experts outright
// (ties skip the lower expert index first) and drops all of their mappings.
DropResult expert_drop(const ScoreMatrix& scores, const AssignmentSet& assignments,
                       const LoadVector& loads, double fraction);

namespace detail {

// Positions into `entries` of the `count` lowest-score entries; ties at the
// threshold score resolve toward higher token ids. Shared by the score drop
// metric and the reroute rounds so both sides drop identically.
std::vector<std::size_t> lowest_score_victims(
    const std::vector<std::pair<double, Eigen::Index>>& entries,  // (score, token)
    std::int64_t count);

}  // namespace detail

}  // namespace capmoe
