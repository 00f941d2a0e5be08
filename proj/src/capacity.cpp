#include "capmoe/capacity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "capmoe/rng.hpp"

namespace capmoe {
namespace {

constexpr std::uint64_t kRandomDropStream = 0x64726f70ULL;

// Rounds x up to an integer, snapping values within 1e-9 of an integer first
// so binary rounding in gamma * t*k/n cannot push the result up by one.
std::int64_t ceil_snapped(double x) {
    const double nearest = std::nearbyint(x);
    if (std::abs(x - nearest) <= 1e-9 * std::max(1.0, std::abs(nearest))) {
        return static_cast<std::int64_t>(nearest);
    }
    return static_cast<std::int64_t>(std::ceil(x));
}

std::int64_t floor_snapped(double x) {
    const double nearest = std::nearbyint(x);
    if (std::abs(x - nearest) <= 1e-9 * std::max(1.0, std::abs(nearest))) {
        return static_cast<std::int64_t>(nearest);
    }
    return static_cast<std::int64_t>(std::floor(x));
}

}  // namespace

DropMetric drop_metric_from_string(const std::string& name) {
    if (name == "order") return DropMetric::order;
    if (name == "reverse-order" || name == "reverse_order") return DropMetric::reverse_order;
    if (name == "random") return DropMetric::random;
    if (name == "score") return DropMetric::score;
    throw std::invalid_argument("unknown drop metric \"" + name + "\"");
}

std::string to_string(DropMetric metric) {
    switch (metric) {
        case DropMetric::order: return "order";
        case DropMetric::reverse_order: return "reverse-order";
        case DropMetric::random: return "random";
        case DropMetric::score: return "score";
    }
    throw std::invalid_argument("unknown drop metric value");
}

std::int64_t capacity_limit(double gamma, std::int64_t num_tokens, int top_k,
                            std::int64_t num_experts) {
    if (!(gamma > 0.0)) {
        throw std::invalid_argument("capacity_limit: gamma must be > 0");
    }
    if (num_experts < 1 || top_k < 1 || num_tokens < 0) {
        throw std::invalid_argument("capacity_limit: invalid counts");
    }
    if (std::isinf(gamma)) {
        return kUnboundedCapacity;
    }
    return ceil_snapped(gamma * expected_load(num_tokens, top_k, num_experts));
}

namespace detail {

std::vector<std::size_t> lowest_score_victims(
    const std::vector<std::pair<double, Eigen::Index>>& entries, std::int64_t count) {
    std::vector<std::size_t> order(entries.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto take = static_cast<std::ptrdiff_t>(count);
    std::partial_sort(order.begin(), order.begin() + take, order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (entries[a].first != entries[b].first) {
                              return entries[a].first < entries[b].first;
                          }
                          return entries[a].second > entries[b].second;  // tie: higher token id
                      });
    order.resize(static_cast<std::size_t>(count));
    return order;
}

}  // namespace detail

DropResult drop_overflow(const ScoreMatrix& scores, const AssignmentSet& assignments,
                         std::int64_t capacity, const CapacityPolicy& policy) {
    if (capacity < 0) {
        throw std::invalid_argument("drop_overflow: capacity must be >= 0");
    }
    const Eigen::Index num_experts = scores.cols();

    // Per-expert positions into `assignments`; canonical input order keeps
    // each bucket sorted by ascending token id.
    std::vector<std::vector<std::size_t>> buckets(static_cast<std::size_t>(num_experts));
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        const Assignment& a = assignments[i];
        if (a.expert < 0 || a.expert >= num_experts || a.token < 0 || a.token >= scores.rows()) {
            throw std::invalid_argument("drop_overflow: assignment index out of range");
        }
        buckets[static_cast<std::size_t>(a.expert)].push_back(i);
    }

    DropResult result;
    result.capacity = capacity;
    result.masked_scores = scores;
    std::vector<char> is_dropped(assignments.size(), 0);

    for (Eigen::Index expert = 0; expert < num_experts; ++expert) {
        auto& bucket = buckets[static_cast<std::size_t>(expert)];
        const auto load = static_cast<std::int64_t>(bucket.size());
        if (capacity == kUnboundedCapacity || load <= capacity) {
            continue;
        }
        const std::int64_t overflow = load - capacity;

        std::vector<std::size_t> victims;
        switch (policy.metric) {
            case DropMetric::order:
                victims.assign(bucket.end() - overflow, bucket.end());
                break;
            case DropMetric::reverse_order:
                victims.assign(bucket.begin(), bucket.begin() + overflow);
                break;
            case DropMetric::random: {
                // Keys depend only on (seed, expert, token), never on
                // evaluation order.
                const std::uint64_t expert_key = rng::mix(rng::mix(policy.seed, kRandomDropStream),
                                                          static_cast<std::uint64_t>(expert));
                std::vector<std::size_t> shuffled = bucket;
                std::stable_sort(shuffled.begin(), shuffled.end(), [&](std::size_t a, std::size_t b) {
                    return rng::mix(expert_key, static_cast<std::uint64_t>(assignments[a].token)) <
                           rng::mix(expert_key, static_cast<std::uint64_t>(assignments[b].token));
                });
                victims.assign(shuffled.begin(), shuffled.begin() + overflow);
                break;
            }
            case DropMetric::score: {
                std::vector<std::pair<double, Eigen::Index>> entries;
                entries.reserve(bucket.size());
                for (std::size_t pos : bucket) {
                    entries.emplace_back(assignments[pos].score, assignments[pos].token);
                }
                for (std::size_t local : detail::lowest_score_victims(entries, overflow)) {
                    victims.push_back(bucket[local]);
                }
                break;
            }
        }

        for (std::size_t pos : victims) {
            is_dropped[pos] = 1;
            result.masked_scores(assignments[pos].token, expert) = 0.0;
            result.dropped.emplace_back(assignments[pos].token, expert);
        }
    }

    result.retained.reserve(assignments.size() - result.dropped.size());
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        if (!is_dropped[i]) {
            result.retained.push_back(assignments[i]);
        }
    }
    std::sort(result.dropped.begin(), result.dropped.end());
    return result;
}

double dropped_fraction(const LoadVector& loads, std::int64_t capacity) {
    std::int64_t total = 0;
    std::int64_t overflow = 0;
    for (Eigen::Index i = 0; i < loads.size(); ++i) {
        total += loads(i);
        if (capacity != kUnboundedCapacity && loads(i) > capacity) {
            overflow += loads(i) - capacity;
        }
    }
    if (total <= 0) {
        throw std::invalid_argument("dropped_fraction: total load is zero");
    }
    return static_cast<double>(overflow) / static_cast<double>(total);
}

DropResult expert_drop(const ScoreMatrix& scores, const AssignmentSet& assignments,
                       const LoadVector& loads, double fraction) {
    if (!(fraction >= 0.0) || fraction >= 1.0) {
        throw std::invalid_argument("expert_drop: fraction must be in [0, 1) so at least one expert remains");
    }
    const Eigen::Index num_experts = loads.size();
    if (num_experts < 1) {
        throw std::invalid_argument("expert_drop: loads must be nonempty");
    }
    const std::int64_t skip_count = floor_snapped(fraction * static_cast<double>(num_experts));

    std::vector<Eigen::Index> order(static_cast<std::size_t>(num_experts));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        if (loads(a) != loads(b)) return loads(a) < loads(b);
        return a < b;  // tie: skip the lower expert index first
    });

    std::vector<char> skipped(static_cast<std::size_t>(num_experts), 0);
    for (std::int64_t i = 0; i < skip_count; ++i) {
        skipped[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
    }

    DropResult result;
    result.capacity = kUnboundedCapacity;
    result.masked_scores = scores;
    for (const Assignment& a : assignments) {
        if (a.expert < 0 || a.expert >= num_experts) {
            throw std::invalid_argument("expert_drop: assignment expert out of range");
        }
        if (skipped[static_cast<std::size_t>(a.expert)]) {
            result.dropped.emplace_back(a.token, a.expert);
            result.masked_scores(a.token, a.expert) = 0.0;
        } else {
            result.retained.push_back(a);
        }
    }
    std::sort(result.dropped.begin(), result.dropped.end());
    return result;
}

}  // namespace capmoe
