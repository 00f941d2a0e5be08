#include "capmoe/gating.hpp"

#include <algorithm>
#include <utility>

namespace capmoe {

ScoreMatrix softmax_rows(const RoutingTrace& trace) {
    trace.validate();
    return softmax_rows(trace.logits);
}

AssignmentSet topk_select(const ScoreMatrix& scores, int k) {
    if (k < 1) {
        throw std::invalid_argument("topk_select: k must be >= 1");
    }
    if (k > scores.cols()) {
        throw std::invalid_argument("topk_select: k exceeds the number of experts");
    }

    AssignmentSet out;
    out.reserve(static_cast<std::size_t>(scores.rows()) * static_cast<std::size_t>(k));

    std::vector<std::pair<double, Eigen::Index>> candidates;
    candidates.reserve(static_cast<std::size_t>(scores.cols()));
    for (Eigen::Index token = 0; token < scores.rows(); ++token) {
        candidates.clear();
        for (Eigen::Index expert = 0; expert < scores.cols(); ++expert) {
            const double s = scores(token, expert);
            if (s > 0.0) {
                candidates.emplace_back(s, expert);
            }
        }
        const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), candidates.size());
        std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                          candidates.end(), [](const auto& a, const auto& b) {
                              if (a.first != b.first) return a.first > b.first;
                              return a.second < b.second;  // tie: lower expert index wins
                          });
        // Canonical order within a token: ascending expert index.
        std::sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                  [](const auto& a, const auto& b) { return a.second < b.second; });
        for (std::size_t i = 0; i < take; ++i) {
            out.push_back({token, candidates[i].second, candidates[i].first});
        }
    }
    return out;
}

LoadVector expert_load(const AssignmentSet& assignments, Eigen::Index num_experts) {
    if (num_experts < 1) {
        throw std::invalid_argument("expert_load: num_experts must be >= 1");
    }
    LoadVector loads = LoadVector::Zero(num_experts);
    for (const Assignment& a : assignments) {
        if (a.expert < 0 || a.expert >= num_experts) {
            throw std::invalid_argument("expert_load: expert index out of range");
        }
        ++loads(a.expert);
    }
    return loads;
}

double expected_load(std::int64_t num_tokens, int top_k, std::int64_t num_experts) {
    if (num_experts < 1) {
        throw std::invalid_argument("expected_load: num_experts must be >= 1");
    }
    return static_cast<double>(num_tokens) * static_cast<double>(top_k) /
           static_cast<double>(num_experts);
}

}  // namespace capmoe
