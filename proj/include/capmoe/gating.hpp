// gating.hpp - row softmax, top-k expert selection, load accounting

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "capmoe/trace.hpp"

namespace capmoe {

// Dense t x n matrix of mapping scores in [0, 1]. An exact 0 entry is the
// mask sentinel: that token-to-expert mapping is unavailable. Softmax output
// is kept strictly positive so a 0 can only come from masking.
using ScoreMatrix = Eigen::MatrixXd;

// Per-expert token counts N_i.
using LoadVector = Eigen::VectorXi;

struct Assignment {
    Eigen::Index token = 0;
    Eigen::Index expert = 0;
    double score = 0.0;  // strictly positive

    friend bool operator==(const Assignment&, const Assignment&) = default;
};

// Retained (token, expert, score) mappings, sorted by (token, expert) with at
// most one entry per pair.
using AssignmentSet = std::vector<Assignment>;

// Numerically stable row softmax: subtracts the row max before
// exponentiation. The shifted exponent is clamped at -700 so no entry
// underflows to an exact 0 (0 is reserved for the mask sentinel).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> softmax_rows(
    const Eigen::MatrixBase<Derived>& logits) {
    using Scalar = typename Derived::Scalar;
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    if (logits.rows() < 1 || logits.cols() < 1) {
        throw std::invalid_argument("softmax_rows: matrix must be at least 1 x 1");
    }
    Matrix out = logits.derived();
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const Scalar row_max = out.row(i).maxCoeff();
        out.row(i) = (out.row(i).array() - row_max).max(Scalar(-700)).exp();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

// Validates the trace, then softmaxes its logit rows.
ScoreMatrix softmax_rows(const RoutingTrace& trace);

// Per token, selects the k highest strictly positive scores; rows with fewer
// than k positive entries contribute all of them. Ties break toward the lower
// expert index, making the selection deterministic.
AssignmentSet topk_select(const ScoreMatrix& scores, int k);

// loads[i] = number of mappings assigned to expert i.
LoadVector expert_load(const AssignmentSet& assignments, Eigen::Index num_experts);

// Expected per-expert token count t*k/n, as an exact real (never rounded).
double expected_load(std::int64_t num_tokens, int top_k, std::int64_t num_experts);

}  // namespace capmoe
