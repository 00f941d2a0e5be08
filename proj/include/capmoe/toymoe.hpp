// toymoe.hpp - miniature MoE layer with linear experts, used to observe how
// capacity policies perturb the routed output

#pragma once

#include <cstdint>
#include <vector>

#include "capmoe/gating.hpp"

namespace capmoe {

// A linear map standing in for a full expert network.
struct ToyExpert {
    Eigen::MatrixXd weight;  // d_model x d_model, finite entries
};

struct ToyMoELayer {
    std::vector<ToyExpert> experts;
    Eigen::Index d_model = 0;
    // When true, a token's surviving gate scores are rescaled to sum to 1
    // before combination; when false, dropped mappings simply contribute
    // nothing.
    bool renormalize_gates = false;

    // Throws std::invalid_argument unless every expert weight is a finite
    // d_model x d_model matrix and there is at least one expert.
    void validate() const;
};

// Layer with gaussian weights scaled by 1/sqrt(d_model); deterministic in
// (num_experts, d_model, seed).
ToyMoELayer random_layer(Eigen::Index num_experts, Eigen::Index d_model, std::uint64_t seed,
                         bool renormalize_gates = false);

// t x d_model gaussian token batch, deterministic in (num_tokens, d_model, seed).
Eigen::MatrixXd random_tokens(Eigen::Index num_tokens, Eigen::Index d_model,
                              std::uint64_t seed);

// Weighted combination of expert outputs: row y_t = sum of g' * (W_i x_t)
// over t's retained mappings, with g' = g or the renormalized gate. A token
// with no retained mappings outputs the zero row. Per-token summation runs
// in ascending expert order, so the result is bitwise independent of the
// assignment ordering passed in.
Eigen::MatrixXd forward(const ToyMoELayer& layer, const Eigen::MatrixXd& tokens,
                        const AssignmentSet& assignments);

struct Divergence {
    double mean_relative_l2 = 0.0;  // averaged over affected rows only
    double affected_fraction = 0.0;
};

// Compares per-token rows of two equal-shape outputs. A row counts as
// affected when its relative L2 difference exceeds 1e-12.
Divergence output_divergence(const Eigen::MatrixXd& baseline,
                             const Eigen::MatrixXd& constrained);

}  // namespace capmoe
