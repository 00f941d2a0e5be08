#include "capmoe/toymoe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "capmoe/rng.hpp"

namespace capmoe {

void ToyMoELayer::validate() const {
    if (experts.empty()) {
        throw std::invalid_argument("ToyMoELayer: need at least one expert");
    }
    if (d_model < 1) {
        throw std::invalid_argument("ToyMoELayer: d_model must be >= 1");
    }
    for (std::size_t i = 0; i < experts.size(); ++i) {
        const auto& w = experts[i].weight;
        if (w.rows() != d_model || w.cols() != d_model) {
            throw std::invalid_argument("ToyMoELayer: expert " + std::to_string(i) +
                                        " weight is " + std::to_string(w.rows()) + " x " +
                                        std::to_string(w.cols()) + ", expected " +
                                        std::to_string(d_model) + " x " +
                                        std::to_string(d_model));
        }
        if (!w.allFinite()) {
            throw std::invalid_argument("ToyMoELayer: expert " + std::to_string(i) +
                                        " weight has non-finite entries");
        }
    }
}

namespace {

// Distinct stream tags so weights and tokens never share draws.
constexpr std::uint64_t kWeightStream = 0x7765696768747301ULL;
constexpr std::uint64_t kTokenStream = 0x746f6b656e730001ULL;

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t key,
                                double scale) {
    Eigen::MatrixXd out(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            const auto counter = static_cast<std::uint64_t>(i * cols + j);
            out(i, j) = scale * rng::gaussian(rng::mix(key, counter));
        }
    }
    return out;
}

}  // namespace

ToyMoELayer random_layer(Eigen::Index num_experts, Eigen::Index d_model, std::uint64_t seed,
                         bool renormalize_gates) {
    if (num_experts < 1 || d_model < 1) {
        throw std::invalid_argument("random_layer: num_experts and d_model must be >= 1");
    }
    ToyMoELayer layer;
    layer.d_model = d_model;
    layer.renormalize_gates = renormalize_gates;
    layer.experts.reserve(static_cast<std::size_t>(num_experts));
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_model));
    const std::uint64_t stream = rng::mix(seed, kWeightStream);
    for (Eigen::Index e = 0; e < num_experts; ++e) {
        layer.experts.push_back(
            {gaussian_matrix(d_model, d_model, rng::mix(stream, static_cast<std::uint64_t>(e)),
                             scale)});
    }
    return layer;
}

Eigen::MatrixXd random_tokens(Eigen::Index num_tokens, Eigen::Index d_model,
                              std::uint64_t seed) {
    if (num_tokens < 1 || d_model < 1) {
        throw std::invalid_argument("random_tokens: num_tokens and d_model must be >= 1");
    }
    return gaussian_matrix(num_tokens, d_model, rng::mix(seed, kTokenStream), 1.0);
}

Eigen::MatrixXd forward(const ToyMoELayer& layer, const Eigen::MatrixXd& tokens,
                        const AssignmentSet& assignments) {
    layer.validate();
    if (tokens.cols() != layer.d_model) {
        throw std::invalid_argument("forward: tokens have " + std::to_string(tokens.cols()) +
                                    " features, layer expects " +
                                    std::to_string(layer.d_model));
    }
    const auto num_experts = static_cast<Eigen::Index>(layer.experts.size());
    for (const Assignment& a : assignments) {
        if (a.token < 0 || a.token >= tokens.rows()) {
            throw std::invalid_argument("forward: assignment token " + std::to_string(a.token) +
                                        " out of range for " + std::to_string(tokens.rows()) +
                                        " tokens");
        }
        if (a.expert < 0 || a.expert >= num_experts) {
            throw std::invalid_argument("forward: assignment expert " +
                                        std::to_string(a.expert) + " out of range for " +
                                        std::to_string(num_experts) + " experts");
        }
    }

    // Accumulation must follow ascending expert order per token regardless of
    // how the caller ordered the set.
    AssignmentSet ordered;
    const auto canonical = [](const Assignment& a, const Assignment& b) {
        return a.token != b.token ? a.token < b.token : a.expert < b.expert;
    };
    const AssignmentSet* source = &assignments;
    if (!std::is_sorted(assignments.begin(), assignments.end(), canonical)) {
        ordered = assignments;
        std::sort(ordered.begin(), ordered.end(), canonical);
        source = &ordered;
    }

    Eigen::VectorXd gate_sum = Eigen::VectorXd::Zero(tokens.rows());
    if (layer.renormalize_gates) {
        for (const Assignment& a : *source) {
            gate_sum[a.token] += a.score;
        }
    }

    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(tokens.rows(), layer.d_model);
    for (const Assignment& a : *source) {
        double gate = a.score;
        if (layer.renormalize_gates && gate_sum[a.token] > 0.0) {
            gate /= gate_sum[a.token];
        }
        const auto& w = layer.experts[static_cast<std::size_t>(a.expert)].weight;
        out.row(a.token) += gate * (tokens.row(a.token) * w.transpose());
    }
    return out;
}

Divergence output_divergence(const Eigen::MatrixXd& baseline,
                             const Eigen::MatrixXd& constrained) {
    if (baseline.rows() != constrained.rows() || baseline.cols() != constrained.cols()) {
        throw std::invalid_argument("output_divergence: shape mismatch");
    }
    constexpr double kAffectedThreshold = 1e-12;
    Eigen::Index affected = 0;
    double total = 0.0;
    for (Eigen::Index i = 0; i < baseline.rows(); ++i) {
        const double diff = (constrained.row(i) - baseline.row(i)).norm();
        const double base = baseline.row(i).norm();
        double rel = 0.0;
        if (base > 0.0) {
            rel = diff / base;
        } else if (diff > 0.0) {
            rel = std::numeric_limits<double>::infinity();
        }
        if (rel > kAffectedThreshold) {
            ++affected;
            total += rel;
        }
    }
    Divergence d;
    if (affected > 0) {
        d.affected_fraction =
            static_cast<double>(affected) / static_cast<double>(baseline.rows());
        d.mean_relative_l2 = total / static_cast<double>(affected);
    }
    return d;
}

}  // namespace capmoe
