// trace.hpp - routing trace I/O and synthetic trace generation

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace capmoe {

// Per-layer router pre-activation scores for a batch of tokens. The token id
// of a row is its row index (batch-major flattening).
struct RoutingTrace {
    int layer_id = 0;
    Eigen::Index num_tokens = 0;   // t
    Eigen::Index num_experts = 0;  // n
    int top_k = 0;                 // k
    Eigen::MatrixXd logits;        // t x n, all entries finite

    // Throws std::invalid_argument if any invariant is broken:
    // t >= 1, n >= 1, 1 <= k <= n, logits shaped t x n with finite entries.
    void validate() const;
};

enum class SyntheticPreset {
    uniform,        // no calibration; bias scale taken directly from `skew`
    scratch_like,   // calibrated so the peak normalized expert load is >= 5
    upcycled_like,  // calibrated so the peak normalized expert load is <= 3
};

SyntheticPreset preset_from_string(const std::string& name);
std::string to_string(SyntheticPreset preset);

struct SyntheticSpec {
    Eigen::Index num_tokens = 0;   // t
    Eigen::Index num_experts = 0;  // n
    int top_k = 1;                 // k
    double skew = 0.0;             // bias scale for the uniform preset; >= 0
    std::uint64_t seed = 0;
    SyntheticPreset preset = SyntheticPreset::uniform;
    int layer_id = 0;

    void validate() const;
};

// Loads a trace file holding exactly one layer record. Throws on I/O or
// parse failure (message names the line and field) and on invariant
// violations in the record.
RoutingTrace load_trace(const std::filesystem::path& path);

// Loads every layer record in the file; layer ids must be unique.
std::vector<RoutingTrace> load_traces(const std::filesystem::path& path);

// Writes one line-delimited JSON record per trace. Logits are serialized as
// shortest round-trip decimals, so load_trace(save_trace(x)) == x bit-for-bit.
void save_trace(const RoutingTrace& trace, const std::filesystem::path& path);
void save_traces(const std::vector<RoutingTrace>& traces, const std::filesystem::path& path);

// Deterministic synthetic trace: per-token i.i.d. Gaussian logits plus a
// per-expert heavy-tailed bias. The calibrated presets search the bias scale
// until the realized peak normalized load lands in the preset's target band
// and throw (reporting the best achieved peak) if the band is unreachable.
// A pure function of `spec`, including the seed.
RoutingTrace generate_synthetic(const SyntheticSpec& spec);

// Peak expert load divided by the expected load t*k/n, after softmax and
// top-k routing of `trace`.
double max_normalized_load(const RoutingTrace& trace);

}  // namespace capmoe
