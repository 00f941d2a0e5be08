// report.hpp - analysis artifacts: normalized layer loads, drop-fraction
// curves, and policy/capacity sweep tables with CSV/JSON serialization

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "capmoe/capacity.hpp"
#include "capmoe/latsim.hpp"
#include "capmoe/trace.hpp"

namespace capmoe {

struct GammaDt {
    double gamma = 0.0;
    double capacity = 0.0;  // ceil(gamma * expected load); +inf when unbounded
    double dropped_fraction = 0.0;
};

struct LayerLoadReport {
    int layer_id = 0;
    std::int64_t num_tokens = 0;
    std::int64_t num_experts = 0;
    int top_k = 0;
    Eigen::VectorXd normalized_loads;  // N_i divided by the expected load
    double max_normalized = 0.0;
    std::vector<GammaDt> gamma_to_dt;  // descending gamma, so DT nondecreasing
};

// Routes the trace (softmax then top-k) and reports per-expert normalized
// loads plus the dropped-token fraction at each capacity factor. Gammas must
// be positive (+inf allowed) and are reported in descending order.
LayerLoadReport analyze_layer(const RoutingTrace& trace, std::vector<double> gammas);

enum class PolicyKind {
    token_drop,     // drop_overflow with a configurable metric
    token_reroute,  // multi-round reroute
    expert_drop,    // skip the least-loaded experts outright (ignores gamma)
};

struct PolicySpec {
    PolicyKind kind = PolicyKind::token_drop;
    DropMetric metric = DropMetric::score;  // token_drop only
    int rounds = 2;                         // token_reroute only
    double fraction = 0.10;                 // expert_drop only
};

// Stable row label: "drop-<metric>", "reroute-r<rounds>", or
// "expert-drop-<fraction>".
std::string policy_name(const PolicySpec& policy);

struct SweepRow {
    std::string policy;
    double gamma = 0.0;
    double capacity = 0.0;  // +inf when no per-expert limit applies
    double dropped_fraction = 0.0;
    std::int64_t max_device_load = 0;
    double layer_speedup = 1.0;
    double e2e_speedup = 1.0;
    double retained_fraction = 1.0;
    double divergence = 0.0;  // mean relative L2 over affected toy outputs
};

struct SweepMeta {
    int layer_id = 0;
    std::int64_t num_tokens = 0;
    std::int64_t num_experts = 0;
    int top_k = 0;
    std::uint64_t seed = 0;
    int num_devices = 1;
    Eigen::VectorXi placement;
    double fixed_overhead = 0.0;
    double per_token_cost = 1.0;
    double moe_time_fraction = kDefaultMoeTimeFraction;
    Eigen::Index toy_d_model = 0;
};

struct SweepResult {
    SweepMeta meta;
    std::vector<SweepRow> rows;  // policy-major, gamma descending within
};

// One row per (policy, gamma): applies the policy at that capacity factor,
// then scores the outcome against the unconstrained top-k routing - dropped
// fraction, max device load, model speedups, and toy-layer output
// divergence. Expert-drop rows do not vary with gamma (the policy has no
// capacity knob) but are emitted per gamma to keep the table rectangular.
// Rows are computed concurrently; order and content stay deterministic in
// (trace, policies, gammas, seed). Errors carry "policy=... gamma=..."
// context.
SweepResult run_sweep(const RoutingTrace& trace, const std::vector<PolicySpec>& policies,
                      std::vector<double> gammas, const DeviceMap& map,
                      const LatencyModel& model, double rho = kDefaultMoeTimeFraction,
                      std::uint64_t seed = 0);

enum class ReportFormat { csv, json };

ReportFormat report_format_from_string(const std::string& name);

// CSV with the fixed header
// policy,gamma,capacity,dropped_fraction,max_device_load,layer_speedup,e2e_speedup,retained_fraction,divergence
// or a JSON object {"meta": ..., "rows": [...]}. Doubles are rendered as
// shortest round-trip decimals; unbounded values render as "inf".
void write_report(const SweepResult& result, std::ostream& out, ReportFormat format);
void write_report(const SweepResult& result, const std::filesystem::path& path,
                  ReportFormat format);

// Parses a JSON document produced by write_report.
SweepResult read_sweep_json(std::istream& in);
SweepResult read_sweep_json(const std::filesystem::path& path);

// CSV with header layer,gamma,capacity,dropped_fraction,max_normalized (one
// row per layer/gamma pair) or a JSON array of per-layer objects including
// the normalized load vectors.
void write_layer_reports(const std::vector<LayerLoadReport>& reports, std::ostream& out,
                         ReportFormat format);
void write_layer_reports(const std::vector<LayerLoadReport>& reports,
                         const std::filesystem::path& path, ReportFormat format);

}  // namespace capmoe
