#include "capmoe/report.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <future>
#include <limits>
#include <stdexcept>

#include "capmoe/reroute.hpp"
#include "capmoe/rng.hpp"
#include "capmoe/toymoe.hpp"

namespace capmoe {
namespace {

// Width of the toy layer used for output-divergence scoring; small enough to
// keep sweeps cheap, wide enough that expert outputs differ.
constexpr Eigen::Index kToyDModel = 8;

constexpr const char* kSweepCsvHeader =
    "policy,gamma,capacity,dropped_fraction,max_device_load,layer_speedup,e2e_speedup,"
    "retained_fraction,divergence";

constexpr const char* kLayerCsvHeader = "layer,gamma,capacity,dropped_fraction,max_normalized";

// Shortest decimal that round-trips; infinities render as "inf"/"-inf".
std::string format_double(double value) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc()) {
        throw std::runtime_error("format_double: conversion failed");
    }
    return {buf, ptr};
}

// Positive (or +inf) gammas sorted descending; duplicates survive.
std::vector<double> descending_gammas(std::vector<double> gammas, const char* where) {
    for (double gamma : gammas) {
        if (std::isnan(gamma) || gamma <= 0.0) {
            throw std::invalid_argument(std::string(where) + ": gamma must be positive, got " +
                                        format_double(gamma));
        }
    }
    std::sort(gammas.begin(), gammas.end(), std::greater<>());
    return gammas;
}

nlohmann::json number_or_inf(double value) {
    if (std::isinf(value)) {
        return value > 0 ? "inf" : "-inf";
    }
    return value;
}

double read_number_or_inf(const nlohmann::json& value, const std::string& field) {
    if (value.is_number()) {
        return value.get<double>();
    }
    if (value.is_string()) {
        const auto& s = value.get_ref<const std::string&>();
        if (s == "inf") {
            return std::numeric_limits<double>::infinity();
        }
        if (s == "-inf") {
            return -std::numeric_limits<double>::infinity();
        }
    }
    throw std::runtime_error("read_sweep_json: field " + field +
                             " is neither a number nor \"inf\"");
}

double capacity_as_real(std::int64_t capacity) {
    return capacity == kUnboundedCapacity ? std::numeric_limits<double>::infinity()
                                          : static_cast<double>(capacity);
}

}  // namespace

LayerLoadReport analyze_layer(const RoutingTrace& trace, std::vector<double> gammas) {
    trace.validate();
    if (gammas.empty()) {
        throw std::invalid_argument("analyze_layer: gammas must be nonempty");
    }
    gammas = descending_gammas(std::move(gammas), "analyze_layer");

    const ScoreMatrix scores = softmax_rows(trace);
    const AssignmentSet assignments = topk_select(scores, trace.top_k);
    const LoadVector loads = expert_load(assignments, trace.num_experts);
    const double mean = expected_load(trace.num_tokens, trace.top_k, trace.num_experts);

    LayerLoadReport report;
    report.layer_id = trace.layer_id;
    report.num_tokens = trace.num_tokens;
    report.num_experts = trace.num_experts;
    report.top_k = trace.top_k;
    report.normalized_loads = loads.cast<double>() / mean;
    report.max_normalized = report.normalized_loads.maxCoeff();
    report.gamma_to_dt.reserve(gammas.size());
    for (double gamma : gammas) {
        const std::int64_t cap =
            capacity_limit(gamma, trace.num_tokens, trace.top_k, trace.num_experts);
        report.gamma_to_dt.push_back({gamma, capacity_as_real(cap), dropped_fraction(loads, cap)});
    }
    return report;
}

std::string policy_name(const PolicySpec& policy) {
    switch (policy.kind) {
        case PolicyKind::token_drop:
            return "drop-" + to_string(policy.metric);
        case PolicyKind::token_reroute:
            return "reroute-r" + std::to_string(policy.rounds);
        case PolicyKind::expert_drop:
            return "expert-drop-" + format_double(policy.fraction);
    }
    throw std::logic_error("policy_name: unhandled policy kind");
}

SweepResult run_sweep(const RoutingTrace& trace, const std::vector<PolicySpec>& policies,
                      std::vector<double> gammas, const DeviceMap& map,
                      const LatencyModel& model, double rho, std::uint64_t seed) {
    trace.validate();
    map.validate();
    model.validate();
    if (map.placement.size() != trace.num_experts) {
        throw std::invalid_argument("run_sweep: device map places " +
                                    std::to_string(map.placement.size()) +
                                    " experts, trace has " +
                                    std::to_string(trace.num_experts));
    }
    if (!(rho >= 0.0 && rho <= 1.0)) {
        throw std::invalid_argument("run_sweep: rho must lie in [0, 1]");
    }
    for (const PolicySpec& policy : policies) {
        if (policy.kind == PolicyKind::token_reroute && policy.rounds < 1) {
            throw std::invalid_argument("run_sweep: reroute rounds must be >= 1");
        }
        if (policy.kind == PolicyKind::expert_drop &&
            !(policy.fraction >= 0.0 && policy.fraction < 1.0)) {
            throw std::invalid_argument("run_sweep: expert-drop fraction must lie in [0, 1)");
        }
    }
    gammas = descending_gammas(std::move(gammas), "run_sweep");

    const ScoreMatrix scores = softmax_rows(trace);
    const AssignmentSet baseline = topk_select(scores, trace.top_k);
    const LoadVector baseline_loads = expert_load(baseline, trace.num_experts);
    const auto layer_seed = rng::mix(seed, static_cast<std::uint64_t>(trace.layer_id));
    const ToyMoELayer toy = random_layer(trace.num_experts, kToyDModel, layer_seed);
    const Eigen::MatrixXd toy_tokens = random_tokens(trace.num_tokens, kToyDModel, layer_seed);
    const Eigen::MatrixXd toy_baseline = forward(toy, toy_tokens, baseline);

    SweepResult result;
    result.meta.layer_id = trace.layer_id;
    result.meta.num_tokens = trace.num_tokens;
    result.meta.num_experts = trace.num_experts;
    result.meta.top_k = trace.top_k;
    result.meta.seed = seed;
    result.meta.num_devices = map.num_devices;
    result.meta.placement = map.placement;
    result.meta.fixed_overhead = model.fixed_overhead;
    result.meta.per_token_cost = model.per_token_cost;
    result.meta.moe_time_fraction = rho;
    result.meta.toy_d_model = kToyDModel;

    const auto compute_row = [&](PolicySpec policy, double gamma) {
        SweepRow row;
        row.policy = policy_name(policy);
        row.gamma = gamma;
        const std::int64_t cap =
            capacity_limit(gamma, trace.num_tokens, trace.top_k, trace.num_experts);
        AssignmentSet retained;
        std::int64_t enforced = cap;
        switch (policy.kind) {
            case PolicyKind::token_drop: {
                CapacityPolicy drop_policy;
                drop_policy.gamma = gamma;
                drop_policy.metric = policy.metric;
                drop_policy.seed = layer_seed;
                retained = drop_overflow(scores, baseline, cap, drop_policy).retained;
                break;
            }
            case PolicyKind::token_reroute: {
                RerouteConfig cfg;
                cfg.rounds = policy.rounds;
                cfg.capacity = cap;
                cfg.top_k = trace.top_k;
                retained = reroute(scores, cfg).final;
                break;
            }
            case PolicyKind::expert_drop: {
                retained = expert_drop(scores, baseline, baseline_loads, policy.fraction).retained;
                enforced = kUnboundedCapacity;  // no per-expert limit is applied
                break;
            }
        }
        row.capacity = capacity_as_real(enforced);
        row.retained_fraction =
            static_cast<double>(retained.size()) / static_cast<double>(baseline.size());
        row.dropped_fraction = 1.0 - row.retained_fraction;
        const LoadVector constrained = expert_load(retained, trace.num_experts);
        const SpeedupReport speedups =
            speedup_report(baseline_loads, constrained, map, model, rho);
        row.max_device_load = speedups.constrained_max_device_load;
        row.layer_speedup = speedups.layer_speedup;
        row.e2e_speedup = speedups.end_to_end_speedup;
        row.divergence =
            output_divergence(toy_baseline, forward(toy, toy_tokens, retained)).mean_relative_l2;
        return row;
    };

    // Rows are independent; compute them concurrently but gather in the
    // fixed policy-major order so output stays deterministic.
    std::vector<std::future<SweepRow>> jobs;
    jobs.reserve(policies.size() * gammas.size());
    for (const PolicySpec& policy : policies) {
        for (double gamma : gammas) {
            jobs.push_back(std::async(std::launch::async, compute_row, policy, gamma));
        }
    }
    std::size_t next = 0;
    result.rows.reserve(jobs.size());
    for (const PolicySpec& policy : policies) {
        for (double gamma : gammas) {
            try {
                result.rows.push_back(jobs[next].get());
            } catch (const std::exception& e) {
                throw std::runtime_error("policy=" + policy_name(policy) +
                                         " gamma=" + format_double(gamma) + ": " + e.what());
            }
            ++next;
        }
    }
    return result;
}

ReportFormat report_format_from_string(const std::string& name) {
    if (name == "csv") {
        return ReportFormat::csv;
    }
    if (name == "json") {
        return ReportFormat::json;
    }
    throw std::invalid_argument("unknown report format \"" + name + "\" (expected csv or json)");
}

namespace {

void write_sweep_csv(const SweepResult& result, std::ostream& out) {
    out << kSweepCsvHeader << '\n';
    for (const SweepRow& row : result.rows) {
        out << row.policy << ',' << format_double(row.gamma) << ','
            << format_double(row.capacity) << ',' << format_double(row.dropped_fraction) << ','
            << row.max_device_load << ',' << format_double(row.layer_speedup) << ','
            << format_double(row.e2e_speedup) << ',' << format_double(row.retained_fraction)
            << ',' << format_double(row.divergence) << '\n';
    }
}

void write_sweep_json(const SweepResult& result, std::ostream& out) {
    nlohmann::json doc;
    doc["meta"] = {
        {"layer", result.meta.layer_id},
        {"t", result.meta.num_tokens},
        {"n", result.meta.num_experts},
        {"k", result.meta.top_k},
        {"seed", result.meta.seed},
        {"num_devices", result.meta.num_devices},
        {"placement",
         std::vector<int>(result.meta.placement.begin(), result.meta.placement.end())},
        {"fixed_overhead", result.meta.fixed_overhead},
        {"per_token_cost", result.meta.per_token_cost},
        {"moe_time_fraction", result.meta.moe_time_fraction},
        {"toy_d_model", result.meta.toy_d_model},
    };
    doc["rows"] = nlohmann::json::array();
    for (const SweepRow& row : result.rows) {
        doc["rows"].push_back({
            {"policy", row.policy},
            {"gamma", number_or_inf(row.gamma)},
            {"capacity", number_or_inf(row.capacity)},
            {"dropped_fraction", row.dropped_fraction},
            {"max_device_load", row.max_device_load},
            {"layer_speedup", row.layer_speedup},
            {"e2e_speedup", row.e2e_speedup},
            {"retained_fraction", row.retained_fraction},
            {"divergence", row.divergence},
        });
    }
    out << doc.dump(2) << '\n';
}

}  // namespace

void write_report(const SweepResult& result, std::ostream& out, ReportFormat format) {
    if (format == ReportFormat::csv) {
        write_sweep_csv(result, out);
    } else {
        write_sweep_json(result, out);
    }
    if (!out) {
        throw std::runtime_error("write_report: stream write failed");
    }
}

void write_report(const SweepResult& result, const std::filesystem::path& path,
                  ReportFormat format) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    write_report(result, out, format);
    out.flush();
    if (!out) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

SweepResult read_sweep_json(std::istream& in) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(std::string("read_sweep_json: ") + e.what());
    }
    SweepResult result;
    const auto& meta = doc.at("meta");
    result.meta.layer_id = meta.at("layer").get<int>();
    result.meta.num_tokens = meta.at("t").get<std::int64_t>();
    result.meta.num_experts = meta.at("n").get<std::int64_t>();
    result.meta.top_k = meta.at("k").get<int>();
    result.meta.seed = meta.at("seed").get<std::uint64_t>();
    result.meta.num_devices = meta.at("num_devices").get<int>();
    const auto placement = meta.at("placement").get<std::vector<int>>();
    result.meta.placement =
        Eigen::Map<const Eigen::VectorXi>(placement.data(),
                                          static_cast<Eigen::Index>(placement.size()));
    result.meta.fixed_overhead = meta.at("fixed_overhead").get<double>();
    result.meta.per_token_cost = meta.at("per_token_cost").get<double>();
    result.meta.moe_time_fraction = meta.at("moe_time_fraction").get<double>();
    result.meta.toy_d_model = meta.at("toy_d_model").get<Eigen::Index>();
    for (const auto& row_doc : doc.at("rows")) {
        SweepRow row;
        row.policy = row_doc.at("policy").get<std::string>();
        row.gamma = read_number_or_inf(row_doc.at("gamma"), "gamma");
        row.capacity = read_number_or_inf(row_doc.at("capacity"), "capacity");
        row.dropped_fraction = row_doc.at("dropped_fraction").get<double>();
        row.max_device_load = row_doc.at("max_device_load").get<std::int64_t>();
        row.layer_speedup = row_doc.at("layer_speedup").get<double>();
        row.e2e_speedup = row_doc.at("e2e_speedup").get<double>();
        row.retained_fraction = row_doc.at("retained_fraction").get<double>();
        row.divergence = row_doc.at("divergence").get<double>();
        result.rows.push_back(std::move(row));
    }
    return result;
}

SweepResult read_sweep_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open report file " + path.string());
    }
    return read_sweep_json(in);
}

namespace {

void write_layers_csv(const std::vector<LayerLoadReport>& reports, std::ostream& out) {
    out << kLayerCsvHeader << '\n';
    for (const LayerLoadReport& report : reports) {
        for (const GammaDt& entry : report.gamma_to_dt) {
            out << report.layer_id << ',' << format_double(entry.gamma) << ','
                << format_double(entry.capacity) << ','
                << format_double(entry.dropped_fraction) << ','
                << format_double(report.max_normalized) << '\n';
        }
    }
}

void write_layers_json(const std::vector<LayerLoadReport>& reports, std::ostream& out) {
    nlohmann::json doc = nlohmann::json::array();
    for (const LayerLoadReport& report : reports) {
        nlohmann::json entry = {
            {"layer", report.layer_id},
            {"t", report.num_tokens},
            {"n", report.num_experts},
            {"k", report.top_k},
            {"normalized_loads", std::vector<double>(report.normalized_loads.begin(),
                                                     report.normalized_loads.end())},
            {"max_normalized", report.max_normalized},
        };
        entry["gamma_to_dt"] = nlohmann::json::array();
        for (const GammaDt& pair : report.gamma_to_dt) {
            entry["gamma_to_dt"].push_back({
                {"gamma", number_or_inf(pair.gamma)},
                {"capacity", number_or_inf(pair.capacity)},
                {"dropped_fraction", pair.dropped_fraction},
            });
        }
        doc.push_back(std::move(entry));
    }
    out << doc.dump(2) << '\n';
}

}  // namespace

void write_layer_reports(const std::vector<LayerLoadReport>& reports, std::ostream& out,
                         ReportFormat format) {
    if (format == ReportFormat::csv) {
        write_layers_csv(reports, out);
    } else {
        write_layers_json(reports, out);
    }
    if (!out) {
        throw std::runtime_error("write_layer_reports: stream write failed");
    }
}

void write_layer_reports(const std::vector<LayerLoadReport>& reports,
                         const std::filesystem::path& path, ReportFormat format) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    write_layer_reports(reports, out, format);
    out.flush();
    if (!out) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

}  // namespace capmoe
