// capmoe_main.cpp - command-line front end: synthesize routing traces,
// analyze layer load imbalance, and sweep capacity policies through the
// latency model.

#include <CLI11.hpp>

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "capmoe/report.hpp"

namespace {

std::string format_double(double value) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc()) {
        throw std::runtime_error("number formatting failed");
    }
    return {buf, ptr};
}

// Comma-separated gamma list; the literal "inf" selects the unbounded
// baseline.
std::vector<double> parse_gammas(const std::string& text) {
    std::vector<double> gammas;
    std::stringstream stream(text);
    std::string token;
    while (std::getline(stream, token, ',')) {
        const auto first = token.find_first_not_of(" \t");
        if (first == std::string::npos) {
            throw std::invalid_argument("empty gamma entry in \"" + text + "\"");
        }
        const auto last = token.find_last_not_of(" \t");
        const std::string trimmed = token.substr(first, last - first + 1);
        if (trimmed == "inf" || trimmed == "+inf") {
            gammas.push_back(std::numeric_limits<double>::infinity());
            continue;
        }
        double value = 0.0;
        const char* begin = trimmed.data();
        const char* end = begin + trimmed.size();
        const auto [ptr, ec] = std::from_chars(begin, end, value);
        if (ec != std::errc() || ptr != end) {
            throw std::invalid_argument("invalid gamma value \"" + trimmed + "\"");
        }
        gammas.push_back(value);
    }
    if (gammas.empty()) {
        throw std::invalid_argument("no gamma values given");
    }
    return gammas;
}

struct GenerateOpts {
    std::int64_t num_tokens = 0;
    std::int64_t num_experts = 0;
    int top_k = 1;
    std::string preset = "uniform";
    double skew = 0.0;
    std::uint64_t seed = 0;
    int layer = 0;
    std::string out;
};

void run_generate(const GenerateOpts& opts) {
    capmoe::SyntheticSpec spec;
    spec.num_tokens = opts.num_tokens;
    spec.num_experts = opts.num_experts;
    spec.top_k = opts.top_k;
    spec.skew = opts.skew;
    spec.seed = opts.seed;
    spec.preset = capmoe::preset_from_string(opts.preset);
    spec.layer_id = opts.layer;
    const capmoe::RoutingTrace trace = capmoe::generate_synthetic(spec);
    capmoe::save_trace(trace, opts.out);
    std::cout << "wrote " << opts.out << ": t=" << trace.num_tokens
              << " n=" << trace.num_experts << " k=" << trace.top_k
              << " max_normalized_load=" << format_double(capmoe::max_normalized_load(trace))
              << '\n';
}

struct AnalyzeOpts {
    std::string trace;
    std::string gammas = "3.0,2.0,1.5,1.0";
    std::string out;
    std::string format = "csv";
};

void run_analyze(const AnalyzeOpts& opts) {
    const auto traces = capmoe::load_traces(opts.trace);
    const auto gammas = parse_gammas(opts.gammas);
    std::vector<capmoe::LayerLoadReport> reports;
    reports.reserve(traces.size());
    for (const auto& trace : traces) {
        reports.push_back(capmoe::analyze_layer(trace, gammas));
    }
    const auto format = capmoe::report_format_from_string(opts.format);
    if (opts.out.empty()) {
        capmoe::write_layer_reports(reports, std::cout, format);
    } else {
        capmoe::write_layer_reports(reports, std::filesystem::path(opts.out), format);
    }
}

struct SimulateOpts {
    std::string trace;
    std::int64_t num_tokens = 0;
    std::int64_t num_experts = 0;
    int top_k = 1;
    std::string preset = "uniform";
    double skew = 0.0;
    int layer = 0;
    std::string gammas = "inf,3.0,2.0,1.5,1.2,1.0";
    std::string metric = "score";
    int reroute_rounds = 2;
    double expert_drop_fraction = 0.10;
    int devices = 0;
    int experts_per_device = 0;
    double c0 = 0.0;
    double c1 = 1.0;
    double rho = capmoe::kDefaultMoeTimeFraction;
    std::uint64_t seed = 0;
    std::string out;
    std::string format = "csv";
};

struct SimulateFlags {
    CLI::Option* trace = nullptr;
    CLI::Option* num_tokens = nullptr;
    CLI::Option* num_experts = nullptr;
    CLI::Option* layer = nullptr;
    CLI::Option* metric = nullptr;
    CLI::Option* reroute_rounds = nullptr;
    CLI::Option* expert_drop_fraction = nullptr;
    CLI::Option* devices = nullptr;
    CLI::Option* experts_per_device = nullptr;
};

capmoe::RoutingTrace simulate_input(const SimulateOpts& opts, const SimulateFlags& flags) {
    const bool from_file = flags.trace->count() > 0;
    const bool from_spec = flags.num_tokens->count() > 0 || flags.num_experts->count() > 0;
    if (from_file == from_spec) {
        throw std::invalid_argument(
            "provide exactly one input: --trace, or a synthetic spec via --t/--n");
    }
    if (from_file) {
        auto traces = capmoe::load_traces(opts.trace);
        if (flags.layer->count() > 0) {
            for (auto& trace : traces) {
                if (trace.layer_id == opts.layer) {
                    return std::move(trace);
                }
            }
            throw std::invalid_argument("layer " + std::to_string(opts.layer) +
                                        " not present in " + opts.trace);
        }
        if (traces.size() != 1) {
            throw std::invalid_argument(opts.trace + " holds " +
                                        std::to_string(traces.size()) +
                                        " layers; pick one with --layer");
        }
        return std::move(traces.front());
    }
    if (flags.num_tokens->count() == 0 || flags.num_experts->count() == 0) {
        throw std::invalid_argument("synthetic input needs both --t and --n");
    }
    capmoe::SyntheticSpec spec;
    spec.num_tokens = opts.num_tokens;
    spec.num_experts = opts.num_experts;
    spec.top_k = opts.top_k;
    spec.skew = opts.skew;
    spec.seed = opts.seed;
    spec.preset = capmoe::preset_from_string(opts.preset);
    spec.layer_id = opts.layer;
    return capmoe::generate_synthetic(spec);
}

capmoe::DeviceMap simulate_device_map(const SimulateOpts& opts, const SimulateFlags& flags,
                                      Eigen::Index num_experts) {
    int devices = 0;
    if (flags.devices->count() > 0) {
        devices = opts.devices;
    }
    if (flags.experts_per_device->count() > 0) {
        if (opts.experts_per_device < 1 || num_experts % opts.experts_per_device != 0) {
            throw std::invalid_argument("--experts-per-device must divide n=" +
                                        std::to_string(num_experts));
        }
        const int implied = static_cast<int>(num_experts / opts.experts_per_device);
        if (devices > 0 && devices != implied) {
            throw std::invalid_argument("--devices " + std::to_string(devices) +
                                        " conflicts with --experts-per-device " +
                                        std::to_string(opts.experts_per_device) + " (n=" +
                                        std::to_string(num_experts) + ")");
        }
        devices = implied;
    }
    if (devices == 0) {
        devices = static_cast<int>(num_experts);  // default: one expert per device
    }
    return capmoe::round_robin_placement(num_experts, devices);
}

void run_simulate(const SimulateOpts& opts, const SimulateFlags& flags) {
    const capmoe::RoutingTrace trace = simulate_input(opts, flags);

    std::vector<capmoe::PolicySpec> policies;
    if (flags.metric->count() > 0) {
        capmoe::PolicySpec policy;
        policy.kind = capmoe::PolicyKind::token_drop;
        policy.metric = capmoe::drop_metric_from_string(opts.metric);
        policies.push_back(policy);
    }
    if (flags.reroute_rounds->count() > 0) {
        capmoe::PolicySpec policy;
        policy.kind = capmoe::PolicyKind::token_reroute;
        policy.rounds = opts.reroute_rounds;
        policies.push_back(policy);
    }
    if (flags.expert_drop_fraction->count() > 0) {
        capmoe::PolicySpec policy;
        policy.kind = capmoe::PolicyKind::expert_drop;
        policy.fraction = opts.expert_drop_fraction;
        policies.push_back(policy);
    }
    if (policies.empty()) {
        policies.push_back({});  // plain capacity enforcement with the score metric
    }

    const capmoe::DeviceMap map = simulate_device_map(opts, flags, trace.num_experts);
    capmoe::LatencyModel model;
    model.fixed_overhead = opts.c0;
    model.per_token_cost = opts.c1;

    const capmoe::SweepResult result = capmoe::run_sweep(
        trace, policies, parse_gammas(opts.gammas), map, model, opts.rho, opts.seed);

    const capmoe::SweepRow* best = nullptr;
    for (const auto& row : result.rows) {
        if (best == nullptr || row.layer_speedup > best->layer_speedup) {
            best = &row;
        }
    }
    std::ostringstream summary;
    if (best != nullptr) {
        summary << "best layer_speedup=" << format_double(best->layer_speedup)
                << " at gamma=" << format_double(best->gamma) << " (" << best->policy << ")";
    }

    const auto format = capmoe::report_format_from_string(opts.format);
    if (opts.out.empty()) {
        capmoe::write_report(result, std::cout, format);
        // Keep the artifact on stdout clean; the summary goes to stderr.
        if (best != nullptr) {
            std::cerr << summary.str() << '\n';
        }
    } else {
        capmoe::write_report(result, std::filesystem::path(opts.out), format);
        if (best != nullptr) {
            std::cout << summary.str() << '\n';
        }
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"capacity-aware MoE routing: trace synthesis, load analysis, and latency sweeps"};
    app.require_subcommand(1);

    GenerateOpts gen;
    CLI::App* generate = app.add_subcommand("generate", "synthesize a routing trace file");
    generate->add_option("--t", gen.num_tokens, "number of tokens")->required();
    generate->add_option("--n", gen.num_experts, "number of experts")->required();
    generate->add_option("--k", gen.top_k, "experts selected per token (default 1)");
    generate->add_option("--preset", gen.preset,
                         "uniform, scratch-like, or upcycled-like (default uniform)");
    generate->add_option("--skew", gen.skew, "bias scale for the uniform preset (default 0)");
    generate->add_option("--seed", gen.seed, "random seed (default 0)");
    generate->add_option("--layer", gen.layer, "layer id stamped on the trace (default 0)");
    generate->add_option("--out", gen.out, "output trace path (JSON lines)")->required();
    generate->callback([&gen] { run_generate(gen); });

    AnalyzeOpts ana;
    CLI::App* analyze = app.add_subcommand("analyze", "per-layer load and drop-fraction report");
    analyze->add_option("--trace", ana.trace, "input trace path")->required();
    analyze->add_option("--gammas,--gamma", ana.gammas,
                        "comma-separated capacity factors, inf allowed (default 3.0,2.0,1.5,1.0)");
    analyze->add_option("--out", ana.out, "output path (default stdout)");
    analyze->add_option("--format", ana.format, "csv or json (default csv)");
    analyze->callback([&ana] { run_analyze(ana); });

    SimulateOpts sim;
    SimulateFlags flags;
    CLI::App* simulate =
        app.add_subcommand("simulate", "sweep capacity policies through the latency model");
    flags.trace = simulate->add_option("--trace", sim.trace, "input trace path");
    flags.num_tokens = simulate->add_option("--t", sim.num_tokens, "synthetic: number of tokens");
    flags.num_experts =
        simulate->add_option("--n", sim.num_experts, "synthetic: number of experts");
    simulate->add_option("--k", sim.top_k, "synthetic: experts per token (default 1)");
    simulate->add_option("--preset", sim.preset, "synthetic: preset (default uniform)");
    simulate->add_option("--skew", sim.skew, "synthetic: bias scale (default 0)");
    flags.layer = simulate->add_option(
        "--layer", sim.layer, "layer id to simulate (required for multi-layer trace files)");
    simulate->add_option("--gammas,--gamma", sim.gammas,
                         "comma-separated capacity factors, inf allowed "
                         "(default inf,3.0,2.0,1.5,1.2,1.0)");
    flags.metric = simulate->add_option(
        "--metric", sim.metric, "token-drop metric: order, reverse-order, random, score");
    flags.reroute_rounds = simulate->add_option("--reroute-rounds", sim.reroute_rounds,
                                                "add a reroute policy with this many rounds");
    flags.expert_drop_fraction =
        simulate->add_option("--expert-drop-fraction", sim.expert_drop_fraction,
                             "add an expert-drop policy skipping this fraction of experts");
    flags.devices = simulate->add_option("--devices", sim.devices,
                                         "device count for round-robin placement (default n)");
    flags.experts_per_device = simulate->add_option("--experts-per-device",
                                                    sim.experts_per_device,
                                                    "alternative to --devices; must divide n");
    simulate->add_option("--c0", sim.c0, "fixed latency overhead (default 0)");
    simulate->add_option("--c1", sim.c1, "per-token latency cost (default 1)");
    simulate->add_option("--rho", sim.rho, "MoE share of end-to-end time (default 0.5574)");
    simulate->add_option("--seed", sim.seed, "random seed (default 0)");
    simulate->add_option("--out", sim.out, "report path (default stdout)");
    simulate->add_option("--format", sim.format, "csv or json (default csv)");
    simulate->callback([&sim, &flags] { run_simulate(sim, flags); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "capmoe: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
