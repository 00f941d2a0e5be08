#include "capmoe/trace.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "capmoe/gating.hpp"
#include "capmoe/rng.hpp"

namespace capmoe {
namespace {

using nlohmann::json;

constexpr std::uint64_t kNoiseStream = 0x6e6f697365ULL;  // token-level Gaussian noise
constexpr std::uint64_t kBiasStream = 0x62696173ULL;     // per-expert heavy-tail bias

[[noreturn]] void parse_fail(const std::filesystem::path& path, std::size_t line, const std::string& what) {
    std::ostringstream msg;
    msg << path.string() << ":" << line << ": " << what;
    throw std::runtime_error(msg.str());
}

std::int64_t require_integer(const json& record, const char* field, const std::filesystem::path& path,
                             std::size_t line) {
    if (!record.contains(field)) {
        parse_fail(path, line, std::string("missing field \"") + field + "\"");
    }
    if (!record[field].is_number_integer()) {
        parse_fail(path, line, std::string("field \"") + field + "\" must be an integer");
    }
    return record[field].get<std::int64_t>();
}

RoutingTrace parse_record(const json& record, const std::filesystem::path& path, std::size_t line) {
    RoutingTrace trace;
    trace.layer_id = static_cast<int>(require_integer(record, "layer", path, line));
    const std::int64_t t = require_integer(record, "t", path, line);
    const std::int64_t n = require_integer(record, "n", path, line);
    trace.top_k = static_cast<int>(require_integer(record, "k", path, line));
    trace.num_tokens = t;
    trace.num_experts = n;

    if (!record.contains("logits") || !record["logits"].is_array()) {
        parse_fail(path, line, "field \"logits\" must be an array of rows");
    }
    const json& rows = record["logits"];
    if (static_cast<std::int64_t>(rows.size()) != t) {
        parse_fail(path, line, "field \"logits\" row count does not match t");
    }
    if (t < 1 || n < 1) {
        parse_fail(path, line, "t and n must be >= 1");
    }
    trace.logits.resize(t, n);
    for (std::int64_t i = 0; i < t; ++i) {
        const json& row = rows[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<std::int64_t>(row.size()) != n) {
            parse_fail(path, line, "field \"logits\" row " + std::to_string(i) + " must hold n numbers");
        }
        for (std::int64_t j = 0; j < n; ++j) {
            const json& cell = row[static_cast<std::size_t>(j)];
            if (!cell.is_number()) {
                parse_fail(path, line,
                           "field \"logits\" entry (" + std::to_string(i) + "," + std::to_string(j) +
                               ") is not a number");
            }
            trace.logits(i, j) = cell.get<double>();
        }
    }

    try {
        trace.validate();
    } catch (const std::invalid_argument& e) {
        parse_fail(path, line, e.what());
    }
    return trace;
}

json to_record(const RoutingTrace& trace) {
    json logits = json::array();
    for (Eigen::Index i = 0; i < trace.num_tokens; ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < trace.num_experts; ++j) {
            row.push_back(trace.logits(i, j));
        }
        logits.push_back(std::move(row));
    }
    return json{{"layer", trace.layer_id},
                {"t", trace.num_tokens},
                {"n", trace.num_experts},
                {"k", trace.top_k},
                {"logits", std::move(logits)}};
}

double peak_ratio(const Eigen::MatrixXd& logits, int k) {
    const AssignmentSet assignments = topk_select(softmax_rows(logits), k);
    const LoadVector loads = expert_load(assignments, logits.cols());
    const double mean = expected_load(logits.rows(), k, logits.cols());
    return static_cast<double>(loads.maxCoeff()) / mean;
}

}  // namespace

void RoutingTrace::validate() const {
    if (num_tokens < 1) {
        throw std::invalid_argument("trace: num_tokens must be >= 1");
    }
    if (num_experts < 1) {
        throw std::invalid_argument("trace: num_experts must be >= 1");
    }
    if (top_k < 1) {
        throw std::invalid_argument("trace: top_k must be >= 1");
    }
    if (top_k > num_experts) {
        throw std::invalid_argument("trace: k exceeds n (k=" + std::to_string(top_k) +
                                    ", n=" + std::to_string(num_experts) + ")");
    }
    if (logits.rows() != num_tokens || logits.cols() != num_experts) {
        throw std::invalid_argument("trace: logits shape does not match (t, n)");
    }
    if (!logits.allFinite()) {
        throw std::invalid_argument("trace: logits contain a non-finite value");
    }
}

SyntheticPreset preset_from_string(const std::string& name) {
    if (name == "uniform") return SyntheticPreset::uniform;
    if (name == "scratch-like" || name == "scratch_like") return SyntheticPreset::scratch_like;
    if (name == "upcycled-like" || name == "upcycled_like") return SyntheticPreset::upcycled_like;
    throw std::invalid_argument("unknown preset \"" + name + "\"");
}

std::string to_string(SyntheticPreset preset) {
    switch (preset) {
        case SyntheticPreset::uniform: return "uniform";
        case SyntheticPreset::scratch_like: return "scratch-like";
        case SyntheticPreset::upcycled_like: return "upcycled-like";
    }
    throw std::invalid_argument("unknown preset value");
}

void SyntheticSpec::validate() const {
    if (num_tokens < 1 || num_experts < 1) {
        throw std::invalid_argument("synthetic spec: t and n must be >= 1");
    }
    if (top_k < 1 || top_k > num_experts) {
        throw std::invalid_argument("synthetic spec: k must satisfy 1 <= k <= n");
    }
    if (!(skew >= 0.0)) {
        throw std::invalid_argument("synthetic spec: skew must be >= 0");
    }
}

std::vector<RoutingTrace> load_traces(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open trace file " + path.string());
    }
    std::vector<RoutingTrace> traces;
    std::unordered_set<int> seen_layers;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json record;
        try {
            record = json::parse(line);
        } catch (const json::parse_error& e) {
            parse_fail(path, line_no, std::string("malformed record: ") + e.what());
        }
        RoutingTrace trace = parse_record(record, path, line_no);
        if (!seen_layers.insert(trace.layer_id).second) {
            parse_fail(path, line_no, "duplicate layer id " + std::to_string(trace.layer_id));
        }
        traces.push_back(std::move(trace));
    }
    if (traces.empty()) {
        throw std::runtime_error("trace file " + path.string() + " holds no layer records");
    }
    return traces;
}

RoutingTrace load_trace(const std::filesystem::path& path) {
    std::vector<RoutingTrace> traces = load_traces(path);
    if (traces.size() != 1) {
        throw std::runtime_error("trace file " + path.string() + " holds " +
                                 std::to_string(traces.size()) +
                                 " layers; expected exactly one (use load_traces)");
    }
    return std::move(traces.front());
}

void save_traces(const std::vector<RoutingTrace>& traces, const std::filesystem::path& path) {
    for (const RoutingTrace& trace : traces) {
        trace.validate();
    }
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    for (const RoutingTrace& trace : traces) {
        out << to_record(trace).dump() << '\n';
    }
    out.flush();
    if (!out) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

void save_trace(const RoutingTrace& trace, const std::filesystem::path& path) {
    save_traces({trace}, path);
}

RoutingTrace generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const Eigen::Index t = spec.num_tokens;
    const Eigen::Index n = spec.num_experts;

    // Base draws are fixed per seed; calibration only rescales the bias term.
    Eigen::MatrixXd noise(t, n);
    const std::uint64_t noise_key = rng::mix(spec.seed, kNoiseStream);
    for (Eigen::Index i = 0; i < t; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            noise(i, j) = rng::gaussian(rng::mix(noise_key, static_cast<std::uint64_t>(i * n + j)));
        }
    }
    Eigen::VectorXd bias(n);
    const std::uint64_t bias_key = rng::mix(spec.seed, kBiasStream);
    for (Eigen::Index j = 0; j < n; ++j) {
        // Log-normal: persistent expert popularity with a heavy upper tail.
        bias(j) = std::exp(rng::gaussian(rng::mix(bias_key, static_cast<std::uint64_t>(j))));
    }

    const auto assemble = [&](double scale) {
        RoutingTrace trace;
        trace.layer_id = spec.layer_id;
        trace.num_tokens = t;
        trace.num_experts = n;
        trace.top_k = spec.top_k;
        trace.logits = noise;
        trace.logits.rowwise() += (scale * bias).transpose();
        return trace;
    };

    if (spec.preset == SyntheticPreset::uniform) {
        return assemble(spec.skew);
    }

    // Calibrated presets: search the bias scale until the realized peak
    // normalized load lands inside the target band. The peak grows with the
    // scale and saturates at n/k, so an exponential ramp followed by
    // bisection finds the band when it is reachable at all.
    const double band_lo = spec.preset == SyntheticPreset::scratch_like ? 5.0 : 1.8;
    const double band_hi = spec.preset == SyntheticPreset::scratch_like ? 6.5 : 3.0;

    const auto ratio_at = [&](double scale) { return peak_ratio(assemble(scale).logits, spec.top_k); };

    double best_ratio = ratio_at(0.0);
    if (best_ratio >= band_lo && best_ratio <= band_hi) {
        return assemble(0.0);
    }

    double below = 0.0;
    double scale = 0.25;
    double above = -1.0;
    for (int step = 0; step < 28 && above < 0.0; ++step, scale *= 2.0) {
        const double ratio = ratio_at(scale);
        if (std::abs(ratio - 0.5 * (band_lo + band_hi)) <
            std::abs(best_ratio - 0.5 * (band_lo + band_hi))) {
            best_ratio = ratio;
        }
        if (ratio >= band_lo && ratio <= band_hi) {
            return assemble(scale);
        }
        if (ratio < band_lo) {
            below = scale;
        } else {
            above = scale;
        }
    }
    if (above > 0.0) {
        for (int step = 0; step < 48; ++step) {
            const double mid = 0.5 * (below + above);
            const double ratio = ratio_at(mid);
            if (std::abs(ratio - 0.5 * (band_lo + band_hi)) <
                std::abs(best_ratio - 0.5 * (band_lo + band_hi))) {
                best_ratio = ratio;
            }
            if (ratio >= band_lo && ratio <= band_hi) {
                return assemble(mid);
            }
            if (ratio < band_lo) {
                below = mid;
            } else {
                above = mid;
            }
        }
    }

    std::ostringstream msg;
    msg << "synthetic calibration failed for preset " << to_string(spec.preset)
        << ": best achieved max normalized load " << best_ratio << ", target ["
        << band_lo << ", " << band_hi << "]";
    throw std::runtime_error(msg.str());
}

double max_normalized_load(const RoutingTrace& trace) {
    trace.validate();
    return peak_ratio(trace.logits, trace.top_k);
}

}  // namespace capmoe
