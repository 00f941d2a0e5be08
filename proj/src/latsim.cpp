#include "capmoe/latsim.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace capmoe {

void DeviceMap::validate() const {
    if (num_devices < 1) {
        throw std::invalid_argument("DeviceMap: num_devices must be >= 1, got " +
                                    std::to_string(num_devices));
    }
    for (Eigen::Index i = 0; i < placement.size(); ++i) {
        if (placement[i] < 0 || placement[i] >= num_devices) {
            throw std::invalid_argument("DeviceMap: expert " + std::to_string(i) +
                                        " placed on device " + std::to_string(placement[i]) +
                                        ", valid range is [0, " + std::to_string(num_devices) +
                                        ")");
        }
    }
}

DeviceMap round_robin_placement(Eigen::Index num_experts, int num_devices) {
    if (num_experts < 1) {
        throw std::invalid_argument("round_robin_placement: need at least one expert");
    }
    if (num_devices < 1) {
        throw std::invalid_argument("round_robin_placement: need at least one device");
    }
    DeviceMap map;
    map.num_devices = num_devices;
    map.placement.resize(num_experts);
    for (Eigen::Index i = 0; i < num_experts; ++i) {
        map.placement[i] = static_cast<int>(i % num_devices);
    }
    return map;
}

void LatencyModel::validate() const {
    if (!(fixed_overhead >= 0.0)) {
        throw std::invalid_argument("LatencyModel: fixed_overhead must be >= 0");
    }
    if (!(per_token_cost > 0.0)) {
        throw std::invalid_argument("LatencyModel: per_token_cost must be > 0");
    }
}

Eigen::VectorXi device_loads(const LoadVector& loads, const DeviceMap& map) {
    map.validate();
    if (loads.size() != map.placement.size()) {
        throw std::invalid_argument("device_loads: expected " +
                                    std::to_string(map.placement.size()) + " expert loads, got " +
                                    std::to_string(loads.size()));
    }
    Eigen::VectorXi totals = Eigen::VectorXi::Zero(map.num_devices);
    for (Eigen::Index i = 0; i < loads.size(); ++i) {
        totals[map.placement[i]] += loads[i];
    }
    return totals;
}

double layer_latency(const Eigen::VectorXi& device_totals, const LatencyModel& model) {
    model.validate();
    if (device_totals.size() < 1) {
        throw std::invalid_argument("layer_latency: need at least one device total");
    }
    return model.fixed_overhead + model.per_token_cost * device_totals.maxCoeff();
}

MaxLoadBounds max_load_bounds(std::int64_t num_tokens, int top_k, std::int64_t num_experts,
                              double gamma) {
    if (num_tokens < 1 || num_experts < 1 || top_k < 1 || top_k > num_experts) {
        throw std::invalid_argument("max_load_bounds: invalid counts");
    }
    if (std::isnan(gamma) || gamma <= 0.0) {
        throw std::invalid_argument("max_load_bounds: gamma must be positive");
    }
    const double mean = expected_load(num_tokens, top_k, num_experts);
    if (std::isinf(gamma)) {
        // One expert can at most absorb every token once: n*mean/k = t.
        return {mean, static_cast<double>(num_experts) * mean / top_k};
    }
    if (gamma >= 1.0) {
        return {mean, gamma * mean};
    }
    return {gamma * mean, gamma * mean};
}

double layer_speedup(const LoadVector& baseline_loads, const LoadVector& constrained_loads,
                     const DeviceMap& map, const LatencyModel& model) {
    const double baseline = layer_latency(device_loads(baseline_loads, map), model);
    const double constrained = layer_latency(device_loads(constrained_loads, map), model);
    if (constrained == 0.0) {
        throw std::invalid_argument("layer_speedup: constrained latency is zero");
    }
    return baseline / constrained;
}

double end_to_end_speedup(double layer_speedup, double rho) {
    if (!(layer_speedup > 0.0)) {
        throw std::invalid_argument("end_to_end_speedup: layer speedup must be > 0");
    }
    if (!(rho >= 0.0 && rho <= 1.0)) {
        throw std::invalid_argument("end_to_end_speedup: rho must lie in [0, 1]");
    }
    return 1.0 / ((1.0 - rho) + rho / layer_speedup);
}

SpeedupReport speedup_report(const LoadVector& baseline_loads,
                             const LoadVector& constrained_loads, const DeviceMap& map,
                             const LatencyModel& model, double rho) {
    const Eigen::VectorXi base_totals = device_loads(baseline_loads, map);
    const Eigen::VectorXi cons_totals = device_loads(constrained_loads, map);
    SpeedupReport report;
    report.baseline_max_device_load = base_totals.maxCoeff();
    report.constrained_max_device_load = cons_totals.maxCoeff();
    const double constrained = layer_latency(cons_totals, model);
    if (constrained == 0.0) {
        throw std::invalid_argument("speedup_report: constrained latency is zero");
    }
    report.layer_speedup = layer_latency(base_totals, model) / constrained;
    report.end_to_end_speedup = end_to_end_speedup(report.layer_speedup, rho);
    report.moe_time_fraction = rho;
    return report;
}

}  // namespace capmoe
