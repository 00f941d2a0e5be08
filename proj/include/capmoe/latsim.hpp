// latsim.hpp - expert-parallel latency model: device placement, affine
// latency from the most burdened device, layer and end-to-end speedups

#pragma once

#include <cstdint>
#include <vector>

#include "capmoe/gating.hpp"

namespace capmoe {

// Default MoE share of end-to-end time, calibrated so a 1.94x layer speedup
// composes to a 1.37x end-to-end speedup.
inline constexpr double kDefaultMoeTimeFraction = 0.5574;

// Assignment of experts to devices; placement[i] is the device hosting
// expert i. A device may host zero experts.
struct DeviceMap {
    int num_devices = 1;
    Eigen::VectorXi placement;

    // Throws std::invalid_argument if num_devices < 1 or any placement entry
    // falls outside [0, num_devices).
    void validate() const;
};

// Expert i on device i mod num_devices.
DeviceMap round_robin_placement(Eigen::Index num_experts, int num_devices);

// Affine latency in relative time units: fixed_overhead + per_token_cost
// multiplied by the busiest device's token count.
struct LatencyModel {
    double fixed_overhead = 0.0;  // c0 >= 0
    double per_token_cost = 1.0;  // c1 > 0

    void validate() const;
};

// Range [low, high] the maximum per-expert load can occupy.
struct MaxLoadBounds {
    double low = 0.0;
    double high = 0.0;
};

struct SpeedupReport {
    double layer_speedup = 1.0;
    double end_to_end_speedup = 1.0;
    std::int64_t baseline_max_device_load = 0;
    std::int64_t constrained_max_device_load = 0;
    double moe_time_fraction = kDefaultMoeTimeFraction;
};

// totals[d] = sum of loads over the experts placed on device d.
Eigen::VectorXi device_loads(const LoadVector& loads, const DeviceMap& map);

// c0 + c1 * max(device totals); the busiest device dictates layer latency.
double layer_latency(const Eigen::VectorXi& device_totals, const LatencyModel& model);

// Bounds on the maximum per-expert load for t tokens, top-k routing over n
// experts, under capacity factor gamma (infinity = unbounded). Unbounded:
// [t*k/n, t]; gamma >= 1: expected load through gamma times it; gamma < 1:
// pinned at gamma times the expected load.
MaxLoadBounds max_load_bounds(std::int64_t num_tokens, int top_k, std::int64_t num_experts,
                              double gamma);

// Ratio of baseline to constrained layer latency under the same placement.
// Throws std::invalid_argument if the constrained latency is zero.
double layer_speedup(const LoadVector& baseline_loads, const LoadVector& constrained_loads,
                     const DeviceMap& map, const LatencyModel& model);

// Serial-fraction composition: 1 / ((1 - rho) + rho / s) where rho is the
// MoE share of end-to-end time. Requires s > 0 and rho in [0, 1].
double end_to_end_speedup(double layer_speedup, double rho);

// Bundles both speedups and the max device loads they were computed from.
SpeedupReport speedup_report(const LoadVector& baseline_loads,
                             const LoadVector& constrained_loads, const DeviceMap& map,
                             const LatencyModel& model,
                             double rho = kDefaultMoeTimeFraction);

}  // namespace capmoe
