#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "invariance/controlled_invariance.hpp"
#include "invariance/multichannel.hpp"
#include "invariance/subspace.hpp"

namespace invariance {

/// Axis-aligned box, expressed in the coordinates of a carrier subspace.
struct Box {
    Eigen::VectorXd center;
    Eigen::VectorXd half_widths;
};

/**
 * One spanning-set problem instance: keep every initial state of the boxed
 * region within `epsilon` of the target subspace over [0, horizon], for
 * every configured failure pattern, using finitely many open-loop controls.
 */
struct SpanningConfig {
    double horizon = 1.0;
    double epsilon = 0.1;
    Subspace f_carrier;       ///< carrier subspace of the initial region
    std::vector<Box> boxes;   ///< region = union of boxes, carrier coordinates
    std::vector<ChannelPattern> patterns;
    double grid_density = 0.0;        ///< points per unit length; <= 0 selects automatic
    std::int64_t control_budget = 2000;  ///< cap on brute-force candidate controls
    double piece_width_hint = 0.02;   ///< starting control piece width, halved adaptively
};

/// Largest sampled distance of a trajectory from the subspace.
double excursion(const Trajectory& trajectory, const Subspace& v);

/// Result of a spanning-set construction.  `cardinality` is empty when some
/// grid point could not be covered by any candidate within the budget.
struct SpanningConstruction {
    std::optional<std::uint64_t> cardinality;
    std::vector<ControlSignal> controls;  ///< the cover, materialized when small
    bool controls_materialized = false;
    std::vector<std::int64_t> assignment;  ///< grid point -> index into controls
    std::size_t grid_points = 0;
    double piece_width = 0.0;
    std::string diagnostic;
};

/// True iff every grid point of the configured region stays within epsilon
/// of v under at least one listed control, for every configured pattern.
bool is_spanning_set(const MultiChannelSystem& system, const Subspace& v,
                     const SpanningConfig& config, const std::vector<ControlSignal>& controls);

/**
 * Constructs a spanning set by greedy covering of the configured grid with
 * friend-tracking candidates (one per grid seed) plus quantized open-loop
 * candidates within the budget, then returns its cardinality.  On a
 * one-dimensional carrier the coverage sets are intervals and the cover is
 * the exact grid optimum.
 */
SpanningConstruction min_spanning_cardinality(const MultiChannelSystem& system, const Subspace& v,
                                              const SpanningConfig& config);

struct EntropySample {
    double horizon = 0.0;
    double epsilon = 0.0;
    std::optional<std::uint64_t> cardinality;  ///< empty = infinite at budget
};

struct EntropyEstimate {
    std::vector<EntropySample> samples;
    std::optional<double> rate;  ///< nats per time unit; empty = infinite
    double fit_residual = 0.0;
    std::vector<std::pair<double, double>> per_epsilon_rates;  ///< (epsilon, fitted slope)
    std::string method;  ///< "covering" | "spectral" | "feedback-class"
    std::string diagnostic;
};

struct EntropySchedule {
    std::vector<double> horizons;  ///< at least three samples
    std::vector<double> epsilons;  ///< evaluated from smallest upward
};

/**
 * Covering estimate of the invariance entropy: runs the spanning-set
 * construction over the schedule and fits the slope of log cardinality
 * versus horizon at the smallest epsilon whose covers are finite for every
 * horizon.  Per-epsilon slopes exhibit the epsilon-to-zero trend.
 */
EntropyEstimate covering_entropy_estimate(const MultiChannelSystem& system, const Subspace& v,
                                          const SpanningConfig& base,
                                          const EntropySchedule& schedule);

/**
 * Fast spectral oracle: growth rate of the covering numbers of the
 * control-independent error map (I - P_v) e^{At} restricted to the carrier,
 * obtained by log-slope fits of its singular values over a horizon window.
 * Requires the target to be controlled-invariant for every pattern.
 */
double spectral_entropy_estimate(const MultiChannelSystem& system,
                                 const std::vector<ChannelPattern>& patterns, const Subspace& v,
                                 const Subspace& f_carrier);

/**
 * Covering estimate restricted to friend-generated controls: candidates are
 * the closed-loop tracking signals of the given friend class, and distances
 * are measured against the largest subspace of v kept invariant by every
 * friend under every pattern.  An empty class yields an infinite estimate.
 */
EntropyEstimate feedback_class_entropy_estimate(const MultiChannelSystem& system,
                                                const Subspace& v, const SpanningConfig& base,
                                                const EntropySchedule& schedule,
                                                const std::vector<Friend>& friend_class);

}  // namespace invariance
