#pragma once

#include <Eigen/Dense>

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "invariance/subspace.hpp"

namespace invariance {

/// One control-input channel: n x r input matrix plus an optional
/// sup-norm bound on admissible input values (nullopt = unbounded).
struct Channel {
    Eigen::MatrixXd input;
    std::optional<double> bound;
};

/**
 * Linear multi-channel system  xdot = A x + sum_j B_j u_j  with per-channel
 * input-value bounds.  Channels are numbered 1..N to match pattern labels.
 */
class MultiChannelSystem {
 public:
    MultiChannelSystem(Eigen::MatrixXd a, std::vector<Channel> channels);

    Eigen::Index state_dim() const { return a_.rows(); }
    int channel_count() const { return static_cast<int>(channels_.size()); }
    const Eigen::MatrixXd& dynamics() const { return a_; }

    /// Channel by 1-based index.
    const Channel& channel(int id) const;

    /// Width r_j of channel j.
    Eigen::Index channel_width(int id) const { return channel(id).input.cols(); }

    /// Sum of all channel widths (row dimension of a stacked control value).
    Eigen::Index total_input_width() const { return total_width_; }

    /// Row offset of channel j inside a stacked control value.
    Eigen::Index channel_offset(int id) const;

 private:
    Eigen::MatrixXd a_;
    std::vector<Channel> channels_;
    std::vector<Eigen::Index> offsets_;
    Eigen::Index total_width_ = 0;
};

/**
 * A failure pattern: the set of channels still alive.  Canonical labels are
 * "¬0" (all channels alive), "¬j" (channel j removed) and "alive:{...}" for
 * arbitrary subsets.
 */
class ChannelPattern {
 public:
    static ChannelPattern all_alive(int channel_count);
    static ChannelPattern drop_channel(int channel_count, int removed);
    static ChannelPattern from_alive(int channel_count, std::set<int> alive);

    /// Accepts "¬0", "not0", "¬3", "not3", "alive:1,3" and "alive:" (all dead).
    static ChannelPattern parse(const std::string& label, int channel_count);

    const std::set<int>& alive() const { return alive_; }
    int channel_count() const { return channel_count_; }
    bool is_alive(int id) const { return alive_.count(id) > 0; }
    const std::string& label() const { return label_; }

 private:
    ChannelPattern(int channel_count, std::set<int> alive, std::string label);

    int channel_count_;
    std::set<int> alive_;
    std::string label_;
};

/// Horizontal concatenation of the alive channels' input matrices in index
/// order; an n x 0 matrix when every channel is dead.
Eigen::MatrixXd input_matrix(const MultiChannelSystem& system, const ChannelPattern& pattern);

/**
 * Piecewise-constant multi-channel control on [0, dt * pieces).  `values`
 * stacks all channels (dead ones included) row-wise, one column per piece;
 * restriction to a pattern simply ignores the dead channels' rows.
 */
struct ControlSignal {
    double dt = 0.0;
    Eigen::MatrixXd values;  // total_input_width x pieces

    Eigen::Index pieces() const { return values.cols(); }
    double horizon() const { return dt * static_cast<double>(values.cols()); }
};

/// Returns an empty string if every value respects its channel bound,
/// otherwise a human-readable violation.
std::string check_admissible(const MultiChannelSystem& system, const ControlSignal& u);

/// Shift a control left by a whole number of pieces (u(t) -> u(t + k dt)).
ControlSignal shift_pieces(const ControlSignal& u, Eigen::Index k);

/// Sampling density for simulate(): samples per control piece.
struct SamplingGrid {
    int samples_per_piece = 1;
};

struct Trajectory {
    std::vector<double> times;
    std::vector<Eigen::VectorXd> states;
};

/**
 * Exact piecewise-exponential propagation of the pattern-restricted system:
 * per piece of width h with constant drive d, x+ = e^{Ah} x + (\int_0^h
 * e^{As} ds) d.  Both factors come from one augmented-matrix exponential, so
 * the only error per piece is rounding.
 */
Trajectory simulate(const MultiChannelSystem& system, const ChannelPattern& pattern,
                    const Eigen::VectorXd& x0, const ControlSignal& u,
                    const SamplingGrid& grid = {});

/// e^{Ah} and \int_0^h e^{As} ds via the augmented block exponential.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> exponential_propagators(const Eigen::MatrixXd& a,
                                                                    double h);

struct SystemValidation {
    std::optional<MultiChannelSystem> system;
    std::vector<std::string> violations;
};

/// Parse and validate a system description (JSON text, see README for the
/// schema).  Collects all violations instead of stopping at the first.
SystemValidation validate_system(const std::string& json_text);

/// validate_system on a file; throws std::runtime_error with the violation
/// list on failure.
MultiChannelSystem load_system(const std::string& path);

}  // namespace invariance
