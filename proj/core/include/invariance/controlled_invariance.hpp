#pragma once

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <vector>

#include "invariance/multichannel.hpp"
#include "invariance/subspace.hpp"

namespace invariance {

/// A failure pattern together with its stacked input matrix and its image
/// subspace, the data every invariance question is asked against.
struct PatternGeometry {
    ChannelPattern pattern;
    Eigen::MatrixXd stacked_input;
    Subspace image;
};

PatternGeometry pattern_geometry(const MultiChannelSystem& system, const ChannelPattern& pattern);

/**
 * A feedback map certifying controlled invariance of `target`: with u_j =
 * K_j x the closed loop maps the target into itself.  `gains` holds one r_j
 * x n matrix per participating channel (absent channels act as zero), and
 * `residual` is the worst relative defect of the closed-loop invariance.
 */
struct Friend {
    std::map<int, Eigen::MatrixXd> gains;
    Subspace target;
    double residual = 0.0;

    /// A + sum of B_j K_j over channels that are both alive and present.
    Eigen::MatrixXd closed_loop(const MultiChannelSystem& system,
                                const ChannelPattern& pattern) const;
};

/// Residual threshold below which a friend is accepted as exact.
inline constexpr double kFriendResidualTol = 1e-8;

/// Controlled-invariance test: A v stays in v + input_image for every basis
/// vector, within tol * max(1, |A v|).
bool is_controlled_invariant(const Eigen::MatrixXd& a, const Subspace& input_image,
                             const Subspace& v);

/**
 * Largest controlled-invariant subspace contained in f, via the classical
 * fixed-point iteration V <- f  ∩  A^{-1}(V + input_image).  Terminates in at
 * most dim f + 1 steps; failure to converge indicates a tolerance fault and
 * throws.
 */
Subspace supremal_invariant(const Eigen::MatrixXd& a, const Subspace& input_image,
                            const Subspace& f);

/// Smallest A-invariant subspace containing v: v + A v + ... + A^{n-1} v.
Subspace smallest_invariant(const Eigen::MatrixXd& a, const Subspace& v);

/**
 * Feedback synthesis for a controlled-invariant target.  For each basis
 * vector v_k solves the least-norm system [basis | B_alive] (w_k; -u_k) =
 * A v_k, defines the gain on the target by K v_k = u_k and extends it by
 * zero on the orthogonal complement.  Throws if the target is not
 * controlled-invariant for the pattern.
 */
Friend synthesize_friend(const MultiChannelSystem& system, const ChannelPattern& pattern,
                         const Subspace& v);

/// One gain tuple valid for every pattern at once (the closed loop maps v
/// into itself for each pattern).  Returns nullopt when no such tuple exists
/// within the residual tolerance.
std::optional<Friend> synthesize_joint_friend(const MultiChannelSystem& system,
                                              const std::vector<ChannelPattern>& patterns,
                                              const Subspace& v);

/**
 * Joint fixed point over a pattern family: the largest subspace of f that is
 * simultaneously controlled-invariant for every listed pattern.  Computed as
 * V <- ∩_p ( f ∩ A^{-1}(V + image_p) ); contained in the intersection of the
 * per-pattern supremal subspaces, with equality iff that intersection is
 * itself invariant for every pattern.
 */
Subspace robust_supremal(const MultiChannelSystem& system,
                         const std::vector<ChannelPattern>& patterns, const Subspace& f);

/// Supremal subspace of f invariant under every plain (uncontrolled) map in
/// the list; the robust iteration with empty input images.
Subspace supremal_closed_loop_invariant(const std::vector<Eigen::MatrixXd>& maps,
                                        const Subspace& f);

}  // namespace invariance
