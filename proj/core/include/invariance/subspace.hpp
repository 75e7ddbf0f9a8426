#pragma once

#include <Eigen/Dense>

#include <vector>

namespace invariance {

/// Default relative rank / containment tolerance used throughout the library.
inline constexpr double kDefaultTol = 1e-9;

/**
 * A linear subspace of R^n represented by an orthonormal column basis.
 *
 * Equality is basis independent: two subspaces are considered equal when the
 * gap metric between them (spectral norm of the projector difference) is
 * within tolerance.  The zero subspace is a basis with zero columns and an
 * explicit ambient dimension.  Instances are immutable after construction.
 */
class Subspace {
 public:
    /// Zero subspace {0} of R^n.
    static Subspace zero(Eigen::Index ambient_dim, double tol = kDefaultTol);

    /// The full space R^n.
    static Subspace full(Eigen::Index ambient_dim, double tol = kDefaultTol);

    /// Span of the columns of `columns` (rows give the ambient dimension).
    /// Rank is decided by singular values relative to tol * sigma_max.
    static Subspace span_of(const Eigen::MatrixXd& columns, double tol = kDefaultTol);

    /// Span of a list of ambient vectors; the list may be empty.
    static Subspace from_spanning_vectors(Eigen::Index ambient_dim,
                                          const std::vector<Eigen::VectorXd>& vectors,
                                          double tol = kDefaultTol);

    Eigen::Index ambient_dim() const { return basis_.rows(); }
    Eigen::Index dim() const { return basis_.cols(); }
    double tol() const { return tol_; }

    /// Orthonormal basis, one subspace vector per column (n x dim).
    const Eigen::MatrixXd& basis() const { return basis_; }

    /// Orthogonal projector onto the subspace (n x n).
    Eigen::MatrixXd projector() const { return basis_ * basis_.transpose(); }

    /// Projection of x onto the subspace.
    Eigen::VectorXd project(const Eigen::VectorXd& x) const;

    /// Membership within tol * max(1, |x|).
    bool contains(const Eigen::VectorXd& x) const;

    /// Containment of another subspace within tolerance.
    bool contains(const Subspace& other) const;

    /// Basis-independent equality: gap metric within the larger tolerance.
    bool approx_equal(const Subspace& other) const;

 private:
    Subspace(Eigen::MatrixXd basis, double tol);

    Eigen::MatrixXd basis_;  // n x d, orthonormal columns
    double tol_;
};

/// Orthonormal basis of the kernel of m, rank cutoff relative to sigma_max.
Eigen::MatrixXd kernel_basis(const Eigen::MatrixXd& m, double tol = kDefaultTol);

/// Lattice join: smallest subspace containing both arguments.
Subspace sum(const Subspace& v, const Subspace& w);

/// Lattice meet, computed via the kernel of stacked orthogonal-complement
/// projectors.
Subspace intersect(const Subspace& v, const Subspace& w);

/// Set preimage {x : A x in s}, computed as ker((I - P_s) A).  Contains ker A.
Subspace preimage(const Eigen::MatrixXd& a, const Subspace& s);

/// Gap metric ||P_v - P_w|| (spectral norm).  A metric on the subspace
/// lattice with values in [0, 1]; zero iff the subspaces are equal.
double gap_metric(const Subspace& v, const Subspace& w);

/// Euclidean distance ||(I - P_v) x|| from a point to the subspace.
double distance_to(const Eigen::VectorXd& x, const Subspace& v);

}  // namespace invariance
