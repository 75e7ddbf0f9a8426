#include "invariance/subspace.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>
#include <stdexcept>
#include <string>

namespace invariance {

namespace {

void check_ambient(Eigen::Index ambient_dim) {
    if (ambient_dim < 1) {
        throw std::invalid_argument("Subspace: ambient dimension must be positive, got " +
                                    std::to_string(ambient_dim));
    }
}

void check_same_ambient(const Subspace& v, const Subspace& w, const char* op) {
    if (v.ambient_dim() != w.ambient_dim()) {
        throw std::invalid_argument(std::string(op) + ": ambient dimension mismatch (" +
                                    std::to_string(v.ambient_dim()) + " vs " +
                                    std::to_string(w.ambient_dim()) + ")");
    }
}

// Orthonormal column basis of the range of m, rank relative to sigma_max.
Eigen::MatrixXd range_basis(const Eigen::MatrixXd& m, double tol) {
    if (m.cols() == 0) return Eigen::MatrixXd(m.rows(), 0);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU);
    const auto& sigma = svd.singularValues();
    const double smax = sigma.size() > 0 ? sigma(0) : 0.0;
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < sigma.size(); ++i) {
        if (sigma(i) > tol * smax) ++rank;
    }
    if (smax == 0.0) rank = 0;
    return svd.matrixU().leftCols(rank);
}

}  // namespace

Subspace::Subspace(Eigen::MatrixXd basis, double tol) : basis_(std::move(basis)), tol_(tol) {
    check_ambient(basis_.rows());
    if (!(tol_ > 0.0)) {
        throw std::invalid_argument("Subspace: tolerance must be positive");
    }
}

Subspace Subspace::zero(Eigen::Index ambient_dim, double tol) {
    check_ambient(ambient_dim);
    return Subspace(Eigen::MatrixXd(ambient_dim, 0), tol);
}

Subspace Subspace::full(Eigen::Index ambient_dim, double tol) {
    check_ambient(ambient_dim);
    return Subspace(Eigen::MatrixXd::Identity(ambient_dim, ambient_dim), tol);
}

Subspace Subspace::span_of(const Eigen::MatrixXd& columns, double tol) {
    check_ambient(columns.rows());
    if (!(tol > 0.0)) {
        throw std::invalid_argument("Subspace::span_of: tolerance must be positive");
    }
    return Subspace(range_basis(columns, tol), tol);
}

Subspace Subspace::from_spanning_vectors(Eigen::Index ambient_dim,
                                         const std::vector<Eigen::VectorXd>& vectors,
                                         double tol) {
    check_ambient(ambient_dim);
    Eigen::MatrixXd m(ambient_dim, static_cast<Eigen::Index>(vectors.size()));
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        if (vectors[i].size() != ambient_dim) {
            throw std::invalid_argument(
                "Subspace::from_spanning_vectors: vector " + std::to_string(i) + " has dimension " +
                std::to_string(vectors[i].size()) + ", expected " + std::to_string(ambient_dim));
        }
        m.col(static_cast<Eigen::Index>(i)) = vectors[i];
    }
    return span_of(m, tol);
}

Eigen::VectorXd Subspace::project(const Eigen::VectorXd& x) const {
    if (x.size() != ambient_dim()) {
        throw std::invalid_argument("Subspace::project: dimension mismatch");
    }
    return basis_ * (basis_.transpose() * x);
}

bool Subspace::contains(const Eigen::VectorXd& x) const {
    return distance_to(x, *this) <= tol_ * std::max(1.0, x.norm());
}

bool Subspace::contains(const Subspace& other) const {
    check_same_ambient(*this, other, "Subspace::contains");
    for (Eigen::Index j = 0; j < other.dim(); ++j) {
        if (distance_to(other.basis().col(j), *this) > std::max(tol_, other.tol_)) return false;
    }
    return true;
}

bool Subspace::approx_equal(const Subspace& other) const {
    check_same_ambient(*this, other, "Subspace::approx_equal");
    return gap_metric(*this, other) <= std::max(tol_, other.tol_);
}

Eigen::MatrixXd kernel_basis(const Eigen::MatrixXd& m, double tol) {
    const Eigen::Index n = m.cols();
    if (m.rows() == 0) return Eigen::MatrixXd::Identity(n, n);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullV);
    const auto& sigma = svd.singularValues();
    const double smax = sigma.size() > 0 ? sigma(0) : 0.0;
    Eigen::Index rank = 0;
    if (smax > 0.0) {
        for (Eigen::Index i = 0; i < sigma.size(); ++i) {
            if (sigma(i) > tol * smax) ++rank;
        }
    }
    return svd.matrixV().rightCols(n - rank);
}

Subspace sum(const Subspace& v, const Subspace& w) {
    check_same_ambient(v, w, "sum");
    Eigen::MatrixXd joint(v.ambient_dim(), v.dim() + w.dim());
    joint << v.basis(), w.basis();
    return Subspace::span_of(joint, std::max(v.tol(), w.tol()));
}

Subspace intersect(const Subspace& v, const Subspace& w) {
    check_same_ambient(v, w, "intersect");
    const Eigen::Index n = v.ambient_dim();
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd stacked(2 * n, n);
    stacked.topRows(n) = eye - v.projector();
    stacked.bottomRows(n) = eye - w.projector();
    const double tol = std::max(v.tol(), w.tol());
    return Subspace::span_of(kernel_basis(stacked, tol), tol);
}

Subspace preimage(const Eigen::MatrixXd& a, const Subspace& s) {
    const Eigen::Index n = s.ambient_dim();
    if (a.rows() != n || a.cols() != n) {
        throw std::invalid_argument("preimage: matrix must be " + std::to_string(n) + "x" +
                                    std::to_string(n));
    }
    const Eigen::MatrixXd complement = Eigen::MatrixXd::Identity(n, n) - s.projector();
    return Subspace::span_of(kernel_basis(complement * a, s.tol()), s.tol());
}

double gap_metric(const Subspace& v, const Subspace& w) {
    check_same_ambient(v, w, "gap_metric");
    if (v.dim() == 0 && w.dim() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(v.projector() - w.projector(),
                                                      Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

double distance_to(const Eigen::VectorXd& x, const Subspace& v) {
    if (x.size() != v.ambient_dim()) {
        throw std::invalid_argument("distance_to: dimension mismatch");
    }
    return (x - v.basis() * (v.basis().transpose() * x)).norm();
}

}  // namespace invariance
