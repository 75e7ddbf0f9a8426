#include "invariance/controlled_invariance.hpp"

#include <Eigen/QR>

#include <cmath>
#include <stdexcept>
#include <string>

namespace invariance {

namespace {

void check_square(const Eigen::MatrixXd& a, Eigen::Index n, const char* op) {
    if (a.rows() != n || a.cols() != n) {
        throw std::invalid_argument(std::string(op) + ": matrix must be " + std::to_string(n) +
                                    "x" + std::to_string(n));
    }
}

}  // namespace

PatternGeometry pattern_geometry(const MultiChannelSystem& system, const ChannelPattern& pattern) {
    Eigen::MatrixXd stacked = input_matrix(system, pattern);
    Subspace image = stacked.cols() > 0 ? Subspace::span_of(stacked)
                                        : Subspace::zero(system.state_dim());
    return PatternGeometry{pattern, std::move(stacked), std::move(image)};
}

Eigen::MatrixXd Friend::closed_loop(const MultiChannelSystem& system,
                                    const ChannelPattern& pattern) const {
    Eigen::MatrixXd a = system.dynamics();
    for (const auto& [id, gain] : gains) {
        if (!pattern.is_alive(id)) continue;
        a += system.channel(id).input * gain;
    }
    return a;
}

bool is_controlled_invariant(const Eigen::MatrixXd& a, const Subspace& input_image,
                             const Subspace& v) {
    check_square(a, v.ambient_dim(), "is_controlled_invariant");
    if (input_image.ambient_dim() != v.ambient_dim()) {
        throw std::invalid_argument("is_controlled_invariant: ambient dimension mismatch");
    }
    const Subspace reach = sum(v, input_image);
    for (Eigen::Index k = 0; k < v.dim(); ++k) {
        const Eigen::VectorXd av = a * v.basis().col(k);
        if (distance_to(av, reach) > v.tol() * std::max(1.0, av.norm())) return false;
    }
    return true;
}

Subspace supremal_invariant(const Eigen::MatrixXd& a, const Subspace& input_image,
                            const Subspace& f) {
    check_square(a, f.ambient_dim(), "supremal_invariant");
    Subspace current = f;
    const Eigen::Index max_steps = f.dim() + 1;
    for (Eigen::Index step = 0; step < max_steps; ++step) {
        Subspace next = intersect(f, preimage(a, sum(current, input_image)));
        if (next.dim() == current.dim() && gap_metric(next, current) <= current.tol()) {
            return next;
        }
        current = std::move(next);
    }
    // The dimension drops by at least one per non-stationary step, so landing
    // here means the iteration oscillated numerically.
    Subspace final_check = intersect(f, preimage(a, sum(current, input_image)));
    if (final_check.dim() == current.dim() && gap_metric(final_check, current) <= current.tol()) {
        return final_check;
    }
    throw std::runtime_error(
        "supremal_invariant: fixed point not reached within dim(F)+1 steps; "
        "numerical tolerance fault");
}

Subspace smallest_invariant(const Eigen::MatrixXd& a, const Subspace& v) {
    check_square(a, v.ambient_dim(), "smallest_invariant");
    const Eigen::Index n = v.ambient_dim();
    if (v.dim() == 0) return Subspace::zero(n, v.tol());
    Eigen::MatrixXd krylov(n, v.dim() * n);
    Eigen::MatrixXd block = v.basis();
    krylov.leftCols(v.dim()) = block;
    for (Eigen::Index p = 1; p < n; ++p) {
        block = a * block;
        krylov.middleCols(p * v.dim(), v.dim()) = block;
    }
    return Subspace::span_of(krylov, v.tol());
}

Friend synthesize_friend(const MultiChannelSystem& system, const ChannelPattern& pattern,
                         const Subspace& v) {
    const PatternGeometry geom = pattern_geometry(system, pattern);
    if (!is_controlled_invariant(system.dynamics(), geom.image, v)) {
        throw std::invalid_argument("synthesize_friend: target is not controlled-invariant for "
                                    "pattern " + pattern.label());
    }
    const Eigen::Index n = system.state_dim();
    const Eigen::Index d = v.dim();
    const Eigen::Index m = geom.stacked_input.cols();

    // [basis | B_alive] (w; -u) = A v, least-norm solution per basis vector.
    Eigen::MatrixXd coeff(n, d + m);
    if (d > 0) coeff.leftCols(d) = v.basis();
    if (m > 0) coeff.rightCols(m) = geom.stacked_input;
    const Eigen::MatrixXd rhs = system.dynamics() * v.basis();
    Eigen::MatrixXd inputs_on_basis = Eigen::MatrixXd::Zero(m, d);
    if (d > 0 && coeff.cols() > 0) {
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(coeff);
        const Eigen::MatrixXd solution = cod.solve(rhs);
        if (m > 0) inputs_on_basis = -solution.bottomRows(m);
    }

    Friend result;
    result.target = v;
    // Zero extension off the target: K = U basis^T.
    const Eigen::MatrixXd stacked_gain = inputs_on_basis * v.basis().transpose();
    Eigen::Index row = 0;
    for (int id : pattern.alive()) {
        const Eigen::Index width = system.channel_width(id);
        result.gains[id] = stacked_gain.middleRows(row, width);
        row += width;
    }

    const Eigen::MatrixXd closed = result.closed_loop(system, pattern);
    double residual = 0.0;
    for (Eigen::Index k = 0; k < d; ++k) {
        const Eigen::VectorXd vk = v.basis().col(k);
        const double scale = std::max(1.0, (system.dynamics() * vk).norm());
        residual = std::max(residual, distance_to(closed * vk, v) / scale);
    }
    result.residual = residual;
    if (residual > kFriendResidualTol) {
        throw std::runtime_error("synthesize_friend: residual " + std::to_string(residual) +
                                 " exceeds tolerance for pattern " + pattern.label());
    }
    return result;
}

std::optional<Friend> synthesize_joint_friend(const MultiChannelSystem& system,
                                              const std::vector<ChannelPattern>& patterns,
                                              const Subspace& v) {
    if (patterns.empty()) return std::nullopt;
    const Eigen::Index n = system.state_dim();
    const Eigen::Index d = v.dim();
    const Eigen::Index m = system.total_input_width();

    Friend result;
    result.target = v;
    if (d == 0) {
        for (int id = 1; id <= system.channel_count(); ++id) {
            result.gains[id] = Eigen::MatrixXd::Zero(system.channel_width(id), n);
        }
        return result;
    }

    // Unknown X = stacked per-channel gains restricted to the target (m x d).
    // For every pattern p: C^T (A basis + B_p X_p) = 0, with C an orthonormal
    // basis of the orthogonal complement of the target, assembled as one
    // linear least-squares problem in vec(X).
    const Eigen::MatrixXd complement =
        kernel_basis(v.basis().transpose(), v.tol());  // n x (n - d)
    const Eigen::Index q = complement.cols();
    if (q == 0) {
        // Target is the whole space: zero gains work.
        for (int id = 1; id <= system.channel_count(); ++id) {
            result.gains[id] = Eigen::MatrixXd::Zero(system.channel_width(id), n);
        }
        result.residual = 0.0;
        return result;
    }

    const Eigen::Index rows_per_pattern = q * d;
    Eigen::MatrixXd lhs =
        Eigen::MatrixXd::Zero(rows_per_pattern * static_cast<Eigen::Index>(patterns.size()), m * d);
    Eigen::VectorXd rhs(rows_per_pattern * static_cast<Eigen::Index>(patterns.size()));
    const Eigen::MatrixXd defect = complement.transpose() * system.dynamics() * v.basis();

    for (std::size_t p = 0; p < patterns.size(); ++p) {
        const Eigen::Index base = static_cast<Eigen::Index>(p) * rows_per_pattern;
        for (Eigen::Index k = 0; k < d; ++k) {
            rhs.segment(base + k * q, q) = -defect.col(k);
            for (int id : patterns[p].alive()) {
                const Eigen::MatrixXd cb = complement.transpose() * system.channel(id).input;
                const Eigen::Index off = system.channel_offset(id);
                for (Eigen::Index r = 0; r < system.channel_width(id); ++r) {
                    lhs.col((off + r) * d + k).segment(base + k * q, q) = cb.col(r);
                }
            }
        }
    }

    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(lhs);
    const Eigen::VectorXd x = cod.solve(rhs);
    Eigen::MatrixXd inputs_on_basis(m, d);
    for (Eigen::Index r = 0; r < m; ++r) {
        for (Eigen::Index k = 0; k < d; ++k) inputs_on_basis(r, k) = x(r * d + k);
    }
    const Eigen::MatrixXd stacked_gain = inputs_on_basis * v.basis().transpose();
    for (int id = 1; id <= system.channel_count(); ++id) {
        result.gains[id] = stacked_gain.middleRows(system.channel_offset(id),
                                                   system.channel_width(id));
    }

    double residual = 0.0;
    for (const auto& pattern : patterns) {
        const Eigen::MatrixXd closed = result.closed_loop(system, pattern);
        for (Eigen::Index k = 0; k < d; ++k) {
            const Eigen::VectorXd vk = v.basis().col(k);
            const double scale = std::max(1.0, (system.dynamics() * vk).norm());
            residual = std::max(residual, distance_to(closed * vk, v) / scale);
        }
    }
    result.residual = residual;
    if (residual > kFriendResidualTol) return std::nullopt;
    return result;
}

Subspace robust_supremal(const MultiChannelSystem& system,
                         const std::vector<ChannelPattern>& patterns, const Subspace& f) {
    if (patterns.empty()) {
        throw std::invalid_argument("robust_supremal: pattern list must be nonempty");
    }
    std::vector<Subspace> images;
    images.reserve(patterns.size());
    for (const auto& p : patterns) images.push_back(pattern_geometry(system, p).image);

    Subspace current = f;
    const Eigen::Index max_steps = f.dim() + 1;
    for (Eigen::Index step = 0; step <= max_steps; ++step) {
        Subspace next = current;
        bool first = true;
        for (const auto& image : images) {
            Subspace per = intersect(f, preimage(system.dynamics(), sum(current, image)));
            next = first ? per : intersect(next, per);
            first = false;
        }
        if (next.dim() == current.dim() && gap_metric(next, current) <= current.tol()) {
            return next;
        }
        if (step == max_steps) break;
        current = std::move(next);
    }
    throw std::runtime_error(
        "robust_supremal: fixed point not reached within dim(F)+1 steps; numerical "
        "tolerance fault");
}

Subspace supremal_closed_loop_invariant(const std::vector<Eigen::MatrixXd>& maps,
                                        const Subspace& f) {
    if (maps.empty()) return f;
    Subspace current = f;
    const Eigen::Index max_steps = f.dim() + 1;
    for (Eigen::Index step = 0; step <= max_steps; ++step) {
        Subspace next = current;
        bool first = true;
        for (const auto& map : maps) {
            Subspace per = intersect(f, preimage(map, current));
            next = first ? per : intersect(next, per);
            first = false;
        }
        if (next.dim() == current.dim() && gap_metric(next, current) <= current.tol()) {
            return next;
        }
        if (step == max_steps) break;
        current = std::move(next);
    }
    throw std::runtime_error("supremal_closed_loop_invariant: fixed point not reached; "
                             "numerical tolerance fault");
}

}  // namespace invariance
