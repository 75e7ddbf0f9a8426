#include "invariance/subspace.hpp"

#include <random>

#include "doctest.h"

using invariance::Subspace;

namespace {

Eigen::VectorXd vec2(double a, double b) {
    Eigen::VectorXd v(2);
    v << a, b;
    return v;
}

Subspace random_subspace(std::mt19937& rng, Eigen::Index n) {
    std::uniform_int_distribution<Eigen::Index> dim_dist(0, n);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const Eigen::Index d = dim_dist(rng);
    Eigen::MatrixXd m(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) m(i, j) = gauss(rng);
    }
    return Subspace::span_of(m);
}

}  // namespace

TEST_CASE("span of collinear vectors collapses to one dimension") {
    const Subspace s = Subspace::from_spanning_vectors(2, {vec2(1, 0), vec2(2, 0)}, 1e-9);
    CHECK(s.dim() == 1);
    CHECK(s.contains(vec2(5, 0)));
    CHECK_FALSE(s.contains(vec2(0, 1)));
}

TEST_CASE("empty spanning list gives the zero subspace") {
    const Subspace s = Subspace::from_spanning_vectors(3, {});
    CHECK(s.dim() == 0);
    CHECK(s.ambient_dim() == 3);
    CHECK(s.contains(Eigen::VectorXd::Zero(3)));
}

TEST_CASE("independent pair spans the plane") {
    const Subspace s = Subspace::from_spanning_vectors(2, {vec2(1, 1), vec2(1, -1)});
    CHECK(s.dim() == 2);
}

TEST_CASE("ambient dimension zero is rejected") {
    CHECK_THROWS_AS(Subspace::zero(0), std::invalid_argument);
    CHECK_THROWS_AS(Subspace::from_spanning_vectors(0, {}), std::invalid_argument);
}

TEST_CASE("mismatched vector dimensions are rejected") {
    Eigen::VectorXd v3(3);
    v3 << 1, 2, 3;
    CHECK_THROWS_AS(Subspace::from_spanning_vectors(2, {vec2(1, 0), v3}),
                    std::invalid_argument);
}

TEST_CASE("sum of independent lines is the plane, with identity and idempotence") {
    const Subspace e1 = Subspace::span_of(vec2(1, 0));
    const Subspace diag = Subspace::span_of(vec2(1, 1));
    CHECK(invariance::sum(e1, diag).dim() == 2);
    const Subspace zero = Subspace::zero(2);
    CHECK(invariance::sum(e1, zero).approx_equal(e1));
    CHECK(invariance::sum(e1, e1).approx_equal(e1));
}

TEST_CASE("intersection: containment, orthogonal lines, full space") {
    const Subspace plane = Subspace::full(2);
    const Subspace diag = Subspace::span_of(vec2(1, 1));
    CHECK(invariance::intersect(plane, diag).approx_equal(diag));

    const Subspace e1 = Subspace::span_of(vec2(1, 0));
    const Subspace e2 = Subspace::span_of(vec2(0, 1));
    CHECK(invariance::intersect(e1, e2).dim() == 0);
    CHECK(invariance::intersect(plane, plane).dim() == 2);
}

TEST_CASE("preimage examples") {
    Eigen::MatrixXd a(2, 2);
    a << 1, 0, 1, 1;
    const Subspace e1 = Subspace::span_of(vec2(1, 0));
    const Subspace pre = invariance::preimage(a, e1);
    CHECK(pre.dim() == 1);
    CHECK(pre.approx_equal(Subspace::span_of(vec2(1, -1))));

    Eigen::MatrixXd shift(2, 2);
    shift << 0, 1, 0, 0;
    CHECK(invariance::preimage(shift, e1).dim() == 2);

    CHECK(invariance::preimage(Eigen::MatrixXd::Identity(2, 2), Subspace::zero(2)).dim() == 0);
}

TEST_CASE("preimage maximality: vectors off the preimage leave the subspace") {
    Eigen::MatrixXd a(2, 2);
    a << 1, 0, 1, 1;
    const Subspace e1 = Subspace::span_of(vec2(1, 0));
    const Subspace pre = invariance::preimage(a, e1);
    // Basis vectors map inside; the orthogonal direction does not.
    for (Eigen::Index k = 0; k < pre.dim(); ++k) {
        const Eigen::VectorXd image = a * pre.basis().col(k);
        CHECK(invariance::distance_to(image, e1) <= 1e-9 * std::max(1.0, image.norm()));
    }
    const Eigen::VectorXd off = vec2(1, 1).normalized();
    const Eigen::VectorXd image = a * off;
    CHECK(invariance::distance_to(image, e1) > 1e-6);
}

TEST_CASE("gap metric values") {
    const Subspace e1 = Subspace::span_of(vec2(1, 0));
    const Subspace e2 = Subspace::span_of(vec2(0, 1));
    const Subspace diag = Subspace::span_of(vec2(1, 1));
    CHECK(invariance::gap_metric(e1, e1) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(invariance::gap_metric(e1, e2) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(invariance::gap_metric(e1, diag) - 0.7071067811865476) < 1e-12);
}

TEST_CASE("gap metric axioms on random subspaces") {
    std::mt19937 rng(20240817);
    for (int trial = 0; trial < 200; ++trial) {
        const Eigen::Index n = 2 + static_cast<Eigen::Index>(trial % 4);
        const Subspace u = random_subspace(rng, n);
        const Subspace v = random_subspace(rng, n);
        const Subspace w = random_subspace(rng, n);
        const double uv = invariance::gap_metric(u, v);
        const double vu = invariance::gap_metric(v, u);
        const double uw = invariance::gap_metric(u, w);
        const double wv = invariance::gap_metric(w, v);
        CHECK(uv >= -1e-12);
        CHECK(uv <= 1.0 + 1e-12);
        CHECK(std::abs(uv - vu) < 1e-8);
        CHECK(invariance::gap_metric(u, u) < 1e-8);
        CHECK(uv <= uw + wv + 1e-8);
        if (u.approx_equal(v)) CHECK(uv < 1e-8);
    }
}

TEST_CASE("distance examples and Pythagoras") {
    const Subspace e1 = Subspace::span_of(vec2(1, 0));
    CHECK(invariance::distance_to(vec2(3, 0), e1) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(invariance::distance_to(vec2(0, 2), e1) == doctest::Approx(2.0).epsilon(1e-12));
    const Subspace diag = Subspace::span_of(vec2(1, 1));
    CHECK(invariance::distance_to(vec2(1, 1), diag) < 1e-9);

    std::mt19937 rng(7);
    std::normal_distribution<double> gauss(0.0, 2.0);
    for (int trial = 0; trial < 100; ++trial) {
        const Subspace v = random_subspace(rng, 4);
        Eigen::VectorXd x(4);
        for (Eigen::Index i = 0; i < 4; ++i) x(i) = gauss(rng);
        const double d = invariance::distance_to(x, v);
        const double p = v.project(x).norm();
        CHECK(std::abs(d * d + p * p - x.squaredNorm()) < 1e-8);
    }
}

TEST_CASE("containment of lattice operations and modular dimension identity") {
    std::mt19937 rng(99);
    for (int trial = 0; trial < 100; ++trial) {
        const Eigen::Index n = 2 + static_cast<Eigen::Index>(trial % 3);
        const Subspace v = random_subspace(rng, n);
        const Subspace w = random_subspace(rng, n);
        const Subspace meet = invariance::intersect(v, w);
        const Subspace join = invariance::sum(v, w);
        CHECK(v.contains(meet));
        CHECK(w.contains(meet));
        CHECK(join.contains(v));
        CHECK(join.contains(w));
        CHECK(join.dim() + meet.dim() == v.dim() + w.dim());
    }
}

TEST_CASE("ambient mismatch raises") {
    const Subspace a = Subspace::full(2);
    const Subspace b = Subspace::full(3);
    CHECK_THROWS_AS(invariance::sum(a, b), std::invalid_argument);
    CHECK_THROWS_AS(invariance::intersect(a, b), std::invalid_argument);
    CHECK_THROWS_AS(invariance::gap_metric(a, b), std::invalid_argument);
    CHECK_THROWS_AS(invariance::distance_to(Eigen::VectorXd::Zero(3), a), std::invalid_argument);
    CHECK_THROWS_AS(invariance::preimage(Eigen::MatrixXd::Identity(3, 3), a),
                    std::invalid_argument);
}
