#include "invariance/controlled_invariance.hpp"

#include <random>

#include "doctest.h"

using invariance::Channel;
using invariance::ChannelPattern;
using invariance::MultiChannelSystem;
using invariance::Subspace;

namespace {

Eigen::MatrixXd mat2(double a, double b, double c, double d) {
    Eigen::MatrixXd m(2, 2);
    m << a, b, c, d;
    return m;
}

Eigen::MatrixXd col2(double a, double b) {
    Eigen::MatrixXd m(2, 1);
    m << a, b;
    return m;
}

// A = [[1,0],[1,1]], B1 = [0;1], B2 = [1;0].
MultiChannelSystem fixture() {
    return MultiChannelSystem(mat2(1, 0, 1, 1),
                              {Channel{col2(0, 1), std::nullopt},
                               Channel{col2(1, 0), std::nullopt}});
}

const Subspace kE1 = Subspace::span_of(col2(1, 0));

}  // namespace

TEST_CASE("controlled-invariance test on the fixture") {
    const Eigen::MatrixXd a = mat2(1, 0, 1, 1);
    const Subspace im_b1 = Subspace::span_of(col2(0, 1));
    const Subspace im_b2 = Subspace::span_of(col2(1, 0));
    CHECK(invariance::is_controlled_invariant(a, im_b1, kE1));
    CHECK_FALSE(invariance::is_controlled_invariant(a, im_b2, kE1));
    CHECK(invariance::is_controlled_invariant(a, im_b2, Subspace::zero(2)));
}

TEST_CASE("supremal invariant subspace fixed point") {
    const Eigen::MatrixXd a = mat2(1, 0, 1, 1);
    const Subspace im_b2 = Subspace::span_of(col2(1, 0));
    CHECK(invariance::supremal_invariant(a, im_b2, kE1).dim() == 0);

    // Everything is correctable with a full input image.
    const Subspace anything = Subspace::span_of(col2(2, 1));
    CHECK(invariance::supremal_invariant(a, Subspace::full(2), anything).approx_equal(anything));

    // An A-invariant subspace survives with no input at all.
    const Eigen::MatrixXd diag = mat2(1, 0, 0, 2);
    CHECK(invariance::supremal_invariant(diag, Subspace::zero(2), kE1).approx_equal(kE1));
}

TEST_CASE("supremal invariant is invariant, contained, and above known members") {
    std::mt19937 rng(42);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const Eigen::Index n = 3;
        Eigen::MatrixXd a(n, n), b(n, 1), f(n, 2);
        for (Eigen::Index i = 0; i < n; ++i) {
            b(i, 0) = gauss(rng);
            for (Eigen::Index j = 0; j < n; ++j) a(i, j) = gauss(rng);
            for (Eigen::Index j = 0; j < 2; ++j) f(i, j) = gauss(rng);
        }
        const Subspace image = Subspace::span_of(b);
        const Subspace bound = Subspace::span_of(f);
        const Subspace sup = invariance::supremal_invariant(a, image, bound);
        CHECK(bound.contains(sup));
        CHECK(invariance::is_controlled_invariant(a, image, sup));
    }
}

TEST_CASE("smallest invariant subspace examples") {
    const Eigen::MatrixXd shift = mat2(0, 1, 0, 0);
    const Subspace e2 = Subspace::span_of(col2(0, 1));
    CHECK(invariance::smallest_invariant(shift, e2).dim() == 2);
    CHECK(invariance::smallest_invariant(shift, kE1).approx_equal(kE1));
    CHECK(invariance::smallest_invariant(shift, Subspace::zero(2)).dim() == 0);
}

TEST_CASE("friend synthesis on the fixture") {
    const MultiChannelSystem sys = fixture();
    const ChannelPattern not2 = ChannelPattern::drop_channel(2, 2);
    const invariance::Friend fr = invariance::synthesize_friend(sys, not2, kE1);
    CHECK(fr.residual <= 1e-8);
    REQUIRE(fr.gains.count(1) == 1);
    // K must send e1 to -1 in the channel-1 input; the orthogonal extension is zero.
    CHECK(fr.gains.at(1)(0, 0) == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(fr.gains.at(1)(0, 1) == doctest::Approx(0.0).epsilon(1e-9));
    const Eigen::MatrixXd closed = fr.closed_loop(sys, not2);
    for (Eigen::Index k = 0; k < kE1.dim(); ++k) {
        CHECK(invariance::distance_to(closed * kE1.basis().col(k), kE1) <= 1e-8);
    }
}

TEST_CASE("friend synthesis with an already invariant target needs no correction") {
    const MultiChannelSystem sys(mat2(1, 0, 0, 2),
                                 {Channel{col2(0, 1), std::nullopt}});
    const invariance::Friend fr =
        invariance::synthesize_friend(sys, ChannelPattern::all_alive(1), kE1);
    CHECK(fr.residual <= 1e-12);
    CHECK(fr.gains.at(1).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("friend synthesis refuses a non-invariant target") {
    const MultiChannelSystem sys = fixture();
    const ChannelPattern not1 = ChannelPattern::drop_channel(2, 1);  // only B2 = [1;0] alive
    CHECK_THROWS_AS(invariance::synthesize_friend(sys, not1, kE1), std::invalid_argument);
}

TEST_CASE("randomized friend residuals on constructed invariant targets") {
    // Instances built backwards from a random friend: pick K, a subspace V,
    // and dynamics that keep V invariant under A + B K, then recover A.
    std::mt19937 rng(2718);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const Eigen::Index n = 3;
        Eigen::MatrixXd vdir(n, 1), b(n, 2), k(2, n), closed(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            vdir(i, 0) = gauss(rng);
            for (Eigen::Index j = 0; j < 2; ++j) b(i, j) = gauss(rng);
            for (Eigen::Index j = 0; j < n; ++j) closed(i, j) = gauss(rng);
        }
        for (Eigen::Index i = 0; i < 2; ++i) {
            for (Eigen::Index j = 0; j < n; ++j) k(i, j) = gauss(rng);
        }
        const Subspace v = Subspace::span_of(vdir);
        // Force closed-loop invariance of v, then undo the feedback.
        const Eigen::MatrixXd p = v.projector();
        const Eigen::MatrixXd invariant_closed = p * closed * p + closed * (Eigen::MatrixXd::Identity(n, n) - p);
        const Eigen::MatrixXd a = invariant_closed - b * k;
        const MultiChannelSystem sys(a, {Channel{b.col(0), std::nullopt},
                                         Channel{b.col(1), std::nullopt}});
        const ChannelPattern all = ChannelPattern::all_alive(2);
        const auto geom = invariance::pattern_geometry(sys, all);
        REQUIRE(invariance::is_controlled_invariant(a, geom.image, v));
        const invariance::Friend fr = invariance::synthesize_friend(sys, all, v);
        CHECK(fr.residual <= 1e-8);
    }
}

TEST_CASE("robust supremal subspace over pattern families") {
    const MultiChannelSystem sys = fixture();
    const ChannelPattern not1 = ChannelPattern::drop_channel(2, 1);
    const ChannelPattern not2 = ChannelPattern::drop_channel(2, 2);

    CHECK(invariance::robust_supremal(sys, {not1, not2}, kE1).dim() == 0);
    CHECK(invariance::robust_supremal(sys, {not2}, kE1).approx_equal(kE1));
    CHECK(invariance::robust_supremal(sys, {not1, not2}, Subspace::zero(2)).dim() == 0);
    CHECK_THROWS_AS(invariance::robust_supremal(sys, {}, kE1), std::invalid_argument);
}

TEST_CASE("robust supremal is contained in every per-pattern supremal") {
    std::mt19937 rng(11);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
        const Eigen::Index n = 3;
        Eigen::MatrixXd a(n, n), b1(n, 1), b2(n, 1), f(n, 2);
        for (Eigen::Index i = 0; i < n; ++i) {
            b1(i, 0) = gauss(rng);
            b2(i, 0) = gauss(rng);
            for (Eigen::Index j = 0; j < n; ++j) a(i, j) = gauss(rng);
            for (Eigen::Index j = 0; j < 2; ++j) f(i, j) = gauss(rng);
        }
        const MultiChannelSystem sys(a, {Channel{b1, std::nullopt}, Channel{b2, std::nullopt}});
        const std::vector<ChannelPattern> patterns = {ChannelPattern::drop_channel(2, 1),
                                                      ChannelPattern::drop_channel(2, 2)};
        const Subspace bound = Subspace::span_of(f);
        const Subspace robust = invariance::robust_supremal(sys, patterns, bound);
        for (const auto& pattern : patterns) {
            const auto geom = invariance::pattern_geometry(sys, pattern);
            const Subspace per = invariance::supremal_invariant(a, geom.image, bound);
            CHECK(per.contains(robust));
            CHECK(invariance::is_controlled_invariant(a, geom.image, robust));
        }
    }
}

TEST_CASE("joint friend certifies every pattern at once") {
    const MultiChannelSystem sys = fixture();
    const std::vector<ChannelPattern> patterns = {ChannelPattern::all_alive(2),
                                                  ChannelPattern::drop_channel(2, 2)};
    const auto joint = invariance::synthesize_joint_friend(sys, patterns, kE1);
    REQUIRE(joint.has_value());
    for (const auto& pattern : patterns) {
        const Eigen::MatrixXd closed = joint->closed_loop(sys, pattern);
        CHECK(invariance::distance_to(closed * kE1.basis().col(0), kE1) <= 1e-8);
    }
}

TEST_CASE("smallest invariant of the input image reproduces the closed-loop reachable space") {
    const MultiChannelSystem sys = fixture();
    const ChannelPattern not2 = ChannelPattern::drop_channel(2, 2);
    const invariance::Friend fr = invariance::synthesize_friend(sys, not2, kE1);
    const Eigen::MatrixXd closed = fr.closed_loop(sys, not2);
    const Subspace image = Subspace::span_of(col2(0, 1));  // B1
    const Subspace reach = invariance::smallest_invariant(closed, image);
    CHECK(invariance::is_controlled_invariant(closed, Subspace::zero(2), reach));
    CHECK(reach.contains(image));
}
