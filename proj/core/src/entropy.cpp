#include "invariance/entropy.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace invariance {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct FitResult {
    double slope = 0.0;
    double residual = 0.0;
};

FitResult fit_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    const double n = static_cast<double>(xs.size());
    const double xbar = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double ybar = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        num += (xs[i] - xbar) * (ys[i] - ybar);
        den += (xs[i] - xbar) * (xs[i] - xbar);
    }
    FitResult fit;
    fit.slope = den > 0.0 ? num / den : 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        fit.residual = std::max(fit.residual,
                                std::abs(ys[i] - (ybar + fit.slope * (xs[i] - xbar))));
    }
    return fit;
}

void validate_region(const SpanningConfig& config) {
    if (config.boxes.empty()) {
        throw std::invalid_argument("spanning region is degenerate: no boxes configured");
    }
    const Eigen::Index d = config.f_carrier.dim();
    for (const auto& box : config.boxes) {
        if (box.center.size() != d || box.half_widths.size() != d) {
            throw std::invalid_argument("box coordinates do not match the carrier dimension");
        }
        if ((box.half_widths.array() < 0.0).any()) {
            throw std::invalid_argument("box half-widths must be nonnegative");
        }
    }
    if (config.patterns.empty()) {
        throw std::invalid_argument("spanning config needs at least one channel pattern");
    }
    if (!(config.epsilon > 0.0) || !(config.horizon > 0.0)) {
        throw std::invalid_argument("spanning config needs positive horizon and epsilon");
    }
}

std::vector<Eigen::VectorXd> build_grid(const std::vector<Box>& boxes, Eigen::Index d,
                                        double density) {
    std::vector<Eigen::VectorXd> points;
    for (const auto& box : boxes) {
        std::vector<Eigen::Index> counts(static_cast<std::size_t>(std::max<Eigen::Index>(d, 0)));
        Eigen::Index total = 1;
        for (Eigen::Index i = 0; i < d; ++i) {
            const double hw = box.half_widths(i);
            Eigen::Index c = hw > 0.0 ? std::max<Eigen::Index>(2, llround(2.0 * hw * density) + 1)
                                      : 1;
            counts[static_cast<std::size_t>(i)] = c;
            total *= c;
            if (total > 2'000'000) {
                throw std::runtime_error(
                    "spanning grid would exceed 2e6 points; lower the density or relax epsilon");
            }
        }
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(std::max<Eigen::Index>(d, 0)), 0);
        for (Eigen::Index p = 0; p < total; ++p) {
            Eigen::VectorXd c(d);
            for (Eigen::Index i = 0; i < d; ++i) {
                const Eigen::Index cnt = counts[static_cast<std::size_t>(i)];
                const double hw = box.half_widths(i);
                c(i) = cnt == 1 ? box.center(i)
                                : box.center(i) - hw +
                                      2.0 * hw * static_cast<double>(idx[static_cast<std::size_t>(i)]) /
                                          static_cast<double>(cnt - 1);
            }
            points.push_back(std::move(c));
            for (Eigen::Index i = d - 1; i >= 0; --i) {
                auto& k = idx[static_cast<std::size_t>(i)];
                if (++k < counts[static_cast<std::size_t>(i)]) break;
                k = 0;
            }
        }
        if (d == 0) break;  // single origin point, regardless of box count
    }
    if (d == 1) {
        std::sort(points.begin(), points.end(),
                  [](const auto& a, const auto& b) { return a(0) < b(0); });
        points.erase(std::unique(points.begin(), points.end(),
                                 [](const auto& a, const auto& b) { return a(0) == b(0); }),
                     points.end());
    }
    return points;
}

// Deviation geometry shared by every candidate at one horizon: the sampled
// control-independent error map M_k = (I - P_target) e^{A t_k} C and its peak
// magnitude.  Samples sit at every control piece boundary.
struct ErrorMap {
    Eigen::Index pieces = 0;
    double dt = 0.0;
    std::vector<Eigen::MatrixXd> map;  // k = 0..pieces, n x d
    double growth = 0.0;
};

Eigen::MatrixXd project_out(const Subspace& target, const Eigen::MatrixXd& m) {
    if (target.dim() == 0) return m;
    return m - target.basis() * (target.basis().transpose() * m);
}

ErrorMap build_error_map(const Eigen::MatrixXd& a, const Subspace& target,
                         const Eigen::MatrixXd& carrier_basis, double horizon, double dt_hint) {
    ErrorMap em;
    // Piece count is kept divisible by six so that coarse brute-force
    // candidates land exactly on piece boundaries.
    const double raw = std::max(1.0, std::round(horizon / dt_hint));
    em.pieces = 6 * static_cast<Eigen::Index>(std::ceil(raw / 6.0));
    em.dt = horizon / static_cast<double>(em.pieces);
    const auto [phi, gamma] = exponential_propagators(a, em.dt);
    (void)gamma;
    Eigen::MatrixXd e = carrier_basis;
    em.map.reserve(static_cast<std::size_t>(em.pieces) + 1);
    em.map.push_back(project_out(target, e));
    for (Eigen::Index k = 0; k < em.pieces; ++k) {
        e = phi * e;
        em.map.push_back(project_out(target, e));
    }
    for (const auto& m : em.map) em.growth = std::max(em.growth, m.norm());
    return em;
}

// One tracking family: open-loop controls u(t) = K xhat(t) along the
// closed-loop prediction of one pattern, evaluated under every configured
// pattern.  For a one-dimensional carrier everything is linear in the seed
// coordinate, so unit curves describe the whole family.
struct TrackingFamily {
    Eigen::MatrixXd unit_controls;  // total width x pieces, per unit seed
    // [eval pattern][sample] deviation (I - P) * forced response, unit seed
    std::vector<std::vector<Eigen::VectorXd>> unit_dev;
};

Eigen::MatrixXd stacked_gain(const MultiChannelSystem& system, const Friend& fr) {
    Eigen::MatrixXd k = Eigen::MatrixXd::Zero(system.total_input_width(), system.state_dim());
    for (const auto& [id, gain] : fr.gains) {
        k.middleRows(system.channel_offset(id), system.channel_width(id)) = gain;
    }
    return k;
}

std::vector<Eigen::VectorXd> forced_deviation(const MultiChannelSystem& system,
                                              const ChannelPattern& pattern,
                                              const Subspace& target, const Eigen::MatrixXd& phi,
                                              const Eigen::MatrixXd& gamma,
                                              const Eigen::MatrixXd& controls) {
    const Eigen::Index n = system.state_dim();
    std::vector<Eigen::VectorXd> dev;
    dev.reserve(static_cast<std::size_t>(controls.cols()) + 1);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    dev.push_back(project_out(target, x));
    for (Eigen::Index piece = 0; piece < controls.cols(); ++piece) {
        Eigen::VectorXd drive = Eigen::VectorXd::Zero(n);
        for (int id : pattern.alive()) {
            drive += system.channel(id).input *
                     controls.col(piece).segment(system.channel_offset(id),
                                                 system.channel_width(id));
        }
        x = phi * x + gamma * drive;
        dev.push_back(project_out(target, x));
    }
    return dev;
}

// Build the control of one tracking candidate.  The prediction runs the
// homogeneous closed loop and samples the feedback at piece midpoints; with
// finite channel bounds the sampled values are clamped and the prediction is
// chained through the clamped open loop instead.
Eigen::MatrixXd tracking_controls(const MultiChannelSystem& system, const Friend& fr,
                                  const ChannelPattern& prediction_pattern,
                                  const Eigen::VectorXd& seed_state, Eigen::Index pieces,
                                  double dt, bool clamp) {
    const Eigen::MatrixXd gain = stacked_gain(system, fr);
    const Eigen::MatrixXd closed = fr.closed_loop(system, prediction_pattern);
    const auto [phi_half, gamma_half] = exponential_propagators(closed, dt / 2.0);
    (void)gamma_half;
    Eigen::MatrixXd values(system.total_input_width(), pieces);

    if (!clamp) {
        Eigen::VectorXd x = seed_state;
        for (Eigen::Index piece = 0; piece < pieces; ++piece) {
            const Eigen::VectorXd mid = phi_half * x;
            values.col(piece) = gain * mid;
            x = phi_half * mid;
        }
        return values;
    }

    const auto [phi_a, gamma_a] = exponential_propagators(system.dynamics(), dt);
    const auto [phi_a_half, gamma_a_half] = exponential_propagators(system.dynamics(), dt / 2.0);
    (void)gamma_a_half;
    Eigen::VectorXd x = seed_state;
    for (Eigen::Index piece = 0; piece < pieces; ++piece) {
        Eigen::VectorXd u = gain * (phi_a_half * x);
        for (int id = 1; id <= system.channel_count(); ++id) {
            const auto& bound = system.channel(id).bound;
            if (!bound) continue;
            auto block = u.segment(system.channel_offset(id), system.channel_width(id));
            block = block.cwiseMax(-*bound).cwiseMin(*bound);
        }
        values.col(piece) = u;
        Eigen::VectorXd drive = Eigen::VectorXd::Zero(system.state_dim());
        for (int id : prediction_pattern.alive()) {
            drive += system.channel(id).input *
                     u.segment(system.channel_offset(id), system.channel_width(id));
        }
        x = phi_a * x + gamma_a * drive;
    }
    return values;
}

struct Candidate {
    // Implicit tracking candidate: deviation = seed * unit curves of family.
    int family = -1;
    double seed = 0.0;
    // Explicit candidate (brute force, clamped tracking, or multi-dim seed).
    std::optional<ControlSignal> control;
    std::vector<std::vector<Eigen::VectorXd>> dev;  // [pattern][sample]
};

struct Interval {
    double lo = kInf;
    double hi = -kInf;
    bool empty() const { return !(lo <= hi); }
};

// Covered-coordinate interval {c : max_{p,k} |q_pk + M_k c| <= eps} for a
// one-dimensional carrier; each sample contributes one quadratic constraint.
Interval quadratic_interval(const std::vector<std::vector<Eigen::VectorXd>>& dev,
                            const std::vector<double>& a_sq,
                            const std::vector<Eigen::MatrixXd>& error_map, double eps) {
    Interval iv{-kInf, kInf};
    const double eps2 = eps * eps;
    for (std::size_t p = 0; p < dev.size(); ++p) {
        for (std::size_t k = 0; k < dev[p].size(); ++k) {
            const double a = a_sq[k];
            const double b = 2.0 * dev[p][k].dot(error_map[k].col(0));
            const double c = dev[p][k].squaredNorm() - eps2;
            if (a < 1e-300) {
                if (c > 0.0) return Interval{};
                continue;
            }
            const double disc = b * b - 4.0 * a * c;
            if (disc < 0.0) return Interval{};
            const double s = std::sqrt(disc);
            iv.lo = std::max(iv.lo, (-b - s) / (2.0 * a));
            iv.hi = std::min(iv.hi, (-b + s) / (2.0 * a));
            if (iv.empty()) return Interval{};
        }
    }
    return iv;
}

Interval scaled_interval(const TrackingFamily& family, double seed,
                         const std::vector<double>& a_sq,
                         const std::vector<std::vector<double>>& b_unit,
                         const std::vector<std::vector<double>>& c_unit, double eps) {
    Interval iv{-kInf, kInf};
    const double eps2 = eps * eps;
    for (std::size_t p = 0; p < family.unit_dev.size(); ++p) {
        for (std::size_t k = 0; k < family.unit_dev[p].size(); ++k) {
            const double a = a_sq[k];
            const double b = seed * b_unit[p][k];
            const double c = seed * seed * c_unit[p][k] - eps2;
            if (a < 1e-300) {
                if (c > 0.0) return Interval{};
                continue;
            }
            const double disc = b * b - 4.0 * a * c;
            if (disc < 0.0) return Interval{};
            const double s = std::sqrt(disc);
            iv.lo = std::max(iv.lo, (-b - s) / (2.0 * a));
            iv.hi = std::min(iv.hi, (-b + s) / (2.0 * a));
            if (iv.empty()) return Interval{};
        }
    }
    return iv;
}

double direct_coverage(const std::vector<std::vector<Eigen::VectorXd>>& dev,
                       const std::vector<Eigen::MatrixXd>& error_map, const Eigen::VectorXd& c) {
    double worst = 0.0;
    for (const auto& per_pattern : dev) {
        for (std::size_t k = 0; k < per_pattern.size(); ++k) {
            worst = std::max(worst, (per_pattern[k] + error_map[k] * c).norm());
        }
    }
    return worst;
}

struct CoverOutcome {
    std::vector<std::size_t> picks;          // candidate indices, in pick order
    std::vector<std::int64_t> assignment;    // grid index -> position in picks
    std::optional<std::size_t> witness;      // uncoverable grid index
};

// Exact optimal cover of sorted grid points by candidate index intervals.
CoverOutcome sweep_cover(const std::vector<std::pair<Eigen::Index, Eigen::Index>>& ranges,
                         std::size_t grid_size) {
    CoverOutcome out;
    out.assignment.assign(grid_size, -1);
    std::vector<std::size_t> order(ranges.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        if (ranges[x].first != ranges[y].first) return ranges[x].first < ranges[y].first;
        return x < y;
    });
    std::size_t ptr = 0;
    Eigen::Index best_reach = -1;
    std::size_t best_idx = 0;
    Eigen::Index j = 0;
    while (j < static_cast<Eigen::Index>(grid_size)) {
        while (ptr < order.size() && ranges[order[ptr]].first <= j) {
            if (ranges[order[ptr]].second > best_reach) {
                best_reach = ranges[order[ptr]].second;
                best_idx = order[ptr];
            }
            ++ptr;
        }
        if (best_reach < j) {
            out.witness = static_cast<std::size_t>(j);
            return out;
        }
        const std::int64_t pick_pos = static_cast<std::int64_t>(out.picks.size());
        out.picks.push_back(best_idx);
        for (Eigen::Index g = j; g <= best_reach; ++g) {
            out.assignment[static_cast<std::size_t>(g)] = pick_pos;
        }
        j = best_reach + 1;
    }
    return out;
}

CoverOutcome greedy_cover(const std::vector<std::vector<bool>>& bitmaps, std::size_t grid_size) {
    CoverOutcome out;
    out.assignment.assign(grid_size, -1);
    std::vector<bool> uncovered(grid_size, true);
    std::size_t remaining = grid_size;
    while (remaining > 0) {
        std::size_t best = bitmaps.size();
        std::size_t best_gain = 0;
        for (std::size_t i = 0; i < bitmaps.size(); ++i) {
            std::size_t gain = 0;
            for (std::size_t g = 0; g < grid_size; ++g) {
                if (uncovered[g] && bitmaps[i][g]) ++gain;
            }
            if (gain > best_gain) {
                best_gain = gain;
                best = i;
            }
        }
        if (best == bitmaps.size()) {
            for (std::size_t g = 0; g < grid_size; ++g) {
                if (uncovered[g]) {
                    out.witness = g;
                    return out;
                }
            }
        }
        const std::int64_t pick_pos = static_cast<std::int64_t>(out.picks.size());
        out.picks.push_back(best);
        for (std::size_t g = 0; g < grid_size; ++g) {
            if (uncovered[g] && bitmaps[best][g]) {
                uncovered[g] = false;
                out.assignment[g] = pick_pos;
                --remaining;
            }
        }
    }
    return out;
}

CoverOutcome exhaustive_cover(const std::vector<std::vector<bool>>& bitmaps,
                              std::size_t grid_size) {
    const std::size_t c = bitmaps.size();
    std::vector<std::uint32_t> masks(c, 0);
    std::uint32_t full = (grid_size >= 32) ? 0xffffffffu
                                           : ((1u << grid_size) - 1u);
    for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t g = 0; g < grid_size; ++g) {
            if (bitmaps[i][g]) masks[i] |= (1u << g);
        }
    }
    std::uint32_t best_mask_count = 0;
    std::optional<std::uint32_t> best_subset;
    for (std::uint32_t subset = 1; subset < (1u << c); ++subset) {
        std::uint32_t covered = 0;
        for (std::size_t i = 0; i < c; ++i) {
            if (subset & (1u << i)) covered |= masks[i];
        }
        if ((covered & full) == full) {
            const std::uint32_t sz = static_cast<std::uint32_t>(__builtin_popcount(subset));
            if (!best_subset || sz < best_mask_count) {
                best_subset = subset;
                best_mask_count = sz;
            }
        }
    }
    CoverOutcome out;
    out.assignment.assign(grid_size, -1);
    if (!best_subset) {
        std::uint32_t covered = 0;
        for (const auto m : masks) covered |= m;
        for (std::size_t g = 0; g < grid_size; ++g) {
            if (!(covered & (1u << g))) {
                out.witness = g;
                return out;
            }
        }
        out.witness = 0;
        return out;
    }
    for (std::size_t i = 0; i < c; ++i) {
        if (*best_subset & (1u << i)) {
            const std::int64_t pick_pos = static_cast<std::int64_t>(out.picks.size());
            out.picks.push_back(i);
            for (std::size_t g = 0; g < grid_size; ++g) {
                if (bitmaps[i][g] && out.assignment[g] < 0) out.assignment[g] = pick_pos;
            }
        }
    }
    return out;
}

struct EngineSetup {
    std::vector<ChannelPattern> patterns;
    Subspace distance_target;           // excursion is measured against this
    Eigen::MatrixXd carrier_basis;      // seeds live in these coordinates
    std::vector<Friend> friends;        // tracking gain tuples (may be empty)
    bool allow_brute = true;
};

// Peak control magnitude of a unit-seed tracking family over the grid; used
// for the no-clipping test and as a brute-force quantization scale.
bool family_within_bounds(const MultiChannelSystem& system, const Eigen::MatrixXd& unit_controls,
                          double cmax) {
    for (int id = 1; id <= system.channel_count(); ++id) {
        const auto& bound = system.channel(id).bound;
        if (!bound) continue;
        const auto block =
            unit_controls.middleRows(system.channel_offset(id), system.channel_width(id));
        if (block.cwiseAbs().maxCoeff() * cmax > *bound) return false;
    }
    return true;
}

std::vector<ControlSignal> build_brute_pool(const MultiChannelSystem& system,
                                            const std::vector<ChannelPattern>& patterns,
                                            std::int64_t budget, Eigen::Index pieces, double dt,
                                            double scale_hint) {
    std::vector<ControlSignal> pool;
    const Eigen::Index width = system.total_input_width();
    pool.push_back(ControlSignal{dt, Eigen::MatrixXd::Zero(width, pieces)});
    if (budget <= 1) return pool;

    std::vector<Eigen::Index> active_rows;
    for (int id = 1; id <= system.channel_count(); ++id) {
        bool used = false;
        for (const auto& p : patterns) used = used || p.is_alive(id);
        if (!used) continue;
        for (Eigen::Index r = 0; r < system.channel_width(id); ++r) {
            active_rows.push_back(system.channel_offset(id) + r);
        }
    }
    if (active_rows.empty()) return pool;

    std::vector<double> scales(active_rows.size(), 0.0);
    for (std::size_t i = 0; i < active_rows.size(); ++i) {
        double s = std::clamp(scale_hint, 1.0, 1e6);
        for (int id = 1; id <= system.channel_count(); ++id) {
            const Eigen::Index off = system.channel_offset(id);
            if (active_rows[i] >= off && active_rows[i] < off + system.channel_width(id)) {
                if (system.channel(id).bound) s = std::min(s, *system.channel(id).bound);
            }
        }
        scales[i] = s;
    }

    // Coarse pieces x symmetric levels; the largest grid that fits the budget.
    const auto count_for = [&](int coarse, int levels) -> double {
        return std::pow(static_cast<double>(levels),
                        static_cast<double>(coarse) * static_cast<double>(active_rows.size()));
    };
    int coarse = 0, levels = 0;
    for (int try_coarse : {3, 2, 1}) {
        for (int try_levels = 9; try_levels >= 3; try_levels -= 2) {
            if (count_for(try_coarse, try_levels) <= static_cast<double>(budget)) {
                if (try_coarse * static_cast<int>(active_rows.size()) * try_levels >
                    coarse * static_cast<int>(active_rows.size()) * levels) {
                    coarse = try_coarse;
                    levels = try_levels;
                }
                break;
            }
        }
    }
    if (coarse == 0) return pool;

    const Eigen::Index slots = static_cast<Eigen::Index>(coarse) *
                               static_cast<Eigen::Index>(active_rows.size());
    const Eigen::Index rep = pieces / coarse;  // pieces is a multiple of 6
    std::vector<int> digits(static_cast<std::size_t>(slots), 0);
    const std::int64_t total = static_cast<std::int64_t>(count_for(coarse, levels));
    for (std::int64_t idx = 1; idx < total && static_cast<std::int64_t>(pool.size()) < budget;
         ++idx) {
        // Increment the mixed-radix counter.
        for (std::size_t s = 0; s < digits.size(); ++s) {
            if (++digits[s] < levels) break;
            digits[s] = 0;
        }
        Eigen::MatrixXd values = Eigen::MatrixXd::Zero(width, pieces);
        bool all_zero = true;
        for (int cp = 0; cp < coarse; ++cp) {
            for (std::size_t r = 0; r < active_rows.size(); ++r) {
                const int digit = digits[static_cast<std::size_t>(cp) * active_rows.size() + r];
                const double level =
                    scales[r] * (-1.0 + 2.0 * static_cast<double>(digit) /
                                            static_cast<double>(levels - 1));
                if (level != 0.0) all_zero = false;
                values.row(active_rows[r])
                    .segment(static_cast<Eigen::Index>(cp) * rep, rep)
                    .setConstant(level);
            }
        }
        if (all_zero) continue;
        pool.push_back(ControlSignal{dt, std::move(values)});
    }
    return pool;
}

struct CoverEngineResult {
    std::vector<SpanningConstruction> per_epsilon;  // matches the epsilon order given
};

// Runs the spanning-set construction for one horizon and a family of epsilon
// values that share the control discretization and the seed grid (built at
// the smallest epsilon, so covers transfer upward).
CoverEngineResult run_cover_family(const MultiChannelSystem& system, const SpanningConfig& base,
                                   const EngineSetup& setup, double horizon,
                                   const std::vector<double>& epsilons_ascending) {
    const Eigen::Index n = system.state_dim();
    const Eigen::Index d = base.f_carrier.dim();
    const double eps_min = epsilons_ascending.front();
    const Subspace& target = setup.distance_target;

    // Calibrate the control piece width so that tracking candidates hold
    // their own seed well inside the tightest epsilon.
    double cmax = 0.0;
    for (const auto& box : base.boxes) {
        for (Eigen::Index i = 0; i < d; ++i) {
            cmax = std::max(cmax, std::abs(box.center(i)) + box.half_widths(i));
        }
    }
    double dt = base.piece_width_hint;
    ErrorMap em = build_error_map(system.dynamics(), target, setup.carrier_basis, horizon, dt);
    std::vector<TrackingFamily> families;
    const bool have_friends = !setup.friends.empty() && d == 1;
    if (have_friends) {
        for (int attempt = 0; attempt < 14; ++attempt) {
            em = build_error_map(system.dynamics(), target, setup.carrier_basis, horizon, dt);
            const auto [phi, gamma] = exponential_propagators(system.dynamics(), em.dt);
            double own = 0.0;
            for (const auto& fr : setup.friends) {
                for (const auto& pred : setup.patterns) {
                    const Eigen::MatrixXd u = tracking_controls(
                        system, fr, pred, setup.carrier_basis.col(0), em.pieces, em.dt, false);
                    for (const auto& eval : setup.patterns) {
                        const auto dev = forced_deviation(system, eval, target, phi, gamma, u);
                        for (std::size_t k = 0; k < dev.size(); ++k) {
                            own = std::max(own,
                                           (dev[k] + em.map[k].col(0)).norm() * std::max(cmax, 1e-12));
                        }
                    }
                }
            }
            if (own <= eps_min / 8.0 || em.pieces >= 200'000) break;
            dt /= 2.0;
        }
    }
    em = build_error_map(system.dynamics(), target, setup.carrier_basis, horizon, dt);
    const auto [phi, gamma] = exponential_propagators(system.dynamics(), em.dt);

    // Seed grid shared across the epsilon family, built for the tightest one.
    double density = base.grid_density;
    if (density <= 0.0) {
        density = std::clamp(1.2 * em.growth / eps_min, 4.0, 5e5);
    }
    const std::vector<Eigen::VectorXd> grid = build_grid(base.boxes, d, density);
    const std::size_t m = grid.size();

    // Candidate pool.  Tracking candidates are implicit (unit curves scaled
    // by the seed coordinate) whenever nothing clips; otherwise explicit.
    std::vector<Candidate> candidates;
    double control_peak = 0.0;
    bool clipped = false;
    if (have_friends) {
        for (const auto& fr : setup.friends) {
            for (const auto& pred : setup.patterns) {
                TrackingFamily family;
                family.unit_controls = tracking_controls(system, fr, pred,
                                                         setup.carrier_basis.col(0), em.pieces,
                                                         em.dt, false);
                control_peak = std::max(
                    control_peak, family.unit_controls.size() > 0
                                      ? family.unit_controls.cwiseAbs().maxCoeff() * cmax
                                      : 0.0);
                if (!family_within_bounds(system, family.unit_controls, cmax)) clipped = true;
                for (const auto& eval : setup.patterns) {
                    family.unit_dev.push_back(
                        forced_deviation(system, eval, target, phi, gamma, family.unit_controls));
                }
                families.push_back(std::move(family));
            }
        }
        if (!clipped) {
            for (std::size_t f = 0; f < families.size(); ++f) {
                for (const auto& point : grid) {
                    Candidate cand;
                    cand.family = static_cast<int>(f);
                    cand.seed = point(0);
                    candidates.push_back(std::move(cand));
                }
            }
        } else {
            // Bounded channels clip far seeds; build each candidate honestly.
            if (m * setup.friends.size() * setup.patterns.size() > 20'000) {
                throw std::runtime_error(
                    "clamped tracking pool too large; lower the grid density");
            }
            for (const auto& fr : setup.friends) {
                for (const auto& pred : setup.patterns) {
                    for (const auto& point : grid) {
                        Candidate cand;
                        ControlSignal u{em.dt,
                                        tracking_controls(system, fr, pred,
                                                          setup.carrier_basis * point, em.pieces,
                                                          em.dt, true)};
                        for (const auto& eval : setup.patterns) {
                            cand.dev.push_back(
                                forced_deviation(system, eval, target, phi, gamma, u.values));
                        }
                        cand.control = std::move(u);
                        candidates.push_back(std::move(cand));
                    }
                }
            }
        }
    }
    if (!have_friends && !setup.friends.empty()) {
        // Multi-dimensional carrier: explicit tracking candidate per seed.
        if (m * setup.friends.size() * setup.patterns.size() > 20'000) {
            throw std::runtime_error("tracking pool too large for a multi-dimensional carrier");
        }
        for (const auto& fr : setup.friends) {
            for (const auto& pred : setup.patterns) {
                for (const auto& point : grid) {
                    Candidate cand;
                    ControlSignal u{em.dt,
                                    tracking_controls(system, fr, pred,
                                                      setup.carrier_basis * point, em.pieces,
                                                      em.dt, true)};
                    for (const auto& eval : setup.patterns) {
                        cand.dev.push_back(
                            forced_deviation(system, eval, target, phi, gamma, u.values));
                    }
                    cand.control = std::move(u);
                    candidates.push_back(std::move(cand));
                }
            }
        }
    }
    if (setup.allow_brute) {
        const double scale_hint = control_peak > 0.0 ? control_peak : 1.0;
        for (auto& u : build_brute_pool(system, setup.patterns, base.control_budget, em.pieces,
                                        em.dt, scale_hint)) {
            Candidate cand;
            for (const auto& eval : setup.patterns) {
                cand.dev.push_back(forced_deviation(system, eval, target, phi, gamma, u.values));
            }
            cand.control = std::move(u);
            candidates.push_back(std::move(cand));
        }
    }

    // Precompute per-sample quadratic pieces.
    std::vector<double> a_sq(em.map.size());
    for (std::size_t k = 0; k < em.map.size(); ++k) a_sq[k] = em.map[k].squaredNorm();
    std::vector<std::vector<std::vector<double>>> b_unit(families.size());
    std::vector<std::vector<std::vector<double>>> c_unit(families.size());
    if (d == 1) {
        for (std::size_t f = 0; f < families.size(); ++f) {
            b_unit[f].resize(families[f].unit_dev.size());
            c_unit[f].resize(families[f].unit_dev.size());
            for (std::size_t p = 0; p < families[f].unit_dev.size(); ++p) {
                b_unit[f][p].resize(families[f].unit_dev[p].size());
                c_unit[f][p].resize(families[f].unit_dev[p].size());
                for (std::size_t k = 0; k < families[f].unit_dev[p].size(); ++k) {
                    b_unit[f][p][k] = 2.0 * families[f].unit_dev[p][k].dot(em.map[k].col(0));
                    c_unit[f][p][k] = families[f].unit_dev[p][k].squaredNorm();
                }
            }
        }
    }

    CoverEngineResult result;
    for (const double eps : epsilons_ascending) {
        // Slack absorbs the float gap between the linearity decomposition and
        // direct simulation, so constructed covers verify at full epsilon.
        const double margin = std::max(eps * 1e-9, 1e-13 * (1.0 + em.growth * cmax));
        const double eps_eff = eps - margin;

        SpanningConstruction construction;
        construction.grid_points = m;
        construction.piece_width = em.dt;

        CoverOutcome outcome;
        if (d == 1) {
            std::vector<std::pair<Eigen::Index, Eigen::Index>> ranges(candidates.size());
            for (std::size_t i = 0; i < candidates.size(); ++i) {
                const auto& cand = candidates[i];
                const Interval iv =
                    cand.family >= 0
                        ? scaled_interval(families[static_cast<std::size_t>(cand.family)],
                                          cand.seed, a_sq,
                                          b_unit[static_cast<std::size_t>(cand.family)],
                                          c_unit[static_cast<std::size_t>(cand.family)], eps_eff)
                        : quadratic_interval(cand.dev, a_sq, em.map, eps_eff);
                if (iv.empty()) {
                    ranges[i] = {0, -1};
                    continue;
                }
                const auto lo_it = std::lower_bound(
                    grid.begin(), grid.end(), iv.lo,
                    [](const Eigen::VectorXd& p, double value) { return p(0) < value; });
                const auto hi_it = std::upper_bound(
                    grid.begin(), grid.end(), iv.hi,
                    [](double value, const Eigen::VectorXd& p) { return value < p(0); });
                ranges[i] = {lo_it - grid.begin(), (hi_it - grid.begin()) - 1};
            }
            outcome = sweep_cover(ranges, m);
        } else {
            if (candidates.size() * m > 50'000'000) {
                throw std::runtime_error(
                    "coverage table too large for a multi-dimensional carrier; lower the density");
            }
            std::vector<std::vector<bool>> bitmaps(candidates.size(),
                                                   std::vector<bool>(m, false));
            for (std::size_t i = 0; i < candidates.size(); ++i) {
                for (std::size_t g = 0; g < m; ++g) {
                    bitmaps[i][g] = direct_coverage(candidates[i].dev, em.map, grid[g]) <= eps_eff;
                }
            }
            outcome = (m <= 12 && candidates.size() <= 20) ? exhaustive_cover(bitmaps, m)
                                                           : greedy_cover(bitmaps, m);
        }

        if (outcome.witness) {
            construction.cardinality = std::nullopt;
            const auto& w = grid[*outcome.witness];
            std::string coord = "(";
            for (Eigen::Index i = 0; i < w.size(); ++i) {
                coord += (i ? "," : "") + std::to_string(w(i));
            }
            coord += ")";
            construction.diagnostic =
                candidates.empty()
                    ? "budget exhausted before any cover progress"
                    : "grid point " + coord + " not coverable by any of " +
                          std::to_string(candidates.size()) + " candidates at epsilon " +
                          std::to_string(eps);
            result.per_epsilon.push_back(std::move(construction));
            continue;
        }

        construction.cardinality = outcome.picks.size();
        construction.assignment = std::move(outcome.assignment);

        // Verify the cover: every grid point against its assigned candidate,
        // plus fresh end-to-end simulations on a spread of points.
        for (std::size_t g = 0; g < m; ++g) {
            const auto pick = outcome.picks[static_cast<std::size_t>(construction.assignment[g])];
            const auto& cand = candidates[pick];
            double worst;
            if (cand.family >= 0) {
                const auto& fam = families[static_cast<std::size_t>(cand.family)];
                worst = 0.0;
                for (std::size_t p = 0; p < fam.unit_dev.size(); ++p) {
                    for (std::size_t k = 0; k < fam.unit_dev[p].size(); ++k) {
                        worst = std::max(worst, (cand.seed * fam.unit_dev[p][k] +
                                                 grid[g](0) * em.map[k].col(0))
                                                    .norm());
                    }
                }
            } else {
                worst = direct_coverage(cand.dev, em.map, grid[g]);
            }
            if (worst > eps) {
                throw std::runtime_error("internal: constructed cover failed verification");
            }
        }
        const std::size_t spot = std::max<std::size_t>(1, m / 48);
        for (std::size_t g = 0; g < m; g += spot) {
            const auto pick = outcome.picks[static_cast<std::size_t>(construction.assignment[g])];
            const auto& cand = candidates[pick];
            ControlSignal u = cand.control
                                  ? *cand.control
                                  : ControlSignal{em.dt,
                                                  cand.seed *
                                                      families[static_cast<std::size_t>(
                                                                   cand.family)]
                                                          .unit_controls};
            const Eigen::VectorXd x0 = setup.carrier_basis * grid[g];
            for (const auto& eval : setup.patterns) {
                const Trajectory traj = simulate(system, eval, x0, u);
                if (excursion(traj, target) > eps) {
                    throw std::runtime_error(
                        "internal: constructed cover failed the simulation spot check");
                }
            }
        }

        if (outcome.picks.size() <= 4000) {
            construction.controls_materialized = true;
            construction.controls.reserve(outcome.picks.size());
            for (const auto pick : outcome.picks) {
                const auto& cand = candidates[pick];
                if (cand.control) {
                    construction.controls.push_back(*cand.control);
                } else {
                    construction.controls.push_back(ControlSignal{
                        em.dt,
                        cand.seed *
                            families[static_cast<std::size_t>(cand.family)].unit_controls});
                }
            }
        } else {
            construction.diagnostic = "cover of " + std::to_string(outcome.picks.size()) +
                                      " controls left implicit";
        }
        result.per_epsilon.push_back(std::move(construction));
    }
    return result;
}

EngineSetup unrestricted_setup(const MultiChannelSystem& system, const Subspace& v,
                               const SpanningConfig& config) {
    EngineSetup setup;
    setup.patterns = config.patterns;
    setup.distance_target = v;
    setup.carrier_basis = config.f_carrier.basis();
    setup.allow_brute = true;
    if (config.patterns.size() == 1) {
        try {
            setup.friends.push_back(synthesize_friend(system, config.patterns.front(), v));
        } catch (const std::exception&) {
            // No friend: brute-force candidates only.
        }
    } else {
        auto joint = synthesize_joint_friend(system, config.patterns, v);
        if (joint) setup.friends.push_back(std::move(*joint));
    }
    return setup;
}

EntropyEstimate estimate_from_schedule(const MultiChannelSystem& system,
                                       const SpanningConfig& base,
                                       const EntropySchedule& schedule, const EngineSetup& setup,
                                       std::string method) {
    std::vector<double> horizons = schedule.horizons;
    std::sort(horizons.begin(), horizons.end());
    horizons.erase(std::unique(horizons.begin(), horizons.end()), horizons.end());
    if (horizons.size() < 3) {
        throw std::invalid_argument("entropy estimate needs at least three distinct horizons");
    }
    std::vector<double> epsilons = schedule.epsilons;
    std::sort(epsilons.begin(), epsilons.end());
    epsilons.erase(std::unique(epsilons.begin(), epsilons.end()), epsilons.end());
    if (epsilons.empty()) {
        throw std::invalid_argument("entropy estimate needs at least one epsilon");
    }

    EntropyEstimate estimate;
    estimate.method = std::move(method);

    // cardinalities[e][t]
    std::vector<std::vector<std::optional<std::uint64_t>>> card(
        epsilons.size(), std::vector<std::optional<std::uint64_t>>(horizons.size()));
    for (std::size_t t = 0; t < horizons.size(); ++t) {
        const CoverEngineResult family =
            run_cover_family(system, base, setup, horizons[t], epsilons);
        for (std::size_t e = 0; e < epsilons.size(); ++e) {
            card[e][t] = family.per_epsilon[e].cardinality;
            if (!card[e][t] && estimate.diagnostic.empty()) {
                estimate.diagnostic = family.per_epsilon[e].diagnostic;
            }
        }
        // Covers built for a tighter epsilon remain valid, so the reported
        // cardinality is monotone in epsilon by construction.
        for (std::size_t e = 1; e < epsilons.size(); ++e) {
            if (card[e - 1][t] && (!card[e][t] || *card[e][t] > *card[e - 1][t])) {
                card[e][t] = card[e - 1][t];
            }
        }
    }

    for (std::size_t e = epsilons.size(); e-- > 0;) {
        for (std::size_t t = 0; t < horizons.size(); ++t) {
            estimate.samples.push_back(EntropySample{horizons[t], epsilons[e], card[e][t]});
        }
    }

    std::optional<std::size_t> chosen_level;
    for (std::size_t e = 0; e < epsilons.size(); ++e) {
        bool complete = true;
        for (const auto& c : card[e]) complete = complete && c.has_value();
        if (!complete) continue;
        std::vector<double> ys;
        ys.reserve(horizons.size());
        for (const auto& c : card[e]) ys.push_back(std::log(static_cast<double>(*c)));
        const FitResult fit = fit_slope(horizons, ys);
        estimate.per_epsilon_rates.emplace_back(epsilons[e], std::max(0.0, fit.slope));
        if (!chosen_level) {
            chosen_level = e;
            estimate.rate = std::max(0.0, fit.slope);
            estimate.fit_residual = fit.residual;
        }
    }
    if (!chosen_level) {
        estimate.rate = std::nullopt;
        if (estimate.diagnostic.empty()) {
            estimate.diagnostic = "no epsilon level produced finite covers at every horizon";
        }
    }
    return estimate;
}

}  // namespace

double excursion(const Trajectory& trajectory, const Subspace& v) {
    if (trajectory.states.empty()) {
        throw std::invalid_argument("excursion: trajectory must contain at least one sample");
    }
    double worst = 0.0;
    for (const auto& state : trajectory.states) {
        worst = std::max(worst, distance_to(state, v));
    }
    return worst;
}

bool is_spanning_set(const MultiChannelSystem& system, const Subspace& v,
                     const SpanningConfig& config, const std::vector<ControlSignal>& controls) {
    validate_region(config);
    const Eigen::Index d = config.f_carrier.dim();
    double density = config.grid_density;
    if (density <= 0.0) {
        const ErrorMap em = build_error_map(system.dynamics(), v, config.f_carrier.basis(),
                                            config.horizon, config.piece_width_hint);
        density = std::clamp(1.2 * em.growth / config.epsilon, 4.0, 5e5);
    }
    const std::vector<Eigen::VectorXd> grid = build_grid(config.boxes, d, density);
    for (const auto& point : grid) {
        const Eigen::VectorXd x0 = config.f_carrier.basis() * point;
        bool covered = false;
        for (const auto& u : controls) {
            if (u.pieces() > 0 &&
                std::abs(u.horizon() - config.horizon) > 1e-9 * std::max(1.0, config.horizon)) {
                throw std::invalid_argument(
                    "is_spanning_set: control horizon does not match the configuration");
            }
            bool ok = true;
            for (const auto& pattern : config.patterns) {
                const Trajectory traj = simulate(system, pattern, x0, u);
                if (excursion(traj, v) > config.epsilon) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                covered = true;
                break;
            }
        }
        if (!covered) return false;
    }
    return true;
}

SpanningConstruction min_spanning_cardinality(const MultiChannelSystem& system, const Subspace& v,
                                              const SpanningConfig& config) {
    validate_region(config);
    const EngineSetup setup = unrestricted_setup(system, v, config);
    CoverEngineResult family =
        run_cover_family(system, config, setup, config.horizon, {config.epsilon});
    return std::move(family.per_epsilon.front());
}

EntropyEstimate covering_entropy_estimate(const MultiChannelSystem& system, const Subspace& v,
                                          const SpanningConfig& base,
                                          const EntropySchedule& schedule) {
    validate_region(base);
    const EngineSetup setup = unrestricted_setup(system, v, base);
    return estimate_from_schedule(system, base, schedule, setup, "covering");
}

double spectral_entropy_estimate(const MultiChannelSystem& system,
                                 const std::vector<ChannelPattern>& patterns, const Subspace& v,
                                 const Subspace& f_carrier) {
    if (patterns.empty()) {
        throw std::invalid_argument("spectral_entropy_estimate: pattern set must be nonempty");
    }
    for (const auto& pattern : patterns) {
        const PatternGeometry geom = pattern_geometry(system, pattern);
        if (!is_controlled_invariant(system.dynamics(), geom.image, v)) {
            throw std::invalid_argument(
                "spectral_entropy_estimate: no friend exists for pattern " + pattern.label() +
                "; fall back to the covering search");
        }
        synthesize_friend(system, pattern, v);  // certifies the friend exists
    }
    const Eigen::Index d = f_carrier.dim();
    if (d == 0) return 0.0;

    Eigen::JacobiSVD<Eigen::MatrixXd> asvd(system.dynamics());
    const double anorm = asvd.singularValues().size() > 0 ? asvd.singularValues()(0) : 0.0;
    const double t_hi = std::min(48.0, 240.0 / std::max(1.0, anorm));
    const int samples = 5;
    std::vector<double> ts(samples);
    for (int i = 0; i < samples; ++i) {
        ts[static_cast<std::size_t>(i)] =
            t_hi / 2.0 + (t_hi / 2.0) * static_cast<double>(i) / (samples - 1);
    }

    // log singular values of (I - P_v) e^{At} C, individually slope-fitted;
    // entries collapsed by rounding are dropped instead of fitted as noise.
    std::vector<std::vector<std::pair<double, double>>> per_index(static_cast<std::size_t>(d));
    for (const double t : ts) {
        const Eigen::MatrixXd flow = (system.dynamics() * t).exp();
        Eigen::JacobiSVD<Eigen::MatrixXd> flow_svd(flow);
        const double scale = flow_svd.singularValues()(0);
        const Eigen::MatrixXd g = project_out(v, flow * f_carrier.basis());
        Eigen::JacobiSVD<Eigen::MatrixXd> gsvd(g);
        for (Eigen::Index i = 0; i < d; ++i) {
            const double sigma = i < gsvd.singularValues().size() ? gsvd.singularValues()(i) : 0.0;
            if (sigma > 1e-12 * scale && sigma > 0.0) {
                per_index[static_cast<std::size_t>(i)].emplace_back(t, std::log(sigma));
            }
        }
    }
    double rate = 0.0;
    for (const auto& series : per_index) {
        if (series.size() < 3) continue;
        std::vector<double> xs, ys;
        for (const auto& [t, y] : series) {
            xs.push_back(t);
            ys.push_back(y);
        }
        rate += std::max(0.0, fit_slope(xs, ys).slope);
    }
    return rate;
}

EntropyEstimate feedback_class_entropy_estimate(const MultiChannelSystem& system,
                                                const Subspace& v, const SpanningConfig& base,
                                                const EntropySchedule& schedule,
                                                const std::vector<Friend>& friend_class) {
    validate_region(base);
    if (friend_class.empty()) {
        EntropyEstimate estimate;
        estimate.method = "feedback-class";
        estimate.rate = std::nullopt;
        estimate.diagnostic = "empty friend class: no pattern admits a friend";
        for (const double eps : schedule.epsilons) {
            for (const double horizon : schedule.horizons) {
                estimate.samples.push_back(EntropySample{horizon, eps, std::nullopt});
            }
        }
        return estimate;
    }

    // Largest subspace of the target kept invariant by every friend under
    // every pattern: distances are measured against it.
    std::vector<Eigen::MatrixXd> maps;
    for (const auto& fr : friend_class) {
        for (const auto& pattern : base.patterns) {
            maps.push_back(fr.closed_loop(system, pattern));
        }
    }
    const Subspace target = supremal_closed_loop_invariant(maps, v);

    EngineSetup setup;
    setup.patterns = base.patterns;
    setup.distance_target = target;
    setup.carrier_basis = base.f_carrier.basis();
    setup.friends = friend_class;
    setup.allow_brute = false;
    EntropyEstimate estimate =
        estimate_from_schedule(system, base, schedule, setup, "feedback-class");
    estimate.diagnostic += (estimate.diagnostic.empty() ? "" : "; ");
    estimate.diagnostic += "feedback-invariant target dimension " + std::to_string(target.dim());
    return estimate;
}

}  // namespace invariance
