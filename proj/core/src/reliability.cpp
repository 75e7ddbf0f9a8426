#include "invariance/reliability.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace invariance {

namespace {

using nlohmann::json;

json matrix_to_json(const Eigen::MatrixXd& m) {
    // Serialized as a list of basis vectors (columns).
    json out = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        json col = json::array();
        for (Eigen::Index r = 0; r < m.rows(); ++r) col.push_back(m(r, c));
        out.push_back(std::move(col));
    }
    return out;
}

Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index rows) {
    Eigen::MatrixXd m(rows, static_cast<Eigen::Index>(j.size()));
    for (std::size_t c = 0; c < j.size(); ++c) {
        for (std::size_t r = 0; r < j[c].size(); ++r) {
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[c][r].get<double>();
        }
    }
    return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

Eigen::VectorXd vector_from_json(const json& j) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    return v;
}

json estimate_to_json(const EntropyEstimate& e) {
    json out;
    out["method"] = e.method;
    out["diagnostic"] = e.diagnostic;
    out["fit_residual"] = e.fit_residual;
    out["h_hat"] = e.rate ? json(*e.rate) : json(nullptr);
    json rates = json::array();
    for (const auto& [eps, rate] : e.per_epsilon_rates) {
        rates.push_back(json{{"epsilon", eps}, {"rate", rate}});
    }
    out["per_epsilon_rates"] = std::move(rates);
    json samples = json::array();
    for (const auto& s : e.samples) {
        json row;
        row["T"] = s.horizon;
        row["epsilon"] = s.epsilon;
        row["r_inv"] = s.cardinality ? json(*s.cardinality) : json(nullptr);
        row["log_r"] = s.cardinality ? json(std::log(static_cast<double>(*s.cardinality)))
                                     : json(nullptr);
        samples.push_back(std::move(row));
    }
    out["samples"] = std::move(samples);
    return out;
}

EntropyEstimate estimate_from_json(const json& j) {
    EntropyEstimate e;
    e.method = j.at("method").get<std::string>();
    e.diagnostic = j.at("diagnostic").get<std::string>();
    e.fit_residual = j.at("fit_residual").get<double>();
    if (!j.at("h_hat").is_null()) e.rate = j.at("h_hat").get<double>();
    for (const auto& r : j.at("per_epsilon_rates")) {
        e.per_epsilon_rates.emplace_back(r.at("epsilon").get<double>(),
                                         r.at("rate").get<double>());
    }
    for (const auto& s : j.at("samples")) {
        EntropySample sample;
        sample.horizon = s.at("T").get<double>();
        sample.epsilon = s.at("epsilon").get<double>();
        if (!s.at("r_inv").is_null()) sample.cardinality = s.at("r_inv").get<std::uint64_t>();
        e.samples.push_back(std::move(sample));
    }
    return e;
}

std::string format_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

bool ReliabilityReport::all_maintainable() const {
    for (const auto& s : scenarios) {
        if (s.verdict == kVerdictNotMaintainable) return false;
    }
    return true;
}

ReliabilityReport assess(const MultiChannelSystem& system, const Subspace& v,
                         const FailureRegion& region,
                         const std::vector<ChannelPattern>& patterns,
                         const AssessOptions& options) {
    if (v.dim() == 0) {
        throw std::invalid_argument("assess: degenerate target (the zero subspace)");
    }
    if (patterns.empty()) {
        throw std::invalid_argument("assess: pattern list must be nonempty");
    }
    if (region.carrier.ambient_dim() != v.ambient_dim() || !v.contains(region.carrier)) {
        throw std::invalid_argument("assess: the initial region is not inside the target");
    }
    if (region.boxes.empty()) {
        throw std::invalid_argument("assess: the initial region has no boxes");
    }

    ReliabilityReport report;
    report.state_dim = system.state_dim();
    report.channel_count = system.channel_count();
    report.target_basis = v.basis();
    report.target_tol = v.tol();
    report.region_carrier = region.carrier.basis();
    report.region_boxes = region.boxes;
    report.options = options;

    EntropySchedule schedule{options.horizons, options.epsilons};
    std::vector<Subspace> suprema;
    suprema.reserve(patterns.size());

    for (const auto& pattern : patterns) {
        ScenarioAssessment scenario;
        scenario.pattern_label = pattern.label();
        scenario.alive.assign(pattern.alive().begin(), pattern.alive().end());

        const PatternGeometry geom = pattern_geometry(system, pattern);
        scenario.invariant = is_controlled_invariant(system.dynamics(), geom.image, v);
        const Subspace supremal = supremal_invariant(system.dynamics(), geom.image, v);
        scenario.supremal_basis = supremal.basis();
        suprema.push_back(supremal);

        std::optional<Friend> fr;
        if (scenario.invariant) {
            fr = synthesize_friend(system, pattern, v);
            scenario.friend_residual = fr->residual;
        }

        SpanningConfig config;
        config.f_carrier = region.carrier;
        config.boxes = region.boxes;
        config.patterns = {pattern};
        config.grid_density = options.grid_density;
        config.control_budget = options.control_budget;
        config.piece_width_hint = options.piece_width_hint;
        config.epsilon = *std::min_element(options.epsilons.begin(), options.epsilons.end());
        config.horizon = *std::max_element(options.horizons.begin(), options.horizons.end());

        scenario.covering = covering_entropy_estimate(system, v, config, schedule);
        if (scenario.invariant && options.with_spectral) {
            scenario.spectral_rate =
                spectral_entropy_estimate(system, {pattern}, v, region.carrier);
        }
        if (fr && options.with_feedback_class) {
            scenario.feedback =
                feedback_class_entropy_estimate(system, v, config, schedule, {*fr});
        }

        if (scenario.invariant && scenario.covering.rate &&
            *scenario.covering.rate <= options.zero_rate_tol) {
            scenario.verdict = kVerdictZeroCost;
        } else if (!scenario.invariant && !scenario.covering.rate) {
            scenario.verdict = kVerdictNotMaintainable;
        } else {
            scenario.verdict = kVerdictAtRate;
        }
        report.scenarios.push_back(std::move(scenario));
    }

    const Subspace robust = robust_supremal(system, patterns, v);
    report.robust_basis = robust.basis();
    Subspace plain = suprema.front();
    for (std::size_t i = 1; i < suprema.size(); ++i) plain = intersect(plain, suprema[i]);
    report.intersection_dim = plain.dim();
    bool intersection_invariant = true;
    for (const auto& pattern : patterns) {
        const PatternGeometry geom = pattern_geometry(system, pattern);
        intersection_invariant =
            intersection_invariant && is_controlled_invariant(system.dynamics(), geom.image, plain);
    }
    report.intersection_invariant = intersection_invariant;
    report.robust_matches_intersection = robust.approx_equal(plain);

    report.gap_matrix.resize(static_cast<Eigen::Index>(patterns.size()),
                             static_cast<Eigen::Index>(patterns.size()));
    for (std::size_t i = 0; i < suprema.size(); ++i) {
        for (std::size_t k = 0; k < suprema.size(); ++k) {
            report.gap_matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
                i == k ? 0.0 : gap_metric(suprema[i], suprema[k]);
        }
    }

    report.orderings = compare_entropy_bounds(report, options.ordering_tol);
    return report;
}

std::vector<OrderingRecord> compare_entropy_bounds(const ReliabilityReport& report, double tol) {
    std::vector<OrderingRecord> records;
    for (const auto& scenario : report.scenarios) {
        OrderingRecord record;
        record.pattern_label = scenario.pattern_label;
        if (!scenario.feedback) {
            record.status = "incomparable";
            records.push_back(std::move(record));
            continue;
        }
        record.unrestricted_rate = scenario.covering.rate;
        record.feedback_rate = scenario.feedback->rate;
        const double hu = scenario.covering.rate
                              ? *scenario.covering.rate
                              : std::numeric_limits<double>::infinity();
        const double hk = scenario.feedback->rate ? *scenario.feedback->rate
                                                  : std::numeric_limits<double>::infinity();
        record.status = (hu <= hk + tol || (std::isinf(hu) && std::isinf(hk))) ? "holds"
                                                                               : "violated";
        records.push_back(std::move(record));
    }
    return records;
}

std::string report_to_json(const ReliabilityReport& report) {
    json root;
    root["meta"] = json{{"format", 1}, {"tool", "invariance"}};
    root["state_dim"] = report.state_dim;
    root["channels"] = report.channel_count;
    root["target"] = json{{"basis", matrix_to_json(report.target_basis)},
                          {"tol", report.target_tol}};
    json boxes = json::array();
    for (const auto& box : report.region_boxes) {
        boxes.push_back(json{{"center", vector_to_json(box.center)},
                             {"half_widths", vector_to_json(box.half_widths)}});
    }
    root["region"] = json{{"carrier", matrix_to_json(report.region_carrier)},
                          {"boxes", std::move(boxes)}};

    json scenarios = json::array();
    for (const auto& s : report.scenarios) {
        json sj;
        sj["pattern"] = s.pattern_label;
        sj["alive"] = s.alive;
        sj["invariant"] = s.invariant;
        sj["supremal"] = json{{"basis", matrix_to_json(s.supremal_basis)},
                              {"dim", s.supremal_basis.cols()}};
        sj["friend_residual"] = s.friend_residual ? json(*s.friend_residual) : json(nullptr);
        sj["entropy"] = estimate_to_json(s.covering);
        sj["spectral_rate"] = s.spectral_rate ? json(*s.spectral_rate) : json(nullptr);
        sj["feedback"] = s.feedback ? estimate_to_json(*s.feedback) : json(nullptr);
        sj["verdict"] = s.verdict;
        scenarios.push_back(std::move(sj));
    }
    root["scenarios"] = std::move(scenarios);

    json gap = json::array();
    for (Eigen::Index r = 0; r < report.gap_matrix.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < report.gap_matrix.cols(); ++c) {
            row.push_back(report.gap_matrix(r, c));
        }
        gap.push_back(std::move(row));
    }
    root["gap_matrix"] = std::move(gap);
    root["robust"] = json{{"basis", matrix_to_json(report.robust_basis)},
                          {"dim", report.robust_basis.cols()},
                          {"intersection_dim", report.intersection_dim},
                          {"intersection_invariant", report.intersection_invariant},
                          {"matches_intersection", report.robust_matches_intersection}};

    json orderings = json::array();
    for (const auto& o : report.orderings) {
        orderings.push_back(
            json{{"pattern", o.pattern_label},
                 {"status", o.status},
                 {"unrestricted", o.unrestricted_rate ? json(*o.unrestricted_rate) : json(nullptr)},
                 {"feedback", o.feedback_rate ? json(*o.feedback_rate) : json(nullptr)}});
    }
    root["orderings"] = std::move(orderings);

    root["options"] = json{{"horizons", report.options.horizons},
                           {"epsilons", report.options.epsilons},
                           {"grid_density", report.options.grid_density},
                           {"control_budget", report.options.control_budget},
                           {"piece_width_hint", report.options.piece_width_hint},
                           {"zero_rate_tol", report.options.zero_rate_tol},
                           {"ordering_tol", report.options.ordering_tol},
                           {"with_spectral", report.options.with_spectral},
                           {"with_feedback_class", report.options.with_feedback_class}};
    return root.dump(2) + "\n";
}

namespace {

void append_sample_rows(std::string& csv, const EntropyEstimate& e, const std::string& label) {
    for (const auto& s : e.samples) {
        csv += format_g17(s.horizon) + "," + format_g17(s.epsilon) + ",";
        if (s.cardinality) {
            csv += std::to_string(*s.cardinality) + "," +
                   format_g17(std::log(static_cast<double>(*s.cardinality)));
        } else {
            csv += "inf,inf";
        }
        csv += "," + label + "\n";
    }
}

}  // namespace

std::string entropy_samples_csv(const ReliabilityReport& report) {
    std::string csv = "T,epsilon,r_inv,log_r,pattern_set\n";
    for (const auto& s : report.scenarios) {
        append_sample_rows(csv, s.covering, s.pattern_label);
        if (s.feedback) append_sample_rows(csv, *s.feedback, s.pattern_label + "[K]");
    }
    return csv;
}

std::string entropy_estimate_json(const EntropyEstimate& estimate) {
    return estimate_to_json(estimate).dump(2) + "\n";
}

std::string entropy_estimate_csv(const EntropyEstimate& estimate,
                                 const std::string& pattern_set_label) {
    std::string csv = "T,epsilon,r_inv,log_r,pattern_set\n";
    append_sample_rows(csv, estimate, pattern_set_label);
    return csv;
}

void write_report(const ReliabilityReport& report, const std::string& json_path) {
    std::ofstream out(json_path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("write_report: cannot open " + json_path + " for writing");
    }
    out << report_to_json(report);
    if (!out.good()) {
        throw std::runtime_error("write_report: write failed for " + json_path);
    }
}

void write_entropy_csv(const ReliabilityReport& report, const std::string& csv_path) {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("write_entropy_csv: cannot open " + csv_path + " for writing");
    }
    out << entropy_samples_csv(report);
    if (!out.good()) {
        throw std::runtime_error("write_entropy_csv: write failed for " + csv_path);
    }
}

ReliabilityReport read_report(const std::string& json_path) {
    std::ifstream in(json_path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("read_report: cannot open " + json_path);
    }
    json root;
    try {
        in >> root;
    } catch (const json::parse_error& e) {
        throw std::runtime_error("read_report: invalid JSON in " + json_path + ": " + e.what());
    }

    ReliabilityReport report;
    report.state_dim = root.at("state_dim").get<Eigen::Index>();
    report.channel_count = root.at("channels").get<int>();
    report.target_basis = matrix_from_json(root.at("target").at("basis"), report.state_dim);
    report.target_tol = root.at("target").at("tol").get<double>();
    report.region_carrier = matrix_from_json(root.at("region").at("carrier"), report.state_dim);
    for (const auto& bj : root.at("region").at("boxes")) {
        report.region_boxes.push_back(
            Box{vector_from_json(bj.at("center")), vector_from_json(bj.at("half_widths"))});
    }
    for (const auto& sj : root.at("scenarios")) {
        ScenarioAssessment s;
        s.pattern_label = sj.at("pattern").get<std::string>();
        s.alive = sj.at("alive").get<std::vector<int>>();
        s.invariant = sj.at("invariant").get<bool>();
        s.supremal_basis = matrix_from_json(sj.at("supremal").at("basis"), report.state_dim);
        if (!sj.at("friend_residual").is_null()) {
            s.friend_residual = sj.at("friend_residual").get<double>();
        }
        s.covering = estimate_from_json(sj.at("entropy"));
        if (!sj.at("spectral_rate").is_null()) {
            s.spectral_rate = sj.at("spectral_rate").get<double>();
        }
        if (!sj.at("feedback").is_null()) s.feedback = estimate_from_json(sj.at("feedback"));
        s.verdict = sj.at("verdict").get<std::string>();
        report.scenarios.push_back(std::move(s));
    }
    const auto& gap = root.at("gap_matrix");
    report.gap_matrix.resize(static_cast<Eigen::Index>(gap.size()),
                             static_cast<Eigen::Index>(gap.size()));
    for (std::size_t r = 0; r < gap.size(); ++r) {
        for (std::size_t c = 0; c < gap[r].size(); ++c) {
            report.gap_matrix(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                gap[r][c].get<double>();
        }
    }
    report.robust_basis = matrix_from_json(root.at("robust").at("basis"), report.state_dim);
    report.intersection_dim = root.at("robust").at("intersection_dim").get<Eigen::Index>();
    report.intersection_invariant = root.at("robust").at("intersection_invariant").get<bool>();
    report.robust_matches_intersection = root.at("robust").at("matches_intersection").get<bool>();
    for (const auto& oj : root.at("orderings")) {
        OrderingRecord o;
        o.pattern_label = oj.at("pattern").get<std::string>();
        o.status = oj.at("status").get<std::string>();
        if (!oj.at("unrestricted").is_null()) {
            o.unrestricted_rate = oj.at("unrestricted").get<double>();
        }
        if (!oj.at("feedback").is_null()) o.feedback_rate = oj.at("feedback").get<double>();
        report.orderings.push_back(std::move(o));
    }
    const auto& opt = root.at("options");
    report.options.horizons = opt.at("horizons").get<std::vector<double>>();
    report.options.epsilons = opt.at("epsilons").get<std::vector<double>>();
    report.options.grid_density = opt.at("grid_density").get<double>();
    report.options.control_budget = opt.at("control_budget").get<std::int64_t>();
    report.options.piece_width_hint = opt.at("piece_width_hint").get<double>();
    report.options.zero_rate_tol = opt.at("zero_rate_tol").get<double>();
    report.options.ordering_tol = opt.at("ordering_tol").get<double>();
    report.options.with_spectral = opt.at("with_spectral").get<bool>();
    report.options.with_feedback_class = opt.at("with_feedback_class").get<bool>();
    return report;
}

}  // namespace invariance
