// Command-line front end: analyze | entropy | simulate | gap.
// Exit codes: 0 success / all maintainable, 1 error, 2 not-maintainable.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "invariance/controlled_invariance.hpp"
#include "invariance/entropy.hpp"
#include "invariance/multichannel.hpp"
#include "invariance/reliability.hpp"
#include "invariance/subspace.hpp"

namespace {

using invariance::Box;
using invariance::ChannelPattern;
using invariance::MultiChannelSystem;
using invariance::Subspace;
using nlohmann::json;

struct SharedFlags {
    std::string system_path;
    std::string target_path;
    std::vector<std::string> pattern_labels;
    std::vector<double> horizons;
    std::vector<double> epsilons;
    double grid_density = -1.0;
    std::int64_t budget = -1;
    double tol = -1.0;
    std::string config_path;
    std::string out_path;
    std::string csv_path;
};

json parse_json_file(const std::string& path) {
    if (!std::filesystem::exists(path)) {
        throw std::runtime_error("file not found: " + path);
    }
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path);
    }
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw std::runtime_error("invalid JSON in " + path + ": " + e.what());
    }
    return j;
}

Eigen::VectorXd vector_from(const json& j) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    return v;
}

struct TargetSpec {
    Subspace v;
    std::vector<Box> boxes;
};

TargetSpec load_target(const std::string& path, double tol_override) {
    const json j = parse_json_file(path);
    if (!j.contains("basis") || !j["basis"].is_array() || j["basis"].empty()) {
        throw std::runtime_error("target file " + path + " needs a nonempty \"basis\" array");
    }
    std::vector<Eigen::VectorXd> vectors;
    for (const auto& vj : j["basis"]) vectors.push_back(vector_from(vj));
    double tol = invariance::kDefaultTol;
    if (j.contains("tol")) tol = j["tol"].get<double>();
    if (tol_override > 0.0) tol = tol_override;
    const Eigen::Index ambient = vectors.front().size();
    TargetSpec spec{Subspace::from_spanning_vectors(ambient, vectors, tol), {}};

    const auto read_box = [](const json& bj) {
        return Box{vector_from(bj.at("center")), vector_from(bj.at("half_widths"))};
    };
    if (j.contains("boxes")) {
        for (const auto& bj : j["boxes"]) spec.boxes.push_back(read_box(bj));
    } else if (j.contains("box")) {
        spec.boxes.push_back(read_box(j["box"]));
    } else {
        spec.boxes.push_back(Box{Eigen::VectorXd::Zero(spec.v.dim()),
                                 Eigen::VectorXd::Ones(spec.v.dim())});
    }
    return spec;
}

std::vector<ChannelPattern> resolve_patterns(const std::vector<std::string>& labels,
                                             int channel_count) {
    std::vector<ChannelPattern> patterns;
    if (labels.empty()) {
        patterns.push_back(ChannelPattern::all_alive(channel_count));
        for (int j = 1; j <= channel_count; ++j) {
            patterns.push_back(ChannelPattern::drop_channel(channel_count, j));
        }
        return patterns;
    }
    for (const auto& label : labels) {
        patterns.push_back(ChannelPattern::parse(label, channel_count));
    }
    return patterns;
}

// Precedence: flags > config file > defaults.
void apply_config_file(SharedFlags& flags) {
    if (flags.config_path.empty()) return;
    const json j = parse_json_file(flags.config_path);
    if (flags.horizons.empty() && j.contains("horizons")) {
        flags.horizons = j["horizons"].get<std::vector<double>>();
    }
    if (flags.epsilons.empty() && j.contains("epsilons")) {
        flags.epsilons = j["epsilons"].get<std::vector<double>>();
    }
    if (flags.grid_density < 0.0 && j.contains("grid_density")) {
        flags.grid_density = j["grid_density"].get<double>();
    }
    if (flags.budget < 0 && j.contains("budget")) {
        flags.budget = j["budget"].get<std::int64_t>();
    }
    if (flags.pattern_labels.empty() && j.contains("patterns")) {
        flags.pattern_labels = j["patterns"].get<std::vector<std::string>>();
    }
}

invariance::AssessOptions make_options(const SharedFlags& flags) {
    invariance::AssessOptions options;
    if (!flags.horizons.empty()) options.horizons = flags.horizons;
    if (!flags.epsilons.empty()) options.epsilons = flags.epsilons;
    if (flags.grid_density >= 0.0) options.grid_density = flags.grid_density;
    if (flags.budget >= 0) options.control_budget = flags.budget;
    return options;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << text;
    if (!out.good()) throw std::runtime_error("write failed for " + path);
}

int cmd_analyze(SharedFlags& flags) {
    apply_config_file(flags);
    const MultiChannelSystem system = invariance::load_system(flags.system_path);
    const TargetSpec target = load_target(flags.target_path, flags.tol);
    const auto patterns = resolve_patterns(flags.pattern_labels, system.channel_count());
    const invariance::AssessOptions options = make_options(flags);

    invariance::FailureRegion region{target.v, target.boxes};
    const invariance::ReliabilityReport report =
        invariance::assess(system, target.v, region, patterns, options);

    const std::string text = invariance::report_to_json(report);
    if (flags.out_path.empty()) {
        std::cout << text;
    } else {
        write_text(flags.out_path, text);
    }
    if (!flags.csv_path.empty()) {
        write_text(flags.csv_path, invariance::entropy_samples_csv(report));
    }
    return report.all_maintainable() ? 0 : 2;
}

int cmd_entropy(SharedFlags& flags) {
    apply_config_file(flags);
    const MultiChannelSystem system = invariance::load_system(flags.system_path);
    const TargetSpec target = load_target(flags.target_path, flags.tol);
    const auto patterns = resolve_patterns(flags.pattern_labels, system.channel_count());
    const invariance::AssessOptions options = make_options(flags);

    invariance::SpanningConfig config;
    config.f_carrier = target.v;
    config.boxes = target.boxes;
    config.patterns = patterns;
    config.grid_density = options.grid_density;
    config.control_budget = options.control_budget;
    config.horizon = *std::max_element(options.horizons.begin(), options.horizons.end());
    config.epsilon = *std::min_element(options.epsilons.begin(), options.epsilons.end());

    const invariance::EntropySchedule schedule{options.horizons, options.epsilons};
    const invariance::EntropyEstimate estimate =
        invariance::covering_entropy_estimate(system, target.v, config, schedule);

    std::string label;
    for (const auto& p : patterns) label += (label.empty() ? "" : "&") + p.label();
    const std::string text = invariance::entropy_estimate_json(estimate);
    if (flags.out_path.empty()) {
        std::cout << text;
    } else {
        write_text(flags.out_path, text);
    }
    if (!flags.csv_path.empty()) {
        write_text(flags.csv_path, invariance::entropy_estimate_csv(estimate, label));
    }
    return 0;
}

int cmd_simulate(SharedFlags& flags, const std::string& control_path, std::string pattern_label,
                 std::string x0_text) {
    const MultiChannelSystem system = invariance::load_system(flags.system_path);
    const json cj = parse_json_file(control_path);

    invariance::ControlSignal u;
    u.dt = cj.at("dt").get<double>();
    const auto& rows = cj.at("values");
    const Eigen::Index pieces = static_cast<Eigen::Index>(rows.size());
    u.values.resize(system.total_input_width(), pieces);
    for (Eigen::Index p = 0; p < pieces; ++p) {
        const Eigen::VectorXd col = vector_from(rows[static_cast<std::size_t>(p)]);
        if (col.size() != system.total_input_width()) {
            throw std::runtime_error("control piece " + std::to_string(p) +
                                     " has wrong width (expected " +
                                     std::to_string(system.total_input_width()) + ")");
        }
        u.values.col(p) = col;
    }
    const std::string admissible = invariance::check_admissible(system, u);
    if (!admissible.empty()) {
        throw std::runtime_error("control is not admissible: " + admissible);
    }

    if (pattern_label.empty() && cj.contains("pattern")) {
        pattern_label = cj["pattern"].get<std::string>();
    }
    const ChannelPattern pattern =
        pattern_label.empty() ? ChannelPattern::all_alive(system.channel_count())
                              : ChannelPattern::parse(pattern_label, system.channel_count());

    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(system.state_dim());
    if (x0_text.empty() && cj.contains("x0")) {
        x0 = vector_from(cj["x0"]);
    } else if (!x0_text.empty()) {
        std::vector<double> vals;
        std::stringstream ss(x0_text);
        std::string item;
        while (std::getline(ss, item, ',')) vals.push_back(std::stod(item));
        x0 = Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
    }

    const invariance::Trajectory traj = invariance::simulate(system, pattern, x0, u);
    std::string csv = "t";
    for (Eigen::Index i = 0; i < system.state_dim(); ++i) csv += ",x" + std::to_string(i + 1);
    csv += "\n";
    char buf[64];
    for (std::size_t k = 0; k < traj.times.size(); ++k) {
        std::snprintf(buf, sizeof(buf), "%.17g", traj.times[k]);
        csv += buf;
        for (Eigen::Index i = 0; i < system.state_dim(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", traj.states[k](i));
            csv += std::string(",") + buf;
        }
        csv += "\n";
    }
    if (flags.out_path.empty()) {
        std::cout << csv;
    } else {
        write_text(flags.out_path, csv);
    }
    return 0;
}

int cmd_gap(SharedFlags& flags) {
    const MultiChannelSystem system = invariance::load_system(flags.system_path);
    const TargetSpec target = load_target(flags.target_path, flags.tol);
    const auto patterns = resolve_patterns(flags.pattern_labels, system.channel_count());

    std::vector<Subspace> suprema;
    for (const auto& pattern : patterns) {
        const auto geom = invariance::pattern_geometry(system, pattern);
        suprema.push_back(
            invariance::supremal_invariant(system.dynamics(), geom.image, target.v));
    }
    const Eigen::Index k = static_cast<Eigen::Index>(patterns.size());
    Eigen::MatrixXd gap(k, k);
    for (Eigen::Index i = 0; i < k; ++i) {
        for (Eigen::Index j = 0; j < k; ++j) {
            gap(i, j) = i == j ? 0.0
                               : invariance::gap_metric(suprema[static_cast<std::size_t>(i)],
                                                        suprema[static_cast<std::size_t>(j)]);
        }
    }

    json out;
    json labels = json::array();
    for (const auto& p : patterns) labels.push_back(p.label());
    out["patterns"] = std::move(labels);
    json rows = json::array();
    for (Eigen::Index i = 0; i < k; ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < k; ++j) row.push_back(gap(i, j));
        rows.push_back(std::move(row));
    }
    out["gap_matrix"] = std::move(rows);
    json dims = json::array();
    for (const auto& s : suprema) dims.push_back(s.dim());
    out["supremal_dims"] = std::move(dims);

    const std::string text = out.dump(2) + "\n";
    if (flags.out_path.empty()) {
        std::cout << text;
    } else {
        write_text(flags.out_path, text);
    }
    return 0;
}

void add_shared_flags(CLI::App* cmd, SharedFlags& flags, bool with_target, bool with_schedule) {
    cmd->add_option("--system", flags.system_path, "system description JSON")->required();
    if (with_target) {
        cmd->add_option("--target", flags.target_path, "target subspace JSON")->required();
        cmd->add_option("--tol", flags.tol, "subspace tolerance override");
    }
    cmd->add_option("--patterns", flags.pattern_labels,
                    "pattern labels (default: all single failures and ¬0)");
    if (with_schedule) {
        cmd->add_option("--T", flags.horizons, "horizon samples (repeatable)");
        cmd->add_option("--eps", flags.epsilons, "epsilon schedule (repeatable)");
        cmd->add_option("--grid", flags.grid_density, "grid density, points per unit length");
        cmd->add_option("--budget", flags.budget, "brute-force control budget");
        cmd->add_option("--config", flags.config_path, "entropy run config JSON");
    }
    cmd->add_option("--out", flags.out_path, "output path (default: stdout)");
    if (with_schedule) {
        cmd->add_option("--csv", flags.csv_path, "entropy sample CSV path");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"controlled-invariance reliability and entropy analysis"};
    app.require_subcommand(1);

    SharedFlags analyze_flags, entropy_flags, simulate_flags, gap_flags;
    std::string control_path, sim_pattern, sim_x0;

    auto* analyze = app.add_subcommand("analyze", "full per-pattern reliability report");
    add_shared_flags(analyze, analyze_flags, true, true);

    auto* entropy = app.add_subcommand("entropy", "covering entropy estimate for one scenario");
    add_shared_flags(entropy, entropy_flags, true, true);

    auto* simulate = app.add_subcommand("simulate", "trajectory CSV for a control file");
    add_shared_flags(simulate, simulate_flags, false, false);
    simulate->add_option("--control", control_path, "control signal JSON")->required();
    simulate->add_option("--pattern", sim_pattern, "failure pattern label");
    simulate->add_option("--x0", sim_x0, "initial state, comma separated");

    auto* gap = app.add_subcommand("gap", "gap matrix of per-pattern supremal subspaces");
    add_shared_flags(gap, gap_flags, true, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (analyze->parsed()) return cmd_analyze(analyze_flags);
        if (entropy->parsed()) return cmd_entropy(entropy_flags);
        if (simulate->parsed()) return cmd_simulate(simulate_flags, control_path, sim_pattern, sim_x0);
        if (gap->parsed()) return cmd_gap(gap_flags);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
