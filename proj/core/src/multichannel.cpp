#include "invariance/multichannel.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace invariance {

MultiChannelSystem::MultiChannelSystem(Eigen::MatrixXd a, std::vector<Channel> channels)
    : a_(std::move(a)), channels_(std::move(channels)) {
    if (a_.rows() < 1 || a_.rows() != a_.cols()) {
        throw std::invalid_argument("MultiChannelSystem: A must be square and nonempty");
    }
    if (channels_.empty()) {
        throw std::invalid_argument("MultiChannelSystem: at least one channel required");
    }
    for (std::size_t j = 0; j < channels_.size(); ++j) {
        const auto& c = channels_[j];
        if (c.input.rows() != a_.rows()) {
            throw std::invalid_argument("MultiChannelSystem: channel " + std::to_string(j + 1) +
                                        " row mismatch");
        }
        if (c.input.cols() < 1) {
            throw std::invalid_argument("MultiChannelSystem: channel " + std::to_string(j + 1) +
                                        " must have at least one input");
        }
        if (c.bound && *c.bound < 0.0) {
            throw std::invalid_argument("MultiChannelSystem: channel " + std::to_string(j + 1) +
                                        " has a negative bound");
        }
        offsets_.push_back(total_width_);
        total_width_ += c.input.cols();
    }
}

const Channel& MultiChannelSystem::channel(int id) const {
    if (id < 1 || id > channel_count()) {
        throw std::invalid_argument("MultiChannelSystem: unknown channel index " +
                                    std::to_string(id));
    }
    return channels_[static_cast<std::size_t>(id - 1)];
}

Eigen::Index MultiChannelSystem::channel_offset(int id) const {
    channel(id);  // bounds check
    return offsets_[static_cast<std::size_t>(id - 1)];
}

ChannelPattern::ChannelPattern(int channel_count, std::set<int> alive, std::string label)
    : channel_count_(channel_count), alive_(std::move(alive)), label_(std::move(label)) {
    for (int id : alive_) {
        if (id < 1 || id > channel_count_) {
            throw std::invalid_argument("ChannelPattern: unknown channel index " +
                                        std::to_string(id));
        }
    }
}

ChannelPattern ChannelPattern::all_alive(int channel_count) {
    std::set<int> alive;
    for (int j = 1; j <= channel_count; ++j) alive.insert(j);
    return ChannelPattern(channel_count, std::move(alive), "¬0");
}

ChannelPattern ChannelPattern::drop_channel(int channel_count, int removed) {
    if (removed < 1 || removed > channel_count) {
        throw std::invalid_argument("ChannelPattern: unknown channel index " +
                                    std::to_string(removed));
    }
    std::set<int> alive;
    for (int j = 1; j <= channel_count; ++j) {
        if (j != removed) alive.insert(j);
    }
    return ChannelPattern(channel_count, std::move(alive), "¬" + std::to_string(removed));
}

ChannelPattern ChannelPattern::from_alive(int channel_count, std::set<int> alive) {
    // Canonicalize: full set is "¬0", a single missing channel is "¬j".
    if (static_cast<int>(alive.size()) == channel_count) return all_alive(channel_count);
    if (static_cast<int>(alive.size()) == channel_count - 1) {
        for (int j = 1; j <= channel_count; ++j) {
            if (alive.count(j) == 0) return drop_channel(channel_count, j);
        }
    }
    std::string label = "alive:";
    bool first = true;
    for (int id : alive) {
        if (!first) label += ",";
        label += std::to_string(id);
        first = false;
    }
    return ChannelPattern(channel_count, std::move(alive), std::move(label));
}

ChannelPattern ChannelPattern::parse(const std::string& label, int channel_count) {
    std::string body;
    if (label.rfind("¬", 0) == 0) {
        body = label.substr(std::string("¬").size());
    } else if (label.rfind("not", 0) == 0) {
        body = label.substr(3);
    } else if (label.rfind("alive:", 0) == 0) {
        std::set<int> alive;
        std::stringstream ss(label.substr(6));
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (!item.empty()) alive.insert(std::stoi(item));
        }
        return from_alive(channel_count, std::move(alive));
    } else {
        throw std::invalid_argument("ChannelPattern: cannot parse label '" + label + "'");
    }
    int j = 0;
    try {
        j = std::stoi(body);
    } catch (const std::exception&) {
        throw std::invalid_argument("ChannelPattern: cannot parse label '" + label + "'");
    }
    return j == 0 ? all_alive(channel_count) : drop_channel(channel_count, j);
}

Eigen::MatrixXd input_matrix(const MultiChannelSystem& system, const ChannelPattern& pattern) {
    if (pattern.channel_count() != system.channel_count()) {
        throw std::invalid_argument("input_matrix: pattern was built for a different channel count");
    }
    Eigen::Index width = 0;
    for (int id : pattern.alive()) width += system.channel_width(id);
    Eigen::MatrixXd stacked(system.state_dim(), width);
    Eigen::Index col = 0;
    for (int id : pattern.alive()) {
        const auto& b = system.channel(id).input;
        stacked.middleCols(col, b.cols()) = b;
        col += b.cols();
    }
    return stacked;
}

std::string check_admissible(const MultiChannelSystem& system, const ControlSignal& u) {
    if (u.values.rows() != system.total_input_width()) {
        return "control has " + std::to_string(u.values.rows()) + " rows, expected " +
               std::to_string(system.total_input_width());
    }
    for (int id = 1; id <= system.channel_count(); ++id) {
        const auto& bound = system.channel(id).bound;
        if (!bound) continue;
        const auto block = u.values.middleRows(system.channel_offset(id), system.channel_width(id));
        const double peak = block.size() > 0 ? block.cwiseAbs().maxCoeff() : 0.0;
        if (peak > *bound + 1e-12) {
            return "channel " + std::to_string(id) + " exceeds its bound (" +
                   std::to_string(peak) + " > " + std::to_string(*bound) + ")";
        }
    }
    return {};
}

ControlSignal shift_pieces(const ControlSignal& u, Eigen::Index k) {
    if (k < 0 || k > u.pieces()) {
        throw std::invalid_argument("shift_pieces: shift outside the signal horizon");
    }
    return ControlSignal{u.dt, u.values.rightCols(u.pieces() - k)};
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> exponential_propagators(const Eigen::MatrixXd& a,
                                                                    double h) {
    const Eigen::Index n = a.rows();
    Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    aug.topLeftCorner(n, n) = a * h;
    aug.topRightCorner(n, n) = Eigen::MatrixXd::Identity(n, n) * h;
    const Eigen::MatrixXd e = aug.exp();
    return {e.topLeftCorner(n, n), e.topRightCorner(n, n)};
}

Trajectory simulate(const MultiChannelSystem& system, const ChannelPattern& pattern,
                    const Eigen::VectorXd& x0, const ControlSignal& u, const SamplingGrid& grid) {
    const Eigen::Index n = system.state_dim();
    if (x0.size() != n) {
        throw std::invalid_argument("simulate: initial state has dimension " +
                                    std::to_string(x0.size()) + ", expected " + std::to_string(n));
    }
    if (pattern.channel_count() != system.channel_count()) {
        throw std::invalid_argument("simulate: pattern was built for a different channel count");
    }
    if (u.pieces() > 0 && u.values.rows() != system.total_input_width()) {
        throw std::invalid_argument("simulate: control rows do not match the system input width");
    }
    if (u.pieces() > 0 && !(u.dt > 0.0)) {
        throw std::invalid_argument("simulate: piece width must be positive");
    }
    const int spp = std::max(1, grid.samples_per_piece);
    const double h = u.dt / static_cast<double>(spp);

    Trajectory traj;
    traj.times.reserve(static_cast<std::size_t>(u.pieces()) * spp + 1);
    traj.states.reserve(traj.times.capacity());
    traj.times.push_back(0.0);
    traj.states.push_back(x0);
    if (u.pieces() == 0) return traj;

    const auto [phi, gamma] = exponential_propagators(system.dynamics(), h);
    Eigen::VectorXd x = x0;
    for (Eigen::Index piece = 0; piece < u.pieces(); ++piece) {
        // Drive d = sum over alive channels of B_j u_j, accumulated in channel
        // order so restriction consistency holds exactly.
        Eigen::VectorXd drive = Eigen::VectorXd::Zero(n);
        for (int id : pattern.alive()) {
            drive += system.channel(id).input *
                     u.values.col(piece).segment(system.channel_offset(id),
                                                 system.channel_width(id));
        }
        for (int s = 1; s <= spp; ++s) {
            x = phi * x + gamma * drive;
            traj.times.push_back(static_cast<double>(piece) * u.dt +
                                 static_cast<double>(s) * h);
            traj.states.push_back(x);
        }
    }
    return traj;
}

namespace {

using nlohmann::json;

bool read_matrix(const json& j, Eigen::MatrixXd& out, std::string& err) {
    if (!j.is_array() || j.empty()) {
        err = "matrix must be a nonempty array of rows";
        return false;
    }
    const std::size_t rows = j.size();
    std::size_t cols = 0;
    if (!j[0].is_array()) {
        err = "matrix rows must be arrays";
        return false;
    }
    cols = j[0].size();
    out.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
        if (!j[r].is_array() || j[r].size() != cols) {
            err = "matrix rows are ragged";
            return false;
        }
        for (std::size_t c = 0; c < cols; ++c) {
            if (!j[r][c].is_number()) {
                err = "matrix entries must be numbers";
                return false;
            }
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                j[r][c].get<double>();
        }
    }
    return true;
}

}  // namespace

SystemValidation validate_system(const std::string& json_text) {
    SystemValidation result;
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        result.violations.push_back(std::string("invalid JSON: ") + e.what());
        return result;
    }
    if (!j.is_object()) {
        result.violations.push_back("system description must be a JSON object");
        return result;
    }

    Eigen::MatrixXd a;
    if (!j.contains("A")) {
        result.violations.push_back("missing field \"A\"");
    } else {
        std::string err;
        if (!read_matrix(j["A"], a, err)) {
            result.violations.push_back("field \"A\": " + err);
        } else if (a.rows() != a.cols()) {
            result.violations.push_back("field \"A\": matrix must be square");
        }
    }

    std::vector<Channel> channels;
    if (!j.contains("channels") || !j["channels"].is_array()) {
        result.violations.push_back("missing or invalid field \"channels\"");
    } else if (j["channels"].empty()) {
        result.violations.push_back("at least one channel is required (N = 0)");
    } else {
        int id = 0;
        for (const auto& cj : j["channels"]) {
            ++id;
            const std::string where = "channel " + std::to_string(id);
            if (!cj.is_object() || !cj.contains("B")) {
                result.violations.push_back(where + ": missing field \"B\"");
                continue;
            }
            Channel c;
            std::string err;
            if (!read_matrix(cj["B"], c.input, err)) {
                result.violations.push_back(where + ": " + err);
                continue;
            }
            if (a.rows() > 0 && c.input.rows() != a.rows()) {
                result.violations.push_back(where + ": row mismatch (" +
                                            std::to_string(c.input.rows()) + " rows under " +
                                            std::to_string(a.rows()) + "x" +
                                            std::to_string(a.cols()) + " A)");
            }
            if (cj.contains("bound") && !cj["bound"].is_null()) {
                if (!cj["bound"].is_number()) {
                    result.violations.push_back(where + ": bound must be a number or null");
                } else {
                    c.bound = cj["bound"].get<double>();
                    if (*c.bound < 0.0) {
                        result.violations.push_back(where + ": negative bound");
                    }
                }
            }
            channels.push_back(std::move(c));
        }
    }

    if (result.violations.empty()) {
        result.system.emplace(std::move(a), std::move(channels));
    }
    return result;
}

MultiChannelSystem load_system(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("load_system: file not found: " + path);
    }
    std::stringstream buf;
    buf << in.rdbuf();
    SystemValidation v = validate_system(buf.str());
    if (!v.system) {
        std::string msg = "load_system: invalid system in " + path + ":";
        for (const auto& violation : v.violations) msg += "\n  - " + violation;
        throw std::runtime_error(msg);
    }
    return std::move(*v.system);
}

}  // namespace invariance
