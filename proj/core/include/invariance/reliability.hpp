#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "invariance/controlled_invariance.hpp"
#include "invariance/entropy.hpp"
#include "invariance/multichannel.hpp"
#include "invariance/subspace.hpp"

namespace invariance {

/// Initial region for reliability queries: a union of boxes living in a
/// carrier subspace that must sit inside the assessed target.
struct FailureRegion {
    Subspace carrier;
    std::vector<Box> boxes;
};

struct AssessOptions {
    std::vector<double> horizons = {3.0, 4.0, 5.0, 6.0};
    std::vector<double> epsilons = {0.5, 0.25};
    double grid_density = 0.0;  ///< 0 = automatic
    std::int64_t control_budget = 2000;
    double piece_width_hint = 0.02;
    double zero_rate_tol = 0.01;      ///< rate below which a scenario counts as zero-cost
    double ordering_tol = 0.1;        ///< slack for the unrestricted <= feedback-class check
    bool with_spectral = true;
    bool with_feedback_class = true;
};

/// Verdict strings used in reports.
inline constexpr const char* kVerdictZeroCost = "maintainable-zero-cost";
inline constexpr const char* kVerdictAtRate = "maintainable-at-rate";
inline constexpr const char* kVerdictNotMaintainable = "not-maintainable";

struct ScenarioAssessment {
    std::string pattern_label;
    std::vector<int> alive;
    bool invariant = false;
    Eigen::MatrixXd supremal_basis;  ///< supremal controlled-invariant subspace inside the target
    std::optional<double> friend_residual;  ///< present iff a friend exists
    EntropyEstimate covering;
    std::optional<double> spectral_rate;
    std::optional<EntropyEstimate> feedback;  ///< absent when no friend exists
    std::string verdict;
};

struct OrderingRecord {
    std::string pattern_label;
    std::string status;  ///< "holds" | "violated" | "incomparable"
    std::optional<double> unrestricted_rate;  ///< empty = infinite
    std::optional<double> feedback_rate;
};

struct ReliabilityReport {
    Eigen::Index state_dim = 0;
    int channel_count = 0;
    Eigen::MatrixXd target_basis;
    double target_tol = kDefaultTol;
    Eigen::MatrixXd region_carrier;
    std::vector<Box> region_boxes;
    std::vector<ScenarioAssessment> scenarios;
    Eigen::MatrixXd gap_matrix;  ///< pairwise gaps of the per-pattern supremal subspaces
    Eigen::MatrixXd robust_basis;  ///< joint fixed point across all patterns
    Eigen::Index intersection_dim = 0;  ///< plain intersection of per-pattern suprema
    bool intersection_invariant = false;  ///< is that intersection invariant for every pattern
    bool robust_matches_intersection = false;
    std::vector<OrderingRecord> orderings;
    AssessOptions options;

    bool all_maintainable() const;
};

/**
 * Per-pattern reliability assessment: exact-invariance test, supremal
 * subspace, friend synthesis, spectral and covering entropy, the joint
 * robust subspace, the gap matrix of the supremal lattice, and verdicts.
 */
ReliabilityReport assess(const MultiChannelSystem& system, const Subspace& v,
                         const FailureRegion& region,
                         const std::vector<ChannelPattern>& patterns,
                         const AssessOptions& options = {});

/// Checks the unrestricted-vs-feedback-class entropy ordering per scenario.
std::vector<OrderingRecord> compare_entropy_bounds(const ReliabilityReport& report,
                                                   double tol = 0.1);

/// Deterministic JSON serialization (sorted keys, round-trip exact numbers;
/// infinite quantities encode as null).
std::string report_to_json(const ReliabilityReport& report);

/// CSV of the entropy samples: T,epsilon,r_inv,log_r,pattern_set.
std::string entropy_samples_csv(const ReliabilityReport& report);

/// Deterministic JSON / CSV for a standalone entropy estimate.
std::string entropy_estimate_json(const EntropyEstimate& estimate);
std::string entropy_estimate_csv(const EntropyEstimate& estimate,
                                 const std::string& pattern_set_label);

void write_report(const ReliabilityReport& report, const std::string& json_path);
void write_entropy_csv(const ReliabilityReport& report, const std::string& csv_path);
ReliabilityReport read_report(const std::string& json_path);

}  // namespace invariance
