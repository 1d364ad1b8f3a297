#pragma once

#include "cshape/dataset.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <optional>
#include <utility>
#include <vector>

namespace cshape {

/// Samples are rows.
using SampleMatrix = Eigen::MatrixXd;

struct CITestConfig {
    int n_random_features = 64;  // Fourier features for the conditioning set
    int n_xy_features = 5;       // Fourier features for X and for Y
    std::optional<double> fixed_bandwidth;  // median heuristic when absent
    int n_permutations = 500;
    double alpha = 0.01;
    std::uint64_t seed = 0;

    void validate() const;
};

CITestConfig ci_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CITestConfig& cfg);

struct CITestResult {
    double statistic = 0.0;
    double p_value = 1.0;
    std::size_t n = 0;
    bool rejected = false;
};

/// Tests X independent of Y given Z. Columns are standardized, mapped through
/// random Fourier features, residualized on the Z features by ridge
/// regression (lambda = 1e-3 n), and compared through the squared Frobenius
/// norm of the residual cross-covariance. The p-value permutes the X
/// residual rows and uses the add-one correction. Z may have zero columns.
CITestResult ci_test(const SampleMatrix& x, const SampleMatrix& y, const SampleMatrix& z, const CITestConfig& cfg);

/// Median pairwise Euclidean distance over at most 1024 rows.
double median_heuristic(const SampleMatrix& data, Rng& rng);

struct AuditResult {
    CITestResult transition;  // hidden _||_ next_obs | action, obs
    CITestResult behavior;    // hidden _||_ action | obs
    bool confounded() const noexcept { return transition.rejected && behavior.rejected; }
};

nlohmann::json to_json(const AuditResult& audit);

/// Uses column `hidden_dim` of the unmasked trace (one row per transition).
/// Constant columns of the response and conditioning sets are dropped first;
/// a test whose response is entirely constant reports p = 1.
AuditResult confounding_audit(const TrajectoryDataset& ds, const std::vector<RealVec>& full_trace, int hidden_dim,
                              const CITestConfig& cfg);

/// Same, reading the privileged stream stored with the dataset.
AuditResult confounding_audit(const TrajectoryDataset& ds, int hidden_dim, const CITestConfig& cfg);

/// Copy of the dataset whose privileged stream gains a trailing N(0, 1)
/// column, the noise control for the audit. Returns the column index too.
std::pair<TrajectoryDataset, int> with_noise_channel(const TrajectoryDataset& ds, Rng& rng);

/// Undiscounted within-episode suffix sums of rewards.
std::vector<double> returns_to_go(const TrajectoryDataset& ds);

struct DependenceRow {
    int dim = 0;
    double statistic = 0.0;
    double p_value = 1.0;
    bool rejected = false;
};

/// One test per observation dimension: obs[dim] vs returns-to-go given the
/// remaining observation dimensions and the action. Sorted by statistic,
/// largest first.
std::vector<DependenceRow> dependence_report(const TrajectoryDataset& ds, const std::vector<int>& dims,
                                             const CITestConfig& cfg);

}  // namespace cshape
