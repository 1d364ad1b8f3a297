#pragma once

#include "cshape/dataset.hpp"
#include "cshape/nn.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace cshape {

/// Conditional diagonal Gaussian y | x with a residual-MLP trunk.
class GaussianRegressor {
public:
    GaussianRegressor(int input_dim, int output_dim, int hidden_dim, int n_blocks, Rng& rng);

    int input_dim() const noexcept { return net_.spec().input_dim; }
    int output_dim() const noexcept { return net_.spec().output_dim / 2; }

    nn::GaussianHead predict(const nn::Matrix& x) const;

    /// Mean log-likelihood of y given x over the batch. When `grad` is given,
    /// the gradient of the *negative* mean log-likelihood is accumulated into it.
    double mean_log_likelihood(const nn::Matrix& x, const nn::Matrix& y, nn::Vector* grad = nullptr) const;

    nn::ParamStore& params() noexcept { return params_; }
    const nn::ParamStore& params() const noexcept { return params_; }
    const nn::Mlp& net() const noexcept { return net_; }

private:
    nn::Mlp net_;
    nn::ParamStore params_;
};

/// Behavioral policy model P(x | s) and state-difference model P(s' - s | s, x).
struct EnvModels {
    GaussianRegressor policy;
    GaussianRegressor statediff;
    std::vector<double> policy_loglik_history;     // training-set mean per epoch
    std::vector<double> statediff_loglik_history;  // training-set mean per epoch
};

enum class WeightMode { normalized, raw_density };

WeightMode weight_mode_from_string(const std::string& name);
std::string to_string(WeightMode mode);

struct PotentialTrainConfig {
    int env_model_epochs = 50;
    int value_epochs = 200;
    int batch_size = 1028;
    double lr_policy = 1e-4;
    double lr_statediff = 1e-5;
    double lr_value = 1e-4;
    double gamma = 0.99;
    double tau = 0.005;
    int policy_train_freq = 3;
    int n_candidates = 8;
    double duplicate_threshold = 1e-3;
    WeightMode weight_mode = WeightMode::normalized;
    int hidden_dim = 128;
    int n_residual_blocks = 3;
    bool normalize_rewards = true;
    std::optional<double> reward_bound;  // declared b in original units; dataset max when absent
    std::uint64_t seed = 0;

    void validate() const;
};

PotentialTrainConfig potential_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PotentialTrainConfig& cfg);

EnvModels train_env_models(const TrajectoryDataset& ds, const PotentialTrainConfig& cfg, Rng& rng);

/// Standard-normal draws consumed by one road-not-taken search, in a fixed
/// order so batched and per-example evaluations agree given the same stream.
struct RoadNoise {
    nn::Matrix candidates;   // action_dim x K
    nn::Matrix resample;     // action_dim x K (used only when no candidate survives)
    nn::Matrix score_delta;  // state_dim x K
    nn::Vector fresh_delta;  // state_dim

    static RoadNoise draw(int action_dim, int state_dim, int k, Rng& rng);
};

struct RoadNotTaken {
    RealVec action;       // x'
    RealVec delta;        // fresh s' - s draw given x'
    bool resampled = false;
    bool fallback = false;  // no candidate outside the exclusion ball; farthest one returned
};

/// Scores K behavioral-policy candidates x'' != x_obs by V(s + Delta'),
/// Delta' ~ P(. | s, x''), and returns the best one with a fresh Delta draw.
RoadNotTaken road_not_taken(const EnvModels& models, const nn::Mlp& value_net, const nn::ParamStore& value_params,
                            std::span<const double> s, std::span<const double> x_obs, int k, double duplicate_threshold,
                            Rng& rng);

/// Same search given pre-drawn noise.
RoadNotTaken road_not_taken(const EnvModels& models, const nn::Mlp& value_net, const nn::ParamStore& value_params,
                            std::span<const double> s, std::span<const double> x_obs, double duplicate_threshold,
                            const RoadNoise& noise);

struct PotentialNet {
    nn::Mlp value_net;
    nn::ParamStore params;
    nn::ParamStore target;
    double clip_ceiling = 0.0;   // normalized units
    double reward_offset = 0.0;  // mean removed from rewards before training
    double gamma = 0.99;

    /// min(value_net(s), clip_ceiling), in normalized units.
    double eval(std::span<const double> s) const;
    /// Potential in the original reward units (adds offset / (1 - gamma)).
    double eval_original(std::span<const double> s) const;
};

double eval_potential(const PotentialNet& net, std::span<const double> s);

/// Mini-batch view: columns are examples.
struct OfflineBatch {
    nn::Matrix obs;
    nn::Matrix action;
    nn::Vector reward;
    nn::Matrix next_obs;
    nn::Vector done;
};

OfflineBatch make_batch(const TrajectoryDataset& ds, std::span<const std::size_t> indices);

struct BackupStats {
    std::size_t dropped = 0;
    std::size_t fallbacks = 0;
    std::size_t resamples = 0;
};

struct BackupTargets {
    nn::Vector target;           // clipped targets (NaN for dropped examples)
    nn::Vector unclipped;        // before the ceiling
    nn::Vector w_observed;       // weight on the observed branch
    nn::Vector w_alternative;    // weight on the road-not-taken branch
    nn::Vector observed_branch;  // y + g V(s')
    nn::Vector alternative_branch;  // b_hat + g V(s + Delta)
    std::vector<bool> kept;
    BackupStats stats;
};

/// Parametrized causal backup for a batch. `value_params` scores candidate
/// actions; `target_params` supplies every bootstrapped value. Noise must hold
/// one RoadNoise per column.
BackupTargets causal_backup_estimate(const EnvModels& models, const nn::Mlp& value_net,
                                     const nn::ParamStore& value_params, const nn::ParamStore& target_params,
                                     const OfflineBatch& batch, const std::vector<RoadNoise>& noise, double b_hat,
                                     double gamma, WeightMode mode, double clip_ceiling, double duplicate_threshold);

/// 0.5 * mean (V(s) - target)^2 over kept examples; gradient w.r.t. the
/// online parameters only (targets are constants).
double residual_loss(const nn::Mlp& value_net, const nn::ParamStore& params, const nn::Matrix& obs,
                     const nn::Vector& target, const std::vector<bool>& kept, nn::Vector* grad);

struct PotentialReport {
    std::vector<double> loss_history;  // per epoch mean
    BackupStats stats;
    double b_hat = 0.0;       // normalized units
    double clip_ceiling = 0.0;
    double reward_offset = 0.0;
    std::vector<double> policy_loglik;
    std::vector<double> statediff_loglik;
};

nlohmann::json to_json(const PotentialReport& report);

struct TrainedPotential {
    PotentialNet net;
    PotentialReport report;
};

TrainedPotential train_potential(const TrajectoryDataset& ds, const EnvModels& models, const PotentialTrainConfig& cfg,
                                 Rng& rng);

/// Writes the value-network checkpoint plus a JSON sidecar (`<path>.json`)
/// with the architecture, clip ceiling, reward offset and discount.
void save_potential(const PotentialNet& net, const std::filesystem::path& path);
PotentialNet load_potential(const std::filesystem::path& path);

}  // namespace cshape
