#pragma once

#include "cshape/envs.hpp"
#include "cshape/nn.hpp"
#include "cshape/shaping.hpp"
#include "cshape/tabular_solver.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <vector>

namespace cshape {

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

struct ReplayItem {
    RealVec obs;
    RealVec action;
    double reward = 0.0;         // raw environment reward
    double train_reward = 0.0;   // reward used by the critic target (shaped or raw)
    RealVec next_obs;
    bool done = false;
};

/// Fixed-capacity ring buffer with uniform sampling over its contents.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity);

    void push(ReplayItem item);
    std::size_t size() const noexcept { return items_.size(); }
    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t inserted() const noexcept { return inserted_; }
    const ReplayItem& at(std::size_t i) const { return items_.at(i); }

    /// Uniform indices with replacement.
    std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const;

private:
    std::size_t capacity_;
    std::size_t inserted_ = 0;
    std::vector<ReplayItem> items_;
};

// ---------------------------------------------------------------------------
// Soft actor-critic
// ---------------------------------------------------------------------------

struct SACConfig {
    int total_steps = 50000;
    int batch_size = 512;
    double lr_policy = 3e-4;
    double lr_q = 1e-3;
    double alpha = 0.2;
    double gamma = 0.99;
    double tau = 0.005;
    int target_update_interval = 1;
    int policy_train_freq = 2;
    int gradient_steps = 1;
    int replay_capacity = 1000000;
    int warmup_steps = 1000;
    int eval_interval = 2500;
    int eval_episodes = 5;
    int hidden_dim = 256;
    int n_residual_blocks = 1;
    std::uint64_t seed = 0;

    void validate() const;
};

SACConfig sac_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SACConfig& cfg);

/// Columns are examples; actions are in environment units.
struct SacBatch {
    nn::Matrix obs;
    nn::Matrix action;
    nn::Vector reward;  // train_reward of the sampled items
    nn::Matrix next_obs;
    nn::Vector done;
};

SacBatch gather_batch(const ReplayBuffer& buffer, const std::vector<std::size_t>& indices);

/// Tanh-squashed diagonal Gaussian actor and twin Q critics.
struct SacNets {
    nn::Mlp actor;   // obs -> (mean, log_std) of the pre-squash Gaussian
    nn::Mlp critic;  // (obs, action) -> Q
    nn::ParamStore actor_params;
    nn::ParamStore q1, q2, q1_target, q2_target;
    nn::Vector action_center;  // (high + low) / 2
    nn::Vector action_scale;   // (high - low) / 2

    static SacNets create(int obs_dim, const std::vector<ActionBounds>& bounds, int hidden_dim, int n_blocks, Rng& rng);
    int obs_dim() const noexcept { return actor.spec().input_dim; }
    int action_dim() const noexcept { return static_cast<int>(action_center.size()); }
};

struct ActorSample {
    nn::GaussianHead head;
    nn::Matrix eps;
    nn::Matrix pre_squash;  // u = mean + sigma * eps
    nn::Matrix squashed;    // tanh(u)
    nn::Matrix action;      // center + scale * tanh(u)
    nn::Vector log_prob;    // includes the exact tanh and scale log-det terms
};

ActorSample actor_sample(const SacNets& nets, const nn::ParamStore& actor_params, const nn::Matrix& obs,
                         const nn::Matrix& eps);

/// Entropy-regularized bootstrap target. `q1_next`/`q2_next` receive each
/// critic's individual target (before the minimum) when non-null.
nn::Vector critic_targets(const SacNets& nets, const SacBatch& batch, const nn::Matrix& eps_next, double alpha,
                          double gamma, nn::Vector* q1_next = nullptr, nn::Vector* q2_next = nullptr);

/// mean (Q1 - y)^2 + mean (Q2 - y)^2; gradients for each critic's parameters.
double critic_loss(const SacNets& nets, const nn::ParamStore& q1, const nn::ParamStore& q2, const SacBatch& batch,
                   const nn::Vector& targets, nn::Vector* grad_q1, nn::Vector* grad_q2);

/// mean alpha log pi(a~|s) - min(Q1, Q2)(s, a~) with a~ reparameterized by eps;
/// gradient w.r.t. the actor parameters only.
double actor_loss(const SacNets& nets, const nn::ParamStore& actor_params, const nn::Matrix& obs, const nn::Matrix& eps,
                  double alpha, nn::Vector* grad);

/// Owns networks and optimizer state; one object per training run.
class SacLearner {
public:
    SacLearner(int obs_dim, const std::vector<ActionBounds>& bounds, const SACConfig& cfg, Rng& rng);

    double update_critic(const SacBatch& batch, Rng& rng);
    double update_actor(const nn::Matrix& obs, Rng& rng);
    void update_targets();

    RealVec act(std::span<const double> obs, Rng& rng) const;
    RealVec act_mean(std::span<const double> obs) const;

    const SacNets& nets() const noexcept { return nets_; }
    SacNets& nets() noexcept { return nets_; }

private:
    SACConfig cfg_;
    SacNets nets_;
    nn::AdamState actor_opt_, q1_opt_, q2_opt_;
};

/// Deterministic policy on masked observations.
using ActionFn = std::function<RealVec(std::span<const double> obs)>;

struct SacPolicy {
    nn::Mlp actor;
    nn::ParamStore params;
    nn::Vector action_center;
    nn::Vector action_scale;

    /// center + scale * tanh(mean(obs))
    RealVec mean_action(std::span<const double> obs) const;
    ActionFn as_function() const;
};

void save_policy(const SacPolicy& policy, const std::filesystem::path& path);
SacPolicy load_policy(const std::filesystem::path& path);

struct CurvePoint {
    int step = 0;
    double eval_mean = 0.0;
    double eval_std = 0.0;
    int episodes = 0;  // training episodes finished so far
};

struct SacResult {
    std::vector<CurvePoint> curve;
    SacPolicy policy;
    std::vector<double> critic_loss_history;  // mean per eval interval
};

/// Trains on masked observations; shaping only alters the critic targets.
SacResult sac_train(const ContinuousEnv& env, const MaskSpec& mask, const std::optional<ShapingConfig>& shaping,
                    const SACConfig& cfg);

/// Per-episode sums of raw rewards under a deterministic policy. Episode
/// seeds come from a generator seeded with `seed`.
std::vector<double> evaluate(const ActionFn& policy, const ContinuousEnv& env, const MaskSpec& mask, int n_episodes,
                             std::uint64_t seed);

void write_curve_csv(const std::vector<CurvePoint>& curve, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Tabular Q-learning
// ---------------------------------------------------------------------------

struct QLearningConfig {
    int steps = 20000;
    double lr = 0.1;
    double eps_start = 1.0;
    double eps_end = 0.05;
    int eps_decay_steps = 10000;
    int horizon = 200;
    int check_interval = 100;  // greedy-policy checks for the curve

    void validate() const;
};

struct QCurvePoint {
    int step = 0;
    double greedy_return = 0.0;  // exact interventional return of greedy(Q)
    bool matches_reference = false;
};

struct QLearningResult {
    std::vector<double> q;  // (s * A + x)
    std::vector<QCurvePoint> curve;
    /// First check step after which greedy(Q) equals the reference policy at
    /// every later check; absent when it never settles.
    std::optional<int> steps_to_reference;
};

TabularPolicy greedy_from_q(const std::vector<double>& q, int n_states, int n_actions);

/// Temporal-difference control with epsilon-greedy exploration through
/// interventional steps. Shaping, when given, uses the state index as the
/// observation.
QLearningResult q_learning_tabular(const TabularCMDP& cmdp, const std::optional<ShapingConfig>& shaping,
                                   const QLearningConfig& cfg, Rng& rng,
                                   const std::optional<TabularPolicy>& reference = std::nullopt);

}  // namespace cshape
