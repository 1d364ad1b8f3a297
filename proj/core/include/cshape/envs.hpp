#pragma once

#include "cshape/cmdp.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>

namespace cshape {

// ---------------------------------------------------------------------------
// Random tabular CMDPs
// ---------------------------------------------------------------------------

struct RandomCMDPConfig {
    int n_states = 8;
    int n_actions = 3;
    int n_noise = 4;
    double reward_low = 0.0;
    double reward_high = 1.0;  // becomes the declared bound b
    double confound_strength = 1.0;  // kappa in [0, 1]
    double gamma = 0.9;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Random CMDP whose demonstrator sees U.
///
/// For every (s, u) the generator picks a "privileged" action m(s, u) and
/// permutes the rewards r(s, ., u) so that m(s, u) carries the largest one;
/// m(s, .) is onto the action set whenever n_noise >= n_actions. Each (s, u)
/// then flips a coin with success probability kappa: on success the
/// demonstrator plays m(s, u), otherwise a fixed per-state action. Transitions
/// and rewards always depend on u.
TabularCMDP gen_random_tabular(const RandomCMDPConfig& cfg);

/// Control instance without confounding but with full (s, x) support: the
/// noise factors as u = (u_behavior, u_env); behavior reads only u_behavior and
/// the mechanisms read only u_env. n_noise in the result is
/// n_actions * cfg.n_noise.
TabularCMDP gen_unconfounded_tabular(const RandomCMDPConfig& cfg);

RandomCMDPConfig random_cmdp_config_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Continuous environments
// ---------------------------------------------------------------------------

struct ActionBounds {
    double low = -1.0;
    double high = 1.0;
};

struct StepOutcome {
    RealVec obs;  // full (unmasked) observation after the step
    double reward = 0.0;
    bool done = false;       // true termination
    bool truncated = false;  // time limit reached
};

/// A continuous control task with a hidden per-episode context that
/// privileged demonstrators may read. Instances are single-owner and mutable.
class ContinuousEnv {
public:
    virtual ~ContinuousEnv() = default;

    virtual std::string id() const = 0;
    virtual int obs_dim() const = 0;
    virtual int action_dim() const = 0;
    virtual std::vector<ActionBounds> action_bounds() const = 0;
    virtual double reward_bound() const = 0;
    virtual int episode_len() const = 0;

    /// Deterministic given the seed. Returns the full observation.
    virtual RealVec reset(std::uint64_t seed) = 0;
    /// Interventional step: the action comes from outside the environment.
    virtual StepOutcome step(std::span<const double> action) = 0;
    virtual RealVec observation() const = 0;
    /// Hidden confounder visible only to privileged demonstrators.
    virtual RealVec privileged_context() const = 0;

    virtual std::unique_ptr<ContinuousEnv> clone() const = 0;
};

/// Demonstrator policy: sees the full observation and the hidden context.
using BehaviorPolicy =
    std::function<RealVec(std::span<const double> full_obs, std::span<const double> context, Rng& rng)>;

struct PointMassConfig {
    double dt = 0.05;
    int episode_len = 200;
    double drift_std = 0.1;  // wind magnitude
    std::array<double, 2> goal{0.0, 0.0};
    double action_bound = 1.0;
    double damping = 0.5;         // velocity decay rate per second
    double start_radius = 1.0;    // start positions uniform in [-r, r]^2
    std::optional<std::array<double, 2>> fixed_start;
    bool per_step_wind = false;
    MaskSpec mask{{2, 3}, 4};
    std::uint64_t seed = 0;

    void validate() const;
};

PointMassConfig point_mass_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PointMassConfig& cfg);

/// 2-D point mass: state [pos_x, pos_y, vel_x, vel_y]; action is an
/// acceleration command; a hidden wind w ~ N(0, drift_std^2 I) is added to it.
/// Reward -||pos - goal|| - 0.01 ||a||^2 <= 0, so the declared bound b is 0.
class PointMassEnv final : public ContinuousEnv {
public:
    explicit PointMassEnv(PointMassConfig cfg);

    std::string id() const override { return "point-mass"; }
    int obs_dim() const override { return 4; }
    int action_dim() const override { return 2; }
    std::vector<ActionBounds> action_bounds() const override;
    double reward_bound() const override { return 0.0; }
    int episode_len() const override { return cfg_.episode_len; }

    RealVec reset(std::uint64_t seed) override;
    StepOutcome step(std::span<const double> action) override;
    RealVec observation() const override;
    RealVec privileged_context() const override { return {wind_[0], wind_[1]}; }
    std::unique_ptr<ContinuousEnv> clone() const override { return std::make_unique<PointMassEnv>(*this); }

    const PointMassConfig& config() const noexcept { return cfg_; }
    /// Sets the state directly (tests and reversibility checks).
    void set_state(std::array<double, 4> state, std::array<double, 2> wind);

private:
    PointMassConfig cfg_;
    Rng rng_;
    std::array<double, 2> pos_{};
    std::array<double, 2> vel_{};
    std::array<double, 2> wind_{};
    int t_ = 0;
};

std::unique_ptr<ContinuousEnv> make_point_mass(const PointMassConfig& cfg);

enum class Skill { simple, medium, expert };

Skill skill_from_string(const std::string& name);
std::string to_string(Skill skill);

/// Scripted demonstrators for the point mass. expert is a PD controller that
/// cancels the wind exactly; medium halves the gains and adds N(0, 0.2^2)
/// action noise; simple draws uniformly within the action bounds.
BehaviorPolicy scripted_behavior(const PointMassConfig& cfg, Skill skill);

/// PD gains of the expert controller.
inline constexpr double kExpertKp = 4.0;
inline constexpr double kExpertKd = 3.0;

}  // namespace cshape
