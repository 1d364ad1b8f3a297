#pragma once

#include "cshape/common.hpp"

#include <nlohmann/json.hpp>

#include <span>
#include <string>
#include <vector>

namespace cshape {

/// Tabular confounded MDP. All stochasticity lives in the discrete exogenous
/// noise U; the action, reward and transition mechanisms are deterministic
/// functions of (s, u) and (s, x, u).
///
/// Layout of the flat mechanism tables:
///   transition[(s * n_actions + x) * n_noise + u]
///   reward    [(s * n_actions + x) * n_noise + u]
///   behavior  [s * n_noise + u]
class TabularCMDP {
public:
    struct Tables {
        int n_states = 0;
        int n_actions = 0;
        int n_noise = 0;
        RealVec noise_probs;
        std::vector<int> transition;
        std::vector<int> behavior;
        RealVec reward;
        double gamma = 0.99;
        double reward_bound = 0.0;
        RealVec initial_state_probs;
    };

    /// Validates every structural invariant; throws std::invalid_argument on violation.
    explicit TabularCMDP(Tables tables);

    int n_states() const noexcept { return t_.n_states; }
    int n_actions() const noexcept { return t_.n_actions; }
    int n_noise() const noexcept { return t_.n_noise; }
    double gamma() const noexcept { return t_.gamma; }
    double reward_bound() const noexcept { return t_.reward_bound; }
    const RealVec& noise_probs() const noexcept { return t_.noise_probs; }
    const RealVec& initial_state_probs() const noexcept { return t_.initial_state_probs; }
    const Tables& tables() const noexcept { return t_; }

    int next_state(int s, int x, int u) const { return t_.transition[sxu(s, x, u)]; }
    int behavior_action(int s, int u) const { return t_.behavior[static_cast<std::size_t>(s) * t_.n_noise + u]; }
    double reward(int s, int x, int u) const { return t_.reward[sxu(s, x, u)]; }

    void check_state(int s) const;
    void check_action(int x) const;

    bool operator==(const TabularCMDP& other) const;

private:
    std::size_t sxu(int s, int x, int u) const {
        return (static_cast<std::size_t>(s) * t_.n_actions + x) * t_.n_noise + u;
    }

    Tables t_;
};

struct BehavioralStep {
    int noise = 0;
    int action = 0;
    double reward = 0.0;
    int next_state = 0;
};

struct InterventionalStep {
    double reward = 0.0;
    int next_state = 0;
};

/// Offline semantics: nature draws u, the demonstrator acts on (s, u).
BehavioralStep behavioral_step(const TabularCMDP& cmdp, int s, Rng& rng);

/// Online semantics do(x): u is drawn independently of the supplied action.
InterventionalStep interventional_step(const TabularCMDP& cmdp, int s, int x, Rng& rng);

int sample_initial_state(const TabularCMDP& cmdp, Rng& rng);

/// Plain finite MDP: T[(s*A + x)*S + s'] and expected reward R[s*A + x].
struct TabularMDP {
    int n_states = 0;
    int n_actions = 0;
    RealVec transition;
    RealVec reward;

    double t(int s, int x, int s_next) const {
        return transition[(static_cast<std::size_t>(s) * n_actions + x) * n_states + s_next];
    }
    double r(int s, int x) const { return reward[static_cast<std::size_t>(s) * n_actions + x]; }
};

/// Interventional transition and reward obtained by summing the mechanisms over P(U).
TabularMDP exact_interventional_model(const TabularCMDP& cmdp);

/// Indices of a full observation vector removed before anything reaches a learner.
struct MaskSpec {
    std::vector<int> hidden_dims;  // sorted, unique
    int full_dim = 0;

    MaskSpec() = default;
    MaskSpec(std::vector<int> hidden, int full_dim);

    int masked_dim() const noexcept { return full_dim - static_cast<int>(hidden_dims.size()); }
    bool hides(int dim) const;

    /// "1,3" style list used in dataset headers; empty string for no hidden dims.
    std::string to_list() const;
    static MaskSpec from_list(const std::string& list, int full_dim);

    bool operator==(const MaskSpec&) const = default;
};

RealVec mask_observation(std::span<const double> full, const MaskSpec& mask);

/// One offline or online step. Tabular environments store indices as single doubles.
struct Transition {
    RealVec obs;
    RealVec action;
    double reward = 0.0;
    RealVec next_obs;
    bool done = false;
    int episode_id = 0;
    int step_index = 0;

    bool operator==(const Transition&) const = default;
};

nlohmann::json to_json(const TabularCMDP& cmdp);
TabularCMDP cmdp_from_json(const nlohmann::json& doc);

}  // namespace cshape
