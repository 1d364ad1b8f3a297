#include "cshape/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cshape {

void RandomCMDPConfig::validate() const {
    if (n_states <= 0 || n_actions <= 0 || n_noise <= 0) throw ConfigError("random cmdp: sizes must be positive");
    if (!(confound_strength >= 0.0 && confound_strength <= 1.0))
        throw ConfigError("random cmdp: confound_strength must lie in [0,1]");
    if (!(reward_low < reward_high)) throw ConfigError("random cmdp: reward_range low must be < high");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("random cmdp: gamma must lie in (0,1)");
}

namespace {

RealVec random_simplex(int n, Rng& rng) {
    RealVec p(static_cast<std::size_t>(n));
    for (double& v : p) v = 0.5 + uniform01(rng);
    const double sum = std::accumulate(p.begin(), p.end(), 0.0);
    for (double& v : p) v /= sum;
    // push the rounding residue into the largest entry
    const double residue = 1.0 - std::accumulate(p.begin(), p.end(), 0.0);
    *std::max_element(p.begin(), p.end()) += residue;
    return p;
}

int uniform_index(int n, Rng& rng) {
    return std::uniform_int_distribution<int>(0, n - 1)(rng);
}

/// Onto map u -> action for each state (when n_noise >= n_actions).
std::vector<int> covering_assignment(int n_noise, int n_actions, Rng& rng) {
    std::vector<int> out(static_cast<std::size_t>(n_noise));
    for (int u = 0; u < n_noise; ++u) out[u] = u < n_actions ? u : uniform_index(n_actions, rng);
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

}  // namespace

TabularCMDP gen_random_tabular(const RandomCMDPConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const int S = cfg.n_states, A = cfg.n_actions, U = cfg.n_noise;
    TabularCMDP::Tables t;
    t.n_states = S;
    t.n_actions = A;
    t.n_noise = U;
    t.gamma = cfg.gamma;
    t.reward_bound = cfg.reward_high;
    t.noise_probs = random_simplex(U, rng);
    t.initial_state_probs.assign(static_cast<std::size_t>(S), 1.0 / S);
    {
        const double residue = 1.0 - std::accumulate(t.initial_state_probs.begin(), t.initial_state_probs.end(), 0.0);
        t.initial_state_probs[0] += residue;
    }
    t.transition.resize(static_cast<std::size_t>(S) * A * U);
    t.reward.resize(static_cast<std::size_t>(S) * A * U);
    t.behavior.resize(static_cast<std::size_t>(S) * U);

    const double span = cfg.reward_high - cfg.reward_low;
    for (int s = 0; s < S; ++s) {
        const std::vector<int> privileged = covering_assignment(U, A, rng);
        const int base_action = uniform_index(A, rng);
        for (int u = 0; u < U; ++u) {
            RealVec r(static_cast<std::size_t>(A));
            for (double& v : r) v = std::clamp(cfg.reward_low + span * uniform01(rng), cfg.reward_low, cfg.reward_high);
            const int best = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
            std::swap(r[best], r[privileged[u]]);
            for (int x = 0; x < A; ++x) {
                const std::size_t i = (static_cast<std::size_t>(s) * A + x) * U + u;
                t.reward[i] = r[x];
                t.transition[i] = uniform_index(S, rng);
            }
            const bool confounded = uniform01(rng) < cfg.confound_strength;
            t.behavior[static_cast<std::size_t>(s) * U + u] = confounded ? privileged[u] : base_action;
        }
    }
    return TabularCMDP(std::move(t));
}

TabularCMDP gen_unconfounded_tabular(const RandomCMDPConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    const int S = cfg.n_states, A = cfg.n_actions, E = cfg.n_noise;
    const int U = A * E;  // u = ub * E + ue
    const RealVec pe = random_simplex(E, rng);
    const RealVec pb = random_simplex(A, rng);

    TabularCMDP::Tables t;
    t.n_states = S;
    t.n_actions = A;
    t.n_noise = U;
    t.gamma = cfg.gamma;
    t.reward_bound = cfg.reward_high;
    t.noise_probs.resize(static_cast<std::size_t>(U));
    for (int ub = 0; ub < A; ++ub)
        for (int ue = 0; ue < E; ++ue) t.noise_probs[static_cast<std::size_t>(ub) * E + ue] = pb[ub] * pe[ue];
    {
        const double residue = 1.0 - std::accumulate(t.noise_probs.begin(), t.noise_probs.end(), 0.0);
        *std::max_element(t.noise_probs.begin(), t.noise_probs.end()) += residue;
    }
    t.initial_state_probs.assign(static_cast<std::size_t>(S), 1.0 / S);
    t.initial_state_probs[0] += 1.0 - std::accumulate(t.initial_state_probs.begin(), t.initial_state_probs.end(), 0.0);
    t.transition.resize(static_cast<std::size_t>(S) * A * U);
    t.reward.resize(static_cast<std::size_t>(S) * A * U);
    t.behavior.resize(static_cast<std::size_t>(S) * U);

    const double span = cfg.reward_high - cfg.reward_low;
    for (int s = 0; s < S; ++s) {
        std::vector<int> perm(static_cast<std::size_t>(A));
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        for (int x = 0; x < A; ++x) {
            for (int ue = 0; ue < E; ++ue) {
                const int next = uniform_index(S, rng);
                const double r = cfg.reward_low + span * uniform01(rng);
                for (int ub = 0; ub < A; ++ub) {
                    const std::size_t i = (static_cast<std::size_t>(s) * A + x) * U + ub * E + ue;
                    t.transition[i] = next;
                    t.reward[i] = r;
                }
            }
        }
        for (int ub = 0; ub < A; ++ub)
            for (int ue = 0; ue < E; ++ue) t.behavior[static_cast<std::size_t>(s) * U + ub * E + ue] = perm[ub];
    }
    return TabularCMDP(std::move(t));
}

RandomCMDPConfig random_cmdp_config_from_json(const nlohmann::json& j) {
    RandomCMDPConfig cfg;
    cfg.n_states = j.value("n_states", cfg.n_states);
    cfg.n_actions = j.value("n_actions", cfg.n_actions);
    cfg.n_noise = j.value("n_noise", cfg.n_noise);
    if (j.contains("reward_range")) {
        const auto& rr = j.at("reward_range");
        cfg.reward_low = rr.at(0).get<double>();
        cfg.reward_high = rr.at(1).get<double>();
    }
    cfg.confound_strength = j.value("confound_strength", cfg.confound_strength);
    cfg.gamma = j.value("gamma", cfg.gamma);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------

void PointMassConfig::validate() const {
    if (!(dt > 0.0)) throw ConfigError("point mass: dt must be positive");
    if (episode_len <= 0) throw ConfigError("point mass: episode_len must be positive");
    if (!(drift_std >= 0.0)) throw ConfigError("point mass: drift_std must be non-negative");
    if (!(action_bound > 0.0)) throw ConfigError("point mass: action_bound must be positive");
    if (mask.full_dim != 4) throw ConfigError("point mass: mask full_dim must be 4");
}

PointMassConfig point_mass_config_from_json(const nlohmann::json& j) {
    PointMassConfig cfg;
    cfg.dt = j.value("dt", cfg.dt);
    cfg.episode_len = j.value("episode_len", cfg.episode_len);
    cfg.drift_std = j.value("drift_std", cfg.drift_std);
    if (j.contains("goal")) cfg.goal = {j.at("goal").at(0).get<double>(), j.at("goal").at(1).get<double>()};
    cfg.action_bound = j.value("action_bound", cfg.action_bound);
    cfg.damping = j.value("damping", cfg.damping);
    cfg.start_radius = j.value("start_radius", cfg.start_radius);
    if (j.contains("fixed_start") && !j.at("fixed_start").is_null())
        cfg.fixed_start = std::array<double, 2>{j.at("fixed_start").at(0).get<double>(),
                                                j.at("fixed_start").at(1).get<double>()};
    cfg.per_step_wind = j.value("per_step_wind", cfg.per_step_wind);
    if (j.contains("mask")) cfg.mask = MaskSpec(j.at("mask").get<std::vector<int>>(), 4);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.validate();
    return cfg;
}

nlohmann::json to_json(const PointMassConfig& cfg) {
    nlohmann::json j = {{"dt", cfg.dt},
                        {"episode_len", cfg.episode_len},
                        {"drift_std", cfg.drift_std},
                        {"goal", cfg.goal},
                        {"action_bound", cfg.action_bound},
                        {"damping", cfg.damping},
                        {"start_radius", cfg.start_radius},
                        {"per_step_wind", cfg.per_step_wind},
                        {"mask", cfg.mask.hidden_dims},
                        {"seed", cfg.seed}};
    j["fixed_start"] = cfg.fixed_start ? nlohmann::json(*cfg.fixed_start) : nlohmann::json(nullptr);
    return j;
}

PointMassEnv::PointMassEnv(PointMassConfig cfg) : cfg_(std::move(cfg)), rng_(cfg_.seed) {
    cfg_.validate();
    reset(cfg_.seed);
}

std::vector<ActionBounds> PointMassEnv::action_bounds() const {
    return {{-cfg_.action_bound, cfg_.action_bound}, {-cfg_.action_bound, cfg_.action_bound}};
}

RealVec PointMassEnv::reset(std::uint64_t seed) {
    rng_.seed(seed);
    if (cfg_.fixed_start) {
        pos_ = *cfg_.fixed_start;
    } else {
        std::uniform_real_distribution<double> start(-cfg_.start_radius, cfg_.start_radius);
        pos_[0] = start(rng_);
        pos_[1] = start(rng_);
    }
    vel_ = {0.0, 0.0};
    wind_[0] = cfg_.drift_std * standard_normal(rng_);
    wind_[1] = cfg_.drift_std * standard_normal(rng_);
    t_ = 0;
    return observation();
}

StepOutcome PointMassEnv::step(std::span<const double> action) {
    if (action.size() != 2) throw std::invalid_argument("point mass: action must have 2 components");
    if (cfg_.per_step_wind) {
        wind_[0] = cfg_.drift_std * standard_normal(rng_);
        wind_[1] = cfg_.drift_std * standard_normal(rng_);
    }
    std::array<double, 2> a{};
    double action_sq = 0.0;
    for (int i = 0; i < 2; ++i) {
        a[i] = std::clamp(action[static_cast<std::size_t>(i)], -cfg_.action_bound, cfg_.action_bound);
        action_sq += a[i] * a[i];
    }
    const double decay = 1.0 - cfg_.damping * cfg_.dt;
    for (int i = 0; i < 2; ++i) {
        vel_[i] = decay * vel_[i] + cfg_.dt * (a[i] + wind_[i]);
        pos_[i] += cfg_.dt * vel_[i];
    }
    ++t_;
    StepOutcome out;
    out.obs = observation();
    out.reward = -std::hypot(pos_[0] - cfg_.goal[0], pos_[1] - cfg_.goal[1]) - 0.01 * action_sq;
    out.truncated = t_ >= cfg_.episode_len;
    return out;
}

RealVec PointMassEnv::observation() const { return {pos_[0], pos_[1], vel_[0], vel_[1]}; }

void PointMassEnv::set_state(std::array<double, 4> state, std::array<double, 2> wind) {
    pos_ = {state[0], state[1]};
    vel_ = {state[2], state[3]};
    wind_ = wind;
    t_ = 0;
}

std::unique_ptr<ContinuousEnv> make_point_mass(const PointMassConfig& cfg) {
    return std::make_unique<PointMassEnv>(cfg);
}

Skill skill_from_string(const std::string& name) {
    if (name == "simple") return Skill::simple;
    if (name == "medium") return Skill::medium;
    if (name == "expert") return Skill::expert;
    throw ConfigError("unknown skill '" + name + "'");
}

std::string to_string(Skill skill) {
    switch (skill) {
        case Skill::simple: return "simple";
        case Skill::medium: return "medium";
        case Skill::expert: return "expert";
    }
    return "?";
}

BehaviorPolicy scripted_behavior(const PointMassConfig& cfg, Skill skill) {
    const double bound = cfg.action_bound;
    const auto goal = cfg.goal;
    if (skill == Skill::simple) {
        return [bound](std::span<const double>, std::span<const double>, Rng& rng) {
            std::uniform_real_distribution<double> d(-bound, bound);
            const double ax = d(rng);
            const double ay = d(rng);
            return RealVec{ax, ay};
        };
    }
    const double gain = skill == Skill::expert ? 1.0 : 0.5;
    const double noise = skill == Skill::expert ? 0.0 : 0.2;
    return [=](std::span<const double> obs, std::span<const double> wind, Rng& rng) {
        RealVec a(2);
        for (std::size_t i = 0; i < 2; ++i) {
            a[i] = gain * (kExpertKp * (goal[i] - obs[i]) - kExpertKd * obs[i + 2]) - wind[i];
            if (noise > 0.0) a[i] += noise * standard_normal(rng);
            a[i] = std::clamp(a[i], -bound, bound);
        }
        return a;
    };
}

}  // namespace cshape
