#include "cshape/dataset.hpp"
#include "cshape/diagnostics.hpp"
#include "cshape/envs.hpp"
#include "cshape/tabular_solver.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace cshape;

namespace {

double episode_return(PointMassEnv& env, const BehaviorPolicy& policy, std::uint64_t seed, Rng& rng) {
    auto obs = env.reset(seed);
    double total = 0.0;
    for (;;) {
        const auto a = policy(obs, env.privileged_context(), rng);
        const auto out = env.step(a);
        total += out.reward;
        obs = out.obs;
        if (out.done || out.truncated) return total;
    }
}

}  // namespace

TEST_CASE("random CMDP with kappa 0 has u-independent behavior") {
    RandomCMDPConfig cfg;
    cfg.confound_strength = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        cfg.seed = seed;
        const auto cmdp = gen_random_tabular(cfg);
        for (int s = 0; s < cmdp.n_states(); ++s)
            for (int u = 1; u < cmdp.n_noise(); ++u) CHECK(cmdp.behavior_action(s, u) == cmdp.behavior_action(s, 0));
    }
}

TEST_CASE("random CMDP generation is deterministic") {
    RandomCMDPConfig cfg;
    cfg.seed = 77;
    CHECK(to_json(gen_random_tabular(cfg)).dump() == to_json(gen_random_tabular(cfg)).dump());
    cfg.seed = 78;
    CHECK(to_json(gen_random_tabular(cfg)).dump() != to_json(gen_random_tabular(RandomCMDPConfig{})).dump());
}

TEST_CASE("random CMDPs satisfy the structural invariants") {
    RandomCMDPConfig cfg;
    cfg.reward_low = -2.0;
    cfg.reward_high = 3.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        cfg.seed = seed;
        cfg.confound_strength = (seed % 5) / 4.0;
        const auto cmdp = gen_random_tabular(cfg);  // constructor validates
        CHECK(cmdp.reward_bound() == 3.0);
        const auto& t = cmdp.tables();
        CHECK(*std::max_element(t.reward.begin(), t.reward.end()) <= 3.0);
        CHECK(*std::min_element(t.reward.begin(), t.reward.end()) >= -2.0);
        CHECK(std::abs(std::accumulate(t.noise_probs.begin(), t.noise_probs.end(), 0.0) - 1.0) < 1e-12);
    }
}

TEST_CASE("random CMDP config validation") {
    RandomCMDPConfig cfg;
    cfg.confound_strength = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.reward_low = 1.0;
    cfg.reward_high = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_THROWS_AS(random_cmdp_config_from_json({{"gamma", 1.0}}), ConfigError);
    const auto parsed = random_cmdp_config_from_json({{"n_states", 5}, {"reward_range", {-1, 2}}});
    CHECK(parsed.n_states == 5);
    CHECK(parsed.reward_high == 2.0);
}

TEST_CASE("unconfounded generator: behavior and mechanisms read disjoint noise parts") {
    RandomCMDPConfig cfg;
    cfg.seed = 3;
    const auto cmdp = gen_unconfounded_tabular(cfg);
    CHECK(cmdp.n_noise() == cfg.n_actions * cfg.n_noise);
    // Every action is played somewhere at every state, so support is full.
    for (int s = 0; s < cmdp.n_states(); ++s) {
        std::vector<bool> seen(cmdp.n_actions(), false);
        for (int u = 0; u < cmdp.n_noise(); ++u) seen[cmdp.behavior_action(s, u)] = true;
        CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
    }
    // Observational estimates equal the interventional model: no confounding.
    const auto obs = exact_observational_model(cmdp);
    const auto mdp = exact_interventional_model(cmdp);
    for (int s = 0; s < cmdp.n_states(); ++s)
        for (int x = 0; x < cmdp.n_actions(); ++x) {
            CHECK(std::abs(obs.r(s, x) - mdp.r(s, x)) < 1e-12);
            for (int sp = 0; sp < cmdp.n_states(); ++sp) CHECK(std::abs(obs.t(s, x, sp) - mdp.t(s, x, sp)) < 1e-12);
        }
}

TEST_CASE("kappa 1 audit on 1e5 behavioral steps rejects") {
    RandomCMDPConfig cfg;
    cfg.seed = 5;
    const auto cmdp = gen_random_tabular(cfg);
    Rng rng(1);
    const auto ds = one_hot_embed(collect_tabular(cmdp, 100000, 200, rng), cmdp.n_states(), cmdp.n_actions());
    CITestConfig ci;
    ci.n_permutations = 200;
    const auto audit = confounding_audit(ds, cmdp.n_states(), ci);
    CHECK(audit.transition.p_value < 0.01);
    CHECK(audit.behavior.p_value < 0.01);
}

TEST_CASE("point mass zero action without wind keeps the position") {
    PointMassConfig cfg;
    cfg.drift_std = 0.0;
    cfg.fixed_start = std::array<double, 2>{0.6, -0.3};
    PointMassEnv env(cfg);
    env.reset(4);
    const double d0 = std::hypot(0.6, -0.3);
    for (int t = 0; t < 10; ++t) {
        const auto out = env.step(std::vector<double>{0.0, 0.0});
        CHECK(out.obs[0] == 0.6);
        CHECK(out.obs[1] == -0.3);
        CHECK(out.reward == doctest::Approx(-d0).epsilon(1e-15));
    }
}

TEST_CASE("point mass rewards never exceed the bound") {
    PointMassEnv env(PointMassConfig{});
    CHECK(env.reward_bound() == 0.0);
    Rng rng(9);
    std::uniform_real_distribution<double> a(-1.5, 1.5);
    int steps = 0;
    std::uint64_t ep = 0;
    env.reset(ep);
    while (steps < 10000) {
        const auto out = env.step(std::vector<double>{a(rng), a(rng)});
        CHECK(out.reward <= 0.0);
        ++steps;
        if (out.truncated) env.reset(++ep);
    }
}

TEST_CASE("point mass reset is deterministic per seed") {
    PointMassEnv env(PointMassConfig{});
    const auto a = env.reset(12);
    const auto wa = env.privileged_context();
    const auto b = env.reset(12);
    CHECK(a == b);
    CHECK(wa == env.privileged_context());
    CHECK(env.reset(13) != a);
}

TEST_CASE("point mass reverse action from rest returns to the start") {
    PointMassConfig cfg;
    cfg.drift_std = 0.0;
    PointMassEnv env(cfg);
    env.set_state({0.2, -0.4, 0.0, 0.0}, {0.0, 0.0});
    const double decay = 1.0 - cfg.damping * cfg.dt;
    const std::vector<double> a{0.3, -0.2};
    env.step(a);
    const auto out = env.step(std::vector<double>{-a[0] * (1.0 + decay), -a[1] * (1.0 + decay)});
    CHECK(std::abs(out.obs[0] - 0.2) < 1e-9);
    CHECK(std::abs(out.obs[1] + 0.4) < 1e-9);
}

TEST_CASE("expert controller reaches the goal under wind") {
    PointMassConfig cfg;
    cfg.drift_std = 0.1;
    PointMassEnv env(cfg);
    const auto expert = scripted_behavior(cfg, Skill::expert);
    Rng rng(0);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto obs = env.reset(seed);
        for (int t = 0; t < 200; ++t) obs = env.step(expert(obs, env.privileged_context(), rng)).obs;
        CHECK(std::hypot(obs[0] - cfg.goal[0], obs[1] - cfg.goal[1]) < 0.05);
    }
    // Corners of the start box too.
    for (double x : {-1.0, 1.0})
        for (double y : {-1.0, 1.0}) {
            env.reset(0);
            env.set_state({x, y, 0.0, 0.0}, {0.3, -0.3});
            std::vector<double> o{x, y, 0.0, 0.0};
            for (int t = 0; t < 200; ++t) o = env.step(expert(o, env.privileged_context(), rng)).obs;
            CHECK(std::hypot(o[0], o[1]) < 0.05);
        }
}

TEST_CASE("simple demonstrator is uniform within the bounds") {
    const PointMassConfig cfg;
    const auto simple = scripted_behavior(cfg, Skill::simple);
    Rng rng(17);
    const std::vector<double> obs(4, 0.0), ctx(2, 0.0);
    for (int dim = 0; dim < 2; ++dim) {
        Rng r(17 + dim);
        std::vector<double> xs;
        for (int i = 0; i < 10000; ++i) xs.push_back(simple(obs, ctx, r)[dim]);
        std::sort(xs.begin(), xs.end());
        double ks = 0.0;
        const double n = static_cast<double>(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double cdf = (xs[i] + cfg.action_bound) / (2.0 * cfg.action_bound);
            ks = std::max({ks, std::abs(cdf - i / n), std::abs(cdf - (i + 1) / n)});
        }
        // 1% critical value of the one-sample KS statistic.
        CHECK(ks < 1.63 / std::sqrt(n));
        CHECK(xs.front() >= -cfg.action_bound);
        CHECK(xs.back() <= cfg.action_bound);
    }
}

TEST_CASE("skill ordering of mean returns") {
    const PointMassConfig cfg;
    PointMassEnv env(cfg);
    double means[3] = {0, 0, 0};
    const Skill skills[3] = {Skill::expert, Skill::medium, Skill::simple};
    for (int k = 0; k < 3; ++k) {
        const auto policy = scripted_behavior(cfg, skills[k]);
        Rng rng(100 + k);
        for (std::uint64_t ep = 0; ep < 100; ++ep) means[k] += episode_return(env, policy, ep, rng) / 100.0;
    }
    CHECK(means[0] > means[1]);
    CHECK(means[1] > means[2]);
    CHECK(skill_from_string(to_string(Skill::medium)) == Skill::medium);
    CHECK_THROWS_AS(skill_from_string("novice"), ConfigError);
}

TEST_CASE("point mass audit: masked velocities confound, full observation does not") {
    CITestConfig ci;
    ci.n_permutations = 200;
    {
        PointMassConfig cfg;
        PointMassEnv env(cfg);
        Rng rng(3);
        const auto ds = collect(env, scripted_behavior(cfg, Skill::expert), MaskSpec({2, 3}, 4), 4000, rng);
        const auto audit = confounding_audit(ds, 2, ci);
        CHECK(audit.transition.p_value < 0.01);
        CHECK(audit.behavior.p_value < 0.01);
    }
    ci.alpha = 0.05;
    int rejected = 0;
    for (std::uint64_t trial = 0; trial < 50; ++trial) {
        PointMassConfig cfg;
        PointMassEnv env(cfg);
        Rng rng(1000 + trial);
        const auto ds = collect(env, scripted_behavior(cfg, Skill::expert), MaskSpec({}, 4), 1000, rng);
        const auto [noisy, col] = with_noise_channel(ds, rng);
        ci.seed = trial;
        rejected += confounding_audit(noisy, col, ci).confounded();
    }
    CHECK(rejected <= 5);
}

TEST_CASE("point mass config parsing") {
    const auto cfg = point_mass_config_from_json({{"dt", 0.1}, {"mask", {2}}, {"goal", {1, 2}}});
    CHECK(cfg.dt == 0.1);
    CHECK(cfg.mask.hidden_dims == std::vector<int>{2});
    CHECK(cfg.goal[1] == 2.0);
    CHECK_THROWS_AS(point_mass_config_from_json({{"dt", 0.0}}), ConfigError);
    CHECK_THROWS_AS(point_mass_config_from_json({{"episode_len", 0}}), ConfigError);
    const auto back = point_mass_config_from_json(to_json(cfg));
    CHECK(back.dt == cfg.dt);
    CHECK(back.mask.hidden_dims == cfg.mask.hidden_dims);
}
