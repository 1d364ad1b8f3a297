#include "cshape/agent.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace cshape;
using nn::Matrix;
using nn::Vector;

namespace {

SACConfig tiny_sac(std::uint64_t seed) {
    SACConfig c;
    c.total_steps = 2000;
    c.batch_size = 32;
    c.warmup_steps = 300;
    c.eval_interval = 500;
    c.eval_episodes = 2;
    c.hidden_dim = 16;
    c.seed = seed;
    return c;
}

PointMassConfig still_point_mass() {
    PointMassConfig pc;
    pc.drift_std = 0.0;
    pc.fixed_start = std::array<double, 2>{0.6, -0.8};
    pc.episode_len = 50;
    return pc;
}

ReplayBuffer random_buffer(std::size_t n, Rng& rng) {
    ReplayBuffer buf(n);
    for (std::size_t i = 0; i < n; ++i) {
        ReplayItem it;
        it.obs = {standard_normal(rng), standard_normal(rng)};
        it.action = {std::tanh(standard_normal(rng))};
        it.reward = it.train_reward = standard_normal(rng);
        it.next_obs = {standard_normal(rng), standard_normal(rng)};
        it.done = uniform01(rng) < 0.1;
        buf.push(std::move(it));
    }
    return buf;
}

Matrix normals(int r, int c, Rng& rng) {
    Matrix m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = standard_normal(rng);
    return m;
}

void jitter(nn::ParamStore& p, double scale, Rng& rng) {
    for (Eigen::Index i = 0; i < p.values.size(); ++i) p.values(i) += scale * standard_normal(rng);
}

}  // namespace

TEST_CASE("replay buffer") {
    SUBCASE("ring overwrite") {
        ReplayBuffer buf(3);
        for (int i = 0; i < 5; ++i) buf.push({{double(i)}, {0.0}, 0.0, 0.0, {0.0}, false});
        CHECK(buf.size() == 3);
        CHECK(buf.inserted() == 5);
        CHECK(buf.at(0).obs[0] == 3.0);
        CHECK(buf.at(1).obs[0] == 4.0);
        CHECK(buf.at(2).obs[0] == 2.0);
    }
    SUBCASE("uniform sampling passes a chi-square test") {
        ReplayBuffer buf(100);
        for (int i = 0; i < 100; ++i) buf.push({{double(i)}, {0.0}, 0.0, 0.0, {0.0}, false});
        Rng rng(1);
        std::vector<double> counts(100, 0.0);
        for (std::size_t i : buf.sample_indices(100000, rng)) counts[i] += 1.0;
        double chi2 = 0.0;
        for (double c : counts) chi2 += (c - 1000.0) * (c - 1000.0) / 1000.0;
        CHECK(chi2 < 134.642);  // 0.99 quantile, 99 degrees of freedom
    }
    SUBCASE("errors") {
        Rng rng(2);
        CHECK_THROWS_AS(ReplayBuffer(0), std::invalid_argument);
        CHECK_THROWS_AS(ReplayBuffer(4).sample_indices(1, rng), std::logic_error);
    }
}

TEST_CASE("twin target takes the elementwise minimum") {
    Rng rng(3);
    const ReplayBuffer buf = random_buffer(200, rng);
    SacNets nets = SacNets::create(2, {{-1.0, 1.0}}, 16, 1, rng);
    jitter(nets.q2_target, 0.2, rng);
    const SacBatch b = gather_batch(buf, buf.sample_indices(64, rng));
    const Matrix eps = normals(1, 64, rng);
    Vector t1, t2;
    const Vector y = critic_targets(nets, b, eps, 0.2, 0.99, &t1, &t2);
    for (int c = 0; c < 64; ++c) {
        CHECK(y(c) <= t1(c));
        CHECK(y(c) <= t2(c));
        CHECK(y(c) == std::min(t1(c), t2(c)));
        if (b.done(c) == 1.0) CHECK(y(c) == b.reward(c));
    }
}

TEST_CASE("squashed log-prob matches the change-of-variables formula") {
    Rng rng(4);
    SacNets nets = SacNets::create(3, {{-2.0, 2.0}, {0.0, 1.0}}, 16, 1, rng);
    jitter(nets.actor_params, 0.3, rng);
    const Matrix obs = normals(3, 20, rng), eps = normals(2, 20, rng);
    const ActorSample s = actor_sample(nets, nets.actor_params, obs, eps);
    for (int c = 0; c < 20; ++c) {
        double lp = 0.0;
        for (int i = 0; i < 2; ++i) {
            const double sd = std::exp(s.head.log_std(i, c));
            const double u = s.head.mean(i, c) + sd * eps(i, c);
            const double z = (u - s.head.mean(i, c)) / sd;
            const double th = std::tanh(u);
            lp += -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * M_PI);
            lp -= std::log(nets.action_scale(i) * (1.0 - th * th));
            CHECK(s.action(i, c) == doctest::Approx(nets.action_center(i) + nets.action_scale(i) * th).epsilon(1e-14));
        }
        CHECK(std::abs(s.log_prob(c) - lp) < 1e-9);
    }
    CHECK(s.action.row(0).cwiseAbs().maxCoeff() <= 2.0);
    CHECK(s.action.row(1).minCoeff() >= 0.0);
}

TEST_CASE("actor and critic gradients match finite differences") {
    Rng rng(5);
    const ReplayBuffer buf = random_buffer(100, rng);
    SacNets nets = SacNets::create(2, {{-1.0, 1.0}}, 12, 1, rng);
    jitter(nets.actor_params, 0.2, rng);
    jitter(nets.q1, 0.2, rng);
    jitter(nets.q2, 0.2, rng);
    const SacBatch b = gather_batch(buf, buf.sample_indices(16, rng));
    const Vector y = critic_targets(nets, b, normals(1, 16, rng), 0.2, 0.99);

    Vector g1 = Vector::Zero(Eigen::Index(nets.q1.size())), g2 = g1;
    critic_loss(nets, nets.q1, nets.q2, b, y, &g1, &g2);
    nn::ParamStore probe = nets.q1;
    const Vector fd1 = nn::finite_difference_gradient(
        [&](const Vector& v) {
            probe.values = v;
            return critic_loss(nets, probe, nets.q2, b, y, nullptr, nullptr);
        },
        nets.q1.values);
    CHECK(nn::max_relative_error(fd1, g1) <= 1e-4);
    probe = nets.q2;
    const Vector fd2 = nn::finite_difference_gradient(
        [&](const Vector& v) {
            probe.values = v;
            return critic_loss(nets, nets.q1, probe, b, y, nullptr, nullptr);
        },
        nets.q2.values);
    CHECK(nn::max_relative_error(fd2, g2) <= 1e-4);

    const Matrix eps = normals(1, 16, rng);
    Vector ga = Vector::Zero(Eigen::Index(nets.actor_params.size()));
    actor_loss(nets, nets.actor_params, b.obs, eps, 0.2, &ga);
    nn::ParamStore ap = nets.actor_params;
    const Vector fda = nn::finite_difference_gradient(
        [&](const Vector& v) {
            ap.values = v;
            return actor_loss(nets, ap, b.obs, eps, 0.2, nullptr);
        },
        nets.actor_params.values);
    CHECK(nn::max_relative_error(fda, ga) <= 1e-4);
}

TEST_CASE("with alpha 0 the critic loss on a fixed buffer decreases") {
    const PointMassConfig pc = still_point_mass();
    PointMassEnv env(pc);
    Rng rng(6);
    ReplayBuffer buf(500);
    RealVec full = env.reset(1);
    for (int i = 0; i < 500; ++i) {
        const RealVec a{2.0 * uniform01(rng) - 1.0, 2.0 * uniform01(rng) - 1.0};
        const auto out = env.step(a);
        buf.push({mask_observation(full, pc.mask), a, out.reward, out.reward, mask_observation(out.obs, pc.mask), out.done});
        full = (out.done || out.truncated) ? env.reset(rng()) : out.obs;
    }
    SACConfig cfg = tiny_sac(0);
    cfg.alpha = 0.0;
    SacLearner learner(2, env.action_bounds(), cfg, rng);
    std::vector<std::size_t> all(500);
    std::iota(all.begin(), all.end(), std::size_t{0});
    const SacBatch batch = gather_batch(buf, all);
    const double first = learner.update_critic(batch, rng);
    double last = first;
    for (int i = 1; i < 100; ++i) {
        last = learner.update_critic(batch, rng);
        learner.update_targets();
    }
    CHECK(last < first);
}

TEST_CASE("beta 0 shaping reproduces the unshaped run bit for bit") {
    PointMassConfig pc;
    pc.seed = 3;
    PointMassEnv env(pc);
    const SACConfig cfg = tiny_sac(11);
    ShapingConfig zero;
    zero.beta = 0.0;
    zero.pbrs_gamma = 0.99;
    zero.potential = [](std::span<const double> s) { return 10.0 * s[0] - 3.0; };
    const auto plain = sac_train(env, pc.mask, std::nullopt, cfg);
    const auto shaped = sac_train(env, pc.mask, zero, cfg);
    REQUIRE(plain.curve.size() == 4);
    for (std::size_t i = 0; i < plain.curve.size(); ++i) CHECK(plain.curve[i].eval_mean == shaped.curve[i].eval_mean);
    CHECK(plain.policy.params.values == shaped.policy.params.values);
    CHECK(plain.critic_loss_history == shaped.critic_loss_history);
}

TEST_CASE("shaping is only consulted at replay insertion and evaluation is raw") {
    PointMassConfig pc;
    pc.seed = 4;
    PointMassEnv env(pc);
    const SACConfig cfg = tiny_sac(12);
    auto calls = std::make_shared<long>(0);
    ShapingConfig spy;
    spy.beta = 1.0;
    spy.pbrs_gamma = 0.99;
    spy.potential = [calls](std::span<const double> s) {
        ++*calls;
        return -std::hypot(s[0], s[1]);
    };
    const auto res = sac_train(env, pc.mask, spy, cfg);
    // Point-mass episodes only truncate, so each step reads phi(s) and phi(s').
    CHECK(*calls == 2L * cfg.total_steps);
    const auto raw = evaluate(res.policy.as_function(), env, pc.mask, cfg.eval_episodes, cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    const double mean = std::accumulate(raw.begin(), raw.end(), 0.0) / double(raw.size());
    CHECK(res.curve.back().eval_mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(*calls == 2L * cfg.total_steps);
}

TEST_CASE("evaluate") {
    SUBCASE("zero action from a fixed start is a static rollout") {
        const PointMassConfig pc = still_point_mass();
        PointMassEnv env(pc);
        const ActionFn zero = [](std::span<const double>) { return RealVec{0.0, 0.0}; };
        const auto r = evaluate(zero, env, pc.mask, 3, 7);
        const double dist = std::hypot(0.6 - pc.goal[0], -0.8 - pc.goal[1]);
        for (double v : r) CHECK(v == doctest::Approx(-pc.episode_len * dist).epsilon(1e-12));
    }
    SUBCASE("same seed, same returns; independent reruns agree statistically") {
        PointMassConfig pc;
        PointMassEnv env(pc);
        auto random_policy = [](std::uint64_t seed) {
            auto rng = std::make_shared<Rng>(seed);
            return ActionFn([rng](std::span<const double>) {
                return RealVec{2.0 * uniform01(*rng) - 1.0, 2.0 * uniform01(*rng) - 1.0};
            });
        };
        CHECK(evaluate(random_policy(1), env, pc.mask, 5, 9) == evaluate(random_policy(1), env, pc.mask, 5, 9));
        const auto a = evaluate(random_policy(2), env, pc.mask, 100, 10);
        const auto b = evaluate(random_policy(3), env, pc.mask, 100, 11);
        auto stats = [](const std::vector<double>& v) {
            const double m = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
            double ss = 0.0;
            for (double x : v) ss += (x - m) * (x - m);
            return std::pair{m, ss / double(v.size() - 1) / double(v.size())};
        };
        const auto [ma, va] = stats(a);
        const auto [mb, vb] = stats(b);
        CHECK(std::abs(ma - mb) <= 2.0 * std::sqrt(va + vb));
        const ActionFn none = [](std::span<const double>) { return RealVec{0.0, 0.0}; };
        CHECK_THROWS_AS(evaluate(none, env, pc.mask, 0, 1), std::invalid_argument);
    }
}

TEST_CASE("policy checkpoints round trip") {
    Rng rng(13);
    SacNets nets = SacNets::create(2, {{-1.0, 1.0}, {-0.5, 0.5}}, 16, 1, rng);
    jitter(nets.actor_params, 0.3, rng);
    const SacPolicy pol{nets.actor, nets.actor_params, nets.action_center, nets.action_scale};
    const auto dir = testutil::scratch("agent");
    save_policy(pol, dir / "pi.ckpt");
    const SacPolicy back = load_policy(dir / "pi.ckpt");
    const RealVec obs{0.1, -0.4};
    CHECK(back.mean_action(obs) == pol.mean_action(obs));
    const RealVec a = pol.mean_action(obs);
    CHECK(std::abs(a[1]) <= 0.5);
}

TEST_CASE("SAC config parsing") {
    const auto c = sac_config_from_json({{"total_steps", 10}, {"alpha", 0.0}});
    CHECK(c.total_steps == 10);
    CHECK(c.alpha == 0.0);
    CHECK(sac_config_from_json(to_json(c)).total_steps == 10);
    CHECK_THROWS_AS(sac_config_from_json({{"gamma", 1.0}}), ConfigError);
    CHECK_THROWS_AS(sac_config_from_json({{"batch_size", 0}}), ConfigError);
}

TEST_CASE("tabular Q-learning") {
    SUBCASE("2-state chain reaches the oracle greedy policy") {
        auto t = testutil::tables_of(2, 2, 1);
        // action 1 moves to (or stays in) state 1, which pays 1 under action 1
        for (int s = 0; s < 2; ++s) {
            t.transition[testutil::sxu(t, s, 0, 0)] = 0;
            t.transition[testutil::sxu(t, s, 1, 0)] = 1;
        }
        t.reward[testutil::sxu(t, 1, 1, 0)] = 1.0;
        t.reward[testutil::sxu(t, 0, 0, 0)] = 0.2;
        const TabularCMDP cmdp(t);
        const auto mdp = exact_interventional_model(cmdp);
        const auto oracle = greedy_policy(oracle_interventional_vi(cmdp).values, mdp, cmdp.gamma());
        CHECK(oracle == TabularPolicy{1, 1});
        Rng rng(14);
        QLearningConfig qc;
        qc.horizon = 20;
        const auto res = q_learning_tabular(cmdp, std::nullopt, qc, rng, oracle);
        CHECK(greedy_from_q(res.q, 2, 2) == oracle);
        CHECK(res.steps_to_reference.has_value());
    }
    SUBCASE("beta 0 shaping gives the identical Q trace") {
        RandomCMDPConfig rc;
        rc.seed = 5;
        const auto cmdp = gen_random_tabular(rc);
        ShapingConfig zero;
        zero.beta = 0.0;
        zero.potential = table_potential(ValueTable(static_cast<std::size_t>(rc.n_states), 7.0));
        QLearningConfig qc;
        qc.steps = 3000;
        Rng a(1), b(1);
        const auto plain = q_learning_tabular(cmdp, std::nullopt, qc, a);
        const auto shaped = q_learning_tabular(cmdp, zero, qc, b);
        CHECK(plain.q == shaped.q);
        REQUIRE(plain.curve.size() == shaped.curve.size());
        for (std::size_t i = 0; i < plain.curve.size(); ++i)
            CHECK(plain.curve[i].greedy_return == shaped.curve[i].greedy_return);
    }
    SUBCASE("shaping with the oracle value speeds up learning") {
        int wins = 0;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            RandomCMDPConfig rc;
            rc.seed = 100 + seed;
            const auto cmdp = gen_random_tabular(rc);
            const auto mdp = exact_interventional_model(cmdp);
            const auto vstar = oracle_interventional_vi(cmdp).values;
            const auto ref = greedy_policy(vstar, mdp, cmdp.gamma());
            ShapingConfig sc;
            sc.pbrs_gamma = cmdp.gamma();
            sc.potential = table_potential(vstar);
            QLearningConfig qc;
            Rng a(seed), b(seed);
            const auto plain = q_learning_tabular(cmdp, std::nullopt, qc, a, ref);
            const auto shaped = q_learning_tabular(cmdp, sc, qc, b, ref);
            const int inf = qc.steps + 1;
            if (shaped.steps_to_reference.value_or(inf) <= plain.steps_to_reference.value_or(inf)) ++wins;
        }
        CHECK(wins >= 14);
    }
    SUBCASE("config validation") {
        QLearningConfig qc;
        qc.lr = 0.0;
        CHECK_THROWS_AS(qc.validate(), ConfigError);
    }
}
