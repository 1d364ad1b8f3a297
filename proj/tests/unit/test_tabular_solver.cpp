#include "cshape/envs.hpp"
#include "cshape/tabular_solver.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace cshape;

namespace {

TabularModel one_state(double p, double r, int n_actions = 1) {
    TabularModel m;
    m.n_states = 1;
    m.n_actions = n_actions;
    m.propensity.assign(n_actions, p);
    m.reward.assign(n_actions, r);
    m.transition.assign(n_actions, 1.0);
    m.covered.assign(n_actions, true);
    return m;
}

RealVec random_row(int n, Rng& rng) {
    RealVec v(n);
    for (double& x : v) x = uniform01(rng) + 1e-3;
    const double s = std::accumulate(v.begin(), v.end(), 0.0);
    for (double& x : v) x /= s;
    return v;
}

TabularModel random_model(int S, int A, Rng& rng, bool propensity_one = false) {
    TabularModel m;
    m.n_states = S;
    m.n_actions = A;
    m.covered.assign(S * A, true);
    for (int s = 0; s < S; ++s) {
        const RealVec p = random_row(A, rng);
        for (int x = 0; x < A; ++x) {
            m.propensity.push_back(propensity_one ? 1.0 : p[x]);
            m.reward.push_back(uniform01(rng));
            const RealVec t = random_row(S, rng);
            m.transition.insert(m.transition.end(), t.begin(), t.end());
        }
    }
    return m;
}

ValueTable random_values(int S, Rng& rng, double scale = 5.0) {
    ValueTable v(S);
    for (double& x : v) x = scale * (2.0 * uniform01(rng) - 1.0);
    return v;
}

/// Straight-line double loop over the causal operator.
ValueTable causal_oracle(const TabularModel& m, const ValueTable& v, double b, double g) {
    double vmax = v[0];
    for (double x : v) vmax = x > vmax ? x : vmax;
    ValueTable out(m.n_states);
    for (int s = 0; s < m.n_states; ++s) {
        double best = -1e300;
        for (int x = 0; x < m.n_actions; ++x) {
            if (!m.covered[s * m.n_actions + x]) continue;
            const double p = m.propensity[s * m.n_actions + x];
            double ev = 0.0;
            for (int sn = 0; sn < m.n_states; ++sn) ev += m.transition[(s * m.n_actions + x) * m.n_states + sn] * v[sn];
            const double val = p * (m.reward[s * m.n_actions + x] + g * ev) + (1.0 - p) * (b + g * vmax);
            if (val > best) best = val;
        }
        out[s] = best;
    }
    return out;
}

TabularMDP random_mdp(int S, int A, Rng& rng) {
    const auto m = random_model(S, A, rng);
    return as_mdp(m);
}

}  // namespace

TEST_CASE("causal_backup closed-form examples") {
    CHECK(causal_backup(one_state(1.0, 1.0), {0.0}, 1.0, 0.5)[0] == 1.0);
    CHECK(causal_backup(one_state(0.5, 0.0), {0.0}, 1.0, 0.5)[0] == 0.5);
}

TEST_CASE("causal_backup matches the straight-line oracle") {
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const auto m = random_model(5, 3, rng);
        const auto v = random_values(5, rng);
        const double b = 1.0 + uniform01(rng), g = 0.5 + 0.49 * uniform01(rng);
        const auto got = causal_backup(m, v, b, g);
        const auto want = causal_oracle(m, v, b, g);
        for (int s = 0; s < 5; ++s) CHECK(std::abs(got[s] - want[s]) < 1e-12);
    }
}

TEST_CASE("coverage errors name the state") {
    auto m = one_state(1.0, 1.0, 2);
    m.covered = {false, false};
    try {
        causal_backup(m, {0.0}, 1.0, 0.9);
        FAIL("expected CoverageError");
    } catch (const CoverageError& e) {
        CHECK(e.state() == 0);
    }
    CHECK_THROWS_AS(naive_vi(m, 0.9), CoverageError);
}

TEST_CASE("uncovered actions are excluded from the maximization") {
    auto m = one_state(0.5, 0.0, 2);
    m.reward = {0.0, 100.0};
    m.covered = {true, false};
    CHECK(causal_backup(m, {0.0}, 1.0, 0.5)[0] == 0.5);
}

TEST_CASE("causal value iteration") {
    SUBCASE("one-state fixed point") {
        const auto res = causal_value_iteration(one_state(0.5, 0.0), 1.0, 0.5);
        CHECK(res.report.converged);
        CHECK(std::abs(res.values[0] - 1.0) < 1e-9);
    }
    SUBCASE("full propensity collapses to standard VI") {
        Rng rng(4);
        const auto m = random_model(6, 3, rng, true);
        const auto causal = causal_value_iteration(m, 10.0, 0.9);
        const auto plain = value_iteration(as_mdp(m), 0.9);
        const auto naive = naive_vi(m, 0.9);
        CHECK(sup_norm_diff(causal.values, plain.values) < 1e-9);
        CHECK(sup_norm_diff(naive.values, plain.values) < 1e-9);
    }
    SUBCASE("two initializations reach the same table") {
        Rng rng(5);
        const auto m = random_model(7, 3, rng);
        const double b = 1.0, g = 0.9;
        SolveOptions hi;
        hi.init = ValueTable(7, b / (1 - g));
        const auto a = causal_value_iteration(m, b, g);
        const auto c = causal_value_iteration(m, b, g, hi);
        CHECK(sup_norm_diff(a.values, c.values) < 10 * 1e-10);
    }
    SUBCASE("max_iter exceeded reports unconverged without throwing") {
        Rng rng(6);
        SolveOptions o;
        o.max_iter = 3;
        const auto res = causal_value_iteration(random_model(4, 2, rng), 1.0, 0.99, o);
        CHECK_FALSE(res.report.converged);
        CHECK(res.report.iterations == 3);
        CHECK(to_json(res.report).at("converged") == false);
    }
    SUBCASE("tol must be positive") {
        SolveOptions o;
        o.tol = 0.0;
        CHECK_THROWS_AS(causal_value_iteration(one_state(1, 1), 1.0, 0.5, o), std::invalid_argument);
    }
}

TEST_CASE("operator properties on random models") {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const int S = 2 + trial % 6, A = 1 + trial % 4;
        const auto m = random_model(S, A, rng);
        const double g = 0.1 + 0.89 * uniform01(rng);
        const double b = 1.0 + uniform01(rng);  // >= max reward
        const auto v1 = random_values(S, rng), v2 = random_values(S, rng);
        const auto b1 = causal_backup(m, v1, b, g), b2 = causal_backup(m, v2, b, g);
        CHECK(sup_norm_diff(b1, b2) <= g * sup_norm_diff(v1, v2) + 1e-12);

        ValueTable hi = v1;
        for (double& x : hi) x += uniform01(rng);
        const auto bh = causal_backup(m, hi, b, g);
        for (int s = 0; s < S; ++s) CHECK(b1[s] <= bh[s] + 1e-12);

        const auto std1 = standard_backup(m, v1, g);
        for (int s = 0; s < S; ++s) CHECK(b1[s] >= std1[s] - 1e-12);
    }
}

TEST_CASE("residual history contracts geometrically") {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const auto m = random_model(6, 3, rng);
        const double g = 0.9;
        const auto res = causal_value_iteration(m, 1.0, g);
        const auto& h = res.report.residual_history;
        for (std::size_t k = 0; k < h.size(); ++k) CHECK(h[k] <= std::pow(g, double(k)) * h[0] + 1e-12);
        for (std::size_t k = 2; k < h.size(); ++k) CHECK(h[k] <= h[k - 1] + 1e-12);
    }
}

TEST_CASE("oracle interventional VI") {
    SUBCASE("two-state chain") {
        auto t = testutil::tables_of(2, 1, 1);
        t.transition = {1, 1};
        t.reward = {0.0, 1.0};
        t.gamma = 0.5;
        const auto res = oracle_interventional_vi(TabularCMDP(t));
        CHECK(std::abs(res.values[1] - 2.0) < 1e-9);
        CHECK(std::abs(res.values[0] - 1.0) < 1e-9);
    }
    SUBCASE("u-independent mechanisms equal VI on the declared mechanisms") {
        auto t = testutil::tables_of(3, 2, 3);
        Rng rng(2);
        for (int s = 0; s < 3; ++s)
            for (int x = 0; x < 2; ++x) {
                const int sn = int(rng() % 3);
                const double r = uniform01(rng);
                for (int u = 0; u < 3; ++u) {
                    t.transition[testutil::sxu(t, s, x, u)] = sn;
                    t.reward[testutil::sxu(t, s, x, u)] = r;
                }
            }
        const TabularCMDP cmdp(t);
        TabularMDP mdp{3, 2, RealVec(18, 0.0), RealVec(6, 0.0)};
        for (int s = 0; s < 3; ++s)
            for (int x = 0; x < 2; ++x) {
                mdp.transition[(s * 2 + x) * 3 + cmdp.next_state(s, x, 0)] = 1.0;
                mdp.reward[s * 2 + x] = cmdp.reward(s, x, 0);
            }
        CHECK(sup_norm_diff(oracle_interventional_vi(cmdp).values, value_iteration(mdp, 0.9).values) < 1e-9);
    }
}

TEST_CASE("naive VI") {
    SUBCASE("kappa 0 recovers the oracle") {
        RandomCMDPConfig cfg;
        cfg.confound_strength = 0.0;
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            cfg.seed = seed;
            const auto cmdp = gen_unconfounded_tabular(cfg);
            const auto naive = naive_vi(exact_observational_model(cmdp), cmdp.gamma());
            CHECK(sup_norm_diff(naive.values, oracle_interventional_vi(cmdp).values) < 1e-8);
        }
    }
    SUBCASE("kappa 1 can invert the state ordering") {
        RandomCMDPConfig cfg;
        cfg.confound_strength = 1.0;
        bool found = false;
        for (std::uint64_t seed = 0; seed < 200 && !found; ++seed) {
            cfg.seed = seed;
            const auto cmdp = gen_random_tabular(cfg);
            const auto model = exact_observational_model(cmdp);
            bool covered = true;
            for (bool c : model.covered) covered = covered && c;
            if (!covered) continue;
            const auto naive = naive_vi(model, cmdp.gamma()).values;
            const auto oracle = oracle_interventional_vi(cmdp).values;
            for (int a = 0; a < cmdp.n_states() && !found; ++a)
                for (int b = 0; b < cmdp.n_states() && !found; ++b)
                    found = naive[a] > naive[b] + 1e-9 && oracle[a] < oracle[b] - 1e-9;
        }
        CHECK(found);
    }
}

TEST_CASE("greedy policy") {
    SUBCASE("single action") {
        Rng rng(1);
        const auto mdp = random_mdp(4, 1, rng);
        const auto pi = greedy_policy(ValueTable(4, 0.0), mdp, 0.9);
        CHECK(pi == TabularPolicy(4, 0));
    }
    SUBCASE("dominant action and lowest-index ties") {
        TabularMDP mdp{1, 3, {1.0, 1.0, 1.0}, {0.0, 2.0, 2.0}};
        CHECK(greedy_policy({0.0}, mdp, 0.9) == TabularPolicy{1});
        mdp.reward = {1.0, 1.0, 1.0};
        CHECK(greedy_policy({0.0}, mdp, 0.9) == TabularPolicy{0});
    }
    SUBCASE("matches enumeration of all deterministic policies") {
        Rng rng(3);
        for (int trial = 0; trial < 20; ++trial) {
            const auto mdp = random_mdp(4, 2, rng);
            const double g = 0.9;
            const auto vstar = value_iteration(mdp, g, {1e-13, 100000, {}}).values;
            const auto pi = greedy_policy(vstar, mdp, g);
            const auto vpi = evaluate_policy(mdp, pi, g);
            // Optimal policy dominates every other deterministic policy state-wise.
            for (int code = 0; code < 16; ++code) {
                TabularPolicy other(4);
                for (int s = 0; s < 4; ++s) other[s] = (code >> s) & 1;
                const auto vo = evaluate_policy(mdp, other, g);
                for (int s = 0; s < 4; ++s) CHECK(vpi[s] >= vo[s] - 1e-9);
            }
            for (int s = 0; s < 4; ++s) CHECK(std::abs(vpi[s] - vstar[s]) < 1e-8);
        }
    }
}

TEST_CASE("exact policy evaluation") {
    TabularMDP mdp{1, 1, {1.0}, {1.0}};
    CHECK(std::abs(evaluate_policy(mdp, {0}, 0.5)[0] - 2.0) < 1e-12);
    CHECK(std::abs(policy_return(mdp, {0}, 0.5, {1.0}) - 2.0) < 1e-12);
    CHECK_THROWS_AS(evaluate_policy(mdp, {1}, 0.5), std::invalid_argument);
}
