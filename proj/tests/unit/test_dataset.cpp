#include "cshape/dataset.hpp"
#include "cshape/envs.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

using namespace cshape;

namespace {

Transition tab(int s, int x, int sn, double y, int ep = 0, int t = 0) {
    Transition tr;
    tr.obs = {double(s)};
    tr.action = {double(x)};
    tr.next_obs = {double(sn)};
    tr.reward = y;
    tr.episode_id = ep;
    tr.step_index = t;
    return tr;
}

TrajectoryDataset with_rewards(const std::vector<double>& ys) {
    TrajectoryDataset ds;
    ds.env_id = "test";
    ds.mask = MaskSpec({}, 1);
    for (std::size_t i = 0; i < ys.size(); ++i) ds.transitions.push_back(tab(0, 0, 0, ys[i], 0, int(i)));
    ds.refresh_stats();
    return ds;
}

}  // namespace

TEST_CASE("collect rejects zero steps") {
    const auto cmdp = gen_random_tabular(RandomCMDPConfig{});
    Rng rng(0);
    CHECK_THROWS_AS(collect_tabular(cmdp, 0, 10, rng), std::invalid_argument);
    PointMassEnv env(PointMassConfig{});
    CHECK_THROWS_AS(collect(env, scripted_behavior(PointMassConfig{}, Skill::simple), MaskSpec({}, 4), 0, rng),
                    std::invalid_argument);
}

TEST_CASE("constant-reward environment has degenerate stats") {
    auto t = testutil::tables_of(3, 2, 2);
    t.reward.assign(t.reward.size(), 0.25);
    const TabularCMDP cmdp(t);
    Rng rng(1);
    const auto ds = collect_tabular(cmdp, 500, 50, rng);
    CHECK(ds.reward_stats.min == 0.25);
    CHECK(ds.reward_stats.max == 0.25);
    CHECK(ds.reward_stats.mean == 0.25);
    CHECK(ds.reward_stats.count == 500);
}

TEST_CASE("collected episodes are contiguous and deterministic") {
    const auto cmdp = gen_random_tabular(RandomCMDPConfig{});
    Rng a(3), b(3);
    const auto ds = collect_tabular(cmdp, 1000, 64, a);
    CHECK(ds == collect_tabular(cmdp, 1000, 64, b));
    for (std::size_t i = 1; i < ds.size(); ++i) {
        const auto& p = ds.transitions[i - 1];
        const auto& q = ds.transitions[i];
        if (q.episode_id == p.episode_id) {
            CHECK(q.step_index == p.step_index + 1);
            CHECK(q.obs == p.next_obs);
        } else {
            CHECK(q.episode_id == p.episode_id + 1);
            CHECK(q.step_index == 0);
        }
    }
    double sum = 0.0;
    for (const auto& tr : ds.transitions) sum += tr.reward;
    CHECK(std::abs(ds.reward_stats.mean - sum / 1000.0) < 1e-9);
}

TEST_CASE("continuous collection masks observations and keeps the privileged trace") {
    PointMassConfig cfg;
    PointMassEnv env(cfg);
    Rng rng(4);
    const auto ds = collect(env, scripted_behavior(cfg, Skill::expert), cfg.mask, 450, rng);
    CHECK(ds.size() == 450);
    CHECK(ds.privileged.size() == 450);
    CHECK(ds.transitions.back().episode_id == 2);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& tr = ds.transitions[i];
        CHECK(tr.obs.size() == 2);
        CHECK(tr.next_obs.size() == 2);
        CHECK(ds.privileged[i].size() == 6);
        CHECK(tr.obs[0] == ds.privileged[i][0]);
        CHECK(tr.obs[1] == ds.privileged[i][1]);
    }
    CHECK(ds.transitions[199].done == false);  // truncation is not termination
}

TEST_CASE("visit distribution matches the exact behavioral chain") {
    RandomCMDPConfig cfg;
    cfg.seed = 2;
    const auto cmdp = gen_random_tabular(cfg);
    const int S = cmdp.n_states(), H = 200;
    Rng rng(6);
    const auto ds = collect_tabular(cmdp, 100000, H, rng);
    // Behavioral chain P(s'|s) = sum_u P(u) 1[f_S(s, f_X(s,u), u) = s'], averaged over the horizon.
    std::vector<double> chain(S * S, 0.0);
    for (int s = 0; s < S; ++s)
        for (int u = 0; u < cmdp.n_noise(); ++u)
            chain[s * S + cmdp.next_state(s, cmdp.behavior_action(s, u), u)] += cmdp.noise_probs()[u];
    std::vector<double> dist = cmdp.initial_state_probs(), visit(S, 0.0);
    for (int t = 0; t < H; ++t) {
        for (int s = 0; s < S; ++s) visit[s] += dist[s] / H;
        std::vector<double> next(S, 0.0);
        for (int s = 0; s < S; ++s)
            for (int sn = 0; sn < S; ++sn) next[sn] += dist[s] * chain[s * S + sn];
        dist = next;
    }
    std::vector<double> emp(S, 0.0);
    for (const auto& tr : ds.transitions) emp[int(tr.obs[0])] += 1.0 / double(ds.size());
    double tv = 0.0;
    for (int s = 0; s < S; ++s) tv += 0.5 * std::abs(emp[s] - visit[s]);
    CHECK(tv < 0.02);
}

TEST_CASE("estimate_tabular single transition") {
    TrajectoryDataset ds;
    ds.transitions.push_back(tab(0, 1, 2, 5.0));
    const auto m = estimate_tabular(ds, 0.0).model();
    CHECK(m.n_states == 3);
    CHECK(m.n_actions == 2);
    CHECK(m.p(0, 1) == 1.0);
    CHECK(m.r(0, 1) == 5.0);
    CHECK(m.t(0, 1, 2) == 1.0);
    CHECK(m.is_covered(0, 1));
    CHECK_FALSE(m.is_covered(0, 0));
    CHECK(m.r(0, 0) == 0.0);
    CHECK(m.t(0, 0, 1) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("estimate_tabular errors and smoothing limit") {
    CHECK_THROWS_AS(estimate_tabular(TrajectoryDataset{}, 0.0), std::invalid_argument);
    TrajectoryDataset ds;
    for (int i = 0; i < 10; ++i) ds.transitions.push_back(tab(0, i % 3 == 0 ? 0 : 1, 0, 1.0));
    const auto m = estimate_tabular(ds, 1e12, 1, 3).model();
    for (int x = 0; x < 3; ++x) CHECK(std::abs(m.p(0, x) - 1.0 / 3.0) < 1e-9);
}

TEST_CASE("propensities and transition rows sum to one; estimation is order-invariant and additive") {
    RandomCMDPConfig cfg;
    cfg.seed = 8;
    const auto cmdp = gen_random_tabular(cfg);
    Rng rng(8);
    auto ds = collect_tabular(cmdp, 20000, 100, rng);
    const auto em = estimate_tabular(ds, 0.5, 8, 3);
    const auto m = em.model();
    for (int s = 0; s < 8; ++s) {
        double p = 0.0;
        for (int x = 0; x < 3; ++x) {
            p += m.p(s, x);
            if (!m.is_covered(s, x)) continue;
            double t = 0.0;
            for (int sn = 0; sn < 8; ++sn) t += m.t(s, x, sn);
            CHECK(std::abs(t - 1.0) < 1e-12);
        }
        CHECK(std::abs(p - 1.0) < 1e-12);
    }
    auto shuffled = ds;
    std::shuffle(shuffled.transitions.begin(), shuffled.transitions.end(), rng);
    const auto em2 = estimate_tabular(shuffled, 0.5, 8, 3);
    CHECK(em2.counts_sxs == em.counts_sxs);
    CHECK(em2.reward_sums.size() == em.reward_sums.size());
    for (std::size_t i = 0; i < em.reward_sums.size(); ++i)
        CHECK(em2.reward_sums[i] == doctest::Approx(em.reward_sums[i]).epsilon(1e-12));

    TrajectoryDataset a = ds, b = ds;
    a.transitions.resize(7000);
    b.transitions.erase(b.transitions.begin(), b.transitions.begin() + 7000);
    auto merged = estimate_tabular(a, 0.5, 8, 3);
    merged.merge(estimate_tabular(b, 0.5, 8, 3));
    CHECK(merged.counts_sxs == em.counts_sxs);
    CHECK(merged.counts_s == em.counts_s);
}

TEST_CASE("1e6 behavioral steps recover the exact observational conditional") {
    RandomCMDPConfig cfg;
    cfg.seed = 13;
    const auto cmdp = gen_random_tabular(cfg);
    Rng rng(13);
    const auto ds = collect_tabular(cmdp, 1000000, 200, rng);
    const auto est = estimate_tabular(ds, 0.0, cmdp.n_states(), cmdp.n_actions()).model();
    const auto exact = exact_observational_model(cmdp);
    for (int s = 0; s < cmdp.n_states(); ++s)
        for (int x = 0; x < cmdp.n_actions(); ++x) {
            REQUIRE(est.is_covered(s, x) == exact.is_covered(s, x));
            CHECK(std::abs(est.p(s, x) - exact.p(s, x)) < 0.01);
            if (!exact.is_covered(s, x)) continue;
            for (int sn = 0; sn < cmdp.n_states(); ++sn) CHECK(std::abs(est.t(s, x, sn) - exact.t(s, x, sn)) < 0.01);
        }
}

TEST_CASE("normalize_rewards") {
    auto ds = with_rewards({1, 2, 3});
    const double offset = normalize_rewards(ds);
    CHECK(offset == 2.0);
    CHECK(ds.transitions[0].reward == -1.0);
    CHECK(ds.transitions[1].reward == 0.0);
    CHECK(ds.transitions[2].reward == 1.0);
    CHECK(dataset_reward_max(ds) == 1.0);

    auto centered = with_rewards({-1, 0, 1});
    CHECK(normalize_rewards(centered) == 0.0);
    CHECK(centered == with_rewards({-1, 0, 1}));

    Rng rng(2);
    std::vector<double> ys;
    for (int i = 0; i < 1000; ++i) ys.push_back(standard_normal(rng) * 3.0 + 0.7);
    auto noisy = with_rewards(ys);
    const double off = normalize_rewards(noisy);
    // Differences are preserved exactly by a shared shift only up to rounding.
    for (std::size_t i = 1; i < ys.size(); ++i)
        CHECK(std::abs((noisy.transitions[i].reward - noisy.transitions[0].reward) - (ys[i] - ys[0])) < 1e-12);
    denormalize_rewards(noisy, off);
    for (std::size_t i = 0; i < ys.size(); ++i)
        CHECK(std::abs(noisy.transitions[i].reward - ys[i]) <= 4e-16 * std::max(std::abs(ys[i]), std::abs(off)));

    // Exactly representable shifts round-trip bit for bit.
    std::vector<double> dyadic;
    for (int i = 0; i < 64; ++i) dyadic.push_back((int(rng() % 4001) - 2000) / 8.0);
    auto d = with_rewards(dyadic);
    const auto d0 = d;
    denormalize_rewards(d, normalize_rewards(d));
    CHECK(d == d0);
    auto simple = with_rewards({1, 2, 3});
    denormalize_rewards(simple, normalize_rewards(simple));
    CHECK(simple == with_rewards({1, 2, 3}));
}

TEST_CASE("dataset_reward_max") {
    CHECK(dataset_reward_max(with_rewards({-3, -1, -2})) == -1.0);
    CHECK_THROWS_AS(dataset_reward_max(TrajectoryDataset{}), std::invalid_argument);
    Rng rng(5);
    std::vector<double> ys(1000000);
    for (double& y : ys) y = standard_normal(rng);
    const auto ds = with_rewards(ys);
    // Two-pass oracle: sort then take the last element.
    auto sorted = ys;
    std::sort(sorted.begin(), sorted.end());
    CHECK(dataset_reward_max(ds) == sorted.back());
}

TEST_CASE("save/load round trips") {
    const auto dir = testutil::scratch("dataset");
    SUBCASE("empty dataset") {
        TrajectoryDataset ds;
        ds.env_id = "empty";
        ds.mask = MaskSpec({1}, 3);
        ds.seed = 9;
        save(ds, dir / "empty.txt");
        CHECK(load(dir / "empty.txt") == ds);
    }
    SUBCASE("1e5 transitions with privileged stream and skill tag") {
        PointMassConfig cfg;
        PointMassEnv env(cfg);
        Rng rng(1);
        auto ds = collect(env, scripted_behavior(cfg, Skill::medium), cfg.mask, 100000, rng);
        ds.skill_tag = "medium";
        ds.seed = 77;
        save(ds, dir / "big.txt");
        const auto back = load(dir / "big.txt");
        CHECK(back.env_id == ds.env_id);
        CHECK(back.mask.hidden_dims == ds.mask.hidden_dims);
        CHECK(back.mask.full_dim == ds.mask.full_dim);
        CHECK(back.seed == 77);
        CHECK(back.skill_tag == ds.skill_tag);
        CHECK(back.reward_stats == ds.reward_stats);
        CHECK(back.privileged == ds.privileged);
        CHECK(back.transitions == ds.transitions);
    }
    SUBCASE("truncated file is a parse error") {
        const auto cmdp = gen_random_tabular(RandomCMDPConfig{});
        Rng rng(0);
        const auto ds = collect_tabular(cmdp, 100, 20, rng);
        const std::string text = serialize(ds);
        CHECK(text.rfind("#causal-shaping-dataset v1 env=tabular mask= seed=0", 0) == 0);
        CHECK_THROWS_AS(deserialize(text.substr(0, text.size() / 2)), ParseError);
        // Cut exactly at a record boundary: the record count in the header catches it.
        const auto cut = text.find('\n', text.size() / 2);
        CHECK_THROWS_AS(deserialize(text.substr(0, cut + 1)), ParseError);
        try {
            deserialize(text.substr(0, text.size() / 2));
        } catch (const ParseError& e) {
            CHECK(e.line() > 1);
        }
        CHECK_THROWS_AS(deserialize("not a dataset\n"), ParseError);
    }
}

TEST_CASE("csv export has the dataset columns") {
    const auto dir = testutil::scratch("dataset_csv");
    const auto cmdp = gen_random_tabular(RandomCMDPConfig{});
    Rng rng(0);
    export_csv(collect_tabular(cmdp, 10, 5, rng), dir / "d.csv");
    std::ifstream in(dir / "d.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header.rfind("ep,t,", 0) == 0);
    int rows = 0;
    for (std::string line; std::getline(in, line);) rows += !line.empty();
    CHECK(rows == 10);
}

TEST_CASE("one-hot embedding and merging") {
    const auto cmdp = gen_random_tabular(RandomCMDPConfig{});
    Rng rng(0);
    const auto ds = collect_tabular(cmdp, 50, 10, rng);
    const auto emb = one_hot_embed(ds, 8, 3);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(emb.transitions[i].obs.size() == 8);
        CHECK(emb.transitions[i].obs[int(ds.transitions[i].obs[0])] == 1.0);
        CHECK(emb.transitions[i].action[int(ds.transitions[i].action[0])] == 1.0);
        CHECK(emb.privileged[i].size() == 9);
        CHECK(emb.privileged[i][8] == ds.privileged[i][1]);
    }
    const auto merged = merge_datasets({ds, ds}, "both");
    CHECK(merged.size() == 100);
    CHECK(merged.skill_tag == std::optional<std::string>("both"));
    CHECK(merged.transitions[50].episode_id == ds.transitions.back().episode_id + 1);
}
