#include "cshape/agent.hpp"
#include "cshape/diagnostics.hpp"
#include "cshape/envs.hpp"
#include "cshape/nn.hpp"
#include "cshape/tabular_solver.hpp"

#include <benchmark/benchmark.h>

using namespace cshape;

namespace {

nn::Matrix gaussian(int rows, int cols, Rng& rng) {
    nn::Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
    return m;
}

void BM_CausalBackup(benchmark::State& state) {
    RandomCMDPConfig c;
    c.n_states = int(state.range(0));
    c.n_actions = 5;
    c.n_noise = 8;
    const auto cmdp = gen_random_tabular(c);
    const auto model = exact_observational_model(cmdp);
    ValueTable v(std::size_t(c.n_states), 1.0);
    for (auto _ : state) {
        v = causal_backup(model, v, cmdp.reward_bound(), cmdp.gamma());
        benchmark::DoNotOptimize(v.data());
    }
    state.SetItemsProcessed(state.iterations() * c.n_states * c.n_actions);
}
BENCHMARK(BM_CausalBackup)->Arg(20)->Arg(200)->Arg(1000);

void BM_CausalValueIteration(benchmark::State& state) {
    RandomCMDPConfig c;
    c.n_states = 50;
    const auto cmdp = gen_random_tabular(c);
    const auto model = exact_observational_model(cmdp);
    for (auto _ : state) benchmark::DoNotOptimize(causal_value_iteration(model, 1.0, 0.9).values);
}
BENCHMARK(BM_CausalValueIteration);

void BM_MlpForwardBackward(benchmark::State& state) {
    Rng rng(1);
    const nn::Mlp net({6, 4, int(state.range(0)), 3});
    const auto p = net.init(rng);
    const auto x = gaussian(6, int(state.range(1)), rng);
    const nn::Matrix g = nn::Matrix::Ones(4, x.cols());
    nn::Vector grad = nn::Vector::Zero(Eigen::Index(p.size()));
    nn::MlpTape tape;
    for (auto _ : state) {
        net.forward(p, x, tape);
        benchmark::DoNotOptimize(net.backward(p, tape, g, grad));
    }
    state.SetItemsProcessed(state.iterations() * x.cols());
}
BENCHMARK(BM_MlpForwardBackward)->Args({64, 256})->Args({128, 1028})->Args({256, 512});

void BM_CITest(benchmark::State& state) {
    Rng rng(2);
    const int n = int(state.range(0));
    const SampleMatrix z = gaussian(n, 3, rng);
    const SampleMatrix x = z.col(0) + gaussian(n, 1, rng);
    const SampleMatrix y = z.col(1) + gaussian(n, 1, rng);
    CITestConfig cfg;
    cfg.n_permutations = 200;
    for (auto _ : state) benchmark::DoNotOptimize(ci_test(x, y, z, cfg).p_value);
}
BENCHMARK(BM_CITest)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_SacUpdate(benchmark::State& state) {
    Rng rng(3);
    SACConfig cfg;
    cfg.hidden_dim = int(state.range(0));
    cfg.batch_size = int(state.range(1));
    SacLearner learner(2, {{-1.0, 1.0}, {-1.0, 1.0}}, cfg, rng);
    const int b = cfg.batch_size;
    const SacBatch batch{gaussian(2, b, rng), gaussian(2, b, rng).cwiseMax(-1.0).cwiseMin(1.0), gaussian(b, 1, rng),
                         gaussian(2, b, rng), nn::Vector::Zero(b)};
    for (auto _ : state) {
        benchmark::DoNotOptimize(learner.update_critic(batch, rng));
        benchmark::DoNotOptimize(learner.update_actor(batch.obs, rng));
        learner.update_targets();
    }
}
BENCHMARK(BM_SacUpdate)->Args({64, 128})->Args({256, 512})->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
