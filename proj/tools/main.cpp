// cshape: command-line front end for the causal shaping pipeline.

#include "cshape/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;
constexpr int kExitUnconverged = 4;

struct GlobalOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    int threads = 1;
};

cshape::ExperimentConfig load_config(const GlobalOptions& g) {
    cshape::ExperimentConfig cfg =
        g.config.empty() ? cshape::experiment_config_from_json(nlohmann::json::object())
                         : cshape::load_experiment_config(g.config);
    if (g.seed) cfg.seeds = {*g.seed};
    if (!g.out.empty()) cfg.output_dir = g.out;
    return cfg;
}

template <class Fn>
int guarded(const char* stage, Fn&& fn) {
    try {
        return fn();
    } catch (const cshape::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const cshape::StageError& e) {
        std::cerr << e.what() << '\n';
        return kExitStage;
    } catch (const std::exception& e) {
        std::cerr << "stage " << stage << " failed: " << e.what() << '\n';
        return kExitStage;
    }
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
    // Training allocates many short-lived mid-sized matrices; keep freed heap
    // memory instead of returning it to the kernel after every update.
    mallopt(M_MMAP_THRESHOLD, 8 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
    CLI::App app{"Confounding-robust potentials and shaped online learning"};
    app.require_subcommand(1);
    app.fallthrough();
    GlobalOptions g;
    app.add_option("--config", g.config, "Experiment JSON config");
    app.add_option("--seed", g.seed, "Override the agent seed list with a single seed");
    app.add_option("--out", g.out, "Output directory (overrides output_dir)");
    app.add_option("--threads", g.threads, "Worker threads for per-seed stages")->check(CLI::PositiveNumber);

    auto* gen_env = app.add_subcommand("gen-env", "Write the environment description");
    auto* collect = app.add_subcommand("collect", "Collect confounded offline trajectories");
    auto* solve = app.add_subcommand("solve", "Causal value iteration on a tabular dataset");
    auto* train_potential = app.add_subcommand("train-potential", "Fit the neural upper-bound potential");
    auto* train_agent = app.add_subcommand("train-agent", "Train the online learner for every seed");
    std::string method = cshape::kShapedMethod;
    train_agent->add_option("--method", method, "baseline or causal-pbrs")
        ->check(CLI::IsMember({cshape::kBaselineMethod, cshape::kShapedMethod}));
    auto* diagnose = app.add_subcommand("diagnose", "Confounding audit and dependence ranking");
    std::vector<int> dims;
    diagnose->add_option("--dims", dims, "Observation dimensions to rank");
    auto* report = app.add_subcommand("report", "Aggregate curves into summary tables");
    auto* run = app.add_subcommand("run", "Full pipeline with resumable stages");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    return guarded(app.get_subcommands().front()->get_name().c_str(), [&]() -> int {
        const cshape::ExperimentConfig cfg = load_config(g);
        const auto& out = cfg.output_dir;
        std::filesystem::create_directories(out);
        if (*gen_env) {
            cshape::stage_gen_env(cfg, out);
        } else if (*collect) {
            cshape::stage_collect(cfg, out);
        } else if (*solve) {
            if (!cshape::stage_solve(cfg, out)) {
                std::cerr << "solver did not converge; table written\n";
                return kExitUnconverged;
            }
        } else if (*train_potential) {
            cshape::stage_train_potential(cfg, out);
        } else if (*train_agent) {
            for (std::uint64_t seed : cfg.seeds) {
                try {
                    cshape::stage_train_agent(cfg, out, seed, method);
                } catch (const std::exception& e) {
                    throw cshape::StageError("train-agent", seed, e.what());
                }
                std::cout << cshape::curve_path(out, method, seed).string() << '\n';
            }
        } else if (*diagnose) {
            cshape::stage_diagnose(cfg, out, dims.empty() ? std::nullopt : std::optional(dims));
        } else if (*report) {
            cshape::stage_report(cfg, out);
        } else if (*run) {
            const auto result = cshape::run_pipeline(cfg, g.threads, &std::cout);
            if (!result.solver_converged) {
                std::cerr << "solver did not converge; artifacts written\n";
                return kExitUnconverged;
            }
        }
        return kExitOk;
    });
}
