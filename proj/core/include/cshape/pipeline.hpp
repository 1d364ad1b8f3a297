#pragma once

#include "cshape/agent.hpp"
#include "cshape/diagnostics.hpp"
#include "cshape/potential.hpp"
#include "cshape/report.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cshape {

enum class EnvKind { tabular, point_mass };

struct CollectionConfig {
    std::size_t n_steps = 20000;
    int horizon = 200;                       // tabular episode length
    std::vector<Skill> skills{Skill::expert};  // point-mass demonstrators, merged
    std::uint64_t seed = 0;
};

struct SolverConfig {
    double dirichlet_alpha = 0.0;  // propensity smoothing
    double tol = 1e-10;
    int max_iter = 100000;
};

struct ExperimentConfig {
    EnvKind env_kind = EnvKind::tabular;
    RandomCMDPConfig tabular;
    PointMassConfig point_mass;
    MaskSpec mask{{}, 1};
    CollectionConfig collection;
    SolverConfig solver;
    PotentialTrainConfig potential;
    ShapingConfig shaping;
    SACConfig sac;
    QLearningConfig qlearning;
    CITestConfig diagnostics;
    std::optional<int> audit_hidden_dim;  // index into the unmasked trace
    std::vector<std::uint64_t> seeds{0};
    std::filesystem::path output_dir = "out";

    void validate() const;
};

/// Missing blocks keep their defaults; invalid values raise ConfigError.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// A stage failed; carries the stage name and, for per-seed stages, the seed.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, std::optional<std::uint64_t> seed, const std::string& what);
    const std::string& stage() const noexcept { return stage_; }
    std::optional<std::uint64_t> seed() const noexcept { return seed_; }

private:
    std::string stage_;
    std::optional<std::uint64_t> seed_;
};

inline const std::string kBaselineMethod = "baseline";
inline const std::string kShapedMethod = "causal-pbrs";

// Individual stages. Each reads its inputs from and writes its outputs to `out`.
void stage_gen_env(const ExperimentConfig& cfg, const std::filesystem::path& out);
void stage_collect(const ExperimentConfig& cfg, const std::filesystem::path& out);
/// Tabular only. Returns whether causal value iteration converged; the
/// potential table is written either way.
bool stage_solve(const ExperimentConfig& cfg, const std::filesystem::path& out);
/// Point-mass only.
void stage_train_potential(const ExperimentConfig& cfg, const std::filesystem::path& out);
void stage_train_agent(const ExperimentConfig& cfg, const std::filesystem::path& out, std::uint64_t seed,
                       const std::string& method);
void stage_diagnose(const ExperimentConfig& cfg, const std::filesystem::path& out,
                    const std::optional<std::vector<int>>& dims = std::nullopt);
void stage_report(const ExperimentConfig& cfg, const std::filesystem::path& out);

std::filesystem::path curve_path(const std::filesystem::path& out, const std::string& method, std::uint64_t seed);

struct PipelineResult {
    std::vector<std::string> executed;  // stage markers run this time
    bool solver_converged = true;
};

/// collect -> solve / train-potential -> train-agent (per seed and method) ->
/// diagnose -> report. Completed stages leave markers under `out/.stages` and
/// are skipped on rerun.
PipelineResult run_pipeline(const ExperimentConfig& cfg, int threads, std::ostream* log);

}  // namespace cshape
