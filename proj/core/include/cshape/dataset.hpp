#pragma once

#include "cshape/cmdp.hpp"
#include "cshape/envs.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cshape {

struct RewardStats {
    double min = 0.0;
    double max = 0.0;
    double mean = 0.0;
    std::size_t count = 0;

    bool operator==(const RewardStats&) const = default;
};

/// Masked offline transitions. `privileged` optionally carries, per
/// transition, the unmasked observation together with the hidden confounder
/// (a debug stream for the confounding audit); learners never read it.
struct TrajectoryDataset {
    std::vector<Transition> transitions;
    std::string env_id;
    MaskSpec mask;
    std::uint64_t seed = 0;
    RewardStats reward_stats;
    std::optional<std::string> skill_tag;
    std::vector<RealVec> privileged;

    bool empty() const noexcept { return transitions.empty(); }
    std::size_t size() const noexcept { return transitions.size(); }

    /// Recomputes reward_stats from the transitions.
    void refresh_stats();

    bool operator==(const TrajectoryDataset&) const = default;
};

/// Single pass over the rewards.
RewardStats compute_reward_stats(const std::vector<Transition>& transitions);

/// Behavioral rollouts of a tabular CMDP in fixed-horizon episodes. Observations
/// and actions are stored as single-element index vectors; the privileged
/// stream holds [s, u] for each step.
TrajectoryDataset collect_tabular(const TabularCMDP& cmdp, std::size_t n_steps, int horizon, Rng& rng,
                                  const std::string& env_id = "tabular");

/// Behavioral rollouts of a continuous environment. Episodes run until the
/// environment truncates. Observations are masked with `mask`; the
/// privileged stream holds the full observation followed by the hidden context.
TrajectoryDataset collect(ContinuousEnv& env, const BehaviorPolicy& policy, const MaskSpec& mask,
                          std::size_t n_steps, Rng& rng);

/// Concatenates datasets from the same environment, renumbering episodes.
TrajectoryDataset merge_datasets(const std::vector<TrajectoryDataset>& parts, const std::string& skill_tag);

/// Re-expresses a tabular dataset with one-hot states and actions.
TrajectoryDataset one_hot_embed(const TrajectoryDataset& ds, int n_states, int n_actions);

/// Estimated quantities consumed by the tabular solvers.
/// Layout: propensity/reward/covered at [s*A + x]; transition at [(s*A + x)*S + s'].
struct TabularModel {
    int n_states = 0;
    int n_actions = 0;
    RealVec propensity;  // P(x | s)
    RealVec reward;      // E[Y | s, x]
    RealVec transition;  // P(s' | s, x)
    std::vector<bool> covered;

    std::size_t sa(int s, int x) const { return static_cast<std::size_t>(s) * n_actions + x; }
    double p(int s, int x) const { return propensity[sa(s, x)]; }
    double r(int s, int x) const { return reward[sa(s, x)]; }
    double t(int s, int x, int s_next) const { return transition[sa(s, x) * n_states + s_next]; }
    bool is_covered(int s, int x) const { return covered[sa(s, x)]; }
};

struct EmpiricalTabularModel {
    int n_states = 0;
    int n_actions = 0;
    std::vector<double> counts_sxs;
    std::vector<double> counts_sx;
    std::vector<double> counts_s;
    std::vector<double> reward_sums;
    double smoothing_alpha = 0.0;

    /// Adds another shard's counts (estimation is an additive fold).
    void merge(const EmpiricalTabularModel& other);

    /// P(x|s) = (n(s,x) + alpha) / (n(s) + alpha*A). Unobserved pairs get
    /// reward 0, a uniform transition row and covered = false.
    TabularModel model() const;
};

/// Counts from a tabular dataset. Sizes default to 1 + the largest index seen.
EmpiricalTabularModel estimate_tabular(const TrajectoryDataset& ds, double alpha, std::optional<int> n_states = {},
                                       std::optional<int> n_actions = {});

/// Population-level observational quantities of a CMDP (no sampling error).
/// Because U is drawn afresh at every step, P(x|s), E[Y|s,x] and P(s'|s,x)
/// follow from summing over u alone.
TabularModel exact_observational_model(const TabularCMDP& cmdp);

/// Shifts rewards by -mean. Returns the shift that was removed (the mean).
double normalize_rewards(TrajectoryDataset& ds);
void denormalize_rewards(TrajectoryDataset& ds, double offset);

double dataset_reward_max(const TrajectoryDataset& ds);

/// Line-oriented text format: a header line followed by one JSON object per transition.
void save(const TrajectoryDataset& ds, const std::filesystem::path& path);
TrajectoryDataset load(const std::filesystem::path& path);
void export_csv(const TrajectoryDataset& ds, const std::filesystem::path& path);

std::string serialize(const TrajectoryDataset& ds);
TrajectoryDataset deserialize(const std::string& text);

}  // namespace cshape
