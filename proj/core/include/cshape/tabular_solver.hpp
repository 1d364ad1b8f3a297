#pragma once

#include "cshape/cmdp.hpp"
#include "cshape/dataset.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <vector>

namespace cshape {

/// State values indexed by state.
using ValueTable = std::vector<double>;

/// Deterministic policy: action index per state.
using TabularPolicy = std::vector<int>;

struct SolveReport {
    std::size_t iterations = 0;
    double final_residual = 0.0;
    bool converged = false;
    std::vector<double> residual_history;
};

nlohmann::json to_json(const SolveReport& report);

struct SolveOptions {
    /// Iteration stops once the residual guarantees a sup-norm distance to the
    /// fixed point below tol, i.e. residual < tol * min(1, (1 - g) / g).
    double tol = 1e-10;
    std::size_t max_iter = 100000;
    std::optional<ValueTable> init;  // defaults to all zeros
};

struct SolveResult {
    ValueTable values;
    SolveReport report;
};

/// One application of the causal Bellman optimality operator:
///
///   (BV)(s) = max_x  P(x|s) (R(s,x) + g * sum_s' T(s,x,s') V(s'))
///                  + (1 - P(x|s)) (b + g * max_s'' V(s''))
///
/// The maximization runs over covered actions only. The global max of V is
/// computed once per sweep.
ValueTable causal_backup(const TabularModel& model, const ValueTable& v, double b, double gamma);

/// Standard Bellman optimality backup on the (confounded) estimates.
ValueTable standard_backup(const TabularModel& model, const ValueTable& v, double gamma);

/// Bellman optimality backup on a plain MDP.
ValueTable bellman_backup(const TabularMDP& mdp, const ValueTable& v, double gamma);

/// Iterates causal_backup from the initial table until the sup-norm change meets the tol rule.
SolveResult causal_value_iteration(const TabularModel& model, double b, double gamma, const SolveOptions& opts = {});

/// Value iteration on the estimates, ignoring confounding.
SolveResult naive_vi(const TabularModel& model, double gamma, const SolveOptions& opts = {});

SolveResult value_iteration(const TabularMDP& mdp, double gamma, const SolveOptions& opts = {});

/// V* of the true interventional MDP of a CMDP.
SolveResult oracle_interventional_vi(const TabularCMDP& cmdp, const SolveOptions& opts = {});

/// Argmax of the one-step lookahead; ties go to the lowest action index.
TabularPolicy greedy_policy(const ValueTable& v, const TabularMDP& mdp, double gamma);
TabularPolicy greedy_policy_naive(const ValueTable& v, const TabularModel& model, double gamma);
/// Argmax of the causal backup's bracket.
TabularPolicy greedy_policy_causal(const ValueTable& v, const TabularModel& model, double b, double gamma);

/// Exact V^pi on a plain MDP (direct linear solve).
ValueTable evaluate_policy(const TabularMDP& mdp, const TabularPolicy& policy, double gamma);

/// Expected discounted return from the initial state distribution.
double policy_return(const TabularMDP& mdp, const TabularPolicy& policy, double gamma, const RealVec& initial);

/// Actions whose lookahead lies within `slack` of the best, per state.
std::vector<std::vector<int>> optimal_action_sets(const ValueTable& v, const TabularMDP& mdp, double gamma,
                                                  double slack);

/// Turns the estimates into a plain MDP on the covered pairs (used by policy extraction helpers).
TabularMDP as_mdp(const TabularModel& model);

double sup_norm_diff(const ValueTable& a, const ValueTable& b);

}  // namespace cshape
