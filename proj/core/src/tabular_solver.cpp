#include "cshape/tabular_solver.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace cshape {

nlohmann::json to_json(const SolveReport& report) {
    return {{"iterations", report.iterations},
            {"final_residual", report.final_residual},
            {"converged", report.converged},
            {"residual_history", report.residual_history}};
}

double sup_norm_diff(const ValueTable& a, const ValueTable& b) {
    if (a.size() != b.size()) throw std::invalid_argument("sup_norm_diff: size mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

namespace {

void check_values(const ValueTable& v, int n_states) {
    if (static_cast<int>(v.size()) != n_states)
        throw std::invalid_argument("value table length " + std::to_string(v.size()) + " != n_states " +
                                    std::to_string(n_states));
}

void check_gamma(double gamma) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0,1)");
}

double expected_next(const TabularModel& m, int s, int x, const ValueTable& v) {
    double acc = 0.0;
    const std::size_t row = m.sa(s, x) * static_cast<std::size_t>(m.n_states);
    for (int sn = 0; sn < m.n_states; ++sn) acc += m.transition[row + sn] * v[sn];
    return acc;
}

double expected_next(const TabularMDP& m, int s, int x, const ValueTable& v) {
    double acc = 0.0;
    const std::size_t row = (static_cast<std::size_t>(s) * m.n_actions + x) * m.n_states;
    for (int sn = 0; sn < m.n_states; ++sn) acc += m.transition[row + sn] * v[sn];
    return acc;
}

double causal_bracket(const TabularModel& m, int s, int x, const ValueTable& v, double b, double gamma,
                      double v_max) {
    const double p = m.p(s, x);
    return p * (m.r(s, x) + gamma * expected_next(m, s, x, v)) + (1.0 - p) * (b + gamma * v_max);
}

template <class Backup>
SolveResult iterate(int n_states, double gamma, const SolveOptions& opts, Backup&& backup) {
    if (!(opts.tol > 0.0)) throw std::invalid_argument("solver tol must be positive");
    check_gamma(gamma);
    // A residual r leaves the iterate within g/(1-g) r of the fixed point.
    const double stop = opts.tol * std::min(1.0, (1.0 - gamma) / gamma);
    SolveResult res;
    res.values = opts.init.value_or(ValueTable(static_cast<std::size_t>(n_states), 0.0));
    check_values(res.values, n_states);
    for (std::size_t it = 0; it < opts.max_iter; ++it) {
        ValueTable next = backup(res.values);
        const double residual = sup_norm_diff(next, res.values);
        res.values = std::move(next);
        res.report.residual_history.push_back(residual);
        res.report.iterations = it + 1;
        res.report.final_residual = residual;
        if (residual < stop) {
            res.report.converged = true;
            break;
        }
    }
    return res;
}

}  // namespace

ValueTable causal_backup(const TabularModel& model, const ValueTable& v, double b, double gamma) {
    check_values(v, model.n_states);
    check_gamma(gamma);
    const double v_max = *std::max_element(v.begin(), v.end());
    ValueTable out(v.size());
    for (int s = 0; s < model.n_states; ++s) {
        double best = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (int x = 0; x < model.n_actions; ++x) {
            if (!model.is_covered(s, x)) continue;
            any = true;
            best = std::max(best, causal_bracket(model, s, x, v, b, gamma, v_max));
        }
        if (!any) throw CoverageError("causal_backup: no observed action at state " + std::to_string(s), s);
        out[s] = best;
    }
    return out;
}

ValueTable standard_backup(const TabularModel& model, const ValueTable& v, double gamma) {
    check_values(v, model.n_states);
    check_gamma(gamma);
    ValueTable out(v.size());
    for (int s = 0; s < model.n_states; ++s) {
        double best = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (int x = 0; x < model.n_actions; ++x) {
            if (!model.is_covered(s, x)) continue;
            any = true;
            best = std::max(best, model.r(s, x) + gamma * expected_next(model, s, x, v));
        }
        if (!any) throw CoverageError("standard_backup: no observed action at state " + std::to_string(s), s);
        out[s] = best;
    }
    return out;
}

ValueTable bellman_backup(const TabularMDP& mdp, const ValueTable& v, double gamma) {
    check_values(v, mdp.n_states);
    check_gamma(gamma);
    ValueTable out(v.size());
    for (int s = 0; s < mdp.n_states; ++s) {
        double best = -std::numeric_limits<double>::infinity();
        for (int x = 0; x < mdp.n_actions; ++x) best = std::max(best, mdp.r(s, x) + gamma * expected_next(mdp, s, x, v));
        out[s] = best;
    }
    return out;
}

SolveResult causal_value_iteration(const TabularModel& model, double b, double gamma, const SolveOptions& opts) {
    return iterate(model.n_states, gamma, opts, [&](const ValueTable& v) { return causal_backup(model, v, b, gamma); });
}

SolveResult naive_vi(const TabularModel& model, double gamma, const SolveOptions& opts) {
    return iterate(model.n_states, gamma, opts, [&](const ValueTable& v) { return standard_backup(model, v, gamma); });
}

SolveResult value_iteration(const TabularMDP& mdp, double gamma, const SolveOptions& opts) {
    return iterate(mdp.n_states, gamma, opts, [&](const ValueTable& v) { return bellman_backup(mdp, v, gamma); });
}

SolveResult oracle_interventional_vi(const TabularCMDP& cmdp, const SolveOptions& opts) {
    return value_iteration(exact_interventional_model(cmdp), cmdp.gamma(), opts);
}

TabularPolicy greedy_policy(const ValueTable& v, const TabularMDP& mdp, double gamma) {
    check_values(v, mdp.n_states);
    TabularPolicy pi(static_cast<std::size_t>(mdp.n_states), 0);
    for (int s = 0; s < mdp.n_states; ++s) {
        double best = -std::numeric_limits<double>::infinity();
        for (int x = 0; x < mdp.n_actions; ++x) {
            const double q = mdp.r(s, x) + gamma * expected_next(mdp, s, x, v);
            if (q > best) {
                best = q;
                pi[s] = x;
            }
        }
    }
    return pi;
}

TabularPolicy greedy_policy_naive(const ValueTable& v, const TabularModel& model, double gamma) {
    check_values(v, model.n_states);
    TabularPolicy pi(static_cast<std::size_t>(model.n_states), -1);
    for (int s = 0; s < model.n_states; ++s) {
        double best = -std::numeric_limits<double>::infinity();
        for (int x = 0; x < model.n_actions; ++x) {
            if (!model.is_covered(s, x)) continue;
            const double q = model.r(s, x) + gamma * expected_next(model, s, x, v);
            if (q > best) {
                best = q;
                pi[s] = x;
            }
        }
        if (pi[s] < 0) throw CoverageError("greedy_policy_naive: no observed action at state " + std::to_string(s), s);
    }
    return pi;
}

TabularPolicy greedy_policy_causal(const ValueTable& v, const TabularModel& model, double b, double gamma) {
    check_values(v, model.n_states);
    const double v_max = *std::max_element(v.begin(), v.end());
    TabularPolicy pi(static_cast<std::size_t>(model.n_states), -1);
    for (int s = 0; s < model.n_states; ++s) {
        double best = -std::numeric_limits<double>::infinity();
        for (int x = 0; x < model.n_actions; ++x) {
            if (!model.is_covered(s, x)) continue;
            const double q = causal_bracket(model, s, x, v, b, gamma, v_max);
            if (q > best) {
                best = q;
                pi[s] = x;
            }
        }
        if (pi[s] < 0) throw CoverageError("greedy_policy_causal: no observed action at state " + std::to_string(s), s);
    }
    return pi;
}

ValueTable evaluate_policy(const TabularMDP& mdp, const TabularPolicy& policy, double gamma) {
    const int S = mdp.n_states;
    if (static_cast<int>(policy.size()) != S) throw std::invalid_argument("evaluate_policy: policy length");
    Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(S, S);
    Eigen::VectorXd rhs(S);
    for (int s = 0; s < S; ++s) {
        const int x = policy[s];
        if (x < 0 || x >= mdp.n_actions) throw std::invalid_argument("evaluate_policy: action out of range");
        rhs(s) = mdp.r(s, x);
        for (int sn = 0; sn < S; ++sn) lhs(s, sn) -= gamma * mdp.t(s, x, sn);
    }
    const Eigen::VectorXd v = lhs.partialPivLu().solve(rhs);
    return ValueTable(v.data(), v.data() + S);
}

double policy_return(const TabularMDP& mdp, const TabularPolicy& policy, double gamma, const RealVec& initial) {
    const ValueTable v = evaluate_policy(mdp, policy, gamma);
    double acc = 0.0;
    for (std::size_t s = 0; s < v.size(); ++s) acc += initial.at(s) * v[s];
    return acc;
}

std::vector<std::vector<int>> optimal_action_sets(const ValueTable& v, const TabularMDP& mdp, double gamma,
                                                  double slack) {
    check_values(v, mdp.n_states);
    std::vector<std::vector<int>> sets(static_cast<std::size_t>(mdp.n_states));
    for (int s = 0; s < mdp.n_states; ++s) {
        RealVec q(static_cast<std::size_t>(mdp.n_actions));
        for (int x = 0; x < mdp.n_actions; ++x) q[x] = mdp.r(s, x) + gamma * expected_next(mdp, s, x, v);
        const double best = *std::max_element(q.begin(), q.end());
        for (int x = 0; x < mdp.n_actions; ++x)
            if (q[x] >= best - slack) sets[s].push_back(x);
    }
    return sets;
}

TabularMDP as_mdp(const TabularModel& model) {
    TabularMDP mdp;
    mdp.n_states = model.n_states;
    mdp.n_actions = model.n_actions;
    mdp.transition = model.transition;
    mdp.reward = model.reward;
    return mdp;
}

}  // namespace cshape
