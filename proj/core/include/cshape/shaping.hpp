#pragma once

#include "cshape/cmdp.hpp"
#include "cshape/tabular_solver.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <span>
#include <string>

namespace cshape {

enum class TerminalRule { zero_next_potential, carry };

TerminalRule terminal_rule_from_string(const std::string& name);
std::string to_string(TerminalRule rule);

using PotentialFn = std::function<double(std::span<const double>)>;

/// Scaled potential-based shaping: y + beta * (pbrs_gamma * phi(s') - phi(s)).
///
/// Policy invariance holds when pbrs_gamma equals the learner's discount; the
/// default of 1 is the undiscounted variant used for online SAC training and
/// does not carry that guarantee for discounted learners.
struct ShapingConfig {
    double beta = 1.0;
    double pbrs_gamma = 1.0;
    TerminalRule terminal_rule = TerminalRule::zero_next_potential;
    PotentialFn potential;
    std::string potential_source;  // checkpoint path, if any

    void validate() const;
};

/// Parses the shaping block; `potential` must be attached by the caller.
ShapingConfig shaping_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ShapingConfig& cfg);

double shaped_reward(double reward, std::span<const double> s, std::span<const double> s_next, bool done,
                     const ShapingConfig& cfg);

/// Potential that reads a value table at the integer state stored in obs[0].
PotentialFn table_potential(ValueTable table);

/// R'(s, x, s') = R(s, x) + gamma * phi(s') - phi(s), laid out at [(s*A + x)*S + s'].
struct ShapedRewards {
    int n_states = 0;
    int n_actions = 0;
    RealVec values;

    double at(int s, int x, int s_next) const {
        return values[(static_cast<std::size_t>(s) * n_actions + x) * n_states + s_next];
    }
};

ShapedRewards shape_tabular_mdp(const TabularMDP& mdp, const ValueTable& phi, double gamma);

/// Folds shaped rewards back into expected-reward form so the standard solvers apply.
TabularMDP shaped_mdp(const TabularMDP& mdp, const ShapedRewards& shaped);

}  // namespace cshape
