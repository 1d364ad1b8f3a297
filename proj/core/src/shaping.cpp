#include "cshape/shaping.hpp"

#include <cmath>
#include <sstream>

namespace cshape {

TerminalRule terminal_rule_from_string(const std::string& name) {
    if (name == "zero-next-potential") return TerminalRule::zero_next_potential;
    if (name == "carry") return TerminalRule::carry;
    throw ConfigError("unknown terminal_rule '" + name + "'");
}

std::string to_string(TerminalRule rule) {
    return rule == TerminalRule::carry ? "carry" : "zero-next-potential";
}

void ShapingConfig::validate() const {
    if (!std::isfinite(beta) || beta < 0.0) throw ConfigError("shaping: beta must be finite and >= 0");
    if (!(pbrs_gamma > 0.0 && pbrs_gamma <= 1.0)) throw ConfigError("shaping: pbrs_gamma must lie in (0,1]");
}

ShapingConfig shaping_config_from_json(const nlohmann::json& j) {
    ShapingConfig cfg;
    cfg.beta = j.value("beta", cfg.beta);
    cfg.pbrs_gamma = j.value("pbrs_gamma", cfg.pbrs_gamma);
    if (j.contains("terminal_rule")) cfg.terminal_rule = terminal_rule_from_string(j.at("terminal_rule").get<std::string>());
    cfg.potential_source = j.value("potential", std::string{});
    cfg.validate();
    return cfg;
}

nlohmann::json to_json(const ShapingConfig& cfg) {
    return {{"beta", cfg.beta},
            {"pbrs_gamma", cfg.pbrs_gamma},
            {"terminal_rule", to_string(cfg.terminal_rule)},
            {"potential", cfg.potential_source}};
}

namespace {

std::string describe(std::span<const double> s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

double checked_potential(const ShapingConfig& cfg, std::span<const double> s) {
    const double phi = cfg.potential(s);
    if (!std::isfinite(phi)) throw std::domain_error("shaping: non-finite potential at state " + describe(s));
    return phi;
}

}  // namespace

double shaped_reward(double reward, std::span<const double> s, std::span<const double> s_next, bool done,
                     const ShapingConfig& cfg) {
    if (!cfg.potential) throw std::invalid_argument("shaping: no potential attached");
    const double phi = checked_potential(cfg, s);
    const bool use_next = !done || cfg.terminal_rule == TerminalRule::carry;
    const double phi_next = use_next ? checked_potential(cfg, s_next) : 0.0;
    return reward + cfg.beta * (cfg.pbrs_gamma * phi_next - phi);
}

PotentialFn table_potential(ValueTable table) {
    return [table = std::move(table)](std::span<const double> obs) {
        const auto s = static_cast<std::size_t>(obs[0]);
        return table.at(s);
    };
}

ShapedRewards shape_tabular_mdp(const TabularMDP& mdp, const ValueTable& phi, double gamma) {
    if (static_cast<int>(phi.size()) != mdp.n_states) throw std::invalid_argument("shape_tabular_mdp: potential length");
    ShapedRewards out;
    out.n_states = mdp.n_states;
    out.n_actions = mdp.n_actions;
    out.values.resize(static_cast<std::size_t>(mdp.n_states) * mdp.n_actions * mdp.n_states);
    for (int s = 0; s < mdp.n_states; ++s)
        for (int x = 0; x < mdp.n_actions; ++x)
            for (int sn = 0; sn < mdp.n_states; ++sn)
                out.values[(static_cast<std::size_t>(s) * mdp.n_actions + x) * mdp.n_states + sn] =
                    mdp.r(s, x) + gamma * phi[sn] - phi[s];
    return out;
}

TabularMDP shaped_mdp(const TabularMDP& mdp, const ShapedRewards& shaped) {
    TabularMDP out = mdp;
    for (int s = 0; s < mdp.n_states; ++s)
        for (int x = 0; x < mdp.n_actions; ++x) {
            double r = 0.0;
            for (int sn = 0; sn < mdp.n_states; ++sn) r += mdp.t(s, x, sn) * shaped.at(s, x, sn);
            out.reward[static_cast<std::size_t>(s) * mdp.n_actions + x] = r;
        }
    return out;
}

}  // namespace cshape
