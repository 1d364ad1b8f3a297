#include "cshape/cmdp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cshape {

namespace {

void check_distribution(const RealVec& p, const char* name) {
    double sum = 0.0;
    for (double v : p) {
        if (!(v >= 0.0)) throw std::invalid_argument(std::string(name) + " has a negative or NaN entry");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12)
        throw std::invalid_argument(std::string(name) + " does not sum to 1");
}

}  // namespace

TabularCMDP::TabularCMDP(Tables tables) : t_(std::move(tables)) {
    if (t_.n_states <= 0 || t_.n_actions <= 0 || t_.n_noise <= 0)
        throw std::invalid_argument("TabularCMDP: sizes must be positive");
    const auto S = static_cast<std::size_t>(t_.n_states);
    const auto A = static_cast<std::size_t>(t_.n_actions);
    const auto U = static_cast<std::size_t>(t_.n_noise);
    if (t_.noise_probs.size() != U) throw std::invalid_argument("TabularCMDP: noise_probs length");
    if (t_.initial_state_probs.size() != S) throw std::invalid_argument("TabularCMDP: init length");
    if (t_.transition.size() != S * A * U) throw std::invalid_argument("TabularCMDP: transition size");
    if (t_.reward.size() != S * A * U) throw std::invalid_argument("TabularCMDP: reward size");
    if (t_.behavior.size() != S * U) throw std::invalid_argument("TabularCMDP: behavior size");
    if (!(t_.gamma > 0.0 && t_.gamma < 1.0)) throw std::invalid_argument("TabularCMDP: gamma must lie in (0,1)");
    check_distribution(t_.noise_probs, "noise_probs");
    check_distribution(t_.initial_state_probs, "initial_state_probs");
    for (int s : t_.transition)
        if (s < 0 || s >= t_.n_states) throw std::invalid_argument("TabularCMDP: transition output out of range");
    for (int x : t_.behavior)
        if (x < 0 || x >= t_.n_actions) throw std::invalid_argument("TabularCMDP: behavior output out of range");
    for (double y : t_.reward) {
        if (!std::isfinite(y)) throw std::invalid_argument("TabularCMDP: non-finite reward");
        if (y > t_.reward_bound) throw std::invalid_argument("TabularCMDP: reward exceeds declared bound b");
    }
}

void TabularCMDP::check_state(int s) const {
    if (s < 0 || s >= t_.n_states)
        throw std::invalid_argument("state index " + std::to_string(s) + " out of range");
}

void TabularCMDP::check_action(int x) const {
    if (x < 0 || x >= t_.n_actions)
        throw std::invalid_argument("action index " + std::to_string(x) + " out of range");
}

bool TabularCMDP::operator==(const TabularCMDP& o) const {
    const Tables& a = t_;
    const Tables& b = o.t_;
    return a.n_states == b.n_states && a.n_actions == b.n_actions && a.n_noise == b.n_noise &&
           a.noise_probs == b.noise_probs && a.transition == b.transition && a.behavior == b.behavior &&
           a.reward == b.reward && a.gamma == b.gamma && a.reward_bound == b.reward_bound &&
           a.initial_state_probs == b.initial_state_probs;
}

BehavioralStep behavioral_step(const TabularCMDP& cmdp, int s, Rng& rng) {
    cmdp.check_state(s);
    BehavioralStep out;
    out.noise = sample_categorical(cmdp.noise_probs(), rng);
    out.action = cmdp.behavior_action(s, out.noise);
    out.reward = cmdp.reward(s, out.action, out.noise);
    out.next_state = cmdp.next_state(s, out.action, out.noise);
    return out;
}

InterventionalStep interventional_step(const TabularCMDP& cmdp, int s, int x, Rng& rng) {
    cmdp.check_state(s);
    cmdp.check_action(x);
    const int u = sample_categorical(cmdp.noise_probs(), rng);
    return {cmdp.reward(s, x, u), cmdp.next_state(s, x, u)};
}

int sample_initial_state(const TabularCMDP& cmdp, Rng& rng) {
    return sample_categorical(cmdp.initial_state_probs(), rng);
}

TabularMDP exact_interventional_model(const TabularCMDP& cmdp) {
    const int S = cmdp.n_states(), A = cmdp.n_actions(), U = cmdp.n_noise();
    TabularMDP mdp;
    mdp.n_states = S;
    mdp.n_actions = A;
    mdp.transition.assign(static_cast<std::size_t>(S) * A * S, 0.0);
    mdp.reward.assign(static_cast<std::size_t>(S) * A, 0.0);
    const RealVec& pu = cmdp.noise_probs();
    for (int s = 0; s < S; ++s) {
        for (int x = 0; x < A; ++x) {
            const std::size_t sa = static_cast<std::size_t>(s) * A + x;
            double r = 0.0;
            for (int u = 0; u < U; ++u) {
                r += pu[u] * cmdp.reward(s, x, u);
                mdp.transition[sa * S + cmdp.next_state(s, x, u)] += pu[u];
            }
            mdp.reward[sa] = r;
        }
    }
    return mdp;
}

MaskSpec::MaskSpec(std::vector<int> hidden, int full) : hidden_dims(std::move(hidden)), full_dim(full) {
    std::sort(hidden_dims.begin(), hidden_dims.end());
    hidden_dims.erase(std::unique(hidden_dims.begin(), hidden_dims.end()), hidden_dims.end());
    for (int d : hidden_dims)
        if (d < 0 || d >= full_dim)
            throw std::invalid_argument("MaskSpec: hidden dim " + std::to_string(d) + " outside [0, full_dim)");
}

bool MaskSpec::hides(int dim) const {
    return std::binary_search(hidden_dims.begin(), hidden_dims.end(), dim);
}

std::string MaskSpec::to_list() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < hidden_dims.size(); ++i) {
        if (i) os << ',';
        os << hidden_dims[i];
    }
    return os.str();
}

MaskSpec MaskSpec::from_list(const std::string& list, int full_dim) {
    std::vector<int> dims;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::size_t used = 0;
        const int d = std::stoi(item, &used);
        if (used != item.size()) throw std::invalid_argument("MaskSpec: bad entry '" + item + "'");
        dims.push_back(d);
    }
    return MaskSpec(std::move(dims), full_dim);
}

RealVec mask_observation(std::span<const double> full, const MaskSpec& mask) {
    if (static_cast<int>(full.size()) != mask.full_dim)
        throw std::invalid_argument("mask_observation: observation length " + std::to_string(full.size()) +
                                    " != mask full_dim " + std::to_string(mask.full_dim));
    RealVec out;
    out.reserve(static_cast<std::size_t>(mask.masked_dim()));
    auto hidden = mask.hidden_dims.begin();
    for (int i = 0; i < mask.full_dim; ++i) {
        if (hidden != mask.hidden_dims.end() && *hidden == i) {
            ++hidden;
            continue;
        }
        out.push_back(full[static_cast<std::size_t>(i)]);
    }
    return out;
}

nlohmann::json to_json(const TabularCMDP& cmdp) {
    const auto& t = cmdp.tables();
    const int S = t.n_states, A = t.n_actions, U = t.n_noise;
    nlohmann::json transition = nlohmann::json::array();
    nlohmann::json reward = nlohmann::json::array();
    nlohmann::json behavior = nlohmann::json::array();
    for (int s = 0; s < S; ++s) {
        nlohmann::json ts = nlohmann::json::array(), rs = nlohmann::json::array(), bs = nlohmann::json::array();
        for (int x = 0; x < A; ++x) {
            nlohmann::json tx = nlohmann::json::array(), rx = nlohmann::json::array();
            for (int u = 0; u < U; ++u) {
                tx.push_back(cmdp.next_state(s, x, u));
                rx.push_back(cmdp.reward(s, x, u));
            }
            ts.push_back(std::move(tx));
            rs.push_back(std::move(rx));
        }
        for (int u = 0; u < U; ++u) bs.push_back(cmdp.behavior_action(s, u));
        transition.push_back(std::move(ts));
        reward.push_back(std::move(rs));
        behavior.push_back(std::move(bs));
    }
    return {{"version", 1},
            {"n_states", S},
            {"n_actions", A},
            {"n_noise", U},
            {"noise_probs", t.noise_probs},
            {"transition", std::move(transition)},
            {"behavior", std::move(behavior)},
            {"reward", std::move(reward)},
            {"gamma", t.gamma},
            {"b", t.reward_bound},
            {"init", t.initial_state_probs}};
}

TabularCMDP cmdp_from_json(const nlohmann::json& doc) {
    if (doc.value("version", 0) != 1) throw std::invalid_argument("cmdp document: unsupported version");
    TabularCMDP::Tables t;
    t.n_states = doc.at("n_states").get<int>();
    t.noise_probs = doc.at("noise_probs").get<RealVec>();
    t.n_noise = doc.contains("n_noise") ? doc.at("n_noise").get<int>() : static_cast<int>(t.noise_probs.size());
    const auto& tr = doc.at("transition");
    t.n_actions = doc.contains("n_actions") ? doc.at("n_actions").get<int>()
                                            : static_cast<int>(tr.at(0).size());
    for (const auto& ts : tr)
        for (const auto& tx : ts)
            for (const auto& v : tx) t.transition.push_back(v.get<int>());
    for (const auto& rs : doc.at("reward"))
        for (const auto& rx : rs)
            for (const auto& v : rx) t.reward.push_back(v.get<double>());
    for (const auto& bs : doc.at("behavior"))
        for (const auto& v : bs) t.behavior.push_back(v.get<int>());
    t.gamma = doc.at("gamma").get<double>();
    t.reward_bound = doc.at("b").get<double>();
    t.initial_state_probs = doc.at("init").get<RealVec>();
    return TabularCMDP(std::move(t));
}

}  // namespace cshape
