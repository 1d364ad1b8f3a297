#include "cshape/dataset.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace cshape {

RewardStats compute_reward_stats(const std::vector<Transition>& transitions) {
    RewardStats st;
    if (transitions.empty()) return st;
    st.min = std::numeric_limits<double>::infinity();
    st.max = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (const auto& tr : transitions) {
        st.min = std::min(st.min, tr.reward);
        st.max = std::max(st.max, tr.reward);
        sum += tr.reward;
    }
    st.count = transitions.size();
    st.mean = sum / static_cast<double>(st.count);
    return st;
}

void TrajectoryDataset::refresh_stats() { reward_stats = compute_reward_stats(transitions); }

TrajectoryDataset collect_tabular(const TabularCMDP& cmdp, std::size_t n_steps, int horizon, Rng& rng,
                                  const std::string& env_id) {
    if (n_steps == 0) throw std::invalid_argument("collect: n_steps must be positive");
    if (horizon <= 0) throw std::invalid_argument("collect: horizon must be positive");
    TrajectoryDataset ds;
    ds.env_id = env_id;
    ds.mask = MaskSpec({}, 1);
    ds.transitions.reserve(n_steps);
    ds.privileged.reserve(n_steps);
    int episode = 0;
    int t = 0;
    int s = sample_initial_state(cmdp, rng);
    for (std::size_t i = 0; i < n_steps; ++i) {
        const BehavioralStep step = behavioral_step(cmdp, s, rng);
        Transition tr;
        tr.obs = {static_cast<double>(s)};
        tr.action = {static_cast<double>(step.action)};
        tr.reward = step.reward;
        tr.next_obs = {static_cast<double>(step.next_state)};
        tr.episode_id = episode;
        tr.step_index = t;
        ds.transitions.push_back(std::move(tr));
        ds.privileged.push_back({static_cast<double>(s), static_cast<double>(step.noise)});
        s = step.next_state;
        if (++t >= horizon) {
            ++episode;
            t = 0;
            s = sample_initial_state(cmdp, rng);
        }
    }
    ds.refresh_stats();
    return ds;
}

TrajectoryDataset collect(ContinuousEnv& env, const BehaviorPolicy& policy, const MaskSpec& mask,
                          std::size_t n_steps, Rng& rng) {
    if (n_steps == 0) throw std::invalid_argument("collect: n_steps must be positive");
    if (mask.full_dim != env.obs_dim()) throw std::invalid_argument("collect: mask does not match environment");
    TrajectoryDataset ds;
    ds.env_id = env.id();
    ds.mask = mask;
    ds.transitions.reserve(n_steps);
    ds.privileged.reserve(n_steps);
    int episode = 0;
    int t = 0;
    RealVec obs = env.reset(rng());
    for (std::size_t i = 0; i < n_steps; ++i) {
        const RealVec context = env.privileged_context();
        RealVec action = policy(obs, context, rng);
        StepOutcome out = env.step(action);
        Transition tr;
        tr.obs = mask_observation(obs, mask);
        tr.action = std::move(action);
        tr.reward = out.reward;
        tr.next_obs = mask_observation(out.obs, mask);
        tr.done = out.done;
        tr.episode_id = episode;
        tr.step_index = t;
        ds.transitions.push_back(std::move(tr));
        RealVec priv = obs;
        priv.insert(priv.end(), context.begin(), context.end());
        ds.privileged.push_back(std::move(priv));
        obs = std::move(out.obs);
        ++t;
        if (out.done || out.truncated) {
            ++episode;
            t = 0;
            obs = env.reset(rng());
        }
    }
    ds.refresh_stats();
    return ds;
}

TrajectoryDataset merge_datasets(const std::vector<TrajectoryDataset>& parts, const std::string& skill_tag) {
    if (parts.empty()) throw std::invalid_argument("merge_datasets: no parts");
    TrajectoryDataset out;
    out.env_id = parts.front().env_id;
    out.mask = parts.front().mask;
    out.seed = parts.front().seed;
    out.skill_tag = skill_tag;
    int episode_offset = 0;
    bool keep_privileged = true;
    for (const auto& p : parts) keep_privileged = keep_privileged && p.privileged.size() == p.transitions.size();
    for (const auto& p : parts) {
        if (p.env_id != out.env_id || p.mask.hidden_dims != out.mask.hidden_dims)
            throw std::invalid_argument("merge_datasets: parts come from different environments or masks");
        int max_ep = -1;
        for (Transition tr : p.transitions) {
            max_ep = std::max(max_ep, tr.episode_id);
            tr.episode_id += episode_offset;
            out.transitions.push_back(std::move(tr));
        }
        if (keep_privileged) out.privileged.insert(out.privileged.end(), p.privileged.begin(), p.privileged.end());
        episode_offset += max_ep + 1;
    }
    out.refresh_stats();
    return out;
}

TrajectoryDataset one_hot_embed(const TrajectoryDataset& ds, int n_states, int n_actions) {
    auto one_hot = [](double index, int n) {
        RealVec v(static_cast<std::size_t>(n), 0.0);
        const int i = static_cast<int>(index);
        if (i < 0 || i >= n) throw std::invalid_argument("one_hot_embed: index out of range");
        v[static_cast<std::size_t>(i)] = 1.0;
        return v;
    };
    TrajectoryDataset out = ds;
    out.mask = MaskSpec({}, n_states);
    for (auto& tr : out.transitions) {
        tr.obs = one_hot(tr.obs.at(0), n_states);
        tr.next_obs = one_hot(tr.next_obs.at(0), n_states);
        tr.action = one_hot(tr.action.at(0), n_actions);
    }
    for (auto& priv : out.privileged) {
        RealVec embedded = one_hot(priv.at(0), n_states);
        embedded.insert(embedded.end(), priv.begin() + 1, priv.end());
        priv = std::move(embedded);
    }
    return out;
}

// ---------------------------------------------------------------------------

void EmpiricalTabularModel::merge(const EmpiricalTabularModel& other) {
    if (other.n_states != n_states || other.n_actions != n_actions)
        throw std::invalid_argument("EmpiricalTabularModel::merge: size mismatch");
    auto add = [](std::vector<double>& a, const std::vector<double>& b) {
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    add(counts_sxs, other.counts_sxs);
    add(counts_sx, other.counts_sx);
    add(counts_s, other.counts_s);
    add(reward_sums, other.reward_sums);
}

TabularModel EmpiricalTabularModel::model() const {
    const int S = n_states, A = n_actions;
    TabularModel m;
    m.n_states = S;
    m.n_actions = A;
    m.propensity.assign(static_cast<std::size_t>(S) * A, 0.0);
    m.reward.assign(static_cast<std::size_t>(S) * A, 0.0);
    m.transition.assign(static_cast<std::size_t>(S) * A * S, 0.0);
    m.covered.assign(static_cast<std::size_t>(S) * A, false);
    for (int s = 0; s < S; ++s) {
        const double denom = counts_s[s] + smoothing_alpha * A;
        for (int x = 0; x < A; ++x) {
            const std::size_t sa = m.sa(s, x);
            const double n_sx = counts_sx[sa];
            m.propensity[sa] = denom > 0.0 ? (n_sx + smoothing_alpha) / denom : 1.0 / A;
            if (n_sx > 0.0) {
                m.covered[sa] = true;
                m.reward[sa] = reward_sums[sa] / n_sx;
                for (int sn = 0; sn < S; ++sn) m.transition[sa * S + sn] = counts_sxs[sa * S + sn] / n_sx;
            } else {
                for (int sn = 0; sn < S; ++sn) m.transition[sa * S + sn] = 1.0 / S;
            }
        }
    }
    return m;
}

EmpiricalTabularModel estimate_tabular(const TrajectoryDataset& ds, double alpha, std::optional<int> n_states,
                                       std::optional<int> n_actions) {
    if (ds.empty()) throw std::invalid_argument("estimate_tabular: empty dataset");
    if (!(alpha >= 0.0)) throw std::invalid_argument("estimate_tabular: alpha must be non-negative");
    int max_s = 0, max_x = 0;
    for (const auto& tr : ds.transitions) {
        if (tr.obs.size() != 1 || tr.action.size() != 1 || tr.next_obs.size() != 1)
            throw std::invalid_argument("estimate_tabular: dataset is not tabular");
        max_s = std::max({max_s, static_cast<int>(tr.obs[0]), static_cast<int>(tr.next_obs[0])});
        max_x = std::max(max_x, static_cast<int>(tr.action[0]));
    }
    EmpiricalTabularModel em;
    em.n_states = n_states.value_or(max_s + 1);
    em.n_actions = n_actions.value_or(max_x + 1);
    if (max_s >= em.n_states || max_x >= em.n_actions)
        throw std::invalid_argument("estimate_tabular: index exceeds declared size");
    const std::size_t S = static_cast<std::size_t>(em.n_states), A = static_cast<std::size_t>(em.n_actions);
    em.smoothing_alpha = alpha;
    em.counts_sxs.assign(S * A * S, 0.0);
    em.counts_sx.assign(S * A, 0.0);
    em.counts_s.assign(S, 0.0);
    em.reward_sums.assign(S * A, 0.0);
    for (const auto& tr : ds.transitions) {
        const auto s = static_cast<std::size_t>(tr.obs[0]);
        const auto x = static_cast<std::size_t>(tr.action[0]);
        const auto sn = static_cast<std::size_t>(tr.next_obs[0]);
        em.counts_s[s] += 1.0;
        em.counts_sx[s * A + x] += 1.0;
        em.counts_sxs[(s * A + x) * S + sn] += 1.0;
        em.reward_sums[s * A + x] += tr.reward;
    }
    return em;
}

TabularModel exact_observational_model(const TabularCMDP& cmdp) {
    const int S = cmdp.n_states(), A = cmdp.n_actions(), U = cmdp.n_noise();
    TabularModel m;
    m.n_states = S;
    m.n_actions = A;
    m.propensity.assign(static_cast<std::size_t>(S) * A, 0.0);
    m.reward.assign(static_cast<std::size_t>(S) * A, 0.0);
    m.transition.assign(static_cast<std::size_t>(S) * A * S, 0.0);
    m.covered.assign(static_cast<std::size_t>(S) * A, false);
    const RealVec& pu = cmdp.noise_probs();
    for (int s = 0; s < S; ++s) {
        for (int u = 0; u < U; ++u) {
            const int x = cmdp.behavior_action(s, u);
            const std::size_t sa = m.sa(s, x);
            m.propensity[sa] += pu[u];
            m.reward[sa] += pu[u] * cmdp.reward(s, x, u);
            m.transition[sa * S + cmdp.next_state(s, x, u)] += pu[u];
        }
        for (int x = 0; x < A; ++x) {
            const std::size_t sa = m.sa(s, x);
            const double p = m.propensity[sa];
            if (p > 0.0) {
                m.covered[sa] = true;
                m.reward[sa] /= p;
                for (int sn = 0; sn < S; ++sn) m.transition[sa * S + sn] /= p;
            } else {
                for (int sn = 0; sn < S; ++sn) m.transition[sa * S + sn] = 1.0 / S;
            }
        }
    }
    return m;
}

double normalize_rewards(TrajectoryDataset& ds) {
    if (ds.empty()) throw std::invalid_argument("normalize_rewards: empty dataset");
    const double offset = compute_reward_stats(ds.transitions).mean;
    if (offset != 0.0)
        for (auto& tr : ds.transitions) tr.reward -= offset;
    ds.refresh_stats();
    return offset;
}

void denormalize_rewards(TrajectoryDataset& ds, double offset) {
    if (offset != 0.0)
        for (auto& tr : ds.transitions) tr.reward += offset;
    ds.refresh_stats();
}

double dataset_reward_max(const TrajectoryDataset& ds) {
    if (ds.empty()) throw std::invalid_argument("dataset_reward_max: empty dataset");
    return ds.reward_stats.max;
}

// ---------------------------------------------------------------------------
// Text format

namespace {

constexpr const char* kMagic = "#causal-shaping-dataset";

std::string header_line(const TrajectoryDataset& ds) {
    std::ostringstream os;
    os << kMagic << " v1 env=" << ds.env_id << " mask=" << ds.mask.to_list() << " seed=" << ds.seed
       << " full_dim=" << ds.mask.full_dim << " n=" << ds.transitions.size();
    if (ds.skill_tag) os << " skill=" << *ds.skill_tag;
    return os.str();
}

}  // namespace

std::string serialize(const TrajectoryDataset& ds) {
    const bool with_priv = !ds.privileged.empty();
    if (with_priv && ds.privileged.size() != ds.transitions.size())
        throw std::invalid_argument("serialize: privileged stream length mismatch");
    std::string out = header_line(ds);
    out += '\n';
    for (std::size_t i = 0; i < ds.transitions.size(); ++i) {
        const Transition& tr = ds.transitions[i];
        nlohmann::ordered_json j = {{"ep", tr.episode_id}, {"t", tr.step_index}, {"obs", tr.obs},
                                    {"act", tr.action},    {"rew", tr.reward},   {"next_obs", tr.next_obs},
                                    {"done", tr.done}};
        if (with_priv) j["priv"] = ds.privileged[i];
        out += j.dump();
        out += '\n';
    }
    return out;
}

TrajectoryDataset deserialize(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line)) throw ParseError("dataset: missing header", line_no);
    std::istringstream header(line);
    std::string magic, version;
    header >> magic >> version;
    if (magic != kMagic) throw ParseError("dataset: bad magic '" + magic + "'", line_no);
    if (version != "v1") throw ParseError("dataset: unsupported version '" + version + "'", line_no);

    TrajectoryDataset ds;
    std::string mask_list;
    int full_dim = -1;
    long long expected = -1;
    std::string token;
    while (header >> token) {
        const auto eq = token.find('=');
        if (eq == std::string::npos) throw ParseError("dataset: bad header token '" + token + "'", line_no);
        const std::string key = token.substr(0, eq), value = token.substr(eq + 1);
        try {
            if (key == "env") ds.env_id = value;
            else if (key == "mask") mask_list = value;
            else if (key == "seed") ds.seed = std::stoull(value);
            else if (key == "full_dim") full_dim = std::stoi(value);
            else if (key == "n") expected = std::stoll(value);
            else if (key == "skill") ds.skill_tag = value;
        } catch (const std::exception&) {
            throw ParseError("dataset: bad header value for '" + key + "'", line_no);
        }
    }

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            Transition tr;
            tr.episode_id = j.at("ep").get<int>();
            tr.step_index = j.at("t").get<int>();
            tr.obs = j.at("obs").get<RealVec>();
            tr.action = j.at("act").get<RealVec>();
            tr.reward = j.at("rew").get<double>();
            tr.next_obs = j.at("next_obs").get<RealVec>();
            tr.done = j.at("done").get<bool>();
            if (tr.obs.size() != tr.next_obs.size())
                throw ParseError("dataset: obs and next_obs lengths differ", line_no);
            if (j.contains("priv")) ds.privileged.push_back(j.at("priv").get<RealVec>());
            ds.transitions.push_back(std::move(tr));
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception& e) {
            throw ParseError(std::string("dataset: malformed record: ") + e.what(), line_no);
        }
    }
    if (expected >= 0 && static_cast<long long>(ds.transitions.size()) != expected)
        throw ParseError("dataset: expected " + std::to_string(expected) + " records, found " +
                             std::to_string(ds.transitions.size()) + " (truncated file?)",
                         line_no);
    if (!ds.privileged.empty() && ds.privileged.size() != ds.transitions.size())
        throw ParseError("dataset: privileged stream present on some records only", line_no);
    if (full_dim < 0) full_dim = ds.transitions.empty() ? 0 : static_cast<int>(ds.transitions.front().obs.size());
    try {
        ds.mask = MaskSpec::from_list(mask_list, full_dim);
    } catch (const std::exception& e) {
        throw ParseError(std::string("dataset: bad mask: ") + e.what(), 1);
    }
    ds.refresh_stats();
    return ds;
}

void save(const TrajectoryDataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << serialize(ds);
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

TrajectoryDataset load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return deserialize(buf.str());
}

void export_csv(const TrajectoryDataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    auto join = [](const RealVec& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) s += ' ';
            s += nlohmann::json(v[i]).dump();
        }
        return s;
    };
    out << "ep,t,obs,act,rew,next_obs,done\n";
    for (const auto& tr : ds.transitions) {
        out << tr.episode_id << ',' << tr.step_index << ',' << join(tr.obs) << ',' << join(tr.action) << ','
            << nlohmann::json(tr.reward).dump() << ',' << join(tr.next_obs) << ',' << (tr.done ? 1 : 0) << '\n';
    }
}

}  // namespace cshape
