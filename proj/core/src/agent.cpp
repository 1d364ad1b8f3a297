#include "cshape/agent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace cshape {

using nn::Matrix;
using nn::Vector;

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::push(ReplayItem item) {
    if (items_.size() < capacity_)
        items_.push_back(std::move(item));
    else
        items_[inserted_ % capacity_] = std::move(item);
    ++inserted_;
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t n, Rng& rng) const {
    if (items_.empty()) throw std::logic_error("ReplayBuffer: sampling from an empty buffer");
    std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = pick(rng);
    return idx;
}

// ---------------------------------------------------------------------------

void SACConfig::validate() const {
    if (total_steps <= 0 || batch_size <= 0 || replay_capacity <= 0 || eval_interval <= 0 || eval_episodes <= 0)
        throw ConfigError("sac: step counts and sizes must be positive");
    if (!(lr_policy > 0 && lr_q > 0)) throw ConfigError("sac: learning rates must be positive");
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("sac: alpha must be finite and >= 0");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("sac: gamma must lie in (0,1)");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("sac: tau must lie in (0,1]");
    if (target_update_interval <= 0 || policy_train_freq <= 0 || gradient_steps <= 0)
        throw ConfigError("sac: update frequencies must be positive");
    if (warmup_steps < 0) throw ConfigError("sac: warmup_steps must be >= 0");
    if (hidden_dim <= 0 || n_residual_blocks < 0) throw ConfigError("sac: bad network size");
}

SACConfig sac_config_from_json(const nlohmann::json& j) {
    SACConfig c;
    c.total_steps = j.value("total_steps", c.total_steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr_policy = j.value("lr_policy", c.lr_policy);
    c.lr_q = j.value("lr_q", c.lr_q);
    c.alpha = j.value("alpha", c.alpha);
    c.gamma = j.value("gamma", c.gamma);
    c.tau = j.value("tau", c.tau);
    c.target_update_interval = j.value("target_update_interval", c.target_update_interval);
    c.policy_train_freq = j.value("policy_train_freq", c.policy_train_freq);
    c.gradient_steps = j.value("gradient_steps", c.gradient_steps);
    c.replay_capacity = j.value("replay_capacity", c.replay_capacity);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.eval_interval = j.value("eval_interval", c.eval_interval);
    c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.n_residual_blocks = j.value("n_residual_blocks", c.n_residual_blocks);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

nlohmann::json to_json(const SACConfig& c) {
    return {{"total_steps", c.total_steps},
            {"batch_size", c.batch_size},
            {"lr_policy", c.lr_policy},
            {"lr_q", c.lr_q},
            {"alpha", c.alpha},
            {"gamma", c.gamma},
            {"tau", c.tau},
            {"target_update_interval", c.target_update_interval},
            {"policy_train_freq", c.policy_train_freq},
            {"gradient_steps", c.gradient_steps},
            {"replay_capacity", c.replay_capacity},
            {"warmup_steps", c.warmup_steps},
            {"eval_interval", c.eval_interval},
            {"eval_episodes", c.eval_episodes},
            {"hidden_dim", c.hidden_dim},
            {"n_residual_blocks", c.n_residual_blocks},
            {"seed", c.seed}};
}

SacBatch gather_batch(const ReplayBuffer& buffer, const std::vector<std::size_t>& indices) {
    const ReplayItem& first = buffer.at(indices.front());
    const auto D = static_cast<Eigen::Index>(first.obs.size());
    const auto A = static_cast<Eigen::Index>(first.action.size());
    const auto B = static_cast<Eigen::Index>(indices.size());
    SacBatch b{Matrix(D, B), Matrix(A, B), Vector(B), Matrix(D, B), Vector(B)};
    for (Eigen::Index c = 0; c < B; ++c) {
        const ReplayItem& it = buffer.at(indices[static_cast<std::size_t>(c)]);
        b.obs.col(c) = Eigen::Map<const Vector>(it.obs.data(), D);
        b.action.col(c) = Eigen::Map<const Vector>(it.action.data(), A);
        b.next_obs.col(c) = Eigen::Map<const Vector>(it.next_obs.data(), D);
        b.reward(c) = it.train_reward;
        b.done(c) = it.done ? 1.0 : 0.0;
    }
    return b;
}

SacNets SacNets::create(int obs_dim, const std::vector<ActionBounds>& bounds, int hidden_dim, int n_blocks, Rng& rng) {
    const int A = static_cast<int>(bounds.size());
    if (A == 0) throw std::invalid_argument("SacNets: empty action space");
    nn::Mlp actor(nn::MlpSpec{obs_dim, 2 * A, hidden_dim, n_blocks});
    nn::Mlp critic(nn::MlpSpec{obs_dim + A, 1, hidden_dim, n_blocks});
    auto actor_params = actor.init(rng);
    auto q1 = critic.init(rng);
    auto q2 = critic.init(rng);
    SacNets nets{actor, critic, std::move(actor_params), q1, q2, q1, q2, Vector(A), Vector(A)};
    for (int i = 0; i < A; ++i) {
        if (!(bounds[static_cast<std::size_t>(i)].high > bounds[static_cast<std::size_t>(i)].low))
            throw std::invalid_argument("SacNets: degenerate action bounds");
        nets.action_center(i) = 0.5 * (bounds[static_cast<std::size_t>(i)].high + bounds[static_cast<std::size_t>(i)].low);
        nets.action_scale(i) = 0.5 * (bounds[static_cast<std::size_t>(i)].high - bounds[static_cast<std::size_t>(i)].low);
    }
    return nets;
}

namespace {

Matrix stack(const Matrix& top, const Matrix& bottom) {
    Matrix out(top.rows() + bottom.rows(), top.cols());
    out.topRows(top.rows()) = top;
    out.bottomRows(bottom.rows()) = bottom;
    return out;
}

// log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)), stable for large |u|
double log1m_tanh_sq(double u) {
    const double z = -2.0 * u;
    const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    return 2.0 * (std::log(2.0) - u - softplus);
}

Matrix standard_normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = standard_normal(rng);
    return m;
}

ActorSample sample_from_raw(const SacNets& nets, const Matrix& raw, const Matrix& eps) {
    ActorSample s;
    s.head = nn::split_gaussian_head(raw);
    s.eps = eps;
    s.pre_squash = s.head.mean + s.head.sigma().cwiseProduct(eps);
    s.squashed = s.pre_squash.array().tanh().matrix();
    s.action = (s.squashed.array().colwise() * nets.action_scale.array()).colwise() + nets.action_center.array();
    const double log_scale = nets.action_scale.array().log().sum();
    s.log_prob.resize(raw.cols());
    for (Eigen::Index c = 0; c < raw.cols(); ++c) {
        double lp = -log_scale;
        for (Eigen::Index i = 0; i < eps.rows(); ++i)
            lp += -0.5 * eps(i, c) * eps(i, c) - s.head.log_std(i, c) - nn::kHalfLog2Pi -
                  log1m_tanh_sq(s.pre_squash(i, c));
        s.log_prob(c) = lp;
    }
    return s;
}

}  // namespace

ActorSample actor_sample(const SacNets& nets, const nn::ParamStore& actor_params, const Matrix& obs, const Matrix& eps) {
    return sample_from_raw(nets, nets.actor.forward(actor_params, obs), eps);
}

Vector critic_targets(const SacNets& nets, const SacBatch& batch, const Matrix& eps_next, double alpha, double gamma,
                      Vector* q1_next, Vector* q2_next) {
    const ActorSample next = actor_sample(nets, nets.actor_params, batch.next_obs, eps_next);
    const Matrix input = stack(batch.next_obs, next.action);
    const Vector q1 = nets.critic.forward(nets.q1_target, input).row(0).transpose();
    const Vector q2 = nets.critic.forward(nets.q2_target, input).row(0).transpose();
    const Vector cont = Vector::Ones(batch.done.size()) - batch.done;
    auto target_of = [&](const Vector& q) -> Vector {
        return batch.reward + gamma * cont.cwiseProduct(q - alpha * next.log_prob);
    };
    if (q1_next) *q1_next = target_of(q1);
    if (q2_next) *q2_next = target_of(q2);
    return target_of(q1.cwiseMin(q2));
}

double critic_loss(const SacNets& nets, const nn::ParamStore& q1, const nn::ParamStore& q2, const SacBatch& batch,
                   const Vector& targets, Vector* grad_q1, Vector* grad_q2) {
    const Matrix input = stack(batch.obs, batch.action);
    const double n = static_cast<double>(input.cols());
    double total = 0.0;
    auto one = [&](const nn::ParamStore& p, Vector* grad) {
        nn::MlpTape tape;
        const Matrix q = grad ? nets.critic.forward(p, input, tape) : nets.critic.forward(p, input);
        const Matrix r = q - targets.transpose();
        total += r.squaredNorm() / n;
        if (grad) nets.critic.backward(p, tape, 2.0 * r / n, *grad);
    };
    one(q1, grad_q1);
    one(q2, grad_q2);
    return total;
}

double actor_loss(const SacNets& nets, const nn::ParamStore& actor_params, const Matrix& obs, const Matrix& eps,
                  double alpha, Vector* grad) {
    const double n = static_cast<double>(obs.cols());
    nn::MlpTape actor_tape;
    const Matrix raw = nets.actor.forward(actor_params, obs, actor_tape);
    const ActorSample s = sample_from_raw(nets, raw, eps);

    const Matrix input = stack(obs, s.action);
    nn::MlpTape t1, t2;
    const Matrix q1 = nets.critic.forward(nets.q1, input, t1);
    const Matrix q2 = nets.critic.forward(nets.q2, input, t2);
    double loss = 0.0;
    Matrix d_q1 = Matrix::Zero(1, obs.cols());
    Matrix d_q2 = Matrix::Zero(1, obs.cols());
    for (Eigen::Index c = 0; c < obs.cols(); ++c) {
        const bool first = q1(0, c) <= q2(0, c);
        loss += alpha * s.log_prob(c) - (first ? q1(0, c) : q2(0, c));
        (first ? d_q1 : d_q2)(0, c) = -1.0 / n;
    }
    loss /= n;
    if (!grad) return loss;

    // dL/da through whichever critic attained the minimum (critic params stay fixed).
    Vector scratch = Vector::Zero(static_cast<Eigen::Index>(nets.q1.size()));
    const Matrix d_in1 = nets.critic.backward(nets.q1, t1, d_q1, scratch);
    const Matrix d_in2 = nets.critic.backward(nets.q2, t2, d_q2, scratch);
    const Eigen::Index D = obs.rows();
    const Matrix d_action = d_in1.bottomRows(d_in1.rows() - D) + d_in2.bottomRows(d_in2.rows() - D);

    // log pi = sum(-eps^2/2 - log_std - c - log(1 - tanh(u)^2)) - sum log scale
    const Matrix one_minus_t2 = (1.0 - s.squashed.array().square()).matrix();
    const Matrix d_u = (alpha / n) * 2.0 * s.squashed +
                       (d_action.array().colwise() * nets.action_scale.array()).matrix().cwiseProduct(one_minus_t2);
    const Matrix d_mean = d_u;
    const Matrix d_log_std = d_u.cwiseProduct(s.head.sigma()).cwiseProduct(eps) - Matrix::Constant(eps.rows(), eps.cols(), alpha / n);
    const Matrix d_raw = nn::gaussian_head_backward(s.head, d_mean, d_log_std);
    nets.actor.backward(actor_params, actor_tape, d_raw, *grad);
    return loss;
}

// ---------------------------------------------------------------------------

SacLearner::SacLearner(int obs_dim, const std::vector<ActionBounds>& bounds, const SACConfig& cfg, Rng& rng)
    : cfg_(cfg),
      nets_(SacNets::create(obs_dim, bounds, cfg.hidden_dim, cfg.n_residual_blocks, rng)),
      actor_opt_(nets_.actor_params.size()),
      q1_opt_(nets_.q1.size()),
      q2_opt_(nets_.q2.size()) {
    cfg_.validate();
}

double SacLearner::update_critic(const SacBatch& batch, Rng& rng) {
    const Matrix eps = standard_normal_matrix(nets_.action_dim(), batch.obs.cols(), rng);
    const Vector y = critic_targets(nets_, batch, eps, cfg_.alpha, cfg_.gamma);
    Vector g1 = Vector::Zero(static_cast<Eigen::Index>(nets_.q1.size()));
    Vector g2 = Vector::Zero(static_cast<Eigen::Index>(nets_.q2.size()));
    const double loss = critic_loss(nets_, nets_.q1, nets_.q2, batch, y, &g1, &g2);
    const nn::AdamConfig adam{cfg_.lr_q};
    nn::adam_step(nets_.q1.values, g1, q1_opt_, adam);
    nn::adam_step(nets_.q2.values, g2, q2_opt_, adam);
    return loss;
}

double SacLearner::update_actor(const Matrix& obs, Rng& rng) {
    const Matrix eps = standard_normal_matrix(nets_.action_dim(), obs.cols(), rng);
    Vector g = Vector::Zero(static_cast<Eigen::Index>(nets_.actor_params.size()));
    const double loss = actor_loss(nets_, nets_.actor_params, obs, eps, cfg_.alpha, &g);
    nn::adam_step(nets_.actor_params.values, g, actor_opt_, nn::AdamConfig{cfg_.lr_policy});
    return loss;
}

void SacLearner::update_targets() {
    nn::soft_update(nets_.q1_target, nets_.q1, cfg_.tau);
    nn::soft_update(nets_.q2_target, nets_.q2, cfg_.tau);
}

RealVec SacLearner::act(std::span<const double> obs, Rng& rng) const {
    const Matrix x = Eigen::Map<const Vector>(obs.data(), static_cast<Eigen::Index>(obs.size()));
    const Matrix eps = standard_normal_matrix(nets_.action_dim(), 1, rng);
    const ActorSample s = actor_sample(nets_, nets_.actor_params, x, eps);
    return RealVec(s.action.data(), s.action.data() + s.action.size());
}

RealVec SacLearner::act_mean(std::span<const double> obs) const {
    return SacPolicy{nets_.actor, nets_.actor_params, nets_.action_center, nets_.action_scale}.mean_action(obs);
}

RealVec SacPolicy::mean_action(std::span<const double> obs) const {
    const Matrix x = Eigen::Map<const Vector>(obs.data(), static_cast<Eigen::Index>(obs.size()));
    const auto head = nn::split_gaussian_head(actor.forward(params, x));
    RealVec a(static_cast<std::size_t>(action_center.size()));
    for (Eigen::Index i = 0; i < action_center.size(); ++i)
        a[static_cast<std::size_t>(i)] = action_center(i) + action_scale(i) * std::tanh(head.mean(i, 0));
    return a;
}

ActionFn SacPolicy::as_function() const {
    return [self = *this](std::span<const double> obs) { return self.mean_action(obs); };
}

void save_policy(const SacPolicy& policy, const std::filesystem::path& path) {
    nn::save_checkpoint(policy.params, path);
    const auto& spec = policy.actor.spec();
    nlohmann::json meta = {{"obs_dim", spec.input_dim},
                           {"hidden_dim", spec.hidden_dim},
                           {"n_residual_blocks", spec.n_residual_blocks},
                           {"action_center", RealVec(policy.action_center.data(), policy.action_center.data() + policy.action_center.size())},
                           {"action_scale", RealVec(policy.action_scale.data(), policy.action_scale.data() + policy.action_scale.size())}};
    std::ofstream out(path.string() + ".json");
    if (!out) throw std::runtime_error("cannot write policy metadata for " + path.string());
    out << meta.dump(2) << '\n';
}

SacPolicy load_policy(const std::filesystem::path& path) {
    std::ifstream in(path.string() + ".json");
    if (!in) throw std::runtime_error("missing policy metadata " + path.string() + ".json");
    const auto meta = nlohmann::json::parse(in);
    const auto center = meta.at("action_center").get<RealVec>();
    const auto scale = meta.at("action_scale").get<RealVec>();
    nn::Mlp actor(nn::MlpSpec{meta.at("obs_dim").get<int>(), 2 * static_cast<int>(center.size()),
                              meta.at("hidden_dim").get<int>(), meta.at("n_residual_blocks").get<int>()});
    SacPolicy p{actor, actor.zeros(), Eigen::Map<const Vector>(center.data(), static_cast<Eigen::Index>(center.size())),
                Eigen::Map<const Vector>(scale.data(), static_cast<Eigen::Index>(scale.size()))};
    nn::load_checkpoint(p.params, path);
    return p;
}

std::vector<double> evaluate(const ActionFn& policy, const ContinuousEnv& env_proto, const MaskSpec& mask,
                             int n_episodes, std::uint64_t seed) {
    if (n_episodes <= 0) throw std::invalid_argument("evaluate: n_episodes must be positive");
    auto env = env_proto.clone();
    Rng rng(seed);
    std::vector<double> returns;
    returns.reserve(static_cast<std::size_t>(n_episodes));
    for (int ep = 0; ep < n_episodes; ++ep) {
        RealVec full = env->reset(rng());
        double total = 0.0;
        for (;;) {
            const RealVec obs = mask_observation(full, mask);
            const StepOutcome out = env->step(policy(obs));
            total += out.reward;
            full = out.obs;
            if (out.done || out.truncated) break;
        }
        returns.push_back(total);
    }
    return returns;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(v.size()))};
}

}  // namespace

SacResult sac_train(const ContinuousEnv& env_proto, const MaskSpec& mask, const std::optional<ShapingConfig>& shaping,
                    const SACConfig& cfg) {
    cfg.validate();
    if (shaping) shaping->validate();
    if (mask.full_dim != env_proto.obs_dim()) throw std::invalid_argument("sac_train: mask does not match env");
    auto env = env_proto.clone();
    Rng rng(cfg.seed);
    const auto bounds = env->action_bounds();
    SacLearner learner(mask.masked_dim(), bounds, cfg, rng);
    ReplayBuffer buffer(static_cast<std::size_t>(cfg.replay_capacity));
    const std::uint64_t eval_seed = cfg.seed ^ 0x9e3779b97f4a7c15ULL;

    std::vector<CurvePoint> curve;
    std::vector<double> loss_history;
    RealVec obs = mask_observation(env->reset(rng()), mask);
    int episodes = 0;
    double loss_sum = 0.0;
    int loss_n = 0;
    auto record_eval = [&](int step) {
        const SacPolicy policy{learner.nets().actor, learner.nets().actor_params, learner.nets().action_center,
                               learner.nets().action_scale};
        const auto returns = evaluate(policy.as_function(), *env, mask, cfg.eval_episodes, eval_seed);
        const auto [m, s] = mean_std(returns);
        curve.push_back({step, m, s, episodes});
        loss_history.push_back(loss_n ? loss_sum / loss_n : 0.0);
        loss_sum = 0.0;
        loss_n = 0;
    };

    for (int step = 1; step <= cfg.total_steps; ++step) {
        RealVec action;
        if (step <= cfg.warmup_steps) {
            action.resize(bounds.size());
            for (std::size_t i = 0; i < bounds.size(); ++i)
                action[i] = bounds[i].low + (bounds[i].high - bounds[i].low) * uniform01(rng);
        } else {
            action = learner.act(obs, rng);
        }
        const StepOutcome out = env->step(action);
        RealVec next_obs = mask_observation(out.obs, mask);
        const double train_reward =
            shaping ? shaped_reward(out.reward, obs, next_obs, out.done, *shaping) : out.reward;
        buffer.push({obs, action, out.reward, train_reward, next_obs, out.done});
        if (out.done || out.truncated) {
            ++episodes;
            obs = mask_observation(env->reset(rng()), mask);
        } else {
            obs = std::move(next_obs);
        }

        if (step > cfg.warmup_steps) {
            for (int g = 0; g < cfg.gradient_steps; ++g) {
                const SacBatch batch = gather_batch(buffer, buffer.sample_indices(static_cast<std::size_t>(cfg.batch_size), rng));
                const double closs = learner.update_critic(batch, rng);
                if (!std::isfinite(closs)) {
                    std::ostringstream os;
                    os << "sac: critic loss non-finite at step " << step << " (episodes " << episodes << ")";
                    throw TrainingError(os.str());
                }
                loss_sum += closs;
                ++loss_n;
                // Delayed actor: every policy_train_freq steps, that many actor updates.
                if (step % cfg.policy_train_freq == 0) {
                    for (int k = 0; k < cfg.policy_train_freq; ++k) {
                        const double aloss = learner.update_actor(batch.obs, rng);
                        if (!std::isfinite(aloss))
                            throw TrainingError("sac: actor loss non-finite at step " + std::to_string(step));
                    }
                }
                if (step % cfg.target_update_interval == 0) learner.update_targets();
            }
        }
        if (step % cfg.eval_interval == 0) record_eval(step);
    }
    SacPolicy policy{learner.nets().actor, learner.nets().actor_params, learner.nets().action_center,
                     learner.nets().action_scale};
    return {std::move(curve), std::move(policy), std::move(loss_history)};
}

void write_curve_csv(const std::vector<CurvePoint>& curve, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(17);
    out << "step,eval_mean,eval_std,episodes\n";
    for (const auto& p : curve) out << p.step << ',' << p.eval_mean << ',' << p.eval_std << ',' << p.episodes << '\n';
}

// ---------------------------------------------------------------------------

void QLearningConfig::validate() const {
    if (steps <= 0 || horizon <= 0 || check_interval <= 0) throw ConfigError("q-learning: counts must be positive");
    if (!(lr > 0.0 && lr <= 1.0)) throw ConfigError("q-learning: lr must lie in (0,1]");
    if (!(eps_start >= 0.0 && eps_start <= 1.0 && eps_end >= 0.0 && eps_end <= 1.0))
        throw ConfigError("q-learning: epsilon must lie in [0,1]");
    if (eps_decay_steps < 0) throw ConfigError("q-learning: eps_decay_steps must be >= 0");
}

TabularPolicy greedy_from_q(const std::vector<double>& q, int n_states, int n_actions) {
    TabularPolicy pi(static_cast<std::size_t>(n_states));
    for (int s = 0; s < n_states; ++s) {
        const auto row = q.begin() + static_cast<std::ptrdiff_t>(s) * n_actions;
        pi[static_cast<std::size_t>(s)] = static_cast<int>(std::max_element(row, row + n_actions) - row);
    }
    return pi;
}

QLearningResult q_learning_tabular(const TabularCMDP& cmdp, const std::optional<ShapingConfig>& shaping,
                                   const QLearningConfig& cfg, Rng& rng, const std::optional<TabularPolicy>& reference) {
    cfg.validate();
    if (shaping) shaping->validate();
    const int S = cmdp.n_states(), A = cmdp.n_actions();
    const double gamma = cmdp.gamma();
    const TabularMDP mdp = exact_interventional_model(cmdp);
    QLearningResult out;
    out.q.assign(static_cast<std::size_t>(S) * A, 0.0);
    std::uniform_int_distribution<int> random_action(0, A - 1);
    int s = sample_initial_state(cmdp, rng);
    int t = 0;
    std::optional<int> settled;
    for (int step = 1; step <= cfg.steps; ++step) {
        const double frac = cfg.eps_decay_steps == 0 ? 1.0 : std::min(1.0, static_cast<double>(step - 1) / cfg.eps_decay_steps);
        const double eps = cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start);
        int x;
        if (uniform01(rng) < eps) {
            x = random_action(rng);
        } else {
            const auto row = out.q.begin() + static_cast<std::ptrdiff_t>(s) * A;
            x = static_cast<int>(std::max_element(row, row + A) - row);
        }
        const InterventionalStep st = interventional_step(cmdp, s, x, rng);
        double y = st.reward;
        if (shaping) {
            const double a = s, b = st.next_state;
            y = shaped_reward(y, std::span<const double>(&a, 1), std::span<const double>(&b, 1), false, *shaping);
        }
        const auto next_row = out.q.begin() + static_cast<std::ptrdiff_t>(st.next_state) * A;
        const double target = y + gamma * *std::max_element(next_row, next_row + A);
        double& qsx = out.q[static_cast<std::size_t>(s) * A + x];
        qsx += cfg.lr * (target - qsx);

        if (++t >= cfg.horizon) {
            t = 0;
            s = sample_initial_state(cmdp, rng);
        } else {
            s = st.next_state;
        }

        if (step % cfg.check_interval == 0) {
            const TabularPolicy pi = greedy_from_q(out.q, S, A);
            QCurvePoint p{step, policy_return(mdp, pi, gamma, cmdp.initial_state_probs()), reference && pi == *reference};
            if (p.matches_reference) {
                if (!settled) settled = step;
            } else {
                settled.reset();
            }
            out.curve.push_back(p);
        }
    }
    out.steps_to_reference = settled;
    return out;
}

}  // namespace cshape
