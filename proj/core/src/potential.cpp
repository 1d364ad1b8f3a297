#include "cshape/potential.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace cshape {

using nn::Matrix;
using nn::Vector;

GaussianRegressor::GaussianRegressor(int input_dim, int output_dim, int hidden_dim, int n_blocks, Rng& rng)
    : net_(nn::MlpSpec{input_dim, 2 * output_dim, hidden_dim, n_blocks}), params_(net_.init(rng)) {}

nn::GaussianHead GaussianRegressor::predict(const Matrix& x) const {
    return nn::split_gaussian_head(net_.forward(params_, x));
}

double GaussianRegressor::mean_log_likelihood(const Matrix& x, const Matrix& y, Vector* grad) const {
    const double n = static_cast<double>(x.cols());
    if (!grad) {
        const auto head = predict(x);
        return nn::gaussian_log_prob_batch(head.mean, head.log_std, y).log_prob.mean();
    }
    nn::MlpTape tape;
    const auto head = nn::split_gaussian_head(net_.forward(params_, x, tape));
    const auto lp = nn::gaussian_log_prob_batch(head.mean, head.log_std, y);
    const Matrix d_raw = nn::gaussian_head_backward(head, -lp.d_mean / n, -lp.d_log_std / n);
    net_.backward(params_, tape, d_raw, *grad);
    return lp.log_prob.mean();
}

WeightMode weight_mode_from_string(const std::string& name) {
    if (name == "normalized") return WeightMode::normalized;
    if (name == "raw-density") return WeightMode::raw_density;
    throw ConfigError("unknown weight_mode '" + name + "'");
}

std::string to_string(WeightMode mode) { return mode == WeightMode::normalized ? "normalized" : "raw-density"; }

void PotentialTrainConfig::validate() const {
    if (env_model_epochs < 0 || value_epochs < 0) throw ConfigError("potential: epochs must be non-negative");
    if (batch_size <= 0) throw ConfigError("potential: batch_size must be positive");
    if (!(lr_policy > 0 && lr_statediff > 0 && lr_value > 0)) throw ConfigError("potential: learning rates must be positive");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("potential: gamma must lie in (0,1)");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("potential: tau must lie in (0,1]");
    if (policy_train_freq <= 0) throw ConfigError("potential: policy_train_freq must be positive");
    if (n_candidates <= 0) throw ConfigError("potential: n_candidates must be positive");
    if (!(duplicate_threshold > 0.0)) throw ConfigError("potential: duplicate_threshold must be positive");
    if (hidden_dim <= 0 || n_residual_blocks < 0) throw ConfigError("potential: bad network size");
}

PotentialTrainConfig potential_config_from_json(const nlohmann::json& j) {
    PotentialTrainConfig c;
    c.env_model_epochs = j.value("env_model_epochs", c.env_model_epochs);
    c.value_epochs = j.value("value_epochs", c.value_epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr_policy = j.value("lr_policy", c.lr_policy);
    c.lr_statediff = j.value("lr_statediff", c.lr_statediff);
    c.lr_value = j.value("lr_value", c.lr_value);
    c.gamma = j.value("gamma", c.gamma);
    c.tau = j.value("tau", c.tau);
    c.policy_train_freq = j.value("policy_train_freq", c.policy_train_freq);
    c.n_candidates = j.value("n_candidates", c.n_candidates);
    c.duplicate_threshold = j.value("duplicate_threshold", c.duplicate_threshold);
    if (j.contains("weight_mode")) c.weight_mode = weight_mode_from_string(j.at("weight_mode").get<std::string>());
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.n_residual_blocks = j.value("n_residual_blocks", c.n_residual_blocks);
    c.normalize_rewards = j.value("normalize_rewards", c.normalize_rewards);
    if (j.contains("reward_bound") && !j.at("reward_bound").is_null()) c.reward_bound = j.at("reward_bound").get<double>();
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

nlohmann::json to_json(const PotentialTrainConfig& c) {
    nlohmann::json j = {{"env_model_epochs", c.env_model_epochs},
                        {"value_epochs", c.value_epochs},
                        {"batch_size", c.batch_size},
                        {"lr_policy", c.lr_policy},
                        {"lr_statediff", c.lr_statediff},
                        {"lr_value", c.lr_value},
                        {"gamma", c.gamma},
                        {"tau", c.tau},
                        {"policy_train_freq", c.policy_train_freq},
                        {"n_candidates", c.n_candidates},
                        {"duplicate_threshold", c.duplicate_threshold},
                        {"weight_mode", to_string(c.weight_mode)},
                        {"hidden_dim", c.hidden_dim},
                        {"n_residual_blocks", c.n_residual_blocks},
                        {"normalize_rewards", c.normalize_rewards},
                        {"seed", c.seed}};
    j["reward_bound"] = c.reward_bound ? nlohmann::json(*c.reward_bound) : nlohmann::json(nullptr);
    return j;
}

// ---------------------------------------------------------------------------

OfflineBatch make_batch(const TrajectoryDataset& ds, std::span<const std::size_t> indices) {
    if (ds.empty()) throw std::invalid_argument("make_batch: empty dataset");
    const auto& first = ds.transitions.front();
    const auto D = static_cast<Eigen::Index>(first.obs.size());
    const auto A = static_cast<Eigen::Index>(first.action.size());
    const auto B = static_cast<Eigen::Index>(indices.size());
    OfflineBatch b{Matrix(D, B), Matrix(A, B), Vector(B), Matrix(D, B), Vector(B)};
    for (Eigen::Index c = 0; c < B; ++c) {
        const Transition& tr = ds.transitions.at(indices[static_cast<std::size_t>(c)]);
        if (static_cast<Eigen::Index>(tr.obs.size()) != D || static_cast<Eigen::Index>(tr.action.size()) != A)
            throw std::invalid_argument("make_batch: ragged dataset");
        b.obs.col(c) = Eigen::Map<const Vector>(tr.obs.data(), D);
        b.action.col(c) = Eigen::Map<const Vector>(tr.action.data(), A);
        b.next_obs.col(c) = Eigen::Map<const Vector>(tr.next_obs.data(), D);
        b.reward(c) = tr.reward;
        b.done(c) = tr.done ? 1.0 : 0.0;
    }
    return b;
}

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

template <class Fn>
void for_each_batch(const std::vector<std::size_t>& order, int batch_size, Fn&& fn) {
    for (std::size_t start = 0, k = 0; start < order.size(); start += static_cast<std::size_t>(batch_size), ++k) {
        const std::size_t len = std::min(order.size() - start, static_cast<std::size_t>(batch_size));
        fn(std::span<const std::size_t>(order.data() + start, len), k);
    }
}

Matrix concat_rows(const Matrix& top, const Matrix& bottom) {
    Matrix out(top.rows() + bottom.rows(), top.cols());
    out.topRows(top.rows()) = top;
    out.bottomRows(bottom.rows()) = bottom;
    return out;
}

void check_finite(double value, const char* what, int epoch) {
    if (!std::isfinite(value))
        throw TrainingError(std::string(what) + " became non-finite at epoch " + std::to_string(epoch));
}

}  // namespace

EnvModels train_env_models(const TrajectoryDataset& ds, const PotentialTrainConfig& cfg, Rng& rng) {
    cfg.validate();
    if (ds.empty()) throw std::invalid_argument("train_env_models: empty dataset");
    const int D = static_cast<int>(ds.transitions.front().obs.size());
    const int A = static_cast<int>(ds.transitions.front().action.size());
    EnvModels models{GaussianRegressor(D, A, cfg.hidden_dim, cfg.n_residual_blocks, rng),
                     GaussianRegressor(D + A, D, cfg.hidden_dim, cfg.n_residual_blocks, rng),
                     {},
                     {}};
    nn::AdamState policy_opt(models.policy.params().size());
    nn::AdamState diff_opt(models.statediff.params().size());
    const nn::AdamConfig policy_adam{cfg.lr_policy};
    const nn::AdamConfig diff_adam{cfg.lr_statediff};

    for (int epoch = 0; epoch < cfg.env_model_epochs; ++epoch) {
        double policy_sum = 0.0, diff_sum = 0.0;
        std::size_t policy_n = 0, diff_n = 0;
        const auto order = shuffled_indices(ds.size(), rng);
        for_each_batch(order, cfg.batch_size, [&](std::span<const std::size_t> idx, std::size_t k) {
            const OfflineBatch b = make_batch(ds, idx);
            // Delayed policy updates: every policy_train_freq batches, take that many steps.
            if (k % static_cast<std::size_t>(cfg.policy_train_freq) == 0) {
                for (int rep = 0; rep < cfg.policy_train_freq; ++rep) {
                    Vector g = Vector::Zero(static_cast<Eigen::Index>(models.policy.params().size()));
                    const double ll = models.policy.mean_log_likelihood(b.obs, b.action, &g);
                    check_finite(ll, "policy log-likelihood", epoch);
                    nn::adam_step(models.policy.params().values, g, policy_opt, policy_adam);
                    policy_sum += ll;
                    ++policy_n;
                }
            }
            const Matrix x = concat_rows(b.obs, b.action);
            const Matrix y = b.next_obs - b.obs;
            Vector g = Vector::Zero(static_cast<Eigen::Index>(models.statediff.params().size()));
            const double ll = models.statediff.mean_log_likelihood(x, y, &g);
            check_finite(ll, "state-difference log-likelihood", epoch);
            nn::adam_step(models.statediff.params().values, g, diff_opt, diff_adam);
            diff_sum += ll;
            ++diff_n;
        });
        models.policy_loglik_history.push_back(policy_n ? policy_sum / static_cast<double>(policy_n) : 0.0);
        models.statediff_loglik_history.push_back(diff_n ? diff_sum / static_cast<double>(diff_n) : 0.0);
    }
    return models;
}

// ---------------------------------------------------------------------------

RoadNoise RoadNoise::draw(int action_dim, int state_dim, int k, Rng& rng) {
    RoadNoise n{Matrix(action_dim, k), Matrix(action_dim, k), Matrix(state_dim, k), Vector(state_dim)};
    for (Eigen::Index j = 0; j < k; ++j)
        for (Eigen::Index i = 0; i < action_dim; ++i) n.candidates(i, j) = standard_normal(rng);
    for (Eigen::Index j = 0; j < k; ++j)
        for (Eigen::Index i = 0; i < action_dim; ++i) n.resample(i, j) = standard_normal(rng);
    for (Eigen::Index j = 0; j < k; ++j)
        for (Eigen::Index i = 0; i < state_dim; ++i) n.score_delta(i, j) = standard_normal(rng);
    for (Eigen::Index i = 0; i < state_dim; ++i) n.fresh_delta(i) = standard_normal(rng);
    return n;
}

namespace {

struct RoadSearch {
    std::vector<RoadNotTaken> results;
    Matrix actions;  // A x B chosen x'
    Matrix deltas;   // D x B fresh deltas
};

/// Batched road-not-taken search; column c of `obs` uses noise[c].
RoadSearch search_roads(const EnvModels& models, const nn::Mlp& value_net, const nn::ParamStore& value_params,
                        const Matrix& obs, const Matrix& x_obs, double threshold, const std::vector<RoadNoise>& noise) {
    const Eigen::Index D = obs.rows(), A = x_obs.rows(), B = obs.cols();
    if (static_cast<Eigen::Index>(noise.size()) != B) throw std::invalid_argument("road_not_taken: noise count");
    const Eigen::Index K = noise.front().candidates.cols();
    const auto head = models.policy.predict(obs);
    const Matrix sigma = head.sigma();

    Matrix candidates(A, B * K);
    std::vector<std::vector<bool>> survives(static_cast<std::size_t>(B), std::vector<bool>(static_cast<std::size_t>(K)));
    RoadSearch out;
    out.results.resize(static_cast<std::size_t>(B));

    auto fill = [&](Eigen::Index c, const Matrix& eps, double scale) {
        bool any = false;
        for (Eigen::Index j = 0; j < K; ++j) {
            candidates.col(c * K + j) = head.mean.col(c) + scale * sigma.col(c).cwiseProduct(eps.col(j));
            const double dist = (candidates.col(c * K + j) - x_obs.col(c)).cwiseAbs().maxCoeff();
            const bool ok = dist >= threshold;
            survives[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] = ok;
            any = any || ok;
        }
        return any;
    };
    for (Eigen::Index c = 0; c < B; ++c) {
        const RoadNoise& n = noise[static_cast<std::size_t>(c)];
        if (n.candidates.cols() != K || n.candidates.rows() != A || n.score_delta.rows() != D)
            throw std::invalid_argument("road_not_taken: noise shape");
        if (!fill(c, n.candidates, 1.0)) {
            out.results[static_cast<std::size_t>(c)].resampled = true;
            if (!fill(c, n.resample, 2.0)) out.results[static_cast<std::size_t>(c)].fallback = true;
        }
    }

    // Score every candidate: V(s + Delta'), Delta' ~ P(. | s, x'').
    Matrix obs_rep(D, B * K);
    Matrix eps_rep(D, B * K);
    for (Eigen::Index c = 0; c < B; ++c)
        for (Eigen::Index j = 0; j < K; ++j) {
            obs_rep.col(c * K + j) = obs.col(c);
            eps_rep.col(c * K + j) = noise[static_cast<std::size_t>(c)].score_delta.col(j);
        }
    const auto diff_head = models.statediff.predict(concat_rows(obs_rep, candidates));
    const Matrix probe = obs_rep + diff_head.mean + diff_head.sigma().cwiseProduct(eps_rep);
    const Matrix scores = value_net.forward(value_params, probe);

    out.actions.resize(A, B);
    for (Eigen::Index c = 0; c < B; ++c) {
        auto& res = out.results[static_cast<std::size_t>(c)];
        Eigen::Index pick = -1;
        if (res.fallback) {
            double far = -1.0;
            for (Eigen::Index j = 0; j < K; ++j) {
                const double dist = (candidates.col(c * K + j) - x_obs.col(c)).cwiseAbs().maxCoeff();
                if (dist > far) {
                    far = dist;
                    pick = j;
                }
            }
        } else {
            double best = -std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < K; ++j) {
                if (!survives[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)]) continue;
                if (pick < 0 || scores(0, c * K + j) > best) {
                    best = scores(0, c * K + j);
                    pick = j;
                }
            }
        }
        out.actions.col(c) = candidates.col(c * K + pick);
    }

    const auto fresh_head = models.statediff.predict(concat_rows(obs, out.actions));
    const Matrix fresh_sigma = fresh_head.sigma();
    out.deltas.resize(D, B);
    for (Eigen::Index c = 0; c < B; ++c) {
        out.deltas.col(c) = fresh_head.mean.col(c) + fresh_sigma.col(c).cwiseProduct(noise[static_cast<std::size_t>(c)].fresh_delta);
        auto& res = out.results[static_cast<std::size_t>(c)];
        res.action.assign(out.actions.col(c).data(), out.actions.col(c).data() + A);
        res.delta.assign(out.deltas.col(c).data(), out.deltas.col(c).data() + D);
    }
    return out;
}

}  // namespace

RoadNotTaken road_not_taken(const EnvModels& models, const nn::Mlp& value_net, const nn::ParamStore& value_params,
                            std::span<const double> s, std::span<const double> x_obs, double duplicate_threshold,
                            const RoadNoise& noise) {
    const Matrix obs = Eigen::Map<const Vector>(s.data(), static_cast<Eigen::Index>(s.size()));
    const Matrix act = Eigen::Map<const Vector>(x_obs.data(), static_cast<Eigen::Index>(x_obs.size()));
    return search_roads(models, value_net, value_params, obs, act, duplicate_threshold, {noise}).results.front();
}

RoadNotTaken road_not_taken(const EnvModels& models, const nn::Mlp& value_net, const nn::ParamStore& value_params,
                            std::span<const double> s, std::span<const double> x_obs, int k, double duplicate_threshold,
                            Rng& rng) {
    if (k < 1) throw std::invalid_argument("road_not_taken: K must be at least 1");
    const RoadNoise noise =
        RoadNoise::draw(static_cast<int>(x_obs.size()), static_cast<int>(s.size()), k, rng);
    return road_not_taken(models, value_net, value_params, s, x_obs, duplicate_threshold, noise);
}

BackupTargets causal_backup_estimate(const EnvModels& models, const nn::Mlp& value_net,
                                     const nn::ParamStore& value_params, const nn::ParamStore& target_params,
                                     const OfflineBatch& batch, const std::vector<RoadNoise>& noise, double b_hat,
                                     double gamma, WeightMode mode, double clip_ceiling, double duplicate_threshold) {
    const Eigen::Index B = batch.obs.cols();
    const RoadSearch roads =
        search_roads(models, value_net, value_params, batch.obs, batch.action, duplicate_threshold, noise);

    const auto head = models.policy.predict(batch.obs);
    const Vector lp_obs = nn::gaussian_log_prob_batch(head.mean, head.log_std, batch.action).log_prob;
    const Vector lp_alt = nn::gaussian_log_prob_batch(head.mean, head.log_std, roads.actions).log_prob;

    const Matrix v_next = value_net.forward(target_params, batch.next_obs).cwiseMin(clip_ceiling);
    const Matrix v_alt = value_net.forward(target_params, batch.obs + roads.deltas).cwiseMin(clip_ceiling);

    BackupTargets out;
    out.target.resize(B);
    out.unclipped.resize(B);
    out.w_observed.resize(B);
    out.w_alternative.resize(B);
    out.observed_branch.resize(B);
    out.alternative_branch.resize(B);
    out.kept.assign(static_cast<std::size_t>(B), true);
    for (Eigen::Index c = 0; c < B; ++c) {
        const auto& road = roads.results[static_cast<std::size_t>(c)];
        if (road.fallback) ++out.stats.fallbacks;
        if (road.resampled) ++out.stats.resamples;
        double w = 0.0, w_alt = 0.0;
        if (!std::isfinite(lp_obs(c)) || !std::isfinite(lp_alt(c))) {
            out.kept[static_cast<std::size_t>(c)] = false;
        } else if (mode == WeightMode::normalized) {
            // p / (p + p') evaluated in log space
            w = road.fallback ? 1.0 : 1.0 / (1.0 + std::exp(lp_alt(c) - lp_obs(c)));
            w_alt = 1.0 - w;
        } else {
            w = std::min(1.0, std::exp(lp_obs(c)));
            w_alt = road.fallback ? 0.0 : std::min(1.0, std::exp(lp_alt(c)));
        }
        const double observed = batch.reward(c) + gamma * (1.0 - batch.done(c)) * v_next(0, c);
        const double alternative = b_hat + gamma * v_alt(0, c);
        const double value = w * observed + w_alt * alternative;
        if (!std::isfinite(value)) out.kept[static_cast<std::size_t>(c)] = false;
        out.w_observed(c) = w;
        out.w_alternative(c) = w_alt;
        out.observed_branch(c) = observed;
        out.alternative_branch(c) = alternative;
        if (out.kept[static_cast<std::size_t>(c)]) {
            out.unclipped(c) = value;
            out.target(c) = std::min(value, clip_ceiling);
        } else {
            ++out.stats.dropped;
            out.unclipped(c) = std::numeric_limits<double>::quiet_NaN();
            out.target(c) = std::numeric_limits<double>::quiet_NaN();
        }
    }
    return out;
}

double residual_loss(const nn::Mlp& value_net, const nn::ParamStore& params, const Matrix& obs, const Vector& target,
                     const std::vector<bool>& kept, Vector* grad) {
    const Eigen::Index B = obs.cols();
    std::size_t n_kept = 0;
    for (bool k : kept) n_kept += k ? 1 : 0;
    if (n_kept == 0) return 0.0;
    nn::MlpTape tape;
    const Matrix v = grad ? value_net.forward(params, obs, tape) : value_net.forward(params, obs);
    Matrix d_out = Matrix::Zero(1, B);
    double loss = 0.0;
    for (Eigen::Index c = 0; c < B; ++c) {
        if (!kept[static_cast<std::size_t>(c)]) continue;
        const double r = v(0, c) - target(c);
        loss += 0.5 * r * r;
        d_out(0, c) = r / static_cast<double>(n_kept);
    }
    if (grad) value_net.backward(params, tape, d_out, *grad);
    return loss / static_cast<double>(n_kept);
}

// ---------------------------------------------------------------------------

double PotentialNet::eval(std::span<const double> s) const {
    const Matrix x = Eigen::Map<const Vector>(s.data(), static_cast<Eigen::Index>(s.size()));
    return std::min(value_net.forward(params, x)(0, 0), clip_ceiling);
}

double PotentialNet::eval_original(std::span<const double> s) const {
    return eval(s) + reward_offset / (1.0 - gamma);
}

double eval_potential(const PotentialNet& net, std::span<const double> s) { return net.eval(s); }

nlohmann::json to_json(const PotentialReport& r) {
    return {{"loss_history", r.loss_history},
            {"dropped_examples", r.stats.dropped},
            {"fallbacks", r.stats.fallbacks},
            {"resamples", r.stats.resamples},
            {"b_hat", r.b_hat},
            {"clip_ceiling", r.clip_ceiling},
            {"reward_offset", r.reward_offset},
            {"policy_loglik", r.policy_loglik},
            {"statediff_loglik", r.statediff_loglik}};
}

TrainedPotential train_potential(const TrajectoryDataset& raw, const EnvModels& models, const PotentialTrainConfig& cfg,
                                 Rng& rng) {
    cfg.validate();
    if (raw.empty()) throw std::invalid_argument("train_potential: empty dataset");
    TrajectoryDataset ds = raw;
    const double offset = cfg.normalize_rewards ? normalize_rewards(ds) : 0.0;
    const double b_hat = cfg.reward_bound ? *cfg.reward_bound - offset : dataset_reward_max(ds);
    const double ceiling = b_hat / (1.0 - cfg.gamma);

    const int D = static_cast<int>(ds.transitions.front().obs.size());
    const int A = static_cast<int>(ds.transitions.front().action.size());
    nn::Mlp net(nn::MlpSpec{D, 1, cfg.hidden_dim, cfg.n_residual_blocks});
    TrainedPotential out{PotentialNet{net, net.init(rng), {}, ceiling, offset, cfg.gamma}, {}};
    out.net.target = out.net.params;
    out.report.b_hat = b_hat;
    out.report.clip_ceiling = ceiling;
    out.report.reward_offset = offset;
    out.report.policy_loglik = models.policy_loglik_history;
    out.report.statediff_loglik = models.statediff_loglik_history;

    nn::AdamState opt(out.net.params.size());
    const nn::AdamConfig adam{cfg.lr_value};
    for (int epoch = 0; epoch < cfg.value_epochs; ++epoch) {
        double loss_sum = 0.0;
        std::size_t n_batches = 0;
        const auto order = shuffled_indices(ds.size(), rng);
        for_each_batch(order, cfg.batch_size, [&](std::span<const std::size_t> idx, std::size_t) {
            const OfflineBatch b = make_batch(ds, idx);
            std::vector<RoadNoise> noise;
            noise.reserve(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) noise.push_back(RoadNoise::draw(A, D, cfg.n_candidates, rng));
            const BackupTargets targets =
                causal_backup_estimate(models, out.net.value_net, out.net.params, out.net.target, b, noise, b_hat,
                                       cfg.gamma, cfg.weight_mode, ceiling, cfg.duplicate_threshold);
            out.report.stats.dropped += targets.stats.dropped;
            out.report.stats.fallbacks += targets.stats.fallbacks;
            out.report.stats.resamples += targets.stats.resamples;
            Vector g = Vector::Zero(static_cast<Eigen::Index>(out.net.params.size()));
            const double loss = residual_loss(out.net.value_net, out.net.params, b.obs, targets.target, targets.kept, &g);
            check_finite(loss, "value loss", epoch);
            if (loss > 1e6) {
                std::ostringstream os;
                os << "value loss diverged (" << loss << ") at epoch " << epoch << "; history:";
                for (double h : out.report.loss_history) os << ' ' << h;
                throw TrainingError(os.str());
            }
            nn::adam_step(out.net.params.values, g, opt, adam);
            nn::soft_update(out.net.target, out.net.params, cfg.tau);
            loss_sum += loss;
            ++n_batches;
        });
        out.report.loss_history.push_back(n_batches ? loss_sum / static_cast<double>(n_batches) : 0.0);
    }
    return out;
}

void save_potential(const PotentialNet& net, const std::filesystem::path& path) {
    nn::save_checkpoint(net.params, path);
    const auto& spec = net.value_net.spec();
    nlohmann::json meta = {{"input_dim", spec.input_dim},
                           {"hidden_dim", spec.hidden_dim},
                           {"n_residual_blocks", spec.n_residual_blocks},
                           {"clip_ceiling", net.clip_ceiling},
                           {"reward_offset", net.reward_offset},
                           {"gamma", net.gamma}};
    std::ofstream out(path.string() + ".json");
    if (!out) throw std::runtime_error("cannot write potential metadata for " + path.string());
    out << meta.dump(2) << '\n';
}

PotentialNet load_potential(const std::filesystem::path& path) {
    std::ifstream in(path.string() + ".json");
    if (!in) throw std::runtime_error("missing potential metadata " + path.string() + ".json");
    const nlohmann::json meta = nlohmann::json::parse(in);
    nn::Mlp net(nn::MlpSpec{meta.at("input_dim").get<int>(), 1, meta.at("hidden_dim").get<int>(),
                            meta.at("n_residual_blocks").get<int>()});
    PotentialNet pot{net, net.zeros(), {}, meta.at("clip_ceiling").get<double>(), meta.at("reward_offset").get<double>(),
                     meta.at("gamma").get<double>()};
    nn::load_checkpoint(pot.params, path);
    pot.target = pot.params;
    return pot;
}

}  // namespace cshape
