#include "cshape/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace cshape {

void CITestConfig::validate() const {
    if (n_random_features <= 0 || n_xy_features <= 0 || n_permutations <= 0)
        throw ConfigError("ci_test: feature and permutation counts must be positive");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("ci_test: alpha must lie in (0,1)");
    if (fixed_bandwidth && !(*fixed_bandwidth > 0.0)) throw ConfigError("ci_test: bandwidth must be positive");
}

CITestConfig ci_config_from_json(const nlohmann::json& j) {
    CITestConfig c;
    c.n_random_features = j.value("n_random_features", c.n_random_features);
    c.n_xy_features = j.value("n_xy_features", c.n_xy_features);
    c.n_permutations = j.value("n_permutations", c.n_permutations);
    c.alpha = j.value("alpha", c.alpha);
    c.seed = j.value("seed", c.seed);
    if (j.contains("kernel_bandwidth")) {
        const auto& bw = j.at("kernel_bandwidth");
        if (bw.is_number())
            c.fixed_bandwidth = bw.get<double>();
        else if (bw.get<std::string>() != "median-heuristic")
            throw ConfigError("ci_test: kernel_bandwidth must be a number or \"median-heuristic\"");
    }
    c.validate();
    return c;
}

nlohmann::json to_json(const CITestConfig& c) {
    nlohmann::json j = {{"n_random_features", c.n_random_features},
                        {"n_xy_features", c.n_xy_features},
                        {"n_permutations", c.n_permutations},
                        {"alpha", c.alpha},
                        {"seed", c.seed}};
    j["kernel_bandwidth"] = c.fixed_bandwidth ? nlohmann::json(*c.fixed_bandwidth) : nlohmann::json("median-heuristic");
    return j;
}

namespace {

constexpr std::size_t kBandwidthRows = 1024;

SampleMatrix standardize(const SampleMatrix& m, const char* label) {
    SampleMatrix out(m.rows(), m.cols());
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        const double mean = m.col(j).mean();
        const double sd = std::sqrt((m.col(j).array() - mean).square().mean());
        if (!std::isfinite(sd) || sd <= 1e-12 * (1.0 + std::abs(mean)))
            throw std::invalid_argument(std::string("ci_test: column ") + label + "[" + std::to_string(j) +
                                        "] has zero variance");
        out.col(j) = (m.col(j).array() - mean) / sd;
    }
    return out;
}

SampleMatrix fourier_features(const SampleMatrix& data, int m, double bandwidth, Rng& rng) {
    Eigen::MatrixXd w(data.cols(), m);
    for (Eigen::Index j = 0; j < m; ++j)
        for (Eigen::Index i = 0; i < data.cols(); ++i) w(i, j) = standard_normal(rng) / bandwidth;
    Eigen::RowVectorXd phase(m);
    for (Eigen::Index j = 0; j < m; ++j) phase(j) = 2.0 * std::numbers::pi * uniform01(rng);
    SampleMatrix f = ((data * w).rowwise() + phase).array().cos().matrix() * std::sqrt(2.0 / m);
    f.rowwise() -= f.colwise().mean();
    return f;
}

double block_bandwidth(const SampleMatrix& standardized, const CITestConfig& cfg, Rng& rng) {
    return cfg.fixed_bandwidth ? *cfg.fixed_bandwidth : median_heuristic(standardized, rng);
}

SampleMatrix drop_constant_columns(const SampleMatrix& m) {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        if (m.col(j).maxCoeff() > m.col(j).minCoeff()) keep.push_back(j);
    SampleMatrix out(m.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(keep[k]);
    return out;
}

SampleMatrix hstack(const SampleMatrix& a, const SampleMatrix& b) {
    SampleMatrix out(a.rows(), a.cols() + b.cols());
    out.leftCols(a.cols()) = a;
    out.rightCols(b.cols()) = b;
    return out;
}

SampleMatrix rows_of(const std::vector<RealVec>& rows) {
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto d = n ? static_cast<Eigen::Index>(rows.front().size()) : 0;
    SampleMatrix m(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& r = rows[static_cast<std::size_t>(i)];
        if (static_cast<Eigen::Index>(r.size()) != d) throw std::invalid_argument("diagnostics: ragged rows");
        for (Eigen::Index j = 0; j < d; ++j) m(i, j) = r[static_cast<std::size_t>(j)];
    }
    return m;
}

template <class Get>
SampleMatrix field_matrix(const TrajectoryDataset& ds, Get get) {
    std::vector<RealVec> rows;
    rows.reserve(ds.size());
    for (const auto& t : ds.transitions) rows.push_back(get(t));
    return rows_of(rows);
}

CITestResult guarded_test(const SampleMatrix& x, const SampleMatrix& y, const SampleMatrix& z, const CITestConfig& cfg) {
    const SampleMatrix yk = drop_constant_columns(y);
    if (yk.cols() == 0) {
        CITestResult r;
        r.n = static_cast<std::size_t>(x.rows());
        return r;
    }
    return ci_test(x, yk, drop_constant_columns(z), cfg);
}

}  // namespace

double median_heuristic(const SampleMatrix& data, Rng& rng) {
    const auto n = static_cast<std::size_t>(data.rows());
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    if (n > kBandwidthRows) {
        std::shuffle(rows.begin(), rows.end(), rng);
        rows.resize(kBandwidthRows);
    }
    std::vector<double> dist;
    dist.reserve(rows.size() * (rows.size() - 1) / 2);
    for (std::size_t a = 0; a < rows.size(); ++a)
        for (std::size_t b = a + 1; b < rows.size(); ++b)
            dist.push_back((data.row(static_cast<Eigen::Index>(rows[a])) - data.row(static_cast<Eigen::Index>(rows[b]))).norm());
    if (dist.empty()) return 1.0;
    auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
    std::nth_element(dist.begin(), mid, dist.end());
    if (*mid > 0.0) return *mid;
    // Mostly tied rows (discrete data): fall back to the mean distance.
    const double mean = std::accumulate(dist.begin(), dist.end(), 0.0) / static_cast<double>(dist.size());
    return mean > 0.0 ? mean : 1.0;
}

CITestResult ci_test(const SampleMatrix& x, const SampleMatrix& y, const SampleMatrix& z, const CITestConfig& cfg) {
    cfg.validate();
    const Eigen::Index n = x.rows();
    if (y.rows() != n || (z.cols() > 0 && z.rows() != n)) throw std::invalid_argument("ci_test: sample counts differ");
    if (n < 50) throw std::invalid_argument("ci_test: need at least 50 samples");
    if (x.cols() == 0 || y.cols() == 0) throw std::invalid_argument("ci_test: X and Y need at least one column");

    Rng rng(cfg.seed);
    const SampleMatrix xs = standardize(x, "X");
    const SampleMatrix ys = standardize(y, "Y");
    const SampleMatrix zs = z.cols() > 0 ? standardize(z, "Z") : SampleMatrix(n, 0);
    const double bw_x = block_bandwidth(xs, cfg, rng);
    const double bw_y = block_bandwidth(ys, cfg, rng);
    const double bw_z = zs.cols() > 0 ? block_bandwidth(zs, cfg, rng) : 1.0;

    SampleMatrix rx = fourier_features(xs, cfg.n_xy_features, bw_x, rng);
    SampleMatrix ry = fourier_features(ys, cfg.n_xy_features, bw_y, rng);
    if (zs.cols() > 0) {
        const SampleMatrix fz = fourier_features(zs, cfg.n_random_features, bw_z, rng);
        Eigen::MatrixXd gram = fz.transpose() * fz;
        gram.diagonal().array() += 1e-3 * static_cast<double>(n);
        const Eigen::LDLT<Eigen::MatrixXd> solver(gram);
        rx -= fz * solver.solve(fz.transpose() * rx);
        ry -= fz * solver.solve(fz.transpose() * ry);
    }

    const double nn = static_cast<double>(n);
    auto statistic = [&](const SampleMatrix& a) { return (a.transpose() * ry / nn).squaredNorm(); };
    CITestResult result;
    result.n = static_cast<std::size_t>(n);
    result.statistic = statistic(rx);

    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    SampleMatrix permuted(rx.rows(), rx.cols());
    int at_least = 0;
    for (int k = 0; k < cfg.n_permutations; ++k) {
        std::shuffle(perm.begin(), perm.end(), rng);
        for (Eigen::Index i = 0; i < n; ++i) permuted.row(i) = rx.row(perm[static_cast<std::size_t>(i)]);
        if (statistic(permuted) >= result.statistic) ++at_least;
    }
    result.p_value = (at_least + 1.0) / (cfg.n_permutations + 1.0);
    result.rejected = result.p_value < cfg.alpha;
    return result;
}

nlohmann::json to_json(const AuditResult& a) {
    auto one = [](const CITestResult& r) {
        return nlohmann::json{{"statistic", r.statistic}, {"p_value", r.p_value}, {"n", r.n}, {"rejected", r.rejected}};
    };
    return {{"transition_test", one(a.transition)}, {"behavior_test", one(a.behavior)}, {"confounded", a.confounded()}};
}

AuditResult confounding_audit(const TrajectoryDataset& ds, const std::vector<RealVec>& full_trace, int hidden_dim,
                              const CITestConfig& cfg) {
    if (full_trace.empty()) throw std::invalid_argument("confounding_audit: missing unmasked trace");
    if (full_trace.size() != ds.size()) throw std::invalid_argument("confounding_audit: trace length differs from dataset");
    SampleMatrix hidden(static_cast<Eigen::Index>(ds.size()), 1);
    for (std::size_t i = 0; i < full_trace.size(); ++i) {
        if (hidden_dim < 0 || static_cast<std::size_t>(hidden_dim) >= full_trace[i].size())
            throw std::invalid_argument("confounding_audit: hidden_dim out of range");
        hidden(static_cast<Eigen::Index>(i), 0) = full_trace[i][static_cast<std::size_t>(hidden_dim)];
    }
    const SampleMatrix obs = field_matrix(ds, [](const Transition& t) { return t.obs; });
    const SampleMatrix act = field_matrix(ds, [](const Transition& t) { return t.action; });
    const SampleMatrix next = field_matrix(ds, [](const Transition& t) { return t.next_obs; });
    return {guarded_test(hidden, next, hstack(act, obs), cfg), guarded_test(hidden, act, obs, cfg)};
}

AuditResult confounding_audit(const TrajectoryDataset& ds, int hidden_dim, const CITestConfig& cfg) {
    return confounding_audit(ds, ds.privileged, hidden_dim, cfg);
}

std::pair<TrajectoryDataset, int> with_noise_channel(const TrajectoryDataset& ds, Rng& rng) {
    if (ds.privileged.size() != ds.size()) throw std::invalid_argument("with_noise_channel: missing unmasked trace");
    TrajectoryDataset out = ds;
    for (auto& row : out.privileged) row.push_back(standard_normal(rng));
    const int col = out.privileged.empty() ? 0 : static_cast<int>(out.privileged.front().size()) - 1;
    return {std::move(out), col};
}

std::vector<double> returns_to_go(const TrajectoryDataset& ds) {
    std::vector<double> rtg(ds.size());
    double acc = 0.0;
    for (std::size_t i = ds.size(); i-- > 0;) {
        const auto& t = ds.transitions[i];
        if (i + 1 == ds.size() || ds.transitions[i + 1].episode_id != t.episode_id) acc = 0.0;
        acc += t.reward;
        rtg[i] = acc;
    }
    return rtg;
}

std::vector<DependenceRow> dependence_report(const TrajectoryDataset& ds, const std::vector<int>& dims,
                                             const CITestConfig& cfg) {
    if (ds.empty()) throw std::invalid_argument("dependence_report: empty dataset");
    const SampleMatrix obs = field_matrix(ds, [](const Transition& t) { return t.obs; });
    const SampleMatrix act = field_matrix(ds, [](const Transition& t) { return t.action; });
    const auto rtg = returns_to_go(ds);
    const SampleMatrix y = Eigen::Map<const Eigen::VectorXd>(rtg.data(), static_cast<Eigen::Index>(rtg.size()));
    std::vector<DependenceRow> rows;
    for (int dim : dims) {
        if (dim < 0 || dim >= obs.cols()) throw std::invalid_argument("dependence_report: dim out of range");
        SampleMatrix rest(obs.rows(), obs.cols() - 1);
        for (Eigen::Index j = 0, k = 0; j < obs.cols(); ++j)
            if (j != dim) rest.col(k++) = obs.col(j);
        const CITestResult r = ci_test(obs.col(dim), y, drop_constant_columns(hstack(rest, act)), cfg);
        rows.push_back({dim, r.statistic, r.p_value, r.rejected});
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const DependenceRow& a, const DependenceRow& b) { return a.statistic > b.statistic; });
    return rows;
}

}  // namespace cshape
