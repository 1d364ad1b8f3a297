#include "cshape/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace cshape::nn {

std::size_t ParamStore::add(std::string name, int rows, int cols) {
    ParamSlice sl{std::move(name), static_cast<std::size_t>(values.size()), rows, cols};
    const auto old = values.size();
    values.conservativeResize(old + static_cast<Eigen::Index>(sl.size()));
    values.segment(old, static_cast<Eigen::Index>(sl.size())).setZero();
    slices_.push_back(std::move(sl));
    return slices_.size() - 1;
}

std::uint64_t ParamStore::architecture_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& sl : slices_) {
        mix(sl.name.data(), sl.name.size());
        const std::int32_t shape[2] = {sl.rows, sl.cols};
        mix(shape, sizeof(shape));
    }
    return h;
}

bool ParamStore::same_layout(const ParamStore& other) const {
    if (slices_.size() != other.slices_.size()) return false;
    for (std::size_t i = 0; i < slices_.size(); ++i) {
        const auto& a = slices_[i];
        const auto& b = other.slices_[i];
        if (a.name != b.name || a.rows != b.rows || a.cols != b.cols || a.offset != b.offset) return false;
    }
    return true;
}

void MlpSpec::validate() const {
    if (input_dim <= 0 || output_dim <= 0 || hidden_dim <= 0 || n_residual_blocks < 0)
        throw std::invalid_argument("MlpSpec: dimensions must be positive");
}

namespace {

Matrix sigmoid(const Matrix& a) { return (1.0 + (-a.array()).exp()).inverse().matrix(); }

Matrix silu(const Matrix& a) { return a.cwiseProduct(sigmoid(a)); }

// d silu / da = s (1 + a (1 - s)) with s = sigmoid(a)
Matrix silu_grad(const Matrix& a, const Matrix& s) {
    return (s.array() * (1.0 + a.array() * (1.0 - s.array()))).matrix();
}

constexpr std::size_t kIn = 0;
inline std::size_t block_slice(int k) { return 2 + 4 * static_cast<std::size_t>(k); }

}  // namespace

Mlp::Mlp(MlpSpec spec) : spec_(spec) { spec_.validate(); }

ParamStore Mlp::zeros() const {
    ParamStore p;
    const int H = spec_.hidden_dim;
    p.add("in.w", H, spec_.input_dim);
    p.add("in.b", H, 1);
    for (int k = 0; k < spec_.n_residual_blocks; ++k) {
        const std::string pre = "block" + std::to_string(k);
        p.add(pre + ".w1", H, H);
        p.add(pre + ".b1", H, 1);
        p.add(pre + ".w2", H, H);
        p.add(pre + ".b2", H, 1);
    }
    p.add("out.w", spec_.output_dim, H);
    p.add("out.b", spec_.output_dim, 1);
    return p;
}

ParamStore Mlp::init(Rng& rng) const {
    ParamStore p = zeros();
    auto fill = [&](std::size_t slice, int fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> d(-bound, bound);
        auto m = p.matrix(slice);
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = d(rng);
    };
    fill(kIn, spec_.input_dim);
    fill(kIn + 1, spec_.input_dim);
    for (int k = 0; k < spec_.n_residual_blocks; ++k) {
        fill(block_slice(k), spec_.hidden_dim);
        fill(block_slice(k) + 1, spec_.hidden_dim);
    }
    const std::size_t out = block_slice(spec_.n_residual_blocks);
    fill(out, spec_.hidden_dim);
    fill(out + 1, spec_.hidden_dim);
    return p;
}

void Mlp::check_input(const ParamStore& p, const Matrix& x) const {
    if (x.rows() != spec_.input_dim)
        throw std::invalid_argument("Mlp: input has " + std::to_string(x.rows()) + " rows, expected " +
                                    std::to_string(spec_.input_dim));
    const auto& sl = p.slices();
    const std::size_t out = block_slice(spec_.n_residual_blocks);
    if (sl.size() != out + 2 || sl[kIn].rows != spec_.hidden_dim || sl[kIn].cols != spec_.input_dim ||
        sl[out].rows != spec_.output_dim || sl[out].cols != spec_.hidden_dim)
        throw std::invalid_argument("Mlp: parameter layout does not match the architecture");
}

Matrix Mlp::forward(const ParamStore& p, const Matrix& x) const {
    check_input(p, x);
    Matrix h = p.matrix(kIn) * x;
    h.colwise() += p.matrix(kIn + 1).col(0);
    for (int k = 0; k < spec_.n_residual_blocks; ++k) {
        const std::size_t b = block_slice(k);
        Matrix a = p.matrix(b) * h;
        a.colwise() += p.matrix(b + 1).col(0);
        h.noalias() += p.matrix(b + 2) * silu(a);
        h.colwise() += p.matrix(b + 3).col(0);
    }
    const std::size_t out = block_slice(spec_.n_residual_blocks);
    Matrix y = p.matrix(out) * h;
    y.colwise() += p.matrix(out + 1).col(0);
    return y;
}

Matrix Mlp::forward(const ParamStore& p, const Matrix& x, MlpTape& tape) const {
    check_input(p, x);
    tape.input = x;
    tape.stream.clear();
    tape.pre.clear();
    tape.gate.clear();
    tape.act.clear();
    Matrix h = p.matrix(kIn) * x;
    h.colwise() += p.matrix(kIn + 1).col(0);
    for (int k = 0; k < spec_.n_residual_blocks; ++k) {
        const std::size_t b = block_slice(k);
        tape.stream.push_back(h);
        Matrix a = p.matrix(b) * h;
        a.colwise() += p.matrix(b + 1).col(0);
        Matrix gate = sigmoid(a);
        Matrix act = a.cwiseProduct(gate);
        h.noalias() += p.matrix(b + 2) * act;
        h.colwise() += p.matrix(b + 3).col(0);
        tape.pre.push_back(std::move(a));
        tape.gate.push_back(std::move(gate));
        tape.act.push_back(std::move(act));
    }
    tape.stream.push_back(h);
    const std::size_t out = block_slice(spec_.n_residual_blocks);
    Matrix y = p.matrix(out) * h;
    y.colwise() += p.matrix(out + 1).col(0);
    return y;
}

Matrix Mlp::backward(const ParamStore& p, const MlpTape& tape, const Matrix& grad_out, Vector& grad) const {
    if (static_cast<std::size_t>(grad.size()) != p.size()) throw std::invalid_argument("Mlp::backward: grad size");
    const auto& sl = p.slices();
    const std::size_t out = block_slice(spec_.n_residual_blocks);
    grad_matrix(grad, sl[out]).noalias() += grad_out * tape.stream.back().transpose();
    grad_matrix(grad, sl[out + 1]) += grad_out.rowwise().sum();
    Matrix dh = p.matrix(out).transpose() * grad_out;
    for (int k = spec_.n_residual_blocks - 1; k >= 0; --k) {
        const std::size_t b = block_slice(k);
        const Matrix& a = tape.pre[static_cast<std::size_t>(k)];
        const Matrix& h_in = tape.stream[static_cast<std::size_t>(k)];
        grad_matrix(grad, sl[b + 2]).noalias() += dh * tape.act[static_cast<std::size_t>(k)].transpose();
        grad_matrix(grad, sl[b + 3]) += dh.rowwise().sum();
        const Matrix da =
            (p.matrix(b + 2).transpose() * dh).cwiseProduct(silu_grad(a, tape.gate[static_cast<std::size_t>(k)]));
        grad_matrix(grad, sl[b]).noalias() += da * h_in.transpose();
        grad_matrix(grad, sl[b + 1]) += da.rowwise().sum();
        dh.noalias() += p.matrix(b).transpose() * da;
    }
    grad_matrix(grad, sl[kIn]).noalias() += dh * tape.input.transpose();
    grad_matrix(grad, sl[kIn + 1]) += dh.rowwise().sum();
    return p.matrix(kIn).transpose() * dh;
}

// ---------------------------------------------------------------------------

double gaussian_log_prob(std::span<const double> mu, std::span<const double> sigma, std::span<const double> x) {
    if (mu.size() != sigma.size() || mu.size() != x.size())
        throw std::invalid_argument("gaussian_log_prob: dimension mismatch");
    double lp = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        if (!(sigma[i] > 0.0)) throw std::invalid_argument("gaussian_log_prob: sigma must be positive");
        const double z = (x[i] - mu[i]) / sigma[i];
        lp += -kHalfLog2Pi - std::log(sigma[i]) - 0.5 * z * z;
    }
    return lp;
}

RealVec reparam_sample(std::span<const double> mu, std::span<const double> sigma, std::span<const double> eps) {
    if (mu.size() != sigma.size() || mu.size() != eps.size())
        throw std::invalid_argument("reparam_sample: dimension mismatch");
    RealVec out(mu.size());
    for (std::size_t i = 0; i < mu.size(); ++i) out[i] = mu[i] + sigma[i] * eps[i];
    return out;
}

GaussianHead split_gaussian_head(const Matrix& raw, double log_std_min, double log_std_max) {
    if (raw.rows() % 2 != 0) throw std::invalid_argument("gaussian head: raw output must have even rows");
    const Eigen::Index d = raw.rows() / 2;
    GaussianHead head;
    head.mean = raw.topRows(d);
    const Matrix ls = raw.bottomRows(d);
    head.log_std = ls.cwiseMax(log_std_min).cwiseMin(log_std_max);
    head.log_std_pass = ls.unaryExpr([=](double v) { return (v >= log_std_min && v <= log_std_max) ? 1.0 : 0.0; });
    return head;
}

Matrix gaussian_head_backward(const GaussianHead& head, const Matrix& d_mean, const Matrix& d_log_std) {
    Matrix raw(head.mean.rows() * 2, head.mean.cols());
    raw.topRows(head.mean.rows()) = d_mean;
    raw.bottomRows(head.mean.rows()) = d_log_std.cwiseProduct(head.log_std_pass);
    return raw;
}

GaussianLogProbBatch gaussian_log_prob_batch(const Matrix& mean, const Matrix& log_std, const Matrix& x) {
    if (mean.rows() != x.rows() || mean.cols() != x.cols() || log_std.rows() != x.rows() || log_std.cols() != x.cols())
        throw std::invalid_argument("gaussian_log_prob_batch: shape mismatch");
    GaussianLogProbBatch out;
    const Matrix inv_sigma = (-log_std.array()).exp().matrix();
    const Matrix z = (x - mean).cwiseProduct(inv_sigma);
    out.log_prob = (-kHalfLog2Pi - log_std.array() - 0.5 * z.array().square()).matrix().colwise().sum().transpose();
    out.d_mean = z.cwiseProduct(inv_sigma);
    out.d_x = -out.d_mean;
    out.d_log_std = (z.array().square() - 1.0).matrix();
    return out;
}

// ---------------------------------------------------------------------------

void adam_step(Vector& params, const Vector& grads, AdamState& state, const AdamConfig& cfg) {
    if (params.size() != grads.size() || state.m.size() != params.size())
        throw std::invalid_argument("adam_step: shape mismatch");
    ++state.step;
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads;
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads.cwiseProduct(grads);
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    params.array() -= cfg.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.eps);
}

void soft_update(ParamStore& target, const ParamStore& online, double tau) {
    if (!target.same_layout(online)) throw std::invalid_argument("soft_update: architectures differ");
    if (tau == 1.0) {
        target.values = online.values;
        return;
    }
    if (tau == 0.0) return;
    target.values = tau * online.values + (1.0 - tau) * target.values;
}

Vector finite_difference_gradient(const std::function<double(const Vector&)>& f, const Vector& at, double h) {
    Vector g(at.size());
    Vector probe = at;
    for (Eigen::Index i = 0; i < at.size(); ++i) {
        const double orig = probe(i);
        probe(i) = orig + h;
        const double up = f(probe);
        probe(i) = orig - h;
        const double down = f(probe);
        probe(i) = orig;
        g(i) = (up - down) / (2.0 * h);
    }
    return g;
}

double max_relative_error(const Vector& a, const Vector& b, double floor) {
    if (a.size() != b.size()) throw std::invalid_argument("max_relative_error: size mismatch");
    double worst = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a(i)), std::abs(b(i)), floor});
        worst = std::max(worst, std::abs(a(i) - b(i)) / denom);
    }
    return worst;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'C', 'S', 'H', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void write_le(std::ostream& out, T value) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T read_le(std::istream& in) {
    unsigned char bytes[sizeof(T)];
    in.read(reinterpret_cast<char*>(bytes), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: unexpected end of file");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

}  // namespace

void save_checkpoint(const ParamStore& p, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(kCheckpointMagic, 4);
    write_le<std::uint32_t>(out, kCheckpointVersion);
    write_le<std::uint64_t>(out, p.architecture_hash());
    write_le<std::uint64_t>(out, static_cast<std::uint64_t>(p.size()));
    for (Eigen::Index i = 0; i < p.values.size(); ++i) write_le<double>(out, p.values(i));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

void load_checkpoint(ParamStore& p, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw std::runtime_error("checkpoint: bad magic");
    if (read_le<std::uint32_t>(in) != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version");
    if (read_le<std::uint64_t>(in) != p.architecture_hash())
        throw std::runtime_error("checkpoint: architecture hash mismatch");
    const auto n = read_le<std::uint64_t>(in);
    if (n != p.size()) throw std::runtime_error("checkpoint: parameter count mismatch");
    for (Eigen::Index i = 0; i < p.values.size(); ++i) p.values(i) = read_le<double>(in);
}

}  // namespace cshape::nn
