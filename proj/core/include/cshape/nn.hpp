#pragma once

#include "cshape/common.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace cshape::nn {

/// Batches are column-major: one example per column.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ParamSlice {
    std::string name;
    std::size_t offset = 0;
    int rows = 0;
    int cols = 0;

    std::size_t size() const noexcept { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

/// Flat parameter vector with named, contiguous slices that partition it.
class ParamStore {
public:
    std::size_t add(std::string name, int rows, int cols);

    Vector values;

    const std::vector<ParamSlice>& slices() const noexcept { return slices_; }
    std::size_t size() const noexcept { return static_cast<std::size_t>(values.size()); }

    Eigen::Map<Matrix> matrix(std::size_t slice) {
        const auto& sl = slices_[slice];
        return {values.data() + sl.offset, sl.rows, sl.cols};
    }
    Eigen::Map<const Matrix> matrix(std::size_t slice) const {
        const auto& sl = slices_[slice];
        return {values.data() + sl.offset, sl.rows, sl.cols};
    }

    /// FNV-1a over slice names and shapes.
    std::uint64_t architecture_hash() const;
    bool same_layout(const ParamStore& other) const;

private:
    std::vector<ParamSlice> slices_;
};

/// Views into a gradient vector laid out like a ParamStore.
inline Eigen::Map<Matrix> grad_matrix(Vector& grad, const ParamSlice& sl) {
    return {grad.data() + sl.offset, sl.rows, sl.cols};
}

struct MlpSpec {
    int input_dim = 1;
    int output_dim = 1;
    int hidden_dim = 128;
    int n_residual_blocks = 3;

    void validate() const;
};

/// Forward caches needed by the backward pass.
struct MlpTape {
    Matrix input;
    std::vector<Matrix> stream;  // residual stream entering each block, plus the final one
    std::vector<Matrix> pre;     // pre-activations inside each block
    std::vector<Matrix> gate;    // sigmoid(pre)
    std::vector<Matrix> act;     // silu(pre)
};

/// Residual MLP:
///   h = W_in x + b_in
///   h = h + W2 silu(W1 h + b1) + b2      (per block)
///   y = W_out h + b_out
/// The only nonlinearity is SiLU, so the network is smooth everywhere.
class Mlp {
public:
    explicit Mlp(MlpSpec spec);

    const MlpSpec& spec() const noexcept { return spec_; }

    /// Fan-in uniform initialization; the second affine map of every block is
    /// zero, so a fresh network is the linear read-in/read-out path.
    ParamStore init(Rng& rng) const;
    /// Same layout with all values zero.
    ParamStore zeros() const;

    Matrix forward(const ParamStore& p, const Matrix& x) const;
    Matrix forward(const ParamStore& p, const Matrix& x, MlpTape& tape) const;

    /// Accumulates dL/dparams into `grad` and returns dL/dinput.
    Matrix backward(const ParamStore& p, const MlpTape& tape, const Matrix& grad_out, Vector& grad) const;

private:
    void check_input(const ParamStore& p, const Matrix& x) const;

    MlpSpec spec_;
};

// ---------------------------------------------------------------------------
// Diagonal Gaussian primitives

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2 pi)

/// sum_i [-0.5 ln(2 pi) - ln sigma_i - 0.5 ((x_i - mu_i) / sigma_i)^2]
double gaussian_log_prob(std::span<const double> mu, std::span<const double> sigma, std::span<const double> x);

/// mu + sigma * eps
RealVec reparam_sample(std::span<const double> mu, std::span<const double> sigma, std::span<const double> eps);

/// Mean and clamped log-std split out of a head's raw output (2d x B).
struct GaussianHead {
    Matrix mean;
    Matrix log_std;
    /// 1 where the raw log-std lay inside the clamp range (gradient passes), else 0.
    Matrix log_std_pass;

    Matrix sigma() const { return log_std.array().exp().matrix(); }
};

GaussianHead split_gaussian_head(const Matrix& raw, double log_std_min = kLogStdMin, double log_std_max = kLogStdMax);

/// Reassembles dL/dmean and dL/dlog_std into dL/draw for the head.
Matrix gaussian_head_backward(const GaussianHead& head, const Matrix& d_mean, const Matrix& d_log_std);

struct GaussianLogProbBatch {
    Vector log_prob;   // one per column
    Matrix d_mean;     // d log_prob / d mean
    Matrix d_log_std;  // d log_prob / d log_std
    Matrix d_x;        // d log_prob / d x
};

GaussianLogProbBatch gaussian_log_prob_batch(const Matrix& mean, const Matrix& log_std, const Matrix& x);

// ---------------------------------------------------------------------------
// Optimization

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    Vector m;
    Vector v;
    std::int64_t step = 0;

    explicit AdamState(std::size_t n = 0) : m(Vector::Zero(static_cast<Eigen::Index>(n))), v(m) {}
};

/// Bias-corrected adaptive-moment descent step on `params` (minimization).
void adam_step(Vector& params, const Vector& grads, AdamState& state, const AdamConfig& cfg);

/// target <- tau * online + (1 - tau) * target
void soft_update(ParamStore& target, const ParamStore& online, double tau);

// ---------------------------------------------------------------------------
// Gradient verification

/// Central differences of a scalar function of the parameter vector.
Vector finite_difference_gradient(const std::function<double(const Vector&)>& f, const Vector& at, double h = 1e-5);

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor). The floor keeps components
/// that are zero on both sides from dominating.
double max_relative_error(const Vector& a, const Vector& b, double floor = 1e-6);

// ---------------------------------------------------------------------------
// Checkpoints: "CSHP" magic, u32 version, u64 architecture hash, u64 count,
// then little-endian f64 values in slice order.

void save_checkpoint(const ParamStore& p, const std::filesystem::path& path);
/// Reads values into `p`, whose layout must match the file's architecture hash.
void load_checkpoint(ParamStore& p, const std::filesystem::path& path);

}  // namespace cshape::nn
