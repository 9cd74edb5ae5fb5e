#pragma once

#include "olts/buffer.hpp"
#include "olts/mlp.hpp"
#include "olts/sample.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace olts::trainer {

using Mlp = nn::Mlp<double>;
using Matrix = nn::Matrix<double>;
using Vector = nn::Vector<double>;
using Gradients = nn::Gradients<double>;
using buffer::Batch;

struct SgdConfig {
    double lr0 = 1e-3;
    /// Per-step multiplicative decay, 0 < gamma <= 1.
    double decay_gamma = 0.99995;
    std::uint32_t batch_size = 32;
    std::uint64_t max_batches = 10000;

    void validate() const;
    double lr(std::uint64_t step) const;
};

/// NaN or infinity reached the parameters or gradients.
class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// p <- p - lr(step) * g for every weight and bias.
void sgd_step(Mlp& model, const Gradients& grads, std::uint64_t step, const SgdConfig& cfg);

// ---------------------------------------------------------------- normalizer

struct MinMax {
    double lo = 0.0;
    double hi = 1.0;
};
struct Standardize {
    double mean = 0.0;
    double std = 1.0;
};
using Scheme = std::variant<MinMax, Standardize>;

/// Per-feature affine scaling of column-per-sample matrices.
class Normalizer {
public:
    Normalizer() = default;
    explicit Normalizer(std::vector<Scheme> features);

    /// Fits Standardize constants per row of `data` (population std).
    static Normalizer fit_standardize(const Matrix& data);
    static Normalizer identity(std::size_t dim);

    std::size_t dim() const noexcept { return scale_.size(); }
    const std::vector<Scheme>& schemes() const noexcept { return schemes_; }
    Matrix apply(const Matrix& x) const;
    Matrix invert(const Matrix& x) const;

private:
    std::vector<Scheme> schemes_;
    Vector shift_;
    Vector scale_;
};

// ---------------------------------------------------------------- pairs

enum class Mode {
    /// input: selected parameters and t / t_last; target: u_t.
    Direct,
    /// input: selected parameters and u_t; target: u_{t+1}.
    Autoregressive,
};

Mode parse_mode(const std::string& s);
const char* to_string(Mode m);

/// How samples become (input, target) columns.
struct ModelSpec {
    Mode mode = Mode::Direct;
    /// Parameter names fed to the network, in order.
    std::vector<std::string> input_params;
    /// Flat length of one field.
    std::uint32_t field_dim = 1;
    /// Index of the last timestep; Direct mode feeds t_index / t_last.
    std::uint32_t t_last = 1;

    std::uint32_t input_dim() const;
    std::uint32_t output_dim() const { return field_dim; }
};

/// Raw (un-normalized) training pairs, one column per pair.
struct PairSet {
    Matrix inputs;
    Matrix targets;
    Eigen::Index size() const { return inputs.cols(); }
};

/// Thrown when a sample's field size does not match the model.
class DimensionMismatch : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Single-step samples in Autoregressive mode carry u_{t-1} followed by u_t
/// and contribute one pair; the initial step carries u_0 alone and contributes
/// none. Full trajectories contribute every pair they hold.
PairSet make_pairs(const std::vector<Sample>& samples, const ModelSpec& spec);
std::size_t pair_count(const Sample& sample, const ModelSpec& spec);

// ---------------------------------------------------------------- training

struct BatchStatsRow {
    std::uint64_t step = 0;
    std::vector<double> mean;
    std::vector<double> std;
};

/// Per-feature mean and population std across the batch columns.
BatchStatsRow batch_stats(const Matrix& normalized_inputs, std::uint64_t step);

struct StepResult {
    double loss = 0.0;
    double lr = 0.0;
    /// Training pairs the batch produced; zero means no update was made.
    std::size_t pairs = 0;
    BatchStatsRow stats;
};

/// One backward pass and one SGD update on the batch; throws
/// TrainingDiverged when the loss or update is not finite. A batch that
/// yields no pairs leaves the model untouched.
StepResult train_on_batch(Mlp& model, const Batch& batch, const ModelSpec& spec,
                          const Normalizer& input_norm, const Normalizer& target_norm,
                          const SgdConfig& cfg, std::uint64_t step);

StepResult train_on_pairs(Mlp& model, const PairSet& pairs, const Normalizer& input_norm,
                          const Normalizer& target_norm, const SgdConfig& cfg, std::uint64_t step);

/// Root-mean-squared error in normalized target units; no update.
double validate(const Mlp& model, const PairSet& data, const Normalizer& input_norm,
                const Normalizer& target_norm);

// ---------------------------------------------------------------- checkpoint

class CorruptCheckpoint : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Checkpoint {
    Mlp model;
    SgdConfig cfg;
    std::uint64_t step = 0;
};

/// Layout: "MLCK", u32 version, u32 activation, u32 layer count,
/// u32 dims[layers + 1], u64 step, f64 lr0, f64 gamma, then per layer the
/// weights row-major and the bias, then a CRC-32 of the parameter bytes.
void checkpoint_save(const Mlp& model, const SgdConfig& cfg, std::uint64_t step,
                     const std::filesystem::path& path);
Checkpoint checkpoint_load(const std::filesystem::path& path);

}  // namespace olts::trainer
