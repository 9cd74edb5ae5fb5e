#include "olts/trainer.hpp"

#include "olts/wire.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace olts::trainer {

void SgdConfig::validate() const {
    if (!(lr0 > 0.0)) throw std::invalid_argument("lr0 must be positive");
    if (!(decay_gamma > 0.0 && decay_gamma <= 1.0)) throw std::invalid_argument("decay_gamma must lie in (0, 1]");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
}

double SgdConfig::lr(std::uint64_t step) const {
    return lr0 * std::pow(decay_gamma, static_cast<double>(step));
}

void sgd_step(Mlp& model, const Gradients& grads, std::uint64_t step, const SgdConfig& cfg) {
    if (!nn::all_finite(grads)) throw TrainingDiverged("non-finite gradient at step " + std::to_string(step));
    auto& layers = model.layers();
    if (grads.layers.size() != layers.size()) throw std::invalid_argument("gradient layer count differs");
    const double lr = cfg.lr(step);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        layers[l].weight -= lr * grads.layers[l].weight;
        layers[l].bias -= lr * grads.layers[l].bias;
    }
    if (!model.all_finite()) throw TrainingDiverged("non-finite parameters after step " + std::to_string(step));
}

// ---------------------------------------------------------------- normalizer

Normalizer::Normalizer(std::vector<Scheme> features) : schemes_(std::move(features)) {
    const auto n = static_cast<Eigen::Index>(schemes_.size());
    shift_.resize(n);
    scale_.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        std::visit(
            [&](const auto& s) {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, MinMax>) {
                    if (!(s.hi > s.lo)) throw std::invalid_argument("MinMax needs hi > lo");
                    shift_(i) = s.lo;
                    scale_(i) = s.hi - s.lo;
                } else {
                    if (!(s.std > 0.0)) throw std::invalid_argument("Standardize needs std > 0");
                    shift_(i) = s.mean;
                    scale_(i) = s.std;
                }
            },
            schemes_[static_cast<std::size_t>(i)]);
    }
}

Normalizer Normalizer::fit_standardize(const Matrix& data) {
    std::vector<Scheme> schemes;
    for (Eigen::Index r = 0; r < data.rows(); ++r) {
        const double mean = data.row(r).mean();
        const double var = (data.row(r).array() - mean).square().mean();
        schemes.push_back(Standardize{mean, var > 0.0 ? std::sqrt(var) : 1.0});
    }
    return Normalizer(std::move(schemes));
}

Normalizer Normalizer::identity(std::size_t dim) {
    return Normalizer(std::vector<Scheme>(dim, MinMax{0.0, 1.0}));
}

Matrix Normalizer::apply(const Matrix& x) const {
    if (static_cast<std::size_t>(x.rows()) != dim()) throw DimensionMismatch("normalizer width differs from data");
    return ((x.colwise() - shift_).array().colwise() / scale_.array()).matrix();
}

Matrix Normalizer::invert(const Matrix& x) const {
    if (static_cast<std::size_t>(x.rows()) != dim()) throw DimensionMismatch("normalizer width differs from data");
    return ((x.array().colwise() * scale_.array()).matrix().colwise() + shift_);
}

// ---------------------------------------------------------------- pairs

Mode parse_mode(const std::string& s) {
    if (s == "direct") return Mode::Direct;
    if (s == "autoregressive") return Mode::Autoregressive;
    throw std::invalid_argument("unknown model mode '" + s + "'");
}

const char* to_string(Mode m) { return m == Mode::Direct ? "direct" : "autoregressive"; }

std::uint32_t ModelSpec::input_dim() const {
    const auto p = static_cast<std::uint32_t>(input_params.size());
    return mode == Mode::Direct ? p + 1 : p + field_dim;
}

std::size_t pair_count(const Sample& sample, const ModelSpec& spec) {
    if (const auto* step = std::get_if<SingleStep>(&sample.unit))
        return spec.mode == Mode::Direct || step->field.size() == 2 * std::size_t{spec.field_dim} ? 1 : 0;
    const auto t = std::get<FullTrajectory>(sample.unit).t_count();
    if (spec.mode == Mode::Direct) return t;
    return t > 0 ? t - 1 : 0;
}

namespace {

void write_params(const Sample& s, const ModelSpec& spec, Matrix& inputs, Eigen::Index col) {
    for (std::size_t k = 0; k < spec.input_params.size(); ++k) {
        const auto v = s.params.find(spec.input_params[k]);
        if (!v) throw DimensionMismatch("sample lacks parameter '" + spec.input_params[k] + "'");
        inputs(static_cast<Eigen::Index>(k), col) = *v;
    }
}

void copy_field(const std::vector<double>& field, std::size_t offset, std::uint32_t dim, Matrix& dst,
                Eigen::Index row0, Eigen::Index col) {
    for (std::uint32_t i = 0; i < dim; ++i) dst(row0 + i, col) = field[offset + i];
}

}  // namespace

PairSet make_pairs(const std::vector<Sample>& samples, const ModelSpec& spec) {
    std::size_t total = 0;
    for (const auto& s : samples) total += pair_count(s, spec);
    const auto p = static_cast<Eigen::Index>(spec.input_params.size());
    const auto d = spec.field_dim;

    PairSet out;
    out.inputs.resize(spec.input_dim(), static_cast<Eigen::Index>(total));
    out.targets.resize(d, static_cast<Eigen::Index>(total));
    const double t_last = spec.t_last > 0 ? static_cast<double>(spec.t_last) : 1.0;

    Eigen::Index col = 0;
    for (const auto& s : samples) {
        if (const auto* step = std::get_if<SingleStep>(&s.unit)) {
            if (spec.mode == Mode::Direct) {
                if (step->field.size() != d) throw DimensionMismatch("field length differs from model output");
                write_params(s, spec, out.inputs, col);
                out.inputs(p, col) = step->t_index / t_last;
                copy_field(step->field, 0, d, out.targets, 0, col);
                ++col;
            } else if (step->field.size() == 2 * std::size_t{d}) {
                write_params(s, spec, out.inputs, col);
                copy_field(step->field, 0, d, out.inputs, p, col);
                copy_field(step->field, d, d, out.targets, 0, col);
                ++col;
            } else if (step->field.size() != d) {
                throw DimensionMismatch("autoregressive sample must hold one or two fields");
            }
            continue;
        }
        const auto& traj = std::get<FullTrajectory>(s.unit);
        for (const auto& f : traj.fields)
            if (f.size() != d) throw DimensionMismatch("trajectory field length differs from model output");
        const std::uint32_t t_count = traj.t_count();
        if (spec.mode == Mode::Direct) {
            for (std::uint32_t t = 0; t < t_count; ++t, ++col) {
                write_params(s, spec, out.inputs, col);
                out.inputs(p, col) = t / t_last;
                copy_field(traj.fields[t], 0, d, out.targets, 0, col);
            }
        } else {
            for (std::uint32_t t = 0; t + 1 < t_count; ++t, ++col) {
                write_params(s, spec, out.inputs, col);
                copy_field(traj.fields[t], 0, d, out.inputs, p, col);
                copy_field(traj.fields[t + 1], 0, d, out.targets, 0, col);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------- training

BatchStatsRow batch_stats(const Matrix& x, std::uint64_t step) {
    BatchStatsRow row;
    row.step = step;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        // Shifted by the first column so that constant rows give exactly zero.
        const double pivot = x.cols() > 0 ? x(r, 0) : 0.0;
        const auto shifted = (x.row(r).array() - pivot).eval();
        const double offset = shifted.mean();
        const double var = (shifted - offset).square().mean();
        row.mean.push_back(pivot + offset);
        row.std.push_back(std::sqrt(std::max(var, 0.0)));
    }
    return row;
}

StepResult train_on_pairs(Mlp& model, const PairSet& pairs, const Normalizer& input_norm,
                          const Normalizer& target_norm, const SgdConfig& cfg, std::uint64_t step) {
    if (pairs.size() == 0) throw std::invalid_argument("empty batch");
    if (pairs.inputs.rows() != model.in_dim() || pairs.targets.rows() != model.out_dim())
        throw DimensionMismatch("pair dims differ from model dims");
    const Matrix x = input_norm.apply(pairs.inputs);
    const Matrix y = target_norm.apply(pairs.targets);
    const auto grads = nn::backward(model, x, y);
    if (!std::isfinite(grads.loss)) throw TrainingDiverged("non-finite loss at step " + std::to_string(step));
    sgd_step(model, grads, step, cfg);
    return {grads.loss, cfg.lr(step), static_cast<std::size_t>(pairs.size()), batch_stats(x, step)};
}

StepResult train_on_batch(Mlp& model, const Batch& batch, const ModelSpec& spec, const Normalizer& input_norm,
                          const Normalizer& target_norm, const SgdConfig& cfg, std::uint64_t step) {
    if (batch.samples.empty()) throw std::invalid_argument("empty batch");
    const auto pairs = make_pairs(batch.samples, spec);
    if (pairs.size() == 0) return {};
    return train_on_pairs(model, pairs, input_norm, target_norm, cfg, step);
}

double validate(const Mlp& model, const PairSet& data, const Normalizer& input_norm,
                const Normalizer& target_norm) {
    if (data.size() == 0) throw std::invalid_argument("empty validation set");
    const Matrix pred = model.forward(input_norm.apply(data.inputs));
    const Matrix diff = pred - target_norm.apply(data.targets);
    return std::sqrt(diff.squaredNorm() / static_cast<double>(diff.size()));
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kCheckpointMagic[4] = {'M', 'L', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::string& out, T v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Cursor {
public:
    explicit Cursor(const std::string& data) : data_(data) {}
    template <typename T>
    T get() {
        if (pos_ + sizeof(T) > data_.size()) throw CorruptCheckpoint("checkpoint truncated");
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

private:
    const std::string& data_;
    std::size_t pos_ = 0;
};

}  // namespace

void checkpoint_save(const Mlp& model, const SgdConfig& cfg, std::uint64_t step,
                     const std::filesystem::path& path) {
    std::string out(kCheckpointMagic, 4);
    put(out, kCheckpointVersion);
    put(out, static_cast<std::uint32_t>(model.activation()));
    put(out, static_cast<std::uint32_t>(model.layers().size()));
    for (int d : model.dims()) put(out, static_cast<std::uint32_t>(d));
    put(out, step);
    put(out, cfg.lr0);
    put(out, cfg.decay_gamma);
    const std::size_t body_start = out.size();
    for (const auto& layer : model.layers()) {
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) put(out, layer.weight(r, c));
        for (Eigen::Index r = 0; r < layer.bias.size(); ++r) put(out, layer.bias(r));
    }
    const auto crc = wire::crc32(std::as_bytes(std::span(out).subspan(body_start)));
    put(out, crc);

    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write checkpoint " + tmp.string());
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw std::runtime_error("checkpoint write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint checkpoint_load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CorruptCheckpoint("cannot open checkpoint " + path.string());
    const std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (data.size() < 4 || std::memcmp(data.data(), kCheckpointMagic, 4) != 0)
        throw CorruptCheckpoint("bad checkpoint magic");
    Cursor c(data);
    c.get<std::uint32_t>();
    if (c.get<std::uint32_t>() != kCheckpointVersion) throw CorruptCheckpoint("unsupported checkpoint version");
    const auto act = c.get<std::uint32_t>();
    if (act > 1) throw CorruptCheckpoint("unknown activation code");
    const auto layer_count = c.get<std::uint32_t>();
    if (layer_count == 0 || layer_count > 1024) throw CorruptCheckpoint("implausible layer count");
    std::vector<std::uint32_t> dims(layer_count + 1);
    for (auto& d : dims) {
        d = c.get<std::uint32_t>();
        if (d == 0 || d > (1u << 24)) throw CorruptCheckpoint("implausible layer dimension");
    }
    Checkpoint ck;
    ck.step = c.get<std::uint64_t>();
    ck.cfg.lr0 = c.get<double>();
    ck.cfg.decay_gamma = c.get<double>();

    std::uint64_t expected = 0;
    for (std::uint32_t l = 0; l < layer_count; ++l) expected += std::uint64_t{dims[l + 1]} * (dims[l] + 1);
    if (c.remaining() != expected * sizeof(double) + sizeof(std::uint32_t))
        throw CorruptCheckpoint("checkpoint size disagrees with its dimensions");
    const std::size_t body_start = c.pos();

    std::vector<nn::Layer<double>> layers(layer_count);
    for (std::uint32_t l = 0; l < layer_count; ++l) {
        layers[l].weight.resize(dims[l + 1], dims[l]);
        layers[l].bias.resize(dims[l + 1]);
        for (Eigen::Index r = 0; r < layers[l].weight.rows(); ++r)
            for (Eigen::Index col = 0; col < layers[l].weight.cols(); ++col)
                layers[l].weight(r, col) = c.get<double>();
        for (Eigen::Index r = 0; r < layers[l].bias.size(); ++r) layers[l].bias(r) = c.get<double>();
    }
    const auto body = std::as_bytes(std::span(data).subspan(body_start, c.pos() - body_start));
    if (wire::crc32(body) != c.get<std::uint32_t>()) throw CorruptCheckpoint("checkpoint checksum mismatch");
    ck.model = Mlp(std::move(layers), static_cast<nn::Activation>(act));
    return ck;
}

}  // namespace olts::trainer
