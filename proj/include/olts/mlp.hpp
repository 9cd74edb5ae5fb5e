#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace olts::nn {

enum class Activation { ReLU, SiLU };

inline const char* to_string(Activation a) { return a == Activation::ReLU ? "relu" : "silu"; }

inline Activation parse_activation(const std::string& s) {
    if (s == "relu") return Activation::ReLU;
    if (s == "silu") return Activation::SiLU;
    throw std::invalid_argument("unknown activation '" + s + "'");
}

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct Layer {
    Matrix<Scalar> weight;  // out x in
    Vector<Scalar> bias;    // out

    bool operator==(const Layer& other) const {
        return weight.rows() == other.weight.rows() && weight.cols() == other.weight.cols() &&
               weight == other.weight && bias == other.bias;
    }
};

template <typename Derived>
auto sigmoid(const Eigen::ArrayBase<Derived>& z) {
    using S = typename Derived::Scalar;
    return (S(1) + (-z).exp()).inverse();
}

template <typename Scalar>
Scalar silu(Scalar z) {
    return z / (Scalar(1) + std::exp(-z));
}

/// Applies the hidden activation to pre-activations, column per sample.
template <typename Scalar>
Matrix<Scalar> activate(const Matrix<Scalar>& z, Activation act) {
    if (act == Activation::ReLU) return z.cwiseMax(Scalar(0));
    return (z.array() * sigmoid(z.array())).matrix();
}

/// Elementwise derivative of the activation at z.
template <typename Scalar>
Matrix<Scalar> activate_grad(const Matrix<Scalar>& z, Activation act) {
    if (act == Activation::ReLU) return (z.array() > Scalar(0)).template cast<Scalar>().matrix();
    const auto s = sigmoid(z.array()).eval();
    return (s * (Scalar(1) + z.array() * (Scalar(1) - s))).matrix();
}

/// Fully connected network; hidden layers use `activation`, the output layer
/// is linear. Inputs and outputs are column-per-sample matrices.
template <typename Scalar>
class Mlp {
public:
    Mlp() = default;

    /// dims = {in, hidden..., out}; weights use a seeded He-uniform draw,
    /// biases start at zero.
    Mlp(const std::vector<int>& dims, Activation activation, std::uint64_t seed)
        : activation_(activation) {
        if (dims.size() < 2) throw std::invalid_argument("an MLP needs at least input and output dims");
        std::mt19937_64 rng(seed);
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            if (dims[l] <= 0 || dims[l + 1] <= 0) throw std::invalid_argument("layer dims must be positive");
            const Scalar bound = std::sqrt(Scalar(6) / Scalar(dims[l]));
            std::uniform_real_distribution<Scalar> dist(-bound, bound);
            Layer<Scalar> layer;
            layer.weight.resize(dims[l + 1], dims[l]);
            for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = dist(rng);
            layer.bias = Vector<Scalar>::Zero(dims[l + 1]);
            layers_.push_back(std::move(layer));
        }
    }

    Mlp(std::vector<Layer<Scalar>> layers, Activation activation)
        : layers_(std::move(layers)), activation_(activation) {
        check_chain();
    }

    Eigen::Index in_dim() const { return layers_.front().weight.cols(); }
    Eigen::Index out_dim() const { return layers_.back().weight.rows(); }
    Activation activation() const noexcept { return activation_; }
    std::vector<Layer<Scalar>>& layers() noexcept { return layers_; }
    const std::vector<Layer<Scalar>>& layers() const noexcept { return layers_; }

    std::vector<int> dims() const {
        std::vector<int> d{static_cast<int>(in_dim())};
        for (const auto& l : layers_) d.push_back(static_cast<int>(l.weight.rows()));
        return d;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
        return n;
    }

    bool all_finite() const {
        for (const auto& l : layers_)
            if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
        return true;
    }

    Matrix<Scalar> forward(const Matrix<Scalar>& x) const {
        if (x.rows() != in_dim()) throw std::invalid_argument("input rows differ from model in_dim");
        Matrix<Scalar> a = x;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            Matrix<Scalar> z = layers_[l].weight * a;
            z.colwise() += layers_[l].bias;
            a = l + 1 < layers_.size() ? activate(z, activation_) : std::move(z);
        }
        return a;
    }

    Vector<Scalar> forward(const Vector<Scalar>& x) const {
        return forward(Matrix<Scalar>(x)).col(0);
    }

    bool operator==(const Mlp& other) const {
        return activation_ == other.activation_ && layers_ == other.layers_;
    }

private:
    void check_chain() const {
        if (layers_.empty()) throw std::invalid_argument("an MLP needs at least one layer");
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            if (layers_[l].bias.size() != layers_[l].weight.rows())
                throw std::invalid_argument("bias length differs from layer width");
            if (l > 0 && layers_[l].weight.cols() != layers_[l - 1].weight.rows())
                throw std::invalid_argument("adjacent layer dims do not chain");
        }
    }

    std::vector<Layer<Scalar>> layers_;
    Activation activation_ = Activation::ReLU;
};

template <typename Scalar>
struct Gradients {
    std::vector<Layer<Scalar>> layers;
    Scalar loss = 0;
};

/// Mean squared error over every output element of every sample, and its
/// exact gradient with respect to all weights and biases.
template <typename Scalar>
Gradients<Scalar> backward(const Mlp<Scalar>& model, const Matrix<Scalar>& x, const Matrix<Scalar>& target) {
    const auto& layers = model.layers();
    if (target.rows() != model.out_dim() || target.cols() != x.cols())
        throw std::invalid_argument("target shape differs from model output");
    if (x.rows() != model.in_dim()) throw std::invalid_argument("input rows differ from model in_dim");

    std::vector<Matrix<Scalar>> pre(layers.size());
    std::vector<Matrix<Scalar>> post(layers.size() + 1);
    post[0] = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        pre[l] = layers[l].weight * post[l];
        pre[l].colwise() += layers[l].bias;
        post[l + 1] = l + 1 < layers.size() ? activate(pre[l], model.activation()) : pre[l];
    }

    const Matrix<Scalar> diff = post.back() - target;
    const Scalar n = Scalar(diff.size());
    Gradients<Scalar> g;
    g.loss = diff.squaredNorm() / n;
    g.layers.resize(layers.size());

    Matrix<Scalar> delta = (Scalar(2) / n) * diff;
    for (std::size_t l = layers.size(); l-- > 0;) {
        g.layers[l].weight.noalias() = delta * post[l].transpose();
        g.layers[l].bias = delta.rowwise().sum();
        if (l > 0) {
            Matrix<Scalar> back = layers[l].weight.transpose() * delta;
            delta = back.cwiseProduct(activate_grad(pre[l - 1], model.activation()));
        }
    }
    return g;
}

template <typename Scalar>
bool all_finite(const Gradients<Scalar>& g) {
    if (!std::isfinite(g.loss)) return false;
    for (const auto& l : g.layers)
        if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
}

}  // namespace olts::nn
