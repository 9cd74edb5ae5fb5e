#pragma once

#include "olts/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace olts::testing {

/// Largest relative error between analytic and central-difference gradients,
/// with a 1e-6 floor on the denominator.
inline double gradient_relative_error(nn::Mlp<double>& model, const nn::Matrix<double>& x,
                                      const nn::Matrix<double>& y, double h = 1e-6) {
    const auto analytic = nn::backward(model, x, y);
    auto loss = [&] {
        const nn::Matrix<double> d = model.forward(x) - y;
        return d.squaredNorm() / static_cast<double>(d.size());
    };
    double worst = 0.0;
    auto check = [&](double& param, double g) {
        const double saved = param;
        param = saved + h;
        const double up = loss();
        param = saved - h;
        const double down = loss();
        param = saved;
        const double fd = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(g), std::abs(fd), 1e-6});
        worst = std::max(worst, std::abs(g - fd) / denom);
    };
    for (std::size_t l = 0; l < model.layers().size(); ++l) {
        auto& layer = model.layers()[l];
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i)
            check(layer.weight.data()[i], analytic.layers[l].weight.data()[i]);
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) check(layer.bias.data()[i], analytic.layers[l].bias.data()[i]);
    }
    return worst;
}

/// Random net of up to three layers of up to eight units, random biases and
/// a small random batch.
inline double random_gradient_check(std::mt19937_64& rng, nn::Activation act) {
    std::uniform_int_distribution<int> width(1, 8), depth(1, 3), batch(1, 5);
    std::vector<int> dims{width(rng)};
    const int layers = depth(rng);
    for (int l = 0; l < layers; ++l) dims.push_back(width(rng));
    nn::Mlp<double> model(dims, act, rng());
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& l : model.layers())
        for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = 0.3 * normal(rng);
    const int b = batch(rng);
    nn::Matrix<double> x(dims.front(), b), y(dims.back(), b);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = normal(rng);
    return gradient_relative_error(model, x, y);
}

}  // namespace olts::testing
