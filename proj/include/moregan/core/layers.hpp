#pragma once

#include <optional>
#include <string>

#include "moregan/core/norm.hpp"
#include "moregan/core/params.hpp"
#include "moregan/core/spatial.hpp"

namespace moregan {

/// Convolution with parameters `<name>.weight` [out,in,k,k] and `<name>.bias`.
template <typename T>
struct Conv2d {
    Var<T> weight;
    std::optional<Var<T>> bias;
    ConvSpec spec;

    Conv2d() = default;
    Conv2d(ParamStore<T>& store, const std::string& name, int in, int out, int kernel, ConvSpec s,
           const InitSpec& init, Rng& rng, bool with_bias = true)
        : spec(s) {
        weight = store.create(name + ".weight", init_kernel<T>(Shape{out, in, kernel, kernel}, init, rng));
        if (with_bias) bias = store.create(name + ".bias", Tensor<T>(Shape{1, out, 1, 1}, T(0)));
    }

    int in_channels() const { return weight.shape().c; }
    int out_channels() const { return weight.shape().n; }

    Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, weight, bias, spec); }
};

template <typename T>
struct BatchNorm2d {
    Var<T> gamma;
    Var<T> beta;
    Tensor<T>* running_mean = nullptr;
    Tensor<T>* running_var = nullptr;

    BatchNorm2d() = default;
    BatchNorm2d(ParamStore<T>& store, const std::string& name, int channels) {
        gamma = store.create(name + ".gamma", Tensor<T>(Shape{1, channels, 1, 1}, T(1)));
        beta = store.create(name + ".beta", Tensor<T>(Shape{1, channels, 1, 1}, T(0)));
        running_mean = &store.create_buffer(name + ".running_mean", Tensor<T>(Shape{1, channels, 1, 1}, T(0)));
        running_var = &store.create_buffer(name + ".running_var", Tensor<T>(Shape{1, channels, 1, 1}, T(1)));
    }

    Var<T> operator()(const Var<T>& x, bool training) const {
        return ops::batch_norm(x, gamma, beta, *running_mean, *running_var, training);
    }
};

template <typename T>
struct InstanceNorm2d {
    Var<T> gamma;
    Var<T> beta;

    InstanceNorm2d() = default;
    InstanceNorm2d(ParamStore<T>& store, const std::string& name, int channels) {
        gamma = store.create(name + ".gamma", Tensor<T>(Shape{1, channels, 1, 1}, T(1)));
        beta = store.create(name + ".beta", Tensor<T>(Shape{1, channels, 1, 1}, T(0)));
    }

    Var<T> operator()(const Var<T>& x) const { return ops::instance_norm(x, gamma, beta); }
};

/// Overwrites every value of a parameter (tests and degenerate configurations).
template <typename T>
void fill_param(Var<T> p, T value) {
    p.mutable_value().fill(value);
}

template <typename T>
void zero_conv(Conv2d<T>& conv) {
    fill_param(conv.weight, T(0));
    if (conv.bias) fill_param(*conv.bias, T(0));
}

}  // namespace moregan
