#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "moregan/core/ops.hpp"
#include "moregan/core/params.hpp"

namespace moregan::testing {

template <typename T = double>
Tensor<T> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(s);
    for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("moregan_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

/// Gives every bias under `prefix` a small random value. Zero biases put
/// pre-activations of all-zero neighbourhoods exactly on the ReLU kink, which
/// breaks central differences without saying anything about the gradient.
template <typename T>
void jitter_biases(ParamStore<T>& store, const std::string& prefix, Rng& rng) {
    for (const auto& name : store.names(prefix)) {
        if (!name.ends_with(".bias")) continue;
        for (auto& v : store.get(name).mutable_value().values()) v = static_cast<T>(rng.uniform(-0.1, 0.1));
    }
}

using ScalarFn = std::function<Var<double>(const std::vector<Var<double>>&)>;

/// Projects any output onto a fixed random direction so a vector-valued map
/// can be checked through one scalar.
inline Var<double> project(const Var<double>& out, std::uint64_t seed = 99) {
    Rng rng(seed);
    Tensor<double> dir = random_tensor(out.shape(), rng);
    return ops::mean(ops::mul(out, Var<double>(dir)));
}

/// Worst relative error ||analytic - numeric|| / max(||analytic||, ||numeric||)
/// over the listed inputs, using central differences.
inline double gradient_error(const ScalarFn& f, std::vector<Tensor<double>> inputs, const std::vector<std::size_t>& check,
                             double h = 1e-6) {
    std::vector<Var<double>> vars;
    for (auto& t : inputs) vars.emplace_back(t, true);
    backward(f(vars));
    double worst = 0.0;
    for (std::size_t idx : check) {
        const Tensor<double> analytic = vars[idx].grad();
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        for (std::size_t i = 0; i < inputs[idx].size(); ++i) {
            auto eval = [&](double delta) {
                std::vector<Var<double>> vs;
                for (std::size_t k = 0; k < inputs.size(); ++k) {
                    Tensor<double> t = inputs[k];
                    if (k == idx) t[i] += delta;
                    vs.emplace_back(t, false);
                }
                NoGradGuard guard;
                return f(vs).item();
            };
            const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
            diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
            a2 += analytic[i] * analytic[i];
            n2 += numeric * numeric;
        }
        const double scale = std::sqrt(std::max(a2, n2));
        if (scale > 1e-12) worst = std::max(worst, std::sqrt(diff2) / scale);
    }
    return worst;
}

/// Same measure for the parameters of `store` under `prefix`, with the loss
/// rebuilt from the store's current values by `loss`.
inline double param_gradient_error(ParamStore<double>& store, const std::string& prefix,
                                   const std::function<Var<double>()>& loss, double h = 1e-6) {
    store.zero_grad();
    backward(loss());
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (const auto& name : store.names(prefix)) {
        Var<double> p = store.get(name);
        const Tensor<double> analytic = p.grad();
        for (std::size_t i = 0; i < p.value().size(); ++i) {
            const double keep = p.value()[i];
            NoGradGuard guard;
            p.mutable_value()[i] = keep + h;
            const double up = loss().item();
            p.mutable_value()[i] = keep - h;
            const double down = loss().item();
            p.mutable_value()[i] = keep;
            const double numeric = (up - down) / (2.0 * h);
            diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
            a2 += analytic[i] * analytic[i];
            n2 += numeric * numeric;
        }
    }
    const double scale = std::sqrt(std::max(a2, n2));
    return scale > 1e-12 ? std::sqrt(diff2) / scale : 0.0;
}

}  // namespace moregan::testing
