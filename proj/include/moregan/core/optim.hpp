#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "moregan/core/params.hpp"

namespace moregan {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// Adaptive-moment optimizer. Only parameters that received a gradient in the
/// last backward pass move; step counts are tracked per parameter.
template <typename T>
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    const AdamConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }

    void step(ParamStore<T>& store, const std::vector<std::string>& names) {
        for (const auto& name : names) {
            Var<T> p = store.get(name);
            if (!p.has_grad()) continue;
            const Tensor<T> g = p.grad();
            auto& st = state_[name];
            if (st.m.empty()) {
                st.m.assign(g.size(), 0.0);
                st.v.assign(g.size(), 0.0);
            }
            ++st.t;
            const double c1 = 1.0 - std::pow(cfg_.beta1, st.t);
            const double c2 = 1.0 - std::pow(cfg_.beta2, st.t);
            auto& w = p.mutable_value();
            for (std::size_t i = 0; i < g.size(); ++i) {
                double gi = static_cast<double>(g[i]);
                if (cfg_.weight_decay != 0.0) gi += cfg_.weight_decay * static_cast<double>(w[i]);
                st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * gi;
                st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * gi * gi;
                const double mhat = st.m[i] / c1;
                const double vhat = st.v[i] / c2;
                w[i] = static_cast<T>(static_cast<double>(w[i]) - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

private:
    struct State {
        std::vector<double> m;
        std::vector<double> v;
        long t = 0;
    };
    AdamConfig cfg_;
    std::map<std::string, State> state_;
};

}  // namespace moregan
