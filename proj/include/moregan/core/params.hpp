#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "moregan/core/autograd.hpp"

namespace moregan {

/// Seeded random source shared by initializers, synthesis and data sampling.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal(double mean, double stddev) { return std::normal_distribution<double>(mean, stddev)(engine_); }
    /// Inclusive range.
    int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
    std::uint64_t next() { return engine_(); }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

/// Derives an independent stream seed from a base seed and a tag.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (tag + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(const void* bytes, std::size_t len, std::uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline bool has_prefix(const std::string& name, const std::string& prefix) {
    return name.compare(0, prefix.size(), prefix) == 0;
}

/// Named trainable parameters and non-trainable buffers. Names are dotted
/// paths whose first component is the checkpoint namespace.
template <typename T>
class ParamStore {
public:
    Var<T> create(const std::string& name, Tensor<T> init) {
        if (params_.count(name) || buffers_.count(name)) throw InvalidArgument("duplicate parameter name " + name);
        Var<T> v(std::move(init), true);
        params_.emplace(name, v);
        return v;
    }

    /// Buffers are addressed by reference; std::map keeps them stable.
    Tensor<T>& create_buffer(const std::string& name, Tensor<T> init) {
        if (params_.count(name) || buffers_.count(name)) throw InvalidArgument("duplicate buffer name " + name);
        return buffers_.emplace(name, std::move(init)).first->second;
    }

    bool contains(const std::string& name) const { return params_.count(name) > 0; }
    Var<T> get(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw InvalidArgument("unknown parameter " + name);
        return it->second;
    }
    Tensor<T>& buffer(const std::string& name) {
        auto it = buffers_.find(name);
        if (it == buffers_.end()) throw InvalidArgument("unknown buffer " + name);
        return it->second;
    }

    const std::map<std::string, Var<T>>& params() const { return params_; }
    std::map<std::string, Tensor<T>>& buffers() { return buffers_; }
    const std::map<std::string, Tensor<T>>& buffers() const { return buffers_; }

    std::vector<std::string> names(const std::string& prefix = "") const {
        std::vector<std::string> out;
        for (const auto& [k, v] : params_) {
            if (has_prefix(k, prefix)) out.push_back(k);
        }
        return out;
    }

    std::size_t count(const std::string& prefix = "") const {
        std::size_t total = 0;
        for (const auto& [k, v] : params_) {
            if (has_prefix(k, prefix)) total += v.value().size();
        }
        return total;
    }

    void zero_grad() {
        for (auto& [k, v] : params_) {
            Var<T> handle = v;
            handle.zero_grad();
        }
    }

    void set_trainable(const std::string& prefix, bool on) {
        for (auto& [k, v] : params_) {
            if (has_prefix(k, prefix)) {
                Var<T> handle = v;
                handle.set_requires_grad(on);
            }
        }
    }

    /// Content hash of every parameter and buffer under `prefix`.
    std::uint64_t hash(const std::string& prefix = "") const {
        std::uint64_t h = 1469598103934665603ull;
        for (const auto& [k, v] : params_) {
            if (!has_prefix(k, prefix)) continue;
            h = fnv1a(k.data(), k.size(), h);
            h = fnv1a(v.value().data(), v.value().size() * sizeof(T), h);
        }
        for (const auto& [k, v] : buffers_) {
            if (!has_prefix(k, prefix)) continue;
            h = fnv1a(k.data(), k.size(), h);
            h = fnv1a(v.data(), v.size() * sizeof(T), h);
        }
        return h;
    }

private:
    std::map<std::string, Var<T>> params_;
    std::map<std::string, Tensor<T>> buffers_;
};

/// Weight initialization scheme for convolution kernels.
struct InitSpec {
    enum class Kind { Normal, Kaiming };
    Kind kind = Kind::Normal;
    double stddev = 0.02;
};

template <typename T>
Tensor<T> init_kernel(Shape shape, const InitSpec& spec, Rng& rng) {
    double sd = spec.stddev;
    if (spec.kind == InitSpec::Kind::Kaiming) {
        const double fan_in = static_cast<double>(shape.c) * shape.h * shape.w;
        sd = std::sqrt(2.0 / fan_in);
    }
    Tensor<T> t(shape);
    for (auto& v : t.values()) v = static_cast<T>(rng.normal(0.0, sd));
    return t;
}

}  // namespace moregan
