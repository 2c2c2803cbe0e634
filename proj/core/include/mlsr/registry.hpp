#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mlsr/common.hpp"
#include "mlsr/rng.hpp"
#include "mlsr/tensor.hpp"

namespace mlsr {

// Every trainable tensor is reachable under a unique dotted name; the order
// of registration defines the checkpoint layout.
template <typename T>
class ParamRegistry {
public:
    struct Entry {
        std::string name;
        Tensor<T> tensor;
    };

    Tensor<T>& add(std::string name, Tensor<T> tensor) {
        for (const auto& e : entries_) {
            if (e.name == name) throw ConfigError("duplicate parameter name: " + name);
        }
        tensor.set_requires_grad(true);
        entries_.push_back(Entry{std::move(name), std::move(tensor)});
        return entries_.back().tensor;
    }

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }

    const Tensor<T>* find(const std::string& name) const {
        for (const auto& e : entries_) {
            if (e.name == name) return &e.tensor;
        }
        return nullptr;
    }

    std::int64_t total_params() const {
        std::int64_t n = 0;
        for (const auto& e : entries_) n += e.tensor.numel();
        return n;
    }

    // Sum of element counts for every parameter under `prefix` + '.'.
    std::int64_t count_under(const std::string& prefix) const {
        std::int64_t n = 0;
        for (const auto& e : entries_) {
            if (e.name.size() > prefix.size() && e.name.compare(0, prefix.size(), prefix) == 0 &&
                e.name[prefix.size()] == '.') {
                n += e.tensor.numel();
            }
        }
        return n;
    }

    std::uint64_t content_hash() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& e : entries_) {
            h = fnv1a64(e.name.data(), e.name.size(), h);
            h = fnv1a64(e.tensor.data().data(), e.tensor.data().size_bytes(), h);
        }
        return h;
    }

private:
    std::vector<Entry> entries_;
};

// Analytic description of one layer, independent of the stored tensors.
// param_count() and flops() are closed-form; tests compare them against
// enumeration over the registry.
struct LayerDesc {
    enum class Kind { Dense, LowRank, Conv2d, DwConv, Norm, SsmCore };

    std::string name;
    Kind kind = Kind::Dense;
    std::int64_t d_in = 0;    // dense/low-rank input features; conv C_in
    std::int64_t d_out = 0;   // dense/low-rank output features; conv C_out
    std::int64_t rank = 0;    // low-rank only
    std::int64_t kh = 0, kw = 0;  // conv kernel; DwConv uses kh as K
    std::int64_t d_state = 0;     // SsmCore
    bool bias = false;
    std::int64_t pos_scale = 1;   // position-count multiplier vs the base grid

    std::int64_t param_count() const {
        switch (kind) {
            case Kind::Dense:
                return d_in * d_out + (bias ? d_out : 0);
            case Kind::LowRank:
                return rank * (d_in + d_out) + (bias ? d_out : 0);
            case Kind::Conv2d:
                return (d_in * kh * kw) * d_out + (bias ? d_out : 0);
            case Kind::DwConv:
                return d_out * kh + (bias ? d_out : 0);
            case Kind::Norm:
                return 2 * d_out;
            case Kind::SsmCore:
                return d_out * d_state + d_out;  // A_log + D
        }
        return 0;
    }

    // Multiply-accumulate count for a forward pass over l positions (tokens
    // for sequence layers, output pixels for convs). Norm layers are not part
    // of the MAC accounting and report 0.
    std::int64_t flops(std::int64_t l) const {
        switch (kind) {
            case Kind::Dense:
                return 2 * d_in * d_out * l;
            case Kind::LowRank:
                return 2 * rank * (d_in + d_out) * l;
            case Kind::Conv2d:
                return 2 * d_in * d_out * kh * kw * l;
            case Kind::DwConv:
                return 2 * d_out * kh * l;
            case Kind::Norm:
                return 0;
            case Kind::SsmCore:
                return 6 * l * d_out * d_state;
        }
        return 0;
    }

    static const char* kind_name(Kind k) {
        switch (k) {
            case Kind::Dense: return "dense";
            case Kind::LowRank: return "low_rank";
            case Kind::Conv2d: return "conv2d";
            case Kind::DwConv: return "dwconv";
            case Kind::Norm: return "norm";
            case Kind::SsmCore: return "ssm_core";
        }
        return "?";
    }
};

// Ordered layer descriptors collected while a model is built.
class LayerBook {
public:
    void add(LayerDesc d) { layers_.push_back(std::move(d)); }
    const std::vector<LayerDesc>& layers() const { return layers_; }

private:
    std::vector<LayerDesc> layers_;
};

namespace init {

// Per-parameter stream: rank or depth changes in one layer must not perturb
// the initialization of any other layer under the same seed.
inline Rng rng_for(std::uint64_t seed, const std::string& param_name) {
    return Rng(mix_seed(seed, fnv1a64(param_name)));
}

template <typename T>
Tensor<T> uniform_fan_in(Shape shape, std::int64_t fan_in, std::uint64_t seed,
                         const std::string& name) {
    Rng rng = rng_for(seed, name);
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    return Tensor<T>::uniform(std::move(shape), rng, static_cast<T>(-bound), static_cast<T>(bound));
}

// Factor scale chosen so U·V^T has variance ~= 1/fan_in.
template <typename T>
Tensor<T> uniform_low_rank_factor(Shape shape, std::int64_t fan_in, std::int64_t rank,
                                  std::uint64_t seed, const std::string& name) {
    Rng rng = rng_for(seed, name);
    const double bound = std::sqrt(3.0) / std::pow(static_cast<double>(fan_in * rank), 0.25);
    return Tensor<T>::uniform(std::move(shape), rng, static_cast<T>(-bound), static_cast<T>(bound));
}

}  // namespace init

}  // namespace mlsr
