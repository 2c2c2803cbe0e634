#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mlsr/ops.hpp"
#include "mlsr/registry.hpp"
#include "mlsr/ssm.hpp"

namespace mlsr {

// Dense layer accounting (P = d_in * d_out + d_out).
struct LinearShape {
    std::int64_t d_in = 0;
    std::int64_t d_out = 0;
    std::int64_t param_count() const { return d_in * d_out + d_out; }
};

struct EmbedRatio {
    std::int64_t num = 0;
    std::int64_t den = 0;
    double value = 0;
};

// Parameter-count factor when shrinking the embedding dim: d_small^2 / d_base^2.
inline EmbedRatio embed_reduction_ratio(std::int64_t d_small, std::int64_t d_base) {
    if (d_small <= 0 || d_base <= 0 || d_small > d_base) {
        throw UsageError("embed_reduction_ratio: need 0 < d_small <= d_base, got " +
                         std::to_string(d_small) + ", " + std::to_string(d_base));
    }
    EmbedRatio r;
    r.num = d_small * d_small;
    r.den = d_base * d_base;
    r.value = static_cast<double>(r.num) / static_cast<double>(r.den);
    return r;
}

struct ModelConfig {
    std::int64_t d_model = 32;
    std::int64_t n_rmmb = 4;
    std::int64_t blocks_per_rmmb = 2;
    std::int64_t rank = 16;
    std::int64_t scale = 4;
    std::int64_t d_state = 16;
    std::int64_t expand = 2;
    std::int64_t conv_kernel = 3;

    static ModelConfig teacher() { return ModelConfig{60, 8, 2, 30, 4, 16, 2, 3}; }
    static ModelConfig student() { return ModelConfig{32, 4, 2, 16, 4, 16, 2, 3}; }

    std::int64_t mixer_layers() const { return n_rmmb * blocks_per_rmmb; }

    MixerConfig mixer() const {
        MixerConfig m;
        m.d_model = d_model;
        m.expand = expand;
        m.d_state = d_state;
        m.conv_kernel = conv_kernel;
        m.rank = rank;
        return m;
    }

    void validate() const {
        if (d_model < 1 || n_rmmb < 1 || blocks_per_rmmb < 1) {
            throw ConfigError("model config: non-positive architecture dims");
        }
        if (scale < 1 || scale > 4) {
            throw ConfigError("model config: scale " + std::to_string(scale) + " unsupported");
        }
        mixer().validate();
    }
};

namespace arch {

template <typename T>
struct Conv2dLayer {
    Tensor<T> w, b;
    std::int64_t padding = 1;

    Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, w, b, padding); }
};

template <typename T>
Conv2dLayer<T> make_conv(std::int64_t cin, std::int64_t cout, std::int64_t k, ParamRegistry<T>& reg,
                         LayerBook& book, const std::string& prefix, std::uint64_t seed,
                         std::int64_t pos_scale = 1) {
    Conv2dLayer<T> layer;
    layer.w = reg.add(prefix + ".weight", init::uniform_fan_in<T>(Shape{cout, cin, k, k},
                                                                  cin * k * k, seed, prefix + ".weight"));
    layer.b = reg.add(prefix + ".bias", Tensor<T>(Shape{cout}));
    layer.padding = (k - 1) / 2;
    book.add({prefix, LayerDesc::Kind::Conv2d, cin, cout, 0, k, k, 0, true, pos_scale});
    return layer;
}

template <typename T>
struct NormLayer {
    Tensor<T> gamma, beta;

    Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
};

template <typename T>
NormLayer<T> make_norm(std::int64_t d, ParamRegistry<T>& reg, LayerBook& book,
                       const std::string& prefix) {
    NormLayer<T> layer;
    layer.gamma = reg.add(prefix + ".gamma", Tensor<T>(Shape{d}, T(1)));
    layer.beta = reg.add(prefix + ".beta", Tensor<T>(Shape{d}));
    book.add({prefix, LayerDesc::Kind::Norm, d, d, 0, 0, 0, 0, false});
    return layer;
}

// Pre-norm Mamba block over a token sequence: x + mixer(norm(x)).
template <typename T>
struct VisionBlock {
    NormLayer<T> norm;
    std::unique_ptr<MambaMixer<T>> mixer;

    Tensor<T> forward(const Tensor<T>& x) const { return add(x, mixer->forward(norm.forward(x))); }
};

// Residual Mixed Mamba Block: a run of VisionBlocks, a 3x3 conv in image
// space, and a skip from the group input.
template <typename T>
struct Rmmb {
    std::vector<VisionBlock<T>> blocks;
    Conv2dLayer<T> conv;

    Tensor<T> forward(const Tensor<T>& tokens, std::int64_t h, std::int64_t w) const {
        Tensor<T> t = tokens;
        for (const auto& blk : blocks) t = blk.forward(t);
        Tensor<T> f = conv.forward(tokens_to_chw(t, h, w));
        return add(tokens, chw_to_tokens(f));
    }
};

}  // namespace arch

// Full SR network: shallow conv -> RMMB stack -> fusion conv -> global
// residual -> pixel-shuffle reconstruction. Forward maps (3,h,w) to
// (3, scale*h, scale*w).
template <typename T>
class SrModel {
public:
    SrModel(const ModelConfig& cfg, std::uint64_t seed, bool finishing_conv = true)
        : cfg_(cfg), finishing_conv_(finishing_conv) {
        cfg.validate();
        const std::int64_t d = cfg.d_model;
        shallow_ = arch::make_conv<T>(3, d, 3, reg_, book_, "shallow", seed);
        rmmbs_.reserve(static_cast<std::size_t>(cfg.n_rmmb));
        for (std::int64_t i = 0; i < cfg.n_rmmb; ++i) {
            arch::Rmmb<T> rmmb;
            const std::string rp = "rmmb" + std::to_string(i);
            for (std::int64_t j = 0; j < cfg.blocks_per_rmmb; ++j) {
                const std::string bp = rp + ".block" + std::to_string(j);
                arch::VisionBlock<T> blk;
                blk.norm = arch::make_norm<T>(d, reg_, book_, bp + ".norm");
                blk.mixer = std::make_unique<MambaMixer<T>>(cfg.mixer(), reg_, book_,
                                                            bp + ".mixer", seed);
                rmmb.blocks.push_back(std::move(blk));
            }
            rmmb.conv = arch::make_conv<T>(d, d, 3, reg_, book_, rp + ".conv", seed);
            rmmbs_.push_back(std::move(rmmb));
        }
        fusion_ = arch::make_conv<T>(d, d, 3, reg_, book_, "fusion", seed);
        head_ = arch::make_conv<T>(d, 3 * cfg.scale * cfg.scale, 3, reg_, book_, "head", seed);
        if (finishing_conv_) {
            finish_ = arch::make_conv<T>(3, 3, 3, reg_, book_, "finish", seed,
                                         cfg.scale * cfg.scale);
        }
    }

    Tensor<T> forward(const Tensor<T>& lr) const {
        if (lr.ndim() != 3 || lr.dim(0) != 3) {
            throw UsageError("forward: expected (3, h, w) input, got " + shape_str(lr.shape()));
        }
        const std::int64_t h = lr.dim(1), w = lr.dim(2);
        Tensor<T> shallow = shallow_.forward(lr);
        Tensor<T> tokens = chw_to_tokens(shallow);
        for (const auto& rmmb : rmmbs_) tokens = rmmb.forward(tokens, h, w);
        Tensor<T> deep = fusion_.forward(tokens_to_chw(tokens, h, w));
        Tensor<T> fused = add(shallow, deep);
        Tensor<T> out = pixel_shuffle(head_.forward(fused), cfg_.scale);
        if (finishing_conv_) out = finish_.forward(out);
        return out;
    }

    const ModelConfig& config() const { return cfg_; }
    std::int64_t mixer_layer_count() const { return cfg_.mixer_layers(); }
    ParamRegistry<T>& params() { return reg_; }
    const ParamRegistry<T>& params() const { return reg_; }
    const LayerBook& layers() const { return book_; }
    bool has_finishing_conv() const { return finishing_conv_; }

private:
    ModelConfig cfg_;
    bool finishing_conv_;
    ParamRegistry<T> reg_;
    LayerBook book_;
    arch::Conv2dLayer<T> shallow_, fusion_, head_, finish_;
    std::vector<arch::Rmmb<T>> rmmbs_;
};

// ---------------------------------------------------------------------------
// Accounting
// ---------------------------------------------------------------------------

struct ParamRow {
    std::string name;
    std::string kind;
    std::int64_t analytic = 0;
    std::int64_t enumerated = 0;
};

struct ParamReport {
    std::vector<ParamRow> rows;
    std::int64_t total_analytic = 0;
    std::int64_t total_enumerated = 0;
};

template <typename T>
ParamReport count_params(const SrModel<T>& model) {
    ParamReport rep;
    for (const auto& d : model.layers().layers()) {
        ParamRow row;
        row.name = d.name;
        row.kind = LayerDesc::kind_name(d.kind);
        row.analytic = d.param_count();
        row.enumerated = model.params().count_under(d.name);
        rep.total_analytic += row.analytic;
        rep.total_enumerated += row.enumerated;
        rep.rows.push_back(std::move(row));
    }
    // Registry is the ground truth; the analytic total must agree with it.
    rep.total_enumerated = model.params().total_params();
    return rep;
}

struct FlopRow {
    std::string name;
    std::string kind;
    std::int64_t flops = 0;
};

struct FlopReport {
    std::vector<FlopRow> rows;
    std::int64_t total = 0;
    std::int64_t input_h = 0, input_w = 0;
};

// Multiply-accumulate counting for one forward pass on a (3, h, w) input.
// Convs/projections preserve the h*w grid; the finishing conv runs at
// scale^2 * h * w via its pos_scale.
template <typename T>
FlopReport estimate_flops(const SrModel<T>& model, std::int64_t h, std::int64_t w) {
    FlopReport rep;
    rep.input_h = h;
    rep.input_w = w;
    const std::int64_t l = h * w;
    for (const auto& d : model.layers().layers()) {
        FlopRow row;
        row.name = d.name;
        row.kind = LayerDesc::kind_name(d.kind);
        row.flops = d.flops(l * d.pos_scale);
        rep.total += row.flops;
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

// Model config JSON (exactly the ModelConfig field names). Implemented in
// config_io.cpp.
ModelConfig model_config_from_json(const std::string& json_text);
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig load_model_config(const std::string& path);
void save_model_config(const ModelConfig& cfg, const std::string& path);

}  // namespace mlsr
