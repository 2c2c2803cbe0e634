#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mlsr/ops.hpp"
#include "mlsr/registry.hpp"
#include "mlsr/tensor.hpp"

namespace mlsr {

// ---------------------------------------------------------------------------
// Zero-order-hold discretization of the diagonal state equation
//   x'(t) = a x(t) + b u(t)  ->  x_k = exp(dt a) x_{k-1} + ((exp(dt a)-1)/a) b u_k
// ---------------------------------------------------------------------------

template <typename T>
struct ZohCoeffs {
    T a_bar;   // exp(dt * a)
    T b_coef;  // b_bar = b_coef * B; (exp(dt a)-1)/a, Taylor dt below |dt a| < 1e-6
};

template <typename T>
inline ZohCoeffs<T> zoh_coeffs(T a, T dt) {
    const T za = dt * a;
    const T a_bar = std::exp(za);
    if (std::abs(za) < T(1e-6)) return {a_bar, dt};
    return {a_bar, (a_bar - T(1)) / a};
}

// Continuous selective-SSM parameters for one token sequence. A is diagonal,
// held as effective (negative) values; B, C, dt are per-token.
template <typename T>
struct SsmParams {
    Tensor<T> u;      // (L, d_inner)
    Tensor<T> delta;  // (L, d_inner), positive
    Tensor<T> b;      // (L, d_state)
    Tensor<T> c;      // (L, d_state)
    Tensor<T> a;      // (d_inner, d_state), strictly negative
    Tensor<T> d;      // (d_inner)
};

template <typename T>
struct DiscreteSsm {
    Tensor<T> a_bar;  // (L, d_inner, d_state), in (0, 1)
    Tensor<T> b_bar;  // (L, d_inner, d_state)
};

// Materializes the discretized per-token coefficients. Inspection/oracle
// path; the differentiable route is selective_scan, which fuses this.
template <typename T>
DiscreteSsm<T> discretize(const SsmParams<T>& p) {
    const std::int64_t l = p.delta.dim(0);
    const std::int64_t c = p.delta.dim(1);
    const std::int64_t n = p.a.dim(1);
    DiscreteSsm<T> out{Tensor<T>(Shape{l, c, n}), Tensor<T>(Shape{l, c, n})};
    const T* pd = p.delta.data().data();
    const T* pa = p.a.data().data();
    const T* pb = p.b.data().data();
    T* oa = out.a_bar.data().data();
    T* ob = out.b_bar.data().data();
    for (std::int64_t t = 0; t < l; ++t) {
        for (std::int64_t cc = 0; cc < c; ++cc) {
            const T dt = pd[t * c + cc];
            if (!(dt > T(0))) {
                throw std::logic_error("discretize: non-positive delta at token " +
                                       std::to_string(t) + ", channel " + std::to_string(cc));
            }
            for (std::int64_t s = 0; s < n; ++s) {
                const auto z = zoh_coeffs(pa[cc * n + s], dt);
                oa[(t * c + cc) * n + s] = z.a_bar;
                ob[(t * c + cc) * n + s] = z.b_coef * pb[t * n + s];
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Selective scan: x_t = A_bar_t . x_{t-1} + B_bar_t . u_t,  y_t = <C_t, x_t> + D . u_t
// Fused over (discretize + recurrence + readout) with a hand-written backward;
// hidden states are stored (C, L, N) for the reverse pass.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> selective_scan(const SsmParams<T>& p) {
    const std::int64_t l = p.u.dim(0);
    const std::int64_t ch = p.u.dim(1);
    const std::int64_t n = p.a.dim(1);
    if (p.delta.shape() != p.u.shape() || p.b.dim(0) != l || p.c.dim(0) != l ||
        p.a.dim(0) != ch || p.d.numel() != ch || p.b.dim(1) != n || p.c.dim(1) != n) {
        throw DimError("selective_scan: inconsistent shapes u" + shape_str(p.u.shape()) + " delta" +
                       shape_str(p.delta.shape()) + " b" + shape_str(p.b.shape()) + " c" +
                       shape_str(p.c.shape()) + " a" + shape_str(p.a.shape()));
    }

    std::vector<T> out(static_cast<std::size_t>(l * ch), T(0));
    auto states = std::make_shared<std::vector<T>>(static_cast<std::size_t>(ch * l * n));

    const T* pu = p.u.data().data();
    const T* pdt = p.delta.data().data();
    const T* pb = p.b.data().data();
    const T* pc = p.c.data().data();
    const T* pa = p.a.data().data();
    const T* pd = p.d.data().data();

    parallel_for(ch, [&](std::int64_t lo, std::int64_t hi) {
        std::vector<T> x(static_cast<std::size_t>(n));
        for (std::int64_t cc = lo; cc < hi; ++cc) {
            std::fill(x.begin(), x.end(), T(0));
            const T* arow = pa + cc * n;
            T* xout = states->data() + cc * l * n;
            for (std::int64_t t = 0; t < l; ++t) {
                const T dt = pdt[t * ch + cc];
                const T ut = pu[t * ch + cc];
                const T* brow = pb + t * n;
                const T* crow = pc + t * n;
                double acc = 0;
                for (std::int64_t s = 0; s < n; ++s) {
                    const auto z = zoh_coeffs(arow[s], dt);
                    const T xv = z.a_bar * x[s] + z.b_coef * brow[s] * ut;
                    x[s] = xv;
                    xout[t * n + s] = xv;
                    acc += static_cast<double>(crow[s]) * xv;
                }
                out[t * ch + cc] = static_cast<T>(acc) + pd[cc] * ut;
            }
        }
    });

    const bool rg = detail::tape_wants<T>({&p.u, &p.delta, &p.b, &p.c, &p.a, &p.d});
    Tensor<T> result = detail::make_result(
        Shape{l, ch}, std::move(out),
        p.u.requires_grad() || p.delta.requires_grad() || p.b.requires_grad() ||
            p.c.requires_grad() || p.a.requires_grad() || p.d.requires_grad());
    if (!rg) return result;

    auto iu = p.u.ptr();
    auto idt = p.delta.ptr();
    auto ib = p.b.ptr();
    auto ic = p.c.ptr();
    auto ia = p.a.ptr();
    auto id = p.d.ptr();
    auto io = result.ptr();
    Tape<T>::active()->record("selective_scan", {iu, idt, ib, ic, ia, id}, io, [=]() {
        const std::vector<T>& g = io->grad;
        const T* qu = iu->data.data();
        const T* qdt = idt->data.data();
        const T* qb = ib->data.data();
        const T* qc = ic->data.data();
        const T* qa = ia->data.data();
        const T* qd = id->data.data();
        const T* xs = states->data();

        std::vector<T>* du = iu->requires_grad ? &detail::ensure_grad(iu.get()) : nullptr;
        std::vector<T>* ddt = idt->requires_grad ? &detail::ensure_grad(idt.get()) : nullptr;
        std::vector<T>* db = ib->requires_grad ? &detail::ensure_grad(ib.get()) : nullptr;
        std::vector<T>* dc = ic->requires_grad ? &detail::ensure_grad(ic.get()) : nullptr;
        std::vector<T>* da = ia->requires_grad ? &detail::ensure_grad(ia.get()) : nullptr;
        std::vector<T>* dd = id->requires_grad ? &detail::ensure_grad(id.get()) : nullptr;

        // gxw[cc, t, s] ends up holding gx * b_coef * u, the dB integrand.
        std::vector<T> gxw(static_cast<std::size_t>(ch * l * n));

        // Pass 1: per-channel reverse recurrence; channels are independent.
        parallel_for(ch, [&](std::int64_t lo, std::int64_t hi) {
            std::vector<T> carry(static_cast<std::size_t>(n));
            for (std::int64_t cc = lo; cc < hi; ++cc) {
                std::fill(carry.begin(), carry.end(), T(0));
                const T* arow = qa + cc * n;
                const T* xrow = xs + cc * l * n;
                T* wrow = gxw.data() + cc * l * n;
                double dd_acc = 0;
                for (std::int64_t t = l - 1; t >= 0; --t) {
                    const T gy = g[t * ch + cc];
                    const T dt = qdt[t * ch + cc];
                    const T ut = qu[t * ch + cc];
                    const T* brow = qb + t * n;
                    const T* crow = qc + t * n;
                    double du_acc = 0, ddt_acc = 0;
                    for (std::int64_t s = 0; s < n; ++s) {
                        const T gx = gy * crow[s] + carry[s];
                        const auto z = zoh_coeffs(arow[s], dt);
                        const T xprev = t > 0 ? xrow[(t - 1) * n + s] : T(0);
                        const T d_abar = gx * xprev;
                        const T d_bcoef = gx * brow[s] * ut;
                        du_acc += static_cast<double>(gx) * z.b_coef * brow[s];
                        const T za = dt * arow[s];
                        T d_za, d_a_direct, d_dt_direct;
                        if (std::abs(za) < T(1e-6)) {
                            d_za = d_abar * z.a_bar;
                            d_dt_direct = d_bcoef;
                            d_a_direct = d_bcoef * (dt * dt / T(2));
                        } else {
                            d_za = d_abar * z.a_bar + d_bcoef * z.a_bar / arow[s];
                            d_dt_direct = T(0);
                            d_a_direct = d_bcoef * (-z.b_coef / arow[s]);
                        }
                        ddt_acc += static_cast<double>(d_za) * arow[s] + d_dt_direct;
                        if (da) (*da)[cc * n + s] += d_za * dt + d_a_direct;
                        carry[s] = z.a_bar * gx;
                        wrow[t * n + s] = gx * z.b_coef * ut;
                    }
                    if (du) (*du)[t * ch + cc] += static_cast<T>(du_acc) + gy * qd[cc];
                    if (ddt) (*ddt)[t * ch + cc] += static_cast<T>(ddt_acc);
                    dd_acc += static_cast<double>(gy) * ut;
                }
                if (dd) (*dd)[cc] += static_cast<T>(dd_acc);
            }
        });

        // Pass 2: token-parallel reductions over channels.
        if (db || dc) {
            parallel_for(l, [&](std::int64_t lo, std::int64_t hi) {
                for (std::int64_t t = lo; t < hi; ++t) {
                    for (std::int64_t s = 0; s < n; ++s) {
                        double b_acc = 0, c_acc = 0;
                        for (std::int64_t cc = 0; cc < ch; ++cc) {
                            b_acc += gxw[(cc * l + t) * n + s];
                            c_acc += static_cast<double>(g[t * ch + cc]) * xs[(cc * l + t) * n + s];
                        }
                        if (db) (*db)[t * n + s] += static_cast<T>(b_acc);
                        if (dc) (*dc)[t * n + s] += static_cast<T>(c_acc);
                    }
                }
            });
        }
    });
    return result;
}

// ---------------------------------------------------------------------------
// Low-rank linear layer: W ~= U V^T, applied as two thin matmuls
// ---------------------------------------------------------------------------

template <typename T>
struct LowRankLinear {
    Tensor<T> u;     // (m, r)
    Tensor<T> v;     // (n, r)
    Tensor<T> bias;  // (n), optional

    std::int64_t in_features() const { return u.dim(0); }
    std::int64_t out_features() const { return v.dim(0); }
    std::int64_t rank() const { return u.dim(1); }

    std::int64_t param_count() const {
        return rank() * (in_features() + out_features()) + (bias.defined() ? out_features() : 0);
    }

    // y = (x U) V^T (+ bias); the dense W is never materialized.
    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.shape().back() != in_features()) {
            throw DimError("low_rank_linear: input " + shape_str(x.shape()) + " vs weight (" +
                           std::to_string(in_features()) + ", " + std::to_string(out_features()) +
                           ")");
        }
        Tensor<T> y = matmul(matmul(x, u), transpose2d(v));
        if (bias.defined()) y = add(y, bias);
        return y;
    }
};

template <typename T>
LowRankLinear<T> make_low_rank(std::int64_t m, std::int64_t n, std::int64_t r, bool with_bias,
                               ParamRegistry<T>& reg, const std::string& prefix,
                               std::uint64_t seed) {
    if (r < 1 || r > std::min(m, n)) {
        throw ConfigError("low_rank_linear " + prefix + ": rank " + std::to_string(r) +
                          " outside [1, min(" + std::to_string(m) + ", " + std::to_string(n) + ")]");
    }
    LowRankLinear<T> layer;
    layer.u = reg.add(prefix + ".u",
                      init::uniform_low_rank_factor<T>(Shape{m, r}, m, r, seed, prefix + ".u"));
    layer.v = reg.add(prefix + ".v",
                      init::uniform_low_rank_factor<T>(Shape{n, r}, m, r, seed, prefix + ".v"));
    if (with_bias) layer.bias = reg.add(prefix + ".bias", Tensor<T>(Shape{n}));
    return layer;
}

// ---------------------------------------------------------------------------
// Mamba mixer
// ---------------------------------------------------------------------------

struct MixerConfig {
    std::int64_t d_model = 0;
    std::int64_t expand = 2;
    std::int64_t d_state = 16;
    std::int64_t conv_kernel = 3;
    std::int64_t rank = 0;
    bool low_rank_projections = true;  // dense fallback for ablations

    std::int64_t d_inner() const { return expand * d_model; }
    std::int64_t dt_rank() const { return (d_model + 15) / 16; }

    void validate() const {
        if (d_model < 1 || expand < 1 || d_state < 1 || conv_kernel < 1) {
            throw ConfigError("mixer config: non-positive dimension");
        }
        if (rank < 1 || rank > d_model) {
            throw ConfigError("mixer config: rank " + std::to_string(rank) + " outside [1, d_model=" +
                              std::to_string(d_model) + "]");
        }
    }
};

// Gated selective-SSM token mixer. Projections whose logical shape is
// d_model x d_model-equivalent (input stream slice and output) are low-rank;
// the gate and the dt/B/C projections stay dense.
template <typename T>
class MambaMixer {
public:
    MambaMixer(const MixerConfig& cfg, ParamRegistry<T>& reg, LayerBook& book,
               const std::string& prefix, std::uint64_t seed)
        : cfg_(cfg) {
        cfg.validate();
        const std::int64_t d = cfg.d_model;
        const std::int64_t di = cfg.d_inner();
        const std::int64_t n = cfg.d_state;
        const std::int64_t k = cfg.conv_kernel;
        const std::int64_t dtr = cfg.dt_rank();

        gate_w_ = reg.add(prefix + ".gate.weight",
                          init::uniform_fan_in<T>(Shape{d, di}, d, seed, prefix + ".gate.weight"));
        gate_b_ = reg.add(prefix + ".gate.bias", Tensor<T>(Shape{di}));
        book.add({prefix + ".gate", LayerDesc::Kind::Dense, d, di, 0, 0, 0, 0, true});

        if (cfg.low_rank_projections) {
            in_stream_lr_ = make_low_rank<T>(d, di, cfg.rank, false, reg, prefix + ".in", seed);
            book.add({prefix + ".in", LayerDesc::Kind::LowRank, d, di, cfg.rank, 0, 0, 0, false});
        } else {
            in_stream_w_ = reg.add(prefix + ".in.weight",
                                   init::uniform_fan_in<T>(Shape{d, di}, d, seed, prefix + ".in.weight"));
            book.add({prefix + ".in", LayerDesc::Kind::Dense, d, di, 0, 0, 0, 0, false});
        }

        conv_w_ = reg.add(prefix + ".conv.weight",
                          init::uniform_fan_in<T>(Shape{di, k}, k, seed, prefix + ".conv.weight"));
        conv_b_ = reg.add(prefix + ".conv.bias", Tensor<T>(Shape{di}));
        book.add({prefix + ".conv", LayerDesc::Kind::DwConv, 1, di, 0, k, 0, 0, true});

        b_proj_ = reg.add(prefix + ".b_proj.weight",
                          init::uniform_fan_in<T>(Shape{di, n}, di, seed, prefix + ".b_proj.weight"));
        book.add({prefix + ".b_proj", LayerDesc::Kind::Dense, di, n, 0, 0, 0, 0, false});
        c_proj_ = reg.add(prefix + ".c_proj.weight",
                          init::uniform_fan_in<T>(Shape{di, n}, di, seed, prefix + ".c_proj.weight"));
        book.add({prefix + ".c_proj", LayerDesc::Kind::Dense, di, n, 0, 0, 0, 0, false});

        dt_low_ = reg.add(prefix + ".dt_low.weight",
                          init::uniform_fan_in<T>(Shape{di, dtr}, di, seed, prefix + ".dt_low.weight"));
        book.add({prefix + ".dt_low", LayerDesc::Kind::Dense, di, dtr, 0, 0, 0, 0, false});
        dt_proj_w_ = reg.add(prefix + ".dt_proj.weight", init::uniform_fan_in<T>(Shape{dtr, di}, dtr,
                                                                                 seed, prefix + ".dt_proj.weight"));
        dt_proj_b_ = reg.add(prefix + ".dt_proj.bias", make_dt_bias(di, seed, prefix + ".dt_proj.bias"));
        book.add({prefix + ".dt_proj", LayerDesc::Kind::Dense, dtr, di, 0, 0, 0, 0, true});

        Tensor<T> a_log(Shape{di, n});
        for (std::int64_t cc = 0; cc < di; ++cc) {
            for (std::int64_t s = 0; s < n; ++s) {
                a_log.at(cc, s) = static_cast<T>(std::log(static_cast<double>(s + 1)));
            }
        }
        a_log_ = reg.add(prefix + ".ssm.a_log", std::move(a_log));
        d_skip_ = reg.add(prefix + ".ssm.d_skip", Tensor<T>(Shape{di}, T(1)));
        book.add({prefix + ".ssm", LayerDesc::Kind::SsmCore, 0, di, 0, 0, 0, n, false});

        if (cfg.low_rank_projections) {
            out_lr_ = make_low_rank<T>(di, d, cfg.rank, true, reg, prefix + ".out", seed);
            book.add({prefix + ".out", LayerDesc::Kind::LowRank, di, d, cfg.rank, 0, 0, 0, true});
        } else {
            out_w_ = reg.add(prefix + ".out.weight",
                             init::uniform_fan_in<T>(Shape{di, d}, di, seed, prefix + ".out.weight"));
            out_b_ = reg.add(prefix + ".out.bias", Tensor<T>(Shape{d}));
            book.add({prefix + ".out", LayerDesc::Kind::Dense, di, d, 0, 0, 0, 0, true});
        }
    }

    // (L, d_model) -> (L, d_model)
    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.ndim() != 2 || x.dim(1) != cfg_.d_model) {
            throw DimError("mixer: expected (L, " + std::to_string(cfg_.d_model) + "), got " +
                           shape_str(x.shape()));
        }
        Tensor<T> gate = linear(x, gate_w_, gate_b_);
        Tensor<T> stream = cfg_.low_rank_projections ? in_stream_lr_.forward(x)
                                                     : matmul(x, in_stream_w_);
        stream = dwconv1d_causal(stream, conv_w_, conv_b_);
        stream = silu(stream);

        SsmParams<T> p;
        p.u = stream;
        p.b = matmul(stream, b_proj_);
        p.c = matmul(stream, c_proj_);
        p.delta = softplus(linear(matmul(stream, dt_low_), dt_proj_w_, dt_proj_b_));
        p.a = neg(exp_t(a_log_));
        p.d = d_skip_;

        Tensor<T> y = selective_scan(p);
        y = mul(y, silu(gate));
        return cfg_.low_rank_projections ? out_lr_.forward(y)
                                         : add(matmul(y, out_w_), out_b_);
    }

    const MixerConfig& config() const { return cfg_; }

private:
    static Tensor<T> make_dt_bias(std::int64_t di, std::uint64_t seed, const std::string& name) {
        // softplus(bias) lands in [1e-3, 0.1], log-uniform per channel.
        Rng rng = init::rng_for(seed, name);
        Tensor<T> bias(Shape{di});
        for (std::int64_t i = 0; i < di; ++i) {
            const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
            bias.data()[i] = static_cast<T>(dt + std::log(-std::expm1(-dt)));
        }
        return bias;
    }

    MixerConfig cfg_;
    Tensor<T> gate_w_, gate_b_;
    LowRankLinear<T> in_stream_lr_;
    Tensor<T> in_stream_w_;
    Tensor<T> conv_w_, conv_b_;
    Tensor<T> b_proj_, c_proj_;
    Tensor<T> dt_low_, dt_proj_w_, dt_proj_b_;
    Tensor<T> a_log_, d_skip_;
    LowRankLinear<T> out_lr_;
    Tensor<T> out_w_, out_b_;
};

}  // namespace mlsr
