#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mlsr/parallel.hpp"
#include "mlsr/tensor.hpp"

namespace mlsr {

namespace detail {

template <typename T>
bool tape_wants(std::initializer_list<const Tensor<T>*> inputs) {
    if (Tape<T>::active() == nullptr) return false;
    for (const auto* t : inputs) {
        if (t != nullptr && t->defined() && t->requires_grad()) return true;
    }
    return false;
}

// Trailing-axis broadcast of two shapes; throws on incompatible dims.
inline Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
    const std::size_t nd = std::max(a.size(), b.size());
    Shape out(nd, 1);
    for (std::size_t i = 0; i < nd; ++i) {
        const std::int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
        const std::int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (da != db && da != 1 && db != 1) {
            throw DimError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                           " are not broadcastable");
        }
        out[nd - 1 - i] = std::max(da, db);
    }
    return out;
}

// Row-major strides padded to `nd` dims, 0 where the dim broadcasts.
inline std::vector<std::int64_t> broadcast_strides(const Shape& shape, std::size_t nd, const Shape& out) {
    std::vector<std::int64_t> strides(nd, 0);
    std::int64_t s = 1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        const std::size_t k = shape.size() - 1 - i;
        const std::size_t ok = nd - 1 - i;
        strides[ok] = (shape[k] == 1 && out[ok] != 1) ? 0 : s;
        s *= shape[k];
    }
    return strides;
}

enum class BinKind { Same, ScalarB, ScalarA, SuffixB, SuffixA, General };

inline bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size() || small.empty()) return false;
    for (std::size_t i = 0; i < small.size(); ++i) {
        if (small[small.size() - 1 - i] != big[big.size() - 1 - i]) return false;
    }
    return true;
}

inline BinKind classify(const Shape& a, const Shape& b) {
    if (a == b) return BinKind::Same;
    if (numel_of(b) == 1) return BinKind::ScalarB;
    if (numel_of(a) == 1) return BinKind::ScalarA;
    if (is_suffix(b, a)) return BinKind::SuffixB;
    if (is_suffix(a, b)) return BinKind::SuffixA;
    return BinKind::General;
}

// Applies fwd(av, bv) elementwise under broadcasting. On the tape, dfa/dfb
// give the local partials as functions of (av, bv).
template <typename T, typename FwdFn, typename DaFn, typename DbFn>
Tensor<T> broadcast_binary(const char* name, const Tensor<T>& a, const Tensor<T>& b, FwdFn fwd,
                           DaFn dfa, DbFn dfb) {
    const Shape out_shape = broadcast_shapes(a.shape(), b.shape(), name);
    const std::int64_t n = numel_of(out_shape);
    const BinKind kind = classify(a.shape(), b.shape());
    std::vector<T> out(static_cast<std::size_t>(n));
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    const std::int64_t an = a.numel();
    const std::int64_t bn = b.numel();

    std::vector<std::int64_t> sa, sb;
    if (kind == BinKind::General) {
        sa = broadcast_strides(a.shape(), out_shape.size(), out_shape);
        sb = broadcast_strides(b.shape(), out_shape.size(), out_shape);
    }
    // Value captures: this lambda outlives the call inside backward closures.
    auto general_offsets = [sa, sb, out_shape](std::int64_t flat, std::int64_t& oa, std::int64_t& ob) {
        oa = 0;
        ob = 0;
        for (std::size_t d = out_shape.size(); d-- > 0;) {
            const std::int64_t c = flat % out_shape[d];
            flat /= out_shape[d];
            oa += c * sa[d];
            ob += c * sb[d];
        }
    };

    switch (kind) {
        case BinKind::Same:
            parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
                for (std::int64_t i = lo; i < hi; ++i) out[i] = fwd(pa[i], pb[i]);
            });
            break;
        case BinKind::ScalarB:
            parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
                for (std::int64_t i = lo; i < hi; ++i) out[i] = fwd(pa[i], pb[0]);
            });
            break;
        case BinKind::ScalarA:
            parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
                for (std::int64_t i = lo; i < hi; ++i) out[i] = fwd(pa[0], pb[i]);
            });
            break;
        case BinKind::SuffixB:
            parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
                for (std::int64_t i = lo; i < hi; ++i) out[i] = fwd(pa[i], pb[i % bn]);
            });
            break;
        case BinKind::SuffixA:
            parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
                for (std::int64_t i = lo; i < hi; ++i) out[i] = fwd(pa[i % an], pb[i]);
            });
            break;
        case BinKind::General:
            for (std::int64_t i = 0; i < n; ++i) {
                std::int64_t oa, ob;
                general_offsets(i, oa, ob);
                out[i] = fwd(pa[oa], pb[ob]);
            }
            break;
    }

    const bool rg = tape_wants<T>({&a, &b});
    Tensor<T> result = make_result(out_shape, std::move(out), a.requires_grad() || b.requires_grad());
    if (!rg) return result;

    auto ia = a.ptr();
    auto ib = b.ptr();
    auto io = result.ptr();
    Tape<T>::active()->record(name, {ia, ib}, io, [=]() {
        const std::vector<T>& g = io->grad;
        const T* qa = ia->data.data();
        const T* qb = ib->data.data();
        if (ia->requires_grad) {
            std::vector<T>& da = ensure_grad(ia.get());
            switch (kind) {
                case BinKind::Same:
                    for (std::int64_t i = 0; i < n; ++i) da[i] += g[i] * dfa(qa[i], qb[i]);
                    break;
                case BinKind::ScalarB:
                    for (std::int64_t i = 0; i < n; ++i) da[i] += g[i] * dfa(qa[i], qb[0]);
                    break;
                case BinKind::ScalarA:
                    for (std::int64_t i = 0; i < n; ++i) da[0] += g[i] * dfa(qa[0], qb[i]);
                    break;
                case BinKind::SuffixB:
                    for (std::int64_t i = 0; i < n; ++i) da[i] += g[i] * dfa(qa[i], qb[i % bn]);
                    break;
                case BinKind::SuffixA:
                    for (std::int64_t i = 0; i < n; ++i) da[i % an] += g[i] * dfa(qa[i % an], qb[i]);
                    break;
                case BinKind::General:
                    for (std::int64_t i = 0; i < n; ++i) {
                        std::int64_t oa, ob;
                        general_offsets(i, oa, ob);
                        da[oa] += g[i] * dfa(qa[oa], qb[ob]);
                    }
                    break;
            }
        }
        if (ib->requires_grad) {
            std::vector<T>& db = ensure_grad(ib.get());
            switch (kind) {
                case BinKind::Same:
                    for (std::int64_t i = 0; i < n; ++i) db[i] += g[i] * dfb(qa[i], qb[i]);
                    break;
                case BinKind::ScalarB:
                    for (std::int64_t i = 0; i < n; ++i) db[0] += g[i] * dfb(qa[i], qb[0]);
                    break;
                case BinKind::ScalarA:
                    for (std::int64_t i = 0; i < n; ++i) db[i] += g[i] * dfb(qa[0], qb[i]);
                    break;
                case BinKind::SuffixB:
                    for (std::int64_t i = 0; i < n; ++i) db[i % bn] += g[i] * dfb(qa[i], qb[i % bn]);
                    break;
                case BinKind::SuffixA:
                    for (std::int64_t i = 0; i < n; ++i) db[i] += g[i] * dfb(qa[i % an], qb[i]);
                    break;
                case BinKind::General:
                    for (std::int64_t i = 0; i < n; ++i) {
                        std::int64_t oa, ob;
                        general_offsets(i, oa, ob);
                        db[ob] += g[i] * dfb(qa[oa], qb[ob]);
                    }
                    break;
            }
        }
    });
    return result;
}

// Elementwise unary with local derivative as a function of (x, y).
template <typename T, typename FwdFn, typename DFn>
Tensor<T> unary_op(const char* name, const Tensor<T>& x, FwdFn fwd, DFn dfn) {
    const std::int64_t n = x.numel();
    std::vector<T> out(static_cast<std::size_t>(n));
    const T* px = x.data().data();
    parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t i = lo; i < hi; ++i) out[i] = fwd(px[i]);
    });
    const bool rg = tape_wants<T>({&x});
    Tensor<T> result = make_result(x.shape(), std::move(out), x.requires_grad());
    if (!rg) return result;

    auto ix = x.ptr();
    auto io = result.ptr();
    Tape<T>::active()->record(name, {ix}, io, [=]() {
        if (!ix->requires_grad) return;
        const std::vector<T>& g = io->grad;
        std::vector<T>& dx = ensure_grad(ix.get());
        const T* qx = ix->data.data();
        const T* qy = io->data.data();
        for (std::int64_t i = 0; i < n; ++i) dx[i] += g[i] * dfn(qx[i], qy[i]);
    });
    return result;
}

template <typename T>
T sigmoid(T x) {
    if (x >= T(0)) {
        return T(1) / (T(1) + std::exp(-x));
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise suite
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::broadcast_binary<T>(
        "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
        [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::broadcast_binary<T>(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
        [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::broadcast_binary<T>(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
        [](T x, T) { return x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double s) {
    const T sv = static_cast<T>(s);
    return detail::unary_op<T>(
        "scale", a, [sv](T x) { return sv * x; }, [sv](T, T) { return sv; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
    return scale(a, -1.0);
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    return detail::unary_op<T>(
        "silu", x, [](T v) { return v * detail::sigmoid(v); },
        [](T v, T) {
            const T s = detail::sigmoid(v);
            return s * (T(1) + v * (T(1) - s));
        });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
    return detail::unary_op<T>(
        "softplus", x,
        [](T v) {
            if (v > T(0)) return v + std::log1p(std::exp(-v));
            return static_cast<T>(std::log1p(std::exp(v)));
        },
        [](T v, T) { return detail::sigmoid(v); });
}

template <typename T>
Tensor<T> exp_t(const Tensor<T>& x) {
    return detail::unary_op<T>(
        "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> abs_t(const Tensor<T>& x) {
    return detail::unary_op<T>(
        "abs", x, [](T v) { return std::abs(v); },
        [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    const std::int64_t n = x.numel();
    double acc = 0;
    for (const T v : x.data()) acc += static_cast<double>(v);
    const bool rg = detail::tape_wants<T>({&x});
    Tensor<T> result = detail::make_result<T>(Shape{}, {static_cast<T>(acc)}, x.requires_grad());
    if (!rg) return result;
    auto ix = x.ptr();
    auto io = result.ptr();
    Tape<T>::active()->record("sum", {ix}, io, [=]() {
        if (!ix->requires_grad) return;
        const T g = io->grad[0];
        std::vector<T>& dx = detail::ensure_grad(ix.get());
        for (std::int64_t i = 0; i < n; ++i) dx[i] += g;
    });
    return result;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    const std::int64_t n = x.numel();
    double acc = 0;
    for (const T v : x.data()) acc += static_cast<double>(v);
    const bool rg = detail::tape_wants<T>({&x});
    Tensor<T> result =
        detail::make_result<T>(Shape{}, {static_cast<T>(acc / static_cast<double>(n))}, x.requires_grad());
    if (!rg) return result;
    auto ix = x.ptr();
    auto io = result.ptr();
    Tape<T>::active()->record("mean", {ix}, io, [=]() {
        if (!ix->requires_grad) return;
        const T g = io->grad[0] / static_cast<T>(n);
        std::vector<T>& dx = detail::ensure_grad(ix.get());
        for (std::int64_t i = 0; i < n; ++i) dx[i] += g;
    });
    return result;
}

// Mean absolute difference. Subgradient at exact ties is 0.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape() != target.shape()) {
        throw DimError("l1_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                       shape_str(target.shape()));
    }
    const std::int64_t n = pred.numel();
    const T* pp = pred.data().data();
    const T* pt = target.data().data();
    double acc = 0;
    for (std::int64_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(pp[i]) - pt[i]);
    const bool rg = detail::tape_wants<T>({&pred, &target});
    Tensor<T> result = detail::make_result<T>(Shape{}, {static_cast<T>(acc / static_cast<double>(n))},
                                              pred.requires_grad() || target.requires_grad());
    if (!rg) return result;
    auto ip = pred.ptr();
    auto it = target.ptr();
    auto io = result.ptr();
    Tape<T>::active()->record("l1_loss", {ip, it}, io, [=]() {
        const T g = io->grad[0] / static_cast<T>(n);
        const T* qp = ip->data.data();
        const T* qt = it->data.data();
        if (ip->requires_grad) {
            std::vector<T>& dp = detail::ensure_grad(ip.get());
            for (std::int64_t i = 0; i < n; ++i) {
                const T d = qp[i] - qt[i];
                dp[i] += d > T(0) ? g : (d < T(0) ? -g : T(0));
            }
        }
        if (it->requires_grad) {
            std::vector<T>& dt = detail::ensure_grad(it.get());
            for (std::int64_t i = 0; i < n; ++i) {
                const T d = qp[i] - qt[i];
                dt[i] -= d > T(0) ? g : (d < T(0) ? -g : T(0));
            }
        }
    });
    return result;
}

// ---------------------------------------------------------------------------
// Layer normalization over the trailing (feature) axis, eps = 1e-5
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = 1e-5) {
    if (x.ndim() < 1) throw DimError("layer_norm: input must have at least one axis");
    const std::int64_t feat = x.shape().back();
    const std::int64_t rows = x.numel() / feat;
    const bool affine = gamma.defined();
    if (affine && (gamma.numel() != feat || beta.numel() != feat)) {
        throw DimError("layer_norm: affine shape " + shape_str(gamma.shape()) +
                       " does not match feature dim " + std::to_string(feat));
    }

    std::vector<T> out(static_cast<std::size_t>(x.numel()));
    auto mean_v = std::make_shared<std::vector<T>>(rows);
    auto rstd_v = std::make_shared<std::vector<T>>(rows);
    const T* px = x.data().data();
    const T* pg = affine ? gamma.data().data() : nullptr;
    const T* pb = affine ? beta.data().data() : nullptr;

    parallel_for(rows, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t r = lo; r < hi; ++r) {
            const T* row = px + r * feat;
            double m = 0;
            for (std::int64_t j = 0; j < feat; ++j) m += row[j];
            m /= static_cast<double>(feat);
            double var = 0;
            for (std::int64_t j = 0; j < feat; ++j) {
                const double d = row[j] - m;
                var += d * d;
            }
            var /= static_cast<double>(feat);
            const T rstd = static_cast<T>(1.0 / std::sqrt(var + eps));
            (*mean_v)[r] = static_cast<T>(m);
            (*rstd_v)[r] = rstd;
            T* orow = out.data() + r * feat;
            for (std::int64_t j = 0; j < feat; ++j) {
                const T xh = (row[j] - static_cast<T>(m)) * rstd;
                orow[j] = affine ? pg[j] * xh + pb[j] : xh;
            }
        }
    });

    const bool rg = detail::tape_wants<T>({&x, affine ? &gamma : nullptr, affine ? &beta : nullptr});
    Tensor<T> result = detail::make_result(x.shape(), std::move(out),
                                           x.requires_grad() || (affine && gamma.requires_grad()) ||
                                               (affine && beta.requires_grad()));
    if (!rg) return result;

    auto ix = x.ptr();
    auto io = result.ptr();
    std::vector<std::shared_ptr<TensorImpl<T>>> ins{ix};
    std::shared_ptr<TensorImpl<T>> ig, ib;
    if (affine) {
        ig = gamma.ptr();
        ib = beta.ptr();
        ins.push_back(ig);
        ins.push_back(ib);
    }
    Tape<T>::active()->record("layer_norm", ins, io, [=]() {
        const std::vector<T>& g = io->grad;
        const T* qx = ix->data.data();
        const T* qg = ig ? ig->data.data() : nullptr;
        std::vector<T>* dgamma = (ig && ig->requires_grad) ? &detail::ensure_grad(ig.get()) : nullptr;
        std::vector<T>* dbeta = (ib && ib->requires_grad) ? &detail::ensure_grad(ib.get()) : nullptr;
        std::vector<T>* dx = ix->requires_grad ? &detail::ensure_grad(ix.get()) : nullptr;
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* row = qx + r * feat;
            const T* grow = g.data() + r * feat;
            const T m = (*mean_v)[r];
            const T rstd = (*rstd_v)[r];
            double sum_dxh = 0, sum_dxh_xh = 0;
            for (std::int64_t j = 0; j < feat; ++j) {
                const T xh = (row[j] - m) * rstd;
                const T dxh = qg ? grow[j] * qg[j] : grow[j];
                sum_dxh += dxh;
                sum_dxh_xh += static_cast<double>(dxh) * xh;
                if (dgamma) (*dgamma)[j] += grow[j] * xh;
                if (dbeta) (*dbeta)[j] += grow[j];
            }
            if (dx) {
                const T mean_dxh = static_cast<T>(sum_dxh / static_cast<double>(feat));
                const T mean_dxh_xh = static_cast<T>(sum_dxh_xh / static_cast<double>(feat));
                T* dxrow = dx->data() + r * feat;
                for (std::int64_t j = 0; j < feat; ++j) {
                    const T xh = (row[j] - m) * rstd;
                    const T dxh = qg ? grow[j] * qg[j] : grow[j];
                    dxrow[j] += rstd * (dxh - mean_dxh - xh * mean_dxh_xh);
                }
            }
        }
    });
    return result;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, double eps = 1e-5) {
    return layer_norm(x, Tensor<T>(), Tensor<T>(), eps);
}

// ---------------------------------------------------------------------------
// Matrix multiply with broadcastable batch dimensions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() < 2 || b.ndim() < 2) {
        throw DimError("matmul: operands must be at least 2-d, got " + shape_str(a.shape()) +
                       " and " + shape_str(b.shape()));
    }
    const std::int64_t m = a.shape()[a.ndim() - 2];
    const std::int64_t k = a.shape()[a.ndim() - 1];
    const std::int64_t k2 = b.shape()[b.ndim() - 2];
    const std::int64_t n = b.shape()[b.ndim() - 1];
    if (k != k2) {
        throw DimError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
    }
    const Shape abatch(a.shape().begin(), a.shape().end() - 2);
    const Shape bbatch(b.shape().begin(), b.shape().end() - 2);
    const Shape obatch = detail::broadcast_shapes(abatch, bbatch, "matmul");
    const std::int64_t batches = numel_of(obatch);
    Shape out_shape = obatch;
    out_shape.push_back(m);
    out_shape.push_back(n);

    const auto sa = detail::broadcast_strides(abatch, obatch.size(), obatch);
    const auto sb = detail::broadcast_strides(bbatch, obatch.size(), obatch);
    auto batch_offsets = [sa, sb, obatch](std::int64_t batch, std::int64_t& oa, std::int64_t& ob) {
        oa = 0;
        ob = 0;
        for (std::size_t d = obatch.size(); d-- > 0;) {
            const std::int64_t c = batch % obatch[d];
            batch /= obatch[d];
            oa += c * sa[d];
            ob += c * sb[d];
        }
    };

    std::vector<T> out(static_cast<std::size_t>(batches * m * n), T(0));
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    parallel_for(batches * m, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t row = lo; row < hi; ++row) {
            const std::int64_t batch = row / m;
            const std::int64_t i = row % m;
            std::int64_t oa, ob;
            batch_offsets(batch, oa, ob);
            const T* arow = pa + oa * m * k + i * k;
            T* orow = out.data() + row * n;
            for (std::int64_t kk = 0; kk < k; ++kk) {
                const T av = arow[kk];
                const T* brow = pb + ob * k * n + kk * n;
                for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    });

    const bool rg = detail::tape_wants<T>({&a, &b});
    Tensor<T> result =
        detail::make_result(std::move(out_shape), std::move(out), a.requires_grad() || b.requires_grad());
    if (!rg) return result;

    auto ia = a.ptr();
    auto ib = b.ptr();
    auto io = result.ptr();
    Tape<T>::active()->record("matmul", {ia, ib}, io, [=]() {
        const std::vector<T>& g = io->grad;
        const T* qa = ia->data.data();
        const T* qb = ib->data.data();
        // Batch loop stays serial: broadcast batches may accumulate into the
        // same slice. Rows within a batch are disjoint.
        if (ia->requires_grad) {
            std::vector<T>& da = detail::ensure_grad(ia.get());
            for (std::int64_t batch = 0; batch < batches; ++batch) {
                std::int64_t oa, ob;
                batch_offsets(batch, oa, ob);
                const T* gmat = g.data() + batch * m * n;
                const T* bmat = qb + ob * k * n;
                T* damat = da.data() + oa * m * k;
                parallel_for(m, [&](std::int64_t lo, std::int64_t hi) {
                    for (std::int64_t i = lo; i < hi; ++i) {
                        for (std::int64_t j = 0; j < n; ++j) {
                            const T gv = gmat[i * n + j];
                            const T* brow = bmat + j;
                            T* darow = damat + i * k;
                            for (std::int64_t kk = 0; kk < k; ++kk) darow[kk] += gv * brow[kk * n];
                        }
                    }
                });
            }
        }
        if (ib->requires_grad) {
            std::vector<T>& db = detail::ensure_grad(ib.get());
            for (std::int64_t batch = 0; batch < batches; ++batch) {
                std::int64_t oa, ob;
                batch_offsets(batch, oa, ob);
                const T* gmat = g.data() + batch * m * n;
                const T* amat = qa + oa * m * k;
                T* dbmat = db.data() + ob * k * n;
                parallel_for(k, [&](std::int64_t lo, std::int64_t hi) {
                    for (std::int64_t kk = lo; kk < hi; ++kk) {
                        T* dbrow = dbmat + kk * n;
                        for (std::int64_t i = 0; i < m; ++i) {
                            const T av = amat[i * k + kk];
                            const T* grow = gmat + i * n;
                            for (std::int64_t j = 0; j < n; ++j) dbrow[j] += av * grow[j];
                        }
                    }
                });
            }
        }
    });
    return result;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x) {
    if (x.ndim() != 2) throw DimError("transpose2d: expected 2-d, got " + shape_str(x.shape()));
    const std::int64_t m = x.dim(0), n = x.dim(1);
    std::vector<T> out(static_cast<std::size_t>(m * n));
    const T* px = x.data().data();
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < n; ++j) out[j * m + i] = px[i * n + j];
    }
    const bool rg = detail::tape_wants<T>({&x});
    Tensor<T> result = detail::make_result(Shape{n, m}, std::move(out), x.requires_grad());
    if (!rg) return result;
    auto ix = x.ptr();
    auto io = result.ptr();
    Tape<T>::active()->record("transpose2d", {ix}, io, [=]() {
        if (!ix->requires_grad) return;
        const std::vector<T>& g = io->grad;
        std::vector<T>& dx = detail::ensure_grad(ix.get());
        for (std::int64_t j = 0; j < n; ++j) {
            for (std::int64_t i = 0; i < m; ++i) dx[i * n + j] += g[j * m + i];
        }
    });
    return result;
}

// y = x @ w (+ bias). Bias may be an undefined tensor.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    Tensor<T> y = matmul(x, w);
    if (bias.defined()) y = add(y, bias);
    return y;
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

// Cross-correlation, stride 1. input (C_in,H,W), weight (C_out,C_in,kH,kW),
// optional bias (C_out). Output (C_out, H+2p-kH+1, W+2p-kW+1).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::int64_t padding) {
    if (input.ndim() != 3 || weight.ndim() != 4) {
        throw DimError("conv2d: expected input (C,H,W) and weight (O,C,kH,kW), got " +
                       shape_str(input.shape()) + " and " + shape_str(weight.shape()));
    }
    const std::int64_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::int64_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(1) != cin) {
        throw DimError("conv2d: channel mismatch, input " + shape_str(input.shape()) + " vs weight " +
                       shape_str(weight.shape()));
    }
    if (kh % 2 == 0 || kw % 2 == 0) {
        throw ConfigError("conv2d: kernel dims must be odd, got " + shape_str(weight.shape()));
    }
    const std::int64_t oh = h + 2 * padding - kh + 1;
    const std::int64_t ow = w + 2 * padding - kw + 1;
    if (oh < 1 || ow < 1) {
        throw DimError("conv2d: output would be empty for input " + shape_str(input.shape()));
    }
    if (bias.defined() && bias.numel() != cout) {
        throw DimError("conv2d: bias shape " + shape_str(bias.shape()) + " vs C_out " +
                       std::to_string(cout));
    }

    std::vector<T> out(static_cast<std::size_t>(cout * oh * ow), T(0));
    const T* pin = input.data().data();
    const T* pw = weight.data().data();
    const T* pbias = bias.defined() ? bias.data().data() : nullptr;

    parallel_for(cout, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t oc = lo; oc < hi; ++oc) {
            T* plane = out.data() + oc * oh * ow;
            if (pbias) std::fill(plane, plane + oh * ow, pbias[oc]);
            for (std::int64_t ic = 0; ic < cin; ++ic) {
                const T* iplane = pin + ic * h * w;
                for (std::int64_t ky = 0; ky < kh; ++ky) {
                    for (std::int64_t kx = 0; kx < kw; ++kx) {
                        const T wv = pw[((oc * cin + ic) * kh + ky) * kw + kx];
                        if (wv == T(0)) continue;
                        const std::int64_t y0 = std::max<std::int64_t>(0, padding - ky);
                        const std::int64_t y1 = std::min(oh, h + padding - ky);
                        for (std::int64_t y = y0; y < y1; ++y) {
                            const std::int64_t iy = y + ky - padding;
                            const std::int64_t x0 = std::max<std::int64_t>(0, padding - kx);
                            const std::int64_t x1 = std::min(ow, w + padding - kx);
                            const T* irow = iplane + iy * w + (x0 + kx - padding);
                            T* orow = plane + y * ow + x0;
                            for (std::int64_t x = 0; x < x1 - x0; ++x) orow[x] += wv * irow[x];
                        }
                    }
                }
            }
        }
    });

    const bool rg = detail::tape_wants<T>({&input, &weight, &bias});
    Tensor<T> result = detail::make_result(
        Shape{cout, oh, ow}, std::move(out),
        input.requires_grad() || weight.requires_grad() || (bias.defined() && bias.requires_grad()));
    if (!rg) return result;

    auto iin = input.ptr();
    auto iw = weight.ptr();
    auto io = result.ptr();
    std::vector<std::shared_ptr<TensorImpl<T>>> ins{iin, iw};
    std::shared_ptr<TensorImpl<T>> ibias;
    if (bias.defined()) {
        ibias = bias.ptr();
        ins.push_back(ibias);
    }
    const std::int64_t p = padding;
    Tape<T>::active()->record("conv2d", ins, io, [=]() {
        const std::vector<T>& g = io->grad;
        const T* qin = iin->data.data();
        const T* qw = iw->data.data();
        if (iin->requires_grad) {
            std::vector<T>& din = detail::ensure_grad(iin.get());
            parallel_for(cin, [&](std::int64_t lo, std::int64_t hi) {
                for (std::int64_t ic = lo; ic < hi; ++ic) {
                    T* dplane = din.data() + ic * h * w;
                    for (std::int64_t oc = 0; oc < cout; ++oc) {
                        const T* gplane = g.data() + oc * oh * ow;
                        for (std::int64_t ky = 0; ky < kh; ++ky) {
                            for (std::int64_t kx = 0; kx < kw; ++kx) {
                                const T wv = qw[((oc * cin + ic) * kh + ky) * kw + kx];
                                if (wv == T(0)) continue;
                                const std::int64_t y0 = std::max<std::int64_t>(0, p - ky);
                                const std::int64_t y1 = std::min(oh, h + p - ky);
                                for (std::int64_t y = y0; y < y1; ++y) {
                                    const std::int64_t iy = y + ky - p;
                                    const std::int64_t x0 = std::max<std::int64_t>(0, p - kx);
                                    const std::int64_t x1 = std::min(ow, w + p - kx);
                                    const T* grow = gplane + y * ow + x0;
                                    T* drow = dplane + iy * w + (x0 + kx - p);
                                    for (std::int64_t x = 0; x < x1 - x0; ++x) drow[x] += wv * grow[x];
                                }
                            }
                        }
                    }
                }
            });
        }
        if (iw->requires_grad) {
            std::vector<T>& dw = detail::ensure_grad(iw.get());
            parallel_for(cout, [&](std::int64_t lo, std::int64_t hi) {
                for (std::int64_t oc = lo; oc < hi; ++oc) {
                    const T* gplane = g.data() + oc * oh * ow;
                    for (std::int64_t ic = 0; ic < cin; ++ic) {
                        const T* iplane = qin + ic * h * w;
                        for (std::int64_t ky = 0; ky < kh; ++ky) {
                            for (std::int64_t kx = 0; kx < kw; ++kx) {
                                const std::int64_t y0 = std::max<std::int64_t>(0, p - ky);
                                const std::int64_t y1 = std::min(oh, h + p - ky);
                                double acc = 0;
                                for (std::int64_t y = y0; y < y1; ++y) {
                                    const std::int64_t iy = y + ky - p;
                                    const std::int64_t x0 = std::max<std::int64_t>(0, p - kx);
                                    const std::int64_t x1 = std::min(ow, w + p - kx);
                                    const T* grow = gplane + y * ow + x0;
                                    const T* irow = iplane + iy * w + (x0 + kx - p);
                                    for (std::int64_t x = 0; x < x1 - x0; ++x) {
                                        acc += static_cast<double>(grow[x]) * irow[x];
                                    }
                                }
                                dw[((oc * cin + ic) * kh + ky) * kw + kx] += static_cast<T>(acc);
                            }
                        }
                    }
                }
            });
        }
        if (ibias && ibias->requires_grad) {
            std::vector<T>& db = detail::ensure_grad(ibias.get());
            for (std::int64_t oc = 0; oc < cout; ++oc) {
                double acc = 0;
                const T* gplane = g.data() + oc * oh * ow;
                for (std::int64_t i = 0; i < oh * ow; ++i) acc += gplane[i];
                db[oc] += static_cast<T>(acc);
            }
        }
    });
    return result;
}

// Depthwise causal 1-d convolution over the token axis. x (L,C), w (C,K),
// optional bias (C). out[t,c] = sum_k w[c,k] * x[t-K+1+k, c], zero left pad.
template <typename T>
Tensor<T> dwconv1d_causal(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(0)) {
        throw DimError("dwconv1d_causal: got x " + shape_str(x.shape()) + ", w " +
                       shape_str(w.shape()));
    }
    const std::int64_t len = x.dim(0), ch = x.dim(1), k = w.dim(1);
    std::vector<T> out(static_cast<std::size_t>(len * ch), T(0));
    const T* px = x.data().data();
    const T* pw = w.data().data();
    const T* pb = bias.defined() ? bias.data().data() : nullptr;
    for (std::int64_t t = 0; t < len; ++t) {
        T* orow = out.data() + t * ch;
        if (pb) std::copy(pb, pb + ch, orow);
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const std::int64_t src = t - k + 1 + kk;
            if (src < 0) continue;
            const T* xrow = px + src * ch;
            for (std::int64_t c = 0; c < ch; ++c) orow[c] += pw[c * k + kk] * xrow[c];
        }
    }
    const bool rg = detail::tape_wants<T>({&x, &w, &bias});
    Tensor<T> result = detail::make_result(
        x.shape(), std::move(out),
        x.requires_grad() || w.requires_grad() || (bias.defined() && bias.requires_grad()));
    if (!rg) return result;

    auto ix = x.ptr();
    auto iw = w.ptr();
    auto io = result.ptr();
    std::vector<std::shared_ptr<TensorImpl<T>>> ins{ix, iw};
    std::shared_ptr<TensorImpl<T>> ibias;
    if (bias.defined()) {
        ibias = bias.ptr();
        ins.push_back(ibias);
    }
    Tape<T>::active()->record("dwconv1d_causal", ins, io, [=]() {
        const std::vector<T>& g = io->grad;
        const T* qx = ix->data.data();
        const T* qw = iw->data.data();
        if (ix->requires_grad) {
            std::vector<T>& dx = detail::ensure_grad(ix.get());
            for (std::int64_t t = 0; t < len; ++t) {
                const T* grow = g.data() + t * ch;
                for (std::int64_t kk = 0; kk < k; ++kk) {
                    const std::int64_t src = t - k + 1 + kk;
                    if (src < 0) continue;
                    T* dxrow = dx.data() + src * ch;
                    for (std::int64_t c = 0; c < ch; ++c) dxrow[c] += qw[c * k + kk] * grow[c];
                }
            }
        }
        if (iw->requires_grad) {
            std::vector<T>& dw = detail::ensure_grad(iw.get());
            for (std::int64_t t = 0; t < len; ++t) {
                const T* grow = g.data() + t * ch;
                for (std::int64_t kk = 0; kk < k; ++kk) {
                    const std::int64_t src = t - k + 1 + kk;
                    if (src < 0) continue;
                    const T* xrow = qx + src * ch;
                    for (std::int64_t c = 0; c < ch; ++c) dw[c * k + kk] += grow[c] * xrow[c];
                }
            }
        }
        if (ibias && ibias->requires_grad) {
            std::vector<T>& db = detail::ensure_grad(ibias.get());
            for (std::int64_t t = 0; t < len; ++t) {
                const T* grow = g.data() + t * ch;
                for (std::int64_t c = 0; c < ch; ++c) db[c] += grow[c];
            }
        }
    });
    return result;
}

// ---------------------------------------------------------------------------
// Rearrangements
// ---------------------------------------------------------------------------

// (C*s^2, H, W) -> (C, s*H, s*W); out[c, s*h+dy, s*w+dx] = in[c*s^2 + dy*s + dx, h, w].
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::int64_t s) {
    if (x.ndim() != 3) throw DimError("pixel_shuffle: expected (C,H,W), got " + shape_str(x.shape()));
    const std::int64_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (s < 1 || cin % (s * s) != 0) {
        throw ConfigError("pixel_shuffle: channels " + std::to_string(cin) +
                          " not divisible by s^2 with s=" + std::to_string(s));
    }
    const std::int64_t cout = cin / (s * s);
    std::vector<T> out(static_cast<std::size_t>(x.numel()));
    const T* px = x.data().data();
    for (std::int64_t c = 0; c < cout; ++c) {
        for (std::int64_t dy = 0; dy < s; ++dy) {
            for (std::int64_t dx = 0; dx < s; ++dx) {
                const T* iplane = px + (c * s * s + dy * s + dx) * h * w;
                for (std::int64_t y = 0; y < h; ++y) {
                    for (std::int64_t xw = 0; xw < w; ++xw) {
                        out[(c * (s * h) + (s * y + dy)) * (s * w) + (s * xw + dx)] =
                            iplane[y * w + xw];
                    }
                }
            }
        }
    }
    const bool rg = detail::tape_wants<T>({&x});
    Tensor<T> result =
        detail::make_result(Shape{cout, s * h, s * w}, std::move(out), x.requires_grad());
    if (!rg) return result;
    auto ix = x.ptr();
    auto io = result.ptr();
    Tape<T>::active()->record("pixel_shuffle", {ix}, io, [=]() {
        if (!ix->requires_grad) return;
        const std::vector<T>& g = io->grad;
        std::vector<T>& dx = detail::ensure_grad(ix.get());
        for (std::int64_t c = 0; c < cout; ++c) {
            for (std::int64_t dy = 0; dy < s; ++dy) {
                for (std::int64_t dx2 = 0; dx2 < s; ++dx2) {
                    T* dplane = dx.data() + (c * s * s + dy * s + dx2) * h * w;
                    for (std::int64_t y = 0; y < h; ++y) {
                        for (std::int64_t xw = 0; xw < w; ++xw) {
                            dplane[y * w + xw] +=
                                g[(c * (s * h) + (s * y + dy)) * (s * w) + (s * xw + dx2)];
                        }
                    }
                }
            }
        }
    });
    return result;
}

// Exact inverse of pixel_shuffle (test/utility path, not taped).
template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, std::int64_t s) {
    if (x.ndim() != 3) throw DimError("pixel_unshuffle: expected (C,H,W)");
    const std::int64_t c = x.dim(0), sh = x.dim(1), sw = x.dim(2);
    if (sh % s != 0 || sw % s != 0) throw ConfigError("pixel_unshuffle: dims not divisible by s");
    const std::int64_t h = sh / s, w = sw / s;
    Tensor<T> out(Shape{c * s * s, h, w});
    const T* px = x.data().data();
    T* po = out.data().data();
    for (std::int64_t cc = 0; cc < c; ++cc) {
        for (std::int64_t dy = 0; dy < s; ++dy) {
            for (std::int64_t dx = 0; dx < s; ++dx) {
                T* oplane = po + (cc * s * s + dy * s + dx) * h * w;
                for (std::int64_t y = 0; y < h; ++y) {
                    for (std::int64_t xw = 0; xw < w; ++xw) {
                        oplane[y * w + xw] = px[(cc * sh + (s * y + dy)) * sw + (s * xw + dx)];
                    }
                }
            }
        }
    }
    return out;
}

// (C,H,W) -> (H*W, C), raster token order.
template <typename T>
Tensor<T> chw_to_tokens(const Tensor<T>& x) {
    if (x.ndim() != 3) throw DimError("chw_to_tokens: expected (C,H,W), got " + shape_str(x.shape()));
    const std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::int64_t l = h * w;
    std::vector<T> out(static_cast<std::size_t>(x.numel()));
    const T* px = x.data().data();
    for (std::int64_t cc = 0; cc < c; ++cc) {
        const T* plane = px + cc * l;
        for (std::int64_t t = 0; t < l; ++t) out[t * c + cc] = plane[t];
    }
    const bool rg = detail::tape_wants<T>({&x});
    Tensor<T> result = detail::make_result(Shape{l, c}, std::move(out), x.requires_grad());
    if (!rg) return result;
    auto ix = x.ptr();
    auto io = result.ptr();
    Tape<T>::active()->record("chw_to_tokens", {ix}, io, [=]() {
        if (!ix->requires_grad) return;
        const std::vector<T>& g = io->grad;
        std::vector<T>& dx = detail::ensure_grad(ix.get());
        for (std::int64_t cc = 0; cc < c; ++cc) {
            T* dplane = dx.data() + cc * l;
            for (std::int64_t t = 0; t < l; ++t) dplane[t] += g[t * c + cc];
        }
    });
    return result;
}

// (L, C) -> (C, h, w) with L == h*w.
template <typename T>
Tensor<T> tokens_to_chw(const Tensor<T>& x, std::int64_t h, std::int64_t w) {
    if (x.ndim() != 2 || x.dim(0) != h * w) {
        throw DimError("tokens_to_chw: token count " + shape_str(x.shape()) + " vs grid " +
                       std::to_string(h) + "x" + std::to_string(w));
    }
    const std::int64_t l = h * w, c = x.dim(1);
    std::vector<T> out(static_cast<std::size_t>(x.numel()));
    const T* px = x.data().data();
    for (std::int64_t t = 0; t < l; ++t) {
        const T* row = px + t * c;
        for (std::int64_t cc = 0; cc < c; ++cc) out[cc * l + t] = row[cc];
    }
    const bool rg = detail::tape_wants<T>({&x});
    Tensor<T> result = detail::make_result(Shape{c, h, w}, std::move(out), x.requires_grad());
    if (!rg) return result;
    auto ix = x.ptr();
    auto io = result.ptr();
    Tape<T>::active()->record("tokens_to_chw", {ix}, io, [=]() {
        if (!ix->requires_grad) return;
        const std::vector<T>& g = io->grad;
        std::vector<T>& dx = detail::ensure_grad(ix.get());
        for (std::int64_t t = 0; t < l; ++t) {
            T* drow = dx.data() + t * c;
            for (std::int64_t cc = 0; cc < c; ++cc) drow[cc] += g[cc * l + t];
        }
    });
    return result;
}

}  // namespace mlsr
