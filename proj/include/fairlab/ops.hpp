#pragma once

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "fairlab/tensor.hpp"

namespace fairlab {

namespace detail {

template <typename T>
void record_op(bool needs_grad, Tensor<T>& out, std::function<void()> fn) {
    if (Graph<T>* g = Graph<T>::active(); g && needs_grad) {
        out.set_requires_grad(true);
        g->record(out, std::move(fn));
    }
}

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

template <typename SpanLike>
bool all_finite(const SpanLike& v) {
    for (auto x : v)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul: [M x K] * [K x N] -> [M x N]
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> matmul(Tensor<T> a, Tensor<T> b) {
    detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                    "matmul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out = Tensor<T>::zeros({m, n});
    {
        const T* pa = a.values().data();
        const T* pb = b.values().data();
        T* pc = out.values().data();
        for (int i = 0; i < m; ++i)
            for (int l = 0; l < k; ++l) {
                const T aik = pa[i * k + l];
                const T* brow = pb + l * n;
                T* crow = pc + i * n;
                for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
            }
    }
    detail::record_op(a.requires_grad() || b.requires_grad(), out, [a, b, out]() mutable {
        const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
        auto dy = out.grad();
        if (a.requires_grad()) {
            a.ensure_grad();
            auto da = a.grad();
            const T* pb = b.values().data();
            for (int i = 0; i < m; ++i)
                for (int l = 0; l < k; ++l) {
                    T acc = 0;
                    const T* dyrow = dy.data() + i * n;
                    const T* brow = pb + l * n;
                    for (int j = 0; j < n; ++j) acc += dyrow[j] * brow[j];
                    da[i * k + l] += acc;
                }
        }
        if (b.requires_grad()) {
            b.ensure_grad();
            auto db = b.grad();
            const T* pa = a.values().data();
            for (int i = 0; i < m; ++i)
                for (int l = 0; l < k; ++l) {
                    const T ail = pa[i * k + l];
                    const T* dyrow = dy.data() + i * n;
                    T* dbrow = db.data() + l * n;
                    for (int j = 0; j < n; ++j) dbrow[j] += ail * dyrow[j];
                }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// add: elementwise for equal shapes, or bias add when b is rank-1 and matches
// the last dimension of a.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> add(Tensor<T> a, Tensor<T> b) {
    const bool same = a.shape() == b.shape();
    const bool bias = b.rank() == 1 && a.rank() >= 1 && a.dim(a.rank() - 1) == b.dim(0);
    detail::require(same || bias,
                    "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const auto pa = a.values();
    const auto pb = b.values();
    auto po = out.values();
    if (same) {
        for (std::size_t i = 0; i < po.size(); ++i) po[i] = pa[i] + pb[i];
    } else {
        const std::size_t n = pb.size();
        for (std::size_t i = 0; i < po.size(); ++i) po[i] = pa[i] + pb[i % n];
    }
    detail::record_op(a.requires_grad() || b.requires_grad(), out, [a, b, out, same]() mutable {
        auto dy = out.grad();
        if (a.requires_grad()) {
            a.ensure_grad();
            auto da = a.grad();
            for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
        }
        if (b.requires_grad()) {
            b.ensure_grad();
            auto db = b.grad();
            if (same) {
                for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
            } else {
                const std::size_t n = db.size();
                for (std::size_t i = 0; i < dy.size(); ++i) db[i % n] += dy[i];
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// relu
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> relu(Tensor<T> x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const auto px = x.values();
    auto po = out.values();
    for (std::size_t i = 0; i < po.size(); ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
    detail::record_op(x.requires_grad(), out, [x, out]() mutable {
        x.ensure_grad();
        auto dx = x.grad();
        auto dy = out.grad();
        const auto px = x.values();
        for (std::size_t i = 0; i < dx.size(); ++i)
            if (px[i] > T(0)) dx[i] += dy[i];
    });
    return out;
}

// ---------------------------------------------------------------------------
// conv2d: 3x3 kernel, stride 1, zero padding 1 (same-size output).
// x [B,C,H,W], w [OC,IC,3,3], bias [OC] -> [B,OC,H,W]
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> conv2d(Tensor<T> x, Tensor<T> w, Tensor<T> bias) {
    detail::require(x.rank() == 4 && w.rank() == 4 && w.dim(2) == 3 && w.dim(3) == 3 &&
                        x.dim(1) == w.dim(1) && bias.rank() == 1 && bias.dim(0) == w.dim(0),
                    "conv2d: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(w.shape()));
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), OC = w.dim(0);
    Tensor<T> out = Tensor<T>::zeros({B, OC, H, W});
    {
        const T* px = x.values().data();
        const T* pw = w.values().data();
        const T* pbias = bias.values().data();
        T* po = out.values().data();
        const std::int64_t xplane = static_cast<std::int64_t>(H) * W;
        for (int b = 0; b < B; ++b)
            for (int oc = 0; oc < OC; ++oc) {
                T* oplane = po + (static_cast<std::int64_t>(b) * OC + oc) * xplane;
                for (std::int64_t i = 0; i < xplane; ++i) oplane[i] = pbias[oc];
                for (int ic = 0; ic < C; ++ic) {
                    const T* iplane = px + (static_cast<std::int64_t>(b) * C + ic) * xplane;
                    const T* wk = pw + ((static_cast<std::int64_t>(oc) * C + ic) * 9);
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            const T wv = wk[ky * 3 + kx];
                            const int y0 = std::max(0, 1 - ky), y1 = std::min(H, H + 1 - ky);
                            const int x0 = std::max(0, 1 - kx), x1 = std::min(W, W + 1 - kx);
                            for (int y = y0; y < y1; ++y) {
                                const T* src = iplane + (y + ky - 1) * W + (kx - 1);
                                T* dst = oplane + y * W;
                                for (int xx = x0; xx < x1; ++xx) dst[xx] += wv * src[xx];
                            }
                        }
                }
            }
    }
    detail::record_op(x.requires_grad() || w.requires_grad() || bias.requires_grad(), out,
                      [x, w, bias, out]() mutable {
        const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), OC = w.dim(0);
        const std::int64_t plane = static_cast<std::int64_t>(H) * W;
        const T* pdy = out.grad().data();
        if (x.requires_grad()) {
            x.ensure_grad();
            T* pdx = x.grad().data();
            const T* pw = w.values().data();
            for (int b = 0; b < B; ++b)
                for (int oc = 0; oc < OC; ++oc) {
                    const T* dyp = pdy + (static_cast<std::int64_t>(b) * OC + oc) * plane;
                    for (int ic = 0; ic < C; ++ic) {
                        T* dxp = pdx + (static_cast<std::int64_t>(b) * C + ic) * plane;
                        const T* wk = pw + ((static_cast<std::int64_t>(oc) * C + ic) * 9);
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx) {
                                const T wv = wk[ky * 3 + kx];
                                const int y0 = std::max(0, 1 - ky), y1 = std::min(H, H + 1 - ky);
                                const int x0 = std::max(0, 1 - kx), x1 = std::min(W, W + 1 - kx);
                                for (int y = y0; y < y1; ++y) {
                                    T* dst = dxp + (y + ky - 1) * W + (kx - 1);
                                    const T* src = dyp + y * W;
                                    for (int xx = x0; xx < x1; ++xx) dst[xx] += wv * src[xx];
                                }
                            }
                    }
                }
        }
        if (w.requires_grad()) {
            w.ensure_grad();
            T* pdw = w.grad().data();
            const T* px = x.values().data();
            for (int b = 0; b < B; ++b)
                for (int oc = 0; oc < OC; ++oc) {
                    const T* dyp = pdy + (static_cast<std::int64_t>(b) * OC + oc) * plane;
                    for (int ic = 0; ic < C; ++ic) {
                        const T* xp = px + (static_cast<std::int64_t>(b) * C + ic) * plane;
                        T* dwk = pdw + ((static_cast<std::int64_t>(oc) * C + ic) * 9);
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx) {
                                const int y0 = std::max(0, 1 - ky), y1 = std::min(H, H + 1 - ky);
                                const int x0 = std::max(0, 1 - kx), x1 = std::min(W, W + 1 - kx);
                                T acc = 0;
                                for (int y = y0; y < y1; ++y) {
                                    const T* src = xp + (y + ky - 1) * W + (kx - 1);
                                    const T* dyrow = dyp + y * W;
                                    for (int xx = x0; xx < x1; ++xx) acc += dyrow[xx] * src[xx];
                                }
                                dwk[ky * 3 + kx] += acc;
                            }
                    }
                }
        }
        if (bias.requires_grad()) {
            bias.ensure_grad();
            auto dbv = bias.grad();
            for (int b = 0; b < B; ++b)
                for (int oc = 0; oc < OC; ++oc) {
                    const T* dyp = pdy + (static_cast<std::int64_t>(b) * OC + oc) * plane;
                    T acc = 0;
                    for (std::int64_t i = 0; i < plane; ++i) acc += dyp[i];
                    dbv[oc] += acc;
                }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// avgpool2d: k x k window, stride k. Spatial dims must divide by k.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> avgpool2d(Tensor<T> x, int k) {
    detail::require(x.rank() == 4 && k >= 1 && x.dim(2) % k == 0 && x.dim(3) % k == 0,
                    "avgpool2d: window " + std::to_string(k) + " incompatible with " + shape_str(x.shape()));
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int OH = H / k, OW = W / k;
    Tensor<T> out = Tensor<T>::zeros({B, C, OH, OW});
    const T inv = T(1) / static_cast<T>(k * k);
    {
        const T* px = x.values().data();
        T* po = out.values().data();
        for (int bc = 0; bc < B * C; ++bc) {
            const T* ip = px + static_cast<std::int64_t>(bc) * H * W;
            T* op = po + static_cast<std::int64_t>(bc) * OH * OW;
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    T acc = 0;
                    for (int dy = 0; dy < k; ++dy)
                        for (int dx = 0; dx < k; ++dx) acc += ip[(oy * k + dy) * W + ox * k + dx];
                    op[oy * OW + ox] = acc * inv;
                }
        }
    }
    detail::record_op(x.requires_grad(), out, [x, out, k, inv]() mutable {
        const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        const int OH = H / k, OW = W / k;
        x.ensure_grad();
        T* pdx = x.grad().data();
        const T* pdy = out.grad().data();
        for (int bc = 0; bc < B * C; ++bc) {
            T* dxp = pdx + static_cast<std::int64_t>(bc) * H * W;
            const T* dyp = pdy + static_cast<std::int64_t>(bc) * OH * OW;
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    const T g = dyp[oy * OW + ox] * inv;
                    for (int dy = 0; dy < k; ++dy)
                        for (int dx = 0; dx < k; ++dx) dxp[(oy * k + dy) * W + ox * k + dx] += g;
                }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// batchnorm1d over [B x P]. Batch statistics in training mode (batch size >= 2
// required), running statistics in eval mode. Running buffers are updated in
// place and never recorded on the tape.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> batchnorm1d(Tensor<T> x, Tensor<T> gamma, Tensor<T> beta,
                      Tensor<T>& running_mean, Tensor<T>& running_var, T momentum, T eps,
                      bool training) {
    detail::require(x.rank() == 2 && gamma.rank() == 1 && gamma.dim(0) == x.dim(1) &&
                        beta.shape() == gamma.shape() && running_mean.shape() == gamma.shape() &&
                        running_var.shape() == gamma.shape(),
                    "batchnorm1d: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(gamma.shape()));
    const int B = x.dim(0), P = x.dim(1);
    if (training && B < 2)
        throw std::invalid_argument("batchnorm1d: training mode requires batch size >= 2, got " +
                                    std::to_string(B));
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    // xhat and invstd are saved for the backward rule.
    auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(B) * P);
    auto invstd = std::make_shared<std::vector<T>>(P);
    const T* px = x.values().data();
    T* po = out.values().data();
    const T* pg = gamma.values().data();
    const T* pbeta = beta.values().data();
    if (training) {
        for (int j = 0; j < P; ++j) {
            T mu = 0;
            for (int i = 0; i < B; ++i) mu += px[i * P + j];
            mu /= static_cast<T>(B);
            T var = 0;
            for (int i = 0; i < B; ++i) {
                const T d = px[i * P + j] - mu;
                var += d * d;
            }
            var /= static_cast<T>(B);
            const T is = T(1) / std::sqrt(var + eps);
            (*invstd)[j] = is;
            for (int i = 0; i < B; ++i) {
                const T xh = (px[i * P + j] - mu) * is;
                (*xhat)[i * P + j] = xh;
                po[i * P + j] = pg[j] * xh + pbeta[j];
            }
            const T unbiased = var * static_cast<T>(B) / static_cast<T>(B - 1);
            running_mean.values()[j] = (T(1) - momentum) * running_mean.values()[j] + momentum * mu;
            running_var.values()[j] = (T(1) - momentum) * running_var.values()[j] + momentum * unbiased;
        }
    } else {
        const T* rm = running_mean.values().data();
        const T* rv = running_var.values().data();
        for (int j = 0; j < P; ++j) {
            const T is = T(1) / std::sqrt(rv[j] + eps);
            (*invstd)[j] = is;
            for (int i = 0; i < B; ++i) {
                const T xh = (px[i * P + j] - rm[j]) * is;
                (*xhat)[i * P + j] = xh;
                po[i * P + j] = pg[j] * xh + pbeta[j];
            }
        }
    }
    detail::record_op(x.requires_grad() || gamma.requires_grad() || beta.requires_grad(), out,
                      [x, gamma, beta, out, xhat, invstd, training]() mutable {
        const int B = x.dim(0), P = x.dim(1);
        const T* dy = out.grad().data();
        const T* pg = gamma.values().data();
        for (int j = 0; j < P; ++j) {
            T dg = 0, db = 0;
            for (int i = 0; i < B; ++i) {
                dg += dy[i * P + j] * (*xhat)[i * P + j];
                db += dy[i * P + j];
            }
            if (gamma.requires_grad()) {
                gamma.ensure_grad();
                gamma.grad()[j] += dg;
            }
            if (beta.requires_grad()) {
                beta.ensure_grad();
                beta.grad()[j] += db;
            }
            if (x.requires_grad()) {
                x.ensure_grad();
                T* dx = x.grad().data();
                const T gis = pg[j] * (*invstd)[j];
                if (training) {
                    const T mb = db / static_cast<T>(B);
                    const T mg = dg / static_cast<T>(B);
                    for (int i = 0; i < B; ++i)
                        dx[i * P + j] += gis * (dy[i * P + j] - mb - (*xhat)[i * P + j] * mg);
                } else {
                    for (int i = 0; i < B; ++i) dx[i * P + j] += gis * dy[i * P + j];
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// flatten: [B, ...] -> [B, rest]
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> flatten(Tensor<T> x) {
    detail::require(x.rank() >= 2, "flatten: rank must be >= 2, got " + shape_str(x.shape()));
    const int B = x.dim(0);
    const int rest = static_cast<int>(x.size() / B);
    Tensor<T> out = Tensor<T>::zeros({B, rest});
    std::copy(x.values().begin(), x.values().end(), out.values().begin());
    detail::record_op(x.requires_grad(), out, [x, out]() mutable {
        x.ensure_grad();
        auto dx = x.grad();
        auto dy = out.grad();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
    });
    return out;
}

// ---------------------------------------------------------------------------
// scale by a compile-time-constant factor
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> scale(Tensor<T> x, T s) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const auto px = x.values();
    auto po = out.values();
    for (std::size_t i = 0; i < po.size(); ++i) po[i] = px[i] * s;
    detail::record_op(x.requires_grad(), out, [x, out, s]() mutable {
        x.ensure_grad();
        auto dx = x.grad();
        auto dy = out.grad();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += s * dy[i];
    });
    return out;
}

// ---------------------------------------------------------------------------
// concat_cols: [B x N1], [B x N2] -> [B x (N1+N2)]
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> concat_cols(Tensor<T> a, Tensor<T> b) {
    detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0),
                    "concat: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const int B = a.dim(0), na = a.dim(1), nb = b.dim(1);
    Tensor<T> out = Tensor<T>::zeros({B, na + nb});
    const T* pa = a.values().data();
    const T* pb = b.values().data();
    T* po = out.values().data();
    for (int i = 0; i < B; ++i) {
        std::memcpy(po + i * (na + nb), pa + i * na, sizeof(T) * na);
        std::memcpy(po + i * (na + nb) + na, pb + i * nb, sizeof(T) * nb);
    }
    detail::record_op(a.requires_grad() || b.requires_grad(), out, [a, b, out]() mutable {
        const int B = a.dim(0), na = a.dim(1), nb = b.dim(1);
        const T* dy = out.grad().data();
        if (a.requires_grad()) {
            a.ensure_grad();
            T* da = a.grad().data();
            for (int i = 0; i < B; ++i)
                for (int j = 0; j < na; ++j) da[i * na + j] += dy[i * (na + nb) + j];
        }
        if (b.requires_grad()) {
            b.ensure_grad();
            T* db = b.grad().data();
            for (int i = 0; i < B; ++i)
                for (int j = 0; j < nb; ++j) db[i * nb + j] += dy[i * (na + nb) + na + j];
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// softmax over each row of [B x K]
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> softmax_rows(Tensor<T> x) {
    detail::require(x.rank() == 2, "softmax: expected rank-2 input, got " + shape_str(x.shape()));
    const int B = x.dim(0), K = x.dim(1);
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.values().data();
    T* po = out.values().data();
    for (int i = 0; i < B; ++i) {
        T mx = px[i * K];
        for (int j = 1; j < K; ++j) mx = std::max(mx, px[i * K + j]);
        T denom = 0;
        for (int j = 0; j < K; ++j) {
            const T e = std::exp(px[i * K + j] - mx);
            po[i * K + j] = e;
            denom += e;
        }
        for (int j = 0; j < K; ++j) po[i * K + j] /= denom;
    }
    detail::record_op(x.requires_grad(), out, [x, out]() mutable {
        const int B = x.dim(0), K = x.dim(1);
        x.ensure_grad();
        T* dx = x.grad().data();
        const T* dy = out.grad().data();
        const T* s = out.values().data();
        for (int i = 0; i < B; ++i) {
            T dot = 0;
            for (int j = 0; j < K; ++j) dot += dy[i * K + j] * s[i * K + j];
            for (int j = 0; j < K; ++j) dx[i * K + j] += s[i * K + j] * (dy[i * K + j] - dot);
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// route_rows: out[i] = inputs[selector[i]].row(i). Routes each example's row
// from the tensor its selector picks (per-domain head routing).
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> route_rows(std::vector<Tensor<T>> inputs, std::vector<int> selector) {
    detail::require(!inputs.empty(), "route_rows: no inputs");
    const int B = inputs[0].dim(0), N = inputs[0].dim(1);
    for (const auto& t : inputs)
        detail::require(t.rank() == 2 && t.dim(0) == B && t.dim(1) == N,
                        "route_rows: shape mismatch " + shape_str(t.shape()) + " vs " +
                            shape_str(inputs[0].shape()));
    detail::require(static_cast<int>(selector.size()) == B, "route_rows: selector length mismatch");
    for (int s : selector)
        detail::require(s >= 0 && s < static_cast<int>(inputs.size()),
                        "route_rows: selector out of range: " + std::to_string(s));
    Tensor<T> out = Tensor<T>::zeros({B, N});
    T* po = out.values().data();
    for (int i = 0; i < B; ++i)
        std::memcpy(po + i * N, inputs[selector[i]].values().data() + i * N, sizeof(T) * N);
    bool needs = false;
    for (const auto& t : inputs) needs = needs || t.requires_grad();
    detail::record_op(needs, out, [inputs, selector, out]() mutable {
        const int B = out.dim(0), N = out.dim(1);
        const T* dy = out.grad().data();
        for (int i = 0; i < B; ++i) {
            Tensor<T> t = inputs[selector[i]];
            if (!t.requires_grad()) continue;
            t.ensure_grad();
            T* dt = t.grad().data();
            for (int j = 0; j < N; ++j) dt[i * N + j] += dy[i * N + j];
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// reductions to scalar
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> sum(Tensor<T> x) {
    T acc = 0;
    for (T v : x.values()) acc += v;
    Tensor<T> out = Tensor<T>::scalar(acc);
    detail::record_op(x.requires_grad(), out, [x, out]() mutable {
        x.ensure_grad();
        auto dx = x.grad();
        const T g = out.grad()[0];
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
    });
    return out;
}

// Dot product with a constant weight vector; the scalarizer used by the
// gradient checker to probe non-scalar ops.
template <typename T>
Tensor<T> weighted_sum(Tensor<T> x, std::vector<T> weights) {
    detail::require(static_cast<std::int64_t>(weights.size()) == x.size(),
                    "weighted_sum: weight count mismatch");
    T acc = 0;
    const auto px = x.values();
    for (std::size_t i = 0; i < px.size(); ++i) acc += px[i] * weights[i];
    Tensor<T> out = Tensor<T>::scalar(acc);
    detail::record_op(x.requires_grad(), out, [x, out, w = std::move(weights)]() mutable {
        x.ensure_grad();
        auto dx = x.grad();
        const T g = out.grad()[0];
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * w[i];
    });
    return out;
}

}  // namespace fairlab
