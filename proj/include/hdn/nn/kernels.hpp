#pragma once

// Raw forward/backward kernels. The autograd ops and the streaming engine both call
// into these so the two inference paths share arithmetic.

#include "hdn/nn/tensor.hpp"

#include <Eigen/Core>

#include <cmath>
#include <limits>

namespace hdn::nn::kernels {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;
template <class T>
using CMapVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <class T>
MapMat<T> as_matrix(Tensor<T>& t, std::size_t rows, std::size_t cols) {
    return MapMat<T>(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <class T>
CMapMat<T> as_matrix(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
    return CMapMat<T>(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline std::size_t conv_out_len(std::size_t len, std::size_t kernel, std::size_t stride, std::size_t pad_l,
                                std::size_t pad_r) {
    const std::size_t padded = len + pad_l + pad_r;
    if (padded < kernel) return 0;
    return (padded - kernel) / stride + 1;
}

// im2col for x [Cin x T] with implicit zero padding -> cols [Cin*K x Tout].
template <class T>
Tensor<T> im2col(const Tensor<T>& x, std::size_t kernel, std::size_t stride, std::size_t pad_l, std::size_t t_out) {
    const std::size_t cin = x.dim(0), len = x.dim(1);
    Tensor<T> cols({cin * kernel, t_out});
    for (std::size_t c = 0; c < cin; ++c) {
        const T* xr = x.row(c);
        for (std::size_t k = 0; k < kernel; ++k) {
            T* dst = cols.row(c * kernel + k);
            for (std::size_t t = 0; t < t_out; ++t) {
                const std::ptrdiff_t src =
                    static_cast<std::ptrdiff_t>(t * stride + k) - static_cast<std::ptrdiff_t>(pad_l);
                dst[t] = (src >= 0 && src < static_cast<std::ptrdiff_t>(len)) ? xr[src] : T(0);
            }
        }
    }
    return cols;
}

template <class T>
void col2im_add(const Tensor<T>& cols, std::size_t kernel, std::size_t stride, std::size_t pad_l, Tensor<T>& dx) {
    const std::size_t cin = dx.dim(0), len = dx.dim(1), t_out = cols.dim(1);
    for (std::size_t c = 0; c < cin; ++c) {
        T* xr = dx.row(c);
        for (std::size_t k = 0; k < kernel; ++k) {
            const T* src = cols.row(c * kernel + k);
            for (std::size_t t = 0; t < t_out; ++t) {
                const std::ptrdiff_t dst =
                    static_cast<std::ptrdiff_t>(t * stride + k) - static_cast<std::ptrdiff_t>(pad_l);
                if (dst >= 0 && dst < static_cast<std::ptrdiff_t>(len)) xr[dst] += src[t];
            }
        }
    }
}

// y [Cout x Tout] = conv(x [Cin x T], w [Cout x Cin x K]) + b
template <class T>
Tensor<T> conv1d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b, std::size_t stride,
                         std::size_t pad_l, std::size_t pad_r) {
    const std::size_t cin = x.dim(0), len = x.dim(1);
    const std::size_t cout = w.dim(0), kernel = w.dim(2);
    if (w.dim(1) != cin) {
        throw std::invalid_argument("conv1d: input has " + std::to_string(cin) + " channels, weight expects " +
                                    std::to_string(w.dim(1)));
    }
    const std::size_t t_out = conv_out_len(len, kernel, stride, pad_l, pad_r);
    Tensor<T> y({cout, t_out});
    if (t_out == 0) return y;
    auto ym = as_matrix(y, cout, t_out);
    auto wm = as_matrix(w, cout, cin * kernel);
    if (kernel == 1 && stride == 1 && pad_l == 0 && pad_r == 0) {
        ym.noalias() = wm * as_matrix(x, cin, len);
    } else {
        const Tensor<T> cols = im2col(x, kernel, stride, pad_l, t_out);
        ym.noalias() = wm * as_matrix(cols, cin * kernel, t_out);
    }
    if (b) {
        for (std::size_t c = 0; c < cout; ++c) {
            T* yr = y.row(c);
            const T bc = (*b)[c];
            for (std::size_t t = 0; t < t_out; ++t) yr[t] += bc;
        }
    }
    return y;
}

template <class T>
void conv1d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy, std::size_t stride,
                     std::size_t pad_l, Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
    const std::size_t cin = x.dim(0), len = x.dim(1);
    const std::size_t cout = w.dim(0), kernel = w.dim(2);
    const std::size_t t_out = gy.dim(1);
    auto gym = as_matrix(gy, cout, t_out);
    auto wm = as_matrix(w, cout, cin * kernel);
    const bool pointwise = kernel == 1 && stride == 1 && pad_l == 0 && t_out == len;
    if (gb) {
        for (std::size_t c = 0; c < cout; ++c) {
            const T* r = gy.row(c);
            T s = 0;
            for (std::size_t t = 0; t < t_out; ++t) s += r[t];
            (*gb)[c] += s;
        }
    }
    if (pointwise) {
        if (gw) as_matrix(*gw, cout, cin).noalias() += gym * as_matrix(x, cin, len).transpose();
        if (gx) as_matrix(*gx, cin, len).noalias() += wm.transpose() * gym;
        return;
    }
    if (gw) {
        const Tensor<T> cols = im2col(x, kernel, stride, pad_l, t_out);
        as_matrix(*gw, cout, cin * kernel).noalias() += gym * as_matrix(cols, cin * kernel, t_out).transpose();
    }
    if (gx) {
        Tensor<T> gcols({cin * kernel, t_out});
        as_matrix(gcols, cin * kernel, t_out).noalias() = wm.transpose() * gym;
        col2im_add(gcols, kernel, stride, pad_l, *gx);
    }
}

// Transposed conv: x [Cin x T], w [Cin x Cout x K]. Full output length is (T-1)*S + K;
// only the first out_len samples are kept (right context cropped).
template <class T>
Tensor<T> conv_transpose1d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b, std::size_t stride,
                                   std::size_t out_len) {
    const std::size_t cin = x.dim(0), len = x.dim(1);
    const std::size_t cout = w.dim(1), kernel = w.dim(2);
    if (w.dim(0) != cin) throw std::invalid_argument("conv_transpose1d: channel mismatch");
    Tensor<T> y({cout, out_len});
    if (len > 0) {
        Tensor<T> cols({cout * kernel, len});
        as_matrix(cols, cout * kernel, len).noalias() =
            as_matrix(w, cin, cout * kernel).transpose() * as_matrix(x, cin, len);
        for (std::size_t c = 0; c < cout; ++c) {
            T* yr = y.row(c);
            for (std::size_t k = 0; k < kernel; ++k) {
                const T* src = cols.row(c * kernel + k);
                for (std::size_t t = 0; t < len; ++t) {
                    const std::size_t dst = t * stride + k;
                    if (dst < out_len) yr[dst] += src[t];
                }
            }
        }
    }
    if (b) {
        for (std::size_t c = 0; c < cout; ++c) {
            T* yr = y.row(c);
            for (std::size_t t = 0; t < out_len; ++t) yr[t] += (*b)[c];
        }
    }
    return y;
}

template <class T>
void conv_transpose1d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy, std::size_t stride,
                               Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
    const std::size_t cin = x.dim(0), len = x.dim(1);
    const std::size_t cout = w.dim(1), kernel = w.dim(2);
    const std::size_t out_len = gy.dim(1);
    if (gb) {
        for (std::size_t c = 0; c < cout; ++c) {
            const T* r = gy.row(c);
            T s = 0;
            for (std::size_t t = 0; t < out_len; ++t) s += r[t];
            (*gb)[c] += s;
        }
    }
    Tensor<T> gcols({cout * kernel, len});
    for (std::size_t c = 0; c < cout; ++c) {
        const T* gr = gy.row(c);
        for (std::size_t k = 0; k < kernel; ++k) {
            T* dst = gcols.row(c * kernel + k);
            for (std::size_t t = 0; t < len; ++t) {
                const std::size_t src = t * stride + k;
                dst[t] = src < out_len ? gr[src] : T(0);
            }
        }
    }
    auto gcm = as_matrix(gcols, cout * kernel, len);
    if (gx) as_matrix(*gx, cin, len).noalias() += as_matrix(w, cin, cout * kernel) * gcm;
    if (gw) as_matrix(*gw, cin, cout * kernel).noalias() += as_matrix(x, cin, len) * gcm.transpose();
}

// Transposed 2-D conv over [Cin x F x T] with stride only along time and "same"
// zero padding along frequency. w: [Cin x Cout x kF x kT]. Output [Cout x F x out_len].
template <class T>
Tensor<T> conv_transpose2d_time_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b,
                                        std::size_t stride, std::size_t out_len) {
    const std::size_t cin = x.dim(0), nf = x.dim(1), len = x.dim(2);
    const std::size_t cout = w.dim(1), kf = w.dim(2), kt = w.dim(3);
    const std::ptrdiff_t pad_f = static_cast<std::ptrdiff_t>(kf / 2);
    Tensor<T> y({cout, nf, out_len});
    for (std::size_t co = 0; co < cout; ++co) {
        for (std::size_t ci = 0; ci < cin; ++ci) {
            for (std::size_t f = 0; f < nf; ++f) {
                const T* xr = x.data() + (ci * nf + f) * len;
                for (std::size_t a = 0; a < kf; ++a) {
                    const std::ptrdiff_t fo = static_cast<std::ptrdiff_t>(f) + pad_f - static_cast<std::ptrdiff_t>(a);
                    if (fo < 0 || fo >= static_cast<std::ptrdiff_t>(nf)) continue;
                    T* yr = y.data() + (co * nf + static_cast<std::size_t>(fo)) * out_len;
                    const T* wk = w.data() + ((ci * cout + co) * kf + a) * kt;
                    for (std::size_t t = 0; t < len; ++t) {
                        const T xv = xr[t];
                        if (xv == T(0)) continue;
                        const std::size_t base = t * stride;
                        const std::size_t kmax = std::min(kt, out_len > base ? out_len - base : 0);
                        for (std::size_t k = 0; k < kmax; ++k) yr[base + k] += xv * wk[k];
                    }
                }
            }
        }
        if (b) {
            T* yc = y.data() + co * nf * out_len;
            for (std::size_t i = 0; i < nf * out_len; ++i) yc[i] += (*b)[co];
        }
    }
    return y;
}

template <class T>
void conv_transpose2d_time_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy, std::size_t stride,
                                    Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
    const std::size_t cin = x.dim(0), nf = x.dim(1), len = x.dim(2);
    const std::size_t cout = w.dim(1), kf = w.dim(2), kt = w.dim(3);
    const std::size_t out_len = gy.dim(2);
    const std::ptrdiff_t pad_f = static_cast<std::ptrdiff_t>(kf / 2);
    for (std::size_t co = 0; co < cout; ++co) {
        if (gb) {
            const T* gc = gy.data() + co * nf * out_len;
            T s = 0;
            for (std::size_t i = 0; i < nf * out_len; ++i) s += gc[i];
            (*gb)[co] += s;
        }
        for (std::size_t ci = 0; ci < cin; ++ci) {
            for (std::size_t f = 0; f < nf; ++f) {
                const T* xr = x.data() + (ci * nf + f) * len;
                T* gxr = gx ? gx->data() + (ci * nf + f) * len : nullptr;
                for (std::size_t a = 0; a < kf; ++a) {
                    const std::ptrdiff_t fo = static_cast<std::ptrdiff_t>(f) + pad_f - static_cast<std::ptrdiff_t>(a);
                    if (fo < 0 || fo >= static_cast<std::ptrdiff_t>(nf)) continue;
                    const T* gr = gy.data() + (co * nf + static_cast<std::size_t>(fo)) * out_len;
                    const T* wk = w.data() + ((ci * cout + co) * kf + a) * kt;
                    T* gwk = gw ? gw->data() + ((ci * cout + co) * kf + a) * kt : nullptr;
                    for (std::size_t t = 0; t < len; ++t) {
                        const std::size_t base = t * stride;
                        const std::size_t kmax = std::min(kt, out_len > base ? out_len - base : 0);
                        if (kmax == 0) break;
                        if (gxr) gxr[t] += CMapVec<T>(gr + base, kmax).dot(CMapVec<T>(wk, kmax));
                        if (gwk) {
                            const T xv = xr[t];
                            for (std::size_t k = 0; k < kmax; ++k) gwk[k] += gr[base + k] * xv;
                        }
                    }
                }
            }
        }
    }
}

template <class T>
inline T softplus(T z) {
    return std::max(z, T(0)) + std::log1p(std::exp(-std::abs(z)));
}

template <class T>
inline T sigmoid(T z) {
    if (z >= 0) {
        const T e = std::exp(-z);
        return T(1) / (T(1) + e);
    }
    const T e = std::exp(z);
    return e / (T(1) + e);
}

// Normalises each column of x [D x T] over D.
template <class T>
void layer_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps, Tensor<T>& y,
                        Tensor<T>* xhat, std::vector<T>* inv_std) {
    const std::size_t d = x.dim(0), len = x.dim(1);
    std::vector<T> mean(len, 0), var(len, 0);
    for (std::size_t c = 0; c < d; ++c) {
        const T* r = x.row(c);
        for (std::size_t t = 0; t < len; ++t) mean[t] += r[t];
    }
    for (auto& m : mean) m /= static_cast<T>(d);
    for (std::size_t c = 0; c < d; ++c) {
        const T* r = x.row(c);
        for (std::size_t t = 0; t < len; ++t) {
            const T dv = r[t] - mean[t];
            var[t] += dv * dv;
        }
    }
    std::vector<T> istd(len);
    for (std::size_t t = 0; t < len; ++t) istd[t] = T(1) / std::sqrt(var[t] / static_cast<T>(d) + eps);
    for (std::size_t c = 0; c < d; ++c) {
        const T* r = x.row(c);
        T* yr = y.row(c);
        T* hr = xhat ? xhat->row(c) : nullptr;
        for (std::size_t t = 0; t < len; ++t) {
            const T h = (r[t] - mean[t]) * istd[t];
            if (hr) hr[t] = h;
            yr[t] = gamma[c] * h + beta[c];
        }
    }
    if (inv_std) *inv_std = std::move(istd);
}

// Multi-head scaled dot-product attention on q, k, v [D x T] (already projected).
// Row i attends to columns j <= i when causal. probs (optional) receives [H x T x T].
template <class T>
Tensor<T> attention_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                            bool causal, Tensor<T>* probs) {
    const std::size_t d = q.dim(0), len = q.dim(1);
    const std::size_t dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    Tensor<T> out({d, len});
    if (probs) *probs = Tensor<T>({heads, len, len});
    RowMat<T> scores(len, len);
    for (std::size_t h = 0; h < heads; ++h) {
        auto qh = CMapMat<T>(q.row(h * dh), static_cast<Eigen::Index>(dh), static_cast<Eigen::Index>(len));
        auto kh = CMapMat<T>(k.row(h * dh), static_cast<Eigen::Index>(dh), static_cast<Eigen::Index>(len));
        auto vh = CMapMat<T>(v.row(h * dh), static_cast<Eigen::Index>(dh), static_cast<Eigen::Index>(len));
        scores.noalias() = (qh.transpose() * kh) * scale;
        for (std::size_t i = 0; i < len; ++i) {
            const std::size_t jmax = causal ? i + 1 : len;
            T m = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < jmax; ++j) m = std::max(m, scores(i, j));
            T s = 0;
            for (std::size_t j = 0; j < jmax; ++j) {
                const T e = std::exp(scores(i, j) - m);
                scores(i, j) = e;
                s += e;
            }
            for (std::size_t j = 0; j < jmax; ++j) scores(i, j) /= s;
            for (std::size_t j = jmax; j < len; ++j) scores(i, j) = 0;
        }
        auto oh = MapMat<T>(out.row(h * dh), static_cast<Eigen::Index>(dh), static_cast<Eigen::Index>(len));
        oh.noalias() = vh * scores.transpose();
        if (probs) {
            MapMat<T>(probs->data() + h * len * len, static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(len)) =
                scores;
        }
    }
    return out;
}

template <class T>
void attention_backward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                        const Tensor<T>& probs, const Tensor<T>& gout, Tensor<T>* gq, Tensor<T>* gk, Tensor<T>* gv) {
    const std::size_t d = q.dim(0), len = q.dim(1);
    const std::size_t dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    const auto ei = [](std::size_t n) { return static_cast<Eigen::Index>(n); };
    RowMat<T> dp(len, len);
    for (std::size_t h = 0; h < heads; ++h) {
        auto p = CMapMat<T>(probs.data() + h * len * len, ei(len), ei(len));
        auto qh = CMapMat<T>(q.row(h * dh), ei(dh), ei(len));
        auto kh = CMapMat<T>(k.row(h * dh), ei(dh), ei(len));
        auto vh = CMapMat<T>(v.row(h * dh), ei(dh), ei(len));
        auto go = CMapMat<T>(gout.row(h * dh), ei(dh), ei(len));
        if (gv) MapMat<T>(gv->row(h * dh), ei(dh), ei(len)).noalias() += go * p;
        dp.noalias() = go.transpose() * vh;
        for (std::size_t i = 0; i < len; ++i) {
            T dot = 0;
            for (std::size_t j = 0; j < len; ++j) dot += dp(i, j) * p(i, j);
            for (std::size_t j = 0; j < len; ++j) dp(i, j) = p(i, j) * (dp(i, j) - dot) * scale;
        }
        if (gq) MapMat<T>(gq->row(h * dh), ei(dh), ei(len)).noalias() += kh * dp.transpose();
        if (gk) MapMat<T>(gk->row(h * dh), ei(dh), ei(len)).noalias() += qh * dp;
    }
}

}  // namespace hdn::nn::kernels
