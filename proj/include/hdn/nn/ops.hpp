#pragma once

#include "hdn/nn/autograd.hpp"
#include "hdn/nn/kernels.hpp"

namespace hdn::nn {

namespace detail {
template <class T>
Tensor<T>* grad_if(const Var<T>& v) {
    return v.requires_grad() ? &v.node()->grad_buffer() : nullptr;
}
}  // namespace detail

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    a.value().check_same(b.value(), "add");
    Tensor<T> y = a.value();
    y += b.value();
    return make_result<T>(std::move(y), {a, b}, [a, b](const Tensor<T>& g) {
        if (a.requires_grad()) a.node()->accumulate(g);
        if (b.requires_grad()) b.node()->accumulate(g);
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    a.value().check_same(b.value(), "mul");
    Tensor<T> y = a.value();
    const T* bv = b.value().data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
    return make_result<T>(std::move(y), {a, b}, [a, b](const Tensor<T>& g) {
        if (auto* ga = detail::grad_if(a)) {
            const T* bv = b.value().data();
            T* gp = ga->data();
            for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i] * bv[i];
        }
        if (auto* gb = detail::grad_if(b)) {
            const T* av = a.value().data();
            T* gp = gb->data();
            for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i] * av[i];
        }
    });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> y = a.value();
    y *= s;
    return make_result<T>(std::move(y), {a}, [a, s](const Tensor<T>& g) {
        Tensor<T> ga = g;
        ga *= s;
        a.node()->accumulate(ga);
    });
}

template <class T>
Var<T> relu(const Var<T>& a) {
    Tensor<T> y = a.value();
    T* yp = y.data();
    for (std::size_t i = 0; i < y.size(); ++i) yp[i] = std::max(yp[i], T(0));
    return make_result<T>(std::move(y), {a}, [a](const Tensor<T>& g) {
        T* ga = a.node()->grad_buffer().data();
        const T* av = a.value().data();
        const T* gv = g.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += av[i] > T(0) ? gv[i] : T(0);
    });
}

template <class T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
    Tensor<T> y = a.value();
    T* yp = y.data();
    for (std::size_t i = 0; i < y.size(); ++i) yp[i] = std::max(yp[i], T(0)) + slope * std::min(yp[i], T(0));
    return make_result<T>(std::move(y), {a}, [a, slope](const Tensor<T>& g) {
        T* ga = a.node()->grad_buffer().data();
        const T* av = a.value().data();
        const T* gv = g.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += gv[i] * (av[i] > T(0) ? T(1) : slope);
    });
}

template <class T>
Var<T> softplus(const Var<T>& a) {
    Tensor<T> y = a.value();
    for (auto& v : y.vec()) v = kernels::softplus(v);
    return make_result<T>(std::move(y), {a}, [a](const Tensor<T>& g) {
        T* ga = a.node()->grad_buffer().data();
        const T* av = a.value().data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * kernels::sigmoid(av[i]);
    });
}

// Gated linear unit over the channel axis: [2C x T] -> [C x T], first half gated by
// the sigmoid of the second.
template <class T>
Var<T> glu(const Var<T>& a) {
    const std::size_t c2 = a.dim(0), len = a.dim(1);
    if (c2 % 2 != 0) throw std::invalid_argument("glu: channel count must be even");
    const std::size_t c = c2 / 2;
    Tensor<T> y({c, len});
    const T* av = a.value().data();
    for (std::size_t i = 0; i < c * len; ++i) y[i] = av[i] * kernels::sigmoid(av[c * len + i]);
    return make_result<T>(std::move(y), {a}, [a, c, len](const Tensor<T>& g) {
        T* ga = a.node()->grad_buffer().data();
        const T* x = a.value().data();
        for (std::size_t i = 0; i < c * len; ++i) {
            const T s = kernels::sigmoid(x[c * len + i]);
            ga[i] += g[i] * s;
            ga[c * len + i] += g[i] * x[i] * s * (T(1) - s);
        }
    });
}

// Elementwise log(1 + x) for x >= 0; used as input compression.
template <class T>
Var<T> log1p(const Var<T>& a) {
    Tensor<T> y = a.value();
    for (auto& v : y.vec()) v = std::log1p(v);
    return make_result<T>(std::move(y), {a}, [a](const Tensor<T>& g) {
        T* ga = a.node()->grad_buffer().data();
        const T* av = a.value().data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (T(1) + av[i]);
    });
}

template <class T>
Var<T> conv1d(const Var<T>& x, const Var<T>& w, const Var<T>& b, std::size_t stride, std::size_t pad_l,
              std::size_t pad_r) {
    Tensor<T> y = kernels::conv1d_forward(x.value(), w.value(), b.defined() ? &b.value() : nullptr, stride, pad_l,
                                          pad_r);
    std::vector<Var<T>> inputs{x, w};
    if (b.defined()) inputs.push_back(b);
    return make_result<T>(std::move(y), inputs, [x, w, b, stride, pad_l](const Tensor<T>& g) {
        kernels::conv1d_backward(x.value(), w.value(), g, stride, pad_l, detail::grad_if(x), detail::grad_if(w),
                                 b.defined() ? detail::grad_if(b) : nullptr);
    });
}

template <class T>
Var<T> conv_transpose1d(const Var<T>& x, const Var<T>& w, const Var<T>& b, std::size_t stride, std::size_t out_len) {
    Tensor<T> y =
        kernels::conv_transpose1d_forward(x.value(), w.value(), b.defined() ? &b.value() : nullptr, stride, out_len);
    std::vector<Var<T>> inputs{x, w};
    if (b.defined()) inputs.push_back(b);
    return make_result<T>(std::move(y), inputs, [x, w, b, stride](const Tensor<T>& g) {
        kernels::conv_transpose1d_backward(x.value(), w.value(), g, stride, detail::grad_if(x), detail::grad_if(w),
                                           b.defined() ? detail::grad_if(b) : nullptr);
    });
}

template <class T>
Var<T> conv_transpose2d_time(const Var<T>& x, const Var<T>& w, const Var<T>& b, std::size_t stride,
                             std::size_t out_len) {
    Tensor<T> y = kernels::conv_transpose2d_time_forward(x.value(), w.value(), b.defined() ? &b.value() : nullptr,
                                                         stride, out_len);
    std::vector<Var<T>> inputs{x, w};
    if (b.defined()) inputs.push_back(b);
    return make_result<T>(std::move(y), inputs, [x, w, b, stride](const Tensor<T>& g) {
        kernels::conv_transpose2d_time_backward(x.value(), w.value(), g, stride, detail::grad_if(x),
                                                detail::grad_if(w), b.defined() ? detail::grad_if(b) : nullptr);
    });
}

template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
    const std::size_t d = x.dim(0), len = x.dim(1);
    Tensor<T> y({d, len});
    Tensor<T> xhat({d, len});
    std::vector<T> istd;
    kernels::layer_norm_forward(x.value(), gamma.value(), beta.value(), eps, y, &xhat, &istd);
    return make_result<T>(std::move(y), {x, gamma, beta},
                          [x, gamma, beta, xhat = std::move(xhat), istd = std::move(istd), d, len](const Tensor<T>& g) {
                              if (auto* gg = detail::grad_if(gamma)) {
                                  for (std::size_t c = 0; c < d; ++c)
                                      for (std::size_t t = 0; t < len; ++t) (*gg)[c] += g.at(c, t) * xhat.at(c, t);
                              }
                              if (auto* gb = detail::grad_if(beta)) {
                                  for (std::size_t c = 0; c < d; ++c)
                                      for (std::size_t t = 0; t < len; ++t) (*gb)[c] += g.at(c, t);
                              }
                              if (auto* gx = detail::grad_if(x)) {
                                  const T inv_d = T(1) / static_cast<T>(d);
                                  for (std::size_t t = 0; t < len; ++t) {
                                      T sum_g = 0, sum_gx = 0;
                                      for (std::size_t c = 0; c < d; ++c) {
                                          const T gh = g.at(c, t) * gamma.value()[c];
                                          sum_g += gh;
                                          sum_gx += gh * xhat.at(c, t);
                                      }
                                      for (std::size_t c = 0; c < d; ++c) {
                                          const T gh = g.at(c, t) * gamma.value()[c];
                                          gx->at(c, t) +=
                                              istd[t] * (gh - inv_d * sum_g - xhat.at(c, t) * inv_d * sum_gx);
                                      }
                                  }
                              }
                          });
}

template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t heads, bool causal) {
    if (q.dim(0) % heads != 0) throw std::invalid_argument("attention: model dim not divisible by heads");
    Tensor<T> probs;
    Tensor<T> y = kernels::attention_forward(q.value(), k.value(), v.value(), heads, causal,
                                             grad_enabled() ? &probs : nullptr);
    return make_result<T>(std::move(y), {q, k, v}, [q, k, v, heads, probs = std::move(probs)](const Tensor<T>& g) {
        kernels::attention_backward(q.value(), k.value(), v.value(), heads, probs, g, detail::grad_if(q),
                                    detail::grad_if(k), detail::grad_if(v));
    });
}

// Rows [start, start+count) of a [C x T] tensor.
template <class T>
Var<T> slice_rows(const Var<T>& x, std::size_t start, std::size_t count) {
    const std::size_t len = x.dim(1);
    if (start + count > x.dim(0)) throw std::invalid_argument("slice_rows out of range");
    Tensor<T> y({count, len});
    std::copy_n(x.value().row(start), count * len, y.data());
    return make_result<T>(std::move(y), {x}, [x, start, count, len](const Tensor<T>& g) {
        auto& gx = x.node()->grad_buffer();
        for (std::size_t i = 0; i < count * len; ++i) gx[start * len + i] += g[i];
    });
}

// Stacks [Ca x T] and [Cb x T] into [(Ca+Cb) x T].
template <class T>
Var<T> concat_rows(const Var<T>& a, const Var<T>& b) {
    if (a.dim(1) != b.dim(1)) throw std::invalid_argument("concat_rows: time length mismatch");
    const std::size_t na = a.value().size();
    Tensor<T> y({a.dim(0) + b.dim(0), a.dim(1)});
    std::copy(a.value().vec().begin(), a.value().vec().end(), y.data());
    std::copy(b.value().vec().begin(), b.value().vec().end(), y.data() + na);
    return make_result<T>(std::move(y), {a, b}, [a, b, na](const Tensor<T>& g) {
        if (auto* ga = detail::grad_if(a))
            for (std::size_t i = 0; i < na; ++i) (*ga)[i] += g[i];
        if (auto* gb = detail::grad_if(b))
            for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += g[na + i];
    });
}

// Time-axis crop/extend of [C x T]: keeps columns [0, min(T, len)) and zero-fills the rest.
template <class T>
Var<T> fit_cols(const Var<T>& x, std::size_t len) {
    const std::size_t rows = x.dim(0), src_len = x.dim(1);
    if (src_len == len) return x;
    const std::size_t keep = std::min(src_len, len);
    Tensor<T> y({rows, len});
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.value().row(r), keep, y.row(r));
    return make_result<T>(std::move(y), {x}, [x, rows, keep](const Tensor<T>& g) {
        auto& gx = x.node()->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t t = 0; t < keep; ++t) gx.at(r, t) += g.at(r, t);
    });
}

// Broadcasts a [1 x T] row over the channels of x [C x T] and multiplies.
template <class T>
Var<T> mul_row(const Var<T>& x, const Var<T>& row) {
    const std::size_t rows = x.dim(0), len = x.dim(1);
    if (row.dim(0) != 1 || row.dim(1) != len) throw std::invalid_argument("mul_row: shape mismatch");
    Tensor<T> y = x.value();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t t = 0; t < len; ++t) y.at(r, t) *= row.value()[t];
    return make_result<T>(std::move(y), {x, row}, [x, row, rows, len](const Tensor<T>& g) {
        if (auto* gx = detail::grad_if(x))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t t = 0; t < len; ++t) gx->at(r, t) += g.at(r, t) * row.value()[t];
        if (auto* gr = detail::grad_if(row))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t t = 0; t < len; ++t) (*gr)[t] += g.at(r, t) * x.value().at(r, t);
    });
}

template <class T>
Var<T> add_row(const Var<T>& x, const Var<T>& row) {
    const std::size_t rows = x.dim(0), len = x.dim(1);
    if (row.dim(0) != 1 || row.dim(1) != len) throw std::invalid_argument("add_row: shape mismatch");
    Tensor<T> y = x.value();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t t = 0; t < len; ++t) y.at(r, t) += row.value()[t];
    return make_result<T>(std::move(y), {x, row}, [x, row, rows, len](const Tensor<T>& g) {
        if (auto* gx = detail::grad_if(x)) *gx += g;
        if (auto* gr = detail::grad_if(row))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t t = 0; t < len; ++t) (*gr)[t] += g.at(r, t);
    });
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    Tensor<T> y = x.value();
    y.reshape(shape);
    return make_result<T>(std::move(y), {x}, [x](const Tensor<T>& g) {
        Tensor<T> gx = g;
        gx.reshape(x.shape());
        x.node()->accumulate(gx);
    });
}

// Scalar objective computed outside the graph. fn returns the value and dvalue/dx.
template <class T, class Fn>
Var<T> external_objective(const Var<T>& x, Fn&& fn) {
    auto [value, grad] = fn(x.value());
    Tensor<T> y({1}, {static_cast<T>(value)});
    return make_result<T>(std::move(y), {x}, [x, grad = std::move(grad)](const Tensor<T>& g) {
        Tensor<T> gx = grad;
        gx *= g[0];
        x.node()->accumulate(gx);
    });
}

template <class T>
Var<T> sum_scalars(const std::vector<Var<T>>& terms) {
    T total = 0;
    for (const auto& t : terms) total += t.value()[0];
    return make_result<T>(Tensor<T>({1}, {total}), terms, [terms](const Tensor<T>& g) {
        for (const auto& t : terms)
            if (t.requires_grad()) t.node()->accumulate(g);
    });
}

}  // namespace hdn::nn
