#include "poolnas/cnn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace poolnas::cnn {

namespace {

void require(bool ok, const char* what) {
    if (!ok) throw ValidationError(what);
}

// Valid output-column range [x0, x1) for a horizontal tap offset.
inline void column_range(int w, int offset, int& x0, int& x1) {
    x0 = std::max(0, -offset);
    x1 = std::min(w, w - offset);
}

}  // namespace

template <typename T>
void conv_forward(const Tensor<T>& x, std::span<const T> weight, int out_channels, int k,
                  Tensor<T>& y) {
    require(k % 2 == 1, "convolution kernel size must be odd");
    require(weight.size() == static_cast<std::size_t>(out_channels) * x.c * k * k,
            "convolution weight size does not match channels");
    y = Tensor<T>(x.n, out_channels, x.h, x.w);
    const int pad = k / 2;
    for (int n = 0; n < x.n; ++n)
        for (int oc = 0; oc < out_channels; ++oc) {
            T* out = y.plane(n, oc);
            for (int ic = 0; ic < x.c; ++ic) {
                const T* in = x.plane(n, ic);
                const T* wk = weight.data() + (static_cast<std::size_t>(oc) * x.c + ic) * k * k;
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const T wv = wk[ky * k + kx];
                        const int oy = ky - pad, ox = kx - pad;
                        int x0, x1;
                        column_range(x.w, ox, x0, x1);
                        const int y0 = std::max(0, -oy), y1 = std::min(x.h, x.h - oy);
                        for (int yy = y0; yy < y1; ++yy) {
                            T* orow = out + static_cast<std::size_t>(yy) * x.w;
                            const T* irow = in + static_cast<std::size_t>(yy + oy) * x.w + ox;
                            for (int xx = x0; xx < x1; ++xx) orow[xx] += wv * irow[xx];
                        }
                    }
            }
        }
}

template <typename T>
void conv_backward(const Tensor<T>& x, std::span<const T> weight, int out_channels, int k,
                   const Tensor<T>& dy, std::span<T> dweight, Tensor<T>* dx) {
    require(dy.n == x.n && dy.c == out_channels && dy.h == x.h && dy.w == x.w,
            "convolution output gradient has the wrong shape");
    require(dweight.size() == weight.size(), "convolution weight gradient size mismatch");
    if (dx) *dx = Tensor<T>(x.n, x.c, x.h, x.w);
    const int pad = k / 2;
    for (int n = 0; n < x.n; ++n)
        for (int oc = 0; oc < out_channels; ++oc) {
            const T* g = dy.plane(n, oc);
            for (int ic = 0; ic < x.c; ++ic) {
                const T* in = x.plane(n, ic);
                T* din = dx ? dx->plane(n, ic) : nullptr;
                const std::size_t base = (static_cast<std::size_t>(oc) * x.c + ic) * k * k;
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const T wv = weight[base + ky * k + kx];
                        const int oy = ky - pad, ox = kx - pad;
                        int x0, x1;
                        column_range(x.w, ox, x0, x1);
                        const int y0 = std::max(0, -oy), y1 = std::min(x.h, x.h - oy);
                        T acc = 0;
                        for (int yy = y0; yy < y1; ++yy) {
                            const T* grow = g + static_cast<std::size_t>(yy) * x.w;
                            const std::size_t src = static_cast<std::size_t>(yy + oy) * x.w + ox;
                            const T* irow = in + src;
                            for (int xx = x0; xx < x1; ++xx) acc += grow[xx] * irow[xx];
                            if (din) {
                                T* drow = din + src;
                                for (int xx = x0; xx < x1; ++xx) drow[xx] += wv * grow[xx];
                            }
                        }
                        dweight[base + ky * k + kx] += acc;
                    }
            }
        }
}

template <typename T>
void batchnorm_forward_train(const Tensor<T>& x, std::span<const T> gamma,
                             std::span<const T> beta, T eps, BatchNormCache<T>& cache,
                             Tensor<T>& y, std::span<T> running_mean, std::span<T> running_var,
                             T momentum) {
    require(gamma.size() == static_cast<std::size_t>(x.c) && beta.size() == gamma.size(),
            "batch norm parameters do not match channels");
    const std::size_t count = static_cast<std::size_t>(x.n) * x.plane();
    require(count >= 2, "batch norm needs at least two values per channel");
    y = Tensor<T>(x.n, x.c, x.h, x.w);
    cache.xhat = Tensor<T>(x.n, x.c, x.h, x.w);
    cache.inv_std.assign(x.c, T(0));
    for (int c = 0; c < x.c; ++c) {
        T mean = 0;
        for (int n = 0; n < x.n; ++n) {
            const T* p = x.plane(n, c);
            for (std::size_t i = 0; i < x.plane(); ++i) mean += p[i];
        }
        mean /= static_cast<T>(count);
        T var = 0;
        for (int n = 0; n < x.n; ++n) {
            const T* p = x.plane(n, c);
            for (std::size_t i = 0; i < x.plane(); ++i) var += (p[i] - mean) * (p[i] - mean);
        }
        var /= static_cast<T>(count);
        const T inv = T(1) / std::sqrt(var + eps);
        cache.inv_std[c] = inv;
        for (int n = 0; n < x.n; ++n) {
            const T* p = x.plane(n, c);
            T* xh = cache.xhat.plane(n, c);
            T* out = y.plane(n, c);
            for (std::size_t i = 0; i < x.plane(); ++i) {
                xh[i] = (p[i] - mean) * inv;
                out[i] = gamma[c] * xh[i] + beta[c];
            }
        }
        if (!running_mean.empty()) {
            const T unbiased = var * static_cast<T>(count) / static_cast<T>(count - 1);
            running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * mean;
            running_var[c] = (T(1) - momentum) * running_var[c] + momentum * unbiased;
        }
    }
}

template <typename T>
void batchnorm_forward_eval(const Tensor<T>& x, std::span<const T> gamma,
                            std::span<const T> beta, std::span<const T> mean,
                            std::span<const T> var, T eps, Tensor<T>& y) {
    require(gamma.size() == static_cast<std::size_t>(x.c) && mean.size() == gamma.size(),
            "batch norm parameters do not match channels");
    y = Tensor<T>(x.n, x.c, x.h, x.w);
    for (int c = 0; c < x.c; ++c) {
        const T scale = gamma[c] / std::sqrt(var[c] + eps);
        const T shift = beta[c] - mean[c] * scale;
        for (int n = 0; n < x.n; ++n) {
            const T* p = x.plane(n, c);
            T* out = y.plane(n, c);
            for (std::size_t i = 0; i < x.plane(); ++i) out[i] = p[i] * scale + shift;
        }
    }
}

template <typename T>
void batchnorm_backward(const BatchNormCache<T>& cache, std::span<const T> gamma,
                        const Tensor<T>& dy, std::span<T> dgamma, std::span<T> dbeta,
                        Tensor<T>& dx) {
    const Tensor<T>& xh = cache.xhat;
    require(dy.same_shape(xh), "batch norm output gradient has the wrong shape");
    dx = Tensor<T>(dy.n, dy.c, dy.h, dy.w);
    const T m = static_cast<T>(static_cast<std::size_t>(dy.n) * dy.plane());
    for (int c = 0; c < dy.c; ++c) {
        T sum_dy = 0, sum_dy_xh = 0;
        for (int n = 0; n < dy.n; ++n) {
            const T* g = dy.plane(n, c);
            const T* h = xh.plane(n, c);
            for (std::size_t i = 0; i < dy.plane(); ++i) {
                sum_dy += g[i];
                sum_dy_xh += g[i] * h[i];
            }
        }
        dgamma[c] += sum_dy_xh;
        dbeta[c] += sum_dy;
        const T k = gamma[c] * cache.inv_std[c] / m;
        for (int n = 0; n < dy.n; ++n) {
            const T* g = dy.plane(n, c);
            const T* h = xh.plane(n, c);
            T* d = dx.plane(n, c);
            for (std::size_t i = 0; i < dy.plane(); ++i)
                d[i] = k * (m * g[i] - sum_dy - h[i] * sum_dy_xh);
        }
    }
}

template <typename T>
void relu_forward(const Tensor<T>& x, Tensor<T>& y, std::vector<std::uint8_t>& mask) {
    y = x;
    mask.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        mask[i] = x.data[i] > T(0);
        if (!mask[i]) y.data[i] = T(0);
    }
}

template <typename T>
void relu_backward(const std::vector<std::uint8_t>& mask, const Tensor<T>& dy, Tensor<T>& dx) {
    require(mask.size() == dy.size(), "relu mask does not match gradient");
    dx = dy;
    for (std::size_t i = 0; i < dy.size(); ++i)
        if (!mask[i]) dx.data[i] = T(0);
}

template <typename T>
void maxpool_forward(const Tensor<T>& x, Tensor<T>& y, std::vector<std::uint8_t>& argmax) {
    require(x.h % 2 == 0 && x.w % 2 == 0 && x.h >= 2 && x.w >= 2,
            "2x2 pooling needs even spatial size of at least 2");
    y = Tensor<T>(x.n, x.c, x.h / 2, x.w / 2);
    argmax.resize(y.size());
    std::size_t o = 0;
    for (int n = 0; n < x.n; ++n)
        for (int c = 0; c < x.c; ++c)
            for (int yy = 0; yy < y.h; ++yy)
                for (int xx = 0; xx < y.w; ++xx, ++o) {
                    const T v[4] = {x.at(n, c, 2 * yy, 2 * xx), x.at(n, c, 2 * yy, 2 * xx + 1),
                                    x.at(n, c, 2 * yy + 1, 2 * xx),
                                    x.at(n, c, 2 * yy + 1, 2 * xx + 1)};
                    std::uint8_t best = 0;
                    for (std::uint8_t i = 1; i < 4; ++i)
                        if (v[i] > v[best]) best = i;
                    argmax[o] = best;
                    y.data[o] = v[best];
                }
}

template <typename T>
void maxpool_backward(const std::vector<std::uint8_t>& argmax, const Tensor<T>& dy,
                      Tensor<T>& dx) {
    require(argmax.size() == dy.size(), "max-pool indices do not match gradient");
    dx = Tensor<T>(dy.n, dy.c, dy.h * 2, dy.w * 2);
    std::size_t o = 0;
    for (int n = 0; n < dy.n; ++n)
        for (int c = 0; c < dy.c; ++c)
            for (int yy = 0; yy < dy.h; ++yy)
                for (int xx = 0; xx < dy.w; ++xx, ++o) {
                    const int a = argmax[o];
                    dx.at(n, c, 2 * yy + a / 2, 2 * xx + a % 2) = dy.data[o];
                }
}

template <typename T>
void avgpool_forward(const Tensor<T>& x, Tensor<T>& y) {
    require(x.h % 2 == 0 && x.w % 2 == 0 && x.h >= 2 && x.w >= 2,
            "2x2 pooling needs even spatial size of at least 2");
    y = Tensor<T>(x.n, x.c, x.h / 2, x.w / 2);
    for (int n = 0; n < x.n; ++n)
        for (int c = 0; c < x.c; ++c)
            for (int yy = 0; yy < y.h; ++yy)
                for (int xx = 0; xx < y.w; ++xx)
                    y.at(n, c, yy, xx) =
                        T(0.25) * (x.at(n, c, 2 * yy, 2 * xx) + x.at(n, c, 2 * yy, 2 * xx + 1) +
                                   x.at(n, c, 2 * yy + 1, 2 * xx) +
                                   x.at(n, c, 2 * yy + 1, 2 * xx + 1));
}

template <typename T>
void avgpool_backward(const Tensor<T>& dy, Tensor<T>& dx) {
    dx = Tensor<T>(dy.n, dy.c, dy.h * 2, dy.w * 2);
    for (int n = 0; n < dy.n; ++n)
        for (int c = 0; c < dy.c; ++c)
            for (int yy = 0; yy < dy.h; ++yy)
                for (int xx = 0; xx < dy.w; ++xx) {
                    const T g = T(0.25) * dy.at(n, c, yy, xx);
                    dx.at(n, c, 2 * yy, 2 * xx) = g;
                    dx.at(n, c, 2 * yy, 2 * xx + 1) = g;
                    dx.at(n, c, 2 * yy + 1, 2 * xx) = g;
                    dx.at(n, c, 2 * yy + 1, 2 * xx + 1) = g;
                }
}

template <typename T>
void global_avgpool_forward(const Tensor<T>& x, Tensor<T>& y) {
    y = Tensor<T>(x.n, x.c, 1, 1);
    const T scale = T(1) / static_cast<T>(x.plane());
    for (int n = 0; n < x.n; ++n)
        for (int c = 0; c < x.c; ++c) {
            const T* p = x.plane(n, c);
            T s = 0;
            for (std::size_t i = 0; i < x.plane(); ++i) s += p[i];
            y.at(n, c, 0, 0) = s * scale;
        }
}

template <typename T>
void global_avgpool_backward(const Tensor<T>& dy, int h, int w, Tensor<T>& dx) {
    dx = Tensor<T>(dy.n, dy.c, h, w);
    const T scale = T(1) / static_cast<T>(dx.plane());
    for (int n = 0; n < dx.n; ++n)
        for (int c = 0; c < dx.c; ++c) {
            T* p = dx.plane(n, c);
            const T g = dy.at(n, c, 0, 0) * scale;
            for (std::size_t i = 0; i < dx.plane(); ++i) p[i] = g;
        }
}

template <typename T>
void linear_forward(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias,
                    int out_features, Tensor<T>& y) {
    const int in = x.c * x.h * x.w;
    require(weight.size() == static_cast<std::size_t>(out_features) * in &&
                bias.size() == static_cast<std::size_t>(out_features),
            "linear layer parameters do not match features");
    y = Tensor<T>(x.n, out_features, 1, 1);
    for (int n = 0; n < x.n; ++n) {
        const T* xi = x.data.data() + static_cast<std::size_t>(n) * in;
        for (int o = 0; o < out_features; ++o) {
            const T* wr = weight.data() + static_cast<std::size_t>(o) * in;
            T s = bias[o];
            for (int i = 0; i < in; ++i) s += wr[i] * xi[i];
            y.data[static_cast<std::size_t>(n) * out_features + o] = s;
        }
    }
}

template <typename T>
void linear_backward(const Tensor<T>& x, std::span<const T> weight, const Tensor<T>& dy,
                     std::span<T> dweight, std::span<T> dbias, Tensor<T>* dx) {
    const int in = x.c * x.h * x.w;
    const int out = dy.c;
    if (dx) *dx = Tensor<T>(x.n, x.c, x.h, x.w);
    for (int n = 0; n < x.n; ++n) {
        const T* xi = x.data.data() + static_cast<std::size_t>(n) * in;
        for (int o = 0; o < out; ++o) {
            const T g = dy.data[static_cast<std::size_t>(n) * out + o];
            dbias[o] += g;
            T* dw = dweight.data() + static_cast<std::size_t>(o) * in;
            const T* wr = weight.data() + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) dw[i] += g * xi[i];
            if (dx) {
                T* d = dx->data.data() + static_cast<std::size_t>(n) * in;
                for (int i = 0; i < in; ++i) d[i] += g * wr[i];
            }
        }
    }
}

template <typename T>
T softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels, Tensor<T>& dlogits) {
    const int k = logits.c * logits.h * logits.w;
    require(labels.size() == static_cast<std::size_t>(logits.n), "one label per sample");
    dlogits = Tensor<T>(logits.n, logits.c, logits.h, logits.w);
    T loss = 0;
    const T inv_n = T(1) / static_cast<T>(logits.n);
    for (int n = 0; n < logits.n; ++n) {
        const int y = labels[n];
        require(y >= 0 && y < k, "label out of range");
        const T* z = logits.data.data() + static_cast<std::size_t>(n) * k;
        T* d = dlogits.data.data() + static_cast<std::size_t>(n) * k;
        const T top = *std::max_element(z, z + k);
        T sum = 0;
        for (int i = 0; i < k; ++i) sum += std::exp(z[i] - top);
        const T log_sum = std::log(sum);
        loss += log_sum - (z[y] - top);
        for (int i = 0; i < k; ++i) d[i] = std::exp(z[i] - top - log_sum) * inv_n;
        d[y] -= inv_n;
    }
    return loss * inv_n;
}

template <typename T>
double accuracy_from_logits(const Tensor<T>& logits, std::span<const int> labels) {
    const int k = logits.c * logits.h * logits.w;
    require(labels.size() == static_cast<std::size_t>(logits.n), "one label per sample");
    int correct = 0;
    for (int n = 0; n < logits.n; ++n) {
        const T* z = logits.data.data() + static_cast<std::size_t>(n) * k;
        correct += static_cast<int>(std::max_element(z, z + k) - z) == labels[n];
    }
    return static_cast<double>(correct) / logits.n;
}

template <typename T>
void check_finite(const Tensor<T>& t, std::string_view where) {
    for (T v : t.data)
        if (!std::isfinite(v)) throw NumericError("non-finite value in " + std::string(where));
}

#define POOLNAS_INSTANTIATE(T)                                                                  \
    template void conv_forward<T>(const Tensor<T>&, std::span<const T>, int, int, Tensor<T>&);  \
    template void conv_backward<T>(const Tensor<T>&, std::span<const T>, int, int,              \
                                   const Tensor<T>&, std::span<T>, Tensor<T>*);                 \
    template void batchnorm_forward_train<T>(const Tensor<T>&, std::span<const T>,              \
                                             std::span<const T>, T, BatchNormCache<T>&,         \
                                             Tensor<T>&, std::span<T>, std::span<T>, T);        \
    template void batchnorm_forward_eval<T>(const Tensor<T>&, std::span<const T>,               \
                                            std::span<const T>, std::span<const T>,             \
                                            std::span<const T>, T, Tensor<T>&);                 \
    template void batchnorm_backward<T>(const BatchNormCache<T>&, std::span<const T>,           \
                                        const Tensor<T>&, std::span<T>, std::span<T>,           \
                                        Tensor<T>&);                                            \
    template void relu_forward<T>(const Tensor<T>&, Tensor<T>&, std::vector<std::uint8_t>&);    \
    template void relu_backward<T>(const std::vector<std::uint8_t>&, const Tensor<T>&,          \
                                   Tensor<T>&);                                                 \
    template void maxpool_forward<T>(const Tensor<T>&, Tensor<T>&, std::vector<std::uint8_t>&); \
    template void maxpool_backward<T>(const std::vector<std::uint8_t>&, const Tensor<T>&,       \
                                      Tensor<T>&);                                              \
    template void avgpool_forward<T>(const Tensor<T>&, Tensor<T>&);                             \
    template void avgpool_backward<T>(const Tensor<T>&, Tensor<T>&);                            \
    template void global_avgpool_forward<T>(const Tensor<T>&, Tensor<T>&);                      \
    template void global_avgpool_backward<T>(const Tensor<T>&, int, int, Tensor<T>&);           \
    template void linear_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>,   \
                                    int, Tensor<T>&);                                           \
    template void linear_backward<T>(const Tensor<T>&, std::span<const T>, const Tensor<T>&,    \
                                     std::span<T>, std::span<T>, Tensor<T>*);                   \
    template T softmax_cross_entropy<T>(const Tensor<T>&, std::span<const int>, Tensor<T>&);    \
    template double accuracy_from_logits<T>(const Tensor<T>&, std::span<const int>);            \
    template void check_finite<T>(const Tensor<T>&, std::string_view);

POOLNAS_INSTANTIATE(float)
POOLNAS_INSTANTIATE(double)

#undef POOLNAS_INSTANTIATE

}  // namespace poolnas::cnn
