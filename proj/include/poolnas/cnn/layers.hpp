#pragma once

#include "poolnas/cnn/tensor.hpp"

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

// Forward and backward kernels. Backward functions accumulate into parameter
// gradients and overwrite input gradients.
namespace poolnas::cnn {

/// Same-padded stride-1 convolution without bias; `weight` is [out][in][k][k], k odd.
template <typename T>
void conv_forward(const Tensor<T>& x, std::span<const T> weight, int out_channels, int k,
                  Tensor<T>& y);
template <typename T>
void conv_backward(const Tensor<T>& x, std::span<const T> weight, int out_channels, int k,
                   const Tensor<T>& dy, std::span<T> dweight, Tensor<T>* dx);

template <typename T>
struct BatchNormCache {
    std::vector<T> inv_std;
    Tensor<T> xhat;
};

/// Normalises each channel with batch statistics. When `running_mean` is
/// given, running statistics move by `momentum` towards the batch values
/// (unbiased variance).
template <typename T>
void batchnorm_forward_train(const Tensor<T>& x, std::span<const T> gamma,
                             std::span<const T> beta, T eps, BatchNormCache<T>& cache,
                             Tensor<T>& y, std::span<T> running_mean = {},
                             std::span<T> running_var = {}, T momentum = T(0.1));
template <typename T>
void batchnorm_forward_eval(const Tensor<T>& x, std::span<const T> gamma,
                            std::span<const T> beta, std::span<const T> mean,
                            std::span<const T> var, T eps, Tensor<T>& y);
template <typename T>
void batchnorm_backward(const BatchNormCache<T>& cache, std::span<const T> gamma,
                        const Tensor<T>& dy, std::span<T> dgamma, std::span<T> dbeta,
                        Tensor<T>& dx);

/// Mask is 1 where x > 0; exact zeros count as inactive.
template <typename T>
void relu_forward(const Tensor<T>& x, Tensor<T>& y, std::vector<std::uint8_t>& mask);
template <typename T>
void relu_backward(const std::vector<std::uint8_t>& mask, const Tensor<T>& dy, Tensor<T>& dx);

/// 2x2 stride-2; h and w must be even. `argmax` holds 0..3 per output, first maximum wins.
template <typename T>
void maxpool_forward(const Tensor<T>& x, Tensor<T>& y, std::vector<std::uint8_t>& argmax);
template <typename T>
void maxpool_backward(const std::vector<std::uint8_t>& argmax, const Tensor<T>& dy,
                      Tensor<T>& dx);

template <typename T>
void avgpool_forward(const Tensor<T>& x, Tensor<T>& y);
template <typename T>
void avgpool_backward(const Tensor<T>& dy, Tensor<T>& dx);

/// (n, c, h, w) -> (n, c, 1, 1).
template <typename T>
void global_avgpool_forward(const Tensor<T>& x, Tensor<T>& y);
template <typename T>
void global_avgpool_backward(const Tensor<T>& dy, int h, int w, Tensor<T>& dx);

/// y = x W^T + b with W [out][in]; x is (n, in, 1, 1).
template <typename T>
void linear_forward(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias,
                    int out_features, Tensor<T>& y);
template <typename T>
void linear_backward(const Tensor<T>& x, std::span<const T> weight, const Tensor<T>& dy,
                     std::span<T> dweight, std::span<T> dbias, Tensor<T>* dx);

/// Mean cross-entropy over the batch; writes d loss / d logits.
template <typename T>
T softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels, Tensor<T>& dlogits);

/// Fraction of rows whose argmax (first maximum) equals the label.
template <typename T>
double accuracy_from_logits(const Tensor<T>& logits, std::span<const int> labels);

/// Throws NumericError naming `where` if any value is NaN or infinite.
template <typename T>
void check_finite(const Tensor<T>& t, std::string_view where);

}  // namespace poolnas::cnn
