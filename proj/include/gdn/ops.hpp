#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gdn/random.hpp"
#include "gdn/tensor.hpp"

// Forward and backward kernels for the layer kinds the base networks use.
// Every kernel validates shapes and throws ShapeError on mismatch.
namespace gdn::ops {

std::size_t conv_output_extent(std::size_t extent, std::size_t kernel,
                               std::size_t stride, std::size_t padding);

// Direct cross-correlation. input [C_in,H,W], kernels [C_out,C_in,kH,kW].
Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride,
              std::size_t padding);

struct Conv2dGrads {
  Tensor input;
  Tensor kernels;
};

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernels,
                            std::size_t stride, std::size_t padding,
                            const Tensor& grad_output);

// Adds bias[c] to every element of channel c, in place.
void add_channel_bias(Tensor& feature_map, const Tensor& bias);
// Gradient of add_channel_bias w.r.t. the bias: per-channel sum.
Tensor channel_bias_grad(const Tensor& grad_output);

enum class PoolKind { Max, Average };

// Padded positions never win a max and are excluded from an average.
Tensor pool2d(const Tensor& input, PoolKind kind, std::size_t window,
              std::size_t stride, std::size_t padding = 0);
Tensor pool2d_backward(const Tensor& input, PoolKind kind, std::size_t window,
                       std::size_t stride, std::size_t padding,
                       const Tensor& grad_output);

// [C,H,W] -> [C]
Tensor global_average_pool(const Tensor& input);
Tensor global_average_pool_backward(const Shape& input_shape,
                                    const Tensor& grad_output);

// output[j] = sum_i weight[j,i] * input[i] + bias[j]
Tensor linear_affine(const Tensor& input, const Tensor& weight,
                     const Tensor& bias);

struct LinearGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

LinearGrads linear_affine_backward(const Tensor& input, const Tensor& weight,
                                   const Tensor& grad_output);

Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_output);

// Stacks [C_i,H,W] tensors along the channel axis in argument order.
Tensor channel_concat(std::span<const Tensor* const> inputs);
Tensor channel_slice(const Tensor& input, std::size_t first,
                     std::size_t count);

// Inverted dropout. The mask holds 0 for dropped elements and 1/(1-p) for
// survivors, so eval mode (and p == 0) is the identity.
std::vector<double> dropout_mask(std::size_t n, double p, Rng& rng);
Tensor dropout(const Tensor& input, double p, Mode mode, Rng& rng);

Tensor softmax(const Tensor& logits);
double log_sum_exp(std::span<const double> x);

// -x[class] + log(sum_i exp(x[i]))
double cross_entropy_loss(const Tensor& logits, std::size_t label);
// softmax(logits) - onehot(label)
Tensor cross_entropy_grad(const Tensor& logits, std::size_t label);

// Lowest index wins ties.
std::size_t argmax(std::span<const double> values);

}  // namespace gdn::ops
