#include "gdn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gdn/error.hpp"

namespace gdn::ops {
namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " +
                     std::to_string(rank) + ", got shape " +
                     shape_string(t.shape()));
  }
}

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kernel_h, kernel_w;
  std::size_t out_h, out_w;
  std::size_t stride, padding;

  std::size_t patch() const { return channels * kernel_h * kernel_w; }
  std::size_t positions() const { return out_h * out_w; }
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& kernels,
                           std::size_t stride, std::size_t padding) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernels, 4, "conv2d kernels");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (kernels.dim(1) != input.dim(0)) {
    throw ShapeError("conv2d: kernels expect " +
                     std::to_string(kernels.dim(1)) +
                     " input channels, input has " +
                     std::to_string(input.dim(0)));
  }
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2),
                 kernels.dim(2), kernels.dim(3), 0, 0, stride, padding};
  g.out_h = conv_output_extent(g.height, g.kernel_h, stride, padding);
  g.out_w = conv_output_extent(g.width, g.kernel_w, stride, padding);
  return g;
}

// Column matrix [C*kH*kW, outH*outW]; zero where the window hits padding.
void im2col(const double* in, const ConvGeometry& g, double* col) {
  const std::size_t positions = g.positions();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        double* row = col + ((c * g.kernel_h + ky) * g.kernel_w + kx) *
                                positions;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.padding);
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = in + (c * g.height + iy) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.padding);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width))
                          ? 0.0
                          : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeometry& g, double* out) {
  const std::size_t positions = g.positions();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const double* row =
            col + ((c * g.kernel_h + ky) * g.kernel_w + kx) * positions;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          double* dst = out + (c * g.height + iy) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.padding);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) {
              dst[ix] += row[oy * g.out_w + ox];
            }
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 &&
         g.padding == 0;
}

struct PoolGeometry {
  std::size_t channels, height, width, out_h, out_w;
};

PoolGeometry pool_geometry(const Tensor& input, std::size_t window,
                           std::size_t stride, std::size_t padding) {
  require_rank(input, 3, "pool2d input");
  if (window == 0 || stride == 0) {
    throw ShapeError("pool2d: window and stride must be positive");
  }
  if (padding >= window) {
    throw ShapeError("pool2d: padding must be smaller than the window");
  }
  PoolGeometry g{input.dim(0), input.dim(1), input.dim(2), 0, 0};
  if (window > g.height + 2 * padding || window > g.width + 2 * padding) {
    throw ShapeError("pool2d: window " + std::to_string(window) +
                     " exceeds spatial extent of " +
                     shape_string(input.shape()));
  }
  g.out_h = (g.height + 2 * padding - window) / stride + 1;
  g.out_w = (g.width + 2 * padding - window) / stride + 1;
  return g;
}

// Calls visit(channel, oy, ox, in_index_list...) via a window iterator.
template <typename Visit>
void for_each_window(const PoolGeometry& g, std::size_t window,
                     std::size_t stride, std::size_t padding, Visit visit) {
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      const auto y0 = static_cast<std::ptrdiff_t>(oy * stride) -
                      static_cast<std::ptrdiff_t>(padding);
      const auto y_begin = std::max<std::ptrdiff_t>(y0, 0);
      const auto y_end = std::min<std::ptrdiff_t>(
          y0 + static_cast<std::ptrdiff_t>(window),
          static_cast<std::ptrdiff_t>(g.height));
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        const auto x0 = static_cast<std::ptrdiff_t>(ox * stride) -
                        static_cast<std::ptrdiff_t>(padding);
        const auto x_begin = std::max<std::ptrdiff_t>(x0, 0);
        const auto x_end = std::min<std::ptrdiff_t>(
            x0 + static_cast<std::ptrdiff_t>(window),
            static_cast<std::ptrdiff_t>(g.width));
        visit(c, (c * g.out_h + oy) * g.out_w + ox,
              static_cast<std::size_t>(y_begin),
              static_cast<std::size_t>(y_end),
              static_cast<std::size_t>(x_begin),
              static_cast<std::size_t>(x_end));
      }
    }
  }
}

}  // namespace

std::size_t conv_output_extent(std::size_t extent, std::size_t kernel,
                               std::size_t stride, std::size_t padding) {
  if (kernel > extent + 2 * padding) {
    throw ShapeError("kernel extent " + std::to_string(kernel) +
                     " exceeds padded input extent " +
                     std::to_string(extent + 2 * padding));
  }
  return (extent + 2 * padding - kernel) / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride,
              std::size_t padding) {
  const auto g = conv_geometry(input, kernels, stride, padding);
  const std::size_t out_channels = kernels.dim(0);
  Tensor output({out_channels, g.out_h, g.out_w});
  ConstMatrixMap k(kernels.data(), out_channels, g.patch());
  MatrixMap out(output.data(), out_channels, g.positions());
  if (is_pointwise(g)) {
    out.noalias() = k * ConstMatrixMap(input.data(), g.patch(), g.positions());
    return output;
  }
  RowMatrix col(g.patch(), g.positions());
  im2col(input.data(), g, col.data());
  out.noalias() = k * col;
  return output;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernels,
                            std::size_t stride, std::size_t padding,
                            const Tensor& grad_output) {
  const auto g = conv_geometry(input, kernels, stride, padding);
  const std::size_t out_channels = kernels.dim(0);
  require_same_shape(grad_output.shape(), {out_channels, g.out_h, g.out_w},
                     "conv2d_backward grad_output");
  ConstMatrixMap k(kernels.data(), out_channels, g.patch());
  ConstMatrixMap dy(grad_output.data(), out_channels, g.positions());

  Conv2dGrads grads{Tensor(input.shape()), Tensor(kernels.shape())};
  MatrixMap dk(grads.kernels.data(), out_channels, g.patch());
  if (is_pointwise(g)) {
    ConstMatrixMap x(input.data(), g.patch(), g.positions());
    dk.noalias() = dy * x.transpose();
    MatrixMap(grads.input.data(), g.patch(), g.positions()).noalias() =
        k.transpose() * dy;
    return grads;
  }
  RowMatrix col(g.patch(), g.positions());
  im2col(input.data(), g, col.data());
  dk.noalias() = dy * col.transpose();
  col.noalias() = k.transpose() * dy;
  col2im(col.data(), g, grads.input.data());
  return grads;
}

void add_channel_bias(Tensor& feature_map, const Tensor& bias) {
  require_rank(feature_map, 3, "channel bias input");
  if (bias.rank() != 1 || bias.dim(0) != feature_map.dim(0)) {
    throw ShapeError("channel bias of shape " + shape_string(bias.shape()) +
                     " does not match " + shape_string(feature_map.shape()));
  }
  const std::size_t plane = feature_map.dim(1) * feature_map.dim(2);
  for (std::size_t c = 0; c < bias.size(); ++c) {
    double* p = feature_map.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] += bias[c];
  }
}

Tensor channel_bias_grad(const Tensor& grad_output) {
  require_rank(grad_output, 3, "channel bias grad");
  const std::size_t channels = grad_output.dim(0);
  const std::size_t plane = grad_output.dim(1) * grad_output.dim(2);
  Tensor grad({channels});
  for (std::size_t c = 0; c < channels; ++c) {
    double sum = 0.0;
    const double* p = grad_output.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) sum += p[i];
    grad[c] = sum;
  }
  return grad;
}

Tensor pool2d(const Tensor& input, PoolKind kind, std::size_t window,
              std::size_t stride, std::size_t padding) {
  const auto g = pool_geometry(input, window, stride, padding);
  Tensor output({g.channels, g.out_h, g.out_w});
  for_each_window(g, window, stride, padding,
                  [&](std::size_t c, std::size_t out_index, std::size_t y0,
                      std::size_t y1, std::size_t x0, std::size_t x1) {
                    double acc = kind == PoolKind::Max
                                     ? -std::numeric_limits<double>::infinity()
                                     : 0.0;
                    for (std::size_t y = y0; y < y1; ++y) {
                      for (std::size_t x = x0; x < x1; ++x) {
                        const double v = input.at(c, y, x);
                        if (kind == PoolKind::Max) {
                          acc = std::max(acc, v);
                        } else {
                          acc += v;
                        }
                      }
                    }
                    if (kind == PoolKind::Average) {
                      acc /= static_cast<double>((y1 - y0) * (x1 - x0));
                    }
                    output[out_index] = acc;
                  });
  return output;
}

Tensor pool2d_backward(const Tensor& input, PoolKind kind, std::size_t window,
                       std::size_t stride, std::size_t padding,
                       const Tensor& grad_output) {
  const auto g = pool_geometry(input, window, stride, padding);
  require_same_shape(grad_output.shape(), {g.channels, g.out_h, g.out_w},
                     "pool2d_backward grad_output");
  Tensor grad(input.shape());
  for_each_window(
      g, window, stride, padding,
      [&](std::size_t c, std::size_t out_index, std::size_t y0,
          std::size_t y1, std::size_t x0, std::size_t x1) {
        const double dy = grad_output[out_index];
        if (kind == PoolKind::Max) {
          // First maximum in scan order receives the gradient.
          std::size_t best_y = y0, best_x = x0;
          double best = input.at(c, y0, x0);
          for (std::size_t y = y0; y < y1; ++y) {
            for (std::size_t x = x0; x < x1; ++x) {
              if (input.at(c, y, x) > best) {
                best = input.at(c, y, x);
                best_y = y;
                best_x = x;
              }
            }
          }
          grad.at(c, best_y, best_x) += dy;
        } else {
          const double share = dy / static_cast<double>((y1 - y0) * (x1 - x0));
          for (std::size_t y = y0; y < y1; ++y) {
            for (std::size_t x = x0; x < x1; ++x) grad.at(c, y, x) += share;
          }
        }
      });
  return grad;
}

Tensor global_average_pool(const Tensor& input) {
  require_rank(input, 3, "global_average_pool input");
  const std::size_t channels = input.dim(0);
  const std::size_t plane = input.dim(1) * input.dim(2);
  Tensor output({channels});
  for (std::size_t c = 0; c < channels; ++c) {
    double sum = 0.0;
    const double* p = input.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) sum += p[i];
    output[c] = sum / static_cast<double>(plane);
  }
  return output;
}

Tensor global_average_pool_backward(const Shape& input_shape,
                                    const Tensor& grad_output) {
  if (input_shape.size() != 3 || grad_output.rank() != 1 ||
      grad_output.dim(0) != input_shape[0]) {
    throw ShapeError("global_average_pool_backward: shape mismatch");
  }
  Tensor grad(input_shape);
  const std::size_t plane = input_shape[1] * input_shape[2];
  for (std::size_t c = 0; c < input_shape[0]; ++c) {
    const double share = grad_output[c] / static_cast<double>(plane);
    double* p = grad.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] = share;
  }
  return grad;
}

Tensor linear_affine(const Tensor& input, const Tensor& weight,
                     const Tensor& bias) {
  require_rank(input, 1, "linear input");
  require_rank(weight, 2, "linear weight");
  require_rank(bias, 1, "linear bias");
  const std::size_t m = weight.dim(0), n = weight.dim(1);
  if (input.dim(0) != n || bias.dim(0) != m) {
    throw ShapeError("linear: input " + shape_string(input.shape()) +
                     ", weight " + shape_string(weight.shape()) + ", bias " +
                     shape_string(bias.shape()) + " do not agree");
  }
  Tensor output({m});
  Eigen::Map<Eigen::VectorXd> out(output.data(), static_cast<Eigen::Index>(m));
  out.noalias() =
      ConstMatrixMap(weight.data(), m, n) *
      Eigen::Map<const Eigen::VectorXd>(input.data(),
                                        static_cast<Eigen::Index>(n));
  out += Eigen::Map<const Eigen::VectorXd>(bias.data(),
                                           static_cast<Eigen::Index>(m));
  return output;
}

LinearGrads linear_affine_backward(const Tensor& input, const Tensor& weight,
                                   const Tensor& grad_output) {
  require_rank(weight, 2, "linear weight");
  const std::size_t m = weight.dim(0), n = weight.dim(1);
  if (input.rank() != 1 || input.dim(0) != n || grad_output.rank() != 1 ||
      grad_output.dim(0) != m) {
    throw ShapeError("linear_backward: shape mismatch");
  }
  LinearGrads grads{Tensor({n}), Tensor({m, n}), grad_output};
  Eigen::Map<const Eigen::VectorXd> dy(grad_output.data(),
                                       static_cast<Eigen::Index>(m));
  Eigen::Map<const Eigen::VectorXd> x(input.data(),
                                      static_cast<Eigen::Index>(n));
  MatrixMap(grads.weight.data(), m, n).noalias() = dy * x.transpose();
  Eigen::Map<Eigen::VectorXd>(grads.input.data(),
                              static_cast<Eigen::Index>(n))
      .noalias() = ConstMatrixMap(weight.data(), m, n).transpose() * dy;
  return grads;
}

Tensor relu(const Tensor& input) {
  Tensor output(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    output[i] = input[i] > 0.0 ? input[i] : 0.0;
  }
  return output;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_output) {
  require_same_shape(input.shape(), grad_output.shape(), "relu_backward");
  Tensor grad(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    grad[i] = input[i] > 0.0 ? grad_output[i] : 0.0;
  }
  return grad;
}

Tensor channel_concat(std::span<const Tensor* const> inputs) {
  if (inputs.empty()) throw ShapeError("channel_concat: no inputs");
  std::size_t channels = 0;
  const Tensor& first = *inputs.front();
  require_rank(first, 3, "channel_concat input");
  for (const Tensor* t : inputs) {
    require_rank(*t, 3, "channel_concat input");
    if (t->dim(1) != first.dim(1) || t->dim(2) != first.dim(2)) {
      throw ShapeError("channel_concat: spatial mismatch between " +
                       shape_string(first.shape()) + " and " +
                       shape_string(t->shape()));
    }
    channels += t->dim(0);
  }
  Tensor output({channels, first.dim(1), first.dim(2)});
  double* dst = output.data();
  for (const Tensor* t : inputs) dst = std::copy(t->data(), t->data() + t->size(), dst);
  return output;
}

Tensor channel_slice(const Tensor& input, std::size_t first,
                     std::size_t count) {
  require_rank(input, 3, "channel_slice input");
  if (count == 0 || first + count > input.dim(0)) {
    throw ShapeError("channel_slice: range out of bounds");
  }
  const std::size_t plane = input.dim(1) * input.dim(2);
  Tensor output({count, input.dim(1), input.dim(2)});
  std::copy(input.data() + first * plane,
            input.data() + (first + count) * plane, output.data());
  return output;
}

std::vector<double> dropout_mask(std::size_t n, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw UsageError("dropout probability must lie in [0, 1), got " +
                     std::to_string(p));
  }
  std::vector<double> mask(n, 1.0);
  if (p == 0.0) return mask;
  const double keep_scale = 1.0 / (1.0 - p);
  for (double& m : mask) m = uniform01(rng) < p ? 0.0 : keep_scale;
  return mask;
}

Tensor dropout(const Tensor& input, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw UsageError("dropout probability must lie in [0, 1), got " +
                     std::to_string(p));
  }
  if (mode == Mode::Eval || p == 0.0) return input;
  const auto mask = dropout_mask(input.size(), p, rng);
  Tensor output(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) output[i] = input[i] * mask[i];
  return output;
}

double log_sum_exp(std::span<const double> x) {
  const double peak = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  for (double v : x) sum += std::exp(v - peak);
  return peak + std::log(sum);
}

Tensor softmax(const Tensor& logits) {
  if (logits.empty()) throw ShapeError("softmax: empty input");
  const auto x = logits.values();
  const double peak = *std::max_element(x.begin(), x.end());
  Tensor output(logits.shape());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    output[i] = std::exp(x[i] - peak);
    sum += output[i];
  }
  for (double& v : output.values()) v /= sum;
  return output;
}

double cross_entropy_loss(const Tensor& logits, std::size_t label) {
  if (label >= logits.size()) {
    throw ShapeError("cross_entropy_loss: class " + std::to_string(label) +
                " out of range for " + std::to_string(logits.size()) +
                " logits");
  }
  return -logits[label] + log_sum_exp(logits.values());
}

Tensor cross_entropy_grad(const Tensor& logits, std::size_t label) {
  if (label >= logits.size()) {
    throw ShapeError("cross_entropy_grad: class out of range");
  }
  Tensor grad = softmax(logits);
  grad[label] -= 1.0;
  return grad;
}

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(
      std::max_element(values.begin(), values.end()) - values.begin());
}

}  // namespace gdn::ops
