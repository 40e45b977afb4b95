#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "gdn/graph.hpp"
#include "gdn/random.hpp"

namespace gdn {

constexpr std::size_t kNumClasses = 6;

enum class Family { GoogLeNetLike, DenseNetLike };

std::string family_name(Family family);
Family parse_family(const std::string& name);

// Four parallel branches on the same input: 1x1; 1x1 -> 3x3; 1x1 -> 5x5;
// 3x3 max pool -> 1x1. Every conv is followed by ReLU, spatial size is kept.
struct InceptionBlockSpec {
  std::size_t branch1x1 = 0;
  std::size_t branch3x3_reduce = 0;
  std::size_t branch3x3 = 0;
  std::size_t branch5x5_reduce = 0;
  std::size_t branch5x5 = 0;
  std::size_t pool_proj = 0;

  // Every branch (and every reduction) `width` channels wide.
  static InceptionBlockSpec uniform(std::size_t width);
  std::size_t output_channels() const;
};

// num_layers layers of ReLU -> 3x3 conv (pad 1), each reading the
// concatenation of the block input and every earlier layer's output.
struct DenseBlockSpec {
  std::size_t num_layers = 0;
  std::size_t growth_rate = 0;

  std::size_t output_channels(std::size_t in_channels) const {
    return in_channels + num_layers * growth_rate;
  }
};

// Downsampling stage between blocks: optional ReLU -> 1x1 compression conv,
// then pooling.
struct TransitionSpec {
  std::size_t compress_channels = 0;  // 0 keeps the channel count
  ops::PoolKind pool = ops::PoolKind::Average;
  std::size_t window = 2;
  std::size_t stride = 2;
  std::size_t padding = 0;
};

using BlockSpec = std::variant<InceptionBlockSpec, DenseBlockSpec, TransitionSpec>;

struct StemSpec {
  std::size_t out_channels = 16;
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t padding = 1;
  std::size_t pool_window = 0;  // 0: no stem pooling
  std::size_t pool_stride = 2;
  std::size_t pool_padding = 0;
  ops::PoolKind pool_kind = ops::PoolKind::Max;
};

struct HeadSpec {
  // Width entering the head's first affine layer. 0 accepts whatever the body
  // produces; otherwise a mismatch is rejected when the network is built.
  std::size_t feature_width = 0;
  // googlenet_like: GAP -> dropout -> affine(feat -> classes) -> softmax
  double dropout = 0.5;
  // densenet_like: flatten -> affine -> ReLU -> dropout -> affine -> ReLU ->
  // dropout -> affine(-> classes) -> softmax
  std::size_t hidden1 = 512;
  std::size_t hidden2 = 256;
  double dropout1 = 0.5;
  double dropout2 = 0.2;
};

struct NetworkSpec {
  Family family = Family::GoogLeNetLike;
  std::size_t input_side = 64;
  StemSpec stem;
  std::vector<BlockSpec> blocks;
  HeadSpec head;
  std::size_t num_classes = kNumClasses;
};

NetworkSpec mini_googlenet_spec();
NetworkSpec mini_densenet_spec();
// Full-scale layouts (299 and 224 inputs, 2048 and 25088 head features).
// Expressible and shape-checkable; not meant to be instantiated.
NetworkSpec full_googlenet_spec();
NetworkSpec full_densenet_spec();

nlohmann::json spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);

// Values entering the network: 3 * side^2.
std::size_t compute_input_size(Family family, std::size_t input_side);

// Shape of the body output (what the head consumes), computed from extents
// alone without allocating any weights.
Shape body_output_shape(const NetworkSpec& spec);

struct LayerInfo {
  OpKind kind;
  std::size_t in_width;
  std::size_t out_width;
  double p = 0.0;  // dropout probability for dropout layers
};

// Head layer sequence derived from the spec (no weights allocated).
std::vector<LayerInfo> describe_head(const NetworkSpec& spec);

// A built network: immutable graph plus its parameters. Forward passes are
// const and may run concurrently on a shared, frozen model.
class Model {
 public:
  const NetworkSpec& spec() const { return spec_; }
  const ComputeGraph& graph() const { return graph_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  NodeId input_node() const { return input_; }
  NodeId logits_node() const { return logits_; }
  NodeId probs_node() const { return probs_; }
  NodeId loss_node() const { return loss_; }

  Tensor logits(const Tensor& image, const ForwardContext& ctx) const;
  // Eval-mode class probabilities.
  Tensor predict(const Tensor& image) const;

  // Head layer sequence read back from the built graph.
  std::vector<LayerInfo> head_layers() const;

 private:
  friend Model build_network(const NetworkSpec& spec, std::uint64_t seed);

  NetworkSpec spec_;
  ComputeGraph graph_;
  ParameterStore params_;
  NodeId input_ = 0, logits_ = 0, probs_ = 0, loss_ = 0, head_start_ = 0;
};

Model build_network(const NetworkSpec& spec, std::uint64_t seed);

// Graph fragments. Both return the block's output node and register their
// parameters under `prefix`.
NodeId add_inception_block(ComputeGraph& graph, ParameterStore& params,
                           NodeId input, const InceptionBlockSpec& spec,
                           const std::string& prefix, Rng& rng);
NodeId add_dense_block(ComputeGraph& graph, ParameterStore& params,
                       NodeId input, const DenseBlockSpec& spec,
                       const std::string& prefix, Rng& rng);

// Glorot-uniform kernels in +-sqrt(6 / (fan_in + fan_out)), rounded to
// single precision.
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out,
                      Rng& rng);

}  // namespace gdn
