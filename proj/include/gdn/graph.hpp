#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gdn/ops.hpp"
#include "gdn/tensor.hpp"

namespace gdn {

using NodeId = std::size_t;

enum class OpKind {
  Input,
  Parameter,
  Conv2d,
  Pool2d,
  GlobalAvgPool,
  Linear,
  Relu,
  Concat,
  Dropout,
  Flatten,
  Softmax,
  CrossEntropy,
};

const char* op_name(OpKind kind);

struct OpAttrs {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t window = 0;
  ops::PoolKind pool = ops::PoolKind::Max;
  double p = 0.0;
  std::size_t parameter = 0;
};

struct Node {
  OpKind kind;
  std::vector<NodeId> inputs;
  OpAttrs attrs;
  std::string name;
  Shape shape;
};

// Named parameter tensors in insertion order. Names are unique and stable;
// checkpoints key parameter arrays by them.
class ParameterStore {
 public:
  std::size_t add(std::string name, Tensor value);

  std::size_t size() const { return tensors_.size(); }
  Tensor& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  std::optional<std::size_t> find(const std::string& name) const;

  std::size_t scalar_count() const;
  void zero_grads();
  void round_to_storage_precision();
  bool all_finite() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

// Declarative, acyclic layer graph. Nodes are appended in topological order
// (every input id precedes its consumer) and carry statically inferred shapes,
// so wiring errors surface while the graph is built.
class ComputeGraph {
 public:
  NodeId input(Shape shape, std::string name = "input");
  NodeId parameter(const ParameterStore& store, std::size_t index);
  NodeId conv2d(NodeId x, NodeId kernels, std::optional<NodeId> bias,
                std::size_t stride, std::size_t padding, std::string name);
  NodeId pool2d(NodeId x, ops::PoolKind kind, std::size_t window,
                std::size_t stride, std::size_t padding, std::string name);
  NodeId global_avg_pool(NodeId x, std::string name);
  NodeId linear(NodeId x, NodeId weight, NodeId bias, std::string name);
  NodeId relu(NodeId x, std::string name);
  NodeId concat(std::vector<NodeId> xs, std::string name);
  NodeId dropout(NodeId x, double p, std::string name);
  NodeId flatten(NodeId x, std::string name);
  NodeId softmax(NodeId x, std::string name);
  NodeId cross_entropy(NodeId logits, std::string name);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  const std::vector<Node>& nodes() const { return nodes_; }
  const Shape& shape(NodeId id) const { return nodes_.at(id).shape; }

 private:
  NodeId append(Node node);
  std::vector<Node> nodes_;
  std::optional<NodeId> input_;
};

struct ForwardContext {
  Mode mode = Mode::Eval;
  // Dropout masks are drawn from derive_seed(seed, node id), so a forward
  // pass is a pure function of (parameters, input, context).
  std::uint64_t seed = 0;
  // Cross-entropy nodes are evaluated only when a label is supplied.
  std::optional<std::size_t> label;
};

// Activation values of one forward pass. Parameter values are referenced, not
// copied: the ParameterStore must outlive the Evaluation.
class Evaluation {
 public:
  Evaluation() = default;
  // Values point into owned_, so copies would dangle.
  Evaluation(const Evaluation&) = delete;
  Evaluation& operator=(const Evaluation&) = delete;
  Evaluation(Evaluation&&) = default;
  Evaluation& operator=(Evaluation&&) = default;

  bool complete() const { return !values_.empty(); }
  bool evaluated(NodeId id) const;
  const Tensor& value(NodeId id) const;

 private:
  friend Evaluation forward(const ComputeGraph&, const ParameterStore&,
                            const Tensor&, const ForwardContext&);
  friend void backward(const ComputeGraph&, const Evaluation&, NodeId,
                       ParameterStore&, double);

  std::vector<std::optional<Tensor>> owned_;
  std::vector<const Tensor*> values_;
  std::vector<std::vector<double>> masks_;
  std::optional<std::size_t> label_;
};

Evaluation forward(const ComputeGraph& graph, const ParameterStore& params,
                   const Tensor& input, const ForwardContext& ctx);

// Reverse-mode pass from a scalar node. Accumulates d(seed * loss)/d(param)
// into each parameter's grad slot; callers zero the slots between steps.
// Throws if the evaluation is incomplete or the loss node was not evaluated.
void backward(const ComputeGraph& graph, const Evaluation& evaluation,
              NodeId loss, ParameterStore& params, double seed = 1.0);

}  // namespace gdn
