#include "gdn/graph.hpp"

#include "gdn/error.hpp"
#include "gdn/random.hpp"

namespace gdn {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Input: return "input";
    case OpKind::Parameter: return "parameter";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Pool2d: return "pool2d";
    case OpKind::GlobalAvgPool: return "global_avg_pool";
    case OpKind::Linear: return "linear";
    case OpKind::Relu: return "relu";
    case OpKind::Concat: return "concat";
    case OpKind::Dropout: return "dropout";
    case OpKind::Flatten: return "flatten";
    case OpKind::Softmax: return "softmax";
    case OpKind::CrossEntropy: return "cross_entropy";
  }
  return "unknown";
}

std::size_t ParameterStore::add(std::string name, Tensor value) {
  if (find(name)) throw Error("duplicate parameter name: " + name);
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
  return tensors_.size() - 1;
}

std::optional<std::size_t> ParameterStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

void ParameterStore::zero_grads() {
  for (auto& t : tensors_) t.zero_grad();
}

void ParameterStore::round_to_storage_precision() {
  for (auto& t : tensors_) t.round_to_storage_precision();
}

bool ParameterStore::all_finite() const {
  for (const auto& t : tensors_) {
    if (!t.all_finite()) return false;
  }
  return true;
}

NodeId ComputeGraph::append(Node node) {
  for (NodeId in : node.inputs) {
    if (in >= nodes_.size()) {
      throw Error("graph node '" + node.name + "' references unknown input");
    }
  }
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

NodeId ComputeGraph::input(Shape shape, std::string name) {
  if (input_) throw Error("graph already has an input node");
  input_ = append({OpKind::Input, {}, {}, std::move(name), std::move(shape)});
  return *input_;
}

NodeId ComputeGraph::parameter(const ParameterStore& store, std::size_t index) {
  OpAttrs attrs;
  attrs.parameter = index;
  return append(
      {OpKind::Parameter, {}, attrs, store.name(index), store[index].shape()});
}

NodeId ComputeGraph::conv2d(NodeId x, NodeId kernels,
                            std::optional<NodeId> bias, std::size_t stride,
                            std::size_t padding, std::string name) {
  const Shape& in = shape(x);
  const Shape& k = shape(kernels);
  if (in.size() != 3 || k.size() != 4 || k[1] != in[0]) {
    throw ShapeError(name + ": kernels " + shape_string(k) +
                     " incompatible with input " + shape_string(in));
  }
  if (stride == 0) throw ShapeError(name + ": stride must be positive");
  std::vector<NodeId> inputs{x, kernels};
  if (bias) {
    if (shape(*bias) != Shape{k[0]}) {
      throw ShapeError(name + ": bias must have " + std::to_string(k[0]) +
                       " entries");
    }
    inputs.push_back(*bias);
  }
  OpAttrs attrs;
  attrs.stride = stride;
  attrs.padding = padding;
  Shape out{k[0], ops::conv_output_extent(in[1], k[2], stride, padding),
            ops::conv_output_extent(in[2], k[3], stride, padding)};
  return append({OpKind::Conv2d, std::move(inputs), attrs, std::move(name),
                 std::move(out)});
}

NodeId ComputeGraph::pool2d(NodeId x, ops::PoolKind kind, std::size_t window,
                            std::size_t stride, std::size_t padding,
                            std::string name) {
  const Shape& in = shape(x);
  if (in.size() != 3) throw ShapeError(name + ": pool input must be [C,H,W]");
  if (window == 0 || stride == 0 || padding >= window ||
      window > in[1] + 2 * padding || window > in[2] + 2 * padding) {
    throw ShapeError(name + ": window " + std::to_string(window) +
                     " invalid for input " + shape_string(in));
  }
  OpAttrs attrs;
  attrs.window = window;
  attrs.stride = stride;
  attrs.padding = padding;
  attrs.pool = kind;
  Shape out{in[0], (in[1] + 2 * padding - window) / stride + 1,
            (in[2] + 2 * padding - window) / stride + 1};
  return append({OpKind::Pool2d, {x}, attrs, std::move(name), std::move(out)});
}

NodeId ComputeGraph::global_avg_pool(NodeId x, std::string name) {
  const Shape& in = shape(x);
  if (in.size() != 3) throw ShapeError(name + ": input must be [C,H,W]");
  return append({OpKind::GlobalAvgPool, {x}, {}, std::move(name), {in[0]}});
}

NodeId ComputeGraph::linear(NodeId x, NodeId weight, NodeId bias,
                            std::string name) {
  const Shape& in = shape(x);
  const Shape& w = shape(weight);
  if (in.size() != 1 || w.size() != 2 || w[1] != in[0] ||
      shape(bias) != Shape{w[0]}) {
    throw ShapeError(name + ": weight " + shape_string(w) +
                     " incompatible with input " + shape_string(in));
  }
  return append(
      {OpKind::Linear, {x, weight, bias}, {}, std::move(name), {w[0]}});
}

NodeId ComputeGraph::relu(NodeId x, std::string name) {
  return append({OpKind::Relu, {x}, {}, std::move(name), shape(x)});
}

NodeId ComputeGraph::concat(std::vector<NodeId> xs, std::string name) {
  if (xs.empty()) throw ShapeError(name + ": concat needs inputs");
  const Shape& first = shape(xs.front());
  std::size_t channels = 0;
  for (NodeId x : xs) {
    const Shape& s = shape(x);
    if (s.size() != 3 || s[1] != first[1] || s[2] != first[2]) {
      throw ShapeError(name + ": spatial mismatch between " +
                       shape_string(first) + " and " + shape_string(s));
    }
    channels += s[0];
  }
  Shape out{channels, first[1], first[2]};
  return append({OpKind::Concat, std::move(xs), {}, std::move(name), out});
}

NodeId ComputeGraph::dropout(NodeId x, double p, std::string name) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw Error(name + ": dropout probability must lie in [0, 1)");
  }
  OpAttrs attrs;
  attrs.p = p;
  return append({OpKind::Dropout, {x}, attrs, std::move(name), shape(x)});
}

NodeId ComputeGraph::flatten(NodeId x, std::string name) {
  return append(
      {OpKind::Flatten, {x}, {}, std::move(name), {shape_size(shape(x))}});
}

NodeId ComputeGraph::softmax(NodeId x, std::string name) {
  if (shape(x).size() != 1) throw ShapeError(name + ": softmax needs [K]");
  return append({OpKind::Softmax, {x}, {}, std::move(name), shape(x)});
}

NodeId ComputeGraph::cross_entropy(NodeId logits, std::string name) {
  if (shape(logits).size() != 1) {
    throw ShapeError(name + ": cross entropy needs [K] logits");
  }
  return append({OpKind::CrossEntropy, {logits}, {}, std::move(name), {1}});
}

bool Evaluation::evaluated(NodeId id) const {
  return id < values_.size() && values_[id] != nullptr;
}

const Tensor& Evaluation::value(NodeId id) const {
  if (!evaluated(id)) {
    throw Error("node " + std::to_string(id) + " has not been evaluated");
  }
  return *values_[id];
}

Evaluation forward(const ComputeGraph& graph, const ParameterStore& params,
                   const Tensor& input, const ForwardContext& ctx) {
  Evaluation ev;
  const std::size_t n = graph.size();
  ev.owned_.resize(n);
  ev.values_.assign(n, nullptr);
  ev.masks_.resize(n);
  ev.label_ = ctx.label;

  auto store = [&](NodeId id, Tensor t) {
    ev.owned_[id] = std::move(t);
    ev.values_[id] = &*ev.owned_[id];
  };
  auto in = [&](const Node& node, std::size_t k) -> const Tensor& {
    return *ev.values_[node.inputs[k]];
  };

  for (NodeId id = 0; id < n; ++id) {
    const Node& node = graph.node(id);
    bool inputs_ready = true;
    for (NodeId i : node.inputs) inputs_ready = inputs_ready && ev.values_[i];
    if (!inputs_ready) continue;

    switch (node.kind) {
      case OpKind::Input:
        require_same_shape(input.shape(), node.shape, "graph input");
        store(id, input);
        break;
      case OpKind::Parameter:
        ev.values_[id] = &params[node.attrs.parameter];
        break;
      case OpKind::Conv2d: {
        Tensor out = ops::conv2d(in(node, 0), in(node, 1), node.attrs.stride,
                                 node.attrs.padding);
        if (node.inputs.size() == 3) ops::add_channel_bias(out, in(node, 2));
        store(id, std::move(out));
        break;
      }
      case OpKind::Pool2d:
        store(id, ops::pool2d(in(node, 0), node.attrs.pool, node.attrs.window,
                              node.attrs.stride, node.attrs.padding));
        break;
      case OpKind::GlobalAvgPool:
        store(id, ops::global_average_pool(in(node, 0)));
        break;
      case OpKind::Linear:
        store(id, ops::linear_affine(in(node, 0), in(node, 1), in(node, 2)));
        break;
      case OpKind::Relu:
        store(id, ops::relu(in(node, 0)));
        break;
      case OpKind::Concat: {
        std::vector<const Tensor*> parts;
        for (NodeId i : node.inputs) parts.push_back(ev.values_[i]);
        store(id, ops::channel_concat(parts));
        break;
      }
      case OpKind::Dropout: {
        const Tensor& x = in(node, 0);
        if (ctx.mode == Mode::Eval || node.attrs.p == 0.0) {
          ev.values_[id] = &x;
          break;
        }
        Rng rng(derive_seed(ctx.seed, id));
        ev.masks_[id] = ops::dropout_mask(x.size(), node.attrs.p, rng);
        Tensor out(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) {
          out[i] = x[i] * ev.masks_[id][i];
        }
        store(id, std::move(out));
        break;
      }
      case OpKind::Flatten:
        store(id, in(node, 0).reshaped(node.shape));
        break;
      case OpKind::Softmax:
        store(id, ops::softmax(in(node, 0)));
        break;
      case OpKind::CrossEntropy:
        if (!ctx.label) break;
        store(id, Tensor({1}, {ops::cross_entropy_loss(in(node, 0),
                                                       *ctx.label)}));
        break;
    }
  }
  return ev;
}

void backward(const ComputeGraph& graph, const Evaluation& ev, NodeId loss,
              ParameterStore& params, double seed) {
  if (!ev.complete()) throw Error("backward called before forward");
  if (loss >= graph.size() || !ev.evaluated(loss)) {
    throw Error("backward: loss node was not evaluated by the forward pass");
  }
  if (ev.value(loss).size() != 1) {
    throw ShapeError("backward: loss node must be scalar, got " +
                     shape_string(ev.value(loss).shape()));
  }

  std::vector<std::optional<Tensor>> grads(loss + 1);
  grads[loss] = Tensor(ev.value(loss).shape(), seed);

  auto accumulate = [&](NodeId id, const Tensor& g) {
    if (graph.node(id).kind == OpKind::Input) return;
    if (!grads[id]) {
      grads[id] = g;
      return;
    }
    auto dst = grads[id]->values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  };

  for (NodeId id = loss + 1; id-- > 0;) {
    if (!grads[id]) continue;
    const Node& node = graph.node(id);
    const Tensor& dy = *grads[id];
    auto x = [&](std::size_t k) -> const Tensor& {
      return ev.value(node.inputs[k]);
    };

    switch (node.kind) {
      case OpKind::Input:
        break;
      case OpKind::Parameter: {
        auto g = params[node.attrs.parameter].grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
        break;
      }
      case OpKind::Conv2d: {
        auto g = ops::conv2d_backward(x(0), x(1), node.attrs.stride,
                                      node.attrs.padding, dy);
        accumulate(node.inputs[0], g.input);
        accumulate(node.inputs[1], g.kernels);
        if (node.inputs.size() == 3) {
          accumulate(node.inputs[2], ops::channel_bias_grad(dy));
        }
        break;
      }
      case OpKind::Pool2d:
        accumulate(node.inputs[0],
                   ops::pool2d_backward(x(0), node.attrs.pool,
                                        node.attrs.window, node.attrs.stride,
                                        node.attrs.padding, dy));
        break;
      case OpKind::GlobalAvgPool:
        accumulate(node.inputs[0],
                   ops::global_average_pool_backward(x(0).shape(), dy));
        break;
      case OpKind::Linear: {
        auto g = ops::linear_affine_backward(x(0), x(1), dy);
        accumulate(node.inputs[0], g.input);
        accumulate(node.inputs[1], g.weight);
        accumulate(node.inputs[2], g.bias);
        break;
      }
      case OpKind::Relu:
        accumulate(node.inputs[0], ops::relu_backward(x(0), dy));
        break;
      case OpKind::Concat: {
        std::size_t offset = 0;
        for (NodeId in : node.inputs) {
          const std::size_t c = graph.shape(in)[0];
          accumulate(in, ops::channel_slice(dy, offset, c));
          offset += c;
        }
        break;
      }
      case OpKind::Dropout: {
        const auto& mask = ev.masks_[id];
        if (mask.empty()) {
          accumulate(node.inputs[0], dy);
          break;
        }
        Tensor g(dy.shape());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = dy[i] * mask[i];
        accumulate(node.inputs[0], g);
        break;
      }
      case OpKind::Flatten:
        accumulate(node.inputs[0], dy.reshaped(graph.shape(node.inputs[0])));
        break;
      case OpKind::Softmax: {
        // dx_i = s_i * (dy_i - sum_j dy_j s_j)
        const Tensor& s = ev.value(id);
        double dot = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) dot += dy[i] * s[i];
        Tensor g(s.shape());
        for (std::size_t i = 0; i < s.size(); ++i) g[i] = s[i] * (dy[i] - dot);
        accumulate(node.inputs[0], g);
        break;
      }
      case OpKind::CrossEntropy: {
        const Tensor& logits = x(0);
        const std::size_t label = *ev.label_;
        Tensor g = ops::cross_entropy_grad(logits, label);
        for (double& v : g.values()) v *= dy[0];
        accumulate(node.inputs[0], g);
        break;
      }
    }
  }
}

}  // namespace gdn
