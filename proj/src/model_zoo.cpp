#include "gdn/model_zoo.hpp"

#include <cmath>

#include "gdn/error.hpp"

namespace gdn {
namespace {

using nlohmann::json;

std::string pool_name(ops::PoolKind kind) {
  return kind == ops::PoolKind::Max ? "max" : "average";
}

ops::PoolKind parse_pool(const std::string& s) {
  if (s == "max") return ops::PoolKind::Max;
  if (s == "average") return ops::PoolKind::Average;
  throw FormatError("unknown pool kind: " + s);
}

// Conv + bias + ReLU, registering "<name>.weight" and "<name>.bias".
NodeId conv_relu(ComputeGraph& g, ParameterStore& params, NodeId x,
                 std::size_t out_channels, std::size_t kernel,
                 std::size_t stride, std::size_t padding,
                 const std::string& name, Rng& rng) {
  const std::size_t in_channels = g.shape(x)[0];
  const auto w = params.add(
      name + ".weight",
      glorot_uniform({out_channels, in_channels, kernel, kernel},
                     in_channels * kernel * kernel,
                     out_channels * kernel * kernel, rng));
  const auto b = params.add(name + ".bias", Tensor({out_channels}));
  const NodeId conv = g.conv2d(x, g.parameter(params, w),
                               g.parameter(params, b), stride, padding, name);
  return g.relu(conv, name + ".relu");
}

NodeId affine(ComputeGraph& g, ParameterStore& params, NodeId x,
              std::size_t out_width, const std::string& name, Rng& rng) {
  const std::size_t in_width = g.shape(x)[0];
  const auto w = params.add(
      name + ".weight",
      glorot_uniform({out_width, in_width}, in_width, out_width, rng));
  const auto b = params.add(name + ".bias", Tensor({out_width}));
  return g.linear(x, g.parameter(params, w), g.parameter(params, b), name);
}

NodeId add_transition(ComputeGraph& g, ParameterStore& params, NodeId x,
                      const TransitionSpec& spec, const std::string& prefix,
                      Rng& rng) {
  NodeId out = x;
  if (spec.compress_channels != 0) {
    const NodeId act = g.relu(x, prefix + ".relu");
    const std::size_t in_channels = g.shape(x)[0];
    const auto w = params.add(
        prefix + ".conv.weight",
        glorot_uniform({spec.compress_channels, in_channels, 1, 1},
                       in_channels, spec.compress_channels, rng));
    const auto b =
        params.add(prefix + ".conv.bias", Tensor({spec.compress_channels}));
    out = g.conv2d(act, g.parameter(params, w), g.parameter(params, b), 1, 0,
                   prefix + ".conv");
  }
  return g.pool2d(out, spec.pool, spec.window, spec.stride, spec.padding,
                  prefix + ".pool");
}

std::size_t pooled(std::size_t extent, std::size_t window, std::size_t stride,
                   std::size_t padding) {
  if (window > extent + 2 * padding) {
    throw ShapeError("pool window " + std::to_string(window) +
                     " exceeds extent " + std::to_string(extent));
  }
  return (extent + 2 * padding - window) / stride + 1;
}

}  // namespace

std::string family_name(Family family) {
  return family == Family::GoogLeNetLike ? "googlenet_like" : "densenet_like";
}

Family parse_family(const std::string& name) {
  if (name == "googlenet_like") return Family::GoogLeNetLike;
  if (name == "densenet_like") return Family::DenseNetLike;
  throw DataError("unknown network family: " + name);
}

InceptionBlockSpec InceptionBlockSpec::uniform(std::size_t width) {
  return {width, width, width, width, width, width};
}

std::size_t InceptionBlockSpec::output_channels() const {
  return branch1x1 + branch3x3 + branch5x5 + pool_proj;
}

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out,
                      Rng& rng) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = uniform(rng, -limit, limit);
  t.round_to_storage_precision();
  return t;
}

NetworkSpec mini_googlenet_spec() {
  NetworkSpec spec;
  spec.family = Family::GoogLeNetLike;
  spec.input_side = 64;
  spec.stem = {16, 3, 2, 1, 2, 2, 0, ops::PoolKind::Max};
  spec.blocks = {InceptionBlockSpec{8, 8, 12, 4, 4, 8},
                 InceptionBlockSpec{12, 12, 16, 4, 8, 12}};
  spec.head.feature_width = 48;
  spec.head.dropout = 0.5;
  return spec;
}

NetworkSpec mini_densenet_spec() {
  NetworkSpec spec;
  spec.family = Family::DenseNetLike;
  spec.input_side = 64;
  spec.stem = {16, 3, 2, 1, 2, 2, 0, ops::PoolKind::Average};
  spec.blocks = {DenseBlockSpec{4, 8}, TransitionSpec{},
                 DenseBlockSpec{4, 8}, TransitionSpec{}};
  spec.head.feature_width = 0;
  spec.head.hidden1 = 128;
  spec.head.hidden2 = 64;
  spec.head.dropout1 = 0.5;
  spec.head.dropout2 = 0.2;
  return spec;
}

NetworkSpec full_googlenet_spec() {
  NetworkSpec spec;
  spec.family = Family::GoogLeNetLike;
  spec.input_side = 299;
  spec.stem = {64, 7, 2, 3, 3, 2, 1, ops::PoolKind::Max};
  const TransitionSpec reduce{0, ops::PoolKind::Max, 3, 2, 1};
  spec.blocks = {
      InceptionBlockSpec{64, 96, 128, 16, 32, 32},
      InceptionBlockSpec{128, 128, 192, 32, 96, 64},
      reduce,
      InceptionBlockSpec{192, 96, 208, 16, 48, 64},
      InceptionBlockSpec{256, 160, 320, 32, 128, 128},
      reduce,
      InceptionBlockSpec{320, 384, 768, 448, 768, 192},
  };
  spec.head.feature_width = 2048;
  spec.head.dropout = 0.5;
  return spec;
}

NetworkSpec full_densenet_spec() {
  NetworkSpec spec;
  spec.family = Family::DenseNetLike;
  spec.input_side = 224;
  spec.stem = {64, 7, 2, 3, 3, 2, 1, ops::PoolKind::Max};
  // DenseNet-121 block depths 6/12/24/16, growth 32, transitions halve the
  // channel count. The closing 1x1 compression takes the 1024x7x7 body
  // output to 512x7x7 so the head flattens 25088 features.
  spec.blocks = {DenseBlockSpec{6, 32},  TransitionSpec{128},
                 DenseBlockSpec{12, 32}, TransitionSpec{256},
                 DenseBlockSpec{24, 32}, TransitionSpec{512},
                 DenseBlockSpec{16, 32},
                 TransitionSpec{512, ops::PoolKind::Average, 1, 1, 0}};
  spec.head.feature_width = 25088;
  spec.head.hidden1 = 512;
  spec.head.hidden2 = 256;
  spec.head.dropout1 = 0.5;
  spec.head.dropout2 = 0.2;
  return spec;
}

std::size_t compute_input_size(Family, std::size_t input_side) {
  if (input_side == 0) throw ShapeError("input side must be positive");
  return 3 * input_side * input_side;
}

Shape body_output_shape(const NetworkSpec& spec) {
  std::size_t c = spec.stem.out_channels;
  std::size_t side = ops::conv_output_extent(spec.input_side, spec.stem.kernel,
                                             spec.stem.stride,
                                             spec.stem.padding);
  if (spec.stem.pool_window != 0) {
    side = pooled(side, spec.stem.pool_window, spec.stem.pool_stride,
                  spec.stem.pool_padding);
  }
  for (const auto& block : spec.blocks) {
    if (const auto* inc = std::get_if<InceptionBlockSpec>(&block)) {
      c = inc->output_channels();
    } else if (const auto* dense = std::get_if<DenseBlockSpec>(&block)) {
      c = dense->output_channels(c);
    } else {
      const auto& t = std::get<TransitionSpec>(block);
      if (t.compress_channels != 0) c = t.compress_channels;
      side = pooled(side, t.window, t.stride, t.padding);
    }
  }
  return {c, side, side};
}

std::vector<LayerInfo> describe_head(const NetworkSpec& spec) {
  const Shape body = body_output_shape(spec);
  const auto& h = spec.head;
  const std::size_t k = spec.num_classes;
  if (spec.family == Family::GoogLeNetLike) {
    const std::size_t feat = body[0];
    return {{OpKind::GlobalAvgPool, shape_size(body), feat},
            {OpKind::Dropout, feat, feat, h.dropout},
            {OpKind::Linear, feat, k},
            {OpKind::Softmax, k, k}};
  }
  const std::size_t feat = shape_size(body);
  return {{OpKind::Flatten, feat, feat},
          {OpKind::Linear, feat, h.hidden1},
          {OpKind::Relu, h.hidden1, h.hidden1},
          {OpKind::Dropout, h.hidden1, h.hidden1, h.dropout1},
          {OpKind::Linear, h.hidden1, h.hidden2},
          {OpKind::Relu, h.hidden2, h.hidden2},
          {OpKind::Dropout, h.hidden2, h.hidden2, h.dropout2},
          {OpKind::Linear, h.hidden2, k},
          {OpKind::Softmax, k, k}};
}

NodeId add_inception_block(ComputeGraph& g, ParameterStore& params,
                           NodeId input, const InceptionBlockSpec& spec,
                           const std::string& prefix, Rng& rng) {
  for (std::size_t w : {spec.branch1x1, spec.branch3x3_reduce, spec.branch3x3,
                        spec.branch5x5_reduce, spec.branch5x5,
                        spec.pool_proj}) {
    if (w == 0) throw ShapeError(prefix + ": inception widths must be >= 1");
  }
  const NodeId b1 = conv_relu(g, params, input, spec.branch1x1, 1, 1, 0,
                              prefix + ".b1", rng);
  NodeId b2 = conv_relu(g, params, input, spec.branch3x3_reduce, 1, 1, 0,
                        prefix + ".b2_reduce", rng);
  b2 = conv_relu(g, params, b2, spec.branch3x3, 3, 1, 1, prefix + ".b2", rng);
  NodeId b3 = conv_relu(g, params, input, spec.branch5x5_reduce, 1, 1, 0,
                        prefix + ".b3_reduce", rng);
  b3 = conv_relu(g, params, b3, spec.branch5x5, 5, 1, 2, prefix + ".b3", rng);
  NodeId b4 = g.pool2d(input, ops::PoolKind::Max, 3, 1, 1, prefix + ".b4_pool");
  b4 = conv_relu(g, params, b4, spec.pool_proj, 1, 1, 0, prefix + ".b4", rng);
  return g.concat({b1, b2, b3, b4}, prefix + ".concat");
}

NodeId add_dense_block(ComputeGraph& g, ParameterStore& params, NodeId input,
                       const DenseBlockSpec& spec, const std::string& prefix,
                       Rng& rng) {
  if (spec.num_layers == 0 || spec.growth_rate == 0) {
    throw ShapeError(prefix + ": dense block needs >= 1 layer and growth >= 1");
  }
  std::vector<NodeId> features{input};
  NodeId current = input;
  for (std::size_t i = 0; i < spec.num_layers; ++i) {
    const std::string name = prefix + ".layer" + std::to_string(i);
    const std::size_t in_channels = g.shape(current)[0];
    const NodeId act = g.relu(current, name + ".relu");
    const auto w = params.add(
        name + ".weight",
        glorot_uniform({spec.growth_rate, in_channels, 3, 3}, in_channels * 9,
                       spec.growth_rate * 9, rng));
    const auto b = params.add(name + ".bias", Tensor({spec.growth_rate}));
    const NodeId out = g.conv2d(act, g.parameter(params, w),
                                g.parameter(params, b), 1, 1, name + ".conv");
    features.push_back(out);
    current = g.concat(features, name + ".concat");
  }
  return current;
}

Model build_network(const NetworkSpec& spec, std::uint64_t seed) {
  if (spec.input_side == 0 || spec.num_classes < 2) {
    throw ShapeError("network needs a positive input side and >= 2 classes");
  }
  const Shape body = body_output_shape(spec);
  const std::size_t feat = spec.family == Family::GoogLeNetLike
                               ? body[0]
                               : shape_size(body);
  if (spec.head.feature_width != 0 && spec.head.feature_width != feat) {
    throw ShapeError("head feature width " +
                     std::to_string(spec.head.feature_width) +
                     " inconsistent with body output " + shape_string(body) +
                     " (" + std::to_string(feat) + " features)");
  }

  Model m;
  m.spec_ = spec;
  Rng rng(seed);
  ComputeGraph& g = m.graph_;
  ParameterStore& params = m.params_;

  m.input_ = g.input({3, spec.input_side, spec.input_side});
  NodeId x = conv_relu(g, params, m.input_, spec.stem.out_channels,
                       spec.stem.kernel, spec.stem.stride, spec.stem.padding,
                       "stem", rng);
  if (spec.stem.pool_window != 0) {
    x = g.pool2d(x, spec.stem.pool_kind, spec.stem.pool_window,
                 spec.stem.pool_stride, spec.stem.pool_padding, "stem.pool");
  }
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const std::string prefix = "block" + std::to_string(i);
    const auto& block = spec.blocks[i];
    if (const auto* inc = std::get_if<InceptionBlockSpec>(&block)) {
      x = add_inception_block(g, params, x, *inc, prefix, rng);
    } else if (const auto* dense = std::get_if<DenseBlockSpec>(&block)) {
      x = add_dense_block(g, params, x, *dense, prefix, rng);
    } else {
      x = add_transition(g, params, x, std::get<TransitionSpec>(block), prefix,
                         rng);
    }
  }

  const auto& h = spec.head;
  if (spec.family == Family::GoogLeNetLike) {
    x = g.global_avg_pool(x, "head.gap");
    m.head_start_ = x;
    x = g.dropout(x, h.dropout, "head.dropout");
    x = affine(g, params, x, spec.num_classes, "head.fc", rng);
  } else {
    x = g.flatten(x, "head.flatten");
    m.head_start_ = x;
    x = affine(g, params, x, h.hidden1, "head.fc1", rng);
    x = g.relu(x, "head.fc1.relu");
    x = g.dropout(x, h.dropout1, "head.dropout1");
    x = affine(g, params, x, h.hidden2, "head.fc2", rng);
    x = g.relu(x, "head.fc2.relu");
    x = g.dropout(x, h.dropout2, "head.dropout2");
    x = affine(g, params, x, spec.num_classes, "head.fc3", rng);
  }
  m.logits_ = x;
  m.probs_ = g.softmax(x, "head.softmax");
  m.loss_ = g.cross_entropy(x, "loss");
  return m;
}

Tensor Model::logits(const Tensor& image, const ForwardContext& ctx) const {
  ForwardContext c = ctx;
  c.label.reset();
  return forward(graph_, params_, image, c).value(logits_);
}

Tensor Model::predict(const Tensor& image) const {
  return forward(graph_, params_, image, {}).value(probs_);
}

std::vector<LayerInfo> Model::head_layers() const {
  std::vector<LayerInfo> layers;
  for (NodeId id = head_start_; id <= probs_; ++id) {
    const Node& n = graph_.node(id);
    if (n.kind == OpKind::Parameter) continue;
    const std::size_t in =
        n.inputs.empty() ? 0 : shape_size(graph_.shape(n.inputs[0]));
    layers.push_back({n.kind, in, shape_size(n.shape), n.attrs.p});
  }
  return layers;
}

nlohmann::json spec_to_json(const NetworkSpec& spec) {
  json blocks = json::array();
  for (const auto& block : spec.blocks) {
    if (const auto* inc = std::get_if<InceptionBlockSpec>(&block)) {
      blocks.push_back({{"type", "inception"},
                        {"branch1x1", inc->branch1x1},
                        {"branch3x3_reduce", inc->branch3x3_reduce},
                        {"branch3x3", inc->branch3x3},
                        {"branch5x5_reduce", inc->branch5x5_reduce},
                        {"branch5x5", inc->branch5x5},
                        {"pool_proj", inc->pool_proj}});
    } else if (const auto* dense = std::get_if<DenseBlockSpec>(&block)) {
      blocks.push_back({{"type", "dense"},
                        {"num_layers", dense->num_layers},
                        {"growth_rate", dense->growth_rate}});
    } else {
      const auto& t = std::get<TransitionSpec>(block);
      blocks.push_back({{"type", "transition"},
                        {"compress_channels", t.compress_channels},
                        {"pool", pool_name(t.pool)},
                        {"window", t.window},
                        {"stride", t.stride},
                        {"padding", t.padding}});
    }
  }
  const auto& s = spec.stem;
  const auto& h = spec.head;
  return {{"family", family_name(spec.family)},
          {"input_side", spec.input_side},
          {"num_classes", spec.num_classes},
          {"stem",
           {{"out_channels", s.out_channels},
            {"kernel", s.kernel},
            {"stride", s.stride},
            {"padding", s.padding},
            {"pool_window", s.pool_window},
            {"pool_stride", s.pool_stride},
            {"pool_padding", s.pool_padding},
            {"pool_kind", pool_name(s.pool_kind)}}},
          {"blocks", blocks},
          {"head",
           {{"feature_width", h.feature_width},
            {"dropout", h.dropout},
            {"hidden1", h.hidden1},
            {"hidden2", h.hidden2},
            {"dropout1", h.dropout1},
            {"dropout2", h.dropout2}}}};
}

NetworkSpec spec_from_json(const nlohmann::json& j) {
  try {
    NetworkSpec spec;
    spec.family = parse_family(j.at("family").get<std::string>());
    spec.input_side = j.at("input_side").get<std::size_t>();
    spec.num_classes = j.at("num_classes").get<std::size_t>();
    const auto& s = j.at("stem");
    spec.stem = {s.at("out_channels").get<std::size_t>(),
                 s.at("kernel").get<std::size_t>(),
                 s.at("stride").get<std::size_t>(),
                 s.at("padding").get<std::size_t>(),
                 s.at("pool_window").get<std::size_t>(),
                 s.at("pool_stride").get<std::size_t>(),
                 s.at("pool_padding").get<std::size_t>(),
                 parse_pool(s.at("pool_kind").get<std::string>())};
    for (const auto& b : j.at("blocks")) {
      const auto type = b.at("type").get<std::string>();
      if (type == "inception") {
        spec.blocks.emplace_back(InceptionBlockSpec{
            b.at("branch1x1").get<std::size_t>(),
            b.at("branch3x3_reduce").get<std::size_t>(),
            b.at("branch3x3").get<std::size_t>(),
            b.at("branch5x5_reduce").get<std::size_t>(),
            b.at("branch5x5").get<std::size_t>(),
            b.at("pool_proj").get<std::size_t>()});
      } else if (type == "dense") {
        spec.blocks.emplace_back(
            DenseBlockSpec{b.at("num_layers").get<std::size_t>(),
                           b.at("growth_rate").get<std::size_t>()});
      } else if (type == "transition") {
        spec.blocks.emplace_back(
            TransitionSpec{b.at("compress_channels").get<std::size_t>(),
                           parse_pool(b.at("pool").get<std::string>()),
                           b.at("window").get<std::size_t>(),
                           b.at("stride").get<std::size_t>(),
                           b.at("padding").get<std::size_t>()});
      } else {
        throw FormatError("unknown block type: " + type);
      }
    }
    const auto& h = j.at("head");
    spec.head = {h.at("feature_width").get<std::size_t>(),
                 h.at("dropout").get<double>(),
                 h.at("hidden1").get<std::size_t>(),
                 h.at("hidden2").get<std::size_t>(),
                 h.at("dropout1").get<double>(),
                 h.at("dropout2").get<double>()};
    return spec;
  } catch (const json::exception& e) {
    throw FormatError(std::string("network spec: ") + e.what());
  }
}

}  // namespace gdn
