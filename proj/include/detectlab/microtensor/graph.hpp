#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "detectlab/error.hpp"
#include "detectlab/microtensor/kernels.hpp"
#include "detectlab/microtensor/tensor.hpp"
#include "detectlab/random.hpp"

namespace detectlab::microtensor {

enum class LayerKind {
  Input,
  TimeEmbedding,
  ClassEmbedding,
  Conv2d,
  Dense,
  ReLU,
  LeakyReLU,
  AvgPool2,
  GlobalAvgPool,
  Upsample2,
  GroupNorm,
  Attention,
  Add,
  Concat,
  ChannelBias,
};

inline std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Input: return "input";
    case LayerKind::TimeEmbedding: return "time_embedding";
    case LayerKind::ClassEmbedding: return "class_embedding";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Dense: return "dense";
    case LayerKind::ReLU: return "relu";
    case LayerKind::LeakyReLU: return "leaky_relu";
    case LayerKind::AvgPool2: return "avg_pool2";
    case LayerKind::GlobalAvgPool: return "global_avg_pool";
    case LayerKind::Upsample2: return "upsample2";
    case LayerKind::GroupNorm: return "group_norm";
    case LayerKind::Attention: return "attention";
    case LayerKind::Add: return "add";
    case LayerKind::Concat: return "concat";
    case LayerKind::ChannelBias: return "channel_bias";
  }
  return "?";
}

enum class Init { Default, Zero };

struct NodeId {
  std::size_t index = 0;
};

struct LayerDesc {
  LayerKind kind = LayerKind::Input;
  std::string name;
  std::vector<std::size_t> inputs;
  Shape out_shape;  // per sample, without the batch axis
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t groups = 0;
  std::size_t num_classes = 0;
  double slope = 0.0;
  bool frozen = false;
  Init init = Init::Default;
};

struct ParamShape {
  std::string suffix;
  Shape shape;
};

inline std::vector<ParamShape> param_shapes(const LayerDesc& d) {
  switch (d.kind) {
    case LayerKind::Conv2d:
      return {{"weight", {d.out_channels, d.in_channels, d.kernel, d.kernel}}, {"bias", {d.out_channels}}};
    case LayerKind::Dense:
      return {{"weight", {d.out_channels, d.in_channels}}, {"bias", {d.out_channels}}};
    case LayerKind::GroupNorm:
      return {{"gamma", {d.in_channels}}, {"beta", {d.in_channels}}};
    case LayerKind::Attention: {
      const Shape sq{d.in_channels, d.in_channels};
      return {{"wq", sq}, {"wk", sq}, {"wv", sq}, {"wo", sq}};
    }
    case LayerKind::ClassEmbedding:
      return {{"table", {d.num_classes, d.out_channels}}};
    default:
      return {};
  }
}

inline std::size_t param_count(const LayerDesc& d) {
  std::size_t total = 0;
  for (const auto& p : param_shapes(d)) total += shape_size(p.shape);
  return total;
}

// Static layer DAG. Nodes may only consume earlier nodes, so declaration
// order is a valid execution order.
class GraphSpec {
 public:
  GraphSpec() = default;

  explicit GraphSpec(Shape input_shape) {
    LayerDesc in;
    in.kind = LayerKind::Input;
    in.name = "input";
    in.out_shape = std::move(input_shape);
    layers_.push_back(std::move(in));
  }

  NodeId input() const { return NodeId{0}; }
  const Shape& input_shape() const { return layers_.front().out_shape; }
  const std::vector<LayerDesc>& layers() const { return layers_; }
  const LayerDesc& layer(NodeId id) const { return layers_.at(id.index); }
  NodeId output() const { return NodeId{output_}; }
  const Shape& output_shape() const { return layers_.at(output_).out_shape; }

  // Subsequent layers are built with frozen (non-trainable) parameters.
  void set_frozen(bool frozen) { frozen_ = frozen; }

  void set_output(NodeId id) {
    check_node(id, "set_output");
    output_ = id.index;
  }

  bool uses_time() const { return has_kind(LayerKind::TimeEmbedding); }
  bool uses_class() const { return has_kind(LayerKind::ClassEmbedding); }
  bool conditional() const { return uses_time() || uses_class(); }

  std::size_t num_classes() const {
    for (const auto& l : layers_)
      if (l.kind == LayerKind::ClassEmbedding) return l.num_classes;
    return 0;
  }

  NodeId time_embedding(std::size_t dim) {
    if (dim < 2 || dim % 2) throw ShapeError("time_embedding: dim must be even and >= 2");
    LayerDesc d = make(LayerKind::TimeEmbedding, {});
    d.out_channels = dim;
    d.out_shape = {dim};
    return push(std::move(d));
  }

  NodeId class_embedding(std::size_t num_classes, std::size_t dim) {
    if (num_classes == 0 || dim == 0) throw ShapeError("class_embedding: empty table");
    LayerDesc d = make(LayerKind::ClassEmbedding, {});
    d.num_classes = num_classes;
    d.out_channels = dim;
    d.out_shape = {dim};
    return push(std::move(d));
  }

  // pad defaults to kernel / 2 ("same" for odd kernels at stride 1).
  NodeId conv2d(NodeId x, std::size_t out_channels, std::size_t kernel, std::size_t stride = 1,
                std::optional<std::size_t> pad = std::nullopt, Init init = Init::Default) {
    const Shape& s = spatial(x, "conv2d");
    LayerDesc d = make(LayerKind::Conv2d, {x.index});
    d.in_channels = s[0];
    d.out_channels = out_channels;
    d.kernel = kernel;
    d.stride = stride;
    d.pad = pad.value_or(kernel / 2);
    d.init = init;
    if (kernel == 0 || stride == 0 || out_channels == 0) throw ShapeError(d.name + ": invalid geometry");
    if (s[1] + 2 * d.pad < kernel || s[2] + 2 * d.pad < kernel)
      throw ShapeError(d.name + ": kernel larger than padded input " + shape_string(s));
    d.out_shape = {out_channels, (s[1] + 2 * d.pad - kernel) / stride + 1, (s[2] + 2 * d.pad - kernel) / stride + 1};
    return push(std::move(d));
  }

  NodeId dense(NodeId x, std::size_t out_features, Init init = Init::Default) {
    check_node(x, "dense");
    LayerDesc d = make(LayerKind::Dense, {x.index});
    d.in_channels = shape_size(layers_[x.index].out_shape);
    d.out_channels = out_features;
    d.init = init;
    d.out_shape = {out_features};
    return push(std::move(d));
  }

  NodeId relu(NodeId x) { return unary(LayerKind::ReLU, x); }

  NodeId leaky_relu(NodeId x, double slope = 0.2) {
    NodeId id = unary(LayerKind::LeakyReLU, x);
    layers_[id.index].slope = slope;
    return id;
  }

  NodeId avg_pool2(NodeId x) {
    const Shape& s = spatial(x, "avg_pool2");
    if (s[1] % 2 || s[2] % 2) throw ShapeError("avg_pool2: odd spatial size " + shape_string(s));
    LayerDesc d = make(LayerKind::AvgPool2, {x.index});
    d.out_shape = {s[0], s[1] / 2, s[2] / 2};
    return push(std::move(d));
  }

  NodeId global_avg_pool(NodeId x) {
    const Shape& s = spatial(x, "global_avg_pool");
    LayerDesc d = make(LayerKind::GlobalAvgPool, {x.index});
    d.out_shape = {s[0]};
    return push(std::move(d));
  }

  NodeId upsample2(NodeId x) {
    const Shape& s = spatial(x, "upsample2");
    LayerDesc d = make(LayerKind::Upsample2, {x.index});
    d.out_shape = {s[0], s[1] * 2, s[2] * 2};
    return push(std::move(d));
  }

  NodeId group_norm(NodeId x, std::size_t groups) {
    const Shape& s = spatial(x, "group_norm");
    if (groups == 0 || s[0] % groups) throw ShapeError("group_norm: channels not divisible by groups");
    LayerDesc d = make(LayerKind::GroupNorm, {x.index});
    d.in_channels = s[0];
    d.groups = groups;
    d.out_shape = s;
    return push(std::move(d));
  }

  // Single-head self-attention over spatial positions with a residual path.
  NodeId attention(NodeId x, Init out_init = Init::Default) {
    const Shape& s = spatial(x, "attention");
    LayerDesc d = make(LayerKind::Attention, {x.index});
    d.in_channels = s[0];
    d.out_shape = s;
    d.init = out_init;
    return push(std::move(d));
  }

  NodeId add(NodeId a, NodeId b) {
    check_node(a, "add");
    check_node(b, "add");
    LayerDesc d = make(LayerKind::Add, {a.index, b.index});
    if (layers_[a.index].out_shape != layers_[b.index].out_shape)
      throw ShapeError(d.name + ": operand shapes differ " + shape_string(layers_[a.index].out_shape) + " vs " +
                       shape_string(layers_[b.index].out_shape));
    d.out_shape = layers_[a.index].out_shape;
    return push(std::move(d));
  }

  NodeId concat(NodeId a, NodeId b) {
    const Shape sa = spatial(a, "concat");
    const Shape sb = spatial(b, "concat");
    LayerDesc d = make(LayerKind::Concat, {a.index, b.index});
    if (sa[1] != sb[1] || sa[2] != sb[2])
      throw ShapeError(d.name + ": spatial sizes differ " + shape_string(sa) + " vs " + shape_string(sb));
    d.out_shape = {sa[0] + sb[0], sa[1], sa[2]};
    return push(std::move(d));
  }

  // Adds a per-sample channel vector v [C] to every position of x [C,H,W].
  NodeId channel_bias(NodeId x, NodeId v) {
    const Shape s = spatial(x, "channel_bias");
    check_node(v, "channel_bias");
    LayerDesc d = make(LayerKind::ChannelBias, {x.index, v.index});
    if (layers_[v.index].out_shape != Shape{s[0]})
      throw ShapeError(d.name + ": bias shape " + shape_string(layers_[v.index].out_shape) +
                       " does not match channels of " + shape_string(s));
    d.out_shape = s;
    return push(std::move(d));
  }

  // Trainable scalar count; a pure function of the descriptors.
  std::size_t count_params() const {
    std::size_t total = 0;
    for (const auto& l : layers_)
      if (!l.frozen) total += param_count(l);
    return total;
  }

  std::size_t total_params() const {
    std::size_t total = 0;
    for (const auto& l : layers_) total += param_count(l);
    return total;
  }

 private:
  bool has_kind(LayerKind k) const {
    return std::any_of(layers_.begin(), layers_.end(), [k](const LayerDesc& l) { return l.kind == k; });
  }

  void check_node(NodeId id, const char* op) const {
    if (id.index >= layers_.size()) throw ShapeError(std::string(op) + ": unknown node");
  }

  const Shape& spatial(NodeId id, const char* op) const {
    check_node(id, op);
    const Shape& s = layers_[id.index].out_shape;
    if (s.size() != 3)
      throw ShapeError(std::string(op) + " expects a [C,H,W] input but " + layers_[id.index].name + " yields " +
                       shape_string(s));
    return s;
  }

  LayerDesc make(LayerKind kind, std::vector<std::size_t> inputs) const {
    LayerDesc d;
    d.kind = kind;
    d.inputs = std::move(inputs);
    d.frozen = frozen_;
    d.name = "l" + std::to_string(layers_.size()) + "." + std::string(to_string(kind));
    return d;
  }

  NodeId unary(LayerKind kind, NodeId x) {
    check_node(x, std::string(to_string(kind)).c_str());
    LayerDesc d = make(kind, {x.index});
    d.out_shape = layers_[x.index].out_shape;
    return push(std::move(d));
  }

  NodeId push(LayerDesc d) {
    layers_.push_back(std::move(d));
    output_ = layers_.size() - 1;
    return NodeId{output_};
  }

  std::vector<LayerDesc> layers_;
  std::size_t output_ = 0;
  bool frozen_ = false;
};

// Per-batch conditioning: diffusion timestep and/or class label per item.
struct Condition {
  std::vector<int> timesteps;
  std::vector<int> labels;
};

template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
};

template <class T>
class ParamGraph {
 public:
  ParamGraph() = default;

  ParamGraph(GraphSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    allocate();
    Rng rng = make_rng(seed, 0x1417);
    for (std::size_t li = 0; li < spec_.layers().size(); ++li) initialize(li, rng);
  }

  const GraphSpec& spec() const noexcept { return spec_; }
  std::vector<Param<T>>& params() noexcept { return params_; }
  const std::vector<Param<T>>& params() const noexcept { return params_; }

  Param<T>& param(std::string_view name) {
    for (auto& p : params_)
      if (p.name == name) return p;
    throw RangeError("no parameter named " + std::string(name));
  }

  std::size_t count_params() const { return spec_.count_params(); }

  bool has_ema() const noexcept { return !ema_.empty(); }
  std::vector<Tensor<T>>& ema() noexcept { return ema_; }
  const std::vector<Tensor<T>>& ema() const noexcept { return ema_; }

  // Shadow weights start as a copy of the current parameters.
  void enable_ema() {
    ema_.clear();
    for (const auto& p : params_) ema_.push_back(p.value);
  }

  // Copy whose live parameters are the EMA weights.
  ParamGraph ema_copy() const {
    if (!has_ema()) throw StateError("ema_copy: EMA weights not enabled");
    ParamGraph out = *this;
    for (std::size_t i = 0; i < params_.size(); ++i) out.params_[i].value = ema_[i];
    out.ema_.clear();
    out.release_tape();
    return out;
  }

  // Input gradients are only computed when requested (gradient checks).
  void set_input_grad(bool enabled) {
    need_input_grad_ = enabled;
    compute_requires_grad();
  }

  template <class U>
  ParamGraph<U> cast() const {
    ParamGraph<U> out;
    out.spec_ = spec_;
    out.param_index_ = param_index_;
    out.need_input_grad_ = need_input_grad_;
    for (const auto& p : params_) out.params_.push_back({p.name, p.value.template cast<U>(), p.grad.template cast<U>(), p.trainable});
    for (const auto& e : ema_) out.ema_.push_back(e.template cast<U>());
    out.compute_requires_grad();
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(T{});
  }

  void release_tape() {
    acts_.clear();
    dacts_.clear();
    aux_.clear();
    has_forward_ = false;
  }

  const Tensor<T>& activation(NodeId id) const {
    if (!has_forward_) throw StateError("activation: no forward pass recorded");
    return acts_.at(id.index);
  }

  const Tensor<T>& input_grad() const {
    if (!has_backward_ || !need_input_grad_) throw StateError("input_grad: not computed");
    return dacts_.front();
  }

  Tensor<T> forward(const Tensor<T>& input, const Condition* cond = nullptr) {
    kernels::pin_blas_threads();
    const auto& layers = spec_.layers();
    const Shape& in_shape = spec_.input_shape();
    if (input.rank() != in_shape.size() + 1 || !std::equal(in_shape.begin(), in_shape.end(), input.shape().begin() + 1))
      throw ShapeError("layer input: expected [N]+" + shape_string(in_shape) + ", got " + shape_string(input.shape()));
    const std::size_t n = input.dim(0);
    if (n == 0) throw ShapeError("layer input: empty batch");
    check_condition(cond, n);
    if (cond) cond_ = *cond;
    else cond_ = Condition{};

    acts_.resize(layers.size());
    aux_.resize(layers.size());
    acts_[0] = input;
    for (std::size_t li = 1; li < layers.size(); ++li) {
      const LayerDesc& d = layers[li];
      Shape s{n};
      s.insert(s.end(), d.out_shape.begin(), d.out_shape.end());
      acts_[li].resize(s);
      forward_layer(li, n);
    }
    has_forward_ = true;
    has_backward_ = false;
    return acts_[spec_.output().index];
  }

  void backward(const Tensor<T>& upstream) {
    if (!has_forward_) throw StateError("backward called before forward");
    const auto& layers = spec_.layers();
    const std::size_t out = spec_.output().index;
    if (upstream.shape() != acts_[out].shape())
      throw ShapeError("backward: upstream shape " + shape_string(upstream.shape()) + " does not match output " +
                       shape_string(acts_[out].shape()));
    zero_grad();
    // Gradient buffers keep their storage between steps; live_ marks the ones
    // reached by the current pass.
    dacts_.resize(layers.size());
    live_.assign(layers.size(), false);
    auto open = [&](std::size_t i) {
      dacts_[i].resize(acts_[i].shape());
      dacts_[i].fill(T{});
      live_[i] = true;
    };
    dacts_[out] = upstream;
    live_[out] = true;
    const std::size_t n = acts_[0].dim(0);
    for (std::size_t li = out + 1; li-- > 1;) {
      if (!live_[li] || !requires_grad_[li]) continue;
      for (std::size_t in : layers[li].inputs)
        if (requires_grad_[in] && !live_[in]) open(in);
      backward_layer(li, n);
    }
    if (need_input_grad_ && !live_[0]) open(0);
    has_backward_ = true;
  }

 private:
  template <class U>
  friend class ParamGraph;

  void allocate() {
    const auto& layers = spec_.layers();
    param_index_.assign(layers.size(), {});
    for (std::size_t li = 0; li < layers.size(); ++li) {
      for (const auto& ps : param_shapes(layers[li])) {
        param_index_[li].push_back(params_.size());
        params_.push_back({layers[li].name + "." + ps.suffix, Tensor<T>(ps.shape), Tensor<T>(ps.shape), !layers[li].frozen});
      }
    }
    compute_requires_grad();
  }

  void compute_requires_grad() {
    const auto& layers = spec_.layers();
    requires_grad_.assign(layers.size(), false);
    if (layers.empty()) return;
    requires_grad_[0] = need_input_grad_;
    for (std::size_t li = 1; li < layers.size(); ++li) {
      bool r = !layers[li].frozen && param_count(layers[li]) > 0;
      for (std::size_t in : layers[li].inputs) r = r || requires_grad_[in];
      requires_grad_[li] = r;
    }
  }

  void initialize(std::size_t li, Rng& rng) {
    const LayerDesc& d = spec_.layers()[li];
    auto normal = [&](Tensor<T>& t, double stddev) {
      std::normal_distribution<double> dist(0.0, stddev);
      for (auto& v : t.values()) v = static_cast<T>(dist(rng));
    };
    auto& idx = param_index_[li];
    switch (d.kind) {
      case LayerKind::Conv2d:
      case LayerKind::Dense: {
        const double fan_in = static_cast<double>(d.kind == LayerKind::Conv2d ? d.in_channels * d.kernel * d.kernel : d.in_channels);
        if (d.init == Init::Zero) params_[idx[0]].value.fill(T{});
        else normal(params_[idx[0]].value, std::sqrt(2.0 / fan_in));
        params_[idx[1]].value.fill(T{});
        break;
      }
      case LayerKind::GroupNorm:
        params_[idx[0]].value.fill(T{1});
        params_[idx[1]].value.fill(T{});
        break;
      case LayerKind::Attention: {
        const double sd = 1.0 / std::sqrt(static_cast<double>(d.in_channels));
        for (std::size_t k = 0; k < 3; ++k) normal(params_[idx[k]].value, sd);
        if (d.init == Init::Zero) params_[idx[3]].value.fill(T{});
        else normal(params_[idx[3]].value, sd);
        break;
      }
      case LayerKind::ClassEmbedding:
        normal(params_[idx[0]].value, 1.0);
        break;
      default:
        break;
    }
  }

  void check_condition(const Condition* cond, std::size_t n) const {
    const bool want_t = spec_.uses_time();
    const bool want_y = spec_.uses_class();
    if (!want_t && !want_y) {
      if (cond && (!cond->timesteps.empty() || !cond->labels.empty()))
        throw ShapeError("layer input: condition supplied to an unconditional graph");
      return;
    }
    if (!cond) throw ShapeError("layer input: conditional graph requires a condition");
    if (want_t && cond->timesteps.size() != n)
      throw ShapeError("time_embedding: expected " + std::to_string(n) + " timesteps, got " +
                       std::to_string(cond->timesteps.size()));
    if (want_y) {
      if (cond->labels.size() != n)
        throw ShapeError("class_embedding: expected " + std::to_string(n) + " labels, got " +
                         std::to_string(cond->labels.size()));
      const int k = static_cast<int>(spec_.num_classes());
      for (int y : cond->labels)
        if (y < 0 || y >= k) throw RangeError("class_embedding: label " + std::to_string(y) + " out of range");
    }
  }

  const T* pvalue(std::size_t li, std::size_t k) const { return params_[param_index_[li][k]].value.data(); }
  T* pgrad(std::size_t li, std::size_t k) { return params_[param_index_[li][k]].grad.data(); }
  bool ptrain(std::size_t li) const { return !spec_.layers()[li].frozen; }

  static kernels::ConvGeometry geometry(const LayerDesc& d, const Shape& in) {
    return {in[0], in[1], in[2], d.kernel, d.stride, d.pad, d.out_shape[1], d.out_shape[2]};
  }

  // Samples per im2col matrix; a fixed function of (n, p) so results never depend on scheduling.
  static std::size_t conv_chunk(std::size_t n, std::size_t p) {
    return std::clamp<std::size_t>(kConvColumns / p, 1, std::max<std::size_t>(n, 1));
  }
  static constexpr std::size_t kConvColumns = 512;

  void forward_layer(std::size_t li, std::size_t n) {
    const LayerDesc& d = spec_.layers()[li];
    Tensor<T>& y = acts_[li];
    const std::size_t out_sz = shape_size(d.out_shape);
    switch (d.kind) {
      case LayerKind::Input:
        break;
      case LayerKind::TimeEmbedding: {
        const std::size_t half = d.out_channels / 2;
        for (std::size_t b = 0; b < n; ++b) {
          const double t = cond_.timesteps[b];
          for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            y[b * out_sz + i] = static_cast<T>(std::sin(t * freq));
            y[b * out_sz + half + i] = static_cast<T>(std::cos(t * freq));
          }
        }
        break;
      }
      case LayerKind::ClassEmbedding: {
        const T* table = pvalue(li, 0);
        for (std::size_t b = 0; b < n; ++b)
          std::copy_n(table + static_cast<std::size_t>(cond_.labels[b]) * out_sz, out_sz, y.data() + b * out_sz);
        break;
      }
      case LayerKind::Conv2d: {
        const Tensor<T>& x = acts_[d.inputs[0]];
        const Shape& in = spec_.layers()[d.inputs[0]].out_shape;
        const auto g = geometry(d, in);
        const std::size_t in_sz = shape_size(in);
        const T* w = pvalue(li, 0);
        const T* bias = pvalue(li, 1);
        const std::size_t p = g.positions();
        const std::size_t k = g.patch();
        const std::size_t chunk = conv_chunk(n, p);
        cols_.resize(k * chunk * p);
        convbuf_.resize(d.out_channels * chunk * p);
        for (std::size_t b0 = 0; b0 < n; b0 += chunk) {
          const std::size_t nb = std::min(chunk, n - b0);
          const std::size_t ld = nb * p;
          for (std::size_t j = 0; j < nb; ++j) kernels::im2col(x.data() + (b0 + j) * in_sz, g, cols_.data() + j * p, ld);
          kernels::gemm(false, false, d.out_channels, ld, k, T{1}, w, k, cols_.data(), ld, T{0}, convbuf_.data(), ld);
          for (std::size_t j = 0; j < nb; ++j)
            for (std::size_t c = 0; c < d.out_channels; ++c) {
              const T* srow = convbuf_.data() + c * ld + j * p;
              T* row = y.data() + (b0 + j) * out_sz + c * p;
              for (std::size_t i = 0; i < p; ++i) row[i] = srow[i] + bias[c];
            }
        }
        break;
      }
      case LayerKind::Dense: {
        const Tensor<T>& x = acts_[d.inputs[0]];
        const T* bias = pvalue(li, 1);
        kernels::gemm(false, true, n, d.out_channels, d.in_channels, T{1}, x.data(), d.in_channels, pvalue(li, 0),
                      d.in_channels, T{0}, y.data(), d.out_channels);
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t o = 0; o < d.out_channels; ++o) y[b * d.out_channels + o] += bias[o];
        break;
      }
      case LayerKind::ReLU: {
        const Tensor<T>& x = acts_[d.inputs[0]];
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
        break;
      }
      case LayerKind::LeakyReLU: {
        const Tensor<T>& x = acts_[d.inputs[0]];
        const T slope = static_cast<T>(d.slope);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] > T{0} ? x[i] : slope * x[i];
        break;
      }
      case LayerKind::AvgPool2: {
        const Tensor<T>& x = acts_[d.inputs[0]];
        const Shape& in = spec_.layers()[d.inputs[0]].out_shape;
        const std::size_t oh = d.out_shape[1], ow = d.out_shape[2], iw = in[2];
        for (std::size_t bc = 0; bc < n * in[0]; ++bc) {
          const T* src = x.data() + bc * in[1] * iw;
          T* dst = y.data() + bc * oh * ow;
          for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const T* s = src + 2 * oy * iw + 2 * ox;
              dst[oy * ow + ox] = (s[0] + s[1] + s[iw] + s[iw + 1]) * T(0.25);
            }
        }
        break;
      }
      case LayerKind::GlobalAvgPool: {
        const Tensor<T>& x = acts_[d.inputs[0]];
        const Shape& in = spec_.layers()[d.inputs[0]].out_shape;
        const std::size_t hw = in[1] * in[2];
        for (std::size_t bc = 0; bc < n * in[0]; ++bc) {
          T acc{0};
          const T* src = x.data() + bc * hw;
          for (std::size_t i = 0; i < hw; ++i) acc += src[i];
          y[bc] = acc / static_cast<T>(hw);
        }
        break;
      }
      case LayerKind::Upsample2: {
        const Tensor<T>& x = acts_[d.inputs[0]];
        const Shape& in = spec_.layers()[d.inputs[0]].out_shape;
        const std::size_t ih = in[1], iw = in[2], ow = d.out_shape[2];
        for (std::size_t bc = 0; bc < n * in[0]; ++bc) {
          const T* src = x.data() + bc * ih * iw;
          T* dst = y.data() + bc * 4 * ih * iw;
          for (std::size_t oy = 0; oy < 2 * ih; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = src[(oy / 2) * iw + ox / 2];
        }
        break;
      }
      case LayerKind::GroupNorm:
        group_norm_forward(li, n);
        break;
      case LayerKind::Attention:
        attention_forward(li, n);
        break;
      case LayerKind::Add: {
        const Tensor<T>& a = acts_[d.inputs[0]];
        const Tensor<T>& b = acts_[d.inputs[1]];
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
        break;
      }
      case LayerKind::Concat: {
        const Tensor<T>& a = acts_[d.inputs[0]];
        const Tensor<T>& b = acts_[d.inputs[1]];
        const std::size_t sa = shape_size(spec_.layers()[d.inputs[0]].out_shape);
        const std::size_t sb = shape_size(spec_.layers()[d.inputs[1]].out_shape);
        for (std::size_t i = 0; i < n; ++i) {
          std::copy_n(a.data() + i * sa, sa, y.data() + i * out_sz);
          std::copy_n(b.data() + i * sb, sb, y.data() + i * out_sz + sa);
        }
        break;
      }
      case LayerKind::ChannelBias: {
        const Tensor<T>& x = acts_[d.inputs[0]];
        const Tensor<T>& v = acts_[d.inputs[1]];
        const std::size_t c = d.out_shape[0], hw = d.out_shape[1] * d.out_shape[2];
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const T add = v[b * c + ch];
            const T* src = x.data() + (b * c + ch) * hw;
            T* dst = y.data() + (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] + add;
          }
        break;
      }
    }
  }

  void backward_layer(std::size_t li, std::size_t n) {
    const LayerDesc& d = spec_.layers()[li];
    const Tensor<T>& dy = dacts_[li];
    const std::size_t out_sz = shape_size(d.out_shape);
    auto needs = [&](std::size_t k) { return requires_grad_[d.inputs[k]]; };
    switch (d.kind) {
      case LayerKind::Input:
      case LayerKind::TimeEmbedding:
        break;
      case LayerKind::ClassEmbedding: {
        if (!ptrain(li)) break;
        T* g = pgrad(li, 0);
        for (std::size_t b = 0; b < n; ++b) {
          T* row = g + static_cast<std::size_t>(cond_.labels[b]) * out_sz;
          for (std::size_t i = 0; i < out_sz; ++i) row[i] += dy[b * out_sz + i];
        }
        break;
      }
      case LayerKind::Conv2d: {
        const Tensor<T>& x = acts_[d.inputs[0]];
        const Shape& in = spec_.layers()[d.inputs[0]].out_shape;
        const auto g = geometry(d, in);
        const std::size_t in_sz = shape_size(in);
        const std::size_t p = g.positions();
        const std::size_t k = g.patch();
        const bool train = ptrain(li);
        const bool want_dx = needs(0);
        const std::size_t chunk = conv_chunk(n, p);
        if (train) cols_.resize(k * chunk * p);
        if (want_dx) dcols_.resize(k * chunk * p);
        convbuf_.resize(d.out_channels * chunk * p);
        for (std::size_t b0 = 0; b0 < n; b0 += chunk) {
          const std::size_t nb = std::min(chunk, n - b0);
          const std::size_t ld = nb * p;
          for (std::size_t j = 0; j < nb; ++j)
            for (std::size_t c = 0; c < d.out_channels; ++c)
              std::copy_n(dy.data() + (b0 + j) * out_sz + c * p, p, convbuf_.data() + c * ld + j * p);
          const T* gout = convbuf_.data();
          if (train) {
            for (std::size_t j = 0; j < nb; ++j)
              kernels::im2col(x.data() + (b0 + j) * in_sz, g, cols_.data() + j * p, ld);
            kernels::gemm(false, true, d.out_channels, k, ld, T{1}, gout, ld, cols_.data(), ld, T{1}, pgrad(li, 0), k);
            T* gb = pgrad(li, 1);
            for (std::size_t c = 0; c < d.out_channels; ++c) {
              T acc{0};
              for (std::size_t i = 0; i < ld; ++i) acc += gout[c * ld + i];
              gb[c] += acc;
            }
          }
          if (want_dx) {
            kernels::gemm(true, false, k, ld, d.out_channels, T{1}, pvalue(li, 0), k, gout, ld, T{0}, dcols_.data(), ld);
            for (std::size_t j = 0; j < nb; ++j)
              kernels::col2im_add(dcols_.data() + j * p, g, dacts_[d.inputs[0]].data() + (b0 + j) * in_sz, ld);
          }
        }
        break;
      }
      case LayerKind::Dense: {
        const Tensor<T>& x = acts_[d.inputs[0]];
        if (ptrain(li)) {
          kernels::gemm(true, false, d.out_channels, d.in_channels, n, T{1}, dy.data(), d.out_channels, x.data(),
                        d.in_channels, T{1}, pgrad(li, 0), d.in_channels);
          T* gb = pgrad(li, 1);
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t o = 0; o < d.out_channels; ++o) gb[o] += dy[b * d.out_channels + o];
        }
        if (needs(0))
          kernels::gemm(false, false, n, d.in_channels, d.out_channels, T{1}, dy.data(), d.out_channels, pvalue(li, 0),
                        d.in_channels, T{1}, dacts_[d.inputs[0]].data(), d.in_channels);
        break;
      }
      case LayerKind::ReLU: {
        if (!needs(0)) break;
        const Tensor<T>& x = acts_[d.inputs[0]];
        Tensor<T>& dx = dacts_[d.inputs[0]];
        for (std::size_t i = 0; i < dy.size(); ++i)
          if (x[i] > T{0}) dx[i] += dy[i];
        break;
      }
      case LayerKind::LeakyReLU: {
        if (!needs(0)) break;
        const Tensor<T>& x = acts_[d.inputs[0]];
        Tensor<T>& dx = dacts_[d.inputs[0]];
        const T slope = static_cast<T>(d.slope);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += x[i] > T{0} ? dy[i] : slope * dy[i];
        break;
      }
      case LayerKind::AvgPool2: {
        if (!needs(0)) break;
        const Shape& in = spec_.layers()[d.inputs[0]].out_shape;
        Tensor<T>& dx = dacts_[d.inputs[0]];
        const std::size_t oh = d.out_shape[1], ow = d.out_shape[2], iw = in[2];
        for (std::size_t bc = 0; bc < n * in[0]; ++bc) {
          T* dst = dx.data() + bc * in[1] * iw;
          const T* src = dy.data() + bc * oh * ow;
          for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const T g = src[oy * ow + ox] * T(0.25);
              T* t = dst + 2 * oy * iw + 2 * ox;
              t[0] += g;
              t[1] += g;
              t[iw] += g;
              t[iw + 1] += g;
            }
        }
        break;
      }
      case LayerKind::GlobalAvgPool: {
        if (!needs(0)) break;
        const Shape& in = spec_.layers()[d.inputs[0]].out_shape;
        Tensor<T>& dx = dacts_[d.inputs[0]];
        const std::size_t hw = in[1] * in[2];
        for (std::size_t bc = 0; bc < n * in[0]; ++bc) {
          const T g = dy[bc] / static_cast<T>(hw);
          T* dst = dx.data() + bc * hw;
          for (std::size_t i = 0; i < hw; ++i) dst[i] += g;
        }
        break;
      }
      case LayerKind::Upsample2: {
        if (!needs(0)) break;
        const Shape& in = spec_.layers()[d.inputs[0]].out_shape;
        Tensor<T>& dx = dacts_[d.inputs[0]];
        const std::size_t ih = in[1], iw = in[2], ow = d.out_shape[2];
        for (std::size_t bc = 0; bc < n * in[0]; ++bc) {
          T* dst = dx.data() + bc * ih * iw;
          const T* src = dy.data() + bc * 4 * ih * iw;
          for (std::size_t oy = 0; oy < 2 * ih; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) dst[(oy / 2) * iw + ox / 2] += src[oy * ow + ox];
        }
        break;
      }
      case LayerKind::GroupNorm:
        group_norm_backward(li, n);
        break;
      case LayerKind::Attention:
        attention_backward(li, n);
        break;
      case LayerKind::Add:
        for (std::size_t k = 0; k < 2; ++k) {
          if (!needs(k)) continue;
          Tensor<T>& dx = dacts_[d.inputs[k]];
          for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
        }
        break;
      case LayerKind::Concat: {
        const std::size_t sa = shape_size(spec_.layers()[d.inputs[0]].out_shape);
        const std::size_t sb = shape_size(spec_.layers()[d.inputs[1]].out_shape);
        for (std::size_t b = 0; b < n; ++b) {
          if (needs(0)) {
            T* da = dacts_[d.inputs[0]].data() + b * sa;
            for (std::size_t i = 0; i < sa; ++i) da[i] += dy[b * out_sz + i];
          }
          if (needs(1)) {
            T* db = dacts_[d.inputs[1]].data() + b * sb;
            for (std::size_t i = 0; i < sb; ++i) db[i] += dy[b * out_sz + sa + i];
          }
        }
        break;
      }
      case LayerKind::ChannelBias: {
        const std::size_t c = d.out_shape[0], hw = d.out_shape[1] * d.out_shape[2];
        if (needs(0)) {
          Tensor<T>& dx = dacts_[d.inputs[0]];
          for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
        }
        if (needs(1)) {
          Tensor<T>& dv = dacts_[d.inputs[1]];
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t ch = 0; ch < c; ++ch) {
              T acc{0};
              const T* src = dy.data() + (b * c + ch) * hw;
              for (std::size_t i = 0; i < hw; ++i) acc += src[i];
              dv[b * c + ch] += acc;
            }
        }
        break;
      }
    }
  }

  static constexpr double kNormEps = 1e-5;

  void group_norm_forward(std::size_t li, std::size_t n) {
    const LayerDesc& d = spec_.layers()[li];
    const Tensor<T>& x = acts_[d.inputs[0]];
    Tensor<T>& y = acts_[li];
    const std::size_t c = d.out_shape[0], hw = d.out_shape[1] * d.out_shape[2];
    const std::size_t groups = d.groups, per = c / groups, cnt = per * hw;
    const T* gamma = pvalue(li, 0);
    const T* beta = pvalue(li, 1);
    auto& stats = aux_[li];
    stats.resize(2 * n * groups);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t g = 0; g < groups; ++g) {
        const T* src = x.data() + (b * c + g * per) * hw;
        double sum = 0.0;
        for (std::size_t i = 0; i < cnt; ++i) sum += src[i];
        const double mean = sum / static_cast<double>(cnt);
        double var = 0.0;
        for (std::size_t i = 0; i < cnt; ++i) var += (src[i] - mean) * (src[i] - mean);
        var /= static_cast<double>(cnt);
        const double inv = 1.0 / std::sqrt(var + kNormEps);
        stats[2 * (b * groups + g)] = static_cast<T>(mean);
        stats[2 * (b * groups + g) + 1] = static_cast<T>(inv);
        T* dst = y.data() + (b * c + g * per) * hw;
        for (std::size_t ch = 0; ch < per; ++ch) {
          const T ga = gamma[g * per + ch], be = beta[g * per + ch];
          for (std::size_t i = 0; i < hw; ++i) {
            const std::size_t k = ch * hw + i;
            dst[k] = static_cast<T>((src[k] - mean) * inv) * ga + be;
          }
        }
      }
  }

  void group_norm_backward(std::size_t li, std::size_t n) {
    const LayerDesc& d = spec_.layers()[li];
    const Tensor<T>& x = acts_[d.inputs[0]];
    const Tensor<T>& dy = dacts_[li];
    const std::size_t c = d.out_shape[0], hw = d.out_shape[1] * d.out_shape[2];
    const std::size_t groups = d.groups, per = c / groups, cnt = per * hw;
    const T* gamma = pvalue(li, 0);
    const bool train = ptrain(li);
    const bool want_dx = requires_grad_[d.inputs[0]];
    const auto& stats = aux_[li];
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t g = 0; g < groups; ++g) {
        const double mean = stats[2 * (b * groups + g)];
        const double inv = stats[2 * (b * groups + g) + 1];
        const std::size_t off = (b * c + g * per) * hw;
        const T* src = x.data() + off;
        const T* gout = dy.data() + off;
        double sum_dxh = 0.0, sum_dxh_xh = 0.0;
        for (std::size_t ch = 0; ch < per; ++ch) {
          const std::size_t cc = g * per + ch;
          double dgamma = 0.0, dbeta = 0.0;
          for (std::size_t i = 0; i < hw; ++i) {
            const std::size_t k = ch * hw + i;
            const double xh = (src[k] - mean) * inv;
            const double dxh = static_cast<double>(gout[k]) * gamma[cc];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh;
            dgamma += gout[k] * xh;
            dbeta += gout[k];
          }
          if (train) {
            pgrad(li, 0)[cc] += static_cast<T>(dgamma);
            pgrad(li, 1)[cc] += static_cast<T>(dbeta);
          }
        }
        if (!want_dx) continue;
        const double m1 = sum_dxh / static_cast<double>(cnt), m2 = sum_dxh_xh / static_cast<double>(cnt);
        T* gin = dacts_[d.inputs[0]].data() + off;
        for (std::size_t ch = 0; ch < per; ++ch) {
          const double ga = gamma[g * per + ch];
          for (std::size_t i = 0; i < hw; ++i) {
            const std::size_t k = ch * hw + i;
            const double xh = (src[k] - mean) * inv;
            gin[k] += static_cast<T>(inv * (gout[k] * ga - m1 - xh * m2));
          }
        }
      }
  }

  // aux layout per sample: Q, K, V, O ([C,L] each) then A [L,L].
  void attention_forward(std::size_t li, std::size_t n) {
    const LayerDesc& d = spec_.layers()[li];
    const Tensor<T>& x = acts_[d.inputs[0]];
    Tensor<T>& y = acts_[li];
    const std::size_t c = d.in_channels, l = d.out_shape[1] * d.out_shape[2];
    const std::size_t cl = c * l, per = 4 * cl + l * l;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(c)));
    auto& aux = aux_[li];
    aux.resize(n * per);
    for (std::size_t b = 0; b < n; ++b) {
      const T* xs = x.data() + b * cl;
      T* q = aux.data() + b * per;
      T* k = q + cl;
      T* v = k + cl;
      T* o = v + cl;
      T* a = o + cl;
      kernels::gemm(false, false, c, l, c, T{1}, pvalue(li, 0), c, xs, l, T{0}, q, l);
      kernels::gemm(false, false, c, l, c, T{1}, pvalue(li, 1), c, xs, l, T{0}, k, l);
      kernels::gemm(false, false, c, l, c, T{1}, pvalue(li, 2), c, xs, l, T{0}, v, l);
      kernels::gemm(true, false, l, l, c, scale, q, l, k, l, T{0}, a, l);
      for (std::size_t i = 0; i < l; ++i) {
        T* row = a + i * l;
        const T mx = *std::max_element(row, row + l);
        T sum{0};
        for (std::size_t j = 0; j < l; ++j) {
          row[j] = std::exp(row[j] - mx);
          sum += row[j];
        }
        for (std::size_t j = 0; j < l; ++j) row[j] /= sum;
      }
      kernels::gemm(false, true, c, l, l, T{1}, v, l, a, l, T{0}, o, l);
      T* ys = y.data() + b * cl;
      std::copy_n(xs, cl, ys);
      kernels::gemm(false, false, c, l, c, T{1}, pvalue(li, 3), c, o, l, T{1}, ys, l);
    }
  }

  void attention_backward(std::size_t li, std::size_t n) {
    const LayerDesc& d = spec_.layers()[li];
    const Tensor<T>& x = acts_[d.inputs[0]];
    const Tensor<T>& dy = dacts_[li];
    const std::size_t c = d.in_channels, l = d.out_shape[1] * d.out_shape[2];
    const std::size_t cl = c * l, per = 4 * cl + l * l;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(c)));
    const bool train = ptrain(li);
    const bool want_dx = requires_grad_[d.inputs[0]];
    const auto& aux = aux_[li];
    scratch_.resize(4 * cl + l * l);
    T* d_o = scratch_.data();
    T* d_v = d_o + cl;
    T* d_q = d_v + cl;
    T* d_k = d_q + cl;
    T* d_s = d_k + cl;
    for (std::size_t b = 0; b < n; ++b) {
      const T* xs = x.data() + b * cl;
      const T* g = dy.data() + b * cl;
      const T* q = aux.data() + b * per;
      const T* k = q + cl;
      const T* v = k + cl;
      const T* o = v + cl;
      const T* a = o + cl;
      T* gin = want_dx ? dacts_[d.inputs[0]].data() + b * cl : nullptr;
      if (train) kernels::gemm(false, true, c, c, l, T{1}, g, l, o, l, T{1}, pgrad(li, 3), c);
      kernels::gemm(true, false, c, l, c, T{1}, pvalue(li, 3), c, g, l, T{0}, d_o, l);
      if (gin)
        for (std::size_t i = 0; i < cl; ++i) gin[i] += g[i];
      kernels::gemm(false, false, c, l, l, T{1}, d_o, l, a, l, T{0}, d_v, l);
      kernels::gemm(true, false, l, l, c, T{1}, d_o, l, v, l, T{0}, d_s, l);
      for (std::size_t i = 0; i < l; ++i) {
        T* ds = d_s + i * l;
        const T* ar = a + i * l;
        T dot{0};
        for (std::size_t j = 0; j < l; ++j) dot += ds[j] * ar[j];
        for (std::size_t j = 0; j < l; ++j) ds[j] = ar[j] * (ds[j] - dot);
      }
      kernels::gemm(false, true, c, l, l, scale, k, l, d_s, l, T{0}, d_q, l);
      kernels::gemm(false, false, c, l, l, scale, q, l, d_s, l, T{0}, d_k, l);
      const T* dproj[3] = {d_q, d_k, d_v};
      for (std::size_t m = 0; m < 3; ++m) {
        if (train) kernels::gemm(false, true, c, c, l, T{1}, dproj[m], l, xs, l, T{1}, pgrad(li, m), c);
        if (gin) kernels::gemm(true, false, c, l, c, T{1}, pvalue(li, m), c, dproj[m], l, T{1}, gin, l);
      }
    }
  }

  GraphSpec spec_;
  std::vector<Param<T>> params_;
  std::vector<std::vector<std::size_t>> param_index_;
  std::vector<Tensor<T>> ema_;
  std::vector<bool> requires_grad_;
  bool need_input_grad_ = false;

  Condition cond_;
  std::vector<Tensor<T>> acts_;
  std::vector<Tensor<T>> dacts_;
  std::vector<std::vector<T>> aux_;
  std::vector<T> cols_, dcols_, scratch_, convbuf_;
  std::vector<bool> live_;
  bool has_forward_ = false;
  bool has_backward_ = false;
};

}  // namespace detectlab::microtensor
