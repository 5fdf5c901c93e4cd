#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "decg/ops.hpp"
#include "decg/optim.hpp"
#include "decg/text.hpp"

namespace decg {

/// Declarative description of a densely connected 1D network.
///
/// Layout: stem conv (+ optional max pool) -> [dense block -> transition] x (num_blocks - 1)
/// -> dense block -> norm/relu -> global average pool -> affine head -> softmax.
/// A dense layer is norm -> relu -> conv(kernel_size, same padding) -> dropout; a transition is
/// norm -> relu -> conv(transition_kernel) with channel compression -> average pool.
struct ModelConfig {
  int num_blocks = 3;
  int layers_per_block = 3;
  int growth_rate = 12;
  int kernel_size = 3;
  double reduction = 0.25;
  double dropout_rate = 0.1;
  int stem_kernel = 3;
  int stem_stride = 1;
  int stem_channels = 128;
  int stem_pool_window = 0;  // 0 disables the stem pool
  int stem_pool_stride = 0;
  int transition_kernel = 1;
  int transition_pool_window = 2;
  int transition_pool_stride = 2;
  int num_classes = 5;
  int input_length = 187;

  void validate() const;
  std::string to_text() const;
  /// Applies key=value overrides on top of `base`; unknown keys are rejected.
  static ModelConfig from_map(const std::map<std::string, std::string>& kv, ModelConfig base);
  static ModelConfig from_map(const std::map<std::string, std::string>& kv) {
    return from_map(kv, ModelConfig{});
  }
  static bool has_key(const std::string& key);
  static ModelConfig from_text(std::string_view text);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Beat-level preset: 3 blocks x 3 layers, growth 12, kernel 3, dropout 0.1, reduction 0.25.
inline ModelConfig mitbih_preset() { return ModelConfig{}; }

/// Recording-level preset for 60 s at 300 Hz: five dense blocks.
inline ModelConfig cinc_preset() {
  ModelConfig c;
  c.num_blocks = 5;
  c.layers_per_block = 4;
  c.growth_rate = 12;
  c.kernel_size = 3;
  c.reduction = 0.5;
  c.dropout_rate = 0.1;
  c.stem_kernel = 15;
  c.stem_stride = 2;
  c.stem_channels = 24;
  c.stem_pool_window = 3;
  c.stem_pool_stride = 2;
  c.transition_kernel = 1;
  c.transition_pool_window = 2;
  c.transition_pool_stride = 4;
  c.num_classes = 4;
  c.input_length = 18000;
  return c;
}

inline ModelConfig preset_by_name(const std::string& name) {
  if (name == "mitbih") return mitbih_preset();
  if (name == "cinc") return cinc_preset();
  throw std::invalid_argument("unknown preset '" + name + "' (expected cinc or mitbih)");
}

inline int dense_block_channels(int c_in, int layers, int growth) { return c_in + layers * growth; }

inline int transition_channels(int c_in, double reduction) {
  const int c = static_cast<int>(std::floor(c_in * reduction));
  return c < 1 ? 1 : c;
}

/// Predicted extent after a named stage.
struct StageShape {
  std::string stage;
  std::size_t length;
  std::size_t channels;
  friend bool operator==(const StageShape&, const StageShape&) = default;
};

/// Shape bookkeeping from the config alone; throws naming the stage that collapses.
inline std::vector<StageShape> plan_stages(const ModelConfig& c) {
  std::vector<StageShape> out;
  long len = c.input_length;
  int ch = c.stem_channels;
  auto sweep = [&](long n, int window, int stride, int pad, const std::string& stage) {
    const long padded = n + 2L * pad;
    if (padded < window) {
      throw std::invalid_argument("model config collapses the feature length at " + stage +
                                  " (length " + std::to_string(n) + ", window " +
                                  std::to_string(window) + ")");
    }
    return (padded - window) / stride + 1;
  };
  len = sweep(len, c.stem_kernel, c.stem_stride, (c.stem_kernel - 1) / 2, "stem.conv");
  out.push_back({"stem.conv", static_cast<std::size_t>(len), static_cast<std::size_t>(ch)});
  if (c.stem_pool_window > 0) {
    len = sweep(len, c.stem_pool_window, c.stem_pool_stride, 0, "stem.pool");
    out.push_back({"stem.pool", static_cast<std::size_t>(len), static_cast<std::size_t>(ch)});
  }
  for (int b = 0; b < c.num_blocks; ++b) {
    const std::string name = "block" + std::to_string(b + 1);
    ch = dense_block_channels(ch, c.layers_per_block, c.growth_rate);
    out.push_back({name, static_cast<std::size_t>(len), static_cast<std::size_t>(ch)});
    if (b + 1 < c.num_blocks) {
      const std::string tname = "transition" + std::to_string(b + 1);
      ch = transition_channels(ch, c.reduction);
      len = sweep(len, c.transition_kernel, 1, (c.transition_kernel - 1) / 2, tname);
      len = sweep(len, c.transition_pool_window, c.transition_pool_stride, 0, tname);
      out.push_back({tname, static_cast<std::size_t>(len), static_cast<std::size_t>(ch)});
    }
  }
  out.push_back({"features", static_cast<std::size_t>(len), static_cast<std::size_t>(ch)});
  return out;
}

inline void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (num_blocks < 1) fail("num_blocks must be >= 1");
  if (layers_per_block < 1) fail("layers_per_block must be >= 1");
  if (growth_rate < 1) fail("growth_rate must be >= 1");
  if (kernel_size < 1 || kernel_size % 2 == 0) fail("kernel_size must be odd and positive");
  if (!(reduction > 0.0 && reduction <= 1.0)) fail("reduction must be in (0, 1]");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must be in [0, 1)");
  if (stem_kernel < 1 || stem_stride < 1 || stem_channels < 1) fail("stem must be positive");
  if (stem_pool_window < 0 || (stem_pool_window > 0 && stem_pool_stride < 1))
    fail("stem pool window/stride invalid");
  if (transition_kernel < 1 || transition_kernel % 2 == 0)
    fail("transition_kernel must be odd and positive");
  if (transition_pool_window < 1 || transition_pool_stride < 1)
    fail("transition pool window/stride must be positive");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (input_length < 1) fail("input_length must be >= 1");
  plan_stages(*this);
}

inline std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "num_blocks=" << num_blocks << '\n'
     << "layers_per_block=" << layers_per_block << '\n'
     << "growth_rate=" << growth_rate << '\n'
     << "kernel_size=" << kernel_size << '\n'
     << "reduction=" << text::format_real(reduction) << '\n'
     << "dropout_rate=" << text::format_real(dropout_rate) << '\n'
     << "stem_kernel=" << stem_kernel << '\n'
     << "stem_stride=" << stem_stride << '\n'
     << "stem_channels=" << stem_channels << '\n'
     << "stem_pool_window=" << stem_pool_window << '\n'
     << "stem_pool_stride=" << stem_pool_stride << '\n'
     << "transition_kernel=" << transition_kernel << '\n'
     << "transition_pool_window=" << transition_pool_window << '\n'
     << "transition_pool_stride=" << transition_pool_stride << '\n'
     << "num_classes=" << num_classes << '\n'
     << "input_length=" << input_length << '\n';
  return os.str();
}

inline bool ModelConfig::has_key(const std::string& key) {
  static const char* const kKeys[] = {
      "num_blocks",       "layers_per_block",       "growth_rate",           "kernel_size",
      "reduction",        "dropout_rate",           "stem_kernel",           "stem_stride",
      "stem_channels",    "stem_pool_window",       "stem_pool_stride",      "transition_kernel",
      "transition_pool_window", "transition_pool_stride", "num_classes",   "input_length"};
  for (const char* k : kKeys)
    if (key == k) return true;
  return false;
}

inline ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv,
                                         ModelConfig c) {
  const std::map<std::string, int*> ints{
      {"num_blocks", &c.num_blocks},
      {"layers_per_block", &c.layers_per_block},
      {"growth_rate", &c.growth_rate},
      {"kernel_size", &c.kernel_size},
      {"stem_kernel", &c.stem_kernel},
      {"stem_stride", &c.stem_stride},
      {"stem_channels", &c.stem_channels},
      {"stem_pool_window", &c.stem_pool_window},
      {"stem_pool_stride", &c.stem_pool_stride},
      {"transition_kernel", &c.transition_kernel},
      {"transition_pool_window", &c.transition_pool_window},
      {"transition_pool_stride", &c.transition_pool_stride},
      {"num_classes", &c.num_classes},
      {"input_length", &c.input_length}};
  const std::map<std::string, double*> reals{{"reduction", &c.reduction},
                                             {"dropout_rate", &c.dropout_rate}};
  for (const auto& [key, value] : kv) {
    if (auto it = ints.find(key); it != ints.end()) {
      *it->second = text::to_number<int>(value, key);
    } else if (auto jt = reals.find(key); jt != reals.end()) {
      *jt->second = text::to_number<double>(value, key);
    } else {
      throw std::invalid_argument("model config: unknown key '" + key + "'");
    }
  }
  return c;
}

inline ModelConfig ModelConfig::from_text(std::string_view body) {
  return from_map(text::parse_key_values(body, "model config"));
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

template <class T>
struct NormLayer {
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormState<T> stats;
};

template <class T>
struct ConvLayer {
  Tensor<T> kernel;  // (k, Cin, Cout), no bias
  std::size_t stride = 1;
  std::size_t padding = 0;
};

template <class T>
struct DenseLayer {
  NormLayer<T> norm;
  ConvLayer<T> conv;
};

template <class T>
struct TransitionLayer {
  NormLayer<T> norm;
  ConvLayer<T> conv;
};

template <class T>
struct Network {
  ModelConfig config;
  ConvLayer<T> stem;
  std::vector<std::vector<DenseLayer<T>>> blocks;
  std::vector<TransitionLayer<T>> transitions;
  NormLayer<T> final_norm;
  Tensor<T> head_weight;  // (C, K)
  Tensor<T> head_bias;    // (K)

  /// Trainable tensors in declaration order.
  std::vector<ParamRef<T>> parameters() { return collect(*this, false); }

  /// Trainable tensors followed by each norm's running statistics, in declaration order.
  std::vector<ParamRef<T>> state_tensors() { return collect(*this, true); }

  std::vector<Tensor<T>*> conv_kernels() {
    std::vector<Tensor<T>*> out{&stem.kernel};
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      for (auto& layer : blocks[b]) out.push_back(&layer.conv.kernel);
      if (b < transitions.size()) out.push_back(&transitions[b].conv.kernel);
    }
    return out;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.tensor->zero_grad();
  }

 private:
  static std::vector<ParamRef<T>> collect(Network& net, bool with_stats) {
    std::vector<ParamRef<T>> out;
    auto norm = [&](NormLayer<T>& n, const std::string& prefix) {
      out.push_back({prefix + ".gamma", &n.gamma});
      out.push_back({prefix + ".beta", &n.beta});
      if (with_stats) {
        out.push_back({prefix + ".running_mean", &n.stats.running_mean});
        out.push_back({prefix + ".running_var", &n.stats.running_var});
      }
    };
    out.push_back({"stem.kernel", &net.stem.kernel});
    for (std::size_t b = 0; b < net.blocks.size(); ++b) {
      for (std::size_t l = 0; l < net.blocks[b].size(); ++l) {
        const std::string p = "block" + std::to_string(b + 1) + ".layer" + std::to_string(l + 1);
        norm(net.blocks[b][l].norm, p + ".norm");
        out.push_back({p + ".conv.kernel", &net.blocks[b][l].conv.kernel});
      }
      if (b < net.transitions.size()) {
        const std::string p = "transition" + std::to_string(b + 1);
        norm(net.transitions[b].norm, p + ".norm");
        out.push_back({p + ".conv.kernel", &net.transitions[b].conv.kernel});
      }
    }
    norm(net.final_norm, "final.norm");
    out.push_back({"head.weight", &net.head_weight});
    out.push_back({"head.bias", &net.head_bias});
    return out;
  }
};

namespace detail {

template <class T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor<T> t(shape);
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
  t.set_requires_grad(true);
  return t;
}

template <class T>
NormLayer<T> make_norm(std::size_t channels) {
  NormLayer<T> n{Tensor<T>(Shape{channels}, T{1}), Tensor<T>(Shape{channels}, T{0}),
                 BatchNormState<T>(channels)};
  n.gamma.set_requires_grad(true);
  n.beta.set_requires_grad(true);
  return n;
}

template <class T>
ConvLayer<T> make_conv(std::size_t k, std::size_t cin, std::size_t cout, std::size_t stride,
                       Rng& rng) {
  return ConvLayer<T>{he_normal<T>(Shape{k, cin, cout}, k * cin, rng), stride, (k - 1) / 2};
}

}  // namespace detail

/// Builds and initializes a network; deterministic for a fixed seed.
template <class T>
Network<T> build_model(const ModelConfig& config, Rng& rng) {
  config.validate();
  Network<T> net;
  net.config = config;
  std::size_t ch = static_cast<std::size_t>(config.stem_channels);
  net.stem = detail::make_conv<T>(config.stem_kernel, 1, ch, config.stem_stride, rng);
  for (int b = 0; b < config.num_blocks; ++b) {
    std::vector<DenseLayer<T>> block;
    for (int l = 0; l < config.layers_per_block; ++l) {
      block.push_back({detail::make_norm<T>(ch),
                       detail::make_conv<T>(config.kernel_size, ch, config.growth_rate, 1, rng)});
      ch += static_cast<std::size_t>(config.growth_rate);
    }
    net.blocks.push_back(std::move(block));
    if (b + 1 < config.num_blocks) {
      const auto out = static_cast<std::size_t>(
          transition_channels(static_cast<int>(ch), config.reduction));
      net.transitions.push_back(
          {detail::make_norm<T>(ch), detail::make_conv<T>(config.transition_kernel, ch, out, 1, rng)});
      ch = out;
    }
  }
  net.final_norm = detail::make_norm<T>(ch);
  net.head_weight = detail::he_normal<T>(
      Shape{ch, static_cast<std::size_t>(config.num_classes)}, ch, rng);
  net.head_bias = Tensor<T>(Shape{static_cast<std::size_t>(config.num_classes)}, T{0});
  net.head_bias.set_requires_grad(true);
  return net;
}

template <class T>
std::size_t param_count(Network<T>& net) {
  std::size_t n = 0;
  for (const auto& p : net.parameters()) n += p.tensor->size();
  return n;
}

template <class T>
struct ForwardResult {
  Var probs;
  Var logits;
  Var features;                   // (B, L, C) last-block activations consumed by pooling
  std::vector<Var> conv_kernels;  // bound kernels, for the L2 penalty
  std::vector<StageShape> stages; // measured extents
};

/// Forward pass on a (B, input_length, 1) batch. `Net` may be const for eval mode.
template <class T, class Net>
  requires std::is_same_v<std::remove_const_t<Net>, Network<T>>
ForwardResult<T> forward(Tape<T>& tape, Net& net, Var batch, Mode mode, Rng& rng) {
  const auto& cfg = net.config;
  const Shape& in = tape.shape(batch);
  if (in.rank() != 3 || in[1] != static_cast<std::size_t>(cfg.input_length) || in[2] != 1) {
    throw ShapeError("forward: expected input (B, " + std::to_string(cfg.input_length) +
                     ", 1), got " + in.str());
  }
  ForwardResult<T> r;
  auto measure = [&](const std::string& stage, Var v) {
    const Shape& s = tape.shape(v);
    r.stages.push_back({stage, s[1], s[2]});
  };
  auto conv = [&](auto& layer, Var x) {
    Var k = tape.parameter(layer.kernel);
    r.conv_kernels.push_back(k);
    return conv1d(tape, x, k, Var{}, layer.stride, layer.padding);
  };
  auto norm_relu = [&](auto& n, Var x) {
    Var y = batch_norm1d(tape, x, tape.parameter(n.gamma), tape.parameter(n.beta), n.stats, mode);
    return relu(tape, y);
  };

  Var x = conv(net.stem, batch);
  measure("stem.conv", x);
  if (cfg.stem_pool_window > 0) {
    x = pool1d(tape, x, cfg.stem_pool_window, cfg.stem_pool_stride, PoolKind::kMax);
    measure("stem.pool", x);
  }
  for (std::size_t b = 0; b < net.blocks.size(); ++b) {
    std::vector<Var> features{x};
    for (auto& layer : net.blocks[b]) {
      Var h = conv(layer.conv, norm_relu(layer.norm, x));
      h = dropout(tape, h, cfg.dropout_rate, mode, rng);
      features.push_back(h);
      x = concat_channels(tape, features);
    }
    measure("block" + std::to_string(b + 1), x);
    if (b < net.transitions.size()) {
      auto& tr = net.transitions[b];
      x = conv(tr.conv, norm_relu(tr.norm, x));
      x = pool1d(tape, x, cfg.transition_pool_window, cfg.transition_pool_stride, PoolKind::kAvg);
      measure("transition" + std::to_string(b + 1), x);
    }
  }
  r.features = norm_relu(net.final_norm, x);
  measure("features", r.features);
  Var pooled = global_avg_pool(tape, r.features);
  r.logits = dense_affine(tape, pooled, tape.parameter(net.head_weight),
                          tape.parameter(net.head_bias));
  r.probs = softmax(tape, r.logits);
  return r;
}

template <class T>
struct Prediction {
  Tensor<T> probs;
  Tensor<T> logits;
  Tensor<T> features;
  std::vector<StageShape> stages;
};

/// Eval-mode forward without recording.
template <class T>
Prediction<T> predict(const Network<T>& net, Tensor<T> batch) {
  Tape<T> tape(false);
  Rng unused(0);
  auto r = forward(tape, net, tape.constant(std::move(batch)), Mode::kEval, unused);
  return {tape.value(r.probs), tape.value(r.logits), tape.value(r.features), std::move(r.stages)};
}

}  // namespace decg
