#include "qairn/model.hpp"

#include <cmath>
#include <random>

#include "qairn/error.hpp"
#include "qairn/kernels.hpp"

namespace qairn {

namespace kn = kernels;

void ModelConfig::validate() const {
  require(input_channels >= 1, ErrorKind::Config, "input_channels must be >= 1");
  require(base_channels >= 1, ErrorKind::Config, "base_channels must be >= 1");
  require(num_scales >= 2, ErrorKind::Config,
          "num_scales must be >= 2 (got " + std::to_string(num_scales) + ")");
  require(num_scales <= 12, ErrorKind::Config, "num_scales is unreasonably large");
  require(res_blocks_per_stage >= 1, ErrorKind::Config,
          "res_blocks_per_stage must be >= 1");
  require(attention_channels >= 1, ErrorKind::Config,
          "attention_channels must be >= 1");
  require(attention_depth >= 0, ErrorKind::Config,
          "attention_depth must be >= 0");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"input_channels", c.input_channels},
                     {"base_channels", c.base_channels},
                     {"num_scales", c.num_scales},
                     {"res_blocks_per_stage", c.res_blocks_per_stage},
                     {"attention_channels", c.attention_channels},
                     {"attention_depth", c.attention_depth},
                     {"global_input_residual", c.global_input_residual}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.input_channels = j.value("input_channels", d.input_channels);
  c.base_channels = j.value("base_channels", d.base_channels);
  c.num_scales = j.value("num_scales", d.num_scales);
  c.res_blocks_per_stage = j.value("res_blocks_per_stage", d.res_blocks_per_stage);
  c.attention_channels = j.value("attention_channels", d.attention_channels);
  c.attention_depth = j.value("attention_depth", d.attention_depth);
  c.global_input_residual = j.value("global_input_residual", d.global_input_residual);
}

// ---------------------------------------------------------------------------
// ParameterSet

std::size_t ParameterSet::add(std::string name, std::vector<std::uint64_t> dims) {
  require(!index_.contains(name), ErrorKind::Config,
          "duplicate parameter name " + name);
  std::size_t count = 1;
  for (auto d : dims) count *= d;
  const std::size_t idx = params_.size();
  index_.emplace(name, idx);
  params_.push_back({std::move(name), std::move(dims), std::vector<float>(count, 0.0f)});
  return idx;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

Parameter* ParameterSet::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

std::size_t ParameterSet::total_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.values.size();
  return total;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (const auto& p : params_) out.add(p.name, p.dims);
  return out;
}

void ParameterSet::set_zero() {
  for (auto& p : params_) std::fill(p.values.begin(), p.values.end(), 0.0f);
}

bool operator==(const ParameterSet& a, const ParameterSet& b) {
  if (a.params_.size() != b.params_.size()) return false;
  for (std::size_t i = 0; i < a.params_.size(); ++i) {
    const auto& x = a.params_[i];
    const auto& y = b.params_[i];
    if (x.name != y.name || x.dims != y.dims || x.values != y.values) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Layout

namespace {

ConvLayer add_conv(ParameterSet& params, const std::string& name, int in,
                   int out, kn::ConvGeometry g, bool transposed = false) {
  ConvLayer layer;
  layer.in_channels = in;
  layer.out_channels = out;
  layer.geometry = g;
  layer.transposed = transposed;
  const auto k = static_cast<std::uint64_t>(g.kernel);
  if (transposed) {
    layer.weight = params.add(name + ".weight", {std::uint64_t(in), k, k, std::uint64_t(out)});
  } else {
    layer.weight = params.add(name + ".weight", {std::uint64_t(out), k, k, std::uint64_t(in)});
  }
  layer.bias = params.add(name + ".bias", {std::uint64_t(out)});
  return layer;
}

constexpr kn::ConvGeometry kConv3{3, 1, 1};
constexpr kn::ConvGeometry kDown3{3, 2, 1};
constexpr kn::ConvGeometry kUp2{2, 2, 0};
constexpr kn::ConvGeometry kPoint{1, 1, 0};

std::vector<ResBlock> add_blocks(ParameterSet& params, const std::string& prefix,
                                 int channels, int count) {
  std::vector<ResBlock> blocks;
  for (int j = 0; j < count; ++j) {
    const std::string name = prefix + ".block" + std::to_string(j);
    ResBlock b;
    b.conv1 = add_conv(params, name + ".conv1", channels, channels, kConv3);
    b.conv2 = add_conv(params, name + ".conv2", channels, channels, kConv3);
    blocks.push_back(b);
  }
  return blocks;
}

template <typename Fn>
void for_each_conv(const ModelLayout& layout, Fn&& fn) {
  auto blocks = [&](const std::vector<ResBlock>& bs) {
    for (const auto& b : bs) {
      fn(b.conv1, false);
      fn(b.conv2, false);
    }
  };
  fn(layout.head, false);
  for (std::size_t i = 0; i < layout.down.size(); ++i) {
    blocks(layout.encoder[i]);
    fn(layout.down[i], false);
  }
  blocks(layout.body);
  for (std::size_t i = layout.up.size(); i-- > 0;) {
    fn(layout.up[i], false);
    const auto& gate = layout.gates[i];
    fn(gate.proj, false);
    for (const auto& d : gate.down) fn(d, false);
    for (const auto& u : gate.up) fn(u, false);
    fn(gate.out, true);
    blocks(layout.decoder[i]);
  }
  fn(layout.tail, false);
}

// Uniform in [-1, 1) from the top 24 bits, identical on every platform.
float signed_unit(std::mt19937_64& rng) {
  return static_cast<float>(static_cast<double>(rng() >> 40) * 0x1.0p-23 - 1.0);
}

}  // namespace

ModelLayout build_layout(const ModelConfig& config, ParameterSet& params) {
  config.validate();
  const int scales = config.num_scales;
  const int blocks = config.res_blocks_per_stage;
  ModelLayout layout;
  layout.head = add_conv(params, "head.conv", config.input_channels,
                         config.channels_at(0), kConv3);
  for (int i = 0; i < scales - 1; ++i) {
    const std::string stage = "encoder.stage" + std::to_string(i);
    layout.encoder.push_back(add_blocks(params, stage, config.channels_at(i), blocks));
    layout.down.push_back(add_conv(params, stage + ".down", config.channels_at(i),
                                   config.channels_at(i + 1), kDown3));
  }
  layout.body = add_blocks(params, "encoder.stage" + std::to_string(scales - 1),
                           config.channels_at(scales - 1), blocks);

  layout.up.resize(scales - 1);
  layout.gates.resize(scales - 1);
  layout.decoder.resize(scales - 1);
  for (int i = scales - 2; i >= 0; --i) {
    const std::string stage = "decoder.stage" + std::to_string(i);
    const int ch = config.channels_at(i);
    layout.up[i] = add_conv(params, stage + ".up", config.channels_at(i + 1), ch,
                            kUp2, /*transposed=*/true);
    AttentionGate& gate = layout.gates[i];
    const std::string att = stage + ".attention";
    const int a = config.attention_channels;
    gate.proj = add_conv(params, att + ".proj", 2 * ch, a, kPoint);
    for (int k = 0; k < config.attention_depth; ++k)
      gate.down.push_back(add_conv(params, att + ".down" + std::to_string(k), a, a, kDown3));
    for (int k = 0; k < config.attention_depth; ++k)
      gate.up.push_back(add_conv(params, att + ".up" + std::to_string(k), a, a, kUp2, true));
    gate.out = add_conv(params, att + ".out", a, 1, kConv3);
    layout.decoder[i] = add_blocks(params, stage, ch, blocks);
  }
  layout.tail = add_conv(params, "tail.conv", config.channels_at(0),
                         config.input_channels, kConv3);
  return layout;
}

Model Model::build(const ModelConfig& config, std::uint64_t seed) {
  ParameterSet params;
  ModelLayout layout = build_layout(config, params);
  std::mt19937_64 rng(seed);
  for_each_conv(layout, [&](const ConvLayer& layer, bool zero_bias) {
    const int k = layer.geometry.kernel;
    const int s = layer.geometry.stride;
    // Inputs feeding one output sample; a stride-s transposed kernel only
    // overlaps an output pixel with k*k/(s*s) taps.
    const double fan_in =
        layer.transposed ? double(layer.in_channels) * k * k / (s * s)
                         : double(layer.in_channels) * k * k;
    const float bound = static_cast<float>(1.0 / std::sqrt(std::max(fan_in, 1.0)));
    for (float& v : params[layer.weight].values) v = bound * signed_unit(rng);
    for (float& v : params[layer.bias].values) v = zero_bias ? 0.0f : bound * signed_unit(rng);
  });
  return Model(config, std::move(params), std::move(layout));
}

Model Model::from_parameters(const ModelConfig& config, ParameterSet params) {
  ParameterSet expected;
  ModelLayout layout = build_layout(config, expected);
  require(params.size() == expected.size(), ErrorKind::ShapeMismatch,
          "parameter set has " + std::to_string(params.size()) +
              " entries, architecture expects " + std::to_string(expected.size()));
  for (std::size_t i = 0; i < expected.size(); ++i) {
    require(params[i].name == expected[i].name && params[i].dims == expected[i].dims,
            ErrorKind::ShapeMismatch,
            "parameter " + expected[i].name + " does not match the architecture");
  }
  return Model(config, std::move(params), std::move(layout));
}

// ---------------------------------------------------------------------------
// Padding

PaddedImage pad_to_multiple(const Tensor& image, int factor) {
  require(factor >= 1, ErrorKind::Dimension, "pad factor must be >= 1");
  require(image.h() >= 1 && image.w() >= 1, ErrorKind::Dimension, "empty image");
  const int h = image.h();
  const int w = image.w();
  const int ph = (h + factor - 1) / factor * factor;
  const int pw = (w + factor - 1) / factor * factor;
  PaddedImage out{Tensor({image.n(), image.c(), ph, pw}), h, w};
  const int ch = image.c();
  for (int n = 0; n < image.n(); ++n)
    for (int y = 0; y < ph; ++y) {
      const int sy = std::min(y, h - 1);
      for (int x = 0; x < pw; ++x) {
        const int sx = std::min(x, w - 1);
        std::copy_n(image.pixel(n, sy, sx), ch, out.image.pixel(n, y, x));
      }
    }
  return out;
}

Tensor crop_back(const Tensor& padded, int original_h, int original_w) {
  require(original_h >= 1 && original_w >= 1 && original_h <= padded.h() &&
              original_w <= padded.w(),
          ErrorKind::Dimension, "crop_back: target larger than source");
  Tensor out({padded.n(), padded.c(), original_h, original_w});
  const int ch = padded.c();
  for (int n = 0; n < padded.n(); ++n)
    for (int y = 0; y < original_h; ++y)
      std::copy_n(padded.pixel(n, y, 0), std::size_t(original_w) * ch,
                  out.pixel(n, y, 0));
  return out;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

Tensor conv_forward(const ParameterSet& p, const ConvLayer& l, const Tensor& x,
                    int out_h = 0, int out_w = 0) {
  require(x.c() == l.in_channels, ErrorKind::Dimension,
          "layer " + p[l.weight].name + " expects " + std::to_string(l.in_channels) +
              " input channels, got " + std::to_string(x.c()));
  if (l.transposed) {
    return kn::conv_transpose2d_forward(x, p[l.weight].values, p[l.bias].values,
                                        l.out_channels, l.geometry, out_h, out_w);
  }
  return kn::conv2d_forward(x, p[l.weight].values, p[l.bias].values,
                            l.out_channels, l.geometry);
}

Tensor conv_backward(const ParameterSet& p, const ConvLayer& l, const Tensor& x,
                     const Tensor& dy, ParameterSet& grads, bool need_dx = true) {
  Tensor dx;
  if (l.transposed) {
    kn::conv_transpose2d_backward(x, dy, p[l.weight].values, l.geometry,
                                  grads[l.weight].values, grads[l.bias].values,
                                  need_dx ? &dx : nullptr);
  } else {
    kn::conv2d_backward(x, dy, p[l.weight].values, l.geometry,
                        grads[l.weight].values, grads[l.bias].values,
                        need_dx ? &dx : nullptr);
  }
  return dx;
}

Tensor block_forward(const ParameterSet& p, const ResBlock& b, const Tensor& x,
                     std::vector<ForwardTape::Block>* tape) {
  Tensor hidden = conv_forward(p, b.conv1, x);
  kn::relu_inplace(hidden);
  Tensor out = conv_forward(p, b.conv2, hidden);
  kn::add_inplace(out, x);
  if (tape != nullptr) tape->push_back({x, std::move(hidden)});
  return out;
}

Tensor block_backward(const ParameterSet& p, const ResBlock& b,
                      const ForwardTape::Block& rec, const Tensor& dout,
                      ParameterSet& grads) {
  Tensor dhidden = conv_backward(p, b.conv2, rec.hidden, dout, grads);
  kn::relu_backward_inplace(rec.hidden, dhidden);
  Tensor dx = conv_backward(p, b.conv1, rec.input, dhidden, grads);
  kn::add_inplace(dx, dout);
  return dx;
}

Tensor run_blocks(const ParameterSet& p, const std::vector<ResBlock>& blocks,
                  Tensor x, std::vector<ForwardTape::Block>* tape) {
  for (const auto& b : blocks) x = block_forward(p, b, x, tape);
  return x;
}

Tensor blocks_backward(const ParameterSet& p, const std::vector<ResBlock>& blocks,
                       const std::vector<ForwardTape::Block>& tape, Tensor d,
                       ParameterSet& grads) {
  for (std::size_t j = blocks.size(); j-- > 0;)
    d = block_backward(p, blocks[j], tape[j], d, grads);
  return d;
}

GateResult gate_forward(const ParameterSet& p, const AttentionGate& gate,
                        const Tensor& skip, const Tensor& decoder,
                        std::optional<float> gate_override,
                        ForwardTape::Gate* tape) {
  require(skip.shape() == decoder.shape(), ErrorKind::Dimension,
          "rq_attention: skip " + to_string(skip.shape()) + " and decoder " +
              to_string(decoder.shape()) + " differ");
  GateResult result;
  if (gate_override) {
    const float g = *gate_override;
    require(g >= 0.0f && g <= 1.0f, ErrorKind::Input, "gate_override must lie in [0,1]");
    result.gamma = Tensor({skip.n(), 1, skip.h(), skip.w()}, g);
    result.blended = kn::gate_blend(skip, decoder, result.gamma);
    if (tape != nullptr) {
      tape->skip = skip;
      tape->decoder = decoder;
      tape->gamma = result.gamma;
      tape->overridden = true;
    }
    return result;
  }

  Tensor joined = kn::concat_channels(skip, decoder);
  std::vector<Tensor> acts;
  Tensor a = conv_forward(p, gate.proj, joined);
  kn::relu_inplace(a);
  acts.push_back(a);
  for (const auto& d : gate.down) {
    a = conv_forward(p, d, a);
    kn::relu_inplace(a);
    acts.push_back(a);
  }
  const std::size_t depth = gate.down.size();
  for (std::size_t k = 0; k < gate.up.size(); ++k) {
    const Tensor& target = acts[depth - 1 - k];
    a = conv_forward(p, gate.up[k], a, target.h(), target.w());
    kn::relu_inplace(a);
    acts.push_back(a);
  }
  Tensor gamma = conv_forward(p, gate.out, a);
  kn::sigmoid_inplace(gamma);
  result.blended = kn::gate_blend(skip, decoder, gamma);
  result.gamma = gamma;
  if (tape != nullptr) {
    tape->skip = skip;
    tape->decoder = decoder;
    tape->joined = std::move(joined);
    tape->activations = std::move(acts);
    tape->gamma = std::move(gamma);
    tape->overridden = false;
  }
  return result;
}

void gate_backward(const ParameterSet& p, const AttentionGate& gate,
                   const ForwardTape::Gate& rec, const Tensor& dout,
                   ParameterSet& grads, Tensor& dskip, Tensor& ddecoder) {
  Tensor dgamma;
  kn::gate_blend_backward(rec.skip, rec.decoder, rec.gamma, dout, dskip,
                          ddecoder, dgamma);
  if (rec.overridden) return;

  const float* g = rec.gamma.data();
  float* dg = dgamma.data();
  for (std::size_t i = 0; i < dgamma.size(); ++i) dg[i] *= g[i] * (1.0f - g[i]);

  const auto& acts = rec.activations;
  const std::size_t depth = gate.down.size();
  Tensor da = conv_backward(p, gate.out, acts.back(), dgamma, grads);
  for (std::size_t k = gate.up.size(); k-- > 0;) {
    kn::relu_backward_inplace(acts[depth + 1 + k], da);
    da = conv_backward(p, gate.up[k], acts[depth + k], da, grads);
  }
  for (std::size_t k = depth; k-- > 0;) {
    kn::relu_backward_inplace(acts[1 + k], da);
    da = conv_backward(p, gate.down[k], acts[k], da, grads);
  }
  kn::relu_backward_inplace(acts[0], da);
  Tensor djoined = conv_backward(p, gate.proj, rec.joined, da, grads);
  Tensor ds(rec.skip.shape());
  Tensor dd(rec.decoder.shape());
  kn::split_channels(djoined, ds, dd);
  kn::add_inplace(dskip, ds);
  kn::add_inplace(ddecoder, dd);
}

Tensor crop_map(const Tensor& map, int h, int w) {
  if (map.h() == h && map.w() == w) return map;
  return crop_back(map, h, w);
}

}  // namespace

GateResult rq_attention_forward(const ParameterSet& params,
                                const AttentionGate& gate, const FeatureMap& skip,
                                const FeatureMap& decoder,
                                std::optional<float> gate_override) {
  return gate_forward(params, gate, skip, decoder, gate_override, nullptr);
}

RestorationOutput Model::forward(const ImageBatch& batch,
                                 const ForwardOptions& options) const {
  RestorationOutput out = run(batch, nullptr, options);
  for (float& v : out.restored.values()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

RestorationOutput Model::forward_train(const ImageBatch& batch, ForwardTape& tape,
                                       const ForwardOptions& options) const {
  tape = ForwardTape{};
  return run(batch, &tape, options);
}

RestorationOutput Model::run(const ImageBatch& batch, ForwardTape* tape,
                             const ForwardOptions& options) const {
  require(batch.n() >= 1 && batch.h() >= 1 && batch.w() >= 1, ErrorKind::Input,
          "empty input batch");
  require(batch.c() == config_.input_channels, ErrorKind::Dimension,
          "input has " + std::to_string(batch.c()) + " channels, model expects " +
              std::to_string(config_.input_channels));
  require(batch.all_finite(), ErrorKind::Input, "input contains non-finite values");

  const int scales = config_.num_scales;
  const auto& p = params_;
  PaddedImage padded = pad_to_multiple(batch, config_.alignment());
  const Tensor& x0 = padded.image;

  Tensor h = conv_forward(p, layout_.head, x0);
  std::vector<Tensor> skips;
  if (tape != nullptr) {
    tape->input = x0;
    tape->original_h = padded.original_h;
    tape->original_w = padded.original_w;
    tape->encoder.resize(scales - 1);
    tape->decoder.resize(scales - 1);
    tape->gates.resize(scales - 1);
    tape->up_inputs.resize(scales - 1);
  }
  for (int i = 0; i < scales - 1; ++i) {
    h = run_blocks(p, layout_.encoder[i], std::move(h),
                   tape ? &tape->encoder[i] : nullptr);
    skips.push_back(h);
    h = conv_forward(p, layout_.down[i], h);
  }
  h = run_blocks(p, layout_.body, std::move(h), tape ? &tape->body : nullptr);

  std::vector<Tensor> gammas(scales - 1);
  for (int i = scales - 2; i >= 0; --i) {
    const Tensor& skip = skips[i];
    Tensor up = conv_forward(p, layout_.up[i], h, skip.h(), skip.w());
    if (tape != nullptr) tape->up_inputs[i] = std::move(h);
    GateResult g = gate_forward(p, layout_.gates[i], skip, up, options.gate_override,
                                tape ? &tape->gates[i] : nullptr);
    gammas[i] = std::move(g.gamma);
    h = run_blocks(p, layout_.decoder[i], std::move(g.blended),
                   tape ? &tape->decoder[i] : nullptr);
  }
  Tensor out = conv_forward(p, layout_.tail, h);
  if (tape != nullptr) {
    tape->skips = std::move(skips);
    tape->tail_input = std::move(h);
  }
  if (config_.global_input_residual) kn::add_inplace(out, x0);

  RestorationOutput result;
  result.restored = crop_back(out, padded.original_h, padded.original_w);
  for (int i = 0; i < scales - 1; ++i) {
    const int f = 1 << i;
    result.attention.maps.push_back(crop_map(gammas[i],
                                             (padded.original_h + f - 1) / f,
                                             (padded.original_w + f - 1) / f));
  }
  return result;
}

void Model::backward(const ForwardTape& tape, const Tensor& d_restored,
                     ParameterSet& grads) const {
  require(grads.size() == params_.size(), ErrorKind::ShapeMismatch,
          "gradient set does not match model parameters");
  require(d_restored.n() == tape.input.n() && d_restored.c() == tape.input.c() &&
              d_restored.h() == tape.original_h && d_restored.w() == tape.original_w,
          ErrorKind::Dimension, "output gradient shape mismatch");
  const int scales = config_.num_scales;
  const auto& p = params_;

  Tensor d(tape.input.shape());
  for (int n = 0; n < d.n(); ++n)
    for (int y = 0; y < tape.original_h; ++y)
      std::copy_n(d_restored.pixel(n, y, 0),
                  std::size_t(tape.original_w) * d.c(), d.pixel(n, y, 0));

  Tensor dh = conv_backward(p, layout_.tail, tape.tail_input, d, grads);
  std::vector<Tensor> dskips(scales - 1);
  for (int i = 0; i < scales - 1; ++i) {
    dh = blocks_backward(p, layout_.decoder[i], tape.decoder[i], std::move(dh), grads);
    Tensor dup;
    gate_backward(p, layout_.gates[i], tape.gates[i], dh, grads, dskips[i], dup);
    dh = conv_backward(p, layout_.up[i], tape.up_inputs[i], dup, grads);
  }
  dh = blocks_backward(p, layout_.body, tape.body, std::move(dh), grads);
  for (int i = scales - 2; i >= 0; --i) {
    dh = conv_backward(p, layout_.down[i], tape.skips[i], dh, grads);
    kn::add_inplace(dh, dskips[i]);
    dh = blocks_backward(p, layout_.encoder[i], tape.encoder[i], std::move(dh), grads);
  }
  conv_backward(p, layout_.head, tape.input, dh, grads, /*need_dx=*/false);
}

}  // namespace qairn
