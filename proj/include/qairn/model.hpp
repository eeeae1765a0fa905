#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "qairn/kernels.hpp"
#include "qairn/tensor.hpp"

namespace qairn {

/// Architecture hyperparameters. Channel width at scale i is
/// base_channels * 2^i for i in [0, num_scales).
struct ModelConfig {
  int input_channels = 3;
  int base_channels = 64;
  int num_scales = 4;
  int res_blocks_per_stage = 4;
  int attention_channels = 16;
  int attention_depth = 2;
  bool global_input_residual = true;

  /// Throws ErrorKind::Config when an invariant is violated.
  void validate() const;
  int channels_at(int scale) const { return base_channels << scale; }
  int attention_blocks() const { return num_scales - 1; }
  /// Spatial alignment the trunk needs: 2^(num_scales - 1).
  int alignment() const { return 1 << (num_scales - 1); }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct Parameter {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<float> values;
};

/// Named parameter blobs in registration order. Also used for gradients and
/// optimizer moments, which share the layout of the model's parameters.
class ParameterSet {
 public:
  std::size_t add(std::string name, std::vector<std::uint64_t> dims);

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  const Parameter* find(const std::string& name) const;
  Parameter* find(const std::string& name);

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t total_count() const;
  /// Same names and shapes, all values zero.
  ParameterSet zeros_like() const;
  void set_zero();

  friend bool operator==(const ParameterSet& a, const ParameterSet& b);

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Single-channel gate maps, index 0 holding the full-resolution gamma_1.
struct AttentionMapSet {
  std::vector<Tensor> maps;
};

struct RestorationOutput {
  ImageBatch restored;
  AttentionMapSet attention;
};

struct ForwardOptions {
  /// Testing hook: forces every gate to this constant in [0,1].
  std::optional<float> gate_override;
};

struct PaddedImage {
  Tensor image;
  int original_h = 0;
  int original_w = 0;
};

/// Edge-replicates bottom/right so both extents are multiples of `factor`.
PaddedImage pad_to_multiple(const Tensor& image, int factor);
Tensor crop_back(const Tensor& padded, int original_h, int original_w);

// Layer handles: indices of a layer's weight and bias inside ParameterSet.
struct ConvLayer {
  std::size_t weight = 0;
  std::size_t bias = 0;
  int in_channels = 0;
  int out_channels = 0;
  kernels::ConvGeometry geometry;
  bool transposed = false;
};

struct ResBlock {
  ConvLayer conv1;
  ConvLayer conv2;
};

struct AttentionGate {
  ConvLayer proj;
  std::vector<ConvLayer> down;
  std::vector<ConvLayer> up;
  ConvLayer out;
};

struct ModelLayout {
  ConvLayer head;
  std::vector<std::vector<ResBlock>> encoder;  // num_scales - 1 stages
  std::vector<ConvLayer> down;                 // num_scales - 1
  std::vector<ResBlock> body;                  // deepest scale
  std::vector<ConvLayer> up;                   // up[i]: scale i+1 -> i
  std::vector<AttentionGate> gates;            // gates[i] merges at scale i
  std::vector<std::vector<ResBlock>> decoder;  // num_scales - 1 stages
  ConvLayer tail;
};

/// Activations recorded by a training forward pass for the backward pass.
struct ForwardTape {
  struct Block {
    Tensor input;
    Tensor hidden;  // post-ReLU
  };
  struct Gate {
    Tensor skip;
    Tensor decoder;
    Tensor joined;
    std::vector<Tensor> activations;  // proj, down..., up... (post-ReLU)
    Tensor gamma;
    bool overridden = false;
  };
  Tensor input;  // padded network input
  int original_h = 0;
  int original_w = 0;
  Tensor head_out;
  std::vector<std::vector<Block>> encoder;
  std::vector<Tensor> skips;
  std::vector<Block> body;
  std::vector<Tensor> up_inputs;
  std::vector<Gate> gates;
  std::vector<std::vector<Block>> decoder;
  Tensor tail_input;
};

/// QAIRN: residual U-Net trunk whose decoder merges are gated by RQAttention
/// blocks. Forward passes are const and safe to run concurrently.
class Model {
 public:
  /// Deterministic initialization from `seed`.
  static Model build(const ModelConfig& config, std::uint64_t seed);
  /// Same architecture with the supplied parameter values; names and shapes
  /// must match exactly.
  static Model from_parameters(const ModelConfig& config, ParameterSet params);

  const ModelConfig& config() const { return config_; }
  const ParameterSet& parameters() const { return params_; }
  ParameterSet& parameters() { return params_; }
  std::size_t parameter_count() const { return params_.total_count(); }
  const ModelLayout& layout() const { return layout_; }

  /// Inference: pad, run, crop, clamp restored values to [0,1].
  RestorationOutput forward(const ImageBatch& batch,
                            const ForwardOptions& options = {}) const;

  /// Training forward: no clamping; records activations into `tape`.
  RestorationOutput forward_train(const ImageBatch& batch, ForwardTape& tape,
                                  const ForwardOptions& options = {}) const;

  /// Accumulates parameter gradients of a loss whose gradient with respect
  /// to the (unclamped) restored output is `d_restored`.
  void backward(const ForwardTape& tape, const Tensor& d_restored,
                ParameterSet& grads) const;

 private:
  Model(ModelConfig config, ParameterSet params, ModelLayout layout)
      : config_(std::move(config)),
        params_(std::move(params)),
        layout_(std::move(layout)) {}

  RestorationOutput run(const ImageBatch& batch, ForwardTape* tape,
                        const ForwardOptions& options) const;

  ModelConfig config_;
  ParameterSet params_;
  ModelLayout layout_;
};

/// Registers every layer of `config` into an empty ParameterSet.
ModelLayout build_layout(const ModelConfig& config, ParameterSet& params);

/// blended = gamma * skip + (1 - gamma) * decoder, gamma predicted by the
/// gate's autoencoder from both branches, or fixed by `gate_override`.
struct GateResult {
  FeatureMap blended;
  Tensor gamma;
};
GateResult rq_attention_forward(const ParameterSet& params,
                                const AttentionGate& gate,
                                const FeatureMap& skip,
                                const FeatureMap& decoder,
                                std::optional<float> gate_override = {});

// Parameter blob files: little-endian u64 rank, u64 dims, then f32 values.
void write_blob(const std::filesystem::path& path, const Parameter& param);
Parameter read_blob(const std::filesystem::path& path, const std::string& name);

void save_parameters(const std::filesystem::path& dir,
                     const ParameterSet& params);
/// Loads every parameter named in `layout_like` from `dir`, checking shapes.
ParameterSet load_parameters(const std::filesystem::path& dir,
                             const ParameterSet& layout_like);

/// Stable 64-bit FNV-1a digest of names, shapes and values.
std::uint64_t parameter_digest(const ParameterSet& params);

}  // namespace qairn
