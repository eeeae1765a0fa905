#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qairn/dataio.hpp"
#include "qairn/model.hpp"
#include "qairn/objective.hpp"

namespace qairn::trainer {

namespace fs = std::filesystem;

struct OptimizerConfig {
  double lr0 = 2e-4;
  std::uint64_t halving_period = 10000;
  double lr_floor = 1.25e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t total_steps = 500000;
  /// Global L2 gradient-norm clip; off when unset.
  std::optional<double> grad_clip;

  void validate() const;
  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

void to_json(nlohmann::json& j, const OptimizerConfig& c);
void from_json(const nlohmann::json& j, OptimizerConfig& c);

/// max(lr0 * 0.5^floor(step / halving_period), lr_floor)
double lr_at_step(std::uint64_t step, const OptimizerConfig& cfg);

struct TrainState {
  Model model;
  std::uint64_t step = 0;
  ParameterSet m;  // first moments, same layout as the parameters
  ParameterSet v;  // second moments
  dataio::SamplerState sampler;
  std::optional<double> best_val_loss;
};

/// Fresh state: zero moments, step 0, data stream at batch 0 of `data_seed`.
TrainState init_state(Model model, std::uint64_t data_seed);

/// One Adam step at lr_at_step(state.step) on the L1 + (1 - SSIM) loss.
/// Throws ErrorKind::NonFinite (leaving the state untouched) when the loss
/// or gradient is not finite.
LossReport train_step(TrainState& state, const dataio::TrainingBatch& batch,
                      const OptimizerConfig& opt, const SsimParams& ssim = {});

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  int format_version = kCheckpointVersion;
  ModelConfig model;
  OptimizerConfig optimizer;
  std::uint64_t step = 0;
  std::uint64_t model_seed = 0;
  dataio::SamplerState sampler;
  std::optional<double> best_val_loss;
  bool has_moments = false;
  bool deterministic = true;
};

struct LoadedCheckpoint {
  CheckpointMeta meta;
  TrainState state;
};

/// Directory with meta.json, one blob per parameter and the Adam moments in
/// moments/m and moments/v. Written to a temporary sibling, then renamed.
void save_checkpoint(const fs::path& dir, const TrainState& state,
                     const OptimizerConfig& opt, std::uint64_t model_seed,
                     bool deterministic = true);
LoadedCheckpoint load_checkpoint(const fs::path& dir);
/// Parameters only; works for checkpoints saved without moments too.
Model load_model(const fs::path& dir);
CheckpointMeta read_checkpoint_meta(const fs::path& dir);
/// Short identifier: "<dir name>@step<N>#<digest hex>".
std::string checkpoint_id(const fs::path& dir);

// ---------------------------------------------------------------------------
// Runs

struct DataConfig {
  std::string corpus;  // corpus manifest JSON
  dataio::DistortionSpec distortion;
  dataio::PatchSpec patch;
  std::uint64_t seed = 0;
  std::size_t cache_mb = 1024;
  bool prefetch = true;
  std::vector<int> val_qfs = {10};
  int val_max_images = 8;
};

struct LoggingConfig {
  std::string run_dir = "runs/qairn";
  std::uint64_t log_interval = 100;
  std::uint64_t checkpoint_interval = 10000;
  std::uint64_t validation_interval = 1000;
};

struct RunConfig {
  ModelConfig model;
  std::uint64_t model_seed = 0;
  OptimizerConfig optimizer;
  DataConfig data;
  SsimParams loss;
  LoggingConfig logging;
  std::optional<std::string> resume;  // checkpoint directory to continue from
  bool deterministic = true;

  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);
/// Relative paths inside the file are resolved against its directory.
RunConfig load_run_config(const fs::path& path);

struct LogRow {
  std::uint64_t step = 0;
  double lr = 0.0;
  double total = 0.0;
  double l1 = 0.0;
  double ssim_term = 0.0;
};

struct ValidationRow {
  std::uint64_t step = 0;
  int qf = 0;
  double psnr_restored = 0.0;
  double psnr_compressed = 0.0;
  double loss = 0.0;
  int images = 0;
};

struct FitResult {
  std::vector<LogRow> log;  // rows written by this invocation
  std::vector<ValidationRow> validation;
  fs::path final_checkpoint;
  std::uint64_t final_step = 0;
  std::uint64_t final_digest = 0;
  double seconds = 0.0;
};

/// Trains until optimizer.total_steps. Writes train_log.csv, validation.csv,
/// checkpoints/step_XXXXXXX/ and checkpoints/final/ under logging.run_dir.
FitResult fit(const RunConfig& config);

std::vector<LogRow> read_training_log(const fs::path& csv);

}  // namespace qairn::trainer
