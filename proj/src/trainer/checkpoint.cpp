#include <cstdio>
#include <fstream>

#include "qairn/error.hpp"
#include "qairn/trainer.hpp"

namespace qairn::trainer {

namespace {

nlohmann::json meta_json(const CheckpointMeta& m) {
  return {{"format", "qairn-checkpoint"},
          {"format_version", m.format_version},
          {"model", m.model},
          {"optimizer", m.optimizer},
          {"step", m.step},
          {"seed", m.model_seed},
          {"data_seed", m.sampler.seed},
          {"data_next_batch", m.sampler.next_batch},
          {"best_val_loss",
           m.best_val_loss ? nlohmann::json(*m.best_val_loss) : nlohmann::json(nullptr)},
          {"has_moments", m.has_moments},
          {"deterministic", m.deterministic}};
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  require(os.good(), ErrorKind::Io, "cannot write " + p.string());
  os << text;
  require(os.good(), ErrorKind::Io, "write failed for " + p.string());
}

ParameterSet empty_layout(const ModelConfig& config) {
  ParameterSet params;
  build_layout(config, params);
  return params;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const TrainState& state, const OptimizerConfig& opt,
                     std::uint64_t model_seed, bool deterministic) {
  CheckpointMeta meta;
  meta.model = state.model.config();
  meta.optimizer = opt;
  meta.step = state.step;
  meta.model_seed = model_seed;
  meta.sampler = state.sampler;
  meta.best_val_loss = state.best_val_loss;
  meta.has_moments = true;
  meta.deterministic = deterministic;

  const fs::path tmp = dir.parent_path() / (dir.filename().string() + ".partial");
  std::error_code ec;
  fs::remove_all(tmp, ec);
  fs::create_directories(tmp / "moments" / "m", ec);
  fs::create_directories(tmp / "moments" / "v", ec);
  require(!ec, ErrorKind::Io, "cannot create " + tmp.string() + ": " + ec.message());

  write_text(tmp / "meta.json", meta_json(meta).dump(2) + "\n");
  save_parameters(tmp, state.model.parameters());
  save_parameters(tmp / "moments" / "m", state.m);
  save_parameters(tmp / "moments" / "v", state.v);

  fs::remove_all(dir, ec);
  fs::rename(tmp, dir, ec);
  require(!ec, ErrorKind::Io, "cannot move checkpoint into " + dir.string() + ": " + ec.message());
}

CheckpointMeta read_checkpoint_meta(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorKind::Io, "checkpoint directory not found: " + dir.string());
  const fs::path path = dir / "meta.json";
  std::ifstream in(path);
  require(in.good(), ErrorKind::Corruption, "checkpoint has no meta.json: " + dir.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Corruption, "unreadable " + path.string() + ": " + e.what());
  }
  CheckpointMeta m;
  try {
    require(j.value("format", std::string()) == "qairn-checkpoint", ErrorKind::Incompatible,
            path.string() + " is not a qairn checkpoint");
    m.format_version = j.at("format_version").get<int>();
    require(m.format_version == kCheckpointVersion, ErrorKind::Incompatible,
            "checkpoint format version " + std::to_string(m.format_version) +
                " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
    m.model = j.at("model").get<ModelConfig>();
    m.optimizer = j.at("optimizer").get<OptimizerConfig>();
    m.step = j.at("step").get<std::uint64_t>();
    m.model_seed = j.at("seed").get<std::uint64_t>();
    m.sampler.seed = j.value("data_seed", std::uint64_t{0});
    m.sampler.next_batch = j.value("data_next_batch", std::uint64_t{0});
    if (j.contains("best_val_loss") && !j.at("best_val_loss").is_null())
      m.best_val_loss = j.at("best_val_loss").get<double>();
    m.has_moments = j.value("has_moments", false);
    m.deterministic = j.value("deterministic", true);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Corruption, "malformed " + path.string() + ": " + e.what());
  }
  m.model.validate();
  return m;
}

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  CheckpointMeta meta = read_checkpoint_meta(dir);
  const ParameterSet layout = empty_layout(meta.model);
  Model model = Model::from_parameters(meta.model, load_parameters(dir, layout));
  ParameterSet m = meta.has_moments ? load_parameters(dir / "moments" / "m", layout)
                                    : layout.zeros_like();
  ParameterSet v = meta.has_moments ? load_parameters(dir / "moments" / "v", layout)
                                    : layout.zeros_like();
  TrainState state{std::move(model), meta.step, std::move(m), std::move(v), meta.sampler,
                   meta.best_val_loss};
  return LoadedCheckpoint{std::move(meta), std::move(state)};
}

Model load_model(const fs::path& dir) {
  const CheckpointMeta meta = read_checkpoint_meta(dir);
  return Model::from_parameters(meta.model, load_parameters(dir, empty_layout(meta.model)));
}

std::string checkpoint_id(const fs::path& dir) {
  const CheckpointMeta meta = read_checkpoint_meta(dir);
  const Model model = load_model(dir);
  char hex[20];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(parameter_digest(model.parameters())));
  fs::path name = dir.filename();
  if (name.empty()) name = dir.parent_path().filename();
  return name.string() + "@step" + std::to_string(meta.step) + "#" + hex;
}

}  // namespace qairn::trainer
