#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <sstream>

#include <spdlog/spdlog.h>

#include "qairn/error.hpp"
#include "qairn/kernels.hpp"
#include "qairn/trainer.hpp"

namespace qairn::trainer {

void RunConfig::validate() const {
  model.validate();
  optimizer.validate();
  data.distortion.validate();
  data.patch.validate();
  loss.validate();
  require(!data.corpus.empty(), ErrorKind::Config, "data.corpus must name a corpus manifest");
  require(data.patch.patch_size % model.alignment() == 0, ErrorKind::Config,
          "patch_size must be a multiple of " + std::to_string(model.alignment()));
  require(data.patch.patch_size >= loss.window, ErrorKind::Config,
          "patch_size must be at least the SSIM window");
  require(logging.log_interval >= 1 && logging.checkpoint_interval >= 1 &&
              logging.validation_interval >= 1,
          ErrorKind::Config, "logging intervals must be at least 1");
  for (int qf : data.val_qfs)
    require(qf >= 1 && qf <= 100, ErrorKind::Config, "validation qf out of range");
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  nlohmann::json model = c.model;
  model["seed"] = c.model_seed;
  j = {{"model", model},
       {"optimizer", c.optimizer},
       {"data",
        {{"corpus", c.data.corpus},
         {"codec", c.data.distortion.codec},
         {"qf_min", c.data.distortion.qf_min},
         {"qf_max", c.data.distortion.qf_max},
         {"patch_size", c.data.patch.patch_size},
         {"batch_size", c.data.patch.batch_size},
         {"flips", c.data.patch.flips},
         {"seed", c.data.seed},
         {"cache_mb", c.data.cache_mb},
         {"prefetch", c.data.prefetch},
         {"val_qfs", c.data.val_qfs},
         {"val_max_images", c.data.val_max_images}}},
       {"loss", {{"ssim", c.loss}}},
       {"logging",
        {{"run_dir", c.logging.run_dir},
         {"log_interval", c.logging.log_interval},
         {"checkpoint_interval", c.logging.checkpoint_interval},
         {"validation_interval", c.logging.validation_interval}}},
       {"resume", c.resume ? nlohmann::json(*c.resume) : nlohmann::json(nullptr)},
       {"deterministic", c.deterministic}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  RunConfig d;
  c = d;
  if (j.contains("model")) {
    c.model = j.at("model").get<ModelConfig>();
    c.model_seed = j.at("model").value("seed", d.model_seed);
  }
  if (j.contains("optimizer")) c.optimizer = j.at("optimizer").get<OptimizerConfig>();
  if (j.contains("data")) {
    const auto& s = j.at("data");
    c.data.corpus = s.value("corpus", d.data.corpus);
    c.data.distortion.codec = s.value("codec", d.data.distortion.codec);
    c.data.distortion.qf_min = s.value("qf_min", d.data.distortion.qf_min);
    c.data.distortion.qf_max = s.value("qf_max", d.data.distortion.qf_max);
    c.data.patch.patch_size = s.value("patch_size", d.data.patch.patch_size);
    c.data.patch.batch_size = s.value("batch_size", d.data.patch.batch_size);
    c.data.patch.flips = s.value("flips", d.data.patch.flips);
    c.data.seed = s.value("seed", d.data.seed);
    c.data.cache_mb = s.value("cache_mb", d.data.cache_mb);
    c.data.prefetch = s.value("prefetch", d.data.prefetch);
    c.data.val_qfs = s.value("val_qfs", d.data.val_qfs);
    c.data.val_max_images = s.value("val_max_images", d.data.val_max_images);
  }
  if (j.contains("loss") && j.at("loss").contains("ssim"))
    c.loss = j.at("loss").at("ssim").get<SsimParams>();
  if (j.contains("logging")) {
    const auto& s = j.at("logging");
    c.logging.run_dir = s.value("run_dir", d.logging.run_dir);
    c.logging.log_interval = s.value("log_interval", d.logging.log_interval);
    c.logging.checkpoint_interval = s.value("checkpoint_interval", d.logging.checkpoint_interval);
    c.logging.validation_interval = s.value("validation_interval", d.logging.validation_interval);
  }
  if (j.contains("resume") && !j.at("resume").is_null()) c.resume = j.at("resume").get<std::string>();
  c.deterministic = j.value("deterministic", d.deterministic);
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, "cannot open run config " + path.string());
  RunConfig c;
  try {
    nlohmann::json j;
    in >> j;
    c = j.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, path.string() + ": " + e.what());
  }
  const fs::path base = path.parent_path();
  auto anchor = [&](std::string& p) {
    if (!p.empty() && fs::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  anchor(c.data.corpus);
  anchor(c.logging.run_dir);
  if (c.resume) anchor(*c.resume);
  return c;
}

namespace {

std::string fmt9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

constexpr const char* kLogHeader = "step,lr,total,l1,ssim_term";
constexpr const char* kValHeader = "step,qf,psnr_restored,psnr_compressed,loss,images";

void ensure_writable(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  const fs::path probe = dir / ".write_probe";
  {
    std::ofstream os(probe);
    require(os.good() && (os << "ok").good(), ErrorKind::Io, dir.string() + " is not writable");
  }
  fs::remove(probe, ec);
}

// Keeps the header and the rows with step <= `upto` of an existing CSV.
void truncate_csv(const fs::path& path, std::uint64_t upto, const char* header) {
  std::vector<std::string> keep = {header};
  std::ifstream in(path);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      first = false;
      continue;
    }
    if (line.empty()) continue;
    if (std::stoull(line.substr(0, line.find(','))) <= upto) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

struct ValidationSet {
  std::vector<Tensor> pristine;
  std::vector<std::vector<Tensor>> compressed;  // [qf][image]
};

ValidationSet load_validation(const dataio::CorpusManifest& manifest, const DataConfig& data,
                              const SsimParams& loss) {
  ValidationSet v;
  for (const auto& p : manifest.paths(dataio::Split::Val)) {
    if (int(v.pristine.size()) >= data.val_max_images) break;
    auto img = dataio::try_read_image(p);
    if (!img || img->h() < loss.window || img->w() < loss.window) {
      spdlog::warn("validation: skipping {}", p.string());
      continue;
    }
    v.pristine.push_back(std::move(*img));
  }
  for (int qf : data.val_qfs) {
    std::vector<Tensor> row;
    for (const auto& img : v.pristine) row.push_back(dataio::distort_jpeg(img, qf));
    v.compressed.push_back(std::move(row));
  }
  return v;
}

double psnr_of(const Tensor& a, const Tensor& b) {
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a.data()[i]) - double(b.data()[i]);
    se += d * d;
  }
  const double mse = se / double(a.size());
  return mse == 0.0 ? 100.0 : 10.0 * std::log10(1.0 / mse);
}

std::vector<ValidationRow> validate_model(const Model& model, const ValidationSet& vs,
                                          const DataConfig& data, const SsimParams& loss,
                                          std::uint64_t step) {
  std::vector<ValidationRow> rows;
  for (std::size_t q = 0; q < data.val_qfs.size(); ++q) {
    ValidationRow r;
    r.step = step;
    r.qf = data.val_qfs[q];
    r.images = int(vs.pristine.size());
    for (std::size_t i = 0; i < vs.pristine.size(); ++i) {
      const Tensor restored = model.forward(vs.compressed[q][i]).restored;
      r.psnr_restored += psnr_of(vs.pristine[i], restored);
      r.psnr_compressed += psnr_of(vs.pristine[i], vs.compressed[q][i]);
      r.loss += total_loss(restored, vs.pristine[i], nullptr, loss).total;
    }
    r.psnr_restored /= r.images;
    r.psnr_compressed /= r.images;
    r.loss /= r.images;
    rows.push_back(r);
  }
  return rows;
}

std::string step_dir_name(std::uint64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%07llu", static_cast<unsigned long long>(step));
  return buf;
}

}  // namespace

std::vector<LogRow> read_training_log(const fs::path& csv) {
  std::ifstream in(csv);
  require(in.good(), ErrorKind::Io, "cannot open " + csv.string());
  std::vector<LogRow> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      require(line == kLogHeader, ErrorKind::Parse, csv.string() + ": unexpected header");
      continue;
    }
    if (line.empty()) continue;
    LogRow r;
    char comma;
    std::istringstream is(line);
    is >> r.step >> comma >> r.lr >> comma >> r.total >> comma >> r.l1 >> comma >> r.ssim_term;
    require(!is.fail(), ErrorKind::Parse, csv.string() + ":" + std::to_string(line_no) + ": bad row");
    rows.push_back(r);
  }
  return rows;
}

FitResult fit(const RunConfig& config) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  if (config.deterministic) kernels::set_deterministic_blas();

  const fs::path run_dir(config.logging.run_dir);
  const fs::path ckpt_root = run_dir / "checkpoints";
  ensure_writable(ckpt_root);

  std::ofstream(run_dir / "config.json", std::ios::trunc) << nlohmann::json(config).dump(2) << '\n';

  const auto manifest = dataio::load_corpus_manifest(config.data.corpus);
  const dataio::TrainingSampler sampler(manifest, config.data.distortion, config.data.patch,
                                        dataio::Split::Train, config.data.cache_mb << 20);

  std::optional<TrainState> state;
  if (config.resume) {
    LoadedCheckpoint ck = load_checkpoint(*config.resume);
    require(ck.meta.model == config.model, ErrorKind::Incompatible,
            "checkpoint model config differs from the run config");
    require(ck.meta.has_moments, ErrorKind::Incompatible,
            "checkpoint has no optimizer moments and cannot be resumed");
    require(ck.meta.sampler.seed == config.data.seed, ErrorKind::Incompatible,
            "checkpoint data seed differs from the run config");
    state.emplace(std::move(ck.state));
    spdlog::info("resuming from {} at step {}", *config.resume, state->step);
  } else {
    state.emplace(init_state(Model::build(config.model, config.model_seed), config.data.seed));
  }

  const fs::path log_path = run_dir / "train_log.csv";
  const fs::path val_path = run_dir / "validation.csv";
  if (config.resume && fs::exists(log_path)) {
    truncate_csv(log_path, state->step, kLogHeader);
  } else {
    std::ofstream(log_path, std::ios::trunc) << kLogHeader << '\n';
  }
  if (config.resume && fs::exists(val_path)) {
    truncate_csv(val_path, state->step, kValHeader);
  } else {
    std::ofstream(val_path, std::ios::trunc) << kValHeader << '\n';
  }
  std::ofstream log(log_path, std::ios::app);
  std::ofstream val_log(val_path, std::ios::app);
  require(log.good() && val_log.good(), ErrorKind::Io, "cannot open logs in " + run_dir.string());

  const ValidationSet vs = load_validation(manifest, config.data, config.loss);
  if (vs.pristine.empty()) spdlog::warn("no validation images; validation disabled");

  FitResult result;
  const std::uint64_t total = config.optimizer.total_steps;
  const auto& opt = config.optimizer;

  std::future<dataio::TrainingBatch> pending;
  auto fetch = [&](std::uint64_t index) {
    return sampler.sample(state->sampler.seed, index);
  };
  if (config.data.prefetch && state->step < total)
    pending = std::async(std::launch::async, fetch, state->sampler.next_batch);

  while (state->step < total) {
    dataio::TrainingBatch batch;
    if (pending.valid()) {
      batch = pending.get();
    } else {
      batch = fetch(state->sampler.next_batch);
    }
    ++state->sampler.next_batch;
    const double lr = lr_at_step(state->step, opt);
    const LossReport rep = train_step(*state, batch, opt, config.loss);
    if (config.data.prefetch && state->step < total)
      pending = std::async(std::launch::async, fetch, state->sampler.next_batch);

    const std::uint64_t s = state->step;
    if (s % config.logging.log_interval == 0) {
      LogRow row{s, lr, rep.total, rep.l1, rep.ssim_term};
      log << s << ',' << fmt9(lr) << ',' << fmt9(rep.total) << ',' << fmt9(rep.l1) << ','
          << fmt9(rep.ssim_term) << '\n';
      log.flush();
      result.log.push_back(row);
      spdlog::info("step {} lr {:.3g} loss {:.5f} (l1 {:.5f}, 1-ssim {:.5f})", s, lr, rep.total,
                   rep.l1, rep.ssim_term);
    }
    if (!vs.pristine.empty() && s % config.logging.validation_interval == 0) {
      const auto rows = validate_model(state->model, vs, config.data, config.loss, s);
      double mean_loss = 0.0;
      for (const auto& r : rows) {
        val_log << r.step << ',' << r.qf << ',' << fmt9(r.psnr_restored) << ','
                << fmt9(r.psnr_compressed) << ',' << fmt9(r.loss) << ',' << r.images << '\n';
        spdlog::info("validation step {} qf {}: psnr {:.3f} dB (compressed {:.3f} dB)", s, r.qf,
                     r.psnr_restored, r.psnr_compressed);
        mean_loss += r.loss / double(rows.size());
      }
      val_log.flush();
      if (!state->best_val_loss || mean_loss < *state->best_val_loss)
        state->best_val_loss = mean_loss;
      result.validation.insert(result.validation.end(), rows.begin(), rows.end());
    }
    if (s % config.logging.checkpoint_interval == 0 && s < total)
      save_checkpoint(ckpt_root / step_dir_name(s), *state, opt, config.model_seed,
                      config.deterministic);
  }

  result.final_checkpoint = ckpt_root / "final";
  save_checkpoint(result.final_checkpoint, *state, opt, config.model_seed, config.deterministic);
  result.final_step = state->step;
  result.final_digest = parameter_digest(state->model.parameters());
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace qairn::trainer
