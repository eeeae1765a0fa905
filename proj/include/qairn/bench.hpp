#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qairn/dataio.hpp"
#include "qairn/metrics.hpp"
#include "qairn/model.hpp"

namespace qairn::bench {

namespace fs = std::filesystem;

struct PoolingSpec {
  double p = 2.0;
  int map_index = 2;  // 1-based: gamma_1 is full resolution
  void validate(const ModelConfig& model) const;
};

struct QualityEstimate {
  double q = 0.0;
  int map_index = 2;
  double p = 2.0;
  std::string image_id;
};

/// pad -> forward -> crop, clamped to [0,1], same size as the input.
Tensor restore_image(const Model& model, const Tensor& image,
                     const ForwardOptions& options = {});

/// Minkowski-pooled gate map `spec.map_index` of one image.
QualityEstimate predict_quality(const Model& model, const Tensor& image,
                                const PoolingSpec& spec, const std::string& image_id = {},
                                const ForwardOptions& options = {});

// ---------------------------------------------------------------------------
// Restoration benchmark

/// Maps a compressed image to its restoration. Must be safe to call
/// concurrently.
using Restorer = std::function<Tensor(const Tensor& compressed)>;
Restorer model_restorer(const Model& model);
/// Returns its input: the report then equals the compressed baseline.
Restorer identity_restorer();

struct RestorationRow {
  int qf = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double psnr_b = 0.0;
  double baseline_psnr = 0.0;  // compressed vs pristine, no restoration
  double baseline_ssim = 0.0;
  double baseline_psnr_b = 0.0;
  int count = 0;
  friend bool operator==(const RestorationRow&, const RestorationRow&) = default;
};

struct RestorationReport {
  std::vector<RestorationRow> rows;
  std::string checkpoint_id;
  std::string codec_id;
  metrics::ChannelMode channel_mode = metrics::ChannelMode::RgbMean;
  std::vector<std::string> images;
};

struct NamedImage {
  std::string id;
  Tensor pixels;
};

std::vector<NamedImage> load_images(const std::vector<fs::path>& paths);

/// For each qf: compress every image, restore it, score against the
/// original, average with pairwise summation in input order.
RestorationReport eval_restoration(const Restorer& restorer,
                                   const std::vector<NamedImage>& images,
                                   const std::vector<int>& qfs = {10, 20, 30, 40},
                                   metrics::ChannelMode mode = metrics::ChannelMode::RgbMean);

// ---------------------------------------------------------------------------
// Quality-assessment benchmark

/// Scalar quality of a decoded image. Must be safe to call concurrently.
using QualityPredictor = std::function<double(const Tensor& image)>;
QualityPredictor model_predictor(const Model& model, const PoolingSpec& spec);

struct IqaSample {
  std::string image;
  double q = 0.0;
  double score = 0.0;  // oriented so that larger means better quality
};

struct IqaRow {
  std::string database;
  std::string distortion;
  int map_index = 2;
  double p = 2.0;
  double pcc = 0.0;
  double srcc = 0.0;
  double kcc = 0.0;
  std::size_t n = 0;
  friend bool operator==(const IqaRow&, const IqaRow&) = default;
};

struct IqaReport {
  std::vector<IqaRow> rows;
  std::vector<IqaSample> samples;
  std::string checkpoint_id;
  std::string codec_id;
  bool orientation_applied = false;  // some scores had higher_is_better=false
  bool logistic_mapping = false;
  std::vector<std::string> notes;
};

struct IqaOptions {
  std::string database = "db";
  std::string distortion = "all";
  bool logistic = false;
};

/// Predicts Q for every record matching the distortion filter and correlates
/// it with the oriented subjective scores. Missing images are all logged,
/// then reported as one Io error.
IqaReport eval_iqa(const QualityPredictor& predictor, const dataio::MosDatabase& db,
                   const PoolingSpec& spec, const IqaOptions& options = {});

// ---------------------------------------------------------------------------
// Reports

struct ReportFormats {
  bool csv = true;
  bool json = true;
  bool plot = true;
};

void write_restoration_csv(const fs::path& path, const RestorationReport& r);
std::vector<RestorationRow> read_restoration_csv(const fs::path& path);
nlohmann::json restoration_json(const RestorationReport& r);

void write_iqa_csv(const fs::path& path, const IqaReport& r);
std::vector<IqaRow> read_iqa_csv(const fs::path& path);
nlohmann::json iqa_json(const IqaReport& r, const PoolingSpec& spec);

/// Q against oriented score, one marker per sample.
void write_scatter_plot(const fs::path& path, const std::vector<IqaSample>& samples,
                        const std::string& title);

/// Files: restoration.csv / restoration.json, or iqa.csv / iqa.json /
/// iqa_scatter.png, inside `dir`. Returns the paths written.
std::vector<fs::path> emit_reports(const RestorationReport& r, const fs::path& dir,
                                   ReportFormats formats = {});
std::vector<fs::path> emit_reports(const IqaReport& r, const PoolingSpec& spec,
                                   const fs::path& dir, ReportFormats formats = {});

// ---------------------------------------------------------------------------
// Published full-scale numbers (500k-step training), for side-by-side display

struct RestorationTarget {
  int qf;
  double psnr, ssim, psnr_b;
};
struct IqaTarget {
  const char* database;
  const char* distortion;
  int map_index;
  double pcc, srcc, kcc;
};
const std::vector<RestorationTarget>& restoration_targets();
const std::vector<IqaTarget>& iqa_targets();

/// run.json provenance record: command line, versions, time, extra fields.
void write_run_record(const fs::path& dir, const std::string& command,
                      const std::vector<std::string>& argv, const nlohmann::json& extra = {});

}  // namespace qairn::bench
