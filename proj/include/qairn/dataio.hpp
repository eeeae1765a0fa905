#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qairn/tensor.hpp"

namespace qairn::dataio {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Images

/// Decodes any OpenCV-readable file into a (1, 3, H, W) RGB tensor in [0,1].
Tensor read_image(const fs::path& path);
/// Same, but returns nullopt instead of throwing for undecodable files.
std::optional<Tensor> try_read_image(const fs::path& path);
/// Writes a single image (n == 1, 1 or 3 channels); format from extension.
void write_image(const fs::path& path, const Tensor& image);
bool is_image_path(const fs::path& path);

/// Encoder identity recorded in reports and run metadata.
std::string codec_id();

/// Baseline JPEG (4:2:0) round trip at quality `qf` in [1, 100].
Tensor distort_jpeg(const Tensor& image, int qf);

/// Procedural test picture: smooth shading, hard-edged shapes, texture and
/// a little grain, quantized to 8 bits. Deterministic in `seed`.
Tensor synthesize_image(int height, int width, std::uint64_t seed);
/// Writes `count` synthetic PNGs named img_000.png ... into `dir`.
std::vector<fs::path> write_synthetic_corpus(const fs::path& dir, int count, int height,
                                             int width, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Training corpus

enum class Split { Train, Val, Test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct CorpusEntry {
  std::string path;  // relative to the manifest root unless absolute
  Split split = Split::Train;
  friend bool operator==(const CorpusEntry&, const CorpusEntry&) = default;
};

struct CorpusManifest {
  std::string name;
  std::string root;
  std::uint64_t seed = 0;
  std::vector<CorpusEntry> entries;
  /// Files found but rejected as undecodable.
  std::vector<std::string> skipped;

  fs::path resolve(const CorpusEntry& e) const;
  std::vector<fs::path> paths(Split split) const;
  std::size_t count(Split split) const;
};

void to_json(nlohmann::json& j, const CorpusManifest& m);
void from_json(const nlohmann::json& j, CorpusManifest& m);
CorpusManifest load_corpus_manifest(const fs::path& path);
void save_corpus_manifest(const fs::path& path, const CorpusManifest& m);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Scans `root_dirs` (recursively, sorted), keeps decodable images, then
/// shuffles with `seed` and assigns splits.
CorpusManifest build_corpus_manifest(const std::vector<fs::path>& root_dirs,
                                     SplitFractions fractions, std::uint64_t seed,
                                     const std::string& name = "corpus");

struct DistortionSpec {
  std::string codec = "jpeg-baseline";
  int qf_min = 5;
  int qf_max = 95;
  void validate() const;
};

struct PatchSpec {
  int patch_size = 96;
  int batch_size = 16;
  bool flips = false;  // random horizontal/vertical flips, off by default
  void validate() const;
};

/// Random choices for one batch element.
struct ElementPlan {
  std::size_t image = 0;  // index into the sampler's usable images
  int qf = 0;
  int offset_y = 0;
  int offset_x = 0;
  bool flip_h = false;
  bool flip_v = false;
};

struct TrainingBatch {
  ImageBatch compressed;
  ImageBatch pristine;
  std::uint64_t batch_index = 0;
  std::vector<ElementPlan> plan;
};

/// Position in the deterministic batch stream.
struct SamplerState {
  std::uint64_t seed = 0;
  std::uint64_t next_batch = 0;
  friend bool operator==(const SamplerState&, const SamplerState&) = default;
};

/// Draws aligned (compressed, pristine) crops. Batch b depends only on
/// (seed, b); each element owns an RNG stream derived from (seed, b, element),
/// so any number of workers produces the same sequence.
class TrainingSampler {
 public:
  TrainingSampler(const CorpusManifest& manifest, DistortionSpec distortion,
                  PatchSpec patch, Split split = Split::Train,
                  std::size_t cache_bytes = std::size_t{1} << 30);

  ElementPlan plan(std::uint64_t seed, std::uint64_t batch_index, int element) const;
  TrainingBatch sample(std::uint64_t seed, std::uint64_t batch_index) const;

  std::size_t usable_images() const { return paths_.size(); }
  const std::vector<std::string>& skipped() const { return skipped_; }
  const PatchSpec& patch() const { return patch_; }
  const DistortionSpec& distortion() const { return distortion_; }

 private:
  Tensor image(std::size_t index) const;

  DistortionSpec distortion_;
  PatchSpec patch_;
  std::vector<fs::path> paths_;
  std::vector<std::pair<int, int>> sizes_;
  std::vector<Tensor> cache_;
  std::vector<std::string> skipped_;
};

/// Samples batch `state.next_batch` and advances the state.
TrainingBatch sample_training_batch(const TrainingSampler& sampler,
                                    SamplerState& state);

/// Fixed-size crop (top-left at y, x) of a single image.
Tensor crop(const Tensor& image, int y, int x, int h, int w);

// ---------------------------------------------------------------------------
// Subjective score manifests

/// Accepted distortion labels.
const std::vector<std::string>& distortion_vocabulary();

struct MosRecord {
  std::string image_path;
  std::string distortion_type;
  std::optional<double> level;
  double score = 0.0;
  bool higher_is_better = true;
  friend bool operator==(const MosRecord&, const MosRecord&) = default;
};

struct MosDatabase {
  fs::path base_dir;  // relative image paths resolve against this
  std::vector<MosRecord> records;

  fs::path resolve(const MosRecord& r) const;
  MosDatabase filter(const std::string& distortion_type) const;
};

/// CSV with header `path,distortion,level,score,higher_is_better`.
MosDatabase load_mos_manifest(const fs::path& path);
void save_mos_manifest(const fs::path& path, const MosDatabase& db);

}  // namespace qairn::dataio
