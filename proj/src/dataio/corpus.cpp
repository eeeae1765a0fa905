#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <spdlog/spdlog.h>

#include "qairn/dataio.hpp"
#include "qairn/error.hpp"

namespace qairn::dataio {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Unbiased integer in [0, n) by rejection; independent of the standard
// library's distribution implementation.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v;
  do v = rng(); while (v >= limit);
  return v % n;
}

std::string relative_or_absolute(const fs::path& p, const fs::path& root) {
  const auto rel = p.lexically_relative(root);
  if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  return p.generic_string();
}

}  // namespace

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  fail(ErrorKind::Parse, "unknown split '" + s + "'");
}

fs::path CorpusManifest::resolve(const CorpusEntry& e) const {
  const fs::path p(e.path);
  return p.is_absolute() || root.empty() ? p : fs::path(root) / p;
}

std::vector<fs::path> CorpusManifest::paths(Split split) const {
  std::vector<fs::path> out;
  for (const auto& e : entries)
    if (e.split == split) out.push_back(resolve(e));
  return out;
}

std::size_t CorpusManifest::count(Split split) const {
  return std::size_t(std::count_if(entries.begin(), entries.end(),
                                   [&](const CorpusEntry& e) { return e.split == split; }));
}

void to_json(nlohmann::json& j, const CorpusManifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries) entries.push_back({{"path", e.path}, {"split", to_string(e.split)}});
  j = {{"format", "qairn-corpus/1"}, {"name", m.name},       {"root", m.root},
       {"seed", m.seed},             {"entries", entries}, {"skipped", m.skipped}};
}

void from_json(const nlohmann::json& j, CorpusManifest& m) {
  try {
    m.name = j.at("name").get<std::string>();
    m.root = j.at("root").get<std::string>();
    m.seed = j.value("seed", std::uint64_t{0});
    m.entries.clear();
    for (const auto& e : j.at("entries"))
      m.entries.push_back({e.at("path").get<std::string>(),
                           split_from_string(e.at("split").get<std::string>())});
    m.skipped = j.value("skipped", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, std::string("corpus manifest: ") + e.what());
  }
}

CorpusManifest load_corpus_manifest(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, "cannot open corpus manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, path.string() + ": " + e.what());
  }
  CorpusManifest m = j.get<CorpusManifest>();
  // a relative root is taken relative to the manifest's own directory
  if (!m.root.empty() && fs::path(m.root).is_relative())
    m.root = (path.parent_path() / m.root).lexically_normal().string();
  if (m.root.empty()) m.root = path.parent_path().string();
  return m;
}

void save_corpus_manifest(const fs::path& path, const CorpusManifest& m) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  require(out.good(), ErrorKind::Io, "cannot write corpus manifest " + path.string());
  out << nlohmann::json(m).dump(2) << '\n';
  require(out.good(), ErrorKind::Io, "write failed: " + path.string());
}

CorpusManifest build_corpus_manifest(const std::vector<fs::path>& root_dirs,
                                     SplitFractions f, std::uint64_t seed,
                                     const std::string& name) {
  require(!root_dirs.empty(), ErrorKind::Input, "no corpus directories given");
  require(f.train >= 0 && f.val >= 0 && f.test >= 0 &&
              std::abs(f.train + f.val + f.test - 1.0) < 1e-9,
          ErrorKind::Config, "split fractions must be non-negative and sum to 1");

  std::vector<fs::path> files;
  for (const auto& dir : root_dirs) {
    require(fs::is_directory(dir), ErrorKind::Io, "not a directory: " + dir.string());
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file() && is_image_path(e.path())) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  CorpusManifest m;
  m.name = name;
  m.root = root_dirs.front().string();
  m.seed = seed;
  std::vector<std::string> kept;
  for (const auto& p : files) {
    if (try_read_image(p)) {
      kept.push_back(relative_or_absolute(p, m.root));
    } else {
      spdlog::warn("skipping undecodable image {}", p.string());
      m.skipped.push_back(p.string());
    }
  }
  require(!kept.empty(), ErrorKind::Input, "no decodable images found");

  std::mt19937_64 rng(seed);
  for (std::size_t i = kept.size() - 1; i > 0; --i)
    std::swap(kept[i], kept[uniform_below(rng, i + 1)]);

  const auto n = static_cast<long long>(kept.size());
  const long long n_train = std::min(n, std::llround(f.train * double(n)));
  const long long n_val = std::min(n - n_train, std::llround(f.val * double(n)));
  for (long long i = 0; i < n; ++i) {
    const Split s = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);
    m.entries.push_back({kept[std::size_t(i)], s});
  }
  return m;
}

void DistortionSpec::validate() const {
  require(codec == "jpeg-baseline", ErrorKind::Config, "unsupported codec '" + codec + "'");
  require(1 <= qf_min && qf_min <= qf_max && qf_max <= 100, ErrorKind::Config,
          "quality factor range must satisfy 1 <= min <= max <= 100");
}

void PatchSpec::validate() const {
  require(patch_size > 0 && batch_size > 0, ErrorKind::Config,
          "patch and batch sizes must be positive");
}

TrainingSampler::TrainingSampler(const CorpusManifest& manifest, DistortionSpec distortion,
                                 PatchSpec patch, Split split, std::size_t cache_bytes)
    : distortion_(std::move(distortion)), patch_(patch) {
  distortion_.validate();
  patch_.validate();
  std::size_t used = 0;
  bool caching = true;
  for (const auto& p : manifest.paths(split)) {
    auto img = try_read_image(p);
    if (!img) {
      spdlog::warn("skipping undecodable image {}", p.string());
      skipped_.push_back(p.string());
      continue;
    }
    if (img->h() < patch_.patch_size || img->w() < patch_.patch_size) {
      spdlog::warn("skipping {} ({}x{}): smaller than the {} px patch", p.string(),
                   img->w(), img->h(), patch_.patch_size);
      skipped_.push_back(p.string());
      continue;
    }
    paths_.push_back(p);
    sizes_.emplace_back(img->h(), img->w());
    const std::size_t bytes = img->size() * sizeof(float);
    if (caching && used + bytes <= cache_bytes) {
      used += bytes;
      cache_.push_back(std::move(*img));
    } else {
      caching = false;
    }
  }
  require(!paths_.empty(), ErrorKind::Input,
          "no usable " + to_string(split) + " images (need at least " +
              std::to_string(patch_.patch_size) + " px on each side)");
}

Tensor TrainingSampler::image(std::size_t index) const {
  if (index < cache_.size()) return cache_[index];
  return read_image(paths_[index]);
}

ElementPlan TrainingSampler::plan(std::uint64_t seed, std::uint64_t batch_index,
                                  int element) const {
  std::uint64_t s = splitmix64(seed);
  s = splitmix64(s ^ batch_index);
  s = splitmix64(s ^ static_cast<std::uint64_t>(element));
  std::mt19937_64 rng(s);
  ElementPlan p;
  p.image = uniform_below(rng, paths_.size());
  p.qf = distortion_.qf_min +
         int(uniform_below(rng, std::uint64_t(distortion_.qf_max - distortion_.qf_min + 1)));
  const auto [h, w] = sizes_[p.image];
  p.offset_y = int(uniform_below(rng, std::uint64_t(h - patch_.patch_size + 1)));
  p.offset_x = int(uniform_below(rng, std::uint64_t(w - patch_.patch_size + 1)));
  if (patch_.flips) {
    p.flip_h = rng() & 1u;
    p.flip_v = rng() & 1u;
  }
  return p;
}

namespace {

Tensor flipped(const Tensor& t, bool h, bool v) {
  if (!h && !v) return t;
  Tensor out(t.shape());
  for (int y = 0; y < t.h(); ++y)
    for (int x = 0; x < t.w(); ++x) {
      const int sy = v ? t.h() - 1 - y : y;
      const int sx = h ? t.w() - 1 - x : x;
      std::copy_n(t.pixel(0, sy, sx), t.c(), out.pixel(0, y, x));
    }
  return out;
}

}  // namespace

TrainingBatch TrainingSampler::sample(std::uint64_t seed, std::uint64_t batch_index) const {
  const int b = patch_.batch_size;
  const int ps = patch_.patch_size;
  TrainingBatch out;
  out.batch_index = batch_index;
  out.plan.resize(b);
  std::vector<Tensor> comp(b), pris(b);
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (int e = 0; e < b; ++e) {
    try {
      const ElementPlan p = plan(seed, batch_index, e);
      const Tensor full = image(p.image);
      // compress the whole image, then cut the same window from both versions
      const Tensor jpeg = distort_jpeg(full, p.qf);
      pris[e] = flipped(crop(full, p.offset_y, p.offset_x, ps, ps), p.flip_h, p.flip_v);
      comp[e] = flipped(crop(jpeg, p.offset_y, p.offset_x, ps, ps), p.flip_h, p.flip_v);
      out.plan[e] = p;
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  out.compressed = stack_batch(comp);
  out.pristine = stack_batch(pris);
  return out;
}

TrainingBatch sample_training_batch(const TrainingSampler& sampler, SamplerState& state) {
  TrainingBatch b = sampler.sample(state.seed, state.next_batch);
  ++state.next_batch;
  return b;
}

}  // namespace qairn::dataio
