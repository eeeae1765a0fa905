#include <cmath>
#include <exception>

#include <spdlog/spdlog.h>

#include "qairn/bench.hpp"
#include "qairn/error.hpp"

namespace qairn::bench {

void PoolingSpec::validate(const ModelConfig& model) const {
  require(p > 0.0 && std::isfinite(p), ErrorKind::Input, "pooling exponent p must be positive");
  require(map_index >= 1 && map_index <= model.attention_blocks(), ErrorKind::Input,
          "map index " + std::to_string(map_index) + " out of range 1.." +
              std::to_string(model.attention_blocks()));
}

namespace {

void check_single(const Model& model, const Tensor& image) {
  require(image.n() == 1, ErrorKind::Dimension, "expected a single image, got " + to_string(image.shape()));
  require(image.c() == model.config().input_channels, ErrorKind::Dimension,
          "image has " + std::to_string(image.c()) + " channels, model expects " +
              std::to_string(model.config().input_channels));
}

// Runs f(i) for i in [0, n) across threads; rethrows the first failure.
template <class F>
void parallel_for(int n, F&& f) {
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    try {
      f(i);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

Tensor restore_image(const Model& model, const Tensor& image, const ForwardOptions& options) {
  check_single(model, image);
  return model.forward(image, options).restored;
}

QualityEstimate predict_quality(const Model& model, const Tensor& image, const PoolingSpec& spec,
                                const std::string& image_id, const ForwardOptions& options) {
  spec.validate(model.config());
  check_single(model, image);
  const RestorationOutput out = model.forward(image, options);
  const Tensor& gamma = out.attention.maps.at(std::size_t(spec.map_index - 1));
  return {metrics::minkowski_pool(gamma, spec.p), spec.map_index, spec.p, image_id};
}

Restorer model_restorer(const Model& model) {
  return [&model](const Tensor& compressed) { return restore_image(model, compressed); };
}

Restorer identity_restorer() {
  return [](const Tensor& compressed) { return compressed; };
}

std::vector<NamedImage> load_images(const std::vector<fs::path>& paths) {
  std::vector<NamedImage> out;
  for (const auto& p : paths) out.push_back({p.filename().string(), dataio::read_image(p)});
  return out;
}

RestorationReport eval_restoration(const Restorer& restorer, const std::vector<NamedImage>& images,
                                   const std::vector<int>& qfs, metrics::ChannelMode mode) {
  require(!images.empty(), ErrorKind::Input, "restoration benchmark needs at least one image");
  require(!qfs.empty(), ErrorKind::Input, "restoration benchmark needs at least one qf");
  RestorationReport report;
  report.codec_id = dataio::codec_id();
  report.channel_mode = mode;
  for (const auto& im : images) report.images.push_back(im.id);

  const int n = int(images.size());
  for (int qf : qfs) {
    std::vector<double> ps(n), ss(n), pb(n), bps(n), bss(n), bpb(n);
    parallel_for(n, [&](int i) {
      const Tensor& ref = images[i].pixels;
      const Tensor comp = dataio::distort_jpeg(ref, qf);
      const Tensor rest = restorer(comp);
      require(rest.shape() == ref.shape(), ErrorKind::Dimension,
              "restorer changed the size of " + images[i].id);
      const Tensor ref_m = mode == metrics::ChannelMode::LumaBt601 ? metrics::to_luma(ref) : ref;
      const Tensor rest_m = mode == metrics::ChannelMode::LumaBt601 ? metrics::to_luma(rest) : rest;
      const Tensor comp_m = mode == metrics::ChannelMode::LumaBt601 ? metrics::to_luma(comp) : comp;
      ps[i] = metrics::psnr(ref_m, rest_m);
      ss[i] = metrics::ssim_eval(ref, rest, mode);
      pb[i] = metrics::psnr_b(ref, rest, 8, 1.0, mode);
      bps[i] = metrics::psnr(ref_m, comp_m);
      bss[i] = metrics::ssim_eval(ref, comp, mode);
      bpb[i] = metrics::psnr_b(ref, comp, 8, 1.0, mode);
    });
    report.rows.push_back({qf, metrics::pairwise_mean(ps), metrics::pairwise_mean(ss),
                           metrics::pairwise_mean(pb), metrics::pairwise_mean(bps),
                           metrics::pairwise_mean(bss), metrics::pairwise_mean(bpb), n});
  }
  return report;
}

QualityPredictor model_predictor(const Model& model, const PoolingSpec& spec) {
  spec.validate(model.config());
  return [&model, spec](const Tensor& image) { return predict_quality(model, image, spec).q; };
}

IqaReport eval_iqa(const QualityPredictor& predictor, const dataio::MosDatabase& db,
                   const PoolingSpec& spec, const IqaOptions& options) {
  const dataio::MosDatabase subset = db.filter(options.distortion);
  const int n = int(subset.records.size());
  require(n >= 3, ErrorKind::Input,
          "need at least 3 records for distortion '" + options.distortion + "', found " +
              std::to_string(n));

  std::vector<std::string> missing;
  for (const auto& r : subset.records) {
    const fs::path p = subset.resolve(r);
    if (!fs::exists(p)) {
      spdlog::error("missing image {}", p.string());
      missing.push_back(p.string());
    }
  }
  require(missing.empty(), ErrorKind::Io,
          std::to_string(missing.size()) + " image(s) listed in the score manifest are missing, e.g. " +
              (missing.empty() ? std::string() : missing.front()));

  IqaReport report;
  report.codec_id = dataio::codec_id();
  report.logistic_mapping = options.logistic;
  report.samples.resize(std::size_t(n));
  parallel_for(n, [&](int i) {
    const auto& r = subset.records[std::size_t(i)];
    const Tensor img = dataio::read_image(subset.resolve(r));
    report.samples[std::size_t(i)] = {r.image_path, predictor(img),
                                      r.higher_is_better ? r.score : -r.score};
  });
  for (const auto& r : subset.records) report.orientation_applied |= !r.higher_is_better;

  std::vector<double> q, s;
  for (const auto& smp : report.samples) {
    q.push_back(smp.q);
    s.push_back(smp.score);
  }
  const metrics::CorrelationReport c = metrics::correlate(q, s);
  IqaRow row{options.database, options.distortion, spec.map_index, spec.p,
             c.pcc, c.srcc, c.kcc, c.n_samples};
  if (options.logistic) {
    const metrics::Logistic4 f = metrics::fit_logistic4(q, s);
    std::vector<double> mapped;
    for (double v : q) mapped.push_back(f(v));
    row.pcc = metrics::pearson(mapped, s);
    report.notes.push_back("PCC computed after a 4-parameter logistic mapping");
  }
  report.rows.push_back(row);
  if (report.orientation_applied)
    report.notes.push_back("scores with higher_is_better=false were negated before correlation");
  if (options.distortion == "white_noise")
    report.notes.push_back(
        "negative correlation is the published behaviour for noise: estimated quality rises with "
        "noise level");
  return report;
}

const std::vector<RestorationTarget>& restoration_targets() {
  static const std::vector<RestorationTarget> t = {
      {10, 27.25, 0.803, 26.90},
      {20, 29.60, 0.868, 29.14},
      {30, 30.94, 0.896, 30.41},
      {40, 31.86, 0.911, 31.29},
  };
  return t;
}

const std::vector<IqaTarget>& iqa_targets() {
  static const std::vector<IqaTarget> t = {
      {"LIVE-IQA", "jpeg", 1, 0.099, 0.076, 0.051},
      {"LIVE-IQA", "jpeg", 2, 0.870, 0.879, 0.695},
      {"LIVE-IQA", "jpeg", 3, 0.267, 0.203, 0.135},
      {"CSIQ", "jpeg", 1, -0.233, -0.216, -0.148},
      {"CSIQ", "jpeg", 2, 0.859, 0.832, 0.628},
      {"CSIQ", "jpeg", 3, 0.446, 0.428, 0.288},
      {"TID2013", "jpeg", 1, 0.070, 0.118, 0.084},
      {"TID2013", "jpeg", 2, 0.880, 0.862, 0.658},
      {"TID2013", "jpeg", 3, 0.073, 0.136, 0.078},
      {"LIVE-IQA", "jpeg2000", 2, 0.814, 0.828, 0.637},
      {"LIVE-IQA", "gaussian_blur", 2, 0.714, 0.743, 0.557},
      {"LIVE-IQA", "white_noise", 2, -0.895, -0.926, -0.778},
      {"CSIQ", "jpeg2000", 2, 0.672, 0.679, 0.476},
      {"CSIQ", "gaussian_blur", 2, 0.714, 0.767, 0.540},
      {"CSIQ", "white_noise", 2, -0.581, -0.572, -0.403},
      {"TID2013", "jpeg2000", 2, 0.477, 0.528, 0.348},
      {"TID2013", "gaussian_blur", 2, 0.608, 0.654, 0.478},
      {"TID2013", "white_noise", 2, -0.395, -0.410, -0.287},
  };
  return t;
}

}  // namespace qairn::bench
