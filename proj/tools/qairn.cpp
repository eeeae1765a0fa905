#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <omp.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "qairn/bench.hpp"
#include "qairn/error.hpp"
#include "qairn/kernels.hpp"
#include "qairn/metrics.hpp"
#include "qairn/trainer.hpp"

namespace fs = std::filesystem;
using namespace qairn;

namespace {

constexpr int kUsageExit = 2;

// 0 ok, 1 unexpected, 2 usage, then one code per error category.
int exit_code(ErrorKind k) { return 10 + static_cast<int>(k); }

std::vector<fs::path> list_images(const fs::path& input) {
  require(fs::exists(input), ErrorKind::Io, "no such file or directory: " + input.string());
  if (!fs::is_directory(input)) return {input};
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(input))
    if (e.is_regular_file() && dataio::is_image_path(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  require(!out.empty(), ErrorKind::Input, "no images found in " + input.string());
  return out;
}

std::vector<int> parse_qfs(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used == tok.size() && !tok.empty(), ErrorKind::Input, "bad quality factor '" + tok + "'");
    require(v >= 1 && v <= 100, ErrorKind::Input, "quality factor " + tok + " outside 1..100");
    out.push_back(v);
  }
  require(!out.empty(), ErrorKind::Input, "empty --qfs list");
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorKind::Io, "cannot create directory " + dir.string());
}

struct Ctx {
  std::vector<std::string> argv;
};

int cmd_train(const Ctx& ctx, const fs::path& config_path, const std::string& run_dir,
              std::optional<std::uint64_t> steps) {
  trainer::RunConfig cfg = trainer::load_run_config(config_path);
  if (!run_dir.empty()) cfg.logging.run_dir = run_dir;
  if (steps) cfg.optimizer.total_steps = *steps;
  cfg.validate();
  ensure_dir(cfg.logging.run_dir);
  bench::write_run_record(cfg.logging.run_dir, "train", ctx.argv,
                          {{"config", fs::absolute(config_path).string()},
                           {"deterministic", cfg.deterministic}});
  const auto r = trainer::fit(cfg);
  std::printf("trained to step %llu in %.1f s; checkpoint %s\n",
              static_cast<unsigned long long>(r.final_step), r.seconds,
              r.final_checkpoint.string().c_str());
  return 0;
}

int cmd_restore(const Ctx& ctx, const fs::path& ckpt, const fs::path& input, const fs::path& out,
                std::optional<int> jpeg_qf) {
  const Model model = trainer::load_model(ckpt);
  const auto files = list_images(input);
  ensure_dir(out);
  for (const auto& f : files) {
    Tensor img = dataio::read_image(f);
    if (jpeg_qf) img = dataio::distort_jpeg(img, *jpeg_qf);
    const Tensor restored = bench::restore_image(model, img);
    const fs::path dst = out / (f.stem().string() + ".png");
    dataio::write_image(dst, restored);
    spdlog::info("{} -> {}", f.string(), dst.string());
  }
  bench::write_run_record(out, "restore", ctx.argv,
                          {{"checkpoint_id", trainer::checkpoint_id(ckpt)},
                           {"images", files.size()},
                           {"jpeg_qf", jpeg_qf ? nlohmann::json(*jpeg_qf) : nlohmann::json()}});
  return 0;
}

int cmd_assess(const Ctx& ctx, const fs::path& ckpt, const fs::path& input, int map, double p,
               const std::string& out) {
  const Model model = trainer::load_model(ckpt);
  const bench::PoolingSpec spec{p, map};
  spec.validate(model.config());
  const auto files = list_images(input);
  std::ostringstream csv;
  csv << "path,map_index,p,q\n";
  for (const auto& f : files) {
    const auto q = bench::predict_quality(model, dataio::read_image(f), spec, f.string());
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", q.q);
    csv << f.string() << ',' << map << ',' << p << ',' << buf << '\n';
  }
  std::cout << csv.str();
  if (!out.empty()) {
    ensure_dir(out);
    std::ofstream(fs::path(out) / "assess.csv") << csv.str();
    bench::write_run_record(out, "assess", ctx.argv,
                            {{"checkpoint_id", trainer::checkpoint_id(ckpt)},
                             {"map_index", map},
                             {"p", p}});
  }
  return 0;
}

int cmd_eval_restoration(const Ctx& ctx, const fs::path& ckpt, const fs::path& corpus,
                         const std::string& qfs, const fs::path& out, const std::string& split,
                         const std::string& channel, int max_images, bool identity) {
  const auto manifest = dataio::load_corpus_manifest(corpus);
  auto paths = manifest.paths(dataio::split_from_string(split));
  require(!paths.empty(), ErrorKind::Input, "corpus has no '" + split + "' images");
  if (max_images > 0 && int(paths.size()) > max_images) paths.resize(std::size_t(max_images));
  const auto images = bench::load_images(paths);
  const auto qf_list = parse_qfs(qfs);
  const auto mode = metrics::channel_mode_from_string(channel);

  std::optional<Model> model;
  std::string id = "identity";
  if (!identity) {
    model = trainer::load_model(ckpt);
    id = trainer::checkpoint_id(ckpt);
  }
  auto report = bench::eval_restoration(
      identity ? bench::identity_restorer() : bench::model_restorer(*model), images, qf_list, mode);
  report.checkpoint_id = id;
  ensure_dir(out);
  bench::emit_reports(report, out);
  bench::write_run_record(out, "eval-restoration", ctx.argv,
                          {{"checkpoint_id", id},
                           {"corpus", fs::absolute(corpus).string()},
                           {"split", split},
                           {"images", report.images}});
  std::printf("%-4s %9s %7s %9s | %9s %7s %9s\n", "qf", "psnr", "ssim", "psnr_b", "jpeg_psnr",
              "ssim", "psnr_b");
  for (const auto& r : report.rows)
    std::printf("%-4d %9.3f %7.4f %9.3f | %9.3f %7.4f %9.3f\n", r.qf, r.psnr, r.ssim, r.psnr_b,
                r.baseline_psnr, r.baseline_ssim, r.baseline_psnr_b);
  return 0;
}

int cmd_eval_iqa(const Ctx& ctx, const fs::path& ckpt, const fs::path& mos,
                 const std::string& distortion, const fs::path& out, int map, double p,
                 const std::string& database, bool logistic) {
  const Model model = trainer::load_model(ckpt);
  const bench::PoolingSpec spec{p, map};
  const auto db = dataio::load_mos_manifest(mos);
  bench::IqaOptions opt;
  opt.database = database.empty() ? mos.stem().string() : database;
  opt.distortion = distortion;
  opt.logistic = logistic;
  auto report = bench::eval_iqa(bench::model_predictor(model, spec), db, spec, opt);
  report.checkpoint_id = trainer::checkpoint_id(ckpt);
  ensure_dir(out);
  bench::emit_reports(report, spec, out);
  bench::write_run_record(out, "eval-iqa", ctx.argv,
                          {{"checkpoint_id", report.checkpoint_id},
                           {"mos", fs::absolute(mos).string()},
                           {"distortion", distortion}});
  for (const auto& r : report.rows)
    std::printf("%s/%s Q%d p=%g: PCC %.4f SRCC %.4f KCC %.4f (n=%zu)\n", r.database.c_str(),
                r.distortion.c_str(), r.map_index, r.p, r.pcc, r.srcc, r.kcc, r.n);
  for (const auto& n : report.notes) std::printf("note: %s\n", n.c_str());
  return 0;
}

int cmd_metrics(const Ctx& ctx, const fs::path& ref, const fs::path& test,
                const std::string& channel, const std::string& out) {
  const Tensor a = dataio::read_image(ref);
  const Tensor b = dataio::read_image(test);
  require(a.shape() == b.shape(), ErrorKind::Dimension,
          "image sizes differ: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  const auto mode = metrics::channel_mode_from_string(channel);
  const Tensor am = mode == metrics::ChannelMode::LumaBt601 ? metrics::to_luma(a) : a;
  const Tensor bm = mode == metrics::ChannelMode::LumaBt601 ? metrics::to_luma(b) : b;
  const auto num = [](double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(v > 0 ? "inf" : "-inf");
  };
  const nlohmann::json j = {{"ref", ref.string()},
                            {"test", test.string()},
                            {"channel_mode", channel},
                            {"psnr", num(metrics::psnr(am, bm))},
                            {"ssim", num(metrics::ssim_eval(a, b, mode))},
                            {"psnr_b", num(metrics::psnr_b(a, b, 8, 1.0, mode))}};
  std::cout << j.dump(2) << '\n';
  if (!out.empty()) {
    ensure_dir(out);
    std::ofstream(fs::path(out) / "metrics.json") << j.dump(2) << '\n';
    bench::write_run_record(out, "metrics", ctx.argv);
  }
  return 0;
}

int cmd_corpus(const Ctx&, const std::vector<std::string>& roots, const fs::path& out,
               std::uint64_t seed, const std::string& name) {
  std::vector<fs::path> dirs(roots.begin(), roots.end());
  auto m = dataio::build_corpus_manifest(dirs, {}, seed, name);
  dataio::save_corpus_manifest(out, m);
  std::printf("%zu train / %zu val / %zu test, %zu skipped -> %s\n", m.count(dataio::Split::Train),
              m.count(dataio::Split::Val), m.count(dataio::Split::Test), m.skipped.size(),
              out.string().c_str());
  return 0;
}

int cmd_synth(const Ctx&, const fs::path& out, int count, int size, std::uint64_t seed) {
  const auto files = dataio::write_synthetic_corpus(out, count, size, size, seed);
  std::printf("wrote %zu images to %s\n", files.size(), out.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"QAIRN: JPEG artifact removal with built-in quality assessment"};
  app.require_subcommand(1);
  app.set_version_flag("--version", QAIRN_VERSION);
  int threads = 0;
  bool verbose = false, quiet = false;
  app.add_option("--threads", threads, "OpenMP threads (0 = runtime default)")->check(CLI::NonNegativeNumber);
  app.add_flag("-v,--verbose", verbose, "debug logging");
  app.add_flag("-q,--quiet", quiet, "warnings and errors only");

  Ctx ctx;
  ctx.argv.assign(argv, argv + argc);

  std::string config, run_dir;
  std::optional<std::uint64_t> steps;
  auto* train = app.add_subcommand("train", "train a model from a run config");
  train->add_option("--config", config, "run config JSON")->required()->check(CLI::ExistingFile);
  train->add_option("--run-dir", run_dir, "override logging.run_dir");
  train->add_option("--steps", steps, "override optimizer.total_steps");

  std::string ckpt, input, output;
  std::optional<int> jpeg_qf;
  auto* restore = app.add_subcommand("restore", "restore an image or a directory of images");
  restore->add_option("--ckpt", ckpt)->required();
  restore->add_option("--input", input, "image file or directory")->required();
  restore->add_option("--output", output, "output directory")->required();
  restore->add_option("--jpeg-qf", jpeg_qf, "compress with this quality factor first")
      ->check(CLI::Range(1, 100));

  int map = 2;
  double p = 2.0;
  std::string out;
  auto* assess = app.add_subcommand("assess", "no-reference quality from an attention map");
  assess->add_option("--ckpt", ckpt)->required();
  assess->add_option("--input", input, "image file or directory")->required();
  assess->add_option("--map", map, "gate map index")->check(CLI::IsMember({1, 2, 3}));
  assess->add_option("--p", p, "Minkowski exponent");
  assess->add_option("--out", out, "also write assess.csv and run.json here");

  std::string corpus, qfs = "10,20,30,40", split = "test", channel = "rgb_mean";
  int max_images = 0;
  bool identity = false;
  auto* er = app.add_subcommand("eval-restoration", "PSNR / SSIM / PSNR-B over a corpus split");
  er->add_option("--ckpt", ckpt);
  er->add_option("--corpus", corpus, "corpus manifest JSON")->required();
  er->add_option("--qfs", qfs, "comma-separated quality factors");
  er->add_option("--out", out)->required();
  er->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}));
  er->add_option("--channel-mode", channel)->check(CLI::IsMember({"rgb_mean", "luma_bt601"}));
  er->add_option("--max-images", max_images)->check(CLI::NonNegativeNumber);
  er->add_flag("--identity", identity, "score the compressed images themselves (no model)");

  std::string mos, distortion = "all", database;
  bool logistic = false;
  auto* ei = app.add_subcommand("eval-iqa", "correlate predicted quality with subjective scores");
  ei->add_option("--ckpt", ckpt)->required();
  ei->add_option("--mos", mos, "score manifest CSV")->required();
  ei->add_option("--distortion", distortion, "distortion type or 'all'");
  ei->add_option("--out", out)->required();
  ei->add_option("--map", map)->check(CLI::IsMember({1, 2, 3}));
  ei->add_option("--p", p);
  ei->add_option("--database", database, "label used in reports (default: manifest name)");
  ei->add_flag("--logistic", logistic, "fit a 4-parameter logistic before PCC");

  std::string ref, test;
  auto* met = app.add_subcommand("metrics", "full-reference metrics between two images");
  met->add_option("--ref", ref)->required();
  met->add_option("--test", test)->required();
  met->add_option("--channel-mode", channel)->check(CLI::IsMember({"rgb_mean", "luma_bt601"}));
  met->add_option("--out", out, "also write metrics.json and run.json here");

  std::vector<std::string> roots;
  std::string manifest_out, name = "corpus";
  std::uint64_t seed = 0;
  auto* mc = app.add_subcommand("make-corpus", "scan image folders into a split manifest");
  mc->add_option("--root", roots, "image directory (repeatable)")->required();
  mc->add_option("--out", manifest_out, "manifest JSON to write")->required();
  mc->add_option("--seed", seed);
  mc->add_option("--name", name);

  int count = 8, size = 96;
  auto* sy = app.add_subcommand("synth", "write a synthetic image set for smoke tests");
  sy->add_option("--out", out)->required();
  sy->add_option("--count", count)->check(CLI::PositiveNumber);
  sy->add_option("--size", size)->check(CLI::Range(16, 4096));
  sy->add_option("--seed", seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsageExit;
  }

  spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);
  if (threads > 0) omp_set_num_threads(threads);
  kernels::set_deterministic_blas();

  try {
    if (*train) return cmd_train(ctx, config, run_dir, steps);
    if (*restore) return cmd_restore(ctx, ckpt, input, output, jpeg_qf);
    if (*assess) return cmd_assess(ctx, ckpt, input, map, p, out);
    if (*er) {
      if (!identity && ckpt.empty()) throw CLI::RequiredError("--ckpt");
      return cmd_eval_restoration(ctx, ckpt, corpus, qfs, out, split, channel, max_images, identity);
    }
    if (*ei) return cmd_eval_iqa(ctx, ckpt, mos, distortion, out, map, p, database, logistic);
    if (*met) return cmd_metrics(ctx, ref, test, channel, out);
    if (*mc) return cmd_corpus(ctx, roots, manifest_out, seed, name);
    if (*sy) return cmd_synth(ctx, out, count, size, seed);
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", std::string(to_string(e.kind())).c_str(), e.what());
    return exit_code(e.kind());
  } catch (const CLI::Error& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsageExit;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error [internal]: %s\n", e.what());
    return 1;
  }
  return 0;
}
