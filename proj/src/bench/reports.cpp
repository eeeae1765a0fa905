#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include <omp.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "qairn/bench.hpp"
#include "qairn/error.hpp"

#ifndef QAIRN_VERSION
#define QAIRN_VERSION "unknown"
#endif

namespace qairn::bench {

namespace {

std::string fmt9(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double parse_num(const std::string& s, const std::string& where) {
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(used == s.size() && !s.empty(), ErrorKind::Parse, where + ": '" + s + "' is not a number");
  return v;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    require(!ec, ErrorKind::Io, "cannot create " + path.parent_path().string());
  }
  std::ofstream os(path, std::ios::trunc);
  require(os.good(), ErrorKind::Io, "cannot write " + path.string());
  return os;
}

// Reads a CSV with a fixed header, returning the data rows split on commas.
std::vector<std::vector<std::string>> read_table(const fs::path& path, const std::string& header,
                                                 std::size_t fields) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, "cannot open " + path.string());
  std::string line;
  require(std::getline(in, line) && line == header, ErrorKind::Parse,
          path.string() + ": unexpected header");
  std::vector<std::vector<std::string>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto f = split(line);
    require(f.size() == fields, ErrorKind::Parse,
            path.string() + ":" + std::to_string(line_no) + ": expected " +
                std::to_string(fields) + " fields");
    rows.push_back(std::move(f));
  }
  return rows;
}

nlohmann::json num(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(fmt9(v));
}

const char* kRestorationHeader =
    "qf,psnr,ssim,psnr_b,baseline_psnr,baseline_ssim,baseline_psnr_b,count";
const char* kIqaHeader = "database,distortion,map_index,p,pcc,srcc,kcc,n";

}  // namespace

void write_restoration_csv(const fs::path& path, const RestorationReport& r) {
  auto os = open_out(path);
  os << kRestorationHeader << '\n';
  for (const auto& row : r.rows)
    os << row.qf << ',' << fmt9(row.psnr) << ',' << fmt9(row.ssim) << ',' << fmt9(row.psnr_b)
       << ',' << fmt9(row.baseline_psnr) << ',' << fmt9(row.baseline_ssim) << ','
       << fmt9(row.baseline_psnr_b) << ',' << row.count << '\n';
  require(os.good(), ErrorKind::Io, "write failed: " + path.string());
}

std::vector<RestorationRow> read_restoration_csv(const fs::path& path) {
  std::vector<RestorationRow> rows;
  for (const auto& f : read_table(path, kRestorationHeader, 8)) {
    const std::string w = path.string();
    rows.push_back({int(parse_num(f[0], w)), parse_num(f[1], w), parse_num(f[2], w),
                    parse_num(f[3], w), parse_num(f[4], w), parse_num(f[5], w),
                    parse_num(f[6], w), int(parse_num(f[7], w))});
  }
  return rows;
}

nlohmann::json restoration_json(const RestorationReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"qf", row.qf},
                    {"psnr", num(row.psnr)},
                    {"ssim", num(row.ssim)},
                    {"psnr_b", num(row.psnr_b)},
                    {"baseline_psnr", num(row.baseline_psnr)},
                    {"baseline_ssim", num(row.baseline_ssim)},
                    {"baseline_psnr_b", num(row.baseline_psnr_b)},
                    {"count", row.count}});
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& t : restoration_targets())
    targets.push_back({{"qf", t.qf}, {"psnr", t.psnr}, {"ssim", t.ssim}, {"psnr_b", t.psnr_b}});
  return {{"kind", "restoration"},
          {"checkpoint_id", r.checkpoint_id},
          {"codec_id", r.codec_id},
          {"channel_mode", metrics::to_string(r.channel_mode)},
          {"psnr_b_block", 8},
          {"images", r.images},
          {"rows", rows},
          {"full_scale_reference", targets}};
}

void write_iqa_csv(const fs::path& path, const IqaReport& r) {
  auto os = open_out(path);
  os << kIqaHeader << '\n';
  for (const auto& row : r.rows)
    os << row.database << ',' << row.distortion << ',' << row.map_index << ',' << fmt9(row.p)
       << ',' << fmt9(row.pcc) << ',' << fmt9(row.srcc) << ',' << fmt9(row.kcc) << ',' << row.n
       << '\n';
  require(os.good(), ErrorKind::Io, "write failed: " + path.string());
}

std::vector<IqaRow> read_iqa_csv(const fs::path& path) {
  std::vector<IqaRow> rows;
  for (const auto& f : read_table(path, kIqaHeader, 8)) {
    const std::string w = path.string();
    rows.push_back({f[0], f[1], int(parse_num(f[2], w)), parse_num(f[3], w), parse_num(f[4], w),
                    parse_num(f[5], w), parse_num(f[6], w), std::size_t(parse_num(f[7], w))});
  }
  return rows;
}

nlohmann::json iqa_json(const IqaReport& r, const PoolingSpec& spec) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"database", row.database}, {"distortion", row.distortion},
                    {"map_index", row.map_index}, {"p", row.p}, {"pcc", row.pcc},
                    {"srcc", row.srcc}, {"kcc", row.kcc}, {"n", row.n}});
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : r.samples)
    samples.push_back({{"image", s.image}, {"q", s.q}, {"oriented_score", s.score}});
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& t : iqa_targets())
    targets.push_back({{"database", t.database}, {"distortion", t.distortion},
                       {"map_index", t.map_index}, {"pcc", t.pcc}, {"srcc", t.srcc},
                       {"kcc", t.kcc}});
  return {{"kind", "iqa"},
          {"checkpoint_id", r.checkpoint_id},
          {"codec_id", r.codec_id},
          {"p", spec.p},
          {"map_index", spec.map_index},
          {"channel_mode", "rgb"},
          {"orientation_applied", r.orientation_applied},
          {"logistic_mapping", r.logistic_mapping},
          {"notes", r.notes},
          {"rows", rows},
          {"samples", samples},
          {"full_scale_reference", targets}};
}

void write_scatter_plot(const fs::path& path, const std::vector<IqaSample>& samples,
                        const std::string& title) {
  require(!samples.empty(), ErrorKind::Input, "nothing to plot");
  const int width = 640, height = 480, left = 70, right = 20, top = 40, bottom = 60;
  cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  double x0 = samples[0].q, x1 = x0, y0 = samples[0].score, y1 = y0;
  for (const auto& s : samples) {
    x0 = std::min(x0, s.q);
    x1 = std::max(x1, s.q);
    y0 = std::min(y0, s.score);
    y1 = std::max(y1, s.score);
  }
  if (x1 - x0 < 1e-12) x1 = x0 + 1e-6;
  if (y1 - y0 < 1e-12) y1 = y0 + 1e-6;
  const double mx = 0.05 * (x1 - x0), my = 0.05 * (y1 - y0);
  x0 -= mx, x1 += mx, y0 -= my, y1 += my;
  // enough digits that neighbouring ticks print differently
  const auto digits = [](double lo, double hi) {
    const double mag = std::max(std::abs(lo), std::abs(hi));
    return std::clamp(int(std::ceil(std::log10(mag / ((hi - lo) / 4)))) + 1, 3, 10);
  };
  const int dx = digits(x0, x1), dy = digits(y0, y1);
  const double px = (width - left - right) / (x1 - x0);
  const double py = (height - top - bottom) / (y1 - y0);
  const cv::Scalar black(0, 0, 0), grey(160, 160, 160), blue(180, 90, 20);
  cv::rectangle(img, {left, top}, {width - right, height - bottom}, black, 1);
  for (int i = 0; i <= 4; ++i) {
    const int gx = left + (width - left - right) * i / 4;
    const int gy = top + (height - top - bottom) * i / 4;
    cv::line(img, {gx, height - bottom}, {gx, height - bottom + 5}, black);
    cv::line(img, {left - 5, gy}, {left, gy}, black);
    char lab[32];
    std::snprintf(lab, sizeof lab, "%.*g", dx, x0 + (x1 - x0) * i / 4);
    int base = 0;
    const int tw = cv::getTextSize(lab, cv::FONT_HERSHEY_SIMPLEX, 0.4, 1, &base).width;
    cv::putText(img, lab, {std::min(gx - tw / 2, width - tw - 2), height - bottom + 20},
                cv::FONT_HERSHEY_SIMPLEX, 0.4, black);
    std::snprintf(lab, sizeof lab, "%.*g", dy, y1 - (y1 - y0) * i / 4);
    cv::putText(img, lab, {5, gy + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, black);
    cv::line(img, {gx, top}, {gx, height - bottom}, grey, 1, cv::LINE_4);
  }
  for (const auto& s : samples) {
    const cv::Point p(left + int(std::lround((s.q - x0) * px)),
                      height - bottom - int(std::lround((s.score - y0) * py)));
    cv::circle(img, p, 3, blue, cv::FILLED, cv::LINE_AA);
  }
  cv::putText(img, title, {left, 25}, cv::FONT_HERSHEY_SIMPLEX, 0.55, black, 1, cv::LINE_AA);
  cv::putText(img, "predicted quality Q", {width / 2 - 70, height - 15}, cv::FONT_HERSHEY_SIMPLEX,
              0.5, black, 1, cv::LINE_AA);
  cv::putText(img, "score", {5, height - 15}, cv::FONT_HERSHEY_SIMPLEX, 0.45, black, 1, cv::LINE_AA);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), img);
  } catch (const cv::Exception& e) {
    fail(ErrorKind::Io, "cannot write plot " + path.string() + ": " + e.what());
  }
  require(ok, ErrorKind::Io, "cannot write plot " + path.string());
}

std::vector<fs::path> emit_reports(const RestorationReport& r, const fs::path& dir,
                                   ReportFormats formats) {
  std::vector<fs::path> out;
  if (formats.csv) {
    write_restoration_csv(dir / "restoration.csv", r);
    out.push_back(dir / "restoration.csv");
  }
  if (formats.json) {
    open_out(dir / "restoration.json") << restoration_json(r).dump(2) << '\n';
    out.push_back(dir / "restoration.json");
  }
  return out;
}

std::vector<fs::path> emit_reports(const IqaReport& r, const PoolingSpec& spec,
                                   const fs::path& dir, ReportFormats formats) {
  std::vector<fs::path> out;
  if (formats.csv) {
    write_iqa_csv(dir / "iqa.csv", r);
    out.push_back(dir / "iqa.csv");
  }
  if (formats.json) {
    open_out(dir / "iqa.json") << iqa_json(r, spec).dump(2) << '\n';
    out.push_back(dir / "iqa.json");
  }
  if (formats.plot && !r.samples.empty()) {
    std::string title = "Q" + std::to_string(spec.map_index);
    if (!r.rows.empty()) {
      char buf[96];
      std::snprintf(buf, sizeof buf, " vs score: %s / %s  (SRCC %.3f)", r.rows[0].database.c_str(),
                    r.rows[0].distortion.c_str(), r.rows[0].srcc);
      title += buf;
    }
    write_scatter_plot(dir / "iqa_scatter.png", r.samples, title);
    out.push_back(dir / "iqa_scatter.png");
  }
  return out;
}

void write_run_record(const fs::path& dir, const std::string& command,
                      const std::vector<std::string>& argv, const nlohmann::json& extra) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
  nlohmann::json j = {{"command", command},
                      {"argv", argv},
                      {"created_utc", stamp},
                      {"qairn_version", QAIRN_VERSION},
                      {"opencv_version", CV_VERSION},
                      {"codec_id", dataio::codec_id()},
                      {"openmp_max_threads", omp_get_max_threads()},
                      {"cwd", fs::current_path().string()}};
  if (extra.is_object())
    for (const auto& [k, v] : extra.items()) j[k] = v;
  open_out(dir / "run.json") << j.dump(2) << '\n';
}

}  // namespace qairn::bench
