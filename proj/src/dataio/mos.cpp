#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "qairn/dataio.hpp"
#include "qairn/error.hpp"

namespace qairn::dataio {

const std::vector<std::string>& distortion_vocabulary() {
  static const std::vector<std::string> vocab = {
      "jpeg", "jpeg2000", "gaussian_blur", "white_noise", "fast_fading",
      "pink_noise", "contrast", "reference"};
  return vocab;
}

fs::path MosDatabase::resolve(const MosRecord& r) const {
  const fs::path p(r.image_path);
  return p.is_absolute() ? p : base_dir / p;
}

MosDatabase MosDatabase::filter(const std::string& distortion_type) const {
  MosDatabase out;
  out.base_dir = base_dir;
  for (const auto& r : records)
    if (distortion_type.empty() || distortion_type == "all" || r.distortion_type == distortion_type)
      out.records.push_back(r);
  return out;
}

namespace {

// RFC 4180 style split of a single line: quoted fields may contain commas and
// doubled quotes. Returns nullopt on an unterminated quote.
std::optional<std::vector<std::string>> split_csv(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          fields.back() += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        fields.back() += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.emplace_back();
    } else {
      fields.back() += ch;
    }
  }
  if (quoted) return std::nullopt;
  return fields;
}

std::string quote_csv(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + '"';
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  return s.substr(i);
}

std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

MosDatabase load_mos_manifest(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, "cannot open MOS manifest " + path.string());
  MosDatabase db;
  db.base_dir = path.parent_path();

  const std::string where = path.filename().string() + ":";
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    const std::string at = where + std::to_string(line_no) + ": ";
    require(fields.has_value(), ErrorKind::Parse, at + "unterminated quote");
    if (!header_seen) {
      std::vector<std::string> names;
      for (const auto& f : *fields) names.push_back(trim(f));
      const std::vector<std::string> expected = {"path", "distortion", "level", "score",
                                                 "higher_is_better"};
      require(names == expected, ErrorKind::Parse,
              at + "header must be path,distortion,level,score,higher_is_better");
      header_seen = true;
      continue;
    }
    require(fields->size() == 5, ErrorKind::Parse,
            at + "expected 5 fields, found " + std::to_string(fields->size()));
    MosRecord r;
    r.image_path = trim((*fields)[0]);
    r.distortion_type = trim((*fields)[1]);
    const std::string level = trim((*fields)[2]);
    const std::string score = trim((*fields)[3]);
    const std::string hib = trim((*fields)[4]);
    require(!r.image_path.empty(), ErrorKind::Parse, at + "missing path");
    require(!r.distortion_type.empty(), ErrorKind::Parse, at + "missing distortion");
    if (!level.empty()) {
      r.level = parse_double(level);
      require(r.level.has_value(), ErrorKind::Parse, at + "level '" + level + "' is not a number");
    }
    const auto s = parse_double(score);
    require(s.has_value(), ErrorKind::Parse, at + "score '" + score + "' is not a number");
    require(std::isfinite(*s), ErrorKind::Validation, at + "score is not finite");
    r.score = *s;
    if (hib == "true" || hib == "1") r.higher_is_better = true;
    else if (hib == "false" || hib == "0") r.higher_is_better = false;
    else fail(ErrorKind::Parse, at + "higher_is_better must be true/false, got '" + hib + "'");
    const auto& vocab = distortion_vocabulary();
    require(std::find(vocab.begin(), vocab.end(), r.distortion_type) != vocab.end(),
            ErrorKind::Validation, at + "unknown distortion '" + r.distortion_type + "'");
    db.records.push_back(std::move(r));
  }
  require(header_seen, ErrorKind::Parse, path.string() + ": missing header");
  return db;
}

void save_mos_manifest(const fs::path& path, const MosDatabase& db) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  require(out.good(), ErrorKind::Io, "cannot write " + path.string());
  out << "path,distortion,level,score,higher_is_better\n";
  for (const auto& r : db.records)
    out << quote_csv(r.image_path) << ',' << quote_csv(r.distortion_type) << ','
        << (r.level ? format_double(*r.level) : "") << ',' << format_double(r.score) << ','
        << (r.higher_is_better ? "true" : "false") << '\n';
  require(out.good(), ErrorKind::Io, "write failed: " + path.string());
}

}  // namespace qairn::dataio
