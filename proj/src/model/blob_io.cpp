#include <bit>
#include <cstring>
#include <fstream>

#include "qairn/error.hpp"
#include "qairn/model.hpp"

namespace qairn {

namespace {

constexpr std::uint64_t kMaxRank = 8;

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
      std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&v, bytes, sizeof(T));
    return v;
  }
}

template <typename T>
void put(std::ostream& os, T v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool get(std::istream& is, T& v) {
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) return false;
  v = to_little(v);
  return true;
}

std::filesystem::path blob_path(const std::filesystem::path& dir,
                                const std::string& name) {
  return dir / (name + ".bin");
}

}  // namespace

void write_blob(const std::filesystem::path& path, const Parameter& param) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorKind::Io, "cannot write " + path.string());
  put<std::uint64_t>(os, param.dims.size());
  for (auto d : param.dims) put<std::uint64_t>(os, d);
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(param.values.data()),
             static_cast<std::streamsize>(param.values.size() * sizeof(float)));
  } else {
    for (float v : param.values) put<float>(os, v);
  }
  require(static_cast<bool>(os), ErrorKind::Io, "write failed for " + path.string());
}

Parameter read_blob(const std::filesystem::path& path, const std::string& name) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::Corruption,
          "missing parameter blob " + path.string());
  std::error_code ec;
  const auto file_size = std::filesystem::file_size(path, ec);
  require(!ec, ErrorKind::Io, "cannot stat " + path.string());

  Parameter p;
  p.name = name;
  std::uint64_t rank = 0;
  require(get(is, rank) && rank <= kMaxRank, ErrorKind::Corruption,
          "corrupt header in " + path.string());
  std::uint64_t count = 1;
  for (std::uint64_t i = 0; i < rank; ++i) {
    std::uint64_t d = 0;
    require(get(is, d), ErrorKind::Corruption, "truncated header in " + path.string());
    p.dims.push_back(d);
    count *= d;
  }
  const std::uint64_t expected = (1 + rank) * 8 + count * sizeof(float);
  require(file_size == expected, ErrorKind::Corruption,
          "blob " + path.string() + " has " + std::to_string(file_size) +
              " bytes, header implies " + std::to_string(expected));
  p.values.resize(count);
  is.read(reinterpret_cast<char*>(p.values.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  require(static_cast<bool>(is), ErrorKind::Corruption, "truncated data in " + path.string());
  if constexpr (std::endian::native != std::endian::little) {
    for (float& v : p.values) v = to_little(v);
  }
  return p;
}

void save_parameters(const std::filesystem::path& dir, const ParameterSet& params) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  for (const auto& p : params) write_blob(blob_path(dir, p.name), p);
}

ParameterSet load_parameters(const std::filesystem::path& dir,
                             const ParameterSet& layout_like) {
  ParameterSet out;
  for (const auto& expected : layout_like) {
    Parameter blob = read_blob(blob_path(dir, expected.name), expected.name);
    if (blob.dims != expected.dims) {
      auto dims_str = [](const std::vector<std::uint64_t>& dims) {
        std::string s = "[";
        for (std::size_t i = 0; i < dims.size(); ++i)
          s += (i ? "," : "") + std::to_string(dims[i]);
        return s + "]";
      };
      fail(ErrorKind::ShapeMismatch, "parameter " + expected.name + " has shape " +
                                         dims_str(blob.dims) + ", expected " +
                                         dims_str(expected.dims));
    }
    const std::size_t idx = out.add(expected.name, expected.dims);
    out[idx].values = std::move(blob.values);
  }
  return out;
}

std::uint64_t parameter_digest(const ParameterSet& params) {
  std::uint64_t hash = 1469598103934665603ULL;
  auto mix = [&](const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      hash ^= bytes[i];
      hash *= 1099511628211ULL;
    }
  };
  for (const auto& p : params) {
    mix(p.name.data(), p.name.size());
    for (auto d : p.dims) {
      const auto le = to_little(d);
      mix(&le, sizeof(le));
    }
    for (float v : p.values) {
      const auto le = to_little(v);
      mix(&le, sizeof(le));
    }
  }
  return hash;
}

}  // namespace qairn
