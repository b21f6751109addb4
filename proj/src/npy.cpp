#include "stemfactor/npy.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <regex>
#include <sstream>
#include <string>

#include "stemfactor/error.hpp"

namespace stemfactor::npy {
namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T byteswap_if_big(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    std::reverse(bytes, bytes + sizeof(T));
    std::memcpy(&value, bytes, sizeof(T));
  }
  return value;
}

std::string header_dict(Dtype dtype, std::span<const std::size_t> shape) {
  std::ostringstream os;
  os << "{'descr': '" << (dtype == Dtype::F32 ? "<f4" : "<f8") << "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << shape[i];
    if (shape.size() == 1 || i + 1 < shape.size()) os << ",";
    if (i + 1 < shape.size()) os << " ";
  }
  os << "), }";
  std::string dict = os.str();
  // magic(6) + version(2) + len(2) + dict + padding + '\n' is a multiple of 64
  const std::size_t unpadded = kMagicLen + 2 + 2 + dict.size() + 1;
  dict.append((64 - unpadded % 64) % 64, ' ');
  dict.push_back('\n');
  return dict;
}

void check_rank(std::span<const std::size_t> shape, std::size_t count) {
  if (shape.size() != 2 && shape.size() != 4)
    fail(ErrorCode::InvalidArgument, "interchange arrays must have rank 2 or 4, got " +
                                         std::to_string(shape.size()));
  const auto expected = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  if (expected != count)
    fail(ErrorCode::ShapeMismatch, "shape implies " + std::to_string(expected) + " values, got " +
                                       std::to_string(count));
}

template <typename T>
void write_impl(const std::filesystem::path& path, std::span<const std::size_t> shape,
                std::span<const T> data, Dtype dtype) {
  check_rank(shape, data.size());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  const std::string dict = header_dict(dtype, shape);
  out.write(kMagic, kMagicLen);
  const char version[2] = {1, 0};
  out.write(version, 2);
  const auto len = static_cast<std::uint16_t>(dict.size());
  const unsigned char len_bytes[2] = {static_cast<unsigned char>(len & 0xff),
                                      static_cast<unsigned char>(len >> 8)};
  out.write(reinterpret_cast<const char*>(len_bytes), 2);
  out.write(dict.data(), static_cast<std::streamsize>(dict.size()));
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
  } else {
    for (T v : data) {
      v = byteswap_if_big(v);
      out.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
  }
  if (!out) fail(ErrorCode::IoFailure, "write failed for " + path.string());
}

std::string dict_value(const std::string& dict, const std::string& key) {
  const std::regex re("'" + key + "'\\s*:\\s*('[^']*'|True|False|\\([^)]*\\))");
  std::smatch match;
  if (!std::regex_search(dict, match, re))
    fail(ErrorCode::MalformedHeader, "npy header lacks '" + key + "'");
  return match[1].str();
}

}  // namespace

std::size_t Array::size() const noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Array read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  char preamble[10];
  if (!in.read(preamble, 10) || std::memcmp(preamble, kMagic, kMagicLen) != 0)
    fail(ErrorCode::MalformedHeader, path.string() + " is not an npy file");
  std::size_t header_len = 0;
  const auto* raw = reinterpret_cast<const unsigned char*>(preamble);
  if (raw[6] == 1) {
    header_len = raw[8] | (raw[9] << 8);
  } else if (raw[6] == 2 || raw[6] == 3) {
    unsigned char extra[2];
    if (!in.read(reinterpret_cast<char*>(extra), 2)) fail(ErrorCode::MalformedHeader, "truncated npy header");
    header_len = raw[8] | (raw[9] << 8) | (extra[0] << 16) | (static_cast<std::size_t>(extra[1]) << 24);
  } else {
    fail(ErrorCode::MalformedHeader, "unsupported npy version " + std::to_string(raw[6]));
  }
  std::string dict(header_len, '\0');
  if (!in.read(dict.data(), static_cast<std::streamsize>(header_len)))
    fail(ErrorCode::MalformedHeader, "truncated npy header");

  Array array;
  const std::string descr = dict_value(dict, "descr");
  if (descr == "'<f4'") {
    array.dtype = Dtype::F32;
  } else if (descr == "'<f8'") {
    array.dtype = Dtype::F64;
  } else {
    fail(ErrorCode::MalformedHeader, "unsupported dtype " + descr + " (need <f4 or <f8)");
  }
  if (dict_value(dict, "fortran_order") != "False")
    fail(ErrorCode::MalformedHeader, "Fortran-order arrays are not supported");

  const std::string shape_text = dict_value(dict, "shape");
  const std::regex num_re("\\d+");
  for (auto it = std::sregex_iterator(shape_text.begin(), shape_text.end(), num_re);
       it != std::sregex_iterator(); ++it)
    array.shape.push_back(std::stoull(it->str()));
  if (array.shape.size() != 2 && array.shape.size() != 4)
    fail(ErrorCode::MalformedHeader, "npy rank must be 2 or 4, got " + std::to_string(array.shape.size()));

  const std::size_t count = array.size();
  const std::size_t elem = array.dtype == Dtype::F32 ? 4 : 8;
  const auto payload_start = in.tellg();
  in.seekg(0, std::ios::end);
  const auto payload_bytes = static_cast<std::size_t>(in.tellg() - payload_start);
  in.seekg(payload_start);
  if (payload_bytes != count * elem)
    fail(ErrorCode::ShapeMismatch, "npy payload holds " + std::to_string(payload_bytes / elem) +
                                       " values, header declares " + std::to_string(count));

  array.data.resize(count);
  if (array.dtype == Dtype::F32) {
    std::vector<float> buf(count);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * 4));
    for (std::size_t i = 0; i < count; ++i) array.data[i] = byteswap_if_big(buf[i]);
  } else {
    in.read(reinterpret_cast<char*>(array.data.data()), static_cast<std::streamsize>(count * 8));
    for (auto& v : array.data) v = byteswap_if_big(v);
  }
  if (!in) fail(ErrorCode::IoFailure, "read failed for " + path.string());
  return array;
}

void write(const std::filesystem::path& path, std::span<const std::size_t> shape,
           std::span<const float> data) {
  write_impl(path, shape, data, Dtype::F32);
}

void write(const std::filesystem::path& path, std::span<const std::size_t> shape,
           std::span<const double> data) {
  write_impl(path, shape, data, Dtype::F64);
}

void write_matrix(const std::filesystem::path& path, const Matrix& matrix) {
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> row_major = matrix;
  const std::size_t shape[2] = {static_cast<std::size_t>(matrix.rows()), static_cast<std::size_t>(matrix.cols())};
  write(path, shape, std::span<const double>(row_major.data(), static_cast<std::size_t>(row_major.size())));
}

Matrix read_matrix(const std::filesystem::path& path) {
  const Array array = read(path);
  if (array.shape.size() != 2)
    fail(ErrorCode::ShapeMismatch, path.string() + " is not a rank-2 array");
  const auto rows = static_cast<Eigen::Index>(array.shape[0]);
  const auto cols = static_cast<Eigen::Index>(array.shape[1]);
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      array.data.data(), rows, cols);
}

}  // namespace stemfactor::npy
