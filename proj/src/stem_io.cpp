#include "stemfactor/stem_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "stemfactor/error.hpp"
#include "stemfactor/npy.hpp"

namespace stemfactor {
namespace {

constexpr const char* kContainerMagic = "stem4d";
constexpr int kContainerVersion = 1;

void validate_values(std::span<const float> data) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i]))
      fail(ErrorCode::NonFinite, "non-finite intensity at flat index " + std::to_string(i));
    if (data[i] < 0.0f)
      fail(ErrorCode::NegativeIntensity, "negative intensity " + std::to_string(data[i]) +
                                             " at flat index " + std::to_string(i));
  }
}

std::size_t header_dim(const nlohmann::json& header, const char* key) {
  const auto it = header.find(key);
  if (it == header.end() || !it->is_number_unsigned() || it->get<std::size_t>() == 0)
    fail(ErrorCode::MalformedHeader, std::string("header field '") + key + "' must be a positive integer");
  return it->get<std::size_t>();
}

ScanStack4D load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || in.eof())
    fail(ErrorCode::MalformedHeader, path.string() + ": missing header line");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::MalformedHeader, path.string() + ": " + e.what());
  }
  if (!header.is_object() || header.value("magic", "") != kContainerMagic)
    fail(ErrorCode::MalformedHeader, path.string() + ": bad magic");
  if (header.value("version", 0) != kContainerVersion)
    fail(ErrorCode::MalformedHeader, path.string() + ": unsupported version");
  if (header.value("dtype", "") != "f32")
    fail(ErrorCode::MalformedHeader, path.string() + ": dtype must be f32");
  if (header.value("order", "") != "row-major")
    fail(ErrorCode::MalformedHeader, path.string() + ": order must be row-major");

  const StackShape shape{header_dim(header, "m"), header_dim(header, "n"), header_dim(header, "px"),
                         header_dim(header, "py")};

  const auto payload_start = in.tellg();
  in.seekg(0, std::ios::end);
  const auto payload_bytes = static_cast<std::size_t>(in.tellg() - payload_start);
  in.seekg(payload_start);
  if (payload_bytes != shape.total() * sizeof(float))
    fail(ErrorCode::ShapeMismatch, path.string() + ": header declares " + std::to_string(shape.total()) +
                                       " values, payload holds " + std::to_string(payload_bytes / sizeof(float)) +
                                       (payload_bytes % sizeof(float) ? " (plus a partial value)" : ""));

  std::vector<float> data(shape.total());
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(payload_bytes));
  if (!in) fail(ErrorCode::IoFailure, "read failed for " + path.string());
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& v : data) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      bits = (bits >> 24) | ((bits >> 8) & 0xff00u) | ((bits << 8) & 0xff0000u) | (bits << 24);
      v = std::bit_cast<float>(bits);
    }
  }
  return ScanStack4D(shape, std::move(data));
}

void save_container(const ScanStack4D& stack, const std::filesystem::path& path) {
  const auto& s = stack.shape();
  nlohmann::ordered_json header;
  header["magic"] = kContainerMagic;
  header["version"] = kContainerVersion;
  header["m"] = s.m;
  header["n"] = s.n;
  header["px"] = s.px;
  header["py"] = s.py;
  header["dtype"] = "f32";
  header["order"] = "row-major";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  const std::string line = header.dump() + "\n";
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  const auto data = stack.data();
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
  } else {
    for (float v : data) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      bits = (bits >> 24) | ((bits >> 8) & 0xff00u) | ((bits << 8) & 0xff0000u) | (bits << 24);
      out.write(reinterpret_cast<const char*>(&bits), 4);
    }
  }
  if (!out) fail(ErrorCode::IoFailure, "write failed for " + path.string());
}

ScanStack4D load_interchange(const std::filesystem::path& path) {
  const npy::Array array = npy::read(path);
  if (array.shape.size() != 4)
    fail(ErrorCode::ShapeMismatch, path.string() + ": a stack must be a rank-4 array");
  for (auto d : array.shape)
    if (d == 0) fail(ErrorCode::MalformedHeader, path.string() + ": zero-length axis");
  const StackShape shape{array.shape[0], array.shape[1], array.shape[2], array.shape[3]};
  std::vector<float> data(array.data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    // f64 inputs are narrowed to the library's storage precision; sign and
    // finiteness survive the narrowing so validation still sees bad values.
    data[i] = static_cast<float>(array.data[i]);
  }
  return ScanStack4D(shape, std::move(data));
}

}  // namespace

std::string to_string(const StackShape& s) {
  return "(" + std::to_string(s.m) + ", " + std::to_string(s.n) + ", " + std::to_string(s.px) + ", " +
         std::to_string(s.py) + ")";
}

ScanStack4D::ScanStack4D(StackShape shape, std::vector<float> data, std::string provenance)
    : shape_(shape), data_(std::move(data)), provenance_(std::move(provenance)) {
  if (shape_.m == 0 || shape_.n == 0 || shape_.px == 0 || shape_.py == 0)
    fail(ErrorCode::InvalidArgument, "stack dimensions must be >= 1, got " + to_string(shape_));
  if (data_.size() != shape_.total())
    fail(ErrorCode::ShapeMismatch, "shape " + to_string(shape_) + " needs " + std::to_string(shape_.total()) +
                                       " values, got " + std::to_string(data_.size()));
  validate_values(data_);
}

std::span<const float> ScanStack4D::pattern(std::size_t scan_index) const {
  if (scan_index >= shape_.scan_count())
    fail(ErrorCode::InvalidArgument, "scan index " + std::to_string(scan_index) + " out of range");
  return std::span<const float>(data_).subspan(scan_index * shape_.pattern_size(), shape_.pattern_size());
}

Image ScanStack4D::pattern_image(std::size_t scan_index) const {
  const auto p = pattern(scan_index);
  Image img(static_cast<Eigen::Index>(shape_.px), static_cast<Eigen::Index>(shape_.py));
  for (std::size_t i = 0; i < p.size(); ++i) img.data()[i] = p[i];
  return img;
}

ScanStack4D ScanStack4D::relabeled(std::string provenance) const& {
  return ScanStack4D(shape_, data_, std::move(provenance));
}

DataMatrix::DataMatrix(Matrix values) : values_(std::move(values)) {
  if (values_.size() == 0) fail(ErrorCode::EmptyMatrix, "data matrix is empty");
  for (Eigen::Index i = 0; i < values_.size(); ++i) {
    const double v = values_.data()[i];
    if (!std::isfinite(v)) fail(ErrorCode::NonFinite, "non-finite matrix entry at " + std::to_string(i));
    if (v < 0.0) fail(ErrorCode::NegativeIntensity, "negative matrix entry at " + std::to_string(i));
  }
}

StackFormat format_for_path(const std::filesystem::path& path) {
  return path.extension() == ".npy" ? StackFormat::Interchange : StackFormat::Container;
}

ScanStack4D load_stack(const std::filesystem::path& path, StackFormat format) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::IoFailure, path.string() + " does not exist");
  return format == StackFormat::Container ? load_container(path) : load_interchange(path);
}

void save_stack(const ScanStack4D& stack, const std::filesystem::path& path, StackFormat format) {
  if (format == StackFormat::Container) {
    save_container(stack, path);
  } else {
    const auto& s = stack.shape();
    const std::size_t shape[4] = {s.m, s.n, s.px, s.py};
    npy::write(path, shape, stack.data());
  }
}

DataMatrix reshape_4d_to_2d(const ScanStack4D& stack) {
  const auto& s = stack.shape();
  Matrix v(static_cast<Eigen::Index>(s.pattern_size()), static_cast<Eigen::Index>(s.scan_count()));
  // Eigen is column-major, so column j is contiguous and equals pattern j verbatim.
  const auto data = stack.data();
  for (std::size_t i = 0; i < data.size(); ++i) v.data()[i] = data[i];
  return DataMatrix(std::move(v));
}

ScanStack4D reshape_2d_to_4d(const DataMatrix& matrix, std::size_t m, std::size_t n, std::size_t px,
                             std::size_t py) {
  const StackShape shape{m, n, px, py};
  if (static_cast<std::size_t>(matrix.rows()) != shape.pattern_size() ||
      static_cast<std::size_t>(matrix.cols()) != shape.scan_count())
    fail(ErrorCode::ShapeMismatch, "matrix (" + std::to_string(matrix.rows()) + ", " +
                                       std::to_string(matrix.cols()) + ") does not fit stack " + to_string(shape));
  const Matrix& v = matrix.values();
  std::vector<float> data(shape.total());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(v.data()[i]);
  return ScanStack4D(shape, std::move(data));
}

Image column_image(const Matrix& matrix, Eigen::Index col, std::size_t px, std::size_t py) {
  if (static_cast<std::size_t>(matrix.rows()) != px * py)
    fail(ErrorCode::ShapeMismatch, "column length " + std::to_string(matrix.rows()) + " != px*py");
  Image img(static_cast<Eigen::Index>(px), static_cast<Eigen::Index>(py));
  for (Eigen::Index i = 0; i < matrix.rows(); ++i) img.data()[i] = matrix(i, col);
  return img;
}

}  // namespace stemfactor
