#include "stemfactor/csv.hpp"

#include <charconv>
#include <fstream>
#include <optional>
#include <sstream>

#include "stemfactor/error.hpp"

namespace stemfactor {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::optional<double> parse_double(const std::string& s) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  std::size_t used = 0;
  try {
    const double v = std::stod(t, &used);
    if (used != t.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::optional<int> parse_int(const std::string& s) {
  const std::string t = trim(s);
  int v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) return std::nullopt;
  return v;
}

}  // namespace

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

LossCurve parse_loss_curve(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  LossCurve curve;
  bool first = true;
  std::size_t line_no = 0;
  std::optional<bool> two_columns;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (first) {
      first = false;
      if (!parse_double(fields[0])) continue;  // header
    }
    const bool pair = fields.size() >= 2 && parse_double(fields[1]).has_value();
    if (!two_columns) two_columns = pair;
    if (*two_columns) {
      const auto k = parse_int(fields[0]);
      const auto loss = fields.size() >= 2 ? parse_double(fields[1]) : std::nullopt;
      if (!k || !loss) fail(ErrorCode::MalformedHeader, "loss curve line " + std::to_string(line_no) + " is not 'k,loss'");
      curve.k_values.push_back(*k);
      curve.losses.push_back(*loss);
    } else {
      const auto loss = parse_double(fields[0]);
      if (!loss) fail(ErrorCode::MalformedHeader, "loss curve line " + std::to_string(line_no) + " is not a number");
      curve.k_values.push_back(static_cast<int>(curve.losses.size()) + 1);
      curve.losses.push_back(*loss);
    }
  }
  return curve;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

LossCurve read_loss_curve(const std::filesystem::path& path) { return parse_loss_curve(read_text_file(path)); }

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out << content;
  out.flush();
  if (!out) fail(ErrorCode::IoFailure, "write to " + path.string() + " failed");
}

}  // namespace stemfactor
