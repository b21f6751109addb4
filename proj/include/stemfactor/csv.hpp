#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace stemfactor {

struct LossCurve {
  std::vector<int> k_values;
  std::vector<double> losses;
};

/// Accepts the sweep output (k,k_component_loss,...) or a bare column of
/// losses, in which case k counts up from 1. A non-numeric first line is
/// treated as a header. Throws IoFailure or MalformedHeader.
LossCurve read_loss_curve(const std::filesystem::path& path);
LossCurve parse_loss_curve(const std::string& text);

std::vector<std::string> split_csv_line(const std::string& line);

std::string read_text_file(const std::filesystem::path& path);
/// Throws IoFailure.
void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace stemfactor
