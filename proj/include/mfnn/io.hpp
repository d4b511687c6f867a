#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mfnn/measures.hpp"

namespace mfnn {

/// Shortest text that is exact at 17 significant digits ("%.17g").
std::string format_double(double v);

/// Comma separated rows with a header, LF line endings.
class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header);

    void add_row(std::vector<std::string> cells);
    std::string str() const;
    std::size_t rows() const noexcept { return rows_.size(); }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

void write_file(const std::string& path, const std::string& contents);
std::string read_file(const std::string& path);

/// {"lo", "hi", "K", "p": [...]}
nlohmann::json to_json(const BinDensity& density);
BinDensity bin_density_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BinGrid& grid);
BinGrid bin_grid_from_json(const nlohmann::json& j);

/// Samples as a single CSV column with header "x".
void write_samples_csv(const std::string& path, std::span<const double> xs);
std::vector<double> read_samples_csv(const std::string& path);
/// Samples as raw little-endian float64 values, no header.
void write_samples_binary(const std::string& path, std::span<const double> xs);
std::vector<double> read_samples_binary(const std::string& path);

} // namespace mfnn
