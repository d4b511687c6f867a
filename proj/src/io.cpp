#include "mfnn/io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mfnn/error.hpp"

namespace mfnn {

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

void CsvTable::add_row(std::vector<std::string> cells) {
    if (cells.size() != header_.size()) throw Error(ErrorKind::dimension_mismatch, "CSV row has the wrong width");
    rows_.push_back(std::move(cells));
}

std::string CsvTable::str() const {
    std::string out;
    auto line = [&out](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out += ',';
            out += cells[i];
        }
        out += '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return out;
}

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error(ErrorKind::io, "write failed for " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

nlohmann::json to_json(const BinGrid& grid) {
    return {{"lo", grid.lo()}, {"hi", grid.hi()}, {"K", grid.size()}};
}

BinGrid bin_grid_from_json(const nlohmann::json& j) {
    try {
        return BinGrid(j.at("lo").get<double>(), j.at("hi").get<double>(), j.at("K").get<std::size_t>());
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::config_invalid, std::string("grid: ") + e.what());
    }
}

nlohmann::json to_json(const BinDensity& density) {
    nlohmann::json j = to_json(density.grid());
    j["p"] = std::vector<double>(density.levels().begin(), density.levels().end());
    return j;
}

BinDensity bin_density_from_json(const nlohmann::json& j) {
    BinGrid grid = bin_grid_from_json(j);
    try {
        return BinDensity(grid, j.at("p").get<std::vector<double>>(), 1e-9);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::config_invalid, std::string("density: ") + e.what());
    }
}

void write_samples_csv(const std::string& path, std::span<const double> xs) {
    std::string out = "x\n";
    for (const double x : xs) {
        out += format_double(x);
        out += '\n';
    }
    write_file(path, out);
}

std::vector<double> read_samples_csv(const std::string& path) {
    std::istringstream in(read_file(path));
    std::string line;
    std::vector<double> xs;
    if (!std::getline(in, line) || line != "x") throw Error(ErrorKind::io, path + ": expected header 'x'");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            std::size_t used = 0;
            xs.push_back(std::stod(line, &used));
            if (used != line.size()) throw std::invalid_argument(line);
        } catch (const std::exception&) {
            throw Error(ErrorKind::io, path + ": bad value '" + line + "'");
        }
    }
    return xs;
}

void write_samples_binary(const std::string& path, std::span<const double> xs) {
    std::string out(xs.size() * 8, '\0');
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const auto bits = std::bit_cast<std::uint64_t>(xs[i]);
        for (int b = 0; b < 8; ++b) out[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
    write_file(path, out);
}

std::vector<double> read_samples_binary(const std::string& path) {
    const std::string in = read_file(path);
    if (in.size() % 8 != 0) throw Error(ErrorKind::io, path + ": size is not a multiple of 8 bytes");
    std::vector<double> xs(in.size() / 8);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[i * 8 + b])) << (8 * b);
        xs[i] = std::bit_cast<double>(bits);
    }
    return xs;
}

} // namespace mfnn
