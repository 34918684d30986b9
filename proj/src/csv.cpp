#include "curvprobe/csv.hpp"

#include <charconv>
#include <fstream>

namespace curvprobe {

namespace {

template <typename T>
std::string number_to_string(T v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

bool needs_quoting(const std::string& s) {
    return s.find_first_of(",\"\n") != std::string::npos;
}

}  // namespace

std::string csv_cell_to_string(const CsvCell& cell) {
    return std::visit(
        [](const auto& v) -> std::string {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, std::monostate>) {
                return "";
            } else if constexpr (std::is_same_v<T, bool>) {
                return v ? "true" : "false";
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!needs_quoting(v)) return v;
                std::string out = "\"";
                for (char c : v) {
                    if (c == '"') out += '"';
                    out += c;
                }
                out += '"';
                return out;
            } else {
                return number_to_string(v);
            }
        },
        cell);
}

CsvWriter::CsvWriter(std::vector<std::string> header) : columns_(header.size()) {
    for (size_t i = 0; i < header.size(); ++i) {
        if (i) buffer_ += ',';
        buffer_ += header[i];
    }
    buffer_ += '\n';
}

void CsvWriter::row(const std::vector<CsvCell>& cells) {
    if (cells.size() != columns_)
        throw ValueError("csv: row has " + std::to_string(cells.size()) + " cells, header has " +
                         std::to_string(columns_));
    for (size_t i = 0; i < cells.size(); ++i) {
        if (i) buffer_ += ',';
        buffer_ += csv_cell_to_string(cells[i]);
    }
    buffer_ += '\n';
    count_++;
}

void CsvWriter::row(std::initializer_list<CsvCell> cells) {
    row(std::vector<CsvCell>(cells));
}

void CsvWriter::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("csv: cannot open for writing: " + path);
    out.write(buffer_.data(), std::streamsize(buffer_.size()));
    if (!out) throw Error("csv: write failed: " + path);
}

}  // namespace curvprobe
