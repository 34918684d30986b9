#pragma once

#include <initializer_list>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "curvprobe/common.hpp"

namespace curvprobe {

// One CSV field. Monostate renders as an empty field (missing value).
// Floats print with shortest round-trip precision, '.' decimal separator.
using CsvCell = std::variant<std::monostate, int64_t, double, float, bool, std::string>;

std::string csv_cell_to_string(const CsvCell& cell);

inline CsvCell csv_opt(const std::optional<double>& v) {
    return v ? CsvCell(*v) : CsvCell(std::monostate{});
}

// Buffers rows and writes the whole file at once: UTF-8, LF line endings,
// header first. Byte-identical output for identical rows.
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header);
    void row(std::initializer_list<CsvCell> cells);
    void row(const std::vector<CsvCell>& cells);
    size_t rows() const { return count_; }
    void save(const std::string& path) const;
    const std::string& text() const { return buffer_; }

private:
    size_t columns_;
    size_t count_ = 0;
    std::string buffer_;
};

}  // namespace curvprobe
