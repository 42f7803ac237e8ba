#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fracsde {

/// RFC-4180 CSV assembly. Doubles are rendered with std::to_chars (shortest
/// round-trip, '.' decimal separator, locale independent), which keeps output
/// byte-identical across runs and thread counts.
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) : n_cols_(header.size()) {
        if (header.empty()) throw std::invalid_argument("CsvWriter: header is mandatory");
        append_row_of_strings(header);
    }

    void append(const std::vector<double>& row) {
        if (row.size() != n_cols_) throw std::invalid_argument("CsvWriter: column count mismatch");
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) body_ += ',';
            body_ += format(row[i]);
        }
        body_ += "\r\n";
    }

    void append_mixed(const std::vector<std::string>& row) {
        if (row.size() != n_cols_) throw std::invalid_argument("CsvWriter: column count mismatch");
        append_row_of_strings(row);
    }

    static std::string format(double v) {
        char buf[64];
        const auto res = std::to_chars(buf, buf + sizeof(buf), v);
        return std::string(buf, res.ptr);
    }

    static std::string format(std::uint64_t v) {
        char buf[32];
        const auto res = std::to_chars(buf, buf + sizeof(buf), v);
        return std::string(buf, res.ptr);
    }

    const std::string& str() const { return body_; }

    void write(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("CsvWriter: cannot open " + path);
        out << body_;
    }

private:
    static std::string quote_if_needed(const std::string& field) {
        if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
        std::string quoted = "\"";
        for (char c : field) {
            if (c == '"') quoted += '"';
            quoted += c;
        }
        quoted += '"';
        return quoted;
    }

    void append_row_of_strings(const std::vector<std::string>& row) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) body_ += ',';
            body_ += quote_if_needed(row[i]);
        }
        body_ += "\r\n";
    }

    std::size_t n_cols_;
    std::string body_;
};

}  // namespace fracsde
