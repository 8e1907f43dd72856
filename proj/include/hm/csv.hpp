#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hm/errors.hpp"

namespace hm {

// Long-format CSV writer. All tabular outputs go through this so the
// quoting/precision rules stay in one place.
class CsvWriter {
public:
    explicit CsvWriter(const std::string& path) : out_(path) {
        if (!out_) throw DataError("cannot open for writing: " + path);
    }

    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << escape(cells[i]);
        }
        out_ << '\n';
    }

    static std::string num(double v, int precision = 12) {
        std::ostringstream ss;
        ss.precision(precision);
        ss << v;
        return ss.str();
    }

    static std::string escape(const std::string& s) {
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string quoted = "\"";
        for (char c : s) {
            if (c == '"') quoted += "\"\"";
            else quoted += c;
        }
        quoted += '"';
        return quoted;
    }

private:
    std::ofstream out_;
};

} // namespace hm
