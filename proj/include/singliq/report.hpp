#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "singliq/errors.hpp"
#include "singliq/grids.hpp"

namespace singliq {

/// CSV artifact writer: fixed 17-significant-digit decimal floats so repeated
/// seeded runs are byte-identical.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::string& header) : os_(path) {
        if (!os_) throw numerical_error("CsvWriter: cannot open " + path);
        os_ << header << '\n';
    }

    void row(const std::vector<double>& values) {
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (i) os_ << ',';
            os_ << detail::fmt17(values[i]);
        }
        os_ << '\n';
    }

    void row(const std::string& tag, const std::vector<double>& values) {
        os_ << tag;
        for (double v : values) os_ << ',' << detail::fmt17(v);
        os_ << '\n';
    }

private:
    std::ofstream os_;
};

/// Named pass/fail checks collected by a subcommand run; rendered both to
/// stdout and to summary.csv in the artifact directory.
class CheckSet {
public:
    struct Entry {
        std::string name;
        double value;
        double threshold;
        bool pass;
    };

    /// value must not exceed threshold.
    bool le(const std::string& name, double value, double threshold) {
        const bool ok = value <= threshold;
        entries_.push_back({name, value, threshold, ok});
        return ok;
    }

    /// value must be at least threshold.
    bool ge(const std::string& name, double value, double threshold) {
        const bool ok = value >= threshold;
        entries_.push_back({name, value, threshold, ok});
        return ok;
    }

    bool flag(const std::string& name, bool ok) {
        entries_.push_back({name, ok ? 1.0 : 0.0, 1.0, ok});
        return ok;
    }

    bool all_pass() const {
        for (const auto& e : entries_)
            if (!e.pass) return false;
        return true;
    }

    void print(std::ostream& os) const {
        for (const auto& e : entries_)
            os << (e.pass ? "[PASS] " : "[FAIL] ") << e.name << "  value=" << detail::fmt17(e.value)
               << " threshold=" << detail::fmt17(e.threshold) << '\n';
    }

    void write_csv(const std::string& path) const {
        CsvWriter w(path, "check,value,threshold,pass");
        for (const auto& e : entries_)
            w.row(e.name, {e.value, e.threshold, e.pass ? 1.0 : 0.0});
    }

    const std::vector<Entry>& entries() const { return entries_; }

private:
    std::vector<Entry> entries_;
};

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw numerical_error("cannot create output directory " + dir);
}

} // namespace singliq
