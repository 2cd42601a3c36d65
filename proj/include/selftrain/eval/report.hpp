#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "selftrain/data/dataset.hpp"
#include "selftrain/errors.hpp"
#include "selftrain/eval/suite.hpp"
#include "selftrain/numerics/checkpoint.hpp"

namespace selftrain::eval {

inline constexpr const char* kReportCsvHeader = "model,split,macro_f1,ci_lower,ci_upper,n";

inline std::string format_fixed(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

inline std::vector<MetricReport> ordered_reports(std::vector<MetricReport> reports) {
    std::stable_sort(reports.begin(), reports.end(),
                     [](const MetricReport& a, const MetricReport& b) { return model_rank(a.model) < model_rank(b.model); });
    for (auto& r : reports) {
        std::stable_sort(r.splits.begin(), r.splits.end(),
                         [](const SplitMetrics& a, const SplitMetrics& b) { return a.split < b.split; });
    }
    return reports;
}

inline std::string report_csv(const std::vector<MetricReport>& reports) {
    std::ostringstream out;
    out << kReportCsvHeader << "\n";
    for (const auto& r : ordered_reports(reports)) {
        for (const auto& s : r.splits) {
            out << r.model << "," << data::to_string(s.split) << "," << format_fixed(s.macro_f1, 6) << ","
                << format_fixed(s.ci_lower, 6) << "," << format_fixed(s.ci_upper, 6) << "," << s.n << "\n";
        }
    }
    return out.str();
}

namespace detail {
inline std::string pad(const std::string& s, std::size_t width) {
    return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}
}  // namespace detail

// Models as rows, one "F1 | Bounds" column group per split.
inline std::string report_table(const std::vector<MetricReport>& reports) {
    constexpr std::size_t kModelWidth = 10, kF1Width = 8, kBoundsWidth = 16;
    const auto ordered = ordered_reports(reports);
    std::vector<data::SplitTag> splits;
    for (const auto& r : ordered)
        for (const auto& s : r.splits)
            if (std::find(splits.begin(), splits.end(), s.split) == splits.end()) splits.push_back(s.split);
    std::sort(splits.begin(), splits.end());

    std::ostringstream out;
    out << detail::pad("", kModelWidth);
    for (auto tag : splits) out << " | " << detail::pad(data::to_string(tag), kF1Width + kBoundsWidth);
    out << "\n" << detail::pad("Model", kModelWidth);
    for (std::size_t i = 0; i < splits.size(); ++i) out << " | " << detail::pad("F1", kF1Width) << detail::pad("Bounds", kBoundsWidth);
    out << "\n" << std::string(kModelWidth, '-');
    for (std::size_t i = 0; i < splits.size(); ++i) out << "-+-" << std::string(kF1Width + kBoundsWidth, '-');
    out << "\n";
    for (const auto& r : ordered) {
        out << detail::pad(r.model, kModelWidth);
        for (auto tag : splits) {
            auto it = std::find_if(r.splits.begin(), r.splits.end(), [&](const SplitMetrics& s) { return s.split == tag; });
            if (it == r.splits.end()) {
                out << " | " << detail::pad("-", kF1Width) << detail::pad("-", kBoundsWidth);
            } else {
                out << " | " << detail::pad(format_fixed(it->macro_f1), kF1Width)
                    << detail::pad(format_fixed(it->ci_lower) + ", " + format_fixed(it->ci_upper), kBoundsWidth);
            }
        }
        out << "\n";
    }
    return out.str();
}

struct ReportFiles {
    std::filesystem::path csv;
    std::filesystem::path table;
};

inline ReportFiles emit_report(const std::vector<MetricReport>& reports, const std::filesystem::path& dir) {
    if (reports.empty()) throw ContractError("emit_report needs at least one report");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());
    ReportFiles files{dir / "report.csv", dir / "report.txt"};
    numerics::write_file_atomic(files.csv, report_csv(reports));
    numerics::write_file_atomic(files.table, report_table(reports));
    return files;
}

// Reads report.csv back; per-class scores are not stored there.
inline std::vector<MetricReport> read_report_csv(const std::filesystem::path& path) {
    std::istringstream in(numerics::read_file(path));
    std::string line;
    if (!std::getline(in, line) || line != kReportCsvHeader) throw FormatError(path.string() + " is not a report CSV");
    std::vector<MetricReport> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::istringstream fields(line);
        std::string field;
        while (std::getline(fields, field, ',')) f.push_back(field);
        if (f.size() != 6) throw FormatError(path.string() + ": malformed line " + std::to_string(line_no));
        SplitMetrics s;
        try {
            s.split = data::parse_split(f[1]);
            s.macro_f1 = std::stod(f[2]);
            s.ci_lower = std::stod(f[3]);
            s.ci_upper = std::stod(f[4]);
            s.n = std::stoull(f[5]);
        } catch (const std::logic_error&) {
            throw FormatError(path.string() + ": malformed line " + std::to_string(line_no));
        } catch (const DataError&) {
            throw FormatError(path.string() + ": unknown split on line " + std::to_string(line_no));
        }
        const auto model = canonical_model_tag(f[0]);
        auto it = std::find_if(out.begin(), out.end(), [&](const MetricReport& r) { return r.model == model; });
        if (it == out.end()) {
            out.push_back({model, {}});
            it = out.end() - 1;
        }
        it->splits.push_back(std::move(s));
    }
    return out;
}

}  // namespace selftrain::eval
