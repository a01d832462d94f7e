#pragma once

// Report artifacts: per-run CSV and the mean±std text table.

#include <quantprobe/errors.hpp>
#include <quantprobe/metrics.hpp>
#include <quantprobe/synthgen.hpp>

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace quantprobe {

/// One probe run as it appears in a report.
struct RunRow {
    int run_index = 0;
    double value = 0.0;
    bool diverged = false;
    int best_epoch = 0;
    std::uint64_t seed = 0;
};

/// One (task, range, provider) cell of the result tables.
struct ReportCell {
    TaskKind task = TaskKind::Percent;
    ValueRange range{0.0, 0.0};
    std::string provider;
    MetricKind metric = MetricKind::RMSE;
    std::uint64_t base_seed = 0;
    std::vector<RunRow> runs;

    std::vector<double> values() const {
        std::vector<double> v;
        for (const auto& r : runs) v.push_back(r.value);
        return v;
    }
    Aggregate summary() const { return summarize(values()); }
    int diverged_count() const {
        return int(std::count_if(runs.begin(), runs.end(), [](const RunRow& r) { return r.diverged; }));
    }
};

enum class ReportFormat { Csv, Text };

inline constexpr std::string_view kCsvHeader =
    "task,range_lo,range_hi,provider,run_index,metric_kind,value,diverged,best_epoch,seed";

namespace detail {

inline std::string exact(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Display width of a UTF-8 string (code points).
inline std::size_t display_width(std::string_view s) {
    return std::size_t(std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

inline std::string pad(std::string_view s, std::size_t width) {
    std::string out(s);
    const auto w = display_width(s);
    if (w < width) out.append(width - w, ' ');
    return out;
}

inline std::vector<std::string> split_csv(std::string_view line) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        const auto comma = line.find(',', pos);
        out.emplace_back(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    return out;
}

inline std::string_view task_heading(TaskKind t) {
    switch (t) {
    case TaskKind::Percent: return "Percents";
    case TaskKind::BasisPoint: return "Basis Points";
    case TaskKind::Order: return "Orders";
    case TaskKind::Range: return "Ranges";
    case TaskKind::Addition: return "Addition";
    case TaskKind::UnitId: return "Unit ID";
    }
    return "?";
}

inline std::string_view metric_heading(MetricKind m) {
    switch (m) {
    case MetricKind::RMSE: return "RMSE";
    case MetricKind::LogRMSE: return "RMSE Log scale";
    case MetricKind::Accuracy: return "Accuracy";
    }
    return "?";
}

}  // namespace detail

inline std::string render_csv(const std::vector<ReportCell>& cells) {
    std::ostringstream out;
    out << kCsvHeader << '\n';
    for (const auto& c : cells) {
        if (c.provider.find_first_of(",\n\"") != std::string::npos)
            throw ConfigError("provider label '" + c.provider + "' cannot contain commas, quotes or newlines");
        const std::string prefix = std::string(task_name(c.task)) + "," + format_tenths(c.range.lo_tenths()) + "," +
                                   format_tenths(c.range.hi_tenths()) + "," + c.provider + ",";
        const std::string metric(metric_name(c.metric));
        for (const auto& r : c.runs)
            out << prefix << r.run_index << ',' << metric << ',' << detail::exact(r.value) << ','
                << (r.diverged ? 1 : 0) << ',' << r.best_epoch << ',' << r.seed << '\n';
        const Aggregate a = c.summary();
        out << prefix << "mean," << metric << ',' << detail::exact(a.mean) << ',' << c.diverged_count() << ",,"
            << c.base_seed << '\n';
        if (a.std)
            out << prefix << "std," << metric << ',' << detail::exact(*a.std) << ',' << c.diverged_count() << ",,"
                << c.base_seed << '\n';
    }
    return out.str();
}

/// Parses CSV written by render_csv. Aggregate rows are recomputed, not read.
inline std::vector<ReportCell> parse_csv(std::string_view text) {
    std::vector<ReportCell> cells;
    std::size_t pos = 0, line_no = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        const auto line = text.substr(pos, nl - pos);
        const auto offset = pos;
        pos = nl + 1;
        ++line_no;
        if (line.empty()) continue;
        if (line_no == 1) {
            if (line != kCsvHeader) throw FormatError("report csv: unexpected header", 0);
            continue;
        }
        const auto f = detail::split_csv(line);
        if (f.size() != 10) throw FormatError("report csv line " + std::to_string(line_no) + ": expected 10 fields", offset);
        try {
            const TaskKind task = parse_task(f[0]);
            const ValueRange range(std::stod(f[1]), std::stod(f[2]));
            const MetricKind metric = parse_metric(f[5]);
            auto it = std::find_if(cells.begin(), cells.end(), [&](const ReportCell& c) {
                return c.task == task && c.range == range && c.provider == f[3];
            });
            if (it == cells.end()) {
                cells.push_back({task, range, f[3], metric, 0, {}});
                it = cells.end() - 1;
            }
            if (it->metric != metric)
                throw FormatError("report csv line " + std::to_string(line_no) + ": mixed metric kinds in one cell", offset);
            if (f[4] == "mean" || f[4] == "std") {
                it->base_seed = std::stoull(f[9]);
                continue;
            }
            it->runs.push_back({std::stoi(f[4]), std::stod(f[6]), f[7] == "1", std::stoi(f[8]), std::stoull(f[9])});
        } catch (const std::invalid_argument&) {
            throw FormatError("report csv line " + std::to_string(line_no) + ": bad number", offset);
        } catch (const std::out_of_range&) {
            throw FormatError("report csv line " + std::to_string(line_no) + ": number out of range", offset);
        } catch (const ConfigError& e) {
            throw FormatError("report csv line " + std::to_string(line_no) + ": " + e.what(), offset);
        }
    }
    for (const auto& c : cells)
        if (c.runs.empty()) throw FormatError("report csv: cell without run rows for provider " + c.provider);
    return cells;
}

/// Providers as rows, (task, range) as columns, cells "mean±std" at 3 decimals.
inline std::string render_text(const std::vector<ReportCell>& cells) {
    if (cells.empty()) throw ConfigError("render_report: no reports");
    struct Column {
        TaskKind task;
        ValueRange range;
        MetricKind metric;
    };
    std::vector<Column> cols;
    std::vector<std::string> providers;
    for (const auto& c : cells) {
        auto it = std::find_if(cols.begin(), cols.end(),
                               [&](const Column& col) { return col.task == c.task && col.range == c.range; });
        if (it == cols.end()) cols.push_back({c.task, c.range, c.metric});
        else if (it->metric != c.metric)
            throw ConfigError("render_report: mixed metric kinds in column " + std::string(task_name(c.task)));
        if (std::find(providers.begin(), providers.end(), c.provider) == providers.end())
            providers.push_back(c.provider);
    }
    std::stable_sort(cols.begin(), cols.end(), [](const Column& a, const Column& b) {
        if (a.task != b.task) return a.task < b.task;
        if (a.range.lo_tenths() != b.range.lo_tenths()) return a.range.lo_tenths() < b.range.lo_tenths();
        return a.range.hi_tenths() < b.range.hi_tenths();
    });

    std::vector<std::vector<std::string>> grid;  // rows: heading, range, providers...
    grid.push_back({""});
    grid.push_back({"Provider"});
    for (const auto& col : cols) {
        grid[0].push_back(std::string(detail::task_heading(col.task)) + " (" +
                          std::string(detail::metric_heading(col.metric)) + ")");
        grid[1].push_back("[" + format_tenths(col.range.lo_tenths()) + ", " + format_tenths(col.range.hi_tenths()) + "]");
    }
    for (const auto& p : providers) {
        std::vector<std::string> row{p};
        for (const auto& col : cols) {
            auto it = std::find_if(cells.begin(), cells.end(), [&](const ReportCell& c) {
                return c.provider == p && c.task == col.task && c.range == col.range;
            });
            row.push_back(it == cells.end() ? "-" : format_cell(it->summary()));
        }
        grid.push_back(std::move(row));
    }
    std::vector<std::size_t> width(cols.size() + 1, 0);
    for (const auto& row : grid)
        for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], detail::display_width(row[i]));
    // Repeated task headings print once, over the first of their columns.
    for (std::size_t i = cols.size(); i >= 2; --i)
        if (cols[i - 1].task == cols[i - 2].task) grid[0][i] = "";
    std::ostringstream out;
    for (const auto& row : grid) {
        std::string line;
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i > 0) line += " | ";
            line += detail::pad(row[i], width[i]);
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out << line << '\n';
    }
    return out.str();
}

inline std::string render_report(const std::vector<ReportCell>& cells, ReportFormat format) {
    return format == ReportFormat::Csv ? render_csv(cells) : render_text(cells);
}

}  // namespace quantprobe
