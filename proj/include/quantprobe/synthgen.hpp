#pragma once

// Seeded generators for the six quantitative probing tasks. All numbers are
// carried as integer tenths so that rendering and targets are exact.

#include <quantprobe/errors.hpp>
#include <quantprobe/rng.hpp>
#include <quantprobe/sha256.hpp>

#include <algorithm>
#include <cctype>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace quantprobe {

enum class TaskKind { Percent, BasisPoint, Order, Range, Addition, UnitId };

inline constexpr std::array<TaskKind, 6> kAllTasks = {
    TaskKind::Percent, TaskKind::BasisPoint, TaskKind::Order,
    TaskKind::Range,   TaskKind::Addition,   TaskKind::UnitId};

inline std::string_view task_name(TaskKind task) {
    switch (task) {
    case TaskKind::Percent: return "percent";
    case TaskKind::BasisPoint: return "basispoint";
    case TaskKind::Order: return "order";
    case TaskKind::Range: return "range";
    case TaskKind::Addition: return "addition";
    case TaskKind::UnitId: return "unitid";
    }
    return "?";
}

inline TaskKind parse_task(std::string_view name) {
    std::string key;
    for (char c : name) {
        if (c == '_' || c == '-') continue;
        key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    if (key == "percent" || key == "percents") return TaskKind::Percent;
    if (key == "basispoint" || key == "basispoints") return TaskKind::BasisPoint;
    if (key == "order" || key == "orders") return TaskKind::Order;
    if (key == "range" || key == "ranges") return TaskKind::Range;
    if (key == "addition") return TaskKind::Addition;
    if (key == "unitid" || key == "unit") return TaskKind::UnitId;
    throw ConfigError("unknown task '" + std::string(name) + "'");
}

inline bool is_classification(TaskKind task) { return task == TaskKind::UnitId; }

/// Number of regression targets; 0 for the classification task.
inline int target_arity(TaskKind task) {
    switch (task) {
    case TaskKind::Range: return 2;
    case TaskKind::UnitId: return 0;
    default: return 1;
    }
}

/// Base of the logarithm used for Order targets.
enum class LogBase { Ten, Natural };

/// Closed interval on the 0.1 grid.
class ValueRange {
public:
    ValueRange(double lo, double hi) : lo_(to_tenths(lo, "lo")), hi_(to_tenths(hi, "hi")) {
        validate();
    }

    static ValueRange from_tenths(std::int64_t lo, std::int64_t hi) {
        ValueRange r;
        r.lo_ = lo;
        r.hi_ = hi;
        r.validate();
        return r;
    }

    double lo() const { return double(lo_) / 10.0; }
    double hi() const { return double(hi_) / 10.0; }
    std::int64_t lo_tenths() const { return lo_; }
    std::int64_t hi_tenths() const { return hi_; }
    std::uint64_t grid_size() const { return std::uint64_t(hi_ - lo_) + 1; }

    bool operator==(const ValueRange&) const = default;

private:
    ValueRange() = default;

    static std::int64_t to_tenths(double v, const char* which) {
        if (!std::isfinite(v)) throw ConfigError(std::string("range ") + which + " is not finite");
        const double scaled = v * 10.0;
        const auto t = static_cast<std::int64_t>(std::llround(scaled));
        if (std::abs(scaled - double(t)) > 1e-6)
            throw ConfigError(std::string("range ") + which + " must be a multiple of 0.1");
        return t;
    }

    void validate() const {
        if (lo_ > hi_) throw ConfigError("invalid range: lo > hi");
        // Negative values would collide with the '-' separator of Range inputs.
        if (lo_ < 0) throw ConfigError("invalid range: values must be non-negative");
    }

    std::int64_t lo_ = 0;
    std::int64_t hi_ = 0;
};

/// Renders integer tenths with exactly one decimal digit: 103 -> "10.3".
inline std::string format_tenths(std::int64_t tenths) {
    std::string out = tenths < 0 ? "-" : "";
    const std::uint64_t mag = tenths < 0 ? std::uint64_t(-tenths) : std::uint64_t(tenths);
    out += std::to_string(mag / 10);
    out += '.';
    out += char('0' + mag % 10);
    return out;
}

/// Ordered set of unit strings; a unit's class index is its position.
class UnitLexicon {
public:
    explicit UnitLexicon(std::vector<std::string> units) : units_(std::move(units)) {
        if (units_.size() < 2) throw FormatError("lexicon needs at least 2 units");
        std::unordered_set<std::string> seen;
        for (std::size_t i = 0; i < units_.size(); ++i) {
            const auto& u = units_[i];
            if (u.empty()) throw FormatError("lexicon line " + std::to_string(i + 1) + " is blank");
            if (std::isspace(static_cast<unsigned char>(u.front())) ||
                std::isspace(static_cast<unsigned char>(u.back())))
                throw FormatError("lexicon line " + std::to_string(i + 1) +
                                  " has leading/trailing whitespace");
            if (!seen.insert(u).second)
                throw FormatError("duplicate unit '" + u + "' on lexicon line " + std::to_string(i + 1));
        }
    }

    std::size_t size() const { return units_.size(); }
    const std::string& operator[](std::size_t i) const { return units_.at(i); }
    const std::vector<std::string>& units() const { return units_; }

    std::optional<std::size_t> index_of(std::string_view unit) const {
        auto it = std::find(units_.begin(), units_.end(), unit);
        if (it == units_.end()) return std::nullopt;
        return std::size_t(it - units_.begin());
    }

    /// Canonical LF-terminated serialization (identical to a well-formed lexicon file).
    std::string serialize() const {
        std::string out;
        for (const auto& u : units_) {
            out += u;
            out += '\n';
        }
        return out;
    }

    std::string sha256() const { return sha256_hex(serialize()); }

private:
    std::vector<std::string> units_;
};

inline UnitLexicon parse_lexicon(std::string_view text) {
    if (text.empty()) throw FormatError("lexicon file is empty");
    std::vector<std::string> lines;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        lines.emplace_back(text.substr(pos, nl - pos));
        pos = nl + 1;
    }
    return UnitLexicon(std::move(lines));
}

inline UnitLexicon load_lexicon(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingDataError("cannot open lexicon " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    try {
        return parse_lexicon(buf.str());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.offset());
    }
}

/// The lexicon shipped with the project (173 units).
inline std::filesystem::path default_lexicon_path() {
#ifdef QUANTPROBE_DATA_DIR
    return std::filesystem::path(QUANTPROBE_DATA_DIR) / "units.txt";
#else
    return "data/units.txt";
#endif
}

struct Example {
    std::uint64_t id = 0;
    std::string input;
    std::vector<double> targets;      // empty for UnitId
    std::optional<std::size_t> label; // UnitId only
    std::string unit;                 // UnitId only

    bool operator==(const Example&) const = default;
};

enum class Split { Train, Test };

inline std::string_view split_name(Split s) { return s == Split::Train ? "train" : "test"; }

struct Dataset {
    TaskKind task = TaskKind::Percent;
    ValueRange range{0.0, 0.0};
    std::uint64_t seed = 0;
    LogBase log_base = LogBase::Ten;
    std::vector<Example> train;
    std::vector<Example> test;
    std::optional<std::string> lexicon_sha256;

    const std::vector<Example>& split(Split s) const { return s == Split::Train ? train : test; }
};

struct OrderMultiplier {
    std::string_view word;
    int exponent;
};

inline constexpr std::array<OrderMultiplier, 4> kOrderMultipliers = {{
    {"thousand", 3}, {"million", 6}, {"billion", 9}, {"trillion", 12}}};

/// Draws a value uniformly from the 0.1 grid of `range`, as integer tenths.
inline std::int64_t sample_tenths(const ValueRange& range, Rng& rng) {
    return range.lo_tenths() + static_cast<std::int64_t>(rng.uniform_index(range.grid_size()));
}

inline double sample_value(const ValueRange& range, Rng& rng) {
    return double(sample_tenths(range, rng)) / 10.0;
}

/// log(V * 10^exponent) with V = tenths / 10.
inline double order_target(std::int64_t tenths, int exponent, LogBase base) {
    const double log10v = std::log10(double(tenths)) + double(exponent - 1);
    return base == LogBase::Ten ? log10v : log10v * std::numbers::ln10;
}

inline void check_task_config(TaskKind task, const ValueRange& range, const UnitLexicon* lexicon) {
    if (task == TaskKind::UnitId && lexicon == nullptr)
        throw ConfigError("unitid task requires a unit lexicon");
    if (task != TaskKind::UnitId && lexicon != nullptr)
        throw ConfigError("a unit lexicon is only valid for the unitid task");
    if (task == TaskKind::Order && range.hi_tenths() == 0)
        throw ConfigError("order task needs a range containing a non-zero value");
}

/// Draw order per task: Percent/BasisPoint one value; Order value (zero redrawn)
/// then multiplier; Range and Addition two values; UnitId value then unit.
inline Example make_example(TaskKind task, const ValueRange& range, Rng& rng,
                            const UnitLexicon* lexicon = nullptr, LogBase log_base = LogBase::Ten,
                            std::uint64_t id = 0) {
    check_task_config(task, range, lexicon);
    Example ex;
    ex.id = id;
    switch (task) {
    case TaskKind::Percent: {
        const auto v = sample_tenths(range, rng);
        ex.input = format_tenths(v) + "%";
        ex.targets = {double(v) / 1000.0};
        break;
    }
    case TaskKind::BasisPoint: {
        const auto v = sample_tenths(range, rng);
        ex.input = format_tenths(v) + " basis points";
        ex.targets = {double(v) / 100000.0};
        break;
    }
    case TaskKind::Order: {
        std::int64_t v = 0;
        while (v == 0) v = sample_tenths(range, rng);
        const auto& m = kOrderMultipliers[rng.uniform_index(kOrderMultipliers.size())];
        ex.input = format_tenths(v) + " " + std::string(m.word);
        ex.targets = {order_target(v, m.exponent, log_base)};
        break;
    }
    case TaskKind::Range: {
        auto a = sample_tenths(range, rng);
        auto b = sample_tenths(range, rng);
        if (b < a) std::swap(a, b);
        ex.input = format_tenths(a) + "-" + format_tenths(b);
        ex.targets = {double(a) / 10.0, double(b) / 10.0};
        break;
    }
    case TaskKind::Addition: {
        const auto a = sample_tenths(range, rng);
        const auto b = sample_tenths(range, rng);
        ex.input = format_tenths(a) + " " + format_tenths(b);
        ex.targets = {double(a + b) / 10.0};
        break;
    }
    case TaskKind::UnitId: {
        const auto v = sample_tenths(range, rng);
        const auto k = static_cast<std::size_t>(rng.uniform_index(lexicon->size()));
        ex.unit = (*lexicon)[k];
        ex.input = format_tenths(v) + " " + ex.unit;
        ex.label = k;
        break;
    }
    }
    return ex;
}

/// Train then test examples from one stream seeded by `seed` (with replacement).
inline Dataset generate_dataset(TaskKind task, const ValueRange& range, std::uint64_t seed,
                                std::size_t train_n, std::size_t test_n,
                                const UnitLexicon* lexicon = nullptr,
                                LogBase log_base = LogBase::Ten) {
    if (train_n == 0 || test_n == 0) throw ConfigError("dataset sizes must be > 0");
    check_task_config(task, range, lexicon);
    Dataset ds;
    ds.task = task;
    ds.range = range;
    ds.seed = seed;
    ds.log_base = log_base;
    if (lexicon) ds.lexicon_sha256 = lexicon->sha256();
    Rng rng(seed);
    ds.train.reserve(train_n);
    for (std::size_t i = 0; i < train_n; ++i)
        ds.train.push_back(make_example(task, range, rng, lexicon, log_base, i));
    ds.test.reserve(test_n);
    for (std::size_t i = 0; i < test_n; ++i)
        ds.test.push_back(make_example(task, range, rng, lexicon, log_base, i));
    return ds;
}

}  // namespace quantprobe
