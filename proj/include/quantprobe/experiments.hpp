#pragma once

// Multi-run protocol: per run, a freshly sampled dataset, a fresh probe and a
// test metric; runs are then aggregated into one report cell.

#include <quantprobe/dataset_io.hpp>
#include <quantprobe/embeddings.hpp>
#include <quantprobe/errors.hpp>
#include <quantprobe/metrics.hpp>
#include <quantprobe/parallel.hpp>
#include <quantprobe/report.hpp>
#include <quantprobe/synthgen.hpp>
#include <quantprobe/tokenizer.hpp>
#include <quantprobe/training.hpp>

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace quantprobe {

struct ExperimentSpec {
    TaskKind task = TaskKind::Percent;
    ValueRange range{0.0, 99.9};
    ProviderSpec provider;
    TrainConfig train;  // seed is replaced per run
    bool grid = false;
    std::vector<double> lr_grid = default_lr_grid();
    std::vector<double> momentum_grid = default_momentum_grid();
    int runs = 5;
    std::uint64_t base_seed = 0;
    std::size_t train_n = 10000;
    std::size_t test_n = 1000;
    std::optional<int> hidden_dim;
    LogBase log_base = LogBase::Ten;
    std::optional<UnitLexicon> lexicon;

    std::uint64_t run_seed(int run_index) const { return base_seed + std::uint64_t(run_index); }
    /// The grid search uses its own dataset, one seed below the first run.
    std::uint64_t search_seed() const { return base_seed - 1; }

    void validate() const {
        if (runs < 1) throw ConfigError("runs must be >= 1");
        if (train_n == 0 || test_n == 0) throw ConfigError("dataset sizes must be > 0");
        check_task_config(task, range, lexicon ? &*lexicon : nullptr);
        if (provider.dim <= 0) throw ConfigError("provider dim must be > 0");
        if (provider.kind == ProviderKind::FileBacked && provider.path.empty())
            throw ConfigError("file provider needs a directory");
        if (grid && (lr_grid.empty() || momentum_grid.empty())) throw ConfigError("grid search: grids must be non-empty");
    }
};

struct RunRecord {
    int run_index = 0;
    std::uint64_t seed = 0;
    int max_len = 0;
    ProbeConfig probe;
    TrainConfig train;
    std::string train_sha256;
    std::string test_sha256;
    RunResult result;
};

struct ExperimentReport {
    ExperimentSpec spec;
    TrainConfig chosen;  // after grid search, if any
    std::optional<GridResult> grid;
    std::vector<RunRecord> runs;

    ReportCell cell() const {
        ReportCell c{spec.task, spec.range, spec.provider.display_name(), metric_for(spec.task), spec.base_seed, {}};
        for (const auto& r : runs)
            c.runs.push_back({r.run_index, r.result.metric_value, r.result.diverged, r.result.best_epoch, r.seed});
        return c;
    }
    Aggregate summary() const { return cell().summary(); }
    int diverged_count() const { return cell().diverged_count(); }
};

struct ExperimentOptions {
    unsigned threads = 1;
    std::filesystem::path out_dir;  // empty: nothing is written
    std::function<void(const std::string&)> log;
};

inline std::filesystem::path run_dir(const std::filesystem::path& out, int run_index) {
    return out / ("run_" + std::to_string(run_index));
}

inline std::string provider_json_kind(const ProviderSpec& p) { return std::string(provider_kind_name(p.kind)); }

inline nlohmann::ordered_json provider_json(const ProviderSpec& p) {
    nlohmann::ordered_json j;
    j["kind"] = provider_json_kind(p);
    j["label"] = p.display_name();
    j["dim"] = p.dim;
    j["seed"] = p.seed;
    if (p.kind == ProviderKind::FileBacked) j["path"] = p.path.string();
    if (p.init_std) j["init_std"] = *p.init_std;
    return j;
}

inline nlohmann::ordered_json train_config_json(const TrainConfig& c) {
    nlohmann::ordered_json j;
    j["lr"] = c.lr;
    j["momentum"] = c.momentum;
    j["batch_size"] = c.batch_size;
    j["clip_norm"] = c.clip_norm;
    j["max_epochs"] = c.max_epochs;
    j["patience"] = c.patience;
    j["val_fraction"] = c.val_fraction;
    j["seed"] = c.seed;
    return j;
}

/// Run manifest: everything needed to trace one report value back to its inputs.
inline nlohmann::ordered_json run_manifest(const ExperimentSpec& spec, const RunRecord& r) {
    nlohmann::ordered_json j;
    j["run_index"] = r.run_index;
    SplitHeader h{spec.task, spec.range, r.seed, Split::Train, spec.log_base,
                  spec.lexicon ? std::optional(spec.lexicon->sha256()) : std::nullopt};
    auto dataset = header_json(h);
    dataset.erase("split");
    dataset["train_n"] = spec.train_n;
    dataset["test_n"] = spec.test_n;
    dataset["train_sha256"] = r.train_sha256;
    dataset["test_sha256"] = r.test_sha256;
    j["dataset"] = dataset;
    j["provider"] = provider_json(spec.provider);
    j["train_config"] = train_config_json(r.train);
    j["probe"] = {{"hidden_dim", r.probe.hidden_dim}, {"output_arity", r.probe.output_arity}, {"embed_dim", r.probe.embed_dim}};
    j["max_len"] = r.max_len;
    j["metric"] = metric_name(r.result.metric);
    j["value"] = r.result.metric_value;
    j["best_epoch"] = r.result.best_epoch;
    j["epochs_run"] = r.result.epochs_run;
    j["best_val_loss"] = r.result.best_val_loss;
    j["diverged"] = r.result.diverged;
    if (r.result.diverged) j["divergence_reason"] = r.result.divergence_reason;
    j["val_losses"] = r.result.val_losses;
    j["wall_seconds"] = r.result.wall_seconds;
    return j;
}

/// Rebuilds report cells from run_*/manifest.json files under `dir`.
inline std::vector<ReportCell> cells_from_manifests(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> paths;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().filename() == "manifest.json" &&
            entry.path().parent_path().filename().string().rfind("run_", 0) == 0)
            paths.push_back(entry.path());
    std::sort(paths.begin(), paths.end());
    std::vector<ReportCell> cells;
    for (const auto& p : paths) {
        try {
            const auto j = nlohmann::json::parse(read_text_file(p));
            const auto& d = j.at("dataset");
            const TaskKind task = parse_task(d.at("task").get<std::string>());
            const ValueRange range(d.at("lo").get<double>(), d.at("hi").get<double>());
            const std::string provider = j.at("provider").at("label").get<std::string>();
            const MetricKind metric = parse_metric(j.at("metric").get<std::string>());
            const int run_index = j.at("run_index").get<int>();
            const std::uint64_t seed = d.at("seed").get<std::uint64_t>();
            auto it = std::find_if(cells.begin(), cells.end(), [&](const ReportCell& c) {
                return c.task == task && c.range == range && c.provider == provider;
            });
            if (it == cells.end()) {
                cells.push_back({task, range, provider, metric, seed - std::uint64_t(run_index), {}});
                it = cells.end() - 1;
            }
            it->runs.push_back({run_index, j.at("value").get<double>(), j.at("diverged").get<bool>(),
                                j.at("best_epoch").get<int>(), seed});
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(p.string() + ": " + e.what());
        }
    }
    for (auto& c : cells)
        std::sort(c.runs.begin(), c.runs.end(), [](const RunRow& a, const RunRow& b) { return a.run_index < b.run_index; });
    return cells;
}

namespace detail {

struct PreparedRun {
    int run_index = 0;
    std::uint64_t seed = 0;
    Dataset dataset;
    std::string train_sha256, test_sha256;
};

inline std::vector<std::string> missing_embedding_files(const ExperimentSpec& spec,
                                                        const std::vector<PreparedRun>& runs) {
    std::vector<std::string> missing;
    for (const auto& r : runs)
        for (const auto* sha : {&r.train_sha256, &r.test_sha256}) {
            const auto name = qpemb_name(*sha);
            if (!std::filesystem::exists(spec.provider.path / name)) missing.push_back(name);
        }
    return missing;
}

}  // namespace detail

/// Builds the providers for one dataset: shared for internal kinds, one per
/// split for file-backed embeddings.
inline ProbeData prepare_probe_data(const ExperimentSpec& spec, const Dataset& ds, const Vocabulary& vocab,
                                    const std::shared_ptr<const EmbeddingProvider>& internal) {
    const std::size_t classes = spec.lexicon ? spec.lexicon->size() : 0;
    if (spec.provider.kind != ProviderKind::FileBacked)
        return make_probe_data(ds, vocab, internal, nullptr, spec.hidden_dim, classes);
    auto open = [&](Split s) {
        const auto path = spec.provider.path / qpemb_name(split_digest(ds, s));
        auto p = std::make_shared<FileBackedProvider>(FileBackedProvider::open(path, spec.provider.dim));
        for (const auto& ex : ds.split(s))
            if (!p->has(ex.id))
                throw DataError(path.string() + ": missing example id " + std::to_string(ex.id));
        return p;
    };
    return make_probe_data(ds, vocab, open(Split::Train), open(Split::Test), spec.hidden_dim, classes);
}

inline std::shared_ptr<const EmbeddingProvider> make_internal_provider(const ProviderSpec& p, const Vocabulary& vocab) {
    switch (p.kind) {
    case ProviderKind::RandomVectors:
        return std::make_shared<RandomVectorsProvider>(vocab.size(), p.dim, p.seed, p.init_std);
    case ProviderKind::Oracle: return std::make_shared<OracleProvider>(p.dim, p.seed);
    case ProviderKind::FileBacked: return nullptr;
    }
    return nullptr;
}

/// Generates the run's dataset and returns the embedding file names the
/// file-backed provider will look for (train, test).
inline std::pair<std::string, std::string> expected_embedding_files(const Dataset& ds) {
    return {qpemb_name(split_digest(ds, Split::Train)), qpemb_name(split_digest(ds, Split::Test))};
}

inline ExperimentReport run_experiment(const ExperimentSpec& spec, const ExperimentOptions& opts = {}) {
    spec.validate();
    auto log = [&](const std::string& msg) {
        if (opts.log) opts.log(msg);
    };
    const UnitLexicon* lexicon = spec.lexicon ? &*spec.lexicon : nullptr;
    const Vocabulary vocab = build_vocab(lexicon);

    std::vector<detail::PreparedRun> prepared;
    for (int i = 0; i < spec.runs; ++i) {
        detail::PreparedRun r;
        r.run_index = i;
        r.seed = spec.run_seed(i);
        r.dataset = generate_dataset(spec.task, spec.range, r.seed, spec.train_n, spec.test_n, lexicon, spec.log_base);
        r.train_sha256 = split_digest(r.dataset, Split::Train);
        r.test_sha256 = split_digest(r.dataset, Split::Test);
        if (!opts.out_dir.empty()) write_dataset(r.dataset, run_dir(opts.out_dir, i));
        prepared.push_back(std::move(r));
    }

    std::optional<Dataset> search_ds;
    if (spec.grid) {
        search_ds = generate_dataset(spec.task, spec.range, spec.search_seed(), spec.train_n, spec.test_n, lexicon,
                                     spec.log_base);
        if (!opts.out_dir.empty()) write_dataset(*search_ds, opts.out_dir / "grid");
    }

    if (spec.provider.kind == ProviderKind::FileBacked) {
        auto missing = detail::missing_embedding_files(spec, prepared);
        if (search_ds) {
            const auto [train_name, test_name] = expected_embedding_files(*search_ds);
            for (const auto& name : {train_name, test_name})
                if (!std::filesystem::exists(spec.provider.path / name)) missing.push_back(name);
        }
        if (!missing.empty()) {
            std::string msg = "missing embedding files in " + spec.provider.path.string() + ":";
            for (const auto& m : missing) msg += "\n  " + m;
            throw MissingDataError(msg);
        }
    }

    const auto internal = make_internal_provider(spec.provider, vocab);

    ExperimentReport report;
    report.spec = spec;
    report.chosen = spec.train;
    if (spec.grid) {
        log("grid search on seed " + std::to_string(spec.search_seed()));
        const ProbeData data = prepare_probe_data(spec, *search_ds, vocab, internal);
        TrainConfig base = spec.train;
        base.seed = spec.search_seed();
        report.grid = grid_search(data, base, spec.lr_grid, spec.momentum_grid, opts.threads);
        report.chosen.lr = report.grid->best.lr;
        report.chosen.momentum = report.grid->best.momentum;
        log("grid selected lr=" + detail::exact(report.chosen.lr) + " momentum=" + detail::exact(report.chosen.momentum));
    }

    report.runs.resize(prepared.size());
    parallel_for(prepared.size(), opts.threads, [&](std::size_t i) {
        const auto& p = prepared[i];
        const ProbeData data = prepare_probe_data(spec, p.dataset, vocab, internal);
        TrainConfig cfg = report.chosen;
        cfg.seed = p.seed;
        RunRecord rec;
        rec.run_index = p.run_index;
        rec.seed = p.seed;
        rec.max_len = data.probe.max_len;
        rec.probe = data.probe;
        rec.train = cfg;
        rec.train_sha256 = p.train_sha256;
        rec.test_sha256 = p.test_sha256;
        rec.result = train_probe(data, cfg);
        if (!opts.out_dir.empty())
            write_text_file(run_dir(opts.out_dir, p.run_index) / "manifest.json",
                            run_manifest(spec, rec).dump(2) + "\n");
        report.runs[i] = std::move(rec);
        log("run " + std::to_string(p.run_index) + ": " + std::string(metric_name(report.runs[i].result.metric)) + "=" +
            detail::exact(report.runs[i].result.metric_value) + " best_epoch=" +
            std::to_string(report.runs[i].result.best_epoch) + (report.runs[i].result.diverged ? " (diverged)" : ""));
    });

    if (!opts.out_dir.empty()) {
        const std::vector<ReportCell> cells{report.cell()};
        write_text_file(opts.out_dir / "report.csv", render_csv(cells));
        write_text_file(opts.out_dir / "report.txt", render_text(cells));
        if (report.grid) {
            std::string g = "lr,momentum,best_val_loss,best_epoch,epochs_run,diverged,selected\n";
            for (std::size_t k = 0; k < report.grid->cells.size(); ++k) {
                const auto& c = report.grid->cells[k];
                g += detail::exact(c.lr) + "," + detail::exact(c.momentum) + "," + detail::exact(c.best_val_loss) + "," +
                     std::to_string(c.best_epoch) + "," + std::to_string(c.epochs_run) + "," + (c.diverged ? "1" : "0") +
                     "," + (k == report.grid->best_index ? "1" : "0") + "\n";
            }
            write_text_file(opts.out_dir / "grid.csv", g);
        }
    }
    return report;
}

}  // namespace quantprobe
