// quantprobe: generate datasets, train probes over frozen embeddings, report.
//
// Exit codes: 0 ok, 2 usage or configuration error, 3 missing or malformed
// data, 4 internal error.

#include <quantprobe/gradcheck.hpp>
#include <quantprobe/quantprobe.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>

namespace qp = quantprobe;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 2, kMissingData = 3, kInternal = 4 };

struct DataFlags {
    std::string task;
    double lo = 0.0;
    double hi = 99.9;
    std::size_t train_n = 10000;
    std::size_t test_n = 1000;
    std::uint64_t seed = 0;
    std::string lexicon;
    std::string log_base = "10";

    void add(CLI::App& app) {
        app.add_option("--task", task, "percent|basispoint|order|range|addition|unitid")->required();
        app.add_option("--lo", lo, "range lower bound (0.1 grid)")->capture_default_str();
        app.add_option("--hi", hi, "range upper bound (0.1 grid)")->capture_default_str();
        app.add_option("--train", train_n, "training examples")->capture_default_str();
        app.add_option("--test", test_n, "test examples")->capture_default_str();
        app.add_option("--seed", seed, "dataset seed (base seed for run)")->capture_default_str();
        app.add_option("--lexicon", lexicon, "unit lexicon for unitid (default: shipped units.txt)");
        app.add_option("--log-base", log_base, "order targets: 10 or e")->capture_default_str();
    }

    qp::TaskKind task_kind() const { return qp::parse_task(task); }
    qp::ValueRange range() const { return qp::ValueRange(lo, hi); }

    qp::LogBase base() const {
        if (log_base == "10") return qp::LogBase::Ten;
        if (log_base == "e") return qp::LogBase::Natural;
        throw qp::ConfigError("--log-base must be 10 or e");
    }

    std::optional<qp::UnitLexicon> load_lexicon() const {
        if (task_kind() != qp::TaskKind::UnitId) {
            if (!lexicon.empty()) throw qp::ConfigError("--lexicon only applies to unitid");
            return std::nullopt;
        }
        return qp::load_lexicon(lexicon.empty() ? qp::default_lexicon_path() : fs::path(lexicon));
    }
};

struct ProviderFlags {
    std::string provider = "random";
    int dim = 0;
    std::uint64_t seed = 0;
    std::optional<double> init_std;
    std::string label;

    void add(CLI::App& app) {
        app.add_option("--provider", provider, "random | oracle | file:DIR")->capture_default_str();
        app.add_option("--dim", dim, "embedding dim (default 768; oracle 16)");
        app.add_option("--provider-seed", seed, "seed of the random table / oracle noise")->capture_default_str();
        app.add_option("--init-std", init_std, "random vector std (default dim^-1/2)");
        app.add_option("--label", label, "provider name in reports");
    }

    qp::ProviderSpec spec() const {
        qp::ProviderSpec p;
        if (provider == "random") {
            p.kind = qp::ProviderKind::RandomVectors;
        } else if (provider == "oracle") {
            p.kind = qp::ProviderKind::Oracle;
        } else if (provider.rfind("file:", 0) == 0 && provider.size() > 5) {
            p.kind = qp::ProviderKind::FileBacked;
            p.path = provider.substr(5);
        } else {
            throw qp::ConfigError("--provider must be random, oracle or file:DIR (got '" + provider + "')");
        }
        p.dim = dim > 0 ? dim : (p.kind == qp::ProviderKind::Oracle ? 16 : 768);
        if (dim < 0) throw qp::ConfigError("--dim must be > 0");
        p.seed = seed;
        p.init_std = init_std;
        p.label = label;
        return p;
    }
};

struct TrainFlags {
    std::optional<double> lr;
    std::optional<double> momentum;
    int batch_size = 128;
    int max_epochs = 1000;
    int patience = 20;
    double clip = 5.0;
    double val_fraction = 0.1;
    std::optional<int> hidden;
    std::vector<double> lr_grid = qp::default_lr_grid();
    std::vector<double> momentum_grid = qp::default_momentum_grid();

    void add(CLI::App& app, bool with_grid_lists) {
        app.add_option("--batch-size", batch_size)->capture_default_str();
        app.add_option("--max-epochs", max_epochs)->capture_default_str();
        app.add_option("--patience", patience, "early stopping patience (epochs)")->capture_default_str();
        app.add_option("--clip", clip, "global gradient norm clip")->capture_default_str();
        app.add_option("--val-fraction", val_fraction)->capture_default_str();
        app.add_option("--hidden", hidden, "probe hidden width (default per task)");
        if (with_grid_lists) {
            app.add_option("--lr-grid", lr_grid, "learning rates searched")->delimiter(',');
            app.add_option("--momentum-grid", momentum_grid, "momenta searched")->delimiter(',');
        }
    }

    qp::TrainConfig config(qp::TaskKind task) const {
        qp::TrainConfig c = qp::default_train_config(task);
        if (lr) c.lr = *lr;
        if (momentum) c.momentum = *momentum;
        c.batch_size = batch_size;
        c.max_epochs = max_epochs;
        c.patience = patience;
        c.clip_norm = clip;
        c.val_fraction = val_fraction;
        return c;
    }
};

unsigned resolve_threads(std::optional<unsigned> flag) {
    if (flag) {
        if (*flag == 0) throw qp::ConfigError("--threads must be >= 1");
        return *flag;
    }
    return qp::default_thread_count();
}

void log_line(const std::string& msg) { std::cerr << msg << std::endl; }

// --- gen ----------------------------------------------------------------------

int cmd_gen(const DataFlags& d, const fs::path& out) {
    const auto lex = d.load_lexicon();
    const auto ds = qp::generate_dataset(d.task_kind(), d.range(), d.seed, d.train_n, d.test_n,
                                         lex ? &*lex : nullptr, d.base());
    qp::write_dataset(ds, out);
    const auto vocab = qp::build_vocab(lex ? &*lex : nullptr);
    std::ostringstream v;
    vocab.dump(v);
    qp::write_text_file(out / "vocab.tsv", v.str());

    nlohmann::ordered_json m;
    m["task"] = std::string(qp::task_name(ds.task));
    m["lo"] = nlohmann::ordered_json::parse(qp::format_tenths(ds.range.lo_tenths()));
    m["hi"] = nlohmann::ordered_json::parse(qp::format_tenths(ds.range.hi_tenths()));
    m["seed"] = ds.seed;
    m["train_n"] = ds.train.size();
    m["test_n"] = ds.test.size();
    if (ds.task == qp::TaskKind::Order) m["log_base"] = d.log_base;
    if (lex) m["lexicon_sha256"] = lex->sha256();
    m["vocab_size"] = vocab.size();
    m["train_sha256"] = qp::split_digest(ds, qp::Split::Train);
    m["test_sha256"] = qp::split_digest(ds, qp::Split::Test);
    qp::write_text_file(out / "manifest.json", m.dump(2) + "\n");
    std::cout << "wrote " << (out / "train.jsonl").string() << " (" << ds.train.size() << ") and "
              << (out / "test.jsonl").string() << " (" << ds.test.size() << ")\n";
    return kOk;
}

// --- expect -------------------------------------------------------------------

int cmd_expect(const fs::path& dir, int dim) {
    if (dim <= 0) throw qp::ConfigError("--dim must be > 0");
    const auto path = dir / "manifest.json";
    if (!fs::exists(path)) throw qp::ConfigError("no manifest.json in " + dir.string() + " (run gen first)");
    std::string train_sha, test_sha;
    try {
        const auto m = nlohmann::json::parse(qp::read_text_file(path));
        train_sha = m.at("train_sha256").get<std::string>();
        test_sha = m.at("test_sha256").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw qp::ConfigError("corrupt manifest " + path.string() + ": " + e.what());
    }
    auto hex64 = [](const std::string& s) {
        return s.size() == 64 && s.find_first_not_of("0123456789abcdef") == std::string::npos;
    };
    if (!hex64(train_sha) || !hex64(test_sha)) throw qp::ConfigError("corrupt manifest " + path.string() + ": bad digest");
    // The split files, when present, must still be the ones the manifest describes.
    for (const auto& [name, sha] : {std::pair{"train.jsonl", train_sha}, std::pair{"test.jsonl", test_sha}}) {
        const auto split = dir / name;
        if (fs::exists(split) && qp::sha256_hex(qp::read_text_file(split)) != sha)
            throw qp::DataError(split.string() + " does not match manifest.json");
    }
    std::cout << "train\t" << qp::qpemb_name(train_sha) << "\n"
              << "test\t" << qp::qpemb_name(test_sha) << "\n"
              << "dim\t" << dim << "\n";
    return kOk;
}

// --- run / grid -----------------------------------------------------------------

qp::ExperimentSpec make_spec(const DataFlags& d, const ProviderFlags& p, const TrainFlags& t) {
    qp::ExperimentSpec s;
    s.task = d.task_kind();
    s.range = d.range();
    s.provider = p.spec();
    s.train = t.config(s.task);
    s.lr_grid = t.lr_grid;
    s.momentum_grid = t.momentum_grid;
    s.base_seed = d.seed;
    s.train_n = d.train_n;
    s.test_n = d.test_n;
    s.hidden_dim = t.hidden;
    s.log_base = d.base();
    s.lexicon = d.load_lexicon();
    return s;
}

int cmd_run(qp::ExperimentSpec spec, unsigned threads, const fs::path& out, bool quiet) {
    spec.validate();
    if (!spec.grid) spec.train.validate(spec.train_n);
    qp::ExperimentOptions opts;
    opts.threads = threads;
    opts.out_dir = out;
    if (!quiet) opts.log = log_line;
    const auto rep = qp::run_experiment(spec, opts);
    std::cout << qp::render_text({rep.cell()});
    if (const int d = rep.diverged_count(); d > 0) std::cout << d << " of " << rep.runs.size() << " runs diverged\n";
    return kOk;
}

int cmd_grid(const qp::ExperimentSpec& spec, unsigned threads, const fs::path& out) {
    spec.validate();
    const qp::UnitLexicon* lex = spec.lexicon ? &*spec.lexicon : nullptr;
    const auto vocab = qp::build_vocab(lex);
    const auto ds = qp::generate_dataset(spec.task, spec.range, spec.base_seed, spec.train_n, spec.test_n, lex,
                                         spec.log_base);
    if (spec.provider.kind == qp::ProviderKind::FileBacked) {
        const auto [tr, te] = qp::expected_embedding_files(ds);
        std::string missing;
        for (const auto& n : {tr, te})
            if (!fs::exists(spec.provider.path / n)) missing += "\n  " + n;
        if (!missing.empty())
            throw qp::MissingDataError("missing embedding files in " + spec.provider.path.string() + ":" + missing);
    }
    const auto internal = qp::make_internal_provider(spec.provider, vocab);
    const auto data = qp::prepare_probe_data(spec, ds, vocab, internal);
    auto base = spec.train;
    base.seed = spec.base_seed;
    const auto gr = qp::grid_search(data, base, spec.lr_grid, spec.momentum_grid, threads);
    std::string csv = "lr,momentum,best_val_loss,best_epoch,epochs_run,diverged,selected\n";
    for (std::size_t k = 0; k < gr.cells.size(); ++k) {
        const auto& c = gr.cells[k];
        csv += qp::detail::exact(c.lr) + "," + qp::detail::exact(c.momentum) + "," + qp::detail::exact(c.best_val_loss) +
               "," + std::to_string(c.best_epoch) + "," + std::to_string(c.epochs_run) + "," + (c.diverged ? "1" : "0") +
               "," + (k == gr.best_index ? "1" : "0") + "\n";
    }
    if (!out.empty()) {
        fs::create_directories(out);
        qp::write_text_file(out / "grid.csv", csv);
    }
    std::cout << csv << "selected lr=" << qp::detail::exact(gr.best.lr)
              << " momentum=" << qp::detail::exact(gr.best.momentum) << "\n";
    return kOk;
}

// --- report -------------------------------------------------------------------

int cmd_report(const std::vector<std::string>& inputs, const std::string& format) {
    if (format != "text" && format != "csv") throw qp::ConfigError("--format must be text or csv");
    std::vector<qp::ReportCell> cells;
    for (const auto& in : inputs) {
        const fs::path p(in);
        std::vector<qp::ReportCell> more;
        if (fs::is_directory(p)) {
            more = qp::cells_from_manifests(p);
            if (more.empty()) throw qp::MissingDataError("no run manifests under " + p.string());
        } else if (fs::exists(p)) {
            more = qp::parse_csv(qp::read_text_file(p));
        } else {
            throw qp::MissingDataError("no such report input: " + p.string());
        }
        cells.insert(cells.end(), more.begin(), more.end());
    }
    std::cout << qp::render_report(cells, format == "csv" ? qp::ReportFormat::Csv : qp::ReportFormat::Text);
    return kOk;
}

// --- selftest -----------------------------------------------------------------

int cmd_selftest() {
    int failed = 0;
    auto check = [&](const std::string& name, bool ok) {
        std::cout << (ok ? "ok    " : "FAIL  ") << name << "\n";
        failed += !ok;
    };
    check("rmse", std::abs(qp::rmse(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 5}) - 1.154701) <= 1e-6);
    const auto agg = qp::aggregate(std::vector<double>{1, 3});
    check("aggregate", agg.mean == 2.0 && std::abs(*agg.std - 1.414214) <= 1e-6);

    qp::qpemb::Record r;
    r.values = qp::qpemb::FloatMatrix::Zero(2, 3);
    const std::vector<qp::qpemb::Record> recs{r};
    check("qpemb layout", qp::qpemb::encode(3, recs).size() == 56);

    double worst = 0.0;
    for (auto task : qp::kAllTasks) {
        auto cfg = qp::ProbeConfig::for_task(task, 8, 3, 3);
        cfg.hidden_dim = 4;
        qp::Rng rng(1);
        auto probe = qp::build_probe(cfg, 1);
        worst = std::max(worst, qp::check_probe_gradients(*probe, qp::random_probe_batch(cfg, 4, rng)).max_rel_error);
    }
    check("gradients", worst <= 1e-4);

    const auto ds = qp::generate_dataset(qp::TaskKind::Percent, qp::ValueRange(0.0, 99.9), 1, 2000, 200);
    const auto vocab = qp::build_vocab();
    const auto data = qp::make_probe_data(ds, vocab, std::make_shared<qp::OracleProvider>(16, 1));
    auto cfg = qp::default_train_config(qp::TaskKind::Percent, 1);
    cfg.max_epochs = 100;
    check("oracle percent", qp::train_probe(data, cfg).metric_value <= 0.02);
    return failed == 0 ? kOk : kInternal;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Probe frozen token embeddings for numeric understanding."};
    app.require_subcommand(1);

    DataFlags gen_data;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen", "write a synthetic dataset (train.jsonl, test.jsonl, manifest.json)");
    gen_data.add(*gen);
    gen->add_option("-o,--out", gen_out, "output directory")->required();

    DataFlags run_data;
    ProviderFlags run_prov;
    TrainFlags run_train;
    int runs = 5;
    bool use_grid = false, quiet = false;
    std::optional<unsigned> run_threads;
    std::string run_out;
    auto* run = app.add_subcommand("run", "train and evaluate probes over several freshly sampled datasets");
    run_data.add(*run);
    run_prov.add(*run);
    run_train.add(*run, true);
    run->add_option("--runs", runs, "independent runs")->capture_default_str();
    auto* lr_opt = run->add_option("--lr", run_train.lr, "learning rate (default per task)");
    run->add_option("--momentum", run_train.momentum, "SGD momentum")->needs(lr_opt);
    run->add_flag("--grid", use_grid, "pick lr and momentum by grid search first")->excludes(lr_opt);
    run->add_option("--threads", run_threads, "worker threads (env QUANTPROBE_THREADS)");
    run->add_flag("-q,--quiet", quiet, "no per-run progress on stderr");
    run->add_option("-o,--out", run_out, "output directory")->required();

    DataFlags grid_data;
    ProviderFlags grid_prov;
    TrainFlags grid_train;
    std::optional<unsigned> grid_threads;
    std::string grid_out;
    auto* grid = app.add_subcommand("grid", "grid search lr x momentum on one dataset (seed --seed)");
    grid_data.add(*grid);
    grid_prov.add(*grid);
    grid_train.add(*grid, true);
    grid->add_option("--threads", grid_threads, "worker threads (env QUANTPROBE_THREADS)");
    grid->add_option("-o,--out", grid_out, "directory for grid.csv");

    std::vector<std::string> report_inputs;
    std::string report_format = "text";
    auto* report = app.add_subcommand("report", "render report.csv files or run directories as one table");
    report->add_option("inputs", report_inputs, "report.csv files or experiment directories")->required();
    report->add_option("--format", report_format, "text or csv")->capture_default_str();

    auto* selftest = app.add_subcommand("selftest", "quick internal consistency checks");

    std::string expect_dir;
    int expect_dim = 768;
    auto* expect = app.add_subcommand("expect", "print the embedding files the file provider needs for a dataset");
    expect->add_option("--dir", expect_dir, "directory written by gen")->required();
    expect->add_option("--dim", expect_dim, "embedding dim the files must have")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*gen) return cmd_gen(gen_data, gen_out);
        if (*run) {
            auto spec = make_spec(run_data, run_prov, run_train);
            spec.runs = runs;
            spec.grid = use_grid;
            return cmd_run(std::move(spec), resolve_threads(run_threads), run_out, quiet);
        }
        if (*grid) return cmd_grid(make_spec(grid_data, grid_prov, grid_train), resolve_threads(grid_threads), grid_out);
        if (*report) return cmd_report(report_inputs, report_format);
        if (*selftest) return cmd_selftest();
        if (*expect) return cmd_expect(expect_dir, expect_dim);
    } catch (const qp::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const qp::GridSearchError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const qp::FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kMissingData;
    } catch (const qp::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kMissingData;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kInternal;
    }
    return kInternal;
}
