#pragma once

// Single-run probe training (mini-batch SGD, patience-based early stopping
// with best-weight restore) and the learning-rate/momentum grid search.

#include <quantprobe/embeddings.hpp>
#include <quantprobe/errors.hpp>
#include <quantprobe/metrics.hpp>
#include <quantprobe/nn.hpp>
#include <quantprobe/parallel.hpp>
#include <quantprobe/probes.hpp>
#include <quantprobe/rng.hpp>
#include <quantprobe/synthgen.hpp>
#include <quantprobe/tokenizer.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace quantprobe {

struct TrainConfig {
    double lr = 1e-3;
    double momentum = 0.5;
    int batch_size = 128;
    double clip_norm = 5.0;
    int max_epochs = 1000;
    int patience = 20;
    double val_fraction = 0.1;
    std::uint64_t seed = 0;

    void validate(std::size_t train_size) const {
        if (!(lr >= 1e-6 && lr <= 0.3)) throw ConfigError("lr must lie in [1e-6, 0.3]");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
        if (!(val_fraction > 0.0 && val_fraction < 0.5)) throw ConfigError("val_fraction must lie in (0, 0.5)");
        if (batch_size < 1 || std::size_t(batch_size) > train_size)
            throw ConfigError("batch_size must lie in [1, train size]");
        if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
        if (patience < 1) throw ConfigError("patience must be >= 1");
        if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
    }
};

/// Default lr and momentum per task: winners of the default grid on the
/// random-vector provider (dim 768, 2000 train examples, 100 epochs; unitid
/// re-searched at 10000 examples and 1000 epochs over lr 0.3..0.01).
inline double default_lr(TaskKind task) {
    switch (task) {
    case TaskKind::Percent: return 3e-1;
    case TaskKind::BasisPoint: return 3e-1;
    case TaskKind::Order: return 3e-2;
    case TaskKind::Range: return 3e-3;
    case TaskKind::Addition: return 3e-2;
    case TaskKind::UnitId: return 1e-1;
    }
    return 1e-3;
}

inline double default_momentum(TaskKind) { return 0.7; }

inline TrainConfig default_train_config(TaskKind task, std::uint64_t seed = 0) {
    TrainConfig c;
    c.lr = default_lr(task);
    c.momentum = default_momentum(task);
    c.seed = seed;
    return c;
}

/// Tracks the best validation loss; stop once `patience` epochs pass
/// without a strict improvement.
class EarlyStopping {
public:
    explicit EarlyStopping(int patience) : patience_(patience) {}

    /// Records the loss of 1-based `epoch`; returns true if training should stop.
    bool observe(int epoch, double loss) {
        if (loss < best_loss_) {
            best_loss_ = loss;
            best_epoch_ = epoch;
        }
        return epoch - best_epoch_ >= patience_;
    }

    bool improved_at(int epoch) const { return best_epoch_ == epoch; }
    int best_epoch() const { return best_epoch_; }
    double best_loss() const { return best_loss_; }

private:
    int patience_;
    int best_epoch_ = 0;
    double best_loss_ = std::numeric_limits<double>::infinity();
};

/// Tokenized, embedded view of one dataset split. Batches are materialized on
/// demand so large providers never hold a dense copy of the whole split.
class SplitView {
public:
    /// Embeddings are precomputed when the whole split fits in `cache_bytes`.
    SplitView(const std::vector<Example>& examples, const Vocabulary& vocab,
              std::shared_ptr<const EmbeddingProvider> provider, std::size_t cache_bytes = std::size_t(256) << 20)
        : examples_(&examples), provider_(std::move(provider)) {
        tokens_.reserve(examples.size());
        for (const auto& ex : examples) tokens_.push_back(tokenize(ex.input, vocab));
        std::size_t bytes = 0;
        for (std::size_t i = 0; i < size(); ++i)
            bytes += provider_->rows(example(i), tokens_[i]) * std::size_t(provider_->dim()) * sizeof(double);
        if (bytes > cache_bytes) return;
        cache_.reserve(size());
        for (std::size_t i = 0; i < size(); ++i) cache_.push_back(provider_->embed(example(i), tokens_[i]));
    }

    SplitView(const SplitView&) = delete;
    SplitView& operator=(const SplitView&) = delete;

    std::size_t size() const { return examples_->size(); }
    const Example& example(std::size_t i) const { return (*examples_)[i]; }
    const TokenSeq& tokens(std::size_t i) const { return tokens_[i]; }
    const EmbeddingProvider& provider() const { return *provider_; }

    std::size_t rows(std::size_t i) const {
        return cache_.empty() ? provider_->rows(example(i), tokens_[i]) : std::size_t(cache_[i].rows());
    }

    std::size_t max_rows() const {
        std::size_t m = 0;
        for (std::size_t i = 0; i < size(); ++i) m = std::max(m, rows(i));
        return m;
    }

    bool cached() const { return !cache_.empty(); }

    /// Number of batches built from this split so far.
    std::size_t batches_served() const { return served_.load(); }

    Batch make_batch(std::span<const std::size_t> idx, const ProbeConfig& cfg) const {
        served_.fetch_add(1);
        const Eigen::Index dim = cfg.embed_dim;
        if (provider_->dim() != cfg.embed_dim)
            throw DataError("provider dim " + std::to_string(provider_->dim()) + " != probe embed_dim " +
                            std::to_string(cfg.embed_dim));
        Batch b;
        const auto n = Eigen::Index(idx.size());
        if (is_classification(cfg.task)) {
            b.offsets.resize(idx.size() + 1, 0);
            for (std::size_t k = 0; k < idx.size(); ++k)
                b.offsets[k + 1] = b.offsets[k] + Eigen::Index(rows(idx[k]));
            b.inputs.resize(b.offsets.back(), dim);
            b.labels.resize(idx.size());
            for (std::size_t k = 0; k < idx.size(); ++k) {
                const auto& ex = example(idx[k]);
                embed_into(idx[k], b.inputs.row(b.offsets[k]).data());
                b.labels[k] = int(ex.label.value());
            }
            return b;
        }
        const int arity = target_arity(cfg.task);
        b.inputs = nn::Matrix::Zero(n, Eigen::Index(cfg.max_len) * dim);
        b.targets.resize(n, arity);
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const auto& ex = example(idx[k]);
            const auto n_rows = rows(idx[k]);
            if (n_rows > std::size_t(cfg.max_len))
                throw DataError("example " + std::to_string(ex.id) + " has " + std::to_string(n_rows) +
                                " tokens, max_len is " + std::to_string(cfg.max_len));
            embed_into(idx[k], b.inputs.row(Eigen::Index(k)).data());
            for (int a = 0; a < arity; ++a) b.targets(Eigen::Index(k), a) = ex.targets.at(std::size_t(a));
        }
        return b;
    }

private:
    void embed_into(std::size_t i, double* out) const {
        if (cache_.empty()) {
            provider_->embed_into(example(i), tokens_[i], out);
            return;
        }
        std::copy_n(cache_[i].data(), cache_[i].size(), out);
    }

    const std::vector<Example>* examples_;
    std::vector<TokenSeq> tokens_;
    std::vector<EmbeddingMatrix> cache_;
    std::shared_ptr<const EmbeddingProvider> provider_;
    mutable std::atomic<std::size_t> served_{0};
};

/// A subset of a split addressed by position.
class Subset {
public:
    Subset(const SplitView& view, std::vector<std::size_t> indices, const ProbeConfig& cfg)
        : view_(&view), indices_(std::move(indices)), cfg_(cfg) {}

    std::size_t size() const { return indices_.size(); }

    Batch batch(std::span<const std::size_t> positions) const {
        std::vector<std::size_t> idx(positions.size());
        for (std::size_t k = 0; k < positions.size(); ++k) idx[k] = indices_[positions[k]];
        return view_->make_batch(idx, cfg_);
    }

private:
    const SplitView* view_;
    std::vector<std::size_t> indices_;
    ProbeConfig cfg_;
};

inline std::vector<std::size_t> iota_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t(0));
    return v;
}

/// Mean loss over a whole source, evaluated in chunks.
template <class Model, class Source>
double mean_loss(const Model& model, const Source& src, std::size_t chunk = 1000) {
    double total = 0.0;
    for (std::size_t start = 0; start < src.size(); start += chunk) {
        const std::size_t end = std::min(src.size(), start + chunk);
        std::vector<std::size_t> pos(end - start);
        std::iota(pos.begin(), pos.end(), start);
        total += model.loss(src.batch(pos)) * double(end - start);
    }
    return total / double(src.size());
}

struct FitResult {
    int best_epoch = 0;
    int epochs_run = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::vector<double> val_losses;
    bool diverged = false;
    std::string divergence_reason;
};

/// Mini-batch SGD over `fit` with early stopping on `val`. Restores the
/// parameters of the best validation epoch before returning. Test data is not
/// a parameter here and cannot influence training.
template <class Model, class Source>
FitResult fit_early_stopping(Model& model, const Source& fit, const Source& val, const TrainConfig& cfg,
                             const std::function<void(int, double)>& on_epoch = {}) {
    FitResult res;
    nn::SgdOptions opt{cfg.lr, cfg.momentum, cfg.clip_norm};
    Rng rng(derive_seed(cfg.seed, 2));
    EarlyStopping stopper(cfg.patience);
    std::vector<std::size_t> order = iota_indices(fit.size());
    std::vector<nn::Matrix> best = model.params().snapshot();
    const auto bs = std::size_t(cfg.batch_size);
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        rng.shuffle(std::span(order));
        try {
            for (std::size_t start = 0; start < order.size(); start += bs) {
                const std::size_t end = std::min(order.size(), start + bs);
                const double loss = model.accumulate_gradients(
                    fit.batch(std::span<const std::size_t>(order).subspan(start, end - start)));
                if (!std::isfinite(loss)) throw NonFiniteError("non-finite training loss");
                nn::sgd_step(model.params(), opt);
            }
        } catch (const NonFiniteError& e) {
            res.diverged = true;
            res.divergence_reason = std::string(e.what()) + " in epoch " + std::to_string(epoch);
            res.epochs_run = epoch;
            model.params().zero_grad();
            break;
        }
        const double vloss = mean_loss(model, val);
        res.val_losses.push_back(vloss);
        res.epochs_run = epoch;
        if (on_epoch) on_epoch(epoch, vloss);
        if (!std::isfinite(vloss)) {
            res.diverged = true;
            res.divergence_reason = "non-finite validation loss in epoch " + std::to_string(epoch);
            break;
        }
        const bool stop = stopper.observe(epoch, vloss);
        if (stopper.improved_at(epoch)) best = model.params().snapshot();
        if (stop) break;
    }
    res.best_epoch = stopper.best_epoch();
    res.best_val_loss = stopper.best_loss();
    model.params().restore(best);
    return res;
}

/// Test metric of `model` over every example of `test`.
template <class Model>
double evaluate_metric(const Model& model, const SplitView& test, const ProbeConfig& cfg,
                       std::size_t chunk = 1000) {
    std::vector<double> preds, targets;
    std::vector<int> pred_labels, labels;
    for (std::size_t start = 0; start < test.size(); start += chunk) {
        const std::size_t end = std::min(test.size(), start + chunk);
        std::vector<std::size_t> idx(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const Batch b = test.make_batch(idx, cfg);
        const nn::Matrix out = model.predict(b);
        if (b.is_sequence()) {
            for (Eigen::Index r = 0; r < out.rows(); ++r) {
                pred_labels.push_back(argmax(std::span<const double>(out.row(r).data(), std::size_t(out.cols()))));
                labels.push_back(b.labels[std::size_t(r)]);
            }
        } else {
            // Multi-output tasks pool all outputs into one RMSE.
            for (Eigen::Index i = 0; i < out.size(); ++i) {
                preds.push_back(out.data()[i]);
                targets.push_back(b.targets.data()[i]);
            }
        }
    }
    if (is_classification(cfg.task)) return accuracy(pred_labels, labels);
    return rmse(preds, targets);
}

/// Metric of the constant predictor 0 (class 0 for classification).
inline double predict_zero_metric(TaskKind task, const std::vector<Example>& test) {
    if (is_classification(task)) {
        std::vector<int> zeros(test.size(), 0), labels;
        for (const auto& ex : test) labels.push_back(int(ex.label.value()));
        return accuracy(zeros, labels);
    }
    std::vector<double> targets;
    for (const auto& ex : test) targets.insert(targets.end(), ex.targets.begin(), ex.targets.end());
    const std::vector<double> zeros(targets.size(), 0.0);
    return rmse(zeros, targets);
}

/// Everything one training run reads: the two split views and the probe layout.
struct ProbeData {
    TaskKind task = TaskKind::Percent;
    std::unique_ptr<SplitView> train;
    std::unique_ptr<SplitView> test;
    ProbeConfig probe;
};

/// Tokenizes both splits and derives max_len over train and test for this
/// provider pairing. `test_provider` defaults to `train_provider`.
inline ProbeData make_probe_data(const Dataset& ds, const Vocabulary& vocab,
                                 std::shared_ptr<const EmbeddingProvider> train_provider,
                                 std::shared_ptr<const EmbeddingProvider> test_provider = nullptr,
                                 std::optional<int> hidden_dim = std::nullopt,
                                 std::size_t num_classes = 0) {
    if (!test_provider) test_provider = train_provider;
    if (train_provider->dim() != test_provider->dim())
        throw DataError("train and test embeddings disagree on dim");
    ProbeData d;
    d.task = ds.task;
    d.train = std::make_unique<SplitView>(ds.train, vocab, train_provider);
    d.test = std::make_unique<SplitView>(ds.test, vocab, test_provider);
    const auto max_len = std::max(d.train->max_rows(), d.test->max_rows());
    if (is_classification(ds.task) && num_classes == 0) {
        for (const auto* split : {&ds.train, &ds.test})
            for (const auto& ex : *split) num_classes = std::max(num_classes, ex.label.value() + 1);
    }
    d.probe = ProbeConfig::for_task(ds.task, train_provider->dim(), int(max_len), int(num_classes));
    if (hidden_dim) d.probe.hidden_dim = *hidden_dim;
    d.probe.validate();
    return d;
}

struct RunResult {
    int best_epoch = 0;
    int epochs_run = 0;
    double metric_value = 0.0;
    MetricKind metric = MetricKind::RMSE;
    std::vector<double> val_losses;
    double best_val_loss = 0.0;
    bool diverged = false;
    std::string divergence_reason;
    double wall_seconds = 0.0;
    /// Batches drawn from the test split before final evaluation began (always 0).
    std::size_t test_batches_before_eval = 0;

    bool same_outcome(const RunResult& o) const {
        return best_epoch == o.best_epoch && epochs_run == o.epochs_run && metric_value == o.metric_value &&
               metric == o.metric && val_losses == o.val_losses && diverged == o.diverged;
    }
};

/// Splits the training examples into fit / validation positions.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_fit_validation(
    std::size_t n, double val_fraction, std::uint64_t seed) {
    std::vector<std::size_t> idx = iota_indices(n);
    Rng rng(derive_seed(seed, 1));
    rng.shuffle(std::span(idx));
    auto val_n = std::size_t(std::llround(val_fraction * double(n)));
    val_n = std::clamp<std::size_t>(val_n, 1, n - 1);
    std::vector<std::size_t> val(idx.begin(), idx.begin() + std::ptrdiff_t(val_n));
    std::vector<std::size_t> fit(idx.begin() + std::ptrdiff_t(val_n), idx.end());
    return {std::move(fit), std::move(val)};
}

/// Fits a fresh probe on the training split only (no test evaluation).
inline std::pair<FitResult, std::unique_ptr<Probe>> fit_probe(const ProbeData& data, const TrainConfig& cfg) {
    if (data.train->size() < 2) throw ConfigError("need at least 2 training examples");
    cfg.validate(data.train->size());
    auto [fit_idx, val_idx] = split_fit_validation(data.train->size(), cfg.val_fraction, cfg.seed);
    const Subset fit(*data.train, std::move(fit_idx), data.probe);
    const Subset val(*data.train, std::move(val_idx), data.probe);
    auto model = build_probe(data.probe, derive_seed(cfg.seed, 3));
    FitResult fr = fit_early_stopping(*model, fit, val, cfg);
    return {std::move(fr), std::move(model)};
}

inline RunResult train_probe(const ProbeData& data, const TrainConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    auto [fr, model] = fit_probe(data, cfg);
    RunResult r;
    r.test_batches_before_eval = data.test->batches_served();
    r.best_epoch = fr.best_epoch;
    r.epochs_run = fr.epochs_run;
    r.val_losses = std::move(fr.val_losses);
    r.best_val_loss = fr.best_val_loss;
    r.diverged = fr.diverged;
    r.divergence_reason = fr.divergence_reason;
    r.metric = metric_for(data.task);
    if (r.diverged) {
        std::vector<Example> test;
        for (std::size_t i = 0; i < data.test->size(); ++i) test.push_back(data.test->example(i));
        r.metric_value = predict_zero_metric(data.task, test);
    } else {
        r.metric_value = evaluate_metric(*model, *data.test, data.probe);
    }
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

// ---------------------------------------------------------------------------
// Grid search

inline std::vector<double> default_lr_grid() {
    return {3e-1, 1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5, 3e-6, 1e-6};
}

inline std::vector<double> default_momentum_grid() { return {0.5, 0.7}; }

struct GridCell {
    double lr = 0.0;
    double momentum = 0.0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int epochs_run = 0;
    bool diverged = false;
};

struct GridResult {
    std::vector<GridCell> cells;
    std::size_t best_index = 0;
    TrainConfig best;
};

class GridSearchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Minimum best validation loss among non-diverged cells; ties go to the
/// smaller lr, then the smaller momentum.
inline std::size_t select_best_cell(std::span<const GridCell> cells) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto& c = cells[i];
        if (c.diverged || !std::isfinite(c.best_val_loss)) continue;
        if (!best) {
            best = i;
            continue;
        }
        const auto& b = cells[*best];
        if (c.best_val_loss < b.best_val_loss ||
            (c.best_val_loss == b.best_val_loss &&
             (c.lr < b.lr || (c.lr == b.lr && c.momentum < b.momentum))))
            best = i;
    }
    if (!best) {
        std::string msg = "grid search: every cell diverged:";
        for (const auto& c : cells) msg += " (lr=" + std::to_string(c.lr) + ", momentum=" + std::to_string(c.momentum) + ")";
        throw GridSearchError(msg);
    }
    return *best;
}

/// One fit per (lr, momentum) cell on the training split. Cells run in parallel
/// and are merged in grid order.
inline GridResult grid_search(const ProbeData& data, const TrainConfig& base, const std::vector<double>& lr_grid,
                              const std::vector<double>& momentum_grid, unsigned threads = 1) {
    if (lr_grid.empty() || momentum_grid.empty()) throw ConfigError("grid search: grids must be non-empty");
    GridResult gr;
    for (double lr : lr_grid)
        for (double m : momentum_grid) gr.cells.push_back({lr, m});
    parallel_for(gr.cells.size(), threads, [&](std::size_t i) {
        TrainConfig cfg = base;
        cfg.lr = gr.cells[i].lr;
        cfg.momentum = gr.cells[i].momentum;
        auto [fr, model] = fit_probe(data, cfg);
        gr.cells[i].best_val_loss = fr.best_val_loss;
        gr.cells[i].best_epoch = fr.best_epoch;
        gr.cells[i].epochs_run = fr.epochs_run;
        gr.cells[i].diverged = fr.diverged;
    });
    gr.best_index = select_best_cell(gr.cells);
    gr.best = base;
    gr.best.lr = gr.cells[gr.best_index].lr;
    gr.best.momentum = gr.cells[gr.best_index].momentum;
    return gr;
}

}  // namespace quantprobe
