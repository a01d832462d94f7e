#pragma once

// The three probe architectures: an MLP regressor (one or two outputs) over
// the zero-padded, flattened token embeddings, and a BiLSTM classifier over the
// unpadded token sequence.

#include <quantprobe/embeddings.hpp>
#include <quantprobe/errors.hpp>
#include <quantprobe/nn.hpp>
#include <quantprobe/rng.hpp>
#include <quantprobe/synthgen.hpp>

#include <cmath>
#include <memory>
#include <vector>

namespace quantprobe {

/// Hidden width used by default for each task.
inline int default_hidden_dim(TaskKind task) {
    switch (task) {
    case TaskKind::Range: return 50;
    case TaskKind::UnitId: return 5;
    default: return 100;
    }
}

struct ProbeConfig {
    TaskKind task = TaskKind::Percent;
    int embed_dim = 768;
    int max_len = 1;
    int hidden_dim = 100;
    int output_arity = 1;  // regression outputs, or class count for UnitId

    static ProbeConfig for_task(TaskKind task, int embed_dim, int max_len, int num_classes = 0) {
        ProbeConfig c;
        c.task = task;
        c.embed_dim = embed_dim;
        c.max_len = max_len;
        c.hidden_dim = default_hidden_dim(task);
        c.output_arity = is_classification(task) ? num_classes : target_arity(task);
        return c;
    }

    void validate() const {
        if (embed_dim <= 0 || max_len <= 0 || hidden_dim <= 0)
            throw ConfigError("probe config: embed_dim, max_len and hidden_dim must be > 0");
        if (is_classification(task) ? output_arity < 2 : output_arity != target_arity(task))
            throw ConfigError("probe config: output arity " + std::to_string(output_arity) +
                              " does not fit task " + std::string(task_name(task)));
    }
};

/// One mini-batch. Regression probes read `inputs` as B x (max_len * dim)
/// flattened rows; the sequence probe reads it as the stacked token rows of
/// all examples, example b occupying rows [offsets[b], offsets[b+1]).
struct Batch {
    nn::Matrix inputs;
    std::vector<Eigen::Index> offsets;
    nn::Matrix targets;  // B x arity
    std::vector<int> labels;

    std::size_t size() const { return is_sequence() ? offsets.size() - 1 : std::size_t(inputs.rows()); }
    bool is_sequence() const { return !offsets.empty(); }
};

/// Right-pads with zero rows to max_len and flattens row-major.
inline nn::Matrix pad_and_flatten(const EmbeddingMatrix& m, int max_len) {
    if (m.rows() > max_len)
        throw DataError("embedding has " + std::to_string(m.rows()) + " rows, max_len is " +
                        std::to_string(max_len));
    nn::Matrix out = nn::Matrix::Zero(1, Eigen::Index(max_len) * m.cols());
    std::copy_n(m.data(), m.size(), out.data());
    return out;
}

class Probe {
public:
    virtual ~Probe() = default;

    const ProbeConfig& config() const { return config_; }
    nn::ParamSet& params() { return params_; }
    const nn::ParamSet& params() const { return params_; }

    /// Mean loss over the batch; no gradient side effects.
    virtual double loss(const Batch& batch) const = 0;

    /// Adds d loss / d params to the gradient buffers and returns the loss.
    virtual double accumulate_gradients(const Batch& batch) = 0;

    /// Regression outputs (B x arity), or class probabilities (B x classes).
    virtual nn::Matrix predict(const Batch& batch) const = 0;

protected:
    explicit Probe(ProbeConfig config) : config_(config) { config_.validate(); }

    ProbeConfig config_;
    nn::ParamSet params_;
};

/// dense -> ReLU -> dense -> ReLU -> dense, linear outputs.
class MlpProbe final : public Probe {
public:
    MlpProbe(const ProbeConfig& config, std::uint64_t seed) : Probe(config) {
        Rng rng(derive_seed(seed, 0x3D1));
        const Eigen::Index in = Eigen::Index(config.max_len) * config.embed_dim;
        const Eigen::Index h = config.hidden_dim;
        const Eigen::Index out = config.output_arity;
        auto layer = [&](const char* w, const char* b, Eigen::Index fan_in, Eigen::Index fan_out) {
            const double bound = 1.0 / std::sqrt(double(fan_in));
            params_.add(w, nn::uniform_matrix(fan_in, fan_out, bound, rng));
            params_.add(b, nn::uniform_matrix(1, fan_out, bound, rng));
        };
        layer("fc1.w", "fc1.b", in, h);
        layer("fc2.w", "fc2.b", h, h);
        layer("fc3.w", "fc3.b", h, out);
    }

    double loss(const Batch& batch) const override { return loss_of(forward(batch).out, batch.targets); }

    double accumulate_gradients(const Batch& batch) override {
        const Trace t = forward(batch);
        const nn::LossGrad lg = loss_grad(t.out, batch.targets);
        auto& p = params_;
        nn::Matrix d = nn::dense_backward(t.a2, p[W3].value, lg.grad, p[W3].grad, p[B3].grad);
        d = nn::relu_backward(t.z2, d);
        d = nn::dense_backward(t.a1, p[W2].value, d, p[W2].grad, p[B2].grad);
        d = nn::relu_backward(t.z1, d);
        // Input gradient is never needed: embeddings are frozen.
        p[W1].grad.noalias() += batch.inputs.transpose() * d;
        p[B1].grad.row(0) += d.colwise().sum();
        return lg.loss;
    }

    nn::Matrix predict(const Batch& batch) const override { return forward(batch).out; }

private:
    enum : std::size_t { W1, B1, W2, B2, W3, B3 };

    struct Trace {
        nn::Matrix z1, a1, z2, a2, out;
    };

    Trace forward(const Batch& batch) const {
        if (batch.is_sequence()) throw ShapeError("mlp probe given a sequence batch");
        const auto& p = params_;
        Trace t;
        t.z1 = nn::dense_forward(batch.inputs, p[W1].value, p[B1].value);
        t.a1 = nn::relu_forward(t.z1);
        t.z2 = nn::dense_forward(t.a1, p[W2].value, p[B2].value);
        t.a2 = nn::relu_forward(t.z2);
        t.out = nn::dense_forward(t.a2, p[W3].value, p[B3].value);
        return t;
    }

    nn::LossGrad loss_grad(const nn::Matrix& out, const nn::Matrix& targets) const {
        return config_.output_arity == 1 ? nn::mse(out, targets) : nn::summed_mse(out, targets);
    }

    double loss_of(const nn::Matrix& out, const nn::Matrix& targets) const {
        return loss_grad(out, targets).loss;
    }
};

/// BiLSTM over the token rows; final states of both directions feed a
/// softmax classifier.
class BiLstmProbe final : public Probe {
public:
    BiLstmProbe(const ProbeConfig& config, std::uint64_t seed) : Probe(config) {
        Rng rng(derive_seed(seed, 0xB15));
        const Eigen::Index d = config.embed_dim;
        const Eigen::Index h = config.hidden_dim;
        const double bound = 1.0 / std::sqrt(double(h));
        for (const char* dir : {"fwd", "bwd"}) {
            const std::string pre = std::string("lstm.") + dir;
            params_.add(pre + ".wx", nn::uniform_matrix(d, 4 * h, bound, rng));
            params_.add(pre + ".wh", nn::uniform_matrix(h, 4 * h, bound, rng));
            nn::Matrix b = nn::uniform_matrix(1, 4 * h, bound, rng);
            b.middleCols(h, h).setConstant(1.0);  // forget gate
            params_.add(pre + ".b", std::move(b));
        }
        const double out_bound = 1.0 / std::sqrt(double(2 * h));
        params_.add("out.w", nn::uniform_matrix(2 * h, config.output_arity, out_bound, rng));
        params_.add("out.b", nn::uniform_matrix(1, config.output_arity, out_bound, rng));
    }

    double loss(const Batch& batch) const override {
        const Trace t = forward(batch);
        return nn::softmax_xent(t.logits, batch.labels).loss;
    }

    double accumulate_gradients(const Batch& batch) override {
        const Trace t = forward(batch);
        const nn::LossGrad lg = nn::softmax_xent(t.logits, batch.labels);
        auto& p = params_;
        const Eigen::Index h = config_.hidden_dim;
        const nn::Matrix dfeat = nn::dense_backward(t.features, p[OW].value, lg.grad, p[OW].grad, p[OB].grad);
        // Columns [0, 4h) belong to the forward direction, [4h, 8h) to the backward one.
        nn::Matrix dz(batch.inputs.rows(), 8 * h);
        for (std::size_t e = 0; e < batch.size(); ++e) {
            const Eigen::Index o = batch.offsets[e];
            const Eigen::Index len = batch.offsets[e + 1] - o;
            dz.block(o, 0, len, 4 * h) =
                nn::lstm_recur_backward(t.fwd[e], p[FWH].value, dfeat.row(Eigen::Index(e)).leftCols(h), p[FWH].grad);
            dz.block(o, 4 * h, len, 4 * h) =
                nn::lstm_recur_backward(t.bwd[e], p[BWH].value, dfeat.row(Eigen::Index(e)).rightCols(h), p[BWH].grad)
                    .colwise()
                    .reverse();
        }
        const nn::Matrix dwx = batch.inputs.transpose() * dz;
        p[FWX].grad += dwx.leftCols(4 * h);
        p[BWX].grad += dwx.rightCols(4 * h);
        const nn::Matrix db = dz.colwise().sum();
        p[FB].grad += db.leftCols(4 * h);
        p[BB].grad += db.rightCols(4 * h);
        return lg.loss;
    }

    nn::Matrix predict(const Batch& batch) const override { return nn::softmax(forward(batch).logits); }

private:
    enum : std::size_t { FWX, FWH, FB, BWX, BWH, BB, OW, OB };

    struct Trace {
        std::vector<nn::LstmTrace> fwd, bwd;
        nn::Matrix features, logits;
    };

    Trace forward(const Batch& batch) const {
        if (!batch.is_sequence()) throw ShapeError("bilstm probe needs a sequence batch");
        const auto& p = params_;
        const Eigen::Index h = config_.hidden_dim;
        // One product for both directions' input projections.
        nn::Matrix wx(config_.embed_dim, 8 * h), bias(1, 8 * h);
        wx << p[FWX].value, p[BWX].value;
        bias << p[FB].value, p[BB].value;
        const nn::Matrix z = nn::dense_forward(batch.inputs, wx, bias);
        Trace t;
        const std::size_t n = batch.size();
        t.fwd.reserve(n);
        t.bwd.reserve(n);
        t.features.resize(Eigen::Index(n), 2 * h);
        for (std::size_t e = 0; e < n; ++e) {
            const Eigen::Index o = batch.offsets[e];
            const Eigen::Index len = batch.offsets[e + 1] - o;
            if (len < 1) throw ShapeError("bilstm probe: empty sequence in batch");
            t.fwd.push_back(nn::lstm_recur_forward(z.block(o, 0, len, 4 * h), p[FWH].value));
            t.bwd.push_back(nn::lstm_recur_forward(z.block(o, 4 * h, len, 4 * h).colwise().reverse(), p[BWH].value));
            t.features.row(Eigen::Index(e)).leftCols(h) = t.fwd.back().h.bottomRows(1);
            t.features.row(Eigen::Index(e)).rightCols(h) = t.bwd.back().h.bottomRows(1);
        }
        t.logits = nn::dense_forward(t.features, p[OW].value, p[OB].value);
        return t;
    }
};

inline std::unique_ptr<Probe> build_probe(const ProbeConfig& config, std::uint64_t seed) {
    if (is_classification(config.task)) return std::make_unique<BiLstmProbe>(config, seed);
    return std::make_unique<MlpProbe>(config, seed);
}

}  // namespace quantprobe
