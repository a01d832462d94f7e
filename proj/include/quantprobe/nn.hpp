#pragma once

// Small differentiable kernel for the probe networks. Forward functions are
// pure; backward functions accumulate parameter gradients into the supplied
// buffers and return the gradient with respect to their input.

#include <quantprobe/errors.hpp>
#include <quantprobe/rng.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace quantprobe::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::string shape_str(const Matrix& m) {
    return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// ---------------------------------------------------------------------------
// Dense: y = x w + b, x (n x in), w (in x out), b (1 x out)

inline Matrix dense_forward(const Matrix& x, const Matrix& w, const Matrix& b) {
    if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols())
        throw ShapeError("dense: incompatible shapes x" + shape_str(x) + " w" + shape_str(w) +
                         " b" + shape_str(b));
    Matrix y = x * w;
    y.rowwise() += b.row(0);
    return y;
}

inline Matrix dense_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix& dw,
                             Matrix& db) {
    if (dy.rows() != x.rows() || dy.cols() != w.cols())
        throw ShapeError("dense backward: dy" + shape_str(dy) + " vs x" + shape_str(x) + " w" +
                         shape_str(w));
    require_same_shape(dw, w, "dense backward dw");
    dw.noalias() += x.transpose() * dy;
    db.row(0) += dy.colwise().sum();
    return dy * w.transpose();
}

// ---------------------------------------------------------------------------
// ReLU. The subgradient at 0 is 0.

inline Matrix relu_forward(const Matrix& x) { return x.cwiseMax(0.0); }

inline Matrix relu_backward(const Matrix& x, const Matrix& dy) {
    require_same_shape(x, dy, "relu backward");
    return (x.array() > 0.0).select(dy, 0.0);
}

// ---------------------------------------------------------------------------
// Losses

struct LossGrad {
    double loss = 0.0;
    Matrix grad;  // d loss / d prediction
};

/// Mean over all entries of (pred - target)^2.
inline LossGrad mse(const Matrix& pred, const Matrix& target) {
    require_same_shape(pred, target, "mse");
    if (pred.size() == 0) throw ShapeError("mse: empty input");
    const Matrix diff = pred - target;
    const double n = double(pred.size());
    return {diff.squaredNorm() / n, diff * (2.0 / n)};
}

/// Sum over columns of the per-column MSE (one column per output head).
inline LossGrad summed_mse(const Matrix& pred, const Matrix& target) {
    require_same_shape(pred, target, "summed_mse");
    if (pred.rows() == 0) throw ShapeError("summed_mse: empty batch");
    const Matrix diff = pred - target;
    const double n = double(pred.rows());
    return {diff.squaredNorm() / n, diff * (2.0 / n)};
}

/// Row-wise softmax computed with the max-shift.
inline Matrix softmax(const Matrix& logits) {
    Matrix p = logits;
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
        p.row(r).array() -= p.row(r).maxCoeff();
        p.row(r) = p.row(r).array().exp();
        p.row(r) /= p.row(r).sum();
    }
    return p;
}

/// Mean categorical cross-entropy over rows.
inline LossGrad softmax_xent(const Matrix& logits, std::span<const int> labels) {
    if (std::size_t(logits.rows()) != labels.size() || logits.rows() == 0)
        throw ShapeError("softmax_xent: logits" + shape_str(logits) + " vs " +
                         std::to_string(labels.size()) + " labels");
    const double n = double(logits.rows());
    LossGrad out{0.0, softmax(logits)};
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const int y = labels[std::size_t(r)];
        if (y < 0 || y >= logits.cols())
            throw ShapeError("softmax_xent: label " + std::to_string(y) + " outside " +
                             std::to_string(logits.cols()) + " classes");
        const double m = logits.row(r).maxCoeff();
        const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
        out.loss += lse - logits(r, y);
        out.grad(r, y) -= 1.0;
    }
    out.loss /= n;
    out.grad /= n;
    return out;
}

// ---------------------------------------------------------------------------
// LSTM recurrence. Gate columns are laid out [input | forget | cell | output],
// each `hidden` wide. The input projection x*Wx + b is computed by the caller
// (so whole batches can share one matrix product) and passed in as `xw`.

struct LstmTrace {
    Matrix gates;  // T x 4h, post-activation
    Matrix c;      // (T+1) x h, row 0 = initial state
    Matrix h;      // (T+1) x h
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline LstmTrace lstm_recur_forward(const Matrix& xw, const Matrix& wh) {
    const Eigen::Index hidden = wh.rows();
    if (wh.cols() != 4 * hidden || xw.cols() != 4 * hidden)
        throw ShapeError("lstm: xw" + shape_str(xw) + " wh" + shape_str(wh));
    const Eigen::Index steps = xw.rows();
    LstmTrace tr{Matrix(steps, 4 * hidden), Matrix::Zero(steps + 1, hidden),
                 Matrix::Zero(steps + 1, hidden)};
    for (Eigen::Index t = 0; t < steps; ++t) {
        const Matrix z = xw.row(t) + tr.h.row(t) * wh;
        for (Eigen::Index k = 0; k < hidden; ++k) {
            const double i = sigmoid(z(0, k));
            const double f = sigmoid(z(0, hidden + k));
            const double g = std::tanh(z(0, 2 * hidden + k));
            const double o = sigmoid(z(0, 3 * hidden + k));
            tr.gates(t, k) = i;
            tr.gates(t, hidden + k) = f;
            tr.gates(t, 2 * hidden + k) = g;
            tr.gates(t, 3 * hidden + k) = o;
            tr.c(t + 1, k) = f * tr.c(t, k) + i * g;
            tr.h(t + 1, k) = o * std::tanh(tr.c(t + 1, k));
        }
    }
    return tr;
}

/// Backpropagates a gradient on the final hidden state through time.
/// Accumulates into dwh and returns d loss / d xw (T x 4h).
inline Matrix lstm_recur_backward(const LstmTrace& tr, const Matrix& wh, const Matrix& dh_last,
                                  Matrix& dwh) {
    const Eigen::Index hidden = wh.rows();
    const Eigen::Index steps = tr.gates.rows();
    if (dh_last.rows() != 1 || dh_last.cols() != hidden)
        throw ShapeError("lstm backward: dh" + shape_str(dh_last) + " for hidden " +
                         std::to_string(hidden));
    require_same_shape(dwh, wh, "lstm backward dwh");
    Matrix dz(steps, 4 * hidden);
    Matrix dh = dh_last;
    Matrix dc = Matrix::Zero(1, hidden);
    for (Eigen::Index t = steps - 1; t >= 0; --t) {
        for (Eigen::Index k = 0; k < hidden; ++k) {
            const double i = tr.gates(t, k);
            const double f = tr.gates(t, hidden + k);
            const double g = tr.gates(t, 2 * hidden + k);
            const double o = tr.gates(t, 3 * hidden + k);
            const double tc = std::tanh(tr.c(t + 1, k));
            const double dout = dh(0, k) * tc;
            const double dcell = dc(0, k) + dh(0, k) * o * (1.0 - tc * tc);
            dz(t, k) = dcell * g * i * (1.0 - i);
            dz(t, hidden + k) = dcell * tr.c(t, k) * f * (1.0 - f);
            dz(t, 2 * hidden + k) = dcell * i * (1.0 - g * g);
            dz(t, 3 * hidden + k) = dout * o * (1.0 - o);
            dc(0, k) = dcell * f;
        }
        dwh.noalias() += tr.h.row(t).transpose() * dz.row(t);
        dh = dz.row(t) * wh.transpose();
    }
    return dz;
}

struct LstmWeights {
    const Matrix& wx;  // in x 4h
    const Matrix& wh;  // h x 4h
    const Matrix& b;   // 1 x 4h
};

struct LstmGrads {
    Matrix& wx;
    Matrix& wh;
    Matrix& b;
};

struct BiLstmOutput {
    Matrix features;  // 1 x 2h: [final forward state | final backward state]
    LstmTrace fwd;
    LstmTrace bwd;
};

/// Bidirectional LSTM over one sequence (T x in). The backward direction reads
/// the rows in reverse; its final state is the one reached at row 0.
inline BiLstmOutput bilstm_forward(const Matrix& seq, const LstmWeights& f, const LstmWeights& b) {
    if (seq.rows() < 1) throw ShapeError("bilstm: empty sequence");
    const Matrix rev = seq.colwise().reverse();
    BiLstmOutput out{Matrix(), lstm_recur_forward(dense_forward(seq, f.wx, f.b), f.wh),
                     lstm_recur_forward(dense_forward(rev, b.wx, b.b), b.wh)};
    const Eigen::Index h = f.wh.rows();
    out.features.resize(1, 2 * h);
    out.features.leftCols(h) = out.fwd.h.bottomRows(1);
    out.features.rightCols(h) = out.bwd.h.bottomRows(1);
    return out;
}

/// Returns d loss / d seq and accumulates all weight gradients.
inline Matrix bilstm_backward(const Matrix& seq, const BiLstmOutput& fwd_pass, const LstmWeights& f,
                              const LstmWeights& b, const Matrix& dfeatures, LstmGrads gf,
                              LstmGrads gb) {
    const Eigen::Index h = f.wh.rows();
    if (dfeatures.rows() != 1 || dfeatures.cols() != 2 * h)
        throw ShapeError("bilstm backward: dfeatures" + shape_str(dfeatures));
    const Matrix rev = seq.colwise().reverse();
    const Matrix dz_f = lstm_recur_backward(fwd_pass.fwd, f.wh, dfeatures.leftCols(h), gf.wh);
    const Matrix dz_b = lstm_recur_backward(fwd_pass.bwd, b.wh, dfeatures.rightCols(h), gb.wh);
    Matrix dseq = dense_backward(seq, f.wx, dz_f, gf.wx, gf.b);
    const Matrix drev = dense_backward(rev, b.wx, dz_b, gb.wx, gb.b);
    dseq += drev.colwise().reverse();
    return dseq;
}

// ---------------------------------------------------------------------------
// Parameters and optimizer

struct Param {
    std::string name;
    Matrix value;
    Matrix grad;
    Matrix velocity;
};

/// Named parameters with matching gradient and momentum buffers.
class ParamSet {
public:
    std::size_t add(std::string name, Matrix init) {
        Param p{std::move(name), std::move(init), {}, {}};
        p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
        p.velocity = Matrix::Zero(p.value.rows(), p.value.cols());
        params_.push_back(std::move(p));
        return params_.size() - 1;
    }

    Param& operator[](std::size_t i) { return params_[i]; }
    const Param& operator[](std::size_t i) const { return params_[i]; }
    std::size_t size() const { return params_.size(); }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += std::size_t(p.value.size());
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.grad.setZero();
    }

    double grad_norm() const {
        double sq = 0.0;
        for (const auto& p : params_) sq += p.grad.squaredNorm();
        return std::sqrt(sq);
    }

    std::vector<Matrix> snapshot() const {
        std::vector<Matrix> out;
        out.reserve(params_.size());
        for (const auto& p : params_) out.push_back(p.value);
        return out;
    }

    void restore(const std::vector<Matrix>& values) {
        if (values.size() != params_.size()) throw ShapeError("restore: parameter count mismatch");
        for (std::size_t i = 0; i < params_.size(); ++i) {
            require_same_shape(params_[i].value, values[i], "restore");
            params_[i].value = values[i];
        }
    }

private:
    std::vector<Param> params_;
};

struct SgdOptions {
    double lr = 0.01;
    double momentum = 0.5;
    double clip_norm = 5.0;
};

/// Clips gradients to global L2 norm `clip_norm`, applies classical momentum
/// (v = m v + g; w -= lr v) and zeroes the gradients. Returns the pre-clip norm.
inline double sgd_step(ParamSet& params, const SgdOptions& opt) {
    const double norm = params.grad_norm();
    if (!std::isfinite(norm)) throw NonFiniteError("non-finite gradient norm in sgd_step");
    const double scale = (opt.clip_norm > 0.0 && norm > opt.clip_norm) ? opt.clip_norm / norm : 1.0;
    for (auto& p : params) {
        p.velocity = opt.momentum * p.velocity + scale * p.grad;
        p.value -= opt.lr * p.velocity;
        p.grad.setZero();
    }
    return norm;
}

// ---------------------------------------------------------------------------
// Initializers

inline Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
    return m;
}

}  // namespace quantprobe::nn
