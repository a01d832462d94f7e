#pragma once

// Central finite-difference checks of analytic probe gradients.

#include <quantprobe/nn.hpp>
#include <quantprobe/probes.hpp>
#include <quantprobe/rng.hpp>

#include <algorithm>
#include <cmath>
#include <string>

namespace quantprobe {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t checked = 0;
};

/// |a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from
/// dividing rounding noise by nothing.
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares every parameter gradient of `probe` on `batch` against central
/// differences of probe.loss() with step h.
inline GradCheckResult check_probe_gradients(Probe& probe, const Batch& batch, double h = 1e-5) {
    auto& params = probe.params();
    params.zero_grad();
    probe.accumulate_gradients(batch);
    GradCheckResult res;
    for (auto& p : params) {
        for (Eigen::Index i = 0; i < p.value.size(); ++i) {
            double& w = p.value.data()[i];
            const double saved = w;
            w = saved + h;
            const double up = probe.loss(batch);
            w = saved - h;
            const double down = probe.loss(batch);
            w = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double err = relative_error(p.grad.data()[i], numeric);
            ++res.checked;
            if (err > res.max_rel_error) {
                res.max_rel_error = err;
                res.worst_param = p.name + "[" + std::to_string(i) + "]";
            }
        }
    }
    params.zero_grad();
    return res;
}

/// Random batch for a probe config: regression inputs with `rows_used` live
/// token rows per example (rest zero padding), or sequences of random length
/// in [1, max_len] for the classifier.
inline Batch random_probe_batch(const ProbeConfig& cfg, std::size_t batch_size, Rng& rng) {
    Batch b;
    const Eigen::Index dim = cfg.embed_dim;
    if (is_classification(cfg.task)) {
        b.offsets.push_back(0);
        for (std::size_t e = 0; e < batch_size; ++e)
            b.offsets.push_back(b.offsets.back() + 1 + Eigen::Index(rng.uniform_index(std::uint64_t(cfg.max_len))));
        b.inputs = nn::uniform_matrix(b.offsets.back(), dim, 1.0, rng);
        for (std::size_t e = 0; e < batch_size; ++e)
            b.labels.push_back(int(rng.uniform_index(std::uint64_t(cfg.output_arity))));
        return b;
    }
    b.inputs = nn::Matrix::Zero(Eigen::Index(batch_size), Eigen::Index(cfg.max_len) * dim);
    for (std::size_t e = 0; e < batch_size; ++e) {
        const auto rows = 1 + Eigen::Index(rng.uniform_index(std::uint64_t(cfg.max_len)));
        for (Eigen::Index c = 0; c < rows * dim; ++c) b.inputs(Eigen::Index(e), c) = rng.uniform(-1.0, 1.0);
    }
    b.targets = nn::uniform_matrix(Eigen::Index(batch_size), cfg.output_arity, 1.0, rng);
    return b;
}

}  // namespace quantprobe
