// Trains the regression probe on the oracle provider for the percent task and
// prints the test RMSE next to the predict-mean baseline.

#include <quantprobe/quantprobe.hpp>

#include <cmath>
#include <cstdio>
#include <numeric>

namespace qp = quantprobe;

int main() {
    const auto ds = qp::generate_dataset(qp::TaskKind::Percent, qp::ValueRange(0.0, 99.9), 7, 2000, 200);
    const auto vocab = qp::build_vocab();
    const auto data = qp::make_probe_data(ds, vocab, std::make_shared<qp::OracleProvider>(16, 7));

    auto cfg = qp::default_train_config(qp::TaskKind::Percent, 7);
    cfg.max_epochs = 60;
    const auto r = qp::train_probe(data, cfg);

    std::vector<double> t;
    for (const auto& ex : ds.test) t.push_back(ex.targets[0]);
    const double mean = std::accumulate(t.begin(), t.end(), 0.0) / double(t.size());
    const std::vector<double> flat(t.size(), mean);

    std::printf("epochs %d (best %d)\n", r.epochs_run, r.best_epoch);
    std::printf("probe rmse        %.5f\n", r.metric_value);
    std::printf("predict-mean rmse %.5f\n", qp::rmse(flat, t));
    return 0;
}
