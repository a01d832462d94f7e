#include <quantprobe/gradcheck.hpp>
#include <quantprobe/probes.hpp>
#include <quantprobe/synthgen.hpp>

#include <gtest/gtest.h>

#include <cmath>

namespace qp = quantprobe;
namespace nn = quantprobe::nn;

TEST(ProbeConfig, ArityFollowsTask) {
    EXPECT_EQ(qp::ProbeConfig::for_task(qp::TaskKind::Percent, 8, 3).output_arity, 1);
    EXPECT_EQ(qp::ProbeConfig::for_task(qp::TaskKind::Range, 8, 3).output_arity, 2);
    EXPECT_EQ(qp::ProbeConfig::for_task(qp::TaskKind::UnitId, 8, 3, 173).output_arity, 173);
    EXPECT_EQ(qp::ProbeConfig::for_task(qp::TaskKind::Range, 8, 3).hidden_dim, 50);
    EXPECT_EQ(qp::ProbeConfig::for_task(qp::TaskKind::UnitId, 8, 3, 173).hidden_dim, 5);
    EXPECT_EQ(qp::ProbeConfig::for_task(qp::TaskKind::Order, 8, 3).hidden_dim, 100);
    EXPECT_THROW(qp::ProbeConfig::for_task(qp::TaskKind::UnitId, 8, 3, 1).validate(), qp::ConfigError);
    auto bad = qp::ProbeConfig::for_task(qp::TaskKind::Percent, 8, 3);
    bad.max_len = 0;
    EXPECT_THROW(bad.validate(), qp::ConfigError);
}

TEST(MlpProbe, ParameterCount) {
    // Percent at 768 dims, 5 tokens ("99.9%"): 3840*100+100 + 100*100+100 + 100+1.
    const auto cfg = qp::ProbeConfig::for_task(qp::TaskKind::Percent, 768, 5);
    qp::MlpProbe p(cfg, 1);
    EXPECT_EQ(p.params().scalar_count(), 394301u);
}

TEST(BiLstmProbe, ParameterCount) {
    const auto cfg = qp::ProbeConfig::for_task(qp::TaskKind::UnitId, 10, 6, 7);
    qp::BiLstmProbe p(cfg, 1);
    const std::size_t per_dir = 10 * 20 + 5 * 20 + 20;
    EXPECT_EQ(p.params().scalar_count(), 2 * per_dir + 10 * 7 + 7);
    EXPECT_TRUE(p.params()[2].value.middleCols(5, 5).isConstant(1.0));
}

TEST(MlpProbe, OutputShapeAndLoss) {
    auto cfg = qp::ProbeConfig::for_task(qp::TaskKind::Range, 4, 2);
    qp::MlpProbe p(cfg, 1);
    for (auto& prm : p.params()) prm.value.setZero();
    qp::Batch b;
    b.inputs = nn::Matrix::Ones(3, 8);
    b.targets = nn::Matrix::Zero(3, 2);
    EXPECT_EQ(p.predict(b).rows(), 3);
    EXPECT_EQ(p.predict(b).cols(), 2);
    EXPECT_EQ(p.loss(b), 0.0);
    // Outputs (0.5, 1.5) against zero targets: 0.25 + 2.25 for the Range head.
    p.params()[5].value << 0.5, 1.5;
    EXPECT_DOUBLE_EQ(p.loss(b), 2.5);
}

TEST(BiLstmProbe, UniformLogitsGiveLogC) {
    const auto cfg = qp::ProbeConfig::for_task(qp::TaskKind::UnitId, 4, 3, 6);
    qp::BiLstmProbe p(cfg, 1);
    p.params()[6].value.setZero();
    p.params()[7].value.setZero();
    qp::Rng rng(1);
    const auto b = qp::random_probe_batch(cfg, 5, rng);
    EXPECT_NEAR(p.loss(b), std::log(6.0), 1e-12);
    const auto probs = p.predict(b);
    EXPECT_NEAR(probs.row(0).sum(), 1.0, 1e-12);
}

TEST(PadAndFlatten, Cases) {
    nn::Matrix m(2, 3);
    m << 1, 2, 3, 4, 5, 6;
    const auto f = qp::pad_and_flatten(m, 3);
    ASSERT_EQ(f.cols(), 9);
    EXPECT_TRUE(f.leftCols(6) == (nn::Matrix(1, 6) << 1, 2, 3, 4, 5, 6).finished());
    EXPECT_TRUE(f.rightCols(3).isZero(0.0));
    EXPECT_EQ(qp::pad_and_flatten(m, 2).cols(), 6);
    EXPECT_THROW(qp::pad_and_flatten(m, 1), qp::DataError);
}

TEST(GradCheck, EveryArchitecture) {
    for (auto task : qp::kAllTasks) {
        const auto cfg = [&] {
            auto c = qp::ProbeConfig::for_task(task, 8, 3, 3);
            c.hidden_dim = 4;
            return c;
        }();
        for (std::uint64_t inst = 0; inst < 5; ++inst) {
            qp::Rng rng(100 + inst);
            auto probe = qp::build_probe(cfg, inst);
            const auto batch = qp::random_probe_batch(cfg, 4, rng);
            const auto r = qp::check_probe_gradients(*probe, batch, 1e-5);
            EXPECT_LE(r.max_rel_error, 1e-4) << qp::task_name(task) << " instance " << inst << " " << r.worst_param;
            EXPECT_EQ(r.checked, probe->params().scalar_count());
        }
    }
}

TEST(MlpProbe, ZeroPaddingDoesNotMoveOutputs) {
    const auto cfg = qp::ProbeConfig::for_task(qp::TaskKind::Percent, 3, 4);
    qp::MlpProbe p(cfg, 2);
    qp::Batch a;
    a.inputs = nn::Matrix::Zero(1, 12);
    a.inputs.leftCols(6) << 1, 2, 3, 4, 5, 6;
    a.targets = nn::Matrix::Zero(1, 1);
    // Weights on padded positions are irrelevant when the padded rows are zero.
    const double before = p.predict(a)(0, 0);
    p.params()[0].value.bottomRows(6).setRandom();
    EXPECT_EQ(p.predict(a)(0, 0), before);
}

TEST(BuildProbe, DeterministicInit) {
    const auto cfg = qp::ProbeConfig::for_task(qp::TaskKind::UnitId, 4, 3, 5);
    auto a = qp::build_probe(cfg, 9), b = qp::build_probe(cfg, 9), c = qp::build_probe(cfg, 10);
    EXPECT_TRUE(a->params()[0].value == b->params()[0].value);
    EXPECT_FALSE(a->params()[0].value == c->params()[0].value);
    EXPECT_NE(dynamic_cast<qp::BiLstmProbe*>(a.get()), nullptr);
    EXPECT_NE(dynamic_cast<qp::MlpProbe*>(qp::build_probe(qp::ProbeConfig::for_task(qp::TaskKind::Order, 4, 3), 1).get()), nullptr);
}
