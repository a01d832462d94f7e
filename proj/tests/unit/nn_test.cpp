#include <quantprobe/nn.hpp>
#include <quantprobe/gradcheck.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

namespace qp = quantprobe;
namespace nn = quantprobe::nn;

namespace {

nn::Matrix mat(Eigen::Index r, Eigen::Index c, std::initializer_list<double> v) {
    nn::Matrix m(r, c);
    std::copy(v.begin(), v.end(), m.data());
    return m;
}

nn::Matrix rand_mat(Eigen::Index r, Eigen::Index c, qp::Rng& rng) { return nn::uniform_matrix(r, c, 1.0, rng); }

// Central differences of a scalar function with respect to every entry of x.
nn::Matrix numeric_grad(nn::Matrix& x, const std::function<double()>& f, double h = 1e-5) {
    nn::Matrix g(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double saved = x.data()[i];
        x.data()[i] = saved + h;
        const double up = f();
        x.data()[i] = saved - h;
        const double down = f();
        x.data()[i] = saved;
        g.data()[i] = (up - down) / (2 * h);
    }
    return g;
}

double max_rel(const nn::Matrix& a, const nn::Matrix& n) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) worst = std::max(worst, qp::relative_error(a.data()[i], n.data()[i]));
    return worst;
}

}  // namespace

TEST(Relu, Examples) {
    const auto x = mat(1, 3, {-1.0, 0.0, 2.5});
    EXPECT_TRUE(nn::relu_forward(x) == mat(1, 3, {0.0, 0.0, 2.5}));
    EXPECT_TRUE(nn::relu_backward(x, mat(1, 3, {1, 1, 1})) == mat(1, 3, {0, 0, 1}));
}

TEST(Mse, Examples) {
    EXPECT_DOUBLE_EQ(nn::mse(mat(2, 1, {1, 2}), mat(2, 1, {1, 2})).loss, 0.0);
    EXPECT_DOUBLE_EQ(nn::mse(mat(2, 1, {0, 0}), mat(2, 1, {1, 3})).loss, 5.0);
    // Two outputs, each with squared error summed then averaged over the batch.
    EXPECT_DOUBLE_EQ(nn::summed_mse(mat(1, 2, {0.5, 1.5}), mat(1, 2, {0.0, 0.0})).loss, 0.25 + 2.25);
    EXPECT_DOUBLE_EQ(nn::summed_mse(mat(1, 2, {1.0, 2.0}), mat(1, 2, {0.0, 0.0})).loss, 5.0);
    EXPECT_THROW(nn::mse(mat(2, 1, {0, 0}), mat(1, 2, {0, 0})), qp::ShapeError);
}

TEST(Xent, UniformLogitsGiveLogC) {
    const std::vector<int> labels{0, 2};
    EXPECT_NEAR(nn::softmax_xent(nn::Matrix::Zero(2, 5), labels).loss, std::log(5.0), 1e-12);
    const std::vector<int> bad{0, 7};
    EXPECT_THROW(nn::softmax_xent(nn::Matrix::Zero(2, 5), bad), qp::ShapeError);
}

TEST(Xent, StableForLargeLogits) {
    const std::vector<int> labels{0};
    const auto lg = nn::softmax_xent(mat(1, 2, {1000.0, 0.0}), labels);
    EXPECT_TRUE(std::isfinite(lg.loss));
    EXPECT_NEAR(lg.loss, 0.0, 1e-12);
    const auto sm = nn::softmax(mat(1, 3, {1e4, 1e4, -1e4}));
    EXPECT_NEAR(sm(0, 0), 0.5, 1e-12);
}

TEST(GradCheck, Dense) {
    qp::Rng rng(1);
    nn::Matrix x = rand_mat(4, 3, rng), w = rand_mat(3, 2, rng), b = rand_mat(1, 2, rng);
    const nn::Matrix t = rand_mat(4, 2, rng);
    nn::Matrix dw = nn::Matrix::Zero(3, 2), db = nn::Matrix::Zero(1, 2);
    const auto f = [&] { return nn::mse(nn::dense_forward(x, w, b), t).loss; };
    const auto lg = nn::mse(nn::dense_forward(x, w, b), t);
    const nn::Matrix dx = nn::dense_backward(x, w, lg.grad, dw, db);
    EXPECT_LT(max_rel(dw, numeric_grad(w, f)), 1e-6);
    EXPECT_LT(max_rel(db, numeric_grad(b, f)), 1e-6);
    EXPECT_LT(max_rel(dx, numeric_grad(x, f)), 1e-6);
}

TEST(GradCheck, ReluAndLosses) {
    qp::Rng rng(2);
    nn::Matrix x = rand_mat(5, 3, rng);
    const nn::Matrix t = rand_mat(5, 3, rng);
    const auto f = [&] { return nn::mse(nn::relu_forward(x), t).loss; };
    const auto lg = nn::mse(nn::relu_forward(x), t);
    EXPECT_LT(max_rel(nn::relu_backward(x, lg.grad), numeric_grad(x, f)), 1e-6);

    nn::Matrix p = rand_mat(4, 2, rng);
    const nn::Matrix q = rand_mat(4, 2, rng);
    EXPECT_LT(max_rel(nn::summed_mse(p, q).grad, numeric_grad(p, [&] { return nn::summed_mse(p, q).loss; })), 1e-6);

    nn::Matrix logits = rand_mat(3, 4, rng);
    const std::vector<int> labels{1, 3, 0};
    const auto xg = nn::softmax_xent(logits, labels).grad;
    EXPECT_LT(max_rel(xg, numeric_grad(logits, [&] { return nn::softmax_xent(logits, labels).loss; })), 1e-6);
}

TEST(GradCheck, BiLstm) {
    qp::Rng rng(3);
    const Eigen::Index in = 3, h = 2;
    nn::Matrix seq = rand_mat(4, in, rng);
    nn::Matrix fwx = rand_mat(in, 4 * h, rng), fwh = rand_mat(h, 4 * h, rng), fb = rand_mat(1, 4 * h, rng);
    nn::Matrix bwx = rand_mat(in, 4 * h, rng), bwh = rand_mat(h, 4 * h, rng), bb = rand_mat(1, 4 * h, rng);
    const nn::Matrix target = rand_mat(1, 2 * h, rng);
    const nn::LstmWeights f{fwx, fwh, fb}, b{bwx, bwh, bb};
    const auto loss = [&] { return nn::mse(nn::bilstm_forward(seq, f, b).features, target).loss; };

    const auto pass = nn::bilstm_forward(seq, f, b);
    const auto lg = nn::mse(pass.features, target);
    nn::Matrix gfwx = nn::Matrix::Zero(in, 4 * h), gfwh = nn::Matrix::Zero(h, 4 * h), gfb = nn::Matrix::Zero(1, 4 * h);
    nn::Matrix gbwx = gfwx, gbwh = gfwh, gbb = gfb;
    const nn::Matrix dseq =
        nn::bilstm_backward(seq, pass, f, b, lg.grad, {gfwx, gfwh, gfb}, {gbwx, gbwh, gbb});
    EXPECT_LT(max_rel(dseq, numeric_grad(seq, loss)), 1e-6);
    EXPECT_LT(max_rel(gfwx, numeric_grad(fwx, loss)), 1e-6);
    EXPECT_LT(max_rel(gfwh, numeric_grad(fwh, loss)), 1e-6);
    EXPECT_LT(max_rel(gfb, numeric_grad(fb, loss)), 1e-6);
    EXPECT_LT(max_rel(gbwx, numeric_grad(bwx, loss)), 1e-6);
    EXPECT_LT(max_rel(gbwh, numeric_grad(bwh, loss)), 1e-6);
    EXPECT_LT(max_rel(gbb, numeric_grad(bb, loss)), 1e-6);
}

TEST(BiLstm, BackwardDirectionReadsReversed) {
    qp::Rng rng(4);
    const nn::Matrix seq = rand_mat(3, 2, rng);
    const nn::Matrix wx = rand_mat(2, 4, rng), wh = rand_mat(1, 4, rng), b = rand_mat(1, 4, rng);
    const nn::LstmWeights w{wx, wh, b};
    const auto out = nn::bilstm_forward(seq, w, w);
    const auto rev = nn::bilstm_forward(seq.colwise().reverse(), w, w);
    // With shared weights, reversing the input swaps the two halves.
    EXPECT_NEAR(out.features(0, 0), rev.features(0, 1), 1e-14);
    EXPECT_NEAR(out.features(0, 1), rev.features(0, 0), 1e-14);
}

TEST(Sgd, PlainStep) {
    nn::ParamSet ps;
    ps.add("w", mat(1, 1, {1.0}));
    ps[0].grad(0, 0) = 1.0;
    nn::sgd_step(ps, {0.1, 0.0, 5.0});
    EXPECT_NEAR(ps[0].value(0, 0), 0.9, 1e-15);
    EXPECT_EQ(ps[0].grad(0, 0), 0.0);
}

TEST(Sgd, MomentumAccumulates) {
    nn::ParamSet ps;
    ps.add("w", mat(1, 1, {0.0}));
    // Constant gradient 1, lr 1, momentum 0.5: steps 1, 1.5 -> total 2.5.
    for (int i = 0; i < 2; ++i) {
        ps[0].grad(0, 0) = 1.0;
        nn::sgd_step(ps, {1.0, 0.5, 5.0});
    }
    EXPECT_NEAR(ps[0].value(0, 0), -2.5, 1e-15);
}

TEST(Sgd, ClipsGlobalNorm) {
    nn::ParamSet ps;
    ps.add("a", mat(1, 1, {0.0}));
    ps.add("b", mat(1, 1, {0.0}));
    ps[0].grad(0, 0) = 30.0;
    ps[1].grad(0, 0) = 40.0;
    EXPECT_DOUBLE_EQ(nn::sgd_step(ps, {1.0, 0.0, 5.0}), 50.0);
    // Scaled to norm 5, direction preserved.
    EXPECT_NEAR(ps[0].value(0, 0), -3.0, 1e-12);
    EXPECT_NEAR(ps[1].value(0, 0), -4.0, 1e-12);

    ps[0].grad(0, 0) = 3.0;
    ps[1].grad(0, 0) = 4.0;
    nn::sgd_step(ps, {1.0, 0.0, 5.0});
    EXPECT_NEAR(ps[0].value(0, 0), -6.0, 1e-12);

    ps[0].grad(0, 0) = std::nan("");
    EXPECT_THROW(nn::sgd_step(ps, {1.0, 0.0, 5.0}), qp::NonFiniteError);
}

TEST(Sgd, ClippedNormNeverExceedsBound) {
    qp::Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        nn::ParamSet ps;
        ps.add("a", nn::Matrix::Zero(3, 4));
        ps.add("b", nn::Matrix::Zero(1, 4));
        const double scale = std::pow(10.0, rng.uniform(-2.0, 3.0));
        for (auto& p : ps) p.grad = nn::uniform_matrix(p.grad.rows(), p.grad.cols(), scale, rng);
        nn::sgd_step(ps, {1.0, 0.0, 5.0});
        double sq = 0.0;
        for (const auto& p : ps) sq += p.value.squaredNorm();
        EXPECT_LE(std::sqrt(sq), 5.0 + 1e-9);
    }
}

TEST(Sgd, LinearProbeLossNonIncreasing) {
    qp::Rng rng(6);
    const nn::Matrix x = rand_mat(64, 4, rng);
    const nn::Matrix w_true = rand_mat(4, 1, rng);
    const nn::Matrix y = x * w_true;
    nn::ParamSet ps;
    ps.add("w", nn::Matrix::Zero(4, 1));
    ps.add("b", nn::Matrix::Zero(1, 1));
    double prev = std::numeric_limits<double>::infinity();
    for (int step = 0; step < 50; ++step) {
        const auto lg = nn::mse(nn::dense_forward(x, ps[0].value, ps[1].value), y);
        EXPECT_LE(lg.loss, prev + 1e-12) << "step " << step;
        prev = lg.loss;
        nn::dense_backward(x, ps[0].value, lg.grad, ps[0].grad, ps[1].grad);
        nn::sgd_step(ps, {0.05, 0.0, 5.0});
    }
    EXPECT_LT(prev, 0.05);
}

TEST(ParamSet, SnapshotRestore) {
    nn::ParamSet ps;
    ps.add("w", mat(1, 2, {1, 2}));
    const auto snap = ps.snapshot();
    ps[0].value.setZero();
    ps.restore(snap);
    EXPECT_TRUE(ps[0].value == mat(1, 2, {1, 2}));
    EXPECT_EQ(ps.scalar_count(), 2u);
    EXPECT_THROW(ps.restore({}), qp::ShapeError);
}
