#include <gtest/gtest.h>

#include <cmath>

#include "tabncd/nn.hpp"
#include "support.hpp"

using namespace tabncd;
using tabncd::test_support::code_of;

namespace {

ArchitectureSpec arch(std::size_t in, std::vector<LayerSpec> hidden) { return {in, std::move(hidden)}; }

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, -1, 1);
  return m;
}

}  // namespace

TEST(Init, SameSeedSameParameters) {
  const auto spec = arch(3, {{4, Activation::ReLU, 0.0}});
  const Mlp a = init_mlp(spec, {{"out", 2}}, 7);
  const Mlp b = init_mlp(spec, {{"out", 2}}, 7);
  EXPECT_EQ(save_checkpoint(a), save_checkpoint(b));
  EXPECT_EQ(a.trunk[0].weight, b.trunk[0].weight);
  const Mlp c = init_mlp(spec, {{"out", 2}}, 8);
  EXPECT_NE(a.trunk[0].weight, c.trunk[0].weight);
}

TEST(Init, BiasesZeroAndGlorotBound) {
  const Mlp m = init_mlp(arch(3, {{4, Activation::ReLU, 0.0}, {5, Activation::Tanh, 0.0}}), {{"h", 2}}, 1);
  for (const auto& l : m.trunk) EXPECT_TRUE((l.bias.array() == 0.0).all());
  EXPECT_TRUE((m.head("h").bias.array() == 0.0).all());
  const double bound = std::sqrt(6.0 / (3.0 + 4.0));
  EXPECT_NEAR(bound, 0.9258, 5e-5);
  EXPECT_LE(m.trunk[0].weight.cwiseAbs().maxCoeff(), bound);
  EXPECT_EQ(m.trunk[0].weight.rows(), 4);
  EXPECT_EQ(m.trunk[0].weight.cols(), 3);
}

TEST(Forward, ZeroWeightsGiveZeroOutput) {
  Mlp m = init_mlp(arch(3, {{4, Activation::ReLU, 0.0}}), {{"out", 2, Activation::None}}, 1);
  m.trunk[0].weight.setZero();
  m.heads["out"].weight.setZero();
  const auto [out, emb] = forward(m, random_matrix(5, 3, 2), "out", Mode::Eval);
  EXPECT_TRUE((out.array() == 0.0).all());
  EXPECT_TRUE((emb.array() == 0.0).all());
}

TEST(Forward, NoDropoutTrainEqualsEval) {
  const Mlp m = init_mlp(arch(3, {{6, Activation::Tanh, 0.0}, {4, Activation::ReLU, 0.0}}), {{"out", 2}}, 3);
  const Matrix x = random_matrix(7, 3, 4);
  Rng rng = make_rng(9);
  EXPECT_EQ(forward(m, x, "out", Mode::Train, &rng).first, forward(m, x, "out", Mode::Eval).first);
}

TEST(Forward, HandComputedReluUnit) {
  Mlp m = init_mlp(arch(1, {{1, Activation::ReLU, 0.0}}), {}, 1);
  m.trunk[0].weight(0, 0) = 2.0;
  m.trunk[0].bias(0) = 1.0;
  Matrix x(1, 1);
  x << -3.0;
  EXPECT_EQ(embed(m, x)(0, 0), 0.0);  // max(0, 2*(-3)+1)
  x << 1.5;
  EXPECT_EQ(embed(m, x)(0, 0), 4.0);
}

TEST(Forward, ErrorsOnUnknownHeadAndShape) {
  const Mlp m = init_mlp(arch(3, {{4, Activation::ReLU, 0.0}}), {{"out", 2}}, 1);
  EXPECT_EQ(code_of([&] { forward(m, random_matrix(2, 3, 1), "nope", Mode::Eval); }), ErrorCode::UnknownHead);
  EXPECT_EQ(code_of([&] { embed(m, random_matrix(2, 4, 1)); }), ErrorCode::ShapeError);
}

TEST(Embed, IdentityTrunk) {
  Mlp m = init_mlp(arch(3, {{3, Activation::None, 0.0}}), {}, 1);
  m.trunk[0].weight = Matrix::Identity(3, 3);
  const Matrix x = random_matrix(4, 3, 5);
  EXPECT_EQ(embed(m, x), x);
}

TEST(Embed, WidthAndDuplicateRows) {
  const Mlp m = init_mlp(arch(2, {{8, Activation::ReLU, 0.0}, {5, Activation::Sigmoid, 0.0}}), {}, 4);
  Matrix x = random_matrix(6, 2, 6);
  x.row(3) = x.row(1);
  const Matrix z = embed(m, x);
  EXPECT_EQ(z.cols(), 5);
  EXPECT_EQ(z.row(3), z.row(1));
  EXPECT_EQ(embed(m, x), z);
}

TEST(Dropout, InvertedScalingPreservesMean) {
  Mlp m = init_mlp(arch(1, {{1, Activation::None, 0.5}}), {}, 1);
  m.trunk[0].weight(0, 0) = 1.0;
  Matrix x = Matrix::Constant(100000, 1, 3.0);
  Rng rng = make_rng(21);
  const Matrix train = forward_pass(m, x, {}, &rng).embedding;
  const double eval = embed(m, x.topRows(1))(0, 0);
  EXPECT_NEAR(train.mean(), eval, 0.02 * eval);
  EXPECT_TRUE(((train.array() == 0.0) || (train.array() == 6.0)).all());
}

TEST(Loss, CrossEntropyUniformLogitsIsLogC) {
  for (std::size_t c : {2u, 3u, 7u}) {
    const Matrix logits = Matrix::Constant(4, static_cast<Eigen::Index>(c), 0.3);
    const auto v = cross_entropy(logits, one_hot({0, 1, 0, 1}, c));
    EXPECT_NEAR(v.value, std::log(static_cast<double>(c)), 1e-12);
  }
}

TEST(Loss, CrossEntropyStableForLargeLogits) {
  Matrix logits(2, 3);
  logits << 1000, -1000, 0, -1000, 1000, 999;
  const auto v = cross_entropy(logits, one_hot({1, 2}, 3));
  EXPECT_TRUE(std::isfinite(v.value));
  EXPECT_TRUE(v.grad.allFinite());
  EXPECT_NEAR(v.value, (2000.0 + (1.0 + std::log1p(std::exp(-1.0)))) / 2.0, 1e-9);
}

TEST(Loss, BceClampKeepsSaturatedOutputsFinite) {
  Matrix p(1, 2);
  p << 0.0, 1.0;
  Matrix y(1, 2);
  y << 1.0, 0.0;
  const auto v = bce(p, y);
  EXPECT_TRUE(std::isfinite(v.value));
  EXPECT_NEAR(v.value, -std::log(1e-12), 1e-3);
}

TEST(Train, SingleLinearUnitSgdStep) {
  Mlp m = init_mlp(arch(1, {}), {{"y", 1, Activation::None}}, 1);
  m.heads["y"].weight(0, 0) = 0.5;
  m.heads["y"].bias(0) = 0.1;
  Batch b;
  b.x = Matrix::Constant(1, 1, 2.0);
  b.targets["y"] = Matrix::Constant(1, 1, 1.0);
  OptimizerConfig sgd;
  sgd.kind = OptimizerKind::Sgd;
  Optimizer opt(sgd, 0.1);
  Rng rng = make_rng(1);
  train_epoch(m, {b}, Loss::single("y", LossKind::Mse), opt, rng);
  // dL/dw = 2(wx+b-y)x = 0.4, dL/db = 0.2
  EXPECT_NEAR(m.heads["y"].weight(0, 0), 0.46, 1e-15);
  EXPECT_NEAR(m.heads["y"].bias(0), 0.08, 1e-15);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  EXPECT_NO_THROW(cfg.validate());
  Mlp m = init_mlp(arch(3, {{5, Activation::ReLU, 0.0}}), {{"c", 3}}, 2);
  const std::string before = save_checkpoint(m);
  Batch b;
  b.x = random_matrix(8, 3, 3);
  b.targets["c"] = one_hot({0, 1, 2, 0, 1, 2, 0, 1}, 3);
  const Loss loss = Loss::single("c", LossKind::CrossEntropy);
  const double eval = evaluation_loss(m, loss, b);
  for (auto kind : {OptimizerKind::Adam, OptimizerKind::Sgd}) {
    OptimizerConfig oc;
    oc.kind = kind;
    Optimizer opt(oc, cfg.learning_rate);
    Rng rng = make_rng(4);
    const double epoch = train_epoch(m, {b}, loss, opt, rng);
    EXPECT_EQ(save_checkpoint(m), before);
    EXPECT_DOUBLE_EQ(epoch, eval);
  }
}

TEST(Train, ConfigRejectsZeroEpochs) {
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_EQ(code_of([&] { cfg.validate(); }), ErrorCode::BadConfig);
}

TEST(Train, NonFiniteLossDiverges) {
  Mlp m = init_mlp(arch(2, {{3, Activation::ReLU, 0.0}}), {{"y", 1}}, 1);
  Batch b;
  b.x = Matrix::Constant(2, 2, std::numeric_limits<double>::infinity());
  b.targets["y"] = Matrix::Zero(2, 1);
  Optimizer opt({}, 1e-3);
  Rng rng = make_rng(1);
  EXPECT_EQ(code_of([&] { train_epoch(m, {b}, Loss::single("y", LossKind::Mse), opt, rng); }),
            ErrorCode::DivergedError);
}

TEST(Train, BatchesKeepLastPartialBatch) {
  Rng rng = make_rng(5);
  const auto batches = make_batches(random_matrix(10, 2, 1), {}, 4, rng);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[2].x.rows(), 2);
}

TEST(Train, BitReproducible) {
  auto run = [] {
    Mlp m = init_mlp(arch(3, {{8, Activation::ReLU, 0.2}, {4, Activation::Tanh, 0.0}}), {{"c", 2}}, 11);
    const Matrix x = random_matrix(40, 3, 12);
    std::vector<int> y(40);
    for (int i = 0; i < 40; ++i) y[i] = x(i, 0) > 0;
    Optimizer opt({}, 1e-2);
    Rng rng = make_rng(13);
    for (int e = 0; e < 5; ++e) {
      auto batches = make_batches(x, {{"c", one_hot(y, 2)}}, 16, rng);
      train_epoch(m, batches, Loss::single("c", LossKind::CrossEntropy), opt, rng);
    }
    return save_checkpoint(m);
  };
  EXPECT_EQ(run(), run());
}

TEST(Gradients, MatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const auto c = test_support::random_grad_case(seed);
    const auto r = test_support::check_gradients(c.mlp, c.loss, c.batch, seed);
    EXPECT_GT(r.pass_rate(), 0.99) << c.description << " worst " << r.worst;
  }
}

TEST(Gradients, CompositeLossWeightsTerms) {
  const auto c = test_support::random_grad_case(3);
  Loss doubled = c.loss;
  for (auto& t : doubled.terms) t.weight *= 2.0;
  const auto pass = forward_pass(c.mlp, c.batch.x, c.loss.heads(), nullptr);
  EXPECT_NEAR(evaluate_loss(pass, doubled, c.batch).value, 2.0 * evaluate_loss(pass, c.loss, c.batch).value, 1e-12);
}

TEST(Checkpoint, RoundTripIsExact) {
  const Mlp m = init_mlp(arch(4, {{6, Activation::Sigmoid, 0.1}, {3, Activation::Tanh, 0.0}}),
                         {{"a", 2, Activation::None}, {"b", 4, Activation::Sigmoid}}, 17);
  const std::string text = save_checkpoint(m);
  const Mlp back = load_checkpoint(text);
  EXPECT_EQ(save_checkpoint(back), text);
  const Matrix x = random_matrix(5, 4, 18);
  EXPECT_EQ(forward(back, x, "b", Mode::Eval).first, forward(m, x, "b", Mode::Eval).first);
  EXPECT_EQ(back.trunk[0].dropout_rate, 0.1);
}

TEST(Checkpoint, RejectsGarbage) {
  EXPECT_THROW(load_checkpoint("not a checkpoint"), Error);
}

TEST(Activation, ParseNames) {
  EXPECT_EQ(parse_activation("relu"), Activation::ReLU);
  EXPECT_EQ(parse_activation("linear"), Activation::None);
  EXPECT_EQ(code_of([] { parse_activation("swish"); }), ErrorCode::BadConfig);
}
