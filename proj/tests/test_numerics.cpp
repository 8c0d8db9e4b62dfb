#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hdlm/autodiff.hpp"
#include "hdlm/errors.hpp"
#include "hdlm/grad_check.hpp"
#include "test_util.hpp"

namespace {

using namespace hdlm;
using namespace hdlm::num;
using hdlm::testing::naive_matmul;
using hdlm::testing::naive_rms;
using hdlm::testing::random_tensor;

TEST(Matmul, IdentityAndZero) {
  std::mt19937_64 rng(1);
  const Tensor b = random_tensor({3, 2}, rng);
  Tape tape;
  EXPECT_TRUE(bitwise_equal(matmul(tape.constant(Tensor::identity(3)), tape.constant(b)).value(), b));
  const Tensor z = matmul(tape.constant(Tensor::zeros({2, 2})), tape.constant(random_tensor({2, 2}, rng))).value();
  for (double v : z.storage()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor a = random_tensor({4, 5}, rng), b = random_tensor({5, 3}, rng);
    Tape tape;
    EXPECT_LT(max_abs_diff(matmul(tape.constant(a), tape.constant(b)).value(), naive_matmul(a, b)), 1e-12);
  }
}

TEST(Matmul, ShapeMismatch) {
  Tape tape;
  EXPECT_THROW(matmul(tape.constant(Tensor::zeros({2, 3})), tape.constant(Tensor::zeros({2, 3}))), DimensionError);
}

TEST(Matmul, TransposedVariant) {
  std::mt19937_64 rng(3);
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({5, 4}, rng);
  Tensor bt({4, 5});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) bt.at(j, i) = b.at(i, j);
  Tape tape;
  EXPECT_LT(max_abs_diff(matmul_nt(tape.constant(a), tape.constant(b)).value(), naive_matmul(a, bt)), 1e-12);
}

TEST(Softmax, Examples) {
  Tape tape;
  const Tensor s = softmax_rows(tape.constant(Tensor({3, 2}, {1000, 1000, 0, std::log(3.0), -5, -5}))).value();
  EXPECT_DOUBLE_EQ(s.at(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(s.at(0, 1), 0.5);
  EXPECT_NEAR(s.at(1, 0), 0.25, 1e-15);
  EXPECT_NEAR(s.at(1, 1), 0.75, 1e-15);
  const Tensor u = softmax_rows(tape.constant(Tensor::zeros({1, 4}))).value();
  for (double v : u.storage()) EXPECT_EQ(v, 0.25);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({3, 7}, rng, 5.0);
    Tape tape;
    const Tensor s = softmax_rows(tape.constant(x)).value();
    for (std::size_t r = 0; r < 3; ++r) {
      double total = 0;
      std::size_t arg = 0, arg_x = 0;
      for (std::size_t c = 0; c < 7; ++c) {
        EXPECT_GE(s.at(r, c), 0.0);
        total += s.at(r, c);
        if (s.at(r, c) > s.at(r, arg)) arg = c;
        if (x.at(r, c) > x.at(r, arg_x)) arg_x = c;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
      EXPECT_EQ(arg, arg_x);
    }
    Tensor shifted = x;
    for (std::size_t c = 0; c < 7; ++c) shifted.at(1, c) += 123.0;
    EXPECT_LT(max_abs_diff(softmax_rows(tape.constant(shifted)).value(), s), 1e-12);
  }
}

TEST(Softmax, MaskedEntriesAreExactlyZero) {
  std::mt19937_64 rng(5);
  Tape tape;
  const Tensor s = masked_softmax_rows(tape.constant(random_tensor({4, 4}, rng)), causal_mask(4)).value();
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = i + 1; j < 4; ++j) EXPECT_EQ(s.at(i, j), 0.0);
  }
  EXPECT_EQ(s.at(0, 0), 1.0);
}

TEST(RmsNorm, Examples) {
  Tape tape;
  const Tensor ones = Tensor::filled({1, 6}, 1.0);
  const Tensor y = rms_norm(tape.constant(ones), tape.constant(Tensor::filled({6}, 1.0))).value();
  for (double v : y.storage()) EXPECT_NEAR(v, 1.0 / std::sqrt(1.0 + kRmsNormEps), 1e-15);

  std::mt19937_64 rng(6);
  const Tensor x = random_tensor({3, 6}, rng);
  const Tensor g = random_tensor({6}, rng);
  const Tensor out = rms_norm(tape.constant(x), tape.constant(g)).value();
  for (std::size_t r = 0; r < 3; ++r) {
    const auto ref = naive_rms(x.row(r), g.data());
    for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(out.at(r, c), ref[c], 1e-12);
  }

  // Scale invariance up to the eps term.
  Tensor x7 = x;
  for (double& v : x7.storage()) v *= 7.0;
  EXPECT_LT(max_abs_diff(rms_norm(tape.constant(x7), tape.constant(g)).value(), out), 1e-4);
}

TEST(CrossEntropy, UniformIsLogV) {
  Tape tape;
  const std::vector<int> targets{5, 63, 0};
  const std::vector<std::uint8_t> active{1, 1, 1};
  const double l = cross_entropy(tape.constant(Tensor::zeros({3, 64})), targets, active).value().item();
  EXPECT_NEAR(l, std::log(64.0), 1e-12);
  EXPECT_NEAR(l, 4.1589, 1e-4);
}

TEST(CrossEntropy, SaturatedIsZero) {
  Tape tape;
  Tensor logits = Tensor::zeros({2, 5});
  logits.at(0, 3) = 1e6;
  logits.at(1, 1) = 1e6;
  const std::vector<int> targets{3, 1};
  const std::vector<std::uint8_t> active{1, 1};
  EXPECT_EQ(cross_entropy(tape.constant(logits), targets, active).value().item(), 0.0);
}

TEST(CrossEntropy, HandCase) {
  Tape tape;
  const Tensor logits({2, 3}, {1.0, 2.0, 3.0, 0.5, -1.0, 0.0});
  const std::vector<int> targets{0, 2};
  const std::vector<std::uint8_t> active{1, 1};
  const double l0 = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 1.0;
  const double l1 = std::log(std::exp(0.5) + std::exp(-1.0) + std::exp(0.0)) - 0.0;
  EXPECT_NEAR(cross_entropy(tape.constant(logits), targets, active).value().item(), (l0 + l1) / 2, 1e-10);
  const std::vector<std::uint8_t> first{1, 0};
  EXPECT_NEAR(cross_entropy(tape.constant(logits), targets, first).value().item(), l0, 1e-10);
}

TEST(CrossEntropy, AllInactiveThrows) {
  Tape tape;
  const std::vector<int> targets{0, 1};
  const std::vector<std::uint8_t> none{0, 0};
  EXPECT_THROW(cross_entropy(tape.constant(Tensor::zeros({2, 3})), targets, none), Error);
}

TEST(Backward, LinearAndAnnihilator) {
  std::mt19937_64 rng(7);
  Tape tape;
  const Var x = tape.leaf(random_tensor({2, 3}, rng), true);
  tape.backward(sum(x));
  const Tensor gx = tape.grad(x);
  for (double v : gx.storage()) EXPECT_EQ(v, 1.0);

  Tape t2;
  const Var y = t2.leaf(random_tensor({2, 3}, rng), true);
  t2.backward(sum(scale(y, 0.0)));
  const Tensor gy = t2.grad(y);
  for (double v : gy.storage()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, UnusedLeafHasZeroGradient) {
  Tape tape;
  const Var x = tape.leaf(Tensor::filled({2}, 1.0), true);
  const Var unused = tape.leaf(Tensor::filled({3}, 1.0), true);
  tape.backward(sum(x));
  const Tensor g = tape.grad(unused);
  ASSERT_EQ(g.size(), 3u);
  for (double v : g.storage()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, LossFromAnotherTapeOrNonScalar) {
  Tape a, b;
  const Var x = a.leaf(Tensor::filled({2}, 1.0), true);
  EXPECT_THROW(b.backward(sum(x)), UsageError);
  EXPECT_THROW(a.backward(x), UsageError);
}

TEST(Backward, Deterministic) {
  std::mt19937_64 rng(8);
  const Tensor w = random_tensor({4, 4}, rng), x = random_tensor({3, 4}, rng);
  auto run = [&] {
    Tape tape;
    const Var wv = tape.leaf(w, true);
    const Var h = gelu(matmul(tape.constant(x), wv));
    tape.backward(sum(softmax_rows(h)));
    return tape.grad(wv);
  };
  EXPECT_TRUE(bitwise_equal(run(), run()));
}

TEST(GradCheck, Square) {
  const auto r = grad_check([](Tape&, std::span<const Var> in) { return sum(matmul(in[0], in[0])); },
                            {Tensor({1, 1}, {3.0})});
  EXPECT_NEAR(r.analytic, 6.0, 1e-12);
  EXPECT_NEAR(r.numeric, 6.0, 1e-8);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradCheck, SoftmaxCrossEntropyComposite) {
  std::mt19937_64 rng(9);
  const std::vector<int> targets{1, 4};
  const std::vector<std::uint8_t> active{1, 1};
  const auto r = grad_check(
      [&](Tape&, std::span<const Var> in) { return cross_entropy(in[0], targets, active); },
      {random_tensor({2, 5}, rng)});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(GradCheck, InactivePositionsGetExactZero) {
  std::mt19937_64 rng(10);
  const std::vector<int> targets{1, 4, 2};
  const std::vector<std::uint8_t> active{1, 0, 1};
  const auto r = grad_check(
      [&](Tape&, std::span<const Var> in) { return cross_entropy(in[0], targets, active); },
      {random_tensor({3, 5}, rng)});
  for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(r.gradients[0].at(1, c), 0.0);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

// Every differentiable op on randomized small shapes.
class OpGradients : public ::testing::TestWithParam<int> {};

TEST_P(OpGradients, AllOpsPass) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  for (const auto& [name, r] : hdlm::testing::op_gradient_checks(seed)) {
    EXPECT_LT(r.max_rel_error, 1e-4) << name << " seed " << seed << " analytic " << r.analytic << " numeric "
                                     << r.numeric;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradients, ::testing::Range(0, 100));

TEST(Detach, BlocksGradient) {
  Tape tape;
  const Var x = tape.leaf(Tensor::filled({1, 2}, 2.0), true);
  tape.backward(sum(add(detach(x), scale(x, 0.0))));
  const Tensor g = tape.grad(x);
  for (double v : g.storage()) EXPECT_EQ(v, 0.0);
}

TEST(Rope, PositionZeroIsIdentityAndNormPreserved) {
  std::mt19937_64 rng(11);
  const Tensor x = random_tensor({3, 8}, rng);
  Tape tape;
  const std::vector<std::size_t> pos{0, 5, 17};
  const Tensor y = rope(tape.constant(x), pos, 4).value();
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(y.at(0, c), x.at(0, c));
  for (std::size_t r = 1; r < 3; ++r) {
    std::vector<double> ref(x.row(r).begin(), x.row(r).end());
    hdlm::testing::naive_rope(ref, pos[r], 4);
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(y.at(r, c), ref[c], 1e-12);
  }
}

}  // namespace
