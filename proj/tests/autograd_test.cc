#include "ansel/autograd.h"

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "ansel/errors.h"
#include "ansel/rng.h"
#include "test_util.h"

namespace ansel {
namespace {

using testing::max_gradient_error;
using testing::random_tensor;

TEST(CrossEntropy, HalfProbabilityIsLn2) {
  Graph g;
  std::vector<int> labels{0};
  LossValue loss = cross_entropy(g.constant(Tensor::matrix({{0.5, 0.5}})), labels);
  EXPECT_NEAR(loss.scalar, 0.693147, 1e-6);
}

TEST(CrossEntropy, PerfectPredictionIsZero) {
  Graph g;
  std::vector<int> labels{1};
  EXPECT_EQ(cross_entropy(g.constant(Tensor::matrix({{0.0, 1.0}})), labels).scalar, 0.0);
}

TEST(CrossEntropy, BatchMean) {
  Graph g;
  std::vector<int> labels{0, 1};
  auto probs = g.constant(Tensor::matrix({{0.5, 0.5}, {0.75, 0.25}}));
  LossValue loss = cross_entropy(probs, labels);
  EXPECT_NEAR(loss.scalar, (std::log(2.0) + std::log(4.0)) / 2, 1e-12);
  EXPECT_NEAR(loss.scalar, 1.039721, 1e-6);
  EXPECT_EQ(loss.batch_size, 2u);
}

TEST(CrossEntropy, ZeroProbabilityIsFloored) {
  Graph g;
  std::vector<int> labels{0};
  LossValue loss = cross_entropy(g.constant(Tensor::matrix({{0.0, 1.0}})), labels);
  EXPECT_NEAR(loss.scalar, -std::log(kProbabilityFloor), 1e-9);
}

TEST(CrossEntropy, NonNegativeOnRandomDistributions) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    Graph g;
    Tensor p = softmax_rows(random_tensor({4, 3}, rng, 5.0));
    std::vector<int> labels{0, 1, 2, 1};
    EXPECT_GE(cross_entropy(g.constant(p), labels).scalar, 0.0);
  }
}

TEST(Backward, SquareHasSlopeTwoX) {
  Parameter x(Tensor::vector({3.0}));
  Graph g;
  Var v = g.parameter(x);
  Var y = sum(multiply(v, v));
  g.backward(y);
  EXPECT_DOUBLE_EQ(x.gradient[0], 6.0);
}

TEST(Backward, UnusedParameterGetsZeroGradient) {
  Parameter used(Tensor::vector({1.0, 2.0}));
  Parameter unused(Tensor::vector({5.0}));
  Graph g;
  Var u = g.parameter(used);
  g.parameter(unused);
  g.backward(sum(u));
  EXPECT_EQ(unused.gradient[0], 0.0);
  EXPECT_EQ(used.gradient[1], 1.0);
}

TEST(Backward, SecondCallThrows) {
  Parameter x(Tensor::vector({1.0}));
  Graph g;
  Var y = sum(g.parameter(x));
  g.backward(y);
  EXPECT_THROW(g.backward(y), GraphError);
}

TEST(Backward, GradientsAccumulateAcrossUses) {
  Parameter x(Tensor::vector({2.0}));
  Graph g;
  Var v = g.parameter(x);
  g.backward(sum(add(v, add(v, v))));
  EXPECT_DOUBLE_EQ(x.gradient[0], 3.0);
}

// Scalar objective sum(op(...) * R) with a fixed random R so every output
// coordinate contributes a distinct weight.
class OpGradient : public ::testing::Test {
 protected:
  Rng rng{99};

  double check(std::vector<Parameter*> inputs, const std::function<Var(Graph&, std::vector<Var>&)>& op) {
    NamedParameters named;
    for (std::size_t i = 0; i < inputs.size(); ++i) named.emplace_back("p" + std::to_string(i), inputs[i]);
    Tensor weights;
    auto loss = [&](bool do_backward) {
      Graph g;
      std::vector<Var> vars;
      for (Parameter* p : inputs) vars.push_back(g.parameter(*p));
      Var out = op(g, vars);
      if (weights.empty()) weights = random_tensor(out.value().shape(), rng);
      Var total = sum(multiply(out, g.constant(weights)));
      if (do_backward) g.backward(total);
      return total.value()[0];
    };
    return max_gradient_error(named, loss);
  }
};

TEST_F(OpGradient, Matmul) {
  Parameter a(random_tensor({3, 4}, rng)), b(random_tensor({4, 2}, rng));
  EXPECT_LT(check({&a, &b}, [](Graph&, auto& v) { return matmul(v[0], v[1]); }), 1e-6);
}

TEST_F(OpGradient, MatmulNt) {
  Parameter a(random_tensor({3, 4}, rng)), b(random_tensor({5, 4}, rng));
  EXPECT_LT(check({&a, &b}, [](Graph&, auto& v) { return matmul_nt(v[0], v[1]); }), 1e-6);
}

TEST_F(OpGradient, RowBiasAndScale) {
  Parameter x(random_tensor({3, 4}, rng)), b(random_tensor({4}, rng));
  EXPECT_LT(check({&x, &b}, [](Graph&, auto& v) { return scale(add_row_bias(v[0], v[1]), -1.7); }),
            1e-6);
}

TEST_F(OpGradient, Softmax) {
  Parameter x(random_tensor({3, 5}, rng, 2.0));
  EXPECT_LT(check({&x}, [](Graph&, auto& v) { return softmax_rows(v[0]); }), 1e-6);
}

TEST_F(OpGradient, Gelu) {
  Parameter x(random_tensor({4, 4}, rng, 2.0));
  EXPECT_LT(check({&x}, [](Graph&, auto& v) { return gelu(v[0]); }), 1e-6);
}

TEST_F(OpGradient, LayerNorm) {
  Parameter x(random_tensor({3, 6}, rng)), gain(random_tensor({6}, rng)), bias(random_tensor({6}, rng));
  EXPECT_LT(check({&x, &gain, &bias},
                  [](Graph&, auto& v) { return layer_norm(v[0], v[1], v[2]); }),
            1e-5);
}

TEST_F(OpGradient, GatherConcatSlice) {
  Parameter table(random_tensor({5, 3}, rng)), other(random_tensor({4, 2}, rng));
  EXPECT_LT(check({&table, &other},
                  [](Graph&, auto& v) {
                    static const std::vector<int> ids{4, 0, 4, 2};
                    std::vector<Var> cols{gather_rows(v[0], ids), v[1]};
                    Var joined = concat_cols(cols);
                    std::vector<Var> rows{slice_cols(joined, 1, 4), slice_cols(joined, 0, 3)};
                    return concat_rows(rows);
                  }),
            1e-6);
}

TEST_F(OpGradient, CrossEntropyOfSoftmax) {
  Parameter logits(random_tensor({4, 2}, rng));
  NamedParameters named{{"logits", &logits}};
  std::vector<int> labels{1, 0, 0, 1};
  auto loss = [&](bool do_backward) {
    Graph g;
    LossValue l = cross_entropy(softmax_rows(g.parameter(logits)), labels);
    if (do_backward) backward(l);
    return l.scalar;
  };
  EXPECT_LT(max_gradient_error(named, loss), 1e-6);
}

TEST(Dropout, ZeroRateIsIdentity) {
  Rng rng(1);
  Graph g;
  Tensor x = random_tensor({3, 3}, rng);
  EXPECT_EQ(dropout(g.constant(x), 0.0, rng).value(), x);
}

TEST(Dropout, KeptUnitsAreRescaled) {
  Rng rng(2);
  Graph g;
  Tensor x = Tensor::filled({50, 20}, 1.0);
  Tensor y = dropout(g.constant(x), 0.25, rng).value();
  std::size_t dropped = 0;
  for (double v : y.data()) {
    if (v == 0.0) {
      ++dropped;
    } else {
      EXPECT_DOUBLE_EQ(v, 1.0 / 0.75);
    }
  }
  EXPECT_NEAR(static_cast<double>(dropped) / y.size(), 0.25, 0.05);
}

}  // namespace
}  // namespace ansel
