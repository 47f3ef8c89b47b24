#include "gradcheck.hpp"

#include "best/optim.hpp"

#include <gtest/gtest.h>

#include <deque>
#include <random>

using namespace best;
using best::testing::check_gradients;
using best::testing::random_matrix;

namespace {

struct Bag {
  std::deque<std::pair<std::string, ag::Var<double>>> params;  // stable references

  ag::Var<double>& add(const std::string& name, Matrix<double> v) {
    params.emplace_back(name, ag::parameter<double>(std::move(v)));
    return params.back().second;
  }
  template <typename F>
  void visit(F&& f) {
    for (auto& [n, v] : params) f(n, v);
  }
};

ag::Var<double> weighted_sum(const ag::Var<double>& x, std::uint64_t seed) {
  // random projection so every output entry matters
  return ag::sum_all(ag::hadamard(x, ag::constant<double>(random_matrix<double>(x.rows(), x.cols(), seed))));
}

void expect_ok(Bag& bag, const std::function<ag::Var<double>()>& f) {
  auto rep = check_gradients(bag, f, 64);
  EXPECT_TRUE(rep.ok()) << describe(rep);
}

}  // namespace

TEST(Autograd, ElementwiseAndMatmul) {
  Bag b;
  auto& a = b.add("a", random_matrix<double>(3, 4, 1));
  auto& c = b.add("c", random_matrix<double>(3, 4, 2));
  auto& w = b.add("w", random_matrix<double>(4, 5, 3));
  auto& v = b.add("v", random_matrix<double>(2, 4, 4));
  expect_ok(b, [&] {
    auto x = ag::add(ag::hadamard(a, c), ag::scale(ag::sub(a, c), 0.7));
    auto y = ag::add(ag::matmul(x, w), ag::constant<double>(Matrix<double>::Zero(3, 5)));
    return ag::add(weighted_sum(y, 5), weighted_sum(ag::matmul_nt(x, v), 6));
  });
}

TEST(Autograd, LinearGeluLayerNorm) {
  Bag b;
  auto& x = b.add("x", random_matrix<double>(5, 6, 11));
  auto& w = b.add("w", random_matrix<double>(6, 4, 12, 0.5));
  auto& bias = b.add("bias", random_matrix<double>(1, 4, 13));
  auto& gain = b.add("gain", random_matrix<double>(1, 4, 14));
  auto& shift = b.add("shift", random_matrix<double>(1, 4, 15));
  expect_ok(b, [&] { return weighted_sum(ag::layer_norm(ag::gelu(ag::linear(x, w, bias)), gain, shift), 16); });
}

TEST(Autograd, SoftmaxCrossEntropyAndReductions) {
  Bag b;
  auto& x = b.add("x", random_matrix<double>(4, 7, 21));
  auto& y = b.add("y", random_matrix<double>(4, 7, 22));
  expect_ok(b, [&] {
    auto s = weighted_sum(ag::softmax_rows(x), 23);
    auto ce = ag::cross_entropy_sum(y, {0, 6, 3, 3});
    return ag::add(ag::add(s, ce), ag::add(ag::squared_sum(x), ag::sum_all(ag::mean_rows(y))));
  });
}

TEST(Autograd, SlicingGatherConcat) {
  Bag b;
  auto& x = b.add("x", random_matrix<double>(5, 6, 31));
  auto& z = b.add("z", random_matrix<double>(5, 2, 32));
  auto& tok = b.add("tok", random_matrix<double>(1, 2, 33));
  expect_ok(b, [&] {
    auto s = ag::slice_cols(x, 2, 3);
    auto c = ag::concat_cols<double>({s, z});
    auto r = ag::concat_rows<double>({c, ag::gather_rows(c, {4, 4, 0})});
    auto m = ag::replace_slices(x, tok, {{1, 0}, {3, 2}, {3, 1}});
    return ag::add(weighted_sum(r, 34), weighted_sum(m, 35));
  });
}

TEST(Autograd, MseGraphPropagateGroupMean) {
  Bag b;
  auto& x = b.add("x", random_matrix<double>(6, 3, 41));
  const Matrix<double> target = random_matrix<double>(6, 3, 42);
  Matrix<double> adj = Matrix<double>::Identity(3, 3);
  adj(0, 1) = adj(1, 0) = 0.5;
  adj(1, 2) = adj(2, 1) = 0.25;
  expect_ok(b, [&] {
    auto g = ag::group_mean(ag::graph_propagate(x, adj), 3);
    return ag::add(ag::mse(x, target), weighted_sum(g, 43));
  });
}

TEST(Autograd, StopGradientBlocksFlow) {
  auto a = ag::parameter<double>(random_matrix<double>(2, 2, 51));
  auto loss = ag::sum_all(ag::hadamard(a, ag::stop_gradient(a)));
  ag::backward(loss);
  // d/da sum(a * sg(a)) = sg(a)
  EXPECT_TRUE(a.grad().isApprox(a.value()));
}

TEST(Autograd, LeafGradientsAccumulate) {
  auto a = ag::parameter<double>(Matrix<double>::Ones(1, 3));
  auto loss = ag::sum_all(a);
  ag::backward(loss);
  ag::backward(loss);
  EXPECT_EQ(a.grad(), Matrix<double>::Constant(1, 3, 2.0));
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  auto a = ag::parameter<double>(Matrix<double>::Ones(1, 3));
  ag::NoGradGuard g;
  auto y = ag::scale(a, 2.0);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Autograd, DropoutKeepsExpectation) {
  std::mt19937_64 rng(3);
  auto x = ag::constant<double>(Matrix<double>::Ones(200, 200));
  const double mean = ag::dropout(x, 0.25, rng).value().mean();
  EXPECT_NEAR(mean, 1.0, 0.02);
}

TEST(Optim, StepDecay) {
  EXPECT_DOUBLE_EQ(step_decay_lr(1e-3, 9, 10, 0.1), 1e-3);
  EXPECT_NEAR(step_decay_lr(1e-3, 10, 10, 0.1), 1e-4, 1e-18);
  EXPECT_NEAR(step_decay_lr(1e-3, 25, 10, 0.1), 1e-5, 1e-18);
}

TEST(Optim, WarmupThenLinearDecay) {
  EXPECT_DOUBLE_EQ(warmup_linear_lr(1.0, 3.0, 6, 100), 0.5);
  EXPECT_DOUBLE_EQ(warmup_linear_lr(1.0, 6.0, 6, 100), 1.0);
  EXPECT_DOUBLE_EQ(warmup_linear_lr(1.0, 53.0, 6, 100), 0.5);
  EXPECT_DOUBLE_EQ(warmup_linear_lr(1.0, 100.0, 6, 100), 0.0);
}

TEST(Optim, AdamMinimizesQuadratic) {
  auto w = ag::parameter<double>(Matrix<double>::Constant(1, 4, 3.0));
  Adam<double> opt({w});
  for (int i = 0; i < 2000; ++i) {
    opt.zero_grad();
    ag::backward(ag::squared_sum(w));
    opt.step(1e-2);
  }
  EXPECT_LT(w.value().cwiseAbs().maxCoeff(), 1e-2);
}
