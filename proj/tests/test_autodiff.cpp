#include <gtest/gtest.h>

#include <cmath>

#include "npv/autodiff.hpp"
#include "npv/gradcheck.hpp"
#include "npv/rng.hpp"

using namespace npv;
using ad::Mat;
using ad::Tensor;

namespace {

Mat random_mat(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = scale * rng.normal();
  return m;
}

// Checks d(sum of squares of f(inputs))/d(input) for every input leaf.
void check_op(const std::function<Tensor(const std::vector<Tensor>&)>& f,
              const std::vector<Tensor>& inputs, double tol = 1e-6) {
  auto loss_of = [&]() {
    Tensor out = f(inputs);
    Tensor sq = ad::mul(out, out);
    return ad::sum_all(sq);
  };
  auto loss_fn = [&]() { return loss_of().val()(0, 0); };
  auto grads_fn = [&]() { return ad::backward_scalar(loss_of()); };
  std::vector<std::pair<std::string, Tensor>> named;
  for (size_t i = 0; i < inputs.size(); ++i) named.push_back({"in" + std::to_string(i), inputs[i]});
  auto rep = grad_check(loss_fn, grads_fn, named, 1e-5, 1, 1e-5);
  EXPECT_LT(rep.max_rel_err, tol) << rep.worst.name << "(" << rep.worst.row << ","
                                  << rep.worst.col << ") analytic=" << rep.worst.analytic
                                  << " numeric=" << rep.worst.numeric;
}

}  // namespace

TEST(Autodiff, ForwardValues) {
  Tensor a = ad::leaf((Mat(2, 2) << 1, 2, 3, 4).finished());
  Tensor b = ad::leaf((Mat(2, 2) << 5, 6, 7, 8).finished());
  EXPECT_DOUBLE_EQ(ad::matmul(a, b).val()(0, 0), 19.0);
  EXPECT_DOUBLE_EQ(ad::add(a, b).val()(1, 1), 12.0);
  EXPECT_DOUBLE_EQ(ad::sum_all(a).val()(0, 0), 10.0);
  EXPECT_DOUBLE_EQ(ad::row_sum(a).val()(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(ad::col_sum(a).val()(0, 1), 6.0);
  EXPECT_NEAR(ad::logsumexp_rows(a).val()(1, 0), std::log(std::exp(3.0) + std::exp(4.0)), 1e-12);
}

TEST(Autodiff, SoftmaxRowsSumToOne) {
  Rng rng(7);
  Tensor a = ad::leaf(random_mat(rng, 5, 9, 3.0));
  Mat s = ad::softmax_rows(a).val();
  for (Eigen::Index i = 0; i < s.rows(); ++i) EXPECT_NEAR(s.row(i).sum(), 1.0, 1e-12);
}

TEST(Autodiff, GradArithmetic) {
  Rng rng(1);
  Tensor a = ad::leaf(random_mat(rng, 3, 4));
  Tensor b = ad::leaf(random_mat(rng, 3, 4));
  Tensor row = ad::leaf(random_mat(rng, 1, 4));
  Tensor col = ad::leaf(random_mat(rng, 3, 1));
  Tensor sc = ad::leaf(random_mat(rng, 1, 1));
  check_op([](const std::vector<Tensor>& in) { return ad::add(in[0], in[1]); }, {a, b});
  check_op([](const std::vector<Tensor>& in) { return ad::mul(in[0], in[1]); }, {a, b});
  check_op([](const std::vector<Tensor>& in) { return ad::sub(in[0], in[1]); }, {a, row});
  check_op([](const std::vector<Tensor>& in) { return ad::mul(in[0], in[1]); }, {a, col});
  check_op([](const std::vector<Tensor>& in) { return ad::mul(in[0], in[1]); }, {a, sc});
  Tensor bpos = ad::leaf((random_mat(rng, 3, 4).array().abs() + 0.5).matrix());
  check_op([](const std::vector<Tensor>& in) { return ad::div(in[0], in[1]); }, {a, bpos});
}

TEST(Autodiff, GradMatmulChain) {
  Rng rng(2);
  Tensor a = ad::leaf(random_mat(rng, 3, 5));
  Tensor b = ad::leaf(random_mat(rng, 5, 4));
  Tensor c = ad::leaf(random_mat(rng, 4, 2));
  check_op([](const std::vector<Tensor>& in) {
    return ad::matmul(ad::matmul(in[0], in[1]), in[2]);
  }, {a, b, c});
}

TEST(Autodiff, GradNonlinearities) {
  Rng rng(3);
  Tensor a = ad::leaf(random_mat(rng, 4, 3));
  check_op([](const std::vector<Tensor>& in) { return ad::tanh_(in[0]); }, {a});
  check_op([](const std::vector<Tensor>& in) { return ad::gelu(in[0]); }, {a});
  check_op([](const std::vector<Tensor>& in) { return ad::exp_(in[0]); }, {a});
  Tensor pos = ad::leaf((random_mat(rng, 4, 3).array().abs() + 0.5).matrix());
  check_op([](const std::vector<Tensor>& in) { return ad::log_(in[0]); }, {pos});
  check_op([](const std::vector<Tensor>& in) { return ad::sqrt_(in[0]); }, {pos});
  check_op([](const std::vector<Tensor>& in) { return ad::softmax_rows(in[0]); }, {a});
  check_op([](const std::vector<Tensor>& in) { return ad::logsumexp_rows(in[0]); }, {a});
}

TEST(Autodiff, GradStructural) {
  Rng rng(4);
  Tensor a = ad::leaf(random_mat(rng, 3, 4));
  Tensor b = ad::leaf(random_mat(rng, 2, 4));
  Tensor c = ad::leaf(random_mat(rng, 3, 2));
  check_op([](const std::vector<Tensor>& in) {
    return ad::concat_rows({in[0], in[1]});
  }, {a, b});
  check_op([](const std::vector<Tensor>& in) {
    return ad::concat_cols({in[0], in[1]});
  }, {a, c});
  check_op([](const std::vector<Tensor>& in) { return ad::slice_rows(in[0], 1, 2); }, {a});
  check_op([](const std::vector<Tensor>& in) { return ad::slice_cols(in[0], 1, 3); }, {a});
  check_op([](const std::vector<Tensor>& in) {
    return ad::permute_rows(in[0], {2, 0, 1, 0});
  }, {a});
  check_op([](const std::vector<Tensor>& in) { return ad::transpose(in[0]); }, {a});
}

TEST(Autodiff, GradNormalization) {
  Rng rng(5);
  Tensor x = ad::leaf(random_mat(rng, 6, 5));
  Tensor gamma = ad::leaf((random_mat(rng, 1, 5).array() * 0.1 + 1.0).matrix());
  Tensor beta = ad::leaf(random_mat(rng, 1, 5, 0.1));
  check_op([&](const std::vector<Tensor>& in) {
    return ad::layer_norm(in[0], in[1], in[2]);
  }, {x, gamma, beta}, 1e-4);
  check_op([&](const std::vector<Tensor>& in) {
    return ad::batch_norm_train(in[0], in[1], in[2]).out;
  }, {x, gamma, beta}, 1e-4);
  Mat rm = random_mat(rng, 1, 5, 0.2);
  Mat rv = (random_mat(rng, 1, 5).array().abs() + 0.5).matrix();
  check_op([&](const std::vector<Tensor>& in) {
    return ad::batch_norm_eval(in[0], in[1], in[2], rm, rv);
  }, {x, gamma, beta});
}

TEST(Autodiff, GradDepthwiseConv) {
  Rng rng(6);
  Tensor x1 = ad::leaf(random_mat(rng, 7, 4));
  Tensor w1 = ad::leaf(random_mat(rng, 3, 4));
  Tensor b1 = ad::leaf(random_mat(rng, 1, 4));
  check_op([](const std::vector<Tensor>& in) {
    return ad::depthwise_conv1d(in[0], in[1], in[2]);
  }, {x1, w1, b1});

  Tensor x2 = ad::leaf(random_mat(rng, 2 * 3 * 4, 5));
  Tensor w2 = ad::leaf(random_mat(rng, 9, 5));
  Tensor b2 = ad::leaf(random_mat(rng, 1, 5));
  check_op([](const std::vector<Tensor>& in) {
    return ad::depthwise_conv2d(in[0], in[1], in[2], 2, 3, 4);
  }, {x2, w2, b2});
}

TEST(Autodiff, DepthwiseConv1dMatchesNaive) {
  Rng rng(8);
  Mat x = random_mat(rng, 6, 3), w = random_mat(rng, 3, 3), b = random_mat(rng, 1, 3);
  Mat out = ad::depthwise_conv1d(ad::constant(x), ad::constant(w), ad::constant(b)).val();
  for (Eigen::Index i = 0; i < 6; ++i)
    for (Eigen::Index c = 0; c < 3; ++c) {
      double acc = b(0, c);
      for (Eigen::Index k = 0; k < 3; ++k) {
        Eigen::Index j = i + k - 1;
        if (j >= 0 && j < 6) acc += w(k, c) * x(j, c);
      }
      EXPECT_NEAR(out(i, c), acc, 1e-14);
    }
}

TEST(Autodiff, SharedLeafAccumulatesBothPaths) {
  Tensor a = ad::leaf(Mat::Constant(1, 1, 3.0));
  Tensor y = ad::mul(a, a);  // y = a^2, dy/da = 2a = 6
  auto g = ad::backward_scalar(y);
  EXPECT_DOUBLE_EQ(g.at(a.node().get())(0, 0), 6.0);
}

TEST(Autodiff, ConstantsReceiveNoGradient) {
  Tensor a = ad::constant(Mat::Constant(2, 2, 1.0));
  Tensor b = ad::leaf(Mat::Constant(2, 2, 2.0));
  auto g = ad::backward_scalar(ad::sum_all(ad::mul(a, b)));
  EXPECT_EQ(g.count(a.node().get()), 0u);
  EXPECT_EQ(g.count(b.node().get()), 1u);
}

TEST(Autodiff, BatchNormStatsAreBatchMoments) {
  Rng rng(9);
  Mat x = random_mat(rng, 8, 3);
  auto bn = ad::batch_norm_train(ad::leaf(x), ad::leaf(Mat::Ones(1, 3)),
                                 ad::leaf(Mat::Zero(1, 3)));
  for (Eigen::Index j = 0; j < 3; ++j) {
    EXPECT_NEAR(bn.batch_mean(0, j), x.col(j).mean(), 1e-12);
    double var = (x.col(j).array() - x.col(j).mean()).square().sum() / 8.0;
    EXPECT_NEAR(bn.batch_var(0, j), var, 1e-12);
  }
}
