#include <gtest/gtest.h>

#include "npv/common_space.hpp"
#include "npv/gradcheck.hpp"
#include "npv/rng.hpp"

using namespace npv;
using namespace npv::common_space;
using ad::Mat;
using ad::Tensor;

namespace {

Mat random_mat(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = scale * rng.normal();
  return m;
}

void freeze_bn_to_unit(encoder::BatchNormParams& bn) {
  bn.running_mean.node()->value.setZero();
  bn.running_var.node()->value.setOnes();
}

}  // namespace

TEST(CommonSpace, ZeroInputsZeroBiasesGiveZeroPair) {
  params::Registry reg(1);
  auto heads = ProjectionHeads::create(reg, "heads", 8, 6);
  // zero weights and biases; BN gamma stays 1 but sees zero input in eval
  for (const auto& e : reg.entries())
    if (e.trainable && e.name.find("gamma") == std::string::npos)
      e.tensor.node()->value.setZero();
  auto pair = to_pv(ad::constant(Mat::Zero(3, 8)), ad::constant(Mat::Zero(3, 8)), heads);
  EXPECT_NEAR(pair.anchor.val().cwiseAbs().maxCoeff(), 0.0, 1e-15);
  EXPECT_NEAR(pair.counterpart.val().cwiseAbs().maxCoeff(), 0.0, 1e-15);
  auto pf = to_pf(pair.anchor, ad::constant(Mat::Zero(3, 8)), heads);
  EXPECT_NEAR(pf.anchor.val().cwiseAbs().maxCoeff(), 0.0, 1e-15);
  EXPECT_NEAR(pf.counterpart.val().cwiseAbs().maxCoeff(), 0.0, 1e-15);
}

TEST(CommonSpace, IdentityLinearHeadPassesInputThrough) {
  params::Registry reg(2);
  auto heads = ProjectionHeads::create(reg, "heads", 5, 5);  // d == d_c
  heads.g_p_pv.w.node()->value = Mat::Identity(5, 5);
  heads.g_p_pv.b.node()->value.setZero();
  Rng rng(3);
  Mat x = random_mat(rng, 4, 5);
  auto pair = to_pv(ad::constant(x), ad::constant(Mat::Zero(4, 5)), heads);
  EXPECT_NEAR((pair.anchor.val() - x).cwiseAbs().maxCoeff(), 0.0, 1e-15);
}

TEST(CommonSpace, MatchesAlgebraOracle) {
  // eval-mode heads against an explicit matrix-multiply + BN + ReLU oracle
  params::Registry reg(4);
  auto heads = ProjectionHeads::create(reg, "heads", 6, 4);
  Rng rng(5);
  for (const auto& e : reg.entries())
    if (e.trainable) e.tensor.node()->value = random_mat(rng, e.tensor.rows(), e.tensor.cols(), 0.5);
  // keep BN stats generic too
  heads.g_v_pv.bn1.running_mean.node()->value = random_mat(rng, 1, 4, 0.2);
  heads.g_v_pv.bn1.running_var.node()->value =
      (random_mat(rng, 1, 4).array().abs() + 0.4).matrix();
  Mat p = random_mat(rng, 3, 6), v = random_mat(rng, 3, 6);
  auto pair = to_pv(ad::constant(p), ad::constant(v), heads);

  Mat anchor_want = (p * heads.g_p_pv.w.val()).rowwise() + heads.g_p_pv.b.val().row(0);
  EXPECT_NEAR((pair.anchor.val() - anchor_want).cwiseAbs().maxCoeff(), 0.0, 1e-10);

  auto bn_eval = [](const Mat& x, const encoder::BatchNormParams& bn) {
    Mat out(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      double is = 1.0 / std::sqrt(bn.running_var.val()(0, j) + 1e-5);
      out.col(j) = ((x.col(j).array() - bn.running_mean.val()(0, j)) * is) *
                       bn.gamma.val()(0, j) +
                   bn.beta.val()(0, j);
    }
    return out;
  };
  Mat h = (v * heads.g_v_pv.w1.val()).rowwise() + heads.g_v_pv.b1.val().row(0);
  h = bn_eval(h, heads.g_v_pv.bn1).cwiseMax(0.0);
  h = (h * heads.g_v_pv.w2.val()).rowwise() + heads.g_v_pv.b2.val().row(0);
  h = bn_eval(h, heads.g_v_pv.bn2);
  EXPECT_NEAR((pair.counterpart.val() - h).cwiseAbs().maxCoeff(), 0.0, 1e-10);
}

TEST(CommonSpace, ComposedPhonemePathIsLinearWithZeroBiases) {
  params::Registry reg(6);
  auto heads = ProjectionHeads::create(reg, "heads", 6, 4);
  heads.g_p_pv.b.node()->value.setZero();
  heads.g_p_pf.b.node()->value.setZero();
  Rng rng(7);
  Mat x = random_mat(rng, 2, 6);
  auto pv1 = to_pv(ad::constant(x), ad::constant(Mat::Zero(2, 6)), heads);
  auto pf1 = to_pf(pv1.anchor, ad::constant(Mat::Zero(2, 6)), heads);
  auto pv2 = to_pv(ad::constant(Mat(3.0 * x)), ad::constant(Mat::Zero(2, 6)), heads);
  auto pf2 = to_pf(pv2.anchor, ad::constant(Mat::Zero(2, 6)), heads);
  EXPECT_NEAR((pf2.anchor.val() - 3.0 * pf1.anchor.val()).cwiseAbs().maxCoeff(), 0.0, 1e-12);
}

TEST(CommonSpace, HierarchyPfAnchorDependsOnlyOnPvVector) {
  // two different raw phoneme embeddings with the same pv image must give the
  // same pf anchor: feed the pv vector directly
  params::Registry reg(8);
  auto heads = ProjectionHeads::create(reg, "heads", 6, 4);
  Rng rng(9);
  Mat pv = random_mat(rng, 3, 4);
  auto a = to_pf(ad::constant(pv), ad::constant(Mat::Zero(3, 6)), heads);
  auto b = to_pf(ad::constant(pv), ad::constant(random_mat(rng, 3, 6)), heads);
  EXPECT_EQ((a.anchor.val() - b.anchor.val()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(CommonSpace, FrozenUnitBnReducesToAffineReluStack) {
  params::Registry reg(10);
  auto heads = ProjectionHeads::create(reg, "heads", 5, 3);
  Rng rng(11);
  for (const auto& e : reg.entries())
    if (e.trainable) e.tensor.node()->value = random_mat(rng, e.tensor.rows(), e.tensor.cols(), 0.4);
  // gamma = 1, beta = 0, stats = (0, 1): BN becomes (numerically) the identity
  for (auto* bn : {&heads.g_v_pv.bn1, &heads.g_v_pv.bn2}) {
    bn->gamma.node()->value.setOnes();
    bn->beta.node()->value.setZero();
    freeze_bn_to_unit(*bn);
  }
  Rng rng2(12);
  Mat v = random_mat(rng2, 4, 5);
  auto pair = to_pv(ad::constant(Mat::Zero(4, 5)), ad::constant(v), heads);
  Mat h = (v * heads.g_v_pv.w1.val()).rowwise() + heads.g_v_pv.b1.val().row(0);
  h = h.cwiseMax(0.0);
  h = (h * heads.g_v_pv.w2.val()).rowwise() + heads.g_v_pv.b2.val().row(0);
  // eps in the BN denominator scales by 1/sqrt(1 + 1e-5)
  EXPECT_NEAR((pair.counterpart.val() - h).cwiseAbs().maxCoeff(), 0.0, 1e-4);
}

TEST(CommonSpace, GradCheckHeads) {
  params::Registry reg(13);
  auto heads = ProjectionHeads::create(reg, "heads", 6, 4);
  Rng rng(14);
  Mat p = random_mat(rng, 4, 6), v = random_mat(rng, 4, 6), f = random_mat(rng, 4, 6);
  auto loss_t = [&] {
    auto pv = to_pv(ad::constant(p), ad::constant(v), heads, /*train=*/true, nullptr);
    auto pf = to_pf(pv.anchor, ad::constant(f), heads, /*train=*/true, nullptr);
    Tensor s = ad::add(ad::sum_all(ad::mul(pv.counterpart, pv.counterpart)),
                       ad::sum_all(ad::mul(pf.anchor, pf.anchor)));
    return ad::add(s, ad::sum_all(ad::mul(pf.counterpart, pf.counterpart)));
  };
  auto loss_fn = [&] { return loss_t().val()(0, 0); };
  auto grads_fn = [&] { return ad::backward_scalar(loss_t()); };
  std::vector<std::pair<std::string, Tensor>> named;
  for (const auto& e : reg.entries())
    if (e.trainable) named.push_back({e.name, e.tensor});
  auto rep = grad_check(loss_fn, grads_fn, named, 1e-3, 3);
  EXPECT_LT(rep.max_rel_err, 1e-4) << rep.worst.name;
}
