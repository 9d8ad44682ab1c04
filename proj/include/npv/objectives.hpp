#pragma once

// Loss functions: cosine-exponential pair similarity, the segment-wise
// evolutionary-consistency contrastive loss, symmetric InfoNCE, the
// correlation-alignment loss driving the batch cross-correlation matrix
// toward identity, binary cross-entropy, and the composite stage losses.

#include <string>
#include <vector>

#include "npv/autodiff.hpp"
#include "npv/errors.hpp"

namespace npv::objectives {

using ad::Mat;
using ad::Tensor;

namespace detail {

inline void check_nonzero_rows(const Mat& m, const std::string& who) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    check(m.row(i).norm() > 0.0, who + ": zero-norm row " + std::to_string(i));
}

// rows scaled to unit L2 norm
inline Tensor normalize_rows(const Tensor& x) {
  Tensor sq = ad::mul(x, x);
  Tensor norms = ad::sqrt_(ad::row_sum(sq));  // N x 1
  return ad::div(x, norms);
}

// n x n identity mask as a constant
inline Tensor eye(Eigen::Index n) { return ad::constant(Mat::Identity(n, n)); }

inline Tensor diag_as_col(const Tensor& square) {
  return ad::row_sum(ad::mul(square, eye(square.rows())));
}

}  // namespace detail

// exp(cos(x, y) / tau) for two nonzero vectors, strictly positive.
inline Tensor pair_similarity(const Tensor& x, const Tensor& y, double tau) {
  check(tau > 0.0, "pair_similarity: tau must be positive");
  check(x.rows() == 1 && y.rows() == 1 && x.cols() == y.cols(),
        "pair_similarity: expects two 1 x d vectors");
  check(x.val().norm() > 0.0 && y.val().norm() > 0.0, "pair_similarity: zero-norm vector");
  Tensor xn = detail::normalize_rows(x);
  Tensor yn = detail::normalize_rows(y);
  Tensor cos = ad::row_sum(ad::mul(xn, yn));  // 1 x 1
  return ad::exp_(ad::scale(cos, 1.0 / tau));
}

struct ContrastBatch {
  Tensor phon;  // N x d_c
  Tensor vis;   // N x d_c
  double tau = 0.07;
};

enum class EcDenominator {
  literal,  // sum over I plus sum over A(i): in-batch negatives counted twice
  dedup,    // positive plus each negative once
};

enum class EcReduction { sum, mean };

// Segment-wise evolutionary-consistency loss: for each matched pair i the
// phoneme-anchored and viseme-anchored terms are -log of the matched
// similarity over the (double-counted, by default) batch denominator.
inline Tensor ec_loss(const ContrastBatch& batch,
                      EcDenominator denom = EcDenominator::literal,
                      EcReduction reduction = EcReduction::sum) {
  check(batch.phon.defined() && batch.vis.defined(), "ec_loss: undefined batch");
  Eigen::Index n = batch.phon.rows();
  check(n >= 1, "ec_loss: empty batch");
  check(batch.vis.rows() == n && batch.vis.cols() == batch.phon.cols(),
        "ec_loss: phoneme/viseme shape mismatch");
  check(batch.tau > 0.0, "ec_loss: tau must be positive");
  detail::check_nonzero_rows(batch.phon.val(), "ec_loss(phon)");
  detail::check_nonzero_rows(batch.vis.val(), "ec_loss(vis)");

  Tensor pn = detail::normalize_rows(batch.phon);
  Tensor vn = detail::normalize_rows(batch.vis);
  Tensor logits = ad::scale(ad::matmul(pn, ad::transpose(vn)), 1.0 / batch.tau);  // N x N
  Tensor h = ad::exp_(logits);
  Tensor h_diag = detail::diag_as_col(h);                    // N x 1
  Tensor logit_diag = detail::diag_as_col(logits);           // N x 1
  Tensor row_totals = ad::row_sum(h);                        // N x 1, phoneme anchors
  Tensor col_totals = ad::transpose(ad::col_sum(h));         // N x 1, viseme anchors
  Tensor den_p, den_v;
  if (denom == EcDenominator::literal) {
    den_p = ad::sub(ad::scale(row_totals, 2.0), h_diag);
    den_v = ad::sub(ad::scale(col_totals, 2.0), h_diag);
  } else {
    den_p = row_totals;
    den_v = col_totals;
  }
  // -log(num/den) = log(den) - logit_ii
  Tensor per_seg = ad::add(ad::sub(ad::log_(den_p), logit_diag),
                           ad::sub(ad::log_(den_v), logit_diag));
  Tensor total = ad::sum_all(per_seg);
  if (reduction == EcReduction::mean) total = ad::scale(total, 1.0 / double(n));
  return total;
}

// Symmetric InfoNCE with cosine similarities and in-batch negatives,
// averaged over the batch and the two directions.
inline Tensor infonce_loss(const Tensor& anchors, const Tensor& counterparts, double tau) {
  Eigen::Index n = anchors.rows();
  check(n >= 1, "infonce_loss: empty batch");
  check(counterparts.rows() == n && counterparts.cols() == anchors.cols(),
        "infonce_loss: shape mismatch");
  check(tau > 0.0, "infonce_loss: tau must be positive");
  detail::check_nonzero_rows(anchors.val(), "infonce_loss(anchors)");
  detail::check_nonzero_rows(counterparts.val(), "infonce_loss(counterparts)");

  Tensor an = detail::normalize_rows(anchors);
  Tensor bn = detail::normalize_rows(counterparts);
  Tensor logits = ad::scale(ad::matmul(an, ad::transpose(bn)), 1.0 / tau);  // N x N
  Tensor diag = detail::diag_as_col(logits);
  Tensor a2b = ad::sub(ad::logsumexp_rows(logits), diag);
  Tensor b2a = ad::sub(ad::logsumexp_rows(ad::transpose(logits)), diag);
  Tensor per_dir = ad::add(ad::mean_all(a2b), ad::mean_all(b2a));
  return ad::scale(per_dir, 0.5);
}

// Batch cross-correlation with column-wise L2 normalization; entries lie in
// [-1, 1] by Cauchy-Schwarz.
inline Tensor correlation_matrix(const Tensor& a, const Tensor& b) {
  check(a.rows() >= 2, "correlation_matrix: need batch >= 2");
  check(a.rows() == b.rows() && a.cols() == b.cols(), "correlation_matrix: shape mismatch");
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    check(a.val().col(j).norm() > 0.0, "correlation_matrix: zero column " + std::to_string(j) +
                                           " in first argument");
    check(b.val().col(j).norm() > 0.0, "correlation_matrix: zero column " + std::to_string(j) +
                                           " in second argument");
  }
  auto col_norms = [](const Tensor& m) {
    return ad::sqrt_(ad::col_sum(ad::mul(m, m)));  // 1 x k
  };
  Tensor an = ad::div(a, col_norms(a));
  Tensor bn = ad::div(b, col_norms(b));
  return ad::matmul(ad::transpose(an), bn);  // k x k
}

// Alignment loss: squared distance of the correlation diagonal from one plus
// lambda times the squared off-diagonal mass. Zero iff C is the identity.
inline Tensor cgra_loss(const Tensor& a, const Tensor& b, double lambda) {
  check(lambda > 0.0, "cgra_loss: lambda must be positive");
  Tensor c = correlation_matrix(a, b);
  Tensor id = detail::eye(c.rows());
  Tensor diag_dev = ad::sub(id, ad::mul(c, id));  // (1 - C_ii) on the diagonal
  Tensor off = ad::sub(c, ad::mul(c, id));
  Tensor t1 = ad::sum_all(ad::mul(diag_dev, diag_dev));
  Tensor t2 = ad::sum_all(ad::mul(off, off));
  return ad::add(t1, ad::scale(t2, lambda));
}

inline constexpr double kCeClamp = 1e-7;

// Mean binary cross-entropy over fake probabilities, clamped away from 0/1.
inline Tensor ce_loss(const Tensor& probs, const std::vector<int>& labels) {
  Eigen::Index n = probs.rows();
  check(n >= 1 && probs.cols() == 1, "ce_loss: probs must be N x 1");
  check(labels.size() == size_t(n), "ce_loss: label count mismatch");
  Mat y(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    check(labels[size_t(i)] == 0 || labels[size_t(i)] == 1, "ce_loss: labels must be binary");
    y(i, 0) = double(labels[size_t(i)]);
  }
  Tensor p = ad::clamp(probs, kCeClamp, 1.0 - kCeClamp);
  Tensor yt = ad::constant(y);
  Tensor pos = ad::mul(yt, ad::log_(p));
  Tensor negp = ad::sub(ad::constant(Mat::Ones(n, 1)), p);
  Tensor negy = ad::sub(ad::constant(Mat::Ones(n, 1)), yt);
  Tensor neg = ad::mul(negy, ad::log_(negp));
  return ad::scale(ad::sum_all(ad::add(pos, neg)), -1.0 / double(n));
}

struct PretrainParts {
  Tensor ec;
  Tensor info;
  Tensor cor;
};

inline Tensor pretrain_loss(const PretrainParts& parts) {
  return ad::add(ad::add(parts.ec, parts.info), parts.cor);
}

inline Tensor finetune_loss(const PretrainParts& parts, const Tensor& ce, double w = 1.0) {
  return ad::add(pretrain_loss(parts), ad::scale(ce, w));
}

}  // namespace npv::objectives
