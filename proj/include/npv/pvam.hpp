#pragma once

// Non-critical phoneme-viseme awareness: cross-attention fusion of the two
// feature streams through joint correlation matrices, plus the pooled batch
// bridge feeding the correlation-alignment loss.
//
// Convention throughout: features on rows, sequence on columns. X_p is
// d_p x S, X_v is d_v x S, J = [X_p; X_v] is (d_p+d_v) x S, so the joint
// correlation maps are S x S, attention maps are k x S, and the residual
// projections are d x k. The scaling denominator is sqrt(d_p + d_v).

#include <string>
#include <vector>

#include "npv/autodiff.hpp"
#include "npv/errors.hpp"
#include "npv/params.hpp"

namespace npv::pvam {

using ad::Mat;
using ad::Tensor;

struct CafmConfig {
  Eigen::Index d_p = 64;
  Eigen::Index d_v = 64;
  Eigen::Index k = 64;  // attention-map width
  Eigen::Index seq = 16;  // fixed fused sequence capacity S

  void validate() const {
    check(d_p >= 1 && d_v >= 1 && k >= 1 && seq >= 1, "CafmConfig: dimensions must be >= 1");
  }
};

struct CafmParams {
  CafmConfig cfg;
  Tensor w_jp, w_jv;  // d_p x (d_p+d_v), d_v x (d_p+d_v)
  Tensor w_p, w_v;    // k x d_p, k x d_v
  Tensor w_mp, w_mv;  // k x S
  Tensor w_hp, w_hv;  // d_p x k, d_v x k; zero-initialized (residual identity)

  static CafmParams create(params::Registry& reg, const std::string& prefix,
                           const CafmConfig& cfg) {
    cfg.validate();
    CafmParams p;
    p.cfg = cfg;
    Eigen::Index dj = cfg.d_p + cfg.d_v;
    double sj = 1.0 / std::sqrt(double(dj));
    p.w_jp = reg.param(prefix + ".w_jp", cfg.d_p, dj, params::Init::normal, sj);
    p.w_jv = reg.param(prefix + ".w_jv", cfg.d_v, dj, params::Init::normal, sj);
    p.w_p = reg.param(prefix + ".w_p", cfg.k, cfg.d_p, params::Init::normal,
                      1.0 / std::sqrt(double(cfg.d_p)));
    p.w_v = reg.param(prefix + ".w_v", cfg.k, cfg.d_v, params::Init::normal,
                      1.0 / std::sqrt(double(cfg.d_v)));
    p.w_mp = reg.param(prefix + ".w_mp", cfg.k, cfg.seq, params::Init::normal,
                       1.0 / std::sqrt(double(cfg.seq)));
    p.w_mv = reg.param(prefix + ".w_mv", cfg.k, cfg.seq, params::Init::normal,
                       1.0 / std::sqrt(double(cfg.seq)));
    p.w_hp = reg.param(prefix + ".w_hp", cfg.d_p, cfg.k, params::Init::zero);
    p.w_hv = reg.param(prefix + ".w_hv", cfg.d_v, cfg.k, params::Init::zero);
    return p;
  }
};

struct FusedRepresentation {
  Tensor att_p;     // d_p x S
  Tensor att_v;     // d_v x S
  Tensor x_att;     // (d_p+d_v) x S, row concatenation [att_p; att_v]
  Tensor pooled_p;  // d_p x 1, mean over the valid sequence prefix
  Tensor pooled_v;  // d_v x 1
  Tensor m_p, m_v;  // S x S joint correlation maps (diagnostic)
  Eigen::Index valid = 0;
};

// Cross-attention fusion. X_p and X_v must both be exactly cfg.seq columns;
// `valid` marks how many leading columns are real (pooling ignores padding,
// and zero padding is neutral through every other path).
inline FusedRepresentation cafm(const Tensor& x_p, const Tensor& x_v, const CafmParams& p,
                                Eigen::Index valid = -1) {
  const auto& cfg = p.cfg;
  check(x_p.rows() == cfg.d_p && x_v.rows() == cfg.d_v, "cafm: feature dimension mismatch");
  check(x_p.cols() == x_v.cols(), "cafm: sequence length mismatch between streams");
  check(x_p.cols() == cfg.seq, "cafm: sequence length " + std::to_string(x_p.cols()) +
                                   " does not match parameter capacity " +
                                   std::to_string(cfg.seq));
  if (valid < 0) valid = cfg.seq;
  check(valid >= 1 && valid <= cfg.seq, "cafm: invalid valid-column count");

  double inv_sqrt_d = 1.0 / std::sqrt(double(cfg.d_p + cfg.d_v));
  Tensor j = ad::concat_rows({x_p, x_v});  // (d_p+d_v) x S
  Tensor m_p = ad::tanh_(ad::scale(ad::matmul(ad::matmul(ad::transpose(x_p), p.w_jp), j),
                                   inv_sqrt_d));  // S x S
  Tensor m_v = ad::tanh_(ad::scale(ad::matmul(ad::matmul(ad::transpose(x_v), p.w_jv), j),
                                   inv_sqrt_d));
  Tensor h_p = ad::relu(ad::add(ad::matmul(p.w_p, x_p), ad::matmul(p.w_mp, ad::transpose(m_p))));
  Tensor h_v = ad::relu(ad::add(ad::matmul(p.w_v, x_v), ad::matmul(p.w_mv, ad::transpose(m_v))));
  Tensor att_p = ad::add(ad::matmul(p.w_hp, h_p), x_p);
  Tensor att_v = ad::add(ad::matmul(p.w_hv, h_v), x_v);

  FusedRepresentation out;
  out.att_p = att_p;
  out.att_v = att_v;
  out.x_att = ad::concat_rows({att_p, att_v});
  out.pooled_p = ad::row_mean(ad::slice_cols(att_p, 0, valid));
  out.pooled_v = ad::row_mean(ad::slice_cols(att_v, 0, valid));
  out.m_p = m_p;
  out.m_v = m_v;
  out.valid = valid;
  return out;
}

// Zero-pads a d x n stream (n <= capacity) to d x capacity.
inline Tensor pad_sequence(const Tensor& x, Eigen::Index capacity) {
  check(x.cols() <= capacity, "pad_sequence: sequence longer than capacity");
  if (x.cols() == capacity) return x;
  return ad::concat_cols({x, ad::constant(Mat::Zero(x.rows(), capacity - x.cols()))});
}

// When d_p != d_v, a linear adapter maps both pooled streams to the smaller
// width before the batch correlation.
struct AlignmentAdapter {
  bool active = false;
  Tensor w_p, w_v;  // d_p x m, d_v x m

  static AlignmentAdapter create(params::Registry& reg, const std::string& prefix,
                                 const CafmConfig& cfg) {
    AlignmentAdapter a;
    if (cfg.d_p == cfg.d_v) return a;
    a.active = true;
    Eigen::Index m = std::min(cfg.d_p, cfg.d_v);
    a.w_p = reg.param(prefix + ".adapter_p", cfg.d_p, m, params::Init::normal,
                      1.0 / std::sqrt(double(cfg.d_p)));
    a.w_v = reg.param(prefix + ".adapter_v", cfg.d_v, m, params::Init::normal,
                      1.0 / std::sqrt(double(cfg.d_v)));
    return a;
  }
};

struct PvamOutput {
  std::vector<FusedRepresentation> fused;  // one per sample
  Tensor aligned_p;  // b x d rows of pooled attended phoneme features
  Tensor aligned_v;  // b x d rows of pooled attended viseme features
  bool rank1_batch = false;  // all pooled rows identical: correlation is degenerate
};

// Runs cafm per sample and stacks the pooled attended vectors for the
// alignment loss. Inputs are d x n_i streams with n_i <= cfg.seq.
inline PvamOutput pvam_forward(const std::vector<std::pair<Tensor, Tensor>>& batch,
                               const CafmParams& params, const AlignmentAdapter& adapter,
                               bool want_alignment = true) {
  check(!batch.empty(), "pvam_forward: empty batch");
  check(!want_alignment || batch.size() >= 2,
        "pvam_forward: alignment loss requires batch size >= 2");
  PvamOutput out;
  std::vector<Tensor> rows_p, rows_v;
  for (const auto& [x_p, x_v] : batch) {
    check(x_p.cols() == x_v.cols(), "pvam_forward: stream length mismatch");
    Eigen::Index valid = x_p.cols();
    auto fused = cafm(pad_sequence(x_p, params.cfg.seq), pad_sequence(x_v, params.cfg.seq),
                      params, valid);
    rows_p.push_back(ad::transpose(fused.pooled_p));
    rows_v.push_back(ad::transpose(fused.pooled_v));
    out.fused.push_back(std::move(fused));
  }
  out.aligned_p = ad::concat_rows(rows_p);
  out.aligned_v = ad::concat_rows(rows_v);
  if (adapter.active) {
    out.aligned_p = ad::matmul(out.aligned_p, adapter.w_p);
    out.aligned_v = ad::matmul(out.aligned_v, adapter.w_v);
  }
  const Mat& ap = out.aligned_p.val();
  out.rank1_batch = true;
  for (Eigen::Index i = 1; i < ap.rows() && out.rank1_batch; ++i)
    if ((ap.row(i) - ap.row(0)).cwiseAbs().maxCoeff() > 1e-12) out.rank1_batch = false;
  return out;
}

}  // namespace npv::pvam
