#pragma once

// Windowed self-attention transformer encoder with a local feature
// aggregation (LFA) block in every layer. One instance per modality stream;
// audio streams aggregate over a 1-D token line, video streams over the
// (h, w) grid of each temporal slice.

#include <string>
#include <vector>

#include "npv/autodiff.hpp"
#include "npv/params.hpp"
#include "npv/tokenizer.hpp"

namespace npv::encoder {

using ad::Mat;
using ad::Tensor;
using tokenizer::TokenLayout;
using tokenizer::TokenSequence;

enum class LfaPosition { pre_attn, post_attn };

struct EncoderConfig {
  int n_blocks = 2;
  int n_heads = 4;
  Eigen::Index d = 64;
  Eigen::Index window = 8;  // tokens per attention window
  Eigen::Index shift = 4;   // cyclic shift applied in alternating blocks
  Eigen::Index lfa_kernel = 3;
  Eigen::Index ffn_mult = 4;
  Eigen::Index max_tokens = 256;
  LfaPosition lfa_position = LfaPosition::post_attn;

  void validate() const {
    check(n_blocks >= 1, "EncoderConfig: n_blocks must be >= 1");
    check(d % n_heads == 0, "EncoderConfig: d must be divisible by n_heads");
    check(window >= 2, "EncoderConfig: window must be >= 2");
    check(shift >= 0 && shift < window, "EncoderConfig: shift must be in [0, window)");
    check(lfa_kernel % 2 == 1, "EncoderConfig: lfa_kernel must be odd");
  }
};

// Deferred running-statistic update, applied by the trainer in a fixed order
// so that parallel forward passes stay deterministic.
struct BnUpdate {
  ad::NodePtr running_mean;
  ad::NodePtr running_var;
  Mat batch_mean;
  Mat batch_var;
};
using BnUpdates = std::vector<BnUpdate>;

inline void apply_bn_updates(const BnUpdates& updates, double momentum = 0.1) {
  for (const auto& u : updates) {
    u.running_mean->value = (1.0 - momentum) * u.running_mean->value + momentum * u.batch_mean;
    u.running_var->value = (1.0 - momentum) * u.running_var->value + momentum * u.batch_var;
  }
}

struct BatchNormParams {
  Tensor gamma, beta;
  Tensor running_mean, running_var;  // buffers

  static BatchNormParams create(params::Registry& reg, const std::string& prefix,
                                Eigen::Index c) {
    BatchNormParams p;
    p.gamma = reg.param(prefix + ".gamma", 1, c, params::Init::one);
    p.beta = reg.param(prefix + ".beta", 1, c, params::Init::zero);
    p.running_mean = reg.buffer(prefix + ".running_mean", 1, c, 0.0);
    p.running_var = reg.buffer(prefix + ".running_var", 1, c, 1.0);
    return p;
  }

  Tensor apply(const Tensor& x, bool train, BnUpdates* updates) const {
    if (train) {
      auto bn = ad::batch_norm_train(x, gamma, beta);
      if (updates)
        updates->push_back({running_mean.node(), running_var.node(), bn.batch_mean, bn.batch_var});
      return bn.out;
    }
    return ad::batch_norm_eval(x, gamma, beta, running_mean.val(), running_var.val());
  }
};

// BN -> depthwise conv -> pointwise -> BN -> pointwise, plus the identity
// shortcut. Channel count is preserved throughout so the shortcut typechecks.
struct LfaParams {
  bool grid = false;
  BatchNormParams bn1, bn2;
  Tensor dw_w, dw_b;
  Tensor pw1_w, pw1_b;
  Tensor pw2_w, pw2_b;  // zero-initialized: the block starts as the identity

  static LfaParams create(params::Registry& reg, const std::string& prefix, Eigen::Index d,
                          Eigen::Index kernel, bool grid) {
    LfaParams p;
    p.grid = grid;
    p.bn1 = BatchNormParams::create(reg, prefix + ".bn1", d);
    Eigen::Index taps = grid ? kernel * kernel : kernel;
    p.dw_w = reg.param(prefix + ".dw.w", taps, d, params::Init::normal,
                       1.0 / std::sqrt(double(taps)));
    p.dw_b = reg.param(prefix + ".dw.b", 1, d, params::Init::zero);
    p.pw1_w = reg.param(prefix + ".pw1.w", d, d, params::Init::normal, 1.0 / std::sqrt(double(d)));
    p.pw1_b = reg.param(prefix + ".pw1.b", 1, d, params::Init::zero);
    p.bn2 = BatchNormParams::create(reg, prefix + ".bn2", d);
    p.pw2_w = reg.param(prefix + ".pw2.w", d, d, params::Init::zero);
    p.pw2_b = reg.param(prefix + ".pw2.b", 1, d, params::Init::zero);
    return p;
  }
};

inline Tensor lfa_apply(const Tensor& x, const TokenLayout& layout, const LfaParams& p,
                        bool train = false, BnUpdates* updates = nullptr) {
  check(x.cols() == p.pw1_w.rows(), "lfa_apply: channel mismatch");
  check(layout.is_grid == p.grid, "lfa_apply: layout does not match parameters");
  Tensor h = p.bn1.apply(x, train, updates);
  if (layout.is_grid)
    h = ad::depthwise_conv2d(h, p.dw_w, p.dw_b, layout.t, layout.h, layout.w);
  else
    h = ad::depthwise_conv1d(h, p.dw_w, p.dw_b);
  h = ad::add(ad::matmul(h, p.pw1_w), p.pw1_b);
  h = p.bn2.apply(h, train, updates);
  h = ad::add(ad::matmul(h, p.pw2_w), p.pw2_b);
  return ad::add(x, h);
}

struct AttentionParams {
  Tensor ln_g, ln_b;
  Tensor wq, bq, wk, bk, wv, bv;
  Tensor wo, bo;  // output projection, zero-initialized

  static AttentionParams create(params::Registry& reg, const std::string& prefix,
                                Eigen::Index d) {
    AttentionParams p;
    double s = 1.0 / std::sqrt(double(d));
    p.ln_g = reg.param(prefix + ".ln.gamma", 1, d, params::Init::one);
    p.ln_b = reg.param(prefix + ".ln.beta", 1, d, params::Init::zero);
    p.wq = reg.param(prefix + ".wq", d, d, params::Init::normal, s);
    p.bq = reg.param(prefix + ".bq", 1, d, params::Init::zero);
    p.wk = reg.param(prefix + ".wk", d, d, params::Init::normal, s);
    p.bk = reg.param(prefix + ".bk", 1, d, params::Init::zero);
    p.wv = reg.param(prefix + ".wv", d, d, params::Init::normal, s);
    p.bv = reg.param(prefix + ".bv", 1, d, params::Init::zero);
    p.wo = reg.param(prefix + ".wo", d, d, params::Init::zero);
    p.bo = reg.param(prefix + ".bo", 1, d, params::Init::zero);
    return p;
  }
};

// Pre-normalized multi-head self-attention inside fixed windows over the
// token line, with an optional cyclic shift and a residual connection.
// Sequences that do not fill the last window are zero-padded; padding
// positions are masked out as keys and discarded on output.
inline Tensor window_attention(const Tensor& x, const EncoderConfig& cfg,
                               const AttentionParams& p, bool shifted) {
  cfg.validate();
  Eigen::Index s = x.rows(), d = x.cols();
  check(d == cfg.d, "window_attention: token width mismatch");
  Eigen::Index w = cfg.window;
  Eigen::Index sp = ((s + w - 1) / w) * w;
  Eigen::Index shift = shifted ? cfg.shift : 0;

  Tensor xn = ad::layer_norm(x, p.ln_g, p.ln_b);
  if (sp > s) xn = ad::concat_rows({xn, ad::constant(Mat::Zero(sp - s, d))});

  std::vector<bool> valid(static_cast<size_t>(sp), false);
  for (Eigen::Index i = 0; i < s; ++i) valid[size_t(i)] = true;
  if (shift > 0) {
    std::vector<Eigen::Index> idx(static_cast<size_t>(sp));
    std::vector<bool> shifted_valid(static_cast<size_t>(sp));
    for (Eigen::Index i = 0; i < sp; ++i) {
      idx[size_t(i)] = (i + shift) % sp;
      shifted_valid[size_t(i)] = valid[size_t(idx[size_t(i)])];
    }
    xn = ad::permute_rows(xn, idx);
    valid = std::move(shifted_valid);
  }

  Tensor q = ad::add(ad::matmul(xn, p.wq), p.bq);
  Tensor k = ad::add(ad::matmul(xn, p.wk), p.bk);
  Tensor v = ad::add(ad::matmul(xn, p.wv), p.bv);

  Eigen::Index dh = d / cfg.n_heads;
  double scale = 1.0 / std::sqrt(double(dh));
  std::vector<Tensor> window_rows;
  for (Eigen::Index w0 = 0; w0 < sp; w0 += w) {
    Mat mask(1, w);
    for (Eigen::Index j = 0; j < w; ++j) mask(0, j) = valid[size_t(w0 + j)] ? 0.0 : -1e30;
    Tensor mask_t = ad::constant(mask);
    std::vector<Tensor> heads;
    for (int hI = 0; hI < cfg.n_heads; ++hI) {
      Tensor qh = ad::slice_cols(ad::slice_rows(q, w0, w), hI * dh, dh);
      Tensor kh = ad::slice_cols(ad::slice_rows(k, w0, w), hI * dh, dh);
      Tensor vh = ad::slice_cols(ad::slice_rows(v, w0, w), hI * dh, dh);
      Tensor scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), scale);
      scores = ad::add(scores, mask_t);
      Tensor att = ad::softmax_rows(scores);
      heads.push_back(ad::matmul(att, vh));
    }
    window_rows.push_back(cfg.n_heads == 1 ? heads[0] : ad::concat_cols(heads));
  }
  Tensor out = window_rows.size() == 1 ? window_rows[0] : ad::concat_rows(window_rows);

  if (shift > 0) {
    std::vector<Eigen::Index> inv(static_cast<size_t>(sp));
    for (Eigen::Index j = 0; j < sp; ++j) inv[size_t(j)] = (j - shift + sp) % sp;
    out = ad::permute_rows(out, inv);
  }
  if (sp > s) out = ad::slice_rows(out, 0, s);
  out = ad::add(ad::matmul(out, p.wo), p.bo);
  return ad::add(x, out);
}

struct FfnParams {
  Tensor ln_g, ln_b;
  Tensor w1, b1, w2, b2;

  static FfnParams create(params::Registry& reg, const std::string& prefix, Eigen::Index d,
                          Eigen::Index mult) {
    FfnParams p;
    p.ln_g = reg.param(prefix + ".ln.gamma", 1, d, params::Init::one);
    p.ln_b = reg.param(prefix + ".ln.beta", 1, d, params::Init::zero);
    p.w1 = reg.param(prefix + ".w1", d, d * mult, params::Init::normal, 1.0 / std::sqrt(double(d)));
    p.b1 = reg.param(prefix + ".b1", 1, d * mult, params::Init::zero);
    p.w2 = reg.param(prefix + ".w2", d * mult, d, params::Init::normal,
                     1.0 / std::sqrt(double(d * mult)));
    p.b2 = reg.param(prefix + ".b2", 1, d, params::Init::zero);
    return p;
  }

  Tensor apply(const Tensor& x) const {
    Tensor h = ad::layer_norm(x, ln_g, ln_b);
    h = ad::gelu(ad::add(ad::matmul(h, w1), b1));
    h = ad::add(ad::matmul(h, w2), b2);
    return ad::add(x, h);
  }
};

struct BlockParams {
  AttentionParams attn;
  LfaParams lfa;
  FfnParams ffn;
};

struct EncoderParams {
  EncoderConfig cfg;
  bool grid = false;
  std::vector<BlockParams> blocks;

  static EncoderParams create(params::Registry& reg, const std::string& prefix,
                              const EncoderConfig& cfg, bool grid) {
    cfg.validate();
    EncoderParams p;
    p.cfg = cfg;
    p.grid = grid;
    for (int b = 0; b < cfg.n_blocks; ++b) {
      std::string bp = prefix + ".blk" + std::to_string(b);
      BlockParams blk;
      blk.attn = AttentionParams::create(reg, bp + ".attn", cfg.d);
      blk.lfa = LfaParams::create(reg, bp + ".lfa", cfg.d, cfg.lfa_kernel, grid);
      blk.ffn = FfnParams::create(reg, bp + ".ffn", cfg.d, cfg.ffn_mult);
      p.blocks.push_back(std::move(blk));
    }
    return p;
  }
};

struct StreamEmbedding {
  Tensor sequence;  // S x d
  Tensor pooled;    // 1 x d, arithmetic mean over S
};

inline StreamEmbedding encode_stream(const TokenSequence& tokens, const EncoderParams& p,
                                     bool train = false, BnUpdates* updates = nullptr) {
  check(tokens.size() >= 1, "encode_stream: empty token sequence");
  check(tokens.size() <= p.cfg.max_tokens,
        "encode_stream: sequence length " + std::to_string(tokens.size()) +
            " exceeds capacity " + std::to_string(p.cfg.max_tokens));
  check(tokens.layout.is_grid == p.grid, "encode_stream: layout does not match stream");
  Tensor x = tokens.tokens;
  for (int b = 0; b < p.cfg.n_blocks; ++b) {
    const BlockParams& blk = p.blocks[size_t(b)];
    bool shifted = (b % 2 == 1);
    if (p.cfg.lfa_position == LfaPosition::pre_attn) {
      x = lfa_apply(x, tokens.layout, blk.lfa, train, updates);
      x = window_attention(x, p.cfg, blk.attn, shifted);
    } else {
      x = window_attention(x, p.cfg, blk.attn, shifted);
      x = lfa_apply(x, tokens.layout, blk.lfa, train, updates);
    }
    x = blk.ffn.apply(x);
  }
  return {x, ad::col_mean(x)};
}

}  // namespace npv::encoder
