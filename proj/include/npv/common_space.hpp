#pragma once

// Hierarchical common-space projections: encoder outputs map into the
// phoneme-viseme space S_pv, and from there (plus the facial stream) into
// the phoneme-face space S_pf. Rows are batch entries.

#include <string>

#include "npv/autodiff.hpp"
#include "npv/encoder.hpp"
#include "npv/params.hpp"

namespace npv::common_space {

using ad::Mat;
using ad::Tensor;
using encoder::BnUpdates;

// Two-layer projection: linear -> BN -> ReLU -> linear -> BN.
struct TwoLayerHead {
  Tensor w1, b1, w2, b2;
  encoder::BatchNormParams bn1, bn2;

  static TwoLayerHead create(params::Registry& reg, const std::string& prefix, Eigen::Index d_in,
                             Eigen::Index d_out) {
    TwoLayerHead h;
    h.w1 = reg.param(prefix + ".w1", d_in, d_out, params::Init::normal,
                     1.0 / std::sqrt(double(d_in)));
    h.b1 = reg.param(prefix + ".b1", 1, d_out, params::Init::zero);
    h.bn1 = encoder::BatchNormParams::create(reg, prefix + ".bn1", d_out);
    h.w2 = reg.param(prefix + ".w2", d_out, d_out, params::Init::normal,
                     1.0 / std::sqrt(double(d_out)));
    h.b2 = reg.param(prefix + ".b2", 1, d_out, params::Init::zero);
    h.bn2 = encoder::BatchNormParams::create(reg, prefix + ".bn2", d_out);
    return h;
  }

  Tensor apply(const Tensor& x, bool train, BnUpdates* updates) const {
    Tensor h = ad::add(ad::matmul(x, w1), b1);
    h = bn1.apply(h, train, updates);
    h = ad::relu(h);
    h = ad::add(ad::matmul(h, w2), b2);
    return bn2.apply(h, train, updates);
  }
};

struct LinearHead {
  Tensor w, b;

  static LinearHead create(params::Registry& reg, const std::string& prefix, Eigen::Index d_in,
                           Eigen::Index d_out) {
    LinearHead h;
    h.w = reg.param(prefix + ".w", d_in, d_out, params::Init::normal,
                    1.0 / std::sqrt(double(d_in)));
    h.b = reg.param(prefix + ".b", 1, d_out, params::Init::zero);
    return h;
  }

  Tensor apply(const Tensor& x) const { return ad::add(ad::matmul(x, w), b); }
};

enum class PfAnchorSource {
  phoneme_pv,   // the pf anchor consumes the pv-space phoneme vector
  phoneme_raw,  // literal-reading alternative: raw phoneme embedding
};

struct ProjectionHeads {
  Eigen::Index d = 64, d_c = 128;
  PfAnchorSource pf_anchor = PfAnchorSource::phoneme_pv;
  LinearHead g_p_pv;    // d -> d_c
  TwoLayerHead g_v_pv;  // d -> d_c
  LinearHead g_p_pf;    // d_c -> d_c (or d -> d_c for phoneme_raw)
  TwoLayerHead g_f_pf;  // d -> d_c

  static ProjectionHeads create(params::Registry& reg, const std::string& prefix, Eigen::Index d,
                                Eigen::Index d_c,
                                PfAnchorSource anchor = PfAnchorSource::phoneme_pv) {
    ProjectionHeads h;
    h.d = d;
    h.d_c = d_c;
    h.pf_anchor = anchor;
    h.g_p_pv = LinearHead::create(reg, prefix + ".p_pv", d, d_c);
    h.g_v_pv = TwoLayerHead::create(reg, prefix + ".v_pv", d, d_c);
    h.g_p_pf = LinearHead::create(reg, prefix + ".p_pf",
                                  anchor == PfAnchorSource::phoneme_pv ? d_c : d, d_c);
    h.g_f_pf = TwoLayerHead::create(reg, prefix + ".f_pf", d, d_c);
    return h;
  }
};

struct CommonSpacePair {
  Tensor anchor;       // N x d_c
  Tensor counterpart;  // N x d_c
};

// Maps batches of pooled phoneme/viseme embeddings (N x d) into S_pv.
inline CommonSpacePair to_pv(const Tensor& phoneme_emb, const Tensor& viseme_emb,
                             const ProjectionHeads& heads, bool train = false,
                             BnUpdates* updates = nullptr) {
  check(phoneme_emb.cols() == heads.d && viseme_emb.cols() == heads.d,
        "to_pv: embedding width mismatch");
  return {heads.g_p_pv.apply(phoneme_emb), heads.g_v_pv.apply(viseme_emb, train, updates)};
}

// Maps the pv-space phoneme vectors (hierarchical composition) and pooled
// face embeddings into S_pf.
inline CommonSpacePair to_pf(const Tensor& phoneme_pv, const Tensor& face_emb,
                             const ProjectionHeads& heads, bool train = false,
                             BnUpdates* updates = nullptr) {
  Eigen::Index want = heads.pf_anchor == PfAnchorSource::phoneme_pv ? heads.d_c : heads.d;
  check(phoneme_pv.cols() == want, "to_pf: anchor width mismatch");
  check(face_emb.cols() == heads.d, "to_pf: face embedding width mismatch");
  return {heads.g_p_pf.apply(phoneme_pv), heads.g_f_pf.apply(face_emb, train, updates)};
}

}  // namespace npv::common_space
