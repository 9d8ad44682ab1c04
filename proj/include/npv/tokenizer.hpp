#pragma once

// Tokenization of raw waveform segments and video tubelets into
// position-encoded token sequences via learnable linear patch projections.

#include <cstdint>
#include <span>
#include <vector>

#include "npv/autodiff.hpp"
#include "npv/errors.hpp"

namespace npv::tokenizer {

using ad::Mat;
using ad::Tensor;

enum class Modality { phoneme, viseme, face };

struct PatchSpec {
  // audio: samples per patch
  Eigen::Index audio_patch = 400;
  // video tubelet: frames x height x width per patch
  Eigen::Index tube_t = 2, tube_h = 8, tube_w = 8;
  Eigen::Index d = 64;           // embedding width
  Eigen::Index max_tokens = 256;  // positional-table capacity

  void validate() const {
    check(audio_patch >= 1 && tube_t >= 1 && tube_h >= 1 && tube_w >= 1 && d >= 1,
          "PatchSpec: all dimensions must be >= 1");
    check(max_tokens >= 1, "PatchSpec: max_tokens must be >= 1");
  }
};

// Token grid layout carried alongside the flattened sequence so the encoder
// can aggregate spatial neighborhoods.
struct TokenLayout {
  bool is_grid = false;              // false: 1-D line of S tokens
  Eigen::Index t = 0, h = 0, w = 0;  // grid extents when is_grid
};

struct TokenSequence {
  Tensor tokens;  // S x d
  TokenLayout layout;
  Modality modality = Modality::phoneme;
  Eigen::Index size() const { return tokens.rows(); }
};

struct TokenizerParams {
  Tensor projection;  // audio: t' x d; video: (t*h*w*3) x d
  Tensor positions;   // max_tokens x d, row s added to token s
};

inline Eigen::Index ceil_div(Eigen::Index a, Eigen::Index b) { return (a + b - 1) / b; }

// Audio: splits T' samples into ceil(T'/t') patches of t' amplitudes, the
// last one zero-padded, projects each patch and adds its positional row.
inline TokenSequence tokenize_audio(std::span<const double> samples, const PatchSpec& spec,
                                    const TokenizerParams& params) {
  spec.validate();
  check(!samples.empty(), "tokenize_audio: empty input");
  check(params.projection.rows() == spec.audio_patch && params.projection.cols() == spec.d,
        "tokenize_audio: projection shape mismatch");
  Eigen::Index n = static_cast<Eigen::Index>(samples.size());
  Eigen::Index s = ceil_div(n, spec.audio_patch);
  check(s <= params.positions.rows(),
        "tokenize_audio: " + std::to_string(s) + " tokens exceed positional capacity " +
            std::to_string(params.positions.rows()));
  Mat patches = Mat::Zero(s, spec.audio_patch);
  for (Eigen::Index i = 0; i < n; ++i) patches(i / spec.audio_patch, i % spec.audio_patch) = samples[i];
  Tensor tok = ad::matmul(ad::constant(std::move(patches)), params.projection);
  tok = ad::add(tok, ad::slice_rows(params.positions, 0, s));
  return {tok, TokenLayout{false, 0, 0, 0}, Modality::phoneme};
}

// Video frames as a flat T x H x W x 3 array (frame-major, then rows, cols,
// channels). Splits into ceil(T/t)*ceil(H/h)*ceil(W/w) tubelets, zero-padded
// at the far edges, projects t*h*w*3 voxels per tubelet.
inline TokenSequence tokenize_video(std::span<const double> voxels, Eigen::Index T,
                                    Eigen::Index H, Eigen::Index W, const PatchSpec& spec,
                                    const TokenizerParams& params, Modality modality) {
  spec.validate();
  check(T >= 1 && H >= 1 && W >= 1, "tokenize_video: empty frame stack");
  check(voxels.size() == static_cast<size_t>(T * H * W * 3),
        "tokenize_video: voxel count does not match T*H*W*3");
  Eigen::Index voxels_per_patch = spec.tube_t * spec.tube_h * spec.tube_w * 3;
  check(params.projection.rows() == voxels_per_patch && params.projection.cols() == spec.d,
        "tokenize_video: projection shape mismatch");
  Eigen::Index gt = ceil_div(T, spec.tube_t), gh = ceil_div(H, spec.tube_h),
               gw = ceil_div(W, spec.tube_w);
  Eigen::Index s = gt * gh * gw;
  check(s <= params.positions.rows(),
        "tokenize_video: " + std::to_string(s) + " tokens exceed positional capacity " +
            std::to_string(params.positions.rows()));
  Mat patches = Mat::Zero(s, voxels_per_patch);
  auto voxel = [&](Eigen::Index t, Eigen::Index y, Eigen::Index x, Eigen::Index c) {
    return voxels[static_cast<size_t>(((t * H + y) * W + x) * 3 + c)];
  };
  for (Eigen::Index pt = 0; pt < gt; ++pt)
    for (Eigen::Index ph = 0; ph < gh; ++ph)
      for (Eigen::Index pw = 0; pw < gw; ++pw) {
        Eigen::Index row = (pt * gh + ph) * gw + pw;
        Eigen::Index col = 0;
        for (Eigen::Index dt = 0; dt < spec.tube_t; ++dt)
          for (Eigen::Index dy = 0; dy < spec.tube_h; ++dy)
            for (Eigen::Index dx = 0; dx < spec.tube_w; ++dx)
              for (Eigen::Index c = 0; c < 3; ++c, ++col) {
                Eigen::Index t = pt * spec.tube_t + dt;
                Eigen::Index y = ph * spec.tube_h + dy;
                Eigen::Index x = pw * spec.tube_w + dx;
                if (t < T && y < H && x < W) patches(row, col) = voxel(t, y, x, c);
              }
      }
  Tensor tok = ad::matmul(ad::constant(std::move(patches)), params.projection);
  tok = ad::add(tok, ad::slice_rows(params.positions, 0, s));
  return {tok, TokenLayout{true, gt, gh, gw}, modality};
}

}  // namespace npv::tokenizer
