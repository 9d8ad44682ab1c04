#include <gtest/gtest.h>

#include <vector>

#include "npv/rng.hpp"
#include "npv/tokenizer.hpp"

using namespace npv;
using namespace npv::tokenizer;
using ad::Mat;

namespace {

Mat random_mat(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = scale * rng.normal();
  return m;
}

TokenizerParams audio_params(Rng& rng, const PatchSpec& spec, bool zero_pos = false) {
  TokenizerParams p;
  p.projection = ad::leaf(random_mat(rng, spec.audio_patch, spec.d, 0.1));
  p.positions = ad::leaf(zero_pos ? Mat::Zero(spec.max_tokens, spec.d)
                                  : random_mat(rng, spec.max_tokens, spec.d, 0.1));
  return p;
}

}  // namespace

TEST(Tokenizer, AudioTokenCountCeiling) {
  Rng rng(1);
  PatchSpec spec;  // t' = 400
  auto params = audio_params(rng, spec);
  std::vector<double> samples(16000, 0.5);
  auto ts = tokenize_audio(samples, spec, params);
  EXPECT_EQ(ts.size(), 40);
  EXPECT_EQ(ts.tokens.cols(), spec.d);
}

TEST(Tokenizer, AudioZeroInputZeroPositionsGivesZeroTokens) {
  Rng rng(2);
  PatchSpec spec;
  auto params = audio_params(rng, spec, /*zero_pos=*/true);
  std::vector<double> samples(900, 0.0);
  auto ts = tokenize_audio(samples, spec, params);
  EXPECT_NEAR(ts.tokens.val().cwiseAbs().maxCoeff(), 0.0, 1e-15);
}

TEST(Tokenizer, AudioPartialPatchZeroPadded) {
  // T' = 401, t' = 400: two tokens, the second sees one sample + 399 zeros
  Rng rng(3);
  PatchSpec spec;
  auto params = audio_params(rng, spec, /*zero_pos=*/true);
  std::vector<double> samples(401, 0.0);
  samples[400] = 2.0;
  auto ts = tokenize_audio(samples, spec, params);
  ASSERT_EQ(ts.size(), 2);
  // second token = 2.0 * first row of the projection
  Mat expect = 2.0 * params.projection.val().row(0);
  EXPECT_NEAR((ts.tokens.val().row(1) - expect.row(0)).cwiseAbs().maxCoeff(), 0.0, 1e-12);
}

TEST(Tokenizer, AudioEmptyInputRejected) {
  Rng rng(4);
  PatchSpec spec;
  auto params = audio_params(rng, spec);
  std::vector<double> samples;
  EXPECT_THROW(tokenize_audio(samples, spec, params), ValidationError);
}

TEST(Tokenizer, VideoTokenCountFormula) {
  Rng rng(5);
  PatchSpec spec;  // tubelet (2, 8, 8)
  Eigen::Index vpp = spec.tube_t * spec.tube_h * spec.tube_w * 3;
  TokenizerParams p;
  p.projection = ad::leaf(random_mat(rng, vpp, spec.d, 0.05));
  p.positions = ad::leaf(Mat::Zero(spec.max_tokens, spec.d));
  std::vector<double> voxels(8 * 32 * 32 * 3, 0.1);
  auto ts = tokenize_video(voxels, 8, 32, 32, spec, p, Modality::viseme);
  EXPECT_EQ(ts.size(), 4 * 4 * 4);
  EXPECT_TRUE(ts.layout.is_grid);
  EXPECT_EQ(ts.layout.t, 4);
  EXPECT_EQ(ts.layout.h, 4);
  EXPECT_EQ(ts.layout.w, 4);
}

TEST(Tokenizer, VideoTokenCountPropertyRandomShapes) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    PatchSpec spec;
    spec.tube_t = 1 + Eigen::Index(rng.uniform_index(3));
    spec.tube_h = 1 + Eigen::Index(rng.uniform_index(5));
    spec.tube_w = 1 + Eigen::Index(rng.uniform_index(5));
    spec.d = 4;
    spec.max_tokens = 4096;
    Eigen::Index T = 1 + Eigen::Index(rng.uniform_index(7));
    Eigen::Index H = 1 + Eigen::Index(rng.uniform_index(12));
    Eigen::Index W = 1 + Eigen::Index(rng.uniform_index(12));
    Eigen::Index vpp = spec.tube_t * spec.tube_h * spec.tube_w * 3;
    TokenizerParams p;
    p.projection = ad::leaf(Mat::Ones(vpp, spec.d));
    p.positions = ad::leaf(Mat::Zero(spec.max_tokens, spec.d));
    std::vector<double> voxels(size_t(T * H * W * 3), 1.0);
    auto ts = tokenize_video(voxels, T, H, W, spec, p, Modality::face);
    EXPECT_EQ(ts.size(), ceil_div(T, spec.tube_t) * ceil_div(H, spec.tube_h) *
                             ceil_div(W, spec.tube_w));
  }
}

TEST(Tokenizer, VideoIdenticalFramesGiveIdenticalTemporalTokens) {
  Rng rng(7);
  PatchSpec spec;
  spec.tube_t = 1;  // one frame per tubelet so temporal repetition is exact
  Eigen::Index vpp = spec.tube_t * spec.tube_h * spec.tube_w * 3;
  TokenizerParams p;
  p.projection = ad::leaf(random_mat(rng, vpp, spec.d, 0.05));
  p.positions = ad::leaf(Mat::Zero(spec.max_tokens, spec.d));
  Eigen::Index T = 3, H = 16, W = 16;
  std::vector<double> frame(size_t(H * W * 3));
  for (auto& v : frame) v = rng.uniform();
  std::vector<double> voxels;
  for (Eigen::Index t = 0; t < T; ++t) voxels.insert(voxels.end(), frame.begin(), frame.end());
  auto ts = tokenize_video(voxels, T, H, W, spec, p, Modality::viseme);
  Eigen::Index per_frame = ts.size() / T;
  for (Eigen::Index t = 1; t < T; ++t)
    EXPECT_NEAR((ts.tokens.val().middleRows(t * per_frame, per_frame) -
                 ts.tokens.val().middleRows(0, per_frame))
                    .cwiseAbs()
                    .maxCoeff(),
                0.0, 1e-14);
}

TEST(Tokenizer, VideoIdentityProjectionRecoversVoxelPrefix) {
  // projection = [I_d; 0]: token equals the first d flattened voxels
  Rng rng(8);
  PatchSpec spec;
  spec.tube_t = 1;
  spec.tube_h = 2;
  spec.tube_w = 2;
  spec.d = 5;
  Eigen::Index vpp = spec.tube_t * spec.tube_h * spec.tube_w * 3;  // 12
  Mat proj = Mat::Zero(vpp, spec.d);
  for (Eigen::Index i = 0; i < spec.d; ++i) proj(i, i) = 1.0;
  TokenizerParams p;
  p.projection = ad::leaf(proj);
  p.positions = ad::leaf(Mat::Zero(spec.max_tokens, spec.d));
  Eigen::Index T = 1, H = 2, W = 2;
  std::vector<double> voxels(size_t(T * H * W * 3));
  for (auto& v : voxels) v = rng.uniform();
  auto ts = tokenize_video(voxels, T, H, W, spec, p, Modality::face);
  ASSERT_EQ(ts.size(), 1);
  for (Eigen::Index i = 0; i < spec.d; ++i)
    EXPECT_DOUBLE_EQ(ts.tokens.val()(0, i), voxels[size_t(i)]);
}

TEST(Tokenizer, LinearityInInputForFixedParams) {
  Rng rng(9);
  PatchSpec spec;
  auto params = audio_params(rng, spec);
  std::vector<double> samples(1000);
  for (auto& v : samples) v = rng.normal();
  std::vector<double> scaled(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) scaled[i] = 3.0 * samples[i];
  auto base = tokenize_audio(samples, spec, params);
  auto big = tokenize_audio(scaled, spec, params);
  Mat pos = params.positions.val().topRows(base.size());
  Mat lhs = big.tokens.val() - pos;
  Mat rhs = 3.0 * (base.tokens.val() - pos);
  EXPECT_NEAR((lhs - rhs).cwiseAbs().maxCoeff(), 0.0, 1e-12);
}

TEST(Tokenizer, CapacityExceededRejected) {
  Rng rng(10);
  PatchSpec spec;
  spec.max_tokens = 2;
  auto params = audio_params(rng, spec);
  std::vector<double> samples(1201, 1.0);  // 4 tokens > capacity 2
  EXPECT_THROW(tokenize_audio(samples, spec, params), ValidationError);
}
