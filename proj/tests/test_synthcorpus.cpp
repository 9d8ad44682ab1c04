#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "npv/synthcorpus.hpp"

using namespace npv;
using namespace npv::synthcorpus;
namespace fs = std::filesystem;

namespace {

GenConfig tiny_config(uint64_t seed = 7) {
  GenConfig cfg;
  cfg.n_real = 4;
  cfg.n_fake = 4;
  cfg.duration_ms = 640;
  cfg.seed = seed;
  return cfg;
}

fs::path temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("npv_test_" + tag);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(SynthCorpus, GenerateClipDeterministic) {
  auto cfg = tiny_config();
  auto a = generate_clip(cfg, 1234, Label::fake, FakeMode::av_desync);
  auto b = generate_clip(cfg, 1234, Label::fake, FakeMode::av_desync);
  EXPECT_EQ(a.waveform, b.waveform);
  EXPECT_EQ(a.viseme_video, b.viseme_video);
  EXPECT_EQ(a.face_video, b.face_video);
  ASSERT_EQ(a.timeline.segments.size(), b.timeline.segments.size());
  for (size_t i = 0; i < a.timeline.segments.size(); ++i)
    EXPECT_EQ(a.timeline.segments[i].label, b.timeline.segments[i].label);

  auto c = generate_clip(cfg, 1235, Label::fake, FakeMode::av_desync);
  EXPECT_NE(a.waveform, c.waveform);
}

TEST(SynthCorpus, RealClipConsistentEverywhere) {
  auto cfg = tiny_config();
  for (uint64_t seed = 0; seed < 12; ++seed) {
    auto clip = generate_clip(cfg, seed, Label::real, FakeMode::none);
    auto audits = audit_clip(clip, cfg);
    ASSERT_FALSE(audits.empty());
    for (const auto& a : audits)
      EXPECT_TRUE(a.consistent) << "seed " << seed << " segment " << a.segment_index << " audio "
                                << a.audio_label << " rendered " << a.rendered_label;
    EXPECT_NO_THROW(assert_threat_model(clip, cfg));
  }
}

TEST(SynthCorpus, AvDesyncCalibratedAtCriticalMismatchedSomewhere) {
  auto cfg = tiny_config();
  for (uint64_t seed = 100; seed < 112; ++seed) {
    auto clip = generate_clip(cfg, seed, Label::fake, FakeMode::av_desync);
    auto audits = audit_clip(clip, cfg);
    bool any_noncritical_mismatch = false;
    for (const auto& a : audits) {
      if (a.critical)
        EXPECT_TRUE(a.consistent) << "seed " << seed << " critical segment not calibrated";
      else if (!a.consistent)
        any_noncritical_mismatch = true;
    }
    EXPECT_TRUE(any_noncritical_mismatch) << "seed " << seed;
    EXPECT_NO_THROW(assert_threat_model(clip, cfg));
  }
}

TEST(SynthCorpus, LipOnlyMismatchesEveryNonCriticalSegment) {
  auto cfg = tiny_config();
  for (uint64_t seed = 200; seed < 208; ++seed) {
    auto clip = generate_clip(cfg, seed, Label::fake, FakeMode::lip_only);
    auto audits = audit_clip(clip, cfg);
    for (const auto& a : audits) {
      if (a.critical)
        EXPECT_TRUE(a.consistent);
      else
        EXPECT_FALSE(a.consistent) << "seed " << seed << " segment " << a.segment_index;
    }
  }
}

TEST(SynthCorpus, ClipHasAtLeastOneNonCriticalSegment) {
  auto cfg = tiny_config();
  for (uint64_t seed = 300; seed < 340; ++seed) {
    auto clip = generate_clip(cfg, seed, Label::real, FakeMode::none);
    bool any = false;
    for (const auto& s : clip.timeline.segments)
      if (!s.criticality.critical) any = true;
    EXPECT_TRUE(any);
  }
}

TEST(SynthCorpus, TooShortDurationRejected) {
  auto cfg = tiny_config();
  cfg.duration_ms = 40;  // < min_phoneme_ms
  EXPECT_THROW(generate_clip(cfg, 1, Label::real, FakeMode::none), ValidationError);
}

TEST(SynthCorpus, ManifestSplitsAndBalance) {
  auto cfg = tiny_config();
  cfg.n_real = 8;
  cfg.n_fake = 0;
  auto root = temp_dir("splits");
  auto manifest = generate_corpus(cfg, root);
  ASSERT_EQ(manifest.clips.size(), 8u);
  int train = 0, val = 0, test = 0;
  for (const auto& e : manifest.clips) {
    if (e.split == "train") ++train;
    if (e.split == "val") ++val;
    if (e.split == "test") ++test;
  }
  EXPECT_EQ(train, 6);
  EXPECT_EQ(val, 1);
  EXPECT_EQ(test, 1);
  fs::remove_all(root);
}

TEST(SynthCorpus, RegenerationGivesIdenticalManifestDigest) {
  auto cfg = tiny_config(21);
  auto root1 = temp_dir("digest1");
  auto root2 = temp_dir("digest2");
  auto m1 = generate_corpus(cfg, root1);
  auto m2 = generate_corpus(cfg, root2);
  EXPECT_EQ(manifest_digest(m1), manifest_digest(m2));
  // label balance matches the config counts
  int real = 0, fake = 0;
  for (const auto& e : m1.clips) (e.label == Label::real ? real : fake)++;
  EXPECT_EQ(real, cfg.n_real);
  EXPECT_EQ(fake, cfg.n_fake);
  fs::remove_all(root1);
  fs::remove_all(root2);
}

TEST(SynthCorpus, SaveLoadRoundTrip) {
  auto cfg = tiny_config(33);
  auto root = temp_dir("roundtrip");
  auto manifest = generate_corpus(cfg, root);
  auto reloaded_manifest = load_manifest(root);
  EXPECT_EQ(manifest_digest(manifest), manifest_digest(reloaded_manifest));
  for (const auto& e : manifest.clips) {
    auto clip = load_clip(root, reloaded_manifest, e);
    auto want = generate_clip(cfg, e.seed, e.label, e.fake_mode);
    EXPECT_EQ(clip.viseme_video, want.viseme_video);
    EXPECT_EQ(clip.face_video, want.face_video);
    ASSERT_EQ(clip.waveform.size(), want.waveform.size());
    for (size_t i = 0; i < clip.waveform.size(); ++i)
      EXPECT_NEAR(clip.waveform[i], want.waveform[i], 1e-6);  // f32 storage
    ASSERT_EQ(clip.timeline.segments.size(), want.timeline.segments.size());
    for (size_t i = 0; i < clip.timeline.segments.size(); ++i) {
      EXPECT_EQ(clip.timeline.segments[i].label, want.timeline.segments[i].label);
      EXPECT_EQ(clip.timeline.segments[i].start_ms, want.timeline.segments[i].start_ms);
    }
  }
  fs::remove_all(root);
}

TEST(SynthCorpus, GroundTruthApertureMismatchSeparatesPerfectly) {
  // ceiling check: a threshold on the measured aperture gap classifies every
  // clip correctly, so the detection task is well-posed
  auto cfg = tiny_config(55);
  std::vector<double> real_scores, fake_scores;
  for (uint64_t i = 0; i < 20; ++i) {
    auto r = generate_clip(cfg, hash_combine(55, i), Label::real, FakeMode::none);
    real_scores.push_back(aperture_mismatch_score(r, cfg));
    auto f = generate_clip(cfg, hash_combine(555, i), Label::fake,
                           i % 2 ? FakeMode::av_desync : FakeMode::lip_only);
    fake_scores.push_back(aperture_mismatch_score(f, cfg));
  }
  double max_real = *std::max_element(real_scores.begin(), real_scores.end());
  double min_fake = *std::min_element(fake_scores.begin(), fake_scores.end());
  EXPECT_LT(max_real, min_fake) << "max real " << max_real << " vs min fake " << min_fake;
}

TEST(SynthCorpus, ParallelGenerationMatchesSerial) {
  auto cfg = tiny_config(66);
  auto root1 = temp_dir("par1");
  auto root2 = temp_dir("par2");
  generate_corpus(cfg, root1, 1);
  generate_corpus(cfg, root2, 2);
  auto m1 = load_manifest(root1), m2 = load_manifest(root2);
  EXPECT_EQ(manifest_digest(m1), manifest_digest(m2));
  for (size_t i = 0; i < m1.clips.size(); ++i) {
    auto c1 = load_clip(root1, m1, m1.clips[i]);
    auto c2 = load_clip(root2, m2, m2.clips[i]);
    EXPECT_EQ(c1.viseme_video, c2.viseme_video);
  }
  fs::remove_all(root1);
  fs::remove_all(root2);
}
