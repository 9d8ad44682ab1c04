#include <gtest/gtest.h>

#include <sstream>

#include "npv/rng.hpp"
#include "npv/screening.hpp"

using namespace npv;
using namespace npv::screening;

TEST(Screening, ClassifyCriticalTable) {
  EXPECT_EQ(classify_phoneme("er").viseme_class, 3);
  EXPECT_TRUE(classify_phoneme("er").critical);
  EXPECT_EQ(classify_phoneme("b").viseme_class, 6);
  EXPECT_EQ(classify_phoneme("m").viseme_class, 6);
  EXPECT_EQ(classify_phoneme("em").viseme_class, 6);
  EXPECT_EQ(classify_phoneme("ay").viseme_class, 1);
  EXPECT_EQ(classify_phoneme("eh").viseme_class, 2);
  EXPECT_EQ(classify_phoneme("zh").viseme_class, 4);
  EXPECT_EQ(classify_phoneme("v").viseme_class, 5);
  EXPECT_FALSE(classify_phoneme("re").critical);
  EXPECT_FALSE(classify_phoneme("ar").critical);
  EXPECT_FALSE(classify_phoneme("e").critical);
  EXPECT_FALSE(classify_phoneme("").critical);
  EXPECT_FALSE(classify_phoneme("xyz").critical);
}

TEST(Screening, ExactlyFifteenCriticalLabels) {
  EXPECT_EQ(critical_viseme_class().size(), 15u);
  for (const auto& [label, cls] : critical_viseme_class()) {
    EXPECT_GE(cls, 1);
    EXPECT_LE(cls, 6);
    EXPECT_TRUE(classify_phoneme(label).critical);
  }
}

TEST(Screening, ParseAlignmentBasic) {
  std::istringstream in(
      R"({"phoneme":"m","start_ms":120,"end_ms":180}
{"phoneme":"re","start_ms":180,"end_ms":300})");
  auto tl = parse_alignment(in, "clip0");
  ASSERT_EQ(tl.segments.size(), 2u);
  EXPECT_EQ(tl.segments[0].label, "m");
  EXPECT_EQ(tl.segments[0].start_ms, 120);
  EXPECT_EQ(tl.segments[0].end_ms, 180);
  EXPECT_TRUE(tl.segments[0].criticality.critical);
  EXPECT_EQ(tl.segments[0].criticality.viseme_class, 6);
  EXPECT_FALSE(tl.segments[1].criticality.critical);
  EXPECT_EQ(tl.total_ms, 300);
}

TEST(Screening, ParseAlignmentEmptyStream) {
  std::istringstream in("");
  auto tl = parse_alignment(in);
  EXPECT_TRUE(tl.segments.empty());
  EXPECT_EQ(tl.total_ms, 0);
}

TEST(Screening, ParseAlignmentMalformedLineReportsNumber) {
  std::istringstream in(
      R"({"phoneme":"m","start_ms":0,"end_ms":50}
not json at all)");
  try {
    parse_alignment(in);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(Screening, ParseAlignmentOverlapRejected) {
  std::istringstream in(
      R"({"phoneme":"m","start_ms":0,"end_ms":100}
{"phoneme":"s","start_ms":50,"end_ms":150})");
  EXPECT_THROW(parse_alignment(in), ValidationError);
}

TEST(Screening, ParseAlignmentBadIntervalRejected) {
  std::istringstream in(R"({"phoneme":"m","start_ms":100,"end_ms":100})");
  EXPECT_THROW(parse_alignment(in), ValidationError);
}

TEST(Screening, FilterKeepsExactlyNonCritical) {
  SegmentTimeline tl;
  tl.total_ms = 300;
  tl.segments = {
      {"p", 0, 100, classify_phoneme("p")},
      {"re", 100, 200, classify_phoneme("re")},
      {"ar", 200, 300, classify_phoneme("ar")},
  };
  auto f = filter_noncritical(tl);
  ASSERT_EQ(f.segments.size(), 2u);
  EXPECT_EQ(f.segments[0].label, "re");
  EXPECT_EQ(f.segments[1].label, "ar");
}

TEST(Screening, FilterAllCriticalGivesEmpty) {
  SegmentTimeline tl;
  tl.total_ms = 200;
  tl.segments = {{"p", 0, 100, classify_phoneme("p")}, {"m", 100, 200, classify_phoneme("m")}};
  EXPECT_TRUE(filter_noncritical(tl).segments.empty());
}

TEST(Screening, FilterIdempotentAndCountsAddUp) {
  // property test over random timelines
  std::vector<std::string> labels = {"m",  "b",  "p",  "f", "v", "ch", "er", "aa",
                                     "iy", "uw", "re", "s", "t", "k",  "n",  "l"};
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    SegmentTimeline tl;
    int64_t at = 0;
    size_t n = rng.uniform_index(12);
    for (size_t i = 0; i < n; ++i) {
      auto label = labels[rng.uniform_index(labels.size())];
      int64_t dur = 20 + int64_t(rng.uniform_index(200));
      tl.segments.push_back({label, at, at + dur, classify_phoneme(label)});
      at += dur + int64_t(rng.uniform_index(3));
    }
    tl.total_ms = at;
    tl.validate();

    auto once = filter_noncritical(tl);
    auto twice = filter_noncritical(once);
    ASSERT_EQ(once.segments.size(), twice.segments.size());
    for (size_t i = 0; i < once.segments.size(); ++i)
      EXPECT_EQ(once.segments[i].label, twice.segments[i].label);
    for (const auto& s : once.segments) EXPECT_FALSE(s.criticality.critical);

    size_t critical = 0;
    for (const auto& s : tl.segments)
      if (s.criticality.critical) ++critical;
    EXPECT_EQ(once.segments.size() + critical, tl.segments.size());
  }
}

TEST(Screening, SliceUnitConversion) {
  SegmentTimeline tl;
  tl.total_ms = 1000;
  tl.segments = {{"aa", 0, 1000, classify_phoneme("aa")}};
  auto slices = slice_timeline(tl, 16000, 25, 16000, 25);
  ASSERT_EQ(slices.size(), 1u);
  EXPECT_EQ(slices[0].audio_span.begin, 0);
  EXPECT_EQ(slices[0].audio_span.end, 16000);
}

TEST(Screening, SliceFrameSpanFloorCeil) {
  // (120 ms, 180 ms) at 25 fps: floor(3.0) = 3, ceil(4.5) = 5
  SegmentTimeline tl;
  tl.total_ms = 1000;
  tl.segments = {{"aa", 120, 180, classify_phoneme("aa")}};
  auto slices = slice_timeline(tl, 16000, 25, 16000, 25);
  ASSERT_EQ(slices.size(), 1u);
  EXPECT_EQ(slices[0].frame_span.begin, 3);
  EXPECT_EQ(slices[0].frame_span.end, 5);
}

TEST(Screening, SlicePastClipEndDropped) {
  SegmentTimeline tl;
  tl.total_ms = 1000;
  tl.segments = {{"aa", 990, 1000, classify_phoneme("aa")}};
  // clip actually holds only 970ms of frames -> span clamps to empty
  auto slices = slice_timeline(tl, 16000, 25, 16000, 24);
  EXPECT_TRUE(slices.empty() || slices[0].frame_span.end <= 24);
}

TEST(Screening, SliceDurationMismatchRejected) {
  SegmentTimeline tl;
  tl.total_ms = 500;
  tl.segments = {{"aa", 0, 500, classify_phoneme("aa")}};
  EXPECT_THROW(slice_timeline(tl, 16000, 25, 16000, 25), ValidationError);
}

TEST(Screening, SliceSpansNonOverlapping) {
  std::vector<std::string> labels = {"aa", "iy", "uw", "m", "p"};
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    SegmentTimeline tl;
    int64_t at = 0;
    size_t n = 1 + rng.uniform_index(8);
    for (size_t i = 0; i < n; ++i) {
      auto label = labels[rng.uniform_index(labels.size())];
      int64_t dur = 40 + int64_t(rng.uniform_index(200));
      tl.segments.push_back({label, at, at + dur, classify_phoneme(label)});
      at += dur;
    }
    tl.total_ms = at;
    int64_t n_samples = at * 16;  // 16 kHz
    int64_t n_frames = (at * 25 + 999) / 1000;
    auto slices = slice_timeline(tl, 16000, 25, n_samples, n_frames);
    for (size_t i = 1; i < slices.size(); ++i) {
      EXPECT_LE(slices[i - 1].audio_span.end, slices[i].audio_span.begin);
      EXPECT_LE(slices[i - 1].frame_span.end, slices[i].frame_span.begin);
    }
  }
}
