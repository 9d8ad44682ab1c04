#pragma once

// Phoneme screening: alignment-timeline ingestion, critical/non-critical
// classification, and slicing of clip streams to non-critical segments.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "npv/errors.hpp"

namespace npv::screening {

// The 15 critical phonemes grouped into 6 viseme classes. These are the lip
// shapes advanced lip-sync forgers calibrate; everything else is fair game
// for detection.
inline const std::unordered_map<std::string, int>& critical_viseme_class() {
  static const std::unordered_map<std::string, int> table = {
      {"ay", 1}, {"ah", 1},
      {"ey", 2}, {"eh", 2},
      {"er", 3},
      {"ch", 4}, {"sh", 4}, {"jh", 4}, {"zh", 4},
      {"f", 5},  {"v", 5},
      {"m", 6},  {"b", 6},  {"p", 6},  {"em", 6},
  };
  return table;
}

struct Criticality {
  bool critical = false;
  int viseme_class = 0;  // 1..6 when critical
  bool operator==(const Criticality&) const = default;
};

// Total function: exactly the 15 table entries are critical, any other label
// (including unknown ones) is non-critical.
inline Criticality classify_phoneme(const std::string& label) {
  auto it = critical_viseme_class().find(label);
  if (it == critical_viseme_class().end()) return {false, 0};
  return {true, it->second};
}

struct PhonemeSegment {
  std::string label;
  int64_t start_ms = 0;
  int64_t end_ms = 0;
  Criticality criticality;

  int64_t duration_ms() const { return end_ms - start_ms; }
};

struct SegmentTimeline {
  std::string clip_id;
  int64_t total_ms = 0;
  std::vector<PhonemeSegment> segments;

  void validate() const {
    for (size_t i = 0; i < segments.size(); ++i) {
      const auto& s = segments[i];
      check(s.end_ms > s.start_ms, "timeline: segment " + std::to_string(i) + " (" + s.label +
                                       ") has end_ms <= start_ms");
      check(s.start_ms >= 0, "timeline: segment " + std::to_string(i) + " has negative start");
      check(s.end_ms <= total_ms, "timeline: segment " + std::to_string(i) + " ends at " +
                                      std::to_string(s.end_ms) + " past total_ms " +
                                      std::to_string(total_ms));
      if (i > 0)
        check(s.start_ms >= segments[i - 1].end_ms,
              "timeline: segments " + std::to_string(i - 1) + " and " + std::to_string(i) +
                  " overlap or are out of order");
      check(classify_phoneme(s.label) == s.criticality,
            "timeline: segment " + std::to_string(i) + " carries wrong criticality");
    }
  }
};

// Parses line-delimited JSON alignment records:
//   {"phoneme": "m", "start_ms": 120, "end_ms": 180}
// Lines must be chronological. total_ms defaults to the last end time unless
// the caller supplies the clip duration.
inline SegmentTimeline parse_alignment(std::istream& in, const std::string& clip_id = "",
                                       std::optional<int64_t> total_ms = std::nullopt) {
  SegmentTimeline tl;
  tl.clip_id = clip_id;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("alignment parse error at line " + std::to_string(lineno) + ": " +
                            e.what());
    }
    PhonemeSegment seg;
    try {
      seg.label = j.at("phoneme").get<std::string>();
      seg.start_ms = j.at("start_ms").get<int64_t>();
      seg.end_ms = j.at("end_ms").get<int64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("alignment parse error at line " + std::to_string(lineno) + ": " +
                            e.what());
    }
    seg.criticality = classify_phoneme(seg.label);
    tl.segments.push_back(std::move(seg));
  }
  tl.total_ms = total_ms.value_or(tl.segments.empty() ? 0 : tl.segments.back().end_ms);
  tl.validate();
  return tl;
}

// Keeps exactly the non-critical segments, order preserved. Idempotent.
inline SegmentTimeline filter_noncritical(const SegmentTimeline& timeline) {
  SegmentTimeline out;
  out.clip_id = timeline.clip_id;
  out.total_ms = timeline.total_ms;
  for (const auto& s : timeline.segments)
    if (!s.criticality.critical) out.segments.push_back(s);
  return out;
}

// Half-open index interval.
struct Span {
  int64_t begin = 0;
  int64_t end = 0;
  int64_t size() const { return end - begin; }
  bool empty() const { return end <= begin; }
};

struct SegmentSlice {
  PhonemeSegment segment;
  Span audio_span;  // sample indices
  Span frame_span;  // frame indices
};

// ms -> index conversion: floor the start, ceil the end, clamp to bounds.
// Slices that collapse to zero length in either stream are dropped.
inline std::vector<SegmentSlice> slice_timeline(const SegmentTimeline& timeline, int sample_rate,
                                                int fps, int64_t n_samples, int64_t n_frames) {
  check(sample_rate > 0 && fps > 0, "slice_timeline: sample_rate and fps must be positive");
  int64_t clip_ms_audio = static_cast<int64_t>(std::llround(1000.0 * double(n_samples) / sample_rate));
  int64_t frame_period_ms = static_cast<int64_t>(std::llround(1000.0 / fps));
  check(std::llabs(clip_ms_audio - timeline.total_ms) <= frame_period_ms,
        "slice_timeline: timeline total_ms " + std::to_string(timeline.total_ms) +
            " inconsistent with clip duration " + std::to_string(clip_ms_audio) + "ms");
  std::vector<SegmentSlice> out;
  for (const auto& seg : timeline.segments) {
    SegmentSlice sl;
    sl.segment = seg;
    sl.audio_span.begin = std::clamp<int64_t>(
        static_cast<int64_t>(std::floor(double(seg.start_ms) * sample_rate / 1000.0)), 0,
        n_samples);
    sl.audio_span.end = std::clamp<int64_t>(
        static_cast<int64_t>(std::ceil(double(seg.end_ms) * sample_rate / 1000.0)), 0, n_samples);
    sl.frame_span.begin = std::clamp<int64_t>(
        static_cast<int64_t>(std::floor(double(seg.start_ms) * fps / 1000.0)), 0, n_frames);
    sl.frame_span.end = std::clamp<int64_t>(
        static_cast<int64_t>(std::ceil(double(seg.end_ms) * fps / 1000.0)), 0, n_frames);
    // ceil-end can claim the boundary frame of the next segment; the earlier
    // segment keeps it so spans stay pairwise disjoint
    if (!out.empty()) {
      sl.audio_span.begin = std::max(sl.audio_span.begin, out.back().audio_span.end);
      sl.frame_span.begin = std::max(sl.frame_span.begin, out.back().frame_span.end);
    }
    if (sl.audio_span.empty() || sl.frame_span.empty()) continue;
    out.push_back(std::move(sl));
  }
  return out;
}

}  // namespace npv::screening
