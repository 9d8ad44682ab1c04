#pragma once

// Deterministic synthetic talking-clip generator. Real clips drive audio and
// lip video from one latent phoneme sequence. Fake clips are calibrated at
// critical phoneme segments (lips match the audio) and desynchronized at
// non-critical ones, which is exactly the blind spot the detector targets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "npv/errors.hpp"
#include "npv/parallel.hpp"
#include "npv/rng.hpp"
#include "npv/screening.hpp"

namespace npv::synthcorpus {

namespace fs = std::filesystem;

inline constexpr double kPi = 3.14159265358979323846;

enum class Label { real, fake };
enum class FakeMode { none, av_desync, lip_only };

inline const char* to_string(Label l) { return l == Label::real ? "real" : "fake"; }
inline const char* to_string(FakeMode m) {
  switch (m) {
    case FakeMode::none: return "none";
    case FakeMode::av_desync: return "av_desync";
    case FakeMode::lip_only: return "lip_only";
  }
  return "none";
}

inline Label label_from_string(const std::string& s) {
  if (s == "real") return Label::real;
  if (s == "fake") return Label::fake;
  throw ValidationError("unknown label: " + s);
}

inline FakeMode fake_mode_from_string(const std::string& s) {
  if (s == "none") return FakeMode::none;
  if (s == "av_desync") return FakeMode::av_desync;
  if (s == "lip_only") return FakeMode::lip_only;
  throw ValidationError("unknown fake_mode: " + s);
}

// Per-phoneme synthesis signature: a two-tone audio spectrum and a mouth
// aperture that the lip renderer realizes.
struct PhonemeSig {
  std::string label;
  double f1 = 0.0, f2 = 0.0;  // Hz
  double aperture = 0.0;      // [0, 1]
};

inline std::vector<PhonemeSig> default_inventory() {
  // critical labels draw from the calibrated table (classes 6, 5, 4) and sit
  // at the closed end of the aperture scale; gaps stay above the renderer's
  // resolving power so lip shapes identify the phoneme under pixel noise
  return {
      {"m", 250, 900, 0.08},   {"b", 305, 985, 0.15},   {"p", 360, 1070, 0.22},
      {"f", 415, 1155, 0.29},  {"v", 470, 1240, 0.36},  {"ch", 525, 1325, 0.43},
      {"uw", 690, 1580, 0.50}, {"s", 800, 1750, 0.565}, {"iy", 635, 1495, 0.63},
      {"n", 745, 1665, 0.695}, {"t", 855, 1835, 0.76},  {"k", 910, 1920, 0.825},
      {"l", 965, 2005, 0.89},  {"aa", 580, 1410, 0.955},
  };
}

struct GenConfig {
  int n_real = 8;
  int n_fake = 8;
  int64_t duration_ms = 1000;
  int sample_rate = 16000;
  int fps = 25;
  int height = 32, width = 32;
  double audio_noise = 0.02;  // waveform-unit Gaussian noise
  double pixel_noise = 2.0;   // u8 Gaussian noise per pixel
  int64_t min_phoneme_ms = 80;
  int64_t max_phoneme_ms = 240;
  double lip_only_fraction = 0.5;  // remaining fakes use av_desync
  uint64_t seed = 0;
  std::vector<PhonemeSig> inventory = default_inventory();

  void validate() const {
    check(n_real >= 0 && n_fake >= 0, "GenConfig: negative clip counts");
    check(duration_ms >= min_phoneme_ms, "GenConfig: duration too short to fit one phoneme");
    check(min_phoneme_ms >= 1 && max_phoneme_ms >= min_phoneme_ms, "GenConfig: bad phoneme spans");
    check(sample_rate > 0 && fps > 0 && height > 0 && width > 0, "GenConfig: bad media dims");
    int critical = 0, non_critical = 0;
    for (const auto& sig : inventory) {
      if (screening::classify_phoneme(sig.label).critical)
        ++critical;
      else
        ++non_critical;
      check(sig.f1 > 0 && sig.f2 > 0 && sig.f1 < sample_rate / 2.0 && sig.f2 < sample_rate / 2.0,
            "GenConfig: signature frequency out of range for " + sig.label);
      check(sig.aperture >= 0.0 && sig.aperture <= 1.0,
            "GenConfig: aperture out of [0,1] for " + sig.label);
    }
    check(critical >= 3 && non_critical >= 3,
          "GenConfig: inventory needs at least 3 critical and 3 non-critical phonemes");
  }

  const PhonemeSig& sig(const std::string& label) const {
    for (const auto& s : inventory)
      if (s.label == label) return s;
    throw ValidationError("GenConfig: label not in inventory: " + label);
  }

  nlohmann::json to_json() const {
    nlohmann::json inv = nlohmann::json::array();
    for (const auto& s : inventory)
      inv.push_back({{"label", s.label}, {"f1", s.f1}, {"f2", s.f2}, {"aperture", s.aperture}});
    return {{"n_real", n_real},
            {"n_fake", n_fake},
            {"duration_ms", duration_ms},
            {"sample_rate", sample_rate},
            {"fps", fps},
            {"height", height},
            {"width", width},
            {"audio_noise", audio_noise},
            {"pixel_noise", pixel_noise},
            {"min_phoneme_ms", min_phoneme_ms},
            {"max_phoneme_ms", max_phoneme_ms},
            {"lip_only_fraction", lip_only_fraction},
            {"seed", seed},
            {"inventory", inv}};
  }

  static GenConfig from_json(const nlohmann::json& j) {
    GenConfig c;
    c.n_real = j.value("n_real", c.n_real);
    c.n_fake = j.value("n_fake", c.n_fake);
    c.duration_ms = j.value("duration_ms", c.duration_ms);
    c.sample_rate = j.value("sample_rate", c.sample_rate);
    c.fps = j.value("fps", c.fps);
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.audio_noise = j.value("audio_noise", c.audio_noise);
    c.pixel_noise = j.value("pixel_noise", c.pixel_noise);
    c.min_phoneme_ms = j.value("min_phoneme_ms", c.min_phoneme_ms);
    c.max_phoneme_ms = j.value("max_phoneme_ms", c.max_phoneme_ms);
    c.lip_only_fraction = j.value("lip_only_fraction", c.lip_only_fraction);
    c.seed = j.value("seed", c.seed);
    if (j.contains("inventory")) {
      c.inventory.clear();
      for (const auto& e : j.at("inventory"))
        c.inventory.push_back({e.at("label").get<std::string>(), e.at("f1").get<double>(),
                               e.at("f2").get<double>(), e.at("aperture").get<double>()});
    }
    return c;
  }
};

struct ClipTriplet {
  std::string clip_id;
  std::vector<double> waveform;
  std::vector<uint8_t> viseme_video;  // frames*H*W*3
  std::vector<uint8_t> face_video;
  int64_t frames = 0;
  int height = 0, width = 0;
  int sample_rate = 16000, fps = 25;
  screening::SegmentTimeline timeline;
  Label label = Label::real;
  FakeMode fake_mode = FakeMode::none;
  uint64_t seed = 0;

  void validate() const {
    check(label == Label::fake || fake_mode == FakeMode::none,
          "ClipTriplet: real clip cannot carry a fake mode");
    int64_t audio_ms = int64_t(std::llround(1000.0 * double(waveform.size()) / sample_rate));
    int64_t video_ms = int64_t(std::llround(1000.0 * double(frames) / fps));
    int64_t frame_ms = int64_t(std::llround(1000.0 / fps));
    check(std::llabs(audio_ms - timeline.total_ms) <= frame_ms,
          "ClipTriplet: audio duration disagrees with timeline");
    check(std::llabs(video_ms - timeline.total_ms) <= frame_ms,
          "ClipTriplet: video duration disagrees with timeline");
    timeline.validate();
  }
};

namespace detail {

// --- lip rendering -----------------------------------------------------------

struct MouthSpec {
  double cx, cy, rx, ry_max;
  double bg, depth;  // background level and mouth darkness
};

inline MouthSpec viseme_mouth(int h, int w) {
  return {w / 2.0, h / 2.0, w * 0.36, h * 0.32, 205.0, 170.0};
}
inline MouthSpec face_mouth(int h, int w) {
  return {w / 2.0, h * 0.72, w * 0.22, h * 0.17, 0.0, 150.0};  // bg from texture
}

// Soft-edged filled ellipse: per-pixel coverage falls off linearly in the
// normalized radius so aperture estimates resolve below one pixel.
inline double mouth_coverage(const MouthSpec& m, double aperture, int x, int y) {
  double ry = std::max(0.6, aperture * m.ry_max);
  double dx = (x + 0.5 - m.cx) / m.rx;
  double dy = (y + 0.5 - m.cy) / ry;
  double r = std::sqrt(dx * dx + dy * dy);
  return std::clamp(1.5 * (1.0 - r), 0.0, 1.0);
}

inline uint8_t quantize(double v) {
  return static_cast<uint8_t>(std::clamp(std::llround(v), 0ll, 255ll));
}

// Within-segment aperture trajectory: a slight open-close arc over the
// segment, peaking mid-segment. The modulation stays below the smallest
// inter-phoneme aperture ratio so trajectories of different phonemes never
// cross.
inline double trajectory(double base, double u) {
  return base * (0.96 + 0.04 * std::sin(kPi * std::clamp(u, 0.0, 1.0)));
}

// Renders one noiseless viseme frame at the given aperture.
inline void render_viseme_frame(double aperture, int h, int w, std::vector<double>& out) {
  MouthSpec m = viseme_mouth(h, w);
  out.assign(size_t(h * w * 3), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double cover = mouth_coverage(m, aperture, x, y);
      double v = m.bg - m.depth * cover;
      size_t at = size_t((y * w + x) * 3);
      out[at] = v;
      out[at + 1] = v * 0.92;  // lips tinted: green/blue dimmed
      out[at + 2] = v * 0.90;
    }
}

// Face frame: deterministic textured background plus an embedded lip patch.
inline void render_face_frame(double aperture, int h, int w, uint64_t texture_seed,
                              std::vector<double>& out) {
  MouthSpec m = face_mouth(h, w);
  Rng tex = Rng::keyed(texture_seed, "face_texture");
  double phase_x = tex.uniform(0.0, 6.28), phase_y = tex.uniform(0.0, 6.28);
  double freq_x = 0.2 + 0.3 * tex.uniform(), freq_y = 0.2 + 0.3 * tex.uniform();
  out.assign(size_t(h * w * 3), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double base = 150.0 + 40.0 * std::sin(freq_x * x + phase_x) * std::cos(freq_y * y + phase_y);
      double cover = mouth_coverage(m, aperture, x, y);
      double v = base * (1.0 - cover) + (base - m.depth) * cover;
      size_t at = size_t((y * w + x) * 3);
      out[at] = v;
      out[at + 1] = v * 0.95;
      out[at + 2] = v * 0.88;
    }
}

inline void add_pixel_noise(std::vector<double>& px, double sigma, Rng& rng) {
  if (sigma <= 0.0) return;
  for (auto& v : px) v += sigma * rng.normal();
}

// Integral of the soft-edge coverage profile over the unit disk: coverage is
// 1 up to r = 1/3 and falls linearly to 0 at r = 1.
inline constexpr double kCoverageMass = 1.5126186852945929;

// Estimates the rendered aperture from the darkness mass of the mouth. The
// soft edge scales with the ellipse, so mass is proportional to aperture;
// zero-mean pixel noise cancels in the plain sum.
inline double estimate_aperture(const uint8_t* frame, int h, int w) {
  MouthSpec m = viseme_mouth(h, w);
  double mass = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) mass += m.bg - double(frame[(y * w + x) * 3]);
  return mass / (m.depth * kCoverageMass * m.rx * m.ry_max);
}

}  // namespace detail

// --- sequence construction -----------------------------------------------------

namespace detail {

inline std::vector<screening::PhonemeSegment> draw_segments(const GenConfig& cfg, Rng& rng) {
  std::vector<screening::PhonemeSegment> segs;
  int64_t at = 0;
  while (at < cfg.duration_ms) {
    int64_t dur = cfg.min_phoneme_ms +
                  int64_t(rng.uniform_index(uint64_t(cfg.max_phoneme_ms - cfg.min_phoneme_ms + 1)));
    int64_t end = std::min(at + dur, cfg.duration_ms);
    if (end - at < cfg.min_phoneme_ms && !segs.empty()) {
      segs.back().end_ms = cfg.duration_ms;  // fold the tail into the last segment
      break;
    }
    const auto& sig = cfg.inventory[rng.uniform_index(cfg.inventory.size())];
    segs.push_back({sig.label, at, end, screening::classify_phoneme(sig.label)});
    at = end;
  }
  return segs;
}

inline std::vector<size_t> non_critical_indices(const GenConfig& cfg) {
  std::vector<size_t> out;
  for (size_t i = 0; i < cfg.inventory.size(); ++i)
    if (!screening::classify_phoneme(cfg.inventory[i].label).critical) out.push_back(i);
  return out;
}

// Every clip must expose at least one non-critical segment; relabel the last
// segment if the draw happened to be all-critical.
inline void ensure_noncritical(std::vector<screening::PhonemeSegment>& segs, const GenConfig& cfg,
                               Rng& rng) {
  for (const auto& s : segs)
    if (!s.criticality.critical) return;
  auto nc = non_critical_indices(cfg);
  auto& seg = segs.back();
  seg.label = cfg.inventory[nc[rng.uniform_index(nc.size())]].label;
  seg.criticality = screening::classify_phoneme(seg.label);
}

}  // namespace detail

// Generates one clip. Real clips share a single phoneme sequence between
// audio and video. av_desync resamples an independent audio sequence and
// re-renders lips only at the audio's critical segments (calibration).
// lip_only keeps the audio and re-renders non-critical lips from a wrong
// phoneme.
inline ClipTriplet generate_clip(const GenConfig& cfg, uint64_t seed, Label label,
                                 FakeMode mode) {
  cfg.validate();
  check((label == Label::real) == (mode == FakeMode::none),
        "generate_clip: label/fake_mode combination invalid");

  Rng rng = Rng::keyed(seed, "sequence");
  auto video_segs = detail::draw_segments(cfg, rng);
  detail::ensure_noncritical(video_segs, cfg, rng);

  // audio labels per segment; video labels may diverge for fakes
  std::vector<std::string> audio_labels, video_labels;
  for (const auto& s : video_segs) {
    audio_labels.push_back(s.label);
    video_labels.push_back(s.label);
  }

  if (mode == FakeMode::av_desync) {
    Rng arng = Rng::keyed(seed, "audio_resample");
    for (auto& l : audio_labels) l = cfg.inventory[arng.uniform_index(cfg.inventory.size())].label;
    // at critical audio segments the forger calibrates the lips to the audio
    for (size_t i = 0; i < audio_labels.size(); ++i)
      if (screening::classify_phoneme(audio_labels[i]).critical)
        video_labels[i] = audio_labels[i];
    // the timeline describes the audio
    bool any_noncritical = false, any_mismatch = false;
    for (size_t i = 0; i < audio_labels.size(); ++i)
      if (!screening::classify_phoneme(audio_labels[i]).critical) {
        any_noncritical = true;
        if (video_labels[i] != audio_labels[i]) any_mismatch = true;
      }
    auto nc = detail::non_critical_indices(cfg);
    if (!any_noncritical) {
      size_t i = audio_labels.size() - 1;
      audio_labels[i] = cfg.inventory[nc[arng.uniform_index(nc.size())]].label;
      if (video_labels[i] != audio_labels[i]) any_mismatch = true;
    }
    if (!any_mismatch) {
      // force one detectable desync on a non-critical audio segment
      for (size_t i = 0; i < audio_labels.size(); ++i) {
        if (screening::classify_phoneme(audio_labels[i]).critical) continue;
        std::string alt = audio_labels[i];
        while (alt == audio_labels[i])
          alt = cfg.inventory[nc[arng.uniform_index(nc.size())]].label;
        video_labels[i] = alt;
        break;
      }
    }
  } else if (mode == FakeMode::lip_only) {
    Rng lrng = Rng::keyed(seed, "lip_resample");
    auto nc = detail::non_critical_indices(cfg);
    for (size_t i = 0; i < video_labels.size(); ++i) {
      if (screening::classify_phoneme(audio_labels[i]).critical) continue;
      std::string alt = audio_labels[i];
      while (alt == audio_labels[i]) alt = cfg.inventory[nc[lrng.uniform_index(nc.size())]].label;
      video_labels[i] = alt;
    }
  }

  ClipTriplet clip;
  clip.seed = seed;
  clip.label = label;
  clip.fake_mode = mode;
  clip.sample_rate = cfg.sample_rate;
  clip.fps = cfg.fps;
  clip.height = cfg.height;
  clip.width = cfg.width;
  clip.timeline.total_ms = cfg.duration_ms;
  for (size_t i = 0; i < video_segs.size(); ++i) {
    auto seg = video_segs[i];
    seg.label = audio_labels[i];
    seg.criticality = screening::classify_phoneme(seg.label);
    clip.timeline.segments.push_back(seg);
  }
  clip.timeline.validate();

  // ---- audio synthesis
  int64_t n_samples = cfg.duration_ms * cfg.sample_rate / 1000;
  clip.waveform.assign(size_t(n_samples), 0.0);
  Rng audio_rng = Rng::keyed(seed, "audio_noise");
  for (size_t si = 0; si < clip.timeline.segments.size(); ++si) {
    const auto& seg = clip.timeline.segments[si];
    const auto& sig = cfg.sig(seg.label);
    Rng ph = Rng::keyed(seed, "phase", si);
    double p1 = ph.uniform(0.0, 6.283185307179586);
    double p2 = ph.uniform(0.0, 6.283185307179586);
    int64_t s0 = seg.start_ms * cfg.sample_rate / 1000;
    int64_t s1 = std::min<int64_t>(n_samples, seg.end_ms * cfg.sample_rate / 1000);
    for (int64_t t = s0; t < s1; ++t) {
      double ts = double(t) / cfg.sample_rate;
      clip.waveform[size_t(t)] = 0.35 * std::sin(2.0 * kPi * sig.f1 * ts + p1) +
                                 0.25 * std::sin(2.0 * kPi * sig.f2 * ts + p2);
    }
  }
  if (cfg.audio_noise > 0.0)
    for (auto& v : clip.waveform) v += cfg.audio_noise * audio_rng.normal();

  // ---- video synthesis
  clip.frames = (cfg.duration_ms * cfg.fps + 999) / 1000;
  size_t frame_px = size_t(cfg.height * cfg.width * 3);
  clip.viseme_video.assign(size_t(clip.frames) * frame_px, 0);
  clip.face_video.assign(size_t(clip.frames) * frame_px, 0);
  std::vector<double> vis_px, face_px;
  Rng vis_noise = Rng::keyed(seed, "viseme_noise");
  Rng face_noise = Rng::keyed(seed, "face_noise");
  for (int64_t f = 0; f < clip.frames; ++f) {
    double mid_ms = (double(f) + 0.5) * 1000.0 / cfg.fps;
    size_t si = clip.timeline.segments.size() - 1;
    for (size_t i = 0; i < clip.timeline.segments.size(); ++i)
      if (mid_ms < double(clip.timeline.segments[i].end_ms)) {
        si = i;
        break;
      }
    const auto& seg = clip.timeline.segments[si];
    double u = (mid_ms - double(seg.start_ms)) / double(seg.end_ms - seg.start_ms);
    double ap = detail::trajectory(cfg.sig(video_labels[si]).aperture, u);
    detail::render_viseme_frame(ap, cfg.height, cfg.width, vis_px);
    detail::render_face_frame(ap, cfg.height, cfg.width, seed, face_px);
    detail::add_pixel_noise(vis_px, cfg.pixel_noise, vis_noise);
    detail::add_pixel_noise(face_px, cfg.pixel_noise, face_noise);
    for (size_t i = 0; i < frame_px; ++i) {
      clip.viseme_video[size_t(f) * frame_px + i] = detail::quantize(vis_px[i]);
      clip.face_video[size_t(f) * frame_px + i] = detail::quantize(face_px[i]);
    }
  }
  clip.validate();
  return clip;
}

// --- generation-time self audit -------------------------------------------------

struct SegmentAudit {
  size_t segment_index = 0;
  bool critical = false;
  std::string audio_label;
  std::string rendered_label;  // argmin over inventory references
  bool consistent = false;
};

// Classifies each segment's rendered lips against re-rendered references for
// every inventory phoneme and compares with the audio label.
inline std::vector<SegmentAudit> audit_clip(const ClipTriplet& clip, const GenConfig& cfg) {
  std::vector<SegmentAudit> out;
  size_t frame_px = size_t(clip.height * clip.width * 3);
  std::vector<double> ref;
  for (size_t si = 0; si < clip.timeline.segments.size(); ++si) {
    const auto& seg = clip.timeline.segments[si];
    // frame containing the segment center: its midpoint (the rendering rule)
    // is guaranteed to fall inside any segment at least one frame period long
    double center_ms = 0.5 * double(seg.start_ms + seg.end_ms);
    int64_t f = std::clamp<int64_t>(int64_t(std::floor(center_ms * clip.fps / 1000.0)), 0,
                                    clip.frames - 1);
    double mid_ms = (double(f) + 0.5) * 1000.0 / clip.fps;
    double u = (mid_ms - double(seg.start_ms)) / double(seg.end_ms - seg.start_ms);
    const uint8_t* frame = clip.viseme_video.data() + size_t(f) * frame_px;
    double best = 1e300;
    std::string best_label;
    for (const auto& sig : cfg.inventory) {
      detail::render_viseme_frame(detail::trajectory(sig.aperture, u), clip.height, clip.width,
                                  ref);
      double dist = 0.0;
      for (size_t i = 0; i < frame_px; ++i) dist += std::abs(ref[i] - double(frame[i]));
      if (dist < best) {
        best = dist;
        best_label = sig.label;
      }
    }
    SegmentAudit a;
    a.segment_index = si;
    a.critical = seg.criticality.critical;
    a.audio_label = seg.label;
    a.rendered_label = best_label;
    a.consistent = cfg.sig(best_label).aperture == cfg.sig(seg.label).aperture;
    out.push_back(a);
  }
  return out;
}

// Mean absolute gap between the rendered aperture and the audio phoneme's
// signature over non-critical segments: the ground-truth mismatch feature
// behind the ceiling check.
inline double aperture_mismatch_score(const ClipTriplet& clip, const GenConfig& cfg) {
  size_t frame_px = size_t(clip.height * clip.width * 3);
  double total = 0.0;
  int count = 0;
  for (const auto& seg : clip.timeline.segments) {
    if (seg.criticality.critical) continue;
    double center_ms = 0.5 * double(seg.start_ms + seg.end_ms);
    int64_t f = std::clamp<int64_t>(int64_t(std::floor(center_ms * clip.fps / 1000.0)), 0,
                                    clip.frames - 1);
    double mid_ms = (double(f) + 0.5) * 1000.0 / clip.fps;
    double u = (mid_ms - double(seg.start_ms)) / double(seg.end_ms - seg.start_ms);
    double measured = detail::estimate_aperture(clip.viseme_video.data() + size_t(f) * frame_px,
                                                clip.height, clip.width);
    double expected = detail::trajectory(cfg.sig(seg.label).aperture, u);
    total += std::abs(measured - expected);
    ++count;
  }
  return count == 0 ? 0.0 : total / count;
}

// Asserts the threat-model structure. Real clips: every segment consistent.
// Fakes: all critical segments consistent, at least one non-critical not.
inline void assert_threat_model(const ClipTriplet& clip, const GenConfig& cfg) {
  auto audits = audit_clip(clip, cfg);
  bool any_inconsistent_noncritical = false;
  for (const auto& a : audits) {
    if (clip.label == Label::real) {
      check(a.consistent, clip.clip_id + ": real clip inconsistent at segment " +
                              std::to_string(a.segment_index));
    } else if (a.critical) {
      check(a.consistent, clip.clip_id + ": fake clip not calibrated at critical segment " +
                              std::to_string(a.segment_index));
    } else if (!a.consistent) {
      any_inconsistent_noncritical = true;
    }
  }
  if (clip.label == Label::fake)
    check(any_inconsistent_noncritical,
          clip.clip_id + ": fake clip has no detectable non-critical mismatch");
}

// --- corpus on disk ---------------------------------------------------------------

struct ManifestEntry {
  std::string id;
  Label label = Label::real;
  FakeMode fake_mode = FakeMode::none;
  std::string split;  // train | val | test
  uint64_t seed = 0;
  int64_t duration_ms = 0;
};

struct Manifest {
  GenConfig config;
  std::vector<ManifestEntry> clips;

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : clips)
      arr.push_back({{"id", e.id},
                     {"label", to_string(e.label)},
                     {"fake_mode", to_string(e.fake_mode)},
                     {"split", e.split},
                     {"seed", e.seed},
                     {"duration_ms", e.duration_ms}});
    return {{"format", "npv-corpus-v1"}, {"config", config.to_json()}, {"clips", arr}};
  }

  static Manifest from_json(const nlohmann::json& j) {
    check(j.value("format", "") == "npv-corpus-v1", "manifest: unknown format");
    Manifest m;
    m.config = GenConfig::from_json(j.at("config"));
    for (const auto& e : j.at("clips")) {
      ManifestEntry me;
      me.id = e.at("id").get<std::string>();
      me.label = label_from_string(e.at("label").get<std::string>());
      me.fake_mode = fake_mode_from_string(e.at("fake_mode").get<std::string>());
      me.split = e.at("split").get<std::string>();
      me.seed = e.at("seed").get<uint64_t>();
      me.duration_ms = e.at("duration_ms").get<int64_t>();
      m.clips.push_back(std::move(me));
    }
    return m;
  }
};

inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t manifest_digest(const Manifest& m) { return fnv1a(m.to_json().dump()); }

namespace detail {

// train gets floor(0.8 n); the remainder splits evenly between val and test
// (odd remainder favors test)
inline std::string split_for(size_t index, size_t n) {
  size_t train = size_t(std::floor(0.8 * double(n)));
  size_t rest = n - train;
  size_t val = rest / 2;
  if (index < train) return "train";
  if (index < train + val) return "val";
  return "test";
}

inline void write_raw(const fs::path& path, const void* data, size_t bytes,
                      const std::string& shape_line) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data), std::streamsize(bytes));
  if (!out) throw std::runtime_error("write failed: " + path.string());
  std::ofstream shape(path.string() + ".shape", std::ios::trunc);
  if (!shape) throw std::runtime_error("cannot write " + path.string() + ".shape");
  shape << shape_line << "\n";
}

}  // namespace detail

inline void save_clip(const ClipTriplet& clip, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<float> audio32(clip.waveform.size());
  for (size_t i = 0; i < audio32.size(); ++i) audio32[i] = float(clip.waveform[i]);
  detail::write_raw(dir / "audio.f32", audio32.data(), audio32.size() * 4,
                    "f32 " + std::to_string(audio32.size()));
  std::string vshape = "u8 " + std::to_string(clip.frames) + " " + std::to_string(clip.height) +
                       " " + std::to_string(clip.width) + " 3";
  detail::write_raw(dir / "viseme.u8", clip.viseme_video.data(), clip.viseme_video.size(), vshape);
  detail::write_raw(dir / "face.u8", clip.face_video.data(), clip.face_video.size(), vshape);
  std::ofstream align(dir / "align.jsonl", std::ios::trunc);
  if (!align) throw std::runtime_error("cannot write " + (dir / "align.jsonl").string());
  for (const auto& seg : clip.timeline.segments)
    align << nlohmann::json{{"phoneme", seg.label}, {"start_ms", seg.start_ms},
                            {"end_ms", seg.end_ms}}
                 .dump()
          << "\n";
}

// Writes the whole corpus: per-clip media plus manifest.json. Per-clip seeds
// are hash(config.seed, clip index), so generation order (and parallelism)
// never changes content.
inline Manifest generate_corpus(const GenConfig& cfg, const fs::path& root,
                                unsigned threads = 0) {
  cfg.validate();
  fs::create_directories(root);
  Manifest manifest;
  manifest.config = cfg;

  struct Job {
    ManifestEntry entry;
  };
  std::vector<Job> jobs;
  int n_lip_only = int(std::llround(cfg.lip_only_fraction * cfg.n_fake));
  for (int i = 0; i < cfg.n_real; ++i) {
    ManifestEntry e;
    char buf[32];
    std::snprintf(buf, sizeof buf, "real_%05d", i);
    e.id = buf;
    e.label = Label::real;
    e.fake_mode = FakeMode::none;
    e.split = detail::split_for(size_t(i), size_t(cfg.n_real));
    e.seed = hash_combine(cfg.seed, uint64_t(i));
    e.duration_ms = cfg.duration_ms;
    jobs.push_back({e});
  }
  for (int i = 0; i < cfg.n_fake; ++i) {
    ManifestEntry e;
    char buf[32];
    std::snprintf(buf, sizeof buf, "fake_%05d", i);
    e.id = buf;
    e.label = Label::fake;
    e.fake_mode = i < n_lip_only ? FakeMode::lip_only : FakeMode::av_desync;
    e.split = detail::split_for(size_t(i), size_t(cfg.n_fake));
    e.seed = hash_combine(cfg.seed, uint64_t(cfg.n_real + i));
    e.duration_ms = cfg.duration_ms;
    jobs.push_back({e});
  }

  parallel_for(jobs.size(), [&](size_t i) {
    const auto& e = jobs[i].entry;
    ClipTriplet clip = generate_clip(cfg, e.seed, e.label, e.fake_mode);
    clip.clip_id = e.id;
    assert_threat_model(clip, cfg);
    save_clip(clip, root / e.id);
  }, threads);

  for (auto& j : jobs) manifest.clips.push_back(std::move(j.entry));
  std::ofstream out(root / "manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest at " + root.string());
  out << manifest.to_json().dump(2) << "\n";
  return manifest;
}

inline Manifest load_manifest(const fs::path& root) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw std::runtime_error("cannot open manifest at " + root.string());
  nlohmann::json j;
  in >> j;
  return Manifest::from_json(j);
}

inline ClipTriplet load_clip(const fs::path& root, const Manifest& manifest,
                             const ManifestEntry& entry) {
  fs::path dir = root / entry.id;
  ClipTriplet clip;
  clip.clip_id = entry.id;
  clip.label = entry.label;
  clip.fake_mode = entry.fake_mode;
  clip.seed = entry.seed;
  clip.sample_rate = manifest.config.sample_rate;
  clip.fps = manifest.config.fps;
  clip.height = manifest.config.height;
  clip.width = manifest.config.width;

  auto read_all = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
  };
  auto audio_bytes = read_all(dir / "audio.f32");
  check(audio_bytes.size() % 4 == 0, "corrupt audio at " + dir.string());
  clip.waveform.resize(audio_bytes.size() / 4);
  const float* f32 = reinterpret_cast<const float*>(audio_bytes.data());
  for (size_t i = 0; i < clip.waveform.size(); ++i) clip.waveform[i] = double(f32[i]);

  auto vis = read_all(dir / "viseme.u8");
  auto face = read_all(dir / "face.u8");
  size_t frame_px = size_t(clip.height * clip.width * 3);
  check(vis.size() % frame_px == 0 && vis.size() == face.size(),
        "corrupt video at " + dir.string());
  clip.frames = int64_t(vis.size() / frame_px);
  clip.viseme_video.assign(vis.begin(), vis.end());
  clip.face_video.assign(face.begin(), face.end());

  std::ifstream align(dir / "align.jsonl");
  if (!align) throw std::runtime_error("cannot open " + (dir / "align.jsonl").string());
  clip.timeline = screening::parse_alignment(align, entry.id, entry.duration_ms);
  clip.validate();
  return clip;
}

}  // namespace npv::synthcorpus
