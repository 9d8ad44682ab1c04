#pragma once

// Deterministic video-only degradations at five intensity levels. Audio,
// labels, and timelines pass through untouched.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "npv/errors.hpp"
#include "npv/rng.hpp"
#include "npv/synthcorpus.hpp"

namespace npv::perturb {

enum class Kind { saturation, contrast, block, noise, blur, pixelate, compress };

inline const char* to_string(Kind k) {
  switch (k) {
    case Kind::saturation: return "saturation";
    case Kind::contrast: return "contrast";
    case Kind::block: return "block";
    case Kind::noise: return "noise";
    case Kind::blur: return "blur";
    case Kind::pixelate: return "pixelate";
    case Kind::compress: return "compress";
  }
  return "?";
}

inline Kind kind_from_string(const std::string& s) {
  for (Kind k : {Kind::saturation, Kind::contrast, Kind::block, Kind::noise, Kind::blur,
                 Kind::pixelate, Kind::compress})
    if (s == to_string(k)) return k;
  throw ValidationError("unknown perturbation kind: " + s);
}

inline std::vector<Kind> all_kinds() {
  return {Kind::saturation, Kind::contrast, Kind::block, Kind::noise,
          Kind::blur,       Kind::pixelate, Kind::compress};
}

// level semantics, strictly monotone in level
inline double noise_sigma(int level) { return 4.0 * level; }
inline int blur_radius(int level) { return level; }
inline double desaturation(int level) { return 1.0 - 0.16 * level; }
inline double contrast_scale(int level) { return 1.0 - 0.15 * level; }
inline int pixelate_factor(int level) { return level + 1; }
inline int block_count(int level) { return 2 * level; }
inline double quant_step(int level) { return 6.0 + 10.0 * level; }

namespace detail {

using Frame = std::vector<double>;  // h*w*3

inline void apply_saturation(Frame& f, int h, int w, double s) {
  for (int i = 0; i < h * w; ++i) {
    double r = f[size_t(i * 3)], g = f[size_t(i * 3 + 1)], b = f[size_t(i * 3 + 2)];
    double gray = 0.299 * r + 0.587 * g + 0.114 * b;
    f[size_t(i * 3)] = gray + s * (r - gray);
    f[size_t(i * 3 + 1)] = gray + s * (g - gray);
    f[size_t(i * 3 + 2)] = gray + s * (b - gray);
  }
}

inline void apply_contrast(Frame& f, double c) {
  for (auto& v : f) v = 128.0 + c * (v - 128.0);
}

inline void apply_blocks(Frame& f, int h, int w, int count, Rng& rng) {
  const int size = 6;
  for (int n = 0; n < count; ++n) {
    int y0 = int(rng.uniform_index(uint64_t(std::max(1, h - size))));
    int x0 = int(rng.uniform_index(uint64_t(std::max(1, w - size))));
    for (int y = y0; y < std::min(h, y0 + size); ++y)
      for (int x = x0; x < std::min(w, x0 + size); ++x)
        for (int c = 0; c < 3; ++c) f[size_t((y * w + x) * 3 + c)] = 128.0;
  }
}

inline void apply_noise(Frame& f, double sigma, Rng& rng) {
  for (auto& v : f) v += sigma * rng.normal();
}

// separable box blur, zero-phase, edge-clamped
inline void apply_blur(Frame& f, int h, int w, int radius) {
  Frame tmp(f.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        int cnt = 0;
        for (int dx = -radius; dx <= radius; ++dx) {
          int xx = std::clamp(x + dx, 0, w - 1);
          acc += f[size_t((y * w + xx) * 3 + c)];
          ++cnt;
        }
        tmp[size_t((y * w + x) * 3 + c)] = acc / cnt;
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        int cnt = 0;
        for (int dy = -radius; dy <= radius; ++dy) {
          int yy = std::clamp(y + dy, 0, h - 1);
          acc += tmp[size_t((yy * w + x) * 3 + c)];
          ++cnt;
        }
        f[size_t((y * w + x) * 3 + c)] = acc / cnt;
      }
}

inline void apply_pixelate(Frame& f, int h, int w, int factor) {
  for (int y0 = 0; y0 < h; y0 += factor)
    for (int x0 = 0; x0 < w; x0 += factor)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        int cnt = 0;
        for (int y = y0; y < std::min(h, y0 + factor); ++y)
          for (int x = x0; x < std::min(w, x0 + factor); ++x) {
            acc += f[size_t((y * w + x) * 3 + c)];
            ++cnt;
          }
        double mean = acc / cnt;
        for (int y = y0; y < std::min(h, y0 + factor); ++y)
          for (int x = x0; x < std::min(w, x0 + factor); ++x)
            f[size_t((y * w + x) * 3 + c)] = mean;
      }
}

// codec stand-in: quantize luma deviations from each 8x8 block mean, keep
// chroma untouched
inline void apply_compress(Frame& f, int h, int w, double q) {
  const int bs = 8;
  for (int y0 = 0; y0 < h; y0 += bs)
    for (int x0 = 0; x0 < w; x0 += bs) {
      double mean_y = 0.0;
      int cnt = 0;
      for (int y = y0; y < std::min(h, y0 + bs); ++y)
        for (int x = x0; x < std::min(w, x0 + bs); ++x) {
          size_t at = size_t((y * w + x) * 3);
          mean_y += 0.299 * f[at] + 0.587 * f[at + 1] + 0.114 * f[at + 2];
          ++cnt;
        }
      mean_y /= cnt;
      for (int y = y0; y < std::min(h, y0 + bs); ++y)
        for (int x = x0; x < std::min(w, x0 + bs); ++x) {
          size_t at = size_t((y * w + x) * 3);
          double r = f[at], g = f[at + 1], b = f[at + 2];
          double luma = 0.299 * r + 0.587 * g + 0.114 * b;
          double cb = b - luma, cr = r - luma;
          double quant = mean_y + std::round((luma - mean_y) / q) * q;
          double rr = quant + cr;
          double bb = quant + cb;
          double gg = (quant - 0.299 * rr - 0.114 * bb) / 0.587;
          f[at] = rr;
          f[at + 1] = gg;
          f[at + 2] = bb;
        }
    }
}

inline void degrade_video(std::vector<uint8_t>& video, int64_t frames, int h, int w, Kind kind,
                          int level, Rng& rng) {
  size_t frame_px = size_t(h * w * 3);
  Frame f(frame_px);
  for (int64_t i = 0; i < frames; ++i) {
    uint8_t* base = video.data() + size_t(i) * frame_px;
    for (size_t p = 0; p < frame_px; ++p) f[p] = double(base[p]);
    switch (kind) {
      case Kind::saturation: apply_saturation(f, h, w, desaturation(level)); break;
      case Kind::contrast: apply_contrast(f, contrast_scale(level)); break;
      case Kind::block: apply_blocks(f, h, w, block_count(level), rng); break;
      case Kind::noise: apply_noise(f, noise_sigma(level), rng); break;
      case Kind::blur: apply_blur(f, h, w, blur_radius(level)); break;
      case Kind::pixelate: apply_pixelate(f, h, w, pixelate_factor(level)); break;
      case Kind::compress: apply_compress(f, h, w, quant_step(level)); break;
    }
    for (size_t p = 0; p < frame_px; ++p) base[p] = synthcorpus::detail::quantize(f[p]);
  }
}

}  // namespace detail

// Deterministic given (clip.seed, kind, level); label and timeline unchanged.
inline synthcorpus::ClipTriplet apply(const synthcorpus::ClipTriplet& clip, Kind kind,
                                      int level) {
  check(level >= 1 && level <= 5, "perturb: level must be in 1..5");
  synthcorpus::ClipTriplet out = clip;
  Rng rng_v = Rng::keyed(clip.seed, std::string("perturb_v_") + to_string(kind), uint64_t(level));
  Rng rng_f = Rng::keyed(clip.seed, std::string("perturb_f_") + to_string(kind), uint64_t(level));
  detail::degrade_video(out.viseme_video, out.frames, out.height, out.width, kind, level, rng_v);
  detail::degrade_video(out.face_video, out.frames, out.height, out.width, kind, level, rng_f);
  return out;
}

}  // namespace npv::perturb
