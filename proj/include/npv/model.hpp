#pragma once

// Full detector model: three tokenizer/encoder streams, the hierarchical
// common-space heads, cross-attention fusion, and the per-segment classifier,
// all registered under one named parameter tree.
//
// A batch forward runs in stages: per-segment stream graphs are independent
// (and run in parallel), their pooled outputs cross into a single-threaded
// loss head through leaf boundaries, and backward runs head-first, then per
// stream, with gradients merged in a fixed order so thread count never
// changes results.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "npv/autodiff.hpp"
#include "npv/common_space.hpp"
#include "npv/encoder.hpp"
#include "npv/errors.hpp"
#include "npv/objectives.hpp"
#include "npv/parallel.hpp"
#include "npv/params.hpp"
#include "npv/pvam.hpp"
#include "npv/screening.hpp"
#include "npv/synthcorpus.hpp"
#include "npv/tokenizer.hpp"

namespace npv::model {

using ad::Mat;
using ad::Tensor;

struct ModelConfig {
  uint64_t seed = 1;
  Eigen::Index d = 64;
  Eigen::Index d_c = 128;
  Eigen::Index audio_patch = 400;  // 25 ms at 16 kHz
  Eigen::Index tube_t = 2, tube_h = 8, tube_w = 8;
  Eigen::Index max_tokens = 256;
  int enc_blocks = 2;
  int enc_heads = 4;
  Eigen::Index enc_window = 8;
  Eigen::Index enc_shift = 4;
  Eigen::Index lfa_kernel = 3;
  Eigen::Index ffn_mult = 4;
  std::string lfa_position = "post_attn";  // or "pre_attn"
  Eigen::Index cafm_k = 64;
  Eigen::Index cafm_seq = 16;
  std::string pf_anchor = "phoneme_pv";  // or "phoneme_raw"
  double tau = 0.07;
  double tau_prime = 0.07;
  double lambda = 5e-3;
  double w_ce = 1.0;
  std::string ec_denominator = "literal";  // or "dedup"
  std::string ec_reduction = "sum";        // or "mean"
  bool contrastive_on_fakes = true;

  nlohmann::json to_json() const {
    return {{"seed", seed},
            {"d", d},
            {"d_c", d_c},
            {"audio_patch", audio_patch},
            {"tube_t", tube_t},
            {"tube_h", tube_h},
            {"tube_w", tube_w},
            {"max_tokens", max_tokens},
            {"enc_blocks", enc_blocks},
            {"enc_heads", enc_heads},
            {"enc_window", enc_window},
            {"enc_shift", enc_shift},
            {"lfa_kernel", lfa_kernel},
            {"ffn_mult", ffn_mult},
            {"lfa_position", lfa_position},
            {"cafm_k", cafm_k},
            {"cafm_seq", cafm_seq},
            {"pf_anchor", pf_anchor},
            {"tau", tau},
            {"tau_prime", tau_prime},
            {"lambda", lambda},
            {"w_ce", w_ce},
            {"ec_denominator", ec_denominator},
            {"ec_reduction", ec_reduction},
            {"contrastive_on_fakes", contrastive_on_fakes}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.seed = j.value("seed", c.seed);
    c.d = j.value("d", c.d);
    c.d_c = j.value("d_c", c.d_c);
    c.audio_patch = j.value("audio_patch", c.audio_patch);
    c.tube_t = j.value("tube_t", c.tube_t);
    c.tube_h = j.value("tube_h", c.tube_h);
    c.tube_w = j.value("tube_w", c.tube_w);
    c.max_tokens = j.value("max_tokens", c.max_tokens);
    c.enc_blocks = j.value("enc_blocks", c.enc_blocks);
    c.enc_heads = j.value("enc_heads", c.enc_heads);
    c.enc_window = j.value("enc_window", c.enc_window);
    c.enc_shift = j.value("enc_shift", c.enc_shift);
    c.lfa_kernel = j.value("lfa_kernel", c.lfa_kernel);
    c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
    c.lfa_position = j.value("lfa_position", c.lfa_position);
    c.cafm_k = j.value("cafm_k", c.cafm_k);
    c.cafm_seq = j.value("cafm_seq", c.cafm_seq);
    c.pf_anchor = j.value("pf_anchor", c.pf_anchor);
    c.tau = j.value("tau", c.tau);
    c.tau_prime = j.value("tau_prime", c.tau_prime);
    c.lambda = j.value("lambda", c.lambda);
    c.w_ce = j.value("w_ce", c.w_ce);
    c.ec_denominator = j.value("ec_denominator", c.ec_denominator);
    c.ec_reduction = j.value("ec_reduction", c.ec_reduction);
    c.contrastive_on_fakes = j.value("contrastive_on_fakes", c.contrastive_on_fakes);
    return c;
  }

  uint64_t digest() const { return synthcorpus::fnv1a(to_json().dump()); }
};

// Raw per-segment media extracted from one clip.
struct SegmentData {
  std::vector<double> audio;
  std::vector<double> viseme;  // (frames*H*W*3) voxels in [-0.5, 0.5]
  std::vector<double> face;
  Eigen::Index frames = 0;
  int height = 0, width = 0;
};

// Slices a clip to its non-critical segments and normalizes media. Segments
// beyond max_segments are dropped (the CAFM capacity bounds the fused
// sequence).
inline std::vector<SegmentData> clip_segments(const synthcorpus::ClipTriplet& clip,
                                              Eigen::Index max_segments) {
  auto filtered = screening::filter_noncritical(clip.timeline);
  auto slices = screening::slice_timeline(filtered, clip.sample_rate, clip.fps,
                                          int64_t(clip.waveform.size()), clip.frames);
  std::vector<SegmentData> out;
  size_t frame_px = size_t(clip.height * clip.width * 3);
  for (const auto& sl : slices) {
    if (Eigen::Index(out.size()) >= max_segments) break;
    SegmentData seg;
    seg.height = clip.height;
    seg.width = clip.width;
    seg.audio.assign(clip.waveform.begin() + sl.audio_span.begin,
                     clip.waveform.begin() + sl.audio_span.end);
    seg.frames = sl.frame_span.size();
    seg.viseme.resize(size_t(seg.frames) * frame_px);
    seg.face.resize(size_t(seg.frames) * frame_px);
    for (int64_t f = 0; f < seg.frames; ++f) {
      const uint8_t* vsrc = clip.viseme_video.data() + size_t(sl.frame_span.begin + f) * frame_px;
      const uint8_t* fsrc = clip.face_video.data() + size_t(sl.frame_span.begin + f) * frame_px;
      for (size_t i = 0; i < frame_px; ++i) {
        seg.viseme[size_t(f) * frame_px + i] = double(vsrc[i]) / 255.0 - 0.5;
        seg.face[size_t(f) * frame_px + i] = double(fsrc[i]) / 255.0 - 0.5;
      }
    }
    out.push_back(std::move(seg));
  }
  return out;
}

enum class Stage { pretrain, finetune, inference };

struct BatchResult {
  double l_ec = 0.0, l_info = 0.0, l_cor = 0.0, l_ce = 0.0;
  double l_pre = 0.0, l_total = 0.0;
  std::vector<double> probs;           // per clip fake probability
  std::vector<bool> prob_degenerate;   // true when a clip had no usable segments
  ad::GradMap grads;                   // trainable-parameter gradients
  encoder::BnUpdates bn_updates;       // ordered running-stat updates
  int skipped_clips = 0;               // clips without usable segments
};

class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)), reg_(cfg_.seed) { build(); }

  const ModelConfig& config() const { return cfg_; }
  params::Registry& registry() { return reg_; }
  const params::Registry& registry() const { return reg_; }

  // Forward (and optionally backward) over a batch of clips.
  // labels[i] is 1 for fake; required for the finetune stage.
  BatchResult run_batch(const std::vector<const synthcorpus::ClipTriplet*>& clips,
                        const std::vector<int>& labels, Stage stage, bool with_grads,
                        bool train_mode, unsigned threads = 0) const {
    check(!clips.empty(), "run_batch: empty batch");
    if (stage == Stage::finetune)
      check(labels.size() == clips.size(), "run_batch: finetune requires labels");

    // ---- stage 1: per-segment stream graphs (parallel)
    struct Run {
      size_t clip = 0;
      Tensor pooled[3];    // roots inside the stream graph
      Tensor boundary[3];  // head-side leaves carrying the pooled values
      encoder::BnUpdates bn;
    };
    std::vector<std::vector<SegmentData>> segs(clips.size());
    std::vector<size_t> seg_offset(clips.size() + 1, 0);
    for (size_t c = 0; c < clips.size(); ++c) {
      segs[c] = clip_segments(*clips[c], cfg_.cafm_seq);
      seg_offset[c + 1] = seg_offset[c] + segs[c].size();
    }
    size_t total_segs = seg_offset.back();
    std::vector<Run> runs(total_segs);
    parallel_for(total_segs, [&](size_t i) {
      size_t c = 0;
      while (seg_offset[c + 1] <= i) ++c;
      const SegmentData& sd = segs[c][i - seg_offset[c]];
      Run& run = runs[i];
      run.clip = c;
      auto tok_a = tokenizer::tokenize_audio(sd.audio, audio_spec_, tok_p_);
      auto emb_a = encoder::encode_stream(tok_a, enc_p_, train_mode, &run.bn);
      auto tok_v = tokenizer::tokenize_video(sd.viseme, sd.frames, sd.height, sd.width,
                                             video_spec_, tok_v_, tokenizer::Modality::viseme);
      auto emb_v = encoder::encode_stream(tok_v, enc_v_, train_mode, &run.bn);
      auto tok_f = tokenizer::tokenize_video(sd.face, sd.frames, sd.height, sd.width, video_spec_,
                                             tok_f_, tokenizer::Modality::face);
      auto emb_f = encoder::encode_stream(tok_f, enc_f_, train_mode, &run.bn);
      run.pooled[0] = emb_a.pooled;
      run.pooled[1] = emb_v.pooled;
      run.pooled[2] = emb_f.pooled;
      for (int s = 0; s < 3; ++s)
        run.boundary[s] = with_grads ? ad::leaf(run.pooled[s].val())
                                     : ad::constant(run.pooled[s].val());
    }, threads);

    BatchResult result;
    std::vector<size_t> usable_clips;
    for (size_t c = 0; c < clips.size(); ++c) {
      if (segs[c].empty())
        ++result.skipped_clips;
      else
        usable_clips.push_back(c);
    }

    // ---- stage 2: loss head (single thread)
    encoder::BnUpdates head_bn;
    Tensor loss;
    std::vector<Tensor> clip_prob_tensors(clips.size());

    if (total_segs > 0) {
      std::vector<Tensor> p_rows, v_rows, f_rows;
      for (const auto& run : runs) {
        p_rows.push_back(run.boundary[0]);
        v_rows.push_back(run.boundary[1]);
        f_rows.push_back(run.boundary[2]);
      }
      Tensor p_raw = ad::concat_rows(p_rows);  // N x d
      Tensor v_raw = ad::concat_rows(v_rows);
      Tensor f_raw = ad::concat_rows(f_rows);

      // contrastive scope: optionally only real clips contribute
      std::vector<Eigen::Index> contrastive_rows;
      std::vector<size_t> contrastive_clips;
      for (size_t c : usable_clips) {
        bool include = true;
        if (stage == Stage::finetune && !cfg_.contrastive_on_fakes)
          include = labels[c] == 0;
        if (!include) continue;
        contrastive_clips.push_back(c);
        for (size_t i = seg_offset[c]; i < seg_offset[c + 1]; ++i)
          contrastive_rows.push_back(Eigen::Index(i));
      }

      Tensor l_ec, l_info, l_cor;
      bool contrastive_active = stage != Stage::inference && contrastive_rows.size() >= 1 &&
                                contrastive_clips.size() >= 2;
      if (stage != Stage::inference) {
        check(usable_clips.size() >= 2 || stage == Stage::finetune,
              "run_batch: contrastive losses need a batch of >= 2 usable clips");
      }
      if (contrastive_active) {
        Tensor p_sel = ad::permute_rows(p_raw, contrastive_rows);
        Tensor v_sel = ad::permute_rows(v_raw, contrastive_rows);
        Tensor f_sel = ad::permute_rows(f_raw, contrastive_rows);
        auto pv = common_space::to_pv(p_sel, v_sel, heads_, train_mode, &head_bn);
        l_ec = objectives::ec_loss(
            {pv.anchor, pv.counterpart, cfg_.tau},
            cfg_.ec_denominator == "dedup" ? objectives::EcDenominator::dedup
                                           : objectives::EcDenominator::literal,
            cfg_.ec_reduction == "mean" ? objectives::EcReduction::mean
                                        : objectives::EcReduction::sum);
        Tensor pf_anchor_in =
            cfg_.pf_anchor == "phoneme_raw" ? p_sel : pv.anchor;
        auto pf = common_space::to_pf(pf_anchor_in, f_sel, heads_, train_mode, &head_bn);
        l_info = objectives::infonce_loss(pf.anchor, pf.counterpart, cfg_.tau_prime);
      }

      // fusion per usable clip
      std::vector<std::pair<Tensor, Tensor>> fusion_in;
      for (size_t c : usable_clips) {
        Eigen::Index n = Eigen::Index(seg_offset[c + 1] - seg_offset[c]);
        Tensor xp = ad::transpose(ad::slice_rows(p_raw, Eigen::Index(seg_offset[c]), n));
        Tensor xv = ad::transpose(ad::slice_rows(v_raw, Eigen::Index(seg_offset[c]), n));
        fusion_in.push_back({xp, xv});
      }
      pvam::PvamOutput fused;
      bool fusion_active = !fusion_in.empty();
      if (fusion_active) {
        fused = pvam::pvam_forward(fusion_in, cafm_, adapter_, /*want_alignment=*/false);
        // alignment over the contrastive scope, reusing the fused outputs
        std::vector<Tensor> arows_p, arows_v;
        for (size_t idx = 0; idx < usable_clips.size(); ++idx) {
          size_t c = usable_clips[idx];
          bool in_scope = true;
          if (stage == Stage::finetune && !cfg_.contrastive_on_fakes) in_scope = labels[c] == 0;
          if (!in_scope) continue;
          arows_p.push_back(ad::transpose(fused.fused[idx].pooled_p));
          arows_v.push_back(ad::transpose(fused.fused[idx].pooled_v));
        }
        if (contrastive_active && arows_p.size() >= 2) {
          Tensor aligned_p = ad::concat_rows(arows_p);
          Tensor aligned_v = ad::concat_rows(arows_v);
          if (adapter_.active) {
            aligned_p = ad::matmul(aligned_p, adapter_.w_p);
            aligned_v = ad::matmul(aligned_v, adapter_.w_v);
          }
          l_cor = objectives::cgra_loss(aligned_p, aligned_v, cfg_.lambda);
        }
      }

      // classifier: per-segment logits from (pooled face, fused column)
      if (fusion_active) {
        for (size_t idx = 0; idx < usable_clips.size(); ++idx) {
          size_t c = usable_clips[idx];
          const auto& fr = fused.fused[idx];
          std::vector<Tensor> seg_logits;
          for (size_t i = seg_offset[c]; i < seg_offset[c + 1]; ++i) {
            Eigen::Index local = Eigen::Index(i - seg_offset[c]);
            Tensor xatt_col = ad::transpose(ad::slice_cols(fr.x_att, local, 1));
            Tensor z = ad::concat_cols({runs[i].boundary[2], xatt_col});
            seg_logits.push_back(ad::add(ad::matmul(z, cls_w_), cls_b_));
          }
          Tensor logits = seg_logits.size() == 1 ? seg_logits[0]
                                                 : ad::col_mean(ad::concat_rows(seg_logits));
          Tensor prob = ad::slice_cols(ad::softmax_rows(logits), 1, 1);  // P(fake)
          clip_prob_tensors[c] = prob;
        }
      }

      // assemble stage loss
      auto zero_scalar = [] { return ad::constant(Mat::Zero(1, 1)); };
      if (!l_ec.defined()) l_ec = zero_scalar();
      if (!l_info.defined()) l_info = zero_scalar();
      if (!l_cor.defined()) l_cor = zero_scalar();
      objectives::PretrainParts parts{l_ec, l_info, l_cor};
      if (stage == Stage::finetune) {
        std::vector<Tensor> prob_rows;
        std::vector<int> used_labels;
        for (size_t c : usable_clips) {
          prob_rows.push_back(clip_prob_tensors[c]);
          used_labels.push_back(labels[c]);
        }
        check(!prob_rows.empty(), "run_batch: no usable clips for the classifier");
        Tensor probs = ad::concat_rows(prob_rows);
        Tensor l_ce = objectives::ce_loss(probs, used_labels);
        loss = objectives::finetune_loss(parts, l_ce, cfg_.w_ce);
        result.l_ce = l_ce.val()(0, 0);
      } else if (stage == Stage::pretrain) {
        loss = objectives::pretrain_loss(parts);
      }
      result.l_ec = l_ec.val()(0, 0);
      result.l_info = l_info.val()(0, 0);
      result.l_cor = l_cor.val()(0, 0);
      result.l_pre = result.l_ec + result.l_info + result.l_cor;
      result.l_total = stage == Stage::finetune ? result.l_pre + cfg_.w_ce * result.l_ce
                                                : result.l_pre;
    }

    // per-clip probabilities (0.5 + flag for clips without usable segments)
    result.probs.assign(clips.size(), 0.5);
    result.prob_degenerate.assign(clips.size(), false);
    for (size_t c = 0; c < clips.size(); ++c) {
      if (clip_prob_tensors[c].defined())
        result.probs[c] = clip_prob_tensors[c].val()(0, 0);
      else
        result.prob_degenerate[c] = true;
    }

    // ---- stage 3: backward
    if (with_grads && loss.defined()) {
      ad::GradMap head_grads = ad::backward_scalar(loss);
      std::vector<ad::GradMap> run_grads(total_segs);
      parallel_for(total_segs, [&](size_t i) {
        for (int s = 0; s < 3; ++s) {
          auto it = head_grads.find(runs[i].boundary[s].node().get());
          if (it == head_grads.end()) continue;
          ad::backward(runs[i].pooled[s], it->second, run_grads[i]);
        }
      }, threads);
      // fixed merge order: head first, then runs in (clip, segment) order
      result.grads = std::move(head_grads);
      for (size_t i = 0; i < total_segs; ++i)
        for (auto& [node, g] : run_grads[i]) {
          auto [it, inserted] = result.grads.try_emplace(node, g);
          if (!inserted) it->second += g;
        }
    }

    // ---- running-stat updates in deterministic order
    if (train_mode) {
      for (auto& run : runs)
        for (auto& u : run.bn) result.bn_updates.push_back(std::move(u));
      for (auto& u : head_bn) result.bn_updates.push_back(std::move(u));
    }
    return result;
  }

 private:
  void build() {
    // tokenizers
    audio_spec_.audio_patch = cfg_.audio_patch;
    audio_spec_.d = cfg_.d;
    audio_spec_.max_tokens = cfg_.max_tokens;
    video_spec_ = audio_spec_;
    video_spec_.tube_t = cfg_.tube_t;
    video_spec_.tube_h = cfg_.tube_h;
    video_spec_.tube_w = cfg_.tube_w;
    double tok_scale = 1.0 / std::sqrt(double(cfg_.audio_patch));
    tok_p_.projection =
        reg_.param("tok.phoneme.w", cfg_.audio_patch, cfg_.d, params::Init::normal, tok_scale);
    tok_p_.positions = reg_.param("tok.phoneme.pos", cfg_.max_tokens, cfg_.d,
                                  params::Init::normal, 0.02);
    Eigen::Index vpp = cfg_.tube_t * cfg_.tube_h * cfg_.tube_w * 3;
    double vtok_scale = 1.0 / std::sqrt(double(vpp));
    tok_v_.projection = reg_.param("tok.viseme.w", vpp, cfg_.d, params::Init::normal, vtok_scale);
    tok_v_.positions = reg_.param("tok.viseme.pos", cfg_.max_tokens, cfg_.d,
                                  params::Init::normal, 0.02);
    tok_f_.projection = reg_.param("tok.face.w", vpp, cfg_.d, params::Init::normal, vtok_scale);
    tok_f_.positions = reg_.param("tok.face.pos", cfg_.max_tokens, cfg_.d,
                                  params::Init::normal, 0.02);

    // encoders
    encoder::EncoderConfig ec;
    ec.n_blocks = cfg_.enc_blocks;
    ec.n_heads = cfg_.enc_heads;
    ec.d = cfg_.d;
    ec.window = cfg_.enc_window;
    ec.shift = cfg_.enc_shift;
    ec.lfa_kernel = cfg_.lfa_kernel;
    ec.ffn_mult = cfg_.ffn_mult;
    ec.max_tokens = cfg_.max_tokens;
    ec.lfa_position = cfg_.lfa_position == "pre_attn" ? encoder::LfaPosition::pre_attn
                                                      : encoder::LfaPosition::post_attn;
    enc_p_ = encoder::EncoderParams::create(reg_, "enc.phoneme", ec, /*grid=*/false);
    enc_v_ = encoder::EncoderParams::create(reg_, "enc.viseme", ec, /*grid=*/true);
    enc_f_ = encoder::EncoderParams::create(reg_, "enc.face", ec, /*grid=*/true);

    // common-space heads
    heads_ = common_space::ProjectionHeads::create(
        reg_, "heads", cfg_.d, cfg_.d_c,
        cfg_.pf_anchor == "phoneme_raw" ? common_space::PfAnchorSource::phoneme_raw
                                        : common_space::PfAnchorSource::phoneme_pv);

    // fusion
    pvam::CafmConfig cc;
    cc.d_p = cfg_.d;
    cc.d_v = cfg_.d;
    cc.k = cfg_.cafm_k;
    cc.seq = cfg_.cafm_seq;
    cafm_ = pvam::CafmParams::create(reg_, "cafm", cc);
    adapter_ = pvam::AlignmentAdapter::create(reg_, "cafm", cc);

    // classifier head (finetune-exclusive): zero init keeps the untrained
    // fake probability at exactly 0.5
    reg_.set_group("head");
    cls_w_ = reg_.param("cls.w", cfg_.d + cc.d_p + cc.d_v, 2, params::Init::zero);
    cls_b_ = reg_.param("cls.b", 1, 2, params::Init::zero);
    reg_.set_group("shared");
  }

  ModelConfig cfg_;
  params::Registry reg_;
  tokenizer::PatchSpec audio_spec_, video_spec_;
  tokenizer::TokenizerParams tok_p_, tok_v_, tok_f_;
  encoder::EncoderParams enc_p_, enc_v_, enc_f_;
  common_space::ProjectionHeads heads_;
  pvam::CafmParams cafm_;
  pvam::AlignmentAdapter adapter_;
  Tensor cls_w_, cls_b_;
};

}  // namespace npv::model
