#pragma once

// Two-stage training (self-supervised pretrain, supervised finetune),
// prediction, video-level evaluation, and checkpointing.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "npv/gradcheck.hpp"
#include "npv/model.hpp"
#include "npv/perturb.hpp"

namespace npv::pipeline {

namespace fs = std::filesystem;
using ad::Mat;
using synthcorpus::ClipTriplet;
using synthcorpus::Label;

struct TrainConfig {
  double lr_new = 1e-3;      // finetune-exclusive modules; also the pretrain rate
  double lr_shared = 5e-6;   // pretrain-and-finetune shared modules during finetune
  double weight_decay = 1e-2;
  int batch = 16;            // desk-scale default; the reference setting is 64
  int epochs = 10;
  uint64_t seed = 0;
  unsigned threads = 0;

  void validate() const {
    check(lr_new >= 0.0 && lr_shared >= 0.0, "TrainConfig: negative learning rate");
    check(weight_decay >= 0.0, "TrainConfig: negative weight decay");
    check(batch >= 2, "TrainConfig: contrastive losses need batch >= 2");
    check(epochs >= 0, "TrainConfig: negative epochs");
  }

  nlohmann::json to_json() const {
    return {{"lr_new", lr_new},   {"lr_shared", lr_shared}, {"weight_decay", weight_decay},
            {"batch", batch},     {"epochs", epochs},       {"seed", seed}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lr_new = j.value("lr_new", c.lr_new);
    c.lr_shared = j.value("lr_shared", c.lr_shared);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch = j.value("batch", c.batch);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    return c;
  }
};

// Adam with decoupled weight decay. Parameter order is the registry order,
// fixed at model construction.
class AdamW {
 public:
  explicit AdamW(const params::Registry& reg, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& e : reg.entries()) {
      if (!e.trainable) continue;
      State s;
      s.node = e.tensor.node().get();
      s.head_group = e.group == "head";
      s.m = Mat::Zero(e.tensor.rows(), e.tensor.cols());
      s.v = Mat::Zero(e.tensor.rows(), e.tensor.cols());
      states_.push_back(std::move(s));
    }
  }

  void step(const ad::GradMap& grads, double lr_shared, double lr_head, double weight_decay) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (auto& s : states_) {
      double lr = s.head_group ? lr_head : lr_shared;
      auto it = grads.find(s.node);
      Mat g = it != grads.end() ? it->second : Mat::Zero(s.m.rows(), s.m.cols());
      s.m = beta1_ * s.m + (1.0 - beta1_) * g;
      s.v = (beta2_ * s.v.array() + (1.0 - beta2_) * g.array().square()).matrix();
      Mat mhat = s.m / bc1;
      Mat vhat = s.v / bc2;
      Mat update = (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
      s.node->value -= lr * (update + weight_decay * s.node->value);
    }
  }

  int64_t steps_taken() const { return t_; }

 private:
  struct State {
    ad::Node* node = nullptr;
    bool head_group = false;
    Mat m, v;
  };
  std::vector<State> states_;
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

// ---- corpus access ----------------------------------------------------------

struct LoadedCorpus {
  synthcorpus::Manifest manifest;
  std::vector<ClipTriplet> clips;  // aligned with kept manifest entries
  std::vector<synthcorpus::ManifestEntry> entries;
  uint64_t digest = 0;
};

inline LoadedCorpus load_corpus(const fs::path& root, const std::string& split = "all",
                                unsigned threads = 0) {
  LoadedCorpus out;
  out.manifest = synthcorpus::load_manifest(root);
  out.digest = synthcorpus::manifest_digest(out.manifest);
  for (const auto& e : out.manifest.clips)
    if (split == "all" || e.split == split) out.entries.push_back(e);
  out.clips.resize(out.entries.size());
  parallel_for(out.entries.size(), [&](size_t i) {
    out.clips[i] = synthcorpus::load_clip(root, out.manifest, out.entries[i]);
  }, threads);
  return out;
}

// ---- training loops ----------------------------------------------------------

struct EpochStats {
  double l_total = 0.0, l_ec = 0.0, l_info = 0.0, l_cor = 0.0, l_ce = 0.0;
  int batches = 0;
  int skipped_clips = 0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : epochs)
      arr.push_back({{"l_total", e.l_total},
                     {"l_ec", e.l_ec},
                     {"l_info", e.l_info},
                     {"l_cor", e.l_cor},
                     {"l_ce", e.l_ce},
                     {"batches", e.batches},
                     {"skipped_clips", e.skipped_clips}});
    return arr;
  }
};

namespace detail {

inline std::vector<size_t> shuffled_indices(size_t n, Rng& rng) {
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t(0));
  for (size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
  return idx;
}

// consecutive chunks of `batch`; a trailing chunk of one clip folds into the
// previous batch so contrastive losses always see at least two clips
inline std::vector<std::vector<size_t>> make_batches(const std::vector<size_t>& order,
                                                     int batch) {
  std::vector<std::vector<size_t>> out;
  for (size_t at = 0; at < order.size(); at += size_t(batch)) {
    size_t end = std::min(order.size(), at + size_t(batch));
    out.push_back(std::vector<size_t>(order.begin() + long(at), order.begin() + long(end)));
  }
  if (out.size() >= 2 && out.back().size() < 2) {
    out[out.size() - 2].push_back(out.back()[0]);
    out.pop_back();
  }
  return out;
}

template <typename StepFn>
TrainHistory train_loop(model::Model& m, const LoadedCorpus& corpus,
                        const std::vector<int>& labels, model::Stage stage,
                        const TrainConfig& cfg, const StepFn& on_batch) {
  TrainHistory history;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng erng = Rng::keyed(cfg.seed, "epoch", uint64_t(epoch));
    auto order = shuffled_indices(corpus.clips.size(), erng);
    auto batches = make_batches(order, cfg.batch);
    EpochStats stats;
    for (const auto& batch : batches) {
      std::vector<const ClipTriplet*> ptrs;
      std::vector<int> batch_labels;
      for (size_t i : batch) {
        ptrs.push_back(&corpus.clips[i]);
        batch_labels.push_back(labels.empty() ? 0 : labels[i]);
      }
      auto result = m.run_batch(ptrs, batch_labels, stage, /*with_grads=*/true,
                                /*train_mode=*/true, cfg.threads);
      on_batch(result);
      encoder::apply_bn_updates(result.bn_updates);
      stats.l_total += result.l_total;
      stats.l_ec += result.l_ec;
      stats.l_info += result.l_info;
      stats.l_cor += result.l_cor;
      stats.l_ce += result.l_ce;
      stats.skipped_clips += result.skipped_clips;
      ++stats.batches;
    }
    if (stats.batches > 0) {
      stats.l_total /= stats.batches;
      stats.l_ec /= stats.batches;
      stats.l_info /= stats.batches;
      stats.l_cor /= stats.batches;
      stats.l_ce /= stats.batches;
    }
    history.epochs.push_back(stats);
  }
  return history;
}

}  // namespace detail

// Self-supervised pretraining on real clips only. Deterministic given
// (model config, train config, corpus digest).
inline TrainHistory pretrain(model::Model& m, const LoadedCorpus& corpus,
                             const TrainConfig& cfg, AdamW* optimizer = nullptr) {
  cfg.validate();
  for (const auto& e : corpus.entries)
    check(e.label == Label::real, "pretrain: corpus contains fake clip " + e.id);
  std::unique_ptr<AdamW> local;
  if (!optimizer) {
    local = std::make_unique<AdamW>(m.registry());
    optimizer = local.get();
  }
  return detail::train_loop(m, corpus, {}, model::Stage::pretrain, cfg,
                            [&](const model::BatchResult& r) {
                              optimizer->step(r.grads, cfg.lr_new, cfg.lr_new, cfg.weight_decay);
                            });
}

// Supervised finetuning with the two-tier learning rates: new (classifier)
// parameters at lr_new, shared backbone at lr_shared.
inline TrainHistory finetune(model::Model& m, const LoadedCorpus& corpus,
                             const TrainConfig& cfg, AdamW* optimizer = nullptr) {
  cfg.validate();
  check(!corpus.entries.empty(), "finetune: empty corpus");
  std::vector<int> labels;
  bool any_fake = false, any_real = false;
  for (const auto& e : corpus.entries) {
    labels.push_back(e.label == Label::fake ? 1 : 0);
    (e.label == Label::fake ? any_fake : any_real) = true;
  }
  check(any_fake && any_real, "finetune: corpus must contain both labels");
  std::unique_ptr<AdamW> local;
  if (!optimizer) {
    local = std::make_unique<AdamW>(m.registry());
    optimizer = local.get();
  }
  return detail::train_loop(m, corpus, labels, model::Stage::finetune, cfg,
                            [&](const model::BatchResult& r) {
                              optimizer->step(r.grads, cfg.lr_shared, cfg.lr_new,
                                              cfg.weight_decay);
                            });
}

// ---- prediction and evaluation -------------------------------------------------

struct Prediction {
  double prob_fake = 0.5;
  bool degenerate = false;  // no usable non-critical segments
};

inline Prediction predict(const model::Model& m, const ClipTriplet& clip, unsigned threads = 0) {
  auto result = m.run_batch({&clip}, {}, model::Stage::inference, /*with_grads=*/false,
                            /*train_mode=*/false, threads);
  return {result.probs[0], result.prob_degenerate[0]};
}

struct ClipScore {
  std::string id;
  int label = 0;  // 1 = fake
  double score = 0.5;
  bool degenerate = false;
};

struct MetricsReport {
  std::optional<double> auc;
  double acc = 0.0;
  int n_videos = 0;
  std::vector<ClipScore> per_clip;
  std::string config_digest;

  nlohmann::json to_json() const {
    nlohmann::json scores = nlohmann::json::array();
    for (const auto& s : per_clip)
      scores.push_back({{"id", s.id},
                        {"label", s.label},
                        {"score", s.score},
                        {"degenerate", s.degenerate}});
    nlohmann::json j{{"acc", acc}, {"n_videos", n_videos}, {"config_digest", config_digest},
                     {"per_clip", scores}};
    if (auc)
      j["auc"] = *auc;
    else
      j["auc"] = nullptr;
    return j;
  }
};

// Mann-Whitney rank AUC with ties counted one half.
inline std::optional<double> rank_auc(const std::vector<ClipScore>& scores) {
  size_t n_pos = 0, n_neg = 0;
  for (const auto& s : scores) (s.label == 1 ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  std::vector<size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), size_t(0));
  std::sort(idx.begin(), idx.end(),
            [&](size_t a, size_t b) { return scores[a].score < scores[b].score; });
  std::vector<double> rank(scores.size());
  size_t i = 0;
  while (i < idx.size()) {
    size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]].score == scores[idx[i]].score) ++j;
    double avg = 0.5 * double(i + j) + 1.0;  // 1-based average rank of the tie group
    for (size_t k = i; k <= j; ++k) rank[idx[k]] = avg;
    i = j + 1;
  }
  double rank_sum_pos = 0.0;
  for (size_t k = 0; k < scores.size(); ++k)
    if (scores[k].label == 1) rank_sum_pos += rank[k];
  double u = rank_sum_pos - double(n_pos) * double(n_pos + 1) / 2.0;
  return u / (double(n_pos) * double(n_neg));
}

inline MetricsReport evaluate(const model::Model& m, const LoadedCorpus& corpus,
                              unsigned threads = 0) {
  check(!corpus.clips.empty(), "evaluate: empty split");
  MetricsReport report;
  report.per_clip.resize(corpus.clips.size());
  parallel_for(corpus.clips.size(), [&](size_t i) {
    auto pred = predict(m, corpus.clips[i], 1);
    report.per_clip[i] = {corpus.entries[i].id,
                          corpus.entries[i].label == Label::fake ? 1 : 0, pred.prob_fake,
                          pred.degenerate};
  }, threads);
  report.n_videos = int(corpus.clips.size());
  report.auc = rank_auc(report.per_clip);
  int correct = 0;
  for (const auto& s : report.per_clip) {
    int predicted = s.score > 0.5 ? 1 : 0;
    if (predicted == s.label) ++correct;
  }
  report.acc = double(correct) / double(report.per_clip.size());
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(m.config().digest() ^ corpus.digest));
  report.config_digest = buf;
  return report;
}

// ---- persistence ----------------------------------------------------------------

inline void save_model(const model::Model& m, const fs::path& path) {
  m.registry().save(path.string(), m.config().to_json().dump());
}

inline std::unique_ptr<model::Model> load_model(const fs::path& path) {
  std::string meta = params::Registry::peek_meta(path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception&) {
    throw std::runtime_error("checkpoint metadata is not valid JSON: " + path.string());
  }
  auto m = std::make_unique<model::Model>(model::ModelConfig::from_json(j));
  m->registry().load(path.string());
  return m;
}

// ---- gradient checking through the full pretrain loss ----------------------------

inline GradCheckReport grad_check_pretrain(model::Model& m,
                                           const std::vector<const ClipTriplet*>& clips,
                                           double step = 1e-3, int stride = 1) {
  auto loss_fn = [&] {
    auto r = m.run_batch(clips, {}, model::Stage::pretrain, /*with_grads=*/false,
                         /*train_mode=*/true, 0);
    return r.l_total;
  };
  auto grads_fn = [&] {
    auto r = m.run_batch(clips, {}, model::Stage::pretrain, /*with_grads=*/true,
                         /*train_mode=*/true, 0);
    return std::move(r.grads);
  };
  std::vector<std::pair<std::string, ad::Tensor>> named;
  for (const auto& e : m.registry().entries())
    if (e.trainable) named.push_back({e.name, e.tensor});
  return grad_check(loss_fn, grads_fn, named, step, stride);
}

}  // namespace npv::pipeline
