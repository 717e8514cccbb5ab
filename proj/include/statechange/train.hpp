// SPDX-License-Identifier: Apache-2.0
//
// Self-training loop: decode every batch video under its noisy label, turn
// the decodes into pseudo labels, then back-propagate through the labeled
// frames only.

#ifndef STATECHANGE_TRAIN_HPP
#define STATECHANGE_TRAIN_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "statechange/core.hpp"
#include "statechange/decode.hpp"
#include "statechange/evalkit.hpp"
#include "statechange/model.hpp"
#include "statechange/parallel.hpp"
#include "statechange/pseudo.hpp"

namespace statechange {

enum class OptimizerMode { MomentumSgd, PlainGd };

/// What a weight hook sees: p(l|v) of every batch member and the member the
/// label belongs to.
struct WeightContext {
  std::span<const double> label_scores;
  std::size_t member = 0;
};

using WeightHook = std::function<double(const WeightContext&, LabelKind)>;

inline WeightHook constant_weight(double w = 1.0) {
  return [w](const WeightContext&, LabelKind) { return w; };
}

/// Rank of p(l|v) within the batch (1 = lowest), divided by the batch size.
inline WeightHook rank_weight() {
  return [](const WeightContext& ctx, LabelKind) {
    const double mine = ctx.label_scores[ctx.member];
    std::size_t rank = 0;
    for (std::size_t i = 0; i < ctx.label_scores.size(); ++i) {
      const double s = ctx.label_scores[i];
      if (s < mine || (s == mine && i <= ctx.member)) ++rank;
    }
    return static_cast<double>(rank) / static_cast<double>(ctx.label_scores.size());
  };
}

struct BatchLabels;

/// Sees every step's pseudo labels (for dumps); called on the training thread.
using LabelObserver = std::function<void(std::size_t step, const BatchLabels&)>;

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_videos = 8;
  double base_lr_heads = 1e-4;
  double base_lr_adapter = 1e-5;
  std::size_t warmup_epochs = 5;
  double momentum = 0.9;
  double l2_penalty_heads = 1e-3;
  double action_loss_scale = 0.2;
  OptimizerMode optimizer = OptimizerMode::MomentumSgd;
  bool freeze_adapter = false;
  WeightHook weight_hook = constant_weight();
  std::size_t max_labeled_frames_per_video = 25;
  std::uint64_t seed = 0;
  DecodeOptions decode;
  // Also track the best held-out epoch of every category separately.
  bool per_category_best_epoch = false;
  LabelObserver label_observer;

  void validate() const {
    if (!(base_lr_heads > 0.0) || !(base_lr_adapter > 0.0))
      throw Error("learning rates must be positive");
    if (!(action_loss_scale > 0.0)) throw Error("action loss scale must be positive");
    if (warmup_epochs > epochs) throw Error("warmup epochs exceed epochs");
    if (batch_videos == 0) throw Error("batch size must be positive");
    if (max_labeled_frames_per_video == 0) throw Error("label cap must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw Error("momentum must lie in [0, 1)");
  }
};

struct LearningRates {
  double heads = 0.0;
  double adapter = 0.0;
};

/// Linear warmup to the base rates, then a cosine decay that reaches zero at
/// the final step. Warmup covers warmup_epochs / epochs of all steps.
inline LearningRates lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (step >= total_steps) throw Error("step out of range");
  const std::size_t warmup =
      cfg.epochs == 0 ? 0 : total_steps * cfg.warmup_epochs / cfg.epochs;
  double factor;
  if (step < warmup) {
    factor = static_cast<double>(step) / static_cast<double>(warmup);
  } else {
    const std::size_t span = total_steps - warmup - 1;
    const double progress =
        span == 0 ? 0.0 : static_cast<double>(step - warmup) / static_cast<double>(span);
    factor = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
  return {cfg.base_lr_heads * factor, cfg.base_lr_adapter * factor};
}

struct TrainState {
  ModelParams params;
  ModelParams velocity;
  std::size_t step = 0;

  explicit TrainState(ModelParams p) : params(std::move(p)), velocity(zeros_like(params)) {}
};

/// Pseudo labels of one batch, grouped by batch member (the video whose
/// frames they refer to).
struct BatchLabels {
  std::vector<std::vector<PseudoLabel>> per_video;
  std::vector<Localization> localizations;
  std::vector<double> label_scores;  // p(l|v)
};

struct StepReport {
  double loss = 0.0;
  std::size_t num_labels = 0;
  std::array<std::size_t, 5> label_counts{};  // indexed by LabelKind
  std::vector<double> labeled_fraction;       // per batch video
  double max_labeled_fraction = 0.0;
  LearningRates lr;
};

/// Stage one: decode each video under its label, build rules A-E, cap the
/// labeled frames per video and attach loss weights.
inline BatchLabels collect_labels(const ModelParams& params,
                                  std::span<const VideoFeatures* const> batch,
                                  const TrainConfig& cfg, const LabelRuleConfig& rules) {
  if (batch.empty()) throw Error("empty batch");
  const HeadLayout layout = HeadLayout::of(params);
  BatchLabels out;
  out.per_video.resize(batch.size());
  out.localizations.resize(batch.size());
  out.label_scores.resize(batch.size());

  std::vector<std::vector<PseudoLabel>> in_video(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    const VideoFeatures& v = *batch[i];
    if (v.num_frames() < 3) throw Error("video '" + v.id + "' is too short for a causal triple");
    auto loc = localize(forward(params, v.frames), v.label, cfg.decode);
    loc.video_id = v.id;
    in_video[i] = build_labels(v, loc, rules, layout);
    out.localizations[i] = std::move(loc);
  });
  for (std::size_t i = 0; i < batch.size(); ++i) out.label_scores[i] = out.localizations[i].score;

  std::vector<BatchMember> members;
  std::unordered_map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    members.push_back({batch[i]->id, batch[i]->num_frames(), batch[i]->label, batch[i]->fps});
    index_of[batch[i]->id] = i;
  }
  std::vector<PseudoLabel> all;
  for (auto& labels : in_video) all.insert(all.end(), labels.begin(), labels.end());
  auto cross = build_cross_task_negatives(members, rules, layout);
  all.insert(all.end(), cross.begin(), cross.end());

  for (auto& l : truncate_labels(all, cfg.max_labeled_frames_per_video)) {
    const std::size_t member = index_of.at(l.video_id);
    const double scale = is_action_kind(l.kind) ? cfg.action_loss_scale : 1.0;
    l.weight = scale * cfg.weight_hook(WeightContext{out.label_scores, member}, l.kind);
    if (!(l.weight >= 0.0)) throw Error("weight hook returned a negative weight");
    out.per_video[member].push_back(std::move(l));
  }
  return out;
}

/// Summed weighted cross entropy of the labels plus the L2 term on heads
/// (counted only when a label carries positive weight).
inline double objective(const ModelParams& params, std::span<const VideoFeatures* const> batch,
                        const BatchLabels& labels, const TrainConfig& cfg) {
  double loss = 0.0;
  bool any_weight = false;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    loss += loss_only(params, batch[i]->frames, labels.per_video[i]);
    for (const auto& l : labels.per_video[i]) any_weight |= l.weight > 0.0;
  }
  if (any_weight && cfg.l2_penalty_heads > 0.0) {
    double sq = 0.0;
    for (const auto& h : params.heads)
      for (const auto* block : {&h.hidden.w.data(), &h.hidden.b, &h.output.w.data(), &h.output.b})
        for (double x : *block) sq += x * x;
    loss += 0.5 * cfg.l2_penalty_heads * sq;
  }
  return loss;
}

/// Stage two: gradients on the labeled frames, reduced in batch order, then
/// one optimizer update. Returns the data loss before the update.
inline double update_on_labels(TrainState& state, std::span<const VideoFeatures* const> batch,
                               const BatchLabels& labels, const TrainConfig& cfg,
                               LearningRates lr) {
  std::vector<LossAndGradient> parts(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    parts[i] = backward(state.params, batch[i]->frames, labels.per_video[i]);
  });

  double loss = 0.0;
  bool any_weight = false;
  ModelParams grad = zeros_like(state.params);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    loss += parts[i].loss;
    for (const auto& l : labels.per_video[i]) any_weight |= l.weight > 0.0;
    std::vector<std::span<double>> dst;
    for_each_block(grad, [&](std::span<double> s, bool) { dst.push_back(s); });
    std::size_t b = 0;
    for_each_block(parts[i].gradient, [&](std::span<double> s, bool) {
      auto& d = dst[b++];
      for (std::size_t k = 0; k < s.size(); ++k) d[k] += s[k];
    });
  }
  if (!any_weight) return loss;

  std::vector<std::span<double>> p_blocks, v_blocks;
  for_each_block(state.params, [&](std::span<double> s, bool) { p_blocks.push_back(s); });
  for_each_block(state.velocity, [&](std::span<double> s, bool) { v_blocks.push_back(s); });
  std::size_t b = 0;
  for_each_block(grad, [&](std::span<double> g, bool is_head) {
    auto p = p_blocks[b];
    auto v = v_blocks[b];
    ++b;
    if (!is_head && cfg.freeze_adapter) return;
    const double rate = is_head ? lr.heads : lr.adapter;
    const double decay = is_head ? cfg.l2_penalty_heads : 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double gk = g[k] + decay * p[k];
      if (cfg.optimizer == OptimizerMode::MomentumSgd) {
        v[k] = cfg.momentum * v[k] + gk;
        p[k] -= rate * v[k];
      } else {
        p[k] -= rate * gk;
      }
    }
  });
  return loss;
}

inline StepReport train_step(TrainState& state, std::span<const VideoFeatures* const> batch,
                             const TrainConfig& cfg, const LabelRuleConfig& rules,
                             std::size_t total_steps) {
  if (batch.empty()) throw Error("empty batch");
  LabelRuleConfig step_rules = rules;
  step_rules.seed = rules.seed + 0x9E3779B97F4A7C15ULL * (state.step + 1);
  const BatchLabels labels = collect_labels(state.params, batch, cfg, step_rules);
  if (cfg.label_observer) cfg.label_observer(state.step, labels);

  StepReport report;
  report.lr = lr_at(state.step, total_steps, cfg);
  report.loss = update_on_labels(state, batch, labels, cfg, report.lr);
  ++state.step;

  for (std::size_t i = 0; i < batch.size(); ++i) {
    std::vector<std::size_t> frames;
    for (const auto& l : labels.per_video[i]) {
      ++report.label_counts[static_cast<std::size_t>(l.kind)];
      frames.push_back(l.frame);
    }
    report.num_labels += labels.per_video[i].size();
    std::sort(frames.begin(), frames.end());
    frames.erase(std::unique(frames.begin(), frames.end()), frames.end());
    const double frac =
        static_cast<double>(frames.size()) / static_cast<double>(batch[i]->num_frames());
    report.labeled_fraction.push_back(frac);
    report.max_labeled_fraction = std::max(report.max_labeled_fraction, frac);
  }
  return report;
}

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::array<std::size_t, 5> label_counts{};
  std::optional<double> heldout_state_precision;
  std::optional<double> heldout_action_precision;
  double lr = 0.0;  // head rate at the epoch's last step
  double max_labeled_fraction = 0.0;
};

struct HeldOut {
  std::span<const VideoFeatures> videos;
  std::span<const AnnotationTrack> annotations;
};

/// Localizes every video under its own label.
inline std::vector<Localization> localize_all(const ModelParams& params,
                                              std::span<const VideoFeatures> videos,
                                              const DecodeOptions& opts = {}) {
  std::vector<Localization> out(videos.size());
  parallel_for(videos.size(), [&](std::size_t i) {
    out[i] = localize(forward(params, videos[i].frames), videos[i].label, opts);
    out[i].video_id = videos[i].id;
  });
  return out;
}

struct CategoryBest {
  std::size_t epoch = 0;
  double state = 0.0;
  double action = 0.0;
};

struct FitResult {
  ModelParams params;  // best held-out epoch when a held-out set is given, else last
  std::vector<EpochLog> log;
  std::optional<std::size_t> best_epoch;
  // Filled when per_category_best_epoch is set; keyed by category index.
  std::map<std::size_t, CategoryBest> per_category_best;
};

using EpochCallback = std::function<void(const EpochLog&)>;

inline FitResult fit(ModelParams params, std::span<const VideoFeatures> dataset,
                     const TrainConfig& cfg, const LabelRuleConfig& rules,
                     std::optional<HeldOut> heldout = std::nullopt,
                     const EpochCallback& on_epoch = {}) {
  cfg.validate();
  rules.validate();
  if (dataset.empty()) throw Error("empty training set");
  FitResult result{params, {}, std::nullopt, {}};
  if (cfg.epochs == 0) return result;

  const std::size_t steps_per_epoch = (dataset.size() + cfg.batch_videos - 1) / cfg.batch_videos;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  TrainState state(std::move(params));
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  double best_score = -1.0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates on the portable uniform source.
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = std::min(i - 1, static_cast<std::size_t>(detail::uniform01(rng) * i));
      std::swap(order[i - 1], order[j]);
    }
    EpochLog log;
    log.epoch = epoch;
    double loss = 0.0;
    std::size_t labels = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      std::vector<const VideoFeatures*> batch;
      for (std::size_t i = s * cfg.batch_videos;
           i < std::min(order.size(), (s + 1) * cfg.batch_videos); ++i)
        batch.push_back(&dataset[order[i]]);
      const auto rep = train_step(state, batch, cfg, rules, total_steps);
      loss += rep.loss;
      labels += rep.num_labels;
      for (std::size_t k = 0; k < 5; ++k) log.label_counts[k] += rep.label_counts[k];
      log.lr = rep.lr.heads;
      log.max_labeled_fraction = std::max(log.max_labeled_fraction, rep.max_labeled_fraction);
    }
    log.mean_loss = labels ? loss / static_cast<double>(labels) : 0.0;

    if (heldout && !heldout->videos.empty()) {
      const auto preds = localize_all(state.params, heldout->videos, cfg.decode);
      const auto prec = precision_at_1(preds, heldout->annotations);
      log.heldout_state_precision = prec.state;
      log.heldout_action_precision = prec.action;
      if (cfg.per_category_best_epoch) {
        std::map<std::size_t, std::vector<Localization>> by_cat;
        for (const auto& p : preds) by_cat[p.category].push_back(p);
        for (const auto& [c, ps] : by_cat) {
          const auto pc = precision_at_1(ps, heldout->annotations);
          const CategoryBest here{epoch, pc.state, pc.action};
          auto [it, fresh] = result.per_category_best.try_emplace(c, here);
          if (!fresh && pc.state + pc.action > it->second.state + it->second.action)
            it->second = here;
        }
      }
      if (prec.state + prec.action > best_score) {
        best_score = prec.state + prec.action;
        result.params = state.params;
        result.best_epoch = epoch;
      }
    } else {
      result.params = state.params;
    }
    if (on_epoch) on_epoch(log);
    result.log.push_back(log);
  }
  return result;
}

}  // namespace statechange

#endif  // STATECHANGE_TRAIN_HPP
