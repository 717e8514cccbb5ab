// SPDX-License-Identifier: Apache-2.0
//
// Pseudo-label construction from decoded localizations.
//
//   A  positives around each decoded frame (|t - d| <= delta)
//   B  action background at delta' <= |t - d_a| <= delta' + delta
//   C  action background around both decoded states
//   D  state background around the decoded action
//   E  cross-task negatives: frames of other-category videos in the batch
//
// Per head and frame at most one label survives: a positive beats a
// negative, and of two positive states the one with the nearer anchor wins
// (ties go to S1).

#ifndef STATECHANGE_PSEUDO_HPP
#define STATECHANGE_PSEUDO_HPP

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "statechange/core.hpp"
#include "statechange/model.hpp"

namespace statechange {

struct RuleSet {
  std::array<bool, 5> enabled{true, true, true, true, true};

  bool has(LabelRule r) const { return enabled[static_cast<std::size_t>(r)]; }

  static RuleSet all() { return {}; }
  static RuleSet none() { return RuleSet{{false, false, false, false, false}}; }

  /// Parses "A,B,C" (case-insensitive letters, comma separated).
  static RuleSet parse(std::string_view s) {
    RuleSet r = none();
    std::size_t pos = 0;
    while (pos <= s.size()) {
      const auto comma = s.find(',', pos);
      auto tok = s.substr(pos, comma == std::string_view::npos ? s.size() - pos : comma - pos);
      while (!tok.empty() && tok.front() == ' ') tok.remove_prefix(1);
      while (!tok.empty() && tok.back() == ' ') tok.remove_suffix(1);
      if (!tok.empty()) {
        if (tok.size() != 1) throw Error("bad rule '" + std::string(tok) + "' (expected A..E)");
        const char ch = static_cast<char>(tok[0] & ~0x20);
        if (ch < 'A' || ch > 'E') throw Error("bad rule '" + std::string(tok) + "' (expected A..E)");
        r.enabled[static_cast<std::size_t>(ch - 'A')] = true;
      }
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    return r;
  }

  std::string to_string() const {
    std::string out;
    for (std::size_t i = 0; i < enabled.size(); ++i) {
      if (!enabled[i]) continue;
      if (!out.empty()) out += ',';
      out += static_cast<char>('A' + i);
    }
    return out;
  }

  friend bool operator==(const RuleSet&, const RuleSet&) = default;
};

struct LabelRuleConfig {
  double delta_seconds = 2.0;
  double delta_prime_seconds = 60.0;
  RuleSet rules = RuleSet::all();
  // Rule E count per video for per-category heads; default is the nominal
  // rule-A positive count 3 * (2 delta + 1).
  std::optional<std::size_t> explicit_negatives_per_video;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(delta_seconds > 0.0)) throw Error("delta must be positive");
    if (!(delta_prime_seconds > delta_seconds)) throw Error("delta' must exceed delta");
  }
};

/// The output layout labels are built for.
struct HeadLayout {
  Architecture architecture = Architecture::Joint2;
  bool state_background = true;

  static HeadLayout of(const ModelParams& p) {
    return {p.architecture, has_state_background(p)};
  }
  bool supports(LabelKind k) const {
    if (architecture == Architecture::Joint1)
      return k == LabelKind::S1 || k == LabelKind::S2 || k == LabelKind::A;
    if (k == LabelKind::BgState) return state_background;
    return true;
  }
};

namespace detail {

inline std::size_t abs_diff(std::size_t a, std::size_t b) { return a > b ? a - b : b - a; }

// Candidate ordering within one head and frame; smaller wins.
inline std::tuple<int, std::size_t, int> label_rank(const PseudoLabel& l) {
  const int role = l.kind == LabelKind::S1 ? 0 : l.kind == LabelKind::S2 ? 1 : 2;
  return {is_positive_kind(l.kind) ? 0 : 1, l.anchor_distance,
          is_positive_kind(l.kind) ? role : static_cast<int>(l.rule)};
}

}  // namespace detail

/// In-video labels (rules A-D) for one localized video. Kinds the layout
/// cannot represent are skipped.
inline std::vector<PseudoLabel> build_labels(const VideoFeatures& video, const Localization& loc,
                                             const LabelRuleConfig& cfg, HeadLayout layout) {
  cfg.validate();
  const std::size_t T = video.num_frames();
  if (!(loc.s1_frame < loc.action_frame && loc.action_frame < loc.s2_frame && loc.s2_frame < T))
    throw Error("localization violates 0 <= s1 < a < s2 < T");
  const std::size_t delta = seconds_to_frames(cfg.delta_seconds, video.fps);
  const std::size_t delta_prime = seconds_to_frames(cfg.delta_prime_seconds, video.fps);
  const std::size_t c = loc.category;

  // [frame][0 = state head, 1 = action head]
  std::vector<std::array<std::optional<PseudoLabel>, 2>> slots(T);
  auto offer = [&](std::size_t t, LabelKind kind, LabelRule rule, std::size_t dist) {
    if (!layout.supports(kind)) return;
    PseudoLabel cand{video.id, t, c, kind, 1.0, rule, dist};
    auto& slot = slots[t][is_state_kind(kind) ? 0 : 1];
    if (!slot || detail::label_rank(cand) < detail::label_rank(*slot)) slot = std::move(cand);
  };
  auto window = [&](std::size_t anchor, std::size_t radius, auto&& fn) {
    const std::size_t lo = anchor >= radius ? anchor - radius : 0;
    const std::size_t hi = std::min(T - 1, anchor + radius);
    for (std::size_t t = lo; t <= hi; ++t) fn(t, detail::abs_diff(t, anchor));
  };

  if (cfg.rules.has(LabelRule::A)) {
    window(loc.s1_frame, delta, [&](std::size_t t, std::size_t d) {
      offer(t, LabelKind::S1, LabelRule::A, d);
    });
    window(loc.action_frame, delta, [&](std::size_t t, std::size_t d) {
      offer(t, LabelKind::A, LabelRule::A, d);
    });
    window(loc.s2_frame, delta, [&](std::size_t t, std::size_t d) {
      offer(t, LabelKind::S2, LabelRule::A, d);
    });
  }
  if (cfg.rules.has(LabelRule::B)) {
    window(loc.action_frame, delta_prime + delta, [&](std::size_t t, std::size_t d) {
      if (d >= delta_prime) offer(t, LabelKind::BgAction, LabelRule::B, d - delta_prime);
    });
  }
  if (cfg.rules.has(LabelRule::C)) {
    for (std::size_t anchor : {loc.s1_frame, loc.s2_frame})
      window(anchor, delta, [&](std::size_t t, std::size_t d) {
        offer(t, LabelKind::BgAction, LabelRule::C, d);
      });
  }
  if (cfg.rules.has(LabelRule::D)) {
    window(loc.action_frame, delta, [&](std::size_t t, std::size_t d) {
      offer(t, LabelKind::BgState, LabelRule::D, d);
    });
  }

  std::vector<PseudoLabel> out;
  for (auto& frame_slots : slots)
    for (auto& s : frame_slots)
      if (s) out.push_back(std::move(*s));
  return out;
}

struct BatchMember {
  std::string video_id;
  std::size_t num_frames = 0;
  std::size_t label = 0;
  double fps = 1.0;
};

/// Rule E. Only per-category-head models (II) get explicit labels; the joint
/// softmax variants receive them implicitly and independent models share
/// nothing. Sampled frames alternate between action and state negatives
/// (state negatives only when the layout has a state background).
inline std::vector<PseudoLabel> build_cross_task_negatives(std::span<const BatchMember> batch,
                                                           const LabelRuleConfig& cfg,
                                                           HeadLayout layout) {
  cfg.validate();
  std::vector<PseudoLabel> out;
  if (!cfg.rules.has(LabelRule::E) || layout.architecture != Architecture::MultiClassifier)
    return out;

  std::mt19937_64 rng(cfg.seed);
  for (const auto& member : batch) {
    std::vector<std::pair<std::size_t, std::size_t>> pool;  // (batch index, frame)
    for (std::size_t b = 0; b < batch.size(); ++b) {
      if (batch[b].label == member.label) continue;
      for (std::size_t t = 0; t < batch[b].num_frames; ++t) pool.emplace_back(b, t);
    }
    if (pool.empty()) continue;
    const std::size_t delta = seconds_to_frames(cfg.delta_seconds, member.fps);
    const std::size_t want =
        std::min(pool.size(), cfg.explicit_negatives_per_video.value_or(3 * (2 * delta + 1)));
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < want; ++i) {
      const std::size_t span = pool.size() - i;
      const std::size_t r = i + static_cast<std::size_t>(detail::uniform01(rng) * span);
      std::swap(pool[i], pool[std::min(r, pool.size() - 1)]);
      const auto [b, t] = pool[i];
      const bool state_neg = layout.state_background && (i % 2 == 1);
      out.push_back(PseudoLabel{batch[b].video_id, t, member.label,
                                state_neg ? LabelKind::BgState : LabelKind::BgAction, 1.0,
                                LabelRule::E, 0});
    }
  }
  // Two members with the same label may draw the same foreign frame.
  std::sort(out.begin(), out.end(), [](const PseudoLabel& a, const PseudoLabel& b) {
    return std::tie(a.video_id, a.frame, a.category, a.kind) <
           std::tie(b.video_id, b.frame, b.category, b.kind);
  });
  out.erase(std::unique(out.begin(), out.end(),
                        [](const PseudoLabel& a, const PseudoLabel& b) {
                          return a.video_id == b.video_id && a.frame == b.frame &&
                                 a.category == b.category && a.kind == b.kind;
                        }),
            out.end());
  return out;
}

/// Keeps at most `max_frames` distinct frames per video. Frames are ranked by
/// their best label: positives first, then by distance to the anchor, then
/// by frame index. All labels on a kept frame survive.
inline std::vector<PseudoLabel> truncate_labels(std::span<const PseudoLabel> labels,
                                                std::size_t max_frames) {
  using Rank = std::tuple<int, std::size_t, std::size_t>;
  std::map<std::string, std::map<std::size_t, Rank>> frames;
  for (const auto& l : labels) {
    const Rank r{is_positive_kind(l.kind) ? 0 : 1, l.anchor_distance, l.frame};
    auto [it, inserted] = frames[l.video_id].try_emplace(l.frame, r);
    if (!inserted) it->second = std::min(it->second, r);
  }
  std::map<std::string, std::vector<bool>> keep;
  for (auto& [vid, per_frame] : frames) {
    std::vector<Rank> ranks;
    for (const auto& [t, r] : per_frame) ranks.push_back(r);
    std::sort(ranks.begin(), ranks.end());
    if (ranks.size() > max_frames) ranks.resize(max_frames);
    std::size_t max_t = 0;
    for (const auto& r : ranks) max_t = std::max(max_t, std::get<2>(r));
    auto& k = keep[vid];
    k.assign(max_t + 1, false);
    for (const auto& r : ranks) k[std::get<2>(r)] = true;
  }
  std::vector<PseudoLabel> out;
  for (const auto& l : labels) {
    const auto& k = keep[l.video_id];
    if (l.frame < k.size() && k[l.frame]) out.push_back(l);
  }
  return out;
}

}  // namespace statechange

#endif  // STATECHANGE_PSEUDO_HPP
