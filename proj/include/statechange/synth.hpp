// SPDX-License-Identifier: Apache-2.0
//
// Synthetic videos with planted state/action blocks. Each frame is a phase
// prototype plus isotropic Gaussian noise; the only temporal structure is
// the ordering initial state -> action -> end state.

#ifndef STATECHANGE_SYNTH_HPP
#define STATECHANGE_SYNTH_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "statechange/core.hpp"
#include "statechange/model.hpp"

namespace statechange {

enum class Phase : std::uint8_t { Initial = 0, Action = 1, End = 2, Background = 3 };

struct LengthRange {
  std::size_t min = 1;
  std::size_t max = 1;
};

struct SynthConfig {
  std::size_t num_categories = 5;
  std::size_t videos_per_category = 40;
  // Distractor videos; nullopt means 10% of the relevant videos.
  std::optional<std::size_t> noise_videos;
  std::size_t num_frames = 120;
  std::size_t dim = 32;
  double prototype_separation = 8.0;
  // nullopt means prototype_separation / 6.
  std::optional<double> feature_noise_sigma;
  LengthRange initial_block{10, 20};
  LengthRange action_block{8, 15};
  LengthRange end_block{10, 20};
  std::size_t min_gap = 5;
  // Pairs (a, b): b reuses a's action prototype.
  std::vector<std::pair<std::size_t, std::size_t>> confusable_pairs{{0, 1}};
  // One background prototype for every category.
  bool shared_background = true;
  // Background prototypes sit at the origin (featureless frames).
  bool background_at_origin = true;
  // Fraction of each category's relevant videos marked as held out.
  double heldout_fraction = 0.25;
  double fps = 1.0;
  std::uint64_t seed = 0;

  std::size_t resolved_noise_videos() const {
    return noise_videos.value_or((num_categories * videos_per_category + 5) / 10);
  }
  double resolved_sigma() const {
    return feature_noise_sigma.value_or(prototype_separation / 6.0);
  }

  void validate() const {
    if (num_categories < 1) throw Error("synth: need at least one category");
    if (dim < 1) throw Error("synth: dim must be at least 1");
    if (!(prototype_separation > 0.0)) throw Error("synth: prototype_separation must be positive");
    if (resolved_sigma() < 0.0) throw Error("synth: feature_noise_sigma must be >= 0");
    for (const auto& r : {initial_block, action_block, end_block})
      if (r.min < 1 || r.min > r.max) throw Error("synth: bad block length range");
    if (min_gap < 1) throw Error("synth: gaps between blocks must be nonempty");
    const std::size_t need = initial_block.max + action_block.max + end_block.max + 2 * min_gap;
    if (need > num_frames)
      throw Error("synth: infeasible layout, blocks need " + std::to_string(need) +
                  " frames but videos have " + std::to_string(num_frames));
    for (const auto& [a, b] : confusable_pairs)
      if (a >= num_categories || b >= num_categories || a == b)
        throw Error("synth: bad confusable pair");
    if (!(heldout_fraction >= 0.0 && heldout_fraction < 1.0))
      throw Error("synth: heldout_fraction must lie in [0, 1)");
    if (!(fps > 0.0)) throw Error("synth: fps must be positive");
  }
};

struct SynthDataset {
  CategoryCatalog catalog;
  std::vector<VideoFeatures> videos;
  std::vector<AnnotationTrack> annotations;  // parallel to videos; empty for distractors
  std::vector<std::string> splits;           // "train" or "test", parallel to videos
  std::vector<bool> distractor;
  // prototypes[c][phase]
  std::vector<std::array<std::vector<double>, 4>> prototypes;
  double sigma = 0.0;
};

namespace detail {

inline double gaussian(std::mt19937_64& rng) {
  // Box-Muller on the portable uniform source.
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline std::size_t uniform_int(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  const std::size_t span = hi - lo + 1;
  return lo + std::min(span - 1, static_cast<std::size_t>(uniform01(rng) * span));
}

inline double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace detail

/// Distinct prototypes of the dataset as (category, phase) pairs; shared
/// prototypes are listed once, under their first owner.
inline std::vector<std::pair<std::size_t, Phase>> distinct_prototypes(const SynthDataset& ds) {
  std::vector<std::pair<std::size_t, Phase>> out;
  for (std::size_t c = 0; c < ds.prototypes.size(); ++c)
    for (std::size_t ph = 0; ph < 4; ++ph) {
      const auto& p = ds.prototypes[c][ph];
      const bool dup = std::any_of(out.begin(), out.end(), [&](const auto& q) {
        return ds.prototypes[q.first][static_cast<std::size_t>(q.second)] == p;
      });
      if (!dup) out.emplace_back(c, static_cast<Phase>(ph));
    }
  return out;
}

inline SynthDataset generate(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const std::size_t N = cfg.num_categories, D = cfg.dim, T = cfg.num_frames;

  SynthDataset ds;
  ds.sigma = cfg.resolved_sigma();

  std::vector<Category> cats;
  for (std::size_t c = 0; c < N; ++c) {
    const std::string n = "category" + std::to_string(c);
    cats.push_back({n, n + "_initial", n + "_end", n + "_action"});
  }
  ds.catalog = CategoryCatalog(std::move(cats));

  // Prototypes: Gaussian directions, rescaled so the closest distinct pair
  // sits exactly at prototype_separation.
  ds.prototypes.resize(N);
  for (std::size_t c = 0; c < N; ++c)
    for (auto& p : ds.prototypes[c]) {
      p.resize(D);
      for (auto& x : p) x = detail::gaussian(rng);
    }
  if (cfg.background_at_origin)
    for (auto& per_cat : ds.prototypes)
      std::fill(per_cat[static_cast<std::size_t>(Phase::Background)].begin(),
                per_cat[static_cast<std::size_t>(Phase::Background)].end(), 0.0);
  if (cfg.shared_background)
    for (std::size_t c = 1; c < N; ++c)
      ds.prototypes[c][static_cast<std::size_t>(Phase::Background)] =
          ds.prototypes[0][static_cast<std::size_t>(Phase::Background)];
  for (const auto& [a, b] : cfg.confusable_pairs)
    ds.prototypes[b][static_cast<std::size_t>(Phase::Action)] =
        ds.prototypes[a][static_cast<std::size_t>(Phase::Action)];

  const auto distinct = distinct_prototypes(ds);
  double min_dist = 0.0;
  for (std::size_t i = 0; i < distinct.size(); ++i)
    for (std::size_t j = i + 1; j < distinct.size(); ++j) {
      const double d = detail::distance(
          ds.prototypes[distinct[i].first][static_cast<std::size_t>(distinct[i].second)],
          ds.prototypes[distinct[j].first][static_cast<std::size_t>(distinct[j].second)]);
      if ((i == 0 && j == 1) || d < min_dist) min_dist = d;
    }
  if (distinct.size() > 1) {
    if (!(min_dist > 0.0)) throw Error("synth: degenerate prototypes");
    const double scale = cfg.prototype_separation / min_dist;
    for (auto& per_cat : ds.prototypes)
      for (auto& p : per_cat)
        for (auto& x : p) x *= scale;
  }

  auto emit = [&](Matrix& frames, std::size_t t, const std::vector<double>& proto) {
    for (std::size_t j = 0; j < D; ++j)
      // Stored at float precision so in-memory and on-disk datasets agree.
      frames(t, j) = static_cast<double>(static_cast<float>(
          proto[j] + (ds.sigma > 0.0 ? ds.sigma * detail::gaussian(rng) : 0.0)));
  };

  const std::size_t heldout_per_cat =
      static_cast<std::size_t>(std::floor(cfg.heldout_fraction * cfg.videos_per_category));
  std::size_t vid_counter = 0;
  auto next_id = [&]() {
    char buf[32];
    std::snprintf(buf, sizeof buf, "v%05zu", vid_counter++);
    return std::string(buf);
  };

  for (std::size_t c = 0; c < N; ++c) {
    const auto& bg = ds.prototypes[c][static_cast<std::size_t>(Phase::Background)];
    for (std::size_t k = 0; k < cfg.videos_per_category; ++k) {
      const std::size_t l1 = detail::uniform_int(rng, cfg.initial_block.min, cfg.initial_block.max);
      const std::size_t la = detail::uniform_int(rng, cfg.action_block.min, cfg.action_block.max);
      const std::size_t l2 = detail::uniform_int(rng, cfg.end_block.min, cfg.end_block.max);
      // Split the slack over leading, two inner gaps and trailing background.
      const std::size_t slack = T - (l1 + la + l2 + 2 * cfg.min_gap);
      std::array<std::size_t, 3> cuts{};
      for (auto& x : cuts) x = detail::uniform_int(rng, 0, slack);
      std::sort(cuts.begin(), cuts.end());
      const std::size_t lead = cuts[0];
      const std::size_t gap1 = cfg.min_gap + (cuts[1] - cuts[0]);
      const std::size_t gap2 = cfg.min_gap + (cuts[2] - cuts[1]);

      const std::size_t s1_start = lead;
      const std::size_t a_start = s1_start + l1 + gap1;
      const std::size_t s2_start = a_start + la + gap2;

      VideoFeatures v;
      v.id = next_id();
      v.label = c;
      v.fps = cfg.fps;
      v.frames = Matrix(T, D);
      for (std::size_t t = 0; t < T; ++t) {
        Phase ph = Phase::Background;
        if (t >= s1_start && t < s1_start + l1) ph = Phase::Initial;
        else if (t >= a_start && t < a_start + la) ph = Phase::Action;
        else if (t >= s2_start && t < s2_start + l2) ph = Phase::End;
        emit(v.frames, t, ph == Phase::Background ? bg : ds.prototypes[c][static_cast<std::size_t>(ph)]);
      }
      AnnotationTrack track{v.id,
                            {{LabelKind::S1, s1_start, s1_start + l1 - 1},
                             {LabelKind::A, a_start, a_start + la - 1},
                             {LabelKind::S2, s2_start, s2_start + l2 - 1}}};
      ds.videos.push_back(std::move(v));
      ds.annotations.push_back(std::move(track));
      ds.splits.emplace_back(k < cfg.videos_per_category - heldout_per_cat ? "train" : "test");
      ds.distractor.push_back(false);
    }
  }

  // Distractors show one foreign category (two unordered blocks of random
  // phases over background) but carry a different label, preferring the
  // category confusable with the content.
  for (std::size_t k = 0; k < cfg.resolved_noise_videos(); ++k) {
    const std::size_t foreign = detail::uniform_int(rng, 0, N - 1);
    std::size_t label = foreign;
    if (N > 1) {
      label = detail::uniform_int(rng, 0, N - 2);
      if (label >= foreign) ++label;
      for (const auto& [a, b] : cfg.confusable_pairs) {
        if (a == foreign) label = b;
        if (b == foreign) label = a;
      }
    }
    VideoFeatures v;
    v.id = next_id();
    v.label = label;
    v.fps = cfg.fps;
    v.frames = Matrix(T, D);
    std::vector<Phase> phase_of(T, Phase::Background);
    for (int b = 0; b < 2; ++b) {
      const auto ph = static_cast<Phase>(detail::uniform_int(rng, 0, 2));
      const std::size_t len = detail::uniform_int(rng, cfg.action_block.min, cfg.end_block.max);
      const std::size_t start = detail::uniform_int(rng, 0, T - len);
      for (std::size_t t = start; t < start + len; ++t) phase_of[t] = ph;
    }
    for (std::size_t t = 0; t < T; ++t)
      emit(v.frames, t, ds.prototypes[foreign][static_cast<std::size_t>(phase_of[t])]);
    ds.annotations.push_back(AnnotationTrack{v.id, {}});
    ds.videos.push_back(std::move(v));
    ds.splits.emplace_back("train");
    ds.distractor.push_back(true);
  }
  return ds;
}

/// Idealized scorer: posterior over the distinct prototypes under the
/// generator's isotropic Gaussian noise, laid out like a two-head model
/// (state head 2N+1, action head N+1). Shared prototypes split their mass.
inline FrameScores prototype_scores(const SynthDataset& ds, const Matrix& frames) {
  const std::size_t N = ds.catalog.size();
  const std::size_t T = frames.rows();
  const auto distinct = distinct_prototypes(ds);
  const double var = ds.sigma > 0.0 ? ds.sigma * ds.sigma : 1e-6;

  FrameScores out;
  out.architecture = Architecture::Joint2;
  out.num_categories = N;
  out.state = Matrix(T, 2 * N + 1);
  out.action = Matrix(T, N + 1);
  std::vector<double> logp(distinct.size());
  for (std::size_t t = 0; t < T; ++t) {
    const auto x = frames.row(t);
    for (std::size_t k = 0; k < distinct.size(); ++k) {
      const auto& p = ds.prototypes[distinct[k].first][static_cast<std::size_t>(distinct[k].second)];
      double d2 = 0.0;
      for (std::size_t j = 0; j < x.size(); ++j) d2 += (x[j] - p[j]) * (x[j] - p[j]);
      logp[k] = -d2 / (2.0 * var);
    }
    detail::softmax_inplace(logp);
    // Mass of prototype k, split among every (category, phase) that uses it.
    for (std::size_t k = 0; k < distinct.size(); ++k) {
      const auto& proto =
          ds.prototypes[distinct[k].first][static_cast<std::size_t>(distinct[k].second)];
      std::vector<std::pair<std::size_t, Phase>> owners;
      for (std::size_t c = 0; c < N; ++c)
        for (std::size_t ph = 0; ph < 4; ++ph)
          if (ds.prototypes[c][ph] == proto) owners.emplace_back(c, static_cast<Phase>(ph));
      const double share = logp[k] / static_cast<double>(owners.size());
      for (const auto& [c, ph] : owners) {
        switch (ph) {
          case Phase::Initial: out.state(t, initial_state_index(c)) += share; break;
          case Phase::End: out.state(t, end_state_index(c)) += share; break;
          case Phase::Action: out.action(t, action_index(c)) += share; break;
          case Phase::Background:
            out.state(t, 2 * N) += share / 2.0;
            out.action(t, N) += share / 2.0;
            break;
        }
      }
    }
  }
  return out;
}

}  // namespace statechange

#endif  // STATECHANGE_SYNTH_HPP
