// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "statechange/decode.hpp"
#include "statechange/evalkit.hpp"
#include "statechange/synth.hpp"

using namespace statechange;

namespace {

Phase phase_at(const AnnotationTrack& a, std::size_t t) {
  if (a.covers(LabelKind::S1, t)) return Phase::Initial;
  if (a.covers(LabelKind::A, t)) return Phase::Action;
  if (a.covers(LabelKind::S2, t)) return Phase::End;
  return Phase::Background;
}

// Nearest distinct prototype, returning every phase that owns it.
std::vector<Phase> nearest_phases(const SynthDataset& ds, std::size_t c, std::span<const double> x) {
  double best = INFINITY;
  std::vector<double> proto;
  for (std::size_t k = 0; k < ds.prototypes.size(); ++k)
    for (const auto& p : ds.prototypes[k]) {
      double d = 0;
      for (std::size_t j = 0; j < x.size(); ++j) d += (x[j] - p[j]) * (x[j] - p[j]);
      if (d < best) {
        best = d;
        proto = p;
      }
    }
  std::vector<Phase> owners;
  for (std::size_t ph = 0; ph < 4; ++ph)
    if (ds.prototypes[c][ph] == proto) owners.push_back(static_cast<Phase>(ph));
  return owners;
}

}  // namespace

TEST(Synth, DefaultsProduceValidDataset) {
  SynthConfig cfg;
  cfg.seed = 1;
  const auto ds = generate(cfg);
  EXPECT_EQ(ds.catalog.size(), 5u);
  EXPECT_EQ(ds.videos.size(), 200u + 20u);
  EXPECT_TRUE(validate_dataset(ds.catalog, ds.videos).ok());
  std::size_t distractors = 0, test = 0;
  for (std::size_t i = 0; i < ds.videos.size(); ++i) {
    distractors += ds.distractor[i];
    test += ds.splits[i] == "test";
    EXPECT_EQ(ds.videos[i].num_frames(), 120u);
    EXPECT_EQ(ds.videos[i].dim(), 32u);
  }
  EXPECT_EQ(distractors, 20u);
  EXPECT_EQ(test, 50u);
  EXPECT_DOUBLE_EQ(ds.sigma, 8.0 / 6.0);
}

TEST(Synth, BlocksAreStrictlyOrderedWithGaps) {
  SynthConfig cfg;
  cfg.seed = 2;
  const auto ds = generate(cfg);
  for (std::size_t i = 0; i < ds.videos.size(); ++i) {
    if (ds.distractor[i]) {
      EXPECT_TRUE(ds.annotations[i].intervals.empty());
      continue;
    }
    const auto& iv = ds.annotations[i].intervals;
    ASSERT_EQ(iv.size(), 3u);
    EXPECT_LT(iv[0].end + cfg.min_gap, iv[1].start + 1);
    EXPECT_LT(iv[1].end + cfg.min_gap, iv[2].start + 1);
    EXPECT_LT(iv[2].end, cfg.num_frames);
  }
}

TEST(Synth, PrototypesSeparated) {
  SynthConfig cfg;
  cfg.seed = 3;
  const auto ds = generate(cfg);
  const auto distinct = distinct_prototypes(ds);
  // 5 x 3 phases, one shared action, one shared background.
  EXPECT_EQ(distinct.size(), 15u);
  double min_d = INFINITY;
  for (std::size_t i = 0; i < distinct.size(); ++i)
    for (std::size_t j = i + 1; j < distinct.size(); ++j) {
      const auto& a = ds.prototypes[distinct[i].first][static_cast<std::size_t>(distinct[i].second)];
      const auto& b = ds.prototypes[distinct[j].first][static_cast<std::size_t>(distinct[j].second)];
      double d = 0;
      for (std::size_t k = 0; k < a.size(); ++k) d += (a[k] - b[k]) * (a[k] - b[k]);
      min_d = std::min(min_d, std::sqrt(d));
    }
  EXPECT_NEAR(min_d, 8.0, 1e-9);
  EXPECT_EQ(ds.prototypes[0][1], ds.prototypes[1][1]);
}

TEST(Synth, NoiselessFramesEqualPrototypes) {
  SynthConfig cfg;
  cfg.seed = 4;
  cfg.feature_noise_sigma = 0.0;
  const auto ds = generate(cfg);
  for (std::size_t i = 0; i < ds.videos.size(); ++i) {
    if (ds.distractor[i]) continue;
    const auto& v = ds.videos[i];
    for (std::size_t t = 0; t < v.num_frames(); ++t) {
      const auto& proto = ds.prototypes[v.label][static_cast<std::size_t>(phase_at(ds.annotations[i], t))];
      for (std::size_t j = 0; j < v.dim(); ++j)
        ASSERT_EQ(v.frames(t, j), static_cast<double>(static_cast<float>(proto[j])));
    }
  }
}

TEST(Synth, NearestPrototypeRecoversPlantedPhase) {
  SynthConfig cfg;
  cfg.seed = 5;
  cfg.feature_noise_sigma = 0.0;
  const auto ds = generate(cfg);
  std::size_t checked = 0;
  for (std::size_t i = 0; i < ds.videos.size(); ++i) {
    if (ds.distractor[i]) continue;
    const auto& v = ds.videos[i];
    for (std::size_t t = 0; t < v.num_frames(); ++t) {
      const Phase truth = phase_at(ds.annotations[i], t);
      if (truth == Phase::Background) continue;
      const auto owners = nearest_phases(ds, v.label, v.frames.row(t));
      ASSERT_NE(std::find(owners.begin(), owners.end(), truth), owners.end());
      ++checked;
    }
  }
  EXPECT_GT(checked, 1000u);
}

TEST(Synth, DeterministicPerSeed) {
  SynthConfig cfg;
  cfg.seed = 6;
  cfg.videos_per_category = 5;
  const auto a = generate(cfg), b = generate(cfg);
  ASSERT_EQ(a.videos.size(), b.videos.size());
  for (std::size_t i = 0; i < a.videos.size(); ++i) {
    EXPECT_EQ(a.videos[i].frames, b.videos[i].frames);
    EXPECT_EQ(a.annotations[i], b.annotations[i]);
  }
  cfg.seed = 7;
  EXPECT_NE(generate(cfg).videos[0].frames, a.videos[0].frames);
}

TEST(Synth, InfeasibleLayoutRejected) {
  SynthConfig cfg;
  cfg.num_frames = 60;
  EXPECT_THROW(generate(cfg), Error);
  cfg = {};
  cfg.confusable_pairs = {{0, 9}};
  EXPECT_THROW(generate(cfg), Error);
}

TEST(Synth, IdealScorerDecodesPlantedBlocks) {
  SynthConfig cfg;
  cfg.seed = 8;
  const auto ds = generate(cfg);
  std::vector<Localization> preds;
  std::vector<AnnotationTrack> ann;
  for (std::size_t i = 0; i < ds.videos.size(); ++i) {
    if (ds.distractor[i]) continue;
    auto l = localize(prototype_scores(ds, ds.videos[i].frames), ds.videos[i].label);
    l.video_id = ds.videos[i].id;
    preds.push_back(l);
    ann.push_back(ds.annotations[i]);
  }
  const auto p = precision_at_1(preds, ann);
  EXPECT_EQ(p.state, 1.0);
  EXPECT_EQ(p.action, 1.0);
}

TEST(Synth, DistractorsCarryAdversarialLabels) {
  SynthConfig cfg;
  cfg.seed = 9;
  cfg.noise_videos = 40;
  cfg.feature_noise_sigma = 0.0;
  const auto ds = generate(cfg);
  for (std::size_t i = 0; i < ds.videos.size(); ++i) {
    if (!ds.distractor[i]) continue;
    EXPECT_EQ(ds.splits[i], "train");
    EXPECT_LT(ds.videos[i].label, 5u);
    // No frame shows a prototype owned by the label's category unless it is
    // shared (background, confusable action).
    const std::size_t c = ds.videos[i].label;
    std::size_t own = 0;
    for (std::size_t t = 0; t < ds.videos[i].num_frames(); ++t) {
      const auto ph = nearest_phases(ds, c, ds.videos[i].frames.row(t));
      for (auto p : ph)
        if (p == Phase::Initial || p == Phase::End) ++own;
    }
    EXPECT_EQ(own, 0u);
  }
}
