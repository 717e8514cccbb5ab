// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "statechange/core.hpp"

using namespace statechange;

namespace {

CategoryCatalog two_categories() {
  return CategoryCatalog({{"wrap_box", "flat box", "wrapped box", "wrapping"},
                          {"peel_apple", "apple", "peeled apple", "peeling"}});
}

VideoFeatures video(std::size_t T, std::size_t label) {
  return VideoFeatures{"v", label, 1.0, Matrix(T, 4, 0.5)};
}

}  // namespace

TEST(Catalog, RejectsEmptyAndDuplicates) {
  EXPECT_THROW(CategoryCatalog(std::vector<Category>{}), Error);
  EXPECT_THROW(CategoryCatalog({{"a", "", "", ""}, {"a", "", "", ""}}), Error);
  EXPECT_THROW(CategoryCatalog({{"", "", "", ""}}), Error);
}

TEST(Catalog, FindAndJoin) {
  const auto cat = two_categories();
  EXPECT_EQ(cat.size(), 2u);
  EXPECT_EQ(cat.find("peel_apple"), 1u);
  EXPECT_FALSE(cat.find("nope").has_value());
  EXPECT_EQ(cat.names_joined(), "wrap_box,peel_apple");
}

TEST(IndexLayout, IsABijection) {
  for (std::size_t n = 1; n <= 7; ++n) {
    for (std::size_t c = 0; c < n; ++c) {
      EXPECT_EQ(category_of_state_index(initial_state_index(c), n), c);
      EXPECT_EQ(category_of_state_index(end_state_index(c), n), c);
      EXPECT_EQ(category_of_action_index(action_index(c), n), c);
    }
    EXPECT_FALSE(category_of_state_index(state_background_index(n), n).has_value());
    EXPECT_FALSE(category_of_action_index(action_background_index(n), n).has_value());
    // Every state index below 2n is hit exactly once.
    std::vector<int> hits(2 * n, 0);
    for (std::size_t c = 0; c < n; ++c) {
      ++hits[initial_state_index(c)];
      ++hits[end_state_index(c)];
    }
    for (int h : hits) EXPECT_EQ(h, 1);
  }
}

TEST(Validate, MinimalLegalVideoPasses) {
  const auto cat = two_categories();
  const std::vector<VideoFeatures> vids{video(3, 1)};
  const auto rep = validate_dataset(cat, vids);
  EXPECT_TRUE(rep.ok());
}

TEST(Validate, TooShort) {
  const auto cat = two_categories();
  const std::vector<VideoFeatures> vids{video(2, 0)};
  const auto rep = validate_dataset(cat, vids);
  ASSERT_FALSE(rep.ok());
  ASSERT_EQ(rep.videos[0].reasons.size(), 1u);
  EXPECT_EQ(rep.videos[0].reasons[0], "too short for causal triple");
}

TEST(Validate, LabelOutOfRange) {
  const auto cat = two_categories();
  const std::vector<VideoFeatures> vids{video(5, 5)};
  const auto rep = validate_dataset(cat, vids);
  ASSERT_FALSE(rep.ok());
  EXPECT_EQ(rep.videos[0].reasons[0], "label out of range");
}

TEST(Validate, NonFiniteAndBadFps) {
  const auto cat = two_categories();
  auto v = video(4, 0);
  v.frames(1, 2) = std::nan("");
  v.fps = 0.0;
  const auto rep = validate_dataset(cat, std::vector<VideoFeatures>{v});
  EXPECT_EQ(rep.num_failed(), 1u);
  EXPECT_EQ(rep.videos[0].reasons.size(), 2u);
}

TEST(Validate, IsDeterministic) {
  const auto cat = two_categories();
  const std::vector<VideoFeatures> vids{video(2, 0), video(3, 1), video(9, 3)};
  const auto a = validate_dataset(cat, vids);
  const auto b = validate_dataset(cat, vids);
  ASSERT_EQ(a.videos.size(), b.videos.size());
  for (std::size_t i = 0; i < a.videos.size(); ++i) {
    EXPECT_EQ(a.videos[i].ok, b.videos[i].ok);
    EXPECT_EQ(a.videos[i].reasons, b.videos[i].reasons);
  }
}

TEST(SecondsToFrames, RoundsWithMinimumOne) {
  EXPECT_EQ(seconds_to_frames(2.0, 1.0), 2u);
  EXPECT_EQ(seconds_to_frames(2.0, 2.5), 5u);
  EXPECT_EQ(seconds_to_frames(0.1, 1.0), 1u);
  EXPECT_EQ(seconds_to_frames(60.0, 1.0), 60u);
  EXPECT_EQ(seconds_to_frames(1.26, 2.0), 3u);
}

TEST(LabelKinds, NamesRoundTrip) {
  for (auto k : {LabelKind::S1, LabelKind::S2, LabelKind::A, LabelKind::BgState,
                 LabelKind::BgAction})
    EXPECT_EQ(parse_label_kind(label_kind_name(k)), k);
  EXPECT_THROW(parse_label_kind("X"), Error);
  EXPECT_TRUE(is_state_kind(LabelKind::BgState));
  EXPECT_TRUE(is_action_kind(LabelKind::BgAction));
  EXPECT_FALSE(is_positive_kind(LabelKind::BgAction));
}

TEST(Architecture, ParseNamesAndNumerals) {
  EXPECT_EQ(parse_architecture("joint2"), Architecture::Joint2);
  EXPECT_EQ(parse_architecture("II"), Architecture::MultiClassifier);
  EXPECT_EQ(architecture_name(Architecture::Independent), "independent");
  EXPECT_THROW(parse_architecture("V"), Error);
}

TEST(Annotation, CoversInclusiveBoundsAndRepeats) {
  AnnotationTrack t{"v", {{LabelKind::S1, 2, 4}, {LabelKind::S1, 10, 10}, {LabelKind::A, 6, 7}}};
  EXPECT_TRUE(t.covers(LabelKind::S1, 2));
  EXPECT_TRUE(t.covers(LabelKind::S1, 4));
  EXPECT_TRUE(t.covers(LabelKind::S1, 10));
  EXPECT_FALSE(t.covers(LabelKind::S1, 5));
  EXPECT_FALSE(t.covers(LabelKind::S2, 3));
  EXPECT_TRUE(t.covers(LabelKind::A, 7));
}
