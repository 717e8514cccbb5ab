// SPDX-License-Identifier: Apache-2.0
//
// Shared domain types: category catalog, per-video features, frame scores,
// localizations, pseudo labels and annotation tracks.

#ifndef STATECHANGE_CORE_HPP
#define STATECHANGE_CORE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace statechange {

/// Every recoverable failure in the library is reported with this type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct Category {
  std::string name;
  std::string initial_state_name;
  std::string end_state_name;
  std::string action_name;

  friend bool operator==(const Category&, const Category&) = default;
};

/// Ordered set of interaction categories. The order fixes the class index
/// layout: initial state of c -> 2c, end state -> 2c+1, action -> c, and
/// background classes (when a head has one) take the final index.
class CategoryCatalog {
 public:
  CategoryCatalog() = default;
  explicit CategoryCatalog(std::vector<Category> categories)
      : categories_(std::move(categories)) {
    if (categories_.empty()) throw Error("catalog must hold at least one category");
    std::unordered_set<std::string> seen;
    for (const auto& c : categories_) {
      if (c.name.empty()) throw Error("category name must not be empty");
      if (!seen.insert(c.name).second)
        throw Error("duplicate category name '" + c.name + "'");
    }
  }

  std::size_t size() const { return categories_.size(); }
  const Category& operator[](std::size_t c) const { return categories_.at(c); }
  const std::vector<Category>& categories() const { return categories_; }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t c = 0; c < categories_.size(); ++c)
      if (categories_[c].name == name) return c;
    return std::nullopt;
  }

  std::string names_joined(std::string_view sep = ",") const {
    std::string out;
    for (std::size_t c = 0; c < categories_.size(); ++c) {
      if (c) out += sep;
      out += categories_[c].name;
    }
    return out;
  }

  friend bool operator==(const CategoryCatalog&, const CategoryCatalog&) = default;

 private:
  std::vector<Category> categories_;
};

// Index layout helpers.
constexpr std::size_t initial_state_index(std::size_t c) { return 2 * c; }
constexpr std::size_t end_state_index(std::size_t c) { return 2 * c + 1; }
constexpr std::size_t action_index(std::size_t c) { return c; }
constexpr std::size_t state_background_index(std::size_t n) { return 2 * n; }
constexpr std::size_t action_background_index(std::size_t n) { return n; }

/// Category owning a state-head index, or nullopt for the background slot.
inline std::optional<std::size_t> category_of_state_index(std::size_t idx, std::size_t n) {
  if (idx < 2 * n) return idx / 2;
  return std::nullopt;
}

inline std::optional<std::size_t> category_of_action_index(std::size_t idx, std::size_t n) {
  if (idx < n) return idx;
  return std::nullopt;
}

struct VideoFeatures {
  std::string id;
  std::size_t label = 0;
  double fps = 1.0;
  Matrix frames;  // T x D

  std::size_t num_frames() const { return frames.rows(); }
  std::size_t dim() const { return frames.cols(); }
};

enum class Architecture : std::uint8_t {
  Independent = 1,     // I: one model per category
  MultiClassifier = 2, // II: per-category heads over a shared trunk
  Joint1 = 3,          // III: one softmax over 3N outputs
  Joint2 = 4,          // IV: state head + action head, both softmax
};

inline std::string_view architecture_name(Architecture a) {
  switch (a) {
    case Architecture::Independent: return "independent";
    case Architecture::MultiClassifier: return "multiclf";
    case Architecture::Joint1: return "joint1";
    case Architecture::Joint2: return "joint2";
  }
  return "unknown";
}

inline Architecture parse_architecture(std::string_view s) {
  if (s == "independent" || s == "I") return Architecture::Independent;
  if (s == "multiclf" || s == "II") return Architecture::MultiClassifier;
  if (s == "joint1" || s == "III") return Architecture::Joint1;
  if (s == "joint2" || s == "IV") return Architecture::Joint2;
  throw Error("unknown architecture '" + std::string(s) +
              "' (expected independent|multiclf|joint1|joint2)");
}

/// Per-frame likelihoods. Column c of `action` is h_c^a; columns 2c and 2c+1
/// of `state` are h_c^{s1} and h_c^{s2}. Background columns follow, when the
/// architecture has them.
struct FrameScores {
  Matrix state;
  Matrix action;
  Architecture architecture = Architecture::Joint2;
  std::size_t num_categories = 0;

  std::size_t num_frames() const { return state.rows(); }
  double s1(std::size_t t, std::size_t c) const { return state(t, initial_state_index(c)); }
  double s2(std::size_t t, std::size_t c) const { return state(t, end_state_index(c)); }
  double act(std::size_t t, std::size_t c) const { return action(t, action_index(c)); }
};

struct Localization {
  std::string video_id;
  std::size_t category = 0;
  std::size_t s1_frame = 0;
  std::size_t action_frame = 0;
  std::size_t s2_frame = 0;
  double score = 0.0;

  friend bool operator==(const Localization&, const Localization&) = default;
};

enum class LabelKind : std::uint8_t { S1, S2, A, BgState, BgAction };

inline std::string_view label_kind_name(LabelKind k) {
  switch (k) {
    case LabelKind::S1: return "S1";
    case LabelKind::S2: return "S2";
    case LabelKind::A: return "A";
    case LabelKind::BgState: return "BG_S";
    case LabelKind::BgAction: return "BG_A";
  }
  return "?";
}

inline LabelKind parse_label_kind(std::string_view s) {
  if (s == "S1") return LabelKind::S1;
  if (s == "S2") return LabelKind::S2;
  if (s == "A") return LabelKind::A;
  if (s == "BG_S") return LabelKind::BgState;
  if (s == "BG_A") return LabelKind::BgAction;
  throw Error("unknown label kind '" + std::string(s) + "'");
}

inline bool is_state_kind(LabelKind k) {
  return k == LabelKind::S1 || k == LabelKind::S2 || k == LabelKind::BgState;
}
inline bool is_action_kind(LabelKind k) { return !is_state_kind(k); }
inline bool is_positive_kind(LabelKind k) {
  return k == LabelKind::S1 || k == LabelKind::S2 || k == LabelKind::A;
}

/// Construction rule that produced a pseudo label.
enum class LabelRule : std::uint8_t { A, B, C, D, E };

inline char rule_letter(LabelRule r) { return static_cast<char>('A' + static_cast<int>(r)); }

struct PseudoLabel {
  std::string video_id;
  std::size_t frame = 0;
  std::size_t category = 0;
  LabelKind kind = LabelKind::S1;
  double weight = 1.0;
  // Provenance, used for truncation priority and diagnostics.
  LabelRule rule = LabelRule::A;
  std::size_t anchor_distance = 0;

  friend bool operator==(const PseudoLabel&, const PseudoLabel&) = default;
};

struct Interval {
  LabelKind kind = LabelKind::S1;  // S1, A or S2
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive

  bool contains(std::size_t t) const { return t >= start && t <= end; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

struct AnnotationTrack {
  std::string video_id;
  std::vector<Interval> intervals;

  bool covers(LabelKind kind, std::size_t t) const {
    return std::any_of(intervals.begin(), intervals.end(), [&](const Interval& iv) {
      return iv.kind == kind && iv.contains(t);
    });
  }
  friend bool operator==(const AnnotationTrack&, const AnnotationTrack&) = default;
};

/// Converts a duration in seconds to a frame count: nearest integer, at least 1.
inline std::size_t seconds_to_frames(double seconds, double fps) {
  const double frames = std::round(seconds * fps);
  return frames < 1.0 ? 1 : static_cast<std::size_t>(frames);
}

struct VideoCheck {
  std::string video_id;
  bool ok = true;
  std::vector<std::string> reasons;
};

struct ValidationReport {
  std::vector<VideoCheck> videos;

  bool ok() const {
    return std::all_of(videos.begin(), videos.end(), [](const VideoCheck& v) { return v.ok; });
  }
  std::size_t num_failed() const {
    return static_cast<std::size_t>(std::count_if(
        videos.begin(), videos.end(), [](const VideoCheck& v) { return !v.ok; }));
  }
};

inline VideoCheck validate_video(const CategoryCatalog& catalog, const VideoFeatures& v) {
  VideoCheck check{v.id, true, {}};
  auto fail = [&](std::string reason) {
    check.ok = false;
    check.reasons.push_back(std::move(reason));
  };
  if (v.num_frames() < 3) fail("too short for causal triple");
  if (v.dim() < 1) fail("feature dimension must be at least 1");
  if (!(v.fps > 0.0) || !std::isfinite(v.fps)) fail("fps must be positive");
  if (v.label >= catalog.size()) fail("label out of range");
  if (!v.frames.all_finite()) fail("non-finite feature value");
  return check;
}

inline ValidationReport validate_dataset(const CategoryCatalog& catalog,
                                         std::span<const VideoFeatures> videos) {
  ValidationReport report;
  report.videos.reserve(videos.size());
  for (const auto& v : videos) report.videos.push_back(validate_video(catalog, v));
  return report;
}

}  // namespace statechange

#endif  // STATECHANGE_CORE_HPP
