// SPDX-License-Identifier: Apache-2.0
//
// Evaluation: single-frame precision, per-frame mean average precision,
// video classification accuracy and a PCA projection of the learned
// feature space.

#ifndef STATECHANGE_EVALKIT_HPP
#define STATECHANGE_EVALKIT_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "statechange/core.hpp"
#include "statechange/decode.hpp"
#include "statechange/model.hpp"

namespace statechange {

struct PrecisionResult {
  double state = 0.0;
  double action = 0.0;
};

/// A predicted frame is correct when it falls in any ground-truth interval
/// (inclusive) of its kind. Scores are averaged over the videos of each
/// category, then over categories.
inline PrecisionResult precision_at_1(std::span<const Localization> predictions,
                                      std::span<const AnnotationTrack> annotations) {
  std::unordered_map<std::string, const AnnotationTrack*> by_id;
  for (const auto& a : annotations) by_id[a.video_id] = &a;

  struct Acc {
    double state = 0.0, action = 0.0;
    std::size_t n = 0;
  };
  std::map<std::size_t, Acc> per_category;
  for (const auto& p : predictions) {
    const auto it = by_id.find(p.video_id);
    if (it == by_id.end()) throw Error("no annotation for predicted video '" + p.video_id + "'");
    const auto& track = *it->second;
    auto& acc = per_category[p.category];
    acc.state += 0.5 * (static_cast<double>(track.covers(LabelKind::S1, p.s1_frame)) +
                        static_cast<double>(track.covers(LabelKind::S2, p.s2_frame)));
    acc.action += static_cast<double>(track.covers(LabelKind::A, p.action_frame));
    ++acc.n;
  }
  PrecisionResult r;
  if (per_category.empty()) return r;
  for (const auto& [c, acc] : per_category) {
    r.state += acc.state / static_cast<double>(acc.n);
    r.action += acc.action / static_cast<double>(acc.n);
  }
  r.state /= static_cast<double>(per_category.size());
  r.action /= static_cast<double>(per_category.size());
  return r;
}

/// Average precision of one ranked list; ties in score keep ascending index.
/// Returns -1 when there are no positives.
inline double average_precision(std::span<const double> scores, const std::vector<bool>& relevant) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double hits = 0.0, sum = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (!relevant[order[rank]]) continue;
    hits += 1.0;
    sum += hits / static_cast<double>(rank + 1);
  }
  return hits > 0.0 ? sum / hits : -1.0;
}

/// Column order of per-frame probability matrices.
inline constexpr LabelKind kMapColumns[3] = {LabelKind::S1, LabelKind::A, LabelKind::S2};

/// Per-frame mAP over (video, class) with classes S1, A, S2 as columns of a
/// T x 3 matrix. Classes without positive frames are skipped; the per-video
/// class mean is then averaged over videos. Entries are matched by position.
inline double mean_average_precision(std::span<const Matrix> per_frame_probs,
                                     std::span<const AnnotationTrack> annotations) {
  if (per_frame_probs.size() != annotations.size())
    throw Error("probability and annotation counts differ");
  double total = 0.0;
  std::size_t videos = 0;
  for (std::size_t v = 0; v < per_frame_probs.size(); ++v) {
    const Matrix& probs = per_frame_probs[v];
    if (probs.cols() != 3) throw Error("per-frame probabilities must have 3 columns");
    if (!probs.all_finite()) throw Error("non-finite probability");
    double video_sum = 0.0;
    std::size_t classes = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      std::vector<double> scores(probs.rows());
      std::vector<bool> relevant(probs.rows());
      for (std::size_t t = 0; t < probs.rows(); ++t) {
        scores[t] = probs(t, k);
        relevant[t] = annotations[v].covers(kMapColumns[k], t);
      }
      const double ap = average_precision(scores, relevant);
      if (ap < 0.0) continue;
      video_sum += ap;
      ++classes;
    }
    if (classes == 0) continue;
    total += video_sum / static_cast<double>(classes);
    ++videos;
  }
  return videos ? total / static_cast<double>(videos) : 0.0;
}

/// T x 3 matrix (S1, A, S2) of the model's likelihoods for one category.
inline Matrix category_track(const FrameScores& s, std::size_t c) {
  Matrix m(s.num_frames(), 3);
  for (std::size_t t = 0; t < s.num_frames(); ++t) {
    m(t, 0) = s.s1(t, c);
    m(t, 1) = s.act(t, c);
    m(t, 2) = s.s2(t, c);
  }
  return m;
}

inline double classification_accuracy(std::span<const FrameScores> scores,
                                      std::span<const std::size_t> labels,
                                      const DecodeOptions& opts = {}) {
  if (scores.empty()) throw Error("accuracy needs at least one video");
  if (scores.size() != labels.size()) throw Error("score and label counts differ");
  std::size_t correct = 0;
  for (std::size_t v = 0; v < scores.size(); ++v)
    correct += classify(scores[v], opts).category == labels[v];
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

// ---------------------------------------------------------------------------
// PCA

struct PcaPoint {
  std::string video_id;
  std::size_t label = 0;
  double pc1 = 0.0;
  double pc2 = 0.0;
};

struct PrincipalAxes {
  std::vector<double> axis1, axis2;
  double variance1 = 0.0, variance2 = 0.0;
  std::vector<double> mean;
};

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double normalize(std::vector<double>& v) {
  const double n = std::sqrt(dot(v, v));
  if (n > 0.0)
    for (auto& x : v) x /= n;
  return n;
}

inline Matrix matmul_sym(const Matrix& a, const Matrix& b) {
  const std::size_t d = a.rows();
  Matrix out(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

inline std::vector<double> matvec(const Matrix& m, std::span<const double> v) {
  std::vector<double> out(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = dot(m.row(i), v);
  return out;
}

// Dominant eigenvector of a symmetric PSD matrix by power iteration on
// M^1024 (ten normalized squarings), orthogonal to `against`. Stops when
// successive iterates have cosine >= 1 - 1e-10; the high power keeps the
// error left at that point small even for eigenvalue ratios near 0.99.
inline std::vector<double> dominant_eigenvector(const Matrix& m,
                                                std::span<const std::vector<double>> against) {
  const std::size_t d = m.rows();
  Matrix op = m;
  for (int s = 0; s < 10; ++s) {
    op = matmul_sym(op, op);
    double scale = 0.0;
    for (double x : op.data()) scale = std::max(scale, std::abs(x));
    if (scale == 0.0) return std::vector<double>(d, 0.0);
    for (auto& x : op.data()) x /= scale;
  }
  // Twice: one pass leaves a non-orthogonal residue when v is nearly in span(against).
  auto project_out = [&](std::vector<double>& v) {
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& u : against) {
        const double p = dot(v, u);
        for (std::size_t i = 0; i < d; ++i) v[i] -= p * u[i];
      }
  };
  std::vector<double> v(d);
  for (std::size_t i = 0; i < d; ++i) v[i] = 1.0 + 0.1 * static_cast<double>(i % 7);
  project_out(v);
  if (normalize(v) == 0.0) return std::vector<double>(d, 0.0);
  for (int iter = 0; iter < 100000; ++iter) {
    auto next = matvec(op, v);
    project_out(next);
    if (normalize(next) <= 1e-300) return std::vector<double>(d, 0.0);
    const double cosine = std::abs(dot(next, v));
    v = std::move(next);
    if (cosine >= 1.0 - 1e-10) break;
  }
  // Sign convention: largest-magnitude coordinate positive.
  const auto it = std::max_element(v.begin(), v.end(),
                                   [](double a, double b) { return std::abs(a) < std::abs(b); });
  if (*it < 0)
    for (auto& x : v) x = -x;
  return v;
}

}  // namespace detail

/// Top two principal axes of the rows of `points`.
inline PrincipalAxes principal_axes(const Matrix& points) {
  const std::size_t n = points.rows(), d = points.cols();
  PrincipalAxes out;
  out.mean.assign(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) out.mean[j] += points(r, j) / static_cast<double>(n);
  Matrix cov(d, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < d; ++i) {
      const double xi = points(r, i) - out.mean[i];
      for (std::size_t j = 0; j < d; ++j) cov(i, j) += xi * (points(r, j) - out.mean[j]);
    }
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  double trace = 0.0;
  for (auto& x : cov.data()) x /= denom;
  for (std::size_t i = 0; i < d; ++i) trace += cov(i, i);

  out.axis1.assign(d, 0.0);
  out.axis2.assign(d, 0.0);
  if (!(trace > 1e-300)) return out;

  const auto rayleigh = [&](const std::vector<double>& v) {
    return detail::dot(v, detail::matvec(cov, v));
  };
  out.axis1 = detail::dominant_eigenvector(cov, {});
  out.variance1 = rayleigh(out.axis1);
  if (d > 1) {
    // Deflate; a numerically empty remainder means the points are collinear.
    Matrix rest = cov;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) rest(i, j) -= out.variance1 * out.axis1[i] * out.axis1[j];
    double rest_trace = 0.0;
    for (std::size_t i = 0; i < d; ++i) rest_trace += rest(i, i);
    const std::vector<std::vector<double>> against{out.axis1};
    auto v2 = rest_trace > 1e-12 * trace ? detail::dominant_eigenvector(rest, against)
                                         : std::vector<double>(d, 0.0);
    const double var2 = detail::dot(v2, v2) > 0.0 ? rayleigh(v2) : 0.0;
    if (var2 > 1e-12 * out.variance1) {
      out.axis2 = std::move(v2);
      out.variance2 = var2;
    }
  }
  return out;
}

/// Per video: localize under its label, average the adapter output over the
/// three decoded frames, then project the centered averages on the top two
/// principal axes.
inline std::vector<PcaPoint> pca_export(const ModelParams& params,
                                        std::span<const VideoFeatures> videos,
                                        const DecodeOptions& opts = {}) {
  if (videos.size() < 3) throw Error("pca export needs at least 3 videos");
  Matrix averaged(videos.size(), params.dim);
  for (std::size_t v = 0; v < videos.size(); ++v) {
    const auto& video = videos[v];
    const auto loc = localize(forward(params, video.frames), video.label, opts);
    const Matrix z = adapted_features(params, video.frames, video.label);
    for (std::size_t t : {loc.s1_frame, loc.action_frame, loc.s2_frame})
      for (std::size_t j = 0; j < params.dim; ++j) averaged(v, j) += z(t, j) / 3.0;
  }
  const auto axes = principal_axes(averaged);
  std::vector<PcaPoint> out;
  out.reserve(videos.size());
  for (std::size_t v = 0; v < videos.size(); ++v) {
    std::vector<double> centered(params.dim);
    for (std::size_t j = 0; j < params.dim; ++j) centered[j] = averaged(v, j) - axes.mean[j];
    out.push_back({videos[v].id, videos[v].label, detail::dot(centered, axes.axis1),
                   detail::dot(centered, axes.axis2)});
  }
  return out;
}

}  // namespace statechange

#endif  // STATECHANGE_EVALKIT_HPP
