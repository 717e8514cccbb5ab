// SPDX-License-Identifier: Apache-2.0
//
// Exact decoding under the causal ordering constraint: the initial state
// frame precedes the action frame, which precedes the end state frame.

#ifndef STATECHANGE_DECODE_HPP
#define STATECHANGE_DECODE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "statechange/core.hpp"

namespace statechange {

struct DecodeOptions {
  // Ties are always broken towards the lexicographically smallest (i, j, k).
  bool log_space = true;
  double score_floor = 1e-12;
};

namespace detail {

struct Triple {
  std::size_t i = 0, j = 0, k = 0;
  double value = 0.0;  // log-score when log_space, else the product
};

inline void check_decodable(const FrameScores& scores, std::size_t category,
                            const DecodeOptions& opts) {
  if (scores.num_frames() < 3)
    throw Error("decoding needs at least 3 frames, got " + std::to_string(scores.num_frames()));
  if (category >= scores.num_categories)
    throw Error("category " + std::to_string(category) + " out of range");
  if (!(opts.score_floor > 0.0 && opts.score_floor < 1.0))
    throw Error("score_floor must lie in (0, 1)");
}

// Running prefix max over s1 and suffix max over s2, one pass each.
inline Triple best_triple(const FrameScores& scores, std::size_t c, const DecodeOptions& opts) {
  const std::size_t T = scores.num_frames();
  auto tr = [&](double x) {
    return opts.log_space ? std::log(std::max(x, opts.score_floor)) : x;
  };
  auto combine = [&](double a, double b) { return opts.log_space ? a + b : a * b; };

  // suffix_arg[t] = smallest index k >= t maximizing s2 over [t, T-1]
  std::vector<std::size_t> suffix_arg(T);
  std::vector<double> suffix_val(T);
  suffix_arg[T - 1] = T - 1;
  suffix_val[T - 1] = tr(scores.s2(T - 1, c));
  for (std::size_t t = T - 1; t-- > 0;) {
    const double v = tr(scores.s2(t, c));
    if (v >= suffix_val[t + 1]) {
      suffix_val[t] = v;
      suffix_arg[t] = t;
    } else {
      suffix_val[t] = suffix_val[t + 1];
      suffix_arg[t] = suffix_arg[t + 1];
    }
  }

  Triple best;
  bool have = false;
  std::size_t prefix_arg = 0;
  double prefix_val = tr(scores.s1(0, c));
  for (std::size_t j = 1; j + 1 < T; ++j) {
    const double v = combine(combine(prefix_val, tr(scores.act(j, c))), suffix_val[j + 1]);
    if (!have || v > best.value) {
      best = {prefix_arg, j, suffix_arg[j + 1], v};
      have = true;
    }
    const double s1 = tr(scores.s1(j, c));
    if (s1 > prefix_val) {
      prefix_val = s1;
      prefix_arg = j;
    }
  }
  return best;
}

inline double to_probability(double value, const DecodeOptions& opts) {
  return opts.log_space ? std::exp(value) : value;
}

}  // namespace detail

/// p(c|v): best product of s1, action and s2 likelihoods over ordered triples.
inline double score_video(const FrameScores& scores, std::size_t category,
                          const DecodeOptions& opts = {}) {
  detail::check_decodable(scores, category, opts);
  return detail::to_probability(detail::best_triple(scores, category, opts).value, opts);
}

inline Localization localize(const FrameScores& scores, std::size_t category,
                             const DecodeOptions& opts = {}) {
  detail::check_decodable(scores, category, opts);
  const auto t = detail::best_triple(scores, category, opts);
  Localization loc;
  loc.category = category;
  loc.s1_frame = t.i;
  loc.action_frame = t.j;
  loc.s2_frame = t.k;
  loc.score = detail::to_probability(t.value, opts);
  return loc;
}

struct Classification {
  std::size_t category = 0;
  double score = 0.0;
};

inline Classification classify(const FrameScores& scores, const DecodeOptions& opts = {}) {
  if (scores.num_categories == 0) throw Error("scores carry no categories");
  Classification best;
  double best_value = 0.0;
  for (std::size_t c = 0; c < scores.num_categories; ++c) {
    detail::check_decodable(scores, c, opts);
    const double v = detail::best_triple(scores, c, opts).value;
    if (c == 0 || v > best_value) {
      best_value = v;
      best.category = c;
    }
  }
  best.score = detail::to_probability(best_value, opts);
  return best;
}

/// Localizations for every category scoring strictly above `threshold`,
/// highest score first (ties keep category order).
inline std::vector<Localization> detect_multi(const FrameScores& scores, double threshold,
                                              const DecodeOptions& opts = {}) {
  if (!(threshold >= 0.0)) throw Error("threshold must be nonnegative");
  std::vector<Localization> out;
  for (std::size_t c = 0; c < scores.num_categories; ++c) {
    auto loc = localize(scores, c, opts);
    if (loc.score > threshold) out.push_back(std::move(loc));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Localization& a, const Localization& b) { return a.score > b.score; });
  return out;
}

}  // namespace statechange

#endif  // STATECHANGE_DECODE_HPP
