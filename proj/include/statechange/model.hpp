// SPDX-License-Identifier: Apache-2.0
//
// Frame classifier in four variants: independent per-category models,
// per-category heads on a shared trunk, a single joint softmax over 3N
// classes, and separate joint state/action heads. Every head is a one
// hidden layer MLP on top of a D x D linear adapter.

#ifndef STATECHANGE_MODEL_HPP
#define STATECHANGE_MODEL_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "statechange/core.hpp"

namespace statechange {

/// Affine map y = W x + b, W stored out x in.
struct Dense {
  Matrix w;
  std::vector<double> b;

  Dense() = default;
  Dense(std::size_t out, std::size_t in) : w(out, in), b(out, 0.0) {}

  std::size_t in() const { return w.cols(); }
  std::size_t out() const { return w.rows(); }

  void apply(std::span<const double> x, std::span<double> y) const {
    for (std::size_t o = 0; o < w.rows(); ++o) {
      double acc = b[o];
      const auto row = w.row(o);
      for (std::size_t i = 0; i < row.size(); ++i) acc += row[i] * x[i];
      y[o] = acc;
    }
  }

  friend bool operator==(const Dense&, const Dense&) = default;
};

struct Mlp {
  Dense hidden;  // H x in, ReLU
  Dense output;  // O x H

  friend bool operator==(const Mlp&, const Mlp&) = default;
};

struct ModelOptions {
  // Background "no state" output on the state heads. For II/I this gives
  // each per-category state head three outputs, for IV the state head 2N+1.
  bool state_background = true;
  bool adapter = true;

  friend bool operator==(const ModelOptions&, const ModelOptions&) = default;
};

struct ModelParams {
  Architecture architecture = Architecture::Joint2;
  std::size_t num_categories = 0;
  std::size_t dim = 0;
  std::size_t hidden = 0;
  ModelOptions options;
  std::vector<Dense> adapters;  // one (shared) or one per category for I
  std::vector<Mlp> heads;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

inline bool per_category_heads(Architecture a) {
  return a == Architecture::Independent || a == Architecture::MultiClassifier;
}

inline bool has_state_background(const ModelParams& p) {
  return p.architecture != Architecture::Joint1 && p.options.state_background;
}

inline bool has_action_background(const ModelParams& p) {
  // I/II realize the action background as the sigmoid's negative target.
  return p.architecture != Architecture::Joint1;
}

/// Output width of every head in declaration order.
inline std::vector<std::size_t> head_output_sizes(Architecture arch, std::size_t n,
                                                  bool state_background) {
  switch (arch) {
    case Architecture::Independent:
    case Architecture::MultiClassifier: {
      std::vector<std::size_t> sizes;
      for (std::size_t c = 0; c < n; ++c) {
        sizes.push_back(state_background ? 3 : 2);
        sizes.push_back(1);
      }
      return sizes;
    }
    case Architecture::Joint1: return {3 * n};
    case Architecture::Joint2: return {2 * n + (state_background ? 1 : 0), n + 1};
  }
  throw Error("unknown architecture");
}

/// Which adapter feeds head `h`.
inline std::size_t adapter_of_head(const ModelParams& p, std::size_t h) {
  return p.architecture == Architecture::Independent ? h / 2 : 0;
}

/// Visit every parameter array in declaration order: adapters (w, b), then
/// heads (hidden w, hidden b, output w, output b).
template <typename Params, typename Fn>
void for_each_block(Params& p, Fn&& fn) {
  for (auto& a : p.adapters) {
    fn(std::span(a.w.data()), false);
    fn(std::span(a.b), false);
  }
  for (auto& h : p.heads) {
    fn(std::span(h.hidden.w.data()), true);
    fn(std::span(h.hidden.b), true);
    fn(std::span(h.output.w.data()), true);
    fn(std::span(h.output.b), true);
  }
}

inline std::size_t num_parameters(const ModelParams& p) {
  std::size_t n = 0;
  for_each_block(p, [&](std::span<const double> s, bool) { n += s.size(); });
  return n;
}

namespace detail {

// Uniform in [0, 1) from the top 53 bits; stable across standard libraries.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline void init_dense(Dense& d, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d.in()));
  for (auto& w : d.w.data()) w = (2.0 * uniform01(rng) - 1.0) * bound;
  std::fill(d.b.begin(), d.b.end(), 0.0);
}

}  // namespace detail

/// Zero-valued parameters with the shape of the given architecture.
inline ModelParams zero_params(Architecture arch, std::size_t n, std::size_t d, std::size_t h,
                               ModelOptions options = {}) {
  if (n == 0 || d == 0 || h == 0) throw Error("model dimensions must be at least 1");
  if (arch == Architecture::Joint1) options.state_background = false;
  ModelParams p;
  p.architecture = arch;
  p.num_categories = n;
  p.dim = d;
  p.hidden = h;
  p.options = options;
  if (options.adapter) {
    const std::size_t count = arch == Architecture::Independent ? n : 1;
    p.adapters.assign(count, Dense(d, d));
  }
  for (std::size_t out : head_output_sizes(arch, n, options.state_background))
    p.heads.push_back(Mlp{Dense(h, d), Dense(out, h)});
  return p;
}

inline ModelParams zeros_like(const ModelParams& p) {
  return zero_params(p.architecture, p.num_categories, p.dim, p.hidden, p.options);
}

/// Uniform(+-1/sqrt(fan_in)) weights, zero biases, identity adapter.
inline ModelParams init_params(Architecture arch, std::size_t n, std::size_t d, std::size_t h,
                               std::uint64_t seed, ModelOptions options = {}) {
  ModelParams p = zero_params(arch, n, d, h, options);
  std::mt19937_64 rng(seed);
  for (auto& a : p.adapters)
    for (std::size_t i = 0; i < d; ++i) a.w(i, i) = 1.0;
  for (auto& head : p.heads) {
    detail::init_dense(head.hidden, rng);
    detail::init_dense(head.output, rng);
  }
  return p;
}

namespace detail {

inline void softmax_inplace(std::span<double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (auto& x : v) {
    x = std::exp(x - m);
    sum += x;
  }
  for (auto& x : v) x /= sum;
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Activations of one frame, kept for the backward pass.
struct FrameActivations {
  std::vector<std::vector<double>> adapted;  // per adapter (or the raw input)
  std::vector<std::vector<double>> hidden;   // post-ReLU, per head
  std::vector<std::vector<double>> logits;   // per head
};

inline FrameActivations forward_frame(const ModelParams& p, std::span<const double> x) {
  FrameActivations act;
  if (p.adapters.empty()) {
    act.adapted.emplace_back(x.begin(), x.end());
  } else {
    for (const auto& a : p.adapters) {
      std::vector<double> z(p.dim);
      a.apply(x, z);
      act.adapted.push_back(std::move(z));
    }
  }
  act.hidden.resize(p.heads.size());
  act.logits.resize(p.heads.size());
  for (std::size_t h = 0; h < p.heads.size(); ++h) {
    const auto& head = p.heads[h];
    const auto& z = act.adapted[p.adapters.empty() ? 0 : adapter_of_head(p, h)];
    auto& hid = act.hidden[h];
    hid.resize(head.hidden.out());
    head.hidden.apply(z, hid);
    for (auto& v : hid) v = std::max(v, 0.0);
    auto& lg = act.logits[h];
    lg.resize(head.output.out());
    head.output.apply(hid, lg);
  }
  return act;
}

/// Normalized outputs of every head (softmax, or sigmoid for I/II action heads).
inline std::vector<std::vector<double>> head_probabilities(const ModelParams& p,
                                                           const FrameActivations& act) {
  std::vector<std::vector<double>> probs = act.logits;
  for (std::size_t h = 0; h < probs.size(); ++h) {
    if (per_category_heads(p.architecture) && h % 2 == 1) {
      for (auto& v : probs[h]) v = sigmoid(v);
    } else {
      softmax_inplace(probs[h]);
    }
  }
  return probs;
}

inline void check_params(const ModelParams& p) {
  const auto sizes = head_output_sizes(p.architecture, p.num_categories,
                                       has_state_background(p));
  if (p.heads.size() != sizes.size()) throw Error("parameter head count mismatch");
  for (std::size_t h = 0; h < sizes.size(); ++h)
    if (p.heads[h].output.out() != sizes[h]) throw Error("parameter head size mismatch");
}

}  // namespace detail

/// Applies the model to every frame of a T x D matrix.
inline FrameScores forward(const ModelParams& p, const Matrix& frames) {
  if (frames.cols() != p.dim)
    throw Error("feature width " + std::to_string(frames.cols()) + " does not match model dim " +
                std::to_string(p.dim));
  detail::check_params(p);
  const std::size_t T = frames.rows();
  const std::size_t N = p.num_categories;
  const bool bg_state = has_state_background(p);

  FrameScores out;
  out.architecture = p.architecture;
  out.num_categories = N;
  switch (p.architecture) {
    case Architecture::Independent:
    case Architecture::MultiClassifier:
      out.state = Matrix(T, 2 * N + (bg_state ? N : 0));
      out.action = Matrix(T, N);
      break;
    case Architecture::Joint1:
      out.state = Matrix(T, 2 * N);
      out.action = Matrix(T, N);
      break;
    case Architecture::Joint2:
      out.state = Matrix(T, 2 * N + (bg_state ? 1 : 0));
      out.action = Matrix(T, N + 1);
      break;
  }

  for (std::size_t t = 0; t < T; ++t) {
    const auto probs = detail::head_probabilities(p, detail::forward_frame(p, frames.row(t)));
    switch (p.architecture) {
      case Architecture::Independent:
      case Architecture::MultiClassifier:
        for (std::size_t c = 0; c < N; ++c) {
          const auto& st = probs[2 * c];
          out.state(t, initial_state_index(c)) = st[0];
          out.state(t, end_state_index(c)) = st[1];
          if (bg_state) out.state(t, 2 * N + c) = st[2];
          out.action(t, action_index(c)) = probs[2 * c + 1][0];
        }
        break;
      case Architecture::Joint1:
        for (std::size_t i = 0; i < 2 * N; ++i) out.state(t, i) = probs[0][i];
        for (std::size_t c = 0; c < N; ++c) out.action(t, c) = probs[0][2 * N + c];
        break;
      case Architecture::Joint2:
        std::copy(probs[0].begin(), probs[0].end(), out.state.row(t).begin());
        std::copy(probs[1].begin(), probs[1].end(), out.action.row(t).begin());
        break;
    }
  }
  return out;
}

/// Where a pseudo label lands in the model's outputs.
struct LabelTarget {
  std::size_t head = 0;
  std::size_t output = 0;  // class index within the head (softmax) or 0 (sigmoid)
  bool sigmoid = false;
  double sigmoid_target = 0.0;
};

inline LabelTarget label_target(const ModelParams& p, LabelKind kind, std::size_t c) {
  const std::size_t N = p.num_categories;
  if (c >= N) throw Error("label category " + std::to_string(c) + " out of range");
  const bool bg_state = has_state_background(p);
  auto incompatible = [&]() {
    return Error("label kind " + std::string(label_kind_name(kind)) +
                 " is not representable by architecture " +
                 std::string(architecture_name(p.architecture)) +
                 (bg_state ? "" : " without a state background"));
  };
  switch (p.architecture) {
    case Architecture::Independent:
    case Architecture::MultiClassifier:
      switch (kind) {
        case LabelKind::S1: return {2 * c, 0, false, 0.0};
        case LabelKind::S2: return {2 * c, 1, false, 0.0};
        case LabelKind::BgState:
          if (!bg_state) throw incompatible();
          return {2 * c, 2, false, 0.0};
        case LabelKind::A: return {2 * c + 1, 0, true, 1.0};
        case LabelKind::BgAction: return {2 * c + 1, 0, true, 0.0};
      }
      break;
    case Architecture::Joint1:
      switch (kind) {
        case LabelKind::S1: return {0, initial_state_index(c), false, 0.0};
        case LabelKind::S2: return {0, end_state_index(c), false, 0.0};
        case LabelKind::A: return {0, 2 * N + c, false, 0.0};
        default: throw incompatible();
      }
    case Architecture::Joint2:
      switch (kind) {
        case LabelKind::S1: return {0, initial_state_index(c), false, 0.0};
        case LabelKind::S2: return {0, end_state_index(c), false, 0.0};
        case LabelKind::BgState:
          if (!bg_state) throw incompatible();
          return {0, state_background_index(N), false, 0.0};
        case LabelKind::A: return {1, action_index(c), false, 0.0};
        case LabelKind::BgAction: return {1, action_background_index(N), false, 0.0};
      }
      break;
  }
  throw incompatible();
}

inline bool label_supported(const ModelParams& p, LabelKind kind) {
  if (p.architecture == Architecture::Joint1)
    return kind == LabelKind::S1 || kind == LabelKind::S2 || kind == LabelKind::A;
  if (kind == LabelKind::BgState) return has_state_background(p);
  return true;
}

constexpr double kProbabilityFloor = 1e-12;

struct LossAndGradient {
  double loss = 0.0;
  ModelParams gradient;
};

/// Weighted cross entropy -sum w log h over the given labels of one video,
/// with exact gradients for every parameter. Only labeled frames are
/// evaluated; the video_id of each label is not inspected.
inline LossAndGradient backward(const ModelParams& p, const Matrix& frames,
                                std::span<const PseudoLabel> labels) {
  if (frames.cols() != p.dim) throw Error("feature width does not match model dim");
  detail::check_params(p);
  LossAndGradient result{0.0, zeros_like(p)};
  auto& grad = result.gradient;

  // Group by frame; std::map keeps frames in ascending order for a fixed
  // accumulation order.
  std::map<std::size_t, std::vector<const PseudoLabel*>> by_frame;
  for (const auto& l : labels) {
    if (l.frame >= frames.rows())
      throw Error("label frame " + std::to_string(l.frame) + " out of range");
    if (!(l.weight >= 0.0) || !std::isfinite(l.weight)) throw Error("label weight must be >= 0");
    label_target(p, l.kind, l.category);  // validates compatibility
    by_frame[l.frame].push_back(&l);
  }

  for (const auto& [t, frame_labels] : by_frame) {
    const auto x = frames.row(t);
    const auto act = detail::forward_frame(p, x);
    const auto probs = detail::head_probabilities(p, act);

    std::vector<std::vector<double>> dlogits(p.heads.size());
    for (const PseudoLabel* l : frame_labels) {
      const auto tgt = label_target(p, l->kind, l->category);
      auto& g = dlogits[tgt.head];
      if (g.empty()) g.assign(probs[tgt.head].size(), 0.0);
      const double w = l->weight;
      if (tgt.sigmoid) {
        const double s = probs[tgt.head][0];
        const double q = tgt.sigmoid_target > 0.5 ? s : 1.0 - s;
        if (q >= kProbabilityFloor) {
          result.loss -= w * std::log(q);
          g[0] += w * (s - tgt.sigmoid_target);
        } else {
          result.loss -= w * std::log(kProbabilityFloor);
        }
      } else {
        const auto& pr = probs[tgt.head];
        if (pr[tgt.output] >= kProbabilityFloor) {
          result.loss -= w * std::log(pr[tgt.output]);
          for (std::size_t k = 0; k < pr.size(); ++k)
            g[k] += w * (pr[k] - (k == tgt.output ? 1.0 : 0.0));
        } else {
          result.loss -= w * std::log(kProbabilityFloor);
        }
      }
    }

    std::vector<std::vector<double>> dadapted(act.adapted.size(),
                                              std::vector<double>(p.dim, 0.0));
    for (std::size_t h = 0; h < p.heads.size(); ++h) {
      const auto& g = dlogits[h];
      if (g.empty()) continue;
      const auto& head = p.heads[h];
      auto& gh = grad.heads[h];
      const auto& hid = act.hidden[h];
      std::vector<double> dhid(hid.size(), 0.0);
      for (std::size_t o = 0; o < g.size(); ++o) {
        if (g[o] == 0.0) continue;
        gh.output.b[o] += g[o];
        auto gw = gh.output.w.row(o);
        const auto w = head.output.w.row(o);
        for (std::size_t k = 0; k < hid.size(); ++k) {
          gw[k] += g[o] * hid[k];
          dhid[k] += g[o] * w[k];
        }
      }
      const std::size_t ai = p.adapters.empty() ? 0 : adapter_of_head(p, h);
      const auto& z = act.adapted[ai];
      auto& dz = dadapted[ai];
      for (std::size_t k = 0; k < hid.size(); ++k) {
        if (hid[k] <= 0.0) continue;  // ReLU gate
        const double d = dhid[k];
        gh.hidden.b[k] += d;
        auto gw = gh.hidden.w.row(k);
        const auto w = head.hidden.w.row(k);
        for (std::size_t i = 0; i < z.size(); ++i) {
          gw[i] += d * z[i];
          dz[i] += d * w[i];
        }
      }
    }
    for (std::size_t a = 0; a < p.adapters.size(); ++a) {
      auto& ga = grad.adapters[a];
      const auto& dz = dadapted[a];
      for (std::size_t o = 0; o < p.dim; ++o) {
        if (dz[o] == 0.0) continue;
        ga.b[o] += dz[o];
        auto gw = ga.w.row(o);
        for (std::size_t i = 0; i < p.dim; ++i) gw[i] += dz[o] * x[i];
      }
    }
  }
  return result;
}

/// Loss only; same value as backward(...).loss without the gradient work.
inline double loss_only(const ModelParams& p, const Matrix& frames,
                        std::span<const PseudoLabel> labels) {
  double loss = 0.0;
  for (const auto& l : labels) {
    const auto tgt = label_target(p, l.kind, l.category);
    const auto probs = detail::head_probabilities(p, detail::forward_frame(p, frames.row(l.frame)));
    double q = probs[tgt.head][tgt.output];
    if (tgt.sigmoid && tgt.sigmoid_target < 0.5) q = 1.0 - q;
    loss -= l.weight * std::log(std::max(q, kProbabilityFloor));
  }
  return loss;
}

/// Adapter output for each frame (the raw frame when the model has no adapter).
/// For variant I the adapter of `category` is used.
inline Matrix adapted_features(const ModelParams& p, const Matrix& frames,
                               std::size_t category = 0) {
  if (frames.cols() != p.dim) throw Error("feature width does not match model dim");
  if (p.adapters.empty()) return frames;
  const auto& a = p.adapters[p.adapters.size() == 1 ? 0 : category];
  Matrix out(frames.rows(), p.dim);
  for (std::size_t t = 0; t < frames.rows(); ++t) a.apply(frames.row(t), out.row(t));
  return out;
}

}  // namespace statechange

#endif  // STATECHANGE_MODEL_HPP
