// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <random>

#include "oracles.hpp"
#include "statechange/model.hpp"

using namespace statechange;

namespace {

constexpr Architecture kAll[] = {Architecture::Independent, Architecture::MultiClassifier,
                                 Architecture::Joint1, Architecture::Joint2};

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) e(r, c) = m(r, c);
  return e;
}

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Whole-video forward in matrix form: Z = X A^T + b, Hd = relu(Z W1^T + b1),
// L = Hd W2^T + b2, then row softmax / sigmoid.
std::vector<Eigen::MatrixXd> reference_heads(const ModelParams& p, const Matrix& frames) {
  const Eigen::MatrixXd X = to_eigen(frames);
  std::vector<Eigen::MatrixXd> out;
  for (std::size_t h = 0; h < p.heads.size(); ++h) {
    Eigen::MatrixXd Z = X;
    if (!p.adapters.empty()) {
      const auto& a = p.adapters[p.architecture == Architecture::Independent ? h / 2 : 0];
      Z = (X * to_eigen(a.w).transpose()).rowwise() + to_eigen(a.b).transpose();
    }
    const auto& head = p.heads[h];
    Eigen::MatrixXd Hd =
        ((Z * to_eigen(head.hidden.w).transpose()).rowwise() + to_eigen(head.hidden.b).transpose())
            .cwiseMax(0.0);
    Eigen::MatrixXd L =
        (Hd * to_eigen(head.output.w).transpose()).rowwise() + to_eigen(head.output.b).transpose();
    const bool sig = (p.architecture == Architecture::Independent ||
                      p.architecture == Architecture::MultiClassifier) &&
                     h % 2 == 1;
    if (sig) {
      L = (1.0 + (-L.array()).exp()).inverse().matrix();
    } else {
      for (Eigen::Index r = 0; r < L.rows(); ++r) {
        Eigen::VectorXd e = (L.row(r).array() - L.row(r).maxCoeff()).exp();
        L.row(r) = e / e.sum();
      }
    }
    out.push_back(L);
  }
  return out;
}

Matrix random_frames(std::mt19937_64& rng, std::size_t T, std::size_t D) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(T, D);
  for (auto& x : m.data()) x = g(rng);
  return m;
}

}  // namespace

TEST(InitParams, DeterministicPerSeed) {
  for (auto arch : kAll) {
    EXPECT_EQ(init_params(arch, 3, 5, 7, 42), init_params(arch, 3, 5, 7, 42));
    EXPECT_NE(init_params(arch, 3, 5, 7, 42), init_params(arch, 3, 5, 7, 43));
  }
}

TEST(InitParams, AdapterStartsAsIdentity) {
  std::mt19937_64 rng(1);
  const auto p = init_params(Architecture::Joint2, 2, 6, 8, 9);
  const auto x = random_frames(rng, 4, 6);
  EXPECT_EQ(adapted_features(p, x), x);
}

TEST(InitParams, WeightsBoundedByFanIn) {
  const auto p = init_params(Architecture::MultiClassifier, 2, 16, 9, 3);
  for (const auto& h : p.heads) {
    for (double w : h.hidden.w.data()) EXPECT_LE(std::abs(w), 1.0 / 4.0);
    for (double w : h.output.w.data()) EXPECT_LE(std::abs(w), 1.0 / 3.0);
    for (double b : h.hidden.b) EXPECT_EQ(b, 0.0);
  }
}

TEST(InitParams, RejectsZeroDimensions) {
  EXPECT_THROW(init_params(Architecture::Joint2, 0, 3, 3, 1), Error);
  EXPECT_THROW(init_params(Architecture::Joint2, 3, 0, 3, 1), Error);
  EXPECT_THROW(init_params(Architecture::Joint2, 3, 3, 0, 1), Error);
}

TEST(HeadSizes, PerArchitecture) {
  const auto p = init_params(Architecture::Joint2, 5, 4, 4, 1);
  EXPECT_EQ(p.heads[0].output.out(), 11u);
  EXPECT_EQ(p.heads[1].output.out(), 6u);
  const auto q = init_params(Architecture::Joint2, 5, 4, 4, 1, ModelOptions{false, true});
  EXPECT_EQ(q.heads[0].output.out(), 10u);
  EXPECT_EQ(head_output_sizes(Architecture::Joint1, 5, true), std::vector<std::size_t>{15});
  EXPECT_EQ(head_output_sizes(Architecture::MultiClassifier, 2, true),
            (std::vector<std::size_t>{3, 1, 3, 1}));
  EXPECT_EQ(head_output_sizes(Architecture::Independent, 2, false),
            (std::vector<std::size_t>{2, 1, 2, 1}));
  EXPECT_EQ(init_params(Architecture::Independent, 3, 4, 4, 1).adapters.size(), 3u);
}

TEST(Forward, RowsAreDistributions) {
  std::mt19937_64 rng(2);
  for (auto arch : kAll) {
    const auto p = init_params(arch, 3, 5, 6, 7);
    const auto s = forward(p, random_frames(rng, 9, 5));
    ASSERT_TRUE(s.state.all_finite());
    for (double v : s.state.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    for (double v : s.action.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    for (std::size_t t = 0; t < 9; ++t) {
      if (arch == Architecture::Joint2) {
        double ss = 0, sa = 0;
        for (double v : s.state.row(t)) ss += v;
        for (double v : s.action.row(t)) sa += v;
        EXPECT_NEAR(ss, 1.0, 1e-6);
        EXPECT_NEAR(sa, 1.0, 1e-6);
      } else if (arch == Architecture::Joint1) {
        double sum = 0;
        for (double v : s.state.row(t)) sum += v;
        for (double v : s.action.row(t)) sum += v;
        EXPECT_NEAR(sum, 1.0, 1e-6);
      } else {
        for (std::size_t c = 0; c < 3; ++c)
          EXPECT_NEAR(s.s1(t, c) + s.s2(t, c) + s.state(t, 6 + c), 1.0, 1e-6);
      }
    }
  }
}

TEST(Forward, ZeroOutputWeightsGiveUniform) {
  std::mt19937_64 rng(4);
  for (bool bg : {false, true}) {
    auto p = init_params(Architecture::MultiClassifier, 2, 3, 4, 5, ModelOptions{bg, true});
    for (auto& h : p.heads) {
      h.output.w.fill(0.0);
      std::fill(h.output.b.begin(), h.output.b.end(), 0.0);
    }
    const auto s = forward(p, random_frames(rng, 4, 3));
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t c = 0; c < 2; ++c) {
        EXPECT_DOUBLE_EQ(s.s1(t, c), bg ? 1.0 / 3.0 : 0.5);
        EXPECT_DOUBLE_EQ(s.act(t, c), 0.5);
      }
  }
}

TEST(Forward, MatchesMatrixFormReference) {
  std::mt19937_64 rng(6);
  for (auto arch : kAll) {
    for (int rep = 0; rep < 5; ++rep) {
      auto p = init_params(arch, 2 + rep % 2, 4, 5, rng());
      for_each_block(p, [&](std::span<double> s, bool) {
        for (auto& x : s) x += 0.1 * std::normal_distribution<double>()(rng);
      });
      const auto frames = random_frames(rng, 7, 4);
      const auto s = forward(p, frames);
      const auto ref = reference_heads(p, frames);
      const std::size_t N = p.num_categories;
      for (std::size_t t = 0; t < 7; ++t) {
        for (std::size_t c = 0; c < N; ++c) {
          double s1, s2, a;
          switch (arch) {
            case Architecture::Independent:
            case Architecture::MultiClassifier:
              s1 = ref[2 * c](t, 0);
              s2 = ref[2 * c](t, 1);
              a = ref[2 * c + 1](t, 0);
              break;
            case Architecture::Joint1:
              s1 = ref[0](t, 2 * c);
              s2 = ref[0](t, 2 * c + 1);
              a = ref[0](t, 2 * N + c);
              break;
            default:
              s1 = ref[0](t, 2 * c);
              s2 = ref[0](t, 2 * c + 1);
              a = ref[1](t, c);
          }
          EXPECT_NEAR(s.s1(t, c), s1, 1e-12);
          EXPECT_NEAR(s.s2(t, c), s2, 1e-12);
          EXPECT_NEAR(s.act(t, c), a, 1e-12);
        }
      }
    }
  }
}

TEST(Forward, SoftmaxShiftInvariance) {
  std::mt19937_64 rng(8);
  auto p = init_params(Architecture::Joint2, 3, 4, 5, 1);
  const auto frames = random_frames(rng, 6, 4);
  const auto before = forward(p, frames);
  for (auto& b : p.heads[0].output.b) b += 3.75;  // same constant on every state logit
  const auto after = forward(p, frames);
  for (std::size_t i = 0; i < before.state.size(); ++i)
    EXPECT_NEAR(before.state.data()[i], after.state.data()[i], 1e-9);
}

TEST(Forward, DimensionMismatch) {
  const auto p = init_params(Architecture::Joint2, 2, 4, 4, 1);
  EXPECT_THROW(forward(p, Matrix(5, 3)), Error);
}

TEST(Backward, CertainPredictionHasZeroLoss) {
  auto p = init_params(Architecture::Joint2, 2, 3, 4, 1);
  // Make class S1 of category 0 overwhelmingly likely regardless of input.
  for (auto& h : p.heads) h.output.w.fill(0.0);
  p.heads[0].output.b.assign(p.heads[0].output.b.size(), -1e3);
  p.heads[0].output.b[0] = 1e3;
  const Matrix frames(3, 3, 0.2);
  const std::vector<PseudoLabel> labels{{"v", 1, 0, LabelKind::S1, 1.0, LabelRule::A, 0}};
  const auto r = backward(p, frames, labels);
  EXPECT_EQ(r.loss, 0.0);
  for (double g : r.gradient.heads[0].output.b) EXPECT_EQ(g, 0.0);
}

TEST(Backward, HalfProbabilityGivesLn2) {
  auto p = init_params(Architecture::MultiClassifier, 1, 3, 4, 1, ModelOptions{false, true});
  for (auto& h : p.heads) {
    h.output.w.fill(0.0);
    std::fill(h.output.b.begin(), h.output.b.end(), 0.0);
  }
  const Matrix frames(3, 3, 0.7);
  for (auto kind : {LabelKind::S1, LabelKind::S2, LabelKind::A, LabelKind::BgAction}) {
    const std::vector<PseudoLabel> labels{{"v", 2, 0, kind, 1.0, LabelRule::A, 0}};
    EXPECT_NEAR(backward(p, frames, labels).loss, 0.693147180559945, 1e-12);
  }
}

TEST(Backward, LossMatchesLossOnlyAndIsNonnegative) {
  std::mt19937_64 rng(10);
  for (auto arch : kAll) {
    for (int rep = 0; rep < 10; ++rep) {
      for (auto kind : oracle::kinds_for(init_params(arch, 1, 2, 2, 1))) {
        const auto gc = oracle::random_gradient_case(rng, arch, kind);
        const double l = backward(gc.params, gc.frames, gc.labels).loss;
        EXPECT_GE(l, 0.0);
        EXPECT_NEAR(l, loss_only(gc.params, gc.frames, gc.labels), 1e-10);
      }
    }
  }
}

TEST(Backward, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  for (auto arch : kAll) {
    const auto kinds = oracle::kinds_for(init_params(arch, 1, 2, 2, 1));
    for (auto kind : kinds) {
      for (int rep = 0; rep < 10; ++rep) {
        const auto gc = oracle::random_gradient_case(rng, arch, kind);
        const auto analytic = oracle::flatten(backward(gc.params, gc.frames, gc.labels).gradient);
        const auto numeric = oracle::numeric_gradient(gc.params, gc.frames, gc.labels);
        EXPECT_LT(oracle::max_relative_error(analytic, numeric), 1e-4)
            << architecture_name(arch) << " " << label_kind_name(kind);
      }
    }
  }
}

TEST(Backward, MixedKindsGradientCheck) {
  std::mt19937_64 rng(13);
  for (auto arch : kAll) {
    auto gc = oracle::random_gradient_case(rng, arch, LabelKind::S1);
    const auto kinds = oracle::kinds_for(gc.params);
    for (std::size_t i = 0; i < gc.labels.size(); ++i) gc.labels[i].kind = kinds[i % kinds.size()];
    // Second label on each frame for the other head.
    const std::size_t n = gc.labels.size();
    for (std::size_t i = 0; i < n; ++i) {
      auto l = gc.labels[i];
      l.kind = is_state_kind(l.kind) ? LabelKind::A : LabelKind::S2;
      gc.labels.push_back(l);
    }
    const auto analytic = oracle::flatten(backward(gc.params, gc.frames, gc.labels).gradient);
    const auto numeric = oracle::numeric_gradient(gc.params, gc.frames, gc.labels);
    EXPECT_LT(oracle::max_relative_error(analytic, numeric), 1e-4) << architecture_name(arch);
  }
}

TEST(Backward, UnlabeledFramesDoNotMatter) {
  std::mt19937_64 rng(14);
  for (auto arch : kAll) {
    auto gc = oracle::random_gradient_case(rng, arch, LabelKind::S2);
    // Label only the first frame, then scramble the others.
    gc.labels.resize(1);
    gc.labels[0].frame = 0;
    const auto before = backward(gc.params, gc.frames, gc.labels);
    Matrix other = gc.frames;
    for (std::size_t t = 1; t < other.rows(); ++t)
      for (auto& x : other.row(t)) x += 5.0;
    const auto after = backward(gc.params, other, gc.labels);
    EXPECT_EQ(before.loss, after.loss);
    EXPECT_EQ(before.gradient, after.gradient);
  }
}

TEST(Backward, IncompatibleKindsRejected) {
  const Matrix frames(4, 3, 0.1);
  const auto j1 = init_params(Architecture::Joint1, 2, 3, 4, 1);
  EXPECT_THROW(backward(j1, frames, std::vector<PseudoLabel>{{"v", 0, 0, LabelKind::BgAction, 1,
                                                              LabelRule::B, 0}}),
               Error);
  const auto nobg = init_params(Architecture::Joint2, 2, 3, 4, 1, ModelOptions{false, true});
  EXPECT_THROW(backward(nobg, frames, std::vector<PseudoLabel>{{"v", 0, 0, LabelKind::BgState, 1,
                                                                LabelRule::D, 0}}),
               Error);
  const auto ok = init_params(Architecture::Joint2, 2, 3, 4, 1);
  EXPECT_THROW(backward(ok, frames, std::vector<PseudoLabel>{{"v", 4, 0, LabelKind::S1, 1,
                                                              LabelRule::A, 0}}),
               Error);
}

TEST(Backward, IndependentCategoriesDoNotShareGradients) {
  std::mt19937_64 rng(15);
  const auto p = init_params(Architecture::Independent, 3, 4, 5, 2);
  const auto frames = random_frames(rng, 5, 4);
  const std::vector<PseudoLabel> labels{{"v", 1, 1, LabelKind::S1, 1, LabelRule::A, 0},
                                        {"v", 3, 1, LabelKind::A, 1, LabelRule::A, 0}};
  const auto g = backward(p, frames, labels).gradient;
  const auto zero = zeros_like(p);
  for (std::size_t c : {0u, 2u}) {
    EXPECT_EQ(g.adapters[c], zero.adapters[c]);
    EXPECT_EQ(g.heads[2 * c], zero.heads[2 * c]);
    EXPECT_EQ(g.heads[2 * c + 1], zero.heads[2 * c + 1]);
  }
  EXPECT_NE(g.adapters[1], zero.adapters[1]);
}
