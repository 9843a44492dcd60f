#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "chromalayer/manifold.hpp"
#include "chromalayer/solver.hpp"

#include "fixtures.hpp"
#include "oracles.hpp"

using namespace chromalayer;

namespace {

SparseRowMatrix random_w(std::size_t s, std::size_t k, std::mt19937_64& rng, std::vector<Rgb>& colors) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Feature> feats;
  for (std::size_t i = 0; i < s; ++i) {
    const Rgb c{u(rng), u(rng), u(rng)};
    colors.push_back(c);
    feats.push_back(make_feature(c, u(rng) * 9, u(rng) * 9, 0, 10, 10, 1));
  }
  return build_w(feats, colors, k);
}

SparseRowMatrix zero_rows(std::size_t s) {
  SparseRowMatrix w(s, s);
  for (std::size_t i = 0; i < s; ++i) w.append_empty_row();
  return w;
}

Eigen::VectorXd as_vector(const std::vector<double>& v) { return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()); }

// Segmentation of a w x 1 strip where every pixel is its own superpixel.
Segmentation strip(std::size_t w) {
  Segmentation seg;
  seg.width = w;
  seg.height = 1;
  seg.frames = 1;
  for (std::size_t i = 0; i < w; ++i) seg.labels.push_back(static_cast<std::uint32_t>(i));
  seg.superpixels.resize(w);
  return seg;
}

} // namespace

TEST(ConstraintSet, OverwritesPerSourceAndValidates) {
  ConstraintSet c;
  c.add(1, 0, 0.0, ConstraintSource::user);
  c.add(1, 0, 1.0, ConstraintSource::user);
  c.add(1, 0, 0.0, ConstraintSource::suppression);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c.entries()[0].target, 1.0);
  EXPECT_TRUE(c.contains(1, 0, ConstraintSource::suppression));
  EXPECT_FALSE(c.contains(1, 0, ConstraintSource::automatic));
  EXPECT_EQ(c.count(ConstraintSource::user), 1u);
  EXPECT_THROW(c.add(0, 0, 1.5, ConstraintSource::user), InvalidArgument);
  EXPECT_THROW(c.check_bounds(1, 1), InvalidArgument);
  EXPECT_NO_THROW(c.check_bounds(2, 1));
}

TEST(AutoConstraints, ExactMatchPinsIndicator) {
  const Palette p{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  const std::vector<Rgb> colors{{0, 1, 0}};
  const ConstraintSet c = auto_constraints(colors, p, 0.05);
  ASSERT_EQ(c.size(), 3u);
  for (const auto& e : c.entries()) {
    EXPECT_EQ(e.superpixel, 0u);
    EXPECT_EQ(e.source, ConstraintSource::automatic);
    EXPECT_EQ(e.target, e.layer == 1 ? 1.0 : 0.0);
  }
}

TEST(AutoConstraints, AmbiguousAndDistantAreFree) {
  const Palette close{{{0.5, 0.5, 0.5}, {0.52, 0.5, 0.5}}};
  EXPECT_TRUE(auto_constraints(std::vector<Rgb>{{0.51, 0.5, 0.5}}, close, 0.05).empty());
  const Palette p{{{1, 0, 0}, {0, 0, 1}}};
  EXPECT_TRUE(auto_constraints(std::vector<Rgb>{{0.5, 0.5, 0.5}, {0, 1, 0}}, p, 0.05).empty());
  EXPECT_THROW(auto_constraints(std::vector<Rgb>{}, p, 0.0), InvalidArgument);
}

TEST(MergeConstraints, UserShadowsWholeSuperpixel) {
  ConstraintSet user;
  user.add(2, 1, 0.7, ConstraintSource::user);
  ConstraintSet automatic;
  automatic.add(2, 0, 1.0, ConstraintSource::automatic);
  automatic.add(2, 1, 0.0, ConstraintSource::automatic);
  automatic.add(3, 0, 1.0, ConstraintSource::automatic);
  const ConstraintSet m = merge_constraints(user, automatic);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_TRUE(m.contains(2, 1, ConstraintSource::user));
  EXPECT_TRUE(m.contains(3, 0, ConstraintSource::automatic));
  EXPECT_FALSE(m.contains(2, 0, ConstraintSource::automatic));
}

TEST(Strokes, MapOntoSuperpixels) {
  Segmentation seg = strip(10);
  seg.labels[4] = 7;
  const std::vector<Stroke> one{{4, 0, 0, 2, 1.0}};
  const ConstraintSet c = constraints_from_strokes(one, seg, 3);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c.entries()[0], (Constraint{7, 2, 1.0, ConstraintSource::user}));

  const std::vector<Stroke> twice{{4, 0, 0, 2, 0.0}, {4, 0, 0, 2, 1.0}};
  const ConstraintSet last = constraints_from_strokes(twice, seg, 3);
  ASSERT_EQ(last.size(), 1u);
  EXPECT_EQ(last.entries()[0].target, 1.0);
}

TEST(Strokes, RejectOutOfRange) {
  const Segmentation seg = strip(10);
  EXPECT_THROW(constraints_from_strokes(std::vector<Stroke>{{10, 0, 0, 0, 1.0}}, seg, 3), InvalidArgument);
  EXPECT_THROW(constraints_from_strokes(std::vector<Stroke>{{-1, 0, 0, 0, 1.0}}, seg, 3), InvalidArgument);
  EXPECT_THROW(constraints_from_strokes(std::vector<Stroke>{{0, 1, 0, 0, 1.0}}, seg, 3), InvalidArgument);
  EXPECT_THROW(constraints_from_strokes(std::vector<Stroke>{{0, 0, 1, 0, 1.0}}, seg, 3), InvalidArgument);
  EXPECT_THROW(constraints_from_strokes(std::vector<Stroke>{{0, 0, 0, 3, 1.0}}, seg, 3), InvalidArgument);
  EXPECT_THROW(constraints_from_strokes(std::vector<Stroke>{{0, 0, 0, 0, 1.5}}, seg, 3), InvalidArgument);
}

TEST(Strokes, JsonRoundTripAndFile) {
  const std::vector<Stroke> strokes{{1, 0, 0, 2, 1.0}, {3, 0, 0, 0, 0.25}};
  const auto doc = strokes_to_json(strokes);
  const auto back = strokes_from_json(doc);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].x, 3);
  EXPECT_EQ(back[1].value, 0.25);
  EXPECT_THROW(strokes_from_json(nlohmann::json::parse(R"({"strokes":[{"x":1}]})")), FormatError);
  EXPECT_THROW(strokes_from_json(nlohmann::json::parse(R"([])")), FormatError);

  const auto dir = fixtures::temp_dir("strokes");
  std::ofstream(dir / "c.json") << doc.dump();
  const ConstraintSet c = parse_constraints(dir / "c.json", strip(5), 3);
  EXPECT_EQ(c.size(), 2u);
  std::ofstream(dir / "bad.json") << "{";
  EXPECT_THROW(parse_constraints(dir / "bad.json", strip(5), 3), FormatError);
  std::filesystem::remove_all(dir);
}

TEST(NormalSystem, ManifoldTermAlone) {
  std::mt19937_64 rng(1);
  std::vector<Rgb> colors;
  const SparseRowMatrix w = random_w(6, 3, rng, colors);
  SolverParams p;
  p.lambda_r = p.lambda_u = p.lambda_e = 0.0;
  p.lambda_m = 1.5;
  const Palette palette{{{0.3, 0.3, 0.3}}};
  const NormalSystem sys = assemble_normal_system(w, palette, colors, ConstraintSet{}, p);
  const Eigen::MatrixXd im = Eigen::MatrixXd::Identity(6, 6) - oracle::dense(w);
  EXPECT_LE((oracle::dense(sys.a) - 1.5 * im.transpose() * im).cwiseAbs().maxCoeff(), 1e-12);
  for (double b : sys.b) EXPECT_EQ(b, 0.0);
}

TEST(NormalSystem, UnityAloneSolvesToOne) {
  SolverParams p;
  p.lambda_m = p.lambda_r = 0.0;
  p.lambda_u = 1.0;
  const std::vector<Rgb> colors{{0.2, 0.2, 0.2}};
  const Palette palette{{{0.5, 0.5, 0.5}}};
  const SparseRowMatrix w = zero_rows(1);
  const NormalSystem sys = assemble_normal_system(w, palette, colors, ConstraintSet{}, p);
  EXPECT_DOUBLE_EQ(sys.a.at(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(sys.b[0], 1.0);
  const SolveResult r = solve_layers(w, palette, colors, ConstraintSet{}, p);
  EXPECT_NEAR(r.layers.values[0], 1.0, 1e-12);
}

TEST(NormalSystem, MatchesDenseTermByTermConstruction) {
  std::mt19937_64 rng(2);
  for (int inst = 0; inst < 10; ++inst) {
    std::vector<Rgb> colors;
    const std::size_t s = inst == 0 ? 2 : 2 + rng() % 9;
    const std::size_t n = inst == 0 ? 2 : 1 + rng() % 4;
    const SparseRowMatrix w = random_w(s, std::min<std::size_t>(s - 1, 3), rng, colors);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Palette palette;
    for (std::size_t j = 0; j < n; ++j) palette.colors.push_back({u(rng), u(rng), u(rng)});
    ConstraintSet c;
    c.add(0, 0, 1.0, ConstraintSource::user);
    c.add(static_cast<std::uint32_t>(s - 1), static_cast<std::uint32_t>(n - 1), 0.0, ConstraintSource::automatic);
    c.add(static_cast<std::uint32_t>(s - 1), 0, 0.0, ConstraintSource::suppression);
    SolverParams p;
    p.lambda_m = 0.7;
    p.lambda_n = 2.5;
    const NormalSystem sys = assemble_normal_system(w, palette, colors, c, p);
    const oracle::DenseSystem want = oracle::dense_system(oracle::dense(w), palette, colors, c, p);
    const Eigen::MatrixXd a = oracle::dense(sys.a);
    EXPECT_LE((a - want.a).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((as_vector(sys.b) - want.b).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((a - a.transpose()).cwiseAbs().maxCoeff(), 1e-10);

    // the matrix-free operator and right-hand side agree with the assembled system
    const NormalOperator op(w, palette, c, p);
    std::vector<double> x(s * n);
    for (double& v : x) v = u(rng);
    std::vector<double> y(s * n);
    op.apply(x, y);
    EXPECT_LE((as_vector(y) - a * as_vector(x)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((as_vector(normal_rhs(palette, colors, c, p)) - want.b).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(NormalSystem, DimensionMismatch) {
  const std::vector<Rgb> colors{{0, 0, 0}, {1, 1, 1}};
  const Palette palette{{{0.5, 0.5, 0.5}}};
  EXPECT_THROW(assemble_normal_system(zero_rows(3), palette, colors, ConstraintSet{}, SolverParams{}),
               InvalidArgument);
  ConstraintSet c;
  c.add(0, 1, 1.0, ConstraintSource::user);
  EXPECT_THROW(assemble_normal_system(zero_rows(2), palette, colors, c, SolverParams{}), InvalidArgument);
  EXPECT_THROW(assemble_normal_system(zero_rows(2), Palette{}, colors, ConstraintSet{}, SolverParams{}),
               InvalidArgument);
}

TEST(Energy, MatchesQuadraticForm) {
  std::mt19937_64 rng(3);
  std::vector<Rgb> colors;
  const SparseRowMatrix w = random_w(8, 4, rng, colors);
  const Palette palette{{{0.9, 0.1, 0.1}, {0.1, 0.8, 0.2}, {0.1, 0.2, 0.9}}};
  ConstraintSet c;
  c.add(3, 1, 1.0, ConstraintSource::user);
  c.add(5, 2, 0.0, ConstraintSource::suppression);
  const SolverParams p;
  const oracle::DenseSystem sys = oracle::dense_system(oracle::dense(w), palette, colors, c, p);
  std::uniform_real_distribution<double> u(-0.5, 1.5);
  std::vector<double> x(24);
  for (double& v : x) v = u(rng);
  const Eigen::VectorXd xv = as_vector(x);
  // Theta(x) = x'Ax - 2b'x + constant; the constant is Theta(0)
  const double zero = energy(std::vector<double>(24, 0.0), w, palette, colors, c, p);
  EXPECT_NEAR(energy(x, w, palette, colors, c, p), xv.dot(sys.a * xv) - 2.0 * sys.b.dot(xv) + zero, 1e-10);
}

TEST(ConjugateGradient, SolvesSpdSystem) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Random(12, 12);
  const Eigen::MatrixXd a = m * m.transpose() + 12.0 * Eigen::MatrixXd::Identity(12, 12);
  const Eigen::VectorXd bv = Eigen::VectorXd::LinSpaced(12, -1.0, 2.0);
  std::vector<double> b(bv.data(), bv.data() + 12);
  std::vector<double> x(12, 0.0);
  auto apply = [&](std::span<const double> in, std::span<double> out) {
    Eigen::Map<Eigen::VectorXd>(out.data(), 12) = a * Eigen::Map<const Eigen::VectorXd>(in.data(), 12);
  };
  auto identity = [](std::span<const double> r, std::span<double> z) { std::copy(r.begin(), r.end(), z.begin()); };
  const CgResult r = conjugate_gradient(apply, identity, b, x, 1e-12, 100);
  EXPECT_TRUE(r.converged);
  EXPECT_LE((as_vector(x) - a.llt().solve(bv)).cwiseAbs().maxCoeff(), 1e-10);
  std::vector<double> x0(12, 0.0);
  EXPECT_FALSE(conjugate_gradient(apply, identity, b, x0, 1e-12, 1).converged);
}

TEST(SolveLayers, MatchesDenseReplayOnSmallToys) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t with_suppression = 0;
  for (int inst = 0; inst < 30; ++inst) {
    std::vector<Rgb> colors;
    const std::size_t s = inst < 10 ? 3 : 3 + rng() % 10;
    const std::size_t n = inst < 10 ? 2 : 1 + rng() % 4;
    const SparseRowMatrix w = random_w(s, std::min<std::size_t>(s - 1, 4), rng, colors);
    Palette palette;
    for (std::size_t j = 0; j < n; ++j) palette.colors.push_back({u(rng), u(rng), u(rng)});
    const SolverParams p;
    const SolveResult r = solve_layers(w, palette, colors, ConstraintSet{}, p);
    ASSERT_EQ(r.iterations.size(), 4u);
    std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> schedule;
    for (const auto& it : r.iterations) schedule.push_back(it.added);
    const auto replay = oracle::replay_suppression(oracle::dense(w), palette, colors, ConstraintSet{}, p, schedule);
    EXPECT_LE((as_vector(r.layers.values) - replay.back()).cwiseAbs().maxCoeff(), 1e-6) << "toy " << inst;
    with_suppression += r.constraints.count(ConstraintSource::suppression) != 0 ? 1 : 0;
  }
  EXPECT_GT(with_suppression, 0u);
}

TEST(SolveLayers, SuppressionIsPersistentAndMonotone) {
  std::mt19937_64 rng(5);
  std::vector<Rgb> colors;
  const SparseRowMatrix w = random_w(20, 5, rng, colors);
  const Palette palette{{{0.6, 0.3, 0.3}, {0.3, 0.6, 0.3}, {0.3, 0.3, 0.6}}};
  const SolveResult r = solve_layers(w, palette, colors, ConstraintSet{}, SolverParams{});
  std::size_t total = 0;
  for (std::size_t k = 0; k < r.iterations.size(); ++k) {
    total += r.iterations[k].added.size();
    if (k + 1 == r.iterations.size()) EXPECT_TRUE(r.iterations[k].added.empty());
  }
  EXPECT_GT(total, 0u);
  EXPECT_EQ(r.constraints.count(ConstraintSource::suppression), total);
  EXPECT_LE(r.iterations.back().negative_count, r.iterations.front().negative_count);
}

TEST(SolveLayers, FixedPointWithoutNegatives) {
  const Palette palette{{{0.9, 0.1, 0.1}, {0.1, 0.9, 0.1}, {0.1, 0.1, 0.9}}};
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.2, 1.0);
  std::vector<std::vector<double>> weights;
  for (int i = 0; i < 12; ++i) {
    std::vector<double> w{u(rng), u(rng), u(rng)};
    const double sum = w[0] + w[1] + w[2];
    for (double& x : w) x /= sum;
    weights.push_back(w);
  }
  const std::vector<Rgb> colors = fixtures::mix(palette, weights);
  std::vector<Feature> feats;
  for (std::size_t i = 0; i < colors.size(); ++i) feats.push_back(make_feature(colors[i], static_cast<double>(i), 0, 0, 12, 1, 1));
  const SparseRowMatrix w = build_w(feats, colors, 4);
  SolverParams one;
  one.suppression_iters = 1;
  const SolveResult first = solve_layers(w, palette, colors, ConstraintSet{}, one);
  ASSERT_EQ(first.iterations[0].negative_count, 0u);
  const SolveResult all = solve_layers(w, palette, colors, ConstraintSet{}, SolverParams{});
  for (std::size_t i = 0; i < first.layers.values.size(); ++i) {
    EXPECT_NEAR(all.layers.values[i], first.layers.values[i], 1e-9);
  }
  EXPECT_EQ(all.constraints.count(ConstraintSource::suppression), 0u);
}

TEST(SolveLayers, NonConvergenceIsFlaggedNotThrown) {
  std::mt19937_64 rng(7);
  std::vector<Rgb> colors;
  const SparseRowMatrix w = random_w(15, 5, rng, colors);
  const Palette palette{{{0.6, 0.3, 0.3}, {0.3, 0.6, 0.3}}};
  SolverParams p;
  p.cg_max_iters = 1;
  const SolveResult r = solve_layers(w, palette, colors, ConstraintSet{}, p);
  EXPECT_FALSE(r.converged);
  EXPECT_GT(r.relative_residual, p.cg_tolerance);
  EXPECT_EQ(r.layers.values.size(), 30u);
}

TEST(SolverParams, Validation) {
  SolverParams p;
  p.lambda_m = -1.0;
  EXPECT_THROW(p.validate(), InvalidArgument);
  p = SolverParams{};
  p.suppression_iters = 0;
  EXPECT_THROW(p.validate(), InvalidArgument);
  p = SolverParams{};
  p.lambda_u = std::numeric_limits<double>::infinity();
  EXPECT_THROW(p.validate(), InvalidArgument);
}
