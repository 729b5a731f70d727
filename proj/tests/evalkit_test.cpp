#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/QR>

#include "autoregembed/corpus/generator.hpp"
#include "autoregembed/evalkit/sts.hpp"

using namespace are;

namespace {

Vector random_vector(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vector v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

// Random orthogonal matrix from the QR factorization of a Gaussian matrix.
Eigen::MatrixXd random_orthogonal(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n * n; ++i) a.data()[i] = g(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  return qr.householderQ();
}

Vector rotate(const Eigen::MatrixXd& q, const Vector& v) {
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  Eigen::VectorXd y = q * x;
  return Vector(y.data(), y.data() + y.size());
}

LmConfig encoder_config() {
  LmConfig c;
  c.vocab_size = 38;
  c.dim = 32;
  c.n_layers = 2;
  c.n_heads = 4;
  c.max_seq = 24;
  c.seed = 4;
  return c;
}

}  // namespace

TEST(Cosine, ClosedForms) {
  const Vector v = {1, 2, 3}, minus = {-1, -2, -3};
  EXPECT_NEAR(cosine(v, v), 1.0, 1e-15);
  EXPECT_NEAR(cosine(v, minus), -1.0, 1e-15);
  EXPECT_NEAR(cosine(Vector{1, 0}, Vector{0, 1}), 0.0, 1e-15);
  EXPECT_THROW(cosine(Vector{0, 0}, Vector{1, 0}), NumericError);
  EXPECT_THROW(cosine(Vector{1}, Vector{1, 0}), DimensionError);
}

TEST(Cosine, StaysInRange) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double c = cosine(random_vector(rng, 5), random_vector(rng, 5));
    EXPECT_GE(c, -1.0);
    EXPECT_LE(c, 1.0);
  }
}

TEST(Spearman, ClosedForms) {
  const Vector a = {1, 2, 3, 4};
  EXPECT_NEAR(spearman(a, a), 1.0, 1e-15);
  EXPECT_NEAR(spearman(a, Vector{4, 3, 2, 1}), -1.0, 1e-15);
  EXPECT_NEAR(spearman(a, Vector{1, 3, 2, 4}), 0.8, 1e-12);
}

TEST(Spearman, TiesUseAverageRanks) {
  EXPECT_EQ(average_ranks(Vector{10, 20, 20, 30}), (Vector{1, 2.5, 2.5, 4}));
  // Pearson of ranks [1,2.5,2.5,4] and [1,2,3,4].
  EXPECT_NEAR(spearman(Vector{10, 20, 20, 30}, Vector{1, 2, 3, 4}), 0.9486832980505138, 1e-12);
}

TEST(Spearman, InvariantUnderMonotoneTransforms) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    Vector p = random_vector(rng, 30), g = random_vector(rng, 30);
    Vector pt = p, gt = g;
    for (auto& x : pt) x = std::exp(x) * 3.0 + 1.0;
    for (auto& x : gt) x = x * x * x;
    EXPECT_NEAR(spearman(p, g), spearman(pt, gt), 1e-12);
  }
}

TEST(Spearman, ErrorPaths) {
  EXPECT_THROW(spearman(Vector{1, 2}, Vector{1, 2, 3}), DimensionError);
  EXPECT_THROW(spearman(Vector{1}, Vector{1}), ArgumentError);
  EXPECT_THROW(spearman(Vector{1, 1, 1}, Vector{1, 2, 3}), NumericError);
}

TEST(Alignment, ClosedForms) {
  const std::vector<Vector> x = {{0, 0}, {0, 0}}, y = {{1, 0}, {0, 2}};
  EXPECT_NEAR(alignment_metric(x, y, 2.0), 2.5, 1e-15);
  EXPECT_NEAR(alignment_metric(std::vector<Vector>{{0, 0}}, std::vector<Vector>{{0, 1}}, 1.0), 1.0, 1e-15);
  EXPECT_EQ(alignment_metric(y, y, 2.0), 0.0);
  EXPECT_THROW(alignment_metric(x, y, 0.0), ArgumentError);
}

TEST(Uniformity, ClosedForms) {
  const std::vector<Vector> same = {{1, 2}, {1, 2}, {1, 2}};
  EXPECT_EQ(uniformity_metric(same, 2.0), 0.0);
  EXPECT_NEAR(uniformity_metric(std::vector<Vector>{{0, 0}, {1, 0}}, 2.0), -2.0, 1e-15);
  EXPECT_THROW(uniformity_metric(std::vector<Vector>{{0, 0}}, 2.0), ArgumentError);
}

TEST(Metrics, InvariantUnderRotation) {
  std::mt19937_64 rng(3);
  std::vector<Vector> pts, xs, ys;
  for (int i = 0; i < 20; ++i) pts.push_back(random_vector(rng, 6));
  for (int i = 0; i < 10; ++i) {
    xs.push_back(random_vector(rng, 6));
    ys.push_back(random_vector(rng, 6));
  }
  const double u = uniformity_metric(pts, 2.0);
  const double a = alignment_metric(xs, ys, 2.0);
  for (int trial = 0; trial < 10; ++trial) {
    auto q = random_orthogonal(rng, 6);
    std::vector<Vector> rp, rx, ry;
    for (const auto& p : pts) rp.push_back(rotate(q, p));
    for (const auto& p : xs) rx.push_back(rotate(q, p));
    for (const auto& p : ys) ry.push_back(rotate(q, p));
    EXPECT_NEAR(uniformity_metric(rp, 2.0), u, 1e-9);
    EXPECT_NEAR(alignment_metric(rx, ry, 2.0), a, 1e-9);
  }
}

TEST(ScorePairs, SelfConsistentGoldGivesPerfectRank) {
  std::mt19937_64 rng(4);
  Eigen::MatrixXd map(8, 5);
  for (int i = 0; i < map.size(); ++i) map.data()[i] = std::normal_distribution<double>(0, 1)(rng);
  std::vector<Vector> left, right;
  Vector gold;
  for (int i = 0; i < 50; ++i) {
    Vector a = random_vector(rng, 5), b = random_vector(rng, 5);
    Eigen::VectorXd ea = map * Eigen::Map<Eigen::VectorXd>(a.data(), 5);
    Eigen::VectorXd eb = map * Eigen::Map<Eigen::VectorXd>(b.data(), 5);
    left.emplace_back(ea.data(), ea.data() + 8);
    right.emplace_back(eb.data(), eb.data() + 8);
    gold.push_back(cosine(left.back(), right.back()));
  }
  auto rep = score_pairs(left, right, gold, Pooling::mean_compressed);
  EXPECT_NEAR(rep.spearman, 1.0, 1e-12);
  EXPECT_EQ(rep.n_pairs, 50u);

  // Ranking is unchanged by positive rescaling of every embedding.
  for (auto& v : left)
    for (auto& x : v) x *= 7.5;
  EXPECT_NEAR(score_pairs(left, right, gold, Pooling::mean_compressed).spearman, 1.0, 1e-12);
}

TEST(ScorePairs, ShuffledGoldIsNearZero) {
  std::mt19937_64 rng(5);
  std::vector<Vector> left, right;
  Vector gold;
  for (int i = 0; i < 200; ++i) {
    left.push_back(random_vector(rng, 8));
    right.push_back(random_vector(rng, 8));
    gold.push_back(cosine(left.back(), right.back()));
  }
  std::shuffle(gold.begin(), gold.end(), rng);
  EXPECT_LT(std::abs(score_pairs(left, right, gold, Pooling::mean_compressed).spearman), 0.3);
}

TEST(Pooling, NamesRoundtrip) {
  for (Pooling p : {Pooling::mean_compressed, Pooling::last_compressed, Pooling::concat_compressed, Pooling::last_token,
                    Pooling::mean_tokens}) {
    EXPECT_EQ(parse_pooling(to_string(p)), p);
  }
  EXPECT_THROW(parse_pooling("max"), ArgumentError);
}

TEST(Pooling, MeanOfCompressedRows) {
  // With the final LayerNorm gain zeroed, every hidden row equals the bias.
  LmModel<double> enc(encoder_config());
  auto& params = enc.named_parameters();
  auto& gain = params[params.size() - 3].tensor.mutable_value();
  auto& bias = params[params.size() - 2].tensor.mutable_value();
  ASSERT_EQ(params[params.size() - 3].name, "ln_f.g");
  gain.setZero();
  bias.row(0).setLinSpaced(32, -1.0, 1.0);
  const std::vector<int> q = {6, 7, 2}, t = {5};
  auto v = embed(enc, q, t).vector;
  ASSERT_EQ(v.size(), 32u);
  for (int i = 0; i < 32; ++i) EXPECT_NEAR(v[static_cast<std::size_t>(i)], bias(0, i), 1e-15);
}

TEST(Pooling, TwoRowExample) {
  auto m = Tensor<double>::from_rows(2, 2, {1, 0, 0, 1});
  auto p = mean_rows(m);
  EXPECT_EQ(p.value()(0, 0), 0.5);
  EXPECT_EQ(p.value()(0, 1), 0.5);
}

TEST(Pooling, WidthsAndDeterminism) {
  LmModel<float> enc(encoder_config());
  const std::vector<int> q = {6, 7, 2}, t = {5};
  EXPECT_EQ(embed(enc, q, t, Pooling::mean_compressed).vector.size(), 32u);
  EXPECT_EQ(embed(enc, q, t, Pooling::last_compressed).vector.size(), 32u);
  EXPECT_EQ(embed(enc, q, t, Pooling::concat_compressed).vector.size(), 5u * 32u);
  EXPECT_EQ(embed(enc, q, t, Pooling::last_token).vector.size(), 32u);
  EXPECT_EQ(embed(enc, q, t, Pooling::mean_tokens).vector.size(), 32u);
  EXPECT_EQ(embed(enc, q, t).vector, embed(enc, q, t).vector);
  EXPECT_EQ(embed(enc, q, t, Pooling::last_token).pooling, Pooling::last_token);
}

TEST(StsEval, ReportIsFiniteOnRandomEncoder) {
  WorldSpec w;
  w.seed = 2;
  auto corpus = generate(w, 1, 60);
  LmModel<float> enc(encoder_config());
  auto rep = sts_eval(enc, std::span<const TripletRecord>(corpus.eval), Pooling::last_compressed);
  EXPECT_TRUE(std::isfinite(rep.spearman));
  EXPECT_TRUE(std::isfinite(rep.alignment));
  EXPECT_TRUE(std::isfinite(rep.uniformity));
  EXPECT_EQ(rep.n_pairs, 60u);
  auto j = rep.to_json();
  for (const char* key : {"spearman", "alignment", "uniformity", "n_pairs", "pooling"}) EXPECT_TRUE(j.contains(key));
  EXPECT_EQ(j["pooling"], "last_compressed");
}

TEST(StsEval, GoldFromTheEncoderItselfGivesRhoOne) {
  WorldSpec w;
  w.seed = 3;
  auto corpus = generate(w, 1, 40);
  LmModel<double> enc(encoder_config());
  for (auto& r : corpus.eval) {
    r.gold = cosine(embed(enc, r.anchor, r.instr_self).vector, embed(enc, r.positive, r.instr_self).vector);
  }
  EXPECT_NEAR(sts_eval(enc, std::span<const TripletRecord>(corpus.eval)).spearman, 1.0, 1e-12);
}

TEST(StsEval, NeedsGold) {
  WorldSpec w;
  auto corpus = generate(w, 3, 0);
  LmModel<float> enc(encoder_config());
  EXPECT_THROW(sts_eval(enc, std::span<const TripletRecord>(corpus.train)), ArgumentError);
}
