#include <gtest/gtest.h>

#include <cmath>

#include "checks.hpp"
#include "mjplab/metrics.hpp"
#include "mjplab/pca.hpp"
#include "oracles.hpp"

using namespace mjplab;

namespace {

Tensor random_image(std::size_t h, std::size_t w, std::size_t c, Rng& rng) {
  Tensor t({h, w, c});
  for (double& v : t.data()) v = rng.uniform();
  return t;
}

using Seq = std::vector<std::size_t>;

}  // namespace

TEST(MetricProperties, AllHoldAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (const checks::PropertyResult& r : checks::metric_pca_properties(seed)) {
      EXPECT_TRUE(r.pass) << r.name << ": " << r.detail << " (seed " << seed << ")";
    }
  }
}

TEST(ImageMetrics, IdenticalImagesHitIdealValues) {
  Rng rng(1);
  const Tensor img = random_image(8, 8, 3, rng);
  const MetricReport r = image_metrics(img, img);
  EXPECT_EQ(r.at("mse"), 0.0);
  EXPECT_EQ(r.at("psnr"), kPsnrCeiling);
  EXPECT_TRUE(r.saturated.count("psnr"));
  EXPECT_NEAR(r.at("ssim"), 1.0, 1e-12);
  EXPECT_NEAR(r.at("fft2d_cos"), 0.0, 1e-12);
}

TEST(ImageMetrics, ConstantHalfAgainstBlack) {
  const MetricReport r = image_metrics(Tensor::full({4, 4, 1}, 0.5), Tensor({4, 4, 1}));
  EXPECT_DOUBLE_EQ(r.at("mse"), 0.25);
  EXPECT_NEAR(r.at("psnr"), 6.0206, 1e-4);
  EXPECT_TRUE(r.saturated.empty());
}

TEST(ImageMetrics, ClampsOutOfRangeValues) {
  const MetricReport r = image_metrics(Tensor::full({4, 4, 1}, 3.0), Tensor::full({4, 4, 1}, 1.0));
  EXPECT_EQ(r.at("mse"), 0.0);
}

TEST(ImageMetrics, SsimAndSpectrumMatchDirectOracles) {
  Rng rng(2);
  for (int i = 0; i < 5; ++i) {
    const Tensor a = random_image(16, 12, 3, rng), b = random_image(16, 12, 3, rng);
    EXPECT_NEAR(ssim(a, b), oracle::ssim(a, b, 8), 1e-6);
    const Tensor sa = oracle::dft_magnitude(a), sb = oracle::dft_magnitude(b);
    EXPECT_NEAR(fft2d_dissimilarity(a, b), 1.0 - cosine_similarity(sa.data(), sb.data()), 1e-9);
  }
}

TEST(ImageMetrics, ShapeMismatchRejected) {
  EXPECT_THROW(image_metrics(Tensor({4, 4, 1}), Tensor({4, 4, 3})), ShapeError);
}

TEST(ImageMetrics, PsnrStrictlyDecreasingInMse) {
  double prev = psnr_from_mse(1e-9);
  for (double m = 2e-9; m < 1.0; m *= 1.7) {
    const double p = psnr_from_mse(m);
    EXPECT_LT(p, prev);
    prev = p;
  }
  EXPECT_EQ(psnr_from_mse(1e-11), kPsnrCeiling);
}

TEST(TextMetrics, IdenticalSequences) {
  const Seq s = {4, 8, 15, 16, 23, 42};
  const MetricReport r = text_metrics(s, s);
  for (const char* k : {"token_ac", "rouge1", "rouge2", "rougeL", "bleu"}) EXPECT_NEAR(r.at(k), 1.0, 1e-12) << k;
}

TEST(TextMetrics, DisjointSequences) {
  const MetricReport r = text_metrics(Seq{1, 2, 3, 4}, Seq{5, 6, 7, 8});
  for (const char* k : {"token_ac", "rouge1", "rouge2", "rougeL"}) EXPECT_EQ(r.at(k), 0.0) << k;
  EXPECT_LT(r.at("bleu"), 1e-6);
}

TEST(TextMetrics, HandCountedHalfOverlap) {
  // truth a b c d, recovered a b x y
  const Seq truth = {1, 2, 3, 4}, rec = {1, 2, 9, 8};
  EXPECT_DOUBLE_EQ(token_accuracy(rec, truth), 0.5);
  EXPECT_DOUBLE_EQ(rouge_n(rec, truth, 1), 0.5);
  EXPECT_NEAR(rouge_n(rec, truth, 2), 1.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(rouge_l(rec, truth), 0.5);
}

TEST(TextMetrics, MultisetOverlapIsClipped) {
  EXPECT_DOUBLE_EQ(token_accuracy(Seq{7, 7, 7, 7}, Seq{7, 1, 2, 3}), 0.25);
  EXPECT_DOUBLE_EQ(token_accuracy(Seq{3, 2, 1}, Seq{1, 2, 3}), 1.0);  // order blind
}

TEST(TextMetrics, RougeLAgainstLcsOracle) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    Seq a(1 + rng.below(12)), b(1 + rng.below(12));
    for (auto& v : a) v = rng.below(5);
    for (auto& v : b) v = rng.below(5);
    const double l = static_cast<double>(oracle::lcs(a, b));
    const double p = l / static_cast<double>(a.size()), r = l / static_cast<double>(b.size());
    EXPECT_NEAR(rouge_l(a, b), l == 0 ? 0.0 : 2 * p * r / (p + r), 1e-12);
  }
}

TEST(TextMetrics, BleuBrevityPenalty) {
  EXPECT_NEAR(bleu(Seq{1, 2, 3, 4, 5}, Seq{1, 2, 3, 4, 5, 6}), std::exp(1.0 - 6.0 / 5.0), 1e-12);
}

TEST(TextMetrics, BoundsOnRandomPairs) {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    Seq a(1 + rng.below(10)), b(1 + rng.below(10));
    for (auto& v : a) v = rng.below(6);
    for (auto& v : b) v = rng.below(6);
    for (const auto& [k, v] : text_metrics(a, b).entries) {
      EXPECT_GE(v, 0.0) << k;
      EXPECT_LE(v, 1.0 + 1e-12) << k;
    }
  }
}

TEST(TextMetrics, EmptyRejected) { EXPECT_THROW(text_metrics(Seq{}, Seq{1}), std::invalid_argument); }

TEST(MetricReport, JsonRoundTripAndAverage) {
  const MetricReport a = text_metrics(Seq{1, 2, 3}, Seq{1, 2, 4});
  const MetricReport back = MetricReport::from_json(a.to_json());
  EXPECT_EQ(back.entries, a.entries);
  const MetricReport b = text_metrics(Seq{1, 2, 3}, Seq{1, 2, 3});
  const MetricReport both[] = {a, b};
  const MetricReport avg = average_reports(both);
  EXPECT_DOUBLE_EQ(avg.at("token_ac"), (a.at("token_ac") + 1.0) / 2.0);
  EXPECT_THROW(avg.at("lpips"), std::out_of_range);
}

TEST(Pca, AffineSubspaceExplainedFully) {
  Rng rng(5);
  Tensor basis({3, 6});
  for (double& v : basis.data()) v = rng.normal();
  Tensor rows({40, 6});
  for (std::size_t i = 0; i < 40; ++i) {
    const double c[3] = {rng.normal(), rng.normal(), rng.normal()};
    for (std::size_t j = 0; j < 6; ++j)
      rows.at({i, j}) = 1.5 + c[0] * basis.at({0, j}) + c[1] * basis.at({1, j}) + c[2] * basis.at({2, j});
  }
  const PcaProjection p = pca_fit_project(rows, 3);
  double total = 0.0;
  for (double r : p.explained_variance_ratio) total += r;
  EXPECT_NEAR(total, 1.0, 1e-9);
}

TEST(Pca, IsotropicGaussianHalf) {
  Rng rng(6);
  Tensor rows({4000, 2});
  for (double& v : rows.data()) v = rng.normal();
  EXPECT_NEAR(pca_fit_project(rows, 1).explained_variance_ratio[0], 0.5, 0.05);
}

TEST(Pca, OrthonormalOrientedAndReconstructs) {
  Rng rng(7);
  Tensor rows({12, 5});
  for (double& v : rows.data()) v = rng.normal();
  const PcaProjection p = pca_fit_project(rows, 5);
  for (std::size_t a = 0; a < 5; ++a) {
    std::size_t arg = 0;
    for (std::size_t b = 0; b < 5; ++b) {
      double dot = 0.0;
      for (std::size_t j = 0; j < 5; ++j) dot += p.components.at({a, j}) * p.components.at({b, j});
      EXPECT_NEAR(dot, a == b ? 1.0 : 0.0, 1e-9);
      if (std::abs(p.components.at({a, b})) > std::abs(p.components.at({a, arg}))) arg = b;
    }
    EXPECT_GT(p.components.at({a, arg}), 0.0);
  }
  for (std::size_t i = 1; i < 5; ++i)
    EXPECT_LE(p.explained_variance_ratio[i], p.explained_variance_ratio[i - 1]);
  const Tensor back = pca_back_project(p);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(back.at({i, j}), rows.at({i, j}) - p.mean[j], 1e-8);
}

TEST(Pca, ComponentsMatchJacobiEigenvectors) {
  const Tensor rows = checks::pca_fixture();
  const PcaProjection p = pca_fit_project(rows, 3);
  const oracle::EigenDecomposition e = oracle::symmetric_eigen(oracle::centered_gram(rows));
  for (std::size_t a = 0; a < 3; ++a) {
    double dot = 0.0;
    for (std::size_t j = 0; j < 6; ++j) dot += p.components.at({a, j}) * e.vectors.at({j, a});
    EXPECT_NEAR(std::abs(dot), 1.0, 1e-9);
    EXPECT_NEAR(p.singular_values[a] * p.singular_values[a], e.values[a], 1e-9 * e.values[0]);
  }
}

TEST(Pca, RangeErrors) {
  Tensor rows({4, 3});
  EXPECT_THROW(pca_fit_project(rows, 0), std::out_of_range);
  EXPECT_THROW(pca_fit_project(rows, 4), std::out_of_range);
  EXPECT_THROW(pca_fit_project(Tensor({1, 3}), 1), std::invalid_argument);
}

TEST(ExplainedVariance, FullRankHundredAndMonotone) {
  Rng rng(8);
  Tensor rows({10, 4});
  for (double& v : rows.data()) v = rng.normal();
  const auto table = explained_variance_table({{"random", rows}}, {1, 2, 3, 4});
  ASSERT_EQ(table.size(), 4u);
  for (std::size_t i = 1; i < 4; ++i) EXPECT_GE(table[i].percent, table[i - 1].percent);
  EXPECT_NEAR(table.back().percent, 100.0, 1e-6);
  EXPECT_EQ(table[2].model, "random");
  EXPECT_EQ(table[2].dim, 3u);
}

TEST(ExplainedVariance, RankOneTableIsDegenerate) {
  Tensor rows({6, 4});
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 4; ++j) rows.at({i, j}) = static_cast<double>(i) * (1.0 + static_cast<double>(j));
  const auto table = explained_variance_table({{"line", rows}}, {1, 2});
  EXPECT_NEAR(table[0].percent, table[1].percent, 1e-9);
  EXPECT_NEAR(table[0].percent, 100.0, 1e-9);
}

TEST(SimilarityScatter, IdentityAndNegation) {
  Rng rng(9);
  Tensor t({10, 8});
  for (double& v : t.data()) v = rng.normal();
  const SimilarityScatter same = pe_similarity_scatter(t, t);
  for (double c : same.cosine) EXPECT_NEAR(c, 1.0, 1e-12);
  EXPECT_LT(max_abs_diff(same.truth_coords, same.recovered_coords), 1e-12);
  Tensor neg = t;
  for (double& v : neg.data()) v = -v;
  for (double c : pe_similarity_scatter(t, neg).cosine) EXPECT_NEAR(c, -1.0, 1e-12);
  EXPECT_THROW(pe_similarity_scatter(t, Tensor({9, 8})), ShapeError);
}

TEST(SimilarityScatter, UnrelatedRowsNearOrthogonal) {
  Rng rng(10);
  Tensor a({50, 64}), b({50, 64});
  for (double& v : a.data()) v = rng.normal();
  for (double& v : b.data()) v = rng.normal();
  double mean_abs = 0.0;
  for (double c : pe_similarity_scatter(a, b).cosine) mean_abs += std::abs(c) / 50.0;
  EXPECT_LT(mean_abs, 0.3);
}
