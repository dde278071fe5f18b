#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "checks.hpp"
#include "mjplab/checkpoint.hpp"
#include "mjplab/transformer.hpp"

using namespace mjplab;
namespace fs = std::filesystem;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor forward_logits(const TransformerModel& m, const TokenBatch& x) {
  Tape tape;
  const BoundParams p(tape, m.params(), false);
  const Var projected = project_tokens(p, m.config(), x);
  return forward_classify(p, m.config(), embed_input(p, m.config(), projected, p["pe.pos"])).value();
}

}  // namespace

TEST(Patchify, ShapeArithmetic) {
  Rng rng(1);
  const Tensor tokens = patchify(random_tensor({4, 4, 1}, rng), 2);
  EXPECT_EQ(tokens.shape(), (Shape{4, 4}));
}

TEST(Patchify, ConstantImageGivesIdenticalTokens) {
  const Tensor tokens = patchify(Tensor::full({4, 6, 2}, 0.25), 2);
  for (double v : tokens.data()) EXPECT_EQ(v, 0.25);
}

TEST(Patchify, RowMajorGridOrder) {
  Tensor img({4, 4, 1});
  for (std::size_t i = 0; i < 16; ++i) img[i] = static_cast<double>(i);
  const Tensor t = patchify(img, 2);
  // second token is the top-right patch
  EXPECT_EQ(t.at({1, 0}), 2.0);
  EXPECT_EQ(t.at({1, 3}), 7.0);
  EXPECT_EQ(t.at({2, 0}), 8.0);
}

TEST(Patchify, RoundTripIsExact) {
  Rng rng(2);
  const Tensor img = random_tensor({6, 6, 1}, rng);
  EXPECT_EQ(unpatchify(patchify(img, 2), 2, 6, 6), img);
  const Tensor rgb = random_tensor({8, 4, 3}, rng);
  EXPECT_EQ(unpatchify(patchify(rgb, 4), 4, 8, 4), rgb);
}

TEST(Patchify, IndivisibleDimensionRejected) { EXPECT_THROW(patchify(Tensor({5, 4, 1}), 2), ShapeError); }

class EmbedInput : public ::testing::Test {
 protected:
  ModelConfig cfg = checks::tiny_vision_config();
  Rng rng{3};
  TransformerModel model = TransformerModel::initialize(cfg, rng);
};

TEST_F(EmbedInput, ZeroTokensGivePositionRows) {
  Tape tape;
  const BoundParams p(tape, model.params(), false);
  for (double& v : model.params().at("embed.cls").data()) v = 0.0;
  const BoundParams pz(tape, model.params(), false);
  const Var zeros = tape.constant(Tensor({1, cfg.seq_len, cfg.embed_dim}));
  EXPECT_EQ(embed_input(pz, cfg, zeros, pz["pe.pos"]).value().reshaped(model.params().at("pe.pos").shape()),
            model.params().at("pe.pos"));
}

TEST_F(EmbedInput, ZeroPositionsGiveProjectedTokens) {
  Tape tape;
  const BoundParams p(tape, model.params(), false);
  const Tensor proj = random_tensor({2, cfg.seq_len, cfg.embed_dim}, rng);
  const Var pe = tape.constant(Tensor({cfg.position_rows(), cfg.embed_dim}));
  const Tensor z = embed_input(p, cfg, tape.constant(proj), pe).value();
  const std::size_t d = cfg.embed_dim, t = cfg.position_rows();
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t j = 0; j < d; ++j) EXPECT_EQ(z[(b * t) * d + j], model.params().at("embed.cls")[j]);
    for (std::size_t l = 0; l < cfg.seq_len; ++l)
      for (std::size_t j = 0; j < d; ++j) EXPECT_EQ(z[(b * t + l + 1) * d + j], proj[(b * cfg.seq_len + l) * d + j]);
  }
}

TEST_F(EmbedInput, MatchesManualSum) {
  const ModelConfig tc = checks::tiny_text_config();
  const TransformerModel tm = TransformerModel::initialize(tc, rng);
  const TokenBatch x = checks::random_batch(tc, 3, rng);
  Tape tape;
  const BoundParams p(tape, tm.params(), false);
  const Tensor z = embed_input(p, tc, project_tokens(p, tc, x), p["pe.pos"]).value();
  const Tensor& table = tm.params().at("embed.token");
  const Tensor& pos = tm.params().at("pe.pos");
  const std::size_t d = tc.embed_dim;
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t l = 0; l < tc.seq_len; ++l)
      for (std::size_t j = 0; j < d; ++j)
        EXPECT_NEAR(z[(b * tc.seq_len + l) * d + j], table[x.ids[b][l] * d + j] + pos[l * d + j], 1e-12);
}

TEST_F(EmbedInput, LengthMismatchRejected) {
  Tape tape;
  const BoundParams p(tape, model.params(), false);
  const Var proj = tape.constant(Tensor({1, cfg.seq_len - 1, cfg.embed_dim}));
  EXPECT_THROW(embed_input(p, cfg, proj, p["pe.pos"]), ShapeError);
  const Var good = tape.constant(Tensor({1, cfg.seq_len, cfg.embed_dim}));
  const Var short_pe = tape.constant(Tensor({cfg.seq_len, cfg.embed_dim}));
  EXPECT_THROW(embed_input(p, cfg, good, short_pe), ShapeError);
}

TEST(Msa, SingleTokenAttendsToItself) {
  ModelConfig cfg = checks::tiny_text_config();
  cfg.seq_len = 1;
  Rng rng(4);
  const TransformerModel m = TransformerModel::initialize(cfg, rng);
  const Tensor z = random_tensor({1, 1, cfg.embed_dim}, rng);
  Tape tape;
  const BoundParams p(tape, m.params(), false);
  std::vector<Tensor> attn;
  const Tensor out = msa_forward(p, cfg, 0, tape.constant(z), &attn).value();
  for (double w : attn.at(0).data()) EXPECT_EQ(w, 1.0);
  const auto& P = m.params();
  const Tensor v = kernels::matmul(z.reshaped({1, cfg.embed_dim}), P.at("blocks.0.attn.v.weight"));
  Tensor expected = kernels::matmul(v, P.at("blocks.0.attn.out.weight"));
  for (std::size_t j = 0; j < cfg.embed_dim; ++j) {
    double vb = 0.0;
    for (std::size_t k = 0; k < cfg.embed_dim; ++k)
      vb += P.at("blocks.0.attn.v.bias")[k] * P.at("blocks.0.attn.out.weight").at({k, j});
    expected[j] += vb + P.at("blocks.0.attn.out.bias")[j];
  }
  EXPECT_LT(max_abs_diff(out.reshaped({1, cfg.embed_dim}), expected), 1e-12);
}

TEST(Msa, IdenticalTokensShareAttentionEvenly) {
  ModelConfig cfg = checks::tiny_text_config();
  cfg.seq_len = 2;
  Rng rng(5);
  const TransformerModel m = TransformerModel::initialize(cfg, rng);
  const Tensor row = random_tensor({1, 1, cfg.embed_dim}, rng);
  Tensor z({1, 2, cfg.embed_dim});
  for (std::size_t j = 0; j < cfg.embed_dim; ++j) z[j] = z[cfg.embed_dim + j] = row[j];
  Tape tape;
  const BoundParams p(tape, m.params(), false);
  std::vector<Tensor> attn;
  msa_forward(p, cfg, 0, tape.constant(z), &attn);
  for (double w : attn.at(0).data()) EXPECT_DOUBLE_EQ(w, 0.5);
}

TEST(Msa, PermutingRowsPermutesOutput) {
  ModelConfig cfg = checks::tiny_text_config();
  cfg.seq_len = 3;
  Rng rng(6);
  const TransformerModel m = TransformerModel::initialize(cfg, rng);
  const Tensor z = random_tensor({1, 3, cfg.embed_dim}, rng);
  const std::size_t perm[] = {2, 0, 1};
  Tensor pz(z.shape());
  const std::size_t d = cfg.embed_dim;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < d; ++j) pz[i * d + j] = z[perm[i] * d + j];
  Tape tape;
  const BoundParams p(tape, m.params(), false);
  const Tensor out = msa_forward(p, cfg, 1, tape.constant(z)).value();
  const Tensor pout = msa_forward(p, cfg, 1, tape.constant(pz)).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(pout[i * d + j], out[perm[i] * d + j], 1e-12);
}

TEST(Msa, AttentionRowsAreStochastic) {
  const ModelConfig cfg = checks::tiny_vision_config();
  Rng rng(7);
  const TransformerModel m = TransformerModel::initialize(cfg, rng);
  const TokenBatch x = checks::random_batch(cfg, 2, rng);
  Tape tape;
  const BoundParams p(tape, m.params(), false);
  std::vector<Tensor> attn;
  encode(p, cfg, embed_input(p, cfg, project_tokens(p, cfg, x), p["pe.pos"]), &attn);
  ASSERT_EQ(attn.size(), cfg.layers);
  const std::size_t t = cfg.position_rows();
  for (const Tensor& a : attn) {
    for (std::size_t r = 0; r < a.size() / t; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < t; ++c) s += a[r * t + c];
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Equivariance, ZeroPositionEmbeddingsVision) {
  const auto r = checks::permutation_equivariance(Modality::vision, 20, 1);
  EXPECT_LT(r.stack_deviation, 1e-9);
  EXPECT_LT(r.logit_deviation, 1e-9);
}

TEST(Equivariance, ZeroPositionEmbeddingsText) {
  const auto r = checks::permutation_equivariance(Modality::text, 20, 2);
  EXPECT_LT(r.stack_deviation, 1e-9);
  EXPECT_LT(r.logit_deviation, 1e-9);
}

TEST(ForwardClassify, ZeroParametersGiveUniformProbabilities) {
  const ModelConfig cfg = checks::tiny_vision_config();
  Rng rng(8);
  TransformerModel m = TransformerModel::initialize(cfg, rng);
  for (auto& [name, t] : m.params())
    for (double& v : t.data()) v = 0.0;
  const Tensor logits = forward_logits(m, checks::random_batch(cfg, 2, rng));
  const Tensor probs = kernels::softmax(logits, 1);
  for (double v : probs.data()) EXPECT_NEAR(v, 1.0 / static_cast<double>(cfg.num_classes), 1e-15);
}

TEST(ForwardClassify, HandSetHeadSign) {
  ModelConfig cfg = checks::tiny_text_config();
  cfg.num_classes = 2;
  Rng rng(9);
  TransformerModel m = TransformerModel::initialize(cfg, rng);
  // Zero norm gain makes the pooled vector equal the norm bias u.
  auto& P = m.params();
  for (double& v : P.at("norm.weight").data()) v = 0.0;
  Tensor u({cfg.embed_dim});
  for (std::size_t j = 0; j < cfg.embed_dim; ++j) u[j] = 0.1 * static_cast<double>(j) - 0.3;
  P.at("norm.bias") = u;
  Tensor w({cfg.embed_dim, 2});
  for (std::size_t j = 0; j < cfg.embed_dim; ++j) {
    w.at({j, 0}) = 1.0;
    w.at({j, 1}) = -1.0;
  }
  P.at("head.weight") = w;
  P.at("head.bias") = Tensor::vector({0.0, 0.05});
  double s = 0.0;
  for (double v : u.data()) s += v;
  const double hand_diff = 2.0 * s - 0.05;  // logit0 - logit1
  const Tensor logits = forward_logits(m, checks::random_batch(cfg, 1, rng));
  EXPECT_NEAR(logits[0] - logits[1], hand_diff, 1e-12);
  EXPECT_EQ(logits[0] > logits[1], hand_diff > 0);
}

TEST(ForwardClassify, BatchEqualsConcatenatedSingles) {
  for (const ModelConfig& cfg : {checks::tiny_text_config(), checks::tiny_vision_config()}) {
    Rng rng(10);
    const TransformerModel m = TransformerModel::initialize(cfg, rng);
    const TokenBatch x = checks::random_batch(cfg, 2, rng);
    const Tensor both = forward_logits(m, x);
    for (std::size_t b = 0; b < 2; ++b) {
      const std::size_t rows[] = {b};
      const Tensor one = forward_logits(m, x.select(rows));
      for (std::size_t c = 0; c < cfg.num_classes; ++c)
        EXPECT_NEAR(both[b * cfg.num_classes + c], one[c], 1e-12);
    }
  }
}

TEST(CrossEntropy, UniformLogitsFourClasses) {
  Tape tape;
  const std::size_t label[] = {2};
  EXPECT_NEAR(cross_entropy(tape.constant(Tensor({1, 4})), label).value().item(), std::log(4.0), 1e-15);
}

TEST(CrossEntropy, ConfidentCorrectLogits) {
  Tape tape;
  const std::size_t label[] = {0};
  const double ce = cross_entropy(tape.constant(Tensor::matrix({{10, -10}})), label).value().item();
  EXPECT_NEAR(ce, std::log1p(std::exp(-20.0)), 1e-20);
  EXPECT_NEAR(ce, 2.06e-9, 0.01e-9);
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOnehot) {
  Rng rng(11);
  const Tensor z = random_tensor({3, 5}, rng, -3, 3);
  const std::size_t labels[] = {4, 0, 2};
  Tape tape;
  const Var v = tape.leaf(z);
  const Var wrt[] = {v};
  const Tensor g = tape.grad(cross_entropy(v, labels), wrt)[0].value();
  const Tensor s = kernels::softmax(z, 1);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t c = 0; c < 5; ++c)
      EXPECT_NEAR(g[b * 5 + c], (s[b * 5 + c] - (c == labels[b] ? 1.0 : 0.0)) / 3.0, 1e-9);
}

TEST(CrossEntropy, OutOfRangeLabelRejected) {
  Tape tape;
  const std::size_t label[] = {3};
  EXPECT_THROW(cross_entropy(tape.constant(Tensor({1, 3})), label), std::out_of_range);
}

TEST(Initialization, FollowsDeclaredScheme) {
  const ModelConfig cfg = checks::tiny_vision_config();
  Rng rng(12);
  const TransformerModel m = TransformerModel::initialize(cfg, rng);
  for (const auto& [name, t] : m.params()) {
    if (name.find("bias") != std::string::npos) {
      for (double v : t.data()) EXPECT_EQ(v, 0.0) << name;
    } else if (name.find("ln") != std::string::npos || name == "norm.weight") {
      for (double v : t.data()) EXPECT_EQ(v, 1.0) << name;
    } else if (name.rfind("pe.", 0) == 0 || name == "embed.cls") {
      for (double v : t.data()) EXPECT_LE(std::abs(v), 0.04) << name;
    } else {
      const double bound = std::sqrt(6.0 / static_cast<double>(t.shape()[0] + t.shape()[1]));
      for (double v : t.data()) EXPECT_LE(std::abs(v), bound) << name;
    }
  }
}

TEST(ModelConfig, ValidationRejectsInconsistentShapes) {
  ModelConfig bad = checks::tiny_vision_config();
  bad.grid_side = 4;
  EXPECT_THROW(bad.validate(), ConfigError);
  ModelConfig heads = checks::tiny_text_config();
  heads.heads = 3;
  EXPECT_THROW(heads.validate(), ConfigError);
}

TEST(Checkpoint, SaveLoadForwardIsBitwise) {
  const fs::path dir = fs::temp_directory_path() / "mjplab_ckpt_roundtrip";
  fs::remove_all(dir);
  ExperimentConfig ec;
  ec.model = checks::tiny_vision_config();
  Rng rng(13);
  Trainable t{TransformerModel::initialize(ec.model, rng), {}};
  save_checkpoint(dir, t, ec, 3);
  const Checkpoint ck = load_checkpoint(dir);
  EXPECT_EQ(ck.epoch, 3u);
  EXPECT_EQ(ck.config.model, ec.model);
  const TokenBatch x = checks::random_batch(ec.model, 2, rng);
  EXPECT_EQ(forward_logits(ck.model.model, x), forward_logits(t.model, x));
  fs::remove_all(dir);
}
