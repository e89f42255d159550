#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "fd_check.hpp"
#include "omniseq/checkpoint.hpp"
#include "omniseq/model.hpp"
#include "omniseq/training.hpp"

using namespace omniseq;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny(int dim, int catalog, EncoderKind enc = EncoderKind::kAttnPool) {
  ModelConfig c;
  c.dim = dim;
  c.blocks = 2;
  c.max_seq_len = 12;
  c.dropout = 0.0;
  c.catalog_size = catalog;
  c.encoder = enc;
  return c;
}

HybridSequence make_seq(Catalog cat, std::vector<std::vector<ItemId>> behaviors) {
  std::vector<BehaviorEvent> events;
  Timestamp ts = 0;
  for (auto& b : behaviors) {
    ++ts;
    if (b.size() == 1 && b[0] >= 0) {
      events.push_back(BehaviorEvent::online(1, ts, b[0]));
    } else {
      for (ItemId& i : b) i = -i - 1;  // negative ids mark set members
      events.push_back(BehaviorEvent::in_store(1, ts, b));
    }
  }
  return build_hybrid_sequence(events, 90, cat);
}

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

Mat to_mat(const Matrix& m) {
  Mat out(m.rows(), Vec(m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
  return out;
}

Mat mm(const Mat& a, const Mat& b) {
  Mat out(a.size(), Vec(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) out[i][j] += a[i][k] * b[k][j];
  return out;
}

Mat ln(const Mat& x, const Matrix& gain, const Matrix& bias, double eps) {
  Mat out = x;
  for (std::size_t r = 0; r < x.size(); ++r) {
    const double n = static_cast<double>(x[r].size());
    double mean = 0.0, var = 0.0;
    for (double v : x[r]) mean += v / n;
    for (double v : x[r]) var += (v - mean) * (v - mean) / n;
    for (std::size_t c = 0; c < x[r].size(); ++c) {
      out[r][c] = gain(0, c) * (x[r][c] - mean) / std::sqrt(var + eps) + bias(0, c);
    }
  }
  return out;
}

// Plain-loop forward pass written directly from the block equations: pre-norm
// causal single-head attention and ReLU feed-forward, each with a residual,
// then a final layer norm.
Mat reference_forward(const ModelParams& p, const ModelConfig& cfg, const Mat& input) {
  Mat x = input;
  const std::size_t L = x.size();
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
  for (const auto& b : p.blocks) {
    const Mat h = ln(x, b.ln1_gain.value, b.ln1_bias.value, cfg.ln_epsilon);
    const Mat q = mm(h, to_mat(b.attn_query.value));
    const Mat k = mm(h, to_mat(b.attn_key.value));
    const Mat v = mm(h, to_mat(b.attn_value.value));
    for (std::size_t i = 0; i < L; ++i) {
      Vec s(i + 1);
      double mx = -1e300;
      for (std::size_t j = 0; j <= i; ++j) {
        double d = 0.0;
        for (std::size_t c = 0; c < q[i].size(); ++c) d += q[i][c] * k[j][c];
        s[j] = d * scale;
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (double& e : s) z += (e = std::exp(e - mx));
      for (std::size_t c = 0; c < x[i].size(); ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j <= i; ++j) acc += s[j] / z * v[j][c];
        x[i][c] += acc;
      }
    }
    const Mat h2 = ln(x, b.ln2_gain.value, b.ln2_bias.value, cfg.ln_epsilon);
    Mat f = mm(h2, to_mat(b.ffn_w1.value));
    for (auto& row : f)
      for (std::size_t c = 0; c < row.size(); ++c) row[c] = std::max(0.0, row[c] + b.ffn_b1.value(0, c));
    const Mat f2 = mm(f, to_mat(b.ffn_w2.value));
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t c = 0; c < x[i].size(); ++c) x[i][c] += f2[i][c] + b.ffn_b2.value(0, c);
  }
  return ln(x, p.final_gain.value, p.final_bias.value, cfg.ln_epsilon);
}

// Eq.-level attention pooling over members in the given row order.
Vec reference_attn_pool(const ModelParams& p, std::span<const ItemId> rows) {
  Mat m;
  for (ItemId id : rows) m.push_back(to_mat(p.item_embedding.value)[static_cast<std::size_t>(id)]);
  const Mat q = mm(m, to_mat(p.encoder_query.value));
  const Mat k = mm(m, to_mat(p.encoder_key.value));
  Vec s(m.size(), 0.0);
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m.size(); ++j)
      for (std::size_t c = 0; c < q[i].size(); ++c) s[i] += q[i][c] * k[j][c];
  const double mx = *std::max_element(s.begin(), s.end());
  double z = 0.0;
  for (double& e : s) z += (e = std::exp(e - mx));
  Vec out(m[0].size(), 0.0);
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += s[i] / z * m[i][c];
  return out;
}

}  // namespace

TEST(Encoder, SingletonIsEmbedding) {
  const auto cfg = tiny(6, 20);
  const auto params = init_params(cfg, 1);
  const ItemId one[] = {7};
  const auto v = encode_set(params, cfg, one);
  for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(v[c], params.item_embedding.value(7, c));
}

TEST(Encoder, ZeroQueryGivesMean) {
  const auto cfg = tiny(6, 20);
  auto params = init_params(cfg, 2);
  params.encoder_query.value.fill(0.0);
  const ItemId set[] = {3, 9, 1};
  const auto v = encode_set(params, cfg, set);
  for (std::size_t c = 0; c < 6; ++c) {
    const double mean = (params.item_embedding.value(3, c) + params.item_embedding.value(9, c) +
                         params.item_embedding.value(1, c)) / 3.0;
    EXPECT_NEAR(v[c], mean, 1e-15);
  }
}

TEST(Encoder, HandComputedTwoItemCase) {
  ModelConfig cfg = tiny(2, 2);
  cfg.attn_dim = 1;
  auto params = init_params(cfg, 0);
  params.item_embedding.value = Matrix::from_rows({{1, 0}, {0, 1}, {0, 0}});
  params.encoder_query.value = Matrix::from_rows({{1}, {0}});
  params.encoder_key.value = Matrix::from_rows({{1}, {1}});
  // Q = [1, 0]^T, K = [1, 1]^T, Q K^T 1 = [2, 0], a = softmax([2, 0]).
  const double e2 = std::exp(2.0);
  const ItemId set[] = {0, 1};
  const auto a = set_attention_scores(params, cfg, set);
  EXPECT_NEAR(a[0], e2 / (e2 + 1), 1e-15);
  EXPECT_NEAR(a[1], 1 / (e2 + 1), 1e-15);
  const auto v = encode_set(params, cfg, set);
  EXPECT_NEAR(v[0], e2 / (e2 + 1), 1e-15);
  EXPECT_NEAR(v[1], 1 / (e2 + 1), 1e-15);
}

TEST(Encoder, ScoresAreAProbabilityVector) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto cfg = tiny(8, 30);
    const auto params = init_params(cfg, trial);
    std::vector<ItemId> set;
    for (int i = 0; i < 1 + trial % 8; ++i) set.push_back(static_cast<ItemId>(rng() % 30));
    const auto a = set_attention_scores(params, cfg, set);
    double s = 0.0;
    for (double x : a) {
      EXPECT_GE(x, 0.0);
      s += x;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Encoder, PermutationInvariantEvenWithoutSorting) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto cfg = tiny(1 + static_cast<int>(rng() % 16), 40);
    const auto params = init_params(cfg, 100 + trial);
    std::vector<ItemId> set(40);
    std::iota(set.begin(), set.end(), 0);
    std::shuffle(set.begin(), set.end(), rng);
    set.resize(1 + rng() % 8);
    const auto base = encode_set(params, cfg, set);
    for (int perm = 0; perm < 10; ++perm) {
      std::shuffle(set.begin(), set.end(), rng);
      const auto ref = reference_attn_pool(params, set);  // rows in shuffled order
      const auto got = encode_set(params, cfg, set);
      for (std::size_t c = 0; c < base.size(); ++c) {
        EXPECT_NEAR(got[c], base[c], 1e-9);
        EXPECT_NEAR(ref[c], base[c], 1e-9);
      }
    }
  }
}

TEST(Encoder, AvgPool) {
  auto cfg = tiny(4, 10, EncoderKind::kAvgPool);
  auto params = init_params(cfg, 3);
  const ItemId one[] = {2};
  const auto v1 = encode_set(params, cfg, one);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(v1[c], params.item_embedding.value(2, c));
  for (std::size_t c = 0; c < 4; ++c) params.item_embedding.value(5, c) = -params.item_embedding.value(4, c);
  const ItemId pair[] = {4, 5};
  for (double x : encode_set(params, cfg, pair)) EXPECT_NEAR(x, 0.0, 1e-16);
}

TEST(Encoder, AvgEqualsAttnWithZeroProjections) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    auto cfg = tiny(1 + static_cast<int>(rng() % 16), 50);
    auto params = init_params(cfg, trial);
    params.encoder_query.value.fill(0.0);
    params.encoder_key.value.fill(0.0);
    std::vector<ItemId> set;
    for (int i = 0; i < 1 + trial % 8; ++i) set.push_back(static_cast<ItemId>(rng() % 50));
    const auto attn = encode_set(params, cfg, set);
    cfg.encoder = EncoderKind::kAvgPool;
    const auto avg = encode_set(params, cfg, set);
    for (std::size_t c = 0; c < attn.size(); ++c) EXPECT_NEAR(attn[c], avg[c], 1e-12);
  }
}

TEST(Encoder, RejectsEmptyAndUnknown) {
  const auto cfg = tiny(4, 10);
  const auto params = init_params(cfg, 0);
  EXPECT_THROW(encode_set(params, cfg, {}), DataError);
  const ItemId bad[] = {10};
  EXPECT_THROW(encode_set(params, cfg, bad), DataError);
}

TEST(Embed, OnlineRowsAreItemPlusPosition) {
  const Catalog cat{20};
  const auto cfg = tiny(5, cat.size);
  const auto params = init_params(cfg, 4);
  const auto seq = make_seq(cat, {{3}, {17}, {3}});
  Tape tape;
  const Matrix& x = tape.value(embed_sequence(tape, params, cfg, seq, Mode::kEval, nullptr));
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t c = 0; c < 5; ++c) {
      EXPECT_EQ(x(p, c), params.item_embedding.value(static_cast<std::size_t>(seq.tokens[p].id), c) +
                             params.position_embedding.value(p, c));
    }
}

TEST(Embed, SingletonSetRow) {
  const Catalog cat{20};
  const auto cfg = tiny(5, cat.size);
  const auto params = init_params(cfg, 4);
  const auto seq = make_seq(cat, {{-10}});  // set {9}
  Tape tape;
  const Matrix& x = tape.value(embed_sequence(tape, params, cfg, seq, Mode::kEval, nullptr));
  for (std::size_t c = 0; c < 5; ++c) {
    EXPECT_EQ(x(0, c), params.item_embedding.value(9, c) + params.position_embedding.value(0, c));
  }
}

TEST(Embed, MetaOrderDoesNotMatter) {
  const Catalog cat{20};
  const auto cfg = tiny(6, cat.size);
  const auto params = init_params(cfg, 4);
  auto seq = make_seq(cat, {{1}, {-3, -8, -12}, {2}});
  const Matrix a = hidden_states(params, cfg, seq);
  std::reverse(seq.tokens[1].meta.begin(), seq.tokens[1].meta.end());
  const Matrix b = hidden_states(params, cfg, seq);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.values()[i], b.values()[i], 1e-9);
}

TEST(Embed, SpecialTokenWithoutEncoderRejected) {
  const Catalog cat{20};
  const auto cfg = tiny(4, cat.size, EncoderKind::kNone);
  const auto params = init_params(cfg, 4);
  const auto seq = make_seq(cat, {{1}, {-3, -4}});
  Tape tape;
  EXPECT_THROW(embed_sequence(tape, params, cfg, seq, Mode::kEval, nullptr), DataError);
}

TEST(Embed, TooLongRejected) {
  const Catalog cat{20};
  auto cfg = tiny(4, cat.size);
  cfg.max_seq_len = 2;
  const auto params = init_params(cfg, 4);
  const auto seq = make_seq(cat, {{1}, {2}, {3}});
  Tape tape;
  EXPECT_THROW(embed_sequence(tape, params, cfg, seq, Mode::kEval, nullptr), DimensionError);
}

TEST(Backbone, Causality) {
  const Catalog cat{30};
  const auto cfg = tiny(8, cat.size);
  const auto params = init_params(cfg, 6);
  const auto seq = make_seq(cat, {{1}, {-4, -5}, {7}, {9}, {11}, {-20}});
  Tape t0;
  const Var x0 = embed_sequence(t0, params, cfg, seq, Mode::kEval, nullptr);
  const Matrix base = t0.value(backbone_forward(t0, x0, params, cfg, Mode::kEval, nullptr));
  Rng rng(1);
  for (std::size_t p = 0; p < seq.size(); ++p) {
    Matrix input = t0.value(x0);
    for (double& v : input.row(p)) v += std::uniform_real_distribution<double>(-1, 1)(rng);
    Tape t;
    const Matrix out = t.value(backbone_forward(t, t.constant(input), params, cfg, Mode::kEval, nullptr));
    for (std::size_t r = 0; r < p; ++r)
      for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(out(r, c), base(r, c));
    bool changed = false;
    for (std::size_t c = 0; c < 8; ++c) changed |= out(p, c) != base(p, c);
    EXPECT_TRUE(changed);
  }
}

TEST(Backbone, SinglePositionAttendsToItself) {
  const auto cfg = tiny(8, 10);
  const auto params = init_params(cfg, 2);
  Rng rng(3);
  Matrix input(1, 8);
  for (double& v : input.values()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  Tape t;
  const Matrix out = t.value(backbone_forward(t, t.constant(input), params, cfg, Mode::kEval, nullptr));
  const Mat ref = reference_forward(params, cfg, to_mat(input));
  for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(out(0, c), ref[0][c], 1e-12);
}

TEST(Backbone, MatchesPlainLoopReference) {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const auto cfg = tiny(8, 10);
    auto params = init_params(cfg, seed);
    // Non-trivial layer-norm affine parameters.
    Rng rng(seed);
    for (auto* p : params.ordered()) {
      if (p->name.find("gain") != std::string::npos || p->name.find("bias") != std::string::npos ||
          p->name.find("b1") != std::string::npos || p->name.find("b2") != std::string::npos) {
        for (double& v : p->value.values()) v += std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
      }
    }
    Matrix input(4, 8);
    for (double& v : input.values()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    Tape t;
    const Matrix out = t.value(backbone_forward(t, t.constant(input), params, cfg, Mode::kEval, nullptr));
    const Mat ref = reference_forward(params, cfg, to_mat(input));
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(out(r, c), ref[r][c], 1e-12);
  }
}

TEST(Backbone, MultiHeadSplitsColumns) {
  auto cfg = tiny(8, 10);
  cfg.heads = 2;
  const auto params = init_params(cfg, 1);
  Matrix input(3, 8, 0.1);
  input(1, 2) = 0.7;
  Tape t;
  const Matrix out = t.value(backbone_forward(t, t.constant(input), params, cfg, Mode::kEval, nullptr));
  EXPECT_TRUE(out.all_finite());
  cfg.heads = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Scoring, DotProductWithTiedEmbeddings) {
  const auto cfg = tiny(4, 10);
  auto params = init_params(cfg, 9);
  auto& table = params.item_embedding.value;
  const ItemId c3[] = {3};
  const std::vector<double> e3(table.row(3).begin(), table.row(3).end());
  EXPECT_DOUBLE_EQ(score_candidates(e3, c3, params, cfg)[0], dot(e3, e3));

  table(3, 2) = table(3, 3) = 0.0;
  const std::vector<double> ortho = {table(3, 1), -table(3, 0), 0.5, -2.0};
  EXPECT_EQ(score_candidates(ortho, c3, params, cfg)[0], 0.0);
}

TEST(Scoring, ShapeAndOrder) {
  const auto cfg = tiny(4, 200);
  const auto params = init_params(cfg, 9);
  std::vector<ItemId> cands(101);
  std::iota(cands.begin(), cands.end(), 50);
  std::vector<double> h(4, 0.3);
  const auto s = score_candidates(h, cands, params, cfg);
  ASSERT_EQ(s.size(), 101u);
  for (std::size_t i = 0; i < 101; ++i) {
    EXPECT_EQ(s[i], dot(h, params.item_embedding.value.row(static_cast<std::size_t>(cands[i]))));
  }
}

TEST(Scoring, SpecialTokenRejected) {
  const auto cfg = tiny(4, 10);
  const auto params = init_params(cfg, 9);
  const ItemId c[] = {1, 10};
  std::vector<double> h(4, 0.3);
  EXPECT_THROW(score_candidates(h, c, params, cfg), DataError);
}

TEST(Init, RangesAndShapes) {
  const auto cfg = tiny(16, 40);
  const auto params = init_params(cfg, 3);
  EXPECT_EQ(params.item_embedding.value.rows(), 41u);
  const double bound = 1.0 / 4.0;
  for (const auto* p : params.ordered()) {
    EXPECT_TRUE(p->value.all_finite());
    const bool is_gain = p->name.find("gain") != std::string::npos;
    const bool is_bias = p->name.find("bias") != std::string::npos || p->name.find("_b") != std::string::npos;
    for (double v : p->value.values()) {
      if (is_gain) {
        EXPECT_EQ(v, 1.0) << p->name;
      } else if (is_bias) {
        EXPECT_EQ(v, 0.0) << p->name;
      } else {
        EXPECT_LE(std::abs(v), bound) << p->name;
      }
    }
  }
  EXPECT_EQ(init_params(cfg, 3).item_embedding.value, params.item_embedding.value);
}

namespace {

double full_loss(const ModelParams& params, const ModelConfig& cfg, const TrainingExample& ex,
                 Gradients* grads) {
  return batch_loss(params, cfg, std::span(&ex, 1), Mode::kEval, nullptr, grads);
}

}  // namespace

TEST(Gradients, FullModelMatchesFiniteDifferences) {
  const Catalog cat{12};
  ModelConfig cfg = tiny(4, cat.size);
  cfg.max_seq_len = 4;
  auto params = init_params(cfg, 21);
  // [a, SPECIAL{x, y}, b]: positions 1 -> b supervised.
  TrainingExample ex{1, make_seq(cat, {{1}, {-3, -6}, {2}}), {}};
  ex.targets.push_back({0, 4, {5, 7, 8}});
  ex.targets.push_back({1, 2, {0, 9, 11}});
  ex.targets.push_back({2, 10, {3, 6}});
  auto ordered = params.ordered();
  std::vector<const Parameter*> cps(ordered.begin(), ordered.end());
  Gradients grads(cps);
  full_loss(params, cfg, ex, &grads);
  const auto res = fdcheck::finite_difference_check(
      ordered, grads, [&] { return full_loss(params, cfg, ex, nullptr); });
  EXPECT_LT(res.max_rel, 1e-4) << res.worst;
}

TEST(Gradients, EncoderGradientFlow) {
  const Catalog cat{12};
  const auto cfg = tiny(6, cat.size);
  const auto params = init_params(cfg, 5);
  auto ordered = params.ordered();
  std::vector<const Parameter*> cps(ordered.begin(), ordered.end());

  TrainingExample with_set{1, make_seq(cat, {{1}, {-3, -6, -8}, {2}}), {}};
  with_set.targets.push_back({1, 2, {0, 9, 11}});
  Gradients g1(cps);
  full_loss(params, cfg, with_set, &g1);
  double norm_q = 0.0, norm_k = 0.0;
  for (double v : g1.at(params.encoder_query).values()) norm_q += v * v;
  for (double v : g1.at(params.encoder_key).values()) norm_k += v * v;
  EXPECT_GT(norm_q, 0.0);
  EXPECT_GT(norm_k, 0.0);

  TrainingExample online{1, make_seq(cat, {{1}, {3}, {2}}), {}};
  online.targets.push_back({1, 2, {0, 9, 11}});
  Gradients g2(cps);
  full_loss(params, cfg, online, &g2);
  for (double v : g2.at(params.encoder_query).values()) EXPECT_EQ(v, 0.0);
  for (double v : g2.at(params.encoder_key).values()) EXPECT_EQ(v, 0.0);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const fs::path dir = fs::temp_directory_path() / "omniseq_test_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  ModelConfig cfg = tiny(8, 30);
  cfg.attn_dim = 3;
  cfg.ffn_dim = 12;
  const auto params = init_params(cfg, 77);
  save_checkpoint(dir / "m.ckpt", cfg, params, "attn-enc", 77);
  const Checkpoint ck = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(ck.variant, "attn-enc");
  EXPECT_EQ(ck.seed, 77u);
  EXPECT_EQ(ck.config.attn_dim, 3);
  EXPECT_EQ(ck.config.ffn_dim, 12);
  const auto a = params.ordered();
  const auto b = ck.params.ordered();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i]->name, b[i]->name);
    EXPECT_EQ(a[i]->value, b[i]->value);
  }
  save_checkpoint(dir / "again.ckpt", ck.config, ck.params, ck.variant, ck.seed);
  std::ifstream f1(dir / "m.ckpt", std::ios::binary), f2(dir / "again.ckpt", std::ios::binary);
  const std::string s1((std::istreambuf_iterator<char>(f1)), {}), s2((std::istreambuf_iterator<char>(f2)), {});
  EXPECT_EQ(s1, s2);

  // Truncated or padded payloads are rejected.
  std::ofstream(dir / "short.ckpt", std::ios::binary) << s1.substr(0, s1.size() - 8);
  EXPECT_THROW(load_checkpoint(dir / "short.ckpt"), DataError);
  std::ofstream(dir / "long.ckpt", std::ios::binary) << s1 << "xxxxxxxx";
  EXPECT_THROW(load_checkpoint(dir / "long.ckpt"), DataError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), DataError);
}
