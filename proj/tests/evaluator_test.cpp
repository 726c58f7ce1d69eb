#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "actsparse/evaluator.hpp"
#include "support/corpus.hpp"
#include "support/framing.hpp"
#include "support/models.hpp"

using namespace actsparse;
using testkit::error_code;

namespace {

// Fills row t so that softmax gives `target` probability p.
void set_row(Matrix& m, std::size_t t, Token target, double p) {
  const auto rest = static_cast<float>(std::log((1.0 - p) / (kVocabSize - 1)));
  for (std::size_t j = 0; j < kVocabSize; ++j) m(t, j) = rest;
  m(t, target) = static_cast<float>(std::log(p));
}

struct Fixture {
  ModelConfig c = testkit::tiny_config(FfnVariant::ReLU);
  WeightSet w = testkit::scrambled_weights(c);
  TokenSeq corpus = tokenize(testkit::prose(400, 3));
  ActivationStore store = collect(c, w, segment_tokens(tokenize(testkit::prose(300, 4)), 32), testkit::all_ffn_taps(c), 32);
};

}  // namespace

TEST(ScoreCorpus, UniformLogitsGiveVocabularySize) {
  const TokenSeq toks = testkit::random_tokens(300, 1);
  const auto s = score_corpus(toks, 64, [](std::span<const Token> w) { return Matrix(w.size(), kVocabSize); });
  EXPECT_NEAR(s.perplexity(), 256.0, 1e-9);
  EXPECT_EQ(s.tokens_scored, 300u - 5u);  // five windows, first token of each unscored
}

TEST(ScoreCorpus, CertainPredictionGivesOne) {
  const TokenSeq toks = testkit::random_tokens(100, 2);
  const auto s = score_corpus(toks, 32, [](std::span<const Token> w) {
    Matrix m(w.size(), kVocabSize);
    for (std::size_t t = 0; t + 1 < w.size(); ++t) set_row(m, t, w[t + 1], 1.0 - 1e-12);
    return m;
  });
  EXPECT_NEAR(s.perplexity(), 1.0, 1e-6);
}

TEST(ScoreCorpus, KnownProbabilitiesGiveGeometricMean) {
  // p = 1/2, 1/4, 1/8 for the three scored tokens: exp(mean nll) = 4.
  const TokenSeq toks{10, 20, 30, 40};
  const auto s = score_corpus(toks, 4, [](std::span<const Token> w) {
    Matrix m(w.size(), kVocabSize);
    const double ps[] = {0.5, 0.25, 0.125};
    for (std::size_t t = 0; t < 3; ++t) set_row(m, t, w[t + 1], ps[t]);
    return m;
  });
  EXPECT_EQ(s.tokens_scored, 3u);
  EXPECT_NEAR(s.perplexity(), 4.0, 1e-5);
}

TEST(ScoreCorpus, NonFiniteLogitsAreAnError) {
  const TokenSeq toks = testkit::random_tokens(10, 3);
  EXPECT_EQ(error_code([&] {
              score_corpus(toks, 10, [](std::span<const Token> w) {
                Matrix m(w.size(), kVocabSize);
                m(2, 7) = std::nanf("");
                return m;
              });
            }),
            ErrorCode::Evaluation);
  EXPECT_EQ(error_code([&] { score_corpus(TokenSeq{1}, 4, [](auto) { return Matrix(); }); }), ErrorCode::InvalidArgument);
}

TEST(Perplexity, ZeroThresholdsMatchDenseExactly) {
  Fixture f;
  const auto dense = perplexity(f.c, f.w, f.corpus);
  for (bool skip : {false, true}) {
    SparsityConfig cfg;
    cfg.table = compute_thresholds(f.store, 0.0, {Component::FFNHidden});
    cfg.skip_compute = skip;
    const auto r = perplexity(f.c, f.w, f.corpus, &cfg);
    EXPECT_EQ(r.mean_nll, dense.mean_nll);
    EXPECT_EQ(r.achieved_sparsity_mean(), 0.0);
  }
  EXPECT_GT(dense.perplexity, 1.0);
  EXPECT_EQ(dense.tokens_scored, f.corpus.size() - (f.corpus.size() + 31) / 32);
}

TEST(Perplexity, InvariantToWindowOrder) {
  // Windows are scored independently, so shuffling whole windows leaves the
  // total unchanged up to summation order.
  Fixture f;
  auto windows = segment_tokens(f.corpus, 32);
  windows.pop_back();  // keep full windows only
  TokenSeq ordered, shuffled;
  for (const auto& w : windows) ordered.insert(ordered.end(), w.begin(), w.end());
  Rng rng = Rng::stream(5, "perm");
  for (std::size_t i = windows.size(); i > 1; --i) std::swap(windows[i - 1], windows[rng.below(i)]);
  for (const auto& w : windows) shuffled.insert(shuffled.end(), w.begin(), w.end());
  const auto a = perplexity(f.c, f.w, ordered, nullptr, 32);
  const auto b = perplexity(f.c, f.w, shuffled, nullptr, 32);
  EXPECT_EQ(a.tokens_scored, b.tokens_scored);
  EXPECT_NEAR(a.mean_nll, b.mean_nll, 1e-12);
}

TEST(Perplexity, EnforcementIsReportedPerHook) {
  Fixture f;
  SparsityConfig cfg;
  cfg.table = compute_thresholds(f.store, 0.6, {Component::FFNHidden});
  const auto r = perplexity(f.c, f.w, f.corpus, &cfg);
  ASSERT_EQ(r.achieved.size(), f.c.n_layers);
  for (const auto& [hp, cnt] : r.achieved) {
    EXPECT_EQ(hp.component, Component::FFNHidden);
    EXPECT_GT(cnt.fraction(), 0.3);
  }
  const auto j = to_json(r);
  EXPECT_EQ(j["alpha"], 0.6);
  EXPECT_EQ(j["achieved_sparsity"].size(), f.c.n_layers);
  EXPECT_EQ(j["model_hash"], model_fingerprint(f.c, f.w));
}

TEST(Sweep, RowsFollowAlphasAndStartDense) {
  Fixture f;
  const std::vector<double> alphas{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  const auto s = sweep(f.c, f.w, f.store, f.corpus, alphas);
  ASSERT_EQ(s.rows.size(), alphas.size());
  EXPECT_EQ(s.rows[0].report.mean_nll, perplexity(f.c, f.w, f.corpus).mean_nll);
  for (std::size_t i = 0; i < alphas.size(); ++i) EXPECT_EQ(s.rows[i].alpha, alphas[i]);
  EXPECT_GE(s.rows.back().report.perplexity, s.rows.front().report.perplexity);
  const std::string csv = sweep_csv(s, false);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  EXPECT_TRUE(csv.starts_with("alpha,ppl,achieved_sparsity_mean,wall_ms\n0,"));
  EXPECT_EQ(sweep_csv(s, false), sweep_csv(sweep(f.c, f.w, f.store, f.corpus, alphas), false));
  for (const auto& row : to_json(s, false)["rows"]) EXPECT_EQ(row["wall_ms"], 0.0);
}

TEST(Sweep, FullAlphaAfterDenseIsNoBetter) {
  Fixture f;
  const auto s = sweep(f.c, f.w, f.store, f.corpus, {0.0, 1.0});
  EXPECT_GE(s.rows[1].report.perplexity, s.rows[0].report.perplexity);
  EXPECT_NEAR(s.rows[1].report.achieved_sparsity_mean(), 1.0, 0.05);
}

TEST(Sweep, RejectsBadInputs) {
  Fixture f;
  EXPECT_EQ(error_code([&] { sweep(f.c, f.w, f.store, f.corpus, {1.0}); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(error_code([&] { sweep(f.c, f.w, f.store, f.corpus, {0.0, 0.5, 0.5}); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(error_code([&] { sweep(f.c, f.w, f.store, f.corpus, {0.0, 1.5}); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(error_code([&] { sweep(f.c, f.w, f.store, f.corpus, {0.0}, {Component::AttnOut}); }),
            ErrorCode::InvalidArgument);
  ModelConfig other = f.c;
  other.seed = 99;
  const WeightSet w2 = testkit::scrambled_weights(other);
  EXPECT_EQ(error_code([&] { sweep(other, w2, f.store, f.corpus, {0.0}); }), ErrorCode::HashMismatch);
}
