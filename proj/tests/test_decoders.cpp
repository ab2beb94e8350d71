#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>

#include "sentbs/decoders.hpp"
#include "test_util.hpp"

using namespace sentbs;
using testutil::TableLM;

namespace {

const SourceInput kSrc{"source", "control"};

struct Enumerated {
  TokenSeq tokens;
  double mean = 0.0;
  bool found = false;
};

// Every terminated continuation of length <= max_len, best mean first, ties by tokens.
Enumerated exhaustive_best(const LanguageModel& lm, const TokenSeq& prefix, std::size_t max_len) {
  const Vocabulary& v = lm.vocabulary();
  Enumerated best;
  TokenSeq cur;
  std::function<void(double)> walk = [&](double cum) {
    if (!cur.empty() && v.is_terminal(cur.back())) {
      const double mean = cum / static_cast<double>(cur.size());
      if (!best.found || mean > best.mean || (mean == best.mean && cur < best.tokens)) best = {cur, mean, true};
      return;
    }
    if (cur.size() == max_len) return;
    TokenSeq ctx = prefix;
    ctx.insert(ctx.end(), cur.begin(), cur.end());
    const LogDist d = lm.next_token_logprobs(kSrc, ctx);
    for (std::size_t t = 0; t < d.size(); ++t) {
      if (d[t] == kNegInf) continue;
      cur.push_back(static_cast<TokenId>(t));
      walk(cum + d[t]);
      cur.pop_back();
    }
  };
  walk(0.0);
  return best;
}

// Independent nucleus: sort probabilities, accumulate until top_p.
std::set<TokenId> nucleus_oracle(const LogDist& d, double top_p) {
  std::vector<std::pair<double, TokenId>> ps;
  for (std::size_t t = 0; t < d.size(); ++t) ps.emplace_back(std::exp(d[t]), static_cast<TokenId>(t));
  std::sort(ps.begin(), ps.end(), [](auto a, auto b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  std::set<TokenId> out;
  double mass = 0.0;
  for (auto [p, t] : ps) {
    if (p <= 0.0) break;
    out.insert(t);
    mass += p;
    if (mass >= top_p - 1e-12) break;
  }
  return out;
}

// One token carries 0.99 at every step: a b c . then eos.
TableLM peaked_lm() {
  auto v = testutil::six_vocab();
  return TableLM(v, [](std::span<const TokenId> prefix) {
    static const TokenId path[] = {2, 3, 4, 1, 0};
    const TokenId want = path[std::min<std::size_t>(prefix.size(), 4)];
    std::vector<double> p(6, 0.01 / 5.0);
    p[static_cast<std::size_t>(want)] = 0.99;
    return testutil::log_of(p);
  });
}

}  // namespace

TEST(PlanMix, Table) {
  EXPECT_EQ(plan_mix(MixStrategy::BeamPlusBeamSamplingPlusNucleus, 7), (MixAllocation{1, 3, 3}));
  EXPECT_EQ(plan_mix(MixStrategy::BeamPlusNucleus, 4), (MixAllocation{1, 0, 3}));
  EXPECT_EQ(plan_mix(MixStrategy::NucleusOnly, 5), (MixAllocation{0, 0, 5}));
  EXPECT_EQ(plan_mix(MixStrategy::BeamSamplingOnly, 6), (MixAllocation{0, 6, 0}));
  EXPECT_EQ(plan_mix(MixStrategy::BeamOnly, 1), (MixAllocation{1, 0, 0}));
}

TEST(PlanMix, AllocationsSumToK) {
  for (auto m : {MixStrategy::NucleusOnly, MixStrategy::BeamSamplingOnly, MixStrategy::BeamPlusNucleus,
                 MixStrategy::BeamPlusBeamSamplingPlusNucleus}) {
    for (int k = 3; k <= 16; ++k) {
      const auto a = plan_mix(m, k);
      EXPECT_EQ(a.total(), k);
      EXPECT_GE(a.beam_sampling_count, 0);
      EXPECT_GE(a.nucleus_count, 0);
    }
  }
}

TEST(PlanMix, InvalidK) {
  const auto code = [](MixStrategy m, int k) {
    try {
      plan_mix(m, k);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  EXPECT_EQ(code(MixStrategy::NucleusOnly, 0), ErrorCode::InvalidK);
  EXPECT_EQ(code(MixStrategy::BeamPlusNucleus, 1), ErrorCode::InvalidK);
  EXPECT_EQ(code(MixStrategy::BeamPlusBeamSamplingPlusNucleus, 2), ErrorCode::InvalidK);
  EXPECT_EQ(code(MixStrategy::BeamOnly, 2), ErrorCode::InvalidK);
}

TEST(BeamSentence, GreedyOnPeakedModel) {
  const auto lm = peaked_lm();
  const auto b1 = beam_sentence(lm, kSrc, TokenSeq{}, 1, {});
  const auto b4 = beam_sentence(lm, kSrc, TokenSeq{}, 4, {});
  EXPECT_EQ(b1.tokens, (TokenSeq{2, 3, 4, 1}));
  EXPECT_EQ(b1.tokens, b4.tokens);
  EXPECT_FALSE(b1.forced_boundary);
  EXPECT_FALSE(b1.ends_with_eos);
}

TEST(BeamSentence, OnlyEosAvailable) {
  auto v = testutil::six_vocab();
  TableLM lm(v, [](std::span<const TokenId>) { return testutil::log_of({1, 0, 0, 0, 0, 0}); });
  const auto o = beam_sentence(lm, kSrc, TokenSeq{2}, 4, {});
  EXPECT_EQ(o.tokens, (TokenSeq{0}));
  EXPECT_TRUE(o.ends_with_eos);
}

TEST(BeamSentence, ForcedBoundaryAtDepthCap) {
  auto v = testutil::six_vocab();
  TableLM lm(v, [](std::span<const TokenId>) { return testutil::log_of({0, 0, 0.5, 0.5, 0, 0}); });
  DecodeLimits lim;
  lim.max_sentence_tokens = 3;
  const auto o = beam_sentence(lm, kSrc, TokenSeq{}, 2, lim);
  EXPECT_TRUE(o.forced_boundary);
  EXPECT_EQ(o.tokens.size(), 3u);
}

// Without pruning (width covers every live prefix) beam search is exhaustive.
TEST(BeamSentence, EqualsExhaustiveWhenNothingIsPruned) {
  const auto v = testutil::six_vocab();
  DecodeLimits lim;
  lim.max_sentence_tokens = 3;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto lm = testutil::random_toy_lm(v, seed, 3, 0.3);
    for (const TokenSeq& prefix : {TokenSeq{}, TokenSeq{2}, TokenSeq{3, 4}}) {
      const auto oracle = exhaustive_best(lm, prefix, 3);
      const auto got = beam_sentence(lm, kSrc, prefix, 16, lim);
      ASSERT_TRUE(oracle.found);
      EXPECT_EQ(got.tokens, oracle.tokens) << "seed " << seed;
      EXPECT_NEAR(got.mean_loglik(), oracle.mean, 1e-12);
    }
  }
}

// Width 4 prunes 2-token prefixes, so it can only match or trail the
// exhaustive optimum; it matches on the large majority of instances.
TEST(BeamSentence, WidthFourNeverBeatsExhaustive) {
  const auto v = testutil::six_vocab();
  DecodeLimits lim;
  lim.max_sentence_tokens = 3;
  int agree = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto lm = testutil::random_toy_lm(v, seed, 3, 0.3);
    for (const TokenSeq& prefix : {TokenSeq{}, TokenSeq{2}, TokenSeq{3, 4}}) {
      const auto oracle = exhaustive_best(lm, prefix, 3);
      const auto got = beam_sentence(lm, kSrc, prefix, 4, lim);
      EXPECT_LE(got.mean_loglik(), oracle.mean + 1e-12);
      agree += got.tokens == oracle.tokens;
      ++total;
    }
  }
  EXPECT_GE(agree, total * 9 / 10);
}

TEST(BeamSentence, RecordedLogliksAreModelLogprobs) {
  const auto v = testutil::six_vocab();
  const auto lm = testutil::random_toy_lm(v, 12, 3, 0.3);
  const TokenSeq prefix{2, 1};
  const auto o = beam_sentence(lm, kSrc, prefix, 4, {});
  TokenSeq ctx = prefix;
  for (std::size_t i = 0; i < o.tokens.size(); ++i) {
    EXPECT_DOUBLE_EQ(o.per_token_loglik[i], lm.next_token_logprobs(kSrc, ctx)[static_cast<std::size_t>(o.tokens[i])]);
    ctx.push_back(o.tokens[i]);
  }
}

TEST(Nucleus, HandComputedCutoff) {
  const LogDist d = testutil::log_of({0.5, 0.3, 0.15, 0.05});
  const auto n = nucleus_of(d, 0.9);
  EXPECT_EQ(n.tokens, (std::vector<TokenId>{0, 1, 2}));
  EXPECT_NEAR(n.mass, 0.95, 1e-12);
  const auto full = nucleus_of(d, 1.0);
  EXPECT_EQ(full.tokens.size(), 4u);
  EXPECT_NEAR(full.mass, 1.0, 1e-12);
}

TEST(Nucleus, FourthTokenNeverSampled) {
  // <eos> . a b
  auto v4 = Vocabulary::from_words({"a", "b"}, {"."});
  TableLM lm(v4, [](std::span<const TokenId>) { return testutil::log_of({0.05, 0.3, 0.5, 0.15}); });
  std::vector<int> hist(4, 0);
  DecodeLimits lim;
  lim.max_sentence_tokens = 1;
  for (std::uint64_t seed = 0; seed < 4000; ++seed) {
    const auto o = nucleus_sentence(lm, kSrc, TokenSeq{}, 0.9, seed, lim);
    ++hist[static_cast<std::size_t>(o.tokens[0])];
  }
  EXPECT_EQ(hist[0], 0);
  // Renormalized by 0.95: 0.5/0.95, 0.3/0.95, 0.15/0.95.
  EXPECT_NEAR(hist[2] / 4000.0, 0.5 / 0.95, 0.03);
  EXPECT_NEAR(hist[1] / 4000.0, 0.3 / 0.95, 0.03);
  EXPECT_NEAR(hist[3] / 4000.0, 0.15 / 0.95, 0.03);
}

TEST(Nucleus, SampledTokensStayInsideNucleus) {
  const auto v = testutil::six_vocab();
  std::size_t steps = 0, violations = 0;
  for (std::uint64_t seed = 0; steps < 10000; ++seed) {
    const auto lm = testutil::random_toy_lm(v, seed % 17, 3, 0.2);
    DecodeLimits lim;
    lim.max_sentence_tokens = 8;
    lim.mask_leading_eos = seed % 2 == 0;
    const TokenSeq prefix{static_cast<TokenId>(2 + seed % 4)};
    const auto o = nucleus_sentence(lm, kSrc, prefix, 0.9, seed, lim);
    ASSERT_LE(o.tokens.size(), 8u);
    ASSERT_TRUE(v.is_terminal(o.tokens.back()) != o.forced_boundary);
    TokenSeq ctx = prefix;
    for (std::size_t i = 0; i < o.tokens.size(); ++i, ++steps) {
      const LogDist d = step_distribution(lm, kSrc, ctx, i, lim);
      if (!nucleus_oracle(d, 0.9).count(o.tokens[i])) ++violations;
      ctx.push_back(o.tokens[i]);
    }
  }
  EXPECT_GE(steps, 10000u);
  EXPECT_EQ(violations, 0u);
}

TEST(Nucleus, DeterministicPerSeed) {
  const auto v = testutil::six_vocab();
  const auto lm = testutil::random_toy_lm(v, 2);
  const auto a = nucleus_sentence(lm, kSrc, TokenSeq{3}, 0.9, 77, {});
  const auto b = nucleus_sentence(lm, kSrc, TokenSeq{3}, 0.9, 77, {});
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.method, DecodeMethod::Nucleus);
  EXPECT_EQ(a.sub_seed, 77u);
}

TEST(Nucleus, MaskedEosNeverAppears) {
  const auto v = testutil::six_vocab();
  const auto lm = testutil::random_toy_lm(v, 6, 2, 0.5);
  DecodeLimits lim;
  lim.mask_eos = true;
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const auto o = nucleus_sentence(lm, kSrc, TokenSeq{}, 1.0, seed, lim);
    for (TokenId t : o.tokens) EXPECT_NE(t, v.eos());
  }
}

TEST(BeamSampling, WidthOneFindsGreedyOnPeakedModel) {
  const auto lm = peaked_lm();
  int matches = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto opts = beam_sample_sentence(lm, kSrc, TokenSeq{}, 1, seed, {});
    ASSERT_EQ(opts.size(), 1u);
    matches += opts[0].tokens == TokenSeq{2, 3, 4, 1};
  }
  EXPECT_GE(matches, 95);
}

TEST(BeamSampling, WidthFourReturnsFourOptions) {
  const auto v = testutil::six_vocab();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto lm = testutil::random_toy_lm(v, seed, 3, 0.3);
    const auto opts = beam_sample_sentence(lm, kSrc, TokenSeq{}, 4, seed, {});
    ASSERT_EQ(opts.size(), 4u);
    for (std::size_t i = 0; i < opts.size(); ++i) {
      EXPECT_TRUE(v.is_terminal(opts[i].tokens.back()) != opts[i].forced_boundary);
      EXPECT_EQ(opts[i].method, DecodeMethod::BeamSampling);
    }
    for (std::size_t i = 1; i < opts.size(); ++i) {
      if (opts[i].forced_boundary == opts[i - 1].forced_boundary)
        EXPECT_LE(opts[i].mean_loglik(), opts[i - 1].mean_loglik());
    }
  }
}

TEST(BeamSampling, DeterministicPerSeed) {
  const auto v = testutil::six_vocab();
  const auto lm = testutil::random_toy_lm(v, 9);
  EXPECT_EQ(beam_sample_sentence(lm, kSrc, TokenSeq{2}, 4, 5, {}), beam_sample_sentence(lm, kSrc, TokenSeq{2}, 4, 5, {}));
}

TEST(Decoders, RespectTokenCap) {
  const auto v = testutil::six_vocab();
  auto lm = TableLM(v, [](std::span<const TokenId>) { return testutil::log_of({0.01, 0.01, 0.49, 0.49, 0, 0}); });
  DecodeLimits lim;
  lim.max_sentence_tokens = 2;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    EXPECT_LE(nucleus_sentence(lm, kSrc, TokenSeq{}, 0.9, seed, lim).tokens.size(), 2u);
    for (const auto& o : beam_sample_sentence(lm, kSrc, TokenSeq{}, 3, seed, lim)) EXPECT_LE(o.tokens.size(), 2u);
  }
  EXPECT_LE(beam_sentence(lm, kSrc, TokenSeq{}, 4, lim).tokens.size(), 2u);
}
