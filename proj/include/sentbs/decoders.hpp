// Copyright (c) 2026, The sentbs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/*
 * Sentence-level decoding sub-methods.
 *
 * Each decoder extends a prefix by exactly one sentence: it stops at the
 * first sentence-terminal token, or cuts the sentence at
 * DecodeLimits::max_sentence_tokens and marks the option forced_boundary.
 * Ranking of finished sentences inside a decoder uses the mean per-token
 * log-likelihood.
 */

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "sentbs/classify.hpp"
#include "sentbs/core.hpp"
#include "sentbs/lm.hpp"
#include "sentbs/random.hpp"

namespace sentbs {

enum class DecodeMethod { Beam, BeamSampling, Nucleus };

inline std::string_view to_string(DecodeMethod m) {
  switch (m) {
    case DecodeMethod::Beam: return "beam";
    case DecodeMethod::BeamSampling: return "beam-sampling";
    case DecodeMethod::Nucleus: return "nucleus";
  }
  return "?";
}

struct SentenceOption {
  TokenSeq tokens;
  std::vector<double> per_token_loglik;
  DecodeMethod method = DecodeMethod::Beam;
  std::uint64_t sub_seed = 0;
  bool ends_with_eos = false;
  bool forced_boundary = false;

  double mean_loglik() const { return mean_of(per_token_loglik); }

  friend bool operator==(const SentenceOption&, const SentenceOption&) = default;
};

inline std::string detok(const SentenceOption& option, const Vocabulary& vocab) { return detok(option.tokens, vocab); }

struct MixAllocation {
  int beam_count = 0;
  int beam_sampling_count = 0;
  int nucleus_count = 0;

  int total() const { return beam_count + beam_sampling_count + nucleus_count; }
  friend bool operator==(const MixAllocation&, const MixAllocation&) = default;
};

/// Splits k sentence options across sub-decoders. The three-way mix gives
/// beam sampling floor(k/2) options.
inline MixAllocation plan_mix(MixStrategy strategy, int k) {
  if (k < 1) throw Error(ErrorCode::InvalidK, "k must be positive");
  switch (strategy) {
    case MixStrategy::NucleusOnly:
      return {0, 0, k};
    case MixStrategy::BeamSamplingOnly:
      return {0, k, 0};
    case MixStrategy::BeamPlusNucleus:
      if (k < 2) throw Error(ErrorCode::InvalidK, "beam+nucleus needs k >= 2");
      return {1, 0, k - 1};
    case MixStrategy::BeamPlusBeamSamplingPlusNucleus:
      if (k < 3) throw Error(ErrorCode::InvalidK, "beam+beam-sampling+nucleus needs k >= 3");
      return {1, k / 2, k - 1 - k / 2};
    case MixStrategy::BeamOnly:
      if (k != 1) throw Error(ErrorCode::InvalidK, "beam-only mix needs k == 1");
      return {1, 0, 0};
  }
  throw Error(ErrorCode::InvalidK, "unknown strategy");
}

struct DecodeLimits {
  int max_sentence_tokens = 64;
  /// Forbid eos anywhere in the sentence.
  bool mask_eos = false;
  /// Forbid eos as the first token (an empty sentence).
  bool mask_leading_eos = false;
};

/// The model distribution at one decoding position with the limits' eos mask applied.
inline LogDist step_distribution(const LanguageModel& lm, const SourceInput& source, std::span<const TokenId> context,
                                 std::size_t position_in_sentence, const DecodeLimits& limits) {
  LogDist dist = lm.next_token_logprobs(source, context);
  if (dist.size() != lm.vocabulary().size())
    throw Error(ErrorCode::VocabMismatch, "distribution size differs from vocabulary size");
  if (limits.mask_eos || (limits.mask_leading_eos && position_in_sentence == 0))
    mask_and_renormalize(dist, lm.vocabulary().eos());
  return dist;
}

/// Token ids sorted by descending probability, ties by ascending id.
inline std::vector<TokenId> rank_tokens(const LogDist& dist) {
  std::vector<TokenId> order(dist.size());
  std::iota(order.begin(), order.end(), TokenId{0});
  std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) {
    return dist[static_cast<std::size_t>(a)] > dist[static_cast<std::size_t>(b)];
  });
  return order;
}

struct Nucleus {
  std::vector<TokenId> tokens;  // in rank order
  double mass = 0.0;
};

/// Smallest probability-ranked prefix whose cumulative mass reaches top_p.
inline Nucleus nucleus_of(const LogDist& dist, double top_p) {
  if (!(top_p > 0.0 && top_p <= 1.0)) throw Error(ErrorCode::InvalidArgument, "top_p must lie in (0, 1]");
  Nucleus out;
  for (TokenId t : rank_tokens(dist)) {
    const double p = std::exp(dist[static_cast<std::size_t>(t)]);
    if (p <= 0.0) break;
    out.tokens.push_back(t);
    out.mass += p;
    // Rounding slack so top_p = 1 does not drag in every zero-mass tail token.
    if (out.mass >= top_p - 1e-12) break;
  }
  return out;
}

namespace detail {

struct Partial {
  TokenSeq tokens;
  std::vector<double> logliks;
  double cum = 0.0;

  double mean() const { return cum / static_cast<double>(tokens.size()); }
};

// Higher cumulative score first, then lexicographic token order.
inline bool by_cumulative(const Partial& a, const Partial& b) {
  if (a.cum != b.cum) return a.cum > b.cum;
  return a.tokens < b.tokens;
}

inline bool by_mean(const Partial& a, const Partial& b) {
  const double ma = a.mean(), mb = b.mean();
  if (ma != mb) return ma > mb;
  return a.tokens < b.tokens;
}

inline SentenceOption to_option(Partial p, DecodeMethod method, std::uint64_t seed, const Vocabulary& vocab,
                                bool forced) {
  SentenceOption o;
  o.ends_with_eos = !p.tokens.empty() && p.tokens.back() == vocab.eos();
  o.tokens = std::move(p.tokens);
  o.per_token_loglik = std::move(p.logliks);
  o.method = method;
  o.sub_seed = seed;
  o.forced_boundary = forced;
  return o;
}

inline TokenSeq concat(std::span<const TokenId> a, std::span<const TokenId> b) {
  TokenSeq out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace detail

/// Deterministic sentence-level beam search. Each live item is expanded over
/// the whole vocabulary; terminal expansions become finished sentences and
/// the best beam_size non-terminal expansions (by cumulative log-likelihood)
/// stay live. Returns the finished sentence with the best mean
/// log-likelihood, or the best partial at the depth cap.
inline SentenceOption beam_sentence(const LanguageModel& lm, const SourceInput& source,
                                    std::span<const TokenId> prefix, int beam_size, const DecodeLimits& limits) {
  if (beam_size < 1) throw Error(ErrorCode::InvalidArgument, "beam_size must be >= 1");
  const Vocabulary& vocab = lm.vocabulary();
  const std::size_t width = static_cast<std::size_t>(beam_size);
  std::vector<detail::Partial> live{detail::Partial{}};
  std::optional<detail::Partial> best_finished;
  std::vector<detail::Partial> frontier;

  struct Expansion {
    double cum;
    std::size_t parent;
    TokenId token;
  };

  for (int depth = 0; depth < limits.max_sentence_tokens && !live.empty(); ++depth) {
    std::vector<Expansion> next;
    std::vector<LogDist> dists;
    dists.reserve(live.size());
    for (std::size_t i = 0; i < live.size(); ++i) {
      const auto& item = live[i];
      dists.push_back(step_distribution(lm, source, detail::concat(prefix, item.tokens),
                                        static_cast<std::size_t>(depth), limits));
      const LogDist& dist = dists.back();
      for (std::size_t t = 0; t < dist.size(); ++t) {
        if (dist[t] == kNegInf) continue;
        const auto tok = static_cast<TokenId>(t);
        const double cum = item.cum + dist[t];
        if (!vocab.is_terminal(tok)) {
          next.push_back({cum, i, tok});
          continue;
        }
        const double mean = cum / static_cast<double>(item.tokens.size() + 1);
        if (best_finished) {
          const double bm = best_finished->mean();
          if (mean < bm) continue;
          if (mean == bm) {
            TokenSeq toks = item.tokens;
            toks.push_back(tok);
            if (!(toks < best_finished->tokens)) continue;
          }
        }
        detail::Partial cand = item;
        cand.tokens.push_back(tok);
        cand.logliks.push_back(dist[t]);
        cand.cum = cum;
        best_finished = std::move(cand);
      }
    }
    // Same order as by_cumulative: live items share a length, so comparing
    // parent tokens then the new token is the lexicographic order.
    const auto before = [&](const Expansion& a, const Expansion& b) {
      if (a.cum != b.cum) return a.cum > b.cum;
      if (a.parent != b.parent) return live[a.parent].tokens < live[b.parent].tokens;
      return a.token < b.token;
    };
    const std::size_t keep = std::min(width, next.size());
    std::partial_sort(next.begin(), next.begin() + static_cast<std::ptrdiff_t>(keep), next.end(), before);
    std::vector<detail::Partial> kept;
    kept.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) {
      detail::Partial cand = live[next[i].parent];
      cand.tokens.push_back(next[i].token);
      cand.logliks.push_back(dists[next[i].parent][static_cast<std::size_t>(next[i].token)]);
      cand.cum = next[i].cum;
      kept.push_back(std::move(cand));
    }
    live = std::move(kept);
    frontier = live;
  }

  if (best_finished) return detail::to_option(std::move(*best_finished), DecodeMethod::Beam, 0, vocab, false);
  if (frontier.empty()) throw Error(ErrorCode::BackendFailure, "beam search produced no candidates");
  auto best = std::min_element(frontier.begin(), frontier.end(), detail::by_mean);
  return detail::to_option(std::move(*best), DecodeMethod::Beam, 0, vocab, true);
}

/// Top-p sampling of one sentence. Recorded log-likelihoods are the model's
/// (masked) token log-probs, not the renormalized nucleus ones.
inline SentenceOption nucleus_sentence(const LanguageModel& lm, const SourceInput& source,
                                       std::span<const TokenId> prefix, double top_p, std::uint64_t seed,
                                       const DecodeLimits& limits) {
  const Vocabulary& vocab = lm.vocabulary();
  Rng rng(seed);
  detail::Partial p;
  TokenSeq context(prefix.begin(), prefix.end());
  for (int depth = 0; depth < limits.max_sentence_tokens; ++depth) {
    const LogDist dist = step_distribution(lm, source, context, static_cast<std::size_t>(depth), limits);
    const Nucleus nuc = nucleus_of(dist, top_p);
    const double u = rng.uniform() * nuc.mass;
    double acc = 0.0;
    TokenId pick = nuc.tokens.back();
    for (TokenId t : nuc.tokens) {
      acc += std::exp(dist[static_cast<std::size_t>(t)]);
      if (u < acc) {
        pick = t;
        break;
      }
    }
    p.tokens.push_back(pick);
    p.logliks.push_back(dist[static_cast<std::size_t>(pick)]);
    p.cum += dist[static_cast<std::size_t>(pick)];
    context.push_back(pick);
    if (vocab.is_terminal(pick)) return detail::to_option(std::move(p), DecodeMethod::Nucleus, seed, vocab, false);
  }
  return detail::to_option(std::move(p), DecodeMethod::Nucleus, seed, vocab, true);
}

/// Stochastic beam: every live item draws 2 * beam_size distinct tokens
/// (Gumbel top-k, i.e. sampling without replacement); the pooled expansions
/// are cut to the best beam_size by cumulative log-likelihood, and those
/// ending in a terminal token are set aside as finished. Returns up to
/// beam_size options ranked by mean log-likelihood, padded with the best
/// forced-boundary partials when too few finish.
inline std::vector<SentenceOption> beam_sample_sentence(const LanguageModel& lm, const SourceInput& source,
                                                        std::span<const TokenId> prefix, int beam_size,
                                                        std::uint64_t seed, const DecodeLimits& limits) {
  if (beam_size < 1) throw Error(ErrorCode::InvalidArgument, "beam_size must be >= 1");
  const Vocabulary& vocab = lm.vocabulary();
  const std::size_t width = static_cast<std::size_t>(beam_size);
  Rng rng(seed);
  std::vector<detail::Partial> live{detail::Partial{}};
  std::vector<detail::Partial> finished;

  for (int depth = 0; depth < limits.max_sentence_tokens && !live.empty() && finished.size() < width; ++depth) {
    std::vector<detail::Partial> pool;
    for (const auto& item : live) {
      const LogDist dist = step_distribution(lm, source, detail::concat(prefix, item.tokens),
                                             static_cast<std::size_t>(depth), limits);
      std::vector<std::pair<double, TokenId>> keyed;
      keyed.reserve(dist.size());
      for (std::size_t t = 0; t < dist.size(); ++t) {
        // Draw for every token so the stream position does not depend on masking.
        const double g = rng.gumbel();
        if (dist[t] != kNegInf) keyed.emplace_back(dist[t] + g, static_cast<TokenId>(t));
      }
      const std::size_t take = std::min(keyed.size(), 2 * width);
      std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(take), keyed.end(),
                        [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
      for (std::size_t i = 0; i < take; ++i) {
        const auto t = static_cast<std::size_t>(keyed[i].second);
        detail::Partial cand = item;
        cand.tokens.push_back(keyed[i].second);
        cand.logliks.push_back(dist[t]);
        cand.cum += dist[t];
        pool.push_back(std::move(cand));
      }
    }
    std::sort(pool.begin(), pool.end(), detail::by_cumulative);
    const std::size_t keep = std::min(pool.size(), width - finished.size());
    live.clear();
    for (std::size_t i = 0; i < keep; ++i) {
      if (vocab.is_terminal(pool[i].tokens.back())) finished.push_back(std::move(pool[i]));
      else live.push_back(std::move(pool[i]));
    }
  }

  std::sort(finished.begin(), finished.end(), detail::by_mean);
  std::vector<SentenceOption> out;
  for (auto& f : finished) out.push_back(detail::to_option(std::move(f), DecodeMethod::BeamSampling, seed, vocab, false));
  std::sort(live.begin(), live.end(), detail::by_mean);
  for (auto& p : live) {
    if (out.size() >= width) break;
    out.push_back(detail::to_option(std::move(p), DecodeMethod::BeamSampling, seed, vocab, true));
  }
  if (out.empty()) throw Error(ErrorCode::BackendFailure, "beam sampling produced no candidates");
  return out;
}

}  // namespace sentbs
