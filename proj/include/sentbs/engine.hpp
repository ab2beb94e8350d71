// Copyright (c) 2026, The sentbs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/*
 * Sentence-level beam search.
 *
 * Each step expands every surviving prompt with k sentence options drawn
 * from a mix of sub-decoders, rescores the extended sequences (full-sequence
 * mean log-likelihood plus classifier log-probabilities of the sentence
 * labels), and keeps the n best as prompts for the next step.
 *
 * Sent-Ctrl runs exactly |control| steps, sentence i carrying control[i].
 * Seg-Ctrl lets each sentence carry the current or the next control label
 * (whichever the classifier prefers) and stops when an eos-bearing option
 * arrives while the last label is active, or at max_sentences.
 *
 * Candidate order is total and deterministic: combined score descending,
 * then prompt index, option index and token ids ascending. Sub-seeds are
 * derived from (seed, step, prompt, option), so the result does not depend
 * on how many worker threads run the expansions.
 */

#include <algorithm>
#include <cstdint>
#include <future>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "sentbs/classify.hpp"
#include "sentbs/core.hpp"
#include "sentbs/decoders.hpp"
#include "sentbs/lm.hpp"
#include "sentbs/random.hpp"

namespace sentbs {

/// Sum of the normalized log-likelihood and the classifier term(s).
inline double combined_score(double norm_loglik, std::span<const double> sentence_class_logprobs,
                             Accumulation accumulation, ClassScoreScale scale = ClassScoreScale::LogProb) {
  if (sentence_class_logprobs.empty()) throw Error(ErrorCode::EmptySentenceList, "no sentence scores to combine");
  const auto term = [scale](double lp) { return scale == ClassScoreScale::LogProb ? lp : std::exp(lp); };
  if (accumulation == Accumulation::LatestSentence) return norm_loglik + term(sentence_class_logprobs.back());
  double sum = 0.0;
  for (double lp : sentence_class_logprobs) sum += term(lp);
  return norm_loglik + sum;
}

/// Recomputes a hypothesis' score from its parts.
inline double recompute_combined(const Hypothesis& h, Accumulation accumulation,
                                 ClassScoreScale scale = ClassScoreScale::LogProb) {
  const auto lps = h.class_logprobs();
  return combined_score(mean_of(h.per_token_loglik), lps, accumulation, scale);
}

struct PromptState {
  Hypothesis hypothesis;
  /// Active control position. Equals the sentence count in Sent-Ctrl.
  std::size_t seg_pointer = 0;
};

struct Candidate {
  std::size_t prompt_idx = 0;
  std::size_t option_idx = 0;
  DecodeMethod method = DecodeMethod::Beam;
  std::uint64_t sub_seed = 0;
  /// Sentence tokens added by this candidate (empty for carried hypotheses).
  TokenSeq added;
  /// A finished hypothesis re-entered unchanged from the previous step.
  bool carried = false;
  PromptState state;
};

struct TraceCandidate {
  std::size_t prompt_idx = 0;
  std::size_t option_idx = 0;
  std::string method;
  bool carried = false;
  std::string sentence;
  std::string label;
  double class_logprob = 0.0;
  double norm_loglik = 0.0;
  double combined_score = 0.0;
  bool finished = false;
  std::size_t seg_pointer = 0;
};

struct StepTrace {
  std::size_t step = 0;
  std::vector<TraceCandidate> candidates;  // in the deterministic candidate order
  std::vector<std::size_t> survivors;      // indices into candidates, best first

  json to_json() const {
    json cands = json::array();
    for (const auto& c : candidates) {
      cands.push_back(json{{"prompt", c.prompt_idx},
                           {"option", c.option_idx},
                           {"method", c.method},
                           {"carried", c.carried},
                           {"sentence", c.sentence},
                           {"label", c.label},
                           {"class_logprob", c.class_logprob},
                           {"norm_loglik", c.norm_loglik},
                           {"combined_score", c.combined_score},
                           {"finished", c.finished},
                           {"seg_pointer", c.seg_pointer}});
    }
    return json{{"step", step}, {"candidates", std::move(cands)}, {"survivors", survivors}};
  }
};

struct GenerationResult {
  Hypothesis hypothesis;
  std::vector<StepTrace> trace;
  /// Every candidate hypothesis scored during the run (only kept on request).
  std::vector<Hypothesis> scored;
};

struct EngineOptions {
  /// Threads used to expand prompts in parallel (1 = sequential).
  int workers = 1;
  bool keep_trace = false;
  bool keep_scored = false;
};

inline std::size_t effective_max_sentences(const ControlSequence& control, const GenParams& params) {
  if (control.mode == ControlMode::SentCtrl) return control.size();
  return params.max_sentences > 0 ? static_cast<std::size_t>(params.max_sentences) : 2 * control.size();
}

/// Everything one expansion needs, bundled so the signatures stay short.
struct EngineContext {
  const LanguageModel& lm;
  const SentenceClassifier& clf;
  const SourceInput& source;
  const ControlSequence& control;
  const GenParams& params;
};

inline bool candidate_before(const Candidate& a, const Candidate& b) {
  const double sa = a.state.hypothesis.combined_score, sb = b.state.hypothesis.combined_score;
  if (sa != sb) return sa > sb;
  if (a.prompt_idx != b.prompt_idx) return a.prompt_idx < b.prompt_idx;
  if (a.option_idx != b.option_idx) return a.option_idx < b.option_idx;
  return a.state.hypothesis.tokens < b.state.hypothesis.tokens;
}

namespace detail {

// Runs the sub-decoders of one mix allocation; option order is beam,
// beam sampling, nucleus.
inline std::vector<SentenceOption> generate_options(const EngineContext& ctx, std::span<const TokenId> prefix,
                                                    const DecodeLimits& limits, std::size_t step,
                                                    std::size_t prompt_idx) {
  const GenParams& p = ctx.params;
  const MixAllocation alloc = plan_mix(p.mix, p.k);
  std::vector<SentenceOption> options;
  std::uint64_t option_idx = 0;
  for (int i = 0; i < alloc.beam_count; ++i, ++option_idx) {
    options.push_back(beam_sentence(ctx.lm, ctx.source, prefix, p.beam_size, limits));
  }
  if (alloc.beam_sampling_count > 0) {
    const std::uint64_t seed = derive_seed(p.seed, {step, prompt_idx, option_idx});
    auto sampled = beam_sample_sentence(ctx.lm, ctx.source, prefix, alloc.beam_sampling_count, seed, limits);
    for (auto& o : sampled) options.push_back(std::move(o));
    option_idx += static_cast<std::uint64_t>(alloc.beam_sampling_count);
  }
  for (int i = 0; i < alloc.nucleus_count; ++i, ++option_idx) {
    const std::uint64_t seed = derive_seed(p.seed, {step, prompt_idx, option_idx});
    options.push_back(nucleus_sentence(ctx.lm, ctx.source, prefix, p.top_p, seed, limits));
  }
  return options;
}

inline std::vector<SentenceOption> dedup_options(std::vector<SentenceOption> options) {
  std::set<TokenSeq> seen;
  std::vector<SentenceOption> out;
  for (auto& o : options)
    if (seen.insert(o.tokens).second) out.push_back(std::move(o));
  return out;
}

inline DecodeLimits limits_for_step(const EngineContext& ctx, std::size_t step) {
  DecodeLimits limits;
  limits.max_sentence_tokens = ctx.params.max_sentence_tokens;
  limits.mask_leading_eos = ctx.control.mode == ControlMode::SentCtrl || step == 0;
  limits.mask_eos = ctx.control.mode == ControlMode::SentCtrl && step + 1 < ctx.control.size();
  return limits;
}

}  // namespace detail

/// Extends one prompt with its sentence options and scores each extension.
/// Options are deduplicated by token sequence before scoring.
inline std::vector<Candidate> expand_prompt(const EngineContext& ctx, const PromptState& prompt, std::size_t step,
                                            std::size_t prompt_idx) {
  if (prompt.hypothesis.finished) throw Error(ErrorCode::InvalidArgument, "cannot expand a finished prompt");
  const Vocabulary& vocab = ctx.lm.vocabulary();
  const GenParams& p = ctx.params;
  const ControlSequence& control = ctx.control;
  const bool seg = control.mode == ControlMode::SegCtrl;
  const std::size_t last = control.size() - 1;
  const Hypothesis& base = prompt.hypothesis;
  const DecodeLimits limits = detail::limits_for_step(ctx, step);

  // Scores one option; nullopt when Seg-Ctrl rules reject it.
  const auto score_option = [&](const SentenceOption& opt, std::size_t option_idx) -> std::optional<Candidate> {
    Candidate c;
    c.prompt_idx = prompt_idx;
    c.option_idx = option_idx;
    c.method = opt.method;
    c.sub_seed = opt.sub_seed;
    c.added = opt.tokens;
    PromptState next = prompt;
    Hypothesis& h = next.hypothesis;
    const bool stop_signal = opt.tokens.size() == 1 && opt.tokens.front() == vocab.eos();

    if (stop_signal) {
      // Bare eos: close the passage without adding a sentence.
      if (!seg || base.sentences.empty() || prompt.seg_pointer != last) return std::nullopt;
      h.tokens.push_back(vocab.eos());
      h.sentences.back().end = h.tokens.size();
      h.finished = true;
    } else {
      const std::string text = sentence_text(opt.tokens, vocab);
      const LabelLogDist dist = ctx.clf.classify(text);
      Label label;
      if (!seg) {
        label = control[step];
        next.seg_pointer = step + 1;
      } else {
        std::size_t pick = prompt.seg_pointer;
        if (step > 0 && pick < last) {
          const Label& cur = control[pick];
          const Label& nxt = control[pick + 1];
          if (dist[nxt.id] > dist[cur.id]) pick += 1;
        }
        if (opt.ends_with_eos && pick != last) return std::nullopt;
        label = control[pick];
        next.seg_pointer = pick;
      }
      SentenceSpan span;
      span.start = h.tokens.size();
      h.tokens.insert(h.tokens.end(), opt.tokens.begin(), opt.tokens.end());
      span.end = h.tokens.size();
      span.label = label;
      span.class_logprob = dist[label.id];
      span.forced_boundary = opt.forced_boundary;
      h.sentences.push_back(span);
      h.finished = seg ? opt.ends_with_eos : h.sentences.size() == control.size();
    }
    const SequenceScore score = ctx.lm.score_sequence(ctx.source, h.tokens);
    if (score.per_token_loglik.size() != h.tokens.size())
      throw Error(ErrorCode::BackendFailure, "score length differs from sequence length");
    h.per_token_loglik = score.per_token_loglik;
    h.norm_loglik = mean_of(h.per_token_loglik);
    h.combined_score = combined_score(h.norm_loglik, h.class_logprobs(), p.accumulation, p.class_scale);
    c.state = std::move(next);
    return c;
  };

  std::vector<SentenceOption> options = detail::dedup_options(detail::generate_options(ctx, base.tokens, limits, step, prompt_idx));
  std::vector<Candidate> out;
  std::vector<SentenceOption> rejected;
  for (std::size_t i = 0; i < options.size(); ++i) {
    if (auto c = score_option(options[i], i)) out.push_back(std::move(*c));
    else rejected.push_back(options[i]);
  }
  if (!out.empty()) return out;

  // Seg-Ctrl only: every option tried to stop early. Resample with fresh seeds.
  constexpr int kRetries = 3;
  for (int retry = 1; retry <= kRetries && out.empty(); ++retry) {
    std::vector<SentenceOption> fresh;
    for (int i = 0; i < p.k; ++i) {
      const std::uint64_t seed = derive_seed(p.seed, {step, prompt_idx, static_cast<std::uint64_t>(i),
                                                      0xE05ULL, static_cast<std::uint64_t>(retry)});
      fresh.push_back(nucleus_sentence(ctx.lm, ctx.source, base.tokens, p.top_p, seed, limits));
    }
    fresh = detail::dedup_options(std::move(fresh));
    for (std::size_t i = 0; i < fresh.size(); ++i) {
      if (auto c = score_option(fresh[i], options.size() + static_cast<std::size_t>(retry - 1) * static_cast<std::size_t>(p.k) + i))
        out.push_back(std::move(*c));
      else rejected.push_back(fresh[i]);
    }
  }
  if (!out.empty()) return out;

  // Last resort: cut the first rejected option before its eos and keep it as
  // a forced-boundary sentence; a bare eos is redrawn with eos masked.
  SentenceOption forced = rejected.front();
  while (!forced.tokens.empty() && forced.tokens.back() == vocab.eos()) {
    forced.tokens.pop_back();
    forced.per_token_loglik.pop_back();
  }
  if (forced.tokens.empty()) {
    DecodeLimits no_eos = limits;
    no_eos.mask_eos = true;
    forced = nucleus_sentence(ctx.lm, ctx.source, base.tokens, p.top_p,
                              derive_seed(p.seed, {step, prompt_idx, 0xF0ECEULL}), no_eos);
  }
  forced.ends_with_eos = false;
  forced.forced_boundary = !vocab.is_terminal(forced.tokens.back());
  if (auto c = score_option(forced, options.size() + kRetries * static_cast<std::size_t>(p.k))) {
    out.push_back(std::move(*c));
    return out;
  }
  throw Error(ErrorCode::NoValidOptions, "no admissible sentence option");
}

/// Runs sentence-level beam search and returns the best finished hypothesis
/// (or the best unfinished one if none finished within max_sentences).
inline GenerationResult sentbs_generate(const LanguageModel& lm, const SentenceClassifier& clf,
                                        const SourceInput& source, const ControlSequence& control,
                                        const GenParams& params, const EngineOptions& options = {}) {
  params.validate();
  if (control.labels.empty()) throw Error(ErrorCode::EmptyControl, "control sequence is empty");
  if (!(clf.label_set().size() > 0)) throw Error(ErrorCode::ConfigError, "classifier has no labels");
  for (const auto& l : control.labels) {
    if (l.id >= clf.label_set().size() || !(clf.label_set()[l.id] == l))
      throw Error(ErrorCode::ConfigError, "control label '" + l.name + "' is not in the classifier's label set");
  }
  if (control.mode == ControlMode::SentCtrl && params.max_sentences > 0 &&
      static_cast<std::size_t>(params.max_sentences) < control.size())
    throw Error(ErrorCode::ConfigError, "max_sentences is smaller than the Sent-Ctrl control length");
  plan_mix(params.mix, params.k);

  const EngineContext ctx{lm, clf, source, control, params};
  const std::size_t max_sentences = effective_max_sentences(control, params);
  const bool parallel = options.workers > 1 && lm.concurrent_safe() && clf.concurrent_safe();
  const std::size_t n = static_cast<std::size_t>(params.n);

  GenerationResult result;
  std::vector<Candidate> survivors(1);  // the empty prompt
  for (std::size_t step = 0; step < max_sentences; ++step) {
    std::vector<std::vector<Candidate>> expansions(survivors.size());
    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < survivors.size(); ++i) {
      if (survivors[i].state.hypothesis.finished) {
        Candidate carried = survivors[i];
        carried.prompt_idx = i;
        carried.option_idx = 0;
        carried.carried = true;
        carried.added.clear();
        expansions[i].push_back(std::move(carried));
      } else {
        todo.push_back(i);
      }
    }
    if (todo.empty()) break;
    if (parallel) {
      for (std::size_t begin = 0; begin < todo.size(); begin += static_cast<std::size_t>(options.workers)) {
        const std::size_t end = std::min(todo.size(), begin + static_cast<std::size_t>(options.workers));
        std::vector<std::future<std::vector<Candidate>>> jobs;
        for (std::size_t j = begin; j < end; ++j) {
          const std::size_t i = todo[j];
          jobs.push_back(std::async(std::launch::async, [&, i] { return expand_prompt(ctx, survivors[i].state, step, i); }));
        }
        for (std::size_t j = begin; j < end; ++j) expansions[todo[j]] = jobs[j - begin].get();
      }
    } else {
      for (std::size_t i : todo) expansions[i] = expand_prompt(ctx, survivors[i].state, step, i);
    }

    std::vector<Candidate> pool;
    for (auto& e : expansions)
      for (auto& c : e) pool.push_back(std::move(c));
    std::sort(pool.begin(), pool.end(), candidate_before);

    if (options.keep_scored)
      for (const auto& c : pool)
        if (!c.carried) result.scored.push_back(c.state.hypothesis);
    const std::size_t keep = std::min(n, pool.size());
    if (options.keep_trace) {
      StepTrace st;
      st.step = step;
      for (const auto& c : pool) {
        const auto& h = c.state.hypothesis;
        TraceCandidate tc;
        tc.prompt_idx = c.prompt_idx;
        tc.option_idx = c.option_idx;
        tc.method = c.carried ? "carried" : std::string(to_string(c.method));
        tc.carried = c.carried;
        tc.sentence = detok(c.added, lm.vocabulary());
        tc.label = h.sentences.empty() ? "" : h.sentences.back().label.name;
        tc.class_logprob = h.sentences.empty() ? 0.0 : h.sentences.back().class_logprob;
        tc.norm_loglik = h.norm_loglik;
        tc.combined_score = h.combined_score;
        tc.finished = h.finished;
        tc.seg_pointer = c.state.seg_pointer;
        st.candidates.push_back(std::move(tc));
      }
      for (std::size_t i = 0; i < keep; ++i) st.survivors.push_back(i);
      result.trace.push_back(std::move(st));
    }
    pool.resize(keep);
    survivors = std::move(pool);
  }

  const Candidate* best = nullptr;
  for (const auto& c : survivors) {
    if (c.state.hypothesis.finished) {
      best = &c;
      break;
    }
  }
  if (!best) best = &survivors.front();
  result.hypothesis = best->state.hypothesis;
  return result;
}

/// Plain sentence-by-sentence beam search without a classifier: one
/// beam_sentence call per step, same eos handling as Sent-Ctrl. Sentence
/// labels are nominal (the control label at that position).
inline Hypothesis baseline_generate(const LanguageModel& lm, const SourceInput& source, const ControlSequence& control,
                                    int beam_size, int max_sentence_tokens = 64, int max_sentences = 0) {
  if (beam_size < 1) throw Error(ErrorCode::InvalidArgument, "beam_size must be >= 1");
  if (control.labels.empty()) throw Error(ErrorCode::EmptyControl, "control sequence is empty");
  GenParams p;
  p.max_sentence_tokens = max_sentence_tokens;
  p.max_sentences = max_sentences;
  const std::size_t steps = effective_max_sentences(control, p);
  const Vocabulary& vocab = lm.vocabulary();
  const bool seg = control.mode == ControlMode::SegCtrl;

  Hypothesis h;
  for (std::size_t step = 0; step < steps && !h.finished; ++step) {
    DecodeLimits limits;
    limits.max_sentence_tokens = max_sentence_tokens;
    limits.mask_leading_eos = !seg || step == 0;
    limits.mask_eos = !seg && step + 1 < control.size();
    const SentenceOption opt = beam_sentence(lm, source, h.tokens, beam_size, limits);
    const bool stop_signal = opt.tokens.size() == 1 && opt.tokens.front() == vocab.eos();
    if (stop_signal) {
      h.tokens.push_back(vocab.eos());
      h.sentences.back().end = h.tokens.size();
      h.finished = true;
      break;
    }
    SentenceSpan span;
    span.start = h.tokens.size();
    h.tokens.insert(h.tokens.end(), opt.tokens.begin(), opt.tokens.end());
    span.end = h.tokens.size();
    span.label = control[std::min(step, control.size() - 1)];
    span.class_logprob = 0.0;
    span.forced_boundary = opt.forced_boundary;
    h.sentences.push_back(span);
    h.finished = seg ? opt.ends_with_eos : h.sentences.size() == control.size();
  }
  const SequenceScore score = lm.score_sequence(source, h.tokens);
  h.per_token_loglik = score.per_token_loglik;
  h.norm_loglik = mean_of(h.per_token_loglik);
  h.combined_score = h.norm_loglik;
  return h;
}

}  // namespace sentbs
