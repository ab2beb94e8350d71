// Copyright (c) 2026, The sentbs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sentbs/core.hpp"

namespace sentbs {

/// What the decoder is conditioned on. The control text is kept apart from
/// the document text; backends that want a single string use joined().
struct SourceInput {
  std::string text;
  std::string control_text;

  std::string joined() const { return control_text + " ==> " + text; }
};

/// Dense next-token log-probabilities, one entry per vocabulary token.
using LogDist = std::vector<double>;

inline double logsumexp(std::span<const double> xs) {
  double hi = kNegInf;
  for (double x : xs) hi = std::max(hi, x);
  if (hi == kNegInf) return kNegInf;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

inline bool is_normalized(std::span<const double> logprobs, double tol = 1e-6) {
  return !logprobs.empty() && std::abs(logsumexp(logprobs)) <= tol;
}

/// Sets token `t` to -inf and renormalizes the remainder.
inline void mask_and_renormalize(LogDist& dist, TokenId t) {
  dist.at(static_cast<std::size_t>(t)) = kNegInf;
  const double z = logsumexp(dist);
  if (z == kNegInf) throw Error(ErrorCode::BackendFailure, "masking removed all probability mass");
  for (double& x : dist)
    if (x != kNegInf) x -= z;
}

struct SequenceScore {
  std::vector<double> per_token_loglik;
  double norm_loglik = 0.0;
};

/// Backend contract consumed by the decoders and the engine.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual const Vocabulary& vocabulary() const = 0;

  /// Normalized distribution over the token following `prefix`.
  virtual LogDist next_token_logprobs(const SourceInput& source, std::span<const TokenId> prefix) const = 0;

  /// Chain-rule scoring of a full sequence. The default walks
  /// next_token_logprobs; backends override it with something cheaper.
  virtual SequenceScore score_sequence(const SourceInput& source, std::span<const TokenId> tokens) const {
    if (tokens.empty()) throw Error(ErrorCode::EmptySequence, "cannot score an empty sequence");
    vocabulary().validate(tokens);
    SequenceScore out;
    out.per_token_loglik.reserve(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const LogDist d = next_token_logprobs(source, tokens.first(i));
      out.per_token_loglik.push_back(d[static_cast<std::size_t>(tokens[i])]);
    }
    out.norm_loglik = mean_of(out.per_token_loglik);
    return out;
  }

  /// Whether concurrent calls from several threads are allowed.
  virtual bool concurrent_safe() const { return true; }
};

/// Add-alpha smoothed n-gram model over target-side tokens. It ignores the
/// source entirely. Context positions before the start of a sequence are
/// padded with a begin marker that is never predicted.
class ToyLM final : public LanguageModel {
 public:
  static constexpr int kMaxOrder = 5;
  static constexpr TokenId kBegin = -1;

  ToyLM(Vocabulary vocab, int order, double smoothing)
      : vocab_(std::move(vocab)), order_(order), smoothing_(smoothing) {
    if (order < 1 || order > kMaxOrder)
      throw Error(ErrorCode::InvalidArgument, "n-gram order must be in [1, " + std::to_string(kMaxOrder) + "]");
    if (!(smoothing > 0.0)) throw Error(ErrorCode::InvalidArgument, "smoothing must be positive");
    if (vocab_.size() >= 0xFFFF) throw Error(ErrorCode::InvalidArgument, "vocabulary too large for the toy model");
  }

  /// Adds the n-gram counts of one token stream.
  void observe(std::span<const TokenId> stream) {
    vocab_.validate(stream);
    for (std::size_t i = 0; i < stream.size(); ++i) {
      Row& row = rows_[context_key(stream.first(i))];
      row.total += 1;
      row.next[stream[i]] += 1;
    }
  }

  const Vocabulary& vocabulary() const override { return vocab_; }
  int order() const { return order_; }
  double smoothing() const { return smoothing_; }

  LogDist next_token_logprobs(const SourceInput&, std::span<const TokenId> prefix) const override {
    vocab_.validate(prefix);
    const double v = static_cast<double>(vocab_.size());
    LogDist out;
    auto it = rows_.find(context_key(prefix));
    if (it == rows_.end()) {
      out.assign(vocab_.size(), std::log(smoothing_) - std::log(smoothing_ * v));
      return out;
    }
    const double denom = std::log(static_cast<double>(it->second.total) + smoothing_ * v);
    out.assign(vocab_.size(), std::log(smoothing_) - denom);
    for (const auto& [tok, count] : it->second.next)
      out[static_cast<std::size_t>(tok)] = std::log(static_cast<double>(count) + smoothing_) - denom;
    return out;
  }

  SequenceScore score_sequence(const SourceInput&, std::span<const TokenId> tokens) const override {
    if (tokens.empty()) throw Error(ErrorCode::EmptySequence, "cannot score an empty sequence");
    vocab_.validate(tokens);
    SequenceScore out;
    out.per_token_loglik.reserve(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) out.per_token_loglik.push_back(logprob(tokens.first(i), tokens[i]));
    out.norm_loglik = mean_of(out.per_token_loglik);
    return out;
  }

  double logprob(std::span<const TokenId> prefix, TokenId token) const {
    const double v = static_cast<double>(vocab_.size());
    auto it = rows_.find(context_key(prefix));
    if (it == rows_.end()) return std::log(smoothing_) - std::log(smoothing_ * v);
    const double denom = std::log(static_cast<double>(it->second.total) + smoothing_ * v);
    auto hit = it->second.next.find(token);
    const double count = hit == it->second.next.end() ? 0.0 : static_cast<double>(hit->second);
    return std::log(count + smoothing_) - denom;
  }

  /// Raw counts, for inspection.
  std::uint64_t context_count(std::span<const TokenId> context) const {
    auto it = rows_.find(pack(context));
    return it == rows_.end() ? 0 : it->second.total;
  }
  std::uint64_t ngram_count(std::span<const TokenId> context, TokenId next) const {
    auto it = rows_.find(pack(context));
    if (it == rows_.end()) return 0;
    auto hit = it->second.next.find(next);
    return hit == it->second.next.end() ? 0 : hit->second;
  }

  json to_json() const {
    std::vector<std::uint64_t> keys;
    keys.reserve(rows_.size());
    for (const auto& [k, _] : rows_) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    json counts = json::array();
    for (std::uint64_t k : keys) {
      const Row& row = rows_.at(k);
      json next = json::array();
      for (const auto& [tok, c] : row.next) next.push_back(json::array({tok, c}));
      counts.push_back(json{{"context", unpack(k)}, {"next", std::move(next)}});
    }
    return json{{"format", "sentbs.toylm"},
                {"version", 1},
                {"order", order_},
                {"smoothing", smoothing_},
                {"vocabulary", vocab_.to_json()},
                {"counts", std::move(counts)}};
  }

  static ToyLM from_json(const json& j) {
    if (j.value("format", "") != "sentbs.toylm" || j.value("version", 0) != 1)
      throw Error(ErrorCode::InvalidSpec, "not a version-1 toy LM file");
    ToyLM lm(Vocabulary::from_json(j.at("vocabulary")), j.at("order").get<int>(), j.at("smoothing").get<double>());
    for (const auto& row_j : j.at("counts")) {
      const auto ctx = row_j.at("context").get<std::vector<TokenId>>();
      if (static_cast<int>(ctx.size()) != lm.order_ - 1) throw Error(ErrorCode::InvalidSpec, "context length mismatch");
      Row& row = lm.rows_[pack(ctx)];
      for (const auto& pair : row_j.at("next")) {
        const auto tok = pair.at(0).get<TokenId>();
        const auto c = pair.at(1).get<std::uint64_t>();
        if (!lm.vocab_.contains(tok)) throw Error(ErrorCode::VocabMismatch, "count for unknown token");
        row.next[tok] += c;
        row.total += c;
      }
    }
    return lm;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
    out << to_json().dump() << '\n';
  }

  static ToyLM load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + path);
    try {
      return from_json(json::parse(in));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidSpec, path + ": " + e.what());
    }
  }

  friend bool operator==(const ToyLM& a, const ToyLM& b) {
    return a.order_ == b.order_ && a.smoothing_ == b.smoothing_ && a.vocab_ == b.vocab_ && a.rows_ == b.rows_;
  }

 private:
  struct Row {
    std::uint64_t total = 0;
    std::map<TokenId, std::uint64_t> next;
    friend bool operator==(const Row&, const Row&) = default;
  };

  // 16 bits per context slot, id + 1 so the begin marker packs to 0.
  static std::uint64_t pack(std::span<const TokenId> context) {
    std::uint64_t key = 0;
    for (TokenId t : context) key = (key << 16) | static_cast<std::uint64_t>(t + 1);
    return key;
  }

  std::vector<TokenId> unpack(std::uint64_t key) const {
    std::vector<TokenId> ctx(static_cast<std::size_t>(order_ - 1));
    for (std::size_t i = ctx.size(); i-- > 0;) {
      ctx[i] = static_cast<TokenId>(key & 0xFFFF) - 1;
      key >>= 16;
    }
    return ctx;
  }

  std::uint64_t context_key(std::span<const TokenId> prefix) const {
    const std::size_t width = static_cast<std::size_t>(order_ - 1);
    std::uint64_t key = 0;
    for (std::size_t i = 0; i < width; ++i) {
      const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(prefix.size()) - static_cast<std::ptrdiff_t>(width) +
                                 static_cast<std::ptrdiff_t>(i);
      const TokenId t = pos < 0 ? kBegin : prefix[static_cast<std::size_t>(pos)];
      key = (key << 16) | static_cast<std::uint64_t>(t + 1);
    }
    return key;
  }

  Vocabulary vocab_;
  int order_;
  double smoothing_;
  std::unordered_map<std::uint64_t, Row> rows_;
};

/// Fits a toy model on complete target token streams (one per document,
/// normally ending in eos).
inline ToyLM fit_toy_lm(const Vocabulary& vocab, const std::vector<TokenSeq>& streams, int order, double smoothing) {
  if (streams.empty()) throw Error(ErrorCode::EmptyCorpus, "no token streams to fit");
  ToyLM lm(vocab, order, smoothing);
  bool any = false;
  for (const auto& s : streams) {
    if (s.empty()) continue;
    lm.observe(s);
    any = true;
  }
  if (!any) throw Error(ErrorCode::EmptyCorpus, "all token streams are empty");
  return lm;
}

}  // namespace sentbs
