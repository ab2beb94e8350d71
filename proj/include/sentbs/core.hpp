// Copyright (c) 2026, The sentbs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/*
 * Domain types shared by every module: labels and control sequences,
 * token vocabularies, generation parameters and hypotheses.
 *
 * Everything here is a value type and immutable once built, so instances
 * can be shared freely between worker threads.
 */

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "sentbs/error.hpp"

namespace sentbs {

using json = nlohmann::json;
using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

namespace text {

inline std::string_view trim(std::string_view s) {
  const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace text

// ---------------------------------------------------------------------------
// Labels and control sequences
// ---------------------------------------------------------------------------

struct Label {
  std::size_t id = 0;
  std::string name;

  friend bool operator==(const Label&, const Label&) = default;
};

/// Ordered, duplicate-free set of category labels. A label's id is its
/// position in the set.
class LabelSet {
 public:
  explicit LabelSet(const std::vector<std::string>& names) {
    if (names.empty()) throw Error(ErrorCode::InvalidArgument, "label set must not be empty");
    for (const auto& raw : names) {
      std::string name(text::trim(raw));
      if (name.empty()) throw Error(ErrorCode::InvalidArgument, "empty label name");
      const std::string key = text::lower(name);
      if (index_.count(key)) throw Error(ErrorCode::InvalidArgument, "duplicate label '" + name + "'");
      index_.emplace(key, labels_.size());
      labels_.push_back(Label{labels_.size(), std::move(name)});
    }
  }

  /// The nine meta-review categories.
  static LabelSet meta_review() {
    return LabelSet({"abstract", "strength", "weakness", "suggestion", "rating summary",
                     "rebuttal process", "ac disagreement", "decision", "misc"});
  }

  std::size_t size() const { return labels_.size(); }
  const Label& operator[](std::size_t id) const { return labels_.at(id); }
  const std::vector<Label>& labels() const { return labels_; }

  /// Case-insensitive lookup with surrounding whitespace ignored.
  std::optional<Label> find(std::string_view name) const {
    auto it = index_.find(text::lower(text::trim(name)));
    if (it == index_.end()) return std::nullopt;
    return labels_[it->second];
  }

  const Label& at(std::string_view name) const {
    auto it = index_.find(text::lower(text::trim(name)));
    if (it == index_.end()) throw Error(ErrorCode::UnknownLabel, std::string(name));
    return labels_[it->second];
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(labels_.size());
    for (const auto& l : labels_) out.push_back(l.name);
    return out;
  }

  json to_json() const { return json(names()); }

  static LabelSet from_json(const json& j) {
    if (!j.is_array()) throw Error(ErrorCode::ConfigError, "label set must be a JSON array of strings");
    std::vector<std::string> names;
    for (const auto& v : j) {
      if (!v.is_string()) throw Error(ErrorCode::ConfigError, "label names must be strings");
      names.push_back(v.get<std::string>());
    }
    return LabelSet(names);
  }

  friend bool operator==(const LabelSet& a, const LabelSet& b) { return a.labels_ == b.labels_; }

 private:
  std::vector<Label> labels_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class ControlMode { SentCtrl, SegCtrl };

inline std::string_view to_string(ControlMode m) { return m == ControlMode::SentCtrl ? "sent" : "seg"; }

inline ControlMode parse_control_mode(std::string_view s) {
  const std::string v = text::lower(text::trim(s));
  if (v == "sent" || v == "sent-ctrl" || v == "sentctrl") return ControlMode::SentCtrl;
  if (v == "seg" || v == "seg-ctrl" || v == "segctrl") return ControlMode::SegCtrl;
  throw Error(ErrorCode::ConfigError, "unknown control mode '" + std::string(s) + "'");
}

struct ControlSequence {
  std::vector<Label> labels;
  ControlMode mode = ControlMode::SentCtrl;
  /// Non-fatal issues found while parsing (e.g. repeated adjacent labels in Seg-Ctrl).
  std::vector<std::string> warnings;

  std::size_t size() const { return labels.size(); }
  const Label& operator[](std::size_t i) const { return labels.at(i); }

  friend bool operator==(const ControlSequence& a, const ControlSequence& b) {
    return a.mode == b.mode && a.labels == b.labels;
  }
};

/// Parses "abstract | strength | decision" against a label set.
inline ControlSequence parse_control(std::string_view control_text, const LabelSet& label_set, ControlMode mode) {
  ControlSequence cs;
  cs.mode = mode;
  if (text::trim(control_text).empty()) throw Error(ErrorCode::EmptyControl, "control text is empty");
  std::size_t pos = 0;
  while (pos <= control_text.size()) {
    std::size_t bar = control_text.find('|', pos);
    if (bar == std::string_view::npos) bar = control_text.size();
    std::string_view piece = text::trim(control_text.substr(pos, bar - pos));
    if (!piece.empty()) {
      auto label = label_set.find(piece);
      if (!label) throw Error(ErrorCode::UnknownLabel, std::string(piece));
      cs.labels.push_back(*label);
    }
    pos = bar + 1;
  }
  if (cs.labels.empty()) throw Error(ErrorCode::EmptyControl, "no labels in '" + std::string(control_text) + "'");
  if (mode == ControlMode::SegCtrl) {
    for (std::size_t i = 1; i < cs.labels.size(); ++i) {
      if (cs.labels[i] == cs.labels[i - 1]) {
        cs.warnings.push_back("repeated adjacent label '" + cs.labels[i].name + "' at position " +
                              std::to_string(i) + " makes segment advance ambiguous");
      }
    }
  }
  return cs;
}

inline std::string render_control(const ControlSequence& cs) {
  std::string out;
  for (std::size_t i = 0; i < cs.labels.size(); ++i) {
    if (i) out += " | ";
    out += cs.labels[i].name;
  }
  return out;
}

/// Run-length compression of a label sequence: [a, a, b, a] -> [a, b, a].
inline std::vector<Label> compress_runs(std::span<const Label> labels) {
  std::vector<Label> out;
  for (const auto& l : labels) {
    if (out.empty() || !(out.back() == l)) out.push_back(l);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

/// Token surfaces plus the sentence-terminal flag per token. The eos token is
/// always terminal and there is at least one other terminal token.
class Vocabulary {
 public:
  Vocabulary(std::vector<std::string> surfaces, TokenId eos, const std::vector<TokenId>& terminals)
      : surfaces_(std::move(surfaces)), terminal_(surfaces_.size(), false), eos_(eos) {
    if (surfaces_.empty()) throw Error(ErrorCode::InvalidArgument, "empty vocabulary");
    for (std::size_t i = 0; i < surfaces_.size(); ++i) {
      if (!index_.emplace(surfaces_[i], static_cast<TokenId>(i)).second)
        throw Error(ErrorCode::InvalidArgument, "duplicate surface '" + surfaces_[i] + "'");
    }
    if (!contains(eos)) throw Error(ErrorCode::InvalidArgument, "eos id out of range");
    for (TokenId t : terminals) {
      if (!contains(t)) throw Error(ErrorCode::InvalidArgument, "terminal id out of range");
      terminal_[static_cast<std::size_t>(t)] = true;
    }
    terminal_[static_cast<std::size_t>(eos)] = true;
    bool other_terminal = false;
    for (std::size_t i = 0; i < terminal_.size(); ++i) {
      if (terminal_[i] && static_cast<TokenId>(i) != eos) other_terminal = true;
    }
    if (!other_terminal) throw Error(ErrorCode::InvalidArgument, "vocabulary needs a non-eos sentence-terminal token");
  }

  /// Builds "<eos>" (id 0), then the terminal surfaces, then the words in
  /// first-seen order.
  static Vocabulary from_words(const std::vector<std::string>& words,
                               const std::vector<std::string>& terminal_surfaces = {".", "!", "?"},
                               const std::string& eos_surface = "<eos>") {
    std::vector<std::string> surfaces{eos_surface};
    std::vector<TokenId> terminals;
    std::unordered_map<std::string, bool> seen{{eos_surface, true}};
    for (const auto& t : terminal_surfaces) {
      if (seen.emplace(t, true).second) {
        terminals.push_back(static_cast<TokenId>(surfaces.size()));
        surfaces.push_back(t);
      }
    }
    for (const auto& w : words) {
      if (seen.emplace(w, true).second) surfaces.push_back(w);
    }
    return Vocabulary(std::move(surfaces), 0, terminals);
  }

  std::size_t size() const { return surfaces_.size(); }
  TokenId eos() const { return eos_; }
  bool contains(TokenId t) const { return t >= 0 && static_cast<std::size_t>(t) < surfaces_.size(); }
  bool is_terminal(TokenId t) const { return contains(t) && terminal_[static_cast<std::size_t>(t)]; }
  const std::string& surface(TokenId t) const {
    if (!contains(t)) throw Error(ErrorCode::VocabMismatch, "token id " + std::to_string(t) + " out of range");
    return surfaces_[static_cast<std::size_t>(t)];
  }
  const std::vector<std::string>& surfaces() const { return surfaces_; }

  std::vector<TokenId> terminals() const {
    std::vector<TokenId> out;
    for (std::size_t i = 0; i < terminal_.size(); ++i)
      if (terminal_[i]) out.push_back(static_cast<TokenId>(i));
    return out;
  }

  std::optional<TokenId> find(std::string_view surface) const {
    auto it = index_.find(std::string(surface));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// Whitespace tokenization; every word must be a known surface.
  TokenSeq encode(std::string_view text) const {
    TokenSeq out;
    for (const auto& w : text::split_whitespace(text)) {
      auto id = find(w);
      if (!id) throw Error(ErrorCode::VocabMismatch, "unknown token '" + w + "'");
      out.push_back(*id);
    }
    return out;
  }

  void validate(std::span<const TokenId> tokens) const {
    for (TokenId t : tokens)
      if (!contains(t)) throw Error(ErrorCode::VocabMismatch, "token id " + std::to_string(t) + " out of range");
  }

  json to_json() const {
    std::vector<TokenId> terms;
    for (TokenId t : terminals())
      if (t != eos_) terms.push_back(t);
    return json{{"surfaces", surfaces_}, {"eos", eos_}, {"terminals", terms}};
  }

  static Vocabulary from_json(const json& j) {
    return Vocabulary(j.at("surfaces").get<std::vector<std::string>>(), j.at("eos").get<TokenId>(),
                      j.at("terminals").get<std::vector<TokenId>>());
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.surfaces_ == b.surfaces_ && a.terminal_ == b.terminal_ && a.eos_ == b.eos_;
  }

 private:
  std::vector<std::string> surfaces_;
  std::vector<bool> terminal_;
  TokenId eos_;
  std::unordered_map<std::string, TokenId> index_;
};

// ---------------------------------------------------------------------------
// Generation parameters
// ---------------------------------------------------------------------------

enum class MixStrategy {
  NucleusOnly,
  BeamSamplingOnly,
  BeamPlusNucleus,
  BeamPlusBeamSamplingPlusNucleus,
  /// Single beam-search option; only valid with k == 1.
  BeamOnly,
};

inline std::string_view to_string(MixStrategy m) {
  switch (m) {
    case MixStrategy::NucleusOnly: return "nucleus";
    case MixStrategy::BeamSamplingOnly: return "beam-sampling";
    case MixStrategy::BeamPlusNucleus: return "beam+nucleus";
    case MixStrategy::BeamPlusBeamSamplingPlusNucleus: return "beam+beam-sampling+nucleus";
    case MixStrategy::BeamOnly: return "beam";
  }
  return "?";
}

inline MixStrategy parse_mix_strategy(std::string_view s) {
  const std::string v = text::lower(text::trim(s));
  for (auto m : {MixStrategy::NucleusOnly, MixStrategy::BeamSamplingOnly, MixStrategy::BeamPlusNucleus,
                 MixStrategy::BeamPlusBeamSamplingPlusNucleus, MixStrategy::BeamOnly}) {
    if (v == to_string(m)) return m;
  }
  throw Error(ErrorCode::ConfigError, "unknown mix strategy '" + std::string(s) + "'");
}

enum class Accumulation { LatestSentence, SumOverSentences };

inline std::string_view to_string(Accumulation a) {
  return a == Accumulation::LatestSentence ? "latest" : "sum";
}

inline Accumulation parse_accumulation(std::string_view s) {
  const std::string v = text::lower(text::trim(s));
  if (v == "latest") return Accumulation::LatestSentence;
  if (v == "sum") return Accumulation::SumOverSentences;
  throw Error(ErrorCode::ConfigError, "unknown classifier accumulation '" + std::string(s) + "'");
}

/// How the classifier term enters the combined score.
enum class ClassScoreScale { LogProb, Prob };

struct GenParams {
  int k = 8;
  int n = 4;
  double top_p = 0.9;
  MixStrategy mix = MixStrategy::BeamPlusNucleus;
  std::uint64_t seed = 0;
  int max_sentence_tokens = 64;
  /// 0 selects the mode default: |control| for Sent-Ctrl, 2 |control| for Seg-Ctrl.
  int max_sentences = 0;
  Accumulation accumulation = Accumulation::SumOverSentences;
  /// Internal width of the beam-search and beam-sampling sub-decoders.
  int beam_size = 4;
  ClassScoreScale class_scale = ClassScoreScale::LogProb;

  void validate() const {
    if (k < 1) throw Error(ErrorCode::ConfigError, "k must be positive");
    if (n < 1) throw Error(ErrorCode::ConfigError, "n must be positive");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw Error(ErrorCode::ConfigError, "top_p must lie in (0, 1]");
    if (max_sentence_tokens < 1) throw Error(ErrorCode::ConfigError, "max_sentence_tokens must be >= 1");
    if (max_sentences < 0) throw Error(ErrorCode::ConfigError, "max_sentences must be >= 0");
    if (beam_size < 1) throw Error(ErrorCode::ConfigError, "beam_size must be >= 1");
  }

  json to_json() const {
    return json{{"k", k},
                {"n", n},
                {"top_p", top_p},
                {"mix", std::string(to_string(mix))},
                {"seed", seed},
                {"max_sentence_tokens", max_sentence_tokens},
                {"max_sentences", max_sentences},
                {"classifier_accumulation", std::string(to_string(accumulation))},
                {"beam_size", beam_size},
                {"class_score", class_scale == ClassScoreScale::LogProb ? "logprob" : "prob"}};
  }

  /// Missing keys keep their defaults.
  static GenParams from_json(const json& j) {
    GenParams p;
    if (j.contains("k")) p.k = j.at("k").get<int>();
    if (j.contains("n")) p.n = j.at("n").get<int>();
    if (j.contains("top_p")) p.top_p = j.at("top_p").get<double>();
    if (j.contains("mix")) p.mix = parse_mix_strategy(j.at("mix").get<std::string>());
    if (j.contains("seed")) p.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("max_sentence_tokens")) p.max_sentence_tokens = j.at("max_sentence_tokens").get<int>();
    if (j.contains("max_sentences")) p.max_sentences = j.at("max_sentences").get<int>();
    if (j.contains("classifier_accumulation"))
      p.accumulation = parse_accumulation(j.at("classifier_accumulation").get<std::string>());
    if (j.contains("beam_size")) p.beam_size = j.at("beam_size").get<int>();
    if (j.contains("class_score")) {
      const auto v = j.at("class_score").get<std::string>();
      if (v == "logprob") p.class_scale = ClassScoreScale::LogProb;
      else if (v == "prob") p.class_scale = ClassScoreScale::Prob;
      else throw Error(ErrorCode::ConfigError, "class_score must be 'logprob' or 'prob'");
    }
    p.validate();
    return p;
  }
};

// ---------------------------------------------------------------------------
// Hypotheses
// ---------------------------------------------------------------------------

struct SentenceSpan {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  Label label;
  double class_logprob = 0.0;
  bool forced_boundary = false;

  friend bool operator==(const SentenceSpan&, const SentenceSpan&) = default;
};

inline double mean_of(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

struct Hypothesis {
  TokenSeq tokens;
  std::vector<SentenceSpan> sentences;
  std::vector<double> per_token_loglik;
  double norm_loglik = 0.0;
  double combined_score = 0.0;
  bool finished = false;

  std::vector<Label> labels() const {
    std::vector<Label> out;
    for (const auto& s : sentences) out.push_back(s.label);
    return out;
  }

  std::vector<double> class_logprobs() const {
    std::vector<double> out;
    for (const auto& s : sentences) out.push_back(s.class_logprob);
    return out;
  }

  TokenSeq sentence_tokens(std::size_t i) const {
    const auto& s = sentences.at(i);
    return TokenSeq(tokens.begin() + static_cast<std::ptrdiff_t>(s.start),
                    tokens.begin() + static_cast<std::ptrdiff_t>(s.end));
  }

  /// True when spans partition [0, tokens.size()) contiguously.
  bool spans_partition_tokens() const {
    std::size_t cursor = 0;
    for (const auto& s : sentences) {
      if (s.start != cursor || s.end <= s.start) return false;
      cursor = s.end;
    }
    return cursor == tokens.size();
  }

  friend bool operator==(const Hypothesis&, const Hypothesis&) = default;
};

}  // namespace sentbs
