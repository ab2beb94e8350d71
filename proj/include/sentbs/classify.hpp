// Copyright (c) 2026, The sentbs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "sentbs/core.hpp"
#include "sentbs/lm.hpp"
#include "sentbs/synth.hpp"

namespace sentbs {

/// One log-probability per label of the classifier's label set.
using LabelLogDist = std::vector<double>;

class SentenceClassifier {
 public:
  virtual ~SentenceClassifier() = default;
  virtual const LabelSet& label_set() const = 0;
  virtual LabelLogDist classify(std::string_view sentence_text) const = 0;
  virtual bool concurrent_safe() const { return true; }
};

inline double label_score(const SentenceClassifier& clf, std::string_view sentence_text, const Label& label) {
  const auto& ls = clf.label_set();
  if (label.id >= ls.size() || !(ls[label.id] == label)) throw Error(ErrorCode::UnknownLabel, label.name);
  return clf.classify(sentence_text)[label.id];
}

/// Lowercased words split on whitespace and punctuation.
inline std::vector<std::string> classifier_words(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c == '_' || c == '\'' || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

struct WeightedKeyword {
  std::string word;
  double weight = 1.0;
};

/// Per label: score = smoothing + sum of weights of lexicon words present in
/// the sentence, then softmax over labels.
class KeywordClassifier final : public SentenceClassifier {
 public:
  KeywordClassifier(LabelSet label_set, std::vector<std::vector<WeightedKeyword>> lexicons, double smoothing = 0.1)
      : label_set_(std::move(label_set)), lexicons_(std::move(lexicons)), smoothing_(smoothing) {
    if (lexicons_.size() != label_set_.size())
      throw Error(ErrorCode::InvalidArgument, "one lexicon per label is required");
    if (!(smoothing_ > 0.0)) throw Error(ErrorCode::InvalidArgument, "smoothing must be positive");
    for (std::size_t l = 0; l < lexicons_.size(); ++l) {
      for (auto& kw : lexicons_[l]) {
        kw.word = text::lower(kw.word);
        index_[kw.word].push_back({l, kw.weight});
      }
    }
  }

  /// Unit-weight lexicons straight from a corpus spec.
  static KeywordClassifier from_spec(const SynthCorpusSpec& spec, double smoothing = 0.1) {
    std::vector<std::vector<WeightedKeyword>> lex(spec.label_set.size());
    for (std::size_t l = 0; l < lex.size(); ++l)
      for (const auto& w : spec.lexicons[l]) lex[l].push_back({w, 1.0});
    return KeywordClassifier(spec.label_set, std::move(lex), smoothing);
  }

  /// Learns lexicons from labeled sentences. A word becomes a keyword of
  /// label L when it is concentrated in L's sentences; its weight is the
  /// log-ratio of in-label to out-of-label sentence counts, capped.
  static KeywordClassifier learn(const std::vector<Document>& docs, const LabelSet& label_set,
                                 double min_weight = 1.0, double max_weight = 4.0, std::size_t per_label = 50,
                                 double smoothing = 0.1) {
    std::map<std::string, std::vector<std::size_t>> counts;
    for (const auto& d : docs) {
      for (std::size_t i = 0; i < d.target_sentences.size(); ++i) {
        const std::size_t l = label_set.at(d.target_labels[i]).id;
        const auto words = classifier_words(d.target_sentences[i]);
        for (const auto& w : std::set<std::string>(words.begin(), words.end())) {
          auto& row = counts[w];
          if (row.empty()) row.assign(label_set.size(), 0);
          row[l] += 1;
        }
      }
    }
    std::vector<std::vector<WeightedKeyword>> lex(label_set.size());
    for (const auto& [w, row] : counts) {
      std::size_t total = 0;
      for (auto c : row) total += c;
      for (std::size_t l = 0; l < row.size(); ++l) {
        const double in = static_cast<double>(row[l]);
        const double out = static_cast<double>(total - row[l]);
        const double weight = std::min(max_weight, std::log((in + 1.0) / (out + 1.0)));
        if (weight >= min_weight) lex[l].push_back({w, weight});
      }
    }
    for (auto& entries : lex) {
      std::stable_sort(entries.begin(), entries.end(),
                       [](const auto& a, const auto& b) { return a.weight > b.weight; });
      if (entries.size() > per_label) entries.resize(per_label);
      std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.word < b.word; });
    }
    return KeywordClassifier(label_set, std::move(lex), smoothing);
  }

  const LabelSet& label_set() const override { return label_set_; }
  double smoothing() const { return smoothing_; }
  const std::vector<std::vector<WeightedKeyword>>& lexicons() const { return lexicons_; }

  LabelLogDist classify(std::string_view sentence_text) const override {
    if (text::trim(sentence_text).empty()) throw Error(ErrorCode::EmptySentence, "cannot classify an empty sentence");
    std::vector<double> scores(label_set_.size(), smoothing_);
    const auto words = classifier_words(sentence_text);
    for (const auto& w : std::set<std::string>(words.begin(), words.end())) {
      auto it = index_.find(w);
      if (it == index_.end()) continue;
      for (const auto& [label, weight] : it->second) scores[label] += weight;
    }
    const double z = logsumexp(scores);
    for (double& s : scores) s -= z;
    return scores;
  }

  /// {label_name: [{"word": w, "weight": x}, ...]}
  json to_json() const {
    json j = json::object();
    for (std::size_t l = 0; l < label_set_.size(); ++l) {
      json arr = json::array();
      for (const auto& kw : lexicons_[l]) arr.push_back(json{{"word", kw.word}, {"weight", kw.weight}});
      j[label_set_[l].name] = std::move(arr);
    }
    return j;
  }

  /// Labels missing from the file get empty lexicons.
  static KeywordClassifier from_json(const json& j, const LabelSet& label_set, double smoothing = 0.1) {
    std::vector<std::vector<WeightedKeyword>> lex(label_set.size());
    try {
      for (const auto& [name, arr] : j.items()) {
        const Label& label = label_set.at(name);
        for (const auto& e : arr) lex[label.id].push_back({e.at("word").get<std::string>(), e.at("weight").get<double>()});
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ConfigError, std::string("lexicon file: ") + e.what());
    }
    return KeywordClassifier(label_set, std::move(lex), smoothing);
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
    out << to_json().dump(1) << '\n';
  }

  static KeywordClassifier load(const std::string& path, const LabelSet& label_set, double smoothing = 0.1) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ConfigError, path + ": " + e.what());
    }
    return from_json(j, label_set, smoothing);
  }

 private:
  LabelSet label_set_;
  std::vector<std::vector<WeightedKeyword>> lexicons_;
  double smoothing_;
  std::map<std::string, std::vector<std::pair<std::size_t, double>>> index_;
};

/// Space-joined surfaces.
inline std::string detok(std::span<const TokenId> tokens, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += vocab.surface(tokens[i]);
  }
  return out;
}

/// Text handed to the classifier: the sentence without its eos token.
inline std::string sentence_text(std::span<const TokenId> tokens, const Vocabulary& vocab) {
  std::vector<TokenId> kept;
  for (TokenId t : tokens)
    if (t != vocab.eos()) kept.push_back(t);
  return detok(kept, vocab);
}

/// Argmax label, lowest id on ties.
inline Label argmax_label(const LabelLogDist& dist, const LabelSet& label_set) {
  std::size_t best = 0;
  for (std::size_t l = 1; l < dist.size(); ++l)
    if (dist[l] > dist[best]) best = l;
  return label_set[best];
}

}  // namespace sentbs
