#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sentbs/classify.hpp"
#include "sentbs/core.hpp"
#include "sentbs/lm.hpp"
#include "sentbs/synth.hpp"

namespace testutil {

using namespace sentbs;

inline std::string scratch(const std::string& name) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(SENTBS_SCRATCH_DIR) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

inline SynthCorpusSpec testbed_spec() { return SynthCorpusSpec::load(std::string(SENTBS_TESTBED_DIR) + "/spec.json"); }

/// Fixed next-token distribution regardless of the prefix.
class TableLM final : public LanguageModel {
 public:
  using Fn = std::function<LogDist(std::span<const TokenId>)>;
  TableLM(Vocabulary vocab, Fn fn) : vocab_(std::move(vocab)), fn_(std::move(fn)) {}
  const Vocabulary& vocabulary() const override { return vocab_; }
  LogDist next_token_logprobs(const SourceInput&, std::span<const TokenId> prefix) const override { return fn_(prefix); }

 private:
  Vocabulary vocab_;
  Fn fn_;
};

inline LogDist log_of(const std::vector<double>& probs) {
  LogDist out;
  for (double p : probs) out.push_back(p > 0 ? std::log(p) : kNegInf);
  return out;
}

/// <eos> . a b c d: six tokens, eos id 0, "." id 1.
inline Vocabulary six_vocab() { return Vocabulary::from_words({"a", "b", "c", "d"}, {"."}); }

/// Order-3 toy LM with small smoothing over a handful of random streams, so
/// distributions are uneven and prefix-dependent.
inline ToyLM random_toy_lm(const Vocabulary& vocab, std::uint64_t seed, int order = 3, double smoothing = 0.3,
                           int streams = 30) {
  Rng rng(seed);
  std::vector<TokenSeq> data;
  for (int s = 0; s < streams; ++s) {
    TokenSeq t;
    const std::size_t len = 2 + rng.below(10);
    for (std::size_t i = 0; i < len; ++i) t.push_back(static_cast<TokenId>(rng.below(vocab.size())));
    data.push_back(t);
  }
  return fit_toy_lm(vocab, data, order, smoothing);
}

/// Testbed pieces built in memory: a train corpus for fitting, the reference
/// test corpus, and the fitted models.
struct Testbed {
  SynthCorpusSpec spec;
  std::vector<Document> train;
  std::vector<Document> test;
  Vocabulary vocab;
  ToyLM lm;
  KeywordClassifier clf;
  KeywordClassifier gold;
};

inline Testbed make_testbed(int train_docs = 2000, double smoothing = 0.01) {
  SynthCorpusSpec spec = testbed_spec();
  SynthCorpusSpec train_spec = spec;
  train_spec.documents = train_docs;
  train_spec.seed = 1007;
  auto train = synth_corpus(train_spec);
  auto test = synth_corpus(spec);
  Vocabulary vocab = spec.vocabulary();
  std::vector<TokenSeq> streams;
  for (const auto& d : train) streams.push_back(target_stream(d, vocab));
  ToyLM lm = fit_toy_lm(vocab, streams, 3, smoothing);
  KeywordClassifier clf = KeywordClassifier::learn(train, spec.label_set);
  KeywordClassifier gold = KeywordClassifier::from_spec(spec);
  return Testbed{std::move(spec), std::move(train), std::move(test), vocab, std::move(lm), std::move(clf), std::move(gold)};
}

}  // namespace testutil
