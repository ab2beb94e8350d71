// Copyright (c) 2026, The sentbs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Commands behind the sentbs tool: synth, fit, generate, evaluate, compare,
// serve. Every command is a plain function so tests can drive it in-process.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "sentbs/classify.hpp"
#include "sentbs/core.hpp"
#include "sentbs/engine.hpp"
#include "sentbs/lm.hpp"
#include "sentbs/metrics.hpp"
#include "sentbs/protocol.hpp"
#include "sentbs/random.hpp"
#include "sentbs/synth.hpp"

namespace sentbs::app {

namespace fs = std::filesystem;

inline json read_json_file(const std::string& path, ErrorCode on_parse_error = ErrorCode::ConfigError) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(on_parse_error, path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& content) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << content;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class Method { SentBS, Baseline };

enum class BackendKind { Toy, Remote };

enum class Tagger { Gold, Lexicon, Engine };

inline Tagger parse_tagger(std::string_view s) {
  if (s == "gold") return Tagger::Gold;
  if (s == "lexicon") return Tagger::Lexicon;
  if (s == "engine") return Tagger::Engine;
  throw Error(ErrorCode::ConfigError, "tagger must be gold, lexicon or engine, got '" + std::string(s) + "'");
}

inline std::string_view to_string(Tagger t) {
  switch (t) {
    case Tagger::Gold: return "gold";
    case Tagger::Lexicon: return "lexicon";
    case Tagger::Engine: return "engine";
  }
  return "?";
}

struct RunConfig {
  std::string name;
  std::string corpus;
  std::string lm;
  std::string lexicon;
  std::string spec;
  std::string output;
  std::string trace;
  std::string report;
  std::optional<std::vector<std::string>> labels;
  Method method = Method::SentBS;
  GenParams params;
  int baseline_beam = 4;
  BackendKind backend = BackendKind::Toy;
  std::string remote_addr;
  std::vector<std::string> remote_command;
  int runs = 1;
  ControlMode mode = ControlMode::SentCtrl;
  int workers = 1;
  Tagger tagger = Tagger::Gold;
  std::size_t limit = 0;

  /// Deterministic methods are run once whatever `runs` says.
  bool deterministic() const { return method == Method::Baseline || params.mix == MixStrategy::BeamOnly; }
  int effective_runs() const { return deterministic() ? 1 : runs; }

  std::string display_name() const {
    if (!name.empty()) return name;
    if (method == Method::Baseline) return "baseline (beam " + std::to_string(baseline_beam) + ")";
    return "sentbs " + std::string(sentbs::to_string(params.mix)) + " k=" + std::to_string(params.k);
  }

  LabelSet label_set() const {
    if (labels) return LabelSet(*labels);
    if (!spec.empty()) return SynthCorpusSpec::load(spec).label_set;
    return LabelSet::meta_review();
  }

  /// Relative paths are resolved against `base_dir`. Paths that are read
  /// must exist.
  static RunConfig from_json(const json& j, const fs::path& base_dir = {}) {
    RunConfig c;
    const auto path_of = [&](const char* key) -> std::string {
      if (!j.contains(key) || j.at(key).is_null()) return {};
      fs::path p = j.at(key).get<std::string>();
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      return p.lexically_normal().string();
    };
    try {
      c.name = j.value("name", "");
      c.corpus = path_of("corpus");
      c.lm = path_of("lm");
      c.lexicon = path_of("lexicon");
      c.spec = path_of("spec");
      c.output = path_of("output");
      c.trace = path_of("trace");
      c.report = path_of("report");
      if (j.contains("labels")) c.labels = j.at("labels").get<std::vector<std::string>>();
      const json params = j.value("params", json::object());
      c.params = GenParams::from_json(params);
      const std::string method = j.value("method", params.contains("mix") ? "sentbs" : "baseline");
      if (method == "sentbs") c.method = Method::SentBS;
      else if (method == "baseline") c.method = Method::Baseline;
      else throw Error(ErrorCode::ConfigError, "method must be sentbs or baseline, got '" + method + "'");
      c.baseline_beam = j.value("baseline_beam", 4);
      if (j.contains("backend")) {
        const json& b = j.at("backend");
        const std::string type = b.is_string() ? b.get<std::string>() : b.value("type", "toy");
        if (type == "toy") {
          c.backend = BackendKind::Toy;
        } else if (type == "remote") {
          c.backend = BackendKind::Remote;
          if (b.is_object()) {
            c.remote_addr = b.value("address", "");
            c.remote_command = b.value("command", std::vector<std::string>{});
          }
        } else {
          throw Error(ErrorCode::ConfigError, "backend must be toy or remote, got '" + type + "'");
        }
      }
      c.runs = j.value("runs", 1);
      c.mode = parse_control_mode(j.value("mode", "sent"));
      c.workers = j.value("workers", 1);
      c.tagger = parse_tagger(j.value("tagger", c.spec.empty() ? "lexicon" : "gold"));
      c.limit = j.value("limit", std::size_t{0});
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ConfigError, std::string("run config: ") + e.what());
    }
    c.validate();
    return c;
  }

  static RunConfig load(const std::string& path) {
    return from_json(read_json_file(path), fs::path(path).parent_path());
  }

  void validate() const {
    const auto need = [](const std::string& p, const char* what) {
      if (p.empty()) throw Error(ErrorCode::ConfigError, std::string("run config lacks '") + what + "'");
      if (!fs::exists(p)) throw Error(ErrorCode::ConfigError, std::string(what) + " path does not exist: " + p);
    };
    const auto optional = [](const std::string& p, const char* what) {
      if (!p.empty() && !fs::exists(p)) throw Error(ErrorCode::ConfigError, std::string(what) + " path does not exist: " + p);
    };
    need(corpus, "corpus");
    if (backend == BackendKind::Toy) need(lm, "lm");
    else optional(lm, "lm");
    optional(lexicon, "lexicon");
    optional(spec, "spec");
    if (runs < 1) throw Error(ErrorCode::ConfigError, "runs must be >= 1");
    if (workers < 1) throw Error(ErrorCode::ConfigError, "workers must be >= 1");
    if (baseline_beam < 1) throw Error(ErrorCode::ConfigError, "baseline_beam must be >= 1");
    if (backend == BackendKind::Remote && remote_addr.empty() && remote_command.empty())
      throw Error(ErrorCode::ConfigError, "remote backend needs an address or a command");
    if (method == Method::SentBS && backend == BackendKind::Toy && lexicon.empty() && spec.empty())
      throw Error(ErrorCode::ConfigError, "sentbs with the toy backend needs a lexicon or a spec");
    if (tagger == Tagger::Gold && spec.empty()) throw Error(ErrorCode::ConfigError, "the gold tagger needs a spec");
    if (tagger == Tagger::Lexicon && lexicon.empty()) throw Error(ErrorCode::ConfigError, "the lexicon tagger needs a lexicon");
    plan_mix(params.mix, params.k);
  }
};

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

/// The LM and classifier a run uses, plus anything that must outlive them.
struct Backends {
  std::unique_ptr<protocol::ChildProcess> child;
  std::unique_ptr<LanguageModel> owned_lm;
  std::unique_ptr<SentenceClassifier> owned_clf;
  std::unique_ptr<protocol::RemoteBackend> remote;
  const LanguageModel* lm = nullptr;
  const SentenceClassifier* clf = nullptr;
};

inline Backends open_backends(const RunConfig& cfg) {
  Backends b;
  const LabelSet labels = cfg.label_set();
  if (cfg.backend == BackendKind::Toy) {
    b.owned_lm = std::make_unique<ToyLM>(ToyLM::load(cfg.lm));
    b.lm = b.owned_lm.get();
  } else {
    std::optional<LabelSet> expected;
    if (cfg.method == Method::SentBS && cfg.lexicon.empty()) expected = labels;
    if (!cfg.remote_addr.empty()) {
      std::vector<protocol::LineChannel> more;
      for (int i = 1; i < cfg.workers; ++i) more.push_back(protocol::connect_tcp(cfg.remote_addr));
      b.remote = std::make_unique<protocol::RemoteBackend>(protocol::connect_tcp(cfg.remote_addr), protocol::ClientOptions{},
                                                           expected, std::move(more));
    } else {
      b.child = std::make_unique<protocol::ChildProcess>(cfg.remote_command);
      b.remote = std::make_unique<protocol::RemoteBackend>(b.child->take_channel(), protocol::ClientOptions{}, expected);
    }
    b.lm = b.remote.get();
  }
  if (cfg.method == Method::SentBS) {
    if (!cfg.lexicon.empty()) {
      b.owned_clf = std::make_unique<KeywordClassifier>(KeywordClassifier::load(cfg.lexicon, labels));
      b.clf = b.owned_clf.get();
    } else if (b.remote) {
      b.clf = b.remote.get();
    } else {
      b.owned_clf = std::make_unique<KeywordClassifier>(KeywordClassifier::from_spec(SynthCorpusSpec::load(cfg.spec)));
      b.clf = b.owned_clf.get();
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

struct SentenceRecord {
  std::string text;
  std::string label;
  double class_logprob = 0.0;
  bool forced_boundary = false;
};

struct GenerationRecord {
  std::string id;
  int run = 0;
  std::string method;
  std::string control;
  std::string text;
  std::vector<SentenceRecord> sentences;
  double norm_loglik = 0.0;
  double combined_score = 0.0;
  std::uint64_t seed = 0;
  bool finished = false;

  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    for (const auto& s : sentences) out.push_back(s.label);
    return out;
  }

  std::vector<std::string> sentence_texts() const {
    std::vector<std::string> out;
    for (const auto& s : sentences) out.push_back(s.text);
    return out;
  }

  json to_json() const {
    json sents = json::array();
    for (const auto& s : sentences)
      sents.push_back(json{{"text", s.text},
                           {"label", s.label},
                           {"class_logprob", s.class_logprob},
                           {"forced_boundary", s.forced_boundary}});
    return json{{"id", id},
                {"run", run},
                {"method", method},
                {"control", control},
                {"text", text},
                {"sentences", std::move(sents)},
                {"labels", labels()},
                {"norm_loglik", norm_loglik},
                {"combined_score", combined_score},
                {"seed", seed},
                {"finished", finished}};
  }

  static GenerationRecord from_json(const json& j) {
    GenerationRecord r;
    r.id = j.at("id").get<std::string>();
    r.run = j.value("run", 0);
    r.method = j.value("method", "");
    r.control = j.value("control", "");
    r.text = j.value("text", "");
    for (const auto& s : j.at("sentences"))
      r.sentences.push_back({s.at("text").get<std::string>(), s.value("label", ""), s.value("class_logprob", 0.0),
                             s.value("forced_boundary", false)});
    r.norm_loglik = j.value("norm_loglik", 0.0);
    r.combined_score = j.value("combined_score", 0.0);
    r.seed = j.value("seed", std::uint64_t{0});
    r.finished = j.value("finished", false);
    return r;
  }
};

inline GenerationRecord make_record(const Document& doc, int run, const std::string& method, std::uint64_t seed,
                                    const Hypothesis& h, const Vocabulary& vocab) {
  GenerationRecord r;
  r.id = doc.id;
  r.run = run;
  r.method = method;
  r.control = doc.control;
  r.seed = seed;
  std::vector<std::string> texts;
  for (std::size_t i = 0; i < h.sentences.size(); ++i) {
    const auto& span = h.sentences[i];
    SentenceRecord s;
    s.text = sentence_text(h.sentence_tokens(i), vocab);
    s.label = span.label.name;
    s.class_logprob = span.class_logprob;
    s.forced_boundary = span.forced_boundary;
    texts.push_back(s.text);
    r.sentences.push_back(std::move(s));
  }
  r.text = text::join(texts, " ");
  r.norm_loglik = h.norm_loglik;
  r.combined_score = h.combined_score;
  r.finished = h.finished;
  return r;
}

inline std::string records_to_jsonl(const std::vector<GenerationRecord>& records) {
  std::string out;
  for (const auto& r : records) out += r.to_json().dump() + "\n";
  return out;
}

inline std::vector<GenerationRecord> read_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path);
  std::vector<GenerationRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(GenerationRecord::from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidSpec, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// synth / fit
// ---------------------------------------------------------------------------

struct SynthOptions {
  std::string spec_path;
  std::string out_path;
  std::optional<int> documents;
  std::optional<std::uint64_t> seed;
};

inline std::size_t cmd_synth(const SynthOptions& o) {
  SynthCorpusSpec spec = SynthCorpusSpec::load(o.spec_path);
  if (o.documents) spec.documents = *o.documents;
  if (o.seed) spec.seed = *o.seed;
  const auto docs = synth_corpus(spec);
  write_corpus(o.out_path, docs);
  return docs.size();
}

struct FitOptions {
  std::string corpus_path;
  std::string spec_path;
  std::string lm_out;
  std::string lexicon_out;
  int order = 3;
  double smoothing = 0.1;
  /// "learned" or "spec".
  std::string lexicon_source = "learned";
};

inline Vocabulary corpus_vocabulary(const std::vector<Document>& docs) {
  std::vector<std::string> words;
  for (const auto& d : docs)
    for (const auto& s : d.target_sentences)
      for (auto& w : text::split_whitespace(s)) words.push_back(std::move(w));
  return Vocabulary::from_words(words);
}

inline void cmd_fit(const FitOptions& o) {
  if (!fs::exists(o.corpus_path)) throw Error(ErrorCode::IoError, "corpus not found: " + o.corpus_path);
  const auto docs = read_corpus(o.corpus_path);
  if (docs.empty()) throw Error(ErrorCode::EmptyCorpus, "corpus has no documents: " + o.corpus_path);
  std::optional<SynthCorpusSpec> spec;
  if (!o.spec_path.empty()) spec = SynthCorpusSpec::load(o.spec_path);
  const Vocabulary vocab = spec ? spec->vocabulary() : corpus_vocabulary(docs);
  const LabelSet labels = spec ? spec->label_set : LabelSet::meta_review();

  std::vector<TokenSeq> streams;
  for (const auto& d : docs) streams.push_back(target_stream(d, vocab));
  if (!o.lm_out.empty()) fit_toy_lm(vocab, streams, o.order, o.smoothing).save(o.lm_out);

  if (!o.lexicon_out.empty()) {
    if (o.lexicon_source == "spec") {
      if (!spec) throw Error(ErrorCode::ConfigError, "spec lexicons need --spec");
      KeywordClassifier::from_spec(*spec).save(o.lexicon_out);
    } else if (o.lexicon_source == "learned") {
      KeywordClassifier::learn(docs, labels).save(o.lexicon_out);
    } else {
      throw Error(ErrorCode::ConfigError, "lexicon source must be learned or spec");
    }
  }
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateOutput {
  std::vector<GenerationRecord> records;
  /// One JSONL line per engine step, only when tracing.
  std::vector<std::string> trace_lines;
};

inline std::vector<Document> load_documents(const RunConfig& cfg) {
  auto docs = read_corpus(cfg.corpus);
  if (docs.empty()) throw Error(ErrorCode::EmptyCorpus, "corpus has no documents: " + cfg.corpus);
  if (cfg.limit > 0 && docs.size() > cfg.limit) docs.resize(cfg.limit);
  return docs;
}

/// Runs one method over every document, `effective_runs()` times. Document
/// seeds are derived from (params.seed, run, document index). Records come out
/// run-major in corpus order regardless of worker scheduling.
inline GenerateOutput run_generation(const RunConfig& cfg, const std::vector<Document>& docs, const Backends& b) {
  const LabelSet labels = cfg.label_set();
  const Vocabulary& vocab = b.lm->vocabulary();
  const int runs = cfg.effective_runs();
  const std::string method = cfg.method == Method::Baseline ? "baseline" : "sentbs";
  const std::size_t total = static_cast<std::size_t>(runs) * docs.size();

  std::vector<GenerationRecord> records(total);
  std::vector<std::vector<std::string>> traces(cfg.trace.empty() ? 0 : total);

  const auto work = [&](std::size_t slot) {
    const int run = static_cast<int>(slot / docs.size());
    const std::size_t di = slot % docs.size();
    const Document& doc = docs[di];
    const ControlSequence control = parse_control(doc.control, labels, cfg.mode);
    if (cfg.method == Method::Baseline) {
      const Hypothesis h = baseline_generate(*b.lm, doc.source_input(), control, cfg.baseline_beam,
                                             cfg.params.max_sentence_tokens, cfg.params.max_sentences);
      records[slot] = make_record(doc, run, method, 0, h, vocab);
      return;
    }
    GenParams p = cfg.params;
    p.seed = derive_seed(cfg.params.seed, {static_cast<std::uint64_t>(run), static_cast<std::uint64_t>(di)});
    EngineOptions eo;
    eo.keep_trace = !cfg.trace.empty();
    const GenerationResult res = sentbs_generate(*b.lm, *b.clf, doc.source_input(), control, p, eo);
    records[slot] = make_record(doc, run, method, p.seed, res.hypothesis, vocab);
    for (const auto& st : res.trace) {
      json line = st.to_json();
      line["id"] = doc.id;
      line["run"] = run;
      traces[slot].push_back(line.dump());
    }
  };

  const bool parallel = cfg.workers > 1 && b.lm->concurrent_safe() && (!b.clf || b.clf->concurrent_safe());
  if (!parallel) {
    for (std::size_t s = 0; s < total; ++s) work(s);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    std::vector<std::thread> pool;
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), total);
    for (std::size_t w = 0; w < n; ++w) {
      pool.emplace_back([&] {
        for (std::size_t s = next++; s < total; s = next++) {
          try {
            work(s);
          } catch (...) {
            std::lock_guard lock(failure_mu);
            if (!failure) failure = std::current_exception();
            next = total;
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  GenerateOutput out;
  out.records = std::move(records);
  for (auto& t : traces)
    for (auto& line : t) out.trace_lines.push_back(std::move(line));
  return out;
}

inline GenerateOutput cmd_generate(const RunConfig& cfg) {
  const auto docs = load_documents(cfg);
  const Backends b = open_backends(cfg);
  GenerateOutput out = run_generation(cfg, docs, b);
  if (!cfg.output.empty()) write_text_file(cfg.output, records_to_jsonl(out.records));
  if (!cfg.trace.empty()) {
    std::string t;
    for (const auto& line : out.trace_lines) t += line + "\n";
    write_text_file(cfg.trace, t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

/// Scores records against the corpus references. Records are grouped by run;
/// headline numbers average the per-run aggregates. With Tagger::Engine the
/// labels stored in the records are used and `tagger` may be null.
inline EvalReport evaluate_records(const std::vector<GenerationRecord>& records, const std::vector<Document>& corpus,
                                   const SentenceClassifier* tagger, Tagger kind, const std::string& method = "",
                                   const std::optional<LabelSet>& label_set = std::nullopt) {
  if (records.empty()) throw Error(ErrorCode::EmptyList, "no records to evaluate");
  if (kind != Tagger::Engine && !tagger) throw Error(ErrorCode::ConfigError, "tagger classifier missing");
  std::map<std::string, const Document*> by_id;
  for (const auto& d : corpus) by_id[d.id] = &d;
  const LabelSet labels = tagger ? tagger->label_set() : label_set ? *label_set : LabelSet::meta_review();

  EvalReport report;
  report.method = method.empty() ? records.front().method : method;
  report.tagger = std::string(to_string(kind));
  std::map<int, std::size_t> run_index;
  for (const auto& r : records) {
    auto it = by_id.find(r.id);
    if (it == by_id.end()) throw Error(ErrorCode::IdMismatch, "record id '" + r.id + "' is not in the corpus");
    const Document& doc = *it->second;
    auto [pos, fresh] = run_index.emplace(r.run, report.runs.size());
    if (fresh) {
      report.runs.emplace_back();
      report.runs.back().run = r.run;
    }
    LabelSeq reference;
    LabelSeq predicted;
    for (const auto& n : doc.target_labels) reference.push_back(labels.at(n));
    if (kind == Tagger::Engine) {
      for (const auto& n : r.labels()) predicted.push_back(labels.at(n));
    } else {
      if (!r.sentences.empty()) predicted = predicted_structure(r.sentence_texts(), *tagger);
    }
    report.runs[pos->second].documents.push_back(
        evaluate_document(r.id, predicted, reference, r.text, doc.target_text()));
  }
  report.aggregate();
  return report;
}

struct EvaluateOptions {
  std::string records_path;
  std::string corpus_path;
  std::string report_out;
  std::string csv_out;
  Tagger tagger = Tagger::Gold;
  std::string spec_path;
  std::string lexicon_path;
};

inline std::unique_ptr<SentenceClassifier> make_tagger(Tagger kind, const std::string& spec_path,
                                                       const std::string& lexicon_path,
                                                       const std::optional<LabelSet>& labels = std::nullopt) {
  switch (kind) {
    case Tagger::Gold:
      if (spec_path.empty()) throw Error(ErrorCode::ConfigError, "the gold tagger needs a spec");
      return std::make_unique<KeywordClassifier>(KeywordClassifier::from_spec(SynthCorpusSpec::load(spec_path)));
    case Tagger::Lexicon: {
      if (lexicon_path.empty()) throw Error(ErrorCode::ConfigError, "the lexicon tagger needs a lexicon");
      const LabelSet ls = labels ? *labels : (spec_path.empty() ? LabelSet::meta_review() : SynthCorpusSpec::load(spec_path).label_set);
      return std::make_unique<KeywordClassifier>(KeywordClassifier::load(lexicon_path, ls));
    }
    case Tagger::Engine:
      return nullptr;
  }
  return nullptr;
}

inline EvalReport cmd_evaluate(const EvaluateOptions& o) {
  const auto records = read_records(o.records_path);
  const auto corpus = read_corpus(o.corpus_path);
  const auto tagger = make_tagger(o.tagger, o.spec_path, o.lexicon_path);
  std::optional<LabelSet> labels;
  if (!o.spec_path.empty()) labels = SynthCorpusSpec::load(o.spec_path).label_set;
  EvalReport report = evaluate_records(records, corpus, tagger.get(), o.tagger, "", labels);
  if (!o.report_out.empty()) write_text_file(o.report_out, report.to_json().dump(2) + "\n");
  if (!o.csv_out.empty()) write_text_file(o.csv_out, report.to_csv());
  return report;
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

struct ComparisonRow {
  std::string method;
  std::string mix;
  int k = 0;
  int runs = 0;
  double structure = 0.0;
  double edits = 0.0;
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rougeL = 0.0;

  json to_json() const {
    return json{{"method", method}, {"mix", mix},     {"k", k},           {"runs", runs},    {"structure", structure},
                {"edits", edits},   {"rouge1", rouge1}, {"rouge2", rouge2}, {"rougeL", rougeL}};
  }
};

struct ComparisonTable {
  std::string tagger;
  std::vector<ComparisonRow> rows;

  json to_json() const {
    json rs = json::array();
    for (const auto& r : rows) rs.push_back(r.to_json());
    return json{{"tagger", tagger}, {"rows", std::move(rs)}};
  }

  std::string to_markdown() const {
    std::ostringstream out;
    out << "| method | mix | k | runs | structure | edits | rouge-1 | rouge-2 | rouge-L |\n";
    out << "|---|---|---|---|---|---|---|---|---|\n";
    char buf[512];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "| %s | %s | %d | %d | %.4f | %.1f | %.4f | %.4f | %.4f |\n", r.method.c_str(),
                    r.mix.c_str(), r.k, r.runs, r.structure, r.edits, r.rouge1, r.rouge2, r.rougeL);
      out << buf;
    }
    return out.str();
  }
};

/// Generates and evaluates one configuration in memory.
inline ComparisonRow evaluate_config(const RunConfig& cfg, const std::vector<Document>& docs) {
  const Backends b = open_backends(cfg);
  const GenerateOutput gen = run_generation(cfg, docs, b);
  const auto tagger = make_tagger(cfg.tagger, cfg.spec, cfg.lexicon, cfg.label_set());
  const EvalReport rep = evaluate_records(gen.records, docs, tagger.get(), cfg.tagger, cfg.display_name(), cfg.label_set());
  ComparisonRow row;
  row.method = cfg.display_name();
  row.mix = cfg.method == Method::Baseline ? "-" : std::string(sentbs::to_string(cfg.params.mix));
  row.k = cfg.method == Method::Baseline ? cfg.baseline_beam : cfg.params.k;
  row.runs = static_cast<int>(rep.runs.size());
  row.structure = rep.mean_structure_similarity;
  row.edits = rep.total_edits;
  row.rouge1 = rep.mean_rouge1;
  row.rouge2 = rep.mean_rouge2;
  row.rougeL = rep.mean_rougeL;
  return row;
}

/// Rows for `a`, then for `b`; with a k sweep `b` contributes one row per k
/// (in the given order).
inline ComparisonTable cmd_compare(const RunConfig& a, const RunConfig& b, const std::vector<int>& sweep_k = {}) {
  if (a.tagger != b.tagger) throw Error(ErrorCode::ConfigError, "compared configs must use the same tagger");
  const auto docs_a = load_documents(a);
  const auto docs_b = load_documents(b);
  if (docs_a != docs_b) throw Error(ErrorCode::CorpusMismatch, "compared configs read different corpora");
  ComparisonTable table;
  table.tagger = std::string(to_string(a.tagger));
  table.rows.push_back(evaluate_config(a, docs_a));
  if (sweep_k.empty()) {
    table.rows.push_back(evaluate_config(b, docs_b));
  } else {
    for (int k : sweep_k) {
      RunConfig c = b;
      c.params.k = k;
      c.name.clear();
      plan_mix(c.params.mix, k);
      table.rows.push_back(evaluate_config(c, docs_b));
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// serve
// ---------------------------------------------------------------------------

struct ServeOptions {
  std::string lm_path;
  std::string lexicon_path;
  std::string spec_path;
  /// -1 serves one session on stdin/stdout.
  int port = -1;
  /// Stop after this many TCP connections (0 = forever).
  int max_connections = 0;
};

/// Reference server for the toy backend.
inline void cmd_serve(const ServeOptions& o, std::ostream& log = std::cerr) {
  const ToyLM lm = ToyLM::load(o.lm_path);
  std::unique_ptr<KeywordClassifier> clf;
  const LabelSet labels = o.spec_path.empty() ? LabelSet::meta_review() : SynthCorpusSpec::load(o.spec_path).label_set;
  if (!o.lexicon_path.empty()) clf = std::make_unique<KeywordClassifier>(KeywordClassifier::load(o.lexicon_path, labels));
  else if (!o.spec_path.empty())
    clf = std::make_unique<KeywordClassifier>(KeywordClassifier::from_spec(SynthCorpusSpec::load(o.spec_path)));

  if (o.port < 0) {
    protocol::LineChannel ch(protocol::Fd(::dup(STDIN_FILENO)), protocol::Fd(::dup(STDOUT_FILENO)));
    protocol::serve_connection(ch, lm, clf.get());
    return;
  }
  protocol::TcpListener listener(o.port);
  log << "listening on 127.0.0.1:" << listener.port() << std::endl;
  std::vector<std::thread> sessions;
  for (int served = 0; o.max_connections == 0 || served < o.max_connections; ++served) {
    auto ch = listener.accept();
    if (!ch) break;
    sessions.emplace_back([&lm, &clf, c = std::make_shared<protocol::LineChannel>(std::move(*ch))] {
      protocol::serve_connection(*c, lm, clf.get());
    });
  }
  for (auto& s : sessions) s.join();
}

}  // namespace sentbs::app
