// Copyright (c) 2026, The sentbs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/*
 * Synthetic labeled corpus for desk-scale experiments.
 *
 * A corpus spec gives, per label, a keyword lexicon and sentence templates,
 * plus a distribution over label sequences. Each document draws a label
 * sequence, then instantiates one template per label. Templates must contain
 * the {kw} slot, which is filled with a keyword of the sentence's label;
 * other {name} slots draw from shared filler lists. Lexicons are disjoint
 * and no keyword appears as template text or filler, so a keyword tagger
 * recovers gold labels exactly from gold sentences.
 */

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sentbs/core.hpp"
#include "sentbs/lm.hpp"
#include "sentbs/random.hpp"

namespace sentbs {

struct StructureEntry {
  std::vector<std::string> labels;
  double weight = 0.0;
};

struct SynthCorpusSpec {
  LabelSet label_set = LabelSet::meta_review();
  /// Indexed by label id.
  std::vector<std::vector<std::string>> lexicons;
  std::vector<std::vector<std::string>> templates;
  std::map<std::string, std::vector<std::string>> slots;
  std::vector<StructureEntry> structures;
  int documents = 200;
  std::uint64_t seed = 7;
  /// Extra off-structure sentences mixed into each synthetic source.
  int source_noise_sentences = 2;

  void validate() const {
    const auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidSpec, msg); };
    const std::size_t nl = label_set.size();
    if (lexicons.size() != nl || templates.size() != nl) fail("lexicons and templates must cover every label");
    if (documents < 0) fail("documents must be non-negative");
    std::map<std::string, std::size_t> keyword_owner;
    for (std::size_t l = 0; l < nl; ++l) {
      const std::string& name = label_set[l].name;
      if (lexicons[l].empty()) fail("label '" + name + "' has no keywords");
      if (templates[l].empty()) fail("label '" + name + "' has no templates");
      for (const auto& kw : lexicons[l]) {
        if (kw.empty() || text::split_whitespace(kw).size() != 1) fail("keyword '" + kw + "' must be a single word");
        auto [it, fresh] = keyword_owner.emplace(text::lower(kw), l);
        if (!fresh && it->second != l) fail("keyword '" + kw + "' appears in two lexicons");
      }
    }
    for (const auto& [slot, fillers] : slots) {
      if (slot == "kw") fail("slot name 'kw' is reserved");
      if (fillers.empty()) fail("slot '" + slot + "' has no fillers");
      for (const auto& f : fillers) {
        for (const auto& w : text::split_whitespace(f))
          if (keyword_owner.count(text::lower(w))) fail("filler word '" + w + "' is also a keyword");
      }
    }
    for (std::size_t l = 0; l < nl; ++l) {
      for (const auto& t : templates[l]) {
        const auto pieces = parse_template(t);
        bool has_kw = false;
        for (const auto& p : pieces) {
          if (p.is_slot) {
            if (p.text == "kw") has_kw = true;
            else if (!slots.count(p.text)) fail("template references unknown slot {" + p.text + "}");
          } else {
            for (const auto& w : text::split_whitespace(p.text))
              if (keyword_owner.count(text::lower(w))) fail("template word '" + w + "' is also a keyword");
          }
        }
        if (!has_kw) fail("template '" + t + "' lacks the {kw} slot");
      }
    }
    if (structures.empty()) fail("structure distribution is empty");
    double total = 0.0;
    for (const auto& s : structures) {
      if (s.labels.empty()) fail("empty label sequence in structure distribution");
      if (!(s.weight >= 0.0)) fail("negative structure weight");
      for (const auto& name : s.labels)
        if (!label_set.find(name)) fail("structure references unknown label '" + name + "'");
      total += s.weight;
    }
    if (std::abs(total - 1.0) > 1e-6) fail("structure weights sum to " + std::to_string(total) + ", expected 1");
  }

  struct TemplatePiece {
    bool is_slot = false;
    std::string text;
  };

  static std::vector<TemplatePiece> parse_template(const std::string& t) {
    std::vector<TemplatePiece> out;
    std::size_t pos = 0;
    while (pos < t.size()) {
      const std::size_t open = t.find('{', pos);
      if (open == std::string::npos) {
        out.push_back({false, t.substr(pos)});
        break;
      }
      if (open > pos) out.push_back({false, t.substr(pos, open - pos)});
      const std::size_t close = t.find('}', open);
      if (close == std::string::npos) throw Error(ErrorCode::InvalidSpec, "unterminated slot in '" + t + "'");
      out.push_back({true, t.substr(open + 1, close - open - 1)});
      pos = close + 1;
    }
    return out;
  }

  /// Every word any template can produce, in a stable order.
  std::vector<std::string> words() const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    const auto add = [&](const std::string& s) {
      for (const auto& w : text::split_whitespace(s))
        if (seen.insert(w).second) out.push_back(w);
    };
    for (std::size_t l = 0; l < templates.size(); ++l) {
      for (const auto& t : templates[l])
        for (const auto& p : parse_template(t))
          if (!p.is_slot) add(p.text);
      for (const auto& kw : lexicons[l]) add(kw);
    }
    for (const auto& [_, fillers] : slots)
      for (const auto& f : fillers) add(f);
    return out;
  }

  Vocabulary vocabulary() const { return Vocabulary::from_words(words()); }

  json to_json() const {
    json lex = json::object(), tpl = json::object(), st = json::array();
    for (std::size_t l = 0; l < label_set.size(); ++l) {
      lex[label_set[l].name] = lexicons[l];
      tpl[label_set[l].name] = templates[l];
    }
    for (const auto& s : structures) st.push_back(json{{"labels", s.labels}, {"weight", s.weight}});
    return json{{"labels", label_set.to_json()}, {"lexicons", lex},  {"templates", tpl},
                {"slots", slots},                {"structures", st}, {"documents", documents},
                {"seed", seed},                  {"source_noise_sentences", source_noise_sentences}};
  }

  static SynthCorpusSpec from_json(const json& j) {
    try {
      SynthCorpusSpec s;
      s.label_set = j.contains("labels") ? LabelSet::from_json(j.at("labels")) : LabelSet::meta_review();
      s.lexicons.assign(s.label_set.size(), {});
      s.templates.assign(s.label_set.size(), {});
      for (const auto& [name, words] : j.at("lexicons").items())
        s.lexicons[s.label_set.at(name).id] = words.get<std::vector<std::string>>();
      for (const auto& [name, tpls] : j.at("templates").items())
        s.templates[s.label_set.at(name).id] = tpls.get<std::vector<std::string>>();
      if (j.contains("slots")) s.slots = j.at("slots").get<std::map<std::string, std::vector<std::string>>>();
      for (const auto& e : j.at("structures"))
        s.structures.push_back({e.at("labels").get<std::vector<std::string>>(), e.at("weight").get<double>()});
      s.documents = j.value("documents", 200);
      s.seed = j.value("seed", std::uint64_t{7});
      s.source_noise_sentences = j.value("source_noise_sentences", 2);
      s.validate();
      return s;
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidSpec, e.what());
    } catch (const Error& e) {
      if (e.code() == ErrorCode::InvalidSpec) throw;
      throw Error(ErrorCode::InvalidSpec, e.what());
    }
  }

  static SynthCorpusSpec load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidSpec, path + ": " + e.what());
    }
    return from_json(j);
  }
};

struct Document {
  std::string id;
  std::string source;
  std::string control;
  std::vector<std::string> target_sentences;
  std::vector<std::string> target_labels;

  SourceInput source_input() const { return SourceInput{source, control}; }

  std::string target_text() const { return text::join(target_sentences, " "); }

  json to_json() const {
    return json{{"id", id},
                {"source", source},
                {"control", control},
                {"target_sentences", target_sentences},
                {"target_labels", target_labels}};
  }

  static Document from_json(const json& j) {
    Document d;
    d.id = j.at("id").get<std::string>();
    d.source = j.at("source").get<std::string>();
    d.control = j.at("control").get<std::string>();
    d.target_sentences = j.at("target_sentences").get<std::vector<std::string>>();
    d.target_labels = j.at("target_labels").get<std::vector<std::string>>();
    if (d.target_sentences.size() != d.target_labels.size())
      throw Error(ErrorCode::InvalidSpec, "document " + d.id + ": sentence and label counts differ");
    return d;
  }

  friend bool operator==(const Document&, const Document&) = default;
};

namespace detail {

inline std::string instantiate(const std::string& tpl, const std::vector<std::string>& lexicon,
                               const std::map<std::string, std::vector<std::string>>& slots, Rng& rng) {
  std::string out;
  for (const auto& piece : SynthCorpusSpec::parse_template(tpl)) {
    if (!piece.is_slot) {
      out += piece.text;
    } else if (piece.text == "kw") {
      out += lexicon[rng.below(lexicon.size())];
    } else {
      const auto& fillers = slots.at(piece.text);
      out += fillers[rng.below(fillers.size())];
    }
  }
  return text::join(text::split_whitespace(out), " ");
}

}  // namespace detail

/// Deterministic in the spec (including its seed).
inline std::vector<Document> synth_corpus(const SynthCorpusSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<double> cdf;
  double acc = 0.0;
  for (const auto& s : spec.structures) cdf.push_back(acc += s.weight);

  std::vector<Document> docs;
  docs.reserve(static_cast<std::size_t>(spec.documents));
  for (int d = 0; d < spec.documents; ++d) {
    const double u = rng.uniform() * acc;
    std::size_t pick = 0;
    while (pick + 1 < cdf.size() && u >= cdf[pick]) ++pick;
    const auto& structure = spec.structures[pick];

    Document doc;
    char id[32];
    std::snprintf(id, sizeof id, "doc-%05d", d);
    doc.id = id;
    std::vector<std::string> control_names;
    for (const auto& name : structure.labels) {
      const Label& label = spec.label_set.at(name);
      const auto& tpls = spec.templates[label.id];
      doc.target_sentences.push_back(
          detail::instantiate(tpls[rng.below(tpls.size())], spec.lexicons[label.id], spec.slots, rng));
      doc.target_labels.push_back(label.name);
    }
    // Sent-Ctrl convention: one control label per target sentence.
    ControlSequence cs;
    for (const auto& name : doc.target_labels) cs.labels.push_back(spec.label_set.at(name));
    doc.control = render_control(cs);

    // A stand-in for the reviews: one paraphrase per target sentence plus noise, shuffled.
    std::vector<std::string> source_sentences;
    for (const auto& name : structure.labels) {
      const Label& label = spec.label_set.at(name);
      const auto& tpls = spec.templates[label.id];
      source_sentences.push_back(
          detail::instantiate(tpls[rng.below(tpls.size())], spec.lexicons[label.id], spec.slots, rng));
    }
    for (int i = 0; i < spec.source_noise_sentences; ++i) {
      const std::size_t l = rng.below(spec.label_set.size());
      const auto& tpls = spec.templates[l];
      source_sentences.push_back(detail::instantiate(tpls[rng.below(tpls.size())], spec.lexicons[l], spec.slots, rng));
    }
    for (std::size_t i = source_sentences.size(); i > 1; --i) std::swap(source_sentences[i - 1], source_sentences[rng.below(i)]);
    doc.source = text::join(source_sentences, " ");
    docs.push_back(std::move(doc));
  }
  return docs;
}

/// Target token stream of a document: all sentences followed by eos.
inline TokenSeq target_stream(const Document& doc, const Vocabulary& vocab) {
  TokenSeq out;
  for (const auto& s : doc.target_sentences) {
    const TokenSeq toks = vocab.encode(s);
    out.insert(out.end(), toks.begin(), toks.end());
  }
  out.push_back(vocab.eos());
  return out;
}

inline void write_corpus(const std::string& path, const std::vector<Document>& docs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  for (const auto& d : docs) out << d.to_json().dump() << '\n';
}

inline std::vector<Document> read_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path);
  std::vector<Document> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      docs.push_back(Document::from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidSpec, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return docs;
}

}  // namespace sentbs
