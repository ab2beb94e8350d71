// Copyright (c) 2026, The sentbs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sentbs/classify.hpp"
#include "sentbs/core.hpp"

namespace sentbs {

using LabelSeq = std::vector<Label>;

/// Levenshtein distance with unit costs over any two random-access ranges
/// whose elements compare with ==. Two-row dynamic program.
template <typename SeqA, typename SeqB>
std::size_t edit_distance(const SeqA& a, const SeqB& b) {
  const std::size_t n = std::size(a), m = std::size(b);
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

/// 1 - edit_distance / max(len(c), len(r)).
template <typename SeqA, typename SeqB>
double structure_similarity(const SeqA& candidate, const SeqB& reference) {
  const std::size_t longest = std::max(std::size(candidate), std::size(reference));
  if (longest == 0) throw Error(ErrorCode::BothEmpty, "structure similarity of two empty sequences");
  return 1.0 - static_cast<double>(edit_distance(candidate, reference)) / static_cast<double>(longest);
}

inline std::size_t total_edits(std::span<const std::pair<LabelSeq, LabelSeq>> pairs) {
  if (pairs.empty()) throw Error(ErrorCode::EmptyList, "total_edits over an empty list");
  std::size_t total = 0;
  for (const auto& [c, r] : pairs) total += edit_distance(c, r);
  return total;
}

namespace detail {

inline std::vector<std::string> rouge_tokens(std::string_view s) {
  std::vector<std::string> out;
  for (auto& w : text::split_whitespace(s)) out.push_back(text::lower(w));
  return out;
}

inline double f1(double overlap, double cand_total, double ref_total) {
  if (overlap <= 0.0 || cand_total <= 0.0 || ref_total <= 0.0) return 0.0;
  const double p = overlap / cand_total, r = overlap / ref_total;
  return 2.0 * p * r / (p + r);
}

}  // namespace detail

/// ROUGE-N F1 with clipped n-gram counts, lowercased whitespace tokens.
inline double rouge_n(std::string_view candidate, std::string_view reference, int n) {
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "rouge order must be >= 1");
  const auto c = detail::rouge_tokens(candidate), r = detail::rouge_tokens(reference);
  const auto grams = [n](const std::vector<std::string>& toks) {
    std::map<std::vector<std::string>, std::size_t> out;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i)
      out[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                   toks.begin() + static_cast<std::ptrdiff_t>(i) + n)] += 1;
    return out;
  };
  const auto cg = grams(c), rg = grams(r);
  std::size_t overlap = 0, ctot = 0, rtot = 0;
  for (const auto& [g, k] : cg) {
    ctot += k;
    auto it = rg.find(g);
    if (it != rg.end()) overlap += std::min(k, it->second);
  }
  for (const auto& [_, k] : rg) rtot += k;
  return detail::f1(static_cast<double>(overlap), static_cast<double>(ctot), static_cast<double>(rtot));
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// ROUGE-L F1 from the longest common subsequence.
inline double rouge_l(std::string_view candidate, std::string_view reference) {
  const auto c = detail::rouge_tokens(candidate), r = detail::rouge_tokens(reference);
  return detail::f1(static_cast<double>(lcs_length(c, r)), static_cast<double>(c.size()), static_cast<double>(r.size()));
}

/// Per-sentence argmax label (lowest id on ties).
inline LabelSeq predicted_structure(const std::vector<std::string>& summary_sentences, const SentenceClassifier& clf) {
  if (summary_sentences.empty()) throw Error(ErrorCode::EmptySummary, "no sentences to tag");
  LabelSeq out;
  for (const auto& s : summary_sentences) out.push_back(argmax_label(clf.classify(s), clf.label_set()));
  return out;
}

/// Fallback segmentation for raw text: split after terminal surfaces.
inline std::vector<std::string> split_sentences(std::string_view raw, const std::vector<std::string>& terminals = {".", "!", "?"}) {
  std::vector<std::string> out, cur;
  for (auto& w : text::split_whitespace(raw)) {
    const bool term = std::find(terminals.begin(), terminals.end(), w) != terminals.end();
    if (w == "<eos>") continue;
    cur.push_back(w);
    if (term) {
      out.push_back(text::join(cur, " "));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(text::join(cur, " "));
  return out;
}

struct DocumentEval {
  std::string id;
  std::vector<std::string> predicted_labels;
  std::vector<std::string> reference_labels;
  double structure_similarity = 0.0;
  std::size_t edit_distance = 0;
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rougeL = 0.0;

  json to_json() const {
    return json{{"id", id},
                {"predicted_labels", predicted_labels},
                {"reference_labels", reference_labels},
                {"structure_similarity", structure_similarity},
                {"edit_distance", edit_distance},
                {"rouge1", rouge1},
                {"rouge2", rouge2},
                {"rougeL", rougeL}};
  }
};

struct RunEval {
  int run = 0;
  std::vector<DocumentEval> documents;
  double mean_structure_similarity = 0.0;
  std::size_t total_edits = 0;
  double mean_rouge1 = 0.0;
  double mean_rouge2 = 0.0;
  double mean_rougeL = 0.0;

  /// Deterministic fold in document order.
  void aggregate() {
    if (documents.empty()) throw Error(ErrorCode::EmptyList, "run has no documents");
    double s = 0, r1 = 0, r2 = 0, rl = 0;
    total_edits = 0;
    for (const auto& d : documents) {
      s += d.structure_similarity;
      total_edits += d.edit_distance;
      r1 += d.rouge1;
      r2 += d.rouge2;
      rl += d.rougeL;
    }
    const double n = static_cast<double>(documents.size());
    mean_structure_similarity = s / n;
    mean_rouge1 = r1 / n;
    mean_rouge2 = r2 / n;
    mean_rougeL = rl / n;
  }

  json to_json() const {
    json docs = json::array();
    for (const auto& d : documents) docs.push_back(d.to_json());
    return json{{"run", run},
                {"mean_structure_similarity", mean_structure_similarity},
                {"total_edits", total_edits},
                {"mean_rouge1", mean_rouge1},
                {"mean_rouge2", mean_rouge2},
                {"mean_rougeL", mean_rougeL},
                {"documents", std::move(docs)}};
  }
};

/// Corpus-level report; headline numbers are averaged over runs.
struct EvalReport {
  std::string method;
  std::string tagger;
  std::vector<RunEval> runs;
  double mean_structure_similarity = 0.0;
  double total_edits = 0.0;
  double mean_rouge1 = 0.0;
  double mean_rouge2 = 0.0;
  double mean_rougeL = 0.0;

  void aggregate() {
    if (runs.empty()) throw Error(ErrorCode::EmptyList, "report has no runs");
    mean_structure_similarity = total_edits = mean_rouge1 = mean_rouge2 = mean_rougeL = 0.0;
    for (auto& r : runs) {
      r.aggregate();
      mean_structure_similarity += r.mean_structure_similarity;
      total_edits += static_cast<double>(r.total_edits);
      mean_rouge1 += r.mean_rouge1;
      mean_rouge2 += r.mean_rouge2;
      mean_rougeL += r.mean_rougeL;
    }
    const double n = static_cast<double>(runs.size());
    mean_structure_similarity /= n;
    total_edits /= n;
    mean_rouge1 /= n;
    mean_rouge2 /= n;
    mean_rougeL /= n;
  }

  json to_json() const {
    json rs = json::array();
    for (const auto& r : runs) rs.push_back(r.to_json());
    return json{{"method", method},
                {"tagger", tagger},
                {"runs", runs.size()},
                {"mean_structure_similarity", mean_structure_similarity},
                {"total_edits", total_edits},
                {"mean_rouge1", mean_rouge1},
                {"mean_rouge2", mean_rouge2},
                {"mean_rougeL", mean_rougeL},
                {"per_run", std::move(rs)}};
  }

  /// One row per document per run.
  std::string to_csv() const {
    std::string out = "run,id,structure_similarity,edit_distance,rouge1,rouge2,rougeL\n";
    char buf[256];
    for (const auto& r : runs) {
      for (const auto& d : r.documents) {
        std::snprintf(buf, sizeof buf, "%d,%s,%.6f,%zu,%.6f,%.6f,%.6f\n", r.run, d.id.c_str(), d.structure_similarity,
                      d.edit_distance, d.rouge1, d.rouge2, d.rougeL);
        out += buf;
      }
    }
    return out;
  }
};

/// Scores one generated summary against its reference.
inline DocumentEval evaluate_document(std::string id, const LabelSeq& predicted, const LabelSeq& reference,
                                      std::string_view generated_text, std::string_view reference_text) {
  DocumentEval d;
  d.id = std::move(id);
  for (const auto& l : predicted) d.predicted_labels.push_back(l.name);
  for (const auto& l : reference) d.reference_labels.push_back(l.name);
  d.edit_distance = edit_distance(predicted, reference);
  d.structure_similarity = structure_similarity(predicted, reference);
  d.rouge1 = rouge_n(generated_text, reference_text, 1);
  d.rouge2 = rouge_n(generated_text, reference_text, 2);
  d.rougeL = rouge_l(generated_text, reference_text);
  return d;
}

}  // namespace sentbs
