// Copyright (c) 2026, The sentbs Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "sentbs/app.hpp"

using namespace sentbs;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::string trace;
  std::string backend;
  std::string remote_addr;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--seed", seed, "Base seed (overrides the config)");
    cmd->add_option("--trace", trace, "Write per-step engine traces to this JSONL file");
    cmd->add_option("--backend", backend, "toy or remote")->check(CLI::IsMember({"toy", "remote"}));
    cmd->add_option("--remote-addr", remote_addr, "HOST:PORT of a protocol server");
  }

  void apply(app::RunConfig& c) const {
    if (seed) c.params.seed = *seed;
    if (!trace.empty()) c.trace = trace;
    if (backend == "toy") c.backend = app::BackendKind::Toy;
    if (backend == "remote") c.backend = app::BackendKind::Remote;
    if (!remote_addr.empty()) {
      c.backend = app::BackendKind::Remote;
      c.remote_addr = remote_addr;
    }
    c.validate();
  }
};

std::vector<int> parse_sweep(const std::string& s) {
  std::vector<int> out;
  if (s.empty()) return out;
  try {
    const auto dots = s.find("..");
    if (dots != std::string::npos) {
      const int lo = std::stoi(s.substr(0, dots)), hi = std::stoi(s.substr(dots + 2));
      if (lo > hi) throw Error(ErrorCode::ConfigError, "empty k range " + s);
      for (int k = lo; k <= hi; ++k) out.push_back(k);
    } else {
      std::size_t start = 0;
      while (start <= s.size()) {
        const auto comma = s.find(',', start);
        out.push_back(std::stoi(s.substr(start, comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
    }
  } catch (const std::invalid_argument&) {
    throw Error(ErrorCode::ConfigError, "bad k sweep '" + s + "', expected LO..HI or a comma list");
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Sentence-level beam search for structure-controlled generation"};
  cli.require_subcommand(1);

  app::SynthOptions synth;
  int synth_docs = -1;
  std::int64_t synth_seed = -1;
  auto* c_synth = cli.add_subcommand("synth", "Write a synthetic corpus from a spec");
  c_synth->add_option("--spec", synth.spec_path, "Corpus spec JSON")->required();
  c_synth->add_option("--out", synth.out_path, "Output JSONL")->required();
  c_synth->add_option("--documents", synth_docs, "Override the document count");
  c_synth->add_option("--seed", synth_seed, "Override the spec seed");

  app::FitOptions fit;
  auto* c_fit = cli.add_subcommand("fit", "Fit the toy LM and a keyword lexicon on a corpus");
  c_fit->add_option("--corpus", fit.corpus_path, "Training corpus JSONL")->required();
  c_fit->add_option("--spec", fit.spec_path, "Corpus spec (vocabulary, labels, spec lexicons)");
  c_fit->add_option("--lm-out", fit.lm_out, "Where to write the toy LM");
  c_fit->add_option("--lexicon-out", fit.lexicon_out, "Where to write the lexicon");
  c_fit->add_option("--order", fit.order, "n-gram order")->check(CLI::Range(1, 5));
  c_fit->add_option("--smoothing", fit.smoothing, "Add-alpha smoothing");
  c_fit->add_option("--lexicon-source", fit.lexicon_source, "learned or spec")
      ->check(CLI::IsMember({"learned", "spec"}));

  std::string gen_config;
  Overrides gen_over;
  auto* c_gen = cli.add_subcommand("generate", "Generate summaries for every document in a corpus");
  c_gen->add_option("--config", gen_config, "Run config JSON")->required();
  gen_over.add_to(c_gen);

  app::EvaluateOptions ev;
  std::string ev_config, ev_tagger;
  auto* c_eval = cli.add_subcommand("evaluate", "Score generation records against the corpus");
  c_eval->add_option("--config", ev_config, "Run config JSON (supplies paths and tagger)");
  c_eval->add_option("--records", ev.records_path, "Generation records JSONL");
  c_eval->add_option("--corpus", ev.corpus_path, "Reference corpus JSONL");
  c_eval->add_option("--report", ev.report_out, "Report JSON");
  c_eval->add_option("--csv", ev.csv_out, "Per-document CSV");
  c_eval->add_option("--tagger", ev_tagger, "gold, lexicon or engine")
      ->check(CLI::IsMember({"gold", "lexicon", "engine"}));
  c_eval->add_option("--spec", ev.spec_path, "Corpus spec (gold tagger)");
  c_eval->add_option("--lexicon", ev.lexicon_path, "Lexicon (lexicon tagger)");

  std::string cmp_a, cmp_b, cmp_out, cmp_sweep;
  Overrides cmp_over;
  auto* c_cmp = cli.add_subcommand("compare", "Side-by-side table of two configurations");
  c_cmp->add_option("config_a", cmp_a, "First run config")->required();
  c_cmp->add_option("config_b", cmp_b, "Second run config")->required();
  c_cmp->add_option("--out", cmp_out, "Write the table as JSON");
  c_cmp->add_option("--sweep-k", cmp_sweep, "Replace config_b's k with each value, e.g. 4..8");
  cmp_over.add_to(c_cmp);

  app::ServeOptions serve;
  auto* c_serve = cli.add_subcommand("serve", "Serve the toy backend over the protocol");
  c_serve->add_option("--lm", serve.lm_path, "Toy LM JSON")->required();
  c_serve->add_option("--lexicon", serve.lexicon_path, "Lexicon JSON");
  c_serve->add_option("--spec", serve.spec_path, "Corpus spec (labels)");
  c_serve->add_option("--port", serve.port, "TCP port on 127.0.0.1 (0 picks one; omit for stdio)");
  c_serve->add_option("--max-connections", serve.max_connections, "Exit after this many connections");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = cli.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*c_synth) {
      if (synth_docs >= 0) synth.documents = synth_docs;
      if (synth_seed >= 0) synth.seed = static_cast<std::uint64_t>(synth_seed);
      std::cout << app::cmd_synth(synth) << " documents\n";
    } else if (*c_fit) {
      app::cmd_fit(fit);
    } else if (*c_gen) {
      app::RunConfig cfg = app::RunConfig::load(gen_config);
      gen_over.apply(cfg);
      const auto out = app::cmd_generate(cfg);
      std::cout << out.records.size() << " records\n";
    } else if (*c_eval) {
      if (!ev_config.empty()) {
        const auto cfg = app::RunConfig::load(ev_config);
        if (ev.records_path.empty()) ev.records_path = cfg.output;
        if (ev.corpus_path.empty()) ev.corpus_path = cfg.corpus;
        if (ev.report_out.empty()) ev.report_out = cfg.report;
        if (ev.spec_path.empty()) ev.spec_path = cfg.spec;
        if (ev.lexicon_path.empty()) ev.lexicon_path = cfg.lexicon;
        if (ev_tagger.empty()) ev.tagger = cfg.tagger;
      }
      if (!ev_tagger.empty()) ev.tagger = app::parse_tagger(ev_tagger);
      if (ev.records_path.empty() || ev.corpus_path.empty())
        throw Error(ErrorCode::ConfigError, "evaluate needs --records and --corpus (or --config)");
      const auto rep = app::cmd_evaluate(ev);
      std::printf("runs %zu  structure %.4f  edits %.1f  rouge-1 %.4f  rouge-2 %.4f  rouge-L %.4f\n", rep.runs.size(),
                  rep.mean_structure_similarity, rep.total_edits, rep.mean_rouge1, rep.mean_rouge2, rep.mean_rougeL);
    } else if (*c_cmp) {
      app::RunConfig a = app::RunConfig::load(cmp_a), b = app::RunConfig::load(cmp_b);
      cmp_over.apply(a);
      cmp_over.apply(b);
      const auto table = app::cmd_compare(a, b, parse_sweep(cmp_sweep));
      std::cout << table.to_markdown();
      if (!cmp_out.empty()) app::write_text_file(cmp_out, table.to_json().dump(2) + "\n");
    } else if (*c_serve) {
      app::cmd_serve(serve);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
