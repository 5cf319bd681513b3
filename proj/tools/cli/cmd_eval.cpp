// Copyright 2026 The h2ke Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <fstream>
#include <map>
#include <memory>
#include <set>

#include "commands.hpp"
#include "h2ke/lm.hpp"
#include "h2ke/metrics.hpp"

namespace h2ke::cli {

namespace {

void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows) {
  std::string text;
  for (const auto& r : rows) text += r.dump() + "\n";
  write_file_atomic(path, text);
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::vector<nlohmann::json> rows;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

std::pair<std::string, std::filesystem::path> split_system(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
    throw UsageError("--system expects NAME=PATH, got '" + spec + "'");
  }
  return {spec.substr(0, eq), resolve(spec.substr(eq + 1))};
}

}  // namespace

void register_eval_bleu(CLI::App& app, Context& ctx) {
  struct Opts {
    std::filesystem::path hyp, out;
    std::vector<std::filesystem::path> refs;
    std::string pretok = "char", adapter, smoothing = "exp";
    int max_n = 4;
    int timeout_ms = 10000;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("eval-bleu", "Corpus BLEU of a hypothesis file");
  add_input(*sub, "--hyp", o->hyp, "Hypotheses, one per line");
  add_inputs(*sub, "--ref", o->refs, "Reference file(s), line-aligned with --hyp; repeat for several");
  add_output(*sub, "--out", o->out, "Write the JSON report here as well as to stdout", false);
  sub->add_option("--pretokenize", o->pretok,
                  "Tokenization before n-gram counting: char, whitespace or adapter")
      ->check(CLI::IsMember({"char", "whitespace", "adapter", "external-adapter"}));
  sub->add_option("--adapter", o->adapter, "Command of the external pretokenizer (with --pretokenize adapter)");
  sub->add_option("--timeout-ms", o->timeout_ms, "Per-request timeout of the adapter")
      ->check(CLI::PositiveNumber);
  sub->add_option("--smoothing", o->smoothing, "exp (exponential decay) or none")
      ->check(CLI::IsMember({"exp", "none"}));
  sub->add_option("--max-n", o->max_n, "Highest n-gram order")->check(CLI::Range(1, 8));
  sub->callback([o, &ctx] {
    ctx.run = [o, &ctx] {
      const auto scheme = metrics::parse_pretok_scheme(o->pretok);
      std::unique_ptr<metrics::AdapterPretokenizer> adapter;
      if (scheme == metrics::PretokScheme::kAdapter) {
        if (o->adapter.empty()) throw UsageError("--pretokenize adapter needs --adapter");
        adapter = std::make_unique<metrics::AdapterPretokenizer>(
            o->adapter, std::chrono::milliseconds(o->timeout_ms));
      }
      auto tok = [&](const std::string& s) {
        return adapter ? (*adapter)(s) : metrics::pretokenize(s, scheme);
      };
      const auto hyp_lines = read_lines(o->hyp);
      std::vector<metrics::Tokens> hyps;
      for (const auto& l : hyp_lines) hyps.push_back(tok(l));
      std::vector<std::vector<metrics::Tokens>> refs(hyps.size());
      for (const auto& rf : o->refs) {
        const auto lines = read_lines(rf);
        if (lines.size() != hyps.size()) {
          throw InvalidArgument(rf.string() + " has " + std::to_string(lines.size()) +
                                " lines but " + o->hyp.string() + " has " +
                                std::to_string(hyps.size()));
        }
        for (std::size_t i = 0; i < lines.size(); ++i) refs[i].push_back(tok(lines[i]));
      }
      const auto report = metrics::corpus_bleu_multi(hyps, refs, o->max_n,
                                                     metrics::parse_smoothing(o->smoothing));
      auto j = report.to_json();
      j["pretokenize"] = o->pretok;
      j["sentences"] = hyps.size();
      if (!o->out.empty()) {
        write_file_atomic(o->out, j.dump(2) + "\n");
        ctx.inputs = {o->hyp};
        ctx.inputs.insert(ctx.inputs.end(), o->refs.begin(), o->refs.end());
        ctx.outputs = {o->out};
        write_manifest(ctx, o->out);
      }
      ctx.io.out << j.dump() << "\n";
    };
  });
}

void register_eval_ppl(CLI::App& app, Context& ctx) {
  struct Opts {
    std::vector<std::string> systems;
    std::string scorer = "internal", adapter;
    std::filesystem::path lm, spm, out;
    int vocab_size = 0;
    int timeout_ms = 10000;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("eval-ppl",
                                 "Per-sentence perplexity of one or more systems' outputs");
  sub->add_option("--system", o->systems,
                  "NAME=PATH of a system output file, one sentence per line; repeat per system")
      ->required()
      ->default_str("");
  sub->add_option("--scorer", o->scorer, "Language model: internal, uniform or external")
      ->check(CLI::IsMember({"internal", "uniform", "external"}));
  add_input(*sub, "--lm", o->lm, "Internal language-model checkpoint (with --scorer internal)", false);
  add_input(*sub, "--spm", o->spm, "Tokenizer model of the internal language model", false);
  sub->add_option("--adapter", o->adapter, "Command of the external scorer (with --scorer external)");
  sub->add_option("--vocab-size", o->vocab_size, "Vocabulary size of the uniform scorer")
      ->check(CLI::PositiveNumber);
  sub->add_option("--timeout-ms", o->timeout_ms, "Per-request timeout of the external scorer")
      ->check(CLI::PositiveNumber);
  add_output(*sub, "--out", o->out, "JSONL report: one {id, system, ppl, tokens} row per sentence");
  sub->callback([o, &ctx] {
    ctx.run = [o, &ctx] {
      std::unique_ptr<lm::LmScorer> scorer;
      if (o->scorer == "internal") {
        if (o->lm.empty() || o->spm.empty()) throw UsageError("--scorer internal needs --lm and --spm");
        const auto spm = subword::SubwordModel::load(o->spm);
        scorer = std::make_unique<lm::InternalLm>(lm::InternalLm::load(o->lm, spm));
        ctx.inputs = {o->lm, o->spm};
      } else if (o->scorer == "uniform") {
        if (o->vocab_size <= 0) throw UsageError("--scorer uniform needs --vocab-size");
        scorer = std::make_unique<lm::UniformScorer>(o->vocab_size);
      } else {
        if (o->adapter.empty()) throw UsageError("--scorer external needs --adapter");
        scorer = lm::external_scorer(o->adapter, std::chrono::milliseconds(o->timeout_ms));
      }
      std::vector<nlohmann::json> rows;
      nlohmann::json summary = nlohmann::json::array();
      std::set<std::string> seen;
      for (const auto& spec : o->systems) {
        const auto [name, path] = split_system(spec);
        if (!seen.insert(name).second) throw UsageError("system '" + name + "' given twice");
        if (!std::filesystem::is_regular_file(path)) throw UsageError("--system: File does not exist: " + path.string());
        ctx.inputs.push_back(path);
        const auto lines = read_lines(path);
        const auto scored = lm::score_all(*scorer, lines);
        double nll = 0.0, ppl_sum = 0.0;
        std::size_t tokens = 0, ok = 0;
        for (std::size_t i = 0; i < scored.size(); ++i) {
          nlohmann::json r{{"id", std::to_string(i + 1)}, {"system", name}};
          if (scored[i].score) {
            r["ppl"] = scored[i].ppl;
            r["tokens"] = scored[i].score->tokens;
            nll += scored[i].score->nll;
            tokens += scored[i].score->tokens;
            ppl_sum += scored[i].ppl;
            ++ok;
          } else {
            r["error"] = scored[i].error;
          }
          rows.push_back(std::move(r));
        }
        nlohmann::json s{{"system", name}, {"sentences", lines.size()}, {"scored", ok}};
        if (ok > 0) {
          s["mean_ppl"] = ppl_sum / static_cast<double>(ok);
          s["corpus_ppl"] = lm::ppl_from_score({nll, tokens});
        }
        summary.push_back(std::move(s));
      }
      write_jsonl(o->out, rows);
      ctx.outputs = {o->out};
      write_manifest(ctx, o->out);
      ctx.io.out << nlohmann::json{{"scorer", scorer->name()}, {"systems", summary}}.dump() << "\n";
    };
  });
}

void register_fit_bt(CLI::App& app, Context& ctx) {
  struct Opts {
    std::vector<std::filesystem::path> ppl;
    std::filesystem::path outcomes, out, outcomes_out;
    std::vector<std::string> systems;
    bool table = false;
    double tolerance = 1e-10;
    int max_sweeps = 10000;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("fit-bt", "Pairwise win rates and a Bradley-Terry fit");
  auto* ppl = add_inputs(*sub, "--ppl", o->ppl, "eval-ppl report(s); lower perplexity wins an item", false);
  auto* oc = add_input(*sub, "--outcomes", o->outcomes,
                       "JSONL comparison outcomes {item, system_a, system_b, result}", false);
  ppl->excludes(oc);
  sub->add_option("--systems", o->systems,
                  "Systems to compare, in this order (default: all, first-appearance order)")
      ->delimiter(',')
      ->default_str("");
  sub->add_flag("--table", o->table, "Print a win/tie/loss table instead of JSON");
  sub->add_option("--tolerance", o->tolerance, "Convergence tolerance of the strength updates")
      ->check(CLI::PositiveNumber);
  sub->add_option("--max-sweeps", o->max_sweeps, "Upper bound on update sweeps")
      ->check(CLI::PositiveNumber);
  add_output(*sub, "--out", o->out, "Write the JSON fit here", false);
  add_output(*sub, "--outcomes-out", o->outcomes_out, "Write the derived comparison outcomes here", false);
  sub->callback([o, &ctx] {
    ctx.run = [o, &ctx] {
      std::vector<metrics::ComparisonOutcome> outcomes;
      std::size_t dropped = 0;
      const std::set<std::string> wanted(o->systems.begin(), o->systems.end());
      auto keep = [&](const std::string& s) { return wanted.empty() || wanted.count(s) > 0; };
      if (!o->ppl.empty()) {
        std::vector<std::string> order;
        std::map<std::string, std::map<std::string, double>> scores;
        std::set<std::string> failed;
        for (const auto& path : o->ppl) {
          for (const auto& r : read_jsonl(path)) {
            const auto sys = r.at("system").get<std::string>();
            const auto id = r.at("id").get<std::string>();
            if (!keep(sys)) continue;
            if (!scores.count(sys)) order.push_back(sys);
            if (r.contains("ppl")) {
              scores[sys][id] = r.at("ppl").get<double>();
            } else {
              scores[sys];
              failed.insert(id);
            }
          }
        }
        if (!o->systems.empty()) {
          for (const auto& s : o->systems) {
            if (!scores.count(s)) throw UsageError("system '" + s + "' is not in the reports");
          }
          order = o->systems;
        }
        std::set<std::string> all_items;
        for (auto& [_, m] : scores) {
          for (auto& [id, _2] : m) all_items.insert(id);
        }
        std::vector<metrics::SystemScores> systems;
        for (const auto& s : order) {
          metrics::SystemScores ss{s, {}};
          for (const auto& id : all_items) {
            bool everywhere = !failed.count(id);
            for (auto& [_, m] : scores) everywhere = everywhere && m.count(id);
            if (everywhere) ss.ppl[id] = scores[s][id];
          }
          systems.push_back(std::move(ss));
        }
        std::size_t usable = systems.empty() ? 0 : systems.front().ppl.size();
        dropped = all_items.size() - usable;
        outcomes = metrics::compare_ppl(systems);
        ctx.inputs = o->ppl;
      } else if (!o->outcomes.empty()) {
        for (const auto& r : read_jsonl(o->outcomes)) {
          auto c = metrics::ComparisonOutcome::from_json(r);
          if (keep(c.system_a) && keep(c.system_b)) outcomes.push_back(std::move(c));
        }
        ctx.inputs = {o->outcomes};
      } else {
        throw UsageError("give --ppl or --outcomes");
      }
      if (outcomes.empty()) throw InvalidArgument("no comparison outcomes to fit");
      const auto fit = metrics::fit_bt(outcomes, {o->tolerance, o->max_sweeps});
      const auto rates = metrics::winning_rates(outcomes);
      auto j = fit.to_json();
      j["win_rates"] = nlohmann::json::array();
      for (const auto& r : rates) j["win_rates"].push_back(r.to_json());
      j["items_dropped"] = dropped;
      if (!o->outcomes_out.empty()) {
        std::vector<nlohmann::json> rows;
        for (const auto& c : outcomes) rows.push_back(c.to_json());
        write_jsonl(o->outcomes_out, rows);
        ctx.outputs.push_back(o->outcomes_out);
      }
      if (!o->out.empty()) {
        write_file_atomic(o->out, j.dump(2) + "\n");
        ctx.outputs.push_back(o->out);
        write_manifest(ctx, o->out);
      }
      if (o->table) {
        ctx.io.out << metrics::format_win_table(rates);
      } else {
        ctx.io.out << j.dump() << "\n";
      }
    };
  });
}

void register_analyze_translit(CLI::App& app, Context& ctx) {
  struct Opts {
    std::filesystem::path old, ref, candidate, out;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("analyze-translit",
                                 "Find archaic parenthesized annotations and how often a candidate replaces them");
  add_input(*sub, "--old", o->old, "Old translation, one sentence per line");
  add_input(*sub, "--ref", o->ref, "Modern reference, line-aligned with --old");
  add_input(*sub, "--candidate", o->candidate, "System output to check, line-aligned with --old", false);
  add_output(*sub, "--out", o->out, "Write the JSON report here", false);
  sub->callback([o, &ctx] {
    ctx.run = [o, &ctx] {
      const auto old = read_lines(o->old);
      const auto ref = read_lines(o->ref);
      std::vector<std::string> cand;
      if (!o->candidate.empty()) cand = read_lines(o->candidate);
      const auto report =
          metrics::transliteration_stats(old, ref, o->candidate.empty() ? nullptr : &cand);
      const auto j = report.to_json();
      if (!o->out.empty()) {
        write_file_atomic(o->out, j.dump(2) + "\n");
        ctx.inputs = {o->old, o->ref};
        if (!o->candidate.empty()) ctx.inputs.push_back(o->candidate);
        ctx.outputs = {o->out};
        write_manifest(ctx, o->out);
      }
      ctx.io.out << j.dump() << "\n";
    };
  });
}

}  // namespace h2ke::cli
