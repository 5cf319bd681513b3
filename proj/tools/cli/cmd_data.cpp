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
#include <sstream>

#include "commands.hpp"
#include "h2ke/corpus.hpp"
#include "h2ke/subword.hpp"

namespace h2ke::cli {

namespace {

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

corpus::LanguageRegistry registry_with(const std::vector<std::string>& extra) {
  corpus::LanguageRegistry reg;
  for (const auto& code : extra) {
    if (!reg.contains(code)) reg.add(code);
  }
  return reg;
}

std::vector<corpus::ParallelExample> load_all(const std::vector<std::filesystem::path>& files,
                                              const corpus::LanguageRegistry& reg) {
  std::vector<corpus::ParallelExample> all;
  for (const auto& f : files) {
    auto part = corpus::load_corpus(f, corpus::format_from_path(f), reg);
    all.insert(all.end(), part.begin(), part.end());
  }
  return all;
}

std::string tagged_jsonl(const std::vector<corpus::TaggedExample>& examples) {
  std::string out;
  for (const auto& t : examples) {
    const auto& e = t.example;
    out += nlohmann::json{{"id", e.id},
                          {"src", e.source_text},
                          {"tgt", e.target_text},
                          {"src_lang", e.source_lang.code},
                          {"tgt_lang", e.target_lang.code}}
               .dump() +
           "\n";
  }
  return out;
}

}  // namespace

void register_tokenizer_train(CLI::App& app, Context& ctx) {
  struct Opts {
    std::vector<std::filesystem::path> corpora, texts;
    std::filesystem::path out;
    int vocab_size = 8000;
    int max_piece_len = 16;
    int seed_size = 100000;
    double shrink = 0.75;
    std::string extra_langs;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("tokenizer-train",
                                 "Train the shared unigram subword tokenizer on all languages");
  add_inputs(*sub, "--in", o->corpora, "Parallel corpus files (.jsonl or .tsv); both sides are used",
             false);
  add_inputs(*sub, "--text", o->texts, "Plain text files, one sentence per line", false);
  add_output(*sub, "--out", o->out, "Tokenizer model file to write (JSON)");
  sub->add_option("--vocab-size", o->vocab_size, "Vocabulary size including special tokens")
      ->check(CLI::PositiveNumber);
  sub->add_option("--max-piece-len", o->max_piece_len, "Longest piece in code points")
      ->check(CLI::PositiveNumber);
  sub->add_option("--seed-size", o->seed_size, "Size of the initial seed vocabulary")
      ->check(CLI::PositiveNumber);
  sub->add_option("--shrink", o->shrink, "Share of pieces kept in each pruning round")
      ->check(CLI::Range(0.01, 0.99));
  sub->add_option("--extra-langs", o->extra_langs,
                  "Comma-separated language codes beyond Hanja, oKo, cKo and En");
  sub->callback([o, &ctx] {
    if (o->corpora.empty() && o->texts.empty()) {
      throw CLI::ValidationError("tokenizer-train", "give at least one --in or --text file");
    }
    ctx.run = [o, &ctx] {
      const auto extra = split_csv(o->extra_langs);
      const auto reg = registry_with(extra);
      std::vector<std::string> sentences;
      for (const auto& e : load_all(o->corpora, reg)) {
        sentences.push_back(e.source_text);
        sentences.push_back(e.target_text);
      }
      for (const auto& f : o->texts) {
        for (auto& l : read_lines(f)) {
          if (!l.empty()) sentences.push_back(std::move(l));
        }
      }
      subword::TokenizerConfig cfg;
      cfg.vocab_size = o->vocab_size;
      cfg.max_piece_len = o->max_piece_len;
      cfg.seed_size = o->seed_size;
      cfg.shrink_factor = o->shrink;
      cfg.tags.clear();
      for (const auto& t : reg.tags()) cfg.tags.push_back(t.code);
      const auto model = subword::train_subword(sentences, cfg);
      produce_file(o->out, [&](const std::filesystem::path& tmp) { model.save(tmp); });
      ctx.inputs = o->corpora;
      ctx.inputs.insert(ctx.inputs.end(), o->texts.begin(), o->texts.end());
      ctx.outputs = {o->out};
      write_manifest(ctx, o->out);
      ctx.io.out << nlohmann::json{{"vocab_size", model.size()},
                                   {"sentences", sentences.size()},
                                   {"hash", model.hash()},
                                   {"out", o->out.string()}}
                        .dump()
                 << "\n";
    };
  });
}

void register_prepare_data(CLI::App& app, Context& ctx) {
  struct Opts {
    std::vector<std::filesystem::path> corpora;
    std::filesystem::path out_dir;
    std::string pairs;
    std::vector<double> split = {0.8, 0.1, 0.1};
    double temperature = 1.0;
    std::size_t epoch_size = 0;
    std::uint64_t seed = 1;
    std::string extra_langs;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand(
      "prepare-data", "Tag, filter, split and optionally rebalance parallel corpora");
  add_inputs(*sub, "--in", o->corpora, "Parallel corpus files (.jsonl or .tsv)");
  add_output(*sub, "--out-dir", o->out_dir, "Directory for train/valid/test files");
  sub->add_option("--pairs", o->pairs,
                  "Allowed pair types such as Hanja-cKo,oKo-En (default: the five standard ones)");
  sub->add_option("--split", o->split, "Train, valid and test ratios")
      ->expected(3)
      ->delimiter(',');
  sub->add_option("--temperature", o->temperature,
                  "Rebalancing temperature for the training set; 1 keeps natural proportions")
      ->check(CLI::Range(1.0, 1e300));
  sub->add_option("--epoch-size", o->epoch_size,
                  "Size of the rebalanced training set (default: its natural size)");
  sub->add_option("--seed", o->seed, "Seed for splitting and rebalancing");
  sub->add_option("--extra-langs", o->extra_langs,
                  "Comma-separated language codes beyond Hanja, oKo, cKo and En");
  sub->callback([o, &ctx] {
    ctx.run = [o, &ctx] {
      const auto reg = registry_with(split_csv(o->extra_langs));
      const auto all = load_all(o->corpora, reg);
      const auto spec = o->pairs.empty() ? corpus::PairSpec::full()
                                         : corpus::PairSpec::parse(o->pairs, reg);
      const auto tagged = corpus::build_training_pairs(all, spec);
      std::vector<corpus::ParallelExample> kept;
      std::map<std::string, const corpus::TaggedExample*> by_id;
      for (const auto& t : tagged.examples) {
        kept.push_back(t.example);
        if (!by_id.emplace(t.example.id, &t).second) {
          throw InvalidArgument("duplicate example id '" + t.example.id + "'");
        }
      }
      const auto parts = corpus::split(kept, {o->split[0], o->split[1], o->split[2]}, o->seed);
      auto collect = [&](const std::vector<std::string>& ids) {
        std::vector<corpus::TaggedExample> out;
        for (const auto& id : ids) out.push_back(*by_id.at(id));
        return out;
      };
      auto train = collect(parts.train);
      const auto valid = collect(parts.valid);
      const auto test = collect(parts.test);
      if (o->temperature > 1.0 && !train.empty()) {
        const auto size = o->epoch_size ? o->epoch_size : train.size();
        train = corpus::rebalance(corpus::group_by_pair(train), o->temperature, size, o->seed);
      }

      const auto& dir = o->out_dir;
      std::filesystem::create_directories(dir);
      ctx.outputs.clear();
      auto emit = [&](const std::string& name, const std::string& content) {
        write_file_atomic(dir / name, content);
        ctx.outputs.push_back(dir / name);
      };
      emit("train.jsonl", tagged_jsonl(train));
      emit("valid.jsonl", tagged_jsonl(valid));
      emit("test.jsonl", tagged_jsonl(test));
      // Untagged test sources and references per pair type, for translate
      // and eval-bleu.
      std::map<corpus::PairType, std::pair<std::string, std::string>> per_pair;
      for (const auto& t : test) {
        const auto& e = t.example;
        const auto tag = e.target_lang.token_form + " ";
        auto src = e.source_text;
        if (src.rfind(tag, 0) == 0) src = src.substr(tag.size());
        auto& [s, r] = per_pair[t.pair_type()];
        s += src + "\n";
        r += e.target_text + "\n";
      }
      for (const auto& [pair, files] : per_pair) {
        const auto stem = "test." + pair.first + "-" + pair.second;
        emit(stem + ".src.txt", files.first);
        emit(stem + ".ref.txt", files.second);
      }
      std::vector<corpus::ParallelExample> stats_input;
      for (const auto& t : tagged.examples) stats_input.push_back(t.example);
      const auto stats = corpus::corpus_stats(stats_input);
      emit("stats.txt", stats.to_table());
      ctx.inputs = o->corpora;
      write_manifest(ctx, dir / "prepare");
      ctx.io.out << stats.to_table();
      ctx.io.out << nlohmann::json{{"train", train.size()},
                                   {"valid", valid.size()},
                                   {"test", test.size()},
                                   {"filtered", tagged.filtered}}
                        .dump()
                 << "\n";
    };
  });
}

}  // namespace h2ke::cli
