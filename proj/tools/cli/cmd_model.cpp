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
#include <memory>
#include <optional>

#include "commands.hpp"
#include "h2ke/checkpoint.hpp"
#include "h2ke/corpus.hpp"
#include "h2ke/decoding.hpp"
#include "h2ke/lm.hpp"
#include "h2ke/training.hpp"

namespace h2ke::cli {

namespace {

struct ModelFlags {
  std::string preset = "tiny";
  int max_seq_len = 256;
  std::optional<double> dropout;

  void add(CLI::App& sub) {
    sub.add_option("--preset", preset, "Model size: tiny, base or big")
        ->check(CLI::IsMember({"tiny", "base", "big"}));
    sub.add_option("--max-seq-len", max_seq_len, "Longest source or target in tokens")
        ->check(CLI::PositiveNumber);
    sub.add_option("--dropout", dropout, "Dropout rate (default: the preset's)")
        ->check(CLI::Range(0.0, 0.99));
  }
  model::TransformerConfig make(int vocab) const {
    auto c = model::TransformerConfig::preset(preset, vocab);
    c.max_seq_len = max_seq_len;
    if (dropout) c.dropout = *dropout;
    return c;
  }
};

struct TrainerFlags {
  training::TrainerConfig cfg;

  void add(CLI::App& sub, bool lm) {
    if (lm) {
      cfg.max_steps = 1000;
      cfg.label_smoothing = 0.0;
    }
    sub.add_option("--max-steps", cfg.max_steps, "Number of optimizer steps");
    sub.add_option("--tokens-per-batch", cfg.tokens_per_batch,
                   "Padded token budget of one batch (source plus target)")
        ->check(CLI::PositiveNumber);
    sub.add_option("--warmup", cfg.warmup_steps, "Warmup steps of the learning-rate schedule")
        ->check(CLI::PositiveNumber);
    sub.add_option("--lr-scale", cfg.lr_scale, "Multiplier on the learning-rate schedule");
    sub.add_option("--label-smoothing", cfg.label_smoothing, "Label smoothing epsilon")
        ->check(CLI::Range(0.0, 0.999));
    sub.add_option("--clip-norm", cfg.clip_norm, "Gradient norm clip; 0 disables");
    sub.add_option("--validate-every", cfg.validate_every, "Steps between validations")
        ->check(CLI::PositiveNumber);
    sub.add_option("--keep-best", cfg.keep_best_k, "Number of best checkpoints kept")
        ->check(CLI::PositiveNumber);
    sub.add_option("--seed", cfg.seed, "Seed for initialization, batching and dropout");
  }
};

std::vector<corpus::TaggedExample> load_tagged(const std::filesystem::path& path) {
  std::vector<corpus::TaggedExample> out;
  for (auto& e : corpus::load_corpus(path, corpus::CorpusFormat::kJsonl)) out.push_back({e});
  return out;
}

decoding::LengthNorm parse_norm(const std::string& s) {
  return s == "none" ? decoding::LengthNorm::kNone : decoding::LengthNorm::kMean;
}

}  // namespace

void register_train(CLI::App& app, Context& ctx) {
  struct Opts {
    std::filesystem::path train, valid, spm, out, checkpoint_dir;
    ModelFlags model;
    TrainerFlags trainer;
    int average = 5;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("train", "Train a multilingual translation model");
  add_input(*sub, "--train", o->train, "Tagged training set (JSONL from prepare-data)");
  add_input(*sub, "--valid", o->valid, "Tagged validation set (JSONL from prepare-data)");
  add_input(*sub, "--spm", o->spm, "Tokenizer model from tokenizer-train");
  add_output(*sub, "--out", o->out, "Checkpoint to write");
  add_output(*sub, "--checkpoint-dir", o->checkpoint_dir,
             "Directory for the best checkpoints (default: <out>.ckpts)", false);
  sub->add_option("--average", o->average,
                  "Average this many best checkpoints into --out; 0 writes the final parameters")
      ->check(CLI::NonNegativeNumber);
  o->model.add(*sub);
  o->trainer.add(*sub, false);
  sub->callback([o, &ctx] {
    ctx.run = [o, &ctx] {
      const auto spm = subword::SubwordModel::load(o->spm);
      const auto train_set = training::encode_examples(spm, load_tagged(o->train));
      const auto valid_set = training::encode_examples(spm, load_tagged(o->valid));
      if (train_set.empty()) throw InvalidArgument("training set " + o->train.string() + " is empty");
      if (valid_set.empty()) throw InvalidArgument("validation set " + o->valid.string() + " is empty");
      auto cfg = o->trainer.cfg;
      cfg.subword_hash = spm.hash();
      cfg.checkpoint_dir =
          o->checkpoint_dir.empty() ? std::filesystem::path(o->out.string() + ".ckpts") : o->checkpoint_dir;
      cfg.manifest_path = o->out.string() + ".train.jsonl";
      std::filesystem::remove(cfg.manifest_path);
      const auto mcfg = o->model.make(spm.size());
      auto result = training::train(train_set, valid_set, model::init_params<float>(mcfg, cfg.seed),
                                    cfg, [&ctx](const training::TrainRecord& r) {
                                      ctx.io.err << r.to_json().dump() << "\n";
                                    });
      model::ModelParams<float> final_params = std::move(result.params);
      std::size_t averaged = 0;
      if (o->average > 0 && !result.best.empty()) {
        std::vector<std::filesystem::path> paths;
        for (const auto& k : result.best) {
          if (paths.size() < static_cast<std::size_t>(o->average)) paths.push_back(k.record.checkpoint);
        }
        final_params = training::average_checkpoints<float>(paths);
        averaged = paths.size();
      }
      const double valid_loss = training::validation_loss(final_params, valid_set);
      produce_file(o->out, [&](const std::filesystem::path& tmp) {
        model::save_checkpoint(tmp, final_params, spm.hash(),
                               {{"kind", "nmt"}, {"averaged", averaged}});
      });
      ctx.inputs = {o->train, o->valid, o->spm};
      ctx.outputs = {o->out, cfg.manifest_path};
      write_manifest(ctx, o->out);
      ctx.io.out << nlohmann::json{{"out", o->out.string()},
                                   {"averaged", averaged},
                                   {"valid_loss", valid_loss},
                                   {"length_filtered", result.length_filtered},
                                   {"parameters", final_params.parameter_count()}}
                        .dump()
                 << "\n";
    };
  });
}

void register_train_lm(CLI::App& app, Context& ctx) {
  struct Opts {
    std::vector<std::filesystem::path> texts;
    std::filesystem::path spm, out;
    ModelFlags model;
    TrainerFlags trainer;
    double valid_fraction = 0.1;
  };
  auto o = std::make_shared<Opts>();
  o->model.max_seq_len = 128;
  auto* sub = app.add_subcommand("train-lm", "Train the internal decoder-only language model");
  add_inputs(*sub, "--in", o->texts, "Monolingual text files, one sentence per line");
  add_input(*sub, "--spm", o->spm, "Tokenizer model from tokenizer-train");
  add_output(*sub, "--out", o->out, "Language-model checkpoint to write");
  sub->add_option("--valid-fraction", o->valid_fraction, "Share of sentences held out for validation")
      ->check(CLI::Range(0.0, 0.99));
  o->model.add(*sub);
  o->trainer.add(*sub, true);
  sub->callback([o, &ctx] {
    ctx.run = [o, &ctx] {
      const auto spm = subword::SubwordModel::load(o->spm);
      std::vector<std::string> sentences;
      for (const auto& f : o->texts) {
        for (auto& l : read_lines(f)) {
          if (!l.empty()) sentences.push_back(std::move(l));
        }
      }
      lm::LmTrainConfig cfg;
      cfg.model = o->model.make(spm.size());
      cfg.trainer = o->trainer.cfg;
      cfg.valid_fraction = o->valid_fraction;
      const auto model = lm::train_lm(sentences, spm, cfg);
      produce_file(o->out, [&](const std::filesystem::path& tmp) { model.save(tmp); });
      ctx.inputs = o->texts;
      ctx.inputs.push_back(o->spm);
      ctx.outputs = {o->out};
      write_manifest(ctx, o->out);
      ctx.io.out << nlohmann::json{{"out", o->out.string()}, {"sentences", sentences.size()}}.dump()
                 << "\n";
    };
  });
}

void register_translate(CLI::App& app, Context& ctx) {
  struct Opts {
    std::filesystem::path model, spm, in, out;
    std::string tgt, norm = "mean";
    decoding::BeamConfig beam;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("translate", "Translate a text file line by line");
  add_input(*sub, "--model", o->model, "Translation checkpoint");
  add_input(*sub, "--spm", o->spm, "Tokenizer model the checkpoint was trained with");
  add_input(*sub, "--in", o->in, "Source text, one sentence per line");
  add_output(*sub, "--out", o->out, "Output file, one translation per input line");
  sub->add_option("--tgt", o->tgt, "Target language code, e.g. cKo")->required();
  sub->add_option("--beam", o->beam.beam_size, "Beam size")->check(CLI::PositiveNumber);
  sub->add_option("--max-len", o->beam.max_len, "Longest output in tokens")
      ->check(CLI::PositiveNumber);
  sub->add_option("--len-a", o->beam.len_a,
                  "Per-sentence limit slope: limit = min(max-len, floor(a*|src|) + b); 0 disables");
  sub->add_option("--len-b", o->beam.len_b, "Per-sentence limit offset");
  sub->add_option("--norm", o->norm, "Length normalization of hypothesis scores")
      ->check(CLI::IsMember({"mean", "none"}));
  sub->callback([o, &ctx] {
    ctx.run = [o, &ctx] {
      const auto spm = subword::SubwordModel::load(o->spm);
      const auto params = model::load_checkpoint<float>(o->model, spm.hash());
      if (params.config.decoder_only) {
        throw Error(o->model.string() + " is a language-model checkpoint, not a translation model");
      }
      auto beam = o->beam;
      beam.norm = parse_norm(o->norm);
      beam.validate(params.config.max_seq_len);
      spm.tag_id(o->tgt);
      const auto lines = read_lines(o->in);
      produce_file(o->out, [&](const std::filesystem::path& tmp) {
        std::ofstream out(tmp, std::ios::binary);
        for (const auto& l : lines) out << decoding::translate(params, spm, l, o->tgt, beam) << "\n";
        out.close();
        if (!out) throw Error("cannot write " + tmp.string());
      });
      ctx.inputs = {o->model, o->spm, o->in};
      ctx.outputs = {o->out};
      write_manifest(ctx, o->out);
      ctx.io.out << nlohmann::json{{"out", o->out.string()}, {"lines", lines.size()}}.dump() << "\n";
    };
  });
}

}  // namespace h2ke::cli
