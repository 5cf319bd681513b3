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

#include "h2ke/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "h2ke/checkpoint.hpp"
#include "h2ke/kernels.hpp"
#include "h2ke/rng.hpp"

namespace h2ke::training {

double lr_at(std::int64_t step, int d_model, int warmup) {
  if (step < 1) throw InvalidArgument("lr_at: step must be >= 1");
  if (warmup < 1) throw InvalidArgument("lr_at: warmup must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(d_model), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

void TrainerConfig::validate() const {
  if (max_steps < 0) throw InvalidArgument("max_steps must be >= 0");
  if (warmup_steps < 1) throw InvalidArgument("warmup_steps must be >= 1");
  if (keep_best_k < 1) throw InvalidArgument("keep_best_k must be >= 1");
  if (tokens_per_batch == 0) throw InvalidArgument("tokens_per_batch must be positive");
  if (validate_every < 1) throw InvalidArgument("validate_every must be >= 1");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    throw InvalidArgument("label_smoothing must lie in [0, 1)");
  }
  if (!(lr_scale > 0.0)) throw InvalidArgument("lr_scale must be positive");
}

nlohmann::json TrainerConfig::to_json() const {
  return {{"max_steps", max_steps},
          {"tokens_per_batch", tokens_per_batch},
          {"single_example_batches", single_example_batches},
          {"label_smoothing", label_smoothing},
          {"warmup_steps", warmup_steps},
          {"lr_scale", lr_scale},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"adam_eps", adam_eps},
          {"clip_norm", clip_norm},
          {"validate_every", validate_every},
          {"keep_best_k", keep_best_k},
          {"seed", seed}};
}

TrainerConfig TrainerConfig::from_json(const nlohmann::json& j) {
  TrainerConfig c;
  c.max_steps = j.value("max_steps", c.max_steps);
  c.tokens_per_batch = j.value("tokens_per_batch", c.tokens_per_batch);
  c.single_example_batches = j.value("single_example_batches", c.single_example_batches);
  c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.lr_scale = j.value("lr_scale", c.lr_scale);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.validate_every = j.value("validate_every", c.validate_every);
  c.keep_best_k = j.value("keep_best_k", c.keep_best_k);
  c.seed = j.value("seed", c.seed);
  return c;
}

template <typename T>
OptimizerState<T> OptimizerState<T>::zeros_like(const model::ModelParams<T>& params) {
  OptimizerState s;
  s.m = params.tensors.zeros_like();
  s.v = params.tensors.zeros_like();
  return s;
}

template <typename T>
void adam_step(model::ModelParams<T>& params, const ParamSet<T>& grads,
               OptimizerState<T>& state, double lr, const TrainerConfig& config) {
  if (!params.tensors.same_layout(grads) || !params.tensors.same_layout(state.m)) {
    throw InvalidArgument("adam_step: gradient or moment layout differs from parameters");
  }
  ++state.step;
  const double bias1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(state.step));
  const auto& K = kernels::active<T>();
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    auto& p = params.tensors[i];
    K.adam(p.data.data(), grads[i].data.data(), state.m[i].data.data(),
           state.v[i].data.data(), p.size(), static_cast<T>(lr),
           static_cast<T>(config.adam_beta1), static_cast<T>(config.adam_beta2),
           static_cast<T>(config.adam_eps), static_cast<T>(bias1), static_cast<T>(bias2));
  }
}

nlohmann::json TrainRecord::to_json() const {
  nlohmann::json j{{"step", step}, {"train_loss", train_loss}, {"valid_loss", valid_loss}};
  if (!checkpoint.empty()) j["checkpoint"] = checkpoint;
  return j;
}

std::vector<TrainExample> encode_examples(const subword::SubwordModel& spm,
                                          const std::vector<corpus::TaggedExample>& pairs) {
  std::vector<TrainExample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    out.push_back({spm.encode(p.example.source_text), spm.encode(p.example.target_text)});
  }
  return out;
}

TrainingDiverged::TrainingDiverged(std::int64_t step, const std::string& batch_id,
                                   std::string last_good_checkpoint)
    : Error("training diverged at step " + std::to_string(step) + " (batch " + batch_id +
            ")" +
            (last_good_checkpoint.empty() ? std::string()
                                          : "; last good checkpoint: " + last_good_checkpoint)),
      step_(step),
      last_good_(std::move(last_good_checkpoint)) {}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<TrainExample>& examples,
                                                   std::size_t tokens_per_batch,
                                                   std::uint64_t seed, std::uint64_t epoch,
                                                   bool single_example) {
  const auto order = corpus::epoch_permutation(examples.size(), seed, epoch);
  std::vector<std::vector<std::size_t>> batches;
  if (single_example) {
    for (std::size_t i : order) batches.push_back({i});
    return batches;
  }
  auto length = [&](std::size_t i) {
    return std::max(examples[i].src.size(), examples[i].tgt.size() + 1);
  };
  // Sort within pools of shuffled examples so batches hold similar lengths
  // while the epoch stays randomized.
  constexpr std::size_t kPool = 1024;
  for (std::size_t start = 0; start < order.size(); start += kPool) {
    std::vector<std::size_t> pool(order.begin() + start,
                                  order.begin() + std::min(order.size(), start + kPool));
    std::stable_sort(pool.begin(), pool.end(),
                     [&](std::size_t a, std::size_t b) { return length(a) < length(b); });
    std::vector<std::size_t> cur;
    std::size_t cur_max = 0;
    for (std::size_t i : pool) {
      const std::size_t len = length(i);
      const std::size_t widest = std::max(cur_max, len);
      // Padded cost counts both sides of the batch.
      if (!cur.empty() && 2 * widest * (cur.size() + 1) > tokens_per_batch) {
        batches.push_back(std::move(cur));
        cur.clear();
        cur_max = 0;
      }
      cur.push_back(i);
      cur_max = std::max(cur_max, len);
    }
    if (!cur.empty()) batches.push_back(std::move(cur));
  }
  Rng rng(mix_seed(seed, epoch + 0x5eed));
  rng.shuffle(batches);
  return batches;
}

namespace {

model::Batch to_batch(const std::vector<TrainExample>& examples,
                      const std::vector<std::size_t>& idx, bool decoder_only, std::string id) {
  std::vector<std::vector<int>> src, tgt;
  for (std::size_t i : idx) {
    if (!decoder_only) src.push_back(examples[i].src);
    tgt.push_back(examples[i].tgt);
  }
  return model::Batch::make(src, tgt, std::move(id));
}

template <typename T>
double clip_gradients(ParamSet<T>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (T x : g.data) sq += static_cast<double>(x) * static_cast<double>(x);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    for (auto& g : grads) {
      for (T& x : g.data) x *= scale;
    }
  }
  return norm;
}

}  // namespace

template <typename T>
double validation_loss(const model::ModelParams<T>& params,
                       const std::vector<TrainExample>& examples, std::size_t tokens_per_batch) {
  if (examples.empty()) throw InvalidArgument("validation set is empty");
  double nll = 0.0;
  std::size_t tokens = 0;
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return examples[a].tgt.size() < examples[b].tgt.size();
  });
  std::size_t start = 0;
  while (start < order.size()) {
    std::size_t end = start;
    std::size_t widest = 0;
    while (end < order.size()) {
      const auto& e = examples[order[end]];
      const std::size_t w = std::max({widest, e.src.size(), e.tgt.size() + 1});
      if (end > start && 2 * w * (end - start + 1) > tokens_per_batch) break;
      widest = w;
      ++end;
    }
    const std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
    const auto batch = to_batch(examples, idx, params.config.decoder_only, "valid");
    const auto r = model::evaluate_loss(params, batch, {0.0, false, 0});
    nll += r.nll_sum;
    tokens += r.tokens;
    start = end;
  }
  return nll / static_cast<double>(std::max<std::size_t>(tokens, 1));
}

template <typename T>
TrainResult<T> train(const std::vector<TrainExample>& train_set,
                     const std::vector<TrainExample>& valid_set, model::ModelParams<T> params,
                     const TrainerConfig& config, const ValidationHook& on_validate) {
  config.validate();
  TrainResult<T> result;
  if (config.max_steps == 0) {
    result.params = std::move(params);
    return result;
  }
  const auto limit = static_cast<std::size_t>(params.config.max_seq_len);
  std::vector<TrainExample> kept;
  for (const auto& e : train_set) {
    if (e.src.size() > limit || e.tgt.size() + 1 > limit ||
        (!params.config.decoder_only && e.src.empty())) {
      ++result.length_filtered;
    } else {
      kept.push_back(e);
    }
  }
  if (kept.empty()) throw InvalidArgument("train: no training pairs fit max_seq_len");
  if (valid_set.empty()) throw InvalidArgument("train: validation set is empty");

  const bool on_disk = !config.checkpoint_dir.empty();
  if (on_disk) std::filesystem::create_directories(config.checkpoint_dir);
  std::ofstream manifest;
  if (!config.manifest_path.empty()) {
    if (config.manifest_path.has_parent_path()) {
      std::filesystem::create_directories(config.manifest_path.parent_path());
    }
    manifest.open(config.manifest_path, std::ios::binary | std::ios::trunc);
    if (!manifest) throw Error("cannot write manifest " + config.manifest_path.string());
  }

  auto state = OptimizerState<T>::zeros_like(params);
  std::uint64_t epoch = 0;
  auto batches = make_batches(kept, config.tokens_per_batch, config.seed, epoch,
                              config.single_example_batches);
  std::size_t cursor = 0;
  double loss_sum = 0.0;
  std::int64_t loss_count = 0;
  std::string last_good;

  for (std::int64_t step = 1; step <= config.max_steps; ++step) {
    if (cursor == batches.size()) {
      ++epoch;
      batches = make_batches(kept, config.tokens_per_batch, config.seed, epoch,
                             config.single_example_batches);
      cursor = 0;
    }
    const std::size_t index = cursor++;
    const auto batch = to_batch(kept, batches[index], params.config.decoder_only,
                                "epoch" + std::to_string(epoch) + ":" + std::to_string(index));
    model::LossResult<T> r;
    try {
      r = model::loss_and_grads(params, batch,
                                {config.label_smoothing, true, mix_seed(config.seed, step)});
    } catch (const model::NonFiniteLoss&) {
      if (on_disk) {
        const auto path = config.checkpoint_dir / "last_good.ckpt";
        model::save_checkpoint(path, params, config.subword_hash, {{"step", step - 1}});
        last_good = path.string();
      }
      throw TrainingDiverged(step, batch.id, last_good);
    }
    clip_gradients(r.grads, config.clip_norm);
    const double lr =
        config.lr_scale * lr_at(step, params.config.d_model, config.warmup_steps);
    adam_step(params, r.grads, state, lr, config);
    loss_sum += r.loss;
    ++loss_count;

    if (step % config.validate_every == 0 || step == config.max_steps) {
      TrainRecord rec;
      rec.step = step;
      rec.train_loss = loss_sum / static_cast<double>(loss_count);
      rec.valid_loss = validation_loss(params, valid_set);
      loss_sum = 0.0;
      loss_count = 0;

      // Keep the k best by (loss, step); a new record enters only if it beats
      // the current worst.
      auto& best = result.best;
      const bool room = best.size() < static_cast<std::size_t>(config.keep_best_k);
      if (room || rec.valid_loss < best.back().record.valid_loss) {
        if (!room) {
          if (on_disk) std::filesystem::remove(best.back().record.checkpoint);
          best.pop_back();
        }
        KeptCheckpoint<T> kc;
        if (on_disk) {
          const auto path =
              config.checkpoint_dir / ("step" + std::to_string(step) + ".ckpt");
          model::save_checkpoint(path, params, config.subword_hash,
                                 {{"step", step}, {"valid_loss", rec.valid_loss}});
          rec.checkpoint = path.string();
        } else {
          rec.checkpoint = "step" + std::to_string(step);
          kc.params = params;
        }
        kc.record = rec;
        auto pos = std::upper_bound(best.begin(), best.end(), rec.valid_loss,
                                    [](double v, const KeptCheckpoint<T>& c) {
                                      return v < c.record.valid_loss;
                                    });
        best.insert(pos, std::move(kc));
      }
      if (manifest.is_open()) {
        manifest << rec.to_json().dump() << '\n';
        manifest.flush();
      }
      result.history.push_back(rec);
      if (on_validate) on_validate(rec);
    }
  }
  result.params = std::move(params);
  return result;
}

std::vector<TrainRecord> select_best_checkpoints(const std::vector<TrainRecord>& history,
                                                 std::size_t k) {
  if (k == 0) throw InvalidArgument("select_best_checkpoints: k must be >= 1");
  if (history.size() < k) {
    throw InvalidArgument("select_best_checkpoints: need " + std::to_string(k) +
                          " validated checkpoints, history has " +
                          std::to_string(history.size()));
  }
  std::vector<TrainRecord> sorted = history;
  std::stable_sort(sorted.begin(), sorted.end(), [](const TrainRecord& a, const TrainRecord& b) {
    if (a.valid_loss != b.valid_loss) return a.valid_loss < b.valid_loss;
    return a.step < b.step;
  });
  sorted.resize(k);
  return sorted;
}

template <typename T>
model::ModelParams<T> average_params(const std::vector<const model::ModelParams<T>*>& inputs) {
  if (inputs.empty()) throw InvalidArgument("average: no checkpoints given");
  const auto& first = *inputs.front();
  for (const auto* p : inputs) {
    if (!(p->config == first.config) || !p->tensors.same_layout(first.tensors)) {
      throw InvalidArgument("average: checkpoints have different shapes");
    }
  }
  model::ModelParams<T> out = model::allocate_params<T>(first.config);
  const std::size_t k = inputs.size();
  std::vector<double> vals(k);
  for (std::size_t t = 0; t < out.tensors.size(); ++t) {
    auto& dst = out.tensors[t].data;
    for (std::size_t i = 0; i < dst.size(); ++i) {
      for (std::size_t j = 0; j < k; ++j) vals[j] = inputs[j]->tensors[t].data[i];
      std::sort(vals.begin(), vals.end());
      // Mean as offset from the smallest value: sorted order makes it
      // independent of input order, and equal inputs give back that value.
      double s = 0.0;
      for (double v : vals) s += v - vals.front();
      dst[i] = static_cast<T>(vals.front() + s / static_cast<double>(k));
    }
  }
  return out;
}

template <typename T>
model::ModelParams<T> average_checkpoints(const std::vector<std::filesystem::path>& paths,
                                          std::string* subword_hash) {
  if (paths.empty()) throw InvalidArgument("average: no checkpoints given");
  std::vector<model::ModelParams<T>> loaded;
  std::string hash;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    model::CheckpointInfo info;
    loaded.push_back(model::load_checkpoint<T>(paths[i], std::nullopt, false, &info));
    if (i == 0) {
      hash = info.subword_hash;
    } else if (info.subword_hash != hash) {
      throw InvalidArgument("average: " + paths[i].string() +
                            " was trained with a different subword model");
    }
  }
  std::vector<const model::ModelParams<T>*> ptrs;
  for (const auto& p : loaded) ptrs.push_back(&p);
  if (subword_hash) *subword_hash = hash;
  return average_params(ptrs);
}

#define H2KE_INSTANTIATE(T)                                                                   \
  template struct OptimizerState<T>;                                                          \
  template void adam_step<T>(model::ModelParams<T>&, const ParamSet<T>&, OptimizerState<T>&, \
                             double, const TrainerConfig&);                                   \
  template TrainResult<T> train<T>(const std::vector<TrainExample>&,                          \
                                   const std::vector<TrainExample>&, model::ModelParams<T>,  \
                                   const TrainerConfig&, const ValidationHook&);              \
  template double validation_loss<T>(const model::ModelParams<T>&,                           \
                                     const std::vector<TrainExample>&, std::size_t);          \
  template model::ModelParams<T> average_params<T>(                                          \
      const std::vector<const model::ModelParams<T>*>&);                                      \
  template model::ModelParams<T> average_checkpoints<T>(                                     \
      const std::vector<std::filesystem::path>&, std::string*);

H2KE_INSTANTIATE(float)
H2KE_INSTANTIATE(double)
#undef H2KE_INSTANTIATE

}  // namespace h2ke::training
