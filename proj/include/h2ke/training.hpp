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

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "h2ke/corpus.hpp"
#include "h2ke/error.hpp"
#include "h2ke/model.hpp"
#include "h2ke/subword.hpp"

namespace h2ke::training {

// Inverse-square-root schedule with linear warmup:
//   d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)
double lr_at(std::int64_t step, int d_model, int warmup);

struct TrainerConfig {
  std::int64_t max_steps = 2000;
  std::size_t tokens_per_batch = 2048;  // source + target tokens, padding included
  bool single_example_batches = false;
  double label_smoothing = 0.1;
  int warmup_steps = 200;
  double lr_scale = 1.0;  // multiplies the schedule
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  double clip_norm = 0.0;  // <= 0 disables clipping
  std::int64_t validate_every = 100;
  int keep_best_k = 5;
  std::uint64_t seed = 1;

  // Empty: best checkpoints are kept in memory only.
  std::filesystem::path checkpoint_dir;
  // Empty: no manifest. One JSON line per validation event otherwise.
  std::filesystem::path manifest_path;
  std::string subword_hash;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainerConfig from_json(const nlohmann::json& j);
};

template <typename T>
struct OptimizerState {
  std::int64_t step = 0;
  ParamSet<T> m;
  ParamSet<T> v;

  static OptimizerState zeros_like(const model::ModelParams<T>& params);
};

// One bias-corrected Adam update; increments `state.step` first.
template <typename T>
void adam_step(model::ModelParams<T>& params, const ParamSet<T>& grads,
               OptimizerState<T>& state, double lr, const TrainerConfig& config);

struct TrainRecord {
  std::int64_t step = 0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
  std::string checkpoint;  // file path or in-memory id; empty if not kept

  nlohmann::json to_json() const;
};

struct TrainExample {
  std::vector<int> src;  // empty for decoder-only models
  std::vector<int> tgt;
};

// Tokenizes tagged pairs. Each source already carries its tag prefix.
std::vector<TrainExample> encode_examples(const subword::SubwordModel& spm,
                                          const std::vector<corpus::TaggedExample>& pairs);

template <typename T>
struct KeptCheckpoint {
  TrainRecord record;
  std::optional<model::ModelParams<T>> params;  // set when kept in memory
};

template <typename T>
struct TrainResult {
  model::ModelParams<T> params;  // parameters after the final step
  std::vector<TrainRecord> history;
  std::vector<KeptCheckpoint<T>> best;  // ascending validation loss
  std::size_t length_filtered = 0;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(std::int64_t step, const std::string& batch_id,
                   std::string last_good_checkpoint);
  std::int64_t step() const { return step_; }
  const std::string& last_good_checkpoint() const { return last_good_; }

 private:
  std::int64_t step_;
  std::string last_good_;
};

// Called after every validation event.
using ValidationHook = std::function<void(const TrainRecord&)>;

template <typename T>
TrainResult<T> train(const std::vector<TrainExample>& train_set,
                     const std::vector<TrainExample>& valid_set,
                     model::ModelParams<T> params, const TrainerConfig& config,
                     const ValidationHook& on_validate = {});

// Token-weighted mean negative log-likelihood (dropout off, no smoothing).
template <typename T>
double validation_loss(const model::ModelParams<T>& params,
                       const std::vector<TrainExample>& examples,
                       std::size_t tokens_per_batch = 4096);

// Lowest validation losses first; ties go to the earlier step.
std::vector<TrainRecord> select_best_checkpoints(const std::vector<TrainRecord>& history,
                                                 std::size_t k);

// Elementwise mean. Each element is summed in sorted order in double
// precision, so the result does not depend on the order of the inputs.
template <typename T>
model::ModelParams<T> average_params(const std::vector<const model::ModelParams<T>*>& inputs);

// Loads and averages checkpoint files; every file must carry the same
// configuration and subword hash.
template <typename T>
model::ModelParams<T> average_checkpoints(const std::vector<std::filesystem::path>& paths,
                                          std::string* subword_hash = nullptr);

// Groups examples into batches of at most `tokens_per_batch` padded tokens
// after a seeded shuffle; examples of similar length share a batch.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<TrainExample>& examples,
                                                   std::size_t tokens_per_batch,
                                                   std::uint64_t seed, std::uint64_t epoch,
                                                   bool single_example = false);

}  // namespace h2ke::training
