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
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "h2ke/error.hpp"
#include "h2ke/tensor.hpp"

namespace h2ke::model {

struct TransformerConfig {
  int n_layers_enc = 6;
  int n_layers_dec = 6;
  int d_model = 512;
  int n_heads = 8;
  int d_ff = 2048;
  double dropout = 0.1;
  int max_seq_len = 256;
  int vocab_size = 32000;
  bool share_all_embeddings = true;
  // No encoder and no cross-attention; used by the internal language model.
  bool decoder_only = false;

  // "base", "big" or "tiny".
  static TransformerConfig preset(std::string_view name, int vocab_size);
  void validate() const;
  nlohmann::json to_json() const;
  static TransformerConfig from_json(const nlohmann::json& j);
  friend bool operator==(const TransformerConfig&, const TransformerConfig&) = default;
};

// All trainable tensors. Linear weights are stored [in × out], biases and
// layer-norm vectors as [1 × n]. With share_all_embeddings a single "embed"
// tensor serves as source embedding, target embedding and output projection.
template <typename T>
struct ModelParams {
  TransformerConfig config;
  ParamSet<T> tensors;

  Matrix<T>& source_embedding();
  Matrix<T>& target_embedding();
  Matrix<T>& output_projection();
  const Matrix<T>& output_projection() const;
  std::size_t parameter_count() const { return tensors.element_count(); }
};

// Allocates zero tensors with the names and shapes implied by `config`.
template <typename T>
ModelParams<T> allocate_params(const TransformerConfig& config);

// Linear weights ~ U(±sqrt(6/(fan_in+fan_out))), biases 0, layer-norm gain 1
// and bias 0, embeddings ~ N(0, d_model^-1/2).
template <typename T>
ModelParams<T> init_params(const TransformerConfig& config, std::uint64_t seed);

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& p);

// Padded id matrices. Masks hold 1 for real tokens and 0 for padding.
struct Batch {
  std::string id;
  std::size_t batch_size = 0;
  std::size_t src_len = 0;
  std::size_t tgt_len = 0;
  std::vector<int> src;      // [batch × src_len]
  std::vector<std::uint8_t> src_mask;
  std::vector<int> tgt_in;   // BOS-shifted
  std::vector<int> tgt_out;  // EOS-terminated
  std::vector<std::uint8_t> tgt_mask;

  // `targets` hold token ids without BOS/EOS. Sources may be empty for
  // decoder-only models.
  static Batch make(const std::vector<std::vector<int>>& sources,
                    const std::vector<std::vector<int>>& targets, std::string id = {});
  std::size_t target_tokens() const;
};

class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(const std::string& batch_id)
      : Error("non-finite loss in batch '" + batch_id + "'"), batch_id_(batch_id) {}
  const std::string& batch_id() const { return batch_id_; }

 private:
  std::string batch_id_;
};

// Log-probabilities [batch*tgt_len × vocab], one row per target position.
template <typename T>
Matrix<T> forward_logprobs(const ModelParams<T>& params, const Batch& batch,
                           bool train_mode = false, std::uint64_t dropout_seed = 0);

struct LossOptions {
  double label_smoothing = 0.0;
  bool train_mode = false;
  std::uint64_t dropout_seed = 0;
};

template <typename T>
struct LossResult {
  double loss = 0.0;     // per-token mean of the (smoothed) objective
  double nll_sum = 0.0;  // unsmoothed summed negative log-likelihood
  std::size_t tokens = 0;
  ParamSet<T> grads;
};

template <typename T>
LossResult<T> loss_and_grads(const ModelParams<T>& params, const Batch& batch,
                             const LossOptions& options = {});

// Forward only; grads are left empty.
template <typename T>
LossResult<T> evaluate_loss(const ModelParams<T>& params, const Batch& batch,
                            const LossOptions& options = {});

// Encoder states for one source sequence, reused across decoding steps.
template <typename T>
struct EncodedSource {
  Matrix<T> states;  // [src_len × d_model]; empty for decoder-only models
  std::size_t length = 0;
};

template <typename T>
EncodedSource<T> encode_source(const ModelParams<T>& params, const std::vector<int>& src);

// Log-probabilities of the next token after each prefix (prefixes start with
// BOS and share one length). Returns [prefixes × vocab].
template <typename T>
Matrix<T> next_token_logprobs(const ModelParams<T>& params, const EncodedSource<T>& source,
                              const std::vector<std::vector<int>>& prefixes);

// Sign pattern of every feed-forward ReLU input for one eval-mode forward
// pass, layer by layer. Two parameter settings with the same pattern lie in
// the same linear region of the activations, which finite-difference probes
// need to know.
template <typename T>
std::vector<bool> relu_pattern(const ModelParams<T>& params, const Batch& batch);

}  // namespace h2ke::model
