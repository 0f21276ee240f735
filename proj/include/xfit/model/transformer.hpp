#pragma once

#include <span>
#include <string>
#include <vector>

#include "xfit/example.hpp"
#include "xfit/model/config.hpp"
#include "xfit/model/params.hpp"
#include "xfit/model/vocab.hpp"

namespace xfit::model {

// Encoder-decoder transformer with learned positions, pre-norm residual
// blocks and an output projection tied to the token embedding.

enum class BlockKind { weight, bias, gain, embedding };

struct BlockSpec {
    std::string name;
    Index rows = 0;
    Index cols = 0;
    BlockKind kind = BlockKind::weight;
};

// Block names and shapes, fully determined by the config.
std::vector<BlockSpec> param_layout(const ModelConfig& config);

// Weights ~ N(0, 1/fan_in) (fan-in of an embedding table is embedding_dim),
// biases zero, normalization gains one. Deterministic in config.init_seed.
template <typename T>
Parameters<T> init_params(const ModelConfig& config);

using TokenMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Rows are padded to the longest sequence in the batch (never beyond the
// configured maxima); masked positions hold the pad id. Inputs and targets
// both end with an end-of-sequence token.
struct Batch {
    TokenMatrix input;
    TokenMatrix input_mask;
    TokenMatrix target;
    TokenMatrix target_mask;

    [[nodiscard]] Index size() const { return input.rows(); }
};

// Token sequences exclude the end-of-sequence marker; it is appended here
// after truncation to the configured maximum lengths.
Batch make_batch(const ModelConfig& config, std::span<const std::vector<int>> inputs,
                 std::span<const std::vector<int>> targets);
Batch make_batch(const ModelConfig& config, const Vocabulary& vocab, std::span<const Example> examples);

// Mean token-level cross-entropy over unmasked target positions.
template <typename T>
ad::Var<T> forward_loss(const ModelConfig& config, std::span<const ad::Var<T>> params, const Batch& batch);

template <typename T>
struct LossAndGrad {
    T loss{};
    Parameters<T> grad;
};

template <typename T>
LossAndGrad<T> loss_and_grad(const ModelConfig& config, const Parameters<T>& params, const Batch& batch);

template <typename T>
T evaluate_loss(const ModelConfig& config, const Parameters<T>& params, const Batch& batch);

// Greedy autoregressive decoding. Never emits pad or begin-of-sequence; stops
// at end-of-sequence (not included in the result) or max_output_length tokens.
template <typename T>
std::vector<std::vector<int>> greedy_decode(const ModelConfig& config, const Parameters<T>& params,
                                            std::span<const std::vector<int>> inputs);

template <typename T>
std::vector<int> greedy_decode(const ModelConfig& config, const Parameters<T>& params, std::span<const int> input);

// Decodes text inputs and detokenizes the predictions.
template <typename T>
std::vector<std::string> predict(const ModelConfig& config, const Vocabulary& vocab, const Parameters<T>& params,
                                 std::span<const std::string> inputs);

}  // namespace xfit::model
