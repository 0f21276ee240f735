#pragma once

#include <cstdint>

#include "xfit/json_util.hpp"

namespace xfit::model {

struct ModelConfig {
    int vocab_size = 0;
    int embedding_dim = 64;
    int hidden_dim = 128;
    int encoder_layers = 2;
    int decoder_layers = 2;
    int attention_heads = 4;
    int max_input_length = 64;
    int max_output_length = 32;
    std::uint64_t init_seed = 0;

    [[nodiscard]] int head_dim() const { return embedding_dim / attention_heads; }

    // Throws UsageError on non-positive dims or heads not dividing embedding_dim.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

Json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const Json& j);

}  // namespace xfit::model
