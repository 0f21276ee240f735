#include "xfit/model/config.hpp"

#include <string>

namespace xfit::model {

void ModelConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v <= 0) throw UsageError(std::string("model config: ") + name + " must be positive, got " + std::to_string(v));
    };
    positive(vocab_size, "vocab_size");
    positive(embedding_dim, "embedding_dim");
    positive(hidden_dim, "hidden_dim");
    positive(encoder_layers, "encoder_layers");
    positive(decoder_layers, "decoder_layers");
    positive(attention_heads, "attention_heads");
    positive(max_input_length, "max_input_length");
    positive(max_output_length, "max_output_length");
    if (embedding_dim % attention_heads != 0) {
        throw UsageError("model config: embedding_dim " + std::to_string(embedding_dim) +
                         " is not divisible by attention_heads " + std::to_string(attention_heads));
    }
}

Json to_json(const ModelConfig& c) {
    return Json{{"vocab_size", c.vocab_size},         {"embedding_dim", c.embedding_dim},
                {"hidden_dim", c.hidden_dim},         {"encoder_layers", c.encoder_layers},
                {"decoder_layers", c.decoder_layers}, {"attention_heads", c.attention_heads},
                {"max_input_length", c.max_input_length}, {"max_output_length", c.max_output_length},
                {"init_seed", c.init_seed}};
}

ModelConfig model_config_from_json(const Json& j) {
    constexpr const char* ctx = "model";
    check_keys(j,
               {"vocab_size", "embedding_dim", "hidden_dim", "encoder_layers", "decoder_layers", "attention_heads",
                "max_input_length", "max_output_length", "init_seed"},
               ctx);
    ModelConfig c;
    read_opt(j, "vocab_size", c.vocab_size, ctx);
    read_opt(j, "embedding_dim", c.embedding_dim, ctx);
    read_opt(j, "hidden_dim", c.hidden_dim, ctx);
    read_opt(j, "encoder_layers", c.encoder_layers, ctx);
    read_opt(j, "decoder_layers", c.decoder_layers, ctx);
    read_opt(j, "attention_heads", c.attention_heads, ctx);
    read_opt(j, "max_input_length", c.max_input_length, ctx);
    read_opt(j, "max_output_length", c.max_output_length, ctx);
    read_opt(j, "init_seed", c.init_seed, ctx);
    return c;
}

}  // namespace xfit::model
