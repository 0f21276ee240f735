#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "xfit/json_util.hpp"
#include "xfit/model/config.hpp"
#include "xfit/model/params.hpp"
#include "xfit/model/vocab.hpp"

namespace xfit::model {

enum class Method { none, mtl, maml, fomaml, reptile };

const char* to_string(Method m);
// Accepts "mtl", "maml", "fomaml", "reptile" and "none".
Method parse_method(std::string_view s);

// Binary layout: "XFITCKPT", u32 version, u64 header size, JSON header, then
// every block's values as little-endian float32 in header order.
struct Checkpoint {
    ModelConfig config;
    Vocabulary vocab;
    Parameters<float> params;
    Method method = Method::none;
    std::string partition;
    long meta_step = 0;
    std::optional<double> validation_score;
    // Auxiliary blocks such as optimizer moments; may be empty.
    Parameters<float> extra;
    Json meta = Json::object();
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace xfit::model
