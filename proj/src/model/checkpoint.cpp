#include "xfit/model/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "xfit/model/transformer.hpp"

namespace xfit::model {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char magic[8] = {'X', 'F', 'I', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t format_version = 1;

Json block_index(const Parameters<float>& p) {
    Json out = Json::array();
    for (std::size_t i = 0; i < p.size(); ++i) out.push_back({p.name(i), {p[i].rows(), p[i].cols()}});
    return out;
}

void write_blocks(std::ofstream& f, const Parameters<float>& p) {
    for (std::size_t i = 0; i < p.size(); ++i) {
        f.write(reinterpret_cast<const char*>(p[i].data()), static_cast<std::streamsize>(p[i].size() * sizeof(float)));
    }
}

Parameters<float> read_blocks(std::ifstream& f, const Json& index, const std::string& where) {
    Parameters<float> p;
    for (const auto& entry : index) {
        const auto name = entry.at(0).get<std::string>();
        const auto rows = entry.at(1).at(0).get<Index>();
        const auto cols = entry.at(1).at(1).get<Index>();
        if (rows < 0 || cols < 0) throw DataError(where + ": negative shape for block '" + name + "'");
        Matrix<float> m(rows, cols);
        f.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
        if (!f) throw DataError(where + ": truncated data in block '" + name + "'");
        p.add(name, std::move(m));
    }
    return p;
}

}  // namespace

const char* to_string(Method m) {
    switch (m) {
        case Method::none: return "none";
        case Method::mtl: return "mtl";
        case Method::maml: return "maml";
        case Method::fomaml: return "fomaml";
        case Method::reptile: return "reptile";
    }
    return "none";
}

Method parse_method(std::string_view s) {
    for (Method m : {Method::none, Method::mtl, Method::maml, Method::fomaml, Method::reptile}) {
        if (s == to_string(m)) return m;
    }
    throw UsageError("unknown method '" + std::string(s) + "' (expected mtl, maml, fomaml or reptile)");
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const auto layout = param_layout(ckpt.config);
    if (layout.size() != ckpt.params.size()) throw ShapeError("checkpoint: parameters do not match the config");
    for (std::size_t i = 0; i < layout.size(); ++i) {
        if (layout[i].name != ckpt.params.name(i) || layout[i].rows != ckpt.params[i].rows() ||
            layout[i].cols != ckpt.params[i].cols()) {
            throw ShapeError("checkpoint: block '" + ckpt.params.name(i) + "' does not match the config");
        }
    }
    Json header;
    header["config"] = to_json(ckpt.config);
    header["vocab"] = {{"mode", to_string(ckpt.vocab.mode())}, {"tokens", ckpt.vocab.tokens()}};
    header["method"] = to_string(ckpt.method);
    header["partition"] = ckpt.partition;
    header["meta_step"] = ckpt.meta_step;
    header["validation_score"] = ckpt.validation_score ? Json(*ckpt.validation_score) : Json(nullptr);
    header["dtype"] = "float32";
    header["blocks"] = block_index(ckpt.params);
    header["extra_blocks"] = block_index(ckpt.extra);
    header["meta"] = ckpt.meta;
    const std::string text = header.dump();

    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot write checkpoint " + tmp.string());
        const std::uint64_t n = text.size();
        f.write(magic, sizeof magic);
        f.write(reinterpret_cast<const char*>(&format_version), sizeof format_version);
        f.write(reinterpret_cast<const char*>(&n), sizeof n);
        f.write(text.data(), static_cast<std::streamsize>(n));
        write_blocks(f, ckpt.params);
        write_blocks(f, ckpt.extra);
        if (!f) throw DataError("failed writing checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    const std::string where = "checkpoint " + path.string();
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError(where + ": cannot open");
    char m[8];
    std::uint32_t version = 0;
    std::uint64_t n = 0;
    f.read(m, sizeof m);
    f.read(reinterpret_cast<char*>(&version), sizeof version);
    f.read(reinterpret_cast<char*>(&n), sizeof n);
    if (!f || std::memcmp(m, magic, sizeof magic) != 0) throw DataError(where + ": not a checkpoint file");
    if (version != format_version) throw DataError(where + ": unsupported version " + std::to_string(version));
    if (n > (1ull << 31)) throw DataError(where + ": implausible header size");
    std::string text(n, '\0');
    f.read(text.data(), static_cast<std::streamsize>(n));
    if (!f) throw DataError(where + ": truncated header");

    Checkpoint ck;
    try {
        const Json h = Json::parse(text);
        if (h.at("dtype") != "float32") throw DataError(where + ": unsupported dtype");
        ck.config = model_config_from_json(h.at("config"));
        ck.vocab = Vocabulary(
            [&] {
                auto t = h.at("vocab").at("tokens").get<std::vector<std::string>>();
                if (t.size() < Vocabulary::reserved_count) throw DataError(where + ": vocabulary too small");
                return std::vector<std::string>(t.begin() + Vocabulary::reserved_count, t.end());
            }(),
            parse_token_mode(h.at("vocab").at("mode").get<std::string>()));
        ck.method = parse_method(h.at("method").get<std::string>());
        ck.partition = h.at("partition").get<std::string>();
        ck.meta_step = h.at("meta_step").get<long>();
        if (!h.at("validation_score").is_null()) ck.validation_score = h.at("validation_score").get<double>();
        ck.params = read_blocks(f, h.at("blocks"), where);
        ck.extra = read_blocks(f, h.at("extra_blocks"), where);
        ck.meta = h.at("meta");
    } catch (const nlohmann::json::exception& e) {
        throw DataError(where + ": malformed header: " + e.what());
    } catch (const UsageError& e) {
        throw DataError(where + ": " + e.what());
    }
    if (ck.vocab.size() != ck.config.vocab_size) throw DataError(where + ": vocabulary size disagrees with config");
    const auto layout = param_layout(ck.config);
    if (layout.size() != ck.params.size()) throw DataError(where + ": block count disagrees with config");
    for (std::size_t i = 0; i < layout.size(); ++i) {
        if (layout[i].name != ck.params.name(i) || layout[i].rows != ck.params[i].rows() ||
            layout[i].cols != ck.params[i].cols()) {
            throw DataError(where + ": block '" + ck.params.name(i) + "' disagrees with config");
        }
    }
    f.peek();
    if (!f.eof()) throw DataError(where + ": trailing bytes");
    return ck;
}

}  // namespace xfit::model
