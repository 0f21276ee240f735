#include "xfit/model/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_map>

namespace xfit::model {

namespace {

constexpr double mask_value = -1e9;

void add_norm(std::vector<BlockSpec>& out, const std::string& prefix, Index d) {
    out.push_back({prefix + ".gain", 1, d, BlockKind::gain});
    out.push_back({prefix + ".bias", 1, d, BlockKind::bias});
}

void add_linear(std::vector<BlockSpec>& out, const std::string& prefix, Index in, Index outdim) {
    out.push_back({prefix + ".weight", in, outdim, BlockKind::weight});
    out.push_back({prefix + ".bias", 1, outdim, BlockKind::bias});
}

void add_attention(std::vector<BlockSpec>& out, const std::string& prefix, Index d) {
    for (const char* p : {".q", ".k", ".v", ".o"}) add_linear(out, prefix + p, d, d);
}

void add_ff(std::vector<BlockSpec>& out, const std::string& prefix, Index d, Index h) {
    add_linear(out, prefix + ".in", d, h);
    add_linear(out, prefix + ".out", h, d);
}

std::unordered_map<std::string, std::size_t> layout_index(const ModelConfig& c) {
    std::unordered_map<std::string, std::size_t> idx;
    auto layout = param_layout(c);
    for (std::size_t i = 0; i < layout.size(); ++i) idx.emplace(layout[i].name, i);
    return idx;
}

// One forward evaluation of the network over a bound set of parameter nodes.
template <typename T>
class Network {
public:
    using Var = ad::Var<T>;

    Network(const ModelConfig& config, std::span<const Var> params)
        : c_(config), p_(params), index_(layout_index(config)) {
        if (params.size() != index_.size()) {
            throw ShapeError("model: expected " + std::to_string(index_.size()) + " parameter blocks, got " +
                             std::to_string(params.size()));
        }
    }

    [[nodiscard]] const Var& block(const std::string& name) const { return p_[index_.at(name)]; }

    // Final encoder states for every (row, position), rows stacked: (B*L) x d.
    Var encode(ad::Tape<T>& tape, const TokenMatrix& input, const TokenMatrix& input_mask) const {
        const Index len = input.cols();
        Var x = embed(input, block("embed.tokens"), block("embed.enc_positions"));
        const auto keys = key_masks(tape, input_mask);
        for (int l = 0; l < c_.encoder_layers; ++l) {
            const std::string pre = "encoder." + std::to_string(l);
            const Var h = norm(x, pre + ".attn_norm");
            x = add(x, attention(h, h, len, len, keys, pre + ".attn"));
            x = add(x, feed_forward(norm(x, pre + ".ff_norm"), pre + ".ff"));
        }
        return norm(x, "encoder.final_norm");
    }

    // Final decoder states for the decoder-input tokens (B*Lq) x d.
    Var decode(ad::Tape<T>& tape, const Var& memory, const TokenMatrix& input_mask, const TokenMatrix& dec_input) const {
        const Index rows = dec_input.rows();
        const Index len = dec_input.cols();
        Var y = embed(dec_input, block("embed.tokens"), block("embed.dec_positions"));
        const std::vector<Var> causal(static_cast<std::size_t>(rows), tape.constant(causal_mask(len)));
        const auto keys = key_masks(tape, input_mask);
        for (int l = 0; l < c_.decoder_layers; ++l) {
            const std::string pre = "decoder." + std::to_string(l);
            const Var h = norm(y, pre + ".self_norm");
            y = add(y, attention(h, h, len, len, causal, pre + ".self_attn"));
            y = add(y, attention(norm(y, pre + ".cross_norm"), memory, len, input_mask.cols(), keys,
                                 pre + ".cross_attn"));
            y = add(y, feed_forward(norm(y, pre + ".ff_norm"), pre + ".ff"));
        }
        return norm(y, "decoder.final_norm");
    }

    Var logits(const Var& states) const {
        const T s = T(1) / std::sqrt(static_cast<T>(c_.embedding_dim));
        return add(scale(matmul(states, transpose(block("embed.tokens"))), s), block("output.bias"));
    }

private:
    Var embed(const TokenMatrix& tokens, const Var& table, const Var& positions) const {
        auto ids = std::make_shared<ad::IndexList>();
        auto pos = std::make_shared<ad::IndexList>();
        ids->reserve(static_cast<std::size_t>(tokens.size()));
        pos->reserve(static_cast<std::size_t>(tokens.size()));
        for (Index r = 0; r < tokens.rows(); ++r) {
            for (Index j = 0; j < tokens.cols(); ++j) {
                ids->push_back(tokens(r, j));
                pos->push_back(j);
            }
        }
        return add(ad::gather_rows<T>(table, std::move(ids)), ad::gather_rows<T>(positions, std::move(pos)));
    }

    Var norm(const Var& x, const std::string& prefix) const {
        return add(mul(ad::layer_norm(x, T(1e-5)), block(prefix + ".gain")), block(prefix + ".bias"));
    }

    Var linear(const Var& x, const std::string& prefix) const {
        return add(matmul(x, block(prefix + ".weight")), block(prefix + ".bias"));
    }

    Var feed_forward(const Var& x, const std::string& prefix) const {
        return linear(ad::relu(linear(x, prefix + ".in")), prefix + ".out");
    }

    // Attention runs per example: rows [b*lq, (b+1)*lq) of `query` attend to
    // rows [b*lk, (b+1)*lk) of `memory`. masks[b] is added to the scores and
    // is either 1 x lk or lq x lk.
    Var attention(const Var& query, const Var& memory, Index lq, Index lk, const std::vector<Var>& masks,
                  const std::string& prefix) const {
        const Var q = linear(query, prefix + ".q");
        const Var k = linear(memory, prefix + ".k");
        const Var v = linear(memory, prefix + ".v");
        const int heads = c_.attention_heads;
        const Index dh = c_.head_dim();
        const T s = T(1) / std::sqrt(static_cast<T>(dh));
        std::vector<Var> rows;
        rows.reserve(masks.size());
        std::vector<Var> outs(static_cast<std::size_t>(heads));
        for (std::size_t b = 0; b < masks.size(); ++b) {
            const auto bi = static_cast<Index>(b);
            const Var qb = masks.size() == 1 ? q : ad::slice_rows(q, bi * lq, lq);
            const Var kb = masks.size() == 1 ? k : ad::slice_rows(k, bi * lk, lk);
            const Var vb = masks.size() == 1 ? v : ad::slice_rows(v, bi * lk, lk);
            for (int h = 0; h < heads; ++h) {
                const Var qh = heads == 1 ? qb : ad::slice_cols(qb, h * dh, dh);
                const Var kh = heads == 1 ? kb : ad::slice_cols(kb, h * dh, dh);
                const Var vh = heads == 1 ? vb : ad::slice_cols(vb, h * dh, dh);
                const Var scores = add(scale(matmul(qh, transpose(kh)), s), masks[b]);
                outs[static_cast<std::size_t>(h)] = matmul(ad::softmax(scores), vh);
            }
            rows.push_back(heads == 1 ? outs[0] : ad::concat_cols(std::span<const Var>(outs)));
        }
        const Var joined = rows.size() == 1 ? rows[0] : ad::concat_rows(std::span<const Var>(rows));
        return linear(joined, prefix + ".o");
    }

    // One 1 x L row per example: 0 for real tokens, a large negative for pads.
    static std::vector<Var> key_masks(ad::Tape<T>& tape, const TokenMatrix& valid) {
        std::vector<Var> out;
        out.reserve(static_cast<std::size_t>(valid.rows()));
        for (Index b = 0; b < valid.rows(); ++b) {
            Matrix<T> m(1, valid.cols());
            for (Index j = 0; j < valid.cols(); ++j) m(0, j) = valid(b, j) ? T(0) : T(mask_value);
            out.push_back(tape.constant(std::move(m)));
        }
        return out;
    }

    static Matrix<T> causal_mask(Index len) {
        Matrix<T> m = Matrix<T>::Zero(len, len);
        for (Index i = 0; i < len; ++i) m.block(i, i + 1, 1, len - i - 1).setConstant(T(mask_value));
        return m;
    }

    const ModelConfig& c_;
    std::span<const Var> p_;
    std::unordered_map<std::string, std::size_t> index_;
};

TokenMatrix decoder_input(const TokenMatrix& target) {
    TokenMatrix d = TokenMatrix::Constant(target.rows(), target.cols(), Vocabulary::pad_id);
    for (Index r = 0; r < target.rows(); ++r) {
        d(r, 0) = Vocabulary::bos_id;
        for (Index j = 1; j < target.cols(); ++j) d(r, j) = target(r, j - 1);
    }
    return d;
}

std::vector<int> with_eos(const std::vector<int>& ids, int max_len) {
    std::vector<int> out(ids.begin(), ids.begin() + std::min<std::ptrdiff_t>(ids.size(), max_len - 1));
    out.push_back(Vocabulary::eos_id);
    return out;
}

void fill_rows(const std::vector<std::vector<int>>& seqs, TokenMatrix& tokens, TokenMatrix& mask) {
    std::size_t width = 0;
    for (auto& s : seqs) width = std::max(width, s.size());
    tokens = TokenMatrix::Constant(static_cast<Index>(seqs.size()), static_cast<Index>(width), Vocabulary::pad_id);
    mask = TokenMatrix::Zero(tokens.rows(), tokens.cols());
    for (std::size_t r = 0; r < seqs.size(); ++r) {
        for (std::size_t j = 0; j < seqs[r].size(); ++j) {
            tokens(static_cast<Index>(r), static_cast<Index>(j)) = seqs[r][j];
            mask(static_cast<Index>(r), static_cast<Index>(j)) = 1;
        }
    }
}

}  // namespace

std::vector<BlockSpec> param_layout(const ModelConfig& c) {
    c.validate();
    const Index d = c.embedding_dim;
    const Index h = c.hidden_dim;
    std::vector<BlockSpec> out;
    out.push_back({"embed.tokens", c.vocab_size, d, BlockKind::embedding});
    out.push_back({"embed.enc_positions", c.max_input_length, d, BlockKind::embedding});
    out.push_back({"embed.dec_positions", c.max_output_length, d, BlockKind::embedding});
    for (int l = 0; l < c.encoder_layers; ++l) {
        const std::string pre = "encoder." + std::to_string(l);
        add_norm(out, pre + ".attn_norm", d);
        add_attention(out, pre + ".attn", d);
        add_norm(out, pre + ".ff_norm", d);
        add_ff(out, pre + ".ff", d, h);
    }
    add_norm(out, "encoder.final_norm", d);
    for (int l = 0; l < c.decoder_layers; ++l) {
        const std::string pre = "decoder." + std::to_string(l);
        add_norm(out, pre + ".self_norm", d);
        add_attention(out, pre + ".self_attn", d);
        add_norm(out, pre + ".cross_norm", d);
        add_attention(out, pre + ".cross_attn", d);
        add_norm(out, pre + ".ff_norm", d);
        add_ff(out, pre + ".ff", d, h);
    }
    add_norm(out, "decoder.final_norm", d);
    out.push_back({"output.bias", 1, c.vocab_size, BlockKind::bias});
    return out;
}

template <typename T>
Parameters<T> init_params(const ModelConfig& config) {
    std::mt19937_64 rng(config.init_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Parameters<T> p;
    for (const auto& spec : param_layout(config)) {
        Matrix<T> m(spec.rows, spec.cols);
        switch (spec.kind) {
            case BlockKind::bias: m.setZero(); break;
            case BlockKind::gain: m.setOnes(); break;
            case BlockKind::weight:
            case BlockKind::embedding: {
                const double fan_in = spec.kind == BlockKind::weight ? spec.rows : config.embedding_dim;
                const double sd = 1.0 / std::sqrt(fan_in);
                for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(sd * normal(rng));
                break;
            }
        }
        p.add(spec.name, std::move(m));
    }
    return p;
}

Batch make_batch(const ModelConfig& config, std::span<const std::vector<int>> inputs,
                 std::span<const std::vector<int>> targets) {
    if (inputs.size() != targets.size()) throw ShapeError("make_batch: inputs and targets differ in count");
    if (inputs.empty()) throw ShapeError("make_batch: empty batch");
    std::vector<std::vector<int>> in, out;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        in.push_back(with_eos(inputs[i], config.max_input_length));
        out.push_back(with_eos(targets[i], config.max_output_length));
    }
    Batch b;
    fill_rows(in, b.input, b.input_mask);
    fill_rows(out, b.target, b.target_mask);
    return b;
}

Batch make_batch(const ModelConfig& config, const Vocabulary& vocab, std::span<const Example> examples) {
    std::vector<std::vector<int>> in, out;
    for (const auto& e : examples) {
        in.push_back(vocab.encode(e.input));
        out.push_back(vocab.encode(e.output));
    }
    return make_batch(config, in, out);
}

template <typename T>
ad::Var<T> forward_loss(const ModelConfig& config, std::span<const ad::Var<T>> params, const Batch& batch) {
    if (params.empty()) throw ShapeError("forward_loss: no parameters");
    ad::Tape<T>& tape = *params[0].tape();
    Network<T> net(config, params);
    auto memory = net.encode(tape, batch.input, batch.input_mask);
    auto states = net.decode(tape, memory, batch.input_mask, decoder_input(batch.target));
    auto logits = net.logits(states);

    std::vector<Index> targets(static_cast<std::size_t>(batch.target.size()));
    std::vector<T> weights(targets.size());
    for (Index i = 0; i < batch.target.size(); ++i) {
        targets[static_cast<std::size_t>(i)] = batch.target.data()[i];
        weights[static_cast<std::size_t>(i)] = static_cast<T>(batch.target_mask.data()[i]);
    }
    return ad::cross_entropy<T>(logits, targets, weights);
}

template <typename T>
LossAndGrad<T> loss_and_grad(const ModelConfig& config, const Parameters<T>& params, const Batch& batch) {
    ad::Tape<T> tape;
    auto vars = bind(tape, params);
    auto loss = forward_loss<T>(config, vars, batch);
    auto grads = ad::gradient(loss, std::span<const ad::Var<T>>(vars));
    return {loss.item(), collect<T>(grads, params)};
}

template <typename T>
T evaluate_loss(const ModelConfig& config, const Parameters<T>& params, const Batch& batch) {
    ad::Tape<T> tape;
    ad::NoGradGuard<T> guard(tape);
    auto vars = bind(tape, params, false);
    return forward_loss<T>(config, vars, batch).item();
}

template <typename T>
std::vector<std::vector<int>> greedy_decode(const ModelConfig& config, const Parameters<T>& params,
                                            std::span<const std::vector<int>> inputs) {
    constexpr std::size_t chunk = 32;
    std::vector<std::vector<int>> results;
    results.reserve(inputs.size());
    for (std::size_t start = 0; start < inputs.size(); start += chunk) {
        const std::size_t n = std::min(chunk, inputs.size() - start);
        std::vector<std::vector<int>> in;
        for (std::size_t i = 0; i < n; ++i) in.push_back(with_eos(inputs[start + i], config.max_input_length));
        TokenMatrix input, input_mask;
        fill_rows(in, input, input_mask);

        Matrix<T> memory_value;
        {
            ad::Tape<T> tape;
            ad::NoGradGuard<T> guard(tape);
            auto vars = bind(tape, params, false);
            Network<T> net(config, vars);
            memory_value = net.encode(tape, input, input_mask).value();
        }

        const Index rows = static_cast<Index>(n);
        std::vector<std::vector<int>> generated(n);
        std::vector<char> done(n, 0);
        for (int step = 0; step < config.max_output_length; ++step) {
            const Index len = step + 1;
            TokenMatrix dec(rows, len);
            for (Index r = 0; r < rows; ++r) {
                dec(r, 0) = Vocabulary::bos_id;
                for (Index j = 1; j < len; ++j) {
                    const auto& g = generated[static_cast<std::size_t>(r)];
                    dec(r, j) = j - 1 < static_cast<Index>(g.size()) ? g[static_cast<std::size_t>(j - 1)]
                                                                      : Vocabulary::pad_id;
                }
            }
            ad::Tape<T> tape;
            ad::NoGradGuard<T> guard(tape);
            auto vars = bind(tape, params, false);
            Network<T> net(config, vars);
            auto memory = tape.constant(memory_value);
            auto states = net.decode(tape, memory, input_mask, dec);
            ad::IndexList last;
            for (Index r = 0; r < rows; ++r) last.push_back(r * len + step);
            const Matrix<T> logits = net.logits(ad::gather_rows(states, std::move(last))).value();

            bool all_done = true;
            for (Index r = 0; r < rows; ++r) {
                auto& d = done[static_cast<std::size_t>(r)];
                if (d) continue;
                int best = Vocabulary::eos_id;
                T best_v = logits(r, best);
                for (Index v = 0; v < logits.cols(); ++v) {
                    if (v == Vocabulary::pad_id || v == Vocabulary::bos_id) continue;
                    if (logits(r, v) > best_v) {
                        best_v = logits(r, v);
                        best = static_cast<int>(v);
                    }
                }
                if (best == Vocabulary::eos_id) {
                    d = 1;
                } else {
                    generated[static_cast<std::size_t>(r)].push_back(best);
                    all_done = false;
                }
            }
            if (all_done) break;
        }
        for (auto& g : generated) results.push_back(std::move(g));
    }
    return results;
}

template <typename T>
std::vector<int> greedy_decode(const ModelConfig& config, const Parameters<T>& params, std::span<const int> input) {
    std::vector<std::vector<int>> one{std::vector<int>(input.begin(), input.end())};
    return greedy_decode<T>(config, params, one).front();
}

template <typename T>
std::vector<std::string> predict(const ModelConfig& config, const Vocabulary& vocab, const Parameters<T>& params,
                                 std::span<const std::string> inputs) {
    std::vector<std::vector<int>> ids;
    ids.reserve(inputs.size());
    for (const auto& s : inputs) ids.push_back(vocab.encode(s));
    std::vector<std::string> out;
    for (const auto& seq : greedy_decode<T>(config, params, ids)) out.push_back(vocab.decode(seq));
    return out;
}

#define XFIT_INSTANTIATE(T)                                                                                        \
    template Parameters<T> init_params<T>(const ModelConfig&);                                                     \
    template ad::Var<T> forward_loss<T>(const ModelConfig&, std::span<const ad::Var<T>>, const Batch&);           \
    template LossAndGrad<T> loss_and_grad<T>(const ModelConfig&, const Parameters<T>&, const Batch&);             \
    template T evaluate_loss<T>(const ModelConfig&, const Parameters<T>&, const Batch&);                          \
    template std::vector<std::vector<int>> greedy_decode<T>(const ModelConfig&, const Parameters<T>&,             \
                                                            std::span<const std::vector<int>>);                  \
    template std::vector<int> greedy_decode<T>(const ModelConfig&, const Parameters<T>&, std::span<const int>);   \
    template std::vector<std::string> predict<T>(const ModelConfig&, const Vocabulary&, const Parameters<T>&,     \
                                                 std::span<const std::string>);

XFIT_INSTANTIATE(float)
XFIT_INSTANTIATE(double)

#undef XFIT_INSTANTIATE

}  // namespace xfit::model
