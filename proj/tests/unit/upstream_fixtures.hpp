#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "xfit/gym/synth.hpp"
#include "xfit/model/transformer.hpp"
#include "xfit/rng.hpp"
#include "xfit/upstream/steps.hpp"
#include "xfit/upstream/upstream.hpp"

namespace fixtures {

using namespace xfit;

// 1-D quadratic 0.5 * (theta - c)^2 on a single 1x1 block named "theta".
template <typename T>
upstream::Objective<T> quadratic(T c) {
    return [c](std::span<const ad::Var<T>> v) {
        auto& tape = *v[0].tape();
        auto d = ad::sub(v[0], tape.scalar(c));
        return ad::scale(ad::sum(ad::mul(d, d)), T(0.5));
    };
}

template <typename T>
model::Parameters<T> scalar_params(T value) {
    model::Parameters<T> p;
    p.add("theta", model::Matrix<T>::Constant(1, 1, value));
    return p;
}

inline model::ModelConfig micro_config(std::uint64_t init_seed) {
    model::ModelConfig c;
    c.vocab_size = 10;
    c.embedding_dim = 4;
    c.hidden_dim = 6;
    c.encoder_layers = 1;
    c.decoder_layers = 1;
    c.attention_heads = 2;
    c.max_input_length = 6;
    c.max_output_length = 5;
    c.init_seed = init_seed;
    return c;
}

// Random token rows, lengths 1..4, ids drawn from the non-reserved range.
inline model::Batch random_batch(const model::ModelConfig& c, Rng& rng, int rows) {
    std::vector<std::vector<int>> in, out;
    auto seq = [&] {
        std::vector<int> s(1 + uniform_below(rng, 4));
        for (auto& t : s) t = model::Vocabulary::reserved_count + static_cast<int>(uniform_below(rng, c.vocab_size - 4));
        return s;
    };
    for (int r = 0; r < rows; ++r) {
        in.push_back(seq());
        out.push_back(seq());
    }
    return model::make_batch(c, in, out);
}

template <typename T>
upstream::Objective<T> batch_loss(const model::ModelConfig& c, model::Batch b) {
    return [&c, b = std::move(b)](std::span<const ad::Var<T>> v) { return model::forward_loss<T>(c, v, b); };
}

// theta -> L_q(theta - alpha * grad L_s(theta)), evaluated without the tape's
// second-order machinery.
inline double composite(const model::ModelConfig& c, const model::Parameters<double>& theta,
                        const model::Batch& support, const model::Batch& query, double alpha) {
    auto g = model::loss_and_grad<double>(c, theta, support).grad;
    auto fast = theta;
    for (std::size_t i = 0; i < fast.size(); ++i) fast[i] -= alpha * g[i];
    return model::evaluate_loss<double>(c, fast, query);
}

// Relative error between the MAML meta-gradient and central differences of
// the composite objective over every coordinate.
inline double maml_fd_error(std::uint64_t seed, double alpha = 0.1) {
    const auto c = micro_config(seed);
    Rng rng(seed);
    const auto support = random_batch(c, rng, 2);
    const auto query = random_batch(c, rng, 2);
    const auto theta = model::init_params<double>(c);
    const auto r = upstream::maml_step<double>(theta, batch_loss<double>(c, support), batch_loss<double>(c, query),
                                               alpha, 1.0);
    const auto analytic = r.direction.flatten();
    const auto flat = theta.flatten();
    model::Vector<double> fd(flat.size());
    const double h = 1e-5;
    for (model::Index i = 0; i < flat.size(); ++i) {
        auto plus = flat, minus = flat;
        plus(i) += h;
        minus(i) -= h;
        fd(i) = (composite(c, theta.unflatten(plus), support, query, alpha) -
                 composite(c, theta.unflatten(minus), support, query, alpha)) /
                (2 * h);
    }
    return (analytic - fd).norm() / std::max(analytic.norm(), fd.norm());
}

// k = 1 Reptile against the closed form theta - beta * (alpha * grad), bit for bit.
template <typename T>
bool reptile_identity_holds(std::uint64_t seed) {
    auto c = micro_config(seed);
    Rng rng(seed ^ 0x5eedull);
    const auto batch = random_batch(c, rng, 3);
    const auto theta = model::init_params<T>(c);
    const T alpha = static_cast<T>(0.01 + 0.5 * uniform_unit(rng));
    const T beta = static_cast<T>(0.01 + 0.9 * uniform_unit(rng));
    const std::vector<upstream::Objective<T>> inner{batch_loss<T>(c, batch)};
    const auto r = upstream::reptile_step<T>(theta, inner, alpha, beta);
    const auto g = model::loss_and_grad<T>(c, theta, batch).grad;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const model::Matrix<T> expect = theta[i] - beta * (alpha * g[i]);
        if (std::memcmp(expect.data(), r.params[i].data(), sizeof(T) * static_cast<std::size_t>(expect.size())) != 0) {
            return false;
        }
    }
    return true;
}

// A small synthetic gym: tasks, their seed-13 splits, and a word vocabulary.
struct SmallGym {
    std::vector<gym::Task> tasks;
    std::vector<gym::FewShotSplit> splits;
    model::Vocabulary vocab;
    model::ModelConfig config;
};

inline SmallGym small_gym(std::uint64_t seed, int instances = 2) {
    SmallGym g;
    gym::SynthConfig sc;
    sc.families = {{"copy", instances, 0, 0}, {"reverse", instances, 0, 0}};
    sc.max_words = 3;
    g.tasks = gym::synth_suite(sc, seed);
    std::vector<std::string> corpus;
    for (const auto& t : g.tasks) {
        g.splits.push_back(gym::sample_few_shot(t, 13));
        for (const auto& e : t.pool) {
            corpus.push_back(e.input);
            corpus.push_back(e.output);
        }
    }
    g.vocab = model::build_vocab(corpus, model::TokenMode::word, 1000);
    g.config.vocab_size = g.vocab.size();
    g.config.embedding_dim = 8;
    g.config.hidden_dim = 16;
    g.config.encoder_layers = 1;
    g.config.decoder_layers = 1;
    g.config.attention_heads = 2;
    g.config.max_input_length = 8;
    g.config.max_output_length = 6;
    g.config.init_seed = seed;
    return g;
}

}  // namespace fixtures
