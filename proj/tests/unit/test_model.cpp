#include <doctest.h>

#include <cmath>
#include <random>

#include "fd_oracle.hpp"
#include <filesystem>
#include <fstream>

#include "xfit/model/checkpoint.hpp"
#include "xfit/model/transformer.hpp"

using namespace xfit;
using namespace xfit::model;

namespace {

ModelConfig tiny_config(int vocab, std::uint64_t seed = 3) {
    ModelConfig c;
    c.vocab_size = vocab;
    c.embedding_dim = 4;
    c.hidden_dim = 6;
    c.encoder_layers = 1;
    c.decoder_layers = 1;
    c.attention_heads = 2;
    c.max_input_length = 6;
    c.max_output_length = 5;
    c.init_seed = seed;
    return c;
}

std::vector<std::vector<int>> random_seqs(std::mt19937& rng, int n, int vocab, int max_len) {
    std::uniform_int_distribution<int> tok(Vocabulary::reserved_count, vocab - 1);
    std::uniform_int_distribution<int> len(1, max_len);
    std::vector<std::vector<int>> out(static_cast<std::size_t>(n));
    for (auto& s : out) {
        s.resize(static_cast<std::size_t>(len(rng)));
        for (auto& t : s) t = tok(rng);
    }
    return out;
}

// Zero network whose residual stream is token + position embedding, forcing bos -> "yes" -> eos.
Parameters<double> yes_chain(const ModelConfig& c, int yes) {
    auto p = init_params<double>(c);
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p.name(i).find("gain") == std::string::npos) p[i].setZero();
    }
    const double big = 100.0;
    auto& emb = p.at("embed.tokens");
    emb(yes, 1) = big;
    emb(Vocabulary::eos_id, 2) = big;
    auto& pos = p.at("embed.dec_positions");
    pos(0, 1) = 1.0;
    pos(0, 3) = -1.0;
    pos(1, 1) = -big;
    pos(1, 2) = 10.0;
    pos(1, 3) = -10.0;
    return p;
}

}  // namespace

TEST_CASE("build_vocab examples") {
    std::vector<std::string> corpus{"ab"};
    auto v = build_vocab(corpus, TokenMode::character, 10);
    REQUIRE(v.size() == 6);
    CHECK(v.token(0) == "<pad>");
    CHECK(v.token(1) == "<s>");
    CHECK(v.token(2) == "</s>");
    CHECK(v.token(3) == "<unk>");
    CHECK(v.token(4) == "a");
    CHECK(v.token(5) == "b");
    CHECK(build_vocab(corpus, TokenMode::character, 10) == v);

    std::vector<std::string> words{"b a", "a"};
    auto w = build_vocab(words, TokenMode::word, 6);
    CHECK(w.id("a") < w.id("b"));

    CHECK_THROWS_AS(build_vocab(corpus, TokenMode::character, 4), UsageError);
    CHECK_THROWS_AS(build_vocab(std::span<const std::string>{}, TokenMode::character, 10), UsageError);
}

TEST_CASE("vocabulary round trip") {
    std::vector<std::string> corpus{"hello world", "héllo"};
    auto v = build_vocab(corpus, TokenMode::character, 100);
    for (int i = 0; i < v.size(); ++i) CHECK(v.id(v.token(i)) == i);
    auto ids = v.encode("hello wörld");
    CHECK(ids[7] == Vocabulary::unk_id);
    CHECK(v.decode(ids) == "hello wrld");
    auto w = build_vocab(corpus, TokenMode::word, 100);
    CHECK(w.decode(w.encode("world hello")) == "world hello");
}

TEST_CASE("config validation") {
    ModelConfig c = tiny_config(10);
    CHECK_NOTHROW(c.validate());
    c.attention_heads = 3;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = tiny_config(10);
    c.hidden_dim = 0;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = tiny_config(10);
    CHECK(model_config_from_json(to_json(c)) == c);
}

TEST_CASE("init_params determinism and biases") {
    auto c = tiny_config(9);
    auto a = init_params<float>(c);
    auto b = init_params<float>(c);
    CHECK(a == b);
    c.init_seed = 4;
    auto d = init_params<float>(c);
    CHECK_FALSE(a == d);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& n = a.name(i);
        if (n.size() >= 5 && n.compare(n.size() - 5, 5, ".bias") == 0) CHECK(a[i].isZero(0));
    }
    const auto layout = param_layout(c);
    REQUIRE(layout.size() == a.size());
    for (std::size_t i = 0; i < layout.size(); ++i) {
        CHECK(layout[i].name == a.name(i));
        CHECK(layout[i].rows == a[i].rows());
        CHECK(layout[i].cols == a[i].cols());
    }
    CHECK(a.unflatten(a.flatten()) == a);
}

TEST_CASE("batch layout") {
    auto c = tiny_config(9);
    std::vector<std::vector<int>> in{{4, 5}, {6, 7, 8, 4, 5, 6, 7}};
    std::vector<std::vector<int>> out{{4}, {5, 6}};
    auto b = make_batch(c, in, out);
    CHECK(b.input.cols() == c.max_input_length);
    CHECK(b.input(0, 2) == Vocabulary::eos_id);
    CHECK(b.input(0, 3) == Vocabulary::pad_id);
    CHECK(b.input_mask(0, 3) == 0);
    CHECK(b.input(1, 5) == Vocabulary::eos_id);
    CHECK(b.target.cols() == 3);
    for (Index r = 0; r < b.target.rows(); ++r) {
        bool has_eos = false;
        for (Index j = 0; j < b.target.cols(); ++j) {
            has_eos |= b.target(r, j) == Vocabulary::eos_id;
            if (!b.target_mask(r, j)) CHECK(b.target(r, j) == Vocabulary::pad_id);
        }
        CHECK(has_eos);
    }
}

TEST_CASE("untrained loss is near ln V") {
    ModelConfig c;
    c.vocab_size = 40;
    c.init_seed = 11;
    auto p = init_params<double>(c);
    std::mt19937 rng(5);
    auto in = random_seqs(rng, 8, c.vocab_size, 20);
    auto out = random_seqs(rng, 8, c.vocab_size, 10);
    const double loss = evaluate_loss(c, p, make_batch(c, in, out));
    const double expected = std::log(static_cast<double>(c.vocab_size));
    CHECK(std::abs(loss - expected) / expected < 0.05);
}

TEST_CASE("hand-set toy: zero loss and yes chain") {
    std::vector<std::string> corpus{"yes"};
    auto vocab = build_vocab(corpus, TokenMode::word, 5);
    ModelConfig c = tiny_config(vocab.size());
    const int yes = vocab.id("yes");
    auto p = yes_chain(c, yes);
    std::vector<Example> ex{{"anything", "yes"}};
    CHECK(evaluate_loss(c, p, make_batch(c, vocab, ex)) < 1e-12);
    std::vector<std::string> inputs{"anything", "yes yes"};
    auto pred = predict(c, vocab, p, inputs);
    CHECK(pred[0] == "yes");
    CHECK(pred[1] == "yes");
}

TEST_CASE("loss invariance over batch rows") {
    auto c = tiny_config(10);
    auto p = init_params<double>(c);
    std::mt19937 rng(2);
    auto in = random_seqs(rng, 5, c.vocab_size, 5);
    auto out = random_seqs(rng, 5, c.vocab_size, 4);
    const double base = evaluate_loss(c, p, make_batch(c, in, out));

    auto in2 = in;
    auto out2 = out;
    in2.insert(in2.end(), in.begin(), in.end());
    out2.insert(out2.end(), out.begin(), out.end());
    CHECK(evaluate_loss(c, p, make_batch(c, in2, out2)) == doctest::Approx(base).epsilon(1e-12));

    std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    std::vector<std::vector<int>> in3, out3;
    for (auto i : perm) {
        in3.push_back(in[i]);
        out3.push_back(out[i]);
    }
    CHECK(evaluate_loss(c, p, make_batch(c, in3, out3)) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("forward_loss gradient matches finite differences per block") {
    auto c = tiny_config(8, 17);
    auto p = init_params<double>(c);
    std::mt19937 rng(9);
    auto in = random_seqs(rng, 3, c.vocab_size, 5);
    auto out = random_seqs(rng, 3, c.vocab_size, 4);
    const auto batch = make_batch(c, in, out);
    const auto lg = loss_and_grad(c, p, batch);
    CHECK(lg.loss == doctest::Approx(evaluate_loss(c, p, batch)).epsilon(1e-14));

    for (std::size_t b = 0; b < p.size(); ++b) {
        const Matrix<double> x0 = p[b];
        auto f = [&](const testing::VecD& x) {
            auto q = p;
            q[b] = Eigen::Map<const Matrix<double>>(x.data(), x0.rows(), x0.cols());
            return evaluate_loss(c, q, batch);
        };
        testing::VecD x = Eigen::Map<const testing::VecD>(x0.data(), x0.size());
        testing::VecD fd = testing::central_difference(f, x);
        testing::VecD an = Eigen::Map<const testing::VecD>(lg.grad[b].data(), lg.grad[b].size());
        INFO(p.name(b));
        if (fd.norm() < 1e-9) {
            CHECK(an.norm() < 1e-8);
        } else {
            CHECK(testing::relative_error(an, fd) < 1e-5);
        }
    }
}

TEST_CASE("greedy decoding is deterministic, bounded, and never emits pad or bos") {
    auto c = tiny_config(12, 23);
    auto p = init_params<float>(c);
    std::mt19937 rng(4);
    auto in = random_seqs(rng, 40, c.vocab_size, 5);
    auto a = greedy_decode(c, p, std::span<const std::vector<int>>(in));
    auto b = greedy_decode(c, p, std::span<const std::vector<int>>(in));
    CHECK(a == b);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(static_cast<int>(a[i].size()) <= c.max_output_length);
        for (int t : a[i]) {
            CHECK(t != Vocabulary::pad_id);
            CHECK(t != Vocabulary::bos_id);
            CHECK(t != Vocabulary::eos_id);
        }
        CHECK(greedy_decode(c, p, std::span<const int>(in[i])) == a[i]);
    }
}

TEST_CASE("checkpoint round trip is exact") {
    std::vector<std::string> corpus{"abc", "cab d"};
    ModelConfig c = tiny_config(0, 31);
    Checkpoint ck;
    ck.vocab = build_vocab(corpus, TokenMode::character, 20);
    c.vocab_size = ck.vocab.size();
    ck.config = c;
    ck.params = init_params<float>(c);
    ck.method = Method::reptile;
    ck.partition = "random";
    ck.meta_step = 42;
    ck.validation_score = 0.125;
    ck.extra.add("adam.m", Matrix<float>::Constant(2, 3, 0.5f));
    ck.meta["note"] = "x";
    const auto path = std::filesystem::temp_directory_path() / "xfit_test_ckpt.bin";
    write_checkpoint(path, ck);
    const auto back = read_checkpoint(path);
    CHECK(back.config == ck.config);
    CHECK(back.vocab == ck.vocab);
    CHECK(back.params == ck.params);
    CHECK(back.method == Method::reptile);
    CHECK(back.partition == "random");
    CHECK(back.meta_step == 42);
    CHECK(back.validation_score == std::optional<double>(0.125));
    CHECK(back.extra == ck.extra);
    CHECK(back.meta == ck.meta);

    {
        std::ofstream f(path, std::ios::binary | std::ios::app);
        f << "junk";
    }
    CHECK_THROWS_AS(read_checkpoint(path), DataError);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(read_checkpoint(path), DataError);
    CHECK_THROWS_AS(parse_method("sgd"), UsageError);
    CHECK(parse_method("fomaml") == Method::fomaml);
}
