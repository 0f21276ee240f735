#include <doctest.h>

#include <random>

#include "metric_oracles.hpp"

using namespace xfit;
using namespace xfit::metrics;

namespace {
using Strings = std::vector<std::string>;
}

TEST_CASE("accuracy and exact match") {
    Strings a{"x", "y", "z"};
    CHECK(accuracy(a, a) == 1.0);
    CHECK(accuracy(a, Strings{"p", "q", "r"}) == 0.0);
    CHECK(accuracy(Strings{"  Yes "}, Strings{"yes"}) == 1.0);
    CHECK(exact_match(Strings{"the Cat."}, Strings{"cat"}) == 1.0);
    CHECK(accuracy(Strings{"the Cat."}, Strings{"cat"}) == 0.0);
    CHECK_THROWS_AS(accuracy(a, Strings{"x"}), DataError);
    CHECK_THROWS_AS(exact_match(Strings{}, Strings{}), DataError);
    CHECK(normalize_answer("  An  apple, the pie!") == "apple pie");
    CHECK(normalize_text(" A \t b  ") == "a b");
}

TEST_CASE("classification F1") {
    Strings labels{"a", "b"};
    CHECK(classification_f1(Strings{"a", "b"}, Strings{"a", "b"}, labels) == 1.0);
    CHECK(classification_f1(Strings{"a", "a"}, Strings{"a", "b"}, labels) == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(classification_f1(Strings{"z", "q"}, Strings{"a", "b"}, labels) == 0.0);
    CHECK_THROWS_AS(classification_f1(Strings{"a"}, Strings{"a"}, Strings{}), DataError);
    CHECK_THROWS_AS(classification_f1(Strings{"a"}, Strings{"c"}, labels), DataError);
    // Class c absent from golds but predicted counts as F1 0.
    Strings three{"a", "b", "c"};
    CHECK(classification_f1(Strings{"a", "c"}, Strings{"a", "a"}, three) == doctest::Approx((2.0 / 3 + 0) / 2));
}

TEST_CASE("qa F1 and rouge-L") {
    CHECK(qa_f1("x y", "x y") == 1.0);
    CHECK(qa_f1("the cat sat", "cat sat") == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(qa_f1("p q", "r s") == 0.0);
    CHECK(qa_f1("", "") == 1.0);
    CHECK(qa_f1("", "a") == 0.0);
    CHECK(rouge_l("a b c d", "a b c d") == 1.0);
    CHECK(rouge_l("a b c d", "a c d") == doctest::Approx(6.0 / 7).epsilon(1e-12));
    CHECK(rouge_l("a b", "c d") == 0.0);
    CHECK(rouge_l("", "") == 1.0);
    CHECK(rouge_l("a", "") == 0.0);
}

TEST_CASE("matthews and pearson") {
    Strings labels{"no", "yes"};
    Strings g{"yes", "no", "yes", "no"};
    CHECK(matthews(g, g, labels) == doctest::Approx(1.0));
    CHECK(matthews(Strings{"no", "yes", "no", "yes"}, g, labels) == doctest::Approx(-1.0));
    // TP=1, TN=1, FP=1, FN=1.
    CHECK(matthews(Strings{"yes", "no", "no", "yes"}, g, labels) == 0.0);
    CHECK(matthews(Strings{"yes", "yes"}, Strings{"yes", "yes"}, labels) == 0.0);
    CHECK_THROWS_AS(matthews(g, g, Strings{"a", "b", "c"}), DataError);

    std::vector<double> x{1, 2, 3};
    std::vector<double> nx{-1, -2, -3};
    CHECK(pearson(x, x) == doctest::Approx(1.0));
    CHECK(pearson(nx, x) == doctest::Approx(-1.0));
    CHECK(pearson(x, std::vector<double>{1, 2, 4}) == doctest::Approx(0.9820).epsilon(1e-4));
    CHECK(pearson(std::vector<double>{2, 2, 2}, x) == 0.0);
    CHECK_THROWS_AS(pearson(x, std::vector<double>{1, 2}), DataError);
    CHECK(parse_real(" 2.5 ") == 2.5);
    CHECK(parse_real("two") == 0.0);
    CHECK(score(Metric::pearson, Strings{"1", "2", "3"}, Strings{"1", "2", "4"}) ==
          doctest::Approx(0.9820).epsilon(1e-4));
}

TEST_CASE("ARG") {
    std::vector<ScorePair> fixture{{"t1", "classification_f1", 0.5, 0.7}, {"t2", "accuracy", 0.4, 0.3}};
    auto r = arg(fixture);
    CHECK(std::abs(r.arg - 0.075) <= 1e-12);
    CHECK(r.relative_gains[0] == doctest::Approx(0.4));
    CHECK(r.relative_gains[1] == doctest::Approx(-0.25));

    std::vector<ScorePair> same{{"a", "accuracy", 0.3, 0.3}, {"b", "accuracy", 0.9, 0.9}};
    CHECK(arg(same).arg == 0.0);

    std::vector<ScorePair> three{{"a", "m", 80, 88}, {"b", "m", 20, 25}, {"c", "m", 50, 45}};
    CHECK(arg(three).arg == doctest::Approx(0.25 / 3).epsilon(1e-12));

    std::vector<ScorePair> bad{{"zero-task", "m", 0.0, 0.5}};
    CHECK_THROWS_WITH_AS(arg(bad), doctest::Contains("zero-task"), DataError);

    // Scaling one pair leaves ARG unchanged.
    auto scaled = three;
    scaled[1].base *= 3.5;
    scaled[1].updated *= 3.5;
    CHECK(arg(scaled).arg == doctest::Approx(arg(three).arg).epsilon(1e-14));
}

TEST_CASE("metric ranges on random inputs") {
    std::mt19937 rng(7);
    const Strings vocab{"a", "b", "c", "The", "x."};
    std::uniform_int_distribution<int> pick(0, 4), len(0, 6), n(2, 12);
    auto sentence = [&] {
        Strings w;
        const int l = len(rng);
        for (int i = 0; i < l; ++i) w.push_back(vocab[static_cast<std::size_t>(pick(rng))]);
        return testing::join(w);
    };
    for (int trial = 0; trial < 300; ++trial) {
        const int size = n(rng);
        Strings p, g;
        for (int i = 0; i < size; ++i) {
            p.push_back(sentence());
            g.push_back(sentence());
        }
        for (Metric m : {Metric::accuracy, Metric::exact_match, Metric::qa_f1, Metric::rouge_l, Metric::pearson}) {
            const double s = score(m, p, g);
            const auto [lo, hi] = metric_range(m);
            CHECK(s >= lo);
            CHECK(s <= hi);
        }
        for (int i = 0; i < size; ++i) {
            const auto ui = static_cast<std::size_t>(i);
            CHECK(rouge_l(p[ui], g[ui]) <= qa_f1(p[ui], g[ui]) + 1e-12);
            CHECK(qa_f1(p[ui], g[ui]) == doctest::Approx(qa_f1(g[ui], p[ui])).epsilon(1e-14));
        }
        Strings labs{"a", "b"};
        Strings gl, pl;
        for (int i = 0; i < size; ++i) {
            gl.push_back(labs[static_cast<std::size_t>(pick(rng) % 2)]);
            pl.push_back(vocab[static_cast<std::size_t>(pick(rng))]);
        }
        const double f1 = classification_f1(pl, gl, labs);
        CHECK(f1 >= 0.0);
        CHECK(f1 <= 1.0);
        const double mcc = matthews(pl, gl, labs);
        CHECK(mcc >= -1.0);
        CHECK(mcc <= 1.0);
    }
}

TEST_CASE("metrics agree with brute-force oracles on short inputs") {
    const auto seq = testing::sweep_sequence_metrics(5);
    INFO(seq.first_failure);
    CHECK(seq.mismatches == 0);
    const auto canon = testing::sweep_sequence_metrics(5, true);
    CHECK(canon.mismatches == 0);
    CHECK(canon.cases < seq.cases);
    const auto lists = testing::sweep_list_metrics(4);
    INFO(lists.first_failure);
    CHECK(lists.mismatches == 0);
    const auto multisets = testing::sweep_list_metrics_multisets(8);
    INFO(multisets.first_failure);
    CHECK(multisets.mismatches == 0);
}

TEST_CASE("sequence metrics depend on tokens only through equality") {
    std::mt19937 rng(3);
    const Strings alphabet{"a", "b", "c"};
    const Strings renamed{"zz", "q", "mm"};
    std::uniform_int_distribution<int> pick(0, 2), len(0, 8);
    for (int trial = 0; trial < 2000; ++trial) {
        Strings p, g, p2, g2;
        for (int i = len(rng); i > 0; --i) {
            const auto k = static_cast<std::size_t>(pick(rng));
            p.push_back(alphabet[k]);
            p2.push_back(renamed[k]);
        }
        for (int i = len(rng); i > 0; --i) {
            const auto k = static_cast<std::size_t>(pick(rng));
            g.push_back(alphabet[k]);
            g2.push_back(renamed[k]);
        }
        const auto a = testing::join(p), b = testing::join(g), a2 = testing::join(p2), b2 = testing::join(g2);
        CHECK(rouge_l(a, b) == rouge_l(a2, b2));
        CHECK(qa_f1(a, b) == qa_f1(a2, b2));
    }
}

TEST_CASE("report table") {
    ReportTable t;
    t.tasks = {"t1", "t2"};
    t.task_metrics = {"classification_f1", "accuracy"};
    t.baseline = {0.5, 0.4};
    t.methods = {"mtl"};
    std::vector<ScorePair> pairs{{"t1", "classification_f1", 0.5, 0.7}, {"t2", "accuracy", 0.4, 0.3}};
    t.columns = {arg(pairs)};
    const auto j = to_json(t);
    CHECK(j["summary"]["mtl"]["arg"].get<double>() == doctest::Approx(0.075));
    const auto text = to_text(t);
    CHECK(text.find("+7.50%") != std::string::npos);
    CHECK(text.find("-25.00%") != std::string::npos);
}
