#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "upstream_fixtures.hpp"
#include "xfit/fewshot/fewshot.hpp"
#include "xfit/metrics/metrics.hpp"

using namespace xfit;
using namespace xfit::fewshot;

namespace {

FinetuneConfig quick() {
    FinetuneConfig c;
    c.learning_rates = {3e-3};
    c.batch_sizes = {4};
    c.total_updates = 12;
    c.warmup_updates = 2;
    c.eval_every = 4;
    c.seed = 5;
    return c;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("learning-rate schedule") {
    CHECK(lr_at(50, 1e-5, 100, 1000) == doctest::Approx(5e-6).epsilon(1e-12));
    CHECK(lr_at(100, 1e-5, 100, 1000) == 1e-5);
    CHECK(lr_at(1000, 1e-5, 100, 1000) == 0.0);
    CHECK(lr_at(550, 1e-5, 100, 1000) == doctest::Approx(5e-6).epsilon(1e-12));
    CHECK(lr_at(1, 2.0, 0, 4) == 1.5);
    for (long u = 1; u < 1000; ++u) {
        if (u < 100) CHECK(lr_at(u + 1, 1.0, 100, 1000) > lr_at(u, 1.0, 100, 1000));
        if (u >= 100) CHECK(lr_at(u + 1, 1.0, 100, 1000) < lr_at(u, 1.0, 100, 1000));
    }
}

TEST_CASE("paper grid and config validation") {
    const auto p = FinetuneConfig::paper_grid();
    CHECK(p.learning_rates == std::vector<double>{1e-5, 2e-5, 5e-5});
    CHECK(p.batch_sizes == std::vector<int>{2, 4, 8});
    CHECK(p.total_updates == 1000);
    CHECK(p.warmup_updates == 100);
    CHECK(p.total_updates / p.eval_every == 10);
    CHECK_NOTHROW(p.validate());
    CHECK_NOTHROW(FinetuneConfig{}.validate());
    auto bad = quick();
    bad.warmup_updates = 12;
    CHECK_THROWS_AS(bad.validate(), UsageError);
    bad = quick();
    bad.eval_every = 5;
    CHECK_THROWS_AS(bad.validate(), UsageError);
    bad = quick();
    bad.learning_rates.clear();
    CHECK_THROWS_AS(bad.validate(), UsageError);
    bad = quick();
    bad.batch_sizes = {0};
    CHECK_THROWS_AS(bad.validate(), UsageError);
    CHECK(to_json(finetune_config_from_json(to_json(p))) == to_json(p));
    CHECK_THROWS_AS(finetune_config_from_json(Json{{"learning_rate", 1}}), UsageError);
}

TEST_CASE("finetune basics") {
    const auto g = fixtures::small_gym(11);
    const ModelRef m{g.config, g.vocab};
    const auto base = model::init_params<float>(g.config);
    const auto& task = g.tasks[0];
    const auto& split = g.splits[0];

    const auto frozen = finetune(m, base, task, split, 0.0, 4, quick());
    CHECK(frozen.params == base);
    REQUIRE(frozen.record.dev_curve.size() == 3);
    for (const auto& p : frozen.record.dev_curve) CHECK(p.score == frozen.record.dev_curve[0].score);
    CHECK(frozen.record.best_step == 4);

    const auto r = finetune(m, base, task, split, 3e-3, 4, quick());
    CHECK_FALSE(r.record.failed);
    CHECK(r.record.losses.size() == 3);
    CHECK(r.record.dev_curve.back().step == 12);
    double best = -1;
    for (const auto& p : r.record.dev_curve) best = std::max(best, p.score);
    CHECK(r.record.dev_score == best);
    CHECK(score_examples(m, r.params, task, split.dev) == r.record.dev_score);

    const auto blown = finetune(m, base, task, split, 1e30, 4, quick());
    CHECK(blown.record.failed);
    CHECK_FALSE(blown.record.error.empty());
}

TEST_CASE("hp_search selection and test hygiene") {
    const auto g = fixtures::small_gym(12);
    const ModelRef m{g.config, g.vocab};
    const auto base = model::init_params<float>(g.config);
    const auto& task = g.tasks[1];
    const auto& split = g.splits[1];

    auto cfg = quick();
    cfg.learning_rates = {3e-3, 1e-3};
    cfg.batch_sizes = {4, 2};
    TestGate gate(task.test);
    const auto r = hp_search(m, base, task, split, cfg, 1, &gate);
    CHECK(r.cells.size() == 4);
    CHECK(gate.opened() == 1);
    CHECK(r.test_accesses == 1);
    for (const auto& c : r.cells) CHECK(c.dev_score <= r.dev_score);
    CHECK(metrics::parse_metric(r.metric) == task.metric);
    // The reported test score belongs to the winning snapshot.
    const auto again = finetune(m, base, task, split, r.chosen_lr, r.chosen_batch_size, cfg);
    CHECK(score_examples(m, again.params, task, task.test) == r.test_score);

    // Tiny learning rates leave every prediction unchanged: all dev scores tie.
    auto tie = quick();
    tie.learning_rates = {2e-12, 1e-12};
    tie.batch_sizes = {8, 4};
    const auto t = hp_search(m, base, task, split, tie);
    for (const auto& c : t.cells) REQUIRE(c.dev_score == t.cells[0].dev_score);
    CHECK(t.chosen_lr == 1e-12);
    CHECK(t.chosen_batch_size == 4);

    const auto single = hp_search(m, base, task, split, quick());
    CHECK(single.chosen_lr == 3e-3);
    CHECK(single.chosen_batch_size == 4);

    auto broken = quick();
    broken.learning_rates = {1e30};
    CHECK_THROWS_AS(hp_search(m, base, task, split, broken), NumericError);
    CHECK_THROWS_AS(hp_search(m, base, g.tasks[0], split, quick()), DataError);
}

TEST_CASE("direct fine-tuning baseline") {
    const auto g = fixtures::small_gym(13);
    const ModelRef m{g.config, g.vocab};
    const auto base = model::init_params<float>(g.config);
    std::vector<TaskResult> direct, again, same_ckpt, parallel;
    auto cfg = quick();
    cfg.batch_sizes = {4, 8};
    for (std::size_t i = 0; i < 2; ++i) {
        direct.push_back(evaluate_direct(m, base, g.tasks[i], g.splits[i], cfg));
        again.push_back(evaluate_direct(m, base, g.tasks[i], g.splits[i], cfg));
        same_ckpt.push_back(hp_search(m, model::init_params<float>(g.config), g.tasks[i], g.splits[i], cfg));
        parallel.push_back(evaluate_direct(m, base, g.tasks[i], g.splits[i], cfg, 3));
    }
    for (std::size_t i = 0; i < direct.size(); ++i) {
        CHECK(to_json(direct[i]) == to_json(again[i]));
        CHECK(to_json(direct[i]) == to_json(same_ckpt[i]));
        CHECK(to_json(direct[i]) == to_json(parallel[i]));
    }
    std::vector<metrics::ScorePair> pairs;
    for (const auto& [task, s] : mean_by_task(direct)) pairs.push_back({task, "rouge_l", s + 1, s + 1});
    CHECK(metrics::arg(pairs).arg == 0.0);
}

TEST_CASE("result files") {
    const auto g = fixtures::small_gym(14);
    const ModelRef m{g.config, g.vocab};
    const auto base = model::init_params<float>(g.config);
    auto cfg = quick();
    cfg.learning_rates = {1e-3, 3e-3};
    std::vector<TaskResult> results;
    for (auto seed : {13ull, 21ull}) {
        const auto split = gym::sample_few_shot(g.tasks[2], seed);
        results.push_back(hp_search(m, base, g.tasks[2], split, cfg));
    }
    const auto dir = std::filesystem::temp_directory_path() / "xfit_fewshot_results";
    std::filesystem::remove_all(dir);
    write_results(dir / "a.jsonl", results);
    const auto back = read_results(dir / "a.jsonl");
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) CHECK(to_json(back[i]) == to_json(results[i]));
    CHECK(task_result_from_json(to_json(results[0])).cells.size() == 2);
    write_results(dir / "b.jsonl", back);
    const std::string text = slurp(dir / "a.jsonl");
    CHECK(text == slurp(dir / "b.jsonl"));
    CHECK(std::count(text.begin(), text.end(), '\n') == 4);
    {
        std::ofstream f(dir / "bad.jsonl");
        f << "{\"task\": 1}\n";
    }
    CHECK_THROWS_WITH_AS(read_results(dir / "bad.jsonl"), doctest::Contains("bad.jsonl:1"), DataError);
    const auto means = mean_by_task(results);
    CHECK(means.at(g.tasks[2].name) == doctest::Approx((results[0].test_score + results[1].test_score) / 2));
    std::filesystem::remove_all(dir);
}

TEST_CASE("relative gain score for validation") {
    CHECK(relative_gain_score({{"a", 0.5}, {"b", 0.4}}, {{"a", 0.7}, {"b", 0.3}}) == doctest::Approx(0.075));
    CHECK(relative_gain_score({{"a", 0.0}, {"b", 0.4}}, {{"a", 0.7}, {"b", 0.3}}) == doctest::Approx(-0.25));
    CHECK(relative_gain_score({{"a", 0.0}}, {{"a", 0.7}}) == doctest::Approx(0.7));
    CHECK_THROWS_AS(relative_gain_score({{"a", 0.5}}, {{"z", 0.7}}), DataError);
}

TEST_CASE("dev validator") {
    const auto g = fixtures::small_gym(15);
    const auto base = model::init_params<float>(g.config);
    std::vector<gym::Task> tasks(g.tasks.begin(), g.tasks.begin() + 2);
    std::vector<gym::FewShotSplit> splits(g.splits.begin(), g.splits.begin() + 2);
    const auto v = dev_validator(g.config, g.vocab, base, tasks, splits, quick());
    CHECK(v(base) == 0.0);
}

TEST_CASE("parallel_for") {
    std::vector<int> out(50, 0);
    parallel_for(out.size(), 4, [&](std::size_t i) { out[i] = static_cast<int>(i * i); });
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == static_cast<int>(i * i));
    CHECK_THROWS_AS(parallel_for(5, 3, [](std::size_t i) {
                        if (i == 2) throw DataError("boom");
                    }),
                    DataError);
}
