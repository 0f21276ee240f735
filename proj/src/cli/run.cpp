#include <CLI11.hpp>

#include <filesystem>
#include <fstream>

#include "xfit/cli/cli.hpp"

namespace xfit::cli {

namespace {

struct Flags {
    std::string config;
    std::string partition;
    std::string method;
    std::string out;
    std::string gym;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    bool paper_grid = false;
    bool print_config = false;
    bool allow_overlap = false;
    // gym
    std::string tasks;
    // upstream
    std::optional<long> stop_after;
    // fewshot
    std::string checkpoint;
    bool direct = false;
    // report
    std::vector<std::string> results;
};

RunConfig effective_config(const Flags& f) {
    RunConfig c = default_run_config();
    if (!f.config.empty()) {
        std::ifstream in(f.config);
        if (!in) throw UsageError("cannot read config " + f.config);
        Json j;
        try {
            j = Json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw UsageError(f.config + ": " + e.what());
        }
        c = run_config_from_json(j, c);
    }
    if (!f.gym.empty()) c.gym = f.gym;
    if (!f.partition.empty()) c.partition = f.partition;
    if (!f.method.empty()) c.method = model::parse_method(f.method);
    if (!f.out.empty()) c.out = f.out;
    if (f.seed) c.seed = *f.seed;
    if (f.jobs) c.jobs = *f.jobs;
    if (f.allow_overlap) c.allow_overlap = true;
    if (f.paper_grid) c.fewshot = fewshot::FinetuneConfig::paper_grid();
    c.apply_seed();
    c.validate();
    return c;
}

// NAME=DIR or DIR.
std::pair<std::string, fs::path> method_arg(const std::string& s) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) return {"", s};
    return {s.substr(0, eq), s.substr(eq + 1)};
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Cross-task few-shot learning pipeline", "xfit"};
    app.require_subcommand(0, 1);
    app.fallthrough();
    Flags f;
    app.add_option("--config", f.config, "JSON run configuration");
    app.add_option("--partition", f.partition, "Partition file");
    app.add_option("--method", f.method, "Upstream method")->check(CLI::IsMember({"mtl", "maml", "fomaml", "reptile"}));
    app.add_option("--out", f.out, "Output directory");
    app.add_option("--gym", f.gym, "Gym directory (default: $CROSSFIT_HOME or ./gym)");
    app.add_option("--seed", f.seed, "Global seed");
    app.add_option("--jobs", f.jobs, "Concurrent jobs")->check(CLI::PositiveNumber);
    app.add_flag("--paper-grid", f.paper_grid, "Fine-tune over the full 3 x 3 learning-rate and batch grid");
    app.add_flag("--allow-overlap", f.allow_overlap, "Accept partitions whose lists share tasks");
    app.add_flag("--print-config", f.print_config, "Print the effective configuration and exit");

    auto* gym_cmd = app.add_subcommand("gym", "Materialize a gym: task files, 5-seed splits, index");
    gym_cmd->add_option("--tasks", f.tasks, "Directory of task files (default: the synthetic suite)");
    auto* up_cmd = app.add_subcommand("upstream", "Upstream learning on T_train");
    up_cmd->add_option("--stop-after", f.stop_after, "Stop after N steps, leaving the run resumable")
        ->group("");
    auto* few_cmd = app.add_subcommand("fewshot", "Few-shot fine-tuning on T_test x 5 seeds");
    few_cmd->add_option("--checkpoint", f.checkpoint, "Upstream checkpoint");
    few_cmd->add_flag("--direct", f.direct, "Start from the base model");
    auto* rep_cmd = app.add_subcommand("report", "ARG report against a direct fine-tuning baseline");
    rep_cmd->add_option("results", f.results, "BASELINE_DIR then one [NAME=]DIR per method")->required();

    try {
        try {
            app.parse(argc, argv);
        } catch (const CLI::CallForHelp& e) {
            out << app.help();
            return 0;
        } catch (const CLI::ParseError& e) {
            if (e.get_exit_code() == 0) return app.exit(e, out, err);
            throw UsageError(e.what());
        }
        if (*rep_cmd) {
            if (f.results.size() < 2) throw UsageError("report needs a baseline and at least one method directory");
            std::vector<std::pair<std::string, fs::path>> methods;
            for (std::size_t i = 1; i < f.results.size(); ++i) methods.push_back(method_arg(f.results[i]));
            const fs::path dest = f.out.empty() ? fs::path("report") : fs::path(f.out);
            out << cmd_report(f.results[0], methods, dest);
            return 0;
        }
        const RunConfig c = effective_config(f);
        if (f.print_config || app.get_subcommands().empty()) {
            if (!f.print_config) {
                out << app.help();
                return 1;
            }
            out << to_json(c).dump(2) << '\n';
            return 0;
        }
        if (*gym_cmd) {
            const fs::path dest = f.out.empty() ? c.gym : c.out;
            cmd_gym(c, f.tasks.empty() ? std::nullopt : std::optional<fs::path>(f.tasks), dest);
            out << "gym written to " << dest.string() << '\n';
        } else if (*up_cmd) {
            const auto m = cmd_upstream(c, f.stop_after);
            out << "upstream " << m.stages.at("upstream") << ": " << c.out.string() << '\n';
        } else if (*few_cmd) {
            if (f.direct == !f.checkpoint.empty()) throw UsageError("fewshot needs exactly one of --checkpoint and --direct");
            cmd_fewshot(c, f.direct ? std::nullopt : std::optional<fs::path>(f.checkpoint));
            out << "results written to " << c.out.string() << '\n';
        }
        return 0;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        err << "data error: " << e.what() << '\n';
        return 2;
    }
}

}  // namespace xfit::cli
