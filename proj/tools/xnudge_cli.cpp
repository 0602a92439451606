// xnudge command line: staged pipeline for behavior-model-driven explanation
// manipulation experiments. Exit codes: 0 success, 2 config error, 3 stage
// failure.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "xnudge/pipeline.hpp"

namespace {

struct GlobalOpts {
    std::string config_path;
    std::string out_dir = "runs";
    int threads = 0;
    long long seed_override = -1;
};

xnudge::RunContext build_context(const GlobalOpts& g) {
    xnudge::RunConfig cfg = xnudge::load_config_file(g.config_path);
    if (g.seed_override >= 0) cfg.seed = static_cast<uint64_t>(g.seed_override);
    return xnudge::make_context(cfg, g.out_dir, g.threads);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"xnudge: model how decision makers use AI recommendations and feature "
                 "attributions, then optimize steered explanations and evaluate them on a "
                 "simulated population"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "run configuration JSON")->required();
    app.add_option("--out-dir", g.out_dir, "directory holding run artifacts");
    app.add_option("--threads", g.threads, "worker threads (0 = all; results are identical)");
    app.add_option("--seed", g.seed_override, "override the config seed");

    struct Sub {
        const char* name;
        const char* help;
        void (*fn)(const xnudge::RunContext&);
    };
    const Sub subs[] = {
        {"gen-data", "generate or ingest the task dataset and splits", xnudge::stage_gen_data},
        {"train-ai", "train the task model on the train split", xnudge::stage_train_ai},
        {"explain", "compute baseline explanations for the task pool", xnudge::stage_explain},
        {"sim-log", "collect behavior logs from the simulated population", xnudge::stage_sim_log},
        {"train-behavior", "fit and cross-validate the behavior model",
         xnudge::stage_train_behavior},
        {"manipulate", "assign targets and optimize manipulated explanations",
         xnudge::stage_manipulate},
        {"evaluate", "run the oracle population under every condition", xnudge::stage_evaluate},
    };

    void (*selected)(const xnudge::RunContext&) = nullptr;
    bool do_report = false;
    bool do_run = false;
    for (const auto& sub : subs) {
        CLI::App* c = app.add_subcommand(sub.name, sub.help);
        c->fallthrough();
        auto fn = sub.fn;
        c->callback([&selected, fn]() { selected = fn; });
    }
    app.add_subcommand("report", "print the summary table and write plot-ready CSVs")
        ->fallthrough()
        ->callback([&do_report]() { do_report = true; });
    app.add_subcommand("run", "full pipeline: gen-data through report")
        ->fallthrough()
        ->callback([&do_run]() { do_run = true; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const xnudge::RunContext ctx = build_context(g);
        if (do_run) {
            xnudge::run_experiment(ctx, std::cout);
        } else if (do_report) {
            xnudge::stage_report(ctx, std::cout);
        } else {
            selected(ctx);
        }
        return 0;
    } catch (const xnudge::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
}
