#include <CLI11.hpp>

#include "nedkit/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"nedkit: nonuniform dichotomies and their robustness"};
    app.require_subcommand(1, 1);

    std::string config, out_dir = ".";
    unsigned workers = 1;
    double tolerance = 0.0;

    for (const auto& name : nedkit::cli::commands()) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config, "scenario file (section.key = value)");
        sub->add_option("--out", out_dir, "output directory for CSV and report files");
        sub->add_option("--parallel", workers, "worker threads")->check(CLI::PositiveNumber);
        sub->add_option("--tolerance", tolerance, "overrides run.tolerance");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    nedkit::cli::RunOptions opts;
    opts.command = app.get_subcommands().front()->get_name();
    const auto* sub = app.get_subcommands().front();
    if (sub->count("--config")) opts.config = config;
    opts.out_dir = out_dir;
    opts.workers = workers;
    if (sub->count("--tolerance")) opts.tolerance = tolerance;
    return nedkit::cli::run(opts);
}
