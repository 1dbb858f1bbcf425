#include <CLI11.hpp>
#include <iostream>

#include "ramlab/experiment.hpp"

using namespace ramlab;

namespace {

struct CommonFlags {
    std::string config;
    std::string out;
    std::string seed;
    int jobs = 0;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config, "experiment config file (key=value lines)")
        ->required();
    cmd->add_option("--seed", f.seed, "master seed override");
    cmd->add_option("--out", f.out, "output directory override");
    cmd->add_option("--jobs", f.jobs, "worker threads for per-image parallelism");
}

ExperimentConfig load(const CommonFlags& f) {
    ExperimentConfig cfg = ExperimentConfig::from_file(f.config);
    if (!f.seed.empty()) cfg.set("seed", f.seed);
    if (!f.out.empty()) cfg.set("out", f.out);
    if (f.jobs > 0) cfg.set("jobs", std::to_string(f.jobs));
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"toy segmentation-robustness lab: attention refinement vs patch attacks"};
    app.require_subcommand(1);

    CommonFlags gen_f, train_f, attack_f, rf_f, report_f;
    CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
    add_common(gen, gen_f);
    CLI::App* tr = app.add_subcommand("train", "train a model and write a checkpoint");
    add_common(tr, train_f);
    CLI::App* at = app.add_subcommand("attack", "run the attack sweep grid into the ledger");
    add_common(at, attack_f);
    CLI::App* rf = app.add_subcommand("rf", "effective receptive field maps and radii");
    add_common(rf, rf_f);
    CLI::App* rp = app.add_subcommand("report", "pivot the ledger into a markdown report");
    add_common(rp, report_f);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) cmd_gen_data(load(gen_f));
        if (tr->parsed()) cmd_train(load(train_f));
        if (at->parsed()) cmd_attack(load(attack_f));
        if (rf->parsed()) cmd_rf(load(rf_f));
        if (rp->parsed()) cmd_report(load(report_f));
    } catch (const std::invalid_argument& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
