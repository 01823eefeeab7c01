#include "buzz/experiment.hpp"
#include "buzz/metrics.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace {

enum Exit { kOk = 0, kConfig = 2, kFailure = 3 };

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("-c,--config", c.config, "experiment config (INI)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "override [experiment] seed");
    cmd->add_option("--out", c.out, "override the output directory");
}

buzz::ExperimentConfig load(const Common& c) {
    auto doc = buzz::ConfigDoc::load(c.config);
    if (c.seed) doc.set("experiment", "seed", std::to_string(*c.seed));
    auto cfg = buzz::ExperimentConfig::from_doc(doc, std::filesystem::path(c.config).parent_path());
    if (!c.out.empty()) cfg.out = c.out;
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"buzzlab: buffer-zone defenses against black-box adversaries"};
    app.require_subcommand(1);

    Common train_opts, attack_opts, report_opts, map_opts;
    auto* train = app.add_subcommand("train", "train defenses and write bundles plus accuracy.csv");
    add_common(train, train_opts);
    auto* attack = app.add_subcommand("attack", "run black-box campaigns against trained bundles");
    add_common(attack, attack_opts);
    auto* report = app.add_subcommand("report", "tabulate p, p_d, alpha, gamma and delta");
    add_common(report, report_opts);
    auto* map = app.add_subcommand("map", "render decision-region maps");
    add_common(map, map_opts);

    std::string selfcheck_out = "selfcheck_out";
    auto* selfcheck = app.add_subcommand("selfcheck", "fast invariant checks and a tiny end-to-end run");
    selfcheck->add_option("--out", selfcheck_out, "output directory");

    double p = 0, p_d = 0, alpha = -1, kept = -1;
    auto* delta_cmd = app.add_subcommand("delta", "gamma and delta from clean accuracies and attack success");
    delta_cmd->add_option("--p", p, "vanilla clean accuracy")->required();
    delta_cmd->add_option("--pd", p_d, "defended clean accuracy")->required();
    auto* a_opt = delta_cmd->add_option("--alpha", alpha, "attack success rate");
    auto* k_opt = delta_cmd->add_option("--defense-success", kept, "1 - alpha, as some tables report it");
    a_opt->excludes(k_opt);

    CLI11_PARSE(app, argc, argv);
    std::cout << std::unitbuf; // progress lines show up as they happen

    try {
        if (*train) buzz::cmd_train(load(train_opts), std::cout);
        else if (*attack) buzz::cmd_attack(load(attack_opts), std::cout);
        else if (*report) buzz::cmd_report(load(report_opts), std::cout);
        else if (*map) buzz::cmd_map(load(map_opts), std::cout);
        else if (*selfcheck) {
            if (buzz::cmd_selfcheck(selfcheck_out, std::cout) != 0) return kFailure;
        } else if (*delta_cmd) {
            if (a_opt->count() == 0 && k_opt->count() == 0) throw buzz::ConfigError("delta: give --alpha or --defense-success");
            const double a = a_opt->count() ? alpha : 1.0 - kept;
            const auto d = buzz::delta(p, p_d, a);
            std::printf("gamma = %.4f\ndelta = %.4f\n", d.gamma, d.delta);
        }
    } catch (const buzz::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kOk;
}
