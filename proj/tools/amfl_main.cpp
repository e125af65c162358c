// Experiment harness for the anti-Matthew federated learning simulator.

#include "amfl/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

struct CommonArgs {
    std::string config_file;
    std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("-c,--config", args.config_file, "key=value config file");
    cmd->add_option("-s,--set", args.sets, "override a config key, e.g. --set budgets.eps_b=0.1");
}

amfl::ExperimentConfig make_config(const CommonArgs& args) {
    amfl::ExperimentConfig cfg;
    if (!args.config_file.empty()) amfl::load_config_file(cfg, args.config_file);
    for (const auto& kv : args.sets) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw amfl::ConfigError("--set expects key=value, got: " + kv);
        amfl::apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

void print_summary(const std::string& label, const amfl::RepeatSummary& s) {
    std::cout << label << ": avg_acc=" << s.mean_avg_acc << " std_acc=" << s.mean_std_acc
              << " avg_bias=" << s.mean_avg_bias << " std_bias=" << s.mean_std_bias << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"anti-Matthew federated learning simulator"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, eval_args, budget_args, sweep_args, abl_args, attack_args;

    auto* gen = app.add_subcommand("generate", "write the synthetic federation as train/test CSV");
    add_common(gen, gen_args);

    auto* train = app.add_subcommand("train", "train a method and write a run directory");
    add_common(train, train_args);

    auto* eval = app.add_subcommand("evaluate", "evaluate a checkpoint on the configured test split");
    add_common(eval, eval_args);
    std::string model_path, eval_out;
    eval->add_option("-m,--model", model_path, "model checkpoint file")->required();
    eval->add_option("-o,--out", eval_out, "write the report CSV here");

    auto* budget = app.add_subcommand("budget-from-fedavg", "derive budgets from a FedAvg run");
    add_common(budget, budget_args);
    std::string fedavg_dir;
    budget->add_option("-r,--run", fedavg_dir, "completed FedAvg run directory")->required();

    auto* sweep = app.add_subcommand("sweep", "train across budget values and tabulate");
    add_common(sweep, sweep_args);
    std::string sweep_param = "eps_b";
    std::vector<double> sweep_values;
    sweep->add_option("-p,--parameter", sweep_param, "eps_b | eps_vl | eps_vb");
    sweep->add_option("-v,--values", sweep_values, "budget values to sweep");

    auto* ablation = app.add_subcommand("ablation", "single-stage vs full-pipeline table");
    add_common(ablation, abl_args);

    auto* attack = app.add_subcommand("attack", "robustness table under gradient attacks");
    add_common(attack, attack_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) {
            amfl::cmd_generate(make_config(gen_args));
        } else if (train->parsed()) {
            print_summary("train", amfl::cmd_train(make_config(train_args)));
        } else if (eval->parsed()) {
            auto report = amfl::cmd_evaluate(make_config(eval_args), model_path, eval_out);
            std::cout << "avg_acc=" << report.avg_acc << " std_acc=" << report.std_acc
                      << " avg_bias=" << report.avg_bias << " std_bias=" << report.std_bias << "\n";
        } else if (budget->parsed()) {
            auto derived = amfl::cmd_budget_from_fedavg(fedavg_dir);
            if (derived.degenerate)
                std::cerr << "warning: a derived budget is zero; the source run has degenerate metrics\n";
            std::cout << "budgets.eps_b=" << derived.budgets.eps_b << "\n"
                      << "budgets.eps_vl=" << derived.budgets.eps_vl << "\n"
                      << "budgets.eps_vb=" << derived.budgets.eps_vb << "\n";
        } else if (sweep->parsed()) {
            if (sweep_values.empty()) sweep_values = {0.01, 0.02, 0.05, 0.1};
            for (const auto& row : amfl::cmd_sweep(make_config(sweep_args), sweep_param, sweep_values))
                print_summary(sweep_param + "=" + std::to_string(row.value), row.summary);
        } else if (ablation->parsed()) {
            for (const auto& row : amfl::cmd_ablation(make_config(abl_args)))
                print_summary(row.variant, row.summary);
        } else if (attack->parsed()) {
            for (const auto& row : amfl::cmd_attack(make_config(attack_args))) {
                print_summary(row.attack, row.summary);
                std::cout << "  honest_avg_acc=" << row.honest_avg_acc << "\n";
            }
        }
    } catch (const amfl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
