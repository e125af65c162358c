#include "amfl/experiment.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

using namespace amfl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

ExperimentConfig tiny_config(const std::string& out, int rounds = 6) {
    ExperimentConfig cfg;
    cfg.n_samples = 400;
    cfg.data_seed = 3;
    cfg.train_seed = 3;
    cfg.budgets = {0.1, 0.01, 0.04};
    cfg.budgets_set = true;
    cfg.plan.rounds_stage1 = rounds / 3;
    cfg.plan.rounds_stage2 = rounds / 3;
    cfg.plan.rounds_stage3 = rounds - 2 * (rounds / 3);
    cfg.plan.log_every = 2;
    cfg.output_dir = out;
    return cfg;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

size_t count_lines(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    size_t n = 0;
    while (std::getline(in, line)) ++n;
    return n;
}

} // namespace

TEST_CASE("config files parse, apply, and echo reproducibly") {
    TempDir tmp("amfl_cfg_test");
    {
        std::ofstream f(tmp.path / "exp.cfg");
        f << "# comment\n";
        f << "method = anti-matthew\n";
        f << "metric = apsd\n";
        f << "budgets.eps_b = 0.08\n";
        f << "budgets.eps_vl=0.01\n";
        f << "budgets.eps_vb=0.04\n";
        f << "plan.eta=0.02\n";
        f << "dataset.n=500\n";
    }
    ExperimentConfig cfg;
    load_config_file(cfg, (tmp.path / "exp.cfg").string());
    REQUIRE(cfg.metric == BiasMetric::APSD);
    REQUIRE(cfg.budgets.eps_b == 0.08);
    REQUIRE(cfg.plan.eta == 0.02);
    REQUIRE(cfg.budgets_set);

    apply_setting(cfg, "plan.eta", "0.07");   // overrides win
    REQUIRE(cfg.plan.eta == 0.07);

    write_config_echo(cfg, (tmp.path / "echo.cfg").string());
    ExperimentConfig back;
    load_config_file(back, (tmp.path / "echo.cfg").string());
    REQUIRE(back.plan.eta == 0.07);
    REQUIRE(back.metric == BiasMetric::APSD);
    REQUIRE(back.n_samples == 500);

    REQUIRE_THROWS_AS(apply_setting(cfg, "no.such.key", "1"), ConfigError);
    REQUIRE_THROWS_AS(apply_setting(cfg, "plan.eta", "abc"), ConfigError);
}

TEST_CASE("config validation catches missing budgets") {
    ExperimentConfig cfg;
    cfg.method = "anti-matthew";
    cfg.budgets_set = false;
    REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("generate writes byte-identical files for a fixed seed") {
    TempDir tmp("amfl_gen_test");
    ExperimentConfig cfg;
    cfg.method = "fedavg";
    cfg.n_samples = 300;
    cfg.data_seed = 11;
    cfg.output_dir = (tmp.path / "a").string();
    cmd_generate(cfg);
    cfg.output_dir = (tmp.path / "b").string();
    cmd_generate(cfg);
    REQUIRE(slurp(tmp.path / "a" / "train.csv") == slurp(tmp.path / "b" / "train.csv"));
    REQUIRE(slurp(tmp.path / "a" / "test.csv") == slurp(tmp.path / "b" / "test.csv"));
    REQUIRE(count_lines(tmp.path / "a" / "train.csv") > 1);

    cfg.n_samples = 0;
    REQUIRE_THROWS_AS(cmd_generate(cfg), ConfigError);
}

TEST_CASE("a train run writes the full run directory") {
    TempDir tmp("amfl_run_test");
    auto cfg = tiny_config((tmp.path / "run").string(), 6);
    auto summary = cmd_train(cfg);
    REQUIRE(summary.reports.size() == 1);
    for (const char* name : {"config.txt", "rounds.csv", "final_report.csv", "model.ckpt",
                             "rounds.svg", "stage1.ckpt", "stage2.ckpt", "summary.csv"})
        REQUIRE(fs::exists(tmp.path / "run" / name));
    // rounds.csv: header + one row per executed round
    REQUIRE(count_lines(tmp.path / "run" / "rounds.csv") <= 1 + 6);
    REQUIRE(count_lines(tmp.path / "run" / "rounds.csv") >= 2);
    auto svg = slurp(tmp.path / "run" / "rounds.svg");
    REQUIRE(svg.find("<svg") == 0);
    REQUIRE(svg.find("polyline") != std::string::npos);
}

TEST_CASE("repeats produce run subdirectories plus a summary") {
    TempDir tmp("amfl_rep_test");
    auto cfg = tiny_config((tmp.path / "rep").string(), 3);
    cfg.repeats = 2;
    auto summary = cmd_train(cfg);
    REQUIRE(summary.reports.size() == 2);
    REQUIRE(fs::exists(tmp.path / "rep" / "run_00" / "final_report.csv"));
    REQUIRE(fs::exists(tmp.path / "rep" / "run_01" / "final_report.csv"));
    auto text = slurp(tmp.path / "rep" / "summary.csv");
    REQUIRE(text.find("mean,") != std::string::npos);
}

TEST_CASE("evaluate round-trips a checkpoint through the report") {
    TempDir tmp("amfl_eval_test");
    auto cfg = tiny_config((tmp.path / "run").string(), 3);
    cmd_train(cfg);
    auto report = cmd_evaluate(cfg, (tmp.path / "run" / "model.ckpt").string(),
                               (tmp.path / "eval.csv").string());
    REQUIRE(report.size() == 2);
    REQUIRE(fs::exists(tmp.path / "eval.csv"));
}

TEST_CASE("budget derivation halves and rounds to one significant figure") {
    auto d = budgets_from_report(0.2480, 0.0283, 0.0819);
    REQUIRE(d.budgets.eps_b == Catch::Approx(0.1));
    REQUIRE(d.budgets.eps_vl == Catch::Approx(0.01));
    REQUIRE(d.budgets.eps_vb == Catch::Approx(0.04));
    REQUIRE_FALSE(d.degenerate);

    auto e = budgets_from_report(0.02, 0.02, 0.02);
    REQUIRE(e.budgets.eps_b == Catch::Approx(0.01));
    REQUIRE(e.budgets.eps_vl == Catch::Approx(0.01));
    REQUIRE(e.budgets.eps_vb == Catch::Approx(0.01));

    auto z = budgets_from_report(0.0, 0.0, 0.0);
    REQUIRE(z.budgets.eps_b == 0.0);
    REQUIRE(z.degenerate);
}

TEST_CASE("budget-from-fedavg reads a completed run directory") {
    TempDir tmp("amfl_budget_test");
    auto cfg = tiny_config((tmp.path / "fedavg").string(), 4);
    cfg.method = "fedavg";
    cfg.budgets_set = false;
    cmd_train(cfg);
    auto derived = cmd_budget_from_fedavg((tmp.path / "fedavg").string());
    REQUIRE(derived.budgets.eps_b >= 0.0);
    REQUIRE_THROWS_AS(cmd_budget_from_fedavg((tmp.path / "missing").string()), ConfigError);
}

TEST_CASE("sweep writes one row per value and is deterministic") {
    TempDir tmp("amfl_sweep_test");
    auto cfg = tiny_config((tmp.path / "s1").string(), 3);
    auto rows = cmd_sweep(cfg, "eps_b", {0.05});
    REQUIRE(rows.size() == 1);
    REQUIRE(fs::exists(tmp.path / "s1" / "sweep_eps_b.csv"));
    REQUIRE(fs::exists(tmp.path / "s1" / "sweep_eps_b.svg"));

    cfg.output_dir = (tmp.path / "s2").string();
    auto again = cmd_sweep(cfg, "eps_b", {0.05});
    REQUIRE(rows[0].summary.mean_avg_acc == again[0].summary.mean_avg_acc);

    REQUIRE_THROWS_AS(cmd_sweep(cfg, "eps_b", {}), ConfigError);
    REQUIRE_THROWS_AS(cmd_sweep(cfg, "bogus", {0.1}), ConfigError);
}

TEST_CASE("ablation emits the four variants with statuses") {
    TempDir tmp("amfl_abl_test");
    auto cfg = tiny_config((tmp.path / "abl").string(), 6);
    auto rows = cmd_ablation(cfg);
    REQUIRE(rows.size() == 4);
    REQUIRE(rows[0].variant == "stage1");
    REQUIRE(rows[3].variant == "stage1+stage2+stage3");
    auto text = slurp(tmp.path / "abl" / "ablation.csv");
    REQUIRE(text.find("stage1+stage2+stage3") != std::string::npos);
    REQUIRE(text.find("status_std_acc") != std::string::npos);
}

TEST_CASE("attack runner compares attack-free and attacked runs") {
    TempDir tmp("amfl_attack_test");
    auto cfg = tiny_config((tmp.path / "atk").string(), 3);
    cfg.synthetic_clients = 4;
    cfg.n_samples = 600;
    cfg.attack_enabled = true;
    cfg.attack.kind = AttackKind::Zero;
    cfg.attack_count = 1;
    auto rows = cmd_attack(cfg);
    REQUIRE(rows.size() == 4);
    REQUIRE(rows[0].attack == "none");
    REQUIRE(rows[0].honest_avg_acc > 0.0);
    REQUIRE(fs::exists(tmp.path / "atk" / "attack.csv"));

    // malicious count must stay below the client count
    cfg.attack_count = 4;
    REQUIRE_THROWS_AS(cmd_attack(cfg), ConfigError);
}

TEST_CASE("empty malicious set matches cmd_train output") {
    TempDir tmp("amfl_noattack_test");
    auto cfg = tiny_config((tmp.path / "plain").string(), 3);
    auto plain = cmd_train(cfg);
    auto cfg2 = tiny_config((tmp.path / "shams").string(), 3);
    cfg2.attack_enabled = false;
    cfg2.attack_count = 0;
    auto same = cmd_train(cfg2);
    REQUIRE(plain.mean_avg_acc == same.mean_avg_acc);
    REQUIRE(plain.mean_avg_bias == same.mean_avg_bias);
}
