#pragma once

#include "amfl/attacks.hpp"
#include "amfl/baselines.hpp"
#include "amfl/csv.hpp"
#include "amfl/svg.hpp"
#include "amfl/trainer.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace amfl {

/// Invalid configuration; the CLI maps it to exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    // dataset
    std::string dataset_kind = "synthetic";   // synthetic | csv
    int n_samples = 10000;
    std::uint64_t data_seed = 1;
    int synthetic_clients = 2;                // 2 = the x1 <= -0.5 split; >2 = quantile bins
    std::string train_csv, test_csv;
    CsvColumns csv_columns;
    int min_client_size = 0;

    // method
    std::string method = "anti-matthew";      // anti-matthew | fedavg | qffl | fairreg
    BiasMetric metric = BiasMetric::TPSD;
    Budgets budgets;
    bool budgets_set = false;
    StagePlan plan;
    double qffl_q = 1.0;
    double fairreg_lambda = 1.0;
    bool fedavg_size_weighted = true;

    // attack
    AttackSpec attack;
    bool attack_enabled = false;
    int attack_count = 0;                     // draw this many malicious ids from attack.seed

    // harness
    std::string output_dir;
    int repeats = 1;
    std::uint64_t train_seed = 1;

    void validate() const {
        if (dataset_kind != "synthetic" && dataset_kind != "csv")
            throw ConfigError("dataset.kind must be synthetic or csv");
        if (method != "anti-matthew" && method != "fedavg" && method != "qffl" && method != "fairreg")
            throw ConfigError("unknown method: " + method);
        if (method == "anti-matthew" && !budgets_set)
            throw ConfigError("method anti-matthew requires budgets (budgets.eps_b/eps_vl/eps_vb)");
        if (repeats < 1) throw ConfigError("repeats must be >= 1");
        if (dataset_kind == "synthetic" && n_samples < 100)
            throw ConfigError("dataset.n must be >= 100");
        if (dataset_kind == "csv" && train_csv.empty())
            throw ConfigError("dataset.train_csv required for csv datasets");
    }
};

namespace exp_detail {

inline std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    auto e = s.find_last_not_of(" \t\r\n");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, sep))
        if (!trim(part).empty()) out.push_back(trim(part));
    return out;
}

inline bool parse_bool(const std::string& v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ConfigError("not a boolean: " + v);
}

} // namespace exp_detail

/// Applies one flat "section.key=value" setting.
inline void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    using exp_detail::parse_bool;
    try {
        if (key == "dataset.kind") cfg.dataset_kind = value;
        else if (key == "dataset.n") cfg.n_samples = std::stoi(value);
        else if (key == "dataset.seed") cfg.data_seed = std::stoull(value);
        else if (key == "dataset.clients") cfg.synthetic_clients = std::stoi(value);
        else if (key == "dataset.train_csv") cfg.train_csv = value;
        else if (key == "dataset.test_csv") cfg.test_csv = value;
        else if (key == "dataset.features") cfg.csv_columns.features = exp_detail::split(value, ';');
        else if (key == "dataset.protected") cfg.csv_columns.protected_attr = value;
        else if (key == "dataset.label") cfg.csv_columns.label = value;
        else if (key == "dataset.client") cfg.csv_columns.client = value;
        else if (key == "dataset.standardize") cfg.csv_columns.standardize = parse_bool(value);
        else if (key == "dataset.min_client_size") cfg.min_client_size = std::stoi(value);
        else if (key == "method") cfg.method = value;
        else if (key == "metric") {
            if (value == "tpsd") cfg.metric = BiasMetric::TPSD;
            else if (value == "apsd") cfg.metric = BiasMetric::APSD;
            else throw ConfigError("metric must be tpsd or apsd");
        }
        else if (key == "budgets.eps_b") { cfg.budgets.eps_b = std::stod(value); cfg.budgets_set = true; }
        else if (key == "budgets.eps_vl") { cfg.budgets.eps_vl = std::stod(value); cfg.budgets_set = true; }
        else if (key == "budgets.eps_vb") { cfg.budgets.eps_vb = std::stod(value); cfg.budgets_set = true; }
        else if (key == "plan.rounds1") cfg.plan.rounds_stage1 = std::stoi(value);
        else if (key == "plan.rounds2") cfg.plan.rounds_stage2 = std::stoi(value);
        else if (key == "plan.rounds3") cfg.plan.rounds_stage3 = std::stoi(value);
        else if (key == "plan.eta") cfg.plan.eta = std::stod(value);
        else if (key == "plan.shrink") cfg.plan.shrink = std::stod(value);
        else if (key == "plan.max_halvings") cfg.plan.max_halvings = std::stoi(value);
        else if (key == "plan.normalize") cfg.plan.normalize_gradients = parse_bool(value);
        else if (key == "plan.temperature") cfg.plan.temperature = std::stod(value);
        else if (key == "plan.soft_floor") cfg.plan.soft_floor = std::stod(value);
        else if (key == "plan.guard_base") cfg.plan.guard_base = std::stod(value);
        else if (key == "plan.guard_curvature") cfg.plan.guard_curvature = std::stod(value);
        else if (key == "plan.log_every") cfg.plan.log_every = std::stoi(value);
        else if (key == "model.arch") {
            if (value == "linear") cfg.plan.arch = Architecture::Linear;
            else if (value == "one-hidden") cfg.plan.arch = Architecture::OneHidden;
            else throw ConfigError("model.arch must be linear or one-hidden");
        }
        else if (key == "model.hidden") cfg.plan.hidden_units = std::stoi(value);
        else if (key == "qffl.q") cfg.qffl_q = std::stod(value);
        else if (key == "fairreg.lambda") cfg.fairreg_lambda = std::stod(value);
        else if (key == "fedavg.size_weighted") cfg.fedavg_size_weighted = parse_bool(value);
        else if (key == "attack.kind") {
            if (value == "none") cfg.attack_enabled = false;
            else {
                cfg.attack_enabled = true;
                if (value == "enlarge") cfg.attack.kind = AttackKind::Enlarge;
                else if (value == "random") cfg.attack.kind = AttackKind::Random;
                else if (value == "zero") cfg.attack.kind = AttackKind::Zero;
                else throw ConfigError("attack.kind must be none|enlarge|random|zero");
            }
        }
        else if (key == "attack.factor") cfg.attack.factor = std::stod(value);
        else if (key == "attack.malicious") {
            cfg.attack.malicious_ids.clear();
            for (const auto& tok : exp_detail::split(value, ';'))
                cfg.attack.malicious_ids.insert(std::stoi(tok));
        }
        else if (key == "attack.count") cfg.attack_count = std::stoi(value);
        else if (key == "attack.seed") cfg.attack.seed = std::stoull(value);
        else if (key == "output.dir") cfg.output_dir = value;
        else if (key == "repeats") cfg.repeats = std::stoi(value);
        else if (key == "seed") cfg.train_seed = std::stoull(value);
        else throw ConfigError("unknown config key: " + key);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("bad value for " + key + ": '" + value + "'");
    }
}

inline void load_config_file(ExperimentConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto t = exp_detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + " is not key=value");
        apply_setting(cfg, exp_detail::trim(t.substr(0, eq)), exp_detail::trim(t.substr(eq + 1)));
    }
}

/// Full echo of the effective configuration; reloading it reproduces the run.
inline void write_config_echo(const ExperimentConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    out.precision(17);
    out << "dataset.kind=" << cfg.dataset_kind << "\n";
    out << "dataset.n=" << cfg.n_samples << "\n";
    out << "dataset.seed=" << cfg.data_seed << "\n";
    out << "dataset.clients=" << cfg.synthetic_clients << "\n";
    if (!cfg.train_csv.empty()) out << "dataset.train_csv=" << cfg.train_csv << "\n";
    if (!cfg.test_csv.empty()) out << "dataset.test_csv=" << cfg.test_csv << "\n";
    if (!cfg.csv_columns.features.empty()) {
        out << "dataset.features=";
        for (size_t i = 0; i < cfg.csv_columns.features.size(); ++i)
            out << (i ? ";" : "") << cfg.csv_columns.features[i];
        out << "\n";
        out << "dataset.protected=" << cfg.csv_columns.protected_attr << "\n";
        out << "dataset.label=" << cfg.csv_columns.label << "\n";
        out << "dataset.client=" << cfg.csv_columns.client << "\n";
        out << "dataset.standardize=" << (cfg.csv_columns.standardize ? 1 : 0) << "\n";
    }
    if (cfg.min_client_size > 0) out << "dataset.min_client_size=" << cfg.min_client_size << "\n";
    out << "method=" << cfg.method << "\n";
    out << "metric=" << to_string(cfg.metric) << "\n";
    if (cfg.budgets_set) {
        out << "budgets.eps_b=" << cfg.budgets.eps_b << "\n";
        out << "budgets.eps_vl=" << cfg.budgets.eps_vl << "\n";
        out << "budgets.eps_vb=" << cfg.budgets.eps_vb << "\n";
    }
    out << "plan.rounds1=" << cfg.plan.rounds_stage1 << "\n";
    out << "plan.rounds2=" << cfg.plan.rounds_stage2 << "\n";
    out << "plan.rounds3=" << cfg.plan.rounds_stage3 << "\n";
    out << "plan.eta=" << cfg.plan.eta << "\n";
    out << "plan.shrink=" << cfg.plan.shrink << "\n";
    out << "plan.max_halvings=" << cfg.plan.max_halvings << "\n";
    out << "plan.normalize=" << (cfg.plan.normalize_gradients ? 1 : 0) << "\n";
    out << "plan.temperature=" << cfg.plan.temperature << "\n";
    out << "plan.soft_floor=" << cfg.plan.soft_floor << "\n";
    out << "plan.guard_base=" << cfg.plan.guard_base << "\n";
    out << "plan.guard_curvature=" << cfg.plan.guard_curvature << "\n";
    out << "plan.log_every=" << cfg.plan.log_every << "\n";
    out << "model.arch=" << (cfg.plan.arch == Architecture::Linear ? "linear" : "one-hidden") << "\n";
    out << "model.hidden=" << cfg.plan.hidden_units << "\n";
    out << "qffl.q=" << cfg.qffl_q << "\n";
    out << "fairreg.lambda=" << cfg.fairreg_lambda << "\n";
    out << "fedavg.size_weighted=" << (cfg.fedavg_size_weighted ? 1 : 0) << "\n";
    out << "attack.kind=" << (cfg.attack_enabled ? to_string(cfg.attack.kind) : "none") << "\n";
    if (cfg.attack_enabled) {
        out << "attack.factor=" << cfg.attack.factor << "\n";
        if (!cfg.attack.malicious_ids.empty()) {
            out << "attack.malicious=";
            bool first = true;
            for (int id : cfg.attack.malicious_ids) {
                out << (first ? "" : ";") << id;
                first = false;
            }
            out << "\n";
        }
        out << "attack.count=" << cfg.attack_count << "\n";
        out << "attack.seed=" << cfg.attack.seed << "\n";
    }
    if (!cfg.output_dir.empty()) out << "output.dir=" << cfg.output_dir << "\n";
    out << "repeats=" << cfg.repeats << "\n";
    out << "seed=" << cfg.train_seed << "\n";
}

inline std::string default_output_root() {
    if (const char* env = std::getenv("AMFL_OUTPUT_ROOT")) return env;
    return "runs";
}

inline FederationData build_federation(const ExperimentConfig& cfg) {
    FederationData fed;
    if (cfg.dataset_kind == "synthetic") {
        fed = cfg.synthetic_clients == 2
                  ? generate_synthetic(cfg.n_samples, cfg.data_seed)
                  : generate_synthetic_clients(cfg.n_samples, cfg.data_seed, cfg.synthetic_clients);
    } else {
        if (cfg.csv_columns.features.empty() || cfg.csv_columns.label.empty() ||
            cfg.csv_columns.protected_attr.empty() || cfg.csv_columns.client.empty())
            throw ConfigError("csv datasets need dataset.features/protected/label/client");
        fed = cfg.test_csv.empty() ? load_csv(cfg.train_csv, cfg.csv_columns, cfg.data_seed)
                                   : load_csv_pair(cfg.train_csv, cfg.test_csv, cfg.csv_columns);
    }
    if (cfg.min_client_size > 0) fed = filter_min_size(fed, cfg.min_client_size);
    return fed;
}

inline AttackSpec resolve_attack(const ExperimentConfig& cfg, int num_clients) {
    AttackSpec spec = cfg.attack;
    if (spec.malicious_ids.empty() && cfg.attack_count > 0) {
        if (cfg.attack_count >= num_clients)
            throw ConfigError("attack.count must be smaller than the client count");
        auto rng = detail::seeded_rng(spec.seed, 0x5e1ec7ULL);
        std::vector<int> ids(num_clients);
        std::iota(ids.begin(), ids.end(), 0);
        std::shuffle(ids.begin(), ids.end(), rng);
        spec.malicious_ids.insert(ids.begin(), ids.begin() + cfg.attack_count);
    }
    if (static_cast<int>(spec.malicious_ids.size()) >= num_clients)
        throw ConfigError("malicious clients must be fewer than the client count");
    return spec;
}

// ---------------------------------------------------------------------------
// Run output files

namespace exp_detail {

inline void write_report_csv(std::ostream& out, const FederationReport& r) {
    out << "client,loss,accuracy,bias,soft_bias,loss_dev,bias_dev\n";
    out.precision(10);
    for (int i = 0; i < r.size(); ++i) {
        const auto& c = r.reports[i];
        out << i << ',' << c.loss << ',' << c.accuracy << ',' << c.bias << ',' << c.soft_bias << ','
            << r.loss_devs[i] << ',' << r.bias_devs[i] << "\n";
    }
    out << "aggregate," << r.mean_loss << ',' << r.avg_acc << ',' << r.avg_bias << ",,"
        << r.max_loss_dev << ',' << r.max_bias_dev << "\n";
    out << "std,," << r.std_acc << ',' << r.std_bias << ",,,\n";
    out << "max,,," << r.max_bias << ",,,\n";
}

inline void write_report_file(const std::string& path, const FederationReport& r) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    write_report_csv(out, r);
}

inline void write_rounds_csv(const std::string& path, const std::vector<RoundLog>& logs) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.precision(10);
    const int n = logs.empty() ? 0 : logs.front().train_report.size();
    out << "round,stage,branch,eta,avg_loss,avg_acc,std_acc,avg_bias,std_bias,max_bias,"
           "max_loss_dev,max_bias_dev,active_constraints";
    for (int i = 0; i < n; ++i) out << ",loss_" << i << ",acc_" << i << ",bias_" << i;
    out << ",test_avg_loss,test_avg_acc,test_std_acc,test_avg_bias,test_std_bias\n";
    for (const auto& log : logs) {
        const auto& r = log.train_report;
        out << log.round << ',' << log.stage << ',' << log.branch << ',' << log.eta << ','
            << r.mean_loss << ',' << r.avg_acc << ',' << r.std_acc << ',' << r.avg_bias << ','
            << r.std_bias << ',' << r.max_bias << ',' << r.max_loss_dev << ',' << r.max_bias_dev << ',';
        for (size_t i = 0; i < log.active_constraints.size(); ++i)
            out << (i ? "|" : "") << log.active_constraints[i];
        for (int i = 0; i < n; ++i)
            out << ',' << r.reports[i].loss << ',' << r.reports[i].accuracy << ','
                << r.reports[i].bias;
        if (log.test_report) {
            const auto& t = *log.test_report;
            out << ',' << t.mean_loss << ',' << t.avg_acc << ',' << t.std_acc << ',' << t.avg_bias
                << ',' << t.std_bias;
        } else {
            out << ",,,,,";
        }
        out << "\n";
    }
}

inline void write_rounds_chart(const std::string& path, const std::vector<RoundLog>& logs,
                               const Budgets& eps, bool budgets_set) {
    ChartSeries acc{"test avg acc", {}, {}}, bias{"test avg bias", {}, {}},
        sacc{"test std acc", {}, {}}, sbias{"test std bias", {}, {}};
    for (const auto& log : logs) {
        if (!log.test_report) continue;
        acc.x.push_back(log.round);
        acc.y.push_back(log.test_report->avg_acc);
        bias.x.push_back(log.round);
        bias.y.push_back(log.test_report->avg_bias);
        sacc.x.push_back(log.round);
        sacc.y.push_back(log.test_report->std_acc);
        sbias.x.push_back(log.round);
        sbias.y.push_back(log.test_report->std_bias);
    }
    std::vector<std::pair<std::string, double>> hl;
    if (budgets_set) {
        hl.push_back({"eps_b", eps.eps_b});
        hl.push_back({"eps_vl", eps.eps_vl});
        hl.push_back({"eps_vb", eps.eps_vb});
    }
    write_line_chart(path, "testing metrics by round", "round", "value",
                     {acc, bias, sacc, sbias}, hl);
}

} // namespace exp_detail

struct RunOutcome {
    FederationReport test_report;
    FederationReport train_report;
    std::vector<RoundLog> logs;
    StageSnapshot snapshot;
    ModelParams params;
};

/// Trains one configuration once and writes the run directory:
/// config echo, rounds.csv, rounds.svg, final_report.csv (test split),
/// final checkpoint plus stage-boundary checkpoints.
inline RunOutcome run_single(const ExperimentConfig& cfg, std::uint64_t seed,
                             const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_config_echo(cfg, (dir / "config.txt").string());
    FederationData fed = build_federation(cfg);

    RunOutcome out;
    if (cfg.method == "anti-matthew") {
        Corruptor corruptor;
        if (cfg.attack_enabled) corruptor = make_corruptor(resolve_attack(cfg, fed.num_clients()));
        auto res = train(fed, cfg.budgets, cfg.plan, cfg.metric, seed, corruptor);
        out.logs = std::move(res.logs);
        out.params = res.params;
        out.snapshot = res.snapshot;
        out.test_report = res.final_test;
        if (res.params_stage1_end)
            save_checkpoint(*res.params_stage1_end, (dir / "stage1.ckpt").string());
        if (res.params_stage2_end)
            save_checkpoint(*res.params_stage2_end, (dir / "stage2.ckpt").string());
    } else {
        if (cfg.attack_enabled)
            throw ConfigError("attacks are driven through the attack subcommand for baselines");
        TrainResult res;
        if (cfg.method == "fedavg")
            res = fedavg_train(fed, cfg.plan, cfg.metric, seed, cfg.fedavg_size_weighted);
        else if (cfg.method == "qffl")
            res = qffl_train(fed, cfg.plan, cfg.metric, cfg.qffl_q, seed);
        else
            res = fairreg_train(fed, cfg.plan, cfg.metric, cfg.fairreg_lambda, seed);
        out.logs = std::move(res.logs);
        out.params = res.params;
        out.test_report = res.final_test;
    }
    out.train_report = evaluate_clients(out.params, fed.clients, cfg.metric, fed.group_count);
    exp_detail::write_rounds_csv((dir / "rounds.csv").string(), out.logs);
    exp_detail::write_rounds_chart((dir / "rounds.svg").string(), out.logs, cfg.budgets,
                                   cfg.budgets_set);
    exp_detail::write_report_file((dir / "final_report.csv").string(), out.test_report);
    save_checkpoint(out.params, (dir / "model.ckpt").string());
    return out;
}

struct RepeatSummary {
    std::vector<FederationReport> reports;
    double mean_avg_acc = 0, mean_std_acc = 0, mean_avg_bias = 0, mean_std_bias = 0;
    double mean_max_bias = 0, mean_max_loss_dev = 0, mean_max_bias_dev = 0;
};

inline RepeatSummary summarize(const std::vector<FederationReport>& reports) {
    RepeatSummary s;
    s.reports = reports;
    const double n = static_cast<double>(reports.size());
    for (const auto& r : reports) {
        s.mean_avg_acc += r.avg_acc / n;
        s.mean_std_acc += r.std_acc / n;
        s.mean_avg_bias += r.avg_bias / n;
        s.mean_std_bias += r.std_bias / n;
        s.mean_max_bias += r.max_bias / n;
        s.mean_max_loss_dev += r.max_loss_dev / n;
        s.mean_max_bias_dev += r.max_bias_dev / n;
    }
    return s;
}

/// Runs cfg.repeats trainings (seeds seed, seed+1, ...), each in its own
/// run_NN directory, plus a mean/std summary table.
inline RepeatSummary cmd_train(const ExperimentConfig& cfg) {
    cfg.validate();
    std::filesystem::path root = cfg.output_dir.empty()
                                     ? std::filesystem::path(default_output_root()) / "train"
                                     : std::filesystem::path(cfg.output_dir);
    std::filesystem::create_directories(root);
    write_config_echo(cfg, (root / "config.txt").string());
    std::vector<FederationReport> reports;
    for (int rep = 0; rep < cfg.repeats; ++rep) {
        char name[32];
        std::snprintf(name, sizeof name, "run_%02d", rep);
        ExperimentConfig one = cfg;
        one.data_seed = cfg.data_seed + static_cast<std::uint64_t>(rep);
        auto outcome = run_single(one, cfg.train_seed + static_cast<std::uint64_t>(rep),
                                  cfg.repeats == 1 ? root : root / name);
        reports.push_back(outcome.test_report);
    }
    auto s = summarize(reports);
    std::ofstream out(root / "summary.csv");
    out.precision(10);
    out << "run,avg_acc,std_acc,avg_bias,std_bias,max_bias,max_loss_dev,max_bias_dev\n";
    for (size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        out << i << ',' << r.avg_acc << ',' << r.std_acc << ',' << r.avg_bias << ',' << r.std_bias
            << ',' << r.max_bias << ',' << r.max_loss_dev << ',' << r.max_bias_dev << "\n";
    }
    out << "mean," << s.mean_avg_acc << ',' << s.mean_std_acc << ',' << s.mean_avg_bias << ','
        << s.mean_std_bias << ',' << s.mean_max_bias << ',' << s.mean_max_loss_dev << ','
        << s.mean_max_bias_dev << "\n";
    return s;
}

/// Writes the synthetic federation as train/test CSV files.
inline void cmd_generate(const ExperimentConfig& cfg) {
    if (cfg.dataset_kind != "synthetic") throw ConfigError("generate only supports synthetic datasets");
    if (cfg.n_samples <= 0) throw ConfigError("dataset.n must be positive");
    cfg.validate();
    std::filesystem::path root = cfg.output_dir.empty()
                                     ? std::filesystem::path(default_output_root()) / "data"
                                     : std::filesystem::path(cfg.output_dir);
    std::filesystem::create_directories(root);
    FederationData fed = build_federation(cfg);
    save_clients_csv((root / "train.csv").string(), fed.clients);
    save_clients_csv((root / "test.csv").string(), fed.test_clients);
    write_config_echo(cfg, (root / "config.txt").string());
}

/// Evaluates a checkpoint on the configured dataset's test split.
inline FederationReport cmd_evaluate(const ExperimentConfig& cfg, const std::string& model_path,
                                     const std::string& out_path = "") {
    FederationData fed = build_federation(cfg);
    ModelParams params = load_checkpoint(model_path);
    auto report = evaluate(params, fed, cfg.metric);
    if (!out_path.empty()) exp_detail::write_report_file(out_path, report);
    return report;
}

/// Half of x rounded to one significant figure (the budget derivation rule).
inline double round_one_sig_fig(double x) {
    if (x <= 0) return 0.0;
    const double p = std::floor(std::log10(x));
    double scale = std::pow(10.0, p);
    double m = std::round(x / scale);
    if (m >= 10.0) {
        m = 1.0;
        scale *= 10.0;
    }
    return m * scale;
}

struct DerivedBudgets {
    Budgets budgets;
    bool degenerate = false;   // some budget collapsed to zero
};

inline DerivedBudgets budgets_from_report(double avg_bias, double std_acc, double std_bias) {
    DerivedBudgets d;
    d.budgets.eps_b = round_one_sig_fig(0.5 * avg_bias);
    d.budgets.eps_vl = round_one_sig_fig(0.5 * std_acc);
    d.budgets.eps_vb = round_one_sig_fig(0.5 * std_bias);
    d.degenerate = d.budgets.eps_b == 0 || d.budgets.eps_vl == 0 || d.budgets.eps_vb == 0;
    return d;
}

/// Reads a completed run directory's final_report.csv and derives budgets
/// as half the FedAvg performance, rounded to one significant figure.
inline DerivedBudgets cmd_budget_from_fedavg(const std::string& run_dir) {
    std::filesystem::path path = std::filesystem::path(run_dir) / "final_report.csv";
    std::ifstream in(path);
    if (!in) throw ConfigError("no final_report.csv under " + run_dir);
    std::string line;
    double avg_bias = -1, std_acc = -1, std_bias = -1;
    while (std::getline(in, line)) {
        auto cells = csv_detail::split_line(line);
        if (cells.empty()) continue;
        if (cells[0] == "aggregate" && cells.size() >= 4) avg_bias = std::stod(cells[3]);
        if (cells[0] == "std" && cells.size() >= 4) {
            std_acc = std::stod(cells[2]);
            std_bias = std::stod(cells[3]);
        }
    }
    if (avg_bias < 0 || std_acc < 0) throw ConfigError("final_report.csv missing aggregate rows");
    return budgets_from_report(avg_bias, std_acc, std_bias);
}

struct SweepRow {
    double value = 0;
    RepeatSummary summary;
};

/// Trains once per budget value and tabulates the achieved metrics; one SVG
/// panel per swept parameter.
inline std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg, const std::string& parameter,
                                       const std::vector<double>& values) {
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    if (parameter != "eps_b" && parameter != "eps_vl" && parameter != "eps_vb")
        throw ConfigError("sweep parameter must be one of eps_b|eps_vl|eps_vb");
    cfg.validate();
    std::filesystem::path root = cfg.output_dir.empty()
                                     ? std::filesystem::path(default_output_root()) / "sweep"
                                     : std::filesystem::path(cfg.output_dir);
    std::filesystem::create_directories(root);
    std::vector<SweepRow> rows;
    for (size_t i = 0; i < values.size(); ++i) {
        ExperimentConfig one = cfg;
        one.output_dir = (root / (parameter + "_" + std::to_string(i))).string();
        if (parameter == "eps_b") one.budgets.eps_b = values[i];
        else if (parameter == "eps_vl") one.budgets.eps_vl = values[i];
        else one.budgets.eps_vb = values[i];
        one.budgets_set = true;
        rows.push_back({values[i], cmd_train(one)});
    }
    std::ofstream out(root / ("sweep_" + parameter + ".csv"));
    out.precision(10);
    out << parameter << ",avg_acc,std_acc,avg_bias,std_bias\n";
    for (const auto& r : rows)
        out << r.value << ',' << r.summary.mean_avg_acc << ',' << r.summary.mean_std_acc << ','
            << r.summary.mean_avg_bias << ',' << r.summary.mean_std_bias << "\n";
    ChartSeries focus;
    focus.name = parameter == "eps_b" ? "avg bias" : parameter == "eps_vl" ? "std acc" : "std bias";
    for (const auto& r : rows) {
        focus.x.push_back(r.value);
        focus.y.push_back(parameter == "eps_b" ? r.summary.mean_avg_bias
                          : parameter == "eps_vl" ? r.summary.mean_std_acc
                                                  : r.summary.mean_std_bias);
    }
    write_line_chart((root / ("sweep_" + parameter + ".svg")).string(),
                     "budget sensitivity: " + parameter, parameter, focus.name, {focus});
    return rows;
}

struct AblationRow {
    std::string variant;
    RepeatSummary summary;
    BudgetCheck check;                 // max-based constraint statuses
    BudgetStatus table_std_acc;        // table-style statuses
    BudgetStatus table_avg_bias;
    BudgetStatus table_std_bias;
};

/// Stage ablation: each single stage gets the full round budget, then the
/// complete three-stage pipeline.
inline std::vector<AblationRow> cmd_ablation(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.method != "anti-matthew") throw ConfigError("ablation applies to method anti-matthew");
    std::filesystem::path root = cfg.output_dir.empty()
                                     ? std::filesystem::path(default_output_root()) / "ablation"
                                     : std::filesystem::path(cfg.output_dir);
    std::filesystem::create_directories(root);
    const int total = cfg.plan.total_rounds();
    struct Variant {
        std::string name;
        int r1, r2, r3;
    };
    const std::vector<Variant> variants = {
        {"stage1", total, 0, 0},
        {"stage2", 0, total, 0},
        {"stage3", 0, 0, total},
        {"stage1+stage2+stage3", cfg.plan.rounds_stage1, cfg.plan.rounds_stage2, cfg.plan.rounds_stage3},
    };
    std::vector<AblationRow> rows;
    for (const auto& v : variants) {
        ExperimentConfig one = cfg;
        one.plan.rounds_stage1 = v.r1;
        one.plan.rounds_stage2 = v.r2;
        one.plan.rounds_stage3 = v.r3;
        one.output_dir = (root / v.name).string();
        AblationRow row;
        row.variant = v.name;
        row.summary = cmd_train(one);
        row.check.bias = check_against(row.summary.mean_max_bias, cfg.budgets.eps_b);
        row.check.loss_dev = check_against(row.summary.mean_max_loss_dev, cfg.budgets.eps_vl);
        row.check.bias_dev = check_against(row.summary.mean_max_bias_dev, cfg.budgets.eps_vb);
        row.table_std_acc = check_against(row.summary.mean_std_acc, cfg.budgets.eps_vl);
        row.table_avg_bias = check_against(row.summary.mean_avg_bias, cfg.budgets.eps_b);
        row.table_std_bias = check_against(row.summary.mean_std_bias, cfg.budgets.eps_vb);
        rows.push_back(std::move(row));
    }
    std::ofstream out(root / "ablation.csv");
    out.precision(10);
    out << "variant,avg_acc,std_acc,avg_bias,std_bias,status_std_acc,status_avg_bias,"
           "status_std_bias,status_max_bias,status_max_loss_dev,status_max_bias_dev\n";
    for (const auto& r : rows)
        out << r.variant << ',' << r.summary.mean_avg_acc << ',' << r.summary.mean_std_acc << ','
            << r.summary.mean_avg_bias << ',' << r.summary.mean_std_bias << ','
            << to_string(r.table_std_acc) << ',' << to_string(r.table_avg_bias) << ','
            << to_string(r.table_std_bias) << ',' << to_string(r.check.bias) << ','
            << to_string(r.check.loss_dev) << ',' << to_string(r.check.bias_dev) << "\n";
    return rows;
}

struct AttackRow {
    std::string attack;
    RepeatSummary summary;
    double honest_avg_acc = 0;
};

/// Robustness table: attack-free run plus each attack kind, reporting
/// overall and honest-client accuracy.
inline std::vector<AttackRow> cmd_attack(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.method != "anti-matthew") throw ConfigError("attack experiments drive method anti-matthew");
    std::filesystem::path root = cfg.output_dir.empty()
                                     ? std::filesystem::path(default_output_root()) / "attack"
                                     : std::filesystem::path(cfg.output_dir);
    std::filesystem::create_directories(root);
    FederationData fed = build_federation(cfg);
    AttackSpec spec = resolve_attack(cfg, fed.num_clients());
    if (spec.malicious_ids.empty()) throw ConfigError("attack experiments need malicious clients");

    auto honest_mean = [&](const FederationReport& r) {
        double acc = 0;
        int n = 0;
        for (int i = 0; i < r.size(); ++i) {
            if (spec.malicious_ids.count(i)) continue;
            acc += r.reports[i].accuracy;
            ++n;
        }
        return n ? acc / n : 0.0;
    };

    std::vector<AttackRow> rows;
    const std::vector<std::pair<std::string, std::optional<AttackKind>>> kinds = {
        {"none", std::nullopt},
        {"enlarge", AttackKind::Enlarge},
        {"random", AttackKind::Random},
        {"zero", AttackKind::Zero},
    };
    for (const auto& [name, kind] : kinds) {
        ExperimentConfig one = cfg;
        one.output_dir = (root / name).string();
        one.attack_enabled = kind.has_value();
        if (kind) {
            one.attack = spec;
            one.attack.kind = *kind;
        }
        AttackRow row;
        row.attack = name;
        row.summary = cmd_train(one);
        double h = 0;
        for (const auto& r : row.summary.reports) h += honest_mean(r) / row.summary.reports.size();
        row.honest_avg_acc = h;
        rows.push_back(std::move(row));
    }
    std::ofstream out(root / "attack.csv");
    out.precision(10);
    out << "attack,avg_acc,std_acc,avg_bias,std_bias,honest_avg_acc\n";
    for (const auto& r : rows)
        out << r.attack << ',' << r.summary.mean_avg_acc << ',' << r.summary.mean_std_acc << ','
            << r.summary.mean_avg_bias << ',' << r.summary.mean_std_bias << ',' << r.honest_avg_acc
            << "\n";
    return rows;
}

} // namespace amfl
