#pragma once

#include "amfl/data.hpp"
#include "amfl/model.hpp"

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace amfl {

/// Fairness budgets: per-client bias cap and the two anti-Matthew
/// deviation caps (loss and bias).
struct Budgets {
    double eps_b = 0.0;
    double eps_vl = 0.0;
    double eps_vb = 0.0;
};

struct HardBiasValue {
    double value = 0.0;
    bool degenerate = false;
};

/// Eq.-style hard bias: population std over eligible groups of the group
/// TPR (TPSD) or group accuracy (APSD). Groups without eligible samples
/// are excluded; fewer than 2 eligible groups gives 0 with the flag set.
inline HardBiasValue hard_bias(const PredictionBatch& preds, const ClientDataset& ds,
                               BiasMetric metric, int group_count = 2) {
    std::vector<double> rates;
    for (int g = 0; g < group_count; ++g) {
        double hits = 0.0;
        int count = 0;
        for (int i = 0; i < ds.size(); ++i) {
            if (ds.a[i] != g) continue;
            if (metric == BiasMetric::TPSD) {
                if (ds.y[i] != 1) continue;
                hits += preds.hard_labels[i] == 1 ? 1.0 : 0.0;
            } else {
                hits += preds.hard_labels[i] == ds.y[i] ? 1.0 : 0.0;
            }
            ++count;
        }
        if (count > 0) rates.push_back(hits / count);
    }
    if (rates.size() < 2) return {0.0, true};
    return {model_detail::rate_std(rates), false};
}

struct ClientReport {
    double loss = 0.0;
    double accuracy = 0.0;
    double bias = 0.0;       // hard metric
    double soft_bias = 0.0;  // differentiable surrogate at temperature 1
};

struct FederationReport {
    std::vector<ClientReport> reports;
    double mean_loss = 0.0;  // l-bar
    double mean_bias = 0.0;  // f-bar (hard)
    std::vector<double> loss_devs;
    std::vector<double> bias_devs;
    double avg_acc = 0.0, std_acc = 0.0;
    double avg_bias = 0.0, std_bias = 0.0;
    double max_bias = 0.0, max_loss_dev = 0.0, max_bias_dev = 0.0;
    int argmax_loss = 0, argmax_bias = 0, argmax_loss_dev = 0, argmax_bias_dev = 0;

    int size() const { return static_cast<int>(reports.size()); }
};

namespace metrics_detail {

inline double pop_std(const std::vector<double>& v) {
    double mu = 0.0;
    for (double x : v) mu += x;
    mu /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mu) * (x - mu);
    return std::sqrt(ss / static_cast<double>(v.size()));
}

inline int argmax_lowest(const std::vector<double>& v) {
    int best = 0;
    for (size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = static_cast<int>(i);
    return best;
}

} // namespace metrics_detail

inline FederationReport aggregate_reports(std::vector<ClientReport> reports) {
    FederationReport r;
    r.reports = std::move(reports);
    const int n = r.size();
    std::vector<double> losses(n), accs(n), biases(n);
    for (int i = 0; i < n; ++i) {
        losses[i] = r.reports[i].loss;
        accs[i] = r.reports[i].accuracy;
        biases[i] = r.reports[i].bias;
    }
    for (int i = 0; i < n; ++i) r.mean_loss += losses[i] / n;
    for (int i = 0; i < n; ++i) r.mean_bias += biases[i] / n;
    r.loss_devs.resize(n);
    r.bias_devs.resize(n);
    for (int i = 0; i < n; ++i) {
        r.loss_devs[i] = std::abs(losses[i] - r.mean_loss);
        r.bias_devs[i] = std::abs(biases[i] - r.mean_bias);
    }
    r.avg_acc = 0.0;
    for (double a : accs) r.avg_acc += a / n;
    r.std_acc = metrics_detail::pop_std(accs);
    r.avg_bias = r.mean_bias;
    r.std_bias = metrics_detail::pop_std(biases);
    r.argmax_loss = metrics_detail::argmax_lowest(losses);
    r.argmax_bias = metrics_detail::argmax_lowest(biases);
    r.argmax_loss_dev = metrics_detail::argmax_lowest(r.loss_devs);
    r.argmax_bias_dev = metrics_detail::argmax_lowest(r.bias_devs);
    r.max_bias = biases[r.argmax_bias];
    r.max_loss_dev = r.loss_devs[r.argmax_loss_dev];
    r.max_bias_dev = r.bias_devs[r.argmax_bias_dev];
    return r;
}

inline ClientReport evaluate_client(const ModelParams& p, const ClientDataset& ds,
                                    BiasMetric metric, int group_count = 2) {
    ClientReport c;
    auto preds = predict(p, ds);
    c.loss = bce_loss(p, ds);
    c.accuracy = (preds.hard_labels.array() == ds.y.array()).cast<double>().mean();
    c.bias = hard_bias(preds, ds, metric, group_count).value;
    c.soft_bias = soft_bias(p, ds, metric, group_count).value;
    return c;
}

/// Report over an explicit client list (the trainer uses this for the
/// training split).
inline FederationReport evaluate_clients(const ModelParams& p, const std::vector<ClientDataset>& clients,
                                         BiasMetric metric, int group_count = 2) {
    std::vector<ClientReport> reports;
    reports.reserve(clients.size());
    for (const auto& c : clients) reports.push_back(evaluate_client(p, c, metric, group_count));
    return aggregate_reports(std::move(reports));
}

/// Test-split evaluation of the federation.
inline FederationReport evaluate(const ModelParams& p, const FederationData& fed, BiasMetric metric) {
    return evaluate_clients(p, fed.test_clients, metric, fed.group_count);
}

enum class BudgetStatus { Satisfied, Near, Violated };

inline const char* to_string(BudgetStatus s) {
    switch (s) {
        case BudgetStatus::Satisfied: return "satisfied";
        case BudgetStatus::Near: return "near";
        default: return "violated";
    }
}

/// Near means within the 10% violation band used by the result tables.
inline BudgetStatus check_against(double value, double budget) {
    if (value <= budget) return BudgetStatus::Satisfied;
    if (value <= 1.1 * budget) return BudgetStatus::Near;
    return BudgetStatus::Violated;
}

struct BudgetCheck {
    BudgetStatus bias;      // max_k f_k vs eps_b
    BudgetStatus loss_dev;  // max_k |l_k - lbar| vs eps_vl
    BudgetStatus bias_dev;  // max_k |f_k - fbar| vs eps_vb
};

inline BudgetCheck budget_check(const FederationReport& r, const Budgets& b) {
    return {check_against(r.max_bias, b.eps_b),
            check_against(r.max_loss_dev, b.eps_vl),
            check_against(r.max_bias_dev, b.eps_vb)};
}

} // namespace amfl
