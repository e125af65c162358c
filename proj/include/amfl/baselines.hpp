#pragma once

#include "amfl/trainer.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace amfl {

namespace baselines_detail {

inline TrainResult run_fixed_weight_descent(
    const FederationData& fed, const StagePlan& plan, BiasMetric metric, std::uint64_t seed,
    const std::string& branch,
    const std::function<Eigen::VectorXd(const ModelParams&, int round)>& update_gradient) {
    plan.validate();
    fed.validate();
    TrainResult result;
    ModelParams params = init_params(plan.arch, fed.feature_dim, seed, plan.hidden_units);
    const int total = plan.total_rounds();
    for (int round = 0; round < total; ++round) {
        Eigen::VectorXd g = update_gradient(params, round);
        params = params.with_step(-plan.eta * g);
        RoundLog log;
        log.round = round;
        log.stage = 0;
        log.branch = branch;
        log.eta = plan.eta;
        log.accepted = true;
        log.train_report = evaluate_clients(params, fed.clients, metric, fed.group_count);
        if (plan.log_every > 0 && (round % plan.log_every == 0 || round + 1 == total))
            log.test_report = evaluate(params, fed, metric);
        result.logs.push_back(std::move(log));
    }
    result.params = params;
    result.final_test = evaluate(params, fed, metric);
    return result;
}

} // namespace baselines_detail

/// Plain federated averaging: dataset-size-weighted mean gradient step each
/// round (uniform weights when size_weighted is off).
inline TrainResult fedavg_train(const FederationData& fed, const StagePlan& plan, BiasMetric metric,
                                std::uint64_t seed, bool size_weighted = true) {
    std::vector<double> w(fed.clients.size());
    double total_size = 0.0;
    for (const auto& c : fed.clients) total_size += c.size();
    for (size_t i = 0; i < fed.clients.size(); ++i)
        w[i] = size_weighted ? fed.clients[i].size() / total_size : 1.0 / fed.clients.size();
    return baselines_detail::run_fixed_weight_descent(
        fed, plan, metric, seed, "fedavg", [&](const ModelParams& p, int) {
            Eigen::VectorXd g = Eigen::VectorXd::Zero(p.dim());
            for (size_t i = 0; i < fed.clients.size(); ++i)
                g += w[i] * loss_gradient(p, fed.clients[i]);
            return g;
        });
}

/// q-FFL style reweighting: client weights proportional to l_k^q, so q = 0
/// recovers uniform weighting and large q concentrates on the worst client.
inline TrainResult qffl_train(const FederationData& fed, const StagePlan& plan, BiasMetric metric,
                              double q, std::uint64_t seed) {
    if (q < 0) throw std::invalid_argument("qffl_train: q must be >= 0");
    return baselines_detail::run_fixed_weight_descent(
        fed, plan, metric, seed, "qffl", [&, q](const ModelParams& p, int) {
            std::vector<double> w(fed.clients.size());
            double norm = 0.0;
            for (size_t i = 0; i < fed.clients.size(); ++i) {
                w[i] = std::pow(bce_loss(p, fed.clients[i]), q);
                norm += w[i];
            }
            Eigen::VectorXd g = Eigen::VectorXd::Zero(p.dim());
            for (size_t i = 0; i < fed.clients.size(); ++i)
                g += (w[i] / norm) * loss_gradient(p, fed.clients[i]);
            return g;
        });
}

/// FedAvg plus a linear fairness regularizer: descends
/// lbar + lambda * mean_k soft_bias_k using the plain (temperature 1)
/// surrogate gradients.
inline TrainResult fairreg_train(const FederationData& fed, const StagePlan& plan, BiasMetric metric,
                                 double lambda, std::uint64_t seed) {
    if (lambda < 0) throw std::invalid_argument("fairreg_train: lambda must be >= 0");
    const double n = static_cast<double>(fed.clients.size());
    return baselines_detail::run_fixed_weight_descent(
        fed, plan, metric, seed, "fairreg", [&, lambda, n](const ModelParams& p, int) {
            Eigen::VectorXd g = Eigen::VectorXd::Zero(p.dim());
            for (const auto& c : fed.clients) {
                g += loss_gradient(p, c) / n;
                if (lambda > 0)
                    g += (lambda / n) * soft_bias_gradient(p, c, metric, fed.group_count).first;
            }
            return g;
        });
}

} // namespace amfl
