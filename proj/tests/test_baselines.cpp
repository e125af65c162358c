#include "amfl/baselines.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace amfl;

namespace {

StagePlan quick_plan(int rounds) {
    StagePlan plan;
    plan.rounds_stage1 = rounds;
    plan.rounds_stage2 = 0;
    plan.rounds_stage3 = 0;
    plan.log_every = 0;
    return plan;
}

FederationData equal_size_fed() {
    auto fed = generate_synthetic(800, 21);
    const int n = std::min(fed.clients[0].size(), fed.clients[1].size());
    for (auto* side : {&fed.clients, &fed.test_clients}) {
        for (auto& c : *side) {
            c.X.conservativeResize(n, Eigen::NoChange);
            c.a.conservativeResize(n);
            c.y.conservativeResize(n);
        }
    }
    return fed;
}

} // namespace

TEST_CASE("fedavg weights are the dataset-size fractions") {
    auto fed = generate_synthetic(1000, 2);
    auto plan = quick_plan(30);
    // One step from a fixed point: update must equal the size-weighted mean gradient.
    auto params = init_params(Architecture::Linear, fed.feature_dim, 7);
    double total = fed.clients[0].size() + fed.clients[1].size();
    Eigen::VectorXd expect = params.flatten();
    Eigen::VectorXd g = (fed.clients[0].size() / total) * loss_gradient(params, fed.clients[0]) +
                        (fed.clients[1].size() / total) * loss_gradient(params, fed.clients[1]);
    expect -= plan.eta * g;
    auto one = quick_plan(1);
    auto res = fedavg_train(fed, one, BiasMetric::TPSD, 7);
    REQUIRE((res.params.flatten() - expect).norm() < 1e-14);
}

TEST_CASE("fedavg with equal-size clients matches the unweighted update") {
    auto fed = equal_size_fed();
    auto plan = quick_plan(20);
    auto weighted = fedavg_train(fed, plan, BiasMetric::TPSD, 3, true);
    auto uniform = fedavg_train(fed, plan, BiasMetric::TPSD, 3, false);
    REQUIRE((weighted.params.flatten() - uniform.params.flatten()).norm() < 1e-12);
}

TEST_CASE("fedavg on a single client is plain gradient descent") {
    auto fed = generate_synthetic(600, 4);
    fed.clients.resize(1);
    fed.test_clients.resize(1);
    auto plan = quick_plan(5);
    auto res = fedavg_train(fed, plan, BiasMetric::TPSD, 8);
    auto params = init_params(Architecture::Linear, fed.feature_dim, 8);
    for (int r = 0; r < 5; ++r)
        params = params.with_step(-plan.eta * loss_gradient(params, fed.clients[0]));
    REQUIRE((res.params.flatten() - params.flatten()).norm() < 1e-14);
}

TEST_CASE("q-FFL with q=0 reproduces size-unweighted fedavg exactly") {
    auto fed = generate_synthetic(900, 5);
    auto plan = quick_plan(25);
    auto qres = qffl_train(fed, plan, BiasMetric::TPSD, 0.0, 11);
    auto fres = fedavg_train(fed, plan, BiasMetric::TPSD, 11, false);
    REQUIRE(qres.logs.size() == fres.logs.size());
    REQUIRE((qres.params.flatten() - fres.params.flatten()).norm() == 0.0);
    for (size_t i = 0; i < qres.logs.size(); ++i)
        REQUIRE(qres.logs[i].train_report.mean_loss ==
                Catch::Approx(fres.logs[i].train_report.mean_loss).epsilon(1e-13));
}

TEST_CASE("large q concentrates the q-FFL weight on the lossiest client") {
    auto fed = generate_synthetic(900, 6);
    auto params = init_params(Architecture::Linear, fed.feature_dim, 12);
    // biased params so the client losses differ
    Eigen::VectorXd v = params.flatten();
    v[0] += 1.0;
    params.unflatten(v);
    const double l0 = bce_loss(params, fed.clients[0]);
    const double l1 = bce_loss(params, fed.clients[1]);
    const double q = 200.0;
    const double w0 = std::pow(l0, q) / (std::pow(l0, q) + std::pow(l1, q));
    if (l0 > l1) REQUIRE(w0 > 0.999);
    else REQUIRE(w0 < 0.001);
}

TEST_CASE("fairreg with lambda=0 matches unweighted fedavg") {
    auto fed = generate_synthetic(800, 7);
    auto plan = quick_plan(20);
    auto freg = fairreg_train(fed, plan, BiasMetric::TPSD, 0.0, 13);
    auto favg = fedavg_train(fed, plan, BiasMetric::TPSD, 13, false);
    REQUIRE((freg.params.flatten() - favg.params.flatten()).norm() == 0.0);
}

TEST_CASE("a large fairness penalty lowers the final bias versus fedavg") {
    auto fed = generate_synthetic(4000, 8);
    auto plan = quick_plan(400);
    auto favg = fedavg_train(fed, plan, BiasMetric::TPSD, 14);
    auto freg = fairreg_train(fed, plan, BiasMetric::TPSD, 10.0, 14);
    REQUIRE(freg.final_test.avg_bias < favg.final_test.avg_bias);
}

TEST_CASE("fairreg is deterministic under a fixed seed") {
    auto fed = generate_synthetic(700, 9);
    auto plan = quick_plan(15);
    auto a = fairreg_train(fed, plan, BiasMetric::TPSD, 1.0, 15);
    auto b = fairreg_train(fed, plan, BiasMetric::TPSD, 1.0, 15);
    REQUIRE((a.params.flatten() - b.params.flatten()).norm() == 0.0);
}

TEST_CASE("baselines share the trainer initialization") {
    auto fed = generate_synthetic(600, 10);
    auto plan = quick_plan(1);
    plan.eta = 0.0 + 1e-300;   // effectively no update
    auto favg = fedavg_train(fed, plan, BiasMetric::TPSD, 16);
    auto expect = init_params(plan.arch, fed.feature_dim, 16, plan.hidden_units);
    REQUIRE((favg.params.flatten() - expect.flatten()).norm() < 1e-12);
}
