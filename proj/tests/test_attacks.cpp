#include "amfl/attacks.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace amfl;

namespace {

CollectResult fresh_bundle(std::uint64_t seed = 1) {
    auto fed = generate_synthetic(600, seed);
    StagePlan plan;
    auto params = init_params(Architecture::Linear, fed.feature_dim, seed);
    return collect_round(params, fed, BiasMetric::TPSD, plan);
}

} // namespace

TEST_CASE("enlarge scales the gradient norm exactly by the factor") {
    auto col = fresh_bundle();
    const double before = col.bundle.loss_grads[0].norm();
    AttackSpec spec;
    spec.kind = AttackKind::Enlarge;
    spec.factor = 10.0;
    spec.malicious_ids = {0};
    corrupt(col.bundle, spec);
    REQUIRE(col.bundle.loss_grads[0].norm() == 10.0 * before);   // exact, not approximate
    REQUIRE(col.bundle.bias_grads[0].norm() ==
            10.0 * fresh_bundle().bundle.bias_grads[0].norm());
}

TEST_CASE("zero attack blanks the malicious gradients and is idempotent") {
    auto col = fresh_bundle();
    AttackSpec spec;
    spec.kind = AttackKind::Zero;
    spec.malicious_ids = {1};
    corrupt(col.bundle, spec);
    REQUIRE(col.bundle.loss_grads[1].vec.norm() == 0.0);
    REQUIRE(col.bundle.bias_grads[1].vec.norm() == 0.0);
    auto once = col.bundle.loss_grads[1].vec;
    corrupt(col.bundle, spec);
    REQUIRE((col.bundle.loss_grads[1].vec - once).norm() == 0.0);
    REQUIRE(col.bundle.loss_grads[0].vec.norm() > 0.0);   // honest client untouched
}

TEST_CASE("an empty malicious set leaves the bundle unchanged") {
    auto col = fresh_bundle();
    auto before = col.bundle.loss_grads[0].vec;
    AttackSpec spec;
    spec.kind = AttackKind::Enlarge;
    corrupt(col.bundle, spec);
    REQUIRE((col.bundle.loss_grads[0].vec - before).norm() == 0.0);
    REQUIRE(col.bundle.loss_grads[0].scale == 1.0);
}

TEST_CASE("random attack is deterministic in the spec seed") {
    auto a = fresh_bundle(3), b = fresh_bundle(3);
    AttackSpec spec;
    spec.kind = AttackKind::Random;
    spec.malicious_ids = {0, 1};
    spec.seed = 99;
    corrupt(a.bundle, spec);
    corrupt(b.bundle, spec);
    REQUIRE((a.bundle.loss_grads[0].vec - b.bundle.loss_grads[0].vec).norm() == 0.0);
    REQUIRE((a.bundle.bias_grads[1].vec - b.bundle.bias_grads[1].vec).norm() == 0.0);
    spec.seed = 100;
    corrupt(b.bundle, spec);
    REQUIRE((a.bundle.loss_grads[0].vec - b.bundle.loss_grads[0].vec).norm() > 0.0);
}

TEST_CASE("out-of-range malicious ids are rejected") {
    auto col = fresh_bundle();
    AttackSpec spec;
    spec.malicious_ids = {7};
    REQUIRE_THROWS_AS(corrupt(col.bundle, spec), std::out_of_range);
}

TEST_CASE("normalization neutralizes the enlarge attack bitwise") {
    auto clean = fresh_bundle(5);
    auto attacked = fresh_bundle(5);
    AttackSpec spec;
    spec.kind = AttackKind::Enlarge;
    spec.factor = 10.0;
    spec.malicious_ids = {0};
    corrupt(attacked.bundle, spec);

    clean.bundle.finalize(clean.report, true);
    attacked.bundle.finalize(attacked.report, true);
    for (int i = 0; i < clean.bundle.num_clients(); ++i) {
        REQUIRE((clean.bundle.stored_loss[i] - attacked.bundle.stored_loss[i]).norm() == 0.0);
        REQUIRE((clean.bundle.stored_bias[i] - attacked.bundle.stored_bias[i]).norm() == 0.0);
    }
    REQUIRE((clean.bundle.grad_mean_loss - attacked.bundle.grad_mean_loss).norm() == 0.0);
}

TEST_CASE("without normalization the enlarged gradient dominates the mean") {
    auto clean = fresh_bundle(6);
    auto attacked = fresh_bundle(6);
    AttackSpec spec;
    spec.kind = AttackKind::Enlarge;
    spec.factor = 10.0;
    spec.malicious_ids = {0};
    corrupt(attacked.bundle, spec);
    clean.bundle.finalize(clean.report, false);
    attacked.bundle.finalize(attacked.report, false);
    REQUIRE((clean.bundle.grad_mean_loss - attacked.bundle.grad_mean_loss).norm() > 0.0);
}
