#include "amfl/model.hpp"

#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace amfl;

namespace {

ClientDataset tiny(const std::vector<std::vector<double>>& xs, const std::vector<int>& as,
                   const std::vector<int>& ys) {
    std::vector<Sample> rows;
    for (size_t i = 0; i < xs.size(); ++i) {
        Sample s;
        s.x = Eigen::Map<const Eigen::VectorXd>(xs[i].data(), xs[i].size());
        s.a = as[i];
        s.y = ys[i];
        rows.push_back(s);
    }
    return ClientDataset::from_samples(0, rows);
}

} // namespace

TEST_CASE("predict: zero weights give 0.5 everywhere") {
    auto ds = tiny({{1.0, -2.0}, {0.3, 0.7}}, {0, 1}, {1, 0});
    auto p = ModelParams::linear(2);
    auto out = predict(p, ds);
    REQUIRE(out.probabilities[0] == Catch::Approx(0.5));
    REQUIRE(out.probabilities[1] == Catch::Approx(0.5));
}

TEST_CASE("predict: sigmoid(ln 3) = 3/4") {
    auto ds = tiny({{std::log(3.0), 0.0}}, {0}, {1});
    auto p = ModelParams::linear(2);
    p.W1(0, 0) = 1.0;
    auto out = predict(p, ds);
    REQUIRE(out.probabilities[0] == Catch::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("predict: dimension mismatch throws") {
    auto ds = tiny({{1.0, 2.0, 3.0}}, {0}, {1});
    auto p = ModelParams::linear(2);
    REQUIRE_THROWS(predict(p, ds));
}

TEST_CASE("probabilities stay inside the clamp band") {
    auto ds = tiny({{100.0}, {-100.0}}, {0, 1}, {1, 0});
    auto p = ModelParams::linear(1);
    p.W1(0, 0) = 5.0;
    auto out = predict(p, ds);
    REQUIRE(out.probabilities.minCoeff() >= 1e-7);
    REQUIRE(out.probabilities.maxCoeff() <= 1 - 1e-7);
}

TEST_CASE("bce: p = 0.5 gives ln 2, perfect prediction is ~1e-7") {
    auto ds = tiny({{0.0}, {0.0}}, {0, 1}, {1, 0});
    auto p = ModelParams::linear(1);
    REQUIRE(bce_loss(p, ds) == Catch::Approx(std::log(2.0)).epsilon(1e-12));

    auto conf = tiny({{100.0}}, {0}, {1});
    p.W1(0, 0) = 10.0;
    REQUIRE(bce_loss(p, conf) == Catch::Approx(1e-7).margin(2e-8));
}

TEST_CASE("bce matches the direct per-sample formula") {
    std::mt19937_64 rng(77);
    auto ds = oracle::random_dataset(rng, 3, 2);
    auto p = oracle::random_params(rng, Architecture::Linear, 2);
    REQUIRE(bce_loss(p, ds) == Catch::Approx(oracle::bce_direct(p, ds)).epsilon(1e-12));
}

TEST_CASE("bce is invariant under sample permutation and duplication") {
    std::mt19937_64 rng(5);
    auto ds = oracle::random_dataset(rng, 8, 3);
    auto p = oracle::random_params(rng, Architecture::Linear, 3);

    std::vector<Sample> rows, doubled;
    for (int i = 0; i < ds.size(); ++i) rows.push_back(ds.sample(i));
    auto shuffled_rows = rows;
    std::shuffle(shuffled_rows.begin(), shuffled_rows.end(), rng);
    for (const auto& r : rows) {
        doubled.push_back(r);
        doubled.push_back(r);
    }
    auto shuffled = ClientDataset::from_samples(0, shuffled_rows);
    auto twice = ClientDataset::from_samples(0, doubled);

    REQUIRE(bce_loss(p, shuffled) == Catch::Approx(bce_loss(p, ds)).epsilon(1e-12));
    REQUIRE((loss_gradient(p, twice) - loss_gradient(p, ds)).norm() < 1e-14);
}

TEST_CASE("loss gradient: zero features leave only the intercept term") {
    auto ds = tiny({{0.0, 0.0}, {0.0, 0.0}}, {0, 1}, {1, 0});
    auto p = ModelParams::linear(2);
    p.b1[0] = 0.3;
    auto g = loss_gradient(p, ds);
    REQUIRE(g[0] == 0.0);
    REQUIRE(g[1] == 0.0);
    const double prob = 1.0 / (1.0 + std::exp(-0.3));
    REQUIRE(g[2] == Catch::Approx(((prob - 1) + (prob - 0)) / 2).epsilon(1e-12));
}

TEST_CASE("loss gradient matches finite differences on both architectures") {
    std::mt19937_64 rng(123);
    for (auto arch : {Architecture::Linear, Architecture::OneHidden}) {
        for (int rep = 0; rep < 10; ++rep) {
            auto ds = oracle::random_dataset(rng, 30, 3);
            auto p = oracle::random_params(rng, arch, 3);
            auto g = loss_gradient(p, ds);
            auto fd = oracle::finite_difference(p, [&](const ModelParams& q) { return bce_loss(q, ds); });
            REQUIRE(oracle::max_rel_error(g, fd) < 1e-4);
        }
    }
}

TEST_CASE("soft bias: identical probabilities give zero") {
    auto ds = tiny({{0.0}, {0.0}, {0.0}, {0.0}}, {0, 0, 1, 1}, {1, 0, 1, 0});
    auto p = ModelParams::linear(1);
    REQUIRE(soft_bias(p, ds, BiasMetric::TPSD).value == Catch::Approx(0.0).margin(1e-15));
    REQUIRE(soft_bias(p, ds, BiasMetric::APSD).value == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("soft bias equals the two-group closed form") {
    // Soft TPRs 0.8 and 0.6 -> population std 0.1.
    // logit(0.8), logit(0.6) via single features with weight 1.
    auto ds = tiny({{std::log(0.8 / 0.2)}, {std::log(0.6 / 0.4)}}, {0, 1}, {1, 1});
    auto p = ModelParams::linear(1);
    p.W1(0, 0) = 1.0;
    REQUIRE(soft_bias(p, ds, BiasMetric::TPSD).value == Catch::Approx(0.1).epsilon(1e-9));
}

TEST_CASE("soft bias matches a brute-force rate computation") {
    std::mt19937_64 rng(31);
    for (int rep = 0; rep < 20; ++rep) {
        auto ds = oracle::random_dataset(rng, 25, 2);
        auto p = oracle::random_params(rng, Architecture::Linear, 2);
        for (auto metric : {BiasMetric::TPSD, BiasMetric::APSD}) {
            // direct: group rates from mean probability
            std::vector<double> rates;
            auto probs = predict(p, ds).probabilities;
            Eigen::VectorXd raw = (ds.X * p.W1.row(0).transpose()).array() + p.b1[0];
            for (int g = 0; g < 2; ++g) {
                double acc = 0;
                int n = 0;
                for (int i = 0; i < ds.size(); ++i) {
                    if (ds.a[i] != g) continue;
                    double prob = 1.0 / (1.0 + std::exp(-raw[i]));
                    if (metric == BiasMetric::TPSD) {
                        if (ds.y[i] != 1) continue;
                        acc += prob;
                    } else {
                        acc += ds.y[i] ? prob : 1 - prob;
                    }
                    ++n;
                }
                if (n) rates.push_back(acc / n);
            }
            double mu = (rates[0] + rates[1]) / 2;
            double want = std::sqrt(((rates[0] - mu) * (rates[0] - mu) + (rates[1] - mu) * (rates[1] - mu)) / 2);
            REQUIRE(soft_bias(p, ds, metric).value == Catch::Approx(want).epsilon(1e-10));
        }
    }
}

TEST_CASE("soft bias gradient matches finite differences") {
    std::mt19937_64 rng(321);
    int done = 0;
    while (done < 10) {
        auto ds = oracle::random_dataset(rng, 40, 3);
        auto p = oracle::random_params(rng, Architecture::Linear, 3);
        for (auto metric : {BiasMetric::TPSD, BiasMetric::APSD}) {
            if (soft_bias(p, ds, metric).value < 1e-3) continue;   // keep away from the kink
            auto [g, degenerate] = soft_bias_gradient(p, ds, metric);
            REQUIRE_FALSE(degenerate);
            auto fd = oracle::finite_difference(
                p, [&](const ModelParams& q) { return soft_bias(q, ds, metric).value; });
            REQUIRE(oracle::max_rel_error(g, fd) < 1e-3);
        }
        ++done;
    }
}

TEST_CASE("soft bias gradient at the kink returns the zero subgradient") {
    auto ds = tiny({{0.0}, {0.0}}, {0, 1}, {1, 1});
    auto p = ModelParams::linear(1);
    auto [g, degenerate] = soft_bias_gradient(p, ds, BiasMetric::TPSD);
    REQUIRE(degenerate);
    REQUIRE(g.norm() == 0.0);
}

TEST_CASE("swapping group labels negates the rate difference and the gradient") {
    auto ds = tiny({{1.0}, {-1.0}}, {0, 1}, {1, 1});
    auto swapped = tiny({{1.0}, {-1.0}}, {1, 0}, {1, 1});
    auto p = ModelParams::linear(1);
    p.W1(0, 0) = 0.7;
    auto [g1, d1] = soft_bias_gradient(p, ds, BiasMetric::TPSD);
    auto [g2, d2] = soft_bias_gradient(p, swapped, BiasMetric::TPSD);
    REQUIRE_FALSE(d1);
    REQUIRE_FALSE(d2);
    // |r0 - r1| is symmetric in the swap, so the gradients must agree.
    REQUIRE((g1 - g2).norm() < 1e-12);
    // and the signed group rate difference itself flips
    auto signed_diff = [&](const ClientDataset& d) {
        auto probs = predict(p, d).probabilities;
        double r[2] = {0, 0};
        for (int i = 0; i < d.size(); ++i) r[d.a[i]] = probs[i];
        return r[0] - r[1];
    };
    REQUIRE(signed_diff(ds) == Catch::Approx(-signed_diff(swapped)));
}

TEST_CASE("tempered surrogate approaches the hard rates as T shrinks") {
    std::mt19937_64 rng(5150);
    auto ds = oracle::random_dataset(rng, 60, 2);
    auto p = oracle::random_params(rng, Architecture::Linear, 2, 1.5);
    auto preds = predict(p, ds);
    std::vector<int> a(ds.size()), y(ds.size()), yh(ds.size());
    for (int i = 0; i < ds.size(); ++i) {
        a[i] = ds.a[i];
        y[i] = ds.y[i];
        yh[i] = preds.hard_labels[i];
    }
    const double hard = oracle::hard_bias_counts(a, y, yh, true);
    const double t1 = std::abs(soft_bias(p, ds, BiasMetric::TPSD, 2, 1.0).value - hard);
    const double t001 = std::abs(soft_bias(p, ds, BiasMetric::TPSD, 2, 0.01).value - hard);
    REQUIRE(t001 < t1);
    REQUIRE(t001 < 0.02);
}

TEST_CASE("checkpoints round-trip exactly") {
    std::mt19937_64 rng(999);
    for (auto arch : {Architecture::Linear, Architecture::OneHidden}) {
        auto p = oracle::random_params(rng, arch, 3);
        save_checkpoint(p, "model_test.ckpt");
        auto q = load_checkpoint("model_test.ckpt");
        REQUIRE(q.dim() == p.dim());
        REQUIRE((q.flatten() - p.flatten()).cwiseAbs().maxCoeff() == 0.0);
    }
    std::remove("model_test.ckpt");
}

TEST_CASE("flattening order is layer-major, weights then bias") {
    auto p = ModelParams::one_hidden(2, 2);
    p.W1 << 1, 2, 3, 4;
    p.b1 << 5, 6;
    p.W2 << 7, 8;
    p.b2 << 9;
    Eigen::VectorXd v = p.flatten();
    for (int i = 0; i < 9; ++i) REQUIRE(v[i] == i + 1);
}
