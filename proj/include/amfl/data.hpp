#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace amfl {

/// One labelled sample: general attributes x, protected group a, binary label y.
struct Sample {
    Eigen::VectorXd x;
    int a = 0;
    int y = 0;
};

/// A client's data in column layout: X is (n x d), a and y are length n.
/// Rows keep insertion order, so the struct still behaves like an ordered
/// list of samples.
struct ClientDataset {
    int client_id = 0;
    Eigen::MatrixXd X;
    Eigen::VectorXi a;
    Eigen::VectorXi y;

    int size() const { return static_cast<int>(y.size()); }
    int feature_dim() const { return static_cast<int>(X.cols()); }

    Sample sample(int i) const { return {X.row(i).transpose(), a[i], y[i]}; }

    static ClientDataset from_samples(int client_id, const std::vector<Sample>& rows) {
        if (rows.empty()) throw std::invalid_argument("client dataset must be non-empty");
        const auto d = rows.front().x.size();
        ClientDataset ds;
        ds.client_id = client_id;
        ds.X.resize(static_cast<Eigen::Index>(rows.size()), d);
        ds.a.resize(static_cast<Eigen::Index>(rows.size()));
        ds.y.resize(static_cast<Eigen::Index>(rows.size()));
        for (size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].x.size() != d)
                throw std::invalid_argument("inconsistent feature dimension within client");
            ds.X.row(static_cast<Eigen::Index>(i)) = rows[i].x.transpose();
            ds.a[static_cast<Eigen::Index>(i)] = rows[i].a;
            ds.y[static_cast<Eigen::Index>(i)] = rows[i].y;
        }
        return ds;
    }
};

/// Train clients plus a parallel list of held-out test clients.
struct FederationData {
    std::vector<ClientDataset> clients;
    std::vector<ClientDataset> test_clients;
    int group_count = 2;   // M
    int feature_dim = 0;

    int num_clients() const { return static_cast<int>(clients.size()); }

    void validate() const {
        if (clients.empty() || clients.size() != test_clients.size())
            throw std::invalid_argument("federation needs equal, non-zero train/test client lists");
        for (const auto& c : clients)
            if (c.feature_dim() != feature_dim)
                throw std::invalid_argument("client feature dim mismatch");
    }
};

namespace detail {

inline std::mt19937_64 seeded_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{seed, stream};
    return std::mt19937_64(seq);
}

/// Deterministic within-client 80/20 split: shuffle indices with a
/// client-specific stream of `seed`, first 80% train.
inline std::pair<std::vector<int>, std::vector<int>>
train_test_indices(int n, std::uint64_t seed, std::uint64_t stream, double test_fraction) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    auto rng = seeded_rng(seed, 0x5eed5eedULL + stream);
    std::shuffle(idx.begin(), idx.end(), rng);
    int n_test = static_cast<int>(std::lround(test_fraction * n));
    n_test = std::clamp(n_test, n >= 2 ? 1 : 0, n - 1);
    std::vector<int> train(idx.begin(), idx.end() - n_test);
    std::vector<int> test(idx.end() - n_test, idx.end());
    return {train, test};
}

inline ClientDataset subset(const ClientDataset& ds, const std::vector<int>& rows) {
    ClientDataset out;
    out.client_id = ds.client_id;
    out.X.resize(static_cast<Eigen::Index>(rows.size()), ds.X.cols());
    out.a.resize(static_cast<Eigen::Index>(rows.size()));
    out.y.resize(static_cast<Eigen::Index>(rows.size()));
    for (size_t i = 0; i < rows.size(); ++i) {
        out.X.row(static_cast<Eigen::Index>(i)) = ds.X.row(rows[i]);
        out.a[static_cast<Eigen::Index>(i)] = ds.a[rows[i]];
        out.y[static_cast<Eigen::Index>(i)] = ds.y[rows[i]];
    }
    return out;
}

inline FederationData split_partition(const std::vector<std::vector<Sample>>& parts,
                                      std::uint64_t seed, double test_fraction) {
    FederationData fed;
    for (size_t c = 0; c < parts.size(); ++c) {
        if (parts[c].empty())
            throw std::runtime_error("empty client partition");
        auto full = ClientDataset::from_samples(static_cast<int>(c), parts[c]);
        auto [tr, te] = train_test_indices(full.size(), seed, c, test_fraction);
        fed.clients.push_back(subset(full, tr));
        fed.test_clients.push_back(subset(full, te));
    }
    fed.feature_dim = fed.clients.front().feature_dim();
    fed.group_count = 2;
    fed.validate();
    return fed;
}

} // namespace detail

/// Synthetic federation: a ~ Ber(0.5), x1 ~ N(0,1), x2 ~ N(1(a>0), 2)
/// (the 2 read as variance), y ~ Ber(u) with u in {0.3,0.6} for a=0 and
/// {0.1,0.9} for a=1 switching on the sign of x1+x2. Two clients split on
/// x1 <= -0.5, then a per-client 80/20 train/test split.
inline FederationData generate_synthetic(int n_samples, std::uint64_t seed) {
    if (n_samples < 100) throw std::invalid_argument("generate_synthetic: n_samples must be >= 100");
    auto rng = detail::seeded_rng(seed, 0);
    std::bernoulli_distribution coin(0.5);
    std::normal_distribution<double> unit_normal(0.0, 1.0);
    std::normal_distribution<double> x2_noise(0.0, std::sqrt(2.0));
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    std::vector<std::vector<Sample>> parts(2);
    for (int i = 0; i < n_samples; ++i) {
        const int a = coin(rng) ? 1 : 0;
        const double x1 = unit_normal(rng);
        const double x2 = (a > 0 ? 1.0 : 0.0) + x2_noise(rng);
        const double u_low = (a == 0) ? 0.3 : 0.1;
        const double u_high = (a == 0) ? 0.6 : 0.9;
        const double u = (x1 + x2 <= 0.0) ? u_low : u_high;
        const int y = (unif(rng) < u) ? 1 : 0;
        Sample s;
        s.x = Eigen::Vector2d(x1, x2);
        s.a = a;
        s.y = y;
        parts[x1 <= -0.5 ? 0 : 1].push_back(std::move(s));
    }
    return detail::split_partition(parts, seed, 0.2);
}

/// Multi-client extension of the synthetic generator used by the attack and
/// scale experiments: same marginal distribution, clients formed by
/// quantile-splitting x1 into `k` equal-count bins.
inline FederationData generate_synthetic_clients(int n_samples, std::uint64_t seed, int k) {
    if (n_samples < 100) throw std::invalid_argument("generate_synthetic_clients: n_samples must be >= 100");
    if (k < 1) throw std::invalid_argument("generate_synthetic_clients: k must be >= 1");
    auto rng = detail::seeded_rng(seed, 0);
    std::bernoulli_distribution coin(0.5);
    std::normal_distribution<double> unit_normal(0.0, 1.0);
    std::normal_distribution<double> x2_noise(0.0, std::sqrt(2.0));
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    std::vector<Sample> all(static_cast<size_t>(n_samples));
    for (auto& s : all) {
        const int a = coin(rng) ? 1 : 0;
        const double x1 = unit_normal(rng);
        const double x2 = (a > 0 ? 1.0 : 0.0) + x2_noise(rng);
        const double u = (x1 + x2 <= 0.0) ? ((a == 0) ? 0.3 : 0.1) : ((a == 0) ? 0.6 : 0.9);
        s.x = Eigen::Vector2d(x1, x2);
        s.a = a;
        s.y = (unif(rng) < u) ? 1 : 0;
    }
    std::vector<int> order(all.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int i, int j) { return all[i].x[0] < all[j].x[0]; });
    std::vector<std::vector<Sample>> parts(static_cast<size_t>(k));
    for (size_t r = 0; r < order.size(); ++r) {
        size_t bin = std::min<size_t>(static_cast<size_t>(k) - 1,
                                      r * static_cast<size_t>(k) / order.size());
        parts[bin].push_back(all[order[r]]);
    }
    return detail::split_partition(parts, seed, 0.2);
}

/// Keep only clients with at least `min_samples` training rows.
inline FederationData filter_min_size(const FederationData& data, int min_samples) {
    if (min_samples < 1) throw std::invalid_argument("filter_min_size: min_samples must be >= 1");
    FederationData out;
    out.group_count = data.group_count;
    out.feature_dim = data.feature_dim;
    for (size_t i = 0; i < data.clients.size(); ++i) {
        if (data.clients[i].size() >= min_samples) {
            out.clients.push_back(data.clients[i]);
            out.test_clients.push_back(data.test_clients[i]);
        }
    }
    if (out.clients.empty())
        throw std::runtime_error("filter_min_size: all clients filtered out");
    return out;
}

} // namespace amfl
