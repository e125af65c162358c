#pragma once

#include "amfl/trainer.hpp"

#include <set>
#include <stdexcept>

namespace amfl {

enum class AttackKind { Enlarge, Random, Zero };

inline const char* to_string(AttackKind k) {
    switch (k) {
        case AttackKind::Enlarge: return "enlarge";
        case AttackKind::Random: return "random";
        default: return "zero";
    }
}

struct AttackSpec {
    AttackKind kind = AttackKind::Enlarge;
    double factor = 10.0;   // enlarge multiplier, > 0
    std::set<int> malicious_ids;
    std::uint64_t seed = 0;

    void validate(int num_clients) const {
        if (factor <= 0) throw std::invalid_argument("attack factor must be > 0");
        for (int id : malicious_ids)
            if (id < 0 || id >= num_clients)
                throw std::out_of_range("malicious client id out of range: " + std::to_string(id));
    }
};

/// Rewrites the per-client gradients of malicious clients before the server
/// aggregates. Enlarge keeps the vector and bumps its symbolic scale, so
/// norms scale exactly and normalization cancels the attack bitwise.
/// Random redraws entries from N(0,1) deterministically from spec.seed.
inline void corrupt(GradientBundle& bundle, const AttackSpec& spec) {
    spec.validate(bundle.num_clients());
    for (int id : spec.malicious_ids) {
        auto& lg = bundle.loss_grads[id];
        auto& bg = bundle.bias_grads[id];
        auto& eg = bundle.error_grads[id];
        switch (spec.kind) {
            case AttackKind::Enlarge:
                lg.scale *= spec.factor;
                bg.scale *= spec.factor;
                eg.scale *= spec.factor;
                break;
            case AttackKind::Zero:
                lg.vec.setZero();
                bg.vec.setZero();
                eg.vec.setZero();
                lg.scale = bg.scale = eg.scale = 1.0;
                break;
            case AttackKind::Random: {
                auto rng = detail::seeded_rng(spec.seed, 0xa77ac0ULL + static_cast<std::uint64_t>(id));
                std::normal_distribution<double> n01(0.0, 1.0);
                for (Eigen::Index i = 0; i < lg.vec.size(); ++i) lg.vec[i] = n01(rng);
                for (Eigen::Index i = 0; i < bg.vec.size(); ++i) bg.vec[i] = n01(rng);
                for (Eigen::Index i = 0; i < eg.vec.size(); ++i) eg.vec[i] = n01(rng);
                lg.scale = bg.scale = eg.scale = 1.0;
                break;
            }
        }
    }
    bundle.finalized = false;   // aggregates must be recomputed
}

/// Per-round corruptor; the random attack draws fresh vectors each round
/// (still fully determined by spec.seed and the round counter).
inline Corruptor make_corruptor(const AttackSpec& spec) {
    if (spec.malicious_ids.empty()) return {};
    return [spec, round = std::uint64_t{0}](GradientBundle& b) mutable {
        AttackSpec s = spec;
        s.seed = spec.seed + 0x9e3779b97f4a7c15ULL * round++;
        corrupt(b, s);
    };
}

} // namespace amfl
