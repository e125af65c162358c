#pragma once

#include "amfl/data.hpp"
#include "amfl/direction.hpp"
#include "amfl/metrics.hpp"
#include "amfl/model.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace amfl {

/// Schedule and solver knobs for a training run. `temperature` sharpens the
/// bias surrogate used inside training (1.0 reproduces the plain soft
/// rates); `guard_curvature` widens the line-search acceptance band
/// quadratically in the step so active constraints can be traversed, and 0
/// restores the strict 1e-9 band everywhere.
struct StagePlan {
    int rounds_stage1 = 750;
    int rounds_stage2 = 750;
    int rounds_stage3 = 500;
    double eta = 0.05;
    double shrink = 0.5;
    int max_halvings = 20;
    bool normalize_gradients = true;
    double temperature = 0.25;
    double fence_temperature = 0.05;   // budget fences evaluate near-hard
    double soft_floor = 1e-3;
    double guard_base = 1e-9;
    double guard_curvature = 1.0;
    int log_every = 25;
    Architecture arch = Architecture::Linear;
    int hidden_units = 16;

    int total_rounds() const { return rounds_stage1 + rounds_stage2 + rounds_stage3; }
    void validate() const {
        if (rounds_stage1 < 0 || rounds_stage2 < 0 || rounds_stage3 < 0 || total_rounds() <= 0)
            throw std::invalid_argument("stage rounds must be nonnegative with a positive total");
        if (eta <= 0) throw std::invalid_argument("eta must be positive");
        if (temperature <= 0) throw std::invalid_argument("temperature must be positive");
    }
};

/// Per-client gradients as sent to the server. `scale` is a positive
/// multiplier kept symbolic so that norm and normalization are exact under
/// gradient-scaling corruption.
struct ClientGradient {
    Eigen::VectorXd vec;
    double scale = 1.0;

    Eigen::VectorXd materialize() const { return scale * vec; }
    double norm() const { return scale * vec.norm(); }
    Eigen::VectorXd unit_or_raw(bool* zero_flag = nullptr) const {
        auto n = normalize(vec);
        if (zero_flag) *zero_flag = n.zero_norm;
        return n.zero_norm ? materialize() : n.v;
    }
};

/// Everything the server derives from one round of client gradients. Raw
/// per-client gradients live alongside the aggregated vectors so that
/// corruption can be applied before aggregation and the aggregates
/// recomputed.
struct GradientBundle {
    std::vector<ClientGradient> loss_grads;
    std::vector<ClientGradient> bias_grads;
    std::vector<ClientGradient> error_grads;   // misclassification surrogate
    std::vector<double> tempered_bias;         // surrogate values at plan temperature
    std::vector<double> tempered_error;
    std::vector<double> fence_bias;            // near-hard values for the budget fences
    std::vector<double> fence_error;
    bool normalized = false;
    bool finalized = false;

    std::vector<Eigen::VectorXd> stored_loss;
    std::vector<Eigen::VectorXd> stored_bias;
    std::vector<Eigen::VectorXd> stored_error;
    Eigen::VectorXd grad_mean_loss;   // gradient of l-bar
    Eigen::VectorXd grad_mean_bias;
    Eigen::VectorXd grad_mean_error;
    Eigen::VectorXd grad_loss_max;    // worst-loss client
    Eigen::VectorXd grad_bias_max;    // worst-bias client
    Eigen::VectorXd grad_acc_dev;     // worst accuracy-deviation term
    Eigen::VectorXd grad_bias_dev;    // worst |f_k - fbar| term
    int idx_loss_max = 0, idx_bias_max = 0, idx_acc_dev = 0, idx_bias_dev = 0;
    double sign_acc_dev = 0.0, sign_bias_dev = 0.0;
    double acc_dev_max = 0.0;         // hard metric: max_k |acc_k - avg_acc|

    int num_clients() const { return static_cast<int>(loss_grads.size()); }

    /// Computes stored (optionally Eq.-22 normalized) client gradients and
    /// the derived aggregate vectors, using the training report's
    /// max-attaining indices (ties broken to the lowest client).
    void finalize(const FederationReport& report, bool normalize_gradients) {
        const int n = num_clients();
        normalized = normalize_gradients;
        stored_loss.resize(n);
        stored_bias.resize(n);
        stored_error.resize(n);
        for (int i = 0; i < n; ++i) {
            stored_loss[i] = normalize_gradients ? loss_grads[i].unit_or_raw() : loss_grads[i].materialize();
            stored_bias[i] = normalize_gradients ? bias_grads[i].unit_or_raw() : bias_grads[i].materialize();
            stored_error[i] = normalize_gradients ? error_grads[i].unit_or_raw() : error_grads[i].materialize();
        }
        const auto dim = stored_loss.front().size();
        grad_mean_loss = Eigen::VectorXd::Zero(dim);
        grad_mean_bias = Eigen::VectorXd::Zero(dim);
        grad_mean_error = Eigen::VectorXd::Zero(dim);
        for (int i = 0; i < n; ++i) {
            grad_mean_loss += stored_loss[i] / n;
            grad_mean_bias += stored_bias[i] / n;
            grad_mean_error += stored_error[i] / n;
        }
        idx_loss_max = report.argmax_loss;
        idx_bias_max = report.argmax_bias;
        idx_bias_dev = report.argmax_bias_dev;
        grad_loss_max = stored_loss[idx_loss_max];
        grad_bias_max = stored_bias[idx_bias_max];

        // Worst accuracy deviation (the anti-Matthew accuracy-fairness term),
        // from the hard accuracies; gradient through the error surrogate.
        idx_acc_dev = 0;
        acc_dev_max = 0.0;
        for (int i = 0; i < n; ++i) {
            const double dev = std::abs(report.reports[i].accuracy - report.avg_acc);
            if (dev > acc_dev_max) {
                acc_dev_max = dev;
                idx_acc_dev = i;
            }
        }
        const double da = report.avg_acc - report.reports[idx_acc_dev].accuracy;   // error-side sign
        sign_acc_dev = da > 0 ? 1.0 : (da < 0 ? -1.0 : 0.0);
        grad_acc_dev = sign_acc_dev * (stored_error[idx_acc_dev] - grad_mean_error);

        const double df = report.reports[idx_bias_dev].bias - report.mean_bias;
        sign_bias_dev = df > 0 ? 1.0 : (df < 0 ? -1.0 : 0.0);
        grad_bias_dev = sign_bias_dev * (stored_bias[idx_bias_dev] - grad_mean_bias);
        finalized = true;
    }
};

struct CollectResult {
    GradientBundle bundle;
    FederationReport report;   // training split
};

/// One FedSGD round of client work: losses, gradients, surrogate biases.
inline CollectResult collect_round(const ModelParams& params, const FederationData& fed,
                                   BiasMetric metric, const StagePlan& plan) {
    CollectResult out;
    std::vector<ClientReport> reports;
    for (const auto& c : fed.clients) {
        reports.push_back(evaluate_client(params, c, metric, fed.group_count));
        ClientGradient lg, bg, eg;
        lg.vec = loss_gradient(params, c);
        bg.vec = soft_bias_gradient(params, c, metric, fed.group_count, plan.temperature).first;
        eg.vec = soft_error_gradient(params, c, plan.temperature);
        out.bundle.loss_grads.push_back(std::move(lg));
        out.bundle.bias_grads.push_back(std::move(bg));
        out.bundle.error_grads.push_back(std::move(eg));
        out.bundle.tempered_bias.push_back(
            soft_bias(params, c, metric, fed.group_count, plan.temperature).value);
        out.bundle.tempered_error.push_back(soft_error(params, c, plan.temperature));
        out.bundle.fence_bias.push_back(
            soft_bias(params, c, metric, fed.group_count, plan.fence_temperature).value);
        out.bundle.fence_error.push_back(soft_error(params, c, plan.fence_temperature));
    }
    out.report = aggregate_reports(std::move(reports));
    return out;
}

// ---------------------------------------------------------------------------
// Line search

enum class GuardKind {
    MeanLoss,        // lbar over train clients
    ClientLoss,      // l_i
    ClientBias,      // tempered surrogate bias of one client
    AccDevSigned,    // sign * (err_i - mean err), tempered error surrogate
    BiasDevSigned,   // sign * (f_i - fbar), tempered
    BiasMaxAll,      // max_k tempered bias
    AccDevMaxAll,    // max_k |err_k - mean err|, tempered
    BiasDevMaxAll,   // max_k |f_k - fbar|, tempered
};

struct Guard {
    GuardKind kind;
    int client = -1;
    double sign = 1.0;
    double cap = 0.0;
    bool strict = false;   // strict guards get no curvature slack
    std::string name;
};

struct GuardRecord {
    std::string name;
    double cap = 0.0;
    double before = 0.0;
    double after = 0.0;
};

namespace trainer_detail {

struct GuardState {
    std::vector<double> losses;
    std::vector<double> tempered;        // surrogates at the gradient temperature
    std::vector<double> errors;
    std::vector<double> fence_bias;      // near-hard surrogates for the budget fences
    std::vector<double> fence_error;
    double mean_loss = 0.0;
    double mean_tempered = 0.0;
    double mean_error = 0.0;
    double mean_fence_bias = 0.0;
    double mean_fence_error = 0.0;
};

inline GuardState guard_state(const ModelParams& params, const FederationData& fed,
                              BiasMetric metric, const StagePlan& plan) {
    GuardState st;
    for (const auto& c : fed.clients) {
        st.losses.push_back(bce_loss(params, c));
        st.tempered.push_back(soft_bias(params, c, metric, fed.group_count, plan.temperature).value);
        st.errors.push_back(soft_error(params, c, plan.temperature));
        st.fence_bias.push_back(
            soft_bias(params, c, metric, fed.group_count, plan.fence_temperature).value);
        st.fence_error.push_back(soft_error(params, c, plan.fence_temperature));
    }
    const double n = static_cast<double>(st.losses.size());
    for (double l : st.losses) st.mean_loss += l / n;
    for (double f : st.tempered) st.mean_tempered += f / n;
    for (double e : st.errors) st.mean_error += e / n;
    for (double f : st.fence_bias) st.mean_fence_bias += f / n;
    for (double e : st.fence_error) st.mean_fence_error += e / n;
    return st;
}

inline double guard_value(const GuardState& st, const Guard& g) {
    switch (g.kind) {
        case GuardKind::MeanLoss: return st.mean_loss;
        case GuardKind::ClientLoss: return st.losses[g.client];
        case GuardKind::ClientBias: return st.tempered[g.client];
        case GuardKind::AccDevSigned: return g.sign * (st.errors[g.client] - st.mean_error);
        case GuardKind::BiasDevSigned: return g.sign * (st.tempered[g.client] - st.mean_tempered);
        case GuardKind::BiasMaxAll: {
            double m = 0.0;
            for (double f : st.fence_bias) m = std::max(m, f);
            return m;
        }
        case GuardKind::AccDevMaxAll: {
            double m = 0.0;
            for (double e : st.fence_error) m = std::max(m, std::abs(e - st.mean_fence_error));
            return m;
        }
        case GuardKind::BiasDevMaxAll: {
            double m = 0.0;
            for (double f : st.fence_bias) m = std::max(m, std::abs(f - st.mean_fence_bias));
            return m;
        }
    }
    return 0.0;
}

} // namespace trainer_detail

struct LineSearchResult {
    double eta = 0.0;
    ModelParams params;
    bool accepted = false;
    std::vector<GuardRecord> records;
};

/// Backtracking step acceptance: halve from plan.eta until every guarded
/// quantity stays within its cap plus the tolerance band. Strict guards use
/// the base 1e-9 band; the rest additionally tolerate curvature
/// (guard_curvature * eta^2), which lets the iterate travel along active
/// constraint surfaces. A zero direction is accepted at full eta.
inline LineSearchResult line_search(const ModelParams& params, const Eigen::VectorXd& d,
                                    const std::vector<Guard>& guards, const StagePlan& plan,
                                    const FederationData& fed, BiasMetric metric) {
    LineSearchResult out;
    out.params = params;
    auto before = trainer_detail::guard_state(params, fed, metric, plan);
    for (const auto& g : guards)
        out.records.push_back({g.name, g.cap, trainer_detail::guard_value(before, g),
                               trainer_detail::guard_value(before, g)});
    if (d.norm() < 1e-14) {
        out.eta = plan.eta;
        out.accepted = true;
        return out;
    }
    double eta = plan.eta;
    for (int h = 0; h <= plan.max_halvings; ++h, eta *= plan.shrink) {
        ModelParams cand = params.with_step(eta * d);
        auto st = trainer_detail::guard_state(cand, fed, metric, plan);
        bool ok = true;
        for (const auto& g : guards) {
            const double tol = plan.guard_base + (g.strict ? 0.0 : plan.guard_curvature * eta * eta);
            if (trainer_detail::guard_value(st, g) > g.cap + tol) {
                ok = false;
                break;
            }
        }
        if (ok) {
            out.eta = eta;
            out.params = std::move(cand);
            out.accepted = true;
            for (size_t i = 0; i < guards.size(); ++i)
                out.records[i].after = trainer_detail::guard_value(st, guards[i]);
            return out;
        }
    }
    out.eta = 0.0;
    out.accepted = false;
    return out;
}

// ---------------------------------------------------------------------------
// Stage directions

struct StageSnapshot {
    double mean_loss_stage1 = 0.0;               // lbar at end of stage 1
    std::vector<double> losses_stage2;           // per-client l_k at end of stage 2
    double mean_loss_stage2 = 0.0;
    bool have_stage1 = false;
    bool have_stage2 = false;
};

struct RoundPlan {
    DirectionResult dir;
    std::string branch;
    std::vector<std::string> active_constraints;
    std::vector<Guard> guards;
    bool stationary = false;
};

namespace trainer_detail {

struct Activation {
    bool bias_max = false;
    bool acc_dev = false;
    bool bias_dev = false;
};

/// Constraint activation: triggered by the hard-metric report, gated by the
/// surrogate carrying usable signal (an uninformative surrogate cannot act
/// on the constraint anyway).
inline Activation activation(const GradientBundle& b, const FederationReport& r,
                             const Budgets& eps, double soft_floor) {
    Activation act;
    act.bias_max = r.max_bias > eps.eps_b && b.tempered_bias[r.argmax_bias] >= soft_floor;
    act.acc_dev = b.acc_dev_max > eps.eps_vl;
    double mean_t = 0.0;
    for (double f : b.tempered_bias) mean_t += f / b.tempered_bias.size();
    act.bias_dev = r.max_bias_dev > eps.eps_vb &&
                   std::abs(b.tempered_bias[r.argmax_bias_dev] - mean_t) >= soft_floor * 0.1;
    return act;
}

/// Budget-region fences: each surrogate quantity may move freely below
/// 1.1x its budget (the tables' near band) but may never climb past that
/// ceiling, and once above it may not increase at all. Keeps every stage
/// inside (or re-entering) the feasible region instead of trading it away
/// for loss.
inline void add_budget_guards(std::vector<Guard>& guards, const GradientBundle& b,
                              const FederationReport& r, const Budgets& eps) {
    double mean_t = 0.0, max_t = 0.0, max_tdev = 0.0;
    for (double f : b.fence_bias) mean_t += f / b.fence_bias.size();
    for (double f : b.fence_bias) {
        max_t = std::max(max_t, f);
        max_tdev = std::max(max_tdev, std::abs(f - mean_t));
    }
    double mean_e = 0.0, max_edev = 0.0;
    for (double e : b.fence_error) mean_e += e / b.fence_error.size();
    for (double e : b.fence_error) max_edev = std::max(max_edev, std::abs(e - mean_e));
    const double band = 1.1;
    guards.push_back({GuardKind::BiasMaxAll, -1, 1.0, std::max(band * eps.eps_b, max_t), true,
                      "budget:bias_max"});
    guards.push_back({GuardKind::AccDevMaxAll, -1, 1.0, std::max(band * eps.eps_vl, max_edev), true,
                      "budget:acc_dev"});
    guards.push_back({GuardKind::BiasDevMaxAll, -1, 1.0, std::max(band * eps.eps_vb, max_tdev), true,
                      "budget:bias_dev"});
}

} // namespace trainer_detail

/// Stage 1: minimize lbar while the worst-client bias budget holds;
/// otherwise drive the worst bias down without increasing lbar.
inline RoundPlan stage1_direction(const GradientBundle& b, const FederationReport& r,
                                  const Budgets& eps, const StagePlan& plan) {
    RoundPlan rp;
    auto act = trainer_detail::activation(b, r, eps, plan.soft_floor);
    std::vector<Eigen::VectorXd> hull = {b.grad_mean_loss, b.grad_bias_max};
    if (!act.bias_max) {
        rp.branch = "stage1:mean_loss";
        rp.dir = constrained_direction(b.grad_mean_loss, {}, hull);
        rp.guards.push_back({GuardKind::MeanLoss, -1, 1.0, r.mean_loss, false, "mean_loss"});
    } else {
        rp.branch = "stage1:bias";
        rp.dir = constrained_direction(b.grad_bias_max, {b.grad_mean_loss}, hull);
        rp.active_constraints.push_back("mean_loss");
        rp.guards.push_back({GuardKind::MeanLoss, -1, 1.0, r.mean_loss, false, "mean_loss"});
        rp.guards.push_back({GuardKind::ClientBias, b.idx_bias_max, 1.0,
                             b.tempered_bias[b.idx_bias_max], false, "bias_max"});
    }
    trainer_detail::add_budget_guards(rp.guards, b, r, eps);
    return rp;
}

/// Stage 2: alternately push the worst bias deviation or the worst
/// accuracy deviation, never increasing lbar and never leaving the budget
/// regions already reached. The stage-1 lbar value caps the whole stage.
inline RoundPlan stage2_direction(const GradientBundle& b, const FederationReport& r,
                                  const Budgets& eps, const StagePlan& plan,
                                  const StageSnapshot& snap) {
    RoundPlan rp;
    auto act = trainer_detail::activation(b, r, eps, plan.soft_floor);
    double mean_t = 0.0, mean_e = 0.0;
    for (double f : b.tempered_bias) mean_t += f / b.tempered_bias.size();
    for (double e : b.tempered_error) mean_e += e / b.tempered_error.size();
    const double lbar_cap = snap.have_stage1 ? std::min(r.mean_loss, snap.mean_loss_stage1) : r.mean_loss;

    std::vector<Eigen::VectorXd> cons = {b.grad_mean_loss};
    rp.active_constraints.push_back("mean_loss");
    if (!act.acc_dev) {
        rp.branch = "stage2:bias_dev";
        std::vector<Eigen::VectorXd> hull = {b.grad_bias_dev, b.grad_bias_max, b.grad_mean_loss};
        if (act.bias_max) {
            cons.push_back(b.grad_bias_max);
            rp.active_constraints.push_back("bias_max");
        }
        rp.dir = constrained_direction(b.grad_bias_dev, cons, hull);
        rp.guards.push_back({GuardKind::MeanLoss, -1, 1.0, lbar_cap, false, "mean_loss"});
        rp.guards.push_back({GuardKind::BiasDevSigned, b.idx_bias_dev, b.sign_bias_dev,
                             b.sign_bias_dev * (b.tempered_bias[b.idx_bias_dev] - mean_t), false,
                             "bias_dev"});
        if (act.bias_max)
            rp.guards.push_back({GuardKind::ClientBias, b.idx_bias_max, 1.0,
                                 b.tempered_bias[b.idx_bias_max], false, "bias_max"});
    } else {
        rp.branch = "stage2:acc_dev";
        std::vector<Eigen::VectorXd> hull = {b.grad_acc_dev, b.grad_bias_dev, b.grad_bias_max,
                                             b.grad_mean_loss};
        if (act.bias_dev) {
            cons.push_back(b.grad_bias_dev);
            rp.active_constraints.push_back("bias_dev");
        }
        if (act.bias_max) {
            cons.push_back(b.grad_bias_max);
            rp.active_constraints.push_back("bias_max");
        }
        rp.dir = constrained_direction(b.grad_acc_dev, cons, hull);
        rp.guards.push_back({GuardKind::MeanLoss, -1, 1.0, lbar_cap, false, "mean_loss"});
        rp.guards.push_back({GuardKind::AccDevSigned, b.idx_acc_dev, b.sign_acc_dev,
                             b.sign_acc_dev * (b.tempered_error[b.idx_acc_dev] - mean_e), false,
                             "acc_dev"});
        if (act.bias_dev)
            rp.guards.push_back({GuardKind::BiasDevSigned, b.idx_bias_dev, b.sign_bias_dev,
                                 b.sign_bias_dev * (b.tempered_bias[b.idx_bias_dev] - mean_t), false,
                                 "bias_dev"});
        if (act.bias_max)
            rp.guards.push_back({GuardKind::ClientBias, b.idx_bias_max, 1.0,
                                 b.tempered_bias[b.idx_bias_max], false, "bias_max"});
    }
    trainer_detail::add_budget_guards(rp.guards, b, r, eps);
    return rp;
}

/// Stage 3: descend the worst client loss inside the hull of every client
/// gradient plus the aggregate vectors, constrained so no other client's
/// loss rises and the stage-2 levels are never exceeded. Reports Pareto
/// stationarity when the objective cannot decrease.
inline RoundPlan stage3_direction(const GradientBundle& b, const FederationReport& r,
                                  const Budgets& eps, const StagePlan& plan,
                                  const StageSnapshot& snap) {
    RoundPlan rp;
    rp.branch = "stage3:worst_loss";
    auto act = trainer_detail::activation(b, r, eps, plan.soft_floor);
    const int n = b.num_clients();
    double mean_t = 0.0, mean_e = 0.0;
    for (double f : b.tempered_bias) mean_t += f / b.tempered_bias.size();
    for (double e : b.tempered_error) mean_e += e / b.tempered_error.size();

    std::vector<Eigen::VectorXd> hull = {b.grad_loss_max};
    for (int i = 0; i < n; ++i)
        if (i != b.idx_loss_max) hull.push_back(b.stored_loss[i]);
    hull.push_back(b.grad_mean_loss);
    hull.push_back(b.grad_bias_max);
    hull.push_back(b.grad_acc_dev);
    hull.push_back(b.grad_bias_dev);

    std::vector<Eigen::VectorXd> cons = {b.grad_mean_loss};
    rp.active_constraints.push_back("mean_loss");
    if (act.bias_max) {
        cons.push_back(b.grad_bias_max);
        rp.active_constraints.push_back("bias_max");
    }
    if (act.acc_dev) {
        cons.push_back(b.grad_acc_dev);
        rp.active_constraints.push_back("acc_dev");
    }
    if (act.bias_dev) {
        cons.push_back(b.grad_bias_dev);
        rp.active_constraints.push_back("bias_dev");
    }
    for (int i = 0; i < n; ++i) {
        if (i == b.idx_loss_max) continue;
        cons.push_back(b.stored_loss[i]);
        rp.active_constraints.push_back("client_loss_" + std::to_string(i));
    }
    rp.dir = constrained_direction(b.grad_loss_max, cons, hull);
    if (rp.dir.objective > -1e-12 || rp.dir.d.norm() < 1e-12) {
        rp.stationary = true;
        rp.dir.d.setZero();
        return rp;
    }

    const double lbar_cap = snap.have_stage2 ? std::min(r.mean_loss, snap.mean_loss_stage2) : r.mean_loss;
    rp.guards.push_back({GuardKind::MeanLoss, -1, 1.0, lbar_cap, false, "mean_loss"});
    for (int i = 0; i < n; ++i) {
        const double snap_cap = snap.have_stage2 ? snap.losses_stage2[i]
                                                 : std::numeric_limits<double>::infinity();
        if (i == b.idx_loss_max) {
            // Worst client: bounded by its stage-2 level only (it is the objective).
            if (snap.have_stage2)
                rp.guards.push_back({GuardKind::ClientLoss, i, 1.0, snap_cap, true,
                                     "snapshot_loss_" + std::to_string(i)});
        } else {
            if (snap.have_stage2)
                rp.guards.push_back({GuardKind::ClientLoss, i, 1.0, snap_cap, true,
                                     "snapshot_loss_" + std::to_string(i)});
            rp.guards.push_back({GuardKind::ClientLoss, i, 1.0, r.reports[i].loss, false,
                                 "client_loss_" + std::to_string(i)});
        }
    }
    if (act.bias_max)
        rp.guards.push_back({GuardKind::ClientBias, b.idx_bias_max, 1.0,
                             b.tempered_bias[b.idx_bias_max], false, "bias_max"});
    if (act.acc_dev)
        rp.guards.push_back({GuardKind::AccDevSigned, b.idx_acc_dev, b.sign_acc_dev,
                             b.sign_acc_dev * (b.tempered_error[b.idx_acc_dev] - mean_e), false,
                             "acc_dev"});
    if (act.bias_dev)
        rp.guards.push_back({GuardKind::BiasDevSigned, b.idx_bias_dev, b.sign_bias_dev,
                             b.sign_bias_dev * (b.tempered_bias[b.idx_bias_dev] - mean_t), false,
                             "bias_dev"});
    trainer_detail::add_budget_guards(rp.guards, b, r, eps);
    return rp;
}

// ---------------------------------------------------------------------------
// Training loop

struct RoundLog {
    int round = 0;
    int stage = 0;
    std::string branch;
    double eta = 0.0;
    bool accepted = false;
    bool stationary = false;
    bool solver_fallback = false;
    FederationReport train_report;
    std::vector<std::string> active_constraints;
    std::vector<GuardRecord> guards;
    std::optional<FederationReport> test_report;
};

struct TrainResult {
    ModelParams params;
    std::vector<RoundLog> logs;
    StageSnapshot snapshot;
    std::optional<ModelParams> params_stage1_end;
    std::optional<ModelParams> params_stage2_end;
    FederationReport final_test;
};

using Corruptor = std::function<void(GradientBundle&)>;

/// The three-stage anti-Matthew training loop over full-batch FedSGD
/// rounds. `corrupt` (when given) rewrites per-client gradients before the
/// server aggregates, mirroring Byzantine clients.
inline TrainResult train(const FederationData& fed, const Budgets& eps, const StagePlan& plan,
                         BiasMetric metric, std::uint64_t seed, const Corruptor& corrupt = {}) {
    plan.validate();
    fed.validate();
    TrainResult result;
    ModelParams params = init_params(plan.arch, fed.feature_dim, seed, plan.hidden_units);
    StageSnapshot snap;

    const int total = plan.total_rounds();
    for (int round = 0; round < total; ++round) {
        const int stage = round < plan.rounds_stage1 ? 1
                        : round < plan.rounds_stage1 + plan.rounds_stage2 ? 2 : 3;
        if (stage >= 2 && !snap.have_stage1) {
            std::vector<double> losses;
            for (const auto& c : fed.clients) losses.push_back(bce_loss(params, c));
            snap.mean_loss_stage1 = 0.0;
            for (double l : losses) snap.mean_loss_stage1 += l / losses.size();
            snap.have_stage1 = true;
            result.params_stage1_end = params;
        }
        if (stage == 3 && !snap.have_stage2) {
            snap.losses_stage2.clear();
            for (const auto& c : fed.clients) snap.losses_stage2.push_back(bce_loss(params, c));
            snap.mean_loss_stage2 = 0.0;
            for (double l : snap.losses_stage2) snap.mean_loss_stage2 += l / snap.losses_stage2.size();
            snap.have_stage2 = true;
            result.params_stage2_end = params;
        }

        auto collected = collect_round(params, fed, metric, plan);
        if (corrupt) corrupt(collected.bundle);
        collected.bundle.finalize(collected.report, plan.normalize_gradients);

        RoundPlan rp;
        switch (stage) {
            case 1: rp = stage1_direction(collected.bundle, collected.report, eps, plan); break;
            case 2: rp = stage2_direction(collected.bundle, collected.report, eps, plan, snap); break;
            default: rp = stage3_direction(collected.bundle, collected.report, eps, plan, snap); break;
        }

        RoundLog log;
        log.round = round;
        log.stage = stage;
        log.branch = rp.branch;
        log.active_constraints = rp.active_constraints;
        log.train_report = collected.report;
        log.solver_fallback = rp.dir.infeasible_fallback;

        if (rp.stationary) {
            log.stationary = true;
            log.branch = "stage3:stationary";
            log.test_report = evaluate(params, fed, metric);
            result.logs.push_back(std::move(log));
            break;
        }

        auto ls = line_search(params, rp.dir.d, rp.guards, plan, fed, metric);
        params = ls.params;
        log.eta = ls.eta;
        log.accepted = ls.accepted;
        log.guards = ls.records;
        const bool stage_end = round + 1 == total ||
                               round + 1 == plan.rounds_stage1 ||
                               round + 1 == plan.rounds_stage1 + plan.rounds_stage2;
        if (plan.log_every > 0 && (round % plan.log_every == 0 || stage_end))
            log.test_report = evaluate(params, fed, metric);
        result.logs.push_back(std::move(log));
    }
    if (!snap.have_stage1) {
        std::vector<double> losses;
        for (const auto& c : fed.clients) losses.push_back(bce_loss(params, c));
        snap.mean_loss_stage1 = 0.0;
        for (double l : losses) snap.mean_loss_stage1 += l / losses.size();
        snap.have_stage1 = true;
    }
    if (!snap.have_stage2) {
        snap.losses_stage2.clear();
        for (const auto& c : fed.clients) snap.losses_stage2.push_back(bce_loss(params, c));
        snap.mean_loss_stage2 = 0.0;
        for (double l : snap.losses_stage2) snap.mean_loss_stage2 += l / snap.losses_stage2.size();
        snap.have_stage2 = true;
    }
    result.params = params;
    result.snapshot = snap;
    result.final_test = evaluate(params, fed, metric);
    return result;
}

} // namespace amfl
