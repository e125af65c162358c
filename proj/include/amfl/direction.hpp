#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace amfl {

struct NormalizeResult {
    Eigen::VectorXd v;
    bool zero_norm = false;
};

/// g / ||g||_2, with vectors of norm <= 1e-12 passed through untouched.
inline NormalizeResult normalize(const Eigen::VectorXd& g) {
    if (!g.allFinite()) throw std::invalid_argument("normalize: non-finite input");
    const double n = g.norm();
    if (n <= 1e-12) return {g, true};
    return {g / n, false};
}

struct SimplexWeights {
    Eigen::VectorXd alpha;
};

struct MinNormResult {
    SimplexWeights weights;
    Eigen::VectorXd d;      // -G' alpha
    double norm = 0.0;      // ||G' alpha||
    double gap = 0.0;       // final Frank-Wolfe duality gap
    int iterations = 0;
};

/// Min-norm point of the convex hull of `grads` (the MGDA subproblem),
/// via Frank-Wolfe with away steps and the analytic two-point line
/// search. Stops at duality gap 1e-10 or 1000 iterations.
inline MinNormResult min_norm_direction(const std::vector<Eigen::VectorXd>& grads) {
    if (grads.empty()) throw std::invalid_argument("min_norm_direction: no gradients");
    const int k = static_cast<int>(grads.size());
    for (const auto& g : grads)
        if (!g.allFinite()) throw std::invalid_argument("min_norm_direction: non-finite gradient");

    Eigen::MatrixXd gram(k, k);
    for (int i = 0; i < k; ++i)
        for (int j = i; j < k; ++j) gram(i, j) = gram(j, i) = grads[i].dot(grads[j]);

    Eigen::VectorXd alpha = Eigen::VectorXd::Constant(k, 1.0 / k);
    constexpr double tol = 1e-10;
    constexpr int max_iter = 1000;
    int it = 0;
    double gap = 0.0;
    for (; it < max_iter; ++it) {
        Eigen::VectorXd u = gram * alpha;          // u_i = <G alpha, g_i>
        const double uu = alpha.dot(u);
        int fw = 0;
        for (int i = 1; i < k; ++i)
            if (u[i] < u[fw]) fw = i;
        int away = -1;
        for (int i = 0; i < k; ++i)
            if (alpha[i] > 1e-16 && (away < 0 || u[i] > u[away])) away = i;
        const double gap_fw = uu - u[fw];
        const double gap_away = (away >= 0) ? u[away] - uu : 0.0;
        gap = gap_fw;
        if (gap_fw <= tol) break;
        if (gap_fw >= gap_away || away < 0) {
            const double denom = uu - 2.0 * u[fw] + gram(fw, fw);
            double gamma = (denom <= 0.0) ? 1.0 : std::min(1.0, std::max(0.0, gap_fw / denom));
            alpha *= (1.0 - gamma);
            alpha[fw] += gamma;
        } else {
            const double denom = uu - 2.0 * u[away] + gram(away, away);
            const double gamma_max = alpha[away] / (1.0 - alpha[away] + 1e-300);
            double gamma = (denom <= 0.0) ? gamma_max
                                          : std::min(gamma_max, std::max(0.0, gap_away / denom));
            alpha *= (1.0 + gamma);
            alpha[away] -= gamma;
        }
        for (int i = 0; i < k; ++i) alpha[i] = std::max(alpha[i], 0.0);
        alpha /= alpha.sum();
    }
    MinNormResult res;
    res.weights.alpha = alpha;
    res.iterations = it;
    res.gap = gap;
    Eigen::VectorXd u = Eigen::VectorXd::Zero(grads.front().size());
    for (int i = 0; i < k; ++i) u += alpha[i] * grads[i];
    res.norm = u.norm();
    res.d = -u;
    return res;
}

namespace lp_detail {

/// Dense two-phase primal simplex with Bland's rule on
///   min c'x  s.t.  A x = b (b >= 0), x >= 0.
struct StandardLp {
    Eigen::MatrixXd A;
    Eigen::VectorXd b;
    Eigen::VectorXd c;
};

struct StandardLpResult {
    Eigen::VectorXd x;
    double objective = 0.0;
    bool feasible = false;
    bool hit_iteration_cap = false;
    int iterations = 0;
};

inline StandardLpResult solve_standard(const StandardLp& lp, int iteration_cap) {
    constexpr double eps = 1e-11;
    const int m = static_cast<int>(lp.A.rows());
    const int n = static_cast<int>(lp.A.cols());

    // Tableau over [x | artificials | rhs]; artificials form the initial basis.
    Eigen::MatrixXd T(m, n + m + 1);
    T.leftCols(n) = lp.A;
    T.middleCols(n, m) = Eigen::MatrixXd::Identity(m, m);
    T.col(n + m) = lp.b;
    std::vector<int> basis(m);
    for (int i = 0; i < m; ++i) basis[i] = n + i;

    StandardLpResult res;

    auto pivot = [&](int row, int col) {
        T.row(row) /= T(row, col);
        for (int i = 0; i < m; ++i)
            if (i != row && std::abs(T(i, col)) > 0.0) T.row(i) -= T(i, col) * T.row(row);
        basis[row] = col;
    };

    // One simplex phase under Bland's rule: entering = lowest-index column
    // with negative reduced cost, leaving = lowest basis index among ties.
    auto run_phase = [&](const Eigen::VectorXd& cost, int allowed_cols) -> bool {
        while (true) {
            if (res.iterations++ >= iteration_cap) {
                res.hit_iteration_cap = true;
                return false;
            }
            Eigen::VectorXd dual = Eigen::VectorXd::Zero(m);
            for (int i = 0; i < m; ++i) dual[i] = cost[basis[i]];
            int enter = -1;
            for (int j = 0; j < allowed_cols; ++j) {
                const double reduced = cost[j] - dual.dot(T.col(j));
                if (reduced < -eps) {
                    enter = j;
                    break;   // Bland: lowest index
                }
            }
            if (enter < 0) return true;   // optimal
            int leave = -1;
            double best_ratio = std::numeric_limits<double>::infinity();
            for (int i = 0; i < m; ++i) {
                if (T(i, enter) > eps) {
                    const double ratio = T(i, n + m) / T(i, enter);
                    if (ratio < best_ratio - eps ||
                        (ratio < best_ratio + eps && (leave < 0 || basis[i] < basis[leave]))) {
                        best_ratio = ratio;
                        leave = i;
                    }
                }
            }
            if (leave < 0) return true;   // unbounded; cannot happen over the simplex
            pivot(leave, enter);
        }
    };

    // Phase 1: minimize the sum of artificials.
    Eigen::VectorXd c1 = Eigen::VectorXd::Zero(n + m);
    c1.tail(m).setOnes();
    if (!run_phase(c1, n + m)) return res;
    double phase1 = 0.0;
    for (int i = 0; i < m; ++i)
        if (basis[i] >= n) phase1 += T(i, n + m);
    if (phase1 > 1e-8) return res;   // infeasible

    // Drive any residual artificial out of the basis if a real pivot exists.
    for (int i = 0; i < m; ++i) {
        if (basis[i] < n) continue;
        int col = -1;
        for (int j = 0; j < n; ++j)
            if (std::abs(T(i, j)) > eps) {
                col = j;
                break;
            }
        if (col >= 0) pivot(i, col);
    }

    // Phase 2 over the real columns only.
    Eigen::VectorXd c2 = Eigen::VectorXd::Zero(n + m);
    c2.head(n) = lp.c;
    if (!run_phase(c2, n)) return res;

    res.x = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < m; ++i)
        if (basis[i] < n) res.x[basis[i]] = T(i, n + m);
    res.objective = lp.c.dot(res.x);
    res.feasible = true;
    return res;
}

} // namespace lp_detail

struct DirectionResult {
    SimplexWeights weights;      // over the hull (or the fallback set when flagged)
    Eigen::VectorXd d;
    double objective = 0.0;      // d . objective_grad
    bool infeasible_fallback = false;
    bool hit_iteration_cap = false;
};

/// Constrained common-descent direction: minimize d.objective_grad over
/// d = -sum alpha_i hull_i with alpha on the simplex, subject to
/// d.c <= 0 for every constraint gradient. Solved exactly by a dense
/// two-phase simplex with Bland's rule; an infeasible program falls back
/// to the min-norm direction over {objective} + constraints, which
/// guarantees every dot product is non-positive (or d = 0).
inline DirectionResult constrained_direction(const Eigen::VectorXd& objective_grad,
                                             const std::vector<Eigen::VectorXd>& constraint_grads,
                                             const std::vector<Eigen::VectorXd>& hull) {
    if (hull.empty()) throw std::invalid_argument("constrained_direction: empty hull");
    if (!objective_grad.allFinite()) throw std::invalid_argument("constrained_direction: non-finite objective");
    for (const auto& c : constraint_grads)
        if (!c.allFinite()) throw std::invalid_argument("constrained_direction: non-finite constraint");
    for (const auto& h : hull)
        if (!h.allFinite()) throw std::invalid_argument("constrained_direction: non-finite hull vector");

    const int k = static_cast<int>(hull.size());
    const int ncons = static_cast<int>(constraint_grads.size());

    // In alpha space: maximize sum_i alpha_i (h_i.obj)
    //   s.t. sum_i alpha_i (h_i.c_j) >= 0, sum alpha = 1, alpha >= 0.
    // Standard form rows: per-constraint surplus rows + the simplex equality.
    lp_detail::StandardLp lp;
    const int nvars = k + ncons;   // alpha then surplus
    lp.A = Eigen::MatrixXd::Zero(ncons + 1, nvars);
    lp.b = Eigen::VectorXd::Zero(ncons + 1);
    lp.c = Eigen::VectorXd::Zero(nvars);
    for (int j = 0; j < ncons; ++j) {
        for (int i = 0; i < k; ++i) lp.A(j, i) = hull[i].dot(constraint_grads[j]);
        lp.A(j, k + j) = -1.0;
    }
    lp.A.row(ncons).head(k).setOnes();
    lp.b[ncons] = 1.0;
    for (int i = 0; i < k; ++i) lp.c[i] = -hull[i].dot(objective_grad);   // minimize -b'alpha

    const int cap = 10 * (k + ncons) * (k + ncons) + 50;
    auto sol = lp_detail::solve_standard(lp, cap);

    auto fallback = [&]() {
        std::vector<Eigen::VectorXd> set;
        set.push_back(objective_grad);
        for (const auto& c : constraint_grads) set.push_back(c);
        auto mn = min_norm_direction(set);
        DirectionResult r;
        r.weights = mn.weights;
        r.d = mn.d;
        r.objective = mn.d.dot(objective_grad);
        r.infeasible_fallback = true;
        r.hit_iteration_cap = sol.hit_iteration_cap;
        return r;
    };

    if (!sol.feasible) return fallback();

    Eigen::VectorXd alpha = sol.x.head(k);
    for (int i = 0; i < k; ++i) alpha[i] = std::max(alpha[i], 0.0);
    const double s = alpha.sum();
    if (s <= 0.0) return fallback();
    alpha /= s;

    Eigen::VectorXd d = Eigen::VectorXd::Zero(hull.front().size());
    for (int i = 0; i < k; ++i) d -= alpha[i] * hull[i];
    for (const auto& c : constraint_grads)
        if (d.dot(c) > 1e-8) return fallback();

    DirectionResult r;
    r.weights.alpha = alpha;
    r.d = d;
    r.objective = d.dot(objective_grad);
    return r;
}

} // namespace amfl
