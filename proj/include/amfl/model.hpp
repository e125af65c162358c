#pragma once

#include "amfl/data.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

namespace amfl {

enum class Architecture { Linear, OneHidden };

enum class BiasMetric { TPSD, APSD };

inline const char* to_string(BiasMetric m) { return m == BiasMetric::TPSD ? "tpsd" : "apsd"; }

constexpr double kProbClamp = 1e-7;

/// Logistic hypothesis: a linear logit or one tanh hidden layer feeding a
/// single output logit. Parameters flatten layer by layer, weights
/// row-major then bias; that order is fixed so gradient vectors and
/// checkpoints are reproducible.
struct ModelParams {
    Architecture arch = Architecture::Linear;
    int input_dim = 0;
    int hidden_units = 0;  // 0 for linear
    Eigen::MatrixXd W1;    // hidden x input (or 1 x input when linear)
    Eigen::VectorXd b1;
    Eigen::MatrixXd W2;    // 1 x hidden (unused when linear)
    Eigen::VectorXd b2;

    static ModelParams linear(int input_dim) {
        ModelParams p;
        p.arch = Architecture::Linear;
        p.input_dim = input_dim;
        p.W1 = Eigen::MatrixXd::Zero(1, input_dim);
        p.b1 = Eigen::VectorXd::Zero(1);
        return p;
    }

    static ModelParams one_hidden(int input_dim, int hidden_units = 16) {
        ModelParams p;
        p.arch = Architecture::OneHidden;
        p.input_dim = input_dim;
        p.hidden_units = hidden_units;
        p.W1 = Eigen::MatrixXd::Zero(hidden_units, input_dim);
        p.b1 = Eigen::VectorXd::Zero(hidden_units);
        p.W2 = Eigen::MatrixXd::Zero(1, hidden_units);
        p.b2 = Eigen::VectorXd::Zero(1);
        return p;
    }

    int dim() const {
        if (arch == Architecture::Linear) return input_dim + 1;
        return hidden_units * input_dim + hidden_units + hidden_units + 1;
    }

    Eigen::VectorXd flatten() const {
        Eigen::VectorXd v(dim());
        Eigen::Index k = 0;
        for (Eigen::Index r = 0; r < W1.rows(); ++r)
            for (Eigen::Index c = 0; c < W1.cols(); ++c) v[k++] = W1(r, c);
        for (Eigen::Index r = 0; r < b1.size(); ++r) v[k++] = b1[r];
        if (arch == Architecture::OneHidden) {
            for (Eigen::Index c = 0; c < W2.cols(); ++c) v[k++] = W2(0, c);
            v[k++] = b2[0];
        }
        return v;
    }

    void unflatten(const Eigen::VectorXd& v) {
        if (v.size() != dim()) throw std::invalid_argument("parameter vector size mismatch");
        Eigen::Index k = 0;
        for (Eigen::Index r = 0; r < W1.rows(); ++r)
            for (Eigen::Index c = 0; c < W1.cols(); ++c) W1(r, c) = v[k++];
        for (Eigen::Index r = 0; r < b1.size(); ++r) b1[r] = v[k++];
        if (arch == Architecture::OneHidden) {
            for (Eigen::Index c = 0; c < W2.cols(); ++c) W2(0, c) = v[k++];
            b2[0] = v[k++];
        }
    }

    ModelParams with_step(const Eigen::VectorXd& delta) const {
        ModelParams out = *this;
        out.unflatten(flatten() + delta);
        return out;
    }
};

/// Uniform [-0.01, 0.01] initialization; all training methods share it.
inline ModelParams init_params(Architecture arch, int input_dim, std::uint64_t seed,
                               int hidden_units = 16) {
    ModelParams p = (arch == Architecture::Linear) ? ModelParams::linear(input_dim)
                                                   : ModelParams::one_hidden(input_dim, hidden_units);
    auto rng = detail::seeded_rng(seed, 0x1317ULL);
    std::uniform_real_distribution<double> u(-0.01, 0.01);
    Eigen::VectorXd v(p.dim());
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = u(rng);
    p.unflatten(v);
    return p;
}

struct PredictionBatch {
    Eigen::VectorXd probabilities;  // clamped to [1e-7, 1-1e-7]
    Eigen::VectorXi hard_labels;    // 1 iff p >= 0.5
};

namespace model_detail {

inline Eigen::VectorXd logits(const ModelParams& p, const Eigen::MatrixXd& X) {
    if (X.cols() != p.input_dim) throw std::invalid_argument("feature dimension mismatch");
    if (p.arch == Architecture::Linear)
        return (X * p.W1.row(0).transpose()).array() + p.b1[0];
    Eigen::MatrixXd H = ((X * p.W1.transpose()).rowwise() + p.b1.transpose()).array().tanh();
    return (H * p.W2.row(0).transpose()).array() + p.b2[0];
}

inline Eigen::VectorXd sigmoid(const Eigen::VectorXd& z) {
    return 1.0 / (1.0 + (-z.array()).exp());
}

/// Accumulates sum_i w_i * d(logit_i)/d(theta) in flattened order; the
/// common backward pass behind every analytic gradient here.
inline Eigen::VectorXd weighted_logit_gradient(const ModelParams& p, const Eigen::MatrixXd& X,
                                               const Eigen::VectorXd& w) {
    if (p.arch == Architecture::Linear) {
        Eigen::VectorXd g(p.dim());
        g.head(p.input_dim) = X.transpose() * w;
        g[p.input_dim] = w.sum();
        return g;
    }
    Eigen::MatrixXd pre = (X * p.W1.transpose()).rowwise() + p.b1.transpose();
    Eigen::MatrixXd H = pre.array().tanh();
    Eigen::MatrixXd dH = 1.0 - H.array().square();           // n x h
    // dz/dW2 = H, dz/db2 = 1, dz/dpre = W2 .* dH
    Eigen::MatrixXd dpre = dH.array().rowwise() * p.W2.row(0).array();  // n x h
    Eigen::MatrixXd wdpre = dpre.array().colwise() * w.array();         // n x h
    Eigen::VectorXd g(p.dim());
    Eigen::Index k = 0;
    Eigen::MatrixXd gW1 = wdpre.transpose() * X;             // h x d
    for (Eigen::Index r = 0; r < gW1.rows(); ++r)
        for (Eigen::Index c = 0; c < gW1.cols(); ++c) g[k++] = gW1(r, c);
    Eigen::VectorXd gb1 = wdpre.colwise().sum().transpose();
    for (Eigen::Index r = 0; r < gb1.size(); ++r) g[k++] = gb1[r];
    Eigen::VectorXd gW2 = H.transpose() * w;
    for (Eigen::Index r = 0; r < gW2.size(); ++r) g[k++] = gW2[r];
    g[k++] = w.sum();
    return g;
}

} // namespace model_detail

inline PredictionBatch predict(const ModelParams& p, const ClientDataset& ds) {
    Eigen::VectorXd prob = model_detail::sigmoid(model_detail::logits(p, ds.X));
    PredictionBatch out;
    out.probabilities = prob.array().max(kProbClamp).min(1.0 - kProbClamp);
    out.hard_labels = (out.probabilities.array() >= 0.5).cast<int>();
    return out;
}

inline double bce_loss(const ModelParams& p, const ClientDataset& ds) {
    if (ds.size() == 0) throw std::invalid_argument("bce_loss: empty dataset");
    Eigen::VectorXd prob = predict(p, ds).probabilities;
    Eigen::ArrayXd yd = ds.y.cast<double>().array();
    return -(yd * prob.array().log() + (1.0 - yd) * (1.0 - prob.array()).log()).mean();
}

inline Eigen::VectorXd loss_gradient(const ModelParams& p, const ClientDataset& ds) {
    if (ds.size() == 0) throw std::invalid_argument("loss_gradient: empty dataset");
    Eigen::VectorXd prob = model_detail::sigmoid(model_detail::logits(p, ds.X));
    Eigen::VectorXd w = (prob - ds.y.cast<double>()) / static_cast<double>(ds.size());
    return model_detail::weighted_logit_gradient(p, ds.X, w);
}

/// Group rates for the differentiable bias surrogate. With temperature 1
/// these are the soft rates proper (mean predicted probability); smaller
/// temperatures sharpen sigma(z/T) towards the hard indicator rates.
struct SoftRates {
    std::vector<int> groups;         // eligible group ids
    std::vector<double> rates;
    bool degenerate = false;         // fewer than 2 eligible groups
};

namespace model_detail {

inline SoftRates soft_rates(const ModelParams& p, const ClientDataset& ds, BiasMetric metric,
                            int group_count, double temperature) {
    Eigen::VectorXd z = logits(p, ds.X) / temperature;
    Eigen::VectorXd prob = sigmoid(z);
    SoftRates out;
    for (int g = 0; g < group_count; ++g) {
        double acc = 0.0;
        int count = 0;
        for (int i = 0; i < ds.size(); ++i) {
            if (ds.a[i] != g) continue;
            if (metric == BiasMetric::TPSD) {
                if (ds.y[i] != 1) continue;
                acc += prob[i];
            } else {
                acc += ds.y[i] == 1 ? prob[i] : 1.0 - prob[i];
            }
            ++count;
        }
        if (count > 0) {
            out.groups.push_back(g);
            out.rates.push_back(acc / count);
        }
    }
    out.degenerate = out.groups.size() < 2;
    return out;
}

inline double rate_std(const std::vector<double>& rates) {
    const double m = static_cast<double>(rates.size());
    double mu = 0.0;
    for (double r : rates) mu += r;
    mu /= m;
    double ss = 0.0;
    for (double r : rates) ss += (r - mu) * (r - mu);
    return std::sqrt(ss / m);
}

} // namespace model_detail

struct SoftBiasValue {
    double value = 0.0;
    bool degenerate = false;
};

inline SoftBiasValue soft_bias(const ModelParams& p, const ClientDataset& ds, BiasMetric metric,
                               int group_count = 2, double temperature = 1.0) {
    auto sr = model_detail::soft_rates(p, ds, metric, group_count, temperature);
    if (sr.degenerate) return {0.0, true};
    return {model_detail::rate_std(sr.rates), false};
}

/// Analytic gradient of soft_bias. At the sqrt kink (all rates equal) the
/// zero subgradient is returned with the degenerate flag set.
inline std::pair<Eigen::VectorXd, bool>
soft_bias_gradient(const ModelParams& p, const ClientDataset& ds, BiasMetric metric,
                   int group_count = 2, double temperature = 1.0) {
    Eigen::VectorXd zero = Eigen::VectorXd::Zero(p.dim());
    auto sr = model_detail::soft_rates(p, ds, metric, group_count, temperature);
    if (sr.degenerate) return {zero, true};
    const double m = static_cast<double>(sr.rates.size());
    double mu = 0.0;
    for (double r : sr.rates) mu += r;
    mu /= m;
    const double f = model_detail::rate_std(sr.rates);
    if (f < 1e-12) return {zero, true};

    Eigen::VectorXd z = model_detail::logits(p, ds.X) / temperature;
    Eigen::VectorXd prob = model_detail::sigmoid(z);
    Eigen::VectorXd sig = (prob.array() * (1.0 - prob.array())) / temperature;

    // df/dtheta = (1/(f m)) sum_g (r_g - mu) dr_g/dtheta, folded into one
    // weighted backward pass.
    Eigen::VectorXd w = Eigen::VectorXd::Zero(ds.size());
    for (size_t gi = 0; gi < sr.groups.size(); ++gi) {
        const int g = sr.groups[gi];
        int count = 0;
        for (int i = 0; i < ds.size(); ++i) {
            if (ds.a[i] != g) continue;
            if (metric == BiasMetric::TPSD && ds.y[i] != 1) continue;
            ++count;
        }
        const double coeff = (sr.rates[gi] - mu) / (f * m * count);
        for (int i = 0; i < ds.size(); ++i) {
            if (ds.a[i] != g) continue;
            if (metric == BiasMetric::TPSD) {
                if (ds.y[i] != 1) continue;
                w[i] += coeff * sig[i];
            } else {
                w[i] += coeff * (ds.y[i] == 1 ? 1.0 : -1.0) * sig[i];
            }
        }
    }
    return {model_detail::weighted_logit_gradient(p, ds.X, w), false};
}

inline double accuracy(const ModelParams& p, const ClientDataset& ds) {
    auto pred = predict(p, ds);
    return (pred.hard_labels.array() == ds.y.array()).cast<double>().mean();
}

/// Differentiable misclassification surrogate: 1 - mean soft accuracy at
/// the given temperature. Its hard limit (T -> 0) is the error rate, so
/// deviations of this quantity track accuracy deviations.
inline double soft_error(const ModelParams& p, const ClientDataset& ds, double temperature = 1.0) {
    Eigen::VectorXd prob = model_detail::sigmoid(model_detail::logits(p, ds.X) / temperature);
    Eigen::ArrayXd yd = ds.y.cast<double>().array();
    return 1.0 - (yd * prob.array() + (1.0 - yd) * (1.0 - prob.array())).mean();
}

inline Eigen::VectorXd soft_error_gradient(const ModelParams& p, const ClientDataset& ds,
                                           double temperature = 1.0) {
    Eigen::VectorXd z = model_detail::logits(p, ds.X) / temperature;
    Eigen::VectorXd prob = model_detail::sigmoid(z);
    Eigen::VectorXd w(ds.size());
    for (int i = 0; i < ds.size(); ++i) {
        const double sig = prob[i] * (1.0 - prob[i]) / temperature;
        w[i] = -(2.0 * ds.y[i] - 1.0) * sig / ds.size();
    }
    return model_detail::weighted_logit_gradient(p, ds.X, w);
}

/// Checkpoint format: "<arch> <input_dim> [hidden]" header line, then one
/// decimal parameter per line in flattening order.
inline void save_checkpoint(const ModelParams& p, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    if (p.arch == Architecture::Linear)
        out << "linear " << p.input_dim << "\n";
    else
        out << "one-hidden " << p.input_dim << " " << p.hidden_units << "\n";
    Eigen::VectorXd v = p.flatten();
    char buf[64];
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", v[i]);
        out << buf << "\n";
    }
}

inline ModelParams load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string tag;
    in >> tag;
    ModelParams p;
    if (tag == "linear") {
        int d;
        in >> d;
        p = ModelParams::linear(d);
    } else if (tag == "one-hidden") {
        int d, h;
        in >> d >> h;
        p = ModelParams::one_hidden(d, h);
    } else {
        throw std::runtime_error("unknown checkpoint architecture tag: " + tag);
    }
    Eigen::VectorXd v(p.dim());
    for (Eigen::Index i = 0; i < v.size(); ++i)
        if (!(in >> v[i])) throw std::runtime_error("checkpoint truncated: " + path);
    p.unflatten(v);
    return p;
}

} // namespace amfl
