#pragma once

// Full-covariance Gaussian mixtures fitted by EM, with BIC selection of the
// component count and posterior cluster assignment.

#include "emdtrade/common.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace emdtrade::gmm {

struct GmmConfig {
    int g_min = 1;
    int g_max = 4;
    double tol = 1e-6;
    int max_iters = 500;
    int restarts = 10;
    double ridge = 1e-6;
    std::uint64_t seed = 0;
    std::size_t min_cluster_size = 0;  // 0 selects max(50, 5 d)

    std::size_t effective_min_cluster_size(std::size_t d) const {
        return min_cluster_size ? min_cluster_size : std::max<std::size_t>(50, 5 * d);
    }

    void validate() const {
        if (g_min < 1 || g_max < g_min) throw std::invalid_argument("gmm: need 1 <= g_min <= g_max");
        if (!(tol > 0.0) || max_iters < 1 || restarts < 1 || !(ridge > 0.0))
            throw std::invalid_argument("gmm: tol, max_iters, restarts and ridge must be positive");
    }
};

struct GmmModel {
    std::vector<double> weights;
    std::vector<Eigen::VectorXd> means;
    std::vector<Eigen::MatrixXd> covariances;
    double log_likelihood = -std::numeric_limits<double>::infinity();
    long n_params = 0;
    bool converged = false;
    int iterations = 0;
    std::vector<double> ll_trace;  // log-likelihood after each E-step of the kept restart

    std::size_t components() const { return weights.size(); }
    std::size_t dim() const { return means.empty() ? 0 : static_cast<std::size_t>(means.front().size()); }
};

/// (G-1) + G d + G d(d+1)/2
constexpr long parameter_count(long G, long d) { return (G - 1) + G * d + G * d * (d + 1) / 2; }

/// -2 L + p ln n
inline double bic(double log_likelihood, long n_params, std::size_t n) {
    return -2.0 * log_likelihood + static_cast<double>(n_params) * std::log(static_cast<double>(n));
}

/// Raised when a fit cannot produce any usable model.
struct FitError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline Eigen::MatrixXd to_eigen(const RowMatrix& x) {
    Eigen::MatrixXd m(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = x(r, c);
    return m;
}

/// log pi_g + log phi(x_i; mu_g, Sigma_g) for every row and component.
/// Returns nullopt when a covariance is not positive definite.
inline std::optional<Eigen::MatrixXd> log_joint(const Eigen::MatrixXd& X, const GmmModel& m) {
    const auto n = X.rows();
    const auto d = X.cols();
    const auto G = static_cast<Eigen::Index>(m.components());
    Eigen::MatrixXd out(n, G);
    const double log2pi = std::log(2.0 * std::numbers::pi);
    for (Eigen::Index g = 0; g < G; ++g) {
        Eigen::LLT<Eigen::MatrixXd> llt(m.covariances[static_cast<std::size_t>(g)]);
        if (llt.info() != Eigen::Success) return std::nullopt;
        const Eigen::MatrixXd L = llt.matrixL();
        double logdet = 0.0;
        for (Eigen::Index i = 0; i < d; ++i) {
            if (!(L(i, i) > 0.0)) return std::nullopt;
            logdet += 2.0 * std::log(L(i, i));
        }
        Eigen::MatrixXd centred = (X.rowwise() - m.means[static_cast<std::size_t>(g)].transpose()).transpose();
        L.triangularView<Eigen::Lower>().solveInPlace(centred);
        const Eigen::VectorXd quad = centred.colwise().squaredNorm().transpose();
        const double base = std::log(m.weights[static_cast<std::size_t>(g)]) - 0.5 * (static_cast<double>(d) * log2pi + logdet);
        out.col(g) = (-0.5 * quad).array() + base;
    }
    return out;
}

/// Row-wise log-sum-exp with max subtraction; writes normalised
/// responsibilities into `resp` and returns the total log-likelihood.
inline double normalise(const Eigen::MatrixXd& logp, Eigen::MatrixXd& resp) {
    resp.resize(logp.rows(), logp.cols());
    double total = 0.0;
    for (Eigen::Index i = 0; i < logp.rows(); ++i) {
        const double mx = logp.row(i).maxCoeff();
        double s = 0.0;
        for (Eigen::Index g = 0; g < logp.cols(); ++g) {
            resp(i, g) = std::exp(logp(i, g) - mx);
            s += resp(i, g);
        }
        resp.row(i) /= s;
        total += mx + std::log(s);
    }
    return total;
}

inline Eigen::MatrixXd regularised(Eigen::MatrixXd S, double ridge) {
    const auto d = S.rows();
    S = 0.5 * (S + S.transpose());
    const double tr = S.trace();
    const double bump = ridge * (tr > 0.0 ? tr / static_cast<double>(d) : 1.0);
    S.diagonal().array() += bump;
    return S;
}

/// k-means++ style seeding of means; pooled ML covariance; uniform weights.
inline GmmModel initialise(const Eigen::MatrixXd& X, int G, double ridge, std::mt19937_64& rng) {
    const auto n = X.rows();
    GmmModel m;
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    m.means.push_back(X.row(pick(rng)).transpose());
    Eigen::VectorXd d2 = (X.rowwise() - m.means[0].transpose()).rowwise().squaredNorm();
    for (int g = 1; g < G; ++g) {
        const double total = d2.sum();
        Eigen::Index chosen = 0;
        if (total > 0.0) {
            double u = unit(rng) * total;
            chosen = n - 1;
            for (Eigen::Index i = 0; i < n; ++i) {
                u -= d2(i);
                if (u < 0.0) {
                    chosen = i;
                    break;
                }
            }
        } else {
            chosen = pick(rng);
        }
        m.means.push_back(X.row(chosen).transpose());
        d2 = d2.cwiseMin((X.rowwise() - m.means.back().transpose()).rowwise().squaredNorm());
    }
    const Eigen::RowVectorXd mu = X.colwise().mean();
    const Eigen::MatrixXd centred = X.rowwise() - mu;
    const Eigen::MatrixXd pooled = regularised((centred.transpose() * centred) / static_cast<double>(n), ridge);
    m.covariances.assign(static_cast<std::size_t>(G), pooled);
    m.weights.assign(static_cast<std::size_t>(G), 1.0 / G);
    return m;
}

/// One EM run. nullopt when the restart degenerates.
inline std::optional<GmmModel> run_em(const Eigen::MatrixXd& X, int G, const GmmConfig& cfg, std::mt19937_64& rng) {
    const auto n = X.rows();
    const auto d = X.cols();
    GmmModel m = initialise(X, G, cfg.ridge, rng);
    const double min_weight = 1.0 / (10.0 * static_cast<double>(n));
    Eigen::MatrixXd resp;
    double prev = -std::numeric_limits<double>::infinity();
    for (int it = 1; it <= cfg.max_iters; ++it) {
        auto logp = log_joint(X, m);
        if (!logp) return std::nullopt;
        const double ll = normalise(*logp, resp);
        if (!std::isfinite(ll)) return std::nullopt;
        m.ll_trace.push_back(ll);
        m.log_likelihood = ll;
        m.iterations = it;
        if (it > 1 && std::abs(ll - prev) < cfg.tol) {
            m.converged = true;
            break;
        }
        prev = ll;

        // M-step
        for (int g = 0; g < G; ++g) {
            const auto gi = static_cast<std::size_t>(g);
            const Eigen::VectorXd r = resp.col(g);
            const double Ng = r.sum();
            const double w = Ng / static_cast<double>(n);
            if (!(w >= min_weight)) return std::nullopt;
            m.weights[gi] = w;
            m.means[gi] = (X.transpose() * r) / Ng;
            const Eigen::MatrixXd centred = X.rowwise() - m.means[gi].transpose();
            const Eigen::MatrixXd S = (centred.transpose() * r.asDiagonal() * centred) / Ng;
            m.covariances[gi] = regularised(S, cfg.ridge);
        }
    }
    if (!m.converged) {
        // Iteration cap hit right after an M-step: score the final parameters.
        auto logp = log_joint(X, m);
        if (!logp) return std::nullopt;
        const double ll = normalise(*logp, resp);
        if (!std::isfinite(ll)) return std::nullopt;
        m.ll_trace.push_back(ll);
        m.log_likelihood = ll;
    }
    m.n_params = parameter_count(G, d);
    return m;
}

}  // namespace detail

/// Best of cfg.restarts EM runs by final log-likelihood.
inline GmmModel fit_gmm(const RowMatrix& X, int G, const GmmConfig& cfg) {
    cfg.validate();
    if (G < 1) throw std::invalid_argument("fit_gmm: G must be >= 1");
    if (X.rows() < static_cast<std::size_t>(G)) throw std::invalid_argument("fit_gmm: fewer rows than components");
    if (X.cols() < 1) throw std::invalid_argument("fit_gmm: no columns");
    for (double v : X.data())
        if (!std::isfinite(v)) throw std::invalid_argument("fit_gmm: non-finite input");
    const Eigen::MatrixXd E = detail::to_eigen(X);

    std::optional<GmmModel> best;
    for (int r = 0; r < cfg.restarts; ++r) {
        std::mt19937_64 rng(derive_seed(cfg.seed, {"gmm", std::to_string(G), std::to_string(r)}));
        auto m = detail::run_em(E, G, cfg, rng);
        if (m && (!best || m->log_likelihood > best->log_likelihood)) best = std::move(m);
    }
    if (!best) throw FitError("fit_gmm: all restarts degenerate for G = " + std::to_string(G));
    return *best;
}

struct BicEntry {
    int G = 0;
    std::optional<double> bic;  // empty when the fit failed
    double log_likelihood = 0.0;
    long n_params = 0;
    std::string failure;
};

struct Selection {
    GmmModel best;
    std::vector<BicEntry> bic_by_g;
};

/// Minimum BIC over cfg.g_min..g_max; ties keep the smaller G.
inline Selection select_g_bic(const RowMatrix& X, const GmmConfig& cfg) {
    cfg.validate();
    Selection sel;
    std::optional<double> best_bic;
    for (int G = cfg.g_min; G <= cfg.g_max; ++G) {
        BicEntry e;
        e.G = G;
        try {
            auto m = fit_gmm(X, G, cfg);
            e.log_likelihood = m.log_likelihood;
            e.n_params = m.n_params;
            e.bic = bic(m.log_likelihood, m.n_params, X.rows());
            if (!best_bic || *e.bic < *best_bic) {
                best_bic = e.bic;
                sel.best = std::move(m);
            }
        } catch (const std::exception& ex) {
            e.failure = ex.what();
        }
        sel.bic_by_g.push_back(std::move(e));
    }
    if (!best_bic) throw FitError("select_g_bic: no G in range could be fitted");
    return sel;
}

struct ClusterAssignment {
    std::vector<int> hard_labels;
    Eigen::MatrixXd responsibilities;  // n x G, rows sum to 1
    std::vector<std::size_t> cluster_sizes;
    std::vector<bool> skipped;  // size below the minimum cluster size

    std::vector<std::size_t> members(int g) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < hard_labels.size(); ++i)
            if (hard_labels[i] == g) out.push_back(i);
        return out;
    }
};

inline ClusterAssignment assign_clusters(const GmmModel& model, const RowMatrix& X, std::size_t min_cluster_size = 0) {
    if (X.cols() != model.dim()) throw std::invalid_argument("assign_clusters: dimension mismatch");
    const auto logp = detail::log_joint(detail::to_eigen(X), model);
    if (!logp) throw FitError("assign_clusters: model covariance not positive definite");
    ClusterAssignment a;
    detail::normalise(*logp, a.responsibilities);
    const auto G = model.components();
    a.cluster_sizes.assign(G, 0);
    a.hard_labels.resize(X.rows());
    for (Eigen::Index i = 0; i < a.responsibilities.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index g = 1; g < a.responsibilities.cols(); ++g)
            if (a.responsibilities(i, g) > a.responsibilities(i, best)) best = g;
        a.hard_labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
        ++a.cluster_sizes[static_cast<std::size_t>(best)];
    }
    if (min_cluster_size == 0) min_cluster_size = std::max<std::size_t>(50, 5 * X.cols());
    for (auto s : a.cluster_sizes) a.skipped.push_back(s < min_cluster_size);
    return a;
}

}  // namespace emdtrade::gmm
