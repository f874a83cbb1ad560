#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "relfuse/geometry.hpp"

namespace relfuse {

inline constexpr double kVarianceFloor = 1e-6;

/// Mixture of axis-aligned Gaussians over 3-vectors.
struct DiagGmm {
    std::vector<double> weights;
    std::vector<Vec3> means;
    std::vector<Vec3> variances;

    std::size_t size() const { return weights.size(); }

    /// Log of w_k N(x; mu_k, diag(var_k)) for every component.
    std::vector<double> component_log_terms(const Vec3& x) const {
        static const double log_2pi = std::log(2.0 * kPi);
        std::vector<double> out(size());
        for (std::size_t k = 0; k < size(); ++k) {
            if (weights[k] <= 0.0) {
                out[k] = -std::numeric_limits<double>::infinity();
                continue;
            }
            double l = std::log(weights[k]);
            for (int d = 0; d < 3; ++d) {
                const double diff = x[d] - means[k][d];
                l -= 0.5 * (log_2pi + std::log(variances[k][d]) + diff * diff / variances[k][d]);
            }
            out[k] = l;
        }
        return out;
    }

    static double log_sum_exp(const std::vector<double>& v) {
        const double mx = *std::max_element(v.begin(), v.end());
        if (!std::isfinite(mx)) return mx;
        double s = 0.0;
        for (double x : v) s += std::exp(x - mx);
        return mx + std::log(s);
    }

    double log_density(const Vec3& x) const { return log_sum_exp(component_log_terms(x)); }

    /// Gradient of log_density with respect to x.
    Vec3 grad_log_density(const Vec3& x) const {
        const auto terms = component_log_terms(x);
        const double lse = log_sum_exp(terms);
        Vec3 g = Vec3::Zero();
        for (std::size_t k = 0; k < size(); ++k) {
            if (!std::isfinite(terms[k])) continue;
            const double r = std::exp(terms[k] - lse);
            g -= r * ((x - means[k]).array() / variances[k].array()).matrix();
        }
        return g;
    }
};

/// A DiagGmm with per-component normalizers precomputed, for repeated
/// evaluation of the log-density and its gradient in one pass.
class GmmKernel {
public:
    GmmKernel() = default;
    explicit GmmKernel(const DiagGmm& g) {
        static const double log_2pi = std::log(2.0 * kPi);
        for (std::size_t k = 0; k < g.size(); ++k) {
            if (g.weights[k] <= 0.0) continue;
            double c = std::log(g.weights[k]);
            for (int d = 0; d < 3; ++d) c -= 0.5 * (log_2pi + std::log(g.variances[k][d]));
            log_norm_.push_back(c);
            mean_.push_back(g.means[k]);
            inv_var_.push_back(g.variances[k].cwiseInverse());
        }
        terms_.resize(log_norm_.size());
    }

    /// log p(x); adds d log p / dx to `grad` when non-null.
    double eval(const Vec3& x, Vec3* grad = nullptr) const {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < log_norm_.size(); ++k) {
            const Vec3 d = x - mean_[k];
            terms_[k] = log_norm_[k] - 0.5 * d.dot(d.cwiseProduct(inv_var_[k]));
            mx = std::max(mx, terms_[k]);
        }
        if (!std::isfinite(mx)) return mx;
        double sum = 0.0;
        for (auto& t : terms_) sum += (t = std::exp(t - mx));
        if (grad)
            for (std::size_t k = 0; k < log_norm_.size(); ++k)
                *grad -= (terms_[k] / sum) * (x - mean_[k]).cwiseProduct(inv_var_[k]);
        return mx + std::log(sum);
    }

private:
    std::vector<double> log_norm_;
    std::vector<Vec3> mean_;
    std::vector<Vec3> inv_var_;
    mutable std::vector<double> terms_;  // scratch; a kernel is not shared across threads
};

struct GmmFit {
    DiagGmm model;
    /// Mean per-sample log-likelihood evaluated before each M-step.
    std::vector<double> log_likelihood;
    int iterations = 0;
};

namespace detail {

/// k-means++ seeding followed by Lloyd iterations; returns assignments.
inline std::vector<std::size_t> kmeans_assign(std::span<const Vec3> data, std::size_t k, std::uint64_t seed) {
    const std::size_t n = data.size();
    std::mt19937_64 rng(seed);
    std::vector<Vec3> centers;
    centers.push_back(data[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)]);
    std::vector<double> d2(n);
    while (centers.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& c : centers) best = std::min(best, (data[i] - c).squaredNorm());
            d2[i] = best;
            total += best;
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            double u = std::uniform_real_distribution<double>(0.0, total)(rng);
            for (pick = 0; pick + 1 < n; ++pick) {
                u -= d2[pick];
                if (u <= 0.0 && d2[pick] > 0.0) break;
            }
        } else {
            pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
        }
        centers.push_back(data[pick]);
    }
    std::vector<std::size_t> assign(n, 0);
    for (int it = 0; it < 50; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_d = (data[i] - centers[0]).squaredNorm();
            for (std::size_t c = 1; c < k; ++c) {
                const double d = (data[i] - centers[c]).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            changed |= (assign[i] != best) || it == 0;
            assign[i] = best;
        }
        if (!changed) break;
        std::vector<Vec3> sums(k, Vec3::Zero());
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            sums[assign[i]] += data[i];
            ++counts[assign[i]];
        }
        for (std::size_t c = 0; c < k; ++c)
            if (counts[c] > 0) centers[c] = sums[c] / static_cast<double>(counts[c]);
    }
    return assign;
}

}  // namespace detail

/// EM for a diagonal-covariance mixture, initialized from k-means.
///
/// Stops after `max_iters` EM steps or when the mean log-likelihood improves
/// by less than `tol`. Variances are floored at kVarianceFloor. Throws
/// "insufficient samples" when there are fewer samples than components.
inline GmmFit fit_diag_gmm(std::span<const Vec3> data, std::size_t components, std::uint64_t seed,
                           int max_iters = 200, double tol = 1e-6) {
    const std::size_t n = data.size();
    if (components == 0 || n < components) throw Error("insufficient samples");

    Vec3 global_mean = Vec3::Zero();
    for (const auto& x : data) global_mean += x;
    global_mean /= static_cast<double>(n);
    Vec3 global_var = Vec3::Zero();
    for (const auto& x : data) global_var += (x - global_mean).cwiseAbs2();
    global_var = (global_var / static_cast<double>(n)).cwiseMax(kVarianceFloor);

    // Responsibilities, initialized as hard k-means assignments.
    Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(components));
    const auto assign = detail::kmeans_assign(data, components, seed);
    for (std::size_t i = 0; i < n; ++i) resp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(assign[i])) = 1.0;

    GmmFit fit;
    DiagGmm& m = fit.model;
    m.weights.assign(components, 0.0);
    m.means.assign(components, Vec3::Zero());
    m.variances.assign(components, global_var);

    auto m_step = [&] {
        for (std::size_t k = 0; k < components; ++k) {
            const auto col = resp.col(static_cast<Eigen::Index>(k));
            const double nk = col.sum();
            m.weights[k] = nk / static_cast<double>(n);
            if (nk <= 1e-12) continue;  // dead component keeps its parameters
            Vec3 mu = Vec3::Zero();
            for (std::size_t i = 0; i < n; ++i) mu += col(static_cast<Eigen::Index>(i)) * data[i];
            mu /= nk;
            Vec3 var = Vec3::Zero();
            for (std::size_t i = 0; i < n; ++i) var += col(static_cast<Eigen::Index>(i)) * (data[i] - mu).cwiseAbs2();
            m.means[k] = mu;
            m.variances[k] = (var / nk).cwiseMax(kVarianceFloor);
        }
    };
    auto e_step = [&] {
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto terms = m.component_log_terms(data[i]);
            const double lse = DiagGmm::log_sum_exp(terms);
            ll += lse;
            for (std::size_t k = 0; k < components; ++k)
                resp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
                    std::isfinite(terms[k]) ? std::exp(terms[k] - lse) : 0.0;
        }
        return ll / static_cast<double>(n);
    };

    m_step();
    for (int it = 0; it < max_iters; ++it) {
        const double ll = e_step();
        fit.log_likelihood.push_back(ll);
        m_step();
        ++fit.iterations;
        const std::size_t h = fit.log_likelihood.size();
        if (h >= 2 && fit.log_likelihood[h - 1] - fit.log_likelihood[h - 2] < tol) break;
    }
    return fit;
}

}  // namespace relfuse
