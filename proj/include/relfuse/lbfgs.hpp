#pragma once

#include <cmath>
#include <deque>
#include <vector>

#include <Eigen/Core>

namespace relfuse {

struct LbfgsOptions {
    int max_iters = 1000;
    int history = 10;
    double armijo_c = 1e-4;
    double grad_tol = 1e-6;
    int max_backtracks = 60;
};

struct LbfgsResult {
    Eigen::VectorXd x;
    double value = 0.0;
    /// Objective after every accepted iterate, starting with the initial point.
    std::vector<double> trace;
    int iterations = 0;
    bool converged = false;
    bool stalled = false;
    bool hit_non_finite = false;
};

/// Limited-memory BFGS with backtracking Armijo line search.
///
/// `f(x, grad)` returns the objective and writes its gradient. Every accepted
/// step satisfies the Armijo condition with a strict decrease, so the trace
/// is decreasing. Stops at max_iters, at gradient norm below grad_tol, or
/// when even a steepest-descent step cannot lower the objective in floating
/// point (`stalled`). Non-finite trial values shrink the step; if nothing
/// finite is found the last finite iterate is returned.
template <typename Objective>
LbfgsResult lbfgs_minimize(Objective&& f, Eigen::VectorXd x0, const LbfgsOptions& opt = {}) {
    LbfgsResult res;
    Eigen::VectorXd g(x0.size());
    double fx = f(x0, g);
    res.x = x0;
    res.value = fx;
    res.trace.push_back(fx);
    if (!std::isfinite(fx) || !g.allFinite()) {
        res.hit_non_finite = true;
        return res;
    }

    std::deque<Eigen::VectorXd> s_hist, y_hist;
    std::deque<double> rho_hist;
    Eigen::VectorXd x = std::move(x0);
    Eigen::VectorXd x_new(x.size()), g_new(x.size());

    for (int iter = 0; iter < opt.max_iters; ++iter) {
        if (g.norm() < opt.grad_tol) {
            res.converged = true;
            break;
        }
        // Two-loop recursion.
        Eigen::VectorXd q = g;
        std::vector<double> alpha(s_hist.size());
        for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
            alpha[static_cast<std::size_t>(i)] = rho_hist[static_cast<std::size_t>(i)] * s_hist[static_cast<std::size_t>(i)].dot(q);
            q -= alpha[static_cast<std::size_t>(i)] * y_hist[static_cast<std::size_t>(i)];
        }
        double gamma = 1.0 / std::max(1.0, g.norm());
        if (!s_hist.empty()) gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
        Eigen::VectorXd d = gamma * q;
        for (std::size_t i = 0; i < s_hist.size(); ++i) {
            const double beta = rho_hist[i] * y_hist[i].dot(d);
            d += s_hist[i] * (alpha[i] - beta);
        }
        d = -d;
        double slope = g.dot(d);
        if (!(slope < 0.0)) {
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            d = -g / std::max(1.0, g.norm());
            slope = g.dot(d);
        }

        double step = 1.0;
        bool accepted = false;
        double f_new = fx;
        for (int b = 0; b < opt.max_backtracks; ++b) {
            x_new = x + step * d;
            f_new = f(x_new, g_new);
            if (!std::isfinite(f_new) || !g_new.allFinite()) {
                res.hit_non_finite = true;
            } else if (f_new <= fx + opt.armijo_c * step * slope && f_new < fx) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            if (s_hist.empty()) {
                res.stalled = true;
                break;
            }
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            continue;
        }

        Eigen::VectorXd s = x_new - x;
        Eigen::VectorXd y = g_new - g;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > opt.history) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        x = x_new;
        g = g_new;
        fx = f_new;
        res.trace.push_back(fx);
        ++res.iterations;
    }
    res.x = std::move(x);
    res.value = fx;
    return res;
}

}  // namespace relfuse
