#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "relfuse/fusion.hpp"
#include "relfuse/gmm.hpp"
#include "relfuse/lbfgs.hpp"
#include "relfuse/scene_model.hpp"

namespace relfuse {

enum class Modality { rel_translation, rel_log_scale, rel_direction };

inline const char* to_string(Modality m) {
    switch (m) {
        case Modality::rel_translation: return "rel_translation";
        case Modality::rel_log_scale: return "rel_log_scale";
        case Modality::rel_direction: return "rel_direction";
    }
    return "?";
}

inline Modality parse_modality(const std::string& s) {
    if (s == "rel_translation") return Modality::rel_translation;
    if (s == "rel_log_scale") return Modality::rel_log_scale;
    if (s == "rel_direction") return Modality::rel_direction;
    throw Error("unknown modality: " + s);
}

inline constexpr Modality kModalities[] = {Modality::rel_translation, Modality::rel_log_scale,
                                           Modality::rel_direction};

/// Pairwise layout priors: one mixture per (source category, target
/// category, modality). Missing cells are skipped by the energy.
struct PairPrior {
    std::map<std::string, DiagGmm> cells;

    static std::string key(const std::string& a, const std::string& b, Modality m) {
        return a + "|" + b + "|" + to_string(m);
    }
    const DiagGmm* find(const std::string& a, const std::string& b, Modality m) const {
        const auto it = cells.find(key(a, b, m));
        return it == cells.end() ? nullptr : &it->second;
    }
};

/// Relative quantities from m to n used by the prior.
inline Vec3 relative_quantity(Modality mod, const Vec3& t_m, const Vec3& s_m, const Quat& r_m, const Vec3& t_n,
                              const Vec3& s_n) {
    switch (mod) {
        case Modality::rel_translation: return t_n - t_m;
        case Modality::rel_log_scale: return s_n - s_m;
        case Modality::rel_direction: return frame_transform(r_m, normalized_or_throw(t_n - t_m));
    }
    return Vec3::Zero();
}

/// Fits a mixture to every (category pair, modality) cell over all ordered
/// ground-truth pairs. Cells with fewer samples than components are left out.
inline PairPrior fit_pairwise_prior(std::span<const SceneInstance> scenes, std::size_t components,
                                    std::uint64_t seed) {
    std::map<std::string, std::vector<Vec3>> samples;
    for (const auto& s : scenes)
        for (const auto& m : s.gt_objects)
            for (const auto& n : s.gt_objects) {
                if (m.id == n.id) continue;
                for (Modality mod : kModalities)
                    samples[PairPrior::key(m.category, n.category, mod)].push_back(
                        relative_quantity(mod, m.pose.translation, m.pose.log_scale, m.pose.rotation,
                                          n.pose.translation, n.pose.log_scale));
            }
    PairPrior prior;
    std::uint64_t cell = 0;
    for (const auto& [key, data] : samples) {
        ++cell;
        if (data.size() < components) continue;
        prior.cells.emplace(key, fit_diag_gmm(data, components, seed + cell).model);
    }
    return prior;
}

struct CrfConfig {
    int max_iters = 1000;
    double lambda_data = 1.0;
};

/// One pairwise prior term between objects m < n.
struct CrfTerm {
    std::size_t m = 0;
    std::size_t n = 0;
    Modality modality = Modality::rel_translation;
    GmmKernel density;
};

/// Everything the CRF energy needs about one scene. Rotations stay fixed at
/// the unary arg-max bins. Not safe to evaluate from several threads at once.
struct CrfProblem {
    std::vector<Vec3> unary_t;
    std::vector<Vec3> unary_s;
    std::vector<Quat> rotations;
    std::vector<CrfTerm> terms;
    double lambda_data = 1.0;

    std::size_t size() const { return unary_t.size(); }

    /// Stacked (t_0, s_0, t_1, s_1, ...) at the unary values.
    Eigen::VectorXd initial() const {
        Eigen::VectorXd x(static_cast<Eigen::Index>(6 * size()));
        for (std::size_t i = 0; i < size(); ++i) {
            x.segment<3>(static_cast<Eigen::Index>(6 * i)) = unary_t[i];
            x.segment<3>(static_cast<Eigen::Index>(6 * i + 3)) = unary_s[i];
        }
        return x;
    }
};

/// Terms for every unordered pair m < n and every modality with a prior cell
/// for (category_m, category_n); absent cells are skipped.
inline CrfProblem crf_problem(std::vector<Vec3> unary_t, std::vector<Vec3> unary_s, std::vector<Quat> rotations,
                              const std::vector<std::string>& categories, const PairPrior& prior,
                              double lambda_data = 1.0) {
    const std::size_t n = unary_t.size();
    if (unary_s.size() != n || rotations.size() != n || categories.size() != n) throw Error("size mismatch");
    CrfProblem p;
    p.unary_t = std::move(unary_t);
    p.unary_s = std::move(unary_s);
    p.rotations = std::move(rotations);
    p.lambda_data = lambda_data;
    for (std::size_t m = 0; m < n; ++m)
        for (std::size_t k = m + 1; k < n; ++k)
            for (Modality mod : kModalities)
                if (const DiagGmm* g = prior.find(categories[m], categories[k], mod))
                    p.terms.push_back({m, k, mod, GmmKernel(*g)});
    return p;
}

inline CrfProblem crf_problem(const SceneInstance& scene, const PairPrior& prior, const RotationBinTable& rot_table,
                              double lambda_data = 1.0) {
    std::vector<Vec3> t, s;
    std::vector<Quat> r;
    std::vector<std::string> cats;
    for (const auto& u : scene.unary) {
        if (u.rotation_prob.size() != rot_table.size()) throw Error("rotation_prob size mismatch");
        t.push_back(u.translation);
        s.push_back(u.log_scale);
        r.push_back(rot_table[argmax_lowest(u.rotation_prob)]);
        cats.push_back(u.category);
    }
    return crf_problem(std::move(t), std::move(s), std::move(r), cats, prior, lambda_data);
}

/// lambda_data * sum ||x - x_unary||² - sum over terms of log p_prior(rel),
/// where rel is t_n - t_m, s_n - s_m, or the direction of n in m's frame.
/// Writes the gradient when `grad` is non-null. Coincident translations
/// under a direction term give +inf.
inline double crf_energy(const CrfProblem& p, const Eigen::VectorXd& x, Eigen::VectorXd* grad = nullptr) {
    const std::size_t n = p.size();
    if (x.size() != static_cast<Eigen::Index>(6 * n)) throw Error("state size mismatch");
    if (grad) grad->setZero(x.size());
    auto t = [&](std::size_t i) { return Vec3(x.segment<3>(static_cast<Eigen::Index>(6 * i))); };
    auto s = [&](std::size_t i) { return Vec3(x.segment<3>(static_cast<Eigen::Index>(6 * i + 3))); };

    double e = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 dt = t(i) - p.unary_t[i];
        const Vec3 ds = s(i) - p.unary_s[i];
        e += p.lambda_data * (dt.squaredNorm() + ds.squaredNorm());
        if (grad) {
            grad->segment<3>(static_cast<Eigen::Index>(6 * i)) += 2.0 * p.lambda_data * dt;
            grad->segment<3>(static_cast<Eigen::Index>(6 * i + 3)) += 2.0 * p.lambda_data * ds;
        }
    }

    for (const CrfTerm& term : p.terms) {
        const auto im = static_cast<Eigen::Index>(6 * term.m);
        const auto in = static_cast<Eigen::Index>(6 * term.n);
        Vec3 g = Vec3::Zero();
        switch (term.modality) {
            case Modality::rel_translation: {
                e -= term.density.eval(t(term.n) - t(term.m), grad ? &g : nullptr);
                if (grad) {
                    grad->segment<3>(in) -= g;
                    grad->segment<3>(im) += g;
                }
                break;
            }
            case Modality::rel_log_scale: {
                e -= term.density.eval(s(term.n) - s(term.m), grad ? &g : nullptr);
                if (grad) {
                    grad->segment<3>(in + 3) -= g;
                    grad->segment<3>(im + 3) += g;
                }
                break;
            }
            case Modality::rel_direction: {
                const Vec3 r = t(term.n) - t(term.m);
                const double len = r.norm();
                if (!(len > kEps)) return std::numeric_limits<double>::infinity();
                const Vec3 r_hat = r / len;
                const Mat3 rot = p.rotations[term.m].toRotationMatrix();
                e -= term.density.eval(rot.transpose() * r_hat, grad ? &g : nullptr);
                if (grad) {
                    // d = Rᵀ r/|r|  =>  dd/dr = Rᵀ (I - r̂ r̂ᵀ) / |r|
                    const Vec3 de_dr = -(Mat3::Identity() - r_hat * r_hat.transpose()) * (rot * g) / len;
                    grad->segment<3>(in) += de_dr;
                    grad->segment<3>(im) -= de_dr;
                }
                break;
            }
        }
    }
    return e;
}

struct CrfResult {
    MatrixX3 translations;
    MatrixX3 log_scales;
    std::vector<double> energy_trace;
    int iterations = 0;
};

inline CrfResult crf_optimize(const CrfProblem& p, const CrfConfig& config = {}) {
    LbfgsOptions opt;
    opt.max_iters = config.max_iters;
    auto f = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) { return crf_energy(p, x, &g); };
    const LbfgsResult r = lbfgs_minimize(f, p.initial(), opt);
    CrfResult out;
    const auto n = static_cast<Eigen::Index>(p.size());
    out.translations.resize(n, 3);
    out.log_scales.resize(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        out.translations.row(i) = r.x.segment<3>(6 * i).transpose();
        out.log_scales.row(i) = r.x.segment<3>(6 * i + 3).transpose();
    }
    out.energy_trace = r.trace;
    out.iterations = r.iterations;
    return out;
}

/// CRF-refined scene in fused form; rotations are the unary arg-max bins.
inline FusedScene crf_refine_scene(const SceneInstance& scene, const PairPrior& prior, const RotationBinTable& rot_table,
                                   const CrfConfig& config = {}) {
    FusedScene out = unary_only(scene, rot_table);
    if (scene.unary.empty()) return out;
    const CrfProblem p = crf_problem(scene, prior, rot_table, config.lambda_data);
    const CrfResult r = crf_optimize(p, config);
    for (std::size_t i = 0; i < out.objects.size(); ++i) {
        out.objects[i].translation = r.translations.row(static_cast<Eigen::Index>(i)).transpose();
        out.objects[i].log_scale = r.log_scales.row(static_cast<Eigen::Index>(i)).transpose();
    }
    return out;
}

/// max |analytic - numeric| / max(1, |numeric|) over all state entries,
/// numeric by central differences with step h.
inline double crf_grad_check(const CrfProblem& p, const Eigen::VectorXd& x, double h = 1e-5) {
    Eigen::VectorXd g;
    crf_energy(p, x, &g);
    Eigen::VectorXd probe = x;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const double up = crf_energy(p, probe);
        probe[i] = x[i] - h;
        const double down = crf_energy(p, probe);
        probe[i] = x[i];
        const double numeric = (up - down) / (2.0 * h);
        worst = std::max(worst, std::abs(g[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
    return worst;
}

}  // namespace relfuse
