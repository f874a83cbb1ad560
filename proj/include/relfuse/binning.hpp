#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "relfuse/scene_model.hpp"

namespace relfuse {

/// 8 azimuths (45 degree steps) x 3 elevations (-30, 0, +30 degrees),
/// elevation-major.
inline DirectionBinTable default_direction_codebook() {
    std::vector<Vec3> bins;
    bins.reserve(24);
    for (double elev : {-30.0, 0.0, 30.0}) {
        for (int a = 0; a < 8; ++a) {
            const double az = deg2rad(45.0 * a);
            const double e = deg2rad(elev);
            const Vec3 horizontal = std::cos(az) * Vec3::UnitX() + std::sin(az) * Vec3::UnitZ();
            bins.push_back(std::cos(e) * horizontal + std::sin(e) * up_axis());
        }
    }
    return DirectionBinTable(std::move(bins), CodebookSource::fixed_grid);
}

/// 24 yaw rotations at 15 degree steps; bin 0 is the identity.
inline RotationBinTable default_rotation_codebook() {
    std::vector<Quat> bins;
    bins.reserve(24);
    for (int k = 0; k < 24; ++k) bins.push_back(yaw_quaternion(deg2rad(15.0 * k)));
    return RotationBinTable(std::move(bins), CodebookSource::fixed_grid);
}

/// Bins equal to `bin` composed with the yaw symmetry group of the given
/// order, sorted ascending.
inline std::vector<std::size_t> symmetry_equivalent_bins(std::size_t bin, int symmetry_order,
                                                         const RotationBinTable& table) {
    if (symmetry_order != 1 && symmetry_order != 2 && symmetry_order != 4)
        throw Error("invalid symmetry order");
    if (bin >= table.size()) throw Error("bin index out of range");
    std::vector<std::size_t> out;
    for (int k = 0; k < symmetry_order; ++k) {
        const Quat target = table[bin] * yaw_quaternion(2.0 * kPi * k / symmetry_order);
        bool found = false;
        for (std::size_t j = 0; j < table.size(); ++j) {
            if (geodesic_angle(table[j], target) <= 1e-6) {
                out.push_back(j);
                found = true;
                break;
            }
        }
        if (!found) throw Error("incompatible codebook");
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

struct SphericalKMeansResult {
    std::vector<Vec3> centroids;
    std::vector<std::size_t> assignment;
    /// Sum of cosines to the assigned centroid, one entry per iteration.
    std::vector<double> objective;
    int iterations = 0;
};

/// Spherical k-means with deterministic farthest-point seeding. The first
/// seed is drawn from `seed`; each further seed is the sample whose best
/// cosine to the chosen seeds is lowest. Stops at an assignment fixpoint or
/// after `max_iters` updates.
inline SphericalKMeansResult spherical_kmeans(const std::vector<Vec3>& raw, std::size_t k,
                                              std::uint64_t seed, int max_iters = 100) {
    if (k == 0) throw Error("insufficient samples");
    std::vector<Vec3> samples;
    samples.reserve(raw.size());
    for (const auto& v : raw) samples.push_back(normalized_or_throw(v));

    {
        std::vector<Vec3> distinct;
        for (const auto& v : samples) {
            if (std::none_of(distinct.begin(), distinct.end(),
                             [&](const Vec3& d) { return (d - v).norm() <= 1e-12; })) {
                distinct.push_back(v);
                if (distinct.size() >= k) break;
            }
        }
        if (distinct.size() < k) throw Error("insufficient samples");
    }

    const std::size_t n = samples.size();
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);

    SphericalKMeansResult res;
    res.centroids.push_back(samples[pick(rng)]);
    while (res.centroids.size() < k) {
        std::size_t far = 0;
        double far_cos = 2.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = -2.0;
            for (const auto& c : res.centroids) best = std::max(best, c.dot(samples[i]));
            if (best < far_cos) {
                far_cos = best;
                far = i;
            }
        }
        res.centroids.push_back(samples[far]);
    }

    auto assign = [&](const std::vector<Vec3>& cents) {
        std::vector<std::size_t> a(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_dot = cents[0].dot(samples[i]);
            for (std::size_t c = 1; c < cents.size(); ++c) {
                const double d = cents[c].dot(samples[i]);
                if (d > best_dot) {
                    best_dot = d;
                    best = c;
                }
            }
            a[i] = best;
        }
        return a;
    };
    auto objective = [&](const std::vector<std::size_t>& a, const std::vector<Vec3>& cents) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += cents[a[i]].dot(samples[i]);
        return s;
    };

    res.assignment = assign(res.centroids);
    for (int it = 0; it < max_iters; ++it) {
        res.objective.push_back(objective(res.assignment, res.centroids));
        std::vector<Vec3> sums(k, Vec3::Zero());
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            sums[res.assignment[i]] += samples[i];
            ++counts[res.assignment[i]];
        }
        std::vector<Vec3> next(k);
        std::vector<bool> ok(k, false);
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] > 0 && sums[c].norm() > 1e-12) {
                next[c] = sums[c].normalized();
                ok[c] = true;
            }
        }
        // Empty or cancelling clusters take the sample worst served by the
        // surviving centroids.
        for (std::size_t c = 0; c < k; ++c) {
            if (ok[c]) continue;
            std::size_t far = 0;
            double far_cos = 2.0;
            for (std::size_t i = 0; i < n; ++i) {
                double best = -2.0;
                for (std::size_t o = 0; o < k; ++o)
                    if (ok[o]) best = std::max(best, next[o].dot(samples[i]));
                if (best < far_cos) {
                    far_cos = best;
                    far = i;
                }
            }
            next[c] = samples[far];
            ok[c] = true;
        }
        res.centroids = std::move(next);
        ++res.iterations;
        auto reassigned = assign(res.centroids);
        const bool fixpoint = reassigned == res.assignment;
        res.assignment = std::move(reassigned);
        if (fixpoint) {
            res.objective.push_back(objective(res.assignment, res.centroids));
            break;
        }
    }
    return res;
}

inline DirectionBinTable build_direction_codebook(const std::vector<Vec3>& samples, std::size_t k,
                                                  std::uint64_t seed) {
    auto res = spherical_kmeans(samples, k, seed);
    return DirectionBinTable(std::move(res.centroids), CodebookSource::clustered);
}

}  // namespace relfuse
