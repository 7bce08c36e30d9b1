#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

#include "rgplan/rng.hpp"
#include "rgplan/tensor.hpp"
#include "rgplan/trajectory.hpp"

namespace rgplan {

// Geometric variance-exploding schedule: sigma(t) = sigma_min * (sigma_max/sigma_min)^t.
struct NoiseSchedule {
    double sigma_min = 0.01;
    double sigma_max = 50.0;
    int n_steps = 100;  // default discretization of (0,1]

    NoiseSchedule() = default;
    NoiseSchedule(double smin, double smax, int steps)
        : sigma_min(smin), sigma_max(smax), n_steps(steps) {
        validate();
    }

    void validate() const {
        if (!(sigma_min > 0.0)) throw std::invalid_argument("NoiseSchedule: sigma_min must be > 0");
        if (!(sigma_max > sigma_min))
            throw std::invalid_argument("NoiseSchedule: sigma_max must exceed sigma_min");
        if (n_steps < 2) throw std::invalid_argument("NoiseSchedule: n_steps must be >= 2");
    }

    double sigma(double t) const {
        if (t < 0.0 || t > 1.0)
            throw std::invalid_argument("NoiseSchedule::sigma: t=" + std::to_string(t) +
                                        " outside [0,1]");
        return sigma_min * std::pow(sigma_max / sigma_min, t);
    }

    double sigma2(double t) const {
        double s = sigma(t);
        return s * s;
    }
};

using ScoreFn = std::function<Tensor(const Tensor&, double)>;
using GuidanceFn = std::function<Tensor(const Tensor&, double)>;
using PostStepFn = std::function<void(Tensor&, int)>;

// tau + sigma(t_hat) * eps with standard-normal eps, drawn in element order.
inline Trajectory perturb(const Trajectory& tau, double t_hat, const NoiseSchedule& sched,
                          std::uint64_t seed) {
    if (!(t_hat > 0.0 && t_hat <= 1.0))
        throw std::invalid_argument("perturb: t_hat must lie in (0,1]");
    double s = sched.sigma(t_hat);
    Rng rng(seed);
    Trajectory out = tau;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += s * rng.normal();
    return out;
}

// Euler-Maruyama integration of the reverse VE SDE from t_start down to 0 on
// a uniform grid:
//   x <- x + (sigma^2(t) - sigma^2(t-dt)) * (score + guidance) + sqrt(sigma^2(t) - sigma^2(t-dt)) * z
// with one score evaluation per step at the step's midpoint time. Noise is
// consumed step-major then element-major, so the draw sequence is a pure
// function of (seed, n_steps, element count).
inline Tensor integrate_reverse(Tensor x, double t_start, const ScoreFn& score_fn,
                                const NoiseSchedule& sched, int n_steps, std::uint64_t seed,
                                const GuidanceFn& guidance_fn = nullptr,
                                const PostStepFn& post_step = nullptr) {
    if (!(t_start > 0.0 && t_start <= 1.0))
        throw std::invalid_argument("integrate_reverse: t_start must lie in (0,1]");
    if (n_steps < 1) throw std::invalid_argument("integrate_reverse: n_steps must be >= 1");
    Rng rng(seed);
    const double dt = t_start / static_cast<double>(n_steps);
    for (int i = 0; i < n_steps; ++i) {
        double t = t_start - dt * static_cast<double>(i);
        double tn = (i + 1 == n_steps) ? 0.0 : t - dt;
        double tm = 0.5 * (t + tn);
        double dsig2 = sched.sigma2(t) - sched.sigma2(tn);
        Tensor drift = score_fn(x, tm);
        if (!drift.same_shape(x))
            throw std::runtime_error("integrate_reverse: score shape mismatch at step " +
                                     std::to_string(i));
        if (!drift.all_finite())
            throw std::runtime_error("integrate_reverse: non-finite score at step " +
                                     std::to_string(i));
        if (guidance_fn) {
            Tensor g = guidance_fn(x, tm);
            if (!g.same_shape(x))
                throw std::runtime_error("integrate_reverse: guidance shape mismatch at step " +
                                         std::to_string(i));
            if (!g.all_finite())
                throw std::runtime_error("integrate_reverse: non-finite guidance at step " +
                                         std::to_string(i));
            for (std::size_t j = 0; j < drift.size(); ++j) drift[j] += g[j];
        }
        double noise_scale = std::sqrt(dsig2);
        for (std::size_t j = 0; j < x.size(); ++j)
            x[j] += dsig2 * drift[j] + noise_scale * rng.normal();
        if (post_step) post_step(x, i);
    }
    return x;
}

inline Trajectory integrate_reverse(const Trajectory& x_init, double t_start,
                                    const ScoreFn& score_fn, const NoiseSchedule& sched,
                                    int n_steps, std::uint64_t seed,
                                    const GuidanceFn& guidance_fn = nullptr,
                                    const PostStepFn& post_step = nullptr) {
    Trajectory out = x_init;
    out.values = integrate_reverse(x_init.values, t_start, score_fn, sched, n_steps, seed,
                                   guidance_fn, post_step);
    return out;
}

// Step count for restoring from time t_hat so the step size matches a
// full-range integration with n_total steps.
inline int restore_steps(double t_hat, int n_total) {
    int n = static_cast<int>(std::ceil(t_hat * static_cast<double>(n_total)));
    return n < 8 ? 8 : n;
}

}  // namespace rgplan
