#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rgplan/parallel.hpp"
#include "rgplan/params.hpp"
#include "rgplan/sde.hpp"
#include "rgplan/trajectory.hpp"
#include "rgplan/unet.hpp"

namespace rgplan {

// epsilon-network: predicts the injected noise from a corrupted trajectory
// and the diffusion time. Output shape equals input shape.
struct EpsilonModel {
    UNetConfig cfg;
    ParamStore params;
};

inline EpsilonModel init_epsilon_model(const UNetConfig& cfg, std::uint64_t seed) {
    return EpsilonModel{cfg, init_unet_params(cfg, seed)};
}

inline Tensor eps_forward(const EpsilonModel& m, const Tensor& tau, double t) {
    if (tau.ndim() != 2 || tau.dim(0) != m.cfg.horizon || tau.dim(1) != m.cfg.channels)
        throw std::invalid_argument("eps_forward: input shape " + Tensor::shape_str(tau.shape()) +
                                    " does not match model signature (" +
                                    std::to_string(m.cfg.horizon) + "," +
                                    std::to_string(m.cfg.channels) + ")");
    Tape tape;
    Tape::NodeId x = tape.leaf(tau);
    Tape::NodeId y = unet_forward(tape, m.params, m.cfg, x, t);
    Tensor out = tape.value(y);
    check_finite(out, "eps_forward output");
    return out;
}

// score = -eps_theta(tau, t) / sigma(t); valid for all t in [0,1].
inline Tensor score_from_epsilon(const EpsilonModel& m, const Tensor& tau, double t,
                                 const NoiseSchedule& sched) {
    Tensor eps = eps_forward(m, tau, t);
    double inv = -1.0 / sched.sigma(t);
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] *= inv;
    return eps;
}

inline ScoreFn make_score_fn(const EpsilonModel& m, const NoiseSchedule& sched) {
    return [&m, &sched](const Tensor& x, double t) { return score_from_epsilon(m, x, t, sched); };
}

struct TrainConfig {
    int steps = 6000;
    int batch = 32;
    double lr = 2e-4;
    std::uint64_t seed = 0;
    double eps_t = 1e-3;  // lower bound for sampled diffusion times
    int log_every = 100;
};

struct TrainLogEntry {
    int step;
    double loss;
};

// Denoising objective: per-sample tapes evaluated (possibly in parallel) with
// gradients reduced in sample order, so results are independent of the
// thread count.
inline std::vector<TrainLogEntry> train_epsilon(EpsilonModel& model,
                                                const std::vector<Trajectory>& dataset,
                                                const NoiseSchedule& sched,
                                                const TrainConfig& tc) {
    if (dataset.empty()) throw std::invalid_argument("train_epsilon: empty dataset");
    for (const auto& tr : dataset)
        if (tr.horizon != model.cfg.horizon || tr.channels() != model.cfg.channels)
            throw std::invalid_argument("train_epsilon: trajectory shape mismatch");
    AdamOptimizer opt(tc.lr);
    std::vector<TrainLogEntry> log;
    Rng pick(mix_seed(tc.seed, 0x70c5));
    for (int step = 0; step < tc.steps; ++step) {
        struct SampleJob {
            std::size_t index;
            double t;
            std::uint64_t noise_seed;
        };
        std::vector<SampleJob> jobs(static_cast<std::size_t>(tc.batch));
        for (auto& j : jobs) {
            j.index = static_cast<std::size_t>(pick.uniform() * static_cast<double>(dataset.size()));
            if (j.index >= dataset.size()) j.index = dataset.size() - 1;
            j.t = pick.uniform(tc.eps_t, 1.0);
            j.noise_seed = pick.next_u64();
        }
        std::vector<std::map<std::string, Tensor>> grads(jobs.size());
        std::vector<double> losses(jobs.size());
        parallel_for(jobs.size(), [&](std::size_t i) {
            const auto& j = jobs[i];
            Rng nrng(j.noise_seed);
            const Trajectory& tau0 = dataset[j.index];
            Tensor eps = nrng.normal_tensor(tau0.values.shape());
            Tensor noisy = tau0.values;
            double s = sched.sigma(j.t);
            for (std::size_t k = 0; k < noisy.size(); ++k) noisy[k] += s * eps[k];
            Tape tape;
            Tape::NodeId x = tape.leaf(noisy);
            Tape::NodeId pred = unet_forward(tape, model.params, model.cfg, x, j.t);
            Tape::NodeId loss = tape.mse(pred, tape.leaf(eps));
            tape.backward(loss);
            grads[i] = tape.param_grads();
            losses[i] = tape.value(loss)[0];
        });
        std::map<std::string, Tensor> acc = std::move(grads[0]);
        double loss_mean = losses[0];
        for (std::size_t i = 1; i < grads.size(); ++i) {
            for (auto& [id, g] : acc) {
                const Tensor& gi = grads[i].at(id);
                for (std::size_t k = 0; k < g.size(); ++k) g[k] += gi[k];
            }
            loss_mean += losses[i];
        }
        double inv = 1.0 / static_cast<double>(jobs.size());
        for (auto& [id, g] : acc)
            for (std::size_t k = 0; k < g.size(); ++k) g[k] *= inv;
        loss_mean *= inv;
        if (!std::isfinite(loss_mean))
            throw std::runtime_error("train_epsilon: non-finite loss at step " + std::to_string(step));
        opt.step(model.params, acc);
        if (step % tc.log_every == 0 || step + 1 == tc.steps)
            log.push_back({step, loss_mean});
    }
    if (!log.empty() && log.back().loss >= 1.0)
        throw std::runtime_error("train_epsilon: final loss " + std::to_string(log.back().loss) +
                                 " did not fall below the unit noise-variance baseline");
    return log;
}

// Start/goal-conditioned sampling: draw x ~ N(0, sigma_max^2 I), integrate
// the reverse SDE from t=1, and overwrite the state channels of the first
// (and, when a goal is given, last) row after initialization and after every
// step.
inline Trajectory sample_plan(const EpsilonModel& model, const NoiseSchedule& sched,
                              const std::vector<double>& start_state,
                              const std::vector<double>* goal_state, int n_steps,
                              std::uint64_t seed, const GuidanceFn& guidance_fn = nullptr,
                              std::size_t state_dim = 4) {
    if (start_state.size() != state_dim)
        throw std::invalid_argument("sample_plan: start state dimension mismatch");
    if (goal_state && goal_state->size() != state_dim)
        throw std::invalid_argument("sample_plan: goal state dimension mismatch");
    const std::size_t H = model.cfg.horizon;
    const std::size_t C = model.cfg.channels;
    Trajectory out(H, state_dim, C - state_dim);
    Rng init_rng(mix_seed(seed, 1));
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] = sched.sigma_max * init_rng.normal();
    if (!out.values.all_finite()) throw std::runtime_error("sample_plan: non-finite init draw");
    auto condition = [&](Tensor& x) {
        for (std::size_t c = 0; c < state_dim; ++c) x.at2(0, c) = start_state[c];
        if (goal_state)
            for (std::size_t c = 0; c < state_dim; ++c) x.at2(H - 1, c) = (*goal_state)[c];
    };
    condition(out.values);
    out.values = integrate_reverse(out.values, 1.0, make_score_fn(model, sched), sched, n_steps,
                                   mix_seed(seed, 2), guidance_fn,
                                   [&](Tensor& x, int) { condition(x); });
    return out;
}

}  // namespace rgplan
