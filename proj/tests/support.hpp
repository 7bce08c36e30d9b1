#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "rgplan/rng.hpp"
#include "rgplan/tensor.hpp"

namespace rgtest {

using rgplan::Rng;
using rgplan::Tensor;

inline double rel_err(double a, double b) {
    double denom = std::max({std::fabs(a), std::fabs(b), 1e-6});
    return std::fabs(a - b) / denom;
}

// Central finite differences of a scalar function against an analytic
// gradient, element by element. Returns the worst relative error.
inline double fd_worst_rel_err(const std::function<double(const std::vector<Tensor>&)>& f,
                               const std::function<std::vector<Tensor>(const std::vector<Tensor>&)>& grad,
                               std::vector<Tensor> inputs, double h = 1e-4) {
    std::vector<Tensor> g = grad(inputs);
    double worst = 0.0;
    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        for (std::size_t i = 0; i < inputs[ti].size(); ++i) {
            double keep = inputs[ti][i];
            inputs[ti][i] = keep + h;
            double fp = f(inputs);
            inputs[ti][i] = keep - h;
            double fm = f(inputs);
            inputs[ti][i] = keep;
            double fd = (fp - fm) / (2.0 * h);
            worst = std::max(worst, rel_err(g[ti][i], fd));
        }
    }
    return worst;
}

inline Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double lo = -1.0,
                            double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Keeps values away from non-smooth points (relu/|.| kinks) so central
// differences stay valid.
inline void push_away_from(Tensor& t, double threshold) {
    for (std::size_t i = 0; i < t.size(); ++i)
        if (std::fabs(t[i]) < threshold) t[i] += (t[i] >= 0.0 ? threshold : -threshold);
}

}  // namespace rgtest
