#pragma once

#include <cmath>
#include <functional>

#include "pdp/core/rng.hpp"
#include "pdp/core/tensor.hpp"

namespace testutil {

inline pdp::Tensor random_tensor(std::vector<int> shape, pdp::Rng& rng,
                                 pdp::real lo = -1.0, pdp::real hi = 1.0) {
    pdp::Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Central finite differences of a scalar-valued function w.r.t. x.
inline pdp::Tensor fd_grad(const std::function<pdp::real(const pdp::Tensor&)>& f,
                           const pdp::Tensor& x, pdp::real h = 1e-5) {
    pdp::Tensor g(x.shape());
    pdp::Tensor xp = x;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const pdp::real v = x[i];
        xp[i] = v + h;
        const pdp::real fp = f(xp);
        xp[i] = v - h;
        const pdp::real fm = f(xp);
        xp[i] = v;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// Max-norm relative error between an analytic and a reference gradient.
inline pdp::real rel_err(const pdp::Tensor& got, const pdp::Tensor& want) {
    pdp::real num = 0.0, den = 0.0;
    for (std::int64_t i = 0; i < got.numel(); ++i) {
        num = std::max(num, std::abs(got[i] - want[i]));
        den = std::max(den, std::abs(want[i]));
    }
    return num / std::max(den, pdp::real(1e-8));
}

inline pdp::real max_abs_diff(const pdp::Tensor& a, const pdp::Tensor& b) {
    pdp::real m = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace testutil
