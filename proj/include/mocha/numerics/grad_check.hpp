#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "mocha/error.hpp"
#include "mocha/numerics/autodiff.hpp"

namespace mocha {

/// Scalar-valued function built on a fresh tape from a differentiable input.
using TapeFunction = std::function<ad::Var(ad::Tape&, ad::Var)>;

/// Largest |analytic - numeric| / max(1, |numeric|) over the coordinates of x,
/// with the numeric gradient taken by central differences of step eps.
inline double grad_check(const TapeFunction& f, const Tensor& x, double eps = 1e-6) {
    require(eps >= 1e-7 && eps <= 1e-4, ErrorKind::InvalidConfig, "grad_check step must lie in [1e-7, 1e-4]");
    Tensor analytic;
    {
        ad::Tape tape;
        ad::Var in = tape.leaf(x);
        ad::Var out = f(tape, in);
        tape.backward(out);
        analytic = in.grad();
    }
    auto eval = [&](const Tensor& at) {
        ad::Tape tape;
        return f(tape, tape.leaf(at)).value().item();
    };
    double worst = 0.0;
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double up = eval(probe);
        probe[i] = orig - eps;
        const double down = eval(probe);
        probe[i] = orig;
        const double numeric = (up - down) / (2.0 * eps);
        if (!std::isfinite(numeric) || !std::isfinite(analytic[i]))
            fail(ErrorKind::NonFiniteGradient, "non-finite gradient at coordinate " + std::to_string(i));
        worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
    return worst;
}

} // namespace mocha
