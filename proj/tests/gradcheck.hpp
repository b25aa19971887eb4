#pragma once

#include <functional>

#include "oct/autograd.hpp"

// Central finite-difference gradient check at double precision. Returns the
// worst relative error over all inputs, using max(1, |analytic|, |numeric|)
// as the scale.
namespace oct::testutil {

struct GradCheckResult {
    double max_rel_err = 0.0;
    size_t checked = 0;
};

inline GradCheckResult gradcheck(
    const std::function<ag::Var<double>(const std::vector<ag::Var<double>>&)>& fn,
    std::vector<ag::Var<double>> inputs, double h = 1e-5) {
    // analytic gradients
    for (auto& in : inputs) {
        in->ensure_grad();
        in->zero_grad();
    }
    ag::Var<double> out = fn(inputs);
    ag::backward(out);

    GradCheckResult res;
    for (auto& in : inputs) {
        if (!in->requires_grad) continue;
        for (size_t i = 0; i < in->value.numel(); ++i) {
            const double orig = in->value[i];
            in->value[i] = orig + h;
            const double fp = fn(inputs)->value[0];
            in->value[i] = orig - h;
            const double fm = fn(inputs)->value[0];
            in->value[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = in->grad[i];
            const double scale = std::max({1.0, std::abs(numeric), std::abs(analytic)});
            res.max_rel_err = std::max(res.max_rel_err, std::abs(numeric - analytic) / scale);
            ++res.checked;
        }
    }
    return res;
}

inline ag::Var<double> random_input(ag::Shape4 shape, uint64_t seed, double lo = -1.0,
                                    double hi = 1.0) {
    ag::Tensor4<double> t(shape);
    Rng rng(seed);
    for (auto& v : t.v) v = rng.uniform(lo, hi);
    return ag::make_var(std::move(t), true);
}

}  // namespace oct::testutil
