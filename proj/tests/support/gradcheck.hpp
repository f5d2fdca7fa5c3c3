#pragma once

#include <functional>
#include <vector>

#include "spanlab/tensor.hpp"

namespace testsupport {

// Independent gradient oracle: central finite differences with the given
// step, evaluated tape-free. Returns the worst relative error over every
// component of every watched leaf, with rel err = |a - n| / max(1, |n|).
inline double grad_check(const std::vector<spanlab::Tensor>& leaves,
                         const std::function<spanlab::Tensor()>& make_loss,
                         double step = 1e-5) {
    using spanlab::Tape;
    using spanlab::Tensor;

    std::vector<std::vector<double>> analytic;
    {
        std::vector<Tensor> watched = leaves;
        for (auto& t : watched) t.set_requires_grad(true);
        Tape tape;
        Tensor loss = make_loss();
        tape.backward(loss);
        for (auto& t : watched) {
            analytic.push_back(t.has_grad() ? t.grad()
                                            : std::vector<double>(t.numel(), 0.0));
            t.zero_grad();
            t.set_requires_grad(false);
        }
    }

    double worst = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Tensor t = leaves[li];
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double keep = t.raw()[i];
            t.raw()[i] = keep + step;
            const double fp = make_loss().item();
            t.raw()[i] = keep - step;
            const double fm = make_loss().item();
            t.raw()[i] = keep;
            const double numeric = (fp - fm) / (2.0 * step);
            const double a = analytic[li][i];
            const double err = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

inline spanlab::Tensor random_tensor(spanlab::Shape shape, spanlab::Rng& rng, double lo = -2.0,
                                     double hi = 2.0) {
    spanlab::Tensor t = spanlab::Tensor::zeros(std::move(shape));
    for (auto& v : t.raw()) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace testsupport
