// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dartslab/tensor.hpp"

namespace dartslab {

struct GradCheckReport {
    bool ok = true;
    double max_rel_err = 0.0;
    std::size_t worst_coordinate = 0;
    std::size_t coordinates = 0;
};

/// Central-finite-difference gradient verification.
///
/// `loss` recomputes the forward pass from the current contents of the
/// parameter storage and returns the scalar loss. `params` are pointers into
/// that storage; `analytic` are the gradients to verify, flattened in the
/// same order. Relative error per coordinate uses a small floor so that
/// near-zero gradients are compared absolutely.
inline GradCheckReport check_gradients(const std::function<double()>& loss,
                                       std::span<double* const> params,
                                       std::span<const double> analytic, double step = 1e-5,
                                       double rel_tol = 1e-4, double floor = 1e-3) {
    GradCheckReport rep;
    rep.coordinates = params.size();
    for (std::size_t i = 0; i < params.size(); ++i) {
        double* p = params[i];
        double orig = *p;
        *p = orig + step;
        double up = loss();
        *p = orig - step;
        double down = loss();
        *p = orig;
        double numeric = (up - down) / (2.0 * step);
        double a = analytic[i];
        double denom = std::max({std::fabs(a), std::fabs(numeric), floor});
        double rel = std::fabs(a - numeric) / denom;
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_coordinate = i;
        }
    }
    rep.ok = rep.max_rel_err <= rel_tol;
    return rep;
}

/// Convenience: gathers coordinate pointers from whole tensors.
inline std::vector<double*> tensor_coords(std::vector<Tensor*> tensors) {
    std::vector<double*> out;
    for (Tensor* t : tensors)
        for (auto& x : t->v) out.push_back(&x);
    return out;
}

}  // namespace dartslab
