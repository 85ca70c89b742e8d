#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "thinkgen/array.hpp"
#include "thinkgen/error.hpp"
#include "thinkgen/tape.hpp"

namespace thinkgen {

// Scalar function of a list of parameter leaves, built on a caller-provided tape.
using ScalarFn = std::function<NodeId(Tape&, const std::vector<NodeId>&)>;

struct GradCheckReport {
    struct PerParam {
        double max_rel_err = 0.0;
        int64_t worst_index = -1;
        std::vector<int64_t> kinks; // elements where one-sided slopes disagree; excluded
    };
    std::vector<PerParam> per_param;
    double max_rel_err = 0.0;
    bool pass = false;
};

namespace detail {

inline double eval_scalar(const ScalarFn& f, const std::vector<Array>& params) {
    Tape t(false);
    std::vector<NodeId> ids;
    ids.reserve(params.size());
    for (const auto& p : params) ids.push_back(t.leaf(p));
    NodeId root = f(t, ids);
    if (!t.val(root).is_scalar()) throw ContractError("grad_check: f must return a scalar");
    return static_cast<double>(t.val(root)[0]);
}

} // namespace detail

// Central finite differences against the tape's analytic gradient.
// Elements whose forward/backward one-sided slopes disagree badly are reported
// as non-differentiable points and excluded from the pass/fail verdict.
inline GradCheckReport grad_check(const ScalarFn& f, std::vector<Array> params, double h = 1e-5,
                                  double tol = 1e-5) {
    if (h <= 0.0) throw ContractError("grad_check: h must be positive");

    const double f0 = detail::eval_scalar(f, params);
    const double f0_again = detail::eval_scalar(f, params);
    if (f0 != f0_again) throw DeterminismError("grad_check: f returned different values on identical inputs");

    // analytic pass
    Tape t;
    std::vector<NodeId> ids;
    for (const auto& p : params) ids.push_back(t.leaf(p, true));
    NodeId root = f(t, ids);
    if (!t.val(root).is_scalar()) throw ContractError("grad_check: f must return a scalar");
    t.backward(root);
    std::vector<Array> analytic;
    for (size_t i = 0; i < params.size(); ++i) {
        auto g = t.grad(ids[i]);
        analytic.push_back(g ? *g : Array::zeros(params[i].shape));
    }

    GradCheckReport report;
    report.per_param.resize(params.size());
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& pp = report.per_param[pi];
        for (int64_t e = 0; e < params[pi].numel(); ++e) {
            const real orig = params[pi][e];
            params[pi][e] = orig + static_cast<real>(h);
            const double fp = detail::eval_scalar(f, params);
            params[pi][e] = orig - static_cast<real>(h);
            const double fm = detail::eval_scalar(f, params);
            params[pi][e] = orig;

            const double fwd = (fp - f0) / h;
            const double bwd = (f0 - fm) / h;
            if (std::abs(fwd - bwd) > 0.1 * (std::abs(fwd) + std::abs(bwd) + 1.0)) {
                pp.kinks.push_back(e);
                continue;
            }
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = static_cast<double>(analytic[pi][e]);
            const double rel = std::abs(a - numeric) / std::max({1e-4, std::abs(a), std::abs(numeric)});
            if (rel > pp.max_rel_err) {
                pp.max_rel_err = rel;
                pp.worst_index = e;
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, pp.max_rel_err);
    }
    report.pass = report.max_rel_err <= tol;
    return report;
}

} // namespace thinkgen
