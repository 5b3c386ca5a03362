#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "nse/params.hpp"
#include "nse/tensor.hpp"

namespace nse {

// Central finite-difference check of reverse-mode gradients.
//
// `build_loss` must rebuild the scalar loss graph from the current parameter
// values and be deterministic call-to-call (stochastic nodes must take their
// noise from a fixed source, e.g. a reseeded generator). Determinism is
// probed by evaluating twice before any differencing; a mismatch rejects the
// function rather than producing garbage error estimates.
//
// Relative error uses an absolute floor: |a-n| / max(|a|, |n|, floor). Near
// the floor the comparison degrades to absolute error, which keeps finite-
// difference noise on saturated (near-zero-gradient) paths from drowning the
// report while still flagging any wrong formula on a live path.
struct GradCheckGroup {
    std::string name;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    bool has_nan = false;
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

inline GradCheckReport grad_check(const std::function<Tensor()>& build_loss, ParamRegistry& reg,
                                  double step = 1e-5, double tolerance = 1e-4,
                                  double rel_floor = 1e-2) {
    const Tensor probe_a = build_loss();
    const Tensor probe_b = build_loss();
    if (probe_a.numel() != 1)
        throw ShapeError("grad_check: loss must be scalar, got " + shape_str(probe_a.shape()));
    if (probe_a.item() != probe_b.item())
        throw Error("grad_check: function is not deterministic (stochastic nodes must take fixed noise)");

    // analytic gradients
    reg.zero_grad();
    Tensor loss = build_loss();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(reg.size());
    for (auto& e : reg.entries()) {
        e.tensor.node()->ensure_grad();
        analytic.push_back(e.tensor.grad());
    }

    GradCheckReport report;
    report.tolerance = tolerance;
    for (std::size_t gi = 0; gi < reg.size(); ++gi) {
        auto& e = reg.entries()[gi];
        GradCheckGroup group;
        group.name = e.name;
        auto& vals = e.tensor.mutable_value();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double keep = vals[i];
            vals[i] = keep + step;
            const double up = build_loss().item();
            vals[i] = keep - step;
            const double down = build_loss().item();
            vals[i] = keep;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[gi][i];
            if (std::isnan(a) || std::isnan(numeric)) {
                group.has_nan = true;
                group.max_rel_err = std::numeric_limits<double>::infinity();
                continue;
            }
            const double abs_err = std::fabs(a - numeric);
            const double rel = abs_err / std::max({std::fabs(a), std::fabs(numeric), rel_floor});
            group.max_abs_err = std::max(group.max_abs_err, abs_err);
            group.max_rel_err = std::max(group.max_rel_err, rel);
        }
        report.max_rel_err = std::max(report.max_rel_err, group.max_rel_err);
        report.groups.push_back(std::move(group));
    }
    report.pass = report.max_rel_err <= tolerance;
    reg.zero_grad();
    return report;
}

}  // namespace nse
