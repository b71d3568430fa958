// fit.hpp - ordinary least squares line fits used by the scaling-law diagnostics

#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "pfflow/error.hpp"

namespace pfflow {

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    int points = 0;
};

inline LineFit fit_line(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw InvalidArgument("fit_line: size mismatch");
    if (x.size() < 2) throw InvalidArgument("fit_line: need at least two points");
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
    }
    const double mx = sx / n, my = sy / n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) throw InvalidArgument("fit_line: degenerate abscissae");
    LineFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.r_squared = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
    fit.points = static_cast<int>(x.size());
    return fit;
}

/// Fit of log(y) against log(x); points with y <= 0 are rejected.
inline LineFit fit_loglog(std::span<const double> x, std::span<const double> y) {
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(y[i] > 0.0) || !(x[i] > 0.0)) throw InvalidArgument("fit_loglog: nonpositive data");
        lx.push_back(std::log(x[i]));
        ly.push_back(std::log(y[i]));
    }
    return fit_line(lx, ly);
}

}  // namespace pfflow
