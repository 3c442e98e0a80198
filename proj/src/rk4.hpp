#pragma once

// Private helpers shared by the single-model and coupled integrators.

#include <cmath>

#include "handy/dynamics.hpp"

namespace handy::detail {

inline StateVector axpy(const StateVector& x, double a, const StateVector& k) {
    return {x.xC + a * k.xC, x.xE + a * k.xE, x.y + a * k.y, x.w + a * k.w};
}

inline StateVector rk4_combine(const StateVector& x, double dt, const StateVector& k1,
                               const StateVector& k2, const StateVector& k3,
                               const StateVector& k4) {
    const double h = dt / 6.0;
    return {x.xC + h * (k1.xC + 2.0 * k2.xC + 2.0 * k3.xC + k4.xC),
            x.xE + h * (k1.xE + 2.0 * k2.xE + 2.0 * k3.xE + k4.xE),
            x.y + h * (k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y),
            x.w + h * (k1.w + 2.0 * k2.w + 2.0 * k3.w + k4.w)};
}

inline bool finite(const StateVector& x) {
    return std::isfinite(x.xC) && std::isfinite(x.xE) && std::isfinite(x.y) &&
           std::isfinite(x.w);
}

// Clamp at zero, then snap vanishing populations and nature to exact zero.
inline void clamp_state(StateVector& x, double floor) {
    x.xC = x.xC < floor ? 0.0 : x.xC;
    x.xE = x.xE < floor ? 0.0 : x.xE;
    x.y = x.y < floor ? 0.0 : x.y;
    x.w = x.w < 0.0 ? 0.0 : x.w;
}

template <class Rhs>
inline StateVector rk4_step(const Rhs& f, const StateVector& x, double dt) {
    const StateVector k1 = f(x);
    const StateVector k2 = f(axpy(x, 0.5 * dt, k1));
    const StateVector k3 = f(axpy(x, 0.5 * dt, k2));
    const StateVector k4 = f(axpy(x, dt, k3));
    return rk4_combine(x, dt, k1, k2, k3, k4);
}

const char* first_nonfinite(const StateVector& x);

}  // namespace handy::detail
