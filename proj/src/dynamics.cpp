#include "handy/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "rk4.hpp"

namespace handy {

namespace detail {

const char* first_nonfinite(const StateVector& x) {
    for (std::size_t i = 0; i < 4; ++i)
        if (!std::isfinite(x[i])) return kStateNames[i].data();
    return nullptr;
}

}  // namespace detail

namespace {

constexpr double kEmptyClass = 1e-12;

[[noreturn]] void bad_term(const char* term) {
    throw IntegrationError(std::string("non-finite term: ") + term, NAN);
}

void check(double v, const char* term) {
    if (!std::isfinite(v)) bad_term(term);
}

}  // namespace

// ---- parameters ------------------------------------------------------------

void PredatorPreyParams::validate() const {
    for (double v : {alpha, beta, gamma, delta, x0, y0})
        if (!(v > 0.0) || !std::isfinite(v))
            throw ConfigurationError("predator-prey parameters must be strictly positive");
}

std::array<double, HandyParams::kSize> HandyParams::to_array() const {
    return {alpha_m, alpha_M, beta_C, beta_E, s,    rho, gamma_nat, lambda_cap,
            kappa,   delta_mult, mu_eq, xC0, xE0, y0,  w0};
}

HandyParams HandyParams::from_array(std::span<const double> v) {
    if (v.size() != kSize)
        throw ShapeError("parameter vector needs 15 components, got " + std::to_string(v.size()));
    HandyParams p;
    for (std::size_t i = 0; i < kSize; ++i) p[i] = v[i];
    return p;
}

const std::array<std::string_view, HandyParams::kSize>& HandyParams::names() {
    static const std::array<std::string_view, kSize> n{
        "alpha_m", "alpha_M",  "beta_C", "beta_E", "s",   "rho", "gamma_nat", "lambda_cap",
        "kappa",   "delta_mult", "mu_eq", "xC0",   "xE0", "y0",  "w0"};
    return n;
}

std::size_t HandyParams::index_of(std::string_view name) {
    const auto& n = names();
    for (std::size_t i = 0; i < kSize; ++i)
        if (n[i] == name) return i;
    throw ConfigurationError("unknown parameter '" + std::string(name) + "'");
}

double& HandyParams::operator[](std::size_t i) {
    switch (i) {
        case 0: return alpha_m;
        case 1: return alpha_M;
        case 2: return beta_C;
        case 3: return beta_E;
        case 4: return s;
        case 5: return rho;
        case 6: return gamma_nat;
        case 7: return lambda_cap;
        case 8: return kappa;
        case 9: return delta_mult;
        case 10: return mu_eq;
        case 11: return xC0;
        case 12: return xE0;
        case 13: return y0;
        case 14: return w0;
        default: throw ShapeError("parameter index out of range");
    }
}

double HandyParams::operator[](std::size_t i) const {
    return const_cast<HandyParams&>(*this)[i];
}

void HandyParams::validate() const {
    const auto a = to_array();
    for (std::size_t i = 0; i < kSize; ++i) {
        if (!std::isfinite(a[i]) || a[i] < 0.0)
            throw ConfigurationError("parameter " + std::string(names()[i]) +
                                     " must be finite and non-negative");
    }
    if (alpha_M < alpha_m) throw ConfigurationError("alpha_M must be >= alpha_m");
    if (kappa < 1.0) throw ConfigurationError("kappa must be >= 1");
}

HandyParams ground_truth_params() { return HandyParams{}; }

HandyParams egalitarian_params(double delta_mult) {
    HandyParams p;
    p.alpha_m = 0.01;
    p.alpha_M = 0.07;
    p.beta_C = 0.03;
    p.beta_E = 0.03;
    p.s = 5e-4;
    p.rho = 5e-3;
    p.gamma_nat = 0.01;
    p.lambda_cap = 100.0;
    p.kappa = 1.0;
    p.delta_mult = delta_mult;
    p.xC0 = 100.0;
    p.xE0 = 0.0;
    p.y0 = p.lambda_cap;
    p.w0 = 0.0;
    return p;
}

HandyParams equitable_params(double delta_mult, double xE0) {
    HandyParams p = egalitarian_params(delta_mult);
    p.xE0 = xE0;
    return p;
}

// ---- state -----------------------------------------------------------------

double& StateVector::operator[](std::size_t i) {
    switch (i) {
        case 0: return xC;
        case 1: return xE;
        case 2: return y;
        case 3: return w;
        default: throw ShapeError("state index out of range");
    }
}

double StateVector::operator[](std::size_t i) const {
    return const_cast<StateVector&>(*this)[i];
}

StateVector initial_state(const HandyParams& p) { return {p.xC0, p.xE0, p.y0, p.w0}; }
StateVector initial_state(const PredatorPreyParams& p) { return {p.x0, 0.0, p.y0, 0.0}; }

// ---- variants --------------------------------------------------------------

Changes changes_of(Variant v) {
    switch (v) {
        case Variant::Handy1: return {true, false, true};
        case Variant::Handy2: return {false, true, true};
        case Variant::Handy3: return {true, true, false};
        case Variant::Handy4: return {true, true, true};
        default: return {};
    }
}

Variant parse_variant(std::string_view s) {
    if (s == "predator-prey" || s == "PredatorPrey") return Variant::PredatorPrey;
    if (s == "handy" || s == "Handy") return Variant::Handy;
    if (s == "handy1" || s == "Handy1") return Variant::Handy1;
    if (s == "handy2" || s == "Handy2") return Variant::Handy2;
    if (s == "handy3" || s == "Handy3") return Variant::Handy3;
    if (s == "handy4" || s == "Handy4") return Variant::Handy4;
    throw ConfigurationError("unknown model variant '" + std::string(s) + "'");
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::PredatorPrey: return "predator-prey";
        case Variant::Handy: return "handy";
        case Variant::Handy1: return "handy1";
        case Variant::Handy2: return "handy2";
        case Variant::Handy3: return "handy3";
        case Variant::Handy4: return "handy4";
    }
    return "?";
}

// ---- model terms -----------------------------------------------------------

double depletion_eta(const HandyParams& p) {
    const double eta = (p.alpha_M - p.beta_C) / (p.alpha_M - p.alpha_m);
    return std::clamp(eta, 1e-6, 1.0);
}

double effective_depletion(const HandyParams& p, DepletionBase base) {
    if (!(p.alpha_M > p.alpha_m)) throw ConfigurationError("depletion needs alpha_M > alpha_m");
    if (!(p.lambda_cap > 0.0)) throw ConfigurationError("depletion needs lambda_cap > 0");
    const double eta = base == DepletionBase::PerParameter ? depletion_eta(p) : kReferenceEta;
    const double d = p.delta_mult * 2.0 * eta * p.s / p.lambda_cap;
    if (!std::isfinite(d)) throw ConfigurationError("effective depletion is not finite");
    return d;
}

namespace {

inline Consumption consumption_impl(const HandyParams& p, const StateVector& x, const Changes& ch) {
    const double w_th = ch.C ? p.rho * (x.xC + x.xE) : p.rho * x.xC + p.kappa * p.rho * x.xE;
    const double r = w_th > 0.0 ? std::min(1.0, x.w / w_th) : 1.0;
    const double C_C = r * p.s * x.xC;
    const double C_E = r * (ch.B ? 1.0 : p.kappa) * p.s * x.xE;
    return {C_C, C_E, w_th};
}

inline double famine_death(const HandyParams& p, double C, double pop) {
    if (pop < kEmptyClass) return p.alpha_m;
    const double short_fall = std::max(0.0, 1.0 - C / (p.s * pop));
    return p.alpha_m + short_fall * (p.alpha_M - p.alpha_m);
}

}  // namespace

Consumption consumption_and_threshold(const HandyParams& p, const StateVector& x, Variant v) {
    return consumption_impl(p, x, changes_of(v));
}

DeathRates death_rates(const HandyParams& p, const StateVector& x, double C_C, double C_E) {
    return {famine_death(p, C_C, x.xC), famine_death(p, C_E, x.xE)};
}

HandyRhs::HandyRhs(const HandyParams& p, Variant v, const DynamicsOptions& opt)
    : p_(p), v_(v), ch_(changes_of(v)), delta_(effective_depletion(p, opt.depletion_base)) {
    if (v == Variant::PredatorPrey)
        throw ConfigurationError("HANDY right-hand side requested for predator-prey variant");
}

StateVector HandyRhs::operator()(const StateVector& x) const {
    const Consumption c = consumption_impl(p_, x, ch_);
    const double aC = famine_death(p_, c.C_C, x.xC);
    const double aE = famine_death(p_, c.C_E, x.xE);
    const double prod = ch_.A ? x.xC + x.xE : x.xC;
    const double depl = delta_ * prod * x.y;
    return {p_.beta_C * x.xC - aC * x.xC,
            p_.beta_E * x.xE - aE * x.xE,
            p_.gamma_nat * x.y * (p_.lambda_cap - x.y) - depl,
            depl - c.C_C - c.C_E};
}

StateVector derivatives(const HandyParams& p, const StateVector& x, Variant v,
                        const DynamicsOptions& opt) {
    const HandyRhs rhs(p, v, opt);
    const Changes ch = changes_of(v);
    // Term-by-term pass so a failure names its source.
    const Consumption c = consumption_impl(p, x, ch);
    check(c.w_th, "wealth threshold");
    check(c.C_C, "commoner consumption");
    check(c.C_E, "elite consumption");
    const DeathRates a = death_rates(p, x, c.C_C, c.C_E);
    check(a.alpha_C, "commoner death rate");
    check(a.alpha_E, "elite death rate");
    const double prod = ch.A ? x.xC + x.xE : x.xC;
    check(rhs.depletion() * prod * x.y, "depletion");
    check(p.gamma_nat * x.y * (p.lambda_cap - x.y), "regeneration");
    return rhs(x);
}

StateVector derivatives(const PredatorPreyParams& p, const StateVector& x) {
    const double dx = p.alpha * x.xC * x.y - p.beta * x.xC;
    const double dy = p.gamma * x.y - p.delta * x.xC * x.y;
    check(dx, "predator growth");
    check(dy, "prey growth");
    return {dx, 0.0, dy, 0.0};
}

// ---- integration -----------------------------------------------------------

std::size_t step_count(double t0, double t_end, double dt) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigurationError("dt must be positive");
    if (!(t_end >= t0)) throw ConfigurationError("t_end must not precede t0");
    const double span = t_end - t0;
    const double n = std::round(span / dt);
    if (std::abs(n * dt - span) > 1e-9 * std::max(1.0, span))
        throw ConfigurationError("dt does not divide the integration span");
    return static_cast<std::size_t>(n);
}

namespace {

void validate_options(const DynamicsOptions& opt) {
    if (!(opt.extinction_floor >= 0.0)) throw ConfigurationError("extinction floor must be >= 0");
}

template <class Rhs, class Sink>
void integrate(const Rhs& f, StateVector x, double t0, double dt, std::size_t n, double floor,
               Sink&& sink) {
    sink(std::size_t{0}, x);
    for (std::size_t i = 1; i <= n; ++i) {
        x = detail::rk4_step(f, x, dt);
        if (!detail::finite(x)) {
            const double t = t0 + static_cast<double>(i) * dt;
            throw IntegrationError(std::string("integration diverged in ") +
                                       detail::first_nonfinite(x) + " at t=" + std::to_string(t),
                                   t);
        }
        detail::clamp_state(x, floor);
        sink(i, x);
    }
}

}  // namespace

Trajectory simulate(const HandyParams& p, Variant v, double t0, double t_end,
                    const DynamicsOptions& opt) {
    validate_options(opt);
    const std::size_t n = step_count(t0, t_end, opt.dt);
    const HandyRhs f(p, v, opt);
    Trajectory tr{t0, opt.dt, {}};
    tr.states.reserve(n + 1);
    StateVector x0 = initial_state(p);
    detail::clamp_state(x0, 0.0);
    integrate(f, x0, t0, opt.dt, n, opt.extinction_floor,
              [&](std::size_t, const StateVector& x) { tr.states.push_back(x); });
    return tr;
}

Trajectory simulate(const PredatorPreyParams& p, double t0, double t_end, double dt) {
    p.validate();
    const std::size_t n = step_count(t0, t_end, dt);
    Trajectory tr{t0, dt, {}};
    tr.states.reserve(n + 1);
    auto f = [&p](const StateVector& x) {
        return StateVector{p.alpha * x.xC * x.y - p.beta * x.xC, 0.0,
                           p.gamma * x.y - p.delta * x.xC * x.y, 0.0};
    };
    integrate(f, initial_state(p), t0, dt, n, 0.0,
              [&](std::size_t, const StateVector& x) { tr.states.push_back(x); });
    return tr;
}

StateVector simulate_final(const HandyParams& p, Variant v, double t0, double t_end,
                           const DynamicsOptions& opt) {
    validate_options(opt);
    const std::size_t n = step_count(t0, t_end, opt.dt);
    const HandyRhs f(p, v, opt);
    StateVector out;
    StateVector x0 = initial_state(p);
    detail::clamp_state(x0, 0.0);
    integrate(f, x0, t0, opt.dt, n, opt.extinction_floor,
              [&](std::size_t i, const StateVector& x) {
                  if (i == n) out = x;
              });
    return out;
}

std::size_t Trajectory::index_at(double t) const {
    if (states.empty()) throw RangeError("empty trajectory");
    const double pos = (t - t0) / dt;
    const double last = static_cast<double>(states.size() - 1);
    if (pos < -1e-6 || pos > last + 1e-6)
        throw RangeError("time " + std::to_string(t) + " outside trajectory span");
    return static_cast<std::size_t>(std::clamp(std::round(pos), 0.0, last));
}

void Trajectory::write_csv(std::ostream& os) const {
    os << "t,x_C,x_E,y,w\n";
    char buf[160];
    for (std::size_t n = 0; n < states.size(); ++n) {
        const auto& x = states[n];
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", time(n), x.xC, x.xE,
                      x.y, x.w);
        os << buf;
    }
}

namespace {

std::vector<double> window_times(double t_start, double t_end, int f) {
    if (f < 1) throw ConfigurationError("sampling frequency must be >= 1");
    if (!(t_end > t_start)) throw RangeError("sampling window must have positive length");
    std::vector<double> ts(static_cast<std::size_t>(f) + 1);
    for (int j = 0; j <= f; ++j) ts[j] = t_start + j * (t_end - t_start) / f;
    ts.back() = t_end;
    return ts;
}

}  // namespace

SampledSeries sample_window(const Trajectory& traj, double t_start, double t_end, int f) {
    SampledSeries out{t_start, t_end, f, window_times(t_start, t_end, f), {}};
    out.values.reserve(out.times.size());
    for (double t : out.times) out.values.push_back(traj.at(t));
    return out;
}

std::vector<SampledSeries> simulate_sampled(const HandyParams& p, Variant v, double t0,
                                            std::span<const std::array<double, 2>> windows,
                                            int f, const DynamicsOptions& opt) {
    validate_options(opt);
    std::vector<SampledSeries> out;
    // (grid index, window, slot) requests
    std::vector<std::array<std::size_t, 3>> req;
    std::size_t last = 0;
    for (std::size_t k = 0; k < windows.size(); ++k) {
        const auto [a, b] = windows[k];
        if (a < t0 - 1e-9) throw RangeError("sampling window starts before t0");
        SampledSeries s{a, b, f, window_times(a, b, f), {}};
        s.values.resize(s.times.size());
        for (std::size_t j = 0; j < s.times.size(); ++j) {
            const auto idx = static_cast<std::size_t>(std::round((s.times[j] - t0) / opt.dt));
            req.push_back({idx, k, j});
            last = std::max(last, idx);
        }
        out.push_back(std::move(s));
    }
    std::sort(req.begin(), req.end());
    const HandyRhs rhs(p, v, opt);
    StateVector x0 = initial_state(p);
    detail::clamp_state(x0, 0.0);
    std::size_t r = 0;
    integrate(rhs, x0, t0, opt.dt, last, opt.extinction_floor,
              [&](std::size_t i, const StateVector& x) {
                  while (r < req.size() && req[r][0] == i) {
                      out[req[r][1]].values[req[r][2]] = x;
                      ++r;
                  }
              });
    return out;
}

}  // namespace handy
