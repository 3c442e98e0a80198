#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "handy/errors.hpp"

namespace handy {

// Lotka-Volterra pair. x is the predator, y the prey.
struct PredatorPreyParams {
    double alpha = 3e-5;   // predator birth per prey met
    double beta = 0.02;    // predator death
    double gamma = 0.03;   // prey birth
    double delta = 2e-4;   // predation
    double x0 = 100.0;
    double y0 = 1000.0;

    void validate() const;
};

// The 15-component parameter vector: 11 model parameters followed by the
// four initial state values. Order is fixed and used everywhere
// (priors, CSV columns, Sobol factors).
struct HandyParams {
    static constexpr std::size_t kSize = 15;

    double alpha_m = 0.01;
    double alpha_M = 0.07;
    double beta_C = 0.065;
    double beta_E = 0.02;
    double s = 5e-4;
    double rho = 5e-3;
    double gamma_nat = 0.01;
    double lambda_cap = 100.0;
    double kappa = 10.0;
    double delta_mult = 2.04;
    double mu_eq = 0.65;  // carried but dynamically inert
    double xC0 = 1e4;
    double xE0 = 3e3;
    double y0 = 100.0;
    double w0 = 100.0;

    std::array<double, kSize> to_array() const;
    static HandyParams from_array(std::span<const double> v);

    static const std::array<std::string_view, kSize>& names();
    static std::size_t index_of(std::string_view name);  // throws ConfigurationError

    double& operator[](std::size_t i);
    double operator[](std::size_t i) const;

    void validate() const;
};

// Ground-truth society used by the experiments.
HandyParams ground_truth_params();

// Egalitarian reference society: no elites, nature at capacity, no wealth.
HandyParams egalitarian_params(double delta_mult);

// Equitable society: elites exist but kappa = 1.
HandyParams equitable_params(double delta_mult, double xE0);

struct StateVector {
    double xC = 0.0;
    double xE = 0.0;
    double y = 0.0;
    double w = 0.0;

    double& operator[](std::size_t i);
    double operator[](std::size_t i) const;
    bool operator==(const StateVector&) const = default;
};

inline constexpr std::array<std::string_view, 4> kStateNames{"x_C", "x_E", "y", "w"};

enum class Variant { PredatorPrey, Handy, Handy1, Handy2, Handy3, Handy4 };

struct Changes {
    bool A = false;  // production/depletion driven by the whole population
    bool B = false;  // elites consume like commoners
    bool C = false;  // single threshold rate for both classes
};

Changes changes_of(Variant v);
Variant parse_variant(std::string_view s);
std::string to_string(Variant v);

enum class DepletionBase {
    // delta* = 2 * eta_ref * s / lambda with eta_ref = 2/3 held fixed
    ReferenceSociety,
    // delta* = 2 * eta * s / lambda with eta computed from the candidate
    PerParameter,
};

struct DynamicsOptions {
    DepletionBase depletion_base = DepletionBase::ReferenceSociety;
    // populations / nature below this are set to exactly 0 after a step
    double extinction_floor = 1e-12;
    double dt = 0.05;
};

inline constexpr double kReferenceEta = 2.0 / 3.0;

double depletion_eta(const HandyParams& p);
double effective_depletion(const HandyParams& p,
                           DepletionBase base = DepletionBase::ReferenceSociety);

struct Consumption {
    double C_C;
    double C_E;
    double w_th;
};

Consumption consumption_and_threshold(const HandyParams& p, const StateVector& x, Variant v);

struct DeathRates {
    double alpha_C;
    double alpha_E;
};

DeathRates death_rates(const HandyParams& p, const StateVector& x, double C_C, double C_E);

StateVector initial_state(const HandyParams& p);
StateVector initial_state(const PredatorPreyParams& p);

// Right-hand side with the depletion coefficient already resolved.
// Hot path for the integrators.
class HandyRhs {
public:
    HandyRhs(const HandyParams& p, Variant v, const DynamicsOptions& opt = {});

    StateVector operator()(const StateVector& x) const;
    const HandyParams& params() const { return p_; }
    Variant variant() const { return v_; }
    double depletion() const { return delta_; }

private:
    HandyParams p_;
    Variant v_;
    Changes ch_;
    double delta_;
};

StateVector derivatives(const HandyParams& p, const StateVector& x, Variant v,
                        const DynamicsOptions& opt = {});
// Predator x is stored in the xC slot, prey y in the y slot.
StateVector derivatives(const PredatorPreyParams& p, const StateVector& x);

struct Trajectory {
    double t0 = 0.0;
    double dt = 0.05;
    std::vector<StateVector> states;

    std::size_t size() const { return states.size(); }
    double time(std::size_t n) const { return t0 + static_cast<double>(n) * dt; }
    double t_end() const { return time(states.size() - 1); }
    // nearest grid index; throws RangeError outside the span
    std::size_t index_at(double t) const;
    const StateVector& at(double t) const { return states[index_at(t)]; }

    void write_csv(std::ostream& os) const;
};

struct SampledSeries {
    double t_start = 0.0;
    double t_end = 0.0;
    int f = 1;
    std::vector<double> times;
    std::vector<StateVector> values;

    std::size_t size() const { return times.size(); }
};

Trajectory simulate(const HandyParams& p, Variant v, double t0, double t_end,
                    const DynamicsOptions& opt = {});
Trajectory simulate(const PredatorPreyParams& p, double t0, double t_end, double dt = 0.05);

// Same integration, only the state at t_end is kept.
StateVector simulate_final(const HandyParams& p, Variant v, double t0, double t_end,
                           const DynamicsOptions& opt = {});

SampledSeries sample_window(const Trajectory& traj, double t_start, double t_end, int f);

// Integrates and samples the given windows in one pass, storing nothing else.
// Windows must start at or after t0.
std::vector<SampledSeries> simulate_sampled(const HandyParams& p, Variant v, double t0,
                                            std::span<const std::array<double, 2>> windows,
                                            int f, const DynamicsOptions& opt = {});

// Number of fixed steps covering [t0, t_end]; throws ConfigurationError when
// dt does not divide the span.
std::size_t step_count(double t0, double t_end, double dt);

}  // namespace handy
