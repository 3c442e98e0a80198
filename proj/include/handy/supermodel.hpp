#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "handy/dynamics.hpp"
#include "handy/inference.hpp"

namespace handy {

struct Submodel {
    HandyParams params;
    Variant variant = Variant::Handy;
};

// Coefficients C^i_{mu nu} for the coupled variables i. Stored densely
// (4 x M x M, zero diagonal). Symmetric tensors keep C_{mu nu} = C_{nu mu}.
class CouplingTensor {
public:
    CouplingTensor() = default;
    CouplingTensor(std::size_t M, VariableMask vars, double lo = 0.0, double hi = 0.5,
                   bool symmetric = true);

    std::size_t members() const { return M_; }
    const VariableMask& variables() const { return vars_; }
    bool symmetric() const { return symmetric_; }
    double lo() const { return lo_; }
    double hi() const { return hi_; }

    double operator()(std::size_t var, std::size_t mu, std::size_t nu) const {
        return c_[(var * M_ + mu) * M_ + nu];
    }
    void set(std::size_t var, std::size_t mu, std::size_t nu, double value);
    void fill(double value);

    // Free coefficients in (variable, mu, nu) order: mu < nu when symmetric,
    // mu != nu otherwise.
    std::size_t free_count() const;
    std::vector<double> free_values() const;
    void set_free_values(std::span<const double> v);
    std::vector<std::string> free_names() const;

    bool within_bounds() const;
    void write_csv(std::ostream& os) const;

private:
    std::size_t M_ = 0;
    VariableMask vars_{};
    double lo_ = 0.0, hi_ = 0.5;
    bool symmetric_ = true;
    std::vector<double> c_;
};

// Only x_E coupled: the default topology.
inline constexpr VariableMask kCoupleElites{false, true, false, false};

std::vector<StateVector> coupled_derivatives(std::span<const Submodel> submodels,
                                             std::span<const StateVector> states,
                                             const CouplingTensor& C,
                                             const DynamicsOptions& opt = {});

struct SupermodelRun {
    std::vector<Trajectory> members;
    Trajectory ensemble;

    void write_csv(std::ostream& os) const;
};

// Each submodel starts from its own initial state at t0.
SupermodelRun simulate_supermodel(std::span<const Submodel> submodels, const CouplingTensor& C,
                                  double t0, double t_end, const DynamicsOptions& opt = {});

// Ensemble only, sampled on the given windows.
std::vector<SampledSeries> simulate_supermodel_sampled(
    std::span<const Submodel> submodels, const CouplingTensor& C, double t0,
    std::span<const std::array<double, 2>> windows, int f, const DynamicsOptions& opt = {});

struct SumoErrorConfig {
    std::size_t K = 5;
    double gamma_discount = 0.5;

    void validate() const;
};

// Discounted squared error, averaged over K equal sub-intervals of the
// observation window. Boundary samples belong to both neighbours.
double sumo_error(const SampledSeries& predicted, const SampledSeries& observed,
                  const SumoErrorConfig& cfg = {});
double sumo_error(const Trajectory& ensemble, const SampledSeries& observed,
                  const SumoErrorConfig& cfg = {});

enum class CouplingLoss { SumoError, Rmse };
CouplingLoss parse_coupling_loss(const std::string& s);
std::string to_string(CouplingLoss l);

struct CouplingTrainConfig {
    VariableMask vars = kCoupleElites;
    double lo = 0.0;
    double hi = 0.5;
    CouplingLoss loss = CouplingLoss::SumoError;
    SumoErrorConfig error;
    SmcConfig smc;
    DynamicsOptions dynamics;
    double t0 = 0.0;
};

struct CouplingTrainResult {
    CouplingTensor coupling;
    double loss = 0.0;
    std::vector<double> loss_trace;  // best loss per generation
    std::size_t evaluations = 0;
    SmcResult smc;
};

// Loss of one tensor against observations, simulating from t0.
double coupling_loss(std::span<const Submodel> submodels, const CouplingTensor& C,
                     const SampledSeries& observed, CouplingLoss loss,
                     const SumoErrorConfig& err = {}, const DynamicsOptions& opt = {},
                     double t0 = 0.0);

CouplingTrainResult train_coupling(std::span<const Submodel> submodels,
                                   const SampledSeries& observed, const CouplingTrainConfig& cfg);

// ---- nudging ---------------------------------------------------------------

struct NudgingConfig {
    StateVector K{};          // per-variable gains towards the truth
    double a = 0.0;           // adaptation rate
    double eps_barrier = 1e-6;
    double C_max = 0.5;
    double delta_floor = 0.0;

    void validate() const;
};

struct NudgedState {
    std::vector<StateVector> states;
    CouplingTensor C;  // directed
};

// One RK4 step of the nudged states together with the coefficient flow.
NudgedState nudged_training_step(std::span<const Submodel> submodels,
                                 std::span<const StateVector> states, const CouplingTensor& C,
                                 const StateVector& truth, const NudgingConfig& cfg, double dt,
                                 const DynamicsOptions& opt = {});

// ---- attractor distances ---------------------------------------------------

enum class AttractorDistance { W, V, U };
AttractorDistance parse_attractor_distance(const std::string& s);

struct AttractorDistanceResult {
    double distance = 0.0;
    double squared = 0.0;
    bool rank_deficient = false;
};

// Rows are samples, all of the same dimension.
AttractorDistanceResult attractor_distance(const std::vector<std::vector<double>>& a,
                                           const std::vector<std::vector<double>>& b,
                                           AttractorDistance kind);

std::vector<std::vector<double>> trajectory_samples(const Trajectory& tr, double t_lo, double t_hi);

}  // namespace handy
