#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "handy/dynamics.hpp"

namespace handy {

class StagnationError : public std::runtime_error {
public:
    StagnationError(const std::string& what, double last_epsilon)
        : std::runtime_error(what), last_epsilon_(last_epsilon) {}
    double last_epsilon() const noexcept { return last_epsilon_; }

private:
    double last_epsilon_;
};

// Independent uniform box. Zero-width intervals are point masses.
struct PriorBox {
    std::vector<double> lo;
    std::vector<double> hi;

    PriorBox() = default;
    PriorBox(std::vector<double> lo_, std::vector<double> hi_);

    std::size_t dim() const { return lo.size(); }
    bool contains(std::span<const double> theta) const;
    // log density up to the point-mass dimensions; -inf outside
    double log_density(std::span<const double> theta) const;
    std::vector<double> sample(std::mt19937_64& g) const;
    std::vector<double> midpoint() const;
    double width(std::size_t i) const { return hi[i] - lo[i]; }
};

PriorBox make_prior(std::span<const double> center, double half_width_fraction);

// Which of x_C, x_E, y, w enter a distance.
using VariableMask = std::array<bool, 4>;
inline constexpr VariableMask kAllVariables{true, true, true, true};

// Root mean square over all (point, variable) pairs, raw units.
double rmse_distance(const SampledSeries& a, const SampledSeries& b,
                     const VariableMask& vars = kAllVariables);
// Same, pooling the residuals of several window pairs.
double rmse_distance(std::span<const SampledSeries> a, std::span<const SampledSeries> b,
                     const VariableMask& vars = kAllVariables);

// Simulates theta and compares with the (captured) observations.
// Must be safe to call concurrently. Non-finite results mean "no acceptance".
using Discrepancy = std::function<double(std::span<const double>)>;

struct Particle {
    std::vector<double> theta;
    double weight = 1.0;
    double distance = 0.0;
};

// ---- rejection -------------------------------------------------------------

struct RejectionResult {
    std::vector<Particle> accepted;  // unit weights normalised to 1/n
    std::size_t evaluations = 0;
    double acceptance_rate = 0.0;
    bool empty() const { return accepted.empty(); }
};

RejectionResult abc_rejection(const PriorBox& prior, const Discrepancy& d, double epsilon,
                              std::size_t budget, std::uint64_t seed);

// ---- MCMC ------------------------------------------------------------------

struct McmcConfig {
    double epsilon = std::numeric_limits<double>::infinity();
    std::size_t chain_length = 1000;
    std::vector<double> proposal_sd;         // per dimension, Gaussian symmetric walk
    std::optional<std::vector<double>> start;  // else found by rejection from the prior
    std::size_t max_start_attempts = 100000;
    std::uint64_t seed = 1;
};

struct McmcResult {
    std::vector<Particle> chain;  // chain_length + 1 states, start included
    std::size_t evaluations = 0;
    double acceptance_rate = 0.0;  // moves accepted / proposals
};

McmcResult abc_mcmc(const PriorBox& prior, const Discrepancy& d, const McmcConfig& cfg);

// ---- SMC -------------------------------------------------------------------

enum class SmcKernel {
    Diagonal,      // independent Gaussian per parameter
    Multivariate,  // Gaussian with the weighted population covariance
};
SmcKernel parse_kernel(const std::string& s);
std::string to_string(SmcKernel k);

struct SmcConfig {
    std::size_t population_size = 100;
    SmcKernel kernel = SmcKernel::Diagonal;
    // explicit strictly decreasing tolerances; empty means adaptive
    std::vector<double> schedule;
    double quantile = 0.5;
    double kernel_scale = 1.0;  // multiplies the deviation (diagonal) or its matrix root
    double target_epsilon = 0.0;
    std::size_t max_evaluations = 0;  // 0: unlimited
    std::size_t max_generations = 200;
    double max_seconds = 0.0;  // 0: no wall-clock cap
    std::size_t stagnation_factor = 10000;
    std::uint64_t seed = 1;

    void validate() const;
};

struct GenerationReport {
    std::size_t generation = 0;
    double epsilon = 0.0;
    double acceptance_rate = 0.0;
    std::size_t evaluations = 0;             // in this generation
    std::size_t cumulative_evaluations = 0;
    double best_distance = 0.0;
};

enum class SmcStop { TargetReached, ScheduleDone, BudgetExhausted, WallClock, NoProgress, MaxGenerations };
std::string to_string(SmcStop s);

struct SmcResult {
    std::vector<Particle> population;  // last completed generation, weights sum to 1
    std::vector<GenerationReport> generations;
    Particle best;  // smallest distance ever accepted
    std::size_t evaluations = 0;
    SmcStop stop = SmcStop::ScheduleDone;

    double final_epsilon() const {
        return generations.empty() ? std::numeric_limits<double>::infinity()
                                   : generations.back().epsilon;
    }
    std::vector<double> weighted_mean() const;
};

SmcResult abc_smc(const PriorBox& prior, const Discrepancy& d, const SmcConfig& cfg);

// ---- export ----------------------------------------------------------------

void write_population_csv(std::ostream& os, const std::vector<Particle>& pop,
                          const std::vector<std::string>& names);
std::string smc_report_json(const SmcResult& r);

// Weighted standard deviation per column (population normalisation).
std::vector<double> weighted_std(const std::vector<Particle>& pop);

// Two-sample Kolmogorov-Smirnov statistic. Optional weights for either side
// (empty means equal weights).
double ks_statistic(std::span<const double> a, std::span<const double> b,
                    std::span<const double> wa = {}, std::span<const double> wb = {});

}  // namespace handy
