#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "handy/dynamics.hpp"

namespace handy {

class NonFiniteOutputError : public std::runtime_error {
public:
    NonFiniteOutputError(const std::string& what, std::vector<std::size_t> rows)
        : std::runtime_error(what), rows_(std::move(rows)) {}
    const std::vector<std::size_t>& rows() const noexcept { return rows_; }

private:
    std::vector<std::size_t> rows_;
};

struct Bounds {
    double lo;
    double hi;
};

// A and B come from the two halves of one 2k-dimensional Sobol' stream.
// Row layout per base sample j: A_j, AB_1..AB_k, [BA_1..BA_k,] B_j.
struct SaltelliDesign {
    std::size_t N = 0;
    std::size_t k = 0;
    bool second_order = true;
    std::vector<Bounds> bounds;
    std::vector<double> A;  // row-major N x k
    std::vector<double> B;
    std::string warning;    // set when N is not a power of two

    std::size_t group_size() const { return second_order ? 2 * k + 2 : k + 2; }
    std::size_t row_count() const { return N * group_size(); }
    std::vector<double> row(std::size_t r) const;
    void row(std::size_t r, double* out) const;

    void write_csv(std::ostream& os, const std::vector<std::string>& names) const;
};

SaltelliDesign saltelli_design(std::size_t k, std::size_t N, std::vector<Bounds> bounds,
                               bool second_order = true);

enum class Estimator { Jansen, Saltelli };
Estimator parse_estimator(const std::string& s);
std::string to_string(Estimator e);

struct SensitivityReport {
    std::vector<double> S1, S1_conf, ST, ST_conf;
    // closed second-order indices, k x k row-major, only i < j filled
    std::vector<double> S2;
    double variance = 0.0;
    double f0 = 0.0;
    std::size_t evaluations = 0;
    bool degenerate = false;
    bool has_second_order = false;

    double s2(std::size_t i, std::size_t j) const;

    void write_csv(std::ostream& os, const std::vector<std::string>& names) const;
    void write_pairs_csv(std::ostream& os, const std::vector<std::string>& names) const;
};

SensitivityReport estimate_indices(const SaltelliDesign& d, std::span<const double> Y,
                                   Estimator est = Estimator::Jansen);

struct ConfidenceHalfWidths {
    std::vector<double> S1, ST;
};

ConfidenceHalfWidths bootstrap_confidence(const SaltelliDesign& d, std::span<const double> Y,
                                          Estimator est, std::size_t B = 100,
                                          double confidence = 0.95, std::uint64_t seed = 1);

// Indices plus bootstrap half-widths in one report.
SensitivityReport analyse(const SaltelliDesign& d, std::span<const double> Y,
                          Estimator est = Estimator::Jansen, std::size_t B = 100,
                          double confidence = 0.95, std::uint64_t seed = 1);

// Evaluates f on every design row (in parallel); f must be thread-safe.
std::vector<double> evaluate_design(const SaltelliDesign& d,
                                    const std::function<double(std::span<const double>)>& f);

struct GdpValue {
    double value = 0.0;
    bool extinct = false;
};

// Wealth per capita at the horizon.
GdpValue gdp_measure(const Trajectory& traj, double horizon);
GdpValue gdp_measure(const StateVector& x);

// Sampling box for the 15 HANDY components used by the sensitivity runs.
std::vector<Bounds> handy_sobol_bounds();

// GDP at `horizon` for a 15-component row; simulation starts at t = 0.
double handy_gdp_output(std::span<const double> row, Variant v, double horizon,
                        const DynamicsOptions& opt = {});

// Factors with ST >= threshold, ordered by decreasing ST.
std::vector<std::size_t> rank_by_total(const SensitivityReport& r);
std::vector<std::size_t> sensitive_factors(const SensitivityReport& r, double threshold = 0.04);

}  // namespace handy
