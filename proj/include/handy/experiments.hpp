#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "handy/dynamics.hpp"
#include "handy/inference.hpp"
#include "handy/supermodel.hpp"

namespace handy {

using Window = std::array<double, 2>;
inline constexpr Window kBackwardWindow{0.0, 150.0};
inline constexpr Window kLearningWindow{150.0, 300.0};
inline constexpr Window kForwardWindow{300.0, 450.0};

// Full HANDY with the reference parameters over [0, t_end].
Trajectory make_ground_truth(double t_end = 450.0, const DynamicsOptions& opt = {});

// Learning-window observations of a ground truth.
SampledSeries learning_observations(const Trajectory& gt, int f);

// RMSE of a 15-component candidate against `obs` (held by reference).
// Failed integrations score NaN.
Discrepancy learning_discrepancy(const SampledSeries& obs, const DynamicsOptions& opt = {});

struct ForecastMetrics {
    double ff = 0.0;   // forward window RMSE
    double fb = 0.0;   // backward window RMSE
    double f2w = 0.0;  // both windows pooled
};

// Backward error recovered from the forward and pooled ones.
double backward_from_pooled(double ff, double f2w);

// Metrics from predictions sampled on the backward and forward windows.
ForecastMetrics forecast_metrics(const SampledSeries& backward, const SampledSeries& forward,
                                 const Trajectory& gt);
// Simulates the candidate from t = 0 and its own initial state.
ForecastMetrics forecast_metrics(const HandyParams& candidate, const Trajectory& gt, int f,
                                 Variant v = Variant::Handy, const DynamicsOptions& opt = {});

// Parameters that matter for GDP, and the rest.
const std::array<std::size_t, 8>& sensitive_set();
const std::array<std::size_t, 7>& insensitive_set();

double complexity_measure(std::size_t coupling_count, std::size_t param_count);

enum class Pipeline { ReferenceAbc, AbcSensitive, SumoSimilar, SumoDifferent, SumoLongTrain, SumoLowRmse };
Pipeline parse_pipeline(const std::string& s);
std::string to_string(Pipeline p);
bool is_supermodel(Pipeline p);

enum class TrimMetric { LearningTime, Ff };
std::string to_string(TrimMetric m);

struct ExperimentConfig {
    Pipeline pipeline = Pipeline::ReferenceAbc;
    int f = 15;
    std::size_t repetitions = 10;
    double target = 1.0;                  // learning RMSE goal of the final stage
    std::vector<double> pretrain_targets; // empty: pipeline default
    std::size_t total_budget = 20000;     // evaluations per repetition
    std::size_t pretrain_budget = 10000;  // per pretraining run
    double long_train_factor = 2.0;       // coupling budget multiplier for SumoLongTrain
    double prior_half_width = 0.1;
    double refine_half_width = 0.05;
    SmcConfig smc;                        // seed, target and budget are set per stage
    VariableMask coupled_vars = kCoupleElites;
    double coupling_lo = 0.0;
    double coupling_hi = 0.5;
    SumoErrorConfig error;
    DynamicsOptions dynamics;
    std::uint64_t seed = 1;

    // Targets actually used for pretraining, one per stage/submodel.
    std::vector<double> resolved_pretrain_targets() const;
    void validate() const;
};

struct SubmodelFit {
    HandyParams params;
    double learning_rmse = 0.0;
    std::size_t evaluations = 0;
    std::string stop;
};

struct RepetitionResult {
    std::size_t index = 0;
    bool ok = false;
    std::string error;
    HandyParams params;                 // ABC pipelines: point estimate
    std::vector<SubmodelFit> submodels; // supermodel pipelines and abc phase 1
    CouplingTensor coupling;
    double learning_rmse = 0.0;
    double training_loss = 0.0;         // supermodel coupling loss
    std::size_t evaluations = 0;        // learning-time proxy
    std::string stop;
    PriorBox prior;                     // box of the final stage
    ForecastMetrics metrics;
    // backward, learning, forward samples of the final model
    std::array<SampledSeries, 3> predictions;
};

struct Aggregate {
    double mean = 0.0;
    double std = 0.0;  // n - 1 normalisation
    double ratio() const { return mean != 0.0 ? std / mean : 0.0; }
};

Aggregate aggregate(const std::vector<double>& v);

// Indices kept after dropping the single smallest and largest value
// (ties broken by index). Needs at least 3 values.
std::vector<std::size_t> trim_runs(const std::vector<double>& metric);

struct ForecastReport {
    ExperimentConfig config;
    std::vector<RepetitionResult> repetitions;
    std::vector<std::size_t> retained;  // indices into repetitions
    TrimMetric trim_metric = TrimMetric::LearningTime;
    std::vector<std::string> trim_log;

    Aggregate evaluations, learning_rmse, ff, f2w, fb_per_run;
    double fb = 0.0;  // from the mean ff and mean f2w

    void write_repetitions_csv(std::ostream& os) const;
    void write_parameters_csv(std::ostream& os) const;
    void write_summary_csv(std::ostream& os) const;
    void write_trim_log(std::ostream& os) const;
    void write_predictions_csv(std::ostream& os) const;

    // Union of the three window grids, shared boundaries once.
    std::vector<double> plot_times() const;
    // Retained runs' predictions on plot_times().
    std::vector<std::vector<StateVector>> retained_predictions() const;
};

ForecastReport run_pipeline(const ExperimentConfig& cfg, const Trajectory& gt);

// Single repetition; exposed for tests and the CLI replay.
RepetitionResult run_repetition(const ExperimentConfig& cfg, const Trajectory& gt,
                                std::size_t index);

// ---- plot data -------------------------------------------------------------

struct PlotRow {
    double t;
    double gt, mean, lo, hi;
    double gt_n, mean_n, lo_n, hi_n;  // min-max normalised over the ground truth
};

// predictions: one series per retained run, each sampled at the same times
std::vector<PlotRow> plot_data(const Trajectory& gt, const std::vector<double>& times,
                               const std::vector<std::vector<StateVector>>& predictions,
                               std::size_t variable);
void write_plot_csv(std::ostream& os, const std::vector<PlotRow>& rows);

// ---- PCA -------------------------------------------------------------------

struct PcaResult {
    std::vector<std::array<double, 2>> coords;
    std::array<double, 2> explained{};  // eigenvalues of the standardised covariance
    std::vector<std::size_t> kept;      // components with nonzero variance
    bool degenerate = false;            // every vector identical
};

PcaResult pca_2d(const std::vector<std::vector<double>>& vectors);
// Appends the reference parameters as the last row before projecting.
PcaResult pca_2d(const std::vector<HandyParams>& params, bool include_gt);

// Evaluations per second of a learning-window simulation, measured over
// roughly `seconds` of wall clock.
double calibrate_evaluations_per_second(double seconds, const DynamicsOptions& opt = {});

}  // namespace handy
