#include "handy/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <set>

#include <Eigen/Dense>

#include "handy/errors.hpp"
#include "handy/rng.hpp"

namespace handy {

Trajectory make_ground_truth(double t_end, const DynamicsOptions& opt) {
    try {
        return simulate(ground_truth_params(), Variant::Handy, 0.0, t_end, opt);
    } catch (const IntegrationError& e) {
        throw ConfigurationError(std::string("ground truth diverged: ") + e.what());
    }
}

SampledSeries learning_observations(const Trajectory& gt, int f) {
    return sample_window(gt, kLearningWindow[0], kLearningWindow[1], f);
}

double backward_from_pooled(double ff, double f2w) {
    return std::sqrt(std::max(0.0, 2.0 * f2w * f2w - ff * ff));
}

ForecastMetrics forecast_metrics(const SampledSeries& backward, const SampledSeries& forward,
                                 const Trajectory& gt) {
    const SampledSeries gb = sample_window(gt, backward.t_start, backward.t_end, backward.f);
    const SampledSeries gf = sample_window(gt, forward.t_start, forward.t_end, forward.f);
    ForecastMetrics m;
    m.ff = rmse_distance(forward, gf);
    m.fb = rmse_distance(backward, gb);
    const std::array<SampledSeries, 2> pred{backward, forward}, obs{gb, gf};
    m.f2w = rmse_distance(pred, obs);
    return m;
}

ForecastMetrics forecast_metrics(const HandyParams& candidate, const Trajectory& gt, int f,
                                 Variant v, const DynamicsOptions& opt) {
    const std::array<Window, 2> win{kBackwardWindow, kForwardWindow};
    const auto s = simulate_sampled(candidate, v, 0.0, win, f, opt);
    return forecast_metrics(s[0], s[1], gt);
}

const std::array<std::size_t, 8>& sensitive_set() {
    static const std::array<std::size_t, 8> s{
        HandyParams::index_of("beta_C"),     HandyParams::index_of("beta_E"),
        HandyParams::index_of("alpha_m"),    HandyParams::index_of("delta_mult"),
        HandyParams::index_of("kappa"),      HandyParams::index_of("xE0"),
        HandyParams::index_of("lambda_cap"), HandyParams::index_of("s")};
    return s;
}

const std::array<std::size_t, 7>& insensitive_set() {
    static const std::array<std::size_t, 7> s = [] {
        std::array<std::size_t, 7> out{};
        std::size_t k = 0;
        const auto& sens = sensitive_set();
        for (std::size_t i = 0; i < HandyParams::kSize; ++i)
            if (std::find(sens.begin(), sens.end(), i) == sens.end()) out[k++] = i;
        return out;
    }();
    return s;
}

double complexity_measure(std::size_t coupling_count, std::size_t param_count) {
    if (param_count == 0) throw ConfigurationError("parameter count must be positive");
    return static_cast<double>(coupling_count) / static_cast<double>(param_count);
}

Pipeline parse_pipeline(const std::string& s) {
    if (s == "reference-abc") return Pipeline::ReferenceAbc;
    if (s == "abc-sensitive") return Pipeline::AbcSensitive;
    if (s == "sumo-similar") return Pipeline::SumoSimilar;
    if (s == "sumo-different") return Pipeline::SumoDifferent;
    if (s == "sumo-long-train") return Pipeline::SumoLongTrain;
    if (s == "sumo-low-rmse") return Pipeline::SumoLowRmse;
    throw ConfigurationError("unknown pipeline '" + s +
                             "' (reference-abc, abc-sensitive, sumo-similar, sumo-different, "
                             "sumo-long-train, sumo-low-rmse)");
}

std::string to_string(Pipeline p) {
    switch (p) {
        case Pipeline::ReferenceAbc: return "reference-abc";
        case Pipeline::AbcSensitive: return "abc-sensitive";
        case Pipeline::SumoSimilar: return "sumo-similar";
        case Pipeline::SumoDifferent: return "sumo-different";
        case Pipeline::SumoLongTrain: return "sumo-long-train";
        case Pipeline::SumoLowRmse: return "sumo-low-rmse";
    }
    return "?";
}

bool is_supermodel(Pipeline p) {
    return p != Pipeline::ReferenceAbc && p != Pipeline::AbcSensitive;
}

std::string to_string(TrimMetric m) { return m == TrimMetric::LearningTime ? "evaluations" : "ff"; }

std::vector<double> ExperimentConfig::resolved_pretrain_targets() const {
    switch (pipeline) {
        case Pipeline::ReferenceAbc: return {};
        case Pipeline::AbcSensitive:
            return pretrain_targets.empty() ? std::vector<double>{2.0}
                                            : std::vector<double>{pretrain_targets.front()};
        default: break;
    }
    if (pretrain_targets.size() == 3) return pretrain_targets;
    if (pretrain_targets.size() == 1) return std::vector<double>(3, pretrain_targets.front());
    if (!pretrain_targets.empty())
        throw ConfigurationError("supermodel pipelines take one or three pretrain targets");
    switch (pipeline) {
        case Pipeline::SumoDifferent: return {2.0, 2.0, 5.0};
        case Pipeline::SumoLowRmse: return {1.5, 1.5, 2.0};
        default: return {2.0, 2.0, 2.0};
    }
}

void ExperimentConfig::validate() const {
    if (repetitions < 3) throw ConfigurationError("at least 3 repetitions are needed");
    if (f < 1) throw ConfigurationError("sampling frequency must be >= 1");
    static const std::set<double> allowed{1.0, 1.5, 2.0, 5.0, 10.0};
    for (double t : resolved_pretrain_targets())
        if (!allowed.count(t))
            throw ConfigurationError("pretrain target " + std::to_string(t) +
                                     " not in {1, 1.5, 2, 5, 10}");
    if (!(target >= 0.0)) throw ConfigurationError("target must be >= 0");
    if (total_budget == 0) throw ConfigurationError("total budget must be positive");
    if (pretrain_budget == 0) throw ConfigurationError("pretrain budget must be positive");
    if (!(prior_half_width > 0.0 && prior_half_width < 1.0) ||
        !(refine_half_width > 0.0 && refine_half_width < 1.0))
        throw ConfigurationError("prior half widths must lie in (0, 1)");
    if (!(long_train_factor >= 1.0)) throw ConfigurationError("long-train factor must be >= 1");
    smc.validate();
    error.validate();
}

// ---- trimming and aggregation -----------------------------------------------

Aggregate aggregate(const std::vector<double>& v) {
    Aggregate a;
    if (v.empty()) return a;
    // offset by the first value so identical inputs give that value back exactly
    double acc = 0.0;
    for (double x : v) acc += x - v.front();
    a.mean = v.front() + acc / static_cast<double>(v.size());
    if (v.size() > 1) {
        double s = 0.0;
        for (double x : v) s += (x - a.mean) * (x - a.mean);
        a.std = std::sqrt(s / static_cast<double>(v.size() - 1));
    }
    return a;
}

std::vector<std::size_t> trim_runs(const std::vector<double>& metric) {
    if (metric.size() < 3) throw ConfigurationError("trimming needs at least 3 runs");
    std::vector<std::size_t> order(metric.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return metric[a] < metric[b]; });
    std::vector<std::size_t> kept(order.begin() + 1, order.end() - 1);
    std::sort(kept.begin(), kept.end());
    return kept;
}

// ---- one repetition ----------------------------------------------------------

Discrepancy learning_discrepancy(const SampledSeries& obs, const DynamicsOptions& opt) {
    return [&obs, opt](std::span<const double> theta) {
        try {
            const HandyParams p = HandyParams::from_array(theta);
            const std::array<Window, 1> win{{{obs.t_start, obs.t_end}}};
            const auto s = simulate_sampled(p, Variant::Handy, 0.0, win, obs.f, opt);
            return rmse_distance(s[0], obs);
        } catch (const IntegrationError&) {
            return std::numeric_limits<double>::quiet_NaN();
        } catch (const ConfigurationError&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
    };
}

namespace {

PriorBox box_around(const HandyParams& center, double h) {
    const auto c = center.to_array();
    return make_prior(c, h);
}

struct StageResult {
    HandyParams params;
    double rmse = 0.0;
    std::size_t evaluations = 0;
    std::string stop;
};

StageResult abc_stage(const PriorBox& prior, const SampledSeries& obs, double target,
                      std::size_t budget, std::uint64_t seed, const ExperimentConfig& cfg) {
    SmcConfig sc = cfg.smc;
    sc.target_epsilon = target;
    sc.max_evaluations = budget;
    sc.seed = seed;
    const SmcResult r = abc_smc(prior, learning_discrepancy(obs, cfg.dynamics), sc);
    if (r.best.theta.empty()) throw StagnationError("no particle accepted within the budget", r.final_epsilon());
    // point estimate: the closest particle seen
    return {HandyParams::from_array(r.best.theta), r.best.distance, r.evaluations, to_string(r.stop)};
}

std::array<SampledSeries, 3> predict_single(const HandyParams& p, int f, const DynamicsOptions& opt) {
    const std::array<Window, 3> win{kBackwardWindow, kLearningWindow, kForwardWindow};
    auto s = simulate_sampled(p, Variant::Handy, 0.0, win, f, opt);
    return {std::move(s[0]), std::move(s[1]), std::move(s[2])};
}

}  // namespace

RepetitionResult run_repetition(const ExperimentConfig& cfg, const Trajectory& gt,
                                std::size_t index) {
    RepetitionResult rep;
    rep.index = index;
    const SampledSeries obs = learning_observations(gt, cfg.f);
    const HandyParams truth = ground_truth_params();
    const auto targets = cfg.resolved_pretrain_targets();
    try {
        if (!is_supermodel(cfg.pipeline)) {
            const bool refine = cfg.pipeline == Pipeline::AbcSensitive &&
                                cfg.pretrain_budget < cfg.total_budget;
            const double t1 = cfg.pipeline == Pipeline::AbcSensitive ? targets[0] : cfg.target;
            const std::size_t b1 = refine ? cfg.pretrain_budget : cfg.total_budget;
            rep.prior = box_around(truth, cfg.prior_half_width);
            StageResult s = abc_stage(rep.prior, obs, t1, b1, derive_seed(cfg.seed, index, 0), cfg);
            rep.evaluations = s.evaluations;
            if (refine) {
                rep.submodels.push_back({s.params, s.rmse, s.evaluations, s.stop});
                const std::size_t left = cfg.total_budget - std::min(cfg.total_budget, s.evaluations);
                if (left >= cfg.smc.population_size) {
                    // insensitive components frozen at the phase-1 estimate
                    PriorBox box = box_around(s.params, cfg.refine_half_width);
                    for (std::size_t i : insensitive_set()) box.lo[i] = box.hi[i] = s.params[i];
                    StageResult s2 = abc_stage(box, obs, cfg.target, left, derive_seed(cfg.seed, index, 1), cfg);
                    rep.prior = box;
                    rep.evaluations += s2.evaluations;
                    s = s2;
                }
            }
            rep.params = s.params;
            rep.learning_rmse = s.rmse;
            rep.stop = s.stop;
            rep.predictions = predict_single(rep.params, cfg.f, cfg.dynamics);
        } else {
            std::vector<Submodel> subs;
            std::size_t longest = 0;
            rep.prior = box_around(truth, cfg.prior_half_width);
            for (std::size_t m = 0; m < targets.size(); ++m) {
                const StageResult s = abc_stage(rep.prior, obs, targets[m], cfg.pretrain_budget,
                                                derive_seed(cfg.seed, index, 1 + m), cfg);
                rep.submodels.push_back({s.params, s.rmse, s.evaluations, s.stop});
                subs.push_back({s.params, Variant::Handy});
                longest = std::max(longest, s.evaluations);
            }
            // pretraining runs side by side, so only the longest counts
            std::size_t left = cfg.total_budget - std::min(cfg.total_budget, longest);
            if (cfg.pipeline == Pipeline::SumoLongTrain)
                left = static_cast<std::size_t>(std::llround(static_cast<double>(left) * cfg.long_train_factor));
            rep.coupling = CouplingTensor(subs.size(), cfg.coupled_vars, cfg.coupling_lo, cfg.coupling_hi);
            rep.evaluations = longest;
            rep.stop = "no-coupling-budget";
            if (left >= cfg.smc.population_size) {
                CouplingTrainConfig tc;
                tc.vars = cfg.coupled_vars;
                tc.lo = cfg.coupling_lo;
                tc.hi = cfg.coupling_hi;
                tc.error = cfg.error;
                tc.dynamics = cfg.dynamics;
                tc.smc = cfg.smc;
                tc.smc.target_epsilon = 0.0;
                tc.smc.max_evaluations = left;
                tc.smc.seed = derive_seed(cfg.seed, index, 100);
                const CouplingTrainResult tr = train_coupling(subs, obs, tc);
                rep.coupling = tr.coupling;
                rep.training_loss = tr.loss;
                rep.evaluations += tr.evaluations;
                rep.stop = to_string(tr.smc.stop);
            } else {
                rep.training_loss = coupling_loss(subs, rep.coupling, obs, CouplingLoss::SumoError,
                                                  cfg.error, cfg.dynamics);
            }
            const std::array<Window, 3> win{kBackwardWindow, kLearningWindow, kForwardWindow};
            auto s = simulate_supermodel_sampled(subs, rep.coupling, 0.0, win, cfg.f, cfg.dynamics);
            rep.predictions = {std::move(s[0]), std::move(s[1]), std::move(s[2])};
            rep.learning_rmse = rmse_distance(rep.predictions[1], obs);
        }
        rep.metrics = forecast_metrics(rep.predictions[0], rep.predictions[2], gt);
        rep.ok = true;
    } catch (const StagnationError& e) {
        rep.error = std::string("stagnation: ") + e.what();
    } catch (const IntegrationError& e) {
        rep.error = std::string("divergence: ") + e.what();
    }
    return rep;
}

ForecastReport run_pipeline(const ExperimentConfig& cfg, const Trajectory& gt) {
    cfg.validate();
    if (gt.t_end() < kForwardWindow[1] - 1e-9)
        throw ConfigurationError("ground truth must cover [0, 450]");
    ForecastReport rep;
    rep.config = cfg;
    // repetitions in order; each SMC parallelises its own batches
    for (std::size_t r = 0; r < cfg.repetitions; ++r) rep.repetitions.push_back(run_repetition(cfg, gt, r));

    std::vector<std::size_t> ok;
    for (std::size_t r = 0; r < rep.repetitions.size(); ++r) {
        if (rep.repetitions[r].ok)
            ok.push_back(r);
        else
            rep.trim_log.push_back("repetition " + std::to_string(r) + " failed: " + rep.repetitions[r].error);
    }
    if (ok.size() < 3)
        throw std::runtime_error("only " + std::to_string(ok.size()) +
                                 " repetitions succeeded; at least 3 are needed for a report");

    rep.trim_metric = cfg.pipeline == Pipeline::ReferenceAbc ? TrimMetric::LearningTime : TrimMetric::Ff;
    std::vector<double> metric;
    for (std::size_t r : ok) {
        const auto& x = rep.repetitions[r];
        metric.push_back(rep.trim_metric == TrimMetric::LearningTime ? static_cast<double>(x.evaluations)
                                                                     : x.metrics.ff);
    }
    const auto kept = trim_runs(metric);
    std::set<std::size_t> keep;
    for (std::size_t k : kept) keep.insert(ok[k]);
    for (std::size_t r : ok) {
        if (keep.count(r)) {
            rep.retained.push_back(r);
        } else {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.17g", rep.trim_metric == TrimMetric::LearningTime
                                                        ? static_cast<double>(rep.repetitions[r].evaluations)
                                                        : rep.repetitions[r].metrics.ff);
            rep.trim_log.push_back("repetition " + std::to_string(r) + " trimmed (" +
                                   to_string(rep.trim_metric) + " = " + buf + ")");
        }
    }

    std::vector<double> ev, lr, ff, f2w, fb;
    for (std::size_t r : rep.retained) {
        const auto& x = rep.repetitions[r];
        ev.push_back(static_cast<double>(x.evaluations));
        lr.push_back(x.learning_rmse);
        ff.push_back(x.metrics.ff);
        f2w.push_back(x.metrics.f2w);
        fb.push_back(x.metrics.fb);
    }
    rep.evaluations = aggregate(ev);
    rep.learning_rmse = aggregate(lr);
    rep.ff = aggregate(ff);
    rep.f2w = aggregate(f2w);
    rep.fb_per_run = aggregate(fb);
    rep.fb = backward_from_pooled(rep.ff.mean, rep.f2w.mean);
    return rep;
}

// ---- report output -----------------------------------------------------------

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void ForecastReport::write_repetitions_csv(std::ostream& os) const {
    os << "repetition,ok,retained,evaluations,learning_rmse,training_loss,ff,fb,f2w,stop,error\n";
    for (const auto& r : repetitions) {
        const bool kept = std::find(retained.begin(), retained.end(), r.index) != retained.end();
        os << r.index << ',' << (r.ok ? 1 : 0) << ',' << (kept ? 1 : 0) << ',' << r.evaluations << ','
           << num(r.learning_rmse) << ',' << num(r.training_loss) << ',' << num(r.metrics.ff) << ','
           << num(r.metrics.fb) << ',' << num(r.metrics.f2w) << ',' << r.stop << ",\"" << r.error
           << "\"\n";
    }
}

void ForecastReport::write_parameters_csv(std::ostream& os) const {
    os << "repetition,model";
    for (auto n : HandyParams::names()) os << ',' << n;
    os << ",learning_rmse,evaluations\n";
    auto row = [&](std::size_t rep, const std::string& model, const HandyParams& p, double rmse,
                   std::size_t ev) {
        os << rep << ',' << model;
        for (double v : p.to_array()) os << ',' << num(v);
        os << ',' << num(rmse) << ',' << ev << '\n';
    };
    for (const auto& r : repetitions) {
        if (!r.ok) continue;
        const bool sumo = is_supermodel(config.pipeline);
        for (std::size_t m = 0; m < r.submodels.size(); ++m)
            row(r.index, (sumo ? "submodel" : "phase1_") + std::to_string(m), r.submodels[m].params,
                r.submodels[m].learning_rmse, r.submodels[m].evaluations);
        if (!sumo) row(r.index, "estimate", r.params, r.learning_rmse, r.evaluations);
    }
    if (!is_supermodel(config.pipeline)) return;
    os << "\nrepetition,variable,mu,nu,value\n";
    for (const auto& r : repetitions) {
        if (!r.ok) continue;
        const auto names = r.coupling.free_names();
        const auto vals = r.coupling.free_values();
        std::size_t k = 0;
        for (std::size_t i = 0; i < 4; ++i) {
            if (!r.coupling.variables()[i]) continue;
            for (std::size_t mu = 0; mu < r.coupling.members(); ++mu)
                for (std::size_t nu = mu + 1; nu < r.coupling.members(); ++nu)
                    os << r.index << ',' << kStateNames[i] << ',' << mu << ',' << nu << ','
                       << num(vals[k++]) << '\n';
        }
    }
}

void ForecastReport::write_summary_csv(std::ostream& os) const {
    os << "pipeline,f,target,retained,evals_mean,evals_std,evals_ratio,learning_rmse_mean,ff_mean,"
          "ff_std,ff_ratio,f2w_mean,f2w_std,fb\n";
    os << to_string(config.pipeline) << ',' << config.f << ',' << num(config.target) << ','
       << retained.size() << ',' << num(evaluations.mean) << ',' << num(evaluations.std) << ','
       << num(evaluations.ratio()) << ',' << num(learning_rmse.mean) << ',' << num(ff.mean) << ','
       << num(ff.std) << ',' << num(ff.ratio()) << ',' << num(f2w.mean) << ',' << num(f2w.std) << ','
       << num(fb) << '\n';
}

void ForecastReport::write_trim_log(std::ostream& os) const {
    os << "trim metric: " << to_string(trim_metric) << '\n';
    for (const auto& l : trim_log) os << l << '\n';
    os << "retained:";
    for (std::size_t r : retained) os << ' ' << r;
    os << '\n';
}

std::vector<double> ForecastReport::plot_times() const {
    for (const auto& r : repetitions) {
        if (!r.ok) continue;
        std::vector<double> t;
        for (std::size_t w = 0; w < 3; ++w)
            for (std::size_t j = 0; j < r.predictions[w].size(); ++j) {
                const double x = r.predictions[w].times[j];
                if (t.empty() || x > t.back() + 1e-9) t.push_back(x);
            }
        return t;
    }
    return {};
}

std::vector<std::vector<StateVector>> ForecastReport::retained_predictions() const {
    std::vector<std::vector<StateVector>> out;
    for (std::size_t idx : retained) {
        const auto& r = repetitions[idx];
        std::vector<StateVector> v;
        double last = -1.0;
        for (std::size_t w = 0; w < 3; ++w)
            for (std::size_t j = 0; j < r.predictions[w].size(); ++j) {
                const double x = r.predictions[w].times[j];
                if (!v.empty() && x <= last + 1e-9) continue;
                v.push_back(r.predictions[w].values[j]);
                last = x;
            }
        out.push_back(std::move(v));
    }
    return out;
}

void ForecastReport::write_predictions_csv(std::ostream& os) const {
    os << "repetition,t,x_C,x_E,y,w\n";
    const auto t = plot_times();
    const auto p = retained_predictions();
    for (std::size_t k = 0; k < p.size(); ++k)
        for (std::size_t j = 0; j < t.size(); ++j)
            os << retained[k] << ',' << num(t[j]) << ',' << num(p[k][j].xC) << ',' << num(p[k][j].xE)
               << ',' << num(p[k][j].y) << ',' << num(p[k][j].w) << '\n';
}

// ---- plot data -----------------------------------------------------------------

std::vector<PlotRow> plot_data(const Trajectory& gt, const std::vector<double>& times,
                               const std::vector<std::vector<StateVector>>& predictions,
                               std::size_t variable) {
    if (variable >= 4) throw ConfigurationError("unknown state variable index");
    for (const auto& p : predictions)
        if (p.size() != times.size()) throw ShapeError("prediction length differs from the time grid");
    // normalisation range: the ground truth on the sampled grid, which spans
    // all three windows
    std::vector<double> g(times.size());
    for (std::size_t j = 0; j < times.size(); ++j) g[j] = gt.at(times[j])[variable];
    const auto [mn, mx] = std::minmax_element(g.begin(), g.end());
    const double lo = g.empty() ? 0.0 : *mn, span = g.empty() ? 0.0 : *mx - *mn;
    auto norm = [&](double v) { return span > 0.0 ? (v - lo) / span : 0.0; };

    std::vector<PlotRow> rows;
    for (std::size_t j = 0; j < times.size(); ++j) {
        std::vector<double> v;
        for (const auto& p : predictions) v.push_back(p[j][variable]);
        const Aggregate a = aggregate(v);
        PlotRow r{};
        r.t = times[j];
        r.gt = g[j];
        r.mean = a.mean;
        r.lo = a.mean - a.std;
        r.hi = a.mean + a.std;
        r.gt_n = norm(r.gt);
        r.mean_n = norm(r.mean);
        r.lo_n = norm(r.lo);
        r.hi_n = norm(r.hi);
        rows.push_back(r);
    }
    return rows;
}

void write_plot_csv(std::ostream& os, const std::vector<PlotRow>& rows) {
    os << "t,gt,mean,mean_minus_std,mean_plus_std,gt_norm,mean_norm,mean_minus_std_norm,mean_plus_std_norm\n";
    for (const auto& r : rows)
        os << num(r.t) << ',' << num(r.gt) << ',' << num(r.mean) << ',' << num(r.lo) << ',' << num(r.hi)
           << ',' << num(r.gt_n) << ',' << num(r.mean_n) << ',' << num(r.lo_n) << ',' << num(r.hi_n)
           << '\n';
}

// ---- PCA -------------------------------------------------------------------------

PcaResult pca_2d(const std::vector<std::vector<double>>& vectors) {
    if (vectors.size() < 2) throw ConfigurationError("PCA needs at least 2 vectors");
    const std::size_t d = vectors.front().size();
    for (const auto& v : vectors)
        if (v.size() != d) throw ShapeError("PCA vectors differ in length");
    const auto n = static_cast<Eigen::Index>(vectors.size());

    PcaResult out;
    out.coords.assign(vectors.size(), {0.0, 0.0});
    std::vector<double> mean(d, 0.0), sd(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        for (const auto& v : vectors) mean[i] += v[i];
        mean[i] /= static_cast<double>(n);
        for (const auto& v : vectors) sd[i] += (v[i] - mean[i]) * (v[i] - mean[i]);
        sd[i] = std::sqrt(sd[i] / static_cast<double>(n));
        // spread below rounding noise of the mean counts as constant
        if (sd[i] > 1e-13 * std::max(1.0, std::abs(mean[i]))) out.kept.push_back(i);
    }
    if (out.kept.empty()) {
        out.degenerate = true;
        return out;
    }
    const auto k = static_cast<Eigen::Index>(out.kept.size());
    Eigen::MatrixXd Z(n, k);
    for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < k; ++c) {
            const std::size_t i = out.kept[c];
            Z(r, c) = (vectors[r][i] - mean[i]) / sd[i];
        }
    const Eigen::MatrixXd S = (Z.transpose() * Z) / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
    const Eigen::Index dirs = std::min<Eigen::Index>(2, k);
    for (Eigen::Index q = 0; q < dirs; ++q) {
        // eigenvalues come ascending
        Eigen::VectorXd v = es.eigenvectors().col(k - 1 - q);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0) v = -v;
        out.explained[q] = std::max(0.0, es.eigenvalues()(k - 1 - q));
        const Eigen::VectorXd c = Z * v;
        for (Eigen::Index r = 0; r < n; ++r) out.coords[r][q] = c(r);
    }
    return out;
}

PcaResult pca_2d(const std::vector<HandyParams>& params, bool include_gt) {
    std::vector<std::vector<double>> rows;
    for (const auto& p : params) {
        const auto a = p.to_array();
        rows.emplace_back(a.begin(), a.end());
    }
    if (include_gt) {
        const auto a = ground_truth_params().to_array();
        rows.emplace_back(a.begin(), a.end());
    }
    return pca_2d(rows);
}

double calibrate_evaluations_per_second(double seconds, const DynamicsOptions& opt) {
    if (!(seconds > 0.0)) throw ConfigurationError("calibration time must be positive");
    const Trajectory gt = make_ground_truth(300.0, opt);
    const SampledSeries obs = learning_observations(gt, 15);
    const Discrepancy d = learning_discrepancy(obs, opt);
    const auto theta = ground_truth_params().to_array();
    using clock = std::chrono::steady_clock;
    const auto start = clock::now();
    std::size_t n = 0;
    double elapsed = 0.0;
    volatile double sink = 0.0;
    do {
        sink = sink + d(theta);
        ++n;
        elapsed = std::chrono::duration<double>(clock::now() - start).count();
    } while (elapsed < seconds);
    return static_cast<double>(n) / elapsed;
}

}  // namespace handy
