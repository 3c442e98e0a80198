#include "handy/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "handy/parallel.hpp"
#include "handy/rng.hpp"
#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "json.hpp"

namespace handy {

// ---- priors ----------------------------------------------------------------

PriorBox::PriorBox(std::vector<double> lo_, std::vector<double> hi_)
    : lo(std::move(lo_)), hi(std::move(hi_)) {
    if (lo.size() != hi.size()) throw ShapeError("prior bounds of different length");
    for (std::size_t i = 0; i < lo.size(); ++i)
        if (!(lo[i] <= hi[i]) || !std::isfinite(lo[i]) || !std::isfinite(hi[i]))
            throw ConfigurationError("prior interval " + std::to_string(i) + " is invalid");
}

bool PriorBox::contains(std::span<const double> theta) const {
    if (theta.size() != lo.size()) return false;
    for (std::size_t i = 0; i < lo.size(); ++i)
        if (!(theta[i] >= lo[i] && theta[i] <= hi[i])) return false;
    return true;
}

double PriorBox::log_density(std::span<const double> theta) const {
    if (!contains(theta)) return -std::numeric_limits<double>::infinity();
    double l = 0.0;
    for (std::size_t i = 0; i < lo.size(); ++i)
        if (hi[i] > lo[i]) l -= std::log(hi[i] - lo[i]);
    return l;
}

std::vector<double> PriorBox::sample(std::mt19937_64& g) const {
    std::vector<double> th(lo.size());
    for (std::size_t i = 0; i < lo.size(); ++i) {
        const double u = uniform01(g);
        th[i] = hi[i] > lo[i] ? lo[i] + u * (hi[i] - lo[i]) : lo[i];
    }
    return th;
}

std::vector<double> PriorBox::midpoint() const {
    std::vector<double> m(lo.size());
    for (std::size_t i = 0; i < lo.size(); ++i) m[i] = 0.5 * (lo[i] + hi[i]);
    return m;
}

PriorBox make_prior(std::span<const double> center, double h) {
    if (!(h > 0.0 && h < 1.0)) throw ConfigurationError("prior half-width fraction must be in (0, 1)");
    std::vector<double> lo(center.size()), hi(center.size());
    for (std::size_t i = 0; i < center.size(); ++i) {
        const double a = center[i] * (1.0 - h), b = center[i] * (1.0 + h);
        lo[i] = std::min(a, b);
        hi[i] = std::max(a, b);
    }
    return PriorBox(std::move(lo), std::move(hi));
}

// ---- distance --------------------------------------------------------------

namespace {

double squared_residuals(const SampledSeries& a, const SampledSeries& b, const VariableMask& vars,
                         std::size_t& count) {
    if (a.size() != b.size() || a.values.size() != a.size() || b.values.size() != b.size())
        throw ShapeError("sampled series differ in length");
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        if (std::abs(a.times[j] - b.times[j]) > 1e-9 * std::max(1.0, std::abs(a.times[j])))
            throw ShapeError("sampled series timestamps differ");
        for (std::size_t v = 0; v < 4; ++v) {
            if (!vars[v]) continue;
            const double d = a.values[j][v] - b.values[j][v];
            s += d * d;
        }
    }
    count += static_cast<std::size_t>(std::count(vars.begin(), vars.end(), true)) * a.size();
    return s;
}

}  // namespace

double rmse_distance(const SampledSeries& a, const SampledSeries& b, const VariableMask& vars) {
    std::size_t n = 0;
    const double s = squared_residuals(a, b, vars, n);
    return n ? std::sqrt(s / static_cast<double>(n)) : 0.0;
}

double rmse_distance(std::span<const SampledSeries> a, std::span<const SampledSeries> b,
                     const VariableMask& vars) {
    if (a.size() != b.size()) throw ShapeError("window counts differ");
    std::size_t n = 0;
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += squared_residuals(a[k], b[k], vars, n);
    return n ? std::sqrt(s / static_cast<double>(n)) : 0.0;
}

// ---- rejection -------------------------------------------------------------

namespace {

inline bool accept(double d, double eps) { return std::isfinite(d) && d <= eps; }

std::size_t batch_size() { return std::max<std::size_t>(64, 16 * thread_count()); }

void normalise(std::vector<Particle>& pop) {
    double s = 0.0;
    for (const auto& p : pop) s += p.weight;
    for (auto& p : pop) p.weight /= s;
}

}  // namespace

RejectionResult abc_rejection(const PriorBox& prior, const Discrepancy& d, double epsilon,
                              std::size_t budget, std::uint64_t seed) {
    if (!(epsilon >= 0.0)) throw ConfigurationError("epsilon must be >= 0");
    if (budget < 1) throw ConfigurationError("budget must be >= 1");
    RejectionResult r;
    const std::size_t bs = batch_size();
    std::vector<std::vector<double>> th;
    std::vector<double> dist;
    for (std::size_t start = 0; start < budget; start += bs) {
        const std::size_t n = std::min(bs, budget - start);
        th.resize(n);
        dist.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            auto g = stream_rng(seed, 0, start + i);
            th[i] = prior.sample(g);
        }
        parallel_for(n, [&](std::size_t i) { dist[i] = d(th[i]); });
        for (std::size_t i = 0; i < n; ++i)
            if (accept(dist[i], epsilon)) r.accepted.push_back({th[i], 1.0, dist[i]});
    }
    r.evaluations = budget;
    r.acceptance_rate = static_cast<double>(r.accepted.size()) / static_cast<double>(budget);
    if (!r.accepted.empty()) normalise(r.accepted);
    return r;
}

// ---- MCMC ------------------------------------------------------------------

McmcResult abc_mcmc(const PriorBox& prior, const Discrepancy& d, const McmcConfig& cfg) {
    const std::size_t k = prior.dim();
    if (cfg.proposal_sd.size() != k) throw ShapeError("proposal_sd must match prior dimension");
    McmcResult r;
    std::vector<double> cur;
    double cur_d = 0.0;
    if (cfg.start) {
        cur = *cfg.start;
        if (!std::isfinite(prior.log_density(cur)))
            throw ConfigurationError("MCMC start lies outside the prior");
        cur_d = d(cur);
        ++r.evaluations;
    } else {
        bool found = false;
        for (std::size_t a = 0; a < cfg.max_start_attempts && !found; ++a) {
            auto g = stream_rng(cfg.seed, 1, a);
            cur = prior.sample(g);
            cur_d = d(cur);
            ++r.evaluations;
            found = accept(cur_d, cfg.epsilon);
        }
        if (!found) throw StagnationError("no MCMC start within tolerance", cfg.epsilon);
    }
    double cur_lp = prior.log_density(cur);

    auto g = stream_rng(cfg.seed, 2);
    std::normal_distribution<double> z(0.0, 1.0);
    r.chain.reserve(cfg.chain_length + 1);
    r.chain.push_back({cur, 1.0, cur_d});
    std::size_t moves = 0;
    std::vector<double> prop(k);
    for (std::size_t i = 0; i < cfg.chain_length; ++i) {
        for (std::size_t j = 0; j < k; ++j) prop[j] = cur[j] + cfg.proposal_sd[j] * z(g);
        const double u = uniform01(g);
        const double lp = prior.log_density(prop);
        if (std::isfinite(lp)) {
            const double pd = d(prop);
            ++r.evaluations;
            // symmetric kernel: g terms cancel
            const double alpha = std::min(1.0, std::exp(lp - cur_lp));
            if (accept(pd, cfg.epsilon) && u < alpha) {
                cur = prop;
                cur_d = pd;
                cur_lp = lp;
                ++moves;
            }
        }
        r.chain.push_back({cur, 1.0, cur_d});
    }
    r.acceptance_rate =
        cfg.chain_length ? static_cast<double>(moves) / static_cast<double>(cfg.chain_length) : 0.0;
    normalise(r.chain);
    return r;
}

// ---- SMC -------------------------------------------------------------------

void SmcConfig::validate() const {
    if (population_size < 2) throw ConfigurationError("population size must be >= 2");
    for (std::size_t i = 0; i < schedule.size(); ++i) {
        if (!(schedule[i] >= 0.0)) throw ConfigurationError("tolerances must be >= 0");
        if (i > 0 && !(schedule[i] < schedule[i - 1]))
            throw ConfigurationError("explicit tolerance schedule must be strictly decreasing");
    }
    if (!(quantile > 0.0 && quantile < 1.0)) throw ConfigurationError("quantile must be in (0, 1)");
    if (!(kernel_scale > 0.0)) throw ConfigurationError("kernel scale must be positive");
    if (!(target_epsilon >= 0.0)) throw ConfigurationError("target tolerance must be >= 0");
    if (max_evaluations != 0 && max_evaluations < population_size)
        throw ConfigurationError("evaluation budget smaller than one population");
    if (max_generations < 1) throw ConfigurationError("max_generations must be >= 1");
}

SmcKernel parse_kernel(const std::string& s) {
    if (s == "diagonal") return SmcKernel::Diagonal;
    if (s == "multivariate") return SmcKernel::Multivariate;
    throw ConfigurationError("unknown SMC kernel '" + s + "'");
}

std::string to_string(SmcKernel k) { return k == SmcKernel::Diagonal ? "diagonal" : "multivariate"; }

std::string to_string(SmcStop s) {
    switch (s) {
        case SmcStop::TargetReached: return "target-reached";
        case SmcStop::ScheduleDone: return "schedule-done";
        case SmcStop::BudgetExhausted: return "budget-exhausted";
        case SmcStop::WallClock: return "wall-clock";
        case SmcStop::NoProgress: return "no-progress";
        case SmcStop::MaxGenerations: return "max-generations";
    }
    return "?";
}

std::vector<double> SmcResult::weighted_mean() const {
    if (population.empty()) return {};
    std::vector<double> m(population[0].theta.size(), 0.0);
    for (const auto& p : population)
        for (std::size_t j = 0; j < m.size(); ++j) m[j] += p.weight * p.theta[j];
    return m;
}

std::vector<double> weighted_std(const std::vector<Particle>& pop) {
    if (pop.empty()) return {};
    const std::size_t k = pop[0].theta.size();
    std::vector<double> mean(k, 0.0), var(k, 0.0);
    double ws = 0.0;
    for (const auto& p : pop) {
        ws += p.weight;
        for (std::size_t j = 0; j < k; ++j) mean[j] += p.weight * p.theta[j];
    }
    for (auto& m : mean) m /= ws;
    for (const auto& p : pop)
        for (std::size_t j = 0; j < k; ++j) {
            const double d = p.theta[j] - mean[j];
            var[j] += p.weight * d * d;
        }
    for (auto& v : var) v = std::sqrt(v / ws);
    return var;
}

namespace {

double log_sum_exp(const std::vector<double>& v) {
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

double unweighted_quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Gaussian perturbation kernel fitted to the previous population. Only
// dimensions with a non-degenerate prior are perturbed.
class Kernel {
public:
    Kernel(const PriorBox& prior, const std::vector<Particle>& pop, SmcKernel kind, double scale) {
        for (std::size_t m = 0; m < prior.dim(); ++m)
            if (prior.width(m) > 0.0) active_.push_back(m);
        const auto a = static_cast<Eigen::Index>(active_.size());
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(a);
        double ws = 0.0;
        for (const auto& p : pop) {
            ws += p.weight;
            for (Eigen::Index r = 0; r < a; ++r) mean(r) += p.weight * p.theta[active_[r]];
        }
        mean /= ws;
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(a, a);
        Eigen::VectorXd dv(a);
        for (const auto& p : pop) {
            for (Eigen::Index r = 0; r < a; ++r) dv(r) = p.theta[active_[r]] - mean(r);
            cov.noalias() += p.weight * dv * dv.transpose();
        }
        cov /= ws;
        if (kind == SmcKernel::Diagonal) cov = Eigen::MatrixXd(cov.diagonal().asDiagonal());
        cov *= scale * scale;
        // floor keeps a collapsed direction from freezing the walk
        for (Eigen::Index r = 0; r < a; ++r) {
            const double fl = 1e-9 * prior.width(active_[r]);
            cov(r, r) = std::max(cov(r, r), fl * fl);
        }
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        for (double jitter = 1e-12; llt.info() != Eigen::Success && jitter < 1.0; jitter *= 100.0) {
            Eigen::MatrixXd c = cov;
            c.diagonal() += jitter * cov.diagonal();
            llt.compute(c);
        }
        if (llt.info() != Eigen::Success)
            throw ConfigurationError("perturbation kernel covariance is not positive definite");
        L_ = llt.matrixL();
        Linv_ = L_.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(a, a));
        log_norm_ = -L_.diagonal().array().log().sum();
        z_.resize(a);
    }

    void perturb(std::vector<double>& th, std::mt19937_64& g) const {
        std::normal_distribution<double> n(0.0, 1.0);
        Eigen::VectorXd z(z_.size());
        for (Eigen::Index r = 0; r < z.size(); ++r) z(r) = n(g);
        const Eigen::VectorXd step = L_.triangularView<Eigen::Lower>() * z;
        for (Eigen::Index r = 0; r < z.size(); ++r) th[active_[r]] += step(r);
    }

    // log K(from -> to) up to the 2*pi constant
    double log_density(const std::vector<double>& to, const std::vector<double>& from) {
        for (Eigen::Index r = 0; r < z_.size(); ++r) z_(r) = to[active_[r]] - from[active_[r]];
        const Eigen::VectorXd u = Linv_.triangularView<Eigen::Lower>() * z_;
        return log_norm_ - 0.5 * u.squaredNorm();
    }

private:
    std::vector<std::size_t> active_;
    Eigen::MatrixXd L_, Linv_;
    Eigen::VectorXd z_;
    double log_norm_ = 0.0;
};

struct Proposal {
    std::vector<double> theta;
    bool in_prior = false;
    double distance = std::numeric_limits<double>::infinity();
};

}  // namespace

SmcResult abc_smc(const PriorBox& prior, const Discrepancy& d, const SmcConfig& cfg) {
    cfg.validate();
    using clock = std::chrono::steady_clock;
    const auto t_start = clock::now();
    const std::size_t N = cfg.population_size;
    const bool adaptive = cfg.schedule.empty();

    SmcResult res;
    res.best.distance = std::numeric_limits<double>::infinity();
    std::vector<Particle> prev;
    std::vector<double> cum;  // cumulative weights of prev
    std::optional<Kernel> kernel;
    double eps = adaptive ? std::numeric_limits<double>::infinity() : cfg.schedule[0];
    const std::size_t bs = batch_size();

    for (std::size_t gen = 0;; ++gen) {
        std::vector<Particle> pop;
        pop.reserve(N);
        std::size_t attempts = 0, evals = 0;
        bool out_of_budget = false;
        std::vector<Proposal> batch(bs);

        while (pop.size() < N && !out_of_budget) {
            if (attempts >= cfg.stagnation_factor * N)
                throw StagnationError("no acceptable particles at tolerance " + std::to_string(eps),
                                      gen ? res.generations.back().epsilon : eps);
            // propose sequentially (cheap), simulate in parallel, consume in order
            for (std::size_t b = 0; b < bs; ++b) {
                auto g = stream_rng(cfg.seed, gen, attempts + b);
                Proposal& p = batch[b];
                if (gen == 0) {
                    p.theta = prior.sample(g);
                } else {
                    const double u = uniform01(g) * cum.back();
                    const std::size_t j = std::min<std::size_t>(
                        std::upper_bound(cum.begin(), cum.end(), u) - cum.begin(), N - 1);
                    p.theta = prev[j].theta;
                    kernel->perturb(p.theta, g);
                }
                p.in_prior = prior.contains(p.theta);
                p.distance = std::numeric_limits<double>::infinity();
            }
            // only as many simulations as the budget can still pay for
            std::size_t can_eval = std::numeric_limits<std::size_t>::max();
            if (cfg.max_evaluations) can_eval = cfg.max_evaluations - (res.evaluations + evals);
            std::vector<std::size_t> todo;
            for (std::size_t b = 0; b < bs && todo.size() < can_eval; ++b)
                if (batch[b].in_prior) todo.push_back(b);
            parallel_for(todo.size(), [&](std::size_t i) {
                auto& p = batch[todo[i]];
                p.distance = d(p.theta);
            });

            for (std::size_t b = 0; b < bs && pop.size() < N; ++b) {
                const Proposal& p = batch[b];
                if (p.in_prior) {
                    if (cfg.max_evaluations && res.evaluations + evals >= cfg.max_evaluations) {
                        out_of_budget = true;
                        break;
                    }
                    ++evals;
                    if (accept(p.distance, eps)) pop.push_back({p.theta, 1.0, p.distance});
                }
                ++attempts;
            }
            if (cfg.max_seconds > 0.0 &&
                std::chrono::duration<double>(clock::now() - t_start).count() > cfg.max_seconds &&
                pop.size() < N) {
                res.evaluations += evals;
                res.stop = SmcStop::WallClock;
                return res;
            }
        }
        res.evaluations += evals;
        if (out_of_budget) {
            // incomplete generation is discarded
            res.stop = SmcStop::BudgetExhausted;
            return res;
        }

        // importance weights
        if (gen > 0) {
            std::vector<double> logw(N), terms(N);
            std::vector<double> log_prev(N);
            for (std::size_t j = 0; j < N; ++j) log_prev[j] = std::log(prev[j].weight);
            for (std::size_t i = 0; i < N; ++i) {
                for (std::size_t j = 0; j < N; ++j)
                    terms[j] = log_prev[j] + kernel->log_density(pop[i].theta, prev[j].theta);
                logw[i] = prior.log_density(pop[i].theta) - log_sum_exp(terms);
            }
            const double lse = log_sum_exp(logw);
            for (std::size_t i = 0; i < N; ++i) pop[i].weight = std::exp(logw[i] - lse);
        }
        normalise(pop);

        GenerationReport rep;
        rep.generation = gen;
        rep.epsilon = eps;
        rep.acceptance_rate = static_cast<double>(N) / static_cast<double>(attempts);
        rep.evaluations = evals;
        rep.cumulative_evaluations = res.evaluations;
        rep.best_distance = std::numeric_limits<double>::infinity();
        for (const auto& p : pop) {
            rep.best_distance = std::min(rep.best_distance, p.distance);
            if (p.distance < res.best.distance) res.best = p;
        }
        res.generations.push_back(rep);
        res.population = pop;

        if (eps <= cfg.target_epsilon) {
            res.stop = SmcStop::TargetReached;
            return res;
        }
        double next;
        if (adaptive) {
            std::vector<double> ds(N);
            for (std::size_t i = 0; i < N; ++i) ds[i] = pop[i].distance;
            next = std::max(unweighted_quantile(ds, cfg.quantile), cfg.target_epsilon);
            if (!(next < eps)) {
                res.stop = SmcStop::NoProgress;
                return res;
            }
        } else {
            if (gen + 1 >= cfg.schedule.size()) {
                res.stop = SmcStop::ScheduleDone;
                return res;
            }
            next = cfg.schedule[gen + 1];
        }
        if (gen + 1 >= cfg.max_generations) {
            res.stop = SmcStop::MaxGenerations;
            return res;
        }
        if (cfg.max_evaluations && res.evaluations >= cfg.max_evaluations) {
            res.stop = SmcStop::BudgetExhausted;
            return res;
        }
        if (cfg.max_seconds > 0.0 &&
            std::chrono::duration<double>(clock::now() - t_start).count() > cfg.max_seconds) {
            res.stop = SmcStop::WallClock;
            return res;
        }

        prev = std::move(pop);
        cum.resize(N);
        double c = 0.0;
        for (std::size_t j = 0; j < N; ++j) cum[j] = (c += prev[j].weight);
        kernel.emplace(prior, prev, cfg.kernel, cfg.kernel_scale);
        eps = next;
    }
}

// ---- export ----------------------------------------------------------------

void write_population_csv(std::ostream& os, const std::vector<Particle>& pop,
                          const std::vector<std::string>& names) {
    for (const auto& n : names) os << n << ',';
    os << "weight,distance\n";
    char buf[32];
    for (const auto& p : pop) {
        if (p.theta.size() != names.size()) throw ShapeError("particle width differs from header");
        for (double v : p.theta) {
            std::snprintf(buf, sizeof buf, "%.17g,", v);
            os << buf;
        }
        std::snprintf(buf, sizeof buf, "%.17g,", p.weight);
        os << buf;
        std::snprintf(buf, sizeof buf, "%.17g\n", p.distance);
        os << buf;
    }
}

namespace {

nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

std::string smc_report_json(const SmcResult& r) {
    nlohmann::json j;
    j["evaluations"] = r.evaluations;
    j["stop"] = to_string(r.stop);
    j["best_distance"] = num(r.best.distance);
    j["generations"] = nlohmann::json::array();
    for (const auto& g : r.generations) {
        j["generations"].push_back({{"generation", g.generation},
                                    {"epsilon", num(g.epsilon)},
                                    {"acceptance_rate", num(g.acceptance_rate)},
                                    {"evaluations", g.evaluations},
                                    {"cumulative_evaluations", g.cumulative_evaluations},
                                    {"best_distance", num(g.best_distance)}});
    }
    return j.dump(2) + "\n";
}

double ks_statistic(std::span<const double> a, std::span<const double> b,
                    std::span<const double> wa, std::span<const double> wb) {
    if (a.empty() || b.empty()) throw ShapeError("KS statistic needs non-empty samples");
    if ((!wa.empty() && wa.size() != a.size()) || (!wb.empty() && wb.size() != b.size()))
        throw ShapeError("KS weights do not match samples");
    struct Item {
        double x;
        double w;
        int side;
    };
    std::vector<Item> all;
    all.reserve(a.size() + b.size());
    double ta = 0.0, tb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double w = wa.empty() ? 1.0 : wa[i];
        all.push_back({a[i], w, 0});
        ta += w;
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
        const double w = wb.empty() ? 1.0 : wb[i];
        all.push_back({b[i], w, 1});
        tb += w;
    }
    std::sort(all.begin(), all.end(), [](const Item& l, const Item& r) { return l.x < r.x; });
    double fa = 0.0, fb = 0.0, dmax = 0.0;
    for (std::size_t i = 0; i < all.size();) {
        const double x = all[i].x;
        for (; i < all.size() && all[i].x == x; ++i)
            (all[i].side == 0 ? fa : fb) += all[i].w;
        dmax = std::max(dmax, std::abs(fa / ta - fb / tb));
    }
    return dmax;
}

}  // namespace handy
