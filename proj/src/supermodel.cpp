#include "handy/supermodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include <Eigen/Dense>

#include "handy/errors.hpp"
#include "rk4.hpp"

namespace handy {

// ---- tensor ----------------------------------------------------------------

CouplingTensor::CouplingTensor(std::size_t M, VariableMask vars, double lo, double hi,
                               bool symmetric)
    : M_(M), vars_(vars), lo_(lo), hi_(hi), symmetric_(symmetric), c_(4 * M * M, 0.0) {
    if (M == 0) throw ConfigurationError("supermodel needs at least one submodel");
    if (!(std::isfinite(lo) && std::isfinite(hi) && lo <= hi))
        throw ConfigurationError("coupling bounds must satisfy lo <= hi");
    if (symmetric && lo < 0.0) throw ConfigurationError("symmetric coupling must be nonnegative");
    // start at the lower bound (or zero when it lies in the box)
    const double init = (lo <= 0.0 && hi >= 0.0) ? 0.0 : lo;
    fill(init);
}

void CouplingTensor::set(std::size_t var, std::size_t mu, std::size_t nu, double value) {
    if (var >= 4 || mu >= M_ || nu >= M_) throw ShapeError("coupling index out of range");
    if (mu == nu) throw ShapeError("diagonal coupling coefficients are not defined");
    if (!vars_[var]) throw ConfigurationError("variable " + std::string(kStateNames[var]) +
                                              " is not coupled");
    c_[(var * M_ + mu) * M_ + nu] = value;
    if (symmetric_) c_[(var * M_ + nu) * M_ + mu] = value;
}

void CouplingTensor::fill(double value) {
    std::fill(c_.begin(), c_.end(), 0.0);
    for (std::size_t i = 0; i < 4; ++i) {
        if (!vars_[i]) continue;
        for (std::size_t mu = 0; mu < M_; ++mu)
            for (std::size_t nu = 0; nu < M_; ++nu)
                if (mu != nu) c_[(i * M_ + mu) * M_ + nu] = value;
    }
}

std::size_t CouplingTensor::free_count() const {
    const auto nv = static_cast<std::size_t>(std::count(vars_.begin(), vars_.end(), true));
    const std::size_t pairs = symmetric_ ? M_ * (M_ - 1) / 2 : M_ * (M_ - 1);
    return nv * pairs;
}

namespace {

template <class Fn>
void for_each_free(const VariableMask& vars, std::size_t M, bool symmetric, Fn&& fn) {
    for (std::size_t i = 0; i < 4; ++i) {
        if (!vars[i]) continue;
        for (std::size_t mu = 0; mu < M; ++mu)
            for (std::size_t nu = symmetric ? mu + 1 : 0; nu < M; ++nu)
                if (mu != nu) fn(i, mu, nu);
    }
}

}  // namespace

std::vector<double> CouplingTensor::free_values() const {
    std::vector<double> out;
    out.reserve(free_count());
    for_each_free(vars_, M_, symmetric_,
                  [&](std::size_t i, std::size_t mu, std::size_t nu) { out.push_back((*this)(i, mu, nu)); });
    return out;
}

void CouplingTensor::set_free_values(std::span<const double> v) {
    if (v.size() != free_count())
        throw ShapeError("expected " + std::to_string(free_count()) + " coupling coefficients, got " +
                         std::to_string(v.size()));
    std::size_t k = 0;
    for_each_free(vars_, M_, symmetric_,
                  [&](std::size_t i, std::size_t mu, std::size_t nu) { set(i, mu, nu, v[k++]); });
}

std::vector<std::string> CouplingTensor::free_names() const {
    std::vector<std::string> out;
    for_each_free(vars_, M_, symmetric_, [&](std::size_t i, std::size_t mu, std::size_t nu) {
        out.push_back("C_" + std::string(kStateNames[i]) + "_" + std::to_string(mu) + "_" +
                      std::to_string(nu));
    });
    return out;
}

bool CouplingTensor::within_bounds() const {
    bool ok = true;
    for_each_free(vars_, M_, false, [&](std::size_t i, std::size_t mu, std::size_t nu) {
        const double c = (*this)(i, mu, nu);
        ok = ok && c >= lo_ && c <= hi_;
    });
    return ok;
}

void CouplingTensor::write_csv(std::ostream& os) const {
    os << "variable,mu,nu,value\n";
    char buf[64];
    for_each_free(vars_, M_, symmetric_, [&](std::size_t i, std::size_t mu, std::size_t nu) {
        std::snprintf(buf, sizeof buf, "%.17g", (*this)(i, mu, nu));
        os << kStateNames[i] << ',' << mu << ',' << nu << ',' << buf << '\n';
    });
}

// ---- coupled integration ---------------------------------------------------

namespace {

using States = std::vector<StateVector>;

class CoupledRhs {
public:
    CoupledRhs(std::span<const Submodel> subs, const CouplingTensor& C, const DynamicsOptions& opt)
        : C_(C) {
        if (C.members() != subs.size())
            throw ShapeError("coupling tensor is for " + std::to_string(C.members()) +
                             " submodels, got " + std::to_string(subs.size()));
        rhs_.reserve(subs.size());
        for (const auto& s : subs) rhs_.emplace_back(s.params, s.variant, opt);
    }

    std::size_t size() const { return rhs_.size(); }

    void operator()(const States& x, States& dx) const {
        const std::size_t M = rhs_.size();
        const auto& vars = C_.variables();
        for (std::size_t mu = 0; mu < M; ++mu) {
            StateVector d = rhs_[mu](x[mu]);
            for (std::size_t i = 0; i < 4; ++i) {
                if (!vars[i]) continue;
                double acc = 0.0;
                for (std::size_t nu = 0; nu < M; ++nu)
                    if (nu != mu) acc += C_(i, mu, nu) * (x[nu][i] - x[mu][i]);
                d[i] += acc;
            }
            dx[mu] = d;
        }
    }

private:
    std::vector<HandyRhs> rhs_;
    const CouplingTensor& C_;
};

// Workspace for one RK4 step of M coupled states.
struct Rk4Work {
    States k1, k2, k3, k4, tmp;
    explicit Rk4Work(std::size_t M) : k1(M), k2(M), k3(M), k4(M), tmp(M) {}
};

void stage(const States& x, double h, const States& k, States& out) {
    for (std::size_t m = 0; m < x.size(); ++m) out[m] = detail::axpy(x[m], h, k[m]);
}

void coupled_step(const CoupledRhs& f, States& x, double dt, Rk4Work& w) {
    f(x, w.k1);
    stage(x, 0.5 * dt, w.k1, w.tmp);
    f(w.tmp, w.k2);
    stage(x, 0.5 * dt, w.k2, w.tmp);
    f(w.tmp, w.k3);
    stage(x, dt, w.k3, w.tmp);
    f(w.tmp, w.k4);
    for (std::size_t m = 0; m < x.size(); ++m)
        x[m] = detail::rk4_combine(x[m], dt, w.k1[m], w.k2[m], w.k3[m], w.k4[m]);
}

void check_and_clamp(States& x, double t, double floor) {
    for (std::size_t m = 0; m < x.size(); ++m) {
        if (!detail::finite(x[m]))
            throw IntegrationError("integration diverged in submodel " + std::to_string(m) + " (" +
                                       detail::first_nonfinite(x[m]) + ") at t=" + std::to_string(t),
                                   t);
        detail::clamp_state(x[m], floor);
    }
}

StateVector mean_state(const States& x) {
    StateVector s;
    for (const auto& v : x)
        for (std::size_t i = 0; i < 4; ++i) s[i] += v[i];
    const double inv = 1.0 / static_cast<double>(x.size());
    for (std::size_t i = 0; i < 4; ++i) s[i] *= inv;
    return s;
}

template <class Sink>
void integrate_coupled(std::span<const Submodel> subs, const CouplingTensor& C, double t0,
                       std::size_t n, const DynamicsOptions& opt, Sink&& sink) {
    if (!(opt.extinction_floor >= 0.0)) throw ConfigurationError("extinction floor must be >= 0");
    const CoupledRhs f(subs, C, opt);
    States x(subs.size());
    for (std::size_t m = 0; m < subs.size(); ++m) {
        x[m] = initial_state(subs[m].params);
        detail::clamp_state(x[m], 0.0);
    }
    Rk4Work w(subs.size());
    sink(std::size_t{0}, x);
    for (std::size_t i = 1; i <= n; ++i) {
        coupled_step(f, x, opt.dt, w);
        check_and_clamp(x, t0 + static_cast<double>(i) * opt.dt, opt.extinction_floor);
        sink(i, x);
    }
}

}  // namespace

std::vector<StateVector> coupled_derivatives(std::span<const Submodel> submodels,
                                             std::span<const StateVector> states,
                                             const CouplingTensor& C, const DynamicsOptions& opt) {
    if (states.size() != submodels.size())
        throw ShapeError("got " + std::to_string(states.size()) + " states for " +
                         std::to_string(submodels.size()) + " submodels");
    const CoupledRhs f(submodels, C, opt);
    States x(states.begin(), states.end()), dx(states.size());
    f(x, dx);
    return dx;
}

SupermodelRun simulate_supermodel(std::span<const Submodel> submodels, const CouplingTensor& C,
                                  double t0, double t_end, const DynamicsOptions& opt) {
    const std::size_t n = step_count(t0, t_end, opt.dt);
    SupermodelRun run;
    run.members.assign(submodels.size(), Trajectory{t0, opt.dt, {}});
    for (auto& m : run.members) m.states.reserve(n + 1);
    run.ensemble = Trajectory{t0, opt.dt, {}};
    run.ensemble.states.reserve(n + 1);
    integrate_coupled(submodels, C, t0, n, opt, [&](std::size_t, const States& x) {
        for (std::size_t m = 0; m < x.size(); ++m) run.members[m].states.push_back(x[m]);
        run.ensemble.states.push_back(mean_state(x));
    });
    return run;
}

void SupermodelRun::write_csv(std::ostream& os) const {
    os << "submodel,t,x_C,x_E,y,w\n";
    char buf[160];
    auto emit = [&](const std::string& label, const Trajectory& tr) {
        for (std::size_t n = 0; n < tr.size(); ++n) {
            const auto& x = tr.states[n];
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", tr.time(n), x.xC,
                          x.xE, x.y, x.w);
            os << label << ',' << buf;
        }
    };
    for (std::size_t m = 0; m < members.size(); ++m) emit(std::to_string(m), members[m]);
    emit("ensemble", ensemble);
}

std::vector<SampledSeries> simulate_supermodel_sampled(
    std::span<const Submodel> submodels, const CouplingTensor& C, double t0,
    std::span<const std::array<double, 2>> windows, int f, const DynamicsOptions& opt) {
    if (f < 1) throw ConfigurationError("sampling frequency must be >= 1");
    std::vector<SampledSeries> out;
    std::vector<std::array<std::size_t, 3>> req;  // (grid index, window, slot)
    std::size_t last = 0;
    for (std::size_t k = 0; k < windows.size(); ++k) {
        const auto [a, b] = windows[k];
        if (a < t0 - 1e-9) throw RangeError("sampling window starts before t0");
        if (!(b > a)) throw RangeError("sampling window must have positive length");
        SampledSeries s{a, b, f, {}, {}};
        for (int j = 0; j <= f; ++j) s.times.push_back(a + j * (b - a) / f);
        s.times.back() = b;
        s.values.resize(s.times.size());
        for (std::size_t j = 0; j < s.times.size(); ++j) {
            const auto idx = static_cast<std::size_t>(std::round((s.times[j] - t0) / opt.dt));
            req.push_back({idx, k, j});
            last = std::max(last, idx);
        }
        out.push_back(std::move(s));
    }
    std::sort(req.begin(), req.end());
    std::size_t r = 0;
    integrate_coupled(submodels, C, t0, last, opt, [&](std::size_t i, const States& x) {
        if (r >= req.size() || req[r][0] != i) return;
        const StateVector m = mean_state(x);
        while (r < req.size() && req[r][0] == i) {
            out[req[r][1]].values[req[r][2]] = m;
            ++r;
        }
    });
    return out;
}

// ---- error -----------------------------------------------------------------

void SumoErrorConfig::validate() const {
    if (K < 1) throw ConfigurationError("interval count K must be >= 1");
    if (!(gamma_discount > 0.0 && gamma_discount <= 1.0))
        throw ConfigurationError("discount gamma must lie in (0, 1]");
}

namespace {

double sq_dist(const StateVector& a, const StateVector& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

template <class Pred>
double sumo_error_impl(Pred&& pred, const SampledSeries& obs, const SumoErrorConfig& cfg) {
    cfg.validate();
    if (obs.size() == 0) throw ConfigurationError("no observations");
    const double span = obs.t_end - obs.t_start;
    if (!(span > 0.0)) throw ConfigurationError("observation window must have positive length");
    const double width = span / static_cast<double>(cfg.K);
    const double tol = 1e-9 * std::max(1.0, std::abs(obs.t_end));
    double total = 0.0;
    for (std::size_t k = 0; k < cfg.K; ++k) {
        const double lo = obs.t_start + static_cast<double>(k) * width;
        const double hi = k + 1 == cfg.K ? obs.t_end : lo + width;
        std::vector<std::size_t> idx;
        for (std::size_t j = 0; j < obs.size(); ++j)
            if (obs.times[j] >= lo - tol && obs.times[j] <= hi + tol) idx.push_back(j);
        if (idx.empty())
            throw ConfigurationError("interval " + std::to_string(k) + " of the error holds no samples");
        const double J = static_cast<double>(idx.size() - 1);
        double num = 0.0, den = 0.0;
        for (std::size_t j = 0; j < idx.size(); ++j) {
            const double wgt = J > 0 ? std::pow(cfg.gamma_discount, static_cast<double>(j) / J) : 1.0;
            num += wgt * sq_dist(pred(idx[j]), obs.values[idx[j]]);
            den += wgt;
        }
        total += num / den;
    }
    return total / static_cast<double>(cfg.K);
}

}  // namespace

double sumo_error(const SampledSeries& predicted, const SampledSeries& observed,
                  const SumoErrorConfig& cfg) {
    if (predicted.size() != observed.size())
        throw ShapeError("predicted and observed series differ in length");
    for (std::size_t j = 0; j < observed.size(); ++j)
        if (std::abs(predicted.times[j] - observed.times[j]) > 1e-9 * std::max(1.0, std::abs(observed.times[j])))
            throw ShapeError("predicted and observed timestamps differ");
    return sumo_error_impl([&](std::size_t j) -> const StateVector& { return predicted.values[j]; },
                           observed, cfg);
}

double sumo_error(const Trajectory& ensemble, const SampledSeries& observed,
                  const SumoErrorConfig& cfg) {
    return sumo_error_impl(
        [&](std::size_t j) -> const StateVector& { return ensemble.at(observed.times[j]); },
        observed, cfg);
}

CouplingLoss parse_coupling_loss(const std::string& s) {
    if (s == "sumo" || s == "sumo-error") return CouplingLoss::SumoError;
    if (s == "rmse") return CouplingLoss::Rmse;
    throw ConfigurationError("unknown coupling loss '" + s + "' (sumo, rmse)");
}

std::string to_string(CouplingLoss l) { return l == CouplingLoss::SumoError ? "sumo" : "rmse"; }

// ---- training --------------------------------------------------------------

double coupling_loss(std::span<const Submodel> submodels, const CouplingTensor& C,
                     const SampledSeries& observed, CouplingLoss loss, const SumoErrorConfig& err,
                     const DynamicsOptions& opt, double t0) {
    const std::array<std::array<double, 2>, 1> win{{{observed.t_start, observed.t_end}}};
    const auto pred = simulate_supermodel_sampled(submodels, C, t0, win, observed.f, opt);
    return loss == CouplingLoss::SumoError ? sumo_error(pred[0], observed, err)
                                           : rmse_distance(pred[0], observed);
}

CouplingTrainResult train_coupling(std::span<const Submodel> submodels,
                                   const SampledSeries& observed, const CouplingTrainConfig& cfg) {
    cfg.error.validate();
    const CouplingTensor proto(submodels.size(), cfg.vars, cfg.lo, cfg.hi, true);
    const std::size_t n = proto.free_count();
    if (n == 0) throw ConfigurationError("no free coupling coefficients");
    const PriorBox prior(std::vector<double>(n, cfg.lo), std::vector<double>(n, cfg.hi));
    const std::vector<Submodel> subs(submodels.begin(), submodels.end());

    const Discrepancy d = [&](std::span<const double> theta) {
        CouplingTensor C = proto;
        C.set_free_values(theta);
        try {
            return coupling_loss(subs, C, observed, cfg.loss, cfg.error, cfg.dynamics, cfg.t0);
        } catch (const IntegrationError&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
    };

    CouplingTrainResult out;
    out.smc = abc_smc(prior, d, cfg.smc);
    out.coupling = proto;
    out.coupling.set_free_values(out.smc.best.theta);
    out.loss = out.smc.best.distance;
    for (const auto& g : out.smc.generations) out.loss_trace.push_back(g.best_distance);
    out.evaluations = out.smc.evaluations;
    return out;
}

// ---- nudging ---------------------------------------------------------------

void NudgingConfig::validate() const {
    if (!(delta_floor < C_max)) throw ConfigurationError("nudging needs delta_floor < C_max");
    for (std::size_t i = 0; i < 4; ++i)
        if (!(K[i] >= 0.0)) throw ConfigurationError("nudging gains must be >= 0");
    if (!(eps_barrier >= 0.0)) throw ConfigurationError("barrier strength must be >= 0");
    if (!std::isfinite(a)) throw ConfigurationError("adaptation rate must be finite");
}

namespace {

// States and directed coefficients advanced together.
struct Joint {
    States x;
    std::vector<double> c;  // dense 4*M*M, same layout as CouplingTensor
};

}  // namespace

NudgedState nudged_training_step(std::span<const Submodel> submodels,
                                 std::span<const StateVector> states, const CouplingTensor& C,
                                 const StateVector& truth, const NudgingConfig& cfg, double dt,
                                 const DynamicsOptions& opt) {
    cfg.validate();
    const std::size_t M = submodels.size();
    if (states.size() != M || C.members() != M)
        throw ShapeError("nudging needs one state and one tensor row per submodel");
    if (!(dt > 0.0)) throw ConfigurationError("dt must be positive");
    const auto& vars = C.variables();
    auto slot = [M](std::size_t i, std::size_t mu, std::size_t nu) { return (i * M + mu) * M + nu; };

    Joint j0{States(states.begin(), states.end()), std::vector<double>(4 * M * M, 0.0)};
    for (std::size_t i = 0; i < 4; ++i) {
        if (!vars[i]) continue;
        for (std::size_t mu = 0; mu < M; ++mu)
            for (std::size_t nu = 0; nu < M; ++nu) {
                if (mu == nu) continue;
                const double c = C(i, mu, nu);
                if (!(c > cfg.delta_floor && c < cfg.C_max))
                    throw ConfigurationError("coefficient " + std::string(kStateNames[i]) + "[" +
                                             std::to_string(mu) + "," + std::to_string(nu) +
                                             "] not strictly inside the barrier interval");
                j0.c[slot(i, mu, nu)] = c;
            }
    }

    std::vector<HandyRhs> rhs;
    rhs.reserve(M);
    for (const auto& s : submodels) rhs.emplace_back(s.params, s.variant, opt);

    auto deriv = [&](const Joint& j) {
        Joint d{States(M), std::vector<double>(4 * M * M, 0.0)};
        const StateVector mean = mean_state(j.x);
        for (std::size_t mu = 0; mu < M; ++mu) {
            StateVector v = rhs[mu](j.x[mu]);
            for (std::size_t i = 0; i < 4; ++i) {
                v[i] += cfg.K[i] * (truth[i] - j.x[mu][i]);
                if (!vars[i]) continue;
                for (std::size_t nu = 0; nu < M; ++nu) {
                    if (nu == mu) continue;
                    const double diff = j.x[nu][i] - j.x[mu][i];
                    const double c = j.c[slot(i, mu, nu)];
                    v[i] += c * diff;
                    d.c[slot(i, mu, nu)] = cfg.a * diff * (truth[i] - mean[i]) -
                                           cfg.eps_barrier / ((c - cfg.C_max) * (c - cfg.C_max)) +
                                           cfg.eps_barrier / ((c - cfg.delta_floor) * (c - cfg.delta_floor));
                }
            }
            d.x[mu] = v;
        }
        return d;
    };
    auto add = [&](const Joint& j, double h, const Joint& k) {
        Joint r = j;
        for (std::size_t m = 0; m < M; ++m) r.x[m] = detail::axpy(j.x[m], h, k.x[m]);
        for (std::size_t q = 0; q < r.c.size(); ++q) r.c[q] += h * k.c[q];
        return r;
    };

    const Joint k1 = deriv(j0);
    const Joint k2 = deriv(add(j0, 0.5 * dt, k1));
    const Joint k3 = deriv(add(j0, 0.5 * dt, k2));
    const Joint k4 = deriv(add(j0, dt, k3));

    NudgedState out{States(M), C};
    for (std::size_t m = 0; m < M; ++m)
        out.states[m] = detail::rk4_combine(j0.x[m], dt, k1.x[m], k2.x[m], k3.x[m], k4.x[m]);
    check_and_clamp(out.states, dt, opt.extinction_floor);

    for (std::size_t i = 0; i < 4; ++i) {
        if (!vars[i]) continue;
        for (std::size_t mu = 0; mu < M; ++mu)
            for (std::size_t nu = 0; nu < M; ++nu) {
                if (mu == nu) continue;
                const std::size_t q = slot(i, mu, nu);
                const double c = j0.c[q] + dt / 6.0 * (k1.c[q] + 2.0 * k2.c[q] + 2.0 * k3.c[q] + k4.c[q]);
                if (!(c > cfg.delta_floor && c < cfg.C_max))
                    throw IntegrationError("coefficient " + std::string(kStateNames[i]) + "[" +
                                               std::to_string(mu) + "," + std::to_string(nu) +
                                               "] reached a barrier (" + std::to_string(c) +
                                               "); reduce dt or the adaptation rate",
                                           dt);
                out.C.set(i, mu, nu, c);
            }
    }
    return out;
}

// ---- attractor distances ---------------------------------------------------

AttractorDistance parse_attractor_distance(const std::string& s) {
    if (s == "W" || s == "w") return AttractorDistance::W;
    if (s == "V" || s == "v") return AttractorDistance::V;
    if (s == "U" || s == "u") return AttractorDistance::U;
    throw ConfigurationError("unknown attractor distance '" + s + "' (W, V, U)");
}

namespace {

struct Gaussian {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;  // 1/n normalisation
};

Gaussian fit(const std::vector<std::vector<double>>& s, std::size_t dim) {
    const auto n = static_cast<Eigen::Index>(s.size());
    const auto d = static_cast<Eigen::Index>(dim);
    Eigen::MatrixXd X(n, d);
    for (Eigen::Index r = 0; r < n; ++r) {
        if (s[r].size() != dim) throw ShapeError("samples differ in dimension");
        for (Eigen::Index c = 0; c < d; ++c) X(r, c) = s[r][c];
    }
    Gaussian g;
    g.mean = X.colwise().mean().transpose();
    const Eigen::MatrixXd Z = X.rowwise() - g.mean.transpose();
    g.cov = (Z.transpose() * Z) / static_cast<double>(n);
    return g;
}

Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& A) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (A + A.transpose()));
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double trace_sqrt_psd(const Eigen::MatrixXd& A) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (A + A.transpose()),
                                                      Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
}

// Tr((S0^1/2 S1 S0^1/2)^1/2)
double cross_term(const Eigen::MatrixXd& S0, const Eigen::MatrixXd& S1) {
    const Eigen::MatrixXd r = sqrtm_psd(S0);
    return trace_sqrt_psd(r * S1 * r);
}

}  // namespace

AttractorDistanceResult attractor_distance(const std::vector<std::vector<double>>& a,
                                           const std::vector<std::vector<double>>& b,
                                           AttractorDistance kind) {
    if (a.empty() || b.empty()) throw ShapeError("attractor samples must be nonempty");
    const std::size_t dim = a.front().size();
    if (dim == 0) throw ShapeError("attractor samples must have dimension >= 1");
    if (b.front().size() != dim) throw ShapeError("sample sets differ in dimension");
    const Gaussian g0 = fit(a, dim), g1 = fit(b, dim);

    AttractorDistanceResult out;
    // n samples give a covariance of rank at most n - 1
    out.rank_deficient = a.size() <= dim || b.size() <= dim;

    double sq = 0.0;
    if (kind == AttractorDistance::U) {
        const Eigen::VectorXd s0 = g0.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
        const Eigen::VectorXd s1 = g1.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
        sq = (s1 - s0).squaredNorm();
    } else {
        // both orderings, averaged, so the result is exactly symmetric
        const double cross = 0.5 * (cross_term(g0.cov, g1.cov) + cross_term(g1.cov, g0.cov));
        sq = std::max(0.0, g0.cov.trace() + g1.cov.trace() - 2.0 * cross);
        if (kind == AttractorDistance::W) sq += (g1.mean - g0.mean).squaredNorm();
    }
    out.squared = sq;
    out.distance = std::sqrt(sq);
    return out;
}

std::vector<std::vector<double>> trajectory_samples(const Trajectory& tr, double t_lo, double t_hi) {
    std::vector<std::vector<double>> out;
    const std::size_t a = tr.index_at(t_lo), b = tr.index_at(t_hi);
    for (std::size_t n = a; n <= b; ++n) {
        const auto& x = tr.states[n];
        out.push_back({x.xC, x.xE, x.y, x.w});
    }
    return out;
}

}  // namespace handy
