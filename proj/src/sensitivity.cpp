#include "handy/sensitivity.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

#include "handy/parallel.hpp"
#include "handy/rng.hpp"
#include "handy/sobol.hpp"

namespace handy {

// ---- design ----------------------------------------------------------------

SaltelliDesign saltelli_design(std::size_t k, std::size_t N, std::vector<Bounds> bounds,
                               bool second_order) {
    if (k < 1) throw ConfigurationError("need at least one factor");
    if (N < 1) throw ConfigurationError("base sample size must be >= 1");
    if (bounds.size() != k) throw ShapeError("bounds must have one interval per factor");
    for (const auto& b : bounds)
        if (!(b.lo <= b.hi)) throw ConfigurationError("factor bounds must satisfy lo <= hi");
    if (2 * k > SobolSequence::max_dim())
        throw ConfigurationError("too many factors for the Sobol' table (" + std::to_string(k) +
                                 " > " + std::to_string(SobolSequence::max_dim() / 2) + ")");

    SaltelliDesign d;
    d.N = N;
    d.k = k;
    d.second_order = second_order;
    d.bounds = std::move(bounds);
    if (!std::has_single_bit(N))
        d.warning = "base sample size " + std::to_string(N) + " is not a power of two";
    d.A.resize(N * k);
    d.B.resize(N * k);
    SobolSequence seq(2 * k);
    std::vector<double> u(2 * k);
    for (std::size_t j = 0; j < N; ++j) {
        seq.next(u.data());
        for (std::size_t i = 0; i < k; ++i) {
            const Bounds& b = d.bounds[i];
            // degenerate bounds give exactly the constant
            d.A[j * k + i] = b.hi > b.lo ? b.lo + u[i] * (b.hi - b.lo) : b.lo;
            d.B[j * k + i] = b.hi > b.lo ? b.lo + u[k + i] * (b.hi - b.lo) : b.lo;
        }
    }
    return d;
}

void SaltelliDesign::row(std::size_t r, double* out) const {
    if (r >= row_count()) throw RangeError("design row out of range");
    const std::size_t G = group_size(), j = r / G, o = r % G;
    const double* a = &A[j * k];
    const double* b = &B[j * k];
    if (o == 0) {
        std::copy(a, a + k, out);
    } else if (o == G - 1) {
        std::copy(b, b + k, out);
    } else if (o <= k) {  // AB_i
        std::copy(a, a + k, out);
        out[o - 1] = b[o - 1];
    } else {  // BA_i
        std::copy(b, b + k, out);
        out[o - k - 1] = a[o - k - 1];
    }
}

std::vector<double> SaltelliDesign::row(std::size_t r) const {
    std::vector<double> v(k);
    row(r, v.data());
    return v;
}

void SaltelliDesign::write_csv(std::ostream& os, const std::vector<std::string>& names) const {
    if (names.size() != k) throw ShapeError("design header must name every factor");
    for (std::size_t i = 0; i < k; ++i) os << names[i] << (i + 1 < k ? "," : "\n");
    std::vector<double> v(k);
    char buf[32];
    for (std::size_t r = 0; r < row_count(); ++r) {
        row(r, v.data());
        for (std::size_t i = 0; i < k; ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", v[i]);
            os << buf << (i + 1 < k ? "," : "\n");
        }
    }
}

std::vector<double> evaluate_design(const SaltelliDesign& d,
                                    const std::function<double(std::span<const double>)>& f) {
    std::vector<double> Y(d.row_count());
    parallel_for(Y.size(), [&](std::size_t r) {
        std::vector<double> x(d.k);
        d.row(r, x.data());
        Y[r] = f(x);
    });
    return Y;
}

// ---- estimators ------------------------------------------------------------

Estimator parse_estimator(const std::string& s) {
    if (s == "jansen" || s == "Jansen") return Estimator::Jansen;
    if (s == "saltelli" || s == "Saltelli") return Estimator::Saltelli;
    throw ConfigurationError("unknown estimator '" + s + "'");
}

std::string to_string(Estimator e) { return e == Estimator::Jansen ? "jansen" : "saltelli"; }

double SensitivityReport::s2(std::size_t i, std::size_t j) const {
    const std::size_t k = S1.size();
    if (i > j) std::swap(i, j);
    return S2.empty() ? 0.0 : S2[i * k + j];
}

namespace {

struct Groups {
    const SaltelliDesign& d;
    std::span<const double> Y;
    std::size_t G;
    double A(std::size_t j) const { return Y[j * G]; }
    double B(std::size_t j) const { return Y[j * G + G - 1]; }
    double AB(std::size_t i, std::size_t j) const { return Y[j * G + 1 + i]; }
    double BA(std::size_t i, std::size_t j) const { return Y[j * G + 1 + d.k + i]; }
};

// Indices from the base samples listed in `js` (with repetition for bootstrap).
SensitivityReport estimate_core(const SaltelliDesign& d, std::span<const double> Y, Estimator est,
                                std::span<const std::size_t> js) {
    const std::size_t k = d.k;
    const Groups g{d, Y, d.group_size()};
    const double n = static_cast<double>(js.size());

    SensitivityReport r;
    r.S1.assign(k, 0.0);
    r.ST.assign(k, 0.0);
    r.S1_conf.assign(k, 0.0);
    r.ST_conf.assign(k, 0.0);
    r.has_second_order = d.second_order;
    if (d.second_order) r.S2.assign(k * k, 0.0);
    r.evaluations = d.row_count();

    // mean and variance pooled over A and B
    double sum = 0.0;
    for (auto j : js) sum += g.A(j) + g.B(j);
    const double f0 = sum / (2.0 * n);
    double ss = 0.0;
    for (auto j : js) {
        const double a = g.A(j) - f0, b = g.B(j) - f0;
        ss += a * a + b * b;
    }
    const double V = ss / (2.0 * n);
    r.f0 = f0;
    r.variance = V;
    if (V < 1e-14 * (1.0 + f0 * f0)) {
        r.degenerate = true;
        return r;
    }

    for (std::size_t i = 0; i < k; ++i) {
        double s1 = 0.0, st = 0.0;
        if (est == Estimator::Jansen) {
            for (auto j : js) {
                const double e1 = g.B(j) - g.AB(i, j);
                const double et = g.A(j) - g.AB(i, j);
                s1 += e1 * e1;
                st += et * et;
            }
            r.S1[i] = (V - s1 / (2.0 * n)) / V;
            r.ST[i] = st / (2.0 * n) / V;
        } else {
            for (auto j : js) {
                s1 += d.second_order ? g.A(j) * g.BA(i, j) : g.B(j) * g.AB(i, j);
                st += g.A(j) * g.AB(i, j);
            }
            r.S1[i] = (s1 / n - f0 * f0) / V;
            r.ST[i] = 1.0 - (st / n - f0 * f0) / V;
        }
    }

    if (d.second_order) {
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t l = i + 1; l < k; ++l) {
                // BA_i and AB_l share exactly columns i and l
                double acc = 0.0;
                for (auto j : js) {
                    if (est == Estimator::Jansen) {
                        const double e = g.BA(i, j) - g.AB(l, j);
                        acc += e * e;
                    } else {
                        acc += g.BA(i, j) * g.AB(l, j);
                    }
                }
                const double Vc = est == Estimator::Jansen ? V - acc / (2.0 * n) : acc / n - f0 * f0;
                r.S2[i * k + l] = Vc / V - r.S1[i] - r.S1[l];
            }
    }
    return r;
}

void check_outputs(const SaltelliDesign& d, std::span<const double> Y) {
    if (Y.size() != d.row_count())
        throw ShapeError("expected " + std::to_string(d.row_count()) + " outputs, got " +
                         std::to_string(Y.size()));
    std::vector<std::size_t> bad;
    for (std::size_t r = 0; r < Y.size(); ++r)
        if (!std::isfinite(Y[r])) bad.push_back(r);
    if (!bad.empty()) {
        std::string msg = "non-finite model outputs at rows";
        for (std::size_t i = 0; i < std::min<std::size_t>(bad.size(), 10); ++i)
            msg += " " + std::to_string(bad[i]);
        if (bad.size() > 10) msg += " ... (" + std::to_string(bad.size()) + " total)";
        throw NonFiniteOutputError(msg, std::move(bad));
    }
}

double quantile(std::vector<double>& v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

SensitivityReport estimate_indices(const SaltelliDesign& d, std::span<const double> Y,
                                   Estimator est) {
    check_outputs(d, Y);
    std::vector<std::size_t> js(d.N);
    std::iota(js.begin(), js.end(), 0);
    return estimate_core(d, Y, est, js);
}

ConfidenceHalfWidths bootstrap_confidence(const SaltelliDesign& d, std::span<const double> Y,
                                          Estimator est, std::size_t B, double confidence,
                                          std::uint64_t seed) {
    if (B < 50) throw ConfigurationError("bootstrap needs at least 50 resamples");
    if (!(confidence > 0.0 && confidence < 1.0))
        throw ConfigurationError("confidence level must be in (0, 1)");
    check_outputs(d, Y);
    const std::size_t k = d.k;
    std::vector<std::vector<double>> s1(k, std::vector<double>(B)), st(k, std::vector<double>(B));
    parallel_for(B, [&](std::size_t b) {
        auto g = stream_rng(seed, 0x5a17, b);
        std::uniform_int_distribution<std::size_t> pick(0, d.N - 1);
        std::vector<std::size_t> js(d.N);
        for (auto& j : js) j = pick(g);
        const auto r = estimate_core(d, Y, est, js);
        for (std::size_t i = 0; i < k; ++i) {
            s1[i][b] = r.S1[i];
            st[i][b] = r.ST[i];
        }
    });
    const double lo = 0.5 * (1.0 - confidence), hi = 1.0 - lo;
    ConfidenceHalfWidths out;
    out.S1.resize(k);
    out.ST.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
        out.S1[i] = 0.5 * (quantile(s1[i], hi) - quantile(s1[i], lo));
        out.ST[i] = 0.5 * (quantile(st[i], hi) - quantile(st[i], lo));
    }
    return out;
}

SensitivityReport analyse(const SaltelliDesign& d, std::span<const double> Y, Estimator est,
                          std::size_t B, double confidence, std::uint64_t seed) {
    SensitivityReport r = estimate_indices(d, Y, est);
    const auto c = bootstrap_confidence(d, Y, est, B, confidence, seed);
    r.S1_conf = c.S1;
    r.ST_conf = c.ST;
    return r;
}

void SensitivityReport::write_csv(std::ostream& os, const std::vector<std::string>& names) const {
    if (names.size() != S1.size()) throw ShapeError("report header must name every factor");
    os << "factor,S1,S1_conf,ST,ST_conf\n";
    char buf[160];
    for (std::size_t i = 0; i < S1.size(); ++i) {
        std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g,%.17g\n", S1[i], S1_conf[i], ST[i],
                      ST_conf[i]);
        os << names[i] << buf;
    }
}

void SensitivityReport::write_pairs_csv(std::ostream& os,
                                        const std::vector<std::string>& names) const {
    os << "i,j,S2\n";
    const std::size_t k = S1.size();
    char buf[32];
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", s2(i, j));
            os << names[i] << ',' << names[j] << ',' << buf << '\n';
        }
}

std::vector<std::size_t> rank_by_total(const SensitivityReport& r) {
    std::vector<std::size_t> idx(r.ST.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return r.ST[a] > r.ST[b]; });
    return idx;
}

std::vector<std::size_t> sensitive_factors(const SensitivityReport& r, double threshold) {
    std::vector<std::size_t> out;
    for (auto i : rank_by_total(r))
        if (r.ST[i] >= threshold) out.push_back(i);
    return out;
}

// ---- HANDY output ----------------------------------------------------------

GdpValue gdp_measure(const StateVector& x) {
    const double pop = x.xC + x.xE;
    if (pop < 1e-12) return {0.0, true};
    return {x.w / pop, false};
}

GdpValue gdp_measure(const Trajectory& traj, double horizon) {
    return gdp_measure(traj.at(horizon));
}

std::vector<Bounds> handy_sobol_bounds() {
    return {{5e-3, 1.5e-2}, {0.05, 0.09}, {0.01, 0.07}, {0.01, 0.07}, {3e-4, 7e-4},
            {3e-3, 7e-3},   {7e-3, 1.3e-2}, {70, 130},  {5, 100},     {1, 15},
            {0.5, 0.8},     {70, 130},    {0.01, 40},   {70, 130},    {0, 180}};
}

double handy_gdp_output(std::span<const double> row, Variant v, double horizon,
                        const DynamicsOptions& opt) {
    const HandyParams p = HandyParams::from_array(row);
    try {
        return gdp_measure(simulate_final(p, v, 0.0, horizon, opt)).value;
    } catch (const IntegrationError&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

}  // namespace handy
