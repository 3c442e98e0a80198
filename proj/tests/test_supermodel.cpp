#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "handy/supermodel.hpp"

using namespace handy;

namespace {

std::vector<Submodel> perturbed_trio() {
    HandyParams a = ground_truth_params(), b = a, c = a;
    a.beta_C *= 1.03;
    b.beta_E *= 0.97;
    b.kappa *= 1.05;
    c.alpha_m *= 1.04;
    c.xE0 *= 0.9;
    return {{a, Variant::Handy}, {b, Variant::Handy}, {c, Variant::Handy}};
}

SampledSeries truth_obs(double lo = 150.0, double hi = 300.0, int f = 15) {
    return sample_window(simulate(ground_truth_params(), Variant::Handy, 0.0, hi), lo, hi, f);
}

double max_xe_spread(const SupermodelRun& r) {
    double m = 0.0;
    for (std::size_t n = 0; n < r.ensemble.size(); ++n)
        for (std::size_t a = 0; a < r.members.size(); ++a)
            for (std::size_t b = a + 1; b < r.members.size(); ++b)
                m = std::max(m, std::abs(r.members[a].states[n].xE - r.members[b].states[n].xE));
    return m;
}

std::vector<std::vector<double>> gaussian_cloud(std::size_t n, std::size_t d, std::uint64_t seed,
                                                double scale) {
    std::mt19937_64 g(seed);
    std::normal_distribution<double> z;
    std::vector<std::vector<double>> out(n, std::vector<double>(d));
    for (auto& r : out) {
        double common = z(g);
        for (std::size_t i = 0; i < d; ++i) r[i] = scale * (z(g) + 0.5 * (i + 1) * common) + i;
    }
    return out;
}

}  // namespace

TEST_CASE("coupling tensor layout and bounds") {
    CouplingTensor C(3, kCoupleElites);
    CHECK(C.free_count() == 3);
    CHECK(C.free_names() == std::vector<std::string>{"C_x_E_0_1", "C_x_E_0_2", "C_x_E_1_2"});
    const std::vector<double> v{0.1, 0.2, 0.3};
    C.set_free_values(v);
    CHECK(C(1, 2, 0) == 0.2);
    CHECK(C(1, 1, 2) == C(1, 2, 1));
    CHECK(C(0, 0, 1) == 0.0);
    CHECK(C.free_values() == v);
    CHECK(C.within_bounds());
    C.set(1, 0, 1, 0.7);
    CHECK_FALSE(C.within_bounds());
    CHECK_THROWS_AS(C.set_free_values(std::vector<double>{1.0}), ShapeError);
    CHECK_THROWS_AS(C.set(0, 0, 1, 0.1), ConfigurationError);

    CouplingTensor all(3, kAllVariables);
    CHECK(all.free_count() == 12);

    std::ostringstream os;
    CouplingTensor(2, kCoupleElites).write_csv(os);
    CHECK(os.str() == "variable,mu,nu,value\nx_E,0,1,0\n");
}

TEST_CASE("coupled derivatives") {
    const auto subs = perturbed_trio();
    const std::vector<StateVector> x{{1e4, 3e3, 90, 80}, {1.1e4, 2e3, 70, 60}, {9e3, 4e3, 50, 40}};

    SUBCASE("zero tensor gives uncoupled derivatives") {
        CouplingTensor C(3, kAllVariables);
        const auto d = coupled_derivatives(subs, x, C);
        for (std::size_t m = 0; m < 3; ++m)
            CHECK(d[m] == derivatives(subs[m].params, x[m], subs[m].variant));
    }
    SUBCASE("identical states cancel coupling") {
        CouplingTensor C(3, kAllVariables);
        C.fill(0.4);
        const std::vector<StateVector> same(3, x[0]);
        const auto d = coupled_derivatives(subs, same, C);
        for (std::size_t m = 0; m < 3; ++m)
            CHECK(d[m] == derivatives(subs[m].params, same[m], subs[m].variant));
    }
    SUBCASE("two-member contraction on x_E") {
        const std::vector<Submodel> two(subs.begin(), subs.begin() + 2);
        const std::vector<StateVector> xs(x.begin(), x.begin() + 2);
        CouplingTensor C(2, kCoupleElites);
        C.set(1, 0, 1, 0.5);
        const auto d = coupled_derivatives(two, xs, C);
        const auto f0 = derivatives(two[0].params, xs[0], two[0].variant);
        const auto f1 = derivatives(two[1].params, xs[1], two[1].variant);
        const double expected = (f0.xE - f1.xE) - 2.0 * 0.5 * (xs[0].xE - xs[1].xE);
        CHECK(d[0].xE - d[1].xE == doctest::Approx(expected).epsilon(1e-12));
        CHECK(d[0].xC == f0.xC);
        CHECK(d[1].w == f1.w);
    }
    SUBCASE("shape errors") {
        CouplingTensor C(2, kCoupleElites);
        CHECK_THROWS_AS(coupled_derivatives(subs, x, C), ShapeError);
        CouplingTensor C3(3, kCoupleElites);
        CHECK_THROWS_AS(coupled_derivatives(subs, std::span(x).first(2), C3), ShapeError);
    }
}

TEST_CASE("supermodel integration") {
    const HandyParams gt = ground_truth_params();
    const Trajectory ref = simulate(gt, Variant::Handy, 0.0, 200.0);

    SUBCASE("single member is the plain model") {
        const std::vector<Submodel> one{{gt, Variant::Handy}};
        const auto run = simulate_supermodel(one, CouplingTensor(1, kAllVariables), 0.0, 200.0);
        REQUIRE(run.ensemble.size() == ref.size());
        for (std::size_t n = 0; n < ref.size(); ++n) CHECK(run.ensemble.states[n] == ref.states[n]);
    }
    SUBCASE("identical members reproduce the uncoupled trajectory") {
        const std::vector<Submodel> same(3, {gt, Variant::Handy});
        CouplingTensor C(3, kAllVariables);
        C.fill(0.37);
        const auto run = simulate_supermodel(same, C, 0.0, 200.0);
        double worst = 0.0;
        for (std::size_t n = 0; n < ref.size(); ++n)
            for (std::size_t i = 0; i < 4; ++i) {
                const double r = ref.states[n][i];
                worst = std::max(worst, std::abs(run.ensemble.states[n][i] - r) / std::max(1.0, std::abs(r)));
            }
        CHECK(worst < 1e-10);
    }
    SUBCASE("stronger coupling synchronises members") {
        const auto subs = perturbed_trio();
        std::vector<double> spread;
        for (double c : {0.0, 0.1, 0.5}) {
            CouplingTensor C(3, kCoupleElites);
            C.fill(c);
            spread.push_back(max_xe_spread(simulate_supermodel(subs, C, 0.0, 300.0)));
        }
        CHECK(spread[1] < spread[0]);
        CHECK(spread[2] < spread[1]);
    }
    SUBCASE("sampled ensemble matches the dense one") {
        const auto subs = perturbed_trio();
        CouplingTensor C(3, kCoupleElites);
        C.fill(0.2);
        const auto run = simulate_supermodel(subs, C, 0.0, 300.0);
        const std::array<std::array<double, 2>, 2> win{{{150.0, 300.0}, {0.0, 100.0}}};
        const auto s = simulate_supermodel_sampled(subs, C, 0.0, win, 15);
        const auto dense = sample_window(run.ensemble, 150.0, 300.0, 15);
        CHECK(s[0].times == dense.times);
        for (std::size_t j = 0; j < dense.size(); ++j) CHECK(s[0].values[j] == dense.values[j]);
        CHECK(s[1].values[3] == run.ensemble.at(20.0));
    }
    SUBCASE("csv export carries the member column") {
        const std::vector<Submodel> two(2, {gt, Variant::Handy});
        const auto run = simulate_supermodel(two, CouplingTensor(2, kCoupleElites), 0.0, 0.1);
        std::ostringstream os;
        run.write_csv(os);
        const std::string s = os.str();
        CHECK(s.rfind("submodel,t,x_C,x_E,y,w\n0,0,", 0) == 0);
        CHECK(s.find("\n1,0.1") != std::string::npos);
        CHECK(s.find("\nensemble,0.1") != std::string::npos);
    }
}

TEST_CASE("sumo error") {
    SampledSeries obs{0.0, 10.0, 10, {}, {}};
    for (int j = 0; j <= 10; ++j) {
        obs.times.push_back(j);
        obs.values.push_back({1.0 * j, 2.0, 3.0, 4.0});
    }
    CHECK(sumo_error(obs, obs) == 0.0);

    SampledSeries shifted = obs;
    for (auto& v : shifted.values) v.y += 2.0;  // squared deviation 4 everywhere
    for (double g : {0.1, 0.5, 1.0})
        for (std::size_t K : {1u, 2u, 5u})
            CHECK(sumo_error(shifted, obs, {K, g}) == doctest::Approx(4.0).epsilon(1e-14));

    SUBCASE("two-sample interval") {
        SampledSeries o{0.0, 1.0, 1, {0.0, 1.0}, {{0, 0, 0, 0}, {0, 0, 0, 0}}};
        SampledSeries p = o;
        p.values[0].xC = std::sqrt(3.0);  // e0 = 3
        p.values[1].w = std::sqrt(6.0);   // e1 = 6
        CHECK(sumo_error(p, o, {1, 0.5}) == doctest::Approx((3.0 + 0.5 * 6.0) / 1.5).epsilon(1e-14));
    }
    SUBCASE("gamma one is the mean squared deviation per interval") {
        SampledSeries p = obs;
        std::mt19937_64 g(4);
        std::normal_distribution<double> z;
        for (auto& v : p.values) v.xE += z(g);
        const std::size_t K = 2;
        // intervals [0,5] and [5,10] share the sample at t = 5
        double expect = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            double s = 0.0;
            for (std::size_t j = 5 * k; j <= 5 * k + 5; ++j)
                s += (p.values[j].xE - obs.values[j].xE) * (p.values[j].xE - obs.values[j].xE);
            expect += s / 6.0;
        }
        CHECK(sumo_error(p, obs, {K, 1.0}) == doctest::Approx(expect / K).epsilon(1e-13));
    }
    SUBCASE("trajectory overload agrees with sampled one") {
        const Trajectory tr = simulate(ground_truth_params(), Variant::Handy, 0.0, 300.0);
        const auto o = truth_obs();
        SampledSeries p = o;
        for (auto& v : p.values) v.xE *= 1.01;
        SampledSeries exact = sample_window(tr, 150.0, 300.0, 15);
        CHECK(sumo_error(tr, o) == 0.0);
        CHECK(sumo_error(exact, p) == doctest::Approx(sumo_error(tr, p)).epsilon(1e-15));
    }
    SUBCASE("configuration errors") {
        SampledSeries sparse{0.0, 10.0, 1, {0.0, 10.0}, {{}, {}}};
        CHECK_THROWS_AS(sumo_error(sparse, sparse, {5, 0.5}), ConfigurationError);
        CHECK_THROWS_AS(sumo_error(obs, obs, {0, 0.5}), ConfigurationError);
        CHECK_THROWS_AS(sumo_error(obs, obs, {5, 0.0}), ConfigurationError);
        CHECK_THROWS_AS(sumo_error(obs, obs, {5, 1.5}), ConfigurationError);
        SampledSeries short_ = obs;
        short_.values.pop_back();
        short_.times.pop_back();
        CHECK_THROWS_AS(sumo_error(short_, obs), ShapeError);
    }
}

TEST_CASE("coupling training") {
    const auto obs = truth_obs();
    CouplingTrainConfig cfg;
    cfg.smc.population_size = 50;
    cfg.smc.seed = 11;

    SUBCASE("perfect submodels give zero loss") {
        const std::vector<Submodel> same(3, {ground_truth_params(), Variant::Handy});
        cfg.smc.max_evaluations = 300;
        const auto r = train_coupling(same, obs, cfg);
        // identical members agree with the truth up to rounding in the mean
        CHECK(r.loss < 1e-12);
        CHECK(r.coupling.within_bounds());
        CHECK(r.coupling.free_count() == 3);
    }
    SUBCASE("trained loss does not exceed the uncoupled loss") {
        const auto subs = perturbed_trio();
        cfg.smc.max_evaluations = 2000;
        const auto r = train_coupling(subs, obs, cfg);
        const double zero = coupling_loss(subs, CouplingTensor(3, kCoupleElites), obs,
                                          CouplingLoss::SumoError);
        CHECK(r.coupling.within_bounds());
        CHECK(r.loss <= zero);
        CHECK(r.loss == doctest::Approx(coupling_loss(subs, r.coupling, obs, CouplingLoss::SumoError)));
        REQUIRE_FALSE(r.loss_trace.empty());
        CHECK(*std::min_element(r.loss_trace.begin(), r.loss_trace.end()) == r.loss);
        CHECK(r.evaluations <= 2000);
        // no generation is left half-finished, so the count can only fall short
        CHECK(r.evaluations > 0);
    }
    SUBCASE("submodels are not modified") {
        auto subs = perturbed_trio();
        const auto before = subs;
        cfg.smc.max_evaluations = 200;
        train_coupling(subs, obs, cfg);
        for (std::size_t m = 0; m < 3; ++m) CHECK(subs[m].params.to_array() == before[m].params.to_array());
    }
}

TEST_CASE("nudged training step") {
    const HandyParams gt = ground_truth_params();
    const std::vector<Submodel> pair{{gt, Variant::Handy}, {perturbed_trio()[1].params, Variant::Handy}};
    NudgingConfig cfg;
    cfg.C_max = 0.5;
    cfg.delta_floor = 0.0;
    cfg.eps_barrier = 1e-6;

    SUBCASE("no adaptation: only barrier drift, which vanishes mid-interval") {
        const StateVector truth = initial_state(gt);
        const std::vector<StateVector> x(2, truth);
        CouplingTensor C(2, kCoupleElites, 0.0, 0.5, false);
        C.fill(0.25);
        const auto r = nudged_training_step(pair, x, C, truth, cfg, 0.05);
        CHECK(r.C(1, 0, 1) == doctest::Approx(0.25).epsilon(1e-15));
        CHECK(r.C(1, 1, 0) == doctest::Approx(0.25).epsilon(1e-15));
        C.fill(0.1);
        const auto r2 = nudged_training_step(pair, x, C, truth, cfg, 0.05);
        CHECK(r2.C(1, 0, 1) > 0.1);  // pushed away from the lower barrier
    }
    SUBCASE("zero gains and zero coupling are independent steps") {
        NudgingConfig c0 = cfg;
        c0.eps_barrier = 0.0;
        c0.delta_floor = -1.0;
        const std::vector<StateVector> x{initial_state(pair[0].params), initial_state(pair[1].params)};
        CouplingTensor C(2, kCoupleElites, -1.0, 0.5, false);
        const auto r = nudged_training_step(pair, x, C, initial_state(gt), c0, 0.05);
        for (std::size_t m = 0; m < 2; ++m) {
            const Trajectory tr = simulate(pair[m].params, pair[m].variant, 0.0, 0.05);
            CHECK(r.states[m] == tr.states[1]);
        }
    }
    SUBCASE("coefficients stay inside the barriers") {
        const Trajectory truth = simulate(gt, Variant::Handy, 0.0, 500.0);
        cfg.K = {0.05, 0.05, 0.05, 0.05};
        cfg.a = 1e-7;
        std::vector<StateVector> x{initial_state(pair[0].params), initial_state(pair[1].params)};
        CouplingTensor C(2, kCoupleElites, 0.0, 0.5, false);
        C.fill(0.25);
        double lo = 1.0, hi = 0.0;
        bool moved = false;
        for (std::size_t n = 0; n < 10000; ++n) {
            auto r = nudged_training_step(pair, x, C, truth.states[n], cfg, 0.05);
            x = std::move(r.states);
            C = std::move(r.C);
            for (auto [mu, nu] : {std::pair{0, 1}, std::pair{1, 0}}) {
                lo = std::min(lo, C(1, mu, nu));
                hi = std::max(hi, C(1, mu, nu));
            }
            moved = moved || C(1, 0, 1) != C(1, 1, 0);
        }
        CHECK(lo > cfg.delta_floor);
        CHECK(hi < cfg.C_max);
        CHECK(moved);  // the adaptation is directed
        CHECK(hi - lo > 1e-3);
    }
    SUBCASE("pre-condition and rejection") {
        const std::vector<StateVector> x{initial_state(pair[0].params), initial_state(pair[1].params)};
        CouplingTensor C(2, kCoupleElites, 0.0, 0.5, false);  // zero sits on the floor
        CHECK_THROWS_AS(nudged_training_step(pair, x, C, x[0], cfg, 0.05), ConfigurationError);
        C.fill(0.4999999);
        NudgingConfig big = cfg;
        big.eps_barrier = 0.0;
        big.a = 1.0;  // unbounded drift with no barrier pushes straight through
        CHECK_THROWS_AS(nudged_training_step(pair, x, C, initial_state(gt), big, 0.05), IntegrationError);
        NudgingConfig bad = cfg;
        bad.delta_floor = 1.0;
        CHECK_THROWS_AS(bad.validate(), ConfigurationError);
        bad = cfg;
        bad.K.xE = -1.0;
        CHECK_THROWS_AS(bad.validate(), ConfigurationError);
    }
}

TEST_CASE("attractor distances") {
    using AD = AttractorDistance;
    SUBCASE("identical sets") {
        const auto a = gaussian_cloud(200, 3, 1, 1.0);
        for (AD k : {AD::W, AD::V, AD::U}) CHECK(attractor_distance(a, a, k).distance < 1e-7);
    }
    SUBCASE("one-dimensional closed form") {
        // population moments (0, 1) and (3, 2)
        const std::vector<std::vector<double>> a{{-1.0}, {1.0}}, b{{1.0}, {5.0}};
        CHECK(attractor_distance(a, b, AD::W).squared == doctest::Approx(10.0).epsilon(1e-12));
        CHECK(attractor_distance(a, b, AD::V).squared == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(attractor_distance(a, b, AD::U).squared == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("diagonal covariances reduce to per-axis sums") {
        std::vector<std::vector<double>> a, b;
        for (double s0 : {-1.0, 1.0})
            for (double s1 : {-1.0, 1.0}) {
                a.push_back({s0, 2.0 * s1});
                b.push_back({3.0 * s0 + 1.0, 0.5 * s1});
            }
        const double v2 = (3.0 - 1.0) * (3.0 - 1.0) + (0.5 - 2.0) * (0.5 - 2.0);
        CHECK(attractor_distance(a, b, AD::V).squared == doctest::Approx(v2).epsilon(1e-12));
        CHECK(attractor_distance(a, b, AD::W).squared == doctest::Approx(v2 + 1.0).epsilon(1e-12));
        CHECK(attractor_distance(a, b, AD::U).squared == doctest::Approx(v2).epsilon(1e-12));
    }
    SUBCASE("symmetry, translation and mean decomposition") {
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            const auto a = gaussian_cloud(150, 4, seed, 1.0);
            auto b = gaussian_cloud(90, 4, seed + 100, 1.7);
            for (AD k : {AD::W, AD::V, AD::U})
                CHECK(std::abs(attractor_distance(a, b, k).distance -
                               attractor_distance(b, a, k).distance) <= 1e-10);
            const double w2 = attractor_distance(a, b, AD::W).squared;
            const double v2 = attractor_distance(a, b, AD::V).squared;
            double dmu = 0.0;
            for (std::size_t i = 0; i < 4; ++i) {
                double ma = 0.0, mb = 0.0;
                for (const auto& r : a) ma += r[i] / a.size();
                for (const auto& r : b) mb += r[i] / b.size();
                dmu += (ma - mb) * (ma - mb);
            }
            CHECK(std::abs(w2 - v2 - dmu) <= 1e-8);
            CHECK(w2 >= v2);
            auto moved = b;
            for (auto& r : moved)
                for (auto& v : r) v += 42.0;
            for (AD k : {AD::V, AD::U})
                CHECK(attractor_distance(a, moved, k).distance ==
                      doctest::Approx(attractor_distance(a, b, k).distance).epsilon(1e-9));
        }
    }
    SUBCASE("rank deficiency is flagged, not fatal") {
        const auto a = gaussian_cloud(3, 4, 5, 1.0);
        const auto b = gaussian_cloud(50, 4, 6, 1.0);
        const auto r = attractor_distance(a, b, AD::W);
        CHECK(r.rank_deficient);
        CHECK(std::isfinite(r.distance));
        CHECK_FALSE(attractor_distance(b, b, AD::W).rank_deficient);
    }
    SUBCASE("errors and samples from trajectories") {
        CHECK_THROWS_AS(attractor_distance({}, {{1.0}}, AD::W), ShapeError);
        CHECK_THROWS_AS(attractor_distance({{1.0}}, {{1.0, 2.0}}, AD::W), ShapeError);
        CHECK(parse_attractor_distance("V") == AD::V);
        CHECK_THROWS_AS(parse_attractor_distance("Q"), ConfigurationError);
        const Trajectory tr = simulate(ground_truth_params(), Variant::Handy, 0.0, 20.0);
        const auto s = trajectory_samples(tr, 10.0, 20.0);
        CHECK(s.size() == 201);
        CHECK(s.back()[1] == tr.states.back().xE);
    }
}
