#include "doctest.h"

#include <cmath>
#include <limits>
#include <sstream>

#include "handy/inference.hpp"
#include "json.hpp"

using namespace handy;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// identity simulator against the single datum 0.5
const Discrepancy toy = [](std::span<const double> th) { return std::abs(th[0] - 0.5); };

PriorBox unit() { return PriorBox({0.0}, {1.0}); }

std::vector<double> column(const std::vector<Particle>& pop) {
    std::vector<double> v;
    for (const auto& p : pop) v.push_back(p.theta[0]);
    return v;
}

std::vector<double> weights(const std::vector<Particle>& pop) {
    std::vector<double> v;
    for (const auto& p : pop) v.push_back(p.weight);
    return v;
}

SampledSeries series(std::vector<double> times, std::vector<StateVector> vals) {
    SampledSeries s;
    s.t_start = times.front();
    s.t_end = times.back();
    s.f = static_cast<int>(times.size()) - 1;
    s.times = std::move(times);
    s.values = std::move(vals);
    return s;
}

}  // namespace

TEST_CASE("rmse distance") {
    const auto a = series({0.0}, {{3, 0, 0, 0}});
    const auto b = series({0.0}, {{7, 0, 0, 0}});
    CHECK(rmse_distance(a, a) == 0.0);
    // four variables per point: one non-zero residual of 4 among four entries
    CHECK(rmse_distance(a, b) == doctest::Approx(std::sqrt(16.0 / 4.0)));

    const auto c = series({0.0, 1.0}, {{3, 1, 1, 1}, {4, 1, 1, 1}});
    const auto e = series({0.0, 1.0}, {{0, 1, 1, 1}, {0, 1, 1, 1}});
    CHECK(rmse_distance(c, e) == doctest::Approx(std::sqrt(25.0 / 8.0)));

    const auto shifted = series({0.0, 2.0}, {{0, 1, 1, 1}, {0, 1, 1, 1}});
    CHECK_THROWS_AS(rmse_distance(c, shifted), ShapeError);
    CHECK_THROWS_AS(rmse_distance(a, c), ShapeError);

    // pooled form equals the single-window form on one window
    const SampledSeries l[] = {c}, r[] = {e};
    CHECK(rmse_distance(l, r) == rmse_distance(c, e));
}

TEST_CASE("rmse distance: single variable") {
    const VariableMask xc_only{true, false, false, false};
    const auto a = series({0.0}, {{3, 9, 9, 9}});
    const auto b = series({0.0}, {{7, 0, 0, 0}});
    CHECK(rmse_distance(a, b, xc_only) == doctest::Approx(4.0));

    const auto c = series({0.0, 1.0}, {{3, 5, 5, 5}, {4, 5, 5, 5}});
    const auto e = series({0.0, 1.0}, {{0, 0, 0, 0}, {0, 0, 0, 0}});
    CHECK(rmse_distance(c, e, xc_only) == doctest::Approx(3.5355).epsilon(1e-4));
}

TEST_CASE("make_prior") {
    const double c1[] = {100.0, 0.0, 10.0};
    const auto p = make_prior(c1, 0.1);
    CHECK(p.lo[0] == doctest::Approx(90.0));
    CHECK(p.hi[0] == doctest::Approx(110.0));
    CHECK(p.lo[1] == 0.0);
    CHECK(p.hi[1] == 0.0);
    const auto q = make_prior(c1, 0.05);
    CHECK(q.lo[2] == doctest::Approx(9.5));
    CHECK(q.hi[2] == doctest::Approx(10.5));
    CHECK_THROWS_AS(make_prior(c1, 1.0), ConfigurationError);
    CHECK_THROWS_AS(make_prior(c1, 0.0), ConfigurationError);

    const auto gt = ground_truth_params().to_array();
    const auto box = make_prior(gt, 0.1);
    CHECK(box.dim() == 15);
    CHECK(box.contains(gt));
    CHECK(std::isfinite(box.log_density(gt)));
    std::vector<double> out(gt.begin(), gt.end());
    out[0] *= 2.0;
    CHECK_FALSE(box.contains(out));
    CHECK(box.log_density(out) == -kInf);
}

TEST_CASE("rejection") {
    auto r = abc_rejection(unit(), toy, kInf, 1000, 3);
    CHECK(r.accepted.size() == 1000);
    CHECK(r.acceptance_rate == 1.0);

    // point-mass prior, simulator equals the data generator
    r = abc_rejection(PriorBox({0.5}, {0.5}), toy, 0.0, 50, 3);
    CHECK(r.accepted.size() == 50);
    for (const auto& p : r.accepted) CHECK(p.distance == 0.0);

    r = abc_rejection(unit(), toy, 0.1, 100000, 42);
    CHECK(r.evaluations == 100000);
    CHECK(r.acceptance_rate == doctest::Approx(0.2).epsilon(0.05));
    CHECK(std::abs(r.acceptance_rate - 0.2) <= 0.01);
    for (const auto& p : r.accepted) {
        CHECK(p.theta[0] >= 0.4);
        CHECK(p.theta[0] <= 0.6);
    }
    // uniform on [0.4, 0.6]: compare against an evenly spaced reference
    std::vector<double> ref;
    for (int i = 0; i < 2000; ++i) ref.push_back(0.4 + 0.2 * (i + 0.5) / 2000.0);
    CHECK(ks_statistic(column(r.accepted), ref) < 0.02);

    // nothing acceptable: empty outcome, not an exception
    r = abc_rejection(unit(), [](std::span<const double>) { return 1.0; }, 0.5, 100, 1);
    CHECK(r.empty());
    CHECK(r.acceptance_rate == 0.0);

    // determinism
    const auto a = abc_rejection(unit(), toy, 0.1, 5000, 9);
    const auto b = abc_rejection(unit(), toy, 0.1, 5000, 9);
    CHECK(column(a.accepted) == column(b.accepted));
}

TEST_CASE("mcmc") {
    McmcConfig cfg;
    cfg.proposal_sd = {0.3};
    cfg.chain_length = 2000;
    cfg.start = std::vector<double>{0.5};
    auto r = abc_mcmc(unit(), toy, cfg);
    CHECK(r.chain.size() == 2001);
    // every in-box proposal moves the chain, out-of-box ones never simulate
    CHECK(r.evaluations - 1 == static_cast<std::size_t>(std::lround(r.acceptance_rate * 2000)));
    for (const auto& p : r.chain) CHECK(unit().contains(p.theta));

    cfg.start = std::vector<double>{1.5};
    CHECK_THROWS_AS(abc_mcmc(unit(), toy, cfg), ConfigurationError);

    // proposals always outside the support: chain never moves
    cfg.start = std::vector<double>{0.5};
    cfg.proposal_sd = {1e6};
    cfg.chain_length = 50;
    r = abc_mcmc(PriorBox({0.0}, {1e-9}), toy, {kInf, 50, {1e6}, std::vector<double>{0.0}, 10, 1});
    for (const auto& p : r.chain) CHECK(p.theta[0] == 0.0);

    // posterior agrees with rejection
    McmcConfig m;
    m.epsilon = 0.1;
    m.proposal_sd = {0.1};
    m.chain_length = 100000;
    m.seed = 5;
    const auto chain = abc_mcmc(unit(), toy, m);
    const auto rej = abc_rejection(unit(), toy, 0.1, 100000, 6);
    CHECK(ks_statistic(column(chain.chain), column(rej.accepted)) < 0.05);
    for (const auto& p : chain.chain) CHECK(p.distance <= 0.1);
}

TEST_CASE("smc basics") {
    SmcConfig cfg;
    cfg.population_size = 50;
    cfg.schedule = {kInf};
    auto r = abc_smc(unit(), toy, cfg);
    REQUIRE(r.population.size() == 50);
    for (const auto& p : r.population) CHECK(p.weight == doctest::Approx(1.0 / 50));
    CHECK(r.evaluations == 50);
    CHECK(r.stop == SmcStop::ScheduleDone);

    cfg.population_size = 200;
    cfg.schedule = {0.3, 0.2, 0.1};
    r = abc_smc(unit(), toy, cfg);
    CHECK(r.generations.size() == 3);
    for (const auto& p : r.population) {
        CHECK(p.theta[0] >= 0.4);
        CHECK(p.theta[0] <= 0.6);
    }

    cfg.schedule = {0.3, 0.3};
    CHECK_THROWS_AS(abc_smc(unit(), toy, cfg), ConfigurationError);
    cfg.schedule = {};
    cfg.population_size = 1;
    CHECK_THROWS_AS(abc_smc(unit(), toy, cfg), ConfigurationError);
}

TEST_CASE("smc invariants") {
    SmcConfig cfg;
    cfg.population_size = 300;
    cfg.target_epsilon = 0.02;
    cfg.seed = 17;
    const auto r = abc_smc(unit(), toy, cfg);
    CHECK(r.stop == SmcStop::TargetReached);
    for (std::size_t g = 1; g < r.generations.size(); ++g)
        CHECK(r.generations[g].epsilon < r.generations[g - 1].epsilon);
    CHECK(r.final_epsilon() == doctest::Approx(0.02));
    double s = 0.0;
    for (const auto& p : r.population) {
        s += p.weight;
        CHECK(unit().contains(p.theta));
        CHECK(p.distance <= 0.02);
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
    CHECK(r.best.distance <= r.generations.back().best_distance);

    const auto again = abc_smc(unit(), toy, cfg);
    CHECK(column(again.population) == column(r.population));
    CHECK(weights(again.population) == weights(r.population));
    CHECK(smc_report_json(again) == smc_report_json(r));
}

TEST_CASE("smc matches rejection on the toy problem") {
    SmcConfig cfg;
    cfg.population_size = 4000;
    cfg.target_epsilon = 0.1;
    cfg.seed = 23;
    const auto smc = abc_smc(unit(), toy, cfg);
    const auto rej = abc_rejection(unit(), toy, 0.1, 100000, 24);
    const auto w = weights(smc.population);
    CHECK(std::abs(smc.weighted_mean()[0] - 0.5) < 0.01);
    CHECK(ks_statistic(column(smc.population), column(rej.accepted), w) < 0.05);
}

TEST_CASE("smc budget and stagnation") {
    SmcConfig cfg;
    cfg.population_size = 100;
    cfg.max_evaluations = 250;
    const auto r = abc_smc(unit(), toy, cfg);
    CHECK(r.stop == SmcStop::BudgetExhausted);
    CHECK(r.evaluations == 250);
    // the incomplete generation was dropped
    CHECK(r.population.size() == 100);
    CHECK(r.generations.back().cumulative_evaluations <= 250);

    SmcConfig s;
    s.population_size = 10;
    s.schedule = {0.5};
    s.stagnation_factor = 20;
    CHECK_THROWS_AS(abc_smc(unit(), [](std::span<const double>) { return 1.0; }, s),
                    StagnationError);

    // non-finite distances are never accepted, even at an infinite tolerance
    s.schedule = {kInf};
    CHECK_THROWS_AS(abc_smc(unit(), [](std::span<const double>) { return kInf; }, s),
                    StagnationError);
}

TEST_CASE("ks statistic") {
    const double a[] = {1, 2, 3, 4};
    const double b[] = {1, 2, 3, 4};
    const double c[] = {5, 6, 7, 8};
    CHECK(ks_statistic(a, b) == 0.0);
    CHECK(ks_statistic(a, c) == 1.0);
    const double w[] = {0, 0, 0, 1};
    const double d[] = {4};
    CHECK(ks_statistic(a, d, w) == 0.0);
}

TEST_CASE("exports") {
    std::vector<Particle> pop{{{1.0, 2.0}, 0.25, 0.5}, {{3.0, 4.0}, 0.75, 0.125}};
    std::ostringstream os;
    write_population_csv(os, pop, {"a", "b"});
    CHECK(os.str() == "a,b,weight,distance\n1,2,0.25,0.5\n3,4,0.75,0.125\n");

    SmcConfig cfg;
    cfg.population_size = 20;
    cfg.schedule = {kInf, 0.2};
    const auto r = abc_smc(unit(), toy, cfg);
    const auto j = nlohmann::json::parse(smc_report_json(r));
    CHECK(j["generations"].size() == 2);
    CHECK(j["generations"][0]["epsilon"].is_null());
    CHECK(j["generations"][1]["epsilon"].get<double>() == 0.2);
    CHECK(j["evaluations"].get<std::size_t>() == r.evaluations);
}
