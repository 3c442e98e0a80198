#include "doctest.h"

#include <cmath>
#include <random>
#include <sstream>

#include "handy/experiments.hpp"

using namespace handy;

namespace {

int local_maxima(const Trajectory& tr, std::size_t var, double lo, double hi) {
    int n = 0;
    for (std::size_t i = tr.index_at(lo) + 1; i < tr.index_at(hi); ++i)
        if (tr.states[i][var] > tr.states[i - 1][var] && tr.states[i][var] >= tr.states[i + 1][var]) ++n;
    return n;
}

ExperimentConfig small_config(Pipeline p) {
    ExperimentConfig c;
    c.pipeline = p;
    c.repetitions = 4;
    c.total_budget = 300;
    c.pretrain_budget = 150;
    c.smc.population_size = 30;
    c.target = 10.0;
    c.seed = 7;
    return c;
}

const Trajectory& gt450() {
    static const Trajectory gt = make_ground_truth();
    return gt;
}

}  // namespace

TEST_CASE("ground truth") {
    const Trajectory gt = make_ground_truth(1000.0);
    const HandyParams p = ground_truth_params();
    CHECK(gt.states[0] == StateVector{p.xC0, p.xE0, p.y0, p.w0});
    for (const auto& x : gt.states)
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(std::isfinite(x[i]));
            CHECK(x[i] >= 0.0);
        }
    CHECK(local_maxima(gt, 1, 0.0, 450.0) >= 2);
    const auto obs = learning_observations(gt, 15);
    CHECK(obs.size() == 16);
    CHECK(obs.times.front() == 150.0);
    CHECK(obs.times.back() == 300.0);
}

TEST_CASE("forecast metrics") {
    const Trajectory& gt = gt450();
    const auto m0 = forecast_metrics(ground_truth_params(), gt, 15);
    CHECK(m0.ff == 0.0);
    CHECK(m0.fb == 0.0);
    CHECK(m0.f2w == 0.0);

    CHECK(backward_from_pooled(2.50, 17.11) == doctest::Approx(24.07).epsilon(0.01 / 24.07));
    CHECK(backward_from_pooled(3.0, 3.0) == doctest::Approx(3.0).epsilon(1e-15));

    std::mt19937_64 g(3);
    std::uniform_real_distribution<double> u(-0.05, 0.05);
    for (int k = 0; k < 10; ++k) {
        HandyParams p = ground_truth_params();
        for (std::size_t i = 0; i < HandyParams::kSize; ++i) p[i] *= 1.0 + u(g);
        for (int f : {5, 15, 50}) {
            const auto m = forecast_metrics(p, gt, f);
            CHECK(m.ff >= 0.0);
            const double lhs = m.fb * m.fb, rhs = 2.0 * m.f2w * m.f2w - m.ff * m.ff;
            CHECK(std::abs(lhs - rhs) <= 1e-9 * lhs);
        }
    }
}

TEST_CASE("trimming") {
    std::vector<double> v{4, 7, 1, 10, 3, 5, 9, 2, 8, 6};
    const auto kept = trim_runs(v);
    CHECK(kept.size() == 8);
    std::vector<double> kv;
    for (auto i : kept) kv.push_back(v[i]);
    CHECK(aggregate(kv).mean == 5.5);

    const std::vector<double> same(10, 2.0);
    const auto k2 = trim_runs(same);
    CHECK(k2 == std::vector<std::size_t>{1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(aggregate({2.0, 2.0, 2.0}).mean == 2.0);
    CHECK(aggregate({2.0, 2.0, 2.0}).std == 0.0);

    // ties: the earliest minimum and the latest maximum go
    CHECK(trim_runs({1.0, 1.0, 5.0, 5.0}) == std::vector<std::size_t>{1, 2});
    CHECK_THROWS_AS(trim_runs({1.0, 2.0}), ConfigurationError);

    const Aggregate a = aggregate({1.0, 2.0, 3.0});
    CHECK(a.std == doctest::Approx(1.0));
    CHECK(a.ratio() == doctest::Approx(0.5));
}

TEST_CASE("complexity measure and sensitive set") {
    CHECK(complexity_measure(3, 15) == 0.2);
    CHECK(complexity_measure(12, 15) == 0.8);
    CHECK(complexity_measure(0, 15) == 0.0);
    CHECK_THROWS_AS(complexity_measure(1, 0), ConfigurationError);

    std::vector<int> seen(HandyParams::kSize, 0);
    for (auto i : sensitive_set()) ++seen[i];
    for (auto i : insensitive_set()) ++seen[i];
    for (int s : seen) CHECK(s == 1);
    CHECK(HandyParams::names()[sensitive_set()[0]] == "beta_C");
    CHECK(HandyParams::names()[sensitive_set()[3]] == "delta_mult");
}

TEST_CASE("experiment configuration") {
    ExperimentConfig c;
    CHECK_NOTHROW(c.validate());
    c.pipeline = Pipeline::SumoDifferent;
    CHECK(c.resolved_pretrain_targets() == std::vector<double>{2.0, 2.0, 5.0});
    c.pipeline = Pipeline::SumoLowRmse;
    CHECK(c.resolved_pretrain_targets() == std::vector<double>{1.5, 1.5, 2.0});
    c.pretrain_targets = {5.0};
    CHECK(c.resolved_pretrain_targets() == std::vector<double>{5.0, 5.0, 5.0});
    c.pretrain_targets = {3.0};
    CHECK_THROWS_AS(c.validate(), ConfigurationError);
    c.pretrain_targets = {1.0, 2.0};
    CHECK_THROWS_AS(c.validate(), ConfigurationError);
    c = ExperimentConfig{};
    c.repetitions = 2;
    CHECK_THROWS_AS(c.validate(), ConfigurationError);
    c.repetitions = 3;
    c.f = 0;
    CHECK_THROWS_AS(c.validate(), ConfigurationError);
    for (auto p : {Pipeline::ReferenceAbc, Pipeline::AbcSensitive, Pipeline::SumoSimilar,
                   Pipeline::SumoDifferent, Pipeline::SumoLongTrain, Pipeline::SumoLowRmse})
        CHECK(parse_pipeline(to_string(p)) == p);
    CHECK_THROWS_AS(parse_pipeline("abc"), ConfigurationError);
}

TEST_CASE("reference pipeline") {
    const ExperimentConfig cfg = small_config(Pipeline::ReferenceAbc);
    const ForecastReport r = run_pipeline(cfg, gt450());
    REQUIRE(r.repetitions.size() == 4);
    CHECK(r.retained.size() == 2);
    CHECK(r.trim_metric == TrimMetric::LearningTime);
    for (const auto& rep : r.repetitions) {
        REQUIRE(rep.ok);
        const auto th = rep.params.to_array();
        CHECK(rep.prior.contains(th));
        CHECK(rep.evaluations <= cfg.total_budget);
        const auto& m = rep.metrics;
        CHECK(std::abs(m.fb * m.fb - (2.0 * m.f2w * m.f2w - m.ff * m.ff)) <= 1e-9 * m.fb * m.fb);
        CHECK(rep.learning_rmse == doctest::Approx(rmse_distance(rep.predictions[1],
                                                                 learning_observations(gt450(), cfg.f))));
    }
    CHECK(r.fb == doctest::Approx(backward_from_pooled(r.ff.mean, r.f2w.mean)));

    SUBCASE("fixed seed gives identical reports") {
        const ForecastReport again = run_pipeline(cfg, gt450());
        std::ostringstream a, b, c, d;
        r.write_repetitions_csv(a);
        again.write_repetitions_csv(b);
        r.write_parameters_csv(c);
        again.write_parameters_csv(d);
        CHECK(a.str() == b.str());
        CHECK(c.str() == d.str());
    }
    SUBCASE("abc-sensitive with the whole budget in phase one is the reference run") {
        ExperimentConfig s = cfg;
        s.pipeline = Pipeline::AbcSensitive;
        s.pretrain_budget = s.total_budget;
        s.pretrain_targets = {10.0};
        const ForecastReport rs = run_pipeline(s, gt450());
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(rs.repetitions[i].params.to_array() == r.repetitions[i].params.to_array());
            CHECK(rs.repetitions[i].metrics.ff == r.repetitions[i].metrics.ff);
        }
    }
    SUBCASE("plot data") {
        const auto times = r.plot_times();
        CHECK(times.size() == 3 * (cfg.f + 1) - 2);
        const auto rows = plot_data(gt450(), times, r.retained_predictions(), 1);
        CHECK(rows.size() == times.size());
        double lo = 1.0, hi = 0.0;
        for (const auto& row : rows) {
            CHECK(row.lo <= row.mean);
            CHECK(row.mean <= row.hi);
            lo = std::min(lo, row.gt_n);
            hi = std::max(hi, row.gt_n);
        }
        CHECK(lo == 0.0);
        CHECK(hi == 1.0);
        std::ostringstream os;
        r.write_predictions_csv(os);
        CHECK(os.str().rfind("repetition,t,x_C,x_E,y,w\n", 0) == 0);
    }
}

TEST_CASE("abc-sensitive refinement") {
    ExperimentConfig cfg = small_config(Pipeline::AbcSensitive);
    cfg.pretrain_targets = {10.0};
    cfg.repetitions = 3;
    const ForecastReport r = run_pipeline(cfg, gt450());
    CHECK(r.trim_metric == TrimMetric::Ff);
    for (const auto& rep : r.repetitions) {
        REQUIRE(rep.ok);
        REQUIRE(rep.submodels.size() == 1);
        const HandyParams& p1 = rep.submodels[0].params;
        for (std::size_t i : insensitive_set()) CHECK(rep.params[i] == p1[i]);
        CHECK(rep.prior.contains(rep.params.to_array()));
        CHECK(rep.evaluations <= cfg.total_budget + cfg.smc.population_size);
    }
}

TEST_CASE("supermodel pipelines") {
    ExperimentConfig cfg = small_config(Pipeline::SumoDifferent);
    cfg.repetitions = 3;
    cfg.pretrain_budget = 100;
    cfg.total_budget = 200;
    const ForecastReport r = run_pipeline(cfg, gt450());
    CHECK(r.retained.size() == 1);
    for (const auto& rep : r.repetitions) {
        REQUIRE(rep.ok);
        CHECK(rep.submodels.size() == 3);
        CHECK(rep.coupling.free_count() == 3);
        CHECK(complexity_measure(rep.coupling.free_count(), HandyParams::kSize) == 0.2);
        CHECK(rep.coupling.within_bounds());
        for (const auto& s : rep.submodels) CHECK(rep.prior.contains(s.params.to_array()));
    }
    std::ostringstream os;
    r.write_parameters_csv(os);
    CHECK(os.str().find("repetition,variable,mu,nu,value") != std::string::npos);
    std::ostringstream sum;
    r.write_summary_csv(sum);
    CHECK(sum.str().find("sumo-different,15,") != std::string::npos);
}

TEST_CASE("plot data of a perfect fit") {
    const Trajectory& gt = gt450();
    std::vector<double> t;
    for (int j = 0; j <= 30; ++j) t.push_back(15.0 * j);
    std::vector<StateVector> exact;
    for (double x : t) exact.push_back(gt.at(x));
    const auto rows = plot_data(gt, t, {exact, exact, exact}, 0);
    for (const auto& r : rows) {
        CHECK(r.mean == r.gt);
        CHECK(r.lo == r.mean);
        CHECK(r.hi == r.mean);
        CHECK(r.gt_n >= 0.0);
        CHECK(r.gt_n <= 1.0);
    }
    CHECK_THROWS_AS(plot_data(gt, t, {exact}, 4), ConfigurationError);
}

TEST_CASE("pca") {
    SUBCASE("identical points") {
        const std::vector<std::vector<double>> v(5, std::vector<double>(15, 2.0));
        const auto r = pca_2d(v);
        CHECK(r.degenerate);
        for (const auto& c : r.coords) CHECK(c == std::array<double, 2>{0.0, 0.0});
    }
    SUBCASE("collinear points") {
        std::vector<std::vector<double>> v;
        for (int k = 0; k < 6; ++k) {
            std::vector<double> row(15);
            for (int i = 0; i < 15; ++i) row[i] = 1.0 + i + k * (0.5 + i);
            v.push_back(row);
        }
        const auto r = pca_2d(v);
        double m = 0.0, s = 0.0;
        for (const auto& c : r.coords) m += c[1] / 6.0;
        for (const auto& c : r.coords) s += (c[1] - m) * (c[1] - m);
        CHECK(s < 1e-20);
        CHECK(r.explained[0] == doctest::Approx(15.0));
    }
    SUBCASE("projection contracts standardised distances") {
        std::mt19937_64 g(9);
        std::normal_distribution<double> z;
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<std::vector<double>> v(20, std::vector<double>(15));
            for (auto& row : v)
                for (std::size_t i = 0; i < 15; ++i) row[i] = (i + 1) * z(g) + 10.0 * i;
            for (auto& row : v) row[4] = 3.0;  // constant column gets dropped
            const auto r = pca_2d(v);
            CHECK(r.kept.size() == 14);
            std::vector<double> mean(15, 0.0), sd(15, 0.0);
            for (std::size_t i = 0; i < 15; ++i) {
                for (const auto& row : v) mean[i] += row[i] / 20.0;
                for (const auto& row : v) sd[i] += (row[i] - mean[i]) * (row[i] - mean[i]) / 20.0;
                sd[i] = std::sqrt(sd[i]);
            }
            for (std::size_t a = 0; a < 20; ++a)
                for (std::size_t b = a + 1; b < 20; ++b) {
                    double full = 0.0;
                    for (std::size_t i : r.kept) {
                        const double d = (v[a][i] - v[b][i]) / sd[i];
                        full += d * d;
                    }
                    const double dx = r.coords[a][0] - r.coords[b][0], dy = r.coords[a][1] - r.coords[b][1];
                    CHECK(dx * dx + dy * dy <= full * (1.0 + 1e-12));
                }
        }
    }
    SUBCASE("sign convention and ground truth row") {
        std::vector<HandyParams> ps(4, ground_truth_params());
        for (std::size_t k = 0; k < 4; ++k) ps[k].beta_C *= 1.0 + 0.01 * k;
        ps[1].kappa *= 1.02;
        const auto r = pca_2d(ps, true);
        CHECK(r.coords.size() == 5);
        CHECK_THROWS_AS(pca_2d(std::vector<std::vector<double>>{{1.0}}), ConfigurationError);
    }
}

TEST_CASE("calibration") {
    const double eps = calibrate_evaluations_per_second(0.05);
    CHECK(eps > 1.0);
}
