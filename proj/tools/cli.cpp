#include "cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "handy/dynamics.hpp"
#include "handy/errors.hpp"
#include "handy/experiments.hpp"
#include "handy/inference.hpp"
#include "handy/parallel.hpp"
#include "handy/rng.hpp"
#include "handy/sensitivity.hpp"
#include "handy/supermodel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace handy::cli {

namespace {

constexpr int kArtifactVersion = 1;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) out.push_back(trim(cur));
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

}  // namespace

// ---- configuration -------------------------------------------------------------

Config::Config() {
    auto& v = values_;
    v["run.seed"] = "1";
    v["run.threads"] = "0";

    v["model.variant"] = "handy";
    v["model.depletion"] = "reference";
    v["model.dt"] = "0.05";
    v["model.extinction_floor"] = "1e-12";
    const auto gt = ground_truth_params().to_array();
    for (std::size_t i = 0; i < HandyParams::kSize; ++i)
        v["model." + std::string(HandyParams::names()[i])] = fmt(gt[i]);
    const PredatorPreyParams pp;
    v["pp.alpha"] = fmt(pp.alpha);
    v["pp.beta"] = fmt(pp.beta);
    v["pp.gamma"] = fmt(pp.gamma);
    v["pp.delta"] = fmt(pp.delta);
    v["pp.x0"] = fmt(pp.x0);
    v["pp.y0"] = fmt(pp.y0);

    v["simulate.t0"] = "0";
    v["simulate.t_end"] = "450";

    v["sample.t_start"] = "150";
    v["sample.t_end"] = "300";
    v["sample.f"] = "15";

    v["abc.method"] = "smc";
    v["abc.t_start"] = "150";
    v["abc.t_end"] = "300";
    v["abc.f"] = "15";
    v["abc.half_width"] = "0.1";
    v["abc.population"] = "100";
    v["abc.kernel"] = "diagonal";
    v["abc.kernel_scale"] = "1";
    v["abc.quantile"] = "0.5";
    v["abc.target"] = "10";
    v["abc.budget"] = "50000";
    v["abc.max_generations"] = "200";
    v["abc.max_seconds"] = "0";
    v["abc.schedule"] = "";
    v["abc.epsilon"] = "1000";
    v["abc.chain_length"] = "1000";
    v["abc.proposal_fraction"] = "0.05";

    v["sobol.N"] = "2048";
    v["sobol.variant"] = "handy";
    v["sobol.horizon"] = "450";
    v["sobol.estimator"] = "jansen";
    v["sobol.second_order"] = "false";
    v["sobol.bootstrap"] = "100";
    v["sobol.confidence"] = "0.95";
    v["sobol.threshold"] = "0.04";

    v["sumo.submodels"] = "";
    v["sumo.members"] = "3";
    v["sumo.perturbation"] = "0.05";
    v["sumo.coupled"] = "x_E";
    v["sumo.lo"] = "0";
    v["sumo.hi"] = "0.5";
    v["sumo.mode"] = "train";
    v["sumo.coupling"] = "0";
    v["sumo.loss"] = "sumo";
    v["sumo.K"] = "5";
    v["sumo.gamma"] = "0.5";
    v["sumo.t_start"] = "150";
    v["sumo.t_end"] = "300";
    v["sumo.f"] = "15";
    v["sumo.horizon"] = "450";
    v["sumo.population"] = "100";
    v["sumo.kernel"] = "diagonal";
    v["sumo.quantile"] = "0.5";
    v["sumo.budget"] = "2000";

    v["experiment.pipeline"] = "reference-abc";
    v["experiment.f"] = "15";
    v["experiment.repetitions"] = "10";
    v["experiment.target"] = "1";
    v["experiment.pretrain_targets"] = "";
    v["experiment.budget"] = "20000";
    v["experiment.pretrain_budget"] = "10000";
    v["experiment.long_train_factor"] = "2";
    v["experiment.half_width"] = "0.1";
    v["experiment.refine_half_width"] = "0.05";
    v["experiment.population"] = "100";
    v["experiment.kernel"] = "diagonal";
    v["experiment.quantile"] = "0.5";
    v["experiment.coupled"] = "x_E";
    v["experiment.coupling_lo"] = "0";
    v["experiment.coupling_hi"] = "0.5";
    v["experiment.K"] = "5";
    v["experiment.gamma"] = "0.5";

    v["pca.input"] = "";
    v["pca.include_gt"] = "true";

    v["calibrate.seconds"] = "2";
    v["calibrate.times"] = "60,300,600";
}

void Config::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigurationError("unknown configuration key '" + key + "'");
    it->second = trim(value);
}

void Config::load_ini(const fs::path& file) {
    if (!fs::exists(file)) throw ConfigurationError("configuration file not found: " + file.string());
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(file.string(), tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigurationError(std::string("cannot parse configuration: ") + e.what());
    }
    for (const auto& [section, body] : tree) {
        if (body.empty()) throw ConfigurationError("key '" + section + "' is outside any section");
        for (const auto& [key, val] : body) set(section + "." + key, val.data());
    }
}

void Config::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigurationError("override '" + assignment + "' lacks '='");
    set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

const std::string& Config::str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigurationError("unknown configuration key '" + key + "'");
    return it->second;
}

double Config::num(const std::string& key) const {
    const std::string& s = str(key);
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigurationError(key + ": expected a number, got '" + s + "'");
}

long long Config::integer(const std::string& key) const {
    const std::string& s = str(key);
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(s, &pos);
        if (pos == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigurationError(key + ": expected an integer, got '" + s + "'");
}

std::size_t Config::count(const std::string& key) const {
    const long long v = integer(key);
    if (v < 0) throw ConfigurationError(key + " must be >= 0");
    return static_cast<std::size_t>(v);
}

bool Config::flag(const std::string& key) const {
    const std::string& s = str(key);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigurationError(key + ": expected true/false, got '" + s + "'");
}

std::vector<std::string> Config::list(const std::string& key) const {
    const std::string& s = str(key);
    if (s.empty()) return {};
    return split(s, ',');
}

std::vector<double> Config::numbers(const std::string& key) const {
    std::vector<double> out;
    for (const auto& t : list(key)) {
        try {
            std::size_t pos = 0;
            out.push_back(std::stod(t, &pos));
            if (pos != t.size()) throw std::invalid_argument(t);
        } catch (const std::exception&) {
            throw ConfigurationError(key + ": expected a list of numbers, got '" + str(key) + "'");
        }
    }
    return out;
}

void Config::write_ini(std::ostream& os) const {
    std::string section;
    for (const auto& [k, v] : values_) {
        const auto dot = k.find('.');
        const std::string sec = k.substr(0, dot);
        if (sec != section) {
            if (!section.empty()) os << '\n';
            os << '[' << sec << "]\n";
            section = sec;
        }
        os << k.substr(dot + 1) << " = " << v << '\n';
    }
}

std::string sha256_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[1 << 15];
    while (in) {
        in.read(buf, sizeof buf);
        if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::string hex;
    char h[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(h, sizeof h, "%02x", md[i]);
        hex += h;
    }
    return hex;
}

// ---- run plumbing ----------------------------------------------------------------

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Run {
    fs::path dir;
    std::vector<std::string> files;
    json evaluations = json::object();
    bool deterministic = true;
    std::ostream* log = nullptr;

    std::ofstream open(const std::string& name) {
        files.push_back(name);
        std::ofstream os(dir / name, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + (dir / name).string());
        return os;
    }
};

std::string timestamp(const char* f) {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, f, &tm);
    return buf;
}

fs::path fresh_run_dir(const std::string& command, const std::string& out) {
    if (!out.empty()) {
        fs::create_directories(out);
        return out;
    }
    const char* env = std::getenv("HANDY_LAB_OUT");
    const fs::path root = env && *env ? fs::path(env) : fs::path("runs");
    const std::string base = command + "-" + timestamp("%Y%m%dT%H%M%SZ");
    fs::path dir = root / base;
    for (int k = 2; fs::exists(dir); ++k) dir = root / (base + "-" + std::to_string(k));
    fs::create_directories(dir);
    return dir;
}

DynamicsOptions dynamics_options(const Config& c) {
    DynamicsOptions o;
    const std::string& d = c.str("model.depletion");
    if (d == "reference")
        o.depletion_base = DepletionBase::ReferenceSociety;
    else if (d == "per-parameter")
        o.depletion_base = DepletionBase::PerParameter;
    else
        throw ConfigurationError("model.depletion must be 'reference' or 'per-parameter'");
    o.dt = c.num("model.dt");
    o.extinction_floor = c.num("model.extinction_floor");
    if (!(o.dt > 0.0)) throw ConfigurationError("model.dt must be positive");
    return o;
}

HandyParams model_params(const Config& c) {
    HandyParams p;
    for (std::size_t i = 0; i < HandyParams::kSize; ++i)
        p[i] = c.num("model." + std::string(HandyParams::names()[i]));
    p.validate();
    return p;
}

PredatorPreyParams pp_params(const Config& c) {
    PredatorPreyParams p;
    p.alpha = c.num("pp.alpha");
    p.beta = c.num("pp.beta");
    p.gamma = c.num("pp.gamma");
    p.delta = c.num("pp.delta");
    p.x0 = c.num("pp.x0");
    p.y0 = c.num("pp.y0");
    p.validate();
    return p;
}

int positive_int(const Config& c, const std::string& key) {
    const long long v = c.integer(key);
    if (v < 1) throw ConfigurationError(key + " must be >= 1");
    return static_cast<int>(v);
}

VariableMask parse_vars(const Config& c, const std::string& key) {
    VariableMask m{false, false, false, false};
    for (const auto& name : c.list(key)) {
        bool found = false;
        for (std::size_t i = 0; i < 4; ++i)
            if (name == kStateNames[i]) m[i] = found = true;
        if (!found) throw ConfigurationError(key + ": unknown variable '" + name + "'");
    }
    return m;
}

void write_series(std::ostream& os, const SampledSeries& s) {
    os << "t,x_C,x_E,y,w\n";
    for (std::size_t j = 0; j < s.size(); ++j) {
        const auto& x = s.values[j];
        os << fmt(s.times[j]) << ',' << fmt(x.xC) << ',' << fmt(x.xE) << ',' << fmt(x.y) << ','
           << fmt(x.w) << '\n';
    }
}

std::vector<std::string> param_names() {
    std::vector<std::string> n;
    for (auto s : HandyParams::names()) n.emplace_back(s);
    return n;
}

// Reads 15-component parameter rows from a CSV whose header names them;
// stops at the first blank line. Other columns become the row label.
std::vector<std::pair<std::string, HandyParams>> read_param_rows(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigurationError("cannot read parameter file " + file.string());
    std::string line;
    if (!std::getline(in, line)) throw ConfigurationError("empty parameter file " + file.string());
    const auto header = split(line, ',');
    std::vector<int> slot(header.size(), -1);
    std::size_t found = 0;
    for (std::size_t c = 0; c < header.size(); ++c)
        for (std::size_t i = 0; i < HandyParams::kSize; ++i)
            if (header[c] == HandyParams::names()[i]) {
                slot[c] = static_cast<int>(i);
                ++found;
            }
    if (found != HandyParams::kSize)
        throw ConfigurationError(file.string() + " must name all 15 parameters in its header");
    std::vector<std::pair<std::string, HandyParams>> rows;
    while (std::getline(in, line)) {
        if (trim(line).empty()) break;
        const auto cells = split(line, ',');
        if (cells.size() != header.size()) throw ConfigurationError("ragged row in " + file.string());
        HandyParams p;
        std::string label;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (slot[c] >= 0) {
                try {
                    p[static_cast<std::size_t>(slot[c])] = std::stod(cells[c]);
                } catch (const std::exception&) {
                    throw ConfigurationError("bad number '" + cells[c] + "' in " + file.string());
                }
            } else if (c < header.size() && (header[c] == "repetition" || header[c] == "model" ||
                                             header[c] == "label")) {
                label += (label.empty() ? "" : ":") + cells[c];
            }
        }
        rows.emplace_back(label.empty() ? std::to_string(rows.size()) : label, p);
    }
    return rows;
}

// ---- commands --------------------------------------------------------------------

void cmd_simulate(const Config& c, Run& run) {
    const std::string vs = c.str("model.variant");
    const double t0 = c.num("simulate.t0"), t1 = c.num("simulate.t_end");
    Trajectory tr;
    if (vs == "predator-prey")
        tr = simulate(pp_params(c), t0, t1, c.num("model.dt"));
    else
        tr = simulate(model_params(c), parse_variant(vs), t0, t1, dynamics_options(c));
    auto os = run.open("trajectory.csv");
    tr.write_csv(os);
    run.evaluations["simulate"] = 1;
}

void cmd_sample(const Config& c, Run& run) {
    const double a = c.num("sample.t_start"), b = c.num("sample.t_end");
    const Trajectory tr = simulate(model_params(c), parse_variant(c.str("model.variant")), 0.0, b,
                                   dynamics_options(c));
    auto os = run.open("samples.csv");
    write_series(os, sample_window(tr, a, b, positive_int(c, "sample.f")));
    run.evaluations["simulate"] = 1;
}

SmcConfig smc_config(const Config& c, const std::string& sec, std::uint64_t seed) {
    SmcConfig s;
    s.population_size = c.count(sec + ".population");
    s.kernel = parse_kernel(c.str(sec + ".kernel"));
    s.quantile = c.num(sec + ".quantile");
    s.seed = seed;
    return s;
}

void cmd_abc(const Config& c, Run& run) {
    const HandyParams truth = model_params(c);
    const Variant v = parse_variant(c.str("model.variant"));
    const DynamicsOptions opt = dynamics_options(c);
    const double a = c.num("abc.t_start"), b = c.num("abc.t_end");
    const int f = positive_int(c, "abc.f");
    const SampledSeries obs = sample_window(simulate(truth, v, 0.0, b, opt), a, b, f);
    const auto center = truth.to_array();
    const PriorBox prior = make_prior(center, c.num("abc.half_width"));
    const std::uint64_t seed = static_cast<std::uint64_t>(c.integer("run.seed"));
    const Discrepancy d = [&](std::span<const double> th) {
        try {
            const std::array<Window, 1> win{{{a, b}}};
            const auto s = simulate_sampled(HandyParams::from_array(th), v, 0.0, win, f, opt);
            return rmse_distance(s[0], obs);
        } catch (const IntegrationError&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
    };
    const auto names = param_names();
    const std::string method = c.str("abc.method");
    {
        auto os = run.open("observations.csv");
        write_series(os, obs);
    }
    if (method == "smc") {
        SmcConfig s = smc_config(c, "abc", seed);
        s.kernel_scale = c.num("abc.kernel_scale");
        s.target_epsilon = c.num("abc.target");
        s.max_evaluations = c.count("abc.budget");
        s.max_generations = c.count("abc.max_generations");
        s.max_seconds = c.num("abc.max_seconds");
        s.schedule = c.numbers("abc.schedule");
        if (s.max_seconds > 0.0) run.deterministic = false;
        const SmcResult r = abc_smc(prior, d, s);
        {
            auto os = run.open("population.csv");
            write_population_csv(os, r.population, names);
        }
        {
            auto os = run.open("report.json");
            os << smc_report_json(r);
        }
        const auto mean = r.weighted_mean();
        const auto sd = weighted_std(r.population);
        {
            auto os = run.open("estimate.csv");
            os << "parameter,truth,best,mean,std,prior_lo,prior_hi\n";
            for (std::size_t i = 0; i < names.size(); ++i)
                os << names[i] << ',' << fmt(center[i]) << ','
                   << fmt(r.best.theta.empty() ? NAN : r.best.theta[i]) << ',' << fmt(mean[i]) << ','
                   << fmt(sd[i]) << ',' << fmt(prior.lo[i]) << ',' << fmt(prior.hi[i]) << '\n';
        }
        if (!r.best.theta.empty() && v == Variant::Handy) {
            const Trajectory gt = simulate(truth, v, 0.0, kForwardWindow[1], opt);
            const auto m = forecast_metrics(HandyParams::from_array(r.best.theta), gt, f, v, opt);
            auto os = run.open("forecast.csv");
            os << "learning_rmse,ff,fb,f2w\n"
               << fmt(r.best.distance) << ',' << fmt(m.ff) << ',' << fmt(m.fb) << ',' << fmt(m.f2w) << '\n';
        }
        run.evaluations["smc"] = r.evaluations;
        *run.log << "abc-smc: " << to_string(r.stop) << " after " << r.evaluations
                 << " evaluations, best RMSE " << r.best.distance << '\n';
    } else if (method == "rejection") {
        const auto r = abc_rejection(prior, d, c.num("abc.epsilon"), c.count("abc.budget"), seed);
        auto os = run.open("accepted.csv");
        write_population_csv(os, r.accepted, names);
        run.evaluations["rejection"] = r.evaluations;
        *run.log << "abc-rejection: accepted " << r.accepted.size() << " of " << r.evaluations << '\n';
    } else if (method == "mcmc") {
        McmcConfig m;
        m.epsilon = c.num("abc.epsilon");
        m.chain_length = c.count("abc.chain_length");
        m.seed = seed;
        m.start = std::vector<double>(center.begin(), center.end());
        for (std::size_t i = 0; i < prior.dim(); ++i)
            m.proposal_sd.push_back(c.num("abc.proposal_fraction") * prior.width(i));
        const auto r = abc_mcmc(prior, d, m);
        auto os = run.open("chain.csv");
        write_population_csv(os, r.chain, names);
        run.evaluations["mcmc"] = r.evaluations;
        *run.log << "abc-mcmc: acceptance " << r.acceptance_rate << '\n';
    } else {
        throw ConfigurationError("abc.method must be smc, rejection or mcmc");
    }
}

void cmd_sobol(const Config& c, Run& run) {
    const Variant v = parse_variant(c.str("sobol.variant"));
    const double horizon = c.num("sobol.horizon");
    const DynamicsOptions opt = dynamics_options(c);
    const bool second = c.flag("sobol.second_order");
    const SaltelliDesign d = saltelli_design(HandyParams::kSize, c.count("sobol.N"), handy_sobol_bounds(), second);
    if (!d.warning.empty()) *run.log << "warning: " << d.warning << '\n';
    const auto Y = evaluate_design(d, [&](std::span<const double> row) {
        return handy_gdp_output(row, v, horizon, opt);
    });
    const SensitivityReport r = analyse(d, Y, parse_estimator(c.str("sobol.estimator")),
                                        c.count("sobol.bootstrap"), c.num("sobol.confidence"),
                                        static_cast<std::uint64_t>(c.integer("run.seed")));
    const auto names = param_names();
    {
        auto os = run.open("indices.csv");
        r.write_csv(os, names);
    }
    if (second) {
        auto os = run.open("pairs.csv");
        r.write_pairs_csv(os, names);
    }
    {
        auto os = run.open("outputs.csv");
        os << "row,gdp\n";
        for (std::size_t i = 0; i < Y.size(); ++i) os << i << ',' << fmt(Y[i]) << '\n';
    }
    {
        auto os = run.open("ranking.csv");
        os << "rank,factor,ST,sensitive\n";
        const auto order = rank_by_total(r);
        const double thr = c.num("sobol.threshold");
        for (std::size_t k = 0; k < order.size(); ++k)
            os << k + 1 << ',' << names[order[k]] << ',' << fmt(r.ST[order[k]]) << ','
               << (r.ST[order[k]] >= thr ? 1 : 0) << '\n';
    }
    run.evaluations["model_runs"] = Y.size();
    if (r.degenerate) *run.log << "warning: output variance is zero; indices undefined\n";
}

std::vector<Submodel> sumo_members(const Config& c, const HandyParams& truth) {
    std::vector<Submodel> subs;
    const std::string file = c.str("sumo.submodels");
    if (!file.empty()) {
        for (auto& [label, p] : read_param_rows(file)) subs.push_back({p, Variant::Handy});
        if (subs.empty()) throw ConfigurationError("no submodels in " + file);
        return subs;
    }
    const std::size_t M = c.count("sumo.members");
    if (M < 1) throw ConfigurationError("sumo.members must be >= 1");
    const double h = c.num("sumo.perturbation");
    if (!(h >= 0.0 && h < 1.0)) throw ConfigurationError("sumo.perturbation must lie in [0, 1)");
    const auto seed = static_cast<std::uint64_t>(c.integer("run.seed"));
    for (std::size_t m = 0; m < M; ++m) {
        auto g = stream_rng(seed, 0x5ab0, m);
        HandyParams p = truth;
        for (std::size_t i = 0; i < HandyParams::kSize; ++i) p[i] *= 1.0 + h * (2.0 * uniform01(g) - 1.0);
        subs.push_back({p, Variant::Handy});
    }
    return subs;
}

void cmd_sumo(const Config& c, Run& run) {
    const HandyParams truth = model_params(c);
    const DynamicsOptions opt = dynamics_options(c);
    const double a = c.num("sumo.t_start"), b = c.num("sumo.t_end"), horizon = c.num("sumo.horizon");
    const int f = positive_int(c, "sumo.f");
    const Trajectory gt = simulate(truth, Variant::Handy, 0.0, std::max(b, horizon), opt);
    const SampledSeries obs = sample_window(gt, a, b, f);
    const auto subs = sumo_members(c, truth);
    const VariableMask vars = parse_vars(c, "sumo.coupled");
    const SumoErrorConfig err{c.count("sumo.K"), c.num("sumo.gamma")};
    const CouplingLoss loss = parse_coupling_loss(c.str("sumo.loss"));
    const double lo = c.num("sumo.lo"), hi = c.num("sumo.hi");

    CouplingTensor C(subs.size(), vars, lo, hi);
    const std::string mode = c.str("sumo.mode");
    json summary;
    if (mode == "train") {
        CouplingTrainConfig tc;
        tc.vars = vars;
        tc.lo = lo;
        tc.hi = hi;
        tc.loss = loss;
        tc.error = err;
        tc.dynamics = opt;
        tc.smc = smc_config(c, "sumo", static_cast<std::uint64_t>(c.integer("run.seed")));
        tc.smc.max_evaluations = c.count("sumo.budget");
        const CouplingTrainResult r = train_coupling(subs, obs, tc);
        C = r.coupling;
        auto os = run.open("training.csv");
        os << "generation,epsilon,best_loss,evaluations\n";
        for (const auto& g : r.smc.generations)
            os << g.generation << ',' << fmt(g.epsilon) << ',' << fmt(g.best_distance) << ','
               << g.cumulative_evaluations << '\n';
        run.evaluations["coupling"] = r.evaluations;
        summary["stop"] = to_string(r.smc.stop);
    } else if (mode == "fixed") {
        C.fill(c.num("sumo.coupling"));
        if (!C.within_bounds()) throw ConfigurationError("sumo.coupling outside [sumo.lo, sumo.hi]");
    } else {
        throw ConfigurationError("sumo.mode must be 'train' or 'fixed'");
    }
    const double l_trained = coupling_loss(subs, C, obs, loss, err, opt);
    const double l_zero = coupling_loss(subs, CouplingTensor(subs.size(), vars, lo, hi), obs, loss, err, opt);
    summary["loss"] = l_trained;
    summary["loss_uncoupled"] = l_zero;
    summary["free_coefficients"] = C.free_count();
    summary["complexity"] = complexity_measure(C.free_count(), HandyParams::kSize);

    const SupermodelRun sm = simulate_supermodel(subs, C, 0.0, horizon, opt);
    {
        auto os = run.open("submodels.csv");
        os << "label";
        for (const auto& n : param_names()) os << ',' << n;
        os << '\n';
        for (std::size_t m = 0; m < subs.size(); ++m) {
            os << m;
            for (double v : subs[m].params.to_array()) os << ',' << fmt(v);
            os << '\n';
        }
    }
    {
        auto os = run.open("coupling.csv");
        C.write_csv(os);
    }
    {
        auto os = run.open("supermodel.csv");
        sm.write_csv(os);
    }
    if (horizon >= kForwardWindow[1]) {
        // attractor distances between ensemble and truth on the forward window
        const auto pa = trajectory_samples(sm.ensemble, kForwardWindow[0], kForwardWindow[1]);
        const auto pb = trajectory_samples(gt, kForwardWindow[0], kForwardWindow[1]);
        json ad;
        ad["W"] = attractor_distance(pa, pb, AttractorDistance::W).distance;
        ad["V"] = attractor_distance(pa, pb, AttractorDistance::V).distance;
        ad["U"] = attractor_distance(pa, pb, AttractorDistance::U).distance;
        summary["attractor_forward"] = ad;
    }
    auto os = run.open("summary.json");
    os << summary.dump(2) << '\n';
    *run.log << "supermodel loss " << l_trained << " (uncoupled " << l_zero << ")\n";
}

ExperimentConfig experiment_config(const Config& c) {
    ExperimentConfig e;
    e.pipeline = parse_pipeline(c.str("experiment.pipeline"));
    e.f = positive_int(c, "experiment.f");
    e.repetitions = c.count("experiment.repetitions");
    e.target = c.num("experiment.target");
    e.pretrain_targets = c.numbers("experiment.pretrain_targets");
    e.total_budget = c.count("experiment.budget");
    e.pretrain_budget = c.count("experiment.pretrain_budget");
    e.long_train_factor = c.num("experiment.long_train_factor");
    e.prior_half_width = c.num("experiment.half_width");
    e.refine_half_width = c.num("experiment.refine_half_width");
    e.smc = smc_config(c, "experiment", 0);
    e.coupled_vars = parse_vars(c, "experiment.coupled");
    e.coupling_lo = c.num("experiment.coupling_lo");
    e.coupling_hi = c.num("experiment.coupling_hi");
    e.error = {c.count("experiment.K"), c.num("experiment.gamma")};
    e.dynamics = dynamics_options(c);
    e.seed = static_cast<std::uint64_t>(c.integer("run.seed"));
    e.validate();
    return e;
}

void write_experiment_plots(const ForecastReport& r, const Trajectory& gt, Run& run) {
    const auto times = r.plot_times();
    const auto preds = r.retained_predictions();
    {
        auto os = run.open("ground_truth.csv");
        os << "t,x_C,x_E,y,w\n";
        for (double t : times) {
            const auto& x = gt.at(t);
            os << fmt(t) << ',' << fmt(x.xC) << ',' << fmt(x.xE) << ',' << fmt(x.y) << ',' << fmt(x.w) << '\n';
        }
    }
    for (std::size_t i = 0; i < 4; ++i) {
        auto os = run.open("plot_" + std::string(kStateNames[i]) + ".csv");
        write_plot_csv(os, plot_data(gt, times, preds, i));
    }
}

void cmd_experiment(const Config& c, Run& run) {
    const ExperimentConfig e = experiment_config(c);
    const Trajectory gt = make_ground_truth(kForwardWindow[1], e.dynamics);
    const ForecastReport r = run_pipeline(e, gt);
    {
        auto os = run.open("repetitions.csv");
        r.write_repetitions_csv(os);
    }
    {
        auto os = run.open("parameters.csv");
        r.write_parameters_csv(os);
    }
    {
        auto os = run.open("summary.csv");
        r.write_summary_csv(os);
    }
    {
        auto os = run.open("report.csv");
        os << "repetition,ff,fb,f2w,learning_rmse,evaluations\n";
        for (std::size_t idx : r.retained) {
            const auto& x = r.repetitions[idx];
            os << idx << ',' << fmt(x.metrics.ff) << ',' << fmt(x.metrics.fb) << ',' << fmt(x.metrics.f2w)
               << ',' << fmt(x.learning_rmse) << ',' << x.evaluations << '\n';
        }
    }
    {
        auto os = run.open("trim_log.txt");
        r.write_trim_log(os);
    }
    {
        auto os = run.open("predictions.csv");
        r.write_predictions_csv(os);
    }
    write_experiment_plots(r, gt, run);
    std::size_t total = 0;
    for (const auto& x : r.repetitions) total += x.evaluations;
    run.evaluations["repetitions"] = json::array();
    for (const auto& x : r.repetitions) run.evaluations["repetitions"].push_back(x.evaluations);
    run.evaluations["total"] = total;
    *run.log << to_string(e.pipeline) << ": " << r.retained.size() << " retained of "
             << r.repetitions.size() << ", mean ff " << r.ff.mean << ", fb " << r.fb << '\n';
}

void cmd_pca(const Config& c, Run& run) {
    const std::string in = c.str("pca.input");
    if (in.empty()) throw ConfigurationError("pca.input (a parameter CSV) is required");
    const auto rows = read_param_rows(in);
    std::vector<HandyParams> ps;
    for (const auto& r : rows) ps.push_back(r.second);
    const bool gt = c.flag("pca.include_gt");
    const PcaResult r = pca_2d(ps, gt);
    auto os = run.open("pca.csv");
    os << "label,pc1,pc2\n";
    for (std::size_t k = 0; k < r.coords.size(); ++k)
        os << (k < rows.size() ? rows[k].first : std::string("ground_truth")) << ','
           << fmt(r.coords[k][0]) << ',' << fmt(r.coords[k][1]) << '\n';
    if (r.degenerate) *run.log << "warning: all vectors identical; coordinates are zero\n";
}

void cmd_calibrate(const Config& c, Run& run) {
    run.deterministic = false;
    const double eps = calibrate_evaluations_per_second(c.num("calibrate.seconds"), dynamics_options(c));
    json j;
    j["evaluations_per_second"] = eps;
    j["budgets"] = json::array();
    for (double t : c.numbers("calibrate.times"))
        j["budgets"].push_back({{"seconds", t}, {"evaluations", static_cast<long long>(std::llround(t * eps))}});
    auto os = run.open("calibration.json");
    os << j.dump(2) << '\n';
    *run.log << "about " << std::llround(eps) << " evaluations per second\n";
}

using Command = std::function<void(const Config&, Run&)>;

const std::map<std::string, Command>& commands() {
    static const std::map<std::string, Command> m{
        {"simulate", cmd_simulate}, {"sample", cmd_sample},       {"abc", cmd_abc},
        {"sobol", cmd_sobol},       {"sumo", cmd_sumo},           {"experiment", cmd_experiment},
        {"pca", cmd_pca},           {"calibrate", cmd_calibrate}};
    return m;
}

// Executes a command into dir and writes the manifest.
fs::path execute(const std::string& name, const Config& cfg, const std::string& out, std::ostream& log) {
    if (const auto th = cfg.count("run.threads"); th > 0) set_thread_count(th);
    Run run;
    run.dir = fresh_run_dir(name, out);
    run.log = &log;
    {
        auto os = run.open("config.ini");
        cfg.write_ini(os);
    }
    commands().at(name)(cfg, run);

    json m;
    m["artifact_version"] = kArtifactVersion;
    m["command"] = name;
    m["seed"] = cfg.integer("run.seed");
    m["config"] = cfg.values();
    m["evaluations"] = run.evaluations;
    m["deterministic"] = run.deterministic;
    m["created"] = timestamp("%Y-%m-%dT%H:%M:%SZ");
    m["outputs"] = json::array();
    for (const auto& f : run.files)
        m["outputs"].push_back({{"file", f}, {"sha256", sha256_file(run.dir / f)},
                                {"bytes", fs::file_size(run.dir / f)}});
    std::ofstream os(run.dir / "manifest.json");
    os << m.dump(2) << '\n';
    log << "wrote " << run.files.size() << " artifacts to " << run.dir.string() << '\n';
    return run.dir;
}

int replay(const std::string& target, const std::string& out, std::ostream& log) {
    fs::path mpath = target;
    if (fs::is_directory(mpath)) mpath /= "manifest.json";
    std::ifstream in(mpath);
    if (!in) throw UsageError("cannot read manifest " + mpath.string());
    json m;
    try {
        in >> m;
    } catch (const json::exception& e) {
        throw UsageError(std::string("malformed manifest: ") + e.what());
    }
    if (m.value("artifact_version", 0) != kArtifactVersion)
        throw UsageError("unsupported manifest version");
    const std::string name = m.at("command").get<std::string>();
    if (!commands().count(name)) throw UsageError("manifest names unknown command " + name);
    Config cfg;
    for (const auto& [k, v] : m.at("config").items()) cfg.set(k, v.get<std::string>());
    const fs::path dir = execute(name, cfg, out, log);
    const bool det = m.value("deterministic", true);
    std::size_t same = 0, total = 0;
    for (const auto& o : m.at("outputs")) {
        const std::string f = o.at("file").get<std::string>();
        ++total;
        const bool ok = fs::exists(dir / f) && sha256_file(dir / f) == o.at("sha256").get<std::string>();
        if (ok)
            ++same;
        else
            log << (det ? "MISMATCH " : "differs (non-deterministic command) ") << f << '\n';
    }
    log << "replay: " << same << "/" << total << " artifacts identical\n";
    return (same == total || !det) ? 0 : 1;
}

int plot_data_command(const std::string& run_dir, const std::string& variable,
                      const std::string& output, std::ostream& out) {
    std::size_t var = 4;
    for (std::size_t i = 0; i < 4; ++i)
        if (variable == kStateNames[i]) var = i;
    if (var == 4) throw UsageError("unknown variable '" + variable + "' (x_C, x_E, y, w)");
    const fs::path dir = run_dir;
    std::ifstream pin(dir / "predictions.csv");
    if (!pin) throw UsageError(run_dir + " holds no forecast report (predictions.csv)");
    Config cfg;
    {
        std::ifstream min(dir / "manifest.json");
        if (min) {
            json m;
            min >> m;
            for (const auto& [k, v] : m.at("config").items()) cfg.set(k, v.get<std::string>());
        }
    }
    std::string line;
    std::getline(pin, line);
    std::vector<double> times;
    std::vector<std::vector<StateVector>> preds;
    std::string current;
    while (std::getline(pin, line)) {
        if (trim(line).empty()) continue;
        const auto c = split(line, ',');
        if (c.size() != 6) throw std::runtime_error("malformed predictions.csv");
        if (c[0] != current) {
            preds.emplace_back();
            current = c[0];
        }
        if (preds.size() == 1) times.push_back(std::stod(c[1]));
        preds.back().push_back({std::stod(c[2]), std::stod(c[3]), std::stod(c[4]), std::stod(c[5])});
    }
    const Trajectory gt = make_ground_truth(kForwardWindow[1], dynamics_options(cfg));
    const auto rows = plot_data(gt, times, preds, var);
    if (output.empty()) {
        write_plot_csv(out, rows);
    } else {
        std::ofstream os(output);
        if (!os) throw std::runtime_error("cannot write " + output);
        write_plot_csv(os, rows);
    }
    return 0;
}

struct Shortcut {
    const char* flag;
    const char* key;
    const char* help;
};

const std::map<std::string, std::vector<Shortcut>>& shortcuts() {
    static const std::map<std::string, std::vector<Shortcut>> m{
        {"simulate", {{"--variant", "model.variant", "handy, handy1..handy4, predator-prey"},
                      {"--t-end", "simulate.t_end", "end time"}}},
        {"sample", {{"--f", "sample.f", "sampling frequency"}}},
        {"abc", {{"--method", "abc.method", "smc, rejection or mcmc"},
                 {"--budget", "abc.budget", "evaluation budget"},
                 {"--population", "abc.population", "SMC population size"},
                 {"--f", "abc.f", "sampling frequency"},
                 {"--target", "abc.target", "target RMSE"},
                 {"--kernel", "abc.kernel", "diagonal or multivariate"}}},
        {"sobol", {{"--N", "sobol.N", "base sample count"},
                   {"--variant", "sobol.variant", "model variant"},
                   {"--estimator", "sobol.estimator", "jansen or saltelli"}}},
        {"sumo", {{"--budget", "sumo.budget", "coupling evaluation budget"},
                  {"--members", "sumo.members", "number of perturbed submodels"},
                  {"--mode", "sumo.mode", "train or fixed"}}},
        {"experiment", {{"--pipeline", "experiment.pipeline", "pipeline name"},
                        {"--f", "experiment.f", "sampling frequency"},
                        {"--reps", "experiment.repetitions", "repetitions"},
                        {"--budget", "experiment.budget", "evaluations per repetition"},
                        {"--target", "experiment.target", "learning RMSE target"}}},
        {"pca", {{"--input", "pca.input", "parameter CSV"}}},
        {"calibrate", {{"--seconds", "calibrate.seconds", "measurement time"}}},
    };
    return m;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"HANDY model lab: simulation, inference, sensitivity and supermodels"};
    app.require_subcommand(1);

    struct Common {
        std::string config, out;
        std::vector<std::string> sets;
        std::optional<long long> seed;
        std::map<std::string, std::string> flags;
    };
    std::map<std::string, Common> common;
    for (const auto& [name, fn] : commands()) {
        (void)fn;
        static const std::map<std::string, std::string> about{
            {"simulate", "integrate one model and write its trajectory"},
            {"sample", "ground truth sampled on the three windows"},
            {"abc", "fit HANDY to the learning window (smc, rejection, mcmc)"},
            {"sobol", "Sobol indices of GDP over the sampling box"},
            {"sumo", "couple perturbed submodels, train or fixed coupling"},
            {"experiment", "repeated forecasting pipeline with trimmed summary"},
            {"pca", "2-D projection of fitted parameter vectors"},
            {"calibrate", "measure evaluations per second on this machine"},
        };
        const auto a = about.find(name);
        CLI::App* sub = app.add_subcommand(name, a != about.end() ? a->second : name);
        Common& c = common[name];
        sub->add_option("--config", c.config, "INI configuration file");
        sub->add_option("--set", c.sets, "override, section.key=value (repeatable)");
        sub->add_option("--out", c.out, "output directory (default: timestamped under $HANDY_LAB_OUT)");
        sub->add_option("--seed", c.seed, "master seed");
        if (auto it = shortcuts().find(name); it != shortcuts().end())
            for (const auto& s : it->second) sub->add_option(s.flag, c.flags[s.key], s.help);
    }
    std::string plot_dir, plot_var, plot_out;
    CLI::App* plot = app.add_subcommand("plot-data", "emit plot-ready CSV from an experiment run");
    plot->add_option("run_dir", plot_dir, "experiment run directory")->required();
    plot->add_option("--variable", plot_var, "x_C, x_E, y or w")->required();
    plot->add_option("--output", plot_out, "file to write (default: stdout)");
    std::string replay_target, replay_out;
    CLI::App* rep = app.add_subcommand("replay", "re-run from a manifest and compare digests");
    rep->add_option("manifest", replay_target, "manifest.json or its run directory")->required();
    rep->add_option("--out", replay_out, "output directory for the re-run");

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 2;
    }

    try {
        if (plot->parsed()) return plot_data_command(plot_dir, plot_var, plot_out, out);
        if (rep->parsed()) return replay(replay_target, replay_out, err);
        for (const auto& [name, c] : common) {
            if (!app.got_subcommand(name)) continue;
            Config cfg;
            if (!c.config.empty()) cfg.load_ini(c.config);
            for (const auto& s : c.sets) cfg.apply_override(s);
            for (const auto& [k, v] : c.flags)
                if (!v.empty()) cfg.set(k, v);
            if (c.seed) cfg.set("run.seed", std::to_string(*c.seed));
            execute(name, cfg, c.out, err);
            return 0;
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const ConfigurationError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace handy::cli
