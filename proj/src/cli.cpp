#include "ovb/cli.hpp"

#include "ovb/plot.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace ovb::cli {

namespace {

[[noreturn]] void bad(const std::string& msg) { throw Error("invalid_config", msg); }

void check_keys(const Json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) bad(where + " must be an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!ok.count(it.key())) bad("unknown key '" + it.key() + "' in " + where);
}

double get_num(const Json& obj, const char* key, const std::string& where, double fallback) {
    if (!obj.contains(key)) return fallback;
    const Json& v = obj.at(key);
    if (!v.is_number()) bad(where + "." + key + " must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) bad(where + "." + key + " must be finite");
    return d;
}

std::optional<double> get_opt_num(const Json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key)) return std::nullopt;
    return get_num(obj, key, where, 0.0);
}

long long get_int(const Json& obj, const char* key, const std::string& where, long long fallback) {
    if (!obj.contains(key)) return fallback;
    const Json& v = obj.at(key);
    if (!v.is_number_integer()) bad(where + "." + key + " must be an integer");
    return v.get<long long>();
}

std::uint64_t get_seed(const Json& obj, const char* key, const std::string& where,
                       std::uint64_t fallback) {
    if (!obj.contains(key)) return fallback;
    const Json& v = obj.at(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<long long>() >= 0) return static_cast<std::uint64_t>(v.get<long long>());
    bad(where + "." + key + " must be a nonnegative integer");
}

bool get_bool(const Json& obj, const char* key, const std::string& where, bool fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj.at(key).is_boolean()) bad(where + "." + key + " must be a boolean");
    return obj.at(key).get<bool>();
}

std::string get_str(const Json& obj, const char* key, const std::string& where,
                    const std::string& fallback = "") {
    if (!obj.contains(key)) return fallback;
    if (!obj.at(key).is_string()) bad(where + "." + key + " must be a string");
    return obj.at(key).get<std::string>();
}

std::vector<double> get_num_list(const Json& obj, const char* key, const std::string& where) {
    const Json& v = obj.at(key);
    if (!v.is_array()) bad(where + "." + key + " must be an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
        if (!e.is_number() || !std::isfinite(e.get<double>()))
            bad(where + "." + key + " must hold finite numbers");
        out.push_back(e.get<double>());
    }
    return out;
}

std::vector<std::string> get_str_list(const Json& obj, const char* key, const std::string& where) {
    const Json& v = obj.at(key);
    if (!v.is_array()) bad(where + "." + key + " must be an array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
        if (!e.is_string()) bad(where + "." + key + " must hold strings");
        out.push_back(e.get<std::string>());
    }
    return out;
}

std::string resolve(const std::string& path, const std::string& base) {
    const fs::path p(path);
    return p.is_absolute() ? path : (fs::path(base) / p).lexically_normal().string();
}

Expression parse_expr(const Json& obj, const char* key, const std::string& where) {
    const std::string src = get_str(obj, key, where);
    try {
        return Expression::parse(src);
    } catch (const Error& e) {
        bad(where + "." + key + ": " + e.what());
    }
}

Matrix read_rows_csv(const std::string& path, const std::vector<std::string>& names) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("missing_file", "cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    const CsvTable t = parse_csv(ss.str());
    std::vector<std::size_t> idx;
    for (const auto& n : names) {
        const auto it = std::find(t.header.begin(), t.header.end(), n);
        if (it == t.header.end()) throw Error("missing_column", "'" + path + "' has no column '" + n + "'");
        idx.push_back(static_cast<std::size_t>(it - t.header.begin()));
    }
    if (t.rows.empty()) throw Error("empty_data", "'" + path + "' has no rows");
    Matrix m(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(names.size()));
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        for (std::size_t c = 0; c < idx.size(); ++c) {
            const std::string& cell = idx[c] < t.rows[r].size() ? t.rows[r][idx[c]] : std::string();
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (cell.empty() || end != cell.c_str() + cell.size() || !std::isfinite(v))
                throw Error("non_numeric", "'" + path + "' row " + std::to_string(r + 1) + " column '" +
                                               names[c] + "' is not a finite number");
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
        }
    return m;
}

SynthSpec parse_synth(const Json& j, const std::string& where, bool simulate) {
    if (simulate)
        check_keys(j, where, {"dgp", "n", "p", "cy2", "cd2", "b_g", "b_alpha", "rho", "theta",
                              "sigma_eps", "sigma_v", "treatment_mean", "quadratic",
                              "propensity_intercept", "beta_scale", "gamma_scale", "seed", "reps",
                              "mode", "assumed", "level"});
    else
        check_keys(j, where, {"dgp", "n", "p", "cy2", "cd2", "b_g", "b_alpha", "rho", "theta",
                              "sigma_eps", "sigma_v", "treatment_mean", "quadratic",
                              "propensity_intercept", "beta_scale", "gamma_scale", "seed"});
    SynthSpec s;
    s.dgp = synth_dgp_from_string(get_str(j, "dgp", where, "plm_gaussian"));
    s.n = get_int(j, "n", where, s.n);
    s.p = get_int(j, "p", where, s.p);
    s.cy2 = get_opt_num(j, "cy2", where);
    s.cd2 = get_opt_num(j, "cd2", where);
    s.b_g = get_opt_num(j, "b_g", where);
    s.b_alpha = get_opt_num(j, "b_alpha", where);
    s.rho = get_num(j, "rho", where, s.rho);
    s.theta = get_num(j, "theta", where, s.theta);
    s.sigma_eps = get_num(j, "sigma_eps", where, s.sigma_eps);
    s.sigma_v = get_num(j, "sigma_v", where, s.sigma_v);
    s.treatment_mean = get_num(j, "treatment_mean", where, s.treatment_mean);
    s.quadratic = get_num(j, "quadratic", where, s.quadratic);
    s.propensity_intercept = get_num(j, "propensity_intercept", where, s.propensity_intercept);
    s.beta_scale = get_num(j, "beta_scale", where, s.beta_scale);
    s.gamma_scale = get_num(j, "gamma_scale", where, s.gamma_scale);
    s.seed = get_seed(j, "seed", where, 0);
    try {
        s.validate();
    } catch (const Error& e) {
        bad(where + ": " + e.what());
    }
    return s;
}

SensitivityParams parse_scenario(const Json& j, const std::string& where) {
    check_keys(j, where, {"label", "eta_y2", "eta_d2", "cy2", "cd2", "rho"});
    const bool eta = j.contains("eta_y2") || j.contains("eta_d2");
    const bool c = j.contains("cy2") || j.contains("cd2");
    if (eta == c) bad(where + " needs either (eta_y2, eta_d2) or (cy2, cd2)");
    SensitivityParams p;
    const double rho = get_num(j, "rho", where, 1.0);
    try {
        if (eta) {
            if (!j.contains("eta_y2") || !j.contains("eta_d2")) bad(where + " needs both eta_y2 and eta_d2");
            p = SensitivityParams::from_eta(get_num(j, "eta_y2", where, 0), get_num(j, "eta_d2", where, 0), rho);
        } else {
            if (!j.contains("cy2") || !j.contains("cd2")) bad(where + " needs both cy2 and cd2");
            p = SensitivityParams::direct(get_num(j, "cy2", where, 0), get_num(j, "cd2", where, 0), rho);
        }
        p.validate();
    } catch (const Error& e) {
        if (e.kind() == "invalid_config") throw;
        bad(where + ": " + e.what());
    }
    p.label = get_str(j, "label", where);
    return p;
}

AxisSpec parse_axis(const Json& j, const std::string& where, AxisSpec a) {
    check_keys(j, where, {"min", "max", "count"});
    a.min = get_num(j, "min", where, a.min);
    a.max = get_num(j, "max", where, a.max);
    a.count = static_cast<int>(get_int(j, "count", where, a.count));
    if (a.count < 2) bad(where + ".count must be at least 2");
    if (!(a.min >= 0.0 && a.max < 1.0 && a.min < a.max)) bad(where + " must satisfy 0 <= min < max < 1");
    return a;
}

Dictionary parse_dictionary(const Json& j, const std::string& where, std::optional<int> treatment) {
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "raw") return Dictionary::raw();
        if (s == "expanded") return Dictionary::expanded(treatment);
        bad(where + " must be 'raw', 'expanded' or an object");
    }
    check_keys(j, where, {"intercept", "squares", "interactions", "treatment_interactions", "max_columns"});
    DictionaryConfig c;
    c.treatment_column = treatment;
    c.intercept = get_bool(j, "intercept", where, c.intercept);
    c.squares = get_bool(j, "squares", where, c.squares);
    c.interactions = get_bool(j, "interactions", where, c.interactions);
    c.treatment_interactions = get_bool(j, "treatment_interactions", where, c.treatment_interactions);
    const long long mc = get_int(j, "max_columns", where, static_cast<long long>(c.max_columns));
    if (mc < 1) bad(where + ".max_columns must be positive");
    c.max_columns = static_cast<std::size_t>(mc);
    return Dictionary(c);
}

void validate_learner_spec(const Json& j, const std::string& where) {
    const std::string type = get_str(j, "type", where);
    if (type == "penalized_linear") {
        check_keys(j, where, {"type", "l1", "l2", "dictionary"});
        if (get_num(j, "l1", where, 0) < 0 || get_num(j, "l2", where, 0) < 0)
            bad(where + " penalties must be nonnegative");
        if (j.contains("dictionary")) parse_dictionary(j.at("dictionary"), where + ".dictionary", 0);
    } else if (type == "tree_ensemble") {
        check_keys(j, where, {"type", "num_trees", "max_depth", "min_leaf", "subsample",
                              "features_per_split", "seed"});
        if (get_int(j, "num_trees", where, 500) < 1) bad(where + ".num_trees must be positive");
        if (get_int(j, "max_depth", where, 0) < 0) bad(where + ".max_depth must be nonnegative");
        if (get_int(j, "min_leaf", where, 5) < 1) bad(where + ".min_leaf must be positive");
        const double sub = get_num(j, "subsample", where, 1.0);
        if (!(sub > 0.0 && sub <= 1.0)) bad(where + ".subsample must lie in (0, 1]");
        if (get_int(j, "features_per_split", where, 0) < 0) bad(where + ".features_per_split must be nonnegative");
        get_seed(j, "seed", where, 0);
    } else {
        bad(where + ".type must be 'penalized_linear' or 'tree_ensemble'");
    }
}

FunctionalSpec parse_functional(const Json& j, const std::string& base_dir,
                                const std::vector<std::string>& short_names) {
    const std::string where = "functional";
    check_keys(j, where, {"kind", "apo_level", "weight", "direction", "fd_step", "transport",
                          "shift_target", "shift_base"});
    FunctionalSpec f;
    try {
        f.kind = functional_kind_from_string(get_str(j, "kind", where, "binary_ate"));
    } catch (const Error& e) {
        bad(std::string("functional.kind: ") + e.what());
    }
    f.apo_level = get_num(j, "apo_level", where, 1.0);
    if (f.apo_level != 0.0 && f.apo_level != 1.0) bad("functional.apo_level must be 0 or 1");
    std::vector<const Expression*> exprs;
    if (j.contains("weight")) f.weight = parse_expr(j, "weight", where);
    if (j.contains("direction")) f.direction = parse_expr(j, "direction", where);
    f.fd_step = get_num(j, "fd_step", where, 0.0);
    if (f.fd_step < 0.0) bad("functional.fd_step must be positive");
    if (j.contains("transport")) {
        if (!j.at("transport").is_array()) bad("functional.transport must be an array");
        for (const auto& t : j.at("transport")) {
            check_keys(t, "functional.transport[]", {"column", "value"});
            f.transport.push_back({get_str(t, "column", "functional.transport[]"),
                                   parse_expr(t, "value", "functional.transport[]")});
        }
    }
    if (f.kind == FunctionalKind::PolicyTransport && f.transport.empty())
        bad("policy_transport needs functional.transport");
    if (f.kind == FunctionalKind::DistributionShift) {
        if (!j.contains("shift_target") || !j.contains("shift_base"))
            bad("distribution_shift needs shift_target and shift_base CSV paths");
    }
    if (!short_names.empty()) {
        const std::set<std::string> known(short_names.begin(), short_names.end());
        auto check = [&](const Expression& e, const std::string& what) {
            for (const auto& id : e.identifiers())
                if (!known.count(id)) bad(what + " refers to unknown column '" + id + "'");
        };
        if (f.weight) check(*f.weight, "functional.weight");
        if (f.direction) check(*f.direction, "functional.direction");
        for (const auto& t : f.transport) {
            if (!known.count(t.column)) bad("functional.transport column '" + t.column + "' is unknown");
            check(t.value, "functional.transport value");
        }
    }
    if (f.kind == FunctionalKind::DistributionShift) {
        f.shift_target = read_rows_csv(resolve(get_str(j, "shift_target", where), base_dir), short_names);
        f.shift_base = read_rows_csv(resolve(get_str(j, "shift_base", where), base_dir), short_names);
    }
    return f;
}

double sd(const Vector& v) { return std::sqrt(variance(v)); }

}  // namespace

AnalysisConfig parse_config(const Json& doc, const std::string& base_dir) {
    check_keys(doc, "config", {"data", "synthetic", "components", "functional", "learners", "riesz",
                               "folds", "scenarios", "thresholds", "level", "contour", "benchmark",
                               "simulate", "threads"});
    AnalysisConfig c;
    const int sources = static_cast<int>(doc.contains("data")) + doc.contains("synthetic") + doc.contains("components");
    if (sources > 1) bad("give only one of data, synthetic, components");
    if (sources == 0 && !doc.contains("simulate")) bad("config needs data, synthetic, components or simulate");

    std::vector<std::string> short_names;
    if (doc.contains("data")) {
        const Json& d = doc.at("data");
        check_keys(d, "data", {"path", "outcome", "treatment", "covariates", "group", "strata"});
        c.source = AnalysisConfig::Source::Csv;
        if (!d.contains("path") || !d.contains("outcome") || !d.contains("treatment") || !d.contains("covariates"))
            bad("data needs path, outcome, treatment and covariates");
        c.data_path = resolve(get_str(d, "path", "data"), base_dir);
        c.schema.outcome = get_str(d, "outcome", "data");
        c.schema.treatment = get_str(d, "treatment", "data");
        c.schema.covariates = get_str_list(d, "covariates", "data");
        if (d.contains("group")) c.schema.group = get_str(d, "group", "data");
        if (d.contains("strata")) c.schema.strata = get_str(d, "strata", "data");
        short_names.push_back(c.schema.treatment);
        short_names.insert(short_names.end(), c.schema.covariates.begin(), c.schema.covariates.end());
    } else if (doc.contains("synthetic")) {
        c.source = AnalysisConfig::Source::Synthetic;
        c.synthetic = parse_synth(doc.at("synthetic"), "synthetic", false);
        short_names = default_short_names(c.synthetic->p + 1);
    } else if (doc.contains("components")) {
        const Json& k = doc.at("components");
        check_keys(k, "components", {"theta_s", "se", "sigma2", "nu2", "S"});
        c.source = AnalysisConfig::Source::Components;
        ComponentInput in;
        if (!k.contains("theta_s") || !k.contains("se")) bad("components needs theta_s and se");
        in.theta_s = get_num(k, "theta_s", "components", 0);
        in.se = get_num(k, "se", "components", 0);
        in.sigma2 = get_opt_num(k, "sigma2", "components");
        in.nu2 = get_opt_num(k, "nu2", "components");
        in.S = get_opt_num(k, "S", "components");
        if (in.se < 0) bad("components.se must be nonnegative");
        if (in.S) {
            if (in.sigma2 || in.nu2) bad("components takes either S or (sigma2, nu2)");
            if (*in.S < 0) bad("components.S must be nonnegative");
        } else {
            if (!in.sigma2 || !in.nu2) bad("components needs S or both sigma2 and nu2");
            if (*in.sigma2 <= 0 || *in.nu2 <= 0) bad("components sigma2 and nu2 must be positive");
        }
        c.components = in;
    }

    if (doc.contains("functional")) {
        c.functional = parse_functional(doc.at("functional"), base_dir, short_names);
    } else if (doc.contains("data")) {
        bad("data input needs a functional");
    }

    if (doc.contains("learners")) {
        const Json& l = doc.at("learners");
        check_keys(l, "learners", {"outcome", "treatment"});
        for (const char* side : {"outcome", "treatment"}) {
            if (!l.contains(side)) continue;
            if (!l.at(side).is_array() || l.at(side).empty())
                bad(std::string("learners.") + side + " must be a non-empty array");
            for (const auto& spec : l.at(side)) validate_learner_spec(spec, std::string("learners.") + side + "[]");
        }
        c.learners = l;
    }

    if (doc.contains("riesz")) {
        const Json& r = doc.at("riesz");
        check_keys(r, "riesz", {"method", "trim", "dictionary", "l1", "l2", "l1_grid"});
        try {
            c.engine.riesz_method = riesz_method_from_string(get_str(r, "method", "riesz", "variational"));
        } catch (const Error& e) {
            bad(std::string("riesz.method: ") + e.what());
        }
        c.engine.trim = get_num(r, "trim", "riesz", kDefaultTrim);
        if (!(c.engine.trim >= 0.0 && c.engine.trim < 0.5)) bad("riesz.trim must lie in [0, 0.5)");
        if (r.contains("dictionary")) {
            c.engine.riesz_dictionary = parse_dictionary(r.at("dictionary"), "riesz.dictionary", 0);
            if (r.at("dictionary").is_string() && r.at("dictionary").get<std::string>() == "expanded")
                c.engine.riesz_dictionary = default_riesz_dictionary();
        }
        c.engine.riesz_l1 = get_num(r, "l1", "riesz", 0.0);
        c.engine.riesz_l2 = get_num(r, "l2", "riesz", 0.0);
        if (c.engine.riesz_l1 < 0 || c.engine.riesz_l2 < 0) bad("riesz penalties must be nonnegative");
        if (r.contains("l1_grid")) {
            c.engine.riesz_l1_grid = get_num_list(r, "l1_grid", "riesz");
            for (double v : c.engine.riesz_l1_grid)
                if (v < 0) bad("riesz.l1_grid values must be nonnegative");
        }
    }

    if (doc.contains("folds")) {
        const Json& f = doc.at("folds");
        check_keys(f, "folds", {"L", "seed", "repetitions"});
        c.engine.folds = static_cast<int>(get_int(f, "L", "folds", kDefaultFolds));
        c.engine.seed = get_seed(f, "seed", "folds", 0);
        c.engine.repetitions = static_cast<int>(get_int(f, "repetitions", "folds", 1));
        if (c.engine.folds < 2) bad("folds.L must be at least 2");
        if (c.engine.repetitions < 1) bad("folds.repetitions must be at least 1");
    }

    if (doc.contains("scenarios")) {
        if (!doc.at("scenarios").is_array()) bad("scenarios must be an array");
        for (const auto& s : doc.at("scenarios")) c.scenarios.push_back(parse_scenario(s, "scenarios[]"));
    }
    if (doc.contains("thresholds")) c.thresholds = get_num_list(doc, "thresholds", "config");
    c.level = get_num(doc, "level", "config", 0.05);
    if (!(c.level > 0.0 && c.level < 0.5)) bad("level must lie in (0, 0.5)");

    if (doc.contains("contour")) {
        const Json& k = doc.at("contour");
        check_keys(k, "contour", {"eta_d2", "eta_y2", "quantity", "threshold", "rho", "svg"});
        if (k.contains("eta_d2")) c.contour.eta_d2 = parse_axis(k.at("eta_d2"), "contour.eta_d2", c.contour.eta_d2);
        if (k.contains("eta_y2")) c.contour.eta_y2 = parse_axis(k.at("eta_y2"), "contour.eta_y2", c.contour.eta_y2);
        try {
            c.contour.quantity = contour_quantity_from_string(get_str(k, "quantity", "contour", "conf_lower"));
        } catch (const Error& e) {
            bad(std::string("contour.quantity: ") + e.what());
        }
        c.contour.threshold = get_num(k, "threshold", "contour", 0.0);
        c.contour.rho = get_num(k, "rho", "contour", 1.0);
        if (!(c.contour.rho >= 0.0 && c.contour.rho <= 1.0)) bad("contour.rho must lie in [0, 1]");
        c.contour.svg = get_bool(k, "svg", "contour", true);
    }

    if (doc.contains("benchmark")) {
        const Json& b = doc.at("benchmark");
        check_keys(b, "benchmark", {"covariates", "multipliers"});
        BenchmarkSpec spec;
        if (!b.contains("covariates")) bad("benchmark needs covariates");
        spec.covariates = get_str_list(b, "covariates", "benchmark");
        if (b.contains("multipliers")) spec.multipliers = get_num_list(b, "multipliers", "benchmark");
        for (double m : spec.multipliers)
            if (m <= 0) bad("benchmark multipliers must be positive");
        if (!short_names.empty())
            for (const auto& cov : spec.covariates)
                if (std::find(short_names.begin() + 1, short_names.end(), cov) == short_names.end())
                    bad("benchmark covariate '" + cov + "' is not a covariate");
        c.benchmark = spec;
    }

    if (doc.contains("simulate")) {
        const Json& s = doc.at("simulate");
        SimulateSpec sim;
        sim.synth = parse_synth(s, "simulate", true);
        sim.coverage.reps = static_cast<int>(get_int(s, "reps", "simulate", 300));
        if (sim.coverage.reps < 100) bad("simulate.reps must be at least 100");
        const std::string mode = get_str(s, "mode", "simulate", "learned");
        if (mode == "oracle") sim.coverage.mode = NuisanceMode::Oracle;
        else if (mode == "learned") sim.coverage.mode = NuisanceMode::Learned;
        else bad("simulate.mode must be 'oracle' or 'learned'");
        sim.coverage.a = get_num(s, "level", "simulate", c.level);
        if (!(sim.coverage.a > 0.0 && sim.coverage.a < 0.5)) bad("simulate.level must lie in (0, 0.5)");
        if (s.contains("assumed")) sim.coverage.assumed = parse_scenario(s.at("assumed"), "simulate.assumed");
        c.simulate = sim;
    }

    c.threads = static_cast<int>(get_int(doc, "threads", "config", 1));
    if (c.threads < 1) bad("threads must be at least 1");
    return c;
}

AnalysisConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("missing_file", "cannot open config '" + path + "'");
    Json doc;
    try {
        doc = Json::parse(in);
    } catch (const std::exception& e) {
        throw Error("invalid_config", std::string("config is not valid JSON: ") + e.what());
    }
    const fs::path parent = fs::path(path).parent_path();
    return parse_config(doc, parent.empty() ? "." : parent.string());
}

void apply_overrides(AnalysisConfig& config, std::optional<std::uint64_t> seed,
                     std::optional<int> threads) {
    if (seed) {
        config.engine.seed = *seed;
        if (config.simulate) config.simulate->synth.seed = *seed;
    }
    if (threads) {
        if (*threads < 1) bad("--threads must be at least 1");
        config.threads = *threads;
    }
}

std::vector<LearnerPtr> build_learners(const Json& specs, bool outcome, bool plm, std::uint64_t seed) {
    // The outcome learner sees [D | X] except in the partially linear pipeline.
    const std::optional<int> treatment = (outcome && !plm) ? std::optional<int>(0) : std::nullopt;
    std::vector<LearnerPtr> out;
    if (specs.is_null() || specs.empty()) {
        out.push_back(std::make_shared<PenalizedLinearLearner>(Dictionary::raw(), 0.0, 0.0, seed));
        return out;
    }
    std::uint64_t k = 0;
    for (const auto& j : specs) {
        const std::string type = j.at("type").get<std::string>();
        if (type == "penalized_linear") {
            Dictionary dict = Dictionary::raw();
            if (j.contains("dictionary")) dict = parse_dictionary(j.at("dictionary"), "learner.dictionary", treatment);
            out.push_back(std::make_shared<PenalizedLinearLearner>(
                dict, get_num(j, "l1", "learner", 0.0), get_num(j, "l2", "learner", 0.0), seed));
        } else {
            TreeEnsembleParams p;
            p.num_trees = static_cast<int>(get_int(j, "num_trees", "learner", p.num_trees));
            p.max_depth = static_cast<int>(get_int(j, "max_depth", "learner", p.max_depth));
            p.min_leaf = static_cast<int>(get_int(j, "min_leaf", "learner", p.min_leaf));
            p.subsample = get_num(j, "subsample", "learner", p.subsample);
            p.features_per_split = static_cast<int>(get_int(j, "features_per_split", "learner", 0));
            p.seed = get_seed(j, "seed", "learner", mix_seed(seed, (outcome ? 100 : 200) + k));
            out.push_back(std::make_shared<TreeEnsembleLearner>(p));
        }
        ++k;
    }
    return out;
}

Analysis run_analysis(const AnalysisConfig& config) {
    set_num_threads(config.threads);
    Analysis a;
    if (config.source == AnalysisConfig::Source::Components) {
        const ComponentInput& in = *config.components;
        a.components_only = true;
        a.theta.value = in.theta_s;
        a.theta.std_error = in.se;
        a.sigma2.score = ScoreKind::Sigma2;
        a.nu2.score = ScoreKind::Nu2;
        if (in.S) {
            a.s_only = true;
            a.sigma2.value = *in.S * *in.S;
            a.nu2.value = 1.0;
        } else {
            a.sigma2.value = *in.sigma2;
            a.nu2.value = *in.nu2;
        }
        if (config.functional) a.functional = *config.functional;
        return a;
    }

    if (config.source == AnalysisConfig::Source::Csv) {
        if (config.data_path.empty())
            throw Error("invalid_config", "no data source: add data, synthetic or components");
        a.data = load_csv(config.data_path, config.schema);
        a.functional = *config.functional;
    } else {
        SynthResult sim = generate(*config.synthetic);
        a.data = std::move(sim.data);
        a.functional = config.functional ? *config.functional : sim.oracle.functional;
    }
    a.has_data = true;
    if (a.functional.kind == FunctionalKind::ACD && a.functional.fd_step == 0.0)
        a.functional.fd_step = 0.01 * std::max(sd(a.data.treatment), 1e-12);
    else if (a.functional.fd_step == 0.0)
        a.functional.fd_step = 0.01;

    const bool plm = a.functional.kind == FunctionalKind::PLMCoefficient;
    a.engine = config.engine;
    a.engine.outcome_learners = build_learners(
        config.learners.contains("outcome") ? config.learners.at("outcome") : Json(), true, plm, config.engine.seed);
    a.engine.treatment_learners = build_learners(
        config.learners.contains("treatment") ? config.learners.at("treatment") : Json(), false, plm,
        config.engine.seed);
    a.estimates = estimate_components(a.data, a.functional, a.engine);
    a.theta = a.estimates->theta;
    a.sigma2 = a.estimates->sigma2;
    a.nu2 = a.estimates->nu2;
    return a;
}

namespace {

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

Json num_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json diagnostics_json(const EngineDiagnostics& d, const EngineConfig& e, const Analysis& a) {
    Json j = Json::object();
    j["folds"] = e.folds;
    j["repetitions"] = e.repetitions;
    Json seeds = Json::array();
    for (auto s : d.fold_seeds) seeds.push_back(s);
    j["fold_seeds"] = seeds;
    j["riesz_method"] = d.riesz_method;
    j["riesz_l1"] = d.riesz_l1;
    j["trimmed_low"] = d.trimmed_low;
    j["trimmed_high"] = d.trimmed_high;
    j["outcome_candidates"] = d.outcome_candidates;
    j["outcome_learner"] = d.outcome_learner;
    j["outcome_cv_rmse"] = d.outcome_cv_rmse;
    j["treatment_candidates"] = d.treatment_candidates;
    j["treatment_learner"] = d.treatment_learner;
    j["treatment_cv_rmse"] = d.treatment_cv_rmse;
    if (a.functional.kind == FunctionalKind::PolicyTransport)
        j["transport_outside_hull"] = d.transport_outside_hull;
    if (a.functional.kind == FunctionalKind::ACD) j["fd_step"] = a.functional.fd_step;
    return j;
}

}  // namespace

Json build_report(const AnalysisConfig& config, const Analysis& a) {
    const double a_level = config.level;
    const double z = normal_quantile(1.0 - a_level);
    const double S = std::sqrt(a.sigma2.value * a.nu2.value);

    Json r = Json::object();
    r["schema_version"] = kReportSchema;
    r["source"] = config.source == AnalysisConfig::Source::Csv         ? "csv"
                  : config.source == AnalysisConfig::Source::Synthetic ? "synthetic"
                                                                       : "components";
    r["functional"] = a.components_only && !config.functional ? Json(nullptr)
                                                              : Json(to_string(a.functional.kind));
    r["n"] = a.has_data ? Json(a.data.n()) : Json(nullptr);

    Json est = Json::object();
    est["theta_s"] = a.theta.value;
    est["se"] = a.theta.std_error;
    est["t_value"] = a.theta.std_error > 0 ? Json(a.theta.value / a.theta.std_error) : Json(nullptr);
    est["sigma2"] = a.s_only ? Json(nullptr) : Json(a.sigma2.value);
    est["nu2"] = a.s_only ? Json(nullptr) : Json(a.nu2.value);
    est["S"] = S;
    if (!a.components_only) {
        est["se_sigma2"] = a.sigma2.std_error;
        est["se_nu2"] = a.nu2.std_error;
    }
    est["level"] = a_level;
    est["z"] = z;
    est["display"] = fixed(a.theta.value, 3) + " (" + fixed(a.theta.std_error, 3) + ")";
    r["estimate"] = est;

    Json scen = Json::array();
    for (const auto& p : config.scenarios) {
        const BoundsResult b = compute_bounds(a.theta, a.sigma2, a.nu2, p, a_level);
        Json s = Json::object();
        s["label"] = p.label;
        s["eta_y2"] = p.eta_y2();
        s["eta_d2"] = p.eta_d2();
        s["cy2"] = p.cy2;
        s["cd2"] = p.cd2;
        s["rho"] = p.rho_abs;
        s["bias_bound"] = b.bias_bound;
        s["theta_minus"] = b.theta_minus;
        s["theta_plus"] = b.theta_plus;
        s["conf_lower"] = num_or_null(b.conf_lower);
        s["conf_upper"] = num_or_null(b.conf_upper);
        scen.push_back(s);
    }
    r["scenarios"] = scen;

    Json rv = Json::array();
    for (double v : config.thresholds) {
        Json e = Json::object();
        e["threshold"] = v;
        const double point = robustness_value(a.theta.value, S, v);
        e["rv"] = point;
        const double conf = robustness_value_conf(a.theta, a.sigma2, a.nu2, v, a_level);
        e["rv_conf"] = num_or_null(conf);
        e["display"] = fixed(100.0 * point, 1) + "%" +
                       (std::isfinite(conf) ? " (" + fixed(100.0 * conf, 1) + "%)" : std::string());
        rv.push_back(e);
    }
    r["robustness"] = rv;

    Json notes = Json::array();
    notes.push_back(
        "eta_d2 is mapped to the representer gain through cd2 = eta_d2 / (1 - eta_d2). This equals "
        "the partial R2 of the treatment on the confounders only in the partially linear model with "
        "homoscedastic treatment noise; otherwise it measures the average gain in conditional "
        "precision of the treatment.");
    if (!a.components_only)
        notes.push_back("nu2 was estimated with the " + a.estimates->diagnostics.riesz_method +
                        " Riesz representer.");
    else
        notes.push_back("component estimates were supplied directly; confidence bounds and rv_conf "
                        "need influence functions and are null.");
    r["notes"] = notes;
    r["diagnostics"] = a.estimates ? diagnostics_json(a.estimates->diagnostics, a.engine, a) : Json::object();
    return r;
}

namespace {

void dump(const Json& j, std::string& out, int indent, int level) {
    const std::string pad(static_cast<std::size_t>(indent * (level + 1)), ' ');
    const std::string close(static_cast<std::size_t>(indent * level), ' ');
    const char* nl = indent > 0 ? "\n" : "";
    switch (j.type()) {
        case Json::value_t::object: {
            if (j.empty()) {
                out += "{}";
                return;
            }
            out += "{";
            out += nl;
            bool first = true;
            for (auto it = j.begin(); it != j.end(); ++it) {
                if (!first) {
                    out += ",";
                    out += nl;
                }
                first = false;
                out += pad + Json(it.key()).dump() + (indent > 0 ? ": " : ":");
                dump(it.value(), out, indent, level + 1);
            }
            out += nl + close + "}";
            return;
        }
        case Json::value_t::array: {
            if (j.empty()) {
                out += "[]";
                return;
            }
            out += "[";
            out += nl;
            for (std::size_t i = 0; i < j.size(); ++i) {
                if (i) {
                    out += ",";
                    out += nl;
                }
                out += pad;
                dump(j[i], out, indent, level + 1);
            }
            out += nl + close + "]";
            return;
        }
        case Json::value_t::number_float: {
            const double v = j.get<double>();
            if (!std::isfinite(v)) {
                out += "null";
                return;
            }
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out += buf;
            return;
        }
        default:
            out += j.dump();
    }
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("io_error", "cannot write '" + path + "'");
    f << text;
    if (!f) throw Error("io_error", "failed writing '" + path + "'");
}

std::string ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error("io_error", "cannot create output directory '" + dir + "'");
    return dir;
}

std::string csv_num(double v) {
    if (!std::isfinite(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string csv_text(std::string s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::string format_json(const Json& doc, int indent) {
    std::string out;
    dump(doc, out, indent, 0);
    out += "\n";
    return out;
}

Json error_json(const std::string& kind, const std::string& message) {
    Json j = Json::object();
    j["schema_version"] = kReportSchema;
    Json e = Json::object();
    e["kind"] = kind;
    e["message"] = message;
    j["error"] = e;
    return j;
}

std::string benchmark_csv(const BenchmarkResult& result) {
    std::ostringstream os;
    os << "covariate,delta_eta_y2,delta_eta_d2,rho_j,delta_theta,theta_without,multiplier,"
          "implied_eta_y2,implied_eta_d2,bias_rho_j,bias_adversarial,error\n";
    for (const auto& row : result.rows) {
        auto head = [&] {
            os << csv_text(row.covariate) << ',';
            if (row.error.empty())
                os << csv_num(row.delta_eta_y2) << ',' << csv_num(row.delta_eta_d2) << ','
                   << csv_num(row.rho_j) << ',' << csv_num(row.delta_theta) << ','
                   << csv_num(row.theta_without) << ',';
            else
                os << ",,,,,";
        };
        if (row.implied.empty()) {
            head();
            os << ",,,,," << csv_text(row.error) << '\n';
            continue;
        }
        for (const auto& ib : row.implied) {
            head();
            os << csv_num(ib.multiplier) << ',' << csv_num(ib.eta_y2) << ',' << csv_num(ib.eta_d2)
               << ',' << csv_num(ib.bias_with_rho_j) << ',' << csv_num(ib.bias_adversarial) << ",\n";
        }
    }
    return os.str();
}

std::string coverage_summary_csv(const CoverageSummary& s) {
    std::ostringstream os;
    os << "metric,value\n";
    auto line = [&](const char* k, double v) { os << k << ',' << csv_num(v) << '\n'; };
    line("reps", s.reps);
    line("failures", s.failures);
    line("true_theta", s.true_theta);
    line("true_theta_s", s.true_theta_s);
    line("true_theta_minus", s.true_theta_minus);
    line("true_theta_plus", s.true_theta_plus);
    line("coverage_theta_s", s.coverage_theta_s);
    line("coverage_lower", s.coverage_lower);
    line("coverage_upper", s.coverage_upper);
    line("coverage_theta", s.coverage_theta);
    line("rmse_theta_s", s.rmse_theta_s);
    line("rmse_sigma2", s.rmse_sigma2);
    line("rmse_nu2", s.rmse_nu2);
    return os.str();
}

std::vector<std::string> cmd_analyze(const AnalysisConfig& config, const std::string& out_dir) {
    const Analysis a = run_analysis(config);
    const std::string path = (fs::path(ensure_dir(out_dir)) / "report.json").string();
    write_file(path, format_json(build_report(config, a)));
    return {path};
}

std::vector<std::string> cmd_contour(const AnalysisConfig& config, const std::string& out_dir) {
    const Analysis a = run_analysis(config);
    const auto& cs = config.contour;
    const ContourGrid grid = contour_grid(
        a.theta, a.sigma2, a.nu2, cs.rho, linear_axis(cs.eta_d2.min, cs.eta_d2.max, cs.eta_d2.count),
        linear_axis(cs.eta_y2.min, cs.eta_y2.max, cs.eta_y2.count), cs.quantity, cs.threshold, config.level);
    ensure_dir(out_dir);
    std::vector<std::string> written;
    const std::string csv = (fs::path(out_dir) / "contour.csv").string();
    write_file(csv, grid.to_csv());
    written.push_back(csv);
    if (cs.svg) {
        std::vector<PlotMarker> markers;
        if (config.benchmark && a.has_data) {
            const BenchmarkResult b = benchmark_covariates(a.data, a.functional, a.engine,
                                                           config.benchmark->covariates,
                                                           config.benchmark->multipliers);
            for (const auto& row : b.rows)
                for (const auto& ib : row.implied) {
                    std::string label = row.covariate;
                    if (ib.multiplier != 1.0) {
                        char buf[32];
                        std::snprintf(buf, sizeof buf, "%gx ", ib.multiplier);
                        label = buf + label;
                    }
                    markers.push_back({label, ib.eta_d2, ib.eta_y2});
                }
        }
        for (const auto& p : config.scenarios)
            markers.push_back({p.label.empty() ? "scenario" : p.label, p.eta_d2(), p.eta_y2()});
        const std::string svg = (fs::path(out_dir) / "contour.svg").string();
        write_file(svg, render_contour_svg(grid, markers));
        written.push_back(svg);
    }
    return written;
}

std::vector<std::string> cmd_benchmark(const AnalysisConfig& config, const std::string& out_dir) {
    if (!config.benchmark) bad("benchmark command needs a benchmark section");
    if (config.source == AnalysisConfig::Source::Components) bad("benchmark needs data, not components");
    AnalysisConfig c = config;
    set_num_threads(config.threads);
    Analysis a;
    if (c.source == AnalysisConfig::Source::Csv) {
        a.data = load_csv(c.data_path, c.schema);
        a.functional = *c.functional;
    } else {
        SynthResult sim = generate(*c.synthetic);
        a.data = std::move(sim.data);
        a.functional = c.functional ? *c.functional : sim.oracle.functional;
    }
    if (a.functional.fd_step == 0.0)
        a.functional.fd_step = a.functional.kind == FunctionalKind::ACD ? 0.01 * sd(a.data.treatment) : 0.01;
    const bool plm = a.functional.kind == FunctionalKind::PLMCoefficient;
    EngineConfig e = c.engine;
    e.outcome_learners = build_learners(c.learners.contains("outcome") ? c.learners.at("outcome") : Json(), true, plm, e.seed);
    e.treatment_learners = build_learners(c.learners.contains("treatment") ? c.learners.at("treatment") : Json(), false, plm, e.seed);
    const BenchmarkResult b =
        benchmark_covariates(a.data, a.functional, e, c.benchmark->covariates, c.benchmark->multipliers);
    const std::string path = (fs::path(ensure_dir(out_dir)) / "benchmark.csv").string();
    write_file(path, benchmark_csv(b));
    return {path};
}

std::vector<std::string> cmd_simulate(const AnalysisConfig& config, const std::string& out_dir) {
    if (!config.simulate) bad("simulate command needs a simulate section");
    set_num_threads(config.threads);
    SimulateSpec sim = *config.simulate;
    const bool plm = sim.synth.dgp == SynthDgp::PlmGaussian;
    sim.coverage.engine = config.engine;
    sim.coverage.engine.outcome_learners = build_learners(
        config.learners.contains("outcome") ? config.learners.at("outcome") : Json(), true, plm, config.engine.seed);
    sim.coverage.engine.treatment_learners = build_learners(
        config.learners.contains("treatment") ? config.learners.at("treatment") : Json(), false, plm,
        config.engine.seed);
    const CoverageSummary s = coverage_experiment(sim.synth, sim.coverage);
    ensure_dir(out_dir);
    const std::string summary = (fs::path(out_dir) / "coverage.csv").string();
    write_file(summary, coverage_summary_csv(s));
    const std::string reps = (fs::path(out_dir) / "coverage_reps.csv").string();
    write_file(reps, s.to_csv());
    for (const auto& w : s.warnings) std::cerr << "warning: " << w << '\n';
    return {summary, reps};
}

int run_cli(int argc, char** argv) {
    CLI::App app{"Omitted-variable-bias sensitivity analysis for debiased machine learning"};
    app.require_subcommand(1);
    std::string config_path, out_dir = ".";
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    for (const char* name : {"analyze", "contour", "benchmark", "simulate"}) {
        auto* sub = app.add_subcommand(name, std::string("run ") + name);
        sub->add_option("--config", config_path, "JSON config file")->required();
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed, "override the fold and simulation seed");
        sub->add_option("--threads", threads, "worker threads");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        AnalysisConfig config = load_config(config_path);
        apply_overrides(config, seed, threads);
        std::vector<std::string> written;
        if (cmd == "analyze") written = cmd_analyze(config, out_dir);
        else if (cmd == "contour") written = cmd_contour(config, out_dir);
        else if (cmd == "benchmark") written = cmd_benchmark(config, out_dir);
        else written = cmd_simulate(config, out_dir);
        for (const auto& w : written) std::cout << w << '\n';
        return 0;
    } catch (const std::exception& e) {
        const auto* err = dynamic_cast<const Error*>(&e);
        const std::string kind = err ? err->kind() : "internal";
        const std::string text = format_json(error_json(kind, e.what()));
        std::cerr << text;
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        if (!ec) {
            std::ofstream f((fs::path(out_dir) / "error.json").string());
            if (f) f << text;
        }
        return kind == "invalid_config" ? 2 : 1;
    }
}

}  // namespace ovb::cli
