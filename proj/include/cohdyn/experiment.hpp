#ifndef COHDYN_EXPERIMENT_HPP
#define COHDYN_EXPERIMENT_HPP

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cohdyn/classical.hpp"
#include "cohdyn/constraints.hpp"
#include "cohdyn/dynamics.hpp"
#include "cohdyn/fock.hpp"

namespace cohdyn {

// ---------------------------------------------------------------------------
// Configuration

enum class Scenario { Quantum, Coarse, Compare, BracketAudit, MomentsAudit, LimitScan };

inline const std::map<std::string, Scenario>& scenario_names()
{
    static const std::map<std::string, Scenario> names{
        {"quantum", Scenario::Quantum},         {"coarse", Scenario::Coarse},
        {"compare", Scenario::Compare},         {"bracket-audit", Scenario::BracketAudit},
        {"moments-audit", Scenario::MomentsAudit}, {"limit-scan", Scenario::LimitScan},
    };
    return names;
}

inline std::string to_string(Scenario s)
{
    for (const auto& [name, v] : scenario_names())
        if (v == s) return name;
    return "unknown";
}

/// Raised for malformed configs; `where` names the field or input line.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string where, const std::string& msg)
        : std::runtime_error(where + ": " + msg), where_(std::move(where))
    {
    }
    const std::string& where() const { return where_; }

private:
    std::string where_;
};

struct OscillatorSpec {
    double mass = 1.0;
    std::vector<double> potential;
    friend bool operator==(const OscillatorSpec&, const OscillatorSpec&) = default;
};

/// Default audit tolerances; any of them can be overridden per config.
inline const std::map<std::string, double>& default_tolerances()
{
    static const std::map<std::string, double> t{
        {"bracket", 1e-8},   // first-class brackets on coherent states
        {"closed_form", 1e-9}, // chain-rule brackets vs covariance identities
        {"moments", 1e-8},   // relative error of coherent central moments
        {"slope", 0.05},     // |fitted slope - expected_slope| in limit-scan
        {"norm", 1e-9},      // norm drift along quantum runs
    };
    return t;
}

struct ExperimentConfig {
    Scenario scenario = Scenario::Quantum;
    std::vector<OscillatorSpec> oscillators;
    std::vector<CoherentPoint> initial;
    std::size_t basis_dimension = 128;
    double dt = 1e-3;
    double total_time = 1.0;
    std::string output_dir = "out";
    std::uint64_t seed = 1;
    std::size_t probes = 100;
    double max_alpha = 2.0;
    int moment_order = 6;
    std::vector<double> mass_factors;
    double interval = 1.0;
    FrequencyConvention frequency_convention = FrequencyConvention::HeldFixed;
    std::optional<double> expected_slope;
    /// Audit threshold on max |q_quantum - q_coarse| in compare runs.
    std::optional<double> max_divergence;
    std::vector<std::string> svg_channels;
    std::map<std::string, double> tolerances;

    double tolerance(const std::string& key) const
    {
        auto it = tolerances.find(key);
        return it != tolerances.end() ? it->second : default_tolerances().at(key);
    }

    std::size_t steps() const { return static_cast<std::size_t>(std::llround(total_time / dt)); }

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

namespace detail {

inline double finite_number(const nlohmann::json& j, const std::string& field)
{
    if (!j.is_number()) throw ConfigError("field '" + field + "'", "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) throw ConfigError("field '" + field + "'", "must be finite");
    return v;
}

inline std::size_t count(const nlohmann::json& j, const std::string& field)
{
    if (!j.is_number_integer() || j.get<long long>() < 0)
        throw ConfigError("field '" + field + "'", "expected a non-negative integer");
    return j.get<std::size_t>();
}

inline std::string line_of_offset(const std::string& text, std::size_t offset)
{
    const auto end = std::min(offset, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(end), '\n');
    return "line " + std::to_string(line);
}

} // namespace detail

/// Builds a config from parsed JSON. Unknown keys are rejected.
inline ExperimentConfig config_from_json(const nlohmann::json& j)
{
    using detail::count;
    using detail::finite_number;
    if (!j.is_object()) throw ConfigError("config", "top level must be a JSON object");
    static const std::vector<std::string> known{"scenario",     "oscillators",   "initial",        "basis_dimension",
                                                "dt",           "total_time",    "output_dir",     "seed",
                                                "probes",       "max_alpha",     "moment_order",   "mass_factors",
                                                "interval",     "frequency_convention", "expected_slope",
                                                "max_divergence", "svg_channels", "tolerances"};
    for (const auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ConfigError("field '" + key + "'", "unknown field");

    ExperimentConfig c;
    if (!j.contains("scenario") || !j["scenario"].is_string())
        throw ConfigError("field 'scenario'", "required string");
    const auto sname = j["scenario"].get<std::string>();
    auto sit = scenario_names().find(sname);
    if (sit == scenario_names().end()) throw ConfigError("field 'scenario'", "unknown scenario '" + sname + "'");
    c.scenario = sit->second;

    if (!j.contains("oscillators") || !j["oscillators"].is_array() || j["oscillators"].empty())
        throw ConfigError("field 'oscillators'", "required non-empty array");
    for (std::size_t i = 0; i < j["oscillators"].size(); ++i) {
        const auto& o = j["oscillators"][i];
        const std::string base = "oscillators[" + std::to_string(i) + "]";
        if (!o.is_object()) throw ConfigError("field '" + base + "'", "expected an object");
        for (const auto& [key, _] : o.items())
            if (key != "mass" && key != "potential") throw ConfigError("field '" + base + "." + key + "'", "unknown field");
        OscillatorSpec spec;
        if (!o.contains("mass")) throw ConfigError("field '" + base + ".mass'", "required");
        spec.mass = finite_number(o["mass"], base + ".mass");
        if (!(spec.mass > 0.0)) throw ConfigError("field '" + base + ".mass'", "must be positive");
        if (!o.contains("potential") || !o["potential"].is_array())
            throw ConfigError("field '" + base + ".potential'", "required array of coefficients");
        for (std::size_t k = 0; k < o["potential"].size(); ++k)
            spec.potential.push_back(finite_number(o["potential"][k], base + ".potential[" + std::to_string(k) + "]"));
        try {
            PolynomialPotential check{Polynomial(spec.potential)};
        } catch (const std::invalid_argument& e) {
            throw ConfigError("field '" + base + ".potential'", e.what());
        }
        c.oscillators.push_back(std::move(spec));
    }

    if (j.contains("initial")) {
        if (!j["initial"].is_array()) throw ConfigError("field 'initial'", "expected an array");
        for (std::size_t i = 0; i < j["initial"].size(); ++i) {
            const auto& pt = j["initial"][i];
            const std::string base = "initial[" + std::to_string(i) + "]";
            if (!pt.is_object() || !pt.contains("q") || !pt.contains("p"))
                throw ConfigError("field '" + base + "'", "expected {\"q\": .., \"p\": ..}");
            c.initial.push_back({finite_number(pt["q"], base + ".q"), finite_number(pt["p"], base + ".p")});
        }
    }
    if (j.contains("basis_dimension")) c.basis_dimension = count(j["basis_dimension"], "basis_dimension");
    if (j.contains("dt")) c.dt = finite_number(j["dt"], "dt");
    if (j.contains("total_time")) c.total_time = finite_number(j["total_time"], "total_time");
    if (j.contains("output_dir")) {
        if (!j["output_dir"].is_string()) throw ConfigError("field 'output_dir'", "expected a string");
        c.output_dir = j["output_dir"].get<std::string>();
    }
    if (j.contains("seed")) c.seed = count(j["seed"], "seed");
    if (j.contains("probes")) c.probes = count(j["probes"], "probes");
    if (j.contains("max_alpha")) c.max_alpha = finite_number(j["max_alpha"], "max_alpha");
    if (j.contains("moment_order")) c.moment_order = static_cast<int>(count(j["moment_order"], "moment_order"));
    if (j.contains("mass_factors")) {
        if (!j["mass_factors"].is_array()) throw ConfigError("field 'mass_factors'", "expected an array");
        for (std::size_t i = 0; i < j["mass_factors"].size(); ++i)
            c.mass_factors.push_back(finite_number(j["mass_factors"][i], "mass_factors[" + std::to_string(i) + "]"));
    }
    if (j.contains("interval")) c.interval = finite_number(j["interval"], "interval");
    if (j.contains("frequency_convention")) {
        const auto& fc = j["frequency_convention"];
        if (fc == "fixed")
            c.frequency_convention = FrequencyConvention::HeldFixed;
        else if (fc == "rederived")
            c.frequency_convention = FrequencyConvention::Rederived;
        else
            throw ConfigError("field 'frequency_convention'", "expected \"fixed\" or \"rederived\"");
    }
    if (j.contains("expected_slope")) c.expected_slope = finite_number(j["expected_slope"], "expected_slope");
    if (j.contains("max_divergence")) c.max_divergence = finite_number(j["max_divergence"], "max_divergence");
    if (j.contains("svg_channels")) {
        if (!j["svg_channels"].is_array()) throw ConfigError("field 'svg_channels'", "expected an array of names");
        for (const auto& ch : j["svg_channels"]) {
            if (!ch.is_string()) throw ConfigError("field 'svg_channels'", "expected an array of names");
            c.svg_channels.push_back(ch.get<std::string>());
        }
        if (c.svg_channels.empty()) throw ConfigError("field 'svg_channels'", "channel list is empty");
    }
    if (j.contains("tolerances")) {
        if (!j["tolerances"].is_object()) throw ConfigError("field 'tolerances'", "expected an object");
        for (const auto& [key, val] : j["tolerances"].items()) {
            if (!default_tolerances().count(key))
                throw ConfigError("field 'tolerances." + key + "'", "unknown tolerance");
            const double t = finite_number(val, "tolerances." + key);
            if (!(t >= 0.0)) throw ConfigError("field 'tolerances." + key + "'", "must be non-negative");
            c.tolerances[key] = t;
        }
    }
    return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c)
{
    nlohmann::json j;
    j["scenario"] = to_string(c.scenario);
    j["oscillators"] = nlohmann::json::array();
    for (const auto& o : c.oscillators) j["oscillators"].push_back({{"mass", o.mass}, {"potential", o.potential}});
    j["initial"] = nlohmann::json::array();
    for (const auto& pt : c.initial) j["initial"].push_back({{"q", pt.q}, {"p", pt.p}});
    j["basis_dimension"] = c.basis_dimension;
    j["dt"] = c.dt;
    j["total_time"] = c.total_time;
    j["output_dir"] = c.output_dir;
    j["seed"] = c.seed;
    j["probes"] = c.probes;
    j["max_alpha"] = c.max_alpha;
    j["moment_order"] = c.moment_order;
    j["mass_factors"] = c.mass_factors;
    j["interval"] = c.interval;
    j["frequency_convention"] = c.frequency_convention == FrequencyConvention::HeldFixed ? "fixed" : "rederived";
    if (c.expected_slope) j["expected_slope"] = *c.expected_slope;
    if (c.max_divergence) j["max_divergence"] = *c.max_divergence;
    if (!c.svg_channels.empty()) j["svg_channels"] = c.svg_channels;
    j["tolerances"] = c.tolerances;
    return j;
}

/// Semantic checks that depend on several fields at once.
inline void validate(const ExperimentConfig& c)
{
    const bool dynamic =
        c.scenario == Scenario::Quantum || c.scenario == Scenario::Coarse || c.scenario == Scenario::Compare;
    if (c.basis_dimension < 4) throw ConfigError("field 'basis_dimension'", "must be at least 4");
    if (dynamic) {
        if (c.oscillators.size() != 1)
            throw ConfigError("field 'oscillators'", "dynamic scenarios take exactly one oscillator");
        if (c.initial.size() != 1) throw ConfigError("field 'initial'", "dynamic scenarios take exactly one point");
        if (c.basis_dimension < 16) throw ConfigError("field 'basis_dimension'", "must be at least 16 for dynamics");
        if (!(c.dt > 0.0)) throw ConfigError("field 'dt'", "must be positive");
        if (!(c.total_time > 0.0)) throw ConfigError("field 'total_time'", "must be positive");
        const auto& o = c.oscillators.front();
        const auto params = OscillatorParams::from_potential(o.mass, PolynomialPotential(Polynomial(o.potential)));
        if (c.dt * params.frequency() > 0.1)
            throw ConfigError("field 'dt'", "dt * omega = " + format_double(c.dt * params.frequency()) + " exceeds 0.1");
    }
    if (c.scenario == Scenario::LimitScan) {
        if (c.mass_factors.empty()) throw ConfigError("field 'mass_factors'", "required for limit-scan");
        for (std::size_t i = 0; i < c.mass_factors.size(); ++i)
            if (!(c.mass_factors[i] >= 1.0) || (i > 0 && !(c.mass_factors[i] > c.mass_factors[i - 1])))
                throw ConfigError("field 'mass_factors'", "must be >= 1 and strictly increasing");
        if (!(c.interval > 0.0)) throw ConfigError("field 'interval'", "must be positive");
    }
    if (c.scenario == Scenario::MomentsAudit && c.moment_order < 1)
        throw ConfigError("field 'moment_order'", "must be at least 1");
    if (!(c.max_alpha > 0.0)) throw ConfigError("field 'max_alpha'", "must be positive");
    if (!c.svg_channels.empty()) {
        std::vector<std::string> known{"time", "q", "p", "energy"};
        if (c.scenario == Scenario::Quantum || c.scenario == Scenario::Compare)
            known.insert(known.end(), {"varQ", "varP", "covQP", "norm_error", "tail_mass"});
        else if (c.scenario != Scenario::Coarse)
            throw ConfigError("field 'svg_channels'", "charts are only available for dynamic scenarios");
        for (const auto& ch : c.svg_channels)
            if (std::find(known.begin(), known.end(), ch) == known.end())
                throw ConfigError("field 'svg_channels'", "unknown channel '" + ch + "'");
    }
}

inline ExperimentConfig parse_config(const std::string& text)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(detail::line_of_offset(text, e.byte), e.what());
    }
    auto c = config_from_json(j);
    validate(c);
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string(), "cannot open config file");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

// ---------------------------------------------------------------------------
// Divergence between quantum and coarse trajectories

struct DivergenceReport {
    std::vector<double> time;
    std::vector<double> dq;
    std::vector<double> dp;
    double max_dq = 0.0;
    double time_of_max_dq = 0.0;
    double max_dp = 0.0;
    double time_of_max_dp = 0.0;
    /// max varQ / min varQ along the quantum series.
    double dispersion_growth = 1.0;

    nlohmann::json summary() const
    {
        return {{"max_dq", max_dq},
                {"time_of_max_dq", time_of_max_dq},
                {"max_dp", max_dp},
                {"time_of_max_dp", time_of_max_dp},
                {"dispersion_growth", dispersion_growth}};
    }
};

inline DivergenceReport compare_trajectories(const TimeSeries& a, const PhaseTrajectory& b)
{
    if (a.size() != b.size())
        throw std::invalid_argument("compare_trajectories: grids differ in length (" + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()) + ")");
    DivergenceReport r;
    double vmin = INFINITY, vmax = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& s = a.samples[i];
        if (std::abs(s.time - b.time[i]) > 1e-12 * std::max(1.0, std::abs(s.time)))
            throw std::invalid_argument("compare_trajectories: time grids differ at sample " + std::to_string(i));
        const double dq = std::abs(s.q - b.q[i]);
        const double dp = std::abs(s.p - b.p[i]);
        r.time.push_back(s.time);
        r.dq.push_back(dq);
        r.dp.push_back(dp);
        if (dq > r.max_dq) {
            r.max_dq = dq;
            r.time_of_max_dq = s.time;
        }
        if (dp > r.max_dp) {
            r.max_dp = dp;
            r.time_of_max_dp = s.time;
        }
        vmin = std::min(vmin, s.varQ);
        vmax = std::max(vmax, s.varQ);
    }
    if (!a.samples.empty() && vmin > 0.0) r.dispersion_growth = vmax / vmin;
    return r;
}

// ---------------------------------------------------------------------------
// SVG line charts

/// Named columns sharing one time axis.
struct ChannelTable {
    std::map<std::string, std::vector<double>> columns;
};

inline ChannelTable channels_of(const TimeSeries& ts)
{
    ChannelTable t;
    for (const auto& s : ts.samples) {
        t.columns["time"].push_back(s.time);
        t.columns["q"].push_back(s.q);
        t.columns["p"].push_back(s.p);
        t.columns["varQ"].push_back(s.varQ);
        t.columns["varP"].push_back(s.varP);
        t.columns["covQP"].push_back(s.covQP);
        t.columns["energy"].push_back(s.energy);
        t.columns["norm_error"].push_back(s.norm_error);
        t.columns["tail_mass"].push_back(s.tail_mass);
    }
    return t;
}

inline ChannelTable channels_of(const PhaseTrajectory& tr)
{
    return {{{"time", tr.time}, {"q", tr.q}, {"p", tr.p}, {"energy", tr.energy}}};
}

/// Self-contained SVG 1.1 chart: one polyline per channel against
/// `x_channel` ("time" by default; "q" with channel "p" gives a phase portrait).
inline std::string emit_svg(const ChannelTable& table, const std::vector<std::string>& channels,
                            const std::string& x_channel = "time")
{
    if (channels.empty()) throw std::invalid_argument("emit_svg: no channels requested");
    auto column = [&](const std::string& name) -> const std::vector<double>& {
        auto it = table.columns.find(name);
        if (it == table.columns.end()) throw std::invalid_argument("emit_svg: unknown channel '" + name + "'");
        return it->second;
    };
    const auto& xs = column(x_channel);
    if (xs.empty()) throw std::invalid_argument("emit_svg: empty series");

    double xmin = *std::min_element(xs.begin(), xs.end()), xmax = *std::max_element(xs.begin(), xs.end());
    double ymin = INFINITY, ymax = -INFINITY;
    for (const auto& ch : channels) {
        const auto& ys = column(ch);
        if (ys.size() != xs.size()) throw std::invalid_argument("emit_svg: channel '" + ch + "' has wrong length");
        ymin = std::min(ymin, *std::min_element(ys.begin(), ys.end()));
        ymax = std::max(ymax, *std::max_element(ys.begin(), ys.end()));
    }
    const double data_ymin = ymin, data_ymax = ymax;
    if (xmax == xmin) xmax = xmin + 1.0;
    // Rounding-level spread counts as flat and is drawn on the midline.
    if (ymax - ymin <= 1e-9 * std::max(1.0, std::max(std::abs(ymin), std::abs(ymax)))) {
        const double mid = 0.5 * (ymin + ymax);
        ymin = mid - 0.5;
        ymax = mid + 0.5;
    }

    constexpr double W = 640, H = 400, L = 70, R = 20, T = 20, B = 50;
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3f", v);
        return std::string(buf);
    };
    auto label = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6g", v);
        return std::string(buf);
    };
    auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << num(W) << "\" height=\"" << num(H)
       << "\">\n"
       << "<rect x=\"0\" y=\"0\" width=\"" << num(W) << "\" height=\"" << num(H) << "\" fill=\"white\"/>\n"
       << "<line x1=\"" << num(L) << "\" y1=\"" << num(H - B) << "\" x2=\"" << num(W - R) << "\" y2=\"" << num(H - B)
       << "\" stroke=\"black\"/>\n"
       << "<line x1=\"" << num(L) << "\" y1=\"" << num(T) << "\" x2=\"" << num(L) << "\" y2=\"" << num(H - B)
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << num((L + W - R) / 2) << "\" y=\"" << num(H - 10) << "\" text-anchor=\"middle\">" << x_channel
       << " [" << label(xmin) << ", " << label(xmax) << "]</text>\n";
    std::string ylabel;
    for (std::size_t i = 0; i < channels.size(); ++i) ylabel += (i ? ", " : "") + channels[i];
    os << "<text x=\"15\" y=\"" << num((T + H - B) / 2) << "\" transform=\"rotate(-90 15 " << num((T + H - B) / 2)
       << ")\" text-anchor=\"middle\">" << ylabel << " [" << label(data_ymin) << ", " << label(data_ymax)
       << "]</text>\n";
    for (std::size_t c = 0; c < channels.size(); ++c) {
        const auto& ys = column(channels[c]);
        os << "<polyline fill=\"none\" stroke=\"" << palette[c % 6] << "\" data-channel=\"" << channels[c]
           << "\" points=\"";
        for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? " " : "") << num(px(xs[i])) << ',' << num(py(ys[i]));
        os << "\"/>\n";
    }
    os << "</svg>\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Running scenarios

enum ExitCode : int { kExitOk = 0, kExitAuditFailed = 1, kExitInvalidConfig = 2, kExitTruncated = 3 };

enum class LogLevel { Error, Warn, Info, Debug };

struct RunResult {
    int exit_code = kExitOk;
    std::vector<std::filesystem::path> artifacts;
    nlohmann::json summary;
};

/// Writes to a temporary sibling and renames over the target.
inline void write_atomic(const std::filesystem::path& path, const std::string& content)
{
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << content;
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

namespace detail {

class ScenarioRun {
public:
    ScenarioRun(const ExperimentConfig& c, std::filesystem::path out, LogLevel level, std::ostream& log)
        : c_(c), out_(std::move(out)), level_(level), log_(log)
    {
    }

    RunResult run()
    {
        std::filesystem::create_directories(out_);
        summary_["scenario"] = to_string(c_.scenario);
        summary_["checks"] = nlohmann::json::array();
        try {
            switch (c_.scenario) {
            case Scenario::Quantum: quantum(); break;
            case Scenario::Coarse: coarse(); break;
            case Scenario::Compare: compare(); break;
            case Scenario::BracketAudit: bracket_audit_run(); break;
            case Scenario::MomentsAudit: moments_audit_run(); break;
            case Scenario::LimitScan: limit_scan_run(); break;
            }
        } catch (const UnderResolvedError& e) {
            info(LogLevel::Error, e.what());
            truncated_ = true;
            summary_["error"] = e.what();
        }
        int code = kExitOk;
        if (failed_) code = kExitAuditFailed;
        if (truncated_) code = kExitTruncated;
        summary_["partial"] = truncated_;
        summary_["status"] = truncated_ ? "truncated" : (failed_ ? "audit_failed" : "ok");
        write("summary.json", summary_.dump(2) + "\n");
        return {code, artifacts_, summary_};
    }

private:
    void info(LogLevel l, const std::string& msg)
    {
        if (l <= level_) log_ << "[cohdyn] " << msg << '\n';
    }

    void write(const std::string& name, const std::string& content)
    {
        const auto path = out_ / name;
        write_atomic(path, content);
        artifacts_.push_back(path);
        info(LogLevel::Info, "wrote " + path.string());
    }

    void check(const std::string& name, double value, double tolerance)
    {
        const bool ok = std::abs(value) <= tolerance;
        summary_["checks"].push_back({{"name", name}, {"value", value}, {"tolerance", tolerance}, {"passed", ok}});
        if (!ok) {
            failed_ = true;
            info(LogLevel::Warn, "check '" + name + "' failed: " + format_double(value) + " > " + format_double(tolerance));
        }
    }

    Oscillator oscillator(std::size_t i = 0) const
    {
        const auto& o = c_.oscillators.at(i);
        Warnings w;
        auto osc = Oscillator::make(c_.basis_dimension, o.mass, PolynomialPotential(Polynomial(o.potential)), &w);
        for (const auto& msg : w) const_cast<ScenarioRun*>(this)->info(LogLevel::Warn, msg);
        return osc;
    }

    void svg(const std::string& name, const ChannelTable& table)
    {
        if (c_.svg_channels.empty()) return;
        write(name, emit_svg(table, c_.svg_channels));
    }

    TimeSeries quantum_series(const Oscillator& osc)
    {
        auto ts = evolve_schrodinger(osc.coherent(c_.initial.front()), osc, c_.dt, c_.steps());
        if (!ts.complete()) {
            truncated_ = true;
            summary_["breach_step"] = *ts.breach_step;
            info(LogLevel::Error, "tail mass breach at step " + std::to_string(*ts.breach_step));
        }
        double worst_norm = 0.0, max_var = 0.0;
        for (const auto& s : ts.samples) {
            worst_norm = std::max(worst_norm, s.norm_error);
            max_var = std::max(max_var, s.varQ);
        }
        summary_["quantum"] = {{"samples", ts.size()}, {"max_varQ", max_var}, {"max_norm_error", worst_norm}};
        check("norm_error", worst_norm, c_.tolerance("norm"));
        return ts;
    }

    PhaseTrajectory coarse_trajectory(const Oscillator& osc)
    {
        const auto h = effective_hamiltonian(osc.potential, osc.params);
        auto tr = leapfrog_trajectory(h, c_.initial.front(), c_.dt, c_.steps());
        summary_["coarse"] = {{"samples", tr.size()},
                              {"relative_energy_drift", tr.relative_energy_drift()},
                              {"dropped_constant", h.dropped_constant},
                              {"effective_potential", smooth_potential(osc.potential.polynomial(), osc.params.sigma2_q()).coefficients()}};
        return tr;
    }

    std::string csv(const std::vector<ObservableSample>& s)
    {
        std::ostringstream os;
        write_csv(os, s);
        return os.str();
    }

    void quantum()
    {
        const auto osc = oscillator();
        const auto ts = quantum_series(osc);
        write("timeseries.csv", csv(ts.samples));
        svg("timeseries.svg", channels_of(ts));
    }

    void coarse()
    {
        const auto osc = oscillator();
        const auto tr = coarse_trajectory(osc);
        write("trajectory.csv", csv(as_samples(tr, osc.params)));
        svg("trajectory.svg", channels_of(tr));
    }

    void compare()
    {
        const auto osc = oscillator();
        const auto ts = quantum_series(osc);
        auto tr = coarse_trajectory(osc);
        write("quantum.csv", csv(ts.samples));
        write("coarse.csv", csv(as_samples(tr, osc.params)));
        if (tr.size() > ts.size()) {
            tr.time.resize(ts.size());
            tr.q.resize(ts.size());
            tr.p.resize(ts.size());
            tr.energy.resize(ts.size());
        }
        const auto rep = compare_trajectories(ts, tr);
        std::ostringstream os;
        os << "time,dq,dp\n";
        for (std::size_t i = 0; i < rep.time.size(); ++i)
            os << format_double(rep.time[i]) << ',' << format_double(rep.dq[i]) << ',' << format_double(rep.dp[i]) << '\n';
        write("divergence.csv", os.str());
        summary_["divergence"] = rep.summary();
        if (c_.max_divergence) check("max_dq", rep.max_dq, *c_.max_divergence);
        svg("quantum.svg", channels_of(ts));
    }

    std::vector<CoherentPoint> coherent_probes(const OscillatorParams& params, std::mt19937_64& rng)
    {
        std::vector<CoherentPoint> pts;
        for (std::size_t i = 0; i < c_.probes; ++i) pts.push_back(random_coherent_point(params, c_.max_alpha, rng));
        return pts;
    }

    void residual_csv(const std::string& name, const std::map<std::string, AuditReport>& reports)
    {
        std::ostringstream os;
        os << "oscillator,check,state,residual\n";
        for (const auto& [osc, rep] : reports)
            for (const auto& [chk, rows] : rep.residuals)
                for (const auto& [label, v] : rows) os << osc << ',' << chk << ',' << label << ',' << format_double(v) << '\n';
        write(name, os.str());
    }

    void bracket_audit_run()
    {
        std::map<std::string, AuditReport> reports;
        nlohmann::json audits;
        for (std::size_t i = 0; i < c_.oscillators.size(); ++i) {
            const auto osc = oscillator(i);
            const auto ops = make_operator_table(osc, 4);
            std::mt19937_64 rng(c_.seed + i);
            const auto pts = coherent_probes(osc.params, rng);
            std::vector<PureState> off;
            for (std::size_t k = 0; k < c_.probes; ++k) off.push_back(random_state(c_.basis_dimension, c_.basis_dimension / 2, rng));
            const auto rep = bracket_audit(osc, ops, pts, off);
            const std::string key = "oscillator" + std::to_string(i);
            for (const char* chk : {"{f_q,f_p}", "{f_q,H}", "{f_p,H}"})
                check(key + ":" + chk, rep.max_abs(chk), c_.tolerance("bracket"));
            for (const char* chk : {"{f_q,f_p}-4cov", "{f_q,H}-(2/m)cov", "{f_p,H}+2cov(V',P)"})
                check(key + ":" + chk, rep.max_abs(chk), c_.tolerance("closed_form"));
            audits[key] = rep.to_json();
            reports[key] = rep;
        }
        summary_["audit"] = audits;
        residual_csv("residuals.csv", reports);
    }

    void moments_audit_run()
    {
        std::map<std::string, AuditReport> reports;
        nlohmann::json audits;
        for (std::size_t i = 0; i < c_.oscillators.size(); ++i) {
            const auto osc = oscillator(i);
            std::mt19937_64 rng(c_.seed + i);
            const auto rep = moments_audit(osc, c_.moment_order, coherent_probes(osc.params, rng));
            const std::string key = "oscillator" + std::to_string(i);
            for (const auto& [chk, _] : rep.residuals) {
                // Odd moments are absolute; scale by the matching Gaussian width.
                const int k = std::stoi(chk.substr(6));
                const double scale = k % 2 == 1 ? std::pow(osc.params.sigma2_q(), 0.5 * k) : 1.0;
                check(key + ":" + chk, rep.max_abs(chk) / scale, c_.tolerance("moments"));
            }
            audits[key] = rep.to_json();
            reports[key] = rep;
        }
        summary_["audit"] = audits;
        residual_csv("residuals.csv", reports);
    }

    void limit_scan_run()
    {
        const auto& o = c_.oscillators.front();
        const PolynomialPotential v{Polynomial(o.potential)};
        const auto rep = limit_scan(v, OscillatorParams::from_potential(o.mass, v), c_.mass_factors, c_.interval,
                                    c_.frequency_convention);
        const auto j = scaling_json(rep);
        summary_["scaling"] = j;
        write("scaling.json", j.dump(2) + "\n");
        std::ostringstream os;
        os << "mass,sup_difference\n";
        for (std::size_t i = 0; i < rep.masses.size(); ++i)
            os << format_double(rep.masses[i]) << ',' << format_double(rep.sup_difference[i]) << '\n';
        write("scaling.csv", os.str());
        bool monotone = true;
        for (std::size_t i = 1; i < rep.sup_difference.size(); ++i)
            monotone = monotone && rep.sup_difference[i] < rep.sup_difference[i - 1];
        check("monotone_decrease", monotone ? 0.0 : 1.0, 0.0);
        if (c_.expected_slope) check("fitted_slope", rep.fitted_slope - *c_.expected_slope, c_.tolerance("slope"));
    }

public:
    static nlohmann::json scaling_json(const ScalingReport& rep)
    {
        nlohmann::json sup = nlohmann::json::object();
        for (std::size_t i = 0; i < rep.masses.size(); ++i) sup[format_double(rep.masses[i])] = rep.sup_difference[i];
        return {{"sup_difference", sup},
                {"fitted_slope", rep.fitted_slope},
                {"frequency_convention", rep.convention == FrequencyConvention::HeldFixed ? "fixed" : "rederived"}};
    }

private:
    const ExperimentConfig& c_;
    std::filesystem::path out_;
    LogLevel level_;
    std::ostream& log_;
    nlohmann::json summary_;
    std::vector<std::filesystem::path> artifacts_;
    bool failed_ = false;
    bool truncated_ = false;
};

} // namespace detail

/// {mass -> sup_difference, fitted_slope}.
inline nlohmann::json to_json(const ScalingReport& rep) { return detail::ScenarioRun::scaling_json(rep); }

/// Runs one scenario, writing CSV + summary.json (and SVG when channels are
/// configured) into `out_dir` (defaults to the config's output_dir).
inline RunResult run_scenario(const ExperimentConfig& config, std::optional<std::filesystem::path> out_dir = {},
                              LogLevel level = LogLevel::Warn, std::ostream& log = std::cerr)
{
    validate(config);
    return detail::ScenarioRun(config, out_dir.value_or(config.output_dir), level, log).run();
}

} // namespace cohdyn

#endif
