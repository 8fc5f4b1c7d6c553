#pragma once

#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>  // nlohmann/json (vendor/)
#include <openssl/evp.h>

#include "angle.hpp"
#include "engine.hpp"
#include "errors.hpp"
#include "models.hpp"
#include "protocol.hpp"
#include "stats.hpp"
#include "version.hpp"

namespace bellfair::io
{
using json = nlohmann::json;

//---------------------------------------------------------------------------//
// RESOLVED CONFIGURATION
//---------------------------------------------------------------------------//
enum class RunMode
{
    run,
    chsh,
    sweep,
    control,
};

inline std::string_view to_string(RunMode m)
{
    switch (m)
    {
        case RunMode::run:
            return "run";
        case RunMode::chsh:
            return "chsh";
        case RunMode::sweep:
            return "sweep";
        case RunMode::control:
            break;
    }
    return "control";
}

//! A configuration document with every default filled in.
struct ResolvedConfig
{
    RunMode mode = RunMode::run;
    ExperimentConfig experiment;
    SweepPlan sweep;
    ChshAngles chsh_angles = ChshAngles::standard();
    std::vector<SettingPair> control_settings = default_control_settings();
    FairnessThresholds thresholds;
    std::string event_log;  //!< Per-trial log path for `run`; empty when off
};

inline constexpr std::uint64_t kDefaultPairs = 1'000'000;
inline constexpr std::size_t kDefaultSweepPoints = 16;

namespace detail
{
//! Reads keys from one JSON object and remembers which were used, so
//! leftovers can be reported as unknown.
class KeyReader
{
  public:
    KeyReader(json const& obj, std::string prefix)
        : obj_(obj), prefix_(std::move(prefix))
    {
        if (!obj_.is_object())
            throw ConfigError(prefix_.empty() ? "<document>" : trimmed_prefix(),
                              "expected an object");
    }

    std::string path(std::string_view key) const
    {
        return prefix_ + std::string(key);
    }

    bool has(std::string_view key) const { return obj_.contains(std::string(key)); }

    json const* raw(std::string_view key)
    {
        auto it = obj_.find(std::string(key));
        if (it == obj_.end())
            return nullptr;
        used_.insert(std::string(key));
        return &*it;
    }

    std::optional<double> number(std::string_view key)
    {
        json const* v = raw(key);
        if (!v)
            return std::nullopt;
        if (!v->is_number())
            throw ConfigError(path(key), "expected a number");
        double const d = v->get<double>();
        if (!std::isfinite(d))
            throw ConfigError(path(key), "must be finite");
        return d;
    }

    std::optional<std::uint64_t> count(std::string_view key)
    {
        json const* v = raw(key);
        if (!v)
            return std::nullopt;
        if (v->is_number_unsigned())
            return v->get<std::uint64_t>();
        if (v->is_number_integer())
            throw ConfigError(path(key), "must be non-negative");
        if (v->is_number_float())
        {
            double const d = v->get<double>();
            if (d >= 0 && d < 0x1.0p64 && std::floor(d) == d)
                return static_cast<std::uint64_t>(d);
        }
        throw ConfigError(path(key), "expected a non-negative integer");
    }

    std::optional<std::string> string(std::string_view key)
    {
        json const* v = raw(key);
        if (!v)
            return std::nullopt;
        if (!v->is_string())
            throw ConfigError(path(key), "expected a string");
        return v->get<std::string>();
    }

    //! Throws for the first key that was never read.
    void finish() const
    {
        for (auto it = obj_.begin(); it != obj_.end(); ++it)
        {
            if (!used_.count(it.key()))
                throw ConfigError(path(it.key()), "unknown key");
        }
    }

  private:
    std::string trimmed_prefix() const
    {
        return prefix_.substr(0, prefix_.size() - 1);
    }

    json const& obj_;
    std::string prefix_;
    std::set<std::string> used_;
};

//! A parameter that may appear at top level or inside its section object.
inline std::optional<double>
section_number(KeyReader& top, KeyReader* section, std::string_view key)
{
    std::optional<double> in_section = section ? section->number(key) : std::nullopt;
    std::optional<double> at_top = top.number(key);
    if (in_section && at_top)
        throw ConfigError(std::string(key),
                          "given both at top level and inside its section");
    return in_section ? in_section : at_top;
}

inline std::optional<std::string>
section_string(KeyReader& top, KeyReader* section, std::string_view key)
{
    std::optional<std::string> in_section = section ? section->string(key)
                                                    : std::nullopt;
    std::optional<std::string> at_top = top.string(key);
    if (in_section && at_top)
        throw ConfigError(std::string(key),
                          "given both at top level and inside its section");
    return in_section ? in_section : at_top;
}

inline RunMode parse_mode(std::string const& s)
{
    if (s == "run")
        return RunMode::run;
    if (s == "chsh")
        return RunMode::chsh;
    if (s == "sweep")
        return RunMode::sweep;
    if (s == "control")
        return RunMode::control;
    throw ConfigError("mode", "expected one of run, chsh, sweep, control");
}

inline PairCorrelation parse_correlation(std::string const& s)
{
    if (s == "perpendicular")
        return PairCorrelation::perpendicular;
    if (s == "parallel")
        return PairCorrelation::parallel;
    throw ConfigError("correlation", "expected perpendicular or parallel");
}

inline std::string_view correlation_name(PairCorrelation c)
{
    return c == PairCorrelation::perpendicular ? "perpendicular" : "parallel";
}

inline std::string_view source_kind_name(SourceKind k)
{
    switch (k)
    {
        case SourceKind::singlet:
            return "singlet";
        case SourceKind::ideal_prepared:
            return "ideal";
        case SourceKind::polarizer_filtered:
            break;
    }
    return "polarizer";
}

inline SourceModel parse_source(KeyReader& top)
{
    std::optional<KeyReader> section;
    std::string kind = "singlet";
    if (json const* v = top.raw("source"))
    {
        if (v->is_string())
            kind = v->get<std::string>();
        else if (v->is_object())
        {
            section.emplace(*v, "source.");
            kind = section->string("kind").value_or("singlet");
        }
        else
            throw ConfigError("source", "expected a kind name or an object");
    }
    KeyReader* sec = section ? &*section : nullptr;

    SourceModel src;
    std::optional<double> theta = section_number(top, sec, "theta_deg");
    src.correlation = parse_correlation(
        section_string(top, sec, "correlation").value_or("perpendicular"));
    if (kind == "singlet")
    {
        src.kind = SourceKind::singlet;
        if (theta)
            throw ConfigError("theta_deg", "not used by the singlet source");
    }
    else if (kind == "ideal" || kind == "polarizer")
    {
        src.kind = kind == "ideal" ? SourceKind::ideal_prepared
                                   : SourceKind::polarizer_filtered;
        if (!theta)
            throw ConfigError("theta_deg", "required by source kind " + kind);
        src.theta = PolAngle::from_degrees(*theta);
    }
    else
    {
        throw ConfigError("source", "expected one of singlet, ideal, polarizer");
    }
    if (sec)
        sec->finish();
    return src;
}

inline DetectionModel parse_detection(KeyReader& top)
{
    std::optional<KeyReader> section;
    std::string kind = "fair";
    if (json const* v = top.raw("detection"))
    {
        if (v->is_string())
            kind = v->get<std::string>();
        else if (v->is_object())
        {
            section.emplace(*v, "detection.");
            kind = section->string("kind").value_or("fair");
        }
        else
            throw ConfigError("detection", "expected a kind name or an object");
    }
    KeyReader* sec = section ? &*section : nullptr;

    std::optional<double> eta = section_number(top, sec, "eta");
    std::optional<double> tau = section_number(top, sec, "tau");
    std::optional<double> kappa = section_number(top, sec, "kappa");
    std::optional<double> flip = section_number(top, sec, "flip_prob");

    auto reject = [&kind](std::optional<double> const& v, char const* key) {
        if (v)
            throw ConfigError(key, "not used by detection kind " + kind);
    };

    DetectionModel model;
    if (kind == "fair")
    {
        reject(tau, "tau");
        reject(kappa, "kappa");
        reject(flip, "flip_prob");
        model = FairConstant{eta.value_or(1.0)};
    }
    else if (kind == "unfair_threshold")
    {
        reject(eta, "eta");
        reject(kappa, "kappa");
        reject(flip, "flip_prob");
        model = UnfairThreshold{tau.value_or(0.5)};
    }
    else if (kind == "unfair_power")
    {
        reject(eta, "eta");
        reject(tau, "tau");
        reject(flip, "flip_prob");
        model = UnfairPower{kappa.value_or(1.0)};
    }
    else if (kind == "independent_errors")
    {
        reject(tau, "tau");
        reject(kappa, "kappa");
        model = IndependentErrors{eta.value_or(1.0), flip.value_or(0.0)};
    }
    else
    {
        throw ConfigError("detection", "expected one of fair, unfair_threshold, "
                                       "unfair_power, independent_errors");
    }
    validate(model);
    if (sec)
        sec->finish();
    return model;
}

inline json angle_json(PolAngle a)
{
    return a.degrees();
}
}  // namespace detail

/*!
 * Parse and validate a configuration document (JSON).
 *
 * If `expected` is given (the CLI subcommand), a `mode` key in the document
 * must agree with it. Angles are read in degrees and canonicalized mod 180.
 */
inline ResolvedConfig parse_config(std::string_view text,
                                   std::optional<RunMode> expected = std::nullopt,
                                   std::uint64_t default_seed = 0)
{
    using detail::KeyReader;
    json doc;
    try
    {
        doc = json::parse(text.begin(), text.end());
    }
    catch (json::parse_error const& e)
    {
        throw ConfigError("<document>", e.what());
    }
    if (doc.is_null())
        doc = json::object();

    KeyReader top(doc, "");
    ResolvedConfig cfg;

    if (auto m = top.string("mode"))
    {
        cfg.mode = detail::parse_mode(*m);
        if (expected && *expected != cfg.mode)
            throw ConfigError("mode", "document is for '" + *m
                                          + "' but the command is '"
                                          + std::string(to_string(*expected)) + "'");
    }
    else if (expected)
    {
        cfg.mode = *expected;
    }

    ExperimentConfig& ex = cfg.experiment;
    ex.seed = top.count("seed").value_or(default_seed);
    std::uint64_t const shards = top.count("shards").value_or(1);
    if (shards < 1 || shards > 4096)
        throw ConfigError("shards", "must be in [1, 4096]");
    ex.shards = static_cast<std::uint32_t>(shards);
    ex.n_pairs = top.count("n_pairs").value_or(kDefaultPairs);
    if (ex.n_pairs < 1)
        throw ConfigError("n_pairs", "must be >= 1");
    ex.source = detail::parse_source(top);
    ex.detection = detail::parse_detection(top);

    std::optional<double> phi = top.number("phi_deg");
    std::optional<double> phi1 = top.number("phi1_deg");
    std::optional<double> phi2 = top.number("phi2_deg");
    ex.phi1 = PolAngle::from_degrees(phi1.value_or(phi.value_or(0)));
    ex.phi2 = PolAngle::from_degrees(phi2.value_or(phi.value_or(0)));

    // Sweep
    {
        std::size_t points = kDefaultSweepPoints;
        std::optional<double> sweep_phi;
        SweepPlan& plan = cfg.sweep;
        if (json const* v = top.raw("sweep"))
        {
            KeyReader s(*v, "sweep.");
            sweep_phi = s.number("phi_deg");
            if (auto p = s.count("points"))
            {
                if (*p < kMinSweepPoints || *p > 100'000)
                    throw ConfigError("sweep.points", "must be in [8, 100000]");
                points = static_cast<std::size_t>(*p);
            }
            plan.n_per_point = s.count("n_per_point").value_or(kDefaultPairs);
            if (plan.n_per_point < 1)
                throw ConfigError("sweep.n_per_point", "must be >= 1");
            std::string const mode = s.string("source_mode").value_or("ideal");
            if (mode == "ideal")
                plan.source_mode = SweepSourceMode::ideal_prepared;
            else if (mode == "polarizer")
                plan.source_mode = SweepSourceMode::polarizer_filtered;
            else
                throw ConfigError("sweep.source_mode", "expected ideal or polarizer");
            s.finish();
        }
        if (sweep_phi && phi)
            throw ConfigError("phi_deg", "given both at top level and in sweep");
        plan.phi = PolAngle::from_degrees(sweep_phi.value_or(phi.value_or(0)));
        plan.theta_grid = uniform_theta_grid(points);
        plan.base_config = ex;
    }

    if (json const* v = top.raw("chsh"))
    {
        KeyReader s(*v, "chsh.");
        ChshAngles& a = cfg.chsh_angles;
        if (auto x = s.number("a_deg"))
            a.a = PolAngle::from_degrees(*x);
        if (auto x = s.number("a_prime_deg"))
            a.a_prime = PolAngle::from_degrees(*x);
        if (auto x = s.number("b_deg"))
            a.b = PolAngle::from_degrees(*x);
        if (auto x = s.number("b_prime_deg"))
            a.b_prime = PolAngle::from_degrees(*x);
        s.finish();
    }

    if (json const* v = top.raw("control"))
    {
        KeyReader s(*v, "control.");
        if (json const* list = s.raw("settings_deg"))
        {
            if (!list->is_array() || list->empty())
                throw ConfigError("control.settings_deg",
                                  "expected a non-empty list of [phi1, phi2] pairs");
            cfg.control_settings.clear();
            for (auto const& pair : *list)
            {
                if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number()
                    || !pair[1].is_number())
                    throw ConfigError("control.settings_deg",
                                      "each entry must be [phi1_deg, phi2_deg]");
                cfg.control_settings.push_back(
                    {PolAngle::from_degrees(pair[0].get<double>()),
                     PolAngle::from_degrees(pair[1].get<double>())});
            }
        }
        s.finish();
    }

    if (json const* v = top.raw("thresholds"))
    {
        KeyReader s(*v, "thresholds.");
        FairnessThresholds& t = cfg.thresholds;
        t.detect_sigma = s.number("detect_sigma").value_or(t.detect_sigma);
        t.detect_p = s.number("detect_p").value_or(t.detect_p);
        t.fair_sigma = s.number("fair_sigma").value_or(t.fair_sigma);
        t.fair_p = s.number("fair_p").value_or(t.fair_p);
        s.finish();
        t.validate();
    }

    cfg.event_log = top.string("event_log").value_or("");
    top.finish();
    return cfg;
}

//! Command-line overrides; keeps the sweep's base experiment in step.
inline void set_seed(ResolvedConfig& cfg, std::uint64_t seed)
{
    cfg.experiment.seed = seed;
    cfg.sweep.base_config.seed = seed;
}

inline void set_shards(ResolvedConfig& cfg, std::uint32_t shards)
{
    if (shards < 1 || shards > 4096)
        throw ConfigError("shards", "must be in [1, 4096]");
    cfg.experiment.shards = shards;
    cfg.sweep.base_config.shards = shards;
}

//! Canonical form of a resolved configuration; parse_config accepts it back.
inline json to_json(ResolvedConfig const& cfg)
{
    using detail::angle_json;
    ExperimentConfig const& ex = cfg.experiment;
    json j;
    j["mode"] = to_string(cfg.mode);
    j["seed"] = ex.seed;
    j["shards"] = ex.shards;
    j["n_pairs"] = ex.n_pairs;

    json src;
    src["kind"] = detail::source_kind_name(ex.source.kind);
    src["correlation"] = detail::correlation_name(ex.source.correlation);
    if (ex.source.kind != SourceKind::singlet)
        src["theta_deg"] = angle_json(ex.source.theta);
    j["source"] = src;

    json det;
    det["kind"] = detection_kind_name(ex.detection);
    std::visit(
        [&det]<class M>(M const& d) {
            if constexpr (std::is_same_v<M, FairConstant>)
                det["eta"] = d.eta;
            else if constexpr (std::is_same_v<M, UnfairThreshold>)
                det["tau"] = d.tau;
            else if constexpr (std::is_same_v<M, UnfairPower>)
                det["kappa"] = d.kappa;
            else
            {
                det["eta"] = d.eta;
                det["flip_prob"] = d.flip_prob;
            }
        },
        ex.detection);
    j["detection"] = det;

    j["phi1_deg"] = angle_json(ex.phi1);
    j["phi2_deg"] = angle_json(ex.phi2);

    j["sweep"] = {
        {"phi_deg", angle_json(cfg.sweep.phi)},
        {"points", cfg.sweep.theta_grid.size()},
        {"n_per_point", cfg.sweep.n_per_point},
        {"source_mode", cfg.sweep.source_mode == SweepSourceMode::ideal_prepared
                            ? "ideal"
                            : "polarizer"},
    };
    j["chsh"] = {
        {"a_deg", angle_json(cfg.chsh_angles.a)},
        {"a_prime_deg", angle_json(cfg.chsh_angles.a_prime)},
        {"b_deg", angle_json(cfg.chsh_angles.b)},
        {"b_prime_deg", angle_json(cfg.chsh_angles.b_prime)},
    };
    json settings = json::array();
    for (auto const& s : cfg.control_settings)
        settings.push_back({angle_json(s.phi1), angle_json(s.phi2)});
    j["control"] = {{"settings_deg", settings}};
    j["thresholds"] = {
        {"detect_sigma", cfg.thresholds.detect_sigma},
        {"detect_p", cfg.thresholds.detect_p},
        {"fair_sigma", cfg.thresholds.fair_sigma},
        {"fair_p", cfg.thresholds.fair_p},
    };
    if (!cfg.event_log.empty())
        j["event_log"] = cfg.event_log;
    return j;
}

//---------------------------------------------------------------------------//
// MANIFEST
//---------------------------------------------------------------------------//
struct RunManifest
{
    std::string config_digest;  //!< SHA-256 of the canonical resolved config
    std::string tool_version = kVersion;
    std::uint64_t seed = 0;
    std::uint32_t shard_count = 1;
    std::string timestamp;  //!< UTC, ISO 8601
};

inline std::string sha256_hex(std::string_view data)
{
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr)
        != 1)
        throw std::runtime_error("SHA-256 digest failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i)
    {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xf]);
    }
    return out;
}

inline std::string config_digest(ResolvedConfig const& cfg)
{
    // nlohmann::json objects are key-sorted, so dump() is canonical
    return sha256_hex(to_json(cfg).dump());
}

inline std::string utc_timestamp(std::chrono::system_clock::time_point t)
{
    std::time_t const tt = std::chrono::system_clock::to_time_t(t);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline RunManifest make_manifest(ResolvedConfig const& cfg,
                                 std::chrono::system_clock::time_point now
                                 = std::chrono::system_clock::now())
{
    RunManifest m;
    m.config_digest = config_digest(cfg);
    m.seed = cfg.experiment.seed;
    m.shard_count = cfg.experiment.shards;
    m.timestamp = utc_timestamp(now);
    return m;
}

inline json to_json(RunManifest const& m)
{
    return {
        {"record", "manifest"},
        {"config_digest", m.config_digest},
        {"tool_version", m.tool_version},
        {"seed", m.seed},
        {"shard_count", m.shard_count},
        {"timestamp", m.timestamp},
        {"substream_convention",
         "trial i of a batch with seed s draws from SplitMix64 seeded with "
         "derive(s, trial, i); sweep point, CHSH setting and control point j "
         "use batch seed derive(seed, domain, j)"},
    };
}

//---------------------------------------------------------------------------//
// RESULT EMISSION
//---------------------------------------------------------------------------//
enum class Format
{
    csv,
    json_lines,
};

inline Format parse_format(std::string_view s)
{
    if (s == "csv")
        return Format::csv;
    if (s == "json-lines" || s == "jsonl")
        return Format::json_lines;
    throw ConfigError("format", "expected csv or json-lines");
}

//! Real number with 9 significant digits.
inline std::string format_real(double x)
{
    if (std::isnan(x))
        return "nan";
    if (std::isinf(x))
        return x > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return buf;
}

//! Round to 9 significant digits, so JSON output carries the same precision.
inline double round_real(double x)
{
    if (!std::isfinite(x))
        return x;
    return std::strtod(format_real(x).c_str(), nullptr);
}

inline constexpr std::string_view kSweepCsvHeader
    = "theta_deg,n_pp,n_pm,n_mp,n_mm,n_single_left,n_single_right,n_none,"
      "n_source_rejected,r_d,r_d_stderr";

inline constexpr std::string_view kCountsCsvHeader
    = "phi1_deg,phi2_deg,n_pp,n_pm,n_mp,n_mm,n_single_left,n_single_right,"
      "n_none,n_source_rejected,n_emitted,r_d,r_d_stderr,source_transmission";

inline constexpr std::string_view kChshCsvHeader
    = "setting,phi1_deg,phi2_deg,n_pp,n_pm,n_mp,n_mm,value,std_error";

inline constexpr std::string_view kVerdictCsvHeader
    = "classification,significance_sigma,mean_level,amp_k2,phase_k2,"
      "amp_k2_stderr,amp_k4,phase_k4,amp_k4_stderr,chi2_flat,dof,p_flat";

inline constexpr std::string_view kControlCsvHeader
    = "phi1_deg,phi2_deg,n_pp,n_pm,n_mp,n_mm,n_single_left,n_single_right,"
      "n_none,n_source_rejected,r_d,r_d_stderr";

namespace detail
{
inline void write_checked(std::ostream& os, std::string_view what)
{
    if (!os)
        throw std::runtime_error(std::string("write failed while emitting ")
                                 + std::string(what));
}

inline std::string coincidence_fields(CoincidenceCounts const& c)
{
    std::ostringstream s;
    s << c.n_pp << ',' << c.n_pm << ',' << c.n_mp << ',' << c.n_mm;
    return s.str();
}

inline std::string loss_fields(CoincidenceCounts const& c)
{
    std::ostringstream s;
    s << c.n_single_left << ',' << c.n_single_right << ',' << c.n_none << ','
      << c.n_source_rejected;
    return s.str();
}

//! Real or null when the estimator has no data.
template<class F>
json maybe_real(F&& f)
{
    try
    {
        return round_real(f());
    }
    catch (NoDataError const&)
    {
        return nullptr;
    }
}

template<class F>
std::string maybe_real_csv(F&& f)
{
    try
    {
        return format_real(f());
    }
    catch (NoDataError const&)
    {
        return "";
    }
}

inline json real_json(double x)
{
    if (!std::isfinite(x))
        return format_real(x);  // JSON has no inf/nan
    return round_real(x);
}
}  // namespace detail

inline json counts_json(CoincidenceCounts const& c)
{
    return {
        {"n_pp", c.n_pp},
        {"n_pm", c.n_pm},
        {"n_mp", c.n_mp},
        {"n_mm", c.n_mm},
        {"n_single_left", c.n_single_left},
        {"n_single_right", c.n_single_right},
        {"n_none", c.n_none},
        {"n_source_rejected", c.n_source_rejected},
        {"n_emitted", c.n_emitted},
    };
}

inline CoincidenceCounts counts_from_json(json const& j)
{
    CoincidenceCounts c;
    c.n_pp = j.at("n_pp").get<std::uint64_t>();
    c.n_pm = j.at("n_pm").get<std::uint64_t>();
    c.n_mp = j.at("n_mp").get<std::uint64_t>();
    c.n_mm = j.at("n_mm").get<std::uint64_t>();
    c.n_single_left = j.at("n_single_left").get<std::uint64_t>();
    c.n_single_right = j.at("n_single_right").get<std::uint64_t>();
    c.n_none = j.at("n_none").get<std::uint64_t>();
    c.n_source_rejected = j.at("n_source_rejected").get<std::uint64_t>();
    c.n_emitted = j.at("n_emitted").get<std::uint64_t>();
    return c;
}

inline void write_manifest(std::ostream& os, RunManifest const& m)
{
    os << to_json(m).dump() << '\n';
    detail::write_checked(os, "manifest");
}

//! Result of a single-setting run.
inline void write_counts(std::ostream& os, ExperimentConfig const& cfg,
                         CoincidenceCounts const& c, Format fmt)
{
    if (fmt == Format::csv)
    {
        os << kCountsCsvHeader << '\n'
           << format_real(cfg.phi1.degrees()) << ','
           << format_real(cfg.phi2.degrees()) << ',' << detail::coincidence_fields(c)
           << ',' << detail::loss_fields(c) << ',' << c.n_emitted << ','
           << detail::maybe_real_csv([&] { return detected_rate(c); }) << ','
           << detail::maybe_real_csv([&] { return detected_rate_std_error(c); })
           << ','
           << detail::maybe_real_csv([&] { return source_transmission(c); }) << '\n';
    }
    else
    {
        json j = counts_json(c);
        j["record"] = "counts";
        j["phi1_deg"] = round_real(cfg.phi1.degrees());
        j["phi2_deg"] = round_real(cfg.phi2.degrees());
        j["r_d"] = detail::maybe_real([&] { return detected_rate(c); });
        j["r_d_stderr"] = detail::maybe_real([&] { return detected_rate_std_error(c); });
        j["source_transmission"]
            = detail::maybe_real([&] { return source_transmission(c); });
        os << j.dump() << '\n';
    }
    detail::write_checked(os, "counts");
}

inline void write_chsh(std::ostream& os, ChshResult const& r, Format fmt)
{
    static constexpr std::array<std::string_view, 4> names
        = {"a_b", "a_bprime", "aprime_b", "aprime_bprime"};
    auto const settings = r.angles.settings();
    if (fmt == Format::csv)
    {
        os << kChshCsvHeader << '\n';
        for (std::size_t j = 0; j < 4; ++j)
        {
            os << names[j] << ',' << format_real(settings[j].first.degrees()) << ','
               << format_real(settings[j].second.degrees()) << ','
               << detail::coincidence_fields(r.counts[j]) << ','
               << format_real(r.per_setting[j].value) << ','
               << format_real(r.per_setting[j].std_error) << '\n';
        }
        os << "S,,,,,,," << format_real(r.s_value) << ',' << format_real(r.std_error)
           << '\n';
    }
    else
    {
        for (std::size_t j = 0; j < 4; ++j)
        {
            json e = counts_json(r.counts[j]);
            e["record"] = "chsh_setting";
            e["setting"] = names[j];
            e["phi1_deg"] = round_real(settings[j].first.degrees());
            e["phi2_deg"] = round_real(settings[j].second.degrees());
            e["value"] = round_real(r.per_setting[j].value);
            e["std_error"] = round_real(r.per_setting[j].std_error);
            os << e.dump() << '\n';
        }
        json s = {{"record", "chsh"},
                  {"s_value", round_real(r.s_value)},
                  {"std_error", round_real(r.std_error)}};
        os << s.dump() << '\n';
    }
    detail::write_checked(os, "chsh result");
}

//! Sweep table, one row per grid point in grid order.
inline void write_sweep(std::ostream& os, SweepResult const& sweep, Format fmt)
{
    if (fmt == Format::csv)
    {
        os << kSweepCsvHeader << '\n';
        for (auto const& p : sweep.per_point)
        {
            os << format_real(p.theta.degrees()) << ','
               << detail::coincidence_fields(p.counts) << ','
               << detail::loss_fields(p.counts) << ',' << format_real(p.r_d) << ','
               << format_real(p.std_error) << '\n';
        }
    }
    else
    {
        for (auto const& p : sweep.per_point)
        {
            json j = counts_json(p.counts);
            j["record"] = "sweep_point";
            j["theta_deg"] = round_real(p.theta.degrees());
            j["r_d"] = round_real(p.r_d);
            j["r_d_stderr"] = round_real(p.std_error);
            os << j.dump() << '\n';
        }
    }
    detail::write_checked(os, "sweep");
}

inline json verdict_json(FairnessVerdict const& v)
{
    using detail::real_json;
    json j;
    j["record"] = "verdict";
    j["classification"] = to_string(v.classification);
    j["significance_sigma"] = real_json(v.significance_sigma);
    j["mean_level"] = real_json(v.spectrum.mean_level);
    for (auto const& [k, h] : v.spectrum.amplitudes)
    {
        std::string const key = "k" + std::to_string(k);
        j["amp_" + key] = real_json(h.amplitude);
        j["phase_" + key] = real_json(h.phase);
        j["amp_" + key + "_stderr"] = real_json(h.std_error);
    }
    j["chi2_flat"] = real_json(v.spectrum.chi2_flat);
    j["dof"] = v.spectrum.dof;
    j["p_flat"] = real_json(v.spectrum.p_flat);
    return j;
}

inline void write_verdict(std::ostream& os, FairnessVerdict const& v, Format fmt)
{
    if (fmt == Format::csv)
    {
        auto h = [&v](int k) {
            auto it = v.spectrum.amplitudes.find(k);
            return it == v.spectrum.amplitudes.end() ? Harmonic{} : it->second;
        };
        Harmonic const h2 = h(2), h4 = h(4);
        os << kVerdictCsvHeader << '\n'
           << to_string(v.classification) << ','
           << format_real(v.significance_sigma) << ','
           << format_real(v.spectrum.mean_level) << ',' << format_real(h2.amplitude)
           << ',' << format_real(h2.phase) << ',' << format_real(h2.std_error) << ','
           << format_real(h4.amplitude) << ',' << format_real(h4.phase) << ','
           << format_real(h4.std_error) << ',' << format_real(v.spectrum.chi2_flat)
           << ',' << v.spectrum.dof << ',' << format_real(v.spectrum.p_flat) << '\n';
    }
    else
    {
        os << verdict_json(v).dump() << '\n';
    }
    detail::write_checked(os, "verdict");
}

inline void write_control(std::ostream& os, ControlReport const& r, Format fmt)
{
    if (fmt == Format::csv)
    {
        os << kControlCsvHeader << '\n';
        for (auto const& p : r.points)
        {
            os << format_real(p.setting.phi1.degrees()) << ','
               << format_real(p.setting.phi2.degrees()) << ','
               << detail::coincidence_fields(p.counts) << ','
               << detail::loss_fields(p.counts) << ',' << format_real(p.r_d) << ','
               << format_real(p.std_error) << '\n';
        }
    }
    else
    {
        using detail::real_json;
        for (auto const& p : r.points)
        {
            json j = counts_json(p.counts);
            j["record"] = "control_point";
            j["phi1_deg"] = round_real(p.setting.phi1.degrees());
            j["phi2_deg"] = round_real(p.setting.phi2.degrees());
            j["r_d"] = round_real(p.r_d);
            j["r_d_stderr"] = round_real(p.std_error);
            os << j.dump() << '\n';
        }
        json s = {{"record", "control_summary"},
                  {"mean_r_d", real_json(r.mean_r_d)},
                  {"spread", real_json(r.spread)},
                  {"chi2_flat", real_json(r.chi2_flat)},
                  {"dof", r.dof},
                  {"p_flat", real_json(r.p_flat)}};
        os << s.dump() << '\n';
    }
    detail::write_checked(os, "control report");
}

//! Header and row writer for the optional per-trial event log.
class EventLogWriter
{
  public:
    explicit EventLogWriter(std::ostream& os) : os_(os)
    {
        os_ << "trial,lambda_left_deg,lambda_right_deg,outcome_left,outcome_right\n";
    }

    void operator()(std::uint64_t index, TrialRecord const& rec)
    {
        os_ << index << ',' << format_real(rec.state.lambda_left.degrees()) << ','
            << format_real(rec.state.lambda_right.degrees()) << ',';
        if (rec.outcomes)
            os_ << to_int(rec.outcomes->left) << ',' << to_int(rec.outcomes->right);
        else
            os_ << "rejected,rejected";
        os_ << '\n';
    }

  private:
    std::ostream& os_;
};

//---------------------------------------------------------------------------//
// SWEEP CSV INPUT
//---------------------------------------------------------------------------//
namespace detail
{
inline std::vector<std::string_view> split_csv_line(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;)
    {
        std::size_t const comma = line.find(',', start);
        out.push_back(line.substr(start, comma - start));
        if (comma == std::string_view::npos)
            break;
        start = comma + 1;
    }
    return out;
}

inline std::uint64_t parse_u64(std::string_view s, std::size_t line, char const* col)
{
    std::uint64_t v = 0;
    auto const [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw ProtocolError("sweep CSV line " + std::to_string(line) + ": bad "
                            + col + " '" + std::string(s) + "'");
    return v;
}

inline double parse_real(std::string_view s, std::size_t line, char const* col)
{
    std::string const tmp(s);
    char* end = nullptr;
    double const v = std::strtod(tmp.c_str(), &end);
    if (tmp.empty() || end != tmp.c_str() + tmp.size())
        throw ProtocolError("sweep CSV line " + std::to_string(line) + ": bad "
                            + col + " '" + tmp + "'");
    return v;
}
}  // namespace detail

/*!
 * Read a sweep table in the format written by write_sweep.
 *
 * r_d and its error are taken from the file as given, so tables produced
 * outside this tool (e.g. laboratory coincidence counts) can be analyzed.
 * n_emitted is the sum of the count columns.
 */
inline std::vector<SweepPoint> read_sweep_csv(std::istream& is)
{
    std::string line;
    if (!std::getline(is, line))
        throw ProtocolError("sweep CSV is empty");
    if (!line.empty() && line.back() == '\r')
        line.pop_back();
    if (line != kSweepCsvHeader)
        throw ProtocolError("sweep CSV header mismatch; expected '"
                            + std::string(kSweepCsvHeader) + "'");
    std::vector<SweepPoint> points;
    std::size_t lineno = 1;
    while (std::getline(is, line))
    {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        auto const f = detail::split_csv_line(line);
        if (f.size() != 11)
            throw ProtocolError("sweep CSV line " + std::to_string(lineno)
                                + ": expected 11 fields, got "
                                + std::to_string(f.size()));
        using detail::parse_real;
        using detail::parse_u64;
        SweepPoint p;
        p.theta = PolAngle::from_degrees(parse_real(f[0], lineno, "theta_deg"));
        CoincidenceCounts& c = p.counts;
        c.n_pp = parse_u64(f[1], lineno, "n_pp");
        c.n_pm = parse_u64(f[2], lineno, "n_pm");
        c.n_mp = parse_u64(f[3], lineno, "n_mp");
        c.n_mm = parse_u64(f[4], lineno, "n_mm");
        c.n_single_left = parse_u64(f[5], lineno, "n_single_left");
        c.n_single_right = parse_u64(f[6], lineno, "n_single_right");
        c.n_none = parse_u64(f[7], lineno, "n_none");
        c.n_source_rejected = parse_u64(f[8], lineno, "n_source_rejected");
        CoincidenceCounts sum;
        for (std::uint64_t v : {c.n_pp, c.n_pm, c.n_mp, c.n_mm, c.n_single_left,
                                c.n_single_right, c.n_none, c.n_source_rejected})
        {
            CoincidenceCounts one;
            one.n_emitted = v;
            sum = merge_counts(sum, one);
        }
        c.n_emitted = sum.n_emitted;
        p.r_d = parse_real(f[9], lineno, "r_d");
        p.std_error = parse_real(f[10], lineno, "r_d_stderr");
        if (!(p.std_error >= 0))
            throw ProtocolError("sweep CSV line " + std::to_string(lineno)
                                + ": r_d_stderr must be >= 0");
        points.push_back(p);
    }
    return points;
}

//! Sweep result reconstructed from stored points (plan holds only the grid).
inline SweepResult sweep_from_points(std::vector<SweepPoint> points)
{
    SweepResult r;
    r.plan.theta_grid.clear();
    for (auto const& p : points)
        r.plan.theta_grid.push_back(p.theta);
    r.per_point = std::move(points);
    return r;
}

}  // namespace bellfair::io
