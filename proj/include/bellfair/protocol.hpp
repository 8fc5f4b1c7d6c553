#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "angle.hpp"
#include "engine.hpp"
#include "errors.hpp"
#include "models.hpp"
#include "random.hpp"
#include "stats.hpp"

namespace bellfair
{
//---------------------------------------------------------------------------//
// SWEEP
//---------------------------------------------------------------------------//
//! How the theta-controlled source is realized.
enum class SweepSourceMode
{
    ideal_prepared,      //!< Pairs emitted already polarized along theta
    polarizer_filtered,  //!< Singlet pairs through aligned polarizers at theta
};

//! `points` angles k*pi/points, k = 0..points-1.
inline std::vector<PolAngle> uniform_theta_grid(std::size_t points)
{
    std::vector<PolAngle> grid;
    grid.reserve(points);
    for (std::size_t k = 0; k < points; ++k)
        grid.emplace_back(kPi * static_cast<double>(k) / static_cast<double>(points));
    return grid;
}

/*!
 * Both analyzers fixed at `phi` while the source angle runs over
 * `theta_grid`.
 *
 * `base_config` supplies detection model, pair correlation, seed and shard
 * count; its source angle, analyzer angles and n_pairs are overwritten per
 * point.
 */
struct SweepPlan
{
    PolAngle phi;
    std::vector<PolAngle> theta_grid = uniform_theta_grid(16);
    std::uint64_t n_per_point = 1'000'000;
    ExperimentConfig base_config;
    SweepSourceMode source_mode = SweepSourceMode::ideal_prepared;

    void validate() const
    {
        if (n_per_point < 1)
            throw ConfigError("n_per_point", "must be >= 1");
        std::vector<RateSample> probe;
        probe.reserve(theta_grid.size());
        for (PolAngle t : theta_grid)
            probe.push_back({t, 0, 0});
        check_sweep_grid(probe);
        base_config.validate();
    }

    //! Experiment run at grid point `index`.
    ExperimentConfig point_config(std::size_t index) const
    {
        ExperimentConfig cfg = base_config;
        PolAngle const theta = theta_grid.at(index);
        cfg.source = source_mode == SweepSourceMode::ideal_prepared
                         ? SourceModel::ideal_prepared(theta)
                         : SourceModel::polarizer_filtered(
                               theta, base_config.source.correlation);
        cfg.phi1 = phi;
        cfg.phi2 = phi;
        cfg.n_pairs = n_per_point;
        cfg.seed = derive_seed(base_config.seed, StreamDomain::sweep_point, index);
        return cfg;
    }
};

struct SweepPoint
{
    PolAngle theta;
    CoincidenceCounts counts;
    double r_d = 0;
    double std_error = 0;
};

struct SweepResult
{
    SweepPlan plan;
    std::vector<SweepPoint> per_point;  //!< Grid order

    std::vector<RateSample> rate_samples() const
    {
        std::vector<RateSample> out;
        out.reserve(per_point.size());
        for (auto const& p : per_point)
            out.push_back({p.theta, p.r_d, p.std_error});
        return out;
    }
};

//! Sweep point built from raw counts.
inline SweepPoint make_sweep_point(PolAngle theta, CoincidenceCounts const& counts)
{
    return {theta, counts, detected_rate(counts), detected_rate_std_error(counts)};
}

//! Run one batch per theta; point i uses seed derive(seed, sweep_point, i).
inline SweepResult run_sweep(SweepPlan const& plan)
{
    plan.validate();
    SweepResult result;
    result.plan = plan;
    result.per_point.reserve(plan.theta_grid.size());
    for (std::size_t i = 0; i < plan.theta_grid.size(); ++i)
    {
        CoincidenceCounts const c = run_batch(plan.point_config(i));
        result.per_point.push_back(make_sweep_point(plan.theta_grid[i], c));
    }
    return result;
}

inline HarmonicSpectrum harmonic_analysis(SweepResult const& sweep)
{
    auto const samples = sweep.rate_samples();
    return harmonic_analysis(std::span<RateSample const>{samples});
}

//---------------------------------------------------------------------------//
// VERDICT
//---------------------------------------------------------------------------//
enum class Classification
{
    consistent_with_fair,
    unfair_sampling_detected,
    inconclusive,
};

inline std::string_view to_string(Classification c)
{
    switch (c)
    {
        case Classification::consistent_with_fair:
            return "ConsistentWithFair";
        case Classification::unfair_sampling_detected:
            return "UnfairSamplingDetected";
        case Classification::inconclusive:
            break;
    }
    return "Inconclusive";
}

struct FairnessThresholds
{
    double detect_sigma = 5;   //!< Harmonic significance needed to flag
    double detect_p = 1e-3;    //!< ... together with p_flat below this
    double fair_sigma = 3;     //!< All harmonics must stay below this
    double fair_p = 0.01;      //!< ... and p_flat above this

    void validate() const
    {
        if (!(detect_sigma > 0))
            throw ConfigError("thresholds.detect_sigma", "must be > 0");
        if (!(fair_sigma > 0 && fair_sigma <= detect_sigma))
            throw ConfigError("thresholds.fair_sigma",
                              "must be > 0 and <= detect_sigma");
        if (!(detect_p > 0 && detect_p < 1))
            throw ConfigError("thresholds.detect_p", "must be in (0, 1)");
        if (!(fair_p > 0 && fair_p < 1))
            throw ConfigError("thresholds.fair_p", "must be in (0, 1)");
    }
};

struct FairnessVerdict
{
    HarmonicSpectrum spectrum;
    //! Largest amplitude / std_error over the tested harmonics.
    double significance_sigma = 0;
    Classification classification = Classification::inconclusive;
};

/*!
 * Apply the decision rule to a spectrum.
 *
 * Unfair: some harmonic exceeds detect_sigma and p_flat < detect_p.
 * Fair: every harmonic is below fair_sigma and p_flat > fair_p.
 * Anything else is inconclusive. An amplitude that is zero to rounding is
 * below threshold even when its error is zero too (a noiseless flat curve).
 */
inline FairnessVerdict
classify(HarmonicSpectrum const& spectrum, FairnessThresholds const& th = {})
{
    FairnessVerdict v;
    v.spectrum = spectrum;

    double max_sigma = 0;
    bool all_small = true;
    for (auto const& [k, h] : spectrum.amplitudes)
    {
        double sigma = 0;
        if (h.std_error > 0)
            sigma = h.amplitude / h.std_error;
        else if (!is_rounding_zero(h.amplitude, spectrum.mean_level))
            sigma = std::numeric_limits<double>::infinity();
        max_sigma = std::max(max_sigma, sigma);
        if (!(sigma < th.fair_sigma))
            all_small = false;
    }
    v.significance_sigma = max_sigma;

    if (max_sigma > th.detect_sigma && spectrum.p_flat < th.detect_p)
        v.classification = Classification::unfair_sampling_detected;
    else if (all_small && spectrum.p_flat > th.fair_p)
        v.classification = Classification::consistent_with_fair;
    else
        v.classification = Classification::inconclusive;
    return v;
}

inline FairnessVerdict
classify(SweepResult const& sweep, FairnessThresholds const& th = {})
{
    return classify(harmonic_analysis(sweep), th);
}

//---------------------------------------------------------------------------//
// SINGLET CONTROL
//---------------------------------------------------------------------------//
struct SettingPair
{
    PolAngle phi1;
    PolAngle phi2;
};

struct ControlPoint
{
    SettingPair setting;
    CoincidenceCounts counts;
    double r_d = 0;
    double std_error = 0;
};

//! R_d of the uncontrolled singlet source across analyzer settings.
struct ControlReport
{
    std::vector<ControlPoint> points;
    double mean_r_d = 0;
    double spread = 0;  //!< max - min of r_d
    double chi2_flat = 0;
    int dof = 0;
    double p_flat = 1;
};

/*!
 * Measure R_d with the singlet source at each setting pair.
 *
 * Point i uses seed derive(seed, control_point, i). A flat result here does
 * not exclude unfair sampling: rotational invariance of the singlet hides it.
 */
inline ControlReport
singlet_control(ExperimentConfig const& config, std::span<SettingPair const> settings)
{
    if (config.source.kind != SourceKind::singlet)
        throw ProtocolError("singlet control requires the singlet source");
    if (settings.empty())
        throw ProtocolError("singlet control needs at least one setting pair");
    config.validate();

    ControlReport report;
    std::vector<RateSample> samples;
    for (std::size_t i = 0; i < settings.size(); ++i)
    {
        ExperimentConfig cfg = config;
        cfg.phi1 = settings[i].phi1;
        cfg.phi2 = settings[i].phi2;
        cfg.seed = derive_seed(config.seed, StreamDomain::control_point, i);
        ControlPoint p;
        p.setting = settings[i];
        p.counts = run_batch(cfg);
        p.r_d = detected_rate(p.counts);
        p.std_error = detected_rate_std_error(p.counts);
        report.points.push_back(p);
        samples.push_back({settings[i].phi1, p.r_d, p.std_error});
    }

    double sum = 0, lo = samples.front().rate, hi = lo;
    for (auto const& s : samples)
    {
        sum += s.rate;
        lo = std::min(lo, s.rate);
        hi = std::max(hi, s.rate);
    }
    report.mean_r_d = sum / static_cast<double>(samples.size());
    report.spread = hi - lo;
    report.chi2_flat = chi2_against_mean(samples, report.mean_r_d);
    report.dof = static_cast<int>(samples.size()) - 1;
    report.p_flat = report.dof > 0 ? chi2_tail(report.chi2_flat, report.dof) : 1.0;
    return report;
}

//! Default control grid: eight common rotations of a 22.5 degree offset.
inline std::vector<SettingPair> default_control_settings()
{
    std::vector<SettingPair> out;
    for (int k = 0; k < 8; ++k)
        out.push_back({PolAngle::from_degrees(22.5 * k),
                       PolAngle::from_degrees(22.5 * k + 22.5)});
    return out;
}

}  // namespace bellfair
