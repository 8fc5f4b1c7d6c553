#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>

#include <boost/math/distributions/chi_squared.hpp>

#include "angle.hpp"
#include "engine.hpp"
#include "errors.hpp"
#include "random.hpp"

namespace bellfair
{
//---------------------------------------------------------------------------//
// RATES AND CORRELATIONS
//---------------------------------------------------------------------------//
struct CorrelationEstimate
{
    double value = 0;
    double std_error = 0;
    std::uint64_t n_detected = 0;
};

//! E = (N++ + N-- - N+- - N-+) / N_detected over coincidences only.
inline CorrelationEstimate correlation(CoincidenceCounts const& c)
{
    std::uint64_t const n = c.detected();
    if (n == 0)
        throw NoDataError("correlation: no coincidences");
    double const same = static_cast<double>(c.n_pp + c.n_mm);
    double const diff = static_cast<double>(c.n_pm + c.n_mp);
    double const e = (same - diff) / static_cast<double>(n);
    CorrelationEstimate r;
    r.value = e;
    r.std_error = std::sqrt(std::max(0.0, 1 - e * e) / static_cast<double>(n));
    r.n_detected = n;
    return r;
}

/*!
 * Fraction of pairs entering the coincidence circuitry that produce a
 * coincidence, R_d / R.
 *
 * Pairs absorbed by the source polarizers never reach the analyzers and are
 * part of state preparation, so they are excluded from the denominator. Use
 * source_transmission() for the filter stage.
 */
inline double detected_rate(CoincidenceCounts const& c)
{
    if (c.entered() == 0)
        throw NoDataError("detected_rate: no pairs reached the analyzers");
    return static_cast<double>(c.detected()) / static_cast<double>(c.entered());
}

//! Binomial standard error of detected_rate().
inline double detected_rate_std_error(CoincidenceCounts const& c)
{
    double const p = detected_rate(c);
    return std::sqrt(std::max(0.0, p * (1 - p)) / static_cast<double>(c.entered()));
}

//! Fraction of emitted pairs with both photons through the source polarizers.
inline double source_transmission(CoincidenceCounts const& c)
{
    if (c.n_emitted == 0)
        throw NoDataError("source_transmission: nothing emitted");
    return static_cast<double>(c.entered()) / static_cast<double>(c.n_emitted);
}

inline double source_transmission_std_error(CoincidenceCounts const& c)
{
    double const p = source_transmission(c);
    return std::sqrt(std::max(0.0, p * (1 - p)) / static_cast<double>(c.n_emitted));
}

//---------------------------------------------------------------------------//
// CHSH
//---------------------------------------------------------------------------//
struct ChshAngles
{
    PolAngle a;
    PolAngle a_prime;
    PolAngle b;
    PolAngle b_prime;

    //! 0, 45, 22.5, 67.5 degrees.
    static ChshAngles standard()
    {
        return {PolAngle{0.0}, PolAngle{kPi / 4}, PolAngle{kPi / 8},
                PolAngle{3 * kPi / 8}};
    }

    //! Setting pairs in the order (a,b), (a,b'), (a',b), (a',b').
    std::array<std::pair<PolAngle, PolAngle>, 4> settings() const
    {
        return {{{a, b}, {a, b_prime}, {a_prime, b}, {a_prime, b_prime}}};
    }
};

struct ChshResult
{
    double s_value = 0;
    double std_error = 0;
    ChshAngles angles;
    std::array<CorrelationEstimate, 4> per_setting;  //!< settings() order
    std::array<CoincidenceCounts, 4> counts;
};

//! S = |E(a,b) - E(a,b')| + |E(a',b) + E(a',b')| with quadrature errors.
inline ChshResult combine_chsh(ChshAngles const& angles,
                               std::array<CorrelationEstimate, 4> const& e)
{
    ChshResult r;
    r.angles = angles;
    r.per_setting = e;
    r.s_value = std::fabs(e[0].value - e[1].value)
                + std::fabs(e[2].value + e[3].value);
    double var = 0;
    for (auto const& x : e)
        var += x.std_error * x.std_error;
    r.std_error = std::sqrt(var);
    return r;
}

/*!
 * Evaluate CHSH by running one batch per setting pair.
 *
 * Setting j uses seed derive_seed(base.seed, chsh_setting, j); the base
 * config's analyzer angles are replaced.
 */
inline ChshResult chsh(ExperimentConfig const& base, ChshAngles const& angles)
{
    std::array<CorrelationEstimate, 4> estimates;
    std::array<CoincidenceCounts, 4> counts;
    auto const settings = angles.settings();
    for (std::size_t j = 0; j < settings.size(); ++j)
    {
        ExperimentConfig cfg = base;
        cfg.phi1 = settings[j].first;
        cfg.phi2 = settings[j].second;
        cfg.seed = derive_seed(base.seed, StreamDomain::chsh_setting, j);
        counts[j] = run_batch(cfg);
        estimates[j] = correlation(counts[j]);
    }
    ChshResult r = combine_chsh(angles, estimates);
    r.counts = counts;
    return r;
}

//---------------------------------------------------------------------------//
// HARMONIC ANALYSIS
//---------------------------------------------------------------------------//
//! One point of a rate-versus-angle curve.
struct RateSample
{
    PolAngle theta;
    double rate = 0;
    double std_error = 0;
};

struct Harmonic
{
    double amplitude = 0;
    double phase = 0;  //!< atan2 of the sin/cos coefficients, in (-pi, pi]
    //! RMS amplitude that noise alone would produce at this harmonic.
    double std_error = 0;
};

struct HarmonicSpectrum
{
    double mean_level = 0;
    std::map<int, Harmonic> amplitudes;  //!< Keyed by k in {2, 4}
    double chi2_flat = 0;
    int dof = 0;
    double p_flat = 1;
};

inline constexpr std::array<int, 2> kHarmonics = {2, 4};
inline constexpr std::size_t kMinSweepPoints = 8;

//! Upper tail of the chi-square distribution.
inline double chi2_tail(double chi2, int dof)
{
    if (std::isinf(chi2))
        return 0;
    if (chi2 <= 0)
        return 1;
    boost::math::chi_squared dist(dof);
    return boost::math::cdf(boost::math::complement(dist, chi2));
}

//! Below this (relative to the level) a deviation or amplitude is rounding
//! noise rather than signal.
inline constexpr double kRoundingFloor = 1e-12;

inline bool is_rounding_zero(double x, double level) noexcept
{
    return std::fabs(x) <= kRoundingFloor * std::max(1.0, std::fabs(level));
}

/*!
 * Chi-square of a set of rates against a common level.
 *
 * Points with zero standard error contribute nothing when they sit on the
 * level and make the statistic infinite otherwise.
 */
inline double chi2_against_mean(std::span<RateSample const> samples, double mean)
{
    double chi2 = 0;
    for (auto const& s : samples)
    {
        double const dev = s.rate - mean;
        if (s.std_error > 0)
            chi2 += (dev / s.std_error) * (dev / s.std_error);
        else if (!is_rounding_zero(dev, mean))
            return std::numeric_limits<double>::infinity();
    }
    return chi2;
}

//! Throws ProtocolError unless the angles are >= 8 equally spaced points
//! covering [0, pi) once, in increasing order modulo pi.
inline void check_sweep_grid(std::span<RateSample const> samples)
{
    std::size_t const m = samples.size();
    if (m < kMinSweepPoints)
        throw ProtocolError("sweep needs at least 8 theta points, got "
                            + std::to_string(m));
    double const step = kPi / static_cast<double>(m);
    // Serialized grids carry ~9 significant digits in degrees
    constexpr double tol = 1e-6;
    for (std::size_t i = 0; i < m; ++i)
    {
        double const a = samples[i].theta.radians();
        double const b = samples[(i + 1) % m].theta.radians();
        double gap = std::fmod(b - a + 2 * kPi, kPi);
        if (gap > kPi - tol)
            gap -= kPi;
        if (std::fabs(gap - step) > tol)
            throw ProtocolError("theta grid is not equally spaced over [0, 180) "
                                "deg at point "
                                + std::to_string(i));
    }
}

/*!
 * Project a rate curve R(theta) onto cos/sin(k theta) for k = 2, 4 and test
 * it for flatness.
 *
 * With m equally spaced points over one period the projection
 * a_k = (2/m) sum R_i cos(k theta_i) is exact for pure k = 2, 4 inputs.
 */
inline HarmonicSpectrum harmonic_analysis(std::span<RateSample const> samples)
{
    check_sweep_grid(samples);
    auto const m = static_cast<double>(samples.size());

    HarmonicSpectrum spec;
    double sum = 0;
    for (auto const& s : samples)
        sum += s.rate;
    spec.mean_level = sum / m;

    for (int k : kHarmonics)
    {
        double a = 0, b = 0, var_a = 0, var_b = 0;
        for (auto const& s : samples)
        {
            double const c = std::cos(k * s.theta.radians());
            double const sn = std::sin(k * s.theta.radians());
            a += s.rate * c;
            b += s.rate * sn;
            double const v = s.std_error * s.std_error;
            var_a += v * c * c;
            var_b += v * sn * sn;
        }
        double const scale = 2 / m;
        a *= scale;
        b *= scale;
        var_a *= scale * scale;
        var_b *= scale * scale;

        Harmonic h;
        h.amplitude = std::hypot(a, b);
        h.phase = std::atan2(b, a);
        h.std_error = std::sqrt(var_a + var_b);
        spec.amplitudes[k] = h;
    }

    spec.chi2_flat = chi2_against_mean(samples, spec.mean_level);
    spec.dof = static_cast<int>(samples.size()) - 1;
    spec.p_flat = chi2_tail(spec.chi2_flat, spec.dof);
    return spec;
}

}  // namespace bellfair
