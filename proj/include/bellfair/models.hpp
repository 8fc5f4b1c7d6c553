#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string_view>
#include <type_traits>
#include <variant>

#include "angle.hpp"
#include "errors.hpp"
#include "random.hpp"

namespace bellfair
{
//---------------------------------------------------------------------------//
// OUTCOMES AND HIDDEN STATE
//---------------------------------------------------------------------------//
//! Two-channel analyzer result: ordinary (+1), extraordinary (-1), or the
//! undetected 0 channel.
enum class Outcome : std::uint8_t
{
    plus,
    minus,
    undetected,
};

constexpr int to_int(Outcome o) noexcept
{
    switch (o)
    {
        case Outcome::plus:
            return 1;
        case Outcome::minus:
            return -1;
        case Outcome::undetected:
            break;
    }
    return 0;
}

//! Local hidden variables of one photon pair.
struct PairHiddenState
{
    PolAngle lambda_left;
    PolAngle lambda_right;
    double aux_left = 0;   //!< Detection variable, uniform on [0, 1)
    double aux_right = 0;  //!< Detection variable, uniform on [0, 1)
};

//---------------------------------------------------------------------------//
// SOURCES
//---------------------------------------------------------------------------//
enum class SourceKind
{
    singlet,            //!< Rotationally invariant: lambda uniform on [0, pi)
    ideal_prepared,     //!< Both photons polarized exactly along theta
    polarizer_filtered, //!< Singlet passed through aligned polarizers at theta
};

//! Relation between the two hidden polarizations of a singlet pair.
enum class PairCorrelation
{
    perpendicular,
    parallel,
};

struct SourceModel
{
    SourceKind kind = SourceKind::singlet;
    PolAngle theta;  //!< Ignored for the singlet source
    PairCorrelation correlation = PairCorrelation::perpendicular;

    static SourceModel singlet(PairCorrelation c = PairCorrelation::perpendicular)
    {
        return {SourceKind::singlet, PolAngle{}, c};
    }
    static SourceModel ideal_prepared(PolAngle theta)
    {
        return {SourceKind::ideal_prepared, theta, PairCorrelation::perpendicular};
    }
    static SourceModel
    polarizer_filtered(PolAngle theta,
                       PairCorrelation c = PairCorrelation::perpendicular)
    {
        return {SourceKind::polarizer_filtered, theta, c};
    }
};

//---------------------------------------------------------------------------//
// DETECTION MODELS
//---------------------------------------------------------------------------//
//! Malus-law channel split followed by an angle-independent efficiency gate.
struct FairConstant
{
    double eta = 1;
};

//! Detected iff |cos 2(lambda - phi)| > tau; channel is the sign.
struct UnfairThreshold
{
    double tau = 0.5;
};

//! Detected with probability |cos 2(lambda - phi)|^kappa; channel is the sign.
struct UnfairPower
{
    double kappa = 1;
};

//! Sign channel flipped with probability flip_prob, detection efficiency eta,
//! both independent of angles.
struct IndependentErrors
{
    double eta = 1;
    double flip_prob = 0;
};

using DetectionModel
    = std::variant<FairConstant, UnfairThreshold, UnfairPower, IndependentErrors>;

//! Config-file name of the model kind.
inline std::string_view detection_kind_name(DetectionModel const& m)
{
    return std::visit(
        []<class M>(M const&) -> std::string_view {
            if constexpr (std::is_same_v<M, FairConstant>)
                return "fair";
            else if constexpr (std::is_same_v<M, UnfairThreshold>)
                return "unfair_threshold";
            else if constexpr (std::is_same_v<M, UnfairPower>)
                return "unfair_power";
            else
                return "independent_errors";
        },
        m);
}

//! True if detection probability does not depend on any angle.
inline bool is_angle_independent(DetectionModel const& m)
{
    return std::holds_alternative<FairConstant>(m)
           || std::holds_alternative<IndependentErrors>(m);
}

//! Throws ConfigError naming the out-of-range parameter.
inline void validate(DetectionModel const& m)
{
    auto check_eta = [](double eta) {
        if (!(eta >= 0 && eta <= 1))
            throw ConfigError("eta", "must be in [0, 1]");
    };
    std::visit(
        [&]<class M>(M const& d) {
            if constexpr (std::is_same_v<M, FairConstant>)
            {
                check_eta(d.eta);
            }
            else if constexpr (std::is_same_v<M, UnfairThreshold>)
            {
                if (!(d.tau >= 0 && d.tau < 1))
                    throw ConfigError("tau", "must be in [0, 1)");
            }
            else if constexpr (std::is_same_v<M, UnfairPower>)
            {
                if (!(d.kappa > 0) || !std::isfinite(d.kappa))
                    throw ConfigError("kappa", "must be finite and > 0");
            }
            else
            {
                check_eta(d.eta);
                if (!(d.flip_prob >= 0 && d.flip_prob <= 0.5))
                    throw ConfigError("flip_prob", "must be in [0, 0.5]");
            }
        },
        m);
}

//---------------------------------------------------------------------------//
// SAMPLING
//---------------------------------------------------------------------------//
//! Singlet draw: lambda_left uniform, partner fixed by the correlation.
inline PairHiddenState draw_singlet(PairCorrelation correlation, Stream& rng)
{
    PairHiddenState s;
    double const lambda = rng.uniform() * kPi;
    s.lambda_left = PolAngle{lambda};
    s.lambda_right = correlation == PairCorrelation::perpendicular
                         ? PolAngle{s.lambda_left.radians() + kPi / 2}
                         : s.lambda_left;
    s.aux_left = rng.uniform();
    s.aux_right = rng.uniform();
    return s;
}

/*!
 * Pass a pair through aligned polarizers at theta.
 *
 * Each photon is transmitted with Malus probability cos^2(lambda - theta)
 * and, if transmitted, leaves polarized along theta. A pair missing either
 * photon can never give a coincidence, so only fully transmitted pairs are
 * returned.
 */
inline std::optional<PairHiddenState>
apply_source_polarizers(PairHiddenState pair, PolAngle theta, Stream& rng)
{
    double const c_left = std::cos(pair.lambda_left.radians() - theta.radians());
    double const c_right = std::cos(pair.lambda_right.radians() - theta.radians());
    // Both draws are always consumed so the stream position is fixed
    bool const pass_left = rng.uniform() < c_left * c_left;
    bool const pass_right = rng.uniform() < c_right * c_right;
    if (!(pass_left && pass_right))
        return std::nullopt;
    pair.lambda_left = theta;
    pair.lambda_right = theta;
    return pair;
}

//! One emission attempt; empty if absorbed by the source polarizers.
inline std::optional<PairHiddenState>
emit_pair(SourceModel const& source, Stream& rng)
{
    switch (source.kind)
    {
        case SourceKind::singlet:
            return draw_singlet(source.correlation, rng);
        case SourceKind::ideal_prepared: {
            PairHiddenState s;
            s.lambda_left = source.theta;
            s.lambda_right = source.theta;
            s.aux_left = rng.uniform();
            s.aux_right = rng.uniform();
            return s;
        }
        case SourceKind::polarizer_filtered:
            return apply_source_polarizers(
                draw_singlet(source.correlation, rng), source.theta, rng);
    }
    return std::nullopt;
}

struct SampledPair
{
    PairHiddenState state;
    std::uint64_t attempts = 1;  //!< Emissions used, including absorbed ones
};

//! Draw a pair from the source, retrying absorbed emissions.
inline SampledPair sample_pair(SourceModel const& source, Stream& rng)
{
    SampledPair result;
    result.attempts = 0;
    for (;;)
    {
        ++result.attempts;
        if (auto s = emit_pair(source, rng))
        {
            result.state = *s;
            return result;
        }
    }
}

//---------------------------------------------------------------------------//
// MEASUREMENT
//---------------------------------------------------------------------------//
//! sign(cos 2(lambda - phi)) with zero resolved to plus.
inline Outcome sign_channel(double cos2) noexcept
{
    return cos2 >= 0 ? Outcome::plus : Outcome::minus;
}

//! Probability that a photon at lambda is detected by an analyzer at phi.
inline double detection_probability(PolAngle lambda, PolAngle phi,
                                    DetectionModel const& model)
{
    double const c2 = std::cos(2 * (lambda.radians() - phi.radians()));
    return std::visit(
        [c2]<class M>(M const& d) -> double {
            if constexpr (std::is_same_v<M, FairConstant>
                          || std::is_same_v<M, IndependentErrors>)
                return d.eta;
            else if constexpr (std::is_same_v<M, UnfairThreshold>)
                return std::fabs(c2) > d.tau ? 1.0 : 0.0;
            else
                return std::pow(std::fabs(c2), d.kappa);
        },
        model);
}

/*!
 * Measure one photon with a two-channel analyzer.
 *
 * The result depends only on this photon's hidden angle and detection
 * variable, its own analyzer setting, and `u_channel`, a uniform variate
 * owned by this side. Nothing from the other wing enters, which is the
 * locality constraint.
 */
inline Outcome measure_photon(PolAngle lambda, double aux, PolAngle phi,
                              DetectionModel const& model, double u_channel)
{
    double const delta = lambda.radians() - phi.radians();
    double const c2 = std::cos(2 * delta);
    return std::visit(
        [&]<class M>(M const& d) -> Outcome {
            if constexpr (std::is_same_v<M, FairConstant>)
            {
                if (!(aux < d.eta))
                    return Outcome::undetected;
                double const c = std::cos(delta);
                return u_channel < c * c ? Outcome::plus : Outcome::minus;
            }
            else if constexpr (std::is_same_v<M, UnfairThreshold>)
            {
                if (!(std::fabs(c2) > d.tau))
                    return Outcome::undetected;
                return sign_channel(c2);
            }
            else if constexpr (std::is_same_v<M, UnfairPower>)
            {
                if (!(aux < std::pow(std::fabs(c2), d.kappa)))
                    return Outcome::undetected;
                return sign_channel(c2);
            }
            else
            {
                if (!(aux < d.eta))
                    return Outcome::undetected;
                Outcome const o = sign_channel(c2);
                if (u_channel < d.flip_prob)
                    return o == Outcome::plus ? Outcome::minus : Outcome::plus;
                return o;
            }
        },
        model);
}

//! Stream-drawing form: consumes exactly one variate.
inline Outcome measure_photon(PolAngle lambda, double aux, PolAngle phi,
                              DetectionModel const& model, Stream& rng)
{
    double const u = rng.uniform();
    return measure_photon(lambda, aux, phi, model, u);
}

}  // namespace bellfair
