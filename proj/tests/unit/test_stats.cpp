#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "bellfair/protocol.hpp"
#include "bellfair/stats.hpp"
#include "oracles.hpp"

using namespace bellfair;
using Catch::Approx;

namespace
{
ExperimentConfig
make_config(SourceModel src, DetectionModel det, double phi1, double phi2,
            std::uint64_t n, std::uint64_t seed = 0)
{
    ExperimentConfig c;
    c.source = src;
    c.detection = det;
    c.phi1 = PolAngle{phi1};
    c.phi2 = PolAngle{phi2};
    c.n_pairs = n;
    c.seed = seed;
    return c;
}

CoincidenceCounts coincidences(std::uint64_t pp, std::uint64_t pm, std::uint64_t mp,
                               std::uint64_t mm)
{
    CoincidenceCounts c;
    c.n_pp = pp;
    c.n_pm = pm;
    c.n_mp = mp;
    c.n_mm = mm;
    c.n_emitted = pp + pm + mp + mm;
    return c;
}

//! Samples of f on `m` equally spaced angles starting at `offset`.
template<class F>
std::vector<RateSample> synthetic(std::size_t m, F f, double sigma = 0, double offset = 0)
{
    std::vector<RateSample> out;
    for (std::size_t i = 0; i < m; ++i)
    {
        double const t = offset + kPi * static_cast<double>(i) / static_cast<double>(m);
        out.push_back({PolAngle{t}, f(t), sigma});
    }
    return out;
}

//! Smallest difference between two phases, modulo 2 pi.
double phase_distance(double a, double b)
{
    double d = std::fmod(std::fabs(a - b), 2 * kPi);
    return std::min(d, 2 * kPi - d);
}
}  // namespace

//---------------------------------------------------------------------------//
// correlation
//---------------------------------------------------------------------------//
TEST_CASE("correlation examples", "[stats]")
{
    auto const anti = correlation(coincidences(0, 500'000, 500'000, 0));
    CHECK(anti.value == -1.0);
    CHECK(anti.std_error == 0.0);
    CHECK(anti.n_detected == 1'000'000);

    auto const even = correlation(coincidences(250'000, 250'000, 250'000, 250'000));
    CHECK(even.value == 0.0);
    CHECK(even.std_error == Approx(1e-3));

    CoincidenceCounts none;
    none.n_none = 10;
    none.n_emitted = 10;
    CHECK_THROWS_AS(correlation(none), NoDataError);
}

TEST_CASE("deterministic sign correlation follows the sawtooth", "[stats]")
{
    // Frozen from the quadrature of sgn cos 2(l) * sgn cos 2(l + pi/2 - pi/8)
    constexpr double expected = -0.5;
    REQUIRE(oracle::sign_correlation(0, kPi / 8) == Approx(expected).margin(1e-4));

    constexpr std::uint64_t n = 1'000'000;
    auto const c = run_batch(make_config(SourceModel::singlet(), IndependentErrors{1.0, 0.0},
                                         kPi / 8, 0, n, 21));
    auto const e = correlation(c);
    CHECK(e.n_detected == n);
    CHECK(std::fabs(e.value - expected) < 4 * e.std_error);
}

TEST_CASE("correlation stays in [-1, 1] and saturates only without mixed counts",
          "[stats][property]")
{
    std::mt19937_64 gen(5);
    std::uniform_int_distribution<std::uint64_t> count(0, 50);
    for (int i = 0; i < 5000; ++i)
    {
        auto c = coincidences(count(gen), count(gen), count(gen), count(gen));
        if (i % 5 == 0)
            c.n_pm = c.n_mp = 0;
        if (i % 7 == 0)
            c.n_pp = c.n_mm = 0;
        if (c.detected() == 0)
            continue;
        auto const e = correlation(c);
        REQUIRE(e.value >= -1.0);
        REQUIRE(e.value <= 1.0);
        REQUIRE(e.std_error >= 0.0);
        if (e.value == 1.0)
            REQUIRE(c.n_pm + c.n_mp == 0);
        if (e.value == -1.0)
            REQUIRE(c.n_pp + c.n_mm == 0);
    }
}

//---------------------------------------------------------------------------//
// detected_rate
//---------------------------------------------------------------------------//
TEST_CASE("detected_rate examples", "[stats]")
{
    constexpr std::uint64_t n = 1'000'000;
    SECTION("perfect efficiency")
    {
        auto const c = run_batch(
            make_config(SourceModel::singlet(), FairConstant{1.0}, 0.3, 1.1, n, 1));
        CHECK(detected_rate(c) == 1.0);
        CHECK(detected_rate_std_error(c) == 0.0);
        CHECK(source_transmission(c) == 1.0);
    }
    SECTION("eta = 0.8 gives 0.64")
    {
        auto const c = run_batch(
            make_config(SourceModel::singlet(), FairConstant{0.8}, 0.3, 1.1, n, 2));
        CHECK(std::fabs(detected_rate(c) - 0.64) < 4 * detected_rate_std_error(c));
        CHECK(detected_rate_std_error(c) == Approx(oracle::binomial_se(0.64, n)).epsilon(1e-2));
    }
    SECTION("ideal source with the power model follows (1 + cos 4 delta) / 2")
    {
        double const phi = 0.4;
        std::uint64_t seed = 30;
        for (double delta : {0.0, kPi / 16, kPi / 8, 3 * kPi / 16, kPi / 4, 0.9})
        {
            double const expected = (1 + std::cos(4 * delta)) / 2;
            REQUIRE(std::pow(std::cos(2 * delta), 2) == Approx(expected).margin(1e-12));
            auto const c = run_batch(make_config(SourceModel::ideal_prepared(PolAngle{phi + delta}),
                                                 UnfairPower{1.0}, phi, phi, n, seed++));
            double const se = std::max(oracle::binomial_se(expected, n), 1.0 / n);
            CHECK(std::fabs(detected_rate(c) - expected) < 4 * se);
        }
    }
}

TEST_CASE("detected_rate needs analyzed pairs", "[stats]")
{
    CoincidenceCounts empty;
    CHECK_THROWS_AS(detected_rate(empty), NoDataError);
    CHECK_THROWS_AS(source_transmission(empty), NoDataError);

    CoincidenceCounts all_rejected;
    all_rejected.n_source_rejected = 5;
    all_rejected.n_emitted = 5;
    CHECK_THROWS_AS(detected_rate(all_rejected), NoDataError);
    CHECK(source_transmission(all_rejected) == 0.0);
}

TEST_CASE("detected_rate is 1 exactly when nothing is lost", "[stats][property]")
{
    std::mt19937_64 gen(8);
    std::uniform_int_distribution<std::uint64_t> count(0, 20);
    for (int i = 0; i < 5000; ++i)
    {
        auto c = coincidences(count(gen), count(gen), count(gen), count(gen));
        if (i % 2)
            c.n_single_left = count(gen);
        if (i % 3)
            c.n_none = count(gen);
        c.n_emitted = c.detected() + c.n_single_left + c.n_none;
        if (c.entered() == 0)
            continue;
        double const r = detected_rate(c);
        REQUIRE(r >= 0.0);
        REQUIRE(r <= 1.0);
        REQUIRE((r == 1.0) == (c.n_single_left + c.n_none == 0));
    }
}

//---------------------------------------------------------------------------//
// chsh
//---------------------------------------------------------------------------//
TEST_CASE("CHSH of the Malus product model", "[stats]")
{
    auto const angles = ChshAngles::standard();
    std::array<double, 4> e{};
    auto const settings = angles.settings();
    for (std::size_t j = 0; j < 4; ++j)
        e[j] = oracle::malus_correlation(settings[j].first.radians(),
                                         settings[j].second.radians());
    double const expected = oracle::chsh_s(e[0], e[1], e[2], e[3]);
    // E(delta) = -cos(2 delta) / 2 gives sqrt(2)
    REQUIRE(expected == Approx(std::sqrt(2.0)).margin(1e-6));

    auto cfg = make_config(SourceModel::singlet(), FairConstant{1.0}, 0, 0, 1'000'000, 40);
    auto const r = chsh(cfg, angles);
    CHECK(std::fabs(r.s_value - expected) < 4 * r.std_error);
    CHECK(r.s_value < 2.0);
    for (std::size_t j = 0; j < 4; ++j)
    {
        CHECK(std::fabs(r.per_setting[j].value - e[j]) < 4 * r.per_setting[j].std_error);
        CHECK(r.counts[j].n_emitted == 1'000'000);
    }
}

TEST_CASE("CHSH of the deterministic sign model sits at the bound", "[stats]")
{
    auto const angles = ChshAngles::standard();
    std::array<double, 4> e{};
    auto const settings = angles.settings();
    for (std::size_t j = 0; j < 4; ++j)
        e[j] = oracle::sign_correlation(settings[j].first.radians(),
                                        settings[j].second.radians());
    double const expected = oracle::chsh_s(e[0], e[1], e[2], e[3]);
    REQUIRE(expected == Approx(2.0).margin(1e-4));

    auto cfg = make_config(SourceModel::singlet(), IndependentErrors{1.0, 0.0}, 0, 0,
                           1'000'000, 41);
    auto const r = chsh(cfg, angles);
    CHECK(std::fabs(r.s_value - expected) < 4 * r.std_error);
}

TEST_CASE("CHSH of the threshold model exceeds 2", "[stats]")
{
    double const tau = 1 / std::sqrt(2.0);
    auto const angles = ChshAngles::standard();
    std::array<double, 4> e{};
    auto const settings = angles.settings();
    for (std::size_t j = 0; j < 4; ++j)
        e[j] = oracle::threshold_correlation(settings[j].first.radians(),
                                             settings[j].second.radians(), tau)
                   .correlation;
    double const expected = oracle::chsh_s(e[0], e[1], e[2], e[3]);
    REQUIRE(expected == Approx(4.0).margin(1e-9));

    auto cfg = make_config(SourceModel::singlet(), UnfairThreshold{tau}, 0, 0, 1'000'000, 42);
    auto const r = chsh(cfg, angles);
    CHECK(r.s_value - 2 >= 5 * r.std_error);
    CHECK(std::fabs(r.s_value - expected) <= 4 * r.std_error);
}

TEST_CASE("combine_chsh adds errors in quadrature", "[stats]")
{
    std::array<CorrelationEstimate, 4> e{{{0.5, 0.01, 1}, {-0.5, 0.02, 1},
                                          {0.5, 0.02, 1}, {0.5, 0.04, 1}}};
    auto const r = combine_chsh(ChshAngles::standard(), e);
    CHECK(r.s_value == Approx(2.0));
    CHECK(r.std_error == Approx(0.05));
}

//---------------------------------------------------------------------------//
// harmonic_analysis
//---------------------------------------------------------------------------//
TEST_CASE("flat noiseless sweep has no harmonics", "[stats]")
{
    auto const s = synthetic(16, [](double) { return 0.64; });
    auto const spec = harmonic_analysis(std::span<RateSample const>{s});
    CHECK(spec.mean_level == Approx(0.64));
    for (int k : kHarmonics)
        CHECK(spec.amplitudes.at(k).amplitude == Approx(0.0).margin(1e-15));
    CHECK(spec.chi2_flat == 0.0);
    CHECK(spec.dof == 15);
    CHECK(spec.p_flat == 1.0);
}

TEST_CASE("a pure k = 4 curve is recovered with its phase", "[stats]")
{
    double const phi = 0.3;
    auto const s = synthetic(16, [phi](double t) { return 0.5 + 0.25 * std::cos(4 * (t - phi)); });
    auto const spec = harmonic_analysis(std::span<RateSample const>{s});
    CHECK(spec.mean_level == Approx(0.5).margin(1e-14));
    CHECK(spec.amplitudes.at(4).amplitude == Approx(0.25).margin(1e-14));
    CHECK(phase_distance(spec.amplitudes.at(4).phase, 4 * phi) < 1e-12);
    CHECK(spec.amplitudes.at(2).amplitude == Approx(0.0).margin(1e-14));
    CHECK(std::isinf(spec.chi2_flat));
    CHECK(spec.p_flat == 0.0);
}

TEST_CASE("power model sweep has mean 1/2 and a k = 4 amplitude of 1/2", "[stats]")
{
    SweepPlan plan;
    plan.phi = PolAngle{0.4};
    plan.n_per_point = 1'000'000;
    plan.base_config.detection = UnfairPower{1.0};
    plan.base_config.seed = 50;
    auto const spec = harmonic_analysis(run_sweep(plan));
    auto const& h4 = spec.amplitudes.at(4);
    auto const& h2 = spec.amplitudes.at(2);
    double const mean_se = h4.std_error / std::sqrt(2.0);
    CHECK(std::fabs(spec.mean_level - 0.5) < 4 * mean_se);
    CHECK(std::fabs(h4.amplitude - 0.5) < 4 * h4.std_error);
    CHECK(h2.amplitude < 4 * h2.std_error);
    CHECK(phase_distance(h4.phase, 4 * 0.4) < 0.01);
}

TEST_CASE("harmonic_analysis rejects bad grids", "[stats]")
{
    auto const flat = [](double) { return 0.5; };
    auto const seven = synthetic(7, flat);
    CHECK_THROWS_AS(harmonic_analysis(std::span<RateSample const>{seven}), ProtocolError);

    auto uneven = synthetic(16, flat);
    uneven[3].theta = PolAngle{uneven[3].theta.radians() + 0.01};
    CHECK_THROWS_AS(harmonic_analysis(std::span<RateSample const>{uneven}), ProtocolError);

    auto duplicated = synthetic(16, flat);
    duplicated[15].theta = duplicated[0].theta;
    CHECK_THROWS_AS(harmonic_analysis(std::span<RateSample const>{duplicated}), ProtocolError);

    auto half = synthetic(16, flat);
    for (std::size_t i = 0; i < half.size(); ++i)
        half[i].theta = PolAngle{kPi / 2 * static_cast<double>(i) / 16};
    CHECK_THROWS_AS(harmonic_analysis(std::span<RateSample const>{half}), ProtocolError);

    auto const shifted = synthetic(12, flat, 0.0, 0.123);
    CHECK_NOTHROW(harmonic_analysis(std::span<RateSample const>{shifted}));
}

TEST_CASE("projection is exact for pure k = 2, 4 inputs", "[stats][property]")
{
    std::mt19937_64 gen(99);
    std::uniform_real_distribution<double> coef(-0.2, 0.2), unit(0, 1);
    for (int trial = 0; trial < 500; ++trial)
    {
        std::size_t const m = 8 + static_cast<std::size_t>(unit(gen) * 57);
        double const c0 = 0.5, a2 = coef(gen), b2 = coef(gen), a4 = coef(gen),
                     b4 = coef(gen);
        double const offset = unit(gen) * kPi;
        auto const s = synthetic(
            m,
            [&](double t) {
                return c0 + a2 * std::cos(2 * t) + b2 * std::sin(2 * t)
                       + a4 * std::cos(4 * t) + b4 * std::sin(4 * t);
            },
            0.0, offset);
        auto const spec = harmonic_analysis(std::span<RateSample const>{s});
        REQUIRE(spec.mean_level == Approx(c0).margin(1e-12));
        REQUIRE(spec.amplitudes.at(2).amplitude == Approx(std::hypot(a2, b2)).margin(1e-12));
        REQUIRE(spec.amplitudes.at(4).amplitude == Approx(std::hypot(a4, b4)).margin(1e-12));
        if (std::hypot(a4, b4) > 1e-3)
            REQUIRE(phase_distance(spec.amplitudes.at(4).phase, std::atan2(b4, a4)) < 1e-9);
        REQUIRE(spec.p_flat >= 0.0);
        REQUIRE(spec.p_flat <= 1.0);
    }
}

TEST_CASE("harmonic error is the noise-floor RMS", "[stats]")
{
    // Uniform point error s on m points: sqrt(var a + var b) = 2 s / sqrt(m)
    auto const s = synthetic(16, [](double) { return 0.5; }, 0.01);
    auto const spec = harmonic_analysis(std::span<RateSample const>{s});
    for (int k : kHarmonics)
        CHECK(spec.amplitudes.at(k).std_error == Approx(2 * 0.01 / 4));
}

TEST_CASE("doubling the sample shrinks errors by 1/sqrt(2)", "[stats][property]")
{
    constexpr int seeds = 1000;
    constexpr std::uint64_t n = 1000;
    auto spread = [&](std::uint64_t pairs, std::uint64_t seed0, double& reported) {
        double sum = 0, sum2 = 0;
        reported = 0;
        for (int s = 0; s < seeds; ++s)
        {
            auto const c = run_batch(make_config(SourceModel::singlet(), FairConstant{0.8},
                                                 0.0, kPi / 8, pairs, seed0 + s));
            auto const e = correlation(c);
            sum += e.value;
            sum2 += e.value * e.value;
            reported += e.std_error / seeds;
        }
        double const mean = sum / seeds;
        return std::sqrt((sum2 - seeds * mean * mean) / (seeds - 1));
    };
    double rep1 = 0, rep2 = 0;
    double const emp1 = spread(n, 10'000, rep1);
    double const emp2 = spread(2 * n, 20'000, rep2);
    double const target = 1 / std::sqrt(2.0);
    CHECK(rep2 / rep1 == Approx(target).epsilon(0.1));
    CHECK(emp2 / emp1 == Approx(target).epsilon(0.1));
    // Reported errors match the seed-to-seed scatter
    CHECK(rep1 == Approx(emp1).epsilon(0.1));
}
