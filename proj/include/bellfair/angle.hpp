#pragma once

#include <cmath>
#include <numbers>

namespace bellfair
{
inline constexpr double kPi = std::numbers::pi;

//! Reduce an angle to [0, pi). Polarization is axis-like, so x and x + pi
//! describe the same direction.
inline double canonical_radians(double x) noexcept
{
    double r = std::fmod(x, kPi);
    if (r < 0)
        r += kPi;
    // r + pi can round up to pi for tiny negative inputs
    if (r >= kPi)
        r = 0;
    return r;
}

//! Same reduction in degrees, mod 180. Exact for decimal inputs such as 202.5.
inline double canonical_degrees(double deg) noexcept
{
    double r = std::fmod(deg, 180.0);
    if (r < 0)
        r += 180.0;
    if (r >= 180.0)
        r = 0;
    return r;
}

//---------------------------------------------------------------------------//
/*!
 * Polarization direction in radians, always canonical in [0, pi).
 *
 * Used for hidden photon polarizations, analyzer settings and the source
 * preparation angle.
 */
class PolAngle
{
  public:
    constexpr PolAngle() noexcept = default;
    explicit PolAngle(double radians) noexcept
        : value_(canonical_radians(radians))
    {
    }

    static PolAngle from_degrees(double deg) noexcept
    {
        PolAngle a;
        a.value_ = canonical_degrees(deg) * (kPi / 180.0);
        // 179.99999999999997 deg can land on pi after scaling
        if (a.value_ >= kPi)
            a.value_ = 0;
        return a;
    }

    constexpr double radians() const noexcept { return value_; }
    double degrees() const noexcept { return value_ * (180.0 / kPi); }

    friend constexpr bool operator==(PolAngle, PolAngle) noexcept = default;

  private:
    double value_ = 0;
};

//! Shortest axis distance between two polarization directions, in [0, pi/2].
inline double axis_distance(PolAngle a, PolAngle b) noexcept
{
    double d = std::fabs(a.radians() - b.radians());
    return d > kPi / 2 ? kPi - d : d;
}

}  // namespace bellfair
