#pragma once

#include <cstdint>
#include <limits>

namespace bellfair
{
namespace detail
{
inline constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ULL;

//! SplitMix64 output finalizer; a bijection on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept
{
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}
}  // namespace detail

//! Domains for substream derivation, so that e.g. trial 3 and sweep point 3
//! of the same seed never share a stream.
enum class StreamDomain : std::uint64_t
{
    trial = 0x7452,
    sweep_point = 0x5350,
    chsh_setting = 0x4353,
    control_point = 0x4350,
};

//! Child seed for index `index` in `domain` under `parent`.
constexpr std::uint64_t
derive_seed(std::uint64_t parent, StreamDomain domain, std::uint64_t index) noexcept
{
    using detail::kGoldenGamma;
    using detail::mix64;
    std::uint64_t const keyed
        = mix64(parent ^ mix64(static_cast<std::uint64_t>(domain)));
    return mix64(keyed + (index + 1) * kGoldenGamma);
}

//---------------------------------------------------------------------------//
/*!
 * Deterministic random stream (SplitMix64).
 *
 * Satisfies UniformRandomBitGenerator. Every trial of a batch owns its own
 * stream, keyed by (batch seed, trial index), which is what makes batch
 * results independent of how trials are partitioned over workers.
 */
class Stream
{
  public:
    using result_type = std::uint64_t;

    constexpr explicit Stream(std::uint64_t seed) noexcept : state_(seed) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept
    {
        return std::numeric_limits<result_type>::max();
    }

    constexpr result_type operator()() noexcept
    {
        state_ += detail::kGoldenGamma;
        return detail::mix64(state_);
    }

    //! Uniform double on [0, 1) with 53 random bits.
    constexpr double uniform() noexcept
    {
        return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
    }

  private:
    std::uint64_t state_;
};

//! Stream for trial `index` of a batch seeded with `batch_seed`.
constexpr Stream trial_stream(std::uint64_t batch_seed, std::uint64_t index) noexcept
{
    return Stream{derive_seed(batch_seed, StreamDomain::trial, index)};
}

}  // namespace bellfair
