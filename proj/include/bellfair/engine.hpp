#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "angle.hpp"
#include "errors.hpp"
#include "models.hpp"
#include "random.hpp"

namespace bellfair
{
//---------------------------------------------------------------------------//
/*!
 * Everything needed to reproduce one batch of trials.
 *
 * `shards` sets how many contiguous trial ranges are executed concurrently.
 * It does not change the result: each trial draws from its own stream keyed
 * by (seed, trial index).
 */
struct ExperimentConfig
{
    SourceModel source;
    DetectionModel detection = FairConstant{1.0};
    PolAngle phi1;
    PolAngle phi2;
    std::uint64_t n_pairs = 1'000'000;
    std::uint64_t seed = 0;
    std::uint32_t shards = 1;

    void validate() const
    {
        if (n_pairs < 1)
            throw ConfigError("n_pairs", "must be >= 1");
        if (shards < 1)
            throw ConfigError("shards", "must be >= 1");
        bellfair::validate(detection);
    }
};

//---------------------------------------------------------------------------//
//! Fourfold coincidence tallies plus every way a pair can be lost.
struct CoincidenceCounts
{
    std::uint64_t n_pp = 0;
    std::uint64_t n_pm = 0;
    std::uint64_t n_mp = 0;
    std::uint64_t n_mm = 0;
    std::uint64_t n_single_left = 0;   //!< Only the left photon detected
    std::uint64_t n_single_right = 0;  //!< Only the right photon detected
    std::uint64_t n_none = 0;
    std::uint64_t n_source_rejected = 0;
    std::uint64_t n_emitted = 0;

    //! Pairs with both photons registered, R_++ + R_+- + R_-+ + R_--.
    constexpr std::uint64_t detected() const noexcept
    {
        return n_pp + n_pm + n_mp + n_mm;
    }

    //! Pairs that reached the analyzers.
    constexpr std::uint64_t entered() const noexcept
    {
        return n_emitted - n_source_rejected;
    }

    //! Exact accounting identity over all nine fields.
    constexpr bool is_balanced() const noexcept
    {
        // Computed without overflow: each partial sum is bounded by n_emitted
        // whenever the identity holds.
        std::uint64_t sum = 0;
        for (std::uint64_t v : {n_pp, n_pm, n_mp, n_mm, n_single_left,
                                n_single_right, n_none, n_source_rejected})
        {
            if (v > n_emitted - sum)
                return false;
            sum += v;
        }
        return sum == n_emitted;
    }

    friend constexpr bool
    operator==(CoincidenceCounts const&, CoincidenceCounts const&) noexcept
        = default;
};

namespace detail
{
inline std::uint64_t checked_add(std::uint64_t a, std::uint64_t b, char const* field)
{
    if (b > std::numeric_limits<std::uint64_t>::max() - a)
        throw OverflowError(std::string("counter overflow in ") + field);
    return a + b;
}
}  // namespace detail

//! Field-wise sum; throws OverflowError instead of wrapping.
inline CoincidenceCounts
merge_counts(CoincidenceCounts const& a, CoincidenceCounts const& b)
{
    using detail::checked_add;
    CoincidenceCounts r;
    r.n_pp = checked_add(a.n_pp, b.n_pp, "n_pp");
    r.n_pm = checked_add(a.n_pm, b.n_pm, "n_pm");
    r.n_mp = checked_add(a.n_mp, b.n_mp, "n_mp");
    r.n_mm = checked_add(a.n_mm, b.n_mm, "n_mm");
    r.n_single_left = checked_add(a.n_single_left, b.n_single_left, "n_single_left");
    r.n_single_right
        = checked_add(a.n_single_right, b.n_single_right, "n_single_right");
    r.n_none = checked_add(a.n_none, b.n_none, "n_none");
    r.n_source_rejected
        = checked_add(a.n_source_rejected, b.n_source_rejected, "n_source_rejected");
    r.n_emitted = checked_add(a.n_emitted, b.n_emitted, "n_emitted");
    return r;
}

//---------------------------------------------------------------------------//
// TRIALS
//---------------------------------------------------------------------------//
struct OutcomePair
{
    Outcome left;
    Outcome right;
};

//! One emitted pair. `outcomes` is empty when the source polarizers
//! absorbed it; `state` then holds the pre-filter draw.
struct TrialRecord
{
    PairHiddenState state;
    std::optional<OutcomePair> outcomes;

    bool source_rejected() const noexcept { return !outcomes.has_value(); }
};

//! Emit, filter, and measure one pair; left at phi1 and right at phi2.
inline TrialRecord run_trial(ExperimentConfig const& config, Stream& rng)
{
    TrialRecord rec;
    if (config.source.kind == SourceKind::polarizer_filtered)
    {
        rec.state = draw_singlet(config.source.correlation, rng);
        auto passed = apply_source_polarizers(rec.state, config.source.theta, rng);
        if (!passed)
            return rec;
        rec.state = *passed;
    }
    else
    {
        rec.state = *emit_pair(config.source, rng);
    }
    Outcome const left = measure_photon(rec.state.lambda_left, rec.state.aux_left,
                                        config.phi1, config.detection, rng);
    Outcome const right = measure_photon(rec.state.lambda_right, rec.state.aux_right,
                                         config.phi2, config.detection, rng);
    rec.outcomes = OutcomePair{left, right};
    return rec;
}

//! Add one trial to the tally it belongs to.
constexpr void tally(CoincidenceCounts& c, TrialRecord const& rec) noexcept
{
    ++c.n_emitted;
    if (!rec.outcomes)
    {
        ++c.n_source_rejected;
        return;
    }
    auto const [l, r] = *rec.outcomes;
    bool const dl = l != Outcome::undetected;
    bool const dr = r != Outcome::undetected;
    if (dl && dr)
    {
        bool const lp = l == Outcome::plus;
        bool const rp = r == Outcome::plus;
        if (lp && rp)
            ++c.n_pp;
        else if (lp)
            ++c.n_pm;
        else if (rp)
            ++c.n_mp;
        else
            ++c.n_mm;
    }
    else if (dl)
        ++c.n_single_left;
    else if (dr)
        ++c.n_single_right;
    else
        ++c.n_none;
}

//! Per-side outcome tallies over {plus, minus, undetected}, singles
//! included; source-rejected pairs are not counted. CoincidenceCounts does
//! not split singles by channel, so this is collected through a TrialSink.
struct SideMarginals
{
    std::array<std::uint64_t, 3> left{};
    std::array<std::uint64_t, 3> right{};

    void add(TrialRecord const& rec) noexcept
    {
        if (!rec.outcomes)
            return;
        ++left[static_cast<std::size_t>(rec.outcomes->left)];
        ++right[static_cast<std::size_t>(rec.outcomes->right)];
    }
};

//---------------------------------------------------------------------------//
// BATCHES
//---------------------------------------------------------------------------//
struct TrialRange
{
    std::uint64_t begin = 0;
    std::uint64_t end = 0;
};

//! Split [0, n) into `shards` contiguous ranges; earlier shards get the
//! remainder, so sizes differ by at most one.
inline std::vector<TrialRange> shard_ranges(std::uint64_t n, std::uint32_t shards)
{
    std::vector<TrialRange> ranges(shards);
    std::uint64_t const base = n / shards;
    std::uint64_t const extra = n % shards;
    std::uint64_t pos = 0;
    for (std::uint32_t i = 0; i < shards; ++i)
    {
        std::uint64_t const len = base + (i < extra ? 1 : 0);
        ranges[i] = {pos, pos + len};
        pos += len;
    }
    return ranges;
}

//! Called for each trial in index order when an event log is requested.
using TrialSink = std::function<void(std::uint64_t index, TrialRecord const&)>;

//! Run trials [range.begin, range.end) of the batch defined by `config`.
inline CoincidenceCounts run_shard(ExperimentConfig const& config, TrialRange range,
                                   TrialSink const& sink = {})
{
    CoincidenceCounts c;
    for (std::uint64_t i = range.begin; i < range.end; ++i)
    {
        Stream rng = trial_stream(config.seed, i);
        TrialRecord const rec = run_trial(config, rng);
        tally(c, rec);
        if (sink)
            sink(i, rec);
    }
    return c;
}

/*!
 * Run exactly `config.n_pairs` trials and tally them.
 *
 * Shards execute on separate threads unless a sink is given, in which case
 * they run in order on the calling thread so events arrive by trial index.
 * Shard results are merged in shard order.
 */
inline CoincidenceCounts
run_batch(ExperimentConfig const& config, TrialSink const& sink = {})
{
    config.validate();
    auto const ranges = shard_ranges(config.n_pairs, config.shards);
    std::vector<CoincidenceCounts> partial(ranges.size());

    if (sink || ranges.size() == 1)
    {
        for (std::size_t i = 0; i < ranges.size(); ++i)
            partial[i] = run_shard(config, ranges[i], sink);
    }
    else
    {
        std::vector<std::jthread> workers;
        workers.reserve(ranges.size());
        for (std::size_t i = 0; i < ranges.size(); ++i)
        {
            workers.emplace_back([&config, &ranges, &partial, i] {
                partial[i] = run_shard(config, ranges[i]);
            });
        }
    }

    CoincidenceCounts total;
    for (auto const& p : partial)
        total = merge_counts(total, p);
    return total;
}

}  // namespace bellfair
