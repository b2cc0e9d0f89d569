// Synthetic interaction corpus with planted temporal structure.
//
// Two signals are planted. Vertical: during each trend episode a pool of
// items is interacted with by many users at once (an event at day t draws
// from the active pool with probability p_trend). Horizontal: the remaining
// events follow a fixed order-1 Markov transition over items, so a user's
// next item depends on their previous one.

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "temprox/common.hpp"
#include "temprox/data.hpp"

namespace temprox::data {

struct SynthConfig {
    std::size_t num_users = 2000;
    std::size_t num_items = 500;
    std::int64_t horizon_days = 365;
    std::size_t num_trends = 12;        // trend episodes, evenly spaced
    std::int64_t trend_window = 30;     // days each trend stays active
    double p_trend = 0.7;               // chance an event draws from the active pool
    double markov_sharpness = 0.8;      // chance a non-trend event follows the transition
    std::size_t events_min = 8;         // events per user ~ uniform[min, max]
    std::size_t events_max = 40;
    std::size_t pool_size = 20;         // items per trend pool
    std::uint64_t seed = 1;

    void validate() const {
        if (num_users == 0 || num_items == 0) throw config_error("synth: users/items must be > 0");
        if (p_trend < 0.0 || p_trend > 1.0) throw config_error("synth: p_trend must be in [0,1]");
        if (markov_sharpness < 0.0 || markov_sharpness > 1.0)
            throw config_error("synth: markov_sharpness must be in [0,1]");
        if (horizon_days < trend_window) throw config_error("synth: horizon must be >= trend_window");
        if (events_min == 0 || events_max < events_min)
            throw config_error("synth: bad events_min/events_max");
        if (num_trends > 0 && pool_size == 0) throw config_error("synth: pool_size must be > 0");
    }
};

namespace detail {

inline std::string padded_id(const char* prefix, std::size_t i, std::size_t width = 5) {
    std::string digits = std::to_string(i);
    if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
    return prefix + digits;
}

}  // namespace detail

// Trend pools: disjoint chunks of a seeded item shuffle, windows evenly
// spaced over the horizon. Pool assignment never depends on the window
// geometry, so p_trend = 0 outputs are window-invariant.
struct TrendLayout {
    std::vector<std::vector<std::int64_t>> pools;
    std::vector<std::int64_t> starts;  // trend k active on [starts[k], starts[k]+window)
};

namespace detail {

inline TrendLayout make_trend_layout(const SynthConfig& cfg, std::mt19937_64& rng) {
    std::vector<std::int64_t> shuffled(cfg.num_items);
    std::iota(shuffled.begin(), shuffled.end(), 1);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const std::size_t pool_size =
        cfg.num_trends == 0 ? 0 : std::min(cfg.pool_size, cfg.num_items / std::max<std::size_t>(cfg.num_trends, 1));
    TrendLayout layout;
    layout.pools.resize(cfg.num_trends);
    layout.starts.assign(cfg.num_trends, 0);
    for (std::size_t k = 0; k < cfg.num_trends; ++k) {
        layout.pools[k].assign(shuffled.begin() + static_cast<std::ptrdiff_t>(k * pool_size),
                               shuffled.begin() + static_cast<std::ptrdiff_t>((k + 1) * pool_size));
        layout.starts[k] = cfg.num_trends == 1
                               ? 0
                               : (static_cast<std::int64_t>(k) * (cfg.horizon_days - cfg.trend_window)) /
                                     static_cast<std::int64_t>(cfg.num_trends - 1);
    }
    return layout;
}

}  // namespace detail

// The layout synth_generate(cfg) will use, for verification.
inline TrendLayout synth_trend_layout(const SynthConfig& cfg) {
    cfg.validate();
    auto rng = make_rng(derive_seed(cfg.seed, 0xD47A));
    return detail::make_trend_layout(cfg, rng);
}

inline std::vector<Interaction> synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    auto rng = make_rng(derive_seed(cfg.seed, 0xD47A));
    const TrendLayout layout = detail::make_trend_layout(cfg, rng);
    const auto& pools = layout.pools;
    const auto& trend_start = layout.starts;
    const std::size_t pool_size = pools.empty() ? 0 : pools[0].size();

    // Fixed order-1 transition: every item gets a handful of successors.
    constexpr std::size_t kSuccessors = 5;
    std::uniform_int_distribution<std::int64_t> any_item(1, static_cast<std::int64_t>(cfg.num_items));
    std::vector<std::array<std::int64_t, kSuccessors>> successors(cfg.num_items + 1);
    for (std::size_t i = 1; i <= cfg.num_items; ++i)
        for (std::size_t s = 0; s < kSuccessors; ++s) successors[i][s] = any_item(rng);

    std::uniform_int_distribution<std::size_t> event_count(cfg.events_min, cfg.events_max);
    std::uniform_int_distribution<std::int64_t> any_day(0, cfg.horizon_days - 1);
    std::uniform_int_distribution<std::int64_t> second_of_day(0, kSecondsPerDay - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> succ_pick(0, kSuccessors - 1);

    std::vector<Interaction> out;
    std::vector<std::size_t> active;
    for (std::size_t u = 0; u < cfg.num_users; ++u) {
        const std::size_t count = event_count(rng);
        std::vector<std::int64_t> days(count);
        for (auto& d : days) d = any_day(rng);
        std::sort(days.begin(), days.end());

        std::int64_t prev_item = 0;
        const std::string user_id = detail::padded_id("u", u + 1);
        for (std::int64_t day : days) {
            active.clear();
            for (std::size_t k = 0; k < cfg.num_trends; ++k)
                if (pool_size > 0 && day >= trend_start[k] && day < trend_start[k] + cfg.trend_window)
                    active.push_back(k);

            std::int64_t item;
            const double trend_draw = unit(rng);  // always consumed, keeps the
                                                  // stream window-independent
            if (!active.empty() && trend_draw < cfg.p_trend) {
                const auto& pool =
                    pools[active[active.size() == 1
                                     ? 0
                                     : std::uniform_int_distribution<std::size_t>(0, active.size() - 1)(rng)]];
                item = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
            } else if (prev_item != 0 && unit(rng) < cfg.markov_sharpness) {
                item = successors[static_cast<std::size_t>(prev_item)][succ_pick(rng)];
            } else {
                item = any_item(rng);
            }
            prev_item = item;
            out.push_back(Interaction{user_id, detail::padded_id("i", static_cast<std::size_t>(item)),
                                      day * kSecondsPerDay + second_of_day(rng)});
        }
    }
    return out;
}

}  // namespace temprox::data
