// Exploratory temporal-proximity analyses over a preprocessed dataset:
// the distribution of day intervals between a user's consecutive
// interactions, and the cross-user item overlap ratio under a day window.

#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "temprox/common.hpp"
#include "temprox/data.hpp"

namespace temprox::analysis {

struct OverlapConfig {
    std::int64_t window_radius_days = 30;
    std::size_t top_u = 100;

    void validate() const {
        if (window_radius_days < 0) throw config_error("overlap: window radius must be >= 0");
        if (top_u < 1) throw config_error("overlap: top_u must be >= 1");
    }
};

struct IntervalHistogram {
    std::map<std::int64_t, std::size_t> counts;  // interval (days) -> count, zeros excluded
    std::size_t zero_count = 0;                  // reported separately
    std::size_t total_pairs = 0;                 // zero_count + sum(counts)
};

// Day intervals between consecutive interactions of every user. Zero
// intervals are excluded from the histogram and reported as a side count.
inline IntervalHistogram interval_distribution(const data::Dataset& ds) {
    IntervalHistogram hist;
    for (const auto& seq : ds.user_sequences) {
        for (std::size_t i = 1; i < seq.size(); ++i) {
            const std::int64_t gap = seq[i].day - seq[i - 1].day;
            ++hist.total_pairs;
            if (gap == 0)
                ++hist.zero_count;
            else
                ++hist.counts[gap];
        }
    }
    return hist;
}

// Per-item postings sorted by day, for windowed other-user lookups.
class OverlapIndex {
public:
    explicit OverlapIndex(const data::Dataset& ds) : ds_(ds), postings_(ds.num_items() + 1) {
        for (std::size_t u = 0; u < ds.num_users(); ++u)
            for (const data::Event& e : ds.user_sequences[u])
                postings_[static_cast<std::size_t>(e.item)].push_back({e.day, u});
        for (auto& p : postings_) std::sort(p.begin(), p.end());
    }

    // True when some other user interacted with `item` at a day within
    // [day - delta, day + delta], boundaries inclusive.
    bool overlapped(std::size_t user, std::int64_t item, std::int64_t day,
                    std::int64_t delta) const {
        const auto& p = postings_[static_cast<std::size_t>(item)];
        auto it = std::lower_bound(p.begin(), p.end(), std::pair<std::int64_t, std::size_t>{day - delta, 0});
        for (; it != p.end() && it->first <= day + delta; ++it)
            if (it->second != user) return true;
        return false;
    }

    // Fraction of the user's interactions (each judged separately, duplicates
    // included) whose item some other user selected inside the window.
    double ratio(std::size_t user, std::int64_t delta) const {
        if (user >= ds_.num_users())
            throw index_error("overlap_ratio: unknown user " + std::to_string(user));
        const auto& seq = ds_.user_sequences[user];
        if (seq.empty()) throw contract_error("overlap_ratio: user has no interactions");
        std::size_t hit = 0;
        for (const data::Event& e : seq)
            if (overlapped(user, e.item, e.day, delta)) ++hit;
        return static_cast<double>(hit) / static_cast<double>(seq.size());
    }

private:
    const data::Dataset& ds_;
    std::vector<std::vector<std::pair<std::int64_t, std::size_t>>> postings_;
};

inline double overlap_ratio(const data::Dataset& ds, std::size_t user, std::int64_t delta) {
    return OverlapIndex(ds).ratio(user, delta);
}

// The top_u most active users by interaction count, ties by user index.
inline std::vector<std::size_t> most_active_users(const data::Dataset& ds, std::size_t top_u) {
    std::vector<std::size_t> order(ds.num_users());
    for (std::size_t u = 0; u < order.size(); ++u) order[u] = u;
    std::sort(order.begin(), order.end(), [&ds](std::size_t a, std::size_t b) {
        const std::size_t ca = ds.user_sequences[a].size(), cb = ds.user_sequences[b].size();
        return ca != cb ? ca > cb : a < b;
    });
    order.resize(std::min(top_u, order.size()));
    return order;
}

inline double average_overlap(const data::Dataset& ds, const OverlapConfig& cfg) {
    cfg.validate();
    if (ds.num_users() == 0) throw contract_error("average_overlap: empty dataset");
    OverlapIndex index(ds);
    const auto users = most_active_users(ds, cfg.top_u);
    double sum = 0.0;
    for (std::size_t u : users) sum += index.ratio(u, cfg.window_radius_days);
    return sum / static_cast<double>(users.size());
}

// ---------------------------------------------------------------------------
// Plot-ready artifacts
// ---------------------------------------------------------------------------

inline void write_interval_csv(const IntervalHistogram& hist, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write " + path);
    out << "interval_days,count\n";
    for (const auto& [gap, count] : hist.counts) out << gap << ',' << count << '\n';
    if (!out) throw io_error("write failed for " + path);
}

inline nlohmann::ordered_json interval_summary_json(const IntervalHistogram& hist) {
    return nlohmann::ordered_json{{"total_pairs", hist.total_pairs},
                                  {"zero_interval_pairs", hist.zero_count},
                                  {"distinct_nonzero_intervals", hist.counts.size()}};
}

inline void write_overlap_csv(const data::Dataset& ds, const OverlapConfig& cfg,
                              const std::string& path) {
    cfg.validate();
    std::ofstream out(path);
    if (!out) throw io_error("cannot write " + path);
    OverlapIndex index(ds);
    out << "user,ratio\n";
    for (std::size_t u : most_active_users(ds, cfg.top_u))
        out << ds.user_ids[u] << ',' << index.ratio(u, cfg.window_radius_days) << '\n';
    if (!out) throw io_error("write failed for " + path);
}

}  // namespace temprox::analysis
