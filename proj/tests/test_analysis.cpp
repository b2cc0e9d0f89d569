#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "temprox/analysis.hpp"

using namespace temprox;
using namespace temprox::analysis;
using temprox::data::Dataset;
using temprox::data::Event;
using temprox::data::Interaction;

namespace {

Dataset dataset_of(const std::vector<std::vector<std::pair<std::string, std::int64_t>>>& users) {
    std::vector<Interaction> log;
    for (std::size_t u = 0; u < users.size(); ++u)
        for (const auto& [item, day] : users[u])
            log.push_back(Interaction{"u" + std::to_string(u), item, day * data::kSecondsPerDay});
    return data::preprocess(log, 1, 1);
}

// O(N^2) oracles
std::map<std::int64_t, std::size_t> oracle_intervals(const Dataset& ds, std::size_t& zeros,
                                                     std::size_t& total) {
    std::map<std::int64_t, std::size_t> out;
    zeros = total = 0;
    for (const auto& seq : ds.user_sequences)
        for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
            ++total;
            const auto gap = seq[i + 1].day - seq[i].day;
            if (gap == 0)
                ++zeros;
            else
                ++out[gap];
        }
    return out;
}

double oracle_overlap(const Dataset& ds, std::size_t user, std::int64_t delta) {
    const auto& seq = ds.user_sequences[user];
    std::size_t hit = 0;
    for (const Event& e : seq) {
        bool found = false;
        for (std::size_t v = 0; v < ds.num_users() && !found; ++v) {
            if (v == user) continue;
            for (const Event& o : ds.user_sequences[v])
                if (o.item == e.item && std::llabs(o.day - e.day) <= delta) {
                    found = true;
                    break;
                }
        }
        if (found) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(seq.size());
}

}  // namespace

TEST_CASE("interval_distribution hand cases") {
    auto ds = dataset_of({{{"a", 0}, {"b", 3}, {"c", 10}}});
    auto hist = interval_distribution(ds);
    REQUIRE(hist.counts == std::map<std::int64_t, std::size_t>{{3, 1}, {7, 1}});
    REQUIRE(hist.zero_count == 0);
    REQUIRE(hist.total_pairs == 2);

    // single-interaction users contribute nothing
    auto ds2 = dataset_of({{{"a", 0}}, {{"b", 5}}});
    auto hist2 = interval_distribution(ds2);
    REQUIRE(hist2.total_pairs == 0);
    REQUIRE(hist2.counts.empty());

    // zero intervals excluded from the histogram, reported separately
    auto ds3 = dataset_of({{{"a", 4}, {"b", 4}, {"c", 9}}});
    auto hist3 = interval_distribution(ds3);
    REQUIRE(hist3.zero_count == 1);
    REQUIRE(hist3.counts == std::map<std::int64_t, std::size_t>{{5, 1}});
}

TEST_CASE("interval_distribution equals brute force on a handcrafted log") {
    auto ds = dataset_of({{{"a", 0}, {"b", 2}, {"a", 2}, {"c", 30}},
                          {{"d", 5}, {"a", 6}},
                          {{"b", 1}},
                          {{"c", 0}, {"c", 10}, {"c", 20}, {"b", 20}, {"a", 40}}});
    std::size_t zeros = 0, total = 0;
    auto expect = oracle_intervals(ds, zeros, total);
    auto hist = interval_distribution(ds);
    REQUIRE(hist.counts == expect);
    REQUIRE(hist.zero_count == zeros);
    REQUIRE(hist.total_pairs == total);
}

TEST_CASE("interval_distribution total equals the pair-count identity") {
    auto rng = make_rng(3);
    std::uniform_int_distribution<int> len(1, 9), day(0, 40), item(0, 6);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<std::vector<std::pair<std::string, std::int64_t>>> users(5);
        for (auto& u : users) {
            const int L = len(rng);
            for (int i = 0; i < L; ++i) u.emplace_back("i" + std::to_string(item(rng)), day(rng));
        }
        auto ds = dataset_of(users);
        auto hist = interval_distribution(ds);
        std::size_t expect = 0;
        for (const auto& seq : ds.user_sequences) expect += seq.empty() ? 0 : seq.size() - 1;
        std::size_t histogram_sum = hist.zero_count;
        for (const auto& [gap, c] : hist.counts) histogram_sum += c;
        REQUIRE(hist.total_pairs == expect);
        REQUIRE(histogram_sum == expect);
    }
}

TEST_CASE("overlap_ratio hand case") {
    // A: (i1,0),(i2,10); B: (i1,5),(i3,12); delta=30 -> r_A = 1/2
    auto ds = dataset_of({{{"i1", 0}, {"i2", 10}}, {{"i1", 5}, {"i3", 12}}});
    REQUIRE(overlap_ratio(ds, 0, 30) == Catch::Approx(0.5));
    REQUIRE(overlap_ratio(ds, 1, 30) == Catch::Approx(0.5));
    // saturation: window spans everything and every item of A is shared
    auto ds2 = dataset_of({{{"i1", 0}, {"i2", 50}}, {{"i1", 40}, {"i2", 3}}});
    REQUIRE(overlap_ratio(ds2, 0, 100) == 1.0);
    // single user: no other users, ratio 0
    auto ds3 = dataset_of({{{"i1", 0}, {"i2", 5}}});
    REQUIRE(overlap_ratio(ds3, 0, 1000) == 0.0);
    REQUIRE_THROWS_AS(overlap_ratio(ds3, 7, 10), index_error);
}

TEST_CASE("overlap_ratio boundary is inclusive in day units") {
    auto ds = dataset_of({{{"i1", 0}}, {{"i1", 30}}, {{"x", 0}, {"x", 1}}});
    REQUIRE(overlap_ratio(ds, 0, 30) == 1.0);
    REQUIRE(overlap_ratio(ds, 0, 29) == 0.0);
}

TEST_CASE("overlap_ratio is monotone in delta") {
    auto rng = make_rng(8);
    std::uniform_int_distribution<int> len(1, 8), day(0, 50), item(0, 5);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::vector<std::pair<std::string, std::int64_t>>> users(6);
        for (auto& u : users) {
            const int L = len(rng);
            for (int i = 0; i < L; ++i) u.emplace_back("i" + std::to_string(item(rng)), day(rng));
        }
        auto ds = dataset_of(users);
        OverlapIndex index(ds);
        for (std::size_t u = 0; u < ds.num_users(); ++u) {
            double prev = -1.0;
            for (std::int64_t delta : {0, 2, 5, 10, 25, 60}) {
                const double r = index.ratio(u, delta);
                REQUIRE(r >= prev);
                prev = r;
            }
        }
    }
}

TEST_CASE("both analyses match the quadratic oracle on small datasets") {
    auto rng = make_rng(12);
    std::uniform_int_distribution<int> nusers(2, 10), len(1, 12), day(0, 60), item(0, 8),
        delta(0, 40);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<std::vector<std::pair<std::string, std::int64_t>>> users(
            static_cast<std::size_t>(nusers(rng)));
        for (auto& u : users) {
            const int L = len(rng);
            for (int i = 0; i < L; ++i) u.emplace_back("i" + std::to_string(item(rng)), day(rng));
        }
        auto ds = dataset_of(users);
        const std::int64_t d = delta(rng);
        OverlapIndex index(ds);
        for (std::size_t u = 0; u < ds.num_users(); ++u)
            REQUIRE(index.ratio(u, d) == oracle_overlap(ds, u, d));
        std::size_t zeros = 0, total = 0;
        auto expect = oracle_intervals(ds, zeros, total);
        auto hist = interval_distribution(ds);
        REQUIRE(hist.counts == expect);
        REQUIRE(hist.zero_count == zeros);
    }
}

TEST_CASE("average_overlap selects the most active users") {
    // u0 has 4 interactions, u1 has 2, u2 has 2: top_u=1 -> r_{u0}
    auto ds = dataset_of({{{"a", 0}, {"b", 1}, {"c", 2}, {"d", 3}},
                          {{"a", 1}, {"x", 9}},
                          {{"b", 2}, {"y", 9}}});
    OverlapConfig cfg;
    cfg.window_radius_days = 3;
    cfg.top_u = 1;
    REQUIRE(average_overlap(ds, cfg) == Catch::Approx(overlap_ratio(ds, 0, 3)));
    // ties by user index: u1 before u2
    auto top = most_active_users(ds, 2);
    REQUIRE(top == std::vector<std::size_t>{0, 1});
    cfg.top_u = 100;  // clamps to available users
    REQUIRE_NOTHROW(average_overlap(ds, cfg));
    cfg.top_u = 0;
    REQUIRE_THROWS_AS(average_overlap(ds, cfg), config_error);
}

TEST_CASE("plot-ready artifacts are written") {
    namespace fs = std::filesystem;
    auto ds = dataset_of({{{"a", 0}, {"b", 5}, {"a", 9}}, {{"a", 2}, {"b", 6}}});
    const std::string hist_path = (fs::temp_directory_path() / "temprox_hist.csv").string();
    const std::string ov_path = (fs::temp_directory_path() / "temprox_overlap.csv").string();
    write_interval_csv(interval_distribution(ds), hist_path);
    OverlapConfig cfg;
    cfg.window_radius_days = 5;
    write_overlap_csv(ds, cfg, ov_path);
    std::ifstream h(hist_path), o(ov_path);
    std::string line;
    std::getline(h, line);
    REQUIRE(line == "interval_days,count");
    std::getline(o, line);
    REQUIRE(line == "user,ratio");
    auto j = interval_summary_json(interval_distribution(ds));
    REQUIRE(j["total_pairs"] == 3);
    std::remove(hist_path.c_str());
    std::remove(ov_path.c_str());
}
