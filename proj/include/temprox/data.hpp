// Interaction log ingestion, preprocessing, day quantization, fixed-length
// sequence assembly and negative sampling.
//
// Conventions used across the project:
//   - internal item indices live in [1, num_items]; PAD = 0 and
//     MASK = num_items + 1 are reserved.
//   - days are stored relative to the dataset's first day (day_index 0);
//     PAD positions carry day 0 and are excluded via pad_mask.
//   - padding is left-aligned so the most recent interaction always sits in
//     the last column.

#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "temprox/common.hpp"

namespace temprox::data {

constexpr std::int64_t kPad = 0;
constexpr std::int64_t kSecondsPerDay = 86400;

struct empty_dataset_error : std::runtime_error {
    explicit empty_dataset_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct Interaction {
    std::string user;
    std::string item;
    std::int64_t timestamp = 0;  // seconds since epoch, >= 0
};

inline std::int64_t day_index(std::int64_t timestamp, std::int64_t origin_day) {
    return timestamp / kSecondsPerDay - origin_day;
}

struct Event {
    std::int64_t item = 0;  // internal index in [1, num_items]
    std::int64_t day = 0;   // day index relative to Dataset::min_day
};

class Dataset {
public:
    std::vector<std::string> user_ids;               // internal user index -> external id
    std::vector<std::string> item_ids;               // internal item index - 1 -> external id
    std::vector<std::vector<Event>> user_sequences;  // sorted by day, input order on ties
    std::int64_t min_day = 0;                        // absolute day of day_index 0
    std::int64_t max_day = 0;

    std::size_t num_users() const { return user_sequences.size(); }
    std::size_t num_items() const { return item_ids.size(); }
    std::int64_t mask_index() const { return static_cast<std::int64_t>(num_items()) + 1; }
    std::int64_t day_span() const { return max_day - min_day + 1; }  // |T|

    std::size_t num_actions() const {
        std::size_t n = 0;
        for (const auto& s : user_sequences) n += s.size();
        return n;
    }

    // Clamps a (possibly out-of-span) relative day to a valid time-table row.
    std::int64_t clamp_day(std::int64_t day) const {
        return std::clamp<std::int64_t>(day, 0, day_span() - 1);
    }
};

// ---------------------------------------------------------------------------
// CSV ingestion: header `user_id,item_id,timestamp`, no quoting.
// ---------------------------------------------------------------------------

inline std::vector<Interaction> parse_interactions(std::istream& in, const std::string& origin) {
    std::vector<Interaction> out;
    std::string line;
    std::size_t lineno = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!saw_header) {
            if (line != "user_id,item_id,timestamp")
                throw parse_error(origin + ":" + std::to_string(lineno) +
                                  ": expected header user_id,item_id,timestamp");
            saw_header = true;
            continue;
        }
        const auto c1 = line.find(',');
        const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos ||
            line.find(',', c2 + 1) != std::string::npos)
            throw parse_error(origin + ":" + std::to_string(lineno) + ": expected 3 fields");
        Interaction row;
        row.user = line.substr(0, c1);
        row.item = line.substr(c1 + 1, c2 - c1 - 1);
        const std::string ts = line.substr(c2 + 1);
        if (row.user.empty() || row.item.empty())
            throw parse_error(origin + ":" + std::to_string(lineno) + ": empty id field");
        try {
            std::size_t used = 0;
            row.timestamp = std::stoll(ts, &used);
            if (used != ts.size()) throw std::invalid_argument(ts);
        } catch (const std::exception&) {
            throw parse_error(origin + ":" + std::to_string(lineno) + ": bad timestamp '" + ts +
                              "'");
        }
        if (row.timestamp < 0)
            throw parse_error(origin + ":" + std::to_string(lineno) + ": negative timestamp");
        out.push_back(std::move(row));
    }
    return out;
}

inline std::vector<Interaction> load_interactions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open " + path);
    return parse_interactions(in, path);
}

inline void write_interactions(const std::string& path, const std::vector<Interaction>& rows) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write " + path);
    out << "user_id,item_id,timestamp\n";
    for (const auto& r : rows) out << r.user << ',' << r.item << ',' << r.timestamp << '\n';
    if (!out) throw io_error("write failed for " + path);
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

// Optional inclusive timestamp range, applied before anything else.
struct DateRange {
    std::int64_t start = 0;
    std::int64_t end = 0;
};

// Dedupe exact (user,item,timestamp) rows, restrict to the date range, run
// one pass of item-count filtering then one pass of user-count filtering
// (not iterated), assign internal indices by first appearance, and sort each
// user's sequence by day keeping input order on ties.
inline Dataset preprocess(const std::vector<Interaction>& interactions, std::size_t min_user,
                          std::size_t min_item,
                          std::optional<DateRange> date_range = std::nullopt) {
    if (min_user < 1 || min_item < 1)
        throw config_error("preprocess thresholds must be >= 1");

    std::vector<const Interaction*> rows;
    rows.reserve(interactions.size());
    std::set<std::tuple<std::string, std::string, std::int64_t>> seen;
    for (const auto& r : interactions) {
        if (date_range && (r.timestamp < date_range->start || r.timestamp > date_range->end))
            continue;
        if (!seen.emplace(r.user, r.item, r.timestamp).second) continue;
        rows.push_back(&r);
    }

    std::unordered_map<std::string, std::size_t> item_count;
    for (const auto* r : rows) ++item_count[r->item];
    std::vector<const Interaction*> after_items;
    after_items.reserve(rows.size());
    for (const auto* r : rows)
        if (item_count[r->item] >= min_item) after_items.push_back(r);

    std::unordered_map<std::string, std::size_t> user_count;
    for (const auto* r : after_items) ++user_count[r->user];
    std::vector<const Interaction*> kept;
    kept.reserve(after_items.size());
    for (const auto* r : after_items)
        if (user_count[r->user] >= min_user) kept.push_back(r);

    if (kept.empty()) throw empty_dataset_error("no interactions survive preprocessing");

    Dataset ds;
    std::unordered_map<std::string, std::size_t> user_index;
    std::unordered_map<std::string, std::int64_t> item_index;
    std::int64_t abs_min = kept.front()->timestamp / kSecondsPerDay;
    std::int64_t abs_max = abs_min;
    for (const auto* r : kept) {
        const std::int64_t d = r->timestamp / kSecondsPerDay;
        abs_min = std::min(abs_min, d);
        abs_max = std::max(abs_max, d);
    }
    ds.min_day = abs_min;
    ds.max_day = abs_max;

    for (const auto* r : kept) {
        auto [uit, unew] = user_index.emplace(r->user, ds.user_ids.size());
        if (unew) {
            ds.user_ids.push_back(r->user);
            ds.user_sequences.emplace_back();
        }
        auto [iit, inew] =
            item_index.emplace(r->item, static_cast<std::int64_t>(ds.item_ids.size()) + 1);
        if (inew) ds.item_ids.push_back(r->item);
        ds.user_sequences[uit->second].push_back(
            Event{iit->second, day_index(r->timestamp, ds.min_day)});
    }
    for (auto& seq : ds.user_sequences)
        std::stable_sort(seq.begin(), seq.end(),
                         [](const Event& a, const Event& b) { return a.day < b.day; });
    return ds;
}

// Canonical export of the surviving interactions: user-major, sequence
// order, one synthetic second per same-day step so re-preprocessing
// reproduces the same sequences.
inline std::vector<Interaction> to_interactions(const Dataset& ds) {
    std::vector<Interaction> out;
    out.reserve(ds.num_actions());
    for (std::size_t u = 0; u < ds.num_users(); ++u) {
        std::int64_t prev_day = -1, offset = 0;
        for (const Event& e : ds.user_sequences[u]) {
            offset = (e.day == prev_day) ? offset + 1 : 0;
            prev_day = e.day;
            out.push_back(Interaction{ds.user_ids[u],
                                      ds.item_ids[static_cast<std::size_t>(e.item) - 1],
                                      (e.day + ds.min_day) * kSecondsPerDay + offset});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fixed-length rows and batches
// ---------------------------------------------------------------------------

struct SequenceRow {
    std::size_t user = 0;
    std::vector<std::int64_t> items;  // length n, left-padded with PAD
    std::vector<std::int64_t> days;   // length n, 0 on PAD positions
};

inline SequenceRow pad_row(std::size_t user, const std::vector<Event>& events, std::size_t n) {
    SequenceRow row;
    row.user = user;
    row.items.assign(n, kPad);
    row.days.assign(n, 0);
    const std::size_t take = std::min(events.size(), n);
    const std::size_t src = events.size() - take;
    for (std::size_t i = 0; i < take; ++i) {
        row.items[n - take + i] = events[src + i].item;
        row.days[n - take + i] = events[src + i].day;
    }
    return row;
}

// Most recent n interactions per user, right-aligned.
inline std::vector<SequenceRow> build_sequences(const Dataset& ds, std::size_t n) {
    if (n < 2) throw config_error("sequence length n must be >= 2");
    std::vector<SequenceRow> rows;
    rows.reserve(ds.num_users());
    for (std::size_t u = 0; u < ds.num_users(); ++u) rows.push_back(pad_row(u, ds.user_sequences[u], n));
    return rows;
}

// Training rows for leave-one-out: the last two interactions are reserved as
// validation/test targets when the user has at least three.
inline std::vector<SequenceRow> build_training_rows(const Dataset& ds, std::size_t n) {
    if (n < 2) throw config_error("sequence length n must be >= 2");
    std::vector<SequenceRow> rows;
    rows.reserve(ds.num_users());
    for (std::size_t u = 0; u < ds.num_users(); ++u) {
        std::vector<Event> events = ds.user_sequences[u];
        if (events.size() >= 3) events.resize(events.size() - 2);
        rows.push_back(pad_row(u, events, n));
    }
    return rows;
}

struct Batch {
    std::size_t size = 0;  // B
    std::size_t n = 0;
    std::vector<std::int64_t> items;      // B x n
    std::vector<std::int64_t> days;       // B x n
    std::vector<std::int64_t> positions;  // [1..n], shared by every row
    std::vector<bool> pad_mask;           // B x n, true = real token
    std::vector<std::size_t> users;       // B

    std::int64_t item_at(std::size_t b, std::size_t i) const { return items[b * n + i]; }
    std::int64_t day_at(std::size_t b, std::size_t i) const { return days[b * n + i]; }
    bool real_at(std::size_t b, std::size_t i) const { return pad_mask[b * n + i]; }

    std::size_t last_real(std::size_t b) const {
        for (std::size_t i = n; i > 0; --i)
            if (pad_mask[b * n + i - 1]) return i - 1;
        throw contract_error("batch row " + std::to_string(b) + " has no real tokens");
    }
};

inline Batch make_batch(const std::vector<SequenceRow>& rows, std::size_t first,
                        std::size_t count) {
    if (rows.empty() || count == 0) throw contract_error("make_batch: empty batch");
    Batch b;
    b.size = count;
    b.n = rows[first].items.size();
    b.items.reserve(count * b.n);
    b.days.reserve(count * b.n);
    b.pad_mask.reserve(count * b.n);
    for (std::size_t r = first; r < first + count; ++r) {
        const auto& row = rows[r];
        b.users.push_back(row.user);
        for (std::size_t i = 0; i < b.n; ++i) {
            b.items.push_back(row.items[i]);
            b.days.push_back(row.days[i]);
            b.pad_mask.push_back(row.items[i] != kPad);
        }
    }
    b.positions.resize(b.n);
    for (std::size_t i = 0; i < b.n; ++i) b.positions[i] = static_cast<std::int64_t>(i) + 1;
    return b;
}

inline Batch make_batch(const std::vector<SequenceRow>& rows) {
    return make_batch(rows, 0, rows.size());
}

// ---------------------------------------------------------------------------
// Leave-one-out evaluation instances
// ---------------------------------------------------------------------------

enum class EvalSplit { validation, test };

struct EvalInstance {
    SequenceRow row;  // ends with MASK carrying the target's day
    std::int64_t target_item = 0;
    std::int64_t target_day = 0;
};

// Test mode: input is everything before the last item, MASK appended at the
// final position with the target's day. Validation mode: the same one step
// earlier. Users with fewer than 3 interactions are skipped (nullopt).
inline std::optional<EvalInstance> make_eval_instance(const Dataset& ds, std::size_t user,
                                                      std::size_t n, EvalSplit split) {
    if (user >= ds.num_users()) throw index_error("make_eval_instance: unknown user " + std::to_string(user));
    const auto& seq = ds.user_sequences[user];
    if (seq.size() < 3) return std::nullopt;
    const std::size_t target_pos = split == EvalSplit::test ? seq.size() - 1 : seq.size() - 2;
    std::vector<Event> prefix(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(target_pos));
    EvalInstance inst;
    inst.target_item = seq[target_pos].item;
    inst.target_day = seq[target_pos].day;
    if (prefix.size() > n - 1) prefix.erase(prefix.begin(), prefix.end() - static_cast<std::ptrdiff_t>(n - 1));
    prefix.push_back(Event{ds.mask_index(), inst.target_day});
    inst.row = pad_row(user, prefix, n);
    return inst;
}

// ---------------------------------------------------------------------------
// Negative sampling
// ---------------------------------------------------------------------------

// Uniform sample without replacement from the items the user never
// interacted with. If fewer than `count` exist they are all returned in
// ascending index order.
inline std::vector<std::int64_t> sample_negatives(const Dataset& ds, std::size_t user,
                                                  std::size_t count, std::mt19937_64& rng) {
    if (count < 1) throw config_error("sample_negatives: count must be >= 1");
    if (user >= ds.num_users()) throw index_error("sample_negatives: unknown user " + std::to_string(user));
    std::unordered_set<std::int64_t> history;
    for (const Event& e : ds.user_sequences[user]) history.insert(e.item);
    const std::int64_t V = static_cast<std::int64_t>(ds.num_items());
    const std::size_t available = static_cast<std::size_t>(V) - history.size();
    std::vector<std::int64_t> out;
    if (available == 0) return out;
    if (available <= count) {
        out.reserve(available);
        for (std::int64_t i = 1; i <= V; ++i)
            if (!history.count(i)) out.push_back(i);
        return out;
    }
    std::unordered_set<std::int64_t> picked;
    std::uniform_int_distribution<std::int64_t> dist(1, V);
    out.reserve(count);
    while (out.size() < count) {
        const std::int64_t cand = dist(rng);
        if (history.count(cand) || !picked.insert(cand).second) continue;
        out.push_back(cand);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization and statistics
// ---------------------------------------------------------------------------

struct DatasetStats {
    std::size_t num_users = 0;
    std::size_t num_items = 0;
    std::size_t num_actions = 0;
    double avg_length = 0.0;
    double sparsity_pct = 0.0;
};

inline DatasetStats compute_stats(const Dataset& ds) {
    DatasetStats s;
    s.num_users = ds.num_users();
    s.num_items = ds.num_items();
    s.num_actions = ds.num_actions();
    s.avg_length = s.num_users ? static_cast<double>(s.num_actions) / static_cast<double>(s.num_users) : 0.0;
    const double cells = static_cast<double>(s.num_users) * static_cast<double>(s.num_items);
    s.sparsity_pct = cells > 0 ? 100.0 * (1.0 - static_cast<double>(s.num_actions) / cells) : 0.0;
    return s;
}

inline nlohmann::ordered_json stats_json(const Dataset& ds) {
    const DatasetStats s = compute_stats(ds);
    return nlohmann::ordered_json{{"num_users", s.num_users},
                                  {"num_items", s.num_items},
                                  {"num_actions", s.num_actions},
                                  {"avg_length", s.avg_length},
                                  {"sparsity_pct", s.sparsity_pct},
                                  {"day_span", ds.day_span()}};
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
    nlohmann::ordered_json j;
    j["format"] = "temprox-dataset-v1";
    j["min_day"] = ds.min_day;
    j["max_day"] = ds.max_day;
    j["items"] = ds.item_ids;
    auto users = nlohmann::ordered_json::array();
    for (std::size_t u = 0; u < ds.num_users(); ++u) {
        auto items = nlohmann::ordered_json::array();
        auto days = nlohmann::ordered_json::array();
        for (const Event& e : ds.user_sequences[u]) {
            items.push_back(e.item);
            days.push_back(e.day);
        }
        users.push_back(nlohmann::ordered_json{
            {"id", ds.user_ids[u]}, {"items", std::move(items)}, {"days", std::move(days)}});
    }
    j["users"] = std::move(users);
    std::ofstream out(path);
    if (!out) throw io_error("cannot write " + path);
    out << j.dump(2) << '\n';
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw parse_error(path + ": " + e.what());
    }
    if (j.value("format", "") != "temprox-dataset-v1")
        throw parse_error(path + ": not a temprox-dataset-v1 file");
    Dataset ds;
    ds.min_day = j.at("min_day").get<std::int64_t>();
    ds.max_day = j.at("max_day").get<std::int64_t>();
    ds.item_ids = j.at("items").get<std::vector<std::string>>();
    for (const auto& ju : j.at("users")) {
        ds.user_ids.push_back(ju.at("id").get<std::string>());
        const auto items = ju.at("items").get<std::vector<std::int64_t>>();
        const auto days = ju.at("days").get<std::vector<std::int64_t>>();
        if (items.size() != days.size())
            throw parse_error(path + ": items/days length mismatch for user " + ds.user_ids.back());
        std::vector<Event> seq(items.size());
        for (std::size_t i = 0; i < items.size(); ++i) {
            if (items[i] < 1 || items[i] > static_cast<std::int64_t>(ds.item_ids.size()))
                throw parse_error(path + ": item index out of range");
            seq[i] = Event{items[i], days[i]};
        }
        ds.user_sequences.push_back(std::move(seq));
    }
    return ds;
}

}  // namespace temprox::data
