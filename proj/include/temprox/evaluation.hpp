// Leave-one-out evaluation with sampled negatives: HR@K and NDCG@K.
//
// Each evaluated user contributes one ranked list: the held-out item plus
// num_neg sampled non-interacted items, scored at the MASK position. NDCG
// uses the single-relevant-item closed form (IDCG = 1). Ties break by
// ascending internal item index so reruns and reimplementations agree
// exactly.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "temprox/common.hpp"
#include "temprox/data.hpp"
#include "temprox/model.hpp"

namespace temprox::eval {

struct EvalReport {
    double hr_at_k = 0.0;
    double ndcg_at_k = 0.0;
    std::size_t k = 10;
    std::size_t num_users_evaluated = 0;
    std::size_t num_skipped = 0;
    std::uint64_t seed = 0;
    std::string split;

    nlohmann::ordered_json to_json() const {
        return nlohmann::ordered_json{{"split", split},
                                      {"k", k},
                                      {"hr_at_k", hr_at_k},
                                      {"ndcg_at_k", ndcg_at_k},
                                      {"num_users_evaluated", num_users_evaluated},
                                      {"num_skipped", num_skipped},
                                      {"seed", seed}};
    }
};

// 1-based rank of the truth among the candidates under descending score;
// equal scores break by ascending item index.
inline std::size_t rank_of_truth(const std::vector<double>& scores,
                                 const std::vector<std::int64_t>& items, std::int64_t truth) {
    if (scores.size() != items.size())
        throw shape_error("rank_of_truth: " + std::to_string(scores.size()) + " scores for " +
                          std::to_string(items.size()) + " items");
    std::size_t truth_at = items.size();
    for (std::size_t i = 0; i < items.size(); ++i)
        if (items[i] == truth) {
            truth_at = i;
            break;
        }
    if (truth_at == items.size())
        throw contract_error("rank_of_truth: truth item " + std::to_string(truth) +
                             " not among candidates");
    const double ts = scores[truth_at];
    std::size_t rank = 1;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i == truth_at) continue;
        if (scores[i] > ts || (scores[i] == ts && items[i] < truth)) ++rank;
    }
    return rank;
}

inline double hr_at_k(std::size_t rank, std::size_t k) {
    if (rank < 1) throw contract_error("hr_at_k: rank must be >= 1");
    return rank <= k ? 1.0 : 0.0;
}

inline double ndcg_at_k(std::size_t rank, std::size_t k) {
    if (rank < 1) throw contract_error("ndcg_at_k: rank must be >= 1");
    return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

// Full-split evaluation. Deterministic given (model, dataset, seed): each
// user's negative sample uses an rng derived from (seed, user index).
inline EvalReport evaluate(const model::Model& m, const data::Dataset& ds, data::EvalSplit split,
                           std::size_t k = 10, std::size_t num_neg = 100, std::uint64_t seed = 0) {
    EvalReport report;
    report.k = k;
    report.seed = seed;
    report.split = split == data::EvalSplit::test ? "test" : "validation";

    constexpr std::size_t kChunk = 64;
    std::vector<data::SequenceRow> rows;
    std::vector<std::size_t> row_users;
    std::vector<std::int64_t> truths;
    double hr_sum = 0.0, ndcg_sum = 0.0;

    auto flush = [&]() {
        if (rows.empty()) return;
        auto batch = data::make_batch(rows);
        auto rng = make_rng(0);  // eval mode, dropout inactive
        auto h = m.forward(nullptr, batch, false, rng);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const std::size_t user = row_users[r];
            auto urng = make_rng(derive_seed(seed, 0xE7A1, static_cast<std::uint64_t>(user)));
            auto negatives = data::sample_negatives(ds, user, num_neg, urng);
            std::vector<std::int64_t> candidates;
            candidates.reserve(negatives.size() + 1);
            candidates.push_back(truths[r]);
            candidates.insert(candidates.end(), negatives.begin(), negatives.end());
            const double* h_row = h->values.data() + (r * batch.n + (batch.n - 1)) * m.cfg.d;
            auto scores = m.score_candidates(h_row, candidates);
            const std::size_t rank = rank_of_truth(scores, candidates, truths[r]);
            hr_sum += hr_at_k(rank, k);
            ndcg_sum += ndcg_at_k(rank, k);
            ++report.num_users_evaluated;
        }
        rows.clear();
        row_users.clear();
        truths.clear();
    };

    for (std::size_t u = 0; u < ds.num_users(); ++u) {
        auto inst = data::make_eval_instance(ds, u, m.cfg.n, split);
        if (!inst) {
            ++report.num_skipped;
            continue;
        }
        rows.push_back(std::move(inst->row));
        row_users.push_back(u);
        truths.push_back(inst->target_item);
        if (rows.size() == kChunk) flush();
    }
    flush();

    if (report.num_users_evaluated > 0) {
        report.hr_at_k = hr_sum / static_cast<double>(report.num_users_evaluated);
        report.ndcg_at_k = ndcg_sum / static_cast<double>(report.num_users_evaluated);
    }
    return report;
}

}  // namespace temprox::eval
