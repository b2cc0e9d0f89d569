// Training objectives: masked-item modeling and temporal-proximity-aware
// contrastive learning (TCL), combined as L = L_MLM + lambda * L_TCL.
//
// TCL samples one anchor per in-batch sequence (the representation at its
// last non-pad position). Candidates are the other sequences' real,
// non-masked positions: inside the [t - delta, t + delta] day window they
// are positives, outside negatives. A second stochastic forward of the same
// batch supplies one pseudo-positive per anchor, so every anchor has at
// least one positive.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "temprox/common.hpp"
#include "temprox/data.hpp"
#include "temprox/model.hpp"
#include "temprox/tensor.hpp"

namespace temprox::objectives {

using autodiff::Tape;
using autodiff::TensorPtr;

// ---------------------------------------------------------------------------
// Masked-item modeling
// ---------------------------------------------------------------------------

struct MaskTarget {
    std::size_t row = 0;
    std::size_t pos = 0;
    std::int64_t item = 0;  // the true item that was replaced by MASK
};

struct MaskedBatch {
    data::Batch batch;  // items with MASK substituted; days/pad_mask unchanged
    std::vector<MaskTarget> targets;
};

// Independently masks each non-pad position with probability rho; a row that
// draws no mask gets one uniformly chosen non-pad position masked.
inline MaskedBatch apply_mlm_mask(const data::Batch& batch, double rho, std::int64_t mask_index,
                                  std::mt19937_64& rng) {
    if (rho <= 0.0 || rho > 1.0)
        throw config_error("mask proportion rho must be in (0,1], got " + std::to_string(rho));
    MaskedBatch out;
    out.batch = batch;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<std::size_t> real_positions;
    for (std::size_t b = 0; b < batch.size; ++b) {
        real_positions.clear();
        std::size_t masked_in_row = 0;
        for (std::size_t i = 0; i < batch.n; ++i) {
            if (!batch.real_at(b, i)) continue;
            real_positions.push_back(i);
            if (unit(rng) < rho) {
                out.targets.push_back(MaskTarget{b, i, batch.item_at(b, i)});
                out.batch.items[b * batch.n + i] = mask_index;
                ++masked_in_row;
            }
        }
        if (masked_in_row == 0 && !real_positions.empty()) {
            const std::size_t pick =
                real_positions[std::uniform_int_distribution<std::size_t>(0, real_positions.size() - 1)(rng)];
            out.targets.push_back(MaskTarget{b, pick, batch.item_at(b, pick)});
            out.batch.items[b * batch.n + pick] = mask_index;
        }
    }
    return out;
}

// Mean negative log-likelihood of the true items at the masked positions.
// Reserved columns never receive probability mass.
inline TensorPtr mlm_loss(Tape* tape, const TensorPtr& logits,
                          const std::vector<std::int64_t>& target_items,
                          const std::vector<std::int64_t>& excluded_cols) {
    return autodiff::cross_entropy_rows(tape, logits, target_items, excluded_cols);
}

// ---------------------------------------------------------------------------
// Temporal-proximity-aware contrastive learning
// ---------------------------------------------------------------------------

struct ContrastSet {
    std::size_t anchor_row = 0;
    std::size_t anchor_pos = 0;
    std::int64_t anchor_day = 0;
    // Indices into the candidate representation matrix. Entries < num_shared
    // reference cross-user positions; index num_shared + anchor_row is the
    // pseudo-positive.
    std::vector<std::size_t> positives;
    std::vector<std::size_t> negatives;
};

struct TclPlan {
    std::vector<std::int64_t> anchor_flat;     // B flat (row*n+pos) indices into H
    std::vector<std::int64_t> candidate_flat;  // shared eligible positions, all rows
    std::vector<ContrastSet> sets;             // one per batch row
    std::size_t num_shared() const { return candidate_flat.size(); }
};

// Partitions the minibatch for every anchor. Eligibility excludes PAD
// positions, MASK positions, and the anchor's own sequence; the window test
// is inclusive, |candidate_day - anchor_day| <= delta.
inline TclPlan tcl_sample(const data::Batch& batch, std::int64_t mask_index, std::int64_t delta) {
    if (delta < 0) throw config_error("tcl delta must be >= 0");
    if (batch.size == 0) throw contract_error("tcl_sample: empty batch");
    TclPlan plan;
    std::vector<std::size_t> owner;  // batch row of each shared candidate
    for (std::size_t b = 0; b < batch.size; ++b)
        for (std::size_t i = 0; i < batch.n; ++i) {
            if (!batch.real_at(b, i) || batch.item_at(b, i) == mask_index) continue;
            plan.candidate_flat.push_back(static_cast<std::int64_t>(b * batch.n + i));
            owner.push_back(b);
        }
    for (std::size_t b = 0; b < batch.size; ++b) {
        const std::size_t pos = batch.last_real(b);
        ContrastSet set;
        set.anchor_row = b;
        set.anchor_pos = pos;
        set.anchor_day = batch.day_at(b, pos);
        plan.anchor_flat.push_back(static_cast<std::int64_t>(b * batch.n + pos));
        for (std::size_t c = 0; c < plan.candidate_flat.size(); ++c) {
            if (owner[c] == b) continue;
            const std::int64_t day =
                batch.days[static_cast<std::size_t>(plan.candidate_flat[c])];
            const std::int64_t diff = day >= set.anchor_day ? day - set.anchor_day : set.anchor_day - day;
            if (diff <= delta)
                set.positives.push_back(c);
            else
                set.negatives.push_back(c);
        }
        set.positives.push_back(plan.num_shared() + b);  // pseudo-positive, always present
        plan.sets.push_back(std::move(set));
    }
    return plan;
}

// Second stochastic forward of the same (masked) batch under a different
// dropout stream; the anchor-position rows become pseudo-positives.
inline TensorPtr pseudo_positive_forward(Tape* tape, const model::Model& m,
                                         const data::Batch& batch, bool training,
                                         std::mt19937_64& rng) {
    if (!training)
        throw contract_error(
            "pseudo_positive requires training mode: without dropout the two passes coincide");
    return m.forward(tape, batch, true, rng);
}

// InfoNCE-style loss over a cosine-similarity matrix S [anchors x candidates]
// already divided into per-anchor positive/negative index sets:
//   per positive p:  -log( exp(s_p/tau) / (exp(s_p/tau)*[include] + sum_n exp(s_n/tau)) )
// averaged over positives, then over anchors. include_positive=false is the
// literal printed form (negatives-only denominator); anchors with no
// negatives contribute 0 under either form.
inline TensorPtr tcl_nce(Tape* tape, const TensorPtr& sims, const std::vector<ContrastSet>& sets,
                         double tau, bool include_positive = true) {
    if (tau <= 0.0) throw config_error("tcl temperature must be > 0");
    if (sets.empty()) throw contract_error("tcl_nce: no contrast sets");
    const std::size_t C = sims->cols();
    for (const auto& set : sets)
        if (set.positives.empty())
            throw contract_error("tcl_nce: anchor in row " + std::to_string(set.anchor_row) +
                                 " has no positives");
    const double inv_tau = 1.0 / tau;
    double total = 0.0;
    // cache exp(s/tau) per referenced entry, and per-anchor negative sums
    std::vector<double> neg_sums(sets.size(), 0.0);
    for (std::size_t a = 0; a < sets.size(); ++a) {
        const double* row = sims->values.data() + a * C;
        double s = 0.0;
        for (std::size_t nidx : sets[a].negatives) s += std::exp(row[nidx] * inv_tau);
        neg_sums[a] = s;
        double anchor_loss = 0.0;
        for (std::size_t pidx : sets[a].positives) {
            const double zp = std::exp(row[pidx] * inv_tau);
            const double denom = s + (include_positive ? zp : 0.0);
            if (denom <= 0.0) continue;  // printed form with no negatives: skip
            anchor_loss += std::log(denom) - row[pidx] * inv_tau;
        }
        total += anchor_loss / static_cast<double>(sets[a].positives.size());
    }
    auto out = autodiff::make_scalar(total / static_cast<double>(sets.size()));
    if (tape && sims->requires_grad) {
        out->requires_grad = true;
        tape->record({sims}, out, [sims, out, sets, inv_tau, include_positive, neg_sums, C] {
            sims->ensure_grad();
            const double g0 = out->grad[0] / static_cast<double>(sets.size());
            for (std::size_t a = 0; a < sets.size(); ++a) {
                const double* row = sims->values.data() + a * C;
                double* drow = sims->grad.data() + a * C;
                const double g = g0 / static_cast<double>(sets[a].positives.size());
                for (std::size_t pidx : sets[a].positives) {
                    const double zp = std::exp(row[pidx] * inv_tau);
                    const double denom = neg_sums[a] + (include_positive ? zp : 0.0);
                    if (denom <= 0.0) continue;
                    drow[pidx] += g * inv_tau * ((include_positive ? zp / denom : 0.0) - 1.0);
                    for (std::size_t nidx : sets[a].negatives) {
                        const double zn = std::exp(row[nidx] * inv_tau);
                        drow[nidx] += g * inv_tau * zn / denom;
                    }
                }
            }
        });
    }
    return out;
}

struct TclLossResult {
    TensorPtr loss;
    std::size_t zero_norm_warnings = 0;
};

// Full TCL loss from the two forward passes: gathers anchors and candidates,
// normalizes rows (zero-norm rows read as similarity 0 and are counted),
// forms the cosine matrix and applies tcl_nce.
inline TclLossResult tcl_loss(Tape* tape, const TensorPtr& h, const TensorPtr& h_pseudo,
                              const TclPlan& plan, double tau, bool include_positive = true) {
    TclLossResult res;
    auto anchors = autodiff::gather_rows(tape, h, plan.anchor_flat);
    auto shared = autodiff::gather_rows(tape, h, plan.candidate_flat);
    auto pseudo = autodiff::gather_rows(tape, h_pseudo, plan.anchor_flat);
    auto cands = autodiff::concat_rows(tape, {shared, pseudo});
    auto anchors_n = autodiff::l2_normalize_rows(tape, anchors, &res.zero_norm_warnings);
    auto cands_n = autodiff::l2_normalize_rows(tape, cands, &res.zero_norm_warnings);
    auto sims = autodiff::matmul(tape, anchors_n, autodiff::transpose(tape, cands_n));
    res.loss = tcl_nce(tape, sims, plan.sets, tau, include_positive);
    return res;
}

// L = L_MLM + lambda * L_TCL
inline TensorPtr total_loss(Tape* tape, const TensorPtr& mlm, const TensorPtr& tcl, double lambda) {
    if (lambda < 0.0) throw config_error("lambda must be >= 0");
    return autodiff::add(tape, mlm, autodiff::scale(tape, tcl, lambda));
}

}  // namespace temprox::objectives
