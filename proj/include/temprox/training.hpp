// Training: Adam with decoupled weight decay, the joint MLM+TCL epoch loop,
// ablation wiring, early stopping on validation NDCG@K, and a grid-sweep
// harness.
//
// Reproducibility: every stochastic consumer (shuffle, masking, the two
// dropout streams, evaluation negatives) runs on its own rng derived from
// (seed, role, epoch, step), so identical seed and config give bit-identical
// trajectories, and disabling one consumer (e.g. the pseudo-positive forward
// at lambda = 0) leaves the others untouched.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <future>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "temprox/common.hpp"
#include "temprox/data.hpp"
#include "temprox/evaluation.hpp"
#include "temprox/model.hpp"
#include "temprox/objectives.hpp"
#include "temprox/tensor.hpp"

namespace temprox::train {

using autodiff::Tape;
using autodiff::TensorPtr;

enum class Ablation { full, no_tcl, no_abs_mhar, no_rel_mhar, no_mhar };

inline const char* ablation_name(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::no_tcl: return "no_tcl";
        case Ablation::no_abs_mhar: return "no_abs_mhar";
        case Ablation::no_rel_mhar: return "no_rel_mhar";
        case Ablation::no_mhar: return "no_mhar";
    }
    throw config_error("unknown ablation");
}

inline Ablation ablation_from_name(const std::string& s) {
    if (s == "full") return Ablation::full;
    if (s == "no_tcl") return Ablation::no_tcl;
    if (s == "no_abs_mhar") return Ablation::no_abs_mhar;
    if (s == "no_rel_mhar") return Ablation::no_rel_mhar;
    if (s == "no_mhar") return Ablation::no_mhar;
    throw config_error("unknown ablation '" + s + "'");
}

struct TrainConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;  // decoupled
    std::size_t batch_size = 128;
    std::size_t epochs = 50;
    std::size_t patience = 3;  // epochs without validation NDCG improvement
    std::uint64_t seed = 1;
    double rho = 0.2;        // MLM mask proportion
    std::int64_t delta = 30; // TCL window radius, days
    double tau = 0.1;        // TCL temperature
    double lambda = 0.3;     // TCL weight
    bool tcl_include_positive = true;  // standard denominator; false = printed form
    Ablation ablation = Ablation::full;
    std::size_t eval_k = 10;
    std::size_t eval_num_neg = 100;

    void validate() const {
        if (lr <= 0.0) throw config_error("train: lr must be > 0");
        if (patience < 1) throw config_error("train: patience must be >= 1");
        if (batch_size < 1) throw config_error("train: batch_size must be >= 1");
        if (epochs < 1) throw config_error("train: epochs must be >= 1");
        if (rho <= 0.0 || rho > 1.0) throw config_error("train: rho must be in (0,1]");
        if (tau <= 0.0) throw config_error("train: tau must be > 0");
        if (lambda < 0.0) throw config_error("train: lambda must be >= 0");
        if (delta < 0) throw config_error("train: delta must be >= 0");
    }
};

// Rewires the model plan (and lambda) for the requested variant. When only
// two head kinds remain, d splits over two heads so capacity stays
// comparable to the full model.
inline void apply_ablation(Ablation a, model::ModelConfig& mc, TrainConfig& tc) {
    using model::HeadKind;
    switch (a) {
        case Ablation::full:
            mc.head_plan = {HeadKind::abs_time, HeadKind::abs_pos, HeadKind::rel_time,
                            HeadKind::rel_pos};
            mc.position_at_input = false;
            break;
        case Ablation::no_tcl:
            mc.head_plan = {HeadKind::abs_time, HeadKind::abs_pos, HeadKind::rel_time,
                            HeadKind::rel_pos};
            mc.position_at_input = false;
            tc.lambda = 0.0;
            break;
        case Ablation::no_abs_mhar:
            mc.head_plan = {HeadKind::rel_time, HeadKind::rel_pos};
            mc.position_at_input = false;
            break;
        case Ablation::no_rel_mhar:
            mc.head_plan = {HeadKind::abs_time, HeadKind::abs_pos};
            mc.position_at_input = false;
            break;
        case Ablation::no_mhar:
            mc.head_plan = {HeadKind::content, HeadKind::content, HeadKind::content,
                            HeadKind::content};
            mc.position_at_input = true;  // canonical attention, positions at the input
            break;
    }
    tc.ablation = a;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
    std::vector<std::vector<double>> m, v;
    std::size_t step = 0;

    void init(const std::vector<std::pair<std::string, TensorPtr>>& params) {
        m.clear();
        v.clear();
        for (const auto& [name, t] : params) {
            m.emplace_back(t->size(), 0.0);
            v.emplace_back(t->size(), 0.0);
        }
        step = 0;
    }
};

// Bias-corrected Adam with decoupled weight decay. Aborts on a non-finite
// gradient, naming the parameter.
inline void adam_step(const std::vector<std::pair<std::string, TensorPtr>>& params,
                      AdamState& state, const TrainConfig& cfg) {
    if (state.m.size() != params.size()) throw contract_error("adam_step: state not initialized");
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& t = *params[p].second;
        t.ensure_grad();
        auto& m = state.m[p];
        auto& v = state.v[p];
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double g = t.grad[i];
            if (!std::isfinite(g))
                throw contract_error("adam_step: non-finite gradient in parameter '" +
                                     params[p].first + "' at index " + std::to_string(i));
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            t.values[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
            if (cfg.weight_decay != 0.0) t.values[i] -= cfg.lr * cfg.weight_decay * t.values[i];
        }
    }
}

// ---------------------------------------------------------------------------
// Epoch loop
// ---------------------------------------------------------------------------

struct EpochStats {
    double mlm_loss = 0.0;
    double tcl_loss = 0.0;
    double total_loss = 0.0;
    std::size_t steps = 0;
    std::size_t zero_norm_warnings = 0;
};

struct FitResult {
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;  // 1-based
    double best_val_ndcg = -1.0;
    double best_val_hr = 0.0;
    std::vector<EpochStats> history;
};

class Trainer {
public:
    Trainer(const data::Dataset& ds, model::ModelConfig mc, TrainConfig tc)
        : ds_(ds), cfg_(std::move(tc)), model_(finalize(mc, cfg_), cfg_.seed) {
        cfg_.validate();
        train_rows_ = data::build_training_rows(ds, model_.cfg.n);
        adam_.init(model_.named_parameters());
    }

    const model::Model& model() const { return model_; }
    model::Model& model() { return model_; }
    const TrainConfig& config() const { return cfg_; }

    EpochStats train_epoch(std::size_t epoch) {
        const auto params = model_.named_parameters();
        const std::int64_t mask_idx = ds_.mask_index();

        std::vector<std::size_t> order(train_rows_.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        auto shuffle_rng = make_rng(derive_seed(cfg_.seed, 0x5FFE, epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        EpochStats stats;
        std::vector<data::SequenceRow> batch_rows;
        for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
            const std::size_t count = std::min(cfg_.batch_size, order.size() - start);
            batch_rows.clear();
            for (std::size_t i = 0; i < count; ++i) batch_rows.push_back(train_rows_[order[start + i]]);
            auto batch = data::make_batch(batch_rows);

            auto rng_mask = make_rng(derive_seed(cfg_.seed, 0x3A5C, epoch, stats.steps));
            auto rng_drop1 = make_rng(derive_seed(cfg_.seed, 0xD401, epoch, stats.steps));
            auto rng_drop2 = make_rng(derive_seed(cfg_.seed, 0xD402, epoch, stats.steps));

            for (const auto& [name, t] : params) t->zero_grad();
            Tape tape;
            auto masked = objectives::apply_mlm_mask(batch, cfg_.rho, mask_idx, rng_mask);
            auto h = model_.forward(&tape, masked.batch, true, rng_drop1);

            std::vector<std::int64_t> rows;
            std::vector<std::int64_t> targets;
            rows.reserve(masked.targets.size());
            targets.reserve(masked.targets.size());
            for (const auto& t : masked.targets) {
                rows.push_back(static_cast<std::int64_t>(t.row * batch.n + t.pos));
                targets.push_back(t.item);
            }
            auto picked = autodiff::gather_rows(&tape, h, rows);
            auto mlm = objectives::mlm_loss(&tape, model_.output_logits(&tape, picked), targets,
                                            model_.excluded_logit_columns());

            TensorPtr loss = mlm;
            double tcl_value = 0.0;
            if (cfg_.lambda > 0.0) {
                auto plan = objectives::tcl_sample(masked.batch, mask_idx, cfg_.delta);
                auto h2 =
                    objectives::pseudo_positive_forward(&tape, model_, masked.batch, true, rng_drop2);
                auto tcl_res = objectives::tcl_loss(&tape, h, h2, plan, cfg_.tau,
                                                    cfg_.tcl_include_positive);
                stats.zero_norm_warnings += tcl_res.zero_norm_warnings;
                tcl_value = tcl_res.loss->values[0];
                loss = objectives::total_loss(&tape, mlm, tcl_res.loss, cfg_.lambda);
            }
            tape.backward(loss);
            adam_step(params, adam_, cfg_);

            stats.mlm_loss += mlm->values[0];
            stats.tcl_loss += tcl_value;
            stats.total_loss += loss->values[0];
            ++stats.steps;
        }
        if (stats.steps > 0) {
            stats.mlm_loss /= static_cast<double>(stats.steps);
            stats.tcl_loss /= static_cast<double>(stats.steps);
            stats.total_loss /= static_cast<double>(stats.steps);
        }
        return stats;
    }

    // Full loop with early stopping on validation NDCG@K. The returned model
    // state is the best validation checkpoint seen. metrics_log, when given,
    // receives one JSON line per epoch.
    FitResult fit(std::ostream* metrics_log = nullptr) {
        FitResult result;
        std::vector<std::vector<double>> best_values;
        std::size_t since_best = 0;
        const std::uint64_t eval_seed = derive_seed(cfg_.seed, 0xE7A1F);

        for (std::size_t epoch = 1; epoch <= cfg_.epochs; ++epoch) {
            EpochStats stats = train_epoch(epoch);
            auto val = eval::evaluate(model_, ds_, data::EvalSplit::validation, cfg_.eval_k,
                                      cfg_.eval_num_neg, eval_seed);
            result.history.push_back(stats);
            result.epochs_run = epoch;
            if (metrics_log) {
                nlohmann::ordered_json line{{"epoch", epoch},
                                            {"mlm_loss", stats.mlm_loss},
                                            {"tcl_loss", stats.tcl_loss},
                                            {"total_loss", stats.total_loss},
                                            {"val_hr_at_k", val.hr_at_k},
                                            {"val_ndcg_at_k", val.ndcg_at_k}};
                (*metrics_log) << line.dump() << '\n';
            }
            if (val.ndcg_at_k > result.best_val_ndcg) {
                result.best_val_ndcg = val.ndcg_at_k;
                result.best_val_hr = val.hr_at_k;
                result.best_epoch = epoch;
                best_values.clear();
                for (const auto& [name, t] : model_.named_parameters()) best_values.push_back(t->values);
                since_best = 0;
            } else if (++since_best >= cfg_.patience) {
                break;
            }
        }
        if (!best_values.empty()) {
            auto params = model_.named_parameters();
            for (std::size_t i = 0; i < params.size(); ++i) params[i].second->values = best_values[i];
        }
        return result;
    }

private:
    static model::ModelConfig finalize(model::ModelConfig mc, TrainConfig& tc) {
        apply_ablation(tc.ablation, mc, tc);
        mc.validate();
        return mc;
    }

    const data::Dataset& ds_;
    TrainConfig cfg_;
    model::Model model_;
    std::vector<data::SequenceRow> train_rows_;
    AdamState adam_;
};

// ---------------------------------------------------------------------------
// Grid sweep
// ---------------------------------------------------------------------------

struct SweepGrid {
    std::vector<std::int64_t> delta;
    std::vector<std::int64_t> k_t;
    std::vector<double> lambda;
    std::vector<std::size_t> d;
    std::vector<double> lr;
    std::vector<double> dropout;
    std::vector<std::uint64_t> seeds;
};

struct SweepResult {
    std::int64_t delta = 0;
    std::int64_t k_t = 0;
    double lambda = 0.0;
    std::size_t d = 0;
    double lr = 0.0;
    double dropout = 0.0;
    std::uint64_t seed = 0;
    double val_hr = 0.0;
    double val_ndcg = 0.0;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
};

// Trains every grid cell with early stopping (budget = epoch cap) and
// reports the best validation metrics per cell. Cells are independent;
// `jobs` of them run concurrently.
inline std::vector<SweepResult> sweep(const data::Dataset& ds, const model::ModelConfig& base_mc,
                                      const TrainConfig& base_tc, SweepGrid grid,
                                      std::size_t budget, std::size_t jobs = 1) {
    if (grid.delta.empty()) grid.delta = {base_tc.delta};
    if (grid.k_t.empty()) grid.k_t = {base_mc.k_t};
    if (grid.lambda.empty()) grid.lambda = {base_tc.lambda};
    if (grid.d.empty()) grid.d = {base_mc.d};
    if (grid.lr.empty()) grid.lr = {base_tc.lr};
    if (grid.dropout.empty()) grid.dropout = {base_mc.dropout_rate};
    if (grid.seeds.empty()) grid.seeds = {base_tc.seed};
    if (budget < 1) throw config_error("sweep: budget must be >= 1");

    std::vector<SweepResult> cells;
    for (auto delta : grid.delta)
        for (auto kt : grid.k_t)
            for (auto lambda : grid.lambda)
                for (auto d : grid.d)
                    for (auto lr : grid.lr)
                        for (auto dropout : grid.dropout)
                            for (auto seed : grid.seeds) {
                                SweepResult r;
                                r.delta = delta;
                                r.k_t = kt;
                                r.lambda = lambda;
                                r.d = d;
                                r.lr = lr;
                                r.dropout = dropout;
                                r.seed = seed;
                                cells.push_back(r);
                            }

    auto run_cell = [&ds, &base_mc, &base_tc, budget](SweepResult cell) {
        model::ModelConfig mc = base_mc;
        TrainConfig tc = base_tc;
        mc.k_t = cell.k_t;
        mc.d = cell.d;
        mc.dropout_rate = cell.dropout;
        tc.delta = cell.delta;
        tc.lambda = cell.lambda;
        tc.lr = cell.lr;
        tc.seed = cell.seed;
        tc.epochs = budget;
        Trainer trainer(ds, mc, tc);
        FitResult fit = trainer.fit();
        cell.val_hr = fit.best_val_hr;
        cell.val_ndcg = fit.best_val_ndcg;
        cell.best_epoch = fit.best_epoch;
        cell.epochs_run = fit.epochs_run;
        return cell;
    };

    if (jobs <= 1) {
        for (auto& cell : cells) cell = run_cell(cell);
        return cells;
    }
    std::vector<SweepResult> out(cells.size());
    std::size_t next = 0;
    while (next < cells.size()) {
        const std::size_t wave = std::min(jobs, cells.size() - next);
        std::vector<std::future<SweepResult>> futures;
        for (std::size_t i = 0; i < wave; ++i)
            futures.push_back(std::async(std::launch::async, run_cell, cells[next + i]));
        for (std::size_t i = 0; i < wave; ++i) out[next + i] = futures[i].get();
        next += wave;
    }
    return out;
}

inline void write_sweep_csv(const std::vector<SweepResult>& results, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write " + path);
    out << "delta,k_t,lambda,d,lr,dropout,seed,val_hr_at_k,val_ndcg_at_k,best_epoch,epochs_run\n";
    for (const auto& r : results)
        out << r.delta << ',' << r.k_t << ',' << r.lambda << ',' << r.d << ',' << r.lr << ','
            << r.dropout << ',' << r.seed << ',' << r.val_hr << ',' << r.val_ndcg << ','
            << r.best_epoch << ',' << r.epochs_run << '\n';
    if (!out) throw io_error("write failed for " + path);
}

}  // namespace temprox::train
