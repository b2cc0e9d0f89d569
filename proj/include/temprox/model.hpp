// The sequential recommendation network: item embedding input, stacked
// transformer layers whose multi-head attention injects absolute time,
// absolute position, relative time-interval and relative position-interval
// context at separate heads, and a weight-tied item scoring head.
//
// Head wiring:
//   absolute heads   Q = (H + E_abs) W_Q, K = (H + E_abs) W_K
//   relative heads   score_ij = ((q_i+u)·k_j + (q_i+w)·r_ij) / sqrt(d_h)
//                    with q,k content projections and r_ij = W_R-projected
//                    interval embedding (Transformer-XL decomposition)
//   content heads    plain scaled dot-product (used by the no_mhar variant)
// Values always come from item content; temporal context moves scores only.

#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "temprox/common.hpp"
#include "temprox/data.hpp"
#include "temprox/tensor.hpp"

namespace temprox::model {

using autodiff::Tape;
using autodiff::TensorPtr;

enum class HeadKind { abs_time, abs_pos, rel_time, rel_pos, content };

inline const char* head_kind_name(HeadKind k) {
    switch (k) {
        case HeadKind::abs_time: return "abs_time";
        case HeadKind::abs_pos: return "abs_pos";
        case HeadKind::rel_time: return "rel_time";
        case HeadKind::rel_pos: return "rel_pos";
        case HeadKind::content: return "content";
    }
    throw config_error("unknown head kind");
}

inline HeadKind head_kind_from_name(const std::string& s) {
    if (s == "abs_time") return HeadKind::abs_time;
    if (s == "abs_pos") return HeadKind::abs_pos;
    if (s == "rel_time") return HeadKind::rel_time;
    if (s == "rel_pos") return HeadKind::rel_pos;
    if (s == "content") return HeadKind::content;
    throw config_error("unknown head kind '" + s + "'");
}

struct ModelConfig {
    std::size_t num_items = 0;  // |V|, real items; PAD=0 and MASK=|V|+1 are extra rows
    std::size_t num_days = 1;   // |T|
    std::size_t d = 64;
    std::size_t layers = 2;
    std::size_t n = 50;
    std::int64_t k_t = 128;  // time-interval clip
    std::int64_t k_p = 2;    // position-interval clip
    double dropout_rate = 0.2;
    std::vector<HeadKind> head_plan{HeadKind::abs_time, HeadKind::abs_pos, HeadKind::rel_time,
                                    HeadKind::rel_pos};
    bool position_at_input = false;  // canonical-attention variant adds M_P into H^(0)
    double ln_eps = 1e-12;

    std::size_t head_dim() const { return d / head_plan.size(); }

    void validate() const {
        if (num_items == 0) throw config_error("model: num_items must be > 0");
        if (num_days == 0) throw config_error("model: num_days must be > 0");
        if (n < 2) throw config_error("model: n must be >= 2");
        if (k_t < 1) throw config_error("model: k_t must be >= 1");
        if (k_p < 1) throw config_error("model: k_p must be >= 1");
        if (head_plan.empty()) throw config_error("model: head plan is empty");
        if (d % head_plan.size() != 0)
            throw config_error("model: d=" + std::to_string(d) + " not divisible by " +
                               std::to_string(head_plan.size()) + " heads");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw config_error("model: dropout_rate must be in [0,1)");
    }

    bool uses(HeadKind k) const {
        for (HeadKind h : head_plan)
            if (h == k) return true;
        return false;
    }

    nlohmann::ordered_json to_json() const {
        std::vector<std::string> heads;
        for (HeadKind h : head_plan) heads.emplace_back(head_kind_name(h));
        return nlohmann::ordered_json{{"num_items", num_items}, {"num_days", num_days},
                                      {"d", d},                 {"layers", layers},
                                      {"n", n},                 {"k_t", k_t},
                                      {"k_p", k_p},             {"dropout_rate", dropout_rate},
                                      {"head_plan", heads},     {"position_at_input", position_at_input},
                                      {"ln_eps", ln_eps}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.num_items = j.at("num_items").get<std::size_t>();
        c.num_days = j.at("num_days").get<std::size_t>();
        c.d = j.at("d").get<std::size_t>();
        c.layers = j.at("layers").get<std::size_t>();
        c.n = j.at("n").get<std::size_t>();
        c.k_t = j.at("k_t").get<std::int64_t>();
        c.k_p = j.at("k_p").get<std::int64_t>();
        c.dropout_rate = j.at("dropout_rate").get<double>();
        c.head_plan.clear();
        for (const auto& h : j.at("head_plan")) c.head_plan.push_back(head_kind_from_name(h.get<std::string>()));
        c.position_at_input = j.at("position_at_input").get<bool>();
        c.ln_eps = j.at("ln_eps").get<double>();
        c.validate();
        return c;
    }
};

// Pairwise time-interval matrix, TI[i][j] = min(|days[j] - days[i]|, k_t).
inline std::vector<std::int32_t> compute_TI(const std::int64_t* days, std::size_t n,
                                            std::int64_t k_t) {
    std::vector<std::int32_t> ti(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const std::int64_t diff = days[j] - days[i];
            ti[i * n + j] = static_cast<std::int32_t>(std::min(diff < 0 ? -diff : diff, k_t));
        }
    return ti;
}

inline std::vector<std::int32_t> compute_TI(const std::vector<std::int64_t>& days,
                                            std::int64_t k_t) {
    return compute_TI(days.data(), days.size(), k_t);
}

// Pairwise position-interval matrix, PI[i][j] = clamp(j - i, -k_p, k_p).
inline std::vector<std::int32_t> compute_PI(std::size_t n, std::int64_t k_p) {
    std::vector<std::int32_t> pi(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const std::int64_t diff = static_cast<std::int64_t>(j) - static_cast<std::int64_t>(i);
            pi[i * n + j] = static_cast<std::int32_t>(std::clamp(diff, -k_p, k_p));
        }
    return pi;
}

struct HeadParams {
    HeadKind kind = HeadKind::content;
    TensorPtr wq, wk, wv;  // d x d_h
    TensorPtr wr;          // d x d_h, relative heads only
    TensorPtr u, w;        // d_h content/position bias vectors, relative heads only
};

struct LayerParams {
    std::vector<HeadParams> heads;
    TensorPtr wo;                    // d x d
    TensorPtr w1, b1, w2, b2;        // FFN
    TensorPtr ln1_g, ln1_b, ln2_g, ln2_b;
};

struct OutputHead {
    TensorPtr w, b;          // d x d, d
    TensorPtr ln_g, ln_b;    // d
    TensorPtr item_bias;     // |V|+2
};

// Optional capture of attention weights for contract tests.
struct ForwardTrace {
    struct HeadWeights {
        std::size_t layer = 0;
        std::size_t batch_row = 0;
        HeadKind kind = HeadKind::content;
        std::size_t n = 0;
        std::vector<double> weights;  // n x n, post-softmax
    };
    std::vector<HeadWeights> attention;
};

class Model {
public:
    ModelConfig cfg;
    TensorPtr item_table;      // (|V|+2) x d
    TensorPtr time_table;      // |T| x d, when an abs_time head exists
    TensorPtr pos_table;       // n x d, when abs_pos head or input positions exist
    TensorPtr rel_time_table;  // (k_t+1) x d
    TensorPtr rel_pos_table;   // (2 k_p+1) x d
    std::vector<LayerParams> layers;
    OutputHead out;

    Model() = default;

    Model(const ModelConfig& config, std::uint64_t seed) : cfg(config) {
        cfg.validate();
        auto rng = make_rng(derive_seed(seed, 0x1417));
        const std::size_t d = cfg.d, dh = cfg.head_dim();

        item_table = param({cfg.num_items + 2, d}, rng);
        if (cfg.uses(HeadKind::abs_time)) time_table = param({cfg.num_days, d}, rng);
        if (cfg.uses(HeadKind::abs_pos) || cfg.position_at_input) pos_table = param({cfg.n, d}, rng);
        if (cfg.uses(HeadKind::rel_time))
            rel_time_table = param({static_cast<std::size_t>(cfg.k_t) + 1, d}, rng);
        if (cfg.uses(HeadKind::rel_pos))
            rel_pos_table = param({static_cast<std::size_t>(2 * cfg.k_p) + 1, d}, rng);

        layers.resize(cfg.layers);
        for (auto& layer : layers) {
            for (HeadKind kind : cfg.head_plan) {
                HeadParams h;
                h.kind = kind;
                h.wq = param({d, dh}, rng);
                h.wk = param({d, dh}, rng);
                h.wv = param({d, dh}, rng);
                if (kind == HeadKind::rel_time || kind == HeadKind::rel_pos) {
                    h.wr = param({d, dh}, rng);
                    h.u = param({dh}, rng);
                    h.w = param({dh}, rng);
                }
                layer.heads.push_back(std::move(h));
            }
            layer.wo = param({d, d}, rng);
            layer.w1 = param({d, 4 * d}, rng);
            layer.b1 = param({4 * d}, rng);
            layer.w2 = param({4 * d, d}, rng);
            layer.b2 = param({d}, rng);
            layer.ln1_g = ones({d});
            layer.ln1_b = zeros_p({d});
            layer.ln2_g = ones({d});
            layer.ln2_b = zeros_p({d});
        }
        out.w = param({d, d}, rng);
        out.b = param({d}, rng);
        out.ln_g = ones({d});
        out.ln_b = zeros_p({d});
        out.item_bias = param({cfg.num_items + 2}, rng);
    }

    // Deterministically ordered (name, tensor) registry; drives the
    // optimizer, the checkpoint layout and gradient checks.
    std::vector<std::pair<std::string, TensorPtr>> named_parameters() const {
        std::vector<std::pair<std::string, TensorPtr>> ps;
        auto push = [&ps](const std::string& name, const TensorPtr& t) {
            if (t) ps.emplace_back(name, t);
        };
        push("item_table", item_table);
        push("time_table", time_table);
        push("pos_table", pos_table);
        push("rel_time_table", rel_time_table);
        push("rel_pos_table", rel_pos_table);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string lp = "layer" + std::to_string(l) + ".";
            for (std::size_t h = 0; h < layers[l].heads.size(); ++h) {
                const std::string hp = lp + "head" + std::to_string(h) + ".";
                push(hp + "wq", layers[l].heads[h].wq);
                push(hp + "wk", layers[l].heads[h].wk);
                push(hp + "wv", layers[l].heads[h].wv);
                push(hp + "wr", layers[l].heads[h].wr);
                push(hp + "u", layers[l].heads[h].u);
                push(hp + "w", layers[l].heads[h].w);
            }
            push(lp + "wo", layers[l].wo);
            push(lp + "w1", layers[l].w1);
            push(lp + "b1", layers[l].b1);
            push(lp + "w2", layers[l].w2);
            push(lp + "b2", layers[l].b2);
            push(lp + "ln1_g", layers[l].ln1_g);
            push(lp + "ln1_b", layers[l].ln1_b);
            push(lp + "ln2_g", layers[l].ln2_g);
            push(lp + "ln2_b", layers[l].ln2_b);
        }
        push("out.w", out.w);
        push("out.b", out.b);
        push("out.ln_g", out.ln_g);
        push("out.ln_b", out.ln_b);
        push("out.item_bias", out.item_bias);
        return ps;
    }

    std::size_t num_parameters() const {
        std::size_t n = 0;
        for (const auto& [name, t] : named_parameters()) n += t->size();
        return n;
    }

    // H^(0): row lookups into the item table, [B*n x d]. Time/position enter
    // inside the attention (except the position_at_input variant).
    TensorPtr embed_items(Tape* tape, const data::Batch& batch) const {
        auto h0 = autodiff::gather_rows(tape, item_table, batch.items);
        if (cfg.position_at_input) {
            std::vector<std::int64_t> pos_idx(batch.size * batch.n);
            for (std::size_t b = 0; b < batch.size; ++b)
                for (std::size_t i = 0; i < batch.n; ++i) pos_idx[b * batch.n + i] = static_cast<std::int64_t>(i);
            h0 = autodiff::add(tape, h0, autodiff::gather_rows(tape, pos_table, pos_idx));
        }
        return h0;
    }

    // Full encoder: embed_items then `layers` transformer layers.
    // Returns H^(L) as [B*n x d].
    TensorPtr forward(Tape* tape, const data::Batch& batch, bool training, std::mt19937_64& rng,
                      ForwardTrace* trace = nullptr) const {
        if (batch.n != cfg.n)
            throw shape_error("forward: batch n=" + std::to_string(batch.n) + " vs model n=" +
                              std::to_string(cfg.n));
        // Out-of-span days (possible at inference) clamp to the span edges so
        // time-table lookups and interval buckets stay valid.
        std::vector<std::int64_t> days(batch.days.size());
        for (std::size_t t = 0; t < days.size(); ++t)
            days[t] = std::clamp<std::int64_t>(batch.days[t], 0,
                                               static_cast<std::int64_t>(cfg.num_days) - 1);
        TensorPtr h = embed_items(tape, batch);
        for (std::size_t l = 0; l < layers.size(); ++l)
            h = transformer_layer(tape, l, h, batch, days, training, rng, trace);
        return h;
    }

    // Scores for every item column, [M x (|V|+2)]: linear + GELU + layer norm,
    // then the transposed item table (weight tying) plus a per-item bias.
    TensorPtr output_logits(Tape* tape, const TensorPtr& h_rows) const {
        auto x = autodiff::add_row_broadcast(tape, autodiff::matmul(tape, h_rows, out.w), out.b);
        x = autodiff::gelu(tape, x);
        x = autodiff::layer_norm(tape, x, out.ln_g, out.ln_b, cfg.ln_eps);
        auto logits = autodiff::matmul(tape, x, autodiff::transpose(tape, item_table));
        return autodiff::add_row_broadcast(tape, logits, out.item_bias);
    }

    std::vector<std::int64_t> excluded_logit_columns() const {
        return {data::kPad, static_cast<std::int64_t>(cfg.num_items) + 1};
    }

    // Tape-free output head for one hidden row; candidate columns only.
    std::vector<double> score_candidates(const double* h_row,
                                         const std::vector<std::int64_t>& candidates) const {
        const std::size_t d = cfg.d;
        std::vector<double> x(d, 0.0);
        for (std::size_t j = 0; j < d; ++j) {
            double s = out.b->values[j];
            for (std::size_t i = 0; i < d; ++i) s += h_row[i] * out.w->values[i * d + j];
            x[j] = s;
        }
        static const double kAlpha = std::sqrt(2.0 / std::numbers::pi);
        for (double& v : x) v = 0.5 * v * (1.0 + std::tanh(kAlpha * (v + 0.044715 * v * v * v)));
        double mu = 0.0;
        for (double v : x) mu += v;
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (double v : x) var += (v - mu) * (v - mu);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + cfg.ln_eps);
        for (std::size_t j = 0; j < d; ++j)
            x[j] = out.ln_g->values[j] * ((x[j] - mu) * inv) + out.ln_b->values[j];
        std::vector<double> scores;
        scores.reserve(candidates.size());
        for (std::int64_t c : candidates) {
            if (c < 0 || c >= static_cast<std::int64_t>(cfg.num_items) + 2)
                throw index_error("score_candidates: item " + std::to_string(c) + " out of range");
            double s = out.item_bias->values[static_cast<std::size_t>(c)];
            const double* row = item_table->values.data() + c * static_cast<std::int64_t>(d);
            for (std::size_t j = 0; j < d; ++j) s += x[j] * row[j];
            scores.push_back(s);
        }
        return scores;
    }

    // Scores over the whole vocabulary with PAD and MASK forced to -inf so
    // they can never outrank a real item.
    std::vector<double> ranking_scores(const double* h_row) const {
        std::vector<std::int64_t> all(cfg.num_items + 2);
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::int64_t>(i);
        auto scores = score_candidates(h_row, all);
        scores[0] = -std::numeric_limits<double>::infinity();
        scores[cfg.num_items + 1] = -std::numeric_limits<double>::infinity();
        return scores;
    }

    void save_checkpoint(const std::string& path) const;
    static Model load_checkpoint(const std::string& path);

private:
    static TensorPtr param(std::vector<std::size_t> shape, std::mt19937_64& rng) {
        auto t = autodiff::make_tensor(std::move(shape), true);
        autodiff::truncated_normal_fill(*t, rng, 0.02, 0.02);
        return t;
    }
    static TensorPtr ones(std::vector<std::size_t> shape) {
        auto t = autodiff::make_tensor(std::move(shape), true);
        for (auto& v : t->values) v = 1.0;
        return t;
    }
    static TensorPtr zeros_p(std::vector<std::size_t> shape) {
        return autodiff::make_tensor(std::move(shape), true);
    }

    TensorPtr transformer_layer(Tape* tape, std::size_t layer_idx, const TensorPtr& h,
                                const data::Batch& batch, const std::vector<std::int64_t>& days,
                                bool training, std::mt19937_64& rng, ForwardTrace* trace) const {
        const LayerParams& L = layers[layer_idx];
        const std::size_t B = batch.size, n = batch.n;
        const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));

        // Per-head token-level projections, [B*n x d_h].
        struct HeadTensors {
            TensorPtr q, k, v;
            TensorPtr rel_proj;  // projected interval table rows, relative heads
            const std::vector<std::int32_t>* pair_idx = nullptr;  // shared PI buckets
        };
        const std::vector<std::int32_t> pi = compute_PI(n, cfg.k_p);
        std::vector<std::int32_t> pi_bucket(pi.size());
        for (std::size_t i = 0; i < pi.size(); ++i)
            pi_bucket[i] = pi[i] + static_cast<std::int32_t>(cfg.k_p);

        std::vector<HeadTensors> heads(L.heads.size());
        for (std::size_t hi = 0; hi < L.heads.size(); ++hi) {
            const HeadParams& hp = L.heads[hi];
            HeadTensors ht;
            TensorPtr qk_input = h;
            if (hp.kind == HeadKind::abs_time) {
                qk_input = autodiff::add(tape, h, autodiff::gather_rows(tape, time_table, days));
            } else if (hp.kind == HeadKind::abs_pos) {
                std::vector<std::int64_t> pos_idx(B * n);
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t i = 0; i < n; ++i) pos_idx[b * n + i] = static_cast<std::int64_t>(i);
                qk_input = autodiff::add(tape, h, autodiff::gather_rows(tape, pos_table, pos_idx));
            }
            ht.q = autodiff::matmul(tape, qk_input, hp.wq);
            ht.k = autodiff::matmul(tape, qk_input, hp.wk);
            ht.v = autodiff::matmul(tape, h, hp.wv);
            if (hp.kind == HeadKind::rel_time) {
                // only intervals that can occur in this dataset are projected
                const std::size_t used =
                    static_cast<std::size_t>(std::min<std::int64_t>(cfg.k_t, static_cast<std::int64_t>(cfg.num_days) - 1)) + 1;
                std::vector<std::int64_t> iota(used);
                for (std::size_t i = 0; i < used; ++i) iota[i] = static_cast<std::int64_t>(i);
                ht.rel_proj = autodiff::matmul(tape, autodiff::gather_rows(tape, rel_time_table, iota), hp.wr);
            } else if (hp.kind == HeadKind::rel_pos) {
                ht.rel_proj = autodiff::matmul(tape, rel_pos_table, hp.wr);
                ht.pair_idx = &pi_bucket;
            }
            heads[hi] = std::move(ht);
        }

        // Attention per sequence, heads concatenated, projected by W^O.
        std::vector<TensorPtr> row_outputs;
        row_outputs.reserve(B);
        std::vector<std::int64_t> row_idx(n);
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t i = 0; i < n; ++i) row_idx[i] = static_cast<std::int64_t>(b * n + i);
            std::vector<bool> key_mask(n);
            for (std::size_t i = 0; i < n; ++i) key_mask[i] = batch.pad_mask[b * n + i];

            std::vector<std::int32_t> ti_bucket;
            std::vector<TensorPtr> head_outs;
            head_outs.reserve(L.heads.size());
            for (std::size_t hi = 0; hi < L.heads.size(); ++hi) {
                const HeadParams& hp = L.heads[hi];
                const HeadTensors& ht = heads[hi];
                auto qb = autodiff::gather_rows(tape, ht.q, row_idx);
                auto kb = autodiff::gather_rows(tape, ht.k, row_idx);
                auto vb = autodiff::gather_rows(tape, ht.v, row_idx);

                TensorPtr scores;
                if (hp.kind == HeadKind::rel_time || hp.kind == HeadKind::rel_pos) {
                    auto content = autodiff::matmul(
                        tape, autodiff::add_row_broadcast(tape, qb, hp.u), autodiff::transpose(tape, kb));
                    const std::vector<std::int32_t>* idx = ht.pair_idx;
                    if (hp.kind == HeadKind::rel_time) {
                        ti_bucket = compute_TI(days.data() + b * n, n, cfg.k_t);
                        idx = &ti_bucket;
                    }
                    auto qr = autodiff::matmul(tape, autodiff::add_row_broadcast(tape, qb, hp.w),
                                               autodiff::transpose(tape, ht.rel_proj));
                    auto rel = autodiff::gather_cols_per_row(tape, qr, *idx, n);
                    scores = autodiff::scale(tape, autodiff::add(tape, content, rel), inv_sqrt_dh);
                } else {
                    scores = autodiff::scale(
                        tape, autodiff::matmul(tape, qb, autodiff::transpose(tape, kb)), inv_sqrt_dh);
                }
                auto weights = autodiff::softmax_masked(tape, scores, key_mask);
                if (trace)
                    trace->attention.push_back(ForwardTrace::HeadWeights{
                        layer_idx, b, hp.kind, n, weights->values});
                head_outs.push_back(autodiff::matmul(tape, weights, vb));
            }
            row_outputs.push_back(autodiff::concat_cols(tape, head_outs));
        }
        auto attn = autodiff::matmul(tape, autodiff::concat_rows(tape, row_outputs), L.wo);

        // post-norm: LN(x + dropout(sublayer(x)))
        auto h1 = autodiff::layer_norm(
            tape, autodiff::add(tape, h, autodiff::dropout(tape, attn, cfg.dropout_rate, rng, training)),
            L.ln1_g, L.ln1_b, cfg.ln_eps);
        auto ff = autodiff::add_row_broadcast(
            tape,
            autodiff::matmul(tape,
                             autodiff::gelu(tape, autodiff::add_row_broadcast(
                                                      tape, autodiff::matmul(tape, h1, L.w1), L.b1)),
                             L.w2),
            L.b2);
        return autodiff::layer_norm(
            tape, autodiff::add(tape, h1, autodiff::dropout(tape, ff, cfg.dropout_rate, rng, training)),
            L.ln2_g, L.ln2_b, cfg.ln_eps);
    }
};

// ---------------------------------------------------------------------------
// Checkpoint format (documented in the README):
//   magic "TPRXCKP1", u32 manifest length, manifest JSON
//   {config: <model config>, tensors: [{name, shape}, ...]},
//   then for each tensor in manifest order its values as raw IEEE-754
//   doubles, little-endian. Round-trips are bit-exact.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_doubles_le(std::ostream& os, const std::vector<double>& vs) {
    for (double v : vs) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
        os.write(reinterpret_cast<const char*>(b), 8);
    }
}

inline void read_doubles_le(std::istream& is, std::vector<double>& vs) {
    for (double& v : vs) {
        unsigned char b[8];
        is.read(reinterpret_cast<char*>(b), 8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        std::memcpy(&v, &bits, 8);
    }
}

}  // namespace detail

inline void Model::save_checkpoint(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot write " + path);
    nlohmann::ordered_json manifest;
    manifest["config"] = cfg.to_json();
    auto tensors = nlohmann::ordered_json::array();
    const auto named = named_parameters();
    for (const auto& [name, t] : named)
        tensors.push_back(nlohmann::ordered_json{{"name", name}, {"shape", t->shape}});
    manifest["tensors"] = std::move(tensors);
    const std::string mjson = manifest.dump();
    os.write("TPRXCKP1", 8);
    detail::write_u32(os, static_cast<std::uint32_t>(mjson.size()));
    os.write(mjson.data(), static_cast<std::streamsize>(mjson.size()));
    for (const auto& [name, t] : named) detail::write_doubles_le(os, t->values);
    if (!os) throw io_error("write failed for " + path);
}

inline Model Model::load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != "TPRXCKP1")
        throw parse_error(path + ": not a temprox checkpoint");
    const std::uint32_t mlen = detail::read_u32(is);
    std::string mjson(mlen, '\0');
    is.read(mjson.data(), mlen);
    if (!is) throw parse_error(path + ": truncated manifest");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(mjson);
    } catch (const std::exception& e) {
        throw parse_error(path + ": bad manifest: " + e.what());
    }
    Model m(ModelConfig::from_json(manifest.at("config")), 0);
    auto named = m.named_parameters();
    const auto& tensors = manifest.at("tensors");
    if (tensors.size() != named.size())
        throw parse_error(path + ": manifest lists " + std::to_string(tensors.size()) +
                          " tensors, model has " + std::to_string(named.size()));
    for (std::size_t i = 0; i < named.size(); ++i) {
        const auto& tj = tensors[i];
        if (tj.at("name").get<std::string>() != named[i].first)
            throw parse_error(path + ": tensor order mismatch at '" + named[i].first + "'");
        if (tj.at("shape").get<std::vector<std::size_t>>() != named[i].second->shape)
            throw parse_error(path + ": shape mismatch for '" + named[i].first + "'");
        detail::read_doubles_le(is, named[i].second->values);
    }
    if (!is) throw parse_error(path + ": truncated tensor data");
    return m;
}

}  // namespace temprox::model
