// Dense tensor math with tape-based reverse-mode automatic differentiation.
//
// The scope is deliberately small: 64-bit reals, 1-D/2-D shapes, and exactly
// the operations the recommender needs. Gradients are accumulated on the
// tensors themselves; a Tape records one closure per op and replays them in
// reverse. A Tape and the gradients it touches belong to one logical thread;
// tensors are freely shareable for reads.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

#include "temprox/common.hpp"

namespace temprox::autodiff {

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until backward touches this tensor

    std::size_t size() const { return values.size(); }
    bool is_scalar() const { return values.size() == 1; }
    // 2-D accessors; 1-D tensors are treated as a single row where needed.
    std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
    std::size_t cols() const { return shape.size() == 2 ? shape[1] : shape[0]; }

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }
    void zero_grad() { grad.assign(values.size(), 0.0); }
};

using TensorPtr = std::shared_ptr<Tensor>;

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline TensorPtr make_tensor(std::vector<std::size_t> shape, bool requires_grad = false) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->values.assign(shape_numel(t->shape), 0.0);
    t->requires_grad = requires_grad;
    return t;
}

inline TensorPtr make_tensor(std::vector<std::size_t> shape, std::vector<double> values,
                             bool requires_grad = false) {
    if (shape_numel(shape) != values.size())
        throw shape_error("tensor values length " + std::to_string(values.size()) +
                          " does not match shape " + shape_str(shape));
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->values = std::move(values);
    t->requires_grad = requires_grad;
    return t;
}

inline TensorPtr make_scalar(double v, bool requires_grad = false) {
    return make_tensor({1}, {v}, requires_grad);
}

// Fills with N(0, stddev) resampled until inside [-bound, bound].
inline void truncated_normal_fill(Tensor& t, std::mt19937_64& rng, double stddev, double bound) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t.values) {
        double x = dist(rng);
        while (x < -bound || x > bound) x = dist(rng);
        v = x;
    }
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

class Tape {
public:
    struct Node {
        std::vector<TensorPtr> inputs;
        TensorPtr output;
        std::function<void()> backward;
    };

    void record(std::vector<TensorPtr> inputs, TensorPtr output, std::function<void()> backward) {
        nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(backward)});
    }

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // Seeds d(loss)/d(loss)=1 and replays every recorded op once, newest
    // first. Recording order is execution order, so inputs precede uses. A
    // node whose output never received gradient (it feeds a branch the loss
    // does not depend on) is skipped.
    void backward(const TensorPtr& loss) {
        if (!loss || !loss->is_scalar())
            throw shape_error("backward expects a scalar loss, got shape " +
                              (loss ? shape_str(loss->shape) : std::string("null")));
        loss->ensure_grad();
        loss->grad[0] += 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (!it->backward) continue;
            if (it->output && it->output->grad.size() != it->output->values.size()) continue;
            it->backward();
        }
    }

private:
    std::vector<Node> nodes_;
};

namespace detail {

inline bool wants_grad(Tape* tape, std::initializer_list<const TensorPtr*> inputs) {
    if (!tape) return false;
    for (const TensorPtr* t : inputs)
        if (*t && (*t)->requires_grad) return true;
    return false;
}

inline void check_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
    if (a->shape != b->shape)
        throw shape_error(std::string(op) + ": shapes differ, " + shape_str(a->shape) + " vs " +
                          shape_str(b->shape));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra ops. Every op returns a fresh tensor and,
// when tape != nullptr and some input requires grad, records its backward
// rule. Passing tape == nullptr runs pure inference.
// ---------------------------------------------------------------------------

inline TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
    detail::check_same_shape(a, b, "add");
    auto out = make_tensor(a->shape);
    for (std::size_t i = 0; i < a->size(); ++i) out->values[i] = a->values[i] + b->values[i];
    if (detail::wants_grad(tape, {&a, &b})) {
        out->requires_grad = true;
        tape->record({a, b}, out, [a, b, out] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

inline TensorPtr sub(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
    detail::check_same_shape(a, b, "sub");
    auto out = make_tensor(a->shape);
    for (std::size_t i = 0; i < a->size(); ++i) out->values[i] = a->values[i] - b->values[i];
    if (detail::wants_grad(tape, {&a, &b})) {
        out->requires_grad = true;
        tape->record({a, b}, out, [a, b, out] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] -= out->grad[i];
            }
        });
    }
    return out;
}

inline TensorPtr mul(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
    detail::check_same_shape(a, b, "mul");
    auto out = make_tensor(a->shape);
    for (std::size_t i = 0; i < a->size(); ++i) out->values[i] = a->values[i] * b->values[i];
    if (detail::wants_grad(tape, {&a, &b})) {
        out->requires_grad = true;
        tape->record({a, b}, out, [a, b, out] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < a->size(); ++i)
                    a->grad[i] += out->grad[i] * b->values[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < b->size(); ++i)
                    b->grad[i] += out->grad[i] * a->values[i];
            }
        });
    }
    return out;
}

inline TensorPtr scale(Tape* tape, const TensorPtr& x, double c) {
    auto out = make_tensor(x->shape);
    for (std::size_t i = 0; i < x->size(); ++i) out->values[i] = x->values[i] * c;
    if (detail::wants_grad(tape, {&x})) {
        out->requires_grad = true;
        tape->record({x}, out, [x, out, c] {
            x->ensure_grad();
            for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[i] * c;
        });
    }
    return out;
}

// Y[i][j] = X[i][j] + v[j]
inline TensorPtr add_row_broadcast(Tape* tape, const TensorPtr& x, const TensorPtr& v) {
    const std::size_t r = x->rows(), c = x->cols();
    if (v->size() != c)
        throw shape_error("add_row_broadcast: vector length " + std::to_string(v->size()) +
                          " vs row width " + std::to_string(c));
    auto out = make_tensor(x->shape);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out->values[i * c + j] = x->values[i * c + j] + v->values[j];
    if (detail::wants_grad(tape, {&x, &v})) {
        out->requires_grad = true;
        tape->record({x, v}, out, [x, v, out, r, c] {
            if (x->requires_grad) {
                x->ensure_grad();
                for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[i];
            }
            if (v->requires_grad) {
                v->ensure_grad();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) v->grad[j] += out->grad[i * c + j];
            }
        });
    }
    return out;
}

inline TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
        throw shape_error("matmul: incompatible shapes " + shape_str(a->shape) + " and " +
                          shape_str(b->shape));
    const std::size_t m = a->shape[0], k = a->shape[1], p = b->shape[1];
    auto out = make_tensor({m, p});
    const double* A = a->values.data();
    const double* B = b->values.data();
    double* C = out->values.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = A[i * k + kk];
            if (av == 0.0) continue;
            const double* Brow = B + kk * p;
            double* Crow = C + i * p;
            for (std::size_t j = 0; j < p; ++j) Crow[j] += av * Brow[j];
        }
    }
    if (detail::wants_grad(tape, {&a, &b})) {
        out->requires_grad = true;
        tape->record({a, b}, out, [a, b, out, m, k, p] {
            const double* dC = out->grad.data();
            if (a->requires_grad) {
                a->ensure_grad();
                double* dA = a->grad.data();
                const double* B = b->values.data();
                // dA = dC * B^T
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        double s = 0.0;
                        const double* dCrow = dC + i * p;
                        const double* Brow = B + kk * p;
                        for (std::size_t j = 0; j < p; ++j) s += dCrow[j] * Brow[j];
                        dA[i * k + kk] += s;
                    }
            }
            if (b->requires_grad) {
                b->ensure_grad();
                double* dB = b->grad.data();
                const double* A = a->values.data();
                // dB = A^T * dC
                for (std::size_t kk = 0; kk < k; ++kk)
                    for (std::size_t i = 0; i < m; ++i) {
                        const double av = A[i * k + kk];
                        if (av == 0.0) continue;
                        const double* dCrow = dC + i * p;
                        double* dBrow = dB + kk * p;
                        for (std::size_t j = 0; j < p; ++j) dBrow[j] += av * dCrow[j];
                    }
            }
        });
    }
    return out;
}

inline TensorPtr transpose(Tape* tape, const TensorPtr& x) {
    if (x->shape.size() != 2)
        throw shape_error("transpose expects a 2-D tensor, got " + shape_str(x->shape));
    const std::size_t r = x->shape[0], c = x->shape[1];
    auto out = make_tensor({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out->values[j * r + i] = x->values[i * c + j];
    if (detail::wants_grad(tape, {&x})) {
        out->requires_grad = true;
        tape->record({x}, out, [x, out, r, c] {
            x->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) x->grad[i * c + j] += out->grad[j * r + i];
        });
    }
    return out;
}

// Row lookups into a 2-D table; backward scatter-adds into the table rows.
inline TensorPtr gather_rows(Tape* tape, const TensorPtr& table,
                             const std::vector<std::int64_t>& indices) {
    if (table->shape.size() != 2)
        throw shape_error("gather_rows expects a 2-D table, got " + shape_str(table->shape));
    const std::int64_t R = static_cast<std::int64_t>(table->shape[0]);
    const std::size_t d = table->shape[1];
    for (std::int64_t idx : indices)
        if (idx < 0 || idx >= R)
            throw index_error("gather_rows: index " + std::to_string(idx) +
                              " out of range [0, " + std::to_string(R) + ")");
    auto out = make_tensor({indices.size(), d});
    for (std::size_t i = 0; i < indices.size(); ++i)
        std::copy_n(table->values.data() + indices[i] * static_cast<std::int64_t>(d), d,
                    out->values.data() + i * d);
    if (detail::wants_grad(tape, {&table})) {
        out->requires_grad = true;
        tape->record({table}, out, [table, out, indices, d] {
            table->ensure_grad();
            for (std::size_t i = 0; i < indices.size(); ++i) {
                double* dst = table->grad.data() + indices[i] * static_cast<std::int64_t>(d);
                const double* src = out->grad.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

// out[i][j] = X[i][idx[i*m + j]] for j in [0, m). Used to expand per-bucket
// relative scores to the full pairwise score matrix.
inline TensorPtr gather_cols_per_row(Tape* tape, const TensorPtr& x,
                                     const std::vector<std::int32_t>& idx, std::size_t m) {
    const std::size_t r = x->rows(), c = x->cols();
    if (idx.size() != r * m)
        throw shape_error("gather_cols_per_row: index count " + std::to_string(idx.size()) +
                          " != rows*m = " + std::to_string(r * m));
    for (std::int32_t j : idx)
        if (j < 0 || static_cast<std::size_t>(j) >= c)
            throw index_error("gather_cols_per_row: column index " + std::to_string(j) +
                              " out of range [0, " + std::to_string(c) + ")");
    auto out = make_tensor({r, m});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < m; ++j)
            out->values[i * m + j] = x->values[i * c + static_cast<std::size_t>(idx[i * m + j])];
    if (detail::wants_grad(tape, {&x})) {
        out->requires_grad = true;
        tape->record({x}, out, [x, out, idx, r, c, m] {
            x->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < m; ++j)
                    x->grad[i * c + static_cast<std::size_t>(idx[i * m + j])] +=
                        out->grad[i * m + j];
        });
    }
    return out;
}

inline TensorPtr concat_cols(Tape* tape, const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw shape_error("concat_cols: no inputs");
    const std::size_t r = parts[0]->rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p->rows() != r)
            throw shape_error("concat_cols: row mismatch " + std::to_string(p->rows()) + " vs " +
                              std::to_string(r));
        total += p->cols();
    }
    auto out = make_tensor({r, total});
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t c = p->cols();
        for (std::size_t i = 0; i < r; ++i)
            std::copy_n(p->values.data() + i * c, c, out->values.data() + i * total + off);
        off += c;
    }
    bool any = false;
    for (const auto& p : parts) any = any || p->requires_grad;
    if (tape && any) {
        out->requires_grad = true;
        tape->record(parts, out, [parts, out, r, total] {
            std::size_t off = 0;
            for (const auto& p : parts) {
                const std::size_t c = p->cols();
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < c; ++j)
                            p->grad[i * c + j] += out->grad[i * total + off + j];
                }
                off += c;
            }
        });
    }
    return out;
}

inline TensorPtr concat_rows(Tape* tape, const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw shape_error("concat_rows: no inputs");
    const std::size_t c = parts[0]->cols();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p->cols() != c)
            throw shape_error("concat_rows: column mismatch " + std::to_string(p->cols()) +
                              " vs " + std::to_string(c));
        total += p->rows();
    }
    auto out = make_tensor({total, c});
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->values.begin(), p->values.end(), out->values.begin() + static_cast<std::ptrdiff_t>(off));
        off += p->size();
    }
    bool any = false;
    for (const auto& p : parts) any = any || p->requires_grad;
    if (tape && any) {
        out->requires_grad = true;
        tape->record(parts, out, [parts, out] {
            std::size_t off = 0;
            for (const auto& p : parts) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::size_t i = 0; i < p->size(); ++i) p->grad[i] += out->grad[off + i];
                }
                off += p->size();
            }
        });
    }
    return out;
}

inline TensorPtr sum_all(Tape* tape, const TensorPtr& x) {
    double s = 0.0;
    for (double v : x->values) s += v;
    auto out = make_scalar(s);
    if (detail::wants_grad(tape, {&x})) {
        out->requires_grad = true;
        tape->record({x}, out, [x, out] {
            x->ensure_grad();
            for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[0];
        });
    }
    return out;
}

// GELU, tanh approximation: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
inline TensorPtr gelu(Tape* tape, const TensorPtr& x) {
    static const double kAlpha = std::sqrt(2.0 / std::numbers::pi);
    auto out = make_tensor(x->shape);
    for (std::size_t i = 0; i < x->size(); ++i) {
        const double v = x->values[i];
        out->values[i] = 0.5 * v * (1.0 + std::tanh(kAlpha * (v + 0.044715 * v * v * v)));
    }
    if (detail::wants_grad(tape, {&x})) {
        out->requires_grad = true;
        tape->record({x}, out, [x, out] {
            x->ensure_grad();
            for (std::size_t i = 0; i < x->size(); ++i) {
                const double v = x->values[i];
                const double u = kAlpha * (v + 0.044715 * v * v * v);
                const double th = std::tanh(u);
                const double sech2 = 1.0 - th * th;
                const double du = kAlpha * (1.0 + 3.0 * 0.044715 * v * v);
                x->grad[i] += out->grad[i] * (0.5 * (1.0 + th) + 0.5 * v * sech2 * du);
            }
        });
    }
    return out;
}

// Inverted dropout. Eval mode and rate 0 are the exact identity.
inline TensorPtr dropout(Tape* tape, const TensorPtr& x, double rate, std::mt19937_64& rng,
                         bool training) {
    if (rate < 0.0 || rate >= 1.0)
        throw config_error("dropout rate must be in [0,1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return x;
    auto keep = std::make_shared<std::vector<double>>(x->size());
    std::bernoulli_distribution drop(rate);
    const double inv = 1.0 / (1.0 - rate);
    auto out = make_tensor(x->shape);
    for (std::size_t i = 0; i < x->size(); ++i) {
        const double f = drop(rng) ? 0.0 : inv;
        (*keep)[i] = f;
        out->values[i] = x->values[i] * f;
    }
    if (detail::wants_grad(tape, {&x})) {
        out->requires_grad = true;
        tape->record({x}, out, [x, out, keep] {
            x->ensure_grad();
            for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[i] * (*keep)[i];
        });
    }
    return out;
}

// Row-wise softmax over unmasked key columns; masked columns get weight
// exactly 0. key_mask[j] == true means column j participates.
inline TensorPtr softmax_masked(Tape* tape, const TensorPtr& scores,
                                const std::vector<bool>& key_mask) {
    const std::size_t r = scores->rows(), c = scores->cols();
    if (key_mask.size() != c)
        throw shape_error("softmax_masked: mask length " + std::to_string(key_mask.size()) +
                          " vs columns " + std::to_string(c));
    bool any_key = false;
    for (bool b : key_mask) any_key = any_key || b;
    if (!any_key) throw contract_error("softmax_masked: row has zero unmasked keys");
    auto out = make_tensor(scores->shape);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = scores->values.data() + i * c;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j)
            if (key_mask[j]) mx = std::max(mx, row[j]);
        double denom = 0.0;
        double* orow = out->values.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) {
            if (key_mask[j]) {
                orow[j] = std::exp(row[j] - mx);
                denom += orow[j];
            } else {
                orow[j] = 0.0;
            }
        }
        for (std::size_t j = 0; j < c; ++j) orow[j] /= denom;
        for (std::size_t j = 0; j < c; ++j)
            if (!key_mask[j]) orow[j] = 0.0;
    }
    if (detail::wants_grad(tape, {&scores})) {
        out->requires_grad = true;
        tape->record({scores}, out, [scores, out, r, c] {
            scores->ensure_grad();
            for (std::size_t i = 0; i < r; ++i) {
                const double* y = out->values.data() + i * c;
                const double* dy = out->grad.data() + i * c;
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += y[j] * dy[j];
                double* dx = scores->grad.data() + i * c;
                for (std::size_t j = 0; j < c; ++j) dx[j] += y[j] * (dy[j] - dot);
            }
        });
    }
    return out;
}

// Per-row normalization over the last dimension with learnable gain/shift.
// Population variance; eps inside the square root.
inline TensorPtr layer_norm(Tape* tape, const TensorPtr& x, const TensorPtr& gamma,
                            const TensorPtr& beta, double eps) {
    const std::size_t r = x->rows(), d = x->cols();
    if (gamma->size() != d || beta->size() != d)
        throw shape_error("layer_norm: gamma/beta length " + std::to_string(gamma->size()) + "/" +
                          std::to_string(beta->size()) + " vs feature dim " + std::to_string(d));
    auto out = make_tensor(x->shape);
    auto xhat = std::make_shared<std::vector<double>>(x->size());
    auto inv_sigma = std::make_shared<std::vector<double>>(r);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = x->values.data() + i * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_sigma)[i] = is;
        double* orow = out->values.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = (row[j] - mu) * is;
            (*xhat)[i * d + j] = xh;
            orow[j] = gamma->values[j] * xh + beta->values[j];
        }
    }
    if (detail::wants_grad(tape, {&x, &gamma, &beta})) {
        out->requires_grad = true;
        tape->record({x, gamma, beta}, out, [x, gamma, beta, out, xhat, inv_sigma, r, d] {
            for (std::size_t i = 0; i < r; ++i) {
                const double* dy = out->grad.data() + i * d;
                const double* xh = xhat->data() + i * d;
                if (gamma->requires_grad) {
                    gamma->ensure_grad();
                    for (std::size_t j = 0; j < d; ++j) gamma->grad[j] += dy[j] * xh[j];
                }
                if (beta->requires_grad) {
                    beta->ensure_grad();
                    for (std::size_t j = 0; j < d; ++j) beta->grad[j] += dy[j];
                }
                if (x->requires_grad) {
                    x->ensure_grad();
                    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dxh = dy[j] * gamma->values[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xh[j];
                    }
                    mean_dxhat /= static_cast<double>(d);
                    mean_dxhat_xhat /= static_cast<double>(d);
                    double* dx = x->grad.data() + i * d;
                    const double is = (*inv_sigma)[i];
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dxh = dy[j] * gamma->values[j];
                        dx[j] += is * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
                    }
                }
            }
        });
    }
    return out;
}

// Mean negative log-likelihood over rows. Softmax is taken over the columns
// NOT listed in excluded_cols (reserved tokens never receive probability).
inline TensorPtr cross_entropy_rows(Tape* tape, const TensorPtr& logits,
                                    const std::vector<std::int64_t>& targets,
                                    const std::vector<std::int64_t>& excluded_cols) {
    const std::size_t M = logits->rows(), C = logits->cols();
    if (targets.size() != M)
        throw shape_error("cross_entropy_rows: " + std::to_string(targets.size()) +
                          " targets for " + std::to_string(M) + " rows");
    if (M == 0) throw contract_error("cross_entropy_rows: no targets");
    std::vector<bool> included(C, true);
    for (std::int64_t e : excluded_cols)
        if (e >= 0 && static_cast<std::size_t>(e) < C) included[static_cast<std::size_t>(e)] = false;
    for (std::int64_t t : targets) {
        if (t < 0 || static_cast<std::size_t>(t) >= C)
            throw index_error("cross_entropy_rows: target " + std::to_string(t) +
                              " out of range [0, " + std::to_string(C) + ")");
        if (!included[static_cast<std::size_t>(t)])
            throw contract_error("cross_entropy_rows: target " + std::to_string(t) +
                                 " is an excluded column");
    }
    auto probs = std::make_shared<std::vector<double>>(M * C, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
        const double* row = logits->values.data() + i * C;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < C; ++j)
            if (included[j]) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < C; ++j)
            if (included[j]) denom += std::exp(row[j] - mx);
        const double log_denom = std::log(denom) + mx;
        const std::size_t t = static_cast<std::size_t>(targets[i]);
        total += log_denom - row[t];
        double* prow = probs->data() + i * C;
        for (std::size_t j = 0; j < C; ++j)
            if (included[j]) prow[j] = std::exp(row[j] - log_denom);
    }
    auto out = make_scalar(total / static_cast<double>(M));
    if (detail::wants_grad(tape, {&logits})) {
        out->requires_grad = true;
        tape->record({logits}, out, [logits, out, probs, targets, M, C] {
            logits->ensure_grad();
            const double g = out->grad[0] / static_cast<double>(M);
            for (std::size_t i = 0; i < M; ++i) {
                const double* prow = probs->data() + i * C;
                double* drow = logits->grad.data() + i * C;
                for (std::size_t j = 0; j < C; ++j) drow[j] += g * prow[j];
                drow[static_cast<std::size_t>(targets[i])] -= g;
            }
        });
    }
    return out;
}

// Rows scaled to unit L2 norm. A row of exact zeros stays zero (its cosine
// similarities read as 0); zero_norm_counter, when given, counts such rows.
inline TensorPtr l2_normalize_rows(Tape* tape, const TensorPtr& x,
                                   std::size_t* zero_norm_counter = nullptr) {
    const std::size_t r = x->rows(), d = x->cols();
    auto out = make_tensor(x->shape);
    auto inv_norm = std::make_shared<std::vector<double>>(r, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = x->values.data() + i * d;
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += row[j] * row[j];
        const double norm = std::sqrt(s);
        if (norm == 0.0) {
            if (zero_norm_counter) ++(*zero_norm_counter);
            continue;  // output row stays zero
        }
        (*inv_norm)[i] = 1.0 / norm;
        double* orow = out->values.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) orow[j] = row[j] * (*inv_norm)[i];
    }
    if (detail::wants_grad(tape, {&x})) {
        out->requires_grad = true;
        tape->record({x}, out, [x, out, inv_norm, r, d] {
            x->ensure_grad();
            for (std::size_t i = 0; i < r; ++i) {
                const double in = (*inv_norm)[i];
                if (in == 0.0) continue;
                const double* y = out->values.data() + i * d;
                const double* dy = out->grad.data() + i * d;
                double dot = 0.0;
                for (std::size_t j = 0; j < d; ++j) dot += y[j] * dy[j];
                double* dx = x->grad.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) dx[j] += in * (dy[j] - y[j] * dot);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-8});
}

// `run(true)` must build a fresh tape over `params`, call backward, and
// return the loss value, leaving analytic gradients on the params.
// `run(false)` must evaluate the same deterministic function without grads.
// Returns the worst coordinate-wise relative error against central
// differences (f(x+eps) - f(x-eps)) / (2 eps).
inline double grad_check(const std::function<double(bool)>& run,
                         const std::vector<TensorPtr>& params, double eps = 1e-5) {
    for (const auto& p : params) p->zero_grad();
    run(true);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) {
        p->ensure_grad();
        analytic.push_back(p->grad);
    }
    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        for (std::size_t i = 0; i < p->size(); ++i) {
            const double orig = p->values[i];
            p->values[i] = orig + eps;
            const double fp = run(false);
            p->values[i] = orig - eps;
            const double fm = run(false);
            p->values[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            worst = std::max(worst, rel_err(analytic[pi][i], numeric));
        }
    }
    return worst;
}

}  // namespace temprox::autodiff
