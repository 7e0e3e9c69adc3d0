#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "o4a/rng.hpp"
#include "o4a/tensor.hpp"

namespace o4a::ag {

struct Node {
    Tensor val;
    Tensor grad;
    std::function<void()> back; // empty for leaves
};

using Var = Node*;

// Reverse-mode tape. Nodes are created in topological order by construction,
// so backward() is a reverse sweep over the creation sequence.
class Graph {
public:
    Var leaf(Tensor t) { return make(std::move(t), nullptr); }

    Var make(Tensor t, std::function<void()> back) {
        nodes_.emplace_back();
        Node& n = nodes_.back();
        n.val = std::move(t);
        n.grad = Tensor(n.val.rows, n.val.cols);
        n.back = std::move(back);
        return &n;
    }

    void backward(Var loss) {
        if (loss->val.rows != 1 || loss->val.cols != 1)
            throw std::runtime_error("backward: loss must be scalar");
        loss->grad.v[0] = 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
            if (it->back) it->back();
    }

    size_t size() const { return nodes_.size(); }

private:
    std::deque<Node> nodes_;
};

inline void check_finite(const Tensor& t, const char* what) {
    for (double x : t.v)
        if (!std::isfinite(x)) throw std::runtime_error(std::string("non-finite value in ") + what);
}

inline Var matmul(Graph& g, Var a, Var b) {
    Tensor out = o4a::matmul(a->val, b->val);
    Var o = g.make(std::move(out), nullptr);
    o->back = [a, b, o]() {
        // dA += dO * B^T ; dB += A^T * dO
        const Tensor& dO = o->grad;
        for (int i = 0; i < a->val.rows; ++i)
            for (int k = 0; k < a->val.cols; ++k) {
                double s = 0.0;
                for (int j = 0; j < b->val.cols; ++j) s += dO.at(i, j) * b->val.at(k, j);
                a->grad.at(i, k) += s;
            }
        for (int k = 0; k < b->val.rows; ++k)
            for (int j = 0; j < b->val.cols; ++j) {
                double s = 0.0;
                for (int i = 0; i < a->val.rows; ++i) s += a->val.at(i, k) * dO.at(i, j);
                b->grad.at(k, j) += s;
            }
    };
    return o;
}

inline Var transpose(Graph& g, Var a) {
    Var o = g.make(o4a::transpose(a->val), nullptr);
    o->back = [a, o]() {
        for (int i = 0; i < a->val.rows; ++i)
            for (int j = 0; j < a->val.cols; ++j) a->grad.at(i, j) += o->grad.at(j, i);
    };
    return o;
}

inline Var add(Graph& g, Var a, Var b) {
    if (!a->val.same_shape(b->val)) throw std::runtime_error("add: shape mismatch");
    Tensor out = a->val;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] += b->val.v[i];
    Var o = g.make(std::move(out), nullptr);
    o->back = [a, b, o]() {
        for (size_t i = 0; i < o->grad.size(); ++i) {
            a->grad.v[i] += o->grad.v[i];
            b->grad.v[i] += o->grad.v[i];
        }
    };
    return o;
}

inline Var mul(Graph& g, Var a, Var b) {
    if (!a->val.same_shape(b->val)) throw std::runtime_error("mul: shape mismatch");
    Tensor out = a->val;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] *= b->val.v[i];
    Var o = g.make(std::move(out), nullptr);
    o->back = [a, b, o]() {
        for (size_t i = 0; i < o->grad.size(); ++i) {
            a->grad.v[i] += o->grad.v[i] * b->val.v[i];
            b->grad.v[i] += o->grad.v[i] * a->val.v[i];
        }
    };
    return o;
}

inline Var scale(Graph& g, Var a, double c) {
    Tensor out = a->val;
    for (auto& x : out.v) x *= c;
    Var o = g.make(std::move(out), nullptr);
    o->back = [a, o, c]() {
        for (size_t i = 0; i < o->grad.size(); ++i) a->grad.v[i] += c * o->grad.v[i];
    };
    return o;
}

// Adds a constant (non-differentiable) tensor, e.g. an attention mask.
inline Var add_const(Graph& g, Var a, const Tensor& c) {
    if (!a->val.same_shape(c)) throw std::runtime_error("add_const: shape mismatch");
    Tensor out = a->val;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] += c.v[i];
    Var o = g.make(std::move(out), nullptr);
    o->back = [a, o]() {
        for (size_t i = 0; i < o->grad.size(); ++i) a->grad.v[i] += o->grad.v[i];
    };
    return o;
}

// Broadcasts a 1 x C bias over all rows of a.
inline Var add_rowvec(Graph& g, Var a, Var bias) {
    if (bias->val.rows != 1 || bias->val.cols != a->val.cols)
        throw std::runtime_error("add_rowvec: shape mismatch");
    Tensor out = a->val;
    for (int i = 0; i < out.rows; ++i)
        for (int j = 0; j < out.cols; ++j) out.at(i, j) += bias->val.at(0, j);
    Var o = g.make(std::move(out), nullptr);
    o->back = [a, bias, o]() {
        for (int i = 0; i < o->grad.rows; ++i)
            for (int j = 0; j < o->grad.cols; ++j) {
                a->grad.at(i, j) += o->grad.at(i, j);
                bias->grad.at(0, j) += o->grad.at(i, j);
            }
    };
    return o;
}

// Elementwise mean of same-shape vars.
inline Var mean_vars(Graph& g, std::vector<Var> xs) {
    if (xs.empty()) throw std::runtime_error("mean_vars: empty");
    Tensor out(xs[0]->val.rows, xs[0]->val.cols);
    for (Var x : xs) {
        if (!x->val.same_shape(out)) throw std::runtime_error("mean_vars: shape mismatch");
        for (size_t i = 0; i < out.size(); ++i) out.v[i] += x->val.v[i];
    }
    double inv = 1.0 / static_cast<double>(xs.size());
    for (auto& x : out.v) x *= inv;
    Var o = g.make(std::move(out), nullptr);
    o->back = [xs, o, inv]() {
        for (Var x : xs)
            for (size_t i = 0; i < o->grad.size(); ++i) x->grad.v[i] += inv * o->grad.v[i];
    };
    return o;
}

inline Var concat_cols(Graph& g, std::vector<Var> xs) {
    int rows = xs.at(0)->val.rows, cols = 0;
    for (Var x : xs) {
        if (x->val.rows != rows) throw std::runtime_error("concat_cols: row mismatch");
        cols += x->val.cols;
    }
    Tensor out(rows, cols);
    int off = 0;
    for (Var x : xs) {
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < x->val.cols; ++j) out.at(i, off + j) = x->val.at(i, j);
        off += x->val.cols;
    }
    Var o = g.make(std::move(out), nullptr);
    o->back = [xs, o]() {
        int off = 0;
        for (Var x : xs) {
            for (int i = 0; i < x->val.rows; ++i)
                for (int j = 0; j < x->val.cols; ++j) x->grad.at(i, j) += o->grad.at(i, off + j);
            off += x->val.cols;
        }
    };
    return o;
}

inline Var concat_rows(Graph& g, std::vector<Var> xs) {
    int cols = xs.at(0)->val.cols, rows = 0;
    for (Var x : xs) {
        if (x->val.cols != cols) throw std::runtime_error("concat_rows: col mismatch");
        rows += x->val.rows;
    }
    Tensor out(rows, cols);
    int off = 0;
    for (Var x : xs) {
        for (int i = 0; i < x->val.rows; ++i)
            for (int j = 0; j < cols; ++j) out.at(off + i, j) = x->val.at(i, j);
        off += x->val.rows;
    }
    Var o = g.make(std::move(out), nullptr);
    o->back = [xs, o]() {
        int off = 0;
        for (Var x : xs) {
            for (int i = 0; i < x->val.rows; ++i)
                for (int j = 0; j < x->val.cols; ++j) x->grad.at(i, j) += o->grad.at(off + i, j);
            off += x->val.rows;
        }
    };
    return o;
}

inline Var slice_cols(Graph& g, Var a, int start, int len) {
    if (start < 0 || start + len > a->val.cols) throw std::runtime_error("slice_cols: bounds");
    Tensor out(a->val.rows, len);
    for (int i = 0; i < out.rows; ++i)
        for (int j = 0; j < len; ++j) out.at(i, j) = a->val.at(i, start + j);
    Var o = g.make(std::move(out), nullptr);
    o->back = [a, o, start, len]() {
        for (int i = 0; i < o->grad.rows; ++i)
            for (int j = 0; j < len; ++j) a->grad.at(i, start + j) += o->grad.at(i, j);
    };
    return o;
}

inline Var slice_rows(Graph& g, Var a, int start, int len) {
    if (start < 0 || start + len > a->val.rows) throw std::runtime_error("slice_rows: bounds");
    Tensor out(len, a->val.cols);
    for (int i = 0; i < len; ++i)
        for (int j = 0; j < out.cols; ++j) out.at(i, j) = a->val.at(start + i, j);
    Var o = g.make(std::move(out), nullptr);
    o->back = [a, o, start, len]() {
        for (int i = 0; i < len; ++i)
            for (int j = 0; j < o->grad.cols; ++j) a->grad.at(start + i, j) += o->grad.at(i, j);
    };
    return o;
}

// Rows of `table` at the given indices; backward scatter-adds.
inline Var gather_rows(Graph& g, Var table, std::vector<int> idx) {
    Tensor out(static_cast<int>(idx.size()), table->val.cols);
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= table->val.rows)
            throw std::runtime_error("gather_rows: index out of range");
        for (int j = 0; j < out.cols; ++j)
            out.at(static_cast<int>(i), j) = table->val.at(idx[i], j);
    }
    Var o = g.make(std::move(out), nullptr);
    o->back = [table, o, idx = std::move(idx)]() {
        for (size_t i = 0; i < idx.size(); ++i)
            for (int j = 0; j < o->grad.cols; ++j)
                table->grad.at(idx[i], j) += o->grad.at(static_cast<int>(i), j);
    };
    return o;
}

inline Var relu(Graph& g, Var a) {
    Tensor out = a->val;
    for (auto& x : out.v) x = x > 0.0 ? x : 0.0;
    Var o = g.make(std::move(out), nullptr);
    o->back = [a, o]() {
        for (size_t i = 0; i < o->grad.size(); ++i)
            if (a->val.v[i] > 0.0) a->grad.v[i] += o->grad.v[i];
    };
    return o;
}

// Exact GeLU: 0.5 x (1 + erf(x / sqrt(2))).
inline Var gelu(Graph& g, Var a) {
    Tensor out = a->val;
    for (auto& x : out.v) x = 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
    Var o = g.make(std::move(out), nullptr);
    o->back = [a, o]() {
        for (size_t i = 0; i < o->grad.size(); ++i) {
            double x = a->val.v[i];
            double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
            double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
            a->grad.v[i] += o->grad.v[i] * (cdf + x * pdf);
        }
    };
    return o;
}

inline Var sigmoid(Graph& g, Var a) {
    Tensor out = a->val;
    for (auto& x : out.v) x = 1.0 / (1.0 + std::exp(-x));
    Var o = g.make(std::move(out), nullptr);
    o->back = [a, o]() {
        for (size_t i = 0; i < o->grad.size(); ++i) {
            double s = o->val.v[i];
            a->grad.v[i] += o->grad.v[i] * s * (1.0 - s);
        }
    };
    return o;
}

// Row-wise layer normalization with learned gain/bias (1 x C each).
inline Var layernorm(Graph& g, Var x, Var gamma, Var beta, double eps = 1e-5) {
    int R = x->val.rows, C = x->val.cols;
    if (gamma->val.cols != C || beta->val.cols != C)
        throw std::runtime_error("layernorm: param shape");
    Tensor out(R, C);
    auto mu = std::make_shared<std::vector<double>>(R);
    auto istd = std::make_shared<std::vector<double>>(R);
    for (int i = 0; i < R; ++i) {
        double m = 0.0;
        for (int j = 0; j < C; ++j) m += x->val.at(i, j);
        m /= C;
        double var = 0.0;
        for (int j = 0; j < C; ++j) {
            double d = x->val.at(i, j) - m;
            var += d * d;
        }
        var /= C;
        double is = 1.0 / std::sqrt(var + eps);
        (*mu)[i] = m;
        (*istd)[i] = is;
        for (int j = 0; j < C; ++j)
            out.at(i, j) = (x->val.at(i, j) - m) * is * gamma->val.at(0, j) + beta->val.at(0, j);
    }
    Var o = g.make(std::move(out), nullptr);
    o->back = [x, gamma, beta, o, mu, istd]() {
        int R = x->val.rows, C = x->val.cols;
        for (int i = 0; i < R; ++i) {
            double m = (*mu)[i], is = (*istd)[i];
            double sum_dy_g = 0.0, sum_dy_g_xhat = 0.0;
            for (int j = 0; j < C; ++j) {
                double xhat = (x->val.at(i, j) - m) * is;
                double dyg = o->grad.at(i, j) * gamma->val.at(0, j);
                sum_dy_g += dyg;
                sum_dy_g_xhat += dyg * xhat;
                gamma->grad.at(0, j) += o->grad.at(i, j) * xhat;
                beta->grad.at(0, j) += o->grad.at(i, j);
            }
            for (int j = 0; j < C; ++j) {
                double xhat = (x->val.at(i, j) - m) * is;
                double dyg = o->grad.at(i, j) * gamma->val.at(0, j);
                x->grad.at(i, j) +=
                    is * (dyg - sum_dy_g / C - xhat * sum_dy_g_xhat / C);
            }
        }
    };
    return o;
}

inline Var softmax_rows(Graph& g, Var a) {
    Tensor out = a->val;
    for (int i = 0; i < out.rows; ++i) {
        double mx = -1e300;
        for (int j = 0; j < out.cols; ++j) mx = std::max(mx, out.at(i, j));
        double sum = 0.0;
        for (int j = 0; j < out.cols; ++j) {
            out.at(i, j) = std::exp(out.at(i, j) - mx);
            sum += out.at(i, j);
        }
        for (int j = 0; j < out.cols; ++j) out.at(i, j) /= sum;
    }
    Var o = g.make(std::move(out), nullptr);
    o->back = [a, o]() {
        for (int i = 0; i < o->val.rows; ++i) {
            double dot = 0.0;
            for (int j = 0; j < o->val.cols; ++j) dot += o->grad.at(i, j) * o->val.at(i, j);
            for (int j = 0; j < o->val.cols; ++j)
                a->grad.at(i, j) += o->val.at(i, j) * (o->grad.at(i, j) - dot);
        }
    };
    return o;
}

// Inverted dropout; identity when rate == 0.
inline Var dropout(Graph& g, Var a, double rate, Rng& rng) {
    if (rate <= 0.0) return a;
    auto mask = std::make_shared<std::vector<double>>(a->val.size());
    double keep = 1.0 - rate;
    for (auto& m : *mask) m = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    Tensor out = a->val;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] *= (*mask)[i];
    Var o = g.make(std::move(out), nullptr);
    o->back = [a, o, mask]() {
        for (size_t i = 0; i < o->grad.size(); ++i) a->grad.v[i] += o->grad.v[i] * (*mask)[i];
    };
    return o;
}

// Mean over a subset of rows, producing 1 x C.
inline Var mean_rows(Graph& g, Var a, std::vector<int> rows) {
    if (rows.empty()) throw std::runtime_error("mean_rows: empty selection");
    Tensor out(1, a->val.cols);
    for (int r : rows)
        for (int j = 0; j < a->val.cols; ++j) out.at(0, j) += a->val.at(r, j);
    double inv = 1.0 / static_cast<double>(rows.size());
    for (auto& x : out.v) x *= inv;
    Var o = g.make(std::move(out), nullptr);
    o->back = [a, o, rows = std::move(rows), inv]() {
        for (int r : rows)
            for (int j = 0; j < a->val.cols; ++j) a->grad.at(r, j) += inv * o->grad.at(0, j);
    };
    return o;
}

// Row-wise dot product of same-shape matrices -> N x 1.
inline Var rowwise_dot(Graph& g, Var a, Var b) {
    if (!a->val.same_shape(b->val)) throw std::runtime_error("rowwise_dot: shape mismatch");
    Tensor out(a->val.rows, 1);
    for (int i = 0; i < a->val.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < a->val.cols; ++j) s += a->val.at(i, j) * b->val.at(i, j);
        out.at(i, 0) = s;
    }
    Var o = g.make(std::move(out), nullptr);
    o->back = [a, b, o]() {
        for (int i = 0; i < a->val.rows; ++i) {
            double d = o->grad.at(i, 0);
            for (int j = 0; j < a->val.cols; ++j) {
                a->grad.at(i, j) += d * b->val.at(i, j);
                b->grad.at(i, j) += d * a->val.at(i, j);
            }
        }
    };
    return o;
}

// Mean cross-entropy of the given (row, label) pairs over a logits matrix.
inline Var cross_entropy_rows(Graph& g, Var logits,
                              std::vector<std::pair<int, int>> targets) {
    if (targets.empty()) throw std::runtime_error("cross_entropy_rows: no targets");
    int C = logits->val.cols;
    auto probs = std::make_shared<Tensor>(static_cast<int>(targets.size()), C);
    double loss = 0.0;
    for (size_t t = 0; t < targets.size(); ++t) {
        auto [r, label] = targets[t];
        if (label < 0 || label >= C) throw std::runtime_error("cross_entropy_rows: bad label");
        double mx = -1e300;
        for (int j = 0; j < C; ++j) mx = std::max(mx, logits->val.at(r, j));
        double sum = 0.0;
        for (int j = 0; j < C; ++j) sum += std::exp(logits->val.at(r, j) - mx);
        double logZ = mx + std::log(sum);
        loss += logZ - logits->val.at(r, label);
        for (int j = 0; j < C; ++j)
            probs->at(static_cast<int>(t), j) = std::exp(logits->val.at(r, j) - logZ);
    }
    double inv = 1.0 / static_cast<double>(targets.size());
    Tensor out(1, 1);
    out.v[0] = loss * inv;
    Var o = g.make(std::move(out), nullptr);
    o->back = [logits, o, probs, targets = std::move(targets), inv]() {
        double d = o->grad.v[0] * inv;
        for (size_t t = 0; t < targets.size(); ++t) {
            auto [r, label] = targets[t];
            for (int j = 0; j < logits->val.cols; ++j)
                logits->grad.at(r, j) += d * probs->at(static_cast<int>(t), j);
            logits->grad.at(r, label) -= d;
        }
    };
    return o;
}

// Mean binary cross-entropy with logits; logits N x 1, labels in {0,1}.
inline Var bce_with_logits(Graph& g, Var logits, std::vector<double> labels) {
    int N = logits->val.rows;
    if (static_cast<int>(labels.size()) != N || logits->val.cols != 1)
        throw std::runtime_error("bce_with_logits: shape mismatch");
    double loss = 0.0;
    for (int i = 0; i < N; ++i) {
        double z = logits->val.at(i, 0), y = labels[i];
        // log(1 + e^-|z|) + max(z,0) - y z, numerically stable
        loss += std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - y * z;
    }
    Tensor out(1, 1);
    out.v[0] = loss / N;
    Var o = g.make(std::move(out), nullptr);
    o->back = [logits, o, labels = std::move(labels), N]() {
        double d = o->grad.v[0] / N;
        for (int i = 0; i < N; ++i) {
            double s = 1.0 / (1.0 + std::exp(-logits->val.at(i, 0)));
            logits->grad.at(i, 0) += d * (s - labels[i]);
        }
    };
    return o;
}

} // namespace o4a::ag
