#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "thinkgen/array.hpp"
#include "thinkgen/error.hpp"

namespace thinkgen {

using NodeId = int32_t;

namespace detail {

// C(m,n) (+)= A(m,k) * B(k,n)
inline void mm_nn(real* c, const real* a, const real* b, int64_t m, int64_t k, int64_t n, bool acc) {
    if (!acc)
        for (int64_t i = 0; i < m * n; ++i) c[i] = real(0);
    for (int64_t i = 0; i < m; ++i) {
        const real* arow = a + i * k;
        real* crow = c + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const real av = arow[p];
            const real* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C(m,n) (+)= A(m,k) * B(n,k)^T
inline void mm_nt(real* c, const real* a, const real* b, int64_t m, int64_t k, int64_t n, bool acc) {
    for (int64_t i = 0; i < m; ++i) {
        const real* arow = a + i * k;
        real* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const real* brow = b + j * k;
            real s = acc ? crow[j] : real(0);
            for (int64_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] = s;
        }
    }
}

// C(k,n) (+)= A(m,k)^T * B(m,n)
inline void mm_tn(real* c, const real* a, const real* b, int64_t m, int64_t k, int64_t n, bool acc) {
    if (!acc)
        for (int64_t i = 0; i < k * n; ++i) c[i] = real(0);
    for (int64_t i = 0; i < m; ++i) {
        const real* arow = a + i * k;
        const real* brow = b + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const real av = arow[p];
            real* crow = c + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

inline real gelu_val(real x) {
    return real(0.5) * x * (real(1) + std::erf(x * real(0.7071067811865476)));
}

inline real gelu_grad(real x) {
    const real cdf = real(0.5) * (real(1) + std::erf(x * real(0.7071067811865476)));
    const real pdf = std::exp(real(-0.5) * x * x) * real(0.3989422804014327);
    return cdf + x * pdf;
}

} // namespace detail

// Reverse-mode tape over dense arrays. Single-writer; create one per forward
// pass. A second backward without reset() is rejected.
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }
    void set_grad_enabled(bool on) { grad_enabled_ = on; }

    size_t size() const { return nodes_.size(); }

    void reset() {
        nodes_.clear();
        grads_.clear();
        backward_done_ = false;
    }

    NodeId leaf(Array value, bool requires_grad = false) {
        value.validate("leaf");
        return push(std::move(value), requires_grad && grad_enabled_, nullptr);
    }

    NodeId constant(Array value) { return leaf(std::move(value), false); }
    NodeId constant(real v) { return leaf(Array::scalar(v), false); }

    const Array& val(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }

    bool requires_grad(NodeId id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

    std::optional<Array> grad(NodeId id) const {
        const auto& g = grads_[static_cast<size_t>(id)];
        if (g.data.empty()) return std::nullopt;
        return g;
    }

    // ---- ops ----------------------------------------------------------------

    NodeId add(NodeId a, NodeId b) { return add_sub(a, b, real(1), "add"); }
    NodeId sub(NodeId a, NodeId b) { return add_sub(a, b, real(-1), "sub"); }

    // Elementwise product; `b` may be a scalar.
    NodeId mul(NodeId a, NodeId b) {
        const Array& av = val(a);
        const Array& bv = val(b);
        Array out = av;
        if (bv.is_scalar()) {
            const real s = bv[0];
            for (real& x : out.data) x *= s;
        } else if (av.same_shape(bv)) {
            for (int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
        } else {
            throw ShapeError("mul: " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
        }
        return push_op(std::move(out), {a, b}, [a, b](Tape& t, NodeId y) {
            const Array& g = t.gval(y);
            const Array& av = t.val(a);
            const Array& bv = t.val(b);
            if (t.requires_grad(a)) {
                Array& ga = t.gacc(a);
                if (bv.is_scalar())
                    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[0];
                else
                    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
            }
            if (t.requires_grad(b)) {
                Array& gb = t.gacc(b);
                if (bv.is_scalar())
                    for (int64_t i = 0; i < g.numel(); ++i) gb[0] += g[i] * av[i];
                else
                    for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
            }
        });
    }

    // y = c * x + d
    NodeId affine(NodeId a, real c, real d = real(0)) {
        Array out = val(a);
        for (real& x : out.data) x = c * x + d;
        return push_op(std::move(out), {a}, [a, c](Tape& t, NodeId y) {
            const Array& g = t.gval(y);
            Array& ga = t.gacc(a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += c * g[i];
        });
    }

    NodeId scale(NodeId a, real c) { return affine(a, c); }
    NodeId neg(NodeId a) { return affine(a, real(-1)); }

    NodeId matmul(NodeId a, NodeId b) {
        const Array& av = val(a);
        const Array& bv = val(b);
        if (av.ndim() != 2 || bv.ndim() != 2 || av.shape[1] != bv.shape[0])
            throw ShapeError("matmul: " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
        const int64_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
        Array out = Array::zeros({m, n});
        detail::mm_nn(out.data.data(), av.data.data(), bv.data.data(), m, k, n, false);
        check(out, "matmul");
        return push_op(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, NodeId y) {
            const Array& g = t.gval(y);
            if (t.requires_grad(a)) // dA += G * B^T
                detail::mm_nt(t.gacc(a).data.data(), g.data.data(), t.val(b).data.data(), m, n, k, true);
            if (t.requires_grad(b)) // dB += A^T * G
                detail::mm_tn(t.gacc(b).data.data(), t.val(a).data.data(), g.data.data(), m, k, n, true);
        });
    }

    // y = A * B^T  with A (m,k), B (n,k)
    NodeId matmul_nt(NodeId a, NodeId b) {
        const Array& av = val(a);
        const Array& bv = val(b);
        if (av.ndim() != 2 || bv.ndim() != 2 || av.shape[1] != bv.shape[1])
            throw ShapeError("matmul_nt: " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
        const int64_t m = av.shape[0], k = av.shape[1], n = bv.shape[0];
        Array out = Array::zeros({m, n});
        detail::mm_nt(out.data.data(), av.data.data(), bv.data.data(), m, k, n, false);
        check(out, "matmul_nt");
        return push_op(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, NodeId y) {
            const Array& g = t.gval(y);
            if (t.requires_grad(a)) // dA += G * B
                detail::mm_nn(t.gacc(a).data.data(), g.data.data(), t.val(b).data.data(), m, n, k, true);
            if (t.requires_grad(b)) // dB += G^T * A
                detail::mm_tn(t.gacc(b).data.data(), g.data.data(), t.val(a).data.data(), m, n, k, true);
        });
    }

    NodeId sum(NodeId a) { return reduce(a, false); }
    NodeId mean(NodeId a) { return reduce(a, true); }

    // (r,c) -> (r,1)
    NodeId row_sums(NodeId a) {
        const Array& av = val(a);
        if (av.ndim() != 2) throw ShapeError("row_sums: need 2-d, got " + shape_str(av.shape));
        const int64_t r = av.shape[0], c = av.shape[1];
        Array out = Array::zeros({r, 1});
        for (int64_t i = 0; i < r; ++i) {
            real s = 0;
            for (int64_t j = 0; j < c; ++j) s += av.at(i, j);
            out[i] = s;
        }
        return push_op(std::move(out), {a}, [a, r, c](Tape& t, NodeId y) {
            const Array& g = t.gval(y);
            Array& ga = t.gacc(a);
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j) ga.at(i, j) += g[i];
        });
    }

    NodeId relu(NodeId a) {
        Array out = val(a);
        for (real& x : out.data) x = x > real(0) ? x : real(0);
        return push_op(std::move(out), {a}, [a](Tape& t, NodeId y) {
            const Array& g = t.gval(y);
            const Array& av = t.val(a);
            Array& ga = t.gacc(a);
            for (int64_t i = 0; i < g.numel(); ++i)
                if (av[i] > real(0)) ga[i] += g[i];
        });
    }

    NodeId gelu(NodeId a) {
        Array out = val(a);
        for (real& x : out.data) x = detail::gelu_val(x);
        return push_op(std::move(out), {a}, [a](Tape& t, NodeId y) {
            const Array& g = t.gval(y);
            const Array& av = t.val(a);
            Array& ga = t.gacc(a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * detail::gelu_grad(av[i]);
        });
    }

    NodeId log(NodeId a) {
        Array out = val(a);
        for (real& x : out.data) x = std::log(x);
        check(out, "log");
        return push_op(std::move(out), {a}, [a](Tape& t, NodeId y) {
            const Array& g = t.gval(y);
            const Array& av = t.val(a);
            Array& ga = t.gacc(a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / av[i];
        });
    }

    NodeId exp(NodeId a) {
        Array out = val(a);
        for (real& x : out.data) x = std::exp(x);
        check(out, "exp");
        return push_op(std::move(out), {a}, [a](Tape& t, NodeId y) {
            const Array& g = t.gval(y);
            const Array& yv = t.val(y);
            Array& ga = t.gacc(a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * yv[i];
        });
    }

    // Row-wise softmax with max-subtraction.
    NodeId softmax_rows(NodeId a) {
        const Array& av = val(a);
        if (av.ndim() != 2) throw ShapeError("softmax_rows: need 2-d, got " + shape_str(av.shape));
        Array out = av;
        const int64_t r = av.shape[0], c = av.shape[1];
        for (int64_t i = 0; i < r; ++i) {
            real mx = out.at(i, 0);
            for (int64_t j = 1; j < c; ++j) mx = std::max(mx, out.at(i, j));
            real s = 0;
            for (int64_t j = 0; j < c; ++j) {
                real e = std::exp(out.at(i, j) - mx);
                out.at(i, j) = e;
                s += e;
            }
            for (int64_t j = 0; j < c; ++j) out.at(i, j) /= s;
        }
        return push_op(std::move(out), {a}, [a, r, c](Tape& t, NodeId y) {
            const Array& g = t.gval(y);
            const Array& yv = t.val(y);
            Array& ga = t.gacc(a);
            for (int64_t i = 0; i < r; ++i) {
                real dot = 0;
                for (int64_t j = 0; j < c; ++j) dot += g.at(i, j) * yv.at(i, j);
                for (int64_t j = 0; j < c; ++j) ga.at(i, j) += yv.at(i, j) * (g.at(i, j) - dot);
            }
        });
    }

    // Row-wise log-softmax with max-subtraction.
    NodeId log_softmax_rows(NodeId a) {
        const Array& av = val(a);
        if (av.ndim() != 2) throw ShapeError("log_softmax_rows: need 2-d, got " + shape_str(av.shape));
        Array out = av;
        const int64_t r = av.shape[0], c = av.shape[1];
        for (int64_t i = 0; i < r; ++i) {
            real mx = out.at(i, 0);
            for (int64_t j = 1; j < c; ++j) mx = std::max(mx, out.at(i, j));
            real s = 0;
            for (int64_t j = 0; j < c; ++j) s += std::exp(out.at(i, j) - mx);
            const real lse = mx + std::log(s);
            for (int64_t j = 0; j < c; ++j) out.at(i, j) -= lse;
        }
        return push_op(std::move(out), {a}, [a, r, c](Tape& t, NodeId y) {
            const Array& g = t.gval(y);
            const Array& yv = t.val(y);
            Array& ga = t.gacc(a);
            for (int64_t i = 0; i < r; ++i) {
                real gsum = 0;
                for (int64_t j = 0; j < c; ++j) gsum += g.at(i, j);
                for (int64_t j = 0; j < c; ++j) ga.at(i, j) += g.at(i, j) - std::exp(yv.at(i, j)) * gsum;
            }
        });
    }

    // out[i,:] = table[ids[i],:]
    NodeId gather_rows(NodeId table, std::vector<int> ids) {
        const Array& tv = val(table);
        if (tv.ndim() != 2) throw ShapeError("gather_rows: need 2-d table, got " + shape_str(tv.shape));
        const int64_t c = tv.shape[1];
        Array out = Array::zeros({static_cast<int64_t>(ids.size()), c});
        for (size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || ids[i] >= tv.shape[0])
                throw ShapeError("gather_rows: id " + std::to_string(ids[i]) + " out of " + std::to_string(tv.shape[0]));
            for (int64_t j = 0; j < c; ++j) out.at(static_cast<int64_t>(i), j) = tv.at(ids[i], j);
        }
        return push_op(std::move(out), {table}, [table, ids = std::move(ids), c](Tape& t, NodeId y) {
            const Array& g = t.gval(y);
            Array& gt = t.gacc(table);
            for (size_t i = 0; i < ids.size(); ++i)
                for (int64_t j = 0; j < c; ++j) gt.at(ids[i], j) += g.at(static_cast<int64_t>(i), j);
        });
    }

    // out[i,0] = mat[i, ids[i]]
    NodeId select_per_row(NodeId mat, std::vector<int> ids) {
        const Array& mv = val(mat);
        if (mv.ndim() != 2 || static_cast<int64_t>(ids.size()) != mv.shape[0])
            throw ShapeError("select_per_row: " + shape_str(mv.shape) + " with " + std::to_string(ids.size()) + " ids");
        Array out = Array::zeros({mv.shape[0], 1});
        for (size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || ids[i] >= mv.shape[1]) throw ShapeError("select_per_row: id out of range");
            out[static_cast<int64_t>(i)] = mv.at(static_cast<int64_t>(i), ids[i]);
        }
        return push_op(std::move(out), {mat}, [mat, ids = std::move(ids)](Tape& t, NodeId y) {
            const Array& g = t.gval(y);
            Array& gm = t.gacc(mat);
            for (size_t i = 0; i < ids.size(); ++i) gm.at(static_cast<int64_t>(i), ids[i]) += g[static_cast<int64_t>(i)];
        });
    }

    NodeId concat_rows(const std::vector<NodeId>& parts) {
        if (parts.empty()) throw ShapeError("concat_rows: empty");
        const int64_t c = val(parts[0]).cols();
        int64_t r = 0;
        for (NodeId p : parts) {
            const Array& pv = val(p);
            if (pv.ndim() != 2 || pv.shape[1] != c)
                throw ShapeError("concat_rows: inconsistent cols " + shape_str(pv.shape));
            r += pv.shape[0];
        }
        Array out = Array::zeros({r, c});
        int64_t row = 0;
        for (NodeId p : parts) {
            const Array& pv = val(p);
            std::copy(pv.data.begin(), pv.data.end(), out.data.begin() + row * c);
            row += pv.shape[0];
        }
        return push_op(std::move(out), parts, [parts, c](Tape& t, NodeId y) {
            const Array& g = t.gval(y);
            int64_t row = 0;
            for (NodeId p : parts) {
                const int64_t pr = t.val(p).shape[0];
                if (t.requires_grad(p)) {
                    Array& gp = t.gacc(p);
                    for (int64_t i = 0; i < pr * c; ++i) gp[i] += g[row * c + i];
                }
                row += pr;
            }
        });
    }

    // 2-d block [r0,r1) x [c0,c1)
    NodeId slice(NodeId a, int64_t r0, int64_t r1, int64_t c0, int64_t c1) {
        const Array& av = val(a);
        if (av.ndim() != 2) throw ShapeError("slice: need 2-d, got " + shape_str(av.shape));
        if (r0 < 0 || r1 > av.shape[0] || c0 < 0 || c1 > av.shape[1] || r0 >= r1 || c0 >= c1)
            throw ShapeError("slice: bad range on " + shape_str(av.shape));
        Array out = Array::zeros({r1 - r0, c1 - c0});
        for (int64_t i = r0; i < r1; ++i)
            for (int64_t j = c0; j < c1; ++j) out.at(i - r0, j - c0) = av.at(i, j);
        return push_op(std::move(out), {a}, [a, r0, r1, c0, c1](Tape& t, NodeId y) {
            const Array& g = t.gval(y);
            Array& ga = t.gacc(a);
            for (int64_t i = r0; i < r1; ++i)
                for (int64_t j = c0; j < c1; ++j) ga.at(i, j) += g.at(i - r0, j - c0);
        });
    }

    // Row-wise layer norm; gain/bias are (1,d).
    NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, real eps = real(1e-5)) {
        const Array& xv = val(x);
        const Array& gv = val(gain);
        const Array& bv = val(bias);
        if (xv.ndim() != 2 || gv.cols() != xv.shape[1] || bv.cols() != xv.shape[1] || gv.rows() != 1 || bv.rows() != 1)
            throw ShapeError("layer_norm: " + shape_str(xv.shape) + " gain " + shape_str(gv.shape));
        const int64_t r = xv.shape[0], d = xv.shape[1];
        Array out = Array::zeros({r, d});
        Array xhat = Array::zeros({r, d});
        Array inv_std = Array::zeros({r, 1});
        for (int64_t i = 0; i < r; ++i) {
            real mu = 0;
            for (int64_t j = 0; j < d; ++j) mu += xv.at(i, j);
            mu /= static_cast<real>(d);
            real var = 0;
            for (int64_t j = 0; j < d; ++j) {
                const real dv = xv.at(i, j) - mu;
                var += dv * dv;
            }
            var /= static_cast<real>(d);
            const real is = real(1) / std::sqrt(var + eps);
            inv_std[i] = is;
            for (int64_t j = 0; j < d; ++j) {
                const real h = (xv.at(i, j) - mu) * is;
                xhat.at(i, j) = h;
                out.at(i, j) = h * gv[j] + bv[j];
            }
        }
        NodeId y = push_op(std::move(out), {x, gain, bias},
                           [x, gain, bias, r, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, NodeId yid) {
            const Array& g = t.gval(yid);
            const Array& gv = t.val(gain);
            if (t.requires_grad(gain)) {
                Array& gg = t.gacc(gain);
                for (int64_t i = 0; i < r; ++i)
                    for (int64_t j = 0; j < d; ++j) gg[j] += g.at(i, j) * xhat.at(i, j);
            }
            if (t.requires_grad(bias)) {
                Array& gb = t.gacc(bias);
                for (int64_t i = 0; i < r; ++i)
                    for (int64_t j = 0; j < d; ++j) gb[j] += g.at(i, j);
            }
            if (t.requires_grad(x)) {
                Array& gx = t.gacc(x);
                for (int64_t i = 0; i < r; ++i) {
                    real m1 = 0, m2 = 0;
                    for (int64_t j = 0; j < d; ++j) {
                        const real dh = g.at(i, j) * gv[j];
                        m1 += dh;
                        m2 += dh * xhat.at(i, j);
                    }
                    m1 /= static_cast<real>(d);
                    m2 /= static_cast<real>(d);
                    for (int64_t j = 0; j < d; ++j) {
                        const real dh = g.at(i, j) * gv[j];
                        gx.at(i, j) += inv_std[i] * (dh - m1 - xhat.at(i, j) * m2);
                    }
                }
            }
        });
        return y;
    }

    // mean((a-b)^2) over all elements
    NodeId mse(NodeId a, NodeId b) {
        const Array& av = val(a);
        const Array& bv = val(b);
        if (!av.same_shape(bv)) throw ShapeError("mse: " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
        real s = 0;
        for (int64_t i = 0; i < av.numel(); ++i) {
            const real dv = av[i] - bv[i];
            s += dv * dv;
        }
        const int64_t n = av.numel();
        Array out = Array::scalar(s / static_cast<real>(n));
        return push_op(std::move(out), {a, b}, [a, b, n](Tape& t, NodeId y) {
            const real g = t.gval(y)[0];
            const Array& av = t.val(a);
            const Array& bv = t.val(b);
            const real k = real(2) * g / static_cast<real>(n);
            if (t.requires_grad(a)) {
                Array& ga = t.gacc(a);
                for (int64_t i = 0; i < av.numel(); ++i) ga[i] += k * (av[i] - bv[i]);
            }
            if (t.requires_grad(b)) {
                Array& gb = t.gacc(b);
                for (int64_t i = 0; i < av.numel(); ++i) gb[i] -= k * (av[i] - bv[i]);
            }
        });
    }

    // Same data, new shape.
    NodeId reshape(NodeId a, Shape shape) {
        Array out = val(a).reshaped(std::move(shape));
        return push_op(std::move(out), {a}, [a](Tape& t, NodeId y) {
            const Array& g = t.gval(y);
            Array& ga = t.gacc(a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        });
    }

    // Gradient passes only strictly inside (lo, hi).
    NodeId clamp(NodeId a, real lo, real hi) {
        Array out = val(a);
        for (real& x : out.data) x = x < lo ? lo : (x > hi ? hi : x);
        return push_op(std::move(out), {a}, [a, lo, hi](Tape& t, NodeId y) {
            const Array& g = t.gval(y);
            const Array& av = t.val(a);
            Array& ga = t.gacc(a);
            for (int64_t i = 0; i < g.numel(); ++i)
                if (av[i] > lo && av[i] < hi) ga[i] += g[i];
        });
    }

    // Elementwise min; ties route the gradient to `a`.
    NodeId min_elem(NodeId a, NodeId b) {
        const Array& av = val(a);
        const Array& bv = val(b);
        if (!av.same_shape(bv)) throw ShapeError("min_elem: " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
        Array out = av;
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::min(av[i], bv[i]);
        return push_op(std::move(out), {a, b}, [a, b](Tape& t, NodeId y) {
            const Array& g = t.gval(y);
            const Array& av = t.val(a);
            const Array& bv = t.val(b);
            const bool ga_on = t.requires_grad(a), gb_on = t.requires_grad(b);
            for (int64_t i = 0; i < g.numel(); ++i) {
                if (av[i] <= bv[i]) {
                    if (ga_on) t.gacc(a)[i] += g[i];
                } else if (gb_on) {
                    t.gacc(b)[i] += g[i];
                }
            }
        });
    }

    // ---- backward -----------------------------------------------------------

    void backward(NodeId root) {
        if (!val(root).is_scalar())
            throw ContractError("backward: root must be scalar, got " + shape_str(val(root).shape));
        if (backward_done_) throw ContractError("backward: tape already differentiated; reset() first");
        backward_done_ = true;
        if (!nodes_[static_cast<size_t>(root)].requires_grad) return;
        gacc(root)[0] = real(1);
        for (NodeId id = root; id >= 0; --id) {
            auto& n = nodes_[static_cast<size_t>(id)];
            if (n.backward && !grads_[static_cast<size_t>(id)].data.empty()) n.backward(*this, id);
        }
    }

    // accumulation target, allocated on first touch
    Array& gacc(NodeId id) {
        Array& g = grads_[static_cast<size_t>(id)];
        if (g.data.empty()) g = Array::zeros(nodes_[static_cast<size_t>(id)].value.shape);
        return g;
    }

    const Array& gval(NodeId id) const { return grads_[static_cast<size_t>(id)]; }

private:
    struct TapeNode {
        Array value;
        bool requires_grad = false;
        std::function<void(Tape&, NodeId)> backward;
    };

    static void check(const Array& a, const char* where) {
        if (numerics_checking()) a.validate(where);
    }

    NodeId push(Array value, bool requires_grad, std::function<void(Tape&, NodeId)> bw) {
        nodes_.push_back(TapeNode{std::move(value), requires_grad, std::move(bw)});
        grads_.emplace_back();
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    template <typename F>
    NodeId push_op(Array value, const std::vector<NodeId>& parents, F&& bw) {
        check(value, "op");
        bool rg = false;
        if (grad_enabled_)
            for (NodeId p : parents) rg = rg || nodes_[static_cast<size_t>(p)].requires_grad;
        if (!rg) return push(std::move(value), false, nullptr);
        return push(std::move(value), true, std::forward<F>(bw));
    }

    NodeId add_sub(NodeId a, NodeId b, real sign, const char* name) {
        const Array& av = val(a);
        const Array& bv = val(b);
        Array out = av;
        enum class Mode { Same, Scalar, Row } mode;
        if (av.same_shape(bv)) {
            mode = Mode::Same;
            for (int64_t i = 0; i < out.numel(); ++i) out[i] += sign * bv[i];
        } else if (bv.is_scalar()) {
            mode = Mode::Scalar;
            for (real& x : out.data) x += sign * bv[0];
        } else if (av.ndim() == 2 && bv.rows() == 1 && bv.cols() == av.shape[1]) {
            mode = Mode::Row;
            const int64_t r = av.shape[0], c = av.shape[1];
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j) out.at(i, j) += sign * bv[j];
        } else {
            throw ShapeError(std::string(name) + ": " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
        }
        return push_op(std::move(out), {a, b}, [a, b, sign, mode](Tape& t, NodeId y) {
            const Array& g = t.gval(y);
            if (t.requires_grad(a)) {
                Array& ga = t.gacc(a);
                for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
            }
            if (t.requires_grad(b)) {
                Array& gb = t.gacc(b);
                if (mode == Mode::Same) {
                    for (int64_t i = 0; i < g.numel(); ++i) gb[i] += sign * g[i];
                } else if (mode == Mode::Scalar) {
                    for (int64_t i = 0; i < g.numel(); ++i) gb[0] += sign * g[i];
                } else {
                    const int64_t c = gb.cols();
                    for (int64_t i = 0; i < g.numel(); ++i) gb[i % c] += sign * g[i];
                }
            }
        });
    }

    NodeId reduce(NodeId a, bool take_mean) {
        const Array& av = val(a);
        real s = 0;
        for (real v : av.data) s += v;
        const int64_t n = av.numel();
        if (take_mean) s /= static_cast<real>(n);
        Array out = Array::scalar(s);
        return push_op(std::move(out), {a}, [a, n, take_mean](Tape& t, NodeId y) {
            const real g = take_mean ? t.gval(y)[0] / static_cast<real>(n) : t.gval(y)[0];
            Array& ga = t.gacc(a);
            for (int64_t i = 0; i < n; ++i) ga[i] += g;
        });
    }

    std::vector<TapeNode> nodes_;
    std::vector<Array> grads_;
    bool grad_enabled_;
    bool backward_done_ = false;
};

} // namespace thinkgen
