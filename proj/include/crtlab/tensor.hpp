#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "crtlab/common.hpp"

namespace crtlab {

class GradTape;

// Dense f64 tensor, row-major, batch axis leading. Copies are shallow: they
// share storage and gradient state, which is what lets optimizer updates and
// tape closures see the same payload.
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : p_(std::make_shared<Payload>()) {
        if (numel(shape) != data.size())
            throw ShapeError("Tensor: shape " + shape_str(shape) + " does not match data length " +
                             std::to_string(data.size()));
        p_->shape = std::move(shape);
        p_->data = std::move(data);
        p_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<double> d(numel(shape), 0.0);
        return Tensor(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }

    bool defined() const { return static_cast<bool>(p_); }
    const Shape& shape() const { return p_->shape; }
    std::size_t size() const { return p_->data.size(); }
    std::size_t rank() const { return p_->shape.size(); }

    const std::vector<double>& data() const { return p_->data; }

    // Raw write access; only for leaves (parameters, perturbations). Mutating
    // an op output between forward and backward is undefined.
    std::vector<double>& mutable_data() { return p_->data; }

    bool requires_grad() const { return p_->requires_grad; }
    void set_requires_grad(bool b) { p_->requires_grad = b; }

    bool has_grad() const { return !p_->grad.empty(); }

    const std::vector<double>& grad() const {
        if (p_->grad.empty()) throw Error("Tensor::grad: no gradient populated");
        return p_->grad;
    }

    std::vector<double>& grad_buffer() {
        if (p_->grad.empty()) p_->grad.assign(p_->data.size(), 0.0);
        return p_->grad;
    }

    void zero_grad() { p_->grad.clear(); }

    double item() const {
        if (size() != 1) throw ShapeError("Tensor::item: tensor is not scalar, shape " + shape_str(shape()));
        return p_->data[0];
    }

    // Value copy detached from any tape and from gradient tracking.
    Tensor detached() const { return Tensor(p_->shape, p_->data, false); }

    // Deep copy that keeps requires_grad but drops grads / tape linkage.
    Tensor clone() const { return Tensor(p_->shape, p_->data, p_->requires_grad); }

private:
    friend class GradTape;

    struct Payload {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad; // empty = not populated
        bool requires_grad = false;
        std::uint64_t tape_id = 0;     // tape that produced this as an op output
        std::int64_t node = -1;        // op index on that tape
    };

    std::shared_ptr<Payload> p_;
};

// Reverse-mode tape. Constructing one makes it the active tape for the
// current thread; ops record themselves when any input is tracked. Single
// threaded by design: a tape is confined to the thread that created it.
class GradTape {
public:
    GradTape() : id_(next_id()++), prev_(active_) { active_ = this; }

    ~GradTape() { active_ = prev_; }

    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    static GradTape* active() { return active_; }

    std::size_t size() const { return ops_.size(); }
    std::uint64_t id() const { return id_; }

    bool tracked(const Tensor& t) const {
        return t.p_ && (t.p_->requires_grad || (t.p_->node >= 0 && t.p_->tape_id == id_));
    }

    // Records one primitive. The backprop closure reads the output grad and
    // accumulates into whichever inputs are tracked at backward time.
    void record(Tensor& out, std::function<void()> backprop) {
        out.p_->tape_id = id_;
        out.p_->node = std::int64_t(ops_.size());
        ops_.push_back(Op{out, std::move(backprop)});
    }

    // Populates grads of every tracked requires_grad tensor reachable from
    // loss; grads accumulate additively across backward calls. Grads held by
    // intermediates (op outputs without requires_grad) are wiped afterwards.
    void backward(const Tensor& loss) {
        if (!loss.defined() || loss.size() != 1)
            throw TapeError("backward: loss must be a scalar tensor");
        if (!(loss.p_->node >= 0 && loss.p_->tape_id == id_))
            throw TapeError("backward: loss was not produced on the current tape");

        struct Reactivate {
            GradTape* saved;
            explicit Reactivate(GradTape* self) : saved(active_) { active_ = self; }
            ~Reactivate() { active_ = saved; }
        } guard(this);

        loss.p_->grad.assign(1, 1.0);
        for (std::size_t i = ops_.size(); i-- > 0;) {
            if (ops_[i].output.p_->grad.empty()) continue; // nothing flowed here
            ops_[i].backprop();
        }
        for (auto& op : ops_) {
            Tensor& t = op.output;
            if (t.p_->requires_grad) {
                if (!t.p_->grad.empty()) require_finite(t.p_->grad, "backward (gradient)");
            } else {
                t.p_->grad.clear();
            }
        }
    }

private:
    struct Op {
        Tensor output;
        std::function<void()> backprop;
    };

    static std::uint64_t& next_id() {
        static thread_local std::uint64_t n = 1;
        return n;
    }

    std::vector<Op> ops_;
    std::uint64_t id_;
    GradTape* prev_ = nullptr;
    static inline thread_local GradTape* active_ = nullptr;
};

namespace detail {

inline bool any_tracked(std::initializer_list<const Tensor*> ts) {
    GradTape* tape = GradTape::active();
    if (!tape) return false;
    for (const Tensor* t : ts)
        if (tape->tracked(*t)) return true;
    return false;
}

inline bool wants_grad(const Tensor& t) {
    GradTape* tape = GradTape::active();
    return tape && tape->tracked(t);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Primitive ops
// ---------------------------------------------------------------------------

// [m,p] x [p,q] -> [m,q]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
        throw ShapeError("matmul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " do not conform");
    const std::size_t m = a.shape()[0], p = a.shape()[1], q = b.shape()[1];
    Tensor out = Tensor::zeros({m, q});
    {
        const double* A = a.data().data();
        const double* B = b.data().data();
        double* C = out.mutable_data().data();
        for (std::size_t i = 0; i < m; ++i) {
            const double* Ai = A + i * p;
            double* Ci = C + i * q;
            for (std::size_t k = 0; k < p; ++k) {
                const double aik = Ai[k];
                if (aik == 0.0) continue;
                const double* Bk = B + k * q;
                for (std::size_t j = 0; j < q; ++j) Ci[j] += aik * Bk[j];
            }
        }
    }
    require_finite(out.data(), "matmul");
    if (detail::any_tracked({&a, &b})) {
        Tensor ac = a, bc = b, oc = out;
        GradTape::active()->record(out, [ac, bc, oc, m, p, q]() mutable {
            const std::vector<double>& go = oc.grad();
            if (detail::wants_grad(ac)) {
                std::vector<double>& ga = ac.grad_buffer();
                const double* B = bc.data().data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t k = 0; k < p; ++k) {
                        double s = 0.0;
                        const double* Bk = B + k * q;
                        const double* gi = go.data() + i * q;
                        for (std::size_t j = 0; j < q; ++j) s += gi[j] * Bk[j];
                        ga[i * p + k] += s;
                    }
            }
            if (detail::wants_grad(bc)) {
                std::vector<double>& gb = bc.grad_buffer();
                const double* A = ac.data().data();
                for (std::size_t i = 0; i < m; ++i) {
                    const double* Ai = A + i * p;
                    const double* gi = go.data() + i * q;
                    for (std::size_t k = 0; k < p; ++k) {
                        const double aik = Ai[k];
                        if (aik == 0.0) continue;
                        double* gk = gb.data() + k * q;
                        for (std::size_t j = 0; j < q; ++j) gk[j] += aik * gi[j];
                    }
                }
            }
        });
    }
    return out;
}

// Elementwise add; b may also be a suffix-shaped tensor broadcast over the
// leading axes (bias add).
inline Tensor add(const Tensor& a, const Tensor& b) {
    const bool same = a.shape() == b.shape();
    bool suffix = false;
    if (!same && b.rank() <= a.rank()) {
        suffix = std::equal(b.shape().begin(), b.shape().end(), a.shape().end() - b.rank());
    }
    if (!same && !suffix)
        throw ShapeError("add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " do not conform");
    const std::size_t n = a.size(), bn = b.size();
    Tensor out = Tensor::zeros(a.shape());
    {
        const double* A = a.data().data();
        const double* B = b.data().data();
        double* O = out.mutable_data().data();
        for (std::size_t i = 0; i < n; ++i) O[i] = A[i] + B[i % bn];
    }
    require_finite(out.data(), "add");
    if (detail::any_tracked({&a, &b})) {
        Tensor ac = a, bc = b, oc = out;
        GradTape::active()->record(out, [ac, bc, oc, n, bn]() mutable {
            const std::vector<double>& go = oc.grad();
            if (detail::wants_grad(ac)) {
                std::vector<double>& ga = ac.grad_buffer();
                for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
            }
            if (detail::wants_grad(bc)) {
                std::vector<double>& gb = bc.grad_buffer();
                for (std::size_t i = 0; i < n; ++i) gb[i % bn] += go[i];
            }
        });
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("sub: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " do not conform");
    const std::size_t n = a.size();
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] - b.data()[i];
    require_finite(out.data(), "sub");
    if (detail::any_tracked({&a, &b})) {
        Tensor ac = a, bc = b, oc = out;
        GradTape::active()->record(out, [ac, bc, oc, n]() mutable {
            const std::vector<double>& go = oc.grad();
            if (detail::wants_grad(ac)) {
                std::vector<double>& ga = ac.grad_buffer();
                for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
            }
            if (detail::wants_grad(bc)) {
                std::vector<double>& gb = bc.grad_buffer();
                for (std::size_t i = 0; i < n; ++i) gb[i] -= go[i];
            }
        });
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " do not conform");
    const std::size_t n = a.size();
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] * b.data()[i];
    require_finite(out.data(), "mul");
    if (detail::any_tracked({&a, &b})) {
        Tensor ac = a, bc = b, oc = out;
        GradTape::active()->record(out, [ac, bc, oc, n]() mutable {
            const std::vector<double>& go = oc.grad();
            if (detail::wants_grad(ac)) {
                std::vector<double>& ga = ac.grad_buffer();
                for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * bc.data()[i];
            }
            if (detail::wants_grad(bc)) {
                std::vector<double>& gb = bc.grad_buffer();
                for (std::size_t i = 0; i < n; ++i) gb[i] += go[i] * ac.data()[i];
            }
        });
    }
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    const std::size_t n = a.size();
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] * c;
    require_finite(out.data(), "scale");
    if (detail::any_tracked({&a})) {
        Tensor ac = a, oc = out;
        GradTape::active()->record(out, [ac, oc, c, n]() mutable {
            if (!detail::wants_grad(ac)) return;
            const std::vector<double>& go = oc.grad();
            std::vector<double>& ga = ac.grad_buffer();
            for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * c;
        });
    }
    return out;
}

inline Tensor relu(const Tensor& a) {
    const std::size_t n = a.size();
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
    require_finite(out.data(), "relu");
    if (detail::any_tracked({&a})) {
        Tensor ac = a, oc = out;
        GradTape::active()->record(out, [ac, oc, n]() mutable {
            if (!detail::wants_grad(ac)) return;
            const std::vector<double>& go = oc.grad();
            std::vector<double>& ga = ac.grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                if (ac.data()[i] > 0.0) ga[i] += go[i];
        });
    }
    return out;
}

// Subgradient convention: zero outside the open interval (lo, hi).
inline Tensor clamp(const Tensor& a, double lo, double hi) {
    if (!(lo <= hi)) throw Error("clamp: lo must be <= hi");
    const std::size_t n = a.size();
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = std::min(hi, std::max(lo, a.data()[i]));
    require_finite(out.data(), "clamp");
    if (detail::any_tracked({&a})) {
        Tensor ac = a, oc = out;
        GradTape::active()->record(out, [ac, oc, lo, hi, n]() mutable {
            if (!detail::wants_grad(ac)) return;
            const std::vector<double>& go = oc.grad();
            std::vector<double>& ga = ac.grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                if (ac.data()[i] > lo && ac.data()[i] < hi) ga[i] += go[i];
        });
    }
    return out;
}

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    Tensor out = Tensor::scalar(s);
    require_finite(out.data(), "sum");
    if (detail::any_tracked({&a})) {
        Tensor ac = a, oc = out;
        GradTape::active()->record(out, [ac, oc]() mutable {
            if (!detail::wants_grad(ac)) return;
            const double g = oc.grad()[0];
            std::vector<double>& ga = ac.grad_buffer();
            for (double& v : ga) v += g;
        });
    }
    return out;
}

inline Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw ShapeError("mean: empty tensor");
    const double inv = 1.0 / double(a.size());
    double s = 0.0;
    for (double v : a.data()) s += v;
    Tensor out = Tensor::scalar(s * inv);
    require_finite(out.data(), "mean");
    if (detail::any_tracked({&a})) {
        Tensor ac = a, oc = out;
        GradTape::active()->record(out, [ac, oc, inv]() mutable {
            if (!detail::wants_grad(ac)) return;
            const double g = oc.grad()[0] * inv;
            std::vector<double>& ga = ac.grad_buffer();
            for (double& v : ga) v += g;
        });
    }
    return out;
}

// L2 norm along the last axis: [..., k] -> [...]. Subgradient 0 at the origin.
inline Tensor l2_norm_lastaxis(const Tensor& a) {
    if (a.rank() < 1) throw ShapeError("l2_norm_lastaxis: needs rank >= 1, got " + shape_str(a.shape()));
    const std::size_t k = a.shape().back();
    if (k == 0) throw ShapeError("l2_norm_lastaxis: last axis has extent 0");
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    const std::size_t rows = numel(out_shape);
    Tensor out = Tensor::zeros(out_shape);
    for (std::size_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            double v = a.data()[i * k + j];
            s += v * v;
        }
        out.mutable_data()[i] = std::sqrt(s);
    }
    require_finite(out.data(), "l2_norm_lastaxis");
    if (detail::any_tracked({&a})) {
        Tensor ac = a, oc = out;
        GradTape::active()->record(out, [ac, oc, rows, k]() mutable {
            if (!detail::wants_grad(ac)) return;
            const std::vector<double>& go = oc.grad();
            std::vector<double>& ga = ac.grad_buffer();
            for (std::size_t i = 0; i < rows; ++i) {
                const double norm = oc.data()[i];
                if (norm == 0.0) continue;
                const double g = go[i] / norm;
                for (std::size_t j = 0; j < k; ++j) ga[i * k + j] += g * ac.data()[i * k + j];
            }
        });
    }
    return out;
}

// Per-example softmax cross-entropy: logits [n,k], labels in [0,k) -> [n].
inline Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2)
        throw ShapeError("softmax_cross_entropy: logits must be [n,k], got " + shape_str(logits.shape()));
    const std::size_t n = logits.shape()[0], k = logits.shape()[1];
    if (labels.size() != n)
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
    for (int y : labels)
        if (y < 0 || std::size_t(y) >= k)
            throw ShapeError("softmax_cross_entropy: label " + std::to_string(y) + " out of range [0," +
                             std::to_string(k) + ")");
    Tensor out = Tensor::zeros({n});
    for (std::size_t i = 0; i < n; ++i) {
        const double* z = logits.data().data() + i * k;
        double zmax = z[0];
        for (std::size_t j = 1; j < k; ++j) zmax = std::max(zmax, z[j]);
        double se = 0.0;
        for (std::size_t j = 0; j < k; ++j) se += std::exp(z[j] - zmax);
        out.mutable_data()[i] = zmax + std::log(se) - z[std::size_t(labels[i])];
    }
    require_finite(out.data(), "softmax_cross_entropy");
    if (detail::any_tracked({&logits})) {
        Tensor lc = logits, oc = out;
        std::vector<int> ls = labels;
        GradTape::active()->record(out, [lc, oc, ls, n, k]() mutable {
            if (!detail::wants_grad(lc)) return;
            const std::vector<double>& go = oc.grad();
            std::vector<double>& gl = lc.grad_buffer();
            // d loss_i / d z_ij = softmax(z_i)_j - [j == y_i]
            for (std::size_t i = 0; i < n; ++i) {
                if (go[i] == 0.0) continue;
                const double* z = lc.data().data() + i * k;
                double zmax = z[0];
                for (std::size_t j = 1; j < k; ++j) zmax = std::max(zmax, z[j]);
                double se = 0.0;
                for (std::size_t j = 0; j < k; ++j) se += std::exp(z[j] - zmax);
                for (std::size_t j = 0; j < k; ++j) {
                    double p = std::exp(z[j] - zmax) / se;
                    gl[i * k + j] += go[i] * (p - (std::size_t(ls[i]) == j ? 1.0 : 0.0));
                }
            }
        });
    }
    return out;
}

// out[i,j] = table[i, indices[i*m + j]]; linear in the table, the index map is
// treated as constant. Used by the intensity-shift attack.
inline Tensor gather_per_row(const Tensor& table, const std::vector<std::size_t>& indices,
                             std::size_t m) {
    if (table.rank() != 2)
        throw ShapeError("gather_per_row: table must be [n,L], got " + shape_str(table.shape()));
    const std::size_t n = table.shape()[0], L = table.shape()[1];
    if (indices.size() != n * m)
        throw ShapeError("gather_per_row: index count " + std::to_string(indices.size()) +
                         " does not match [n,m]=[" + std::to_string(n) + "," + std::to_string(m) + "]");
    for (std::size_t idx : indices)
        if (idx >= L) throw ShapeError("gather_per_row: index " + std::to_string(idx) + " out of range");
    Tensor out = Tensor::zeros({n, m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
            out.mutable_data()[i * m + j] = table.data()[i * L + indices[i * m + j]];
    require_finite(out.data(), "gather_per_row");
    if (detail::any_tracked({&table})) {
        Tensor tc = table, oc = out;
        std::vector<std::size_t> idx = indices;
        GradTape::active()->record(out, [tc, oc, idx, n, m, L]() mutable {
            if (!detail::wants_grad(tc)) return;
            const std::vector<double>& go = oc.grad();
            std::vector<double>& gt = tc.grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) gt[i * L + idx[i * m + j]] += go[i * m + j];
        });
    }
    return out;
}

// Bilinear sample of per-example H x W grids at fractional coordinates.
//   img  [n, H*W]   grid values
//   rows [n, M]     fractional row coordinate per output element
//   cols [n, M]     fractional column coordinate per output element
// Out-of-range coordinates clamp to the border. Differentiable w.r.t. both
// the grid values and the coordinates; coordinate gradients vanish where the
// border clamp is active. Integer coordinates reproduce grid values exactly.
inline Tensor bilinear_sample(const Tensor& img, const Tensor& rows, const Tensor& cols,
                              std::size_t H, std::size_t W) {
    if (img.rank() != 2 || img.shape()[1] != H * W)
        throw ShapeError("bilinear_sample: img " + shape_str(img.shape()) + " does not match H*W=" +
                         std::to_string(H * W));
    if (rows.shape() != cols.shape() || rows.rank() != 2 || rows.shape()[0] != img.shape()[0])
        throw ShapeError("bilinear_sample: coordinate shapes " + shape_str(rows.shape()) + " and " +
                         shape_str(cols.shape()) + " do not conform to img " + shape_str(img.shape()));
    if (H == 0 || W == 0) throw ShapeError("bilinear_sample: degenerate grid");
    const std::size_t n = img.shape()[0], M = rows.shape()[1];

    auto cell = [](double coord, std::size_t extent, std::size_t& lo, double& frac) {
        if (extent == 1) {
            lo = 0;
            frac = 0.0;
            return;
        }
        double c = std::min(double(extent - 1), std::max(0.0, coord));
        lo = std::min(std::size_t(std::floor(c)), extent - 2);
        frac = c - double(lo);
    };

    Tensor out = Tensor::zeros({n, M});
    for (std::size_t i = 0; i < n; ++i) {
        const double* I = img.data().data() + i * H * W;
        for (std::size_t mres = 0; mres < M; ++mres) {
            std::size_t r0, c0;
            double fr, fc;
            cell(rows.data()[i * M + mres], H, r0, fr);
            cell(cols.data()[i * M + mres], W, c0, fc);
            const std::size_t r1 = (H == 1) ? r0 : r0 + 1, c1 = (W == 1) ? c0 : c0 + 1;
            out.mutable_data()[i * M + mres] =
                (1 - fr) * (1 - fc) * I[r0 * W + c0] + (1 - fr) * fc * I[r0 * W + c1] +
                fr * (1 - fc) * I[r1 * W + c0] + fr * fc * I[r1 * W + c1];
        }
    }
    require_finite(out.data(), "bilinear_sample");
    if (detail::any_tracked({&img, &rows, &cols})) {
        Tensor ic = img, rc = rows, cc = cols, oc = out;
        GradTape::active()->record(out, [ic, rc, cc, oc, H, W, n, M, cell]() mutable {
            const std::vector<double>& go = oc.grad();
            const bool gi = detail::wants_grad(ic), gr = detail::wants_grad(rc), gc = detail::wants_grad(cc);
            if (!gi && !gr && !gc) return;
            for (std::size_t i = 0; i < n; ++i) {
                const double* I = ic.data().data() + i * H * W;
                for (std::size_t mres = 0; mres < M; ++mres) {
                    const double g = go[i * M + mres];
                    if (g == 0.0) continue;
                    const double rraw = rc.data()[i * M + mres], craw = cc.data()[i * M + mres];
                    std::size_t r0, c0;
                    double fr, fc;
                    cell(rraw, H, r0, fr);
                    cell(craw, W, c0, fc);
                    const std::size_t r1 = (H == 1) ? r0 : r0 + 1, c1 = (W == 1) ? c0 : c0 + 1;
                    if (gi) {
                        std::vector<double>& gim = ic.grad_buffer();
                        double* G = gim.data() + i * H * W;
                        G[r0 * W + c0] += g * (1 - fr) * (1 - fc);
                        G[r0 * W + c1] += g * (1 - fr) * fc;
                        G[r1 * W + c0] += g * fr * (1 - fc);
                        G[r1 * W + c1] += g * fr * fc;
                    }
                    if (gr && H > 1 && rraw > 0.0 && rraw < double(H - 1)) {
                        rc.grad_buffer()[i * M + mres] +=
                            g * ((1 - fc) * (I[r1 * W + c0] - I[r0 * W + c0]) +
                                 fc * (I[r1 * W + c1] - I[r0 * W + c1]));
                    }
                    if (gc && W > 1 && craw > 0.0 && craw < double(W - 1)) {
                        cc.grad_buffer()[i * M + mres] +=
                            g * ((1 - fr) * (I[r0 * W + c1] - I[r0 * W + c0]) +
                                 fr * (I[r1 * W + c1] - I[r1 * W + c0]));
                    }
                }
            }
        });
    }
    return out;
}

// Per-element max built from primitives: max(a,b) = a + relu(b - a).
// Subgradient goes to `a` on ties.
inline Tensor vmax(const Tensor& a, const Tensor& b) { return add(a, relu(sub(b, a))); }

} // namespace crtlab
