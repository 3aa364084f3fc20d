#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "crtlab/common.hpp"
#include "crtlab/model.hpp"
#include "crtlab/rng.hpp"
#include "crtlab/tensor.hpp"

namespace crtlab {

enum class AttackKind { linf, l2, spatial_flow, intensity_shift };

inline const char* attack_kind_name(AttackKind k) {
    switch (k) {
        case AttackKind::linf: return "linf";
        case AttackKind::l2: return "l2";
        case AttackKind::spatial_flow: return "spatial_flow";
        case AttackKind::intensity_shift: return "intensity_shift";
    }
    return "?";
}

// A constraint family plus the optimization recipe that searches it.
// epsilon is in pixel values for linf/l2/intensity and in pixels of
// displacement for spatial_flow.
struct ThreatModel {
    std::string name;
    AttackKind kind = AttackKind::linf;
    double epsilon = 0.0;
    int steps = 10;
    double step_size = 0.0; // 0 = use the per-kind default
    int introduced_at = 0;
    std::size_t intensity_bins = 8;

    static double default_step_size(AttackKind kind, double eps) {
        switch (kind) {
            case AttackKind::linf: return 2.0 / 255.0;
            case AttackKind::l2: return 0.075;
            default: return eps / 8.0; // spatial_flow, intensity_shift
        }
    }

    double effective_step_size() const {
        return step_size > 0.0 ? step_size : default_step_size(kind, epsilon);
    }

    void validate() const {
        if (name.empty()) throw Error("ThreatModel: empty name");
        if (epsilon < 0.0) throw Error("ThreatModel " + name + ": epsilon must be >= 0");
        if (steps < 0) throw Error("ThreatModel " + name + ": steps must be >= 0");
        if (step_size < 0.0) throw Error("ThreatModel " + name + ": step_size must be >= 0");
        if (steps > 0 && epsilon > 0.0 && !(effective_step_size() > 0.0))
            throw Error("ThreatModel " + name + ": step_size must be > 0 when steps > 0");
        if (kind == AttackKind::intensity_shift && intensity_bins < 1)
            throw Error("ThreatModel " + name + ": intensity_bins must be >= 1");
    }
};

// Differentiable objective the attack ascends. Cross-entropy realizes the
// usual loss-maximizing attack; the distance objectives drive the inner
// maximization of ALR/VR-style regularizers.
class AttackObjective {
public:
    enum class Kind { cross_entropy, logit_distance, representation_distance };

    static AttackObjective cross_entropy(std::vector<int> labels) {
        AttackObjective o;
        o.kind_ = Kind::cross_entropy;
        o.labels_ = std::move(labels);
        return o;
    }

    static AttackObjective logit_distance(Tensor reference_logits) {
        AttackObjective o;
        o.kind_ = Kind::logit_distance;
        o.reference_ = reference_logits.detached();
        return o;
    }

    static AttackObjective representation_distance(Tensor reference_reps) {
        AttackObjective o;
        o.kind_ = Kind::representation_distance;
        o.reference_ = reference_reps.detached();
        return o;
    }

    Kind kind() const { return kind_; }

    // Sum over the batch, recorded on the active tape.
    Tensor eval(const MlpModel& model, const Tensor& x_adv) const {
        switch (kind_) {
            case Kind::cross_entropy:
                return sum(softmax_cross_entropy(model.forward(x_adv), labels_));
            case Kind::logit_distance:
                return sum(l2_norm_lastaxis(sub(model.forward(x_adv), reference_)));
            case Kind::representation_distance:
                return sum(l2_norm_lastaxis(
                    sub(model.forward_with_representation(x_adv).representation, reference_)));
        }
        throw Error("AttackObjective: bad kind");
    }

private:
    Kind kind_ = Kind::cross_entropy;
    std::vector<int> labels_;
    Tensor reference_;
};

struct AttackResult {
    Tensor x_adv;                // [n,d] in [0,1]
    std::vector<Tensor> params;  // final perturbation parameters, kind-specific
};

// Coordinate clamp to [-eps, +eps]; idempotent.
inline void project_linf(std::vector<double>& delta, double eps) {
    for (double& v : delta) v = std::clamp(v, -eps, eps);
}

// Nearest point of the eps-ball: rescale when the norm exceeds the budget.
inline void project_l2(double* delta, std::size_t n, double eps) {
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) norm += delta[i] * delta[i];
    norm = std::sqrt(norm);
    if (norm > eps) {
        const double s = eps / norm;
        for (std::size_t i = 0; i < n; ++i) delta[i] *= s;
    }
}

inline Tensor project_linf(Tensor delta, double eps) {
    Tensor out = delta.detached();
    project_linf(out.mutable_data(), eps);
    return out;
}

inline Tensor project_l2(Tensor delta, double eps) {
    Tensor out = delta.detached();
    if (out.rank() == 1) {
        project_l2(out.mutable_data().data(), out.size(), eps);
    } else {
        const std::size_t rows = out.shape()[0], cols = out.size() / out.shape()[0];
        for (std::size_t i = 0; i < rows; ++i) project_l2(out.mutable_data().data() + i * cols, cols, eps);
    }
    return out;
}

// Private frozen copy for inner maximizations: adversarial example search
// must not leak gradients into the caller's parameters, and the caller's
// model must stay untouched so concurrent evaluations can share it.
inline MlpModel frozen_copy(const MlpModel& m) {
    MlpModel frozen = m.clone();
    frozen.set_requires_grad(false);
    return frozen;
}

namespace detail {

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Internal state of one PGD run: the perturbation parameters, how to apply
// them to the batch, and how to take one projected ascent step.
struct PerturbState {
    AttackKind kind;
    double eps, alpha;
    std::size_t n, d, H, W, L;
    Tensor delta;                   // linf / l2
    Tensor flow_row, flow_col;      // spatial_flow, each [n,d]
    Tensor shifts;                  // intensity_shift, [n,L]
    Tensor base_rows, base_cols;    // constant sampling grid
    std::vector<std::size_t> bins;  // constant bin index per pixel

    PerturbState(const ThreatModel& tm, const Tensor& x, std::size_t height, std::size_t width)
        : kind(tm.kind), eps(tm.epsilon), alpha(tm.effective_step_size()), n(x.shape()[0]),
          d(x.shape()[1]), H(height), W(width), L(tm.intensity_bins) {
        switch (kind) {
            case AttackKind::linf:
            case AttackKind::l2:
                delta = Tensor::zeros({n, d}, true);
                break;
            case AttackKind::spatial_flow: {
                if (H * W != d)
                    throw ShapeError("spatial_flow attack: input of dim " + std::to_string(d) +
                                     " is not reshapeable to " + std::to_string(H) + "x" + std::to_string(W));
                flow_row = Tensor::zeros({n, d}, true);
                flow_col = Tensor::zeros({n, d}, true);
                std::vector<double> br(n * d), bc(n * d);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t r = 0; r < H; ++r)
                        for (std::size_t c = 0; c < W; ++c) {
                            br[i * d + r * W + c] = double(r);
                            bc[i * d + r * W + c] = double(c);
                        }
                base_rows = Tensor({n, d}, std::move(br));
                base_cols = Tensor({n, d}, std::move(bc));
                break;
            }
            case AttackKind::intensity_shift: {
                shifts = Tensor::zeros({n, L}, true);
                bins.resize(n * d);
                for (std::size_t i = 0; i < n * d; ++i) {
                    const double v = x.data()[i];
                    bins[i] = std::min(L - 1, std::size_t(std::max(0.0, v) * double(L)));
                }
                break;
            }
        }
    }

    void random_start(Rng& rng) {
        switch (kind) {
            case AttackKind::linf:
                for (double& v : delta.mutable_data()) v = rng.uniform(-eps, eps);
                break;
            case AttackKind::l2:
                // uniform direction, uniform radius
                for (std::size_t i = 0; i < n; ++i) {
                    double* row = delta.mutable_data().data() + i * d;
                    double norm = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        row[j] = rng.normal();
                        norm += row[j] * row[j];
                    }
                    norm = std::sqrt(norm);
                    const double radius = rng.uniform(0.0, eps);
                    if (norm > 0.0)
                        for (std::size_t j = 0; j < d; ++j) row[j] *= radius / norm;
                }
                break;
            case AttackKind::spatial_flow:
                for (double& v : flow_row.mutable_data()) v = rng.uniform(-eps, eps);
                for (double& v : flow_col.mutable_data()) v = rng.uniform(-eps, eps);
                break;
            case AttackKind::intensity_shift:
                for (double& v : shifts.mutable_data()) v = rng.uniform(-eps, eps);
                break;
        }
    }

    Tensor apply(const Tensor& x) const {
        switch (kind) {
            case AttackKind::linf:
            case AttackKind::l2:
                return clamp(add(x, delta), 0.0, 1.0);
            case AttackKind::spatial_flow:
                // convex combination of grid values, so the box holds by construction
                return bilinear_sample(x, add(base_rows, flow_row), add(base_cols, flow_col), H, W);
            case AttackKind::intensity_shift:
                return clamp(add(x, gather_per_row(shifts, bins, d)), 0.0, 1.0);
        }
        throw Error("PerturbState::apply: bad kind");
    }

    // One projected ascent step from populated parameter grads. Flat (zero)
    // gradients leave the parameters unchanged.
    void ascend() {
        auto sign_step = [this](Tensor& t) {
            if (!t.has_grad()) return;
            const std::vector<double>& g = t.grad();
            std::vector<double>& v = t.mutable_data();
            for (std::size_t i = 0; i < v.size(); ++i)
                v[i] = std::clamp(v[i] + alpha * sign(g[i]), -eps, eps);
            t.zero_grad();
        };
        switch (kind) {
            case AttackKind::linf:
                sign_step(delta);
                break;
            case AttackKind::l2: {
                if (!delta.has_grad()) return;
                const std::vector<double>& g = delta.grad();
                std::vector<double>& v = delta.mutable_data();
                for (std::size_t i = 0; i < n; ++i) {
                    double norm = 0.0;
                    for (std::size_t j = 0; j < d; ++j) norm += g[i * d + j] * g[i * d + j];
                    norm = std::sqrt(norm);
                    if (norm == 0.0) continue;
                    for (std::size_t j = 0; j < d; ++j) v[i * d + j] += alpha * g[i * d + j] / norm;
                    project_l2(v.data() + i * d, d, eps);
                }
                delta.zero_grad();
                break;
            }
            case AttackKind::spatial_flow:
                sign_step(flow_row);
                sign_step(flow_col);
                break;
            case AttackKind::intensity_shift:
                sign_step(shifts);
                break;
        }
    }

    // Stop tracking the perturbation parameters; the final materialization
    // must not record onto whatever tape the caller has open.
    void detach_params() {
        for (Tensor* t : {&delta, &flow_row, &flow_col, &shifts})
            if (t->defined()) t->set_requires_grad(false);
    }

    std::vector<Tensor> final_params() const {
        switch (kind) {
            case AttackKind::linf:
            case AttackKind::l2: return {delta.detached()};
            case AttackKind::spatial_flow: return {flow_row.detached(), flow_col.detached()};
            case AttackKind::intensity_shift: return {shifts.detached()};
        }
        return {};
    }
};

} // namespace detail

// Projected gradient ascent on the perturbation parameters with a random
// start inside the constraint set; projection after every step. steps=0
// returns the random start; epsilon=0 returns x itself. Pure in the caller's
// model: the search runs on a frozen private copy.
inline AttackResult attack(const MlpModel& model, const Tensor& x, const ThreatModel& tm,
                           const AttackObjective& obj, Rng rng, std::size_t height = 0,
                           std::size_t width = 0) {
    tm.validate();
    if (x.rank() != 2)
        throw ShapeError("attack: expected batch [n,d], got " + shape_str(x.shape()));
    if (tm.epsilon == 0.0) return {x.detached(), {}};

    const MlpModel frozen = frozen_copy(model);
    detail::PerturbState state(tm, x, height, width);
    state.random_start(rng);
    for (int step = 0; step < tm.steps; ++step) {
        GradTape tape;
        Tensor objective = obj.eval(frozen, state.apply(x));
        tape.backward(objective);
        state.ascend();
    }
    state.detach_params();
    return {state.apply(x).detached(), state.final_params()};
}

// Membership predicate for x' in C(x). For linf/l2 it checks the input-space
// deviation; for flow/intensity feasibility is certified by the stored
// perturbation parameters, which must be supplied in `result`.
inline bool membership(const ThreatModel& tm, const Tensor& x, const AttackResult& result,
                       double tol = 1e-9) {
    const Tensor& xa = result.x_adv;
    if (x.shape() != xa.shape()) return false;
    const bool identical = std::equal(x.data().begin(), x.data().end(), xa.data().begin());
    if (identical) return true;
    if (tm.epsilon == 0.0) return false;
    switch (tm.kind) {
        case AttackKind::linf: {
            for (std::size_t i = 0; i < x.size(); ++i)
                if (std::abs(xa.data()[i] - x.data()[i]) > tm.epsilon + tol) return false;
            return true;
        }
        case AttackKind::l2: {
            const std::size_t n = x.shape()[0], d = x.shape()[1];
            for (std::size_t i = 0; i < n; ++i) {
                double norm = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double dv = xa.data()[i * d + j] - x.data()[i * d + j];
                    norm += dv * dv;
                }
                if (std::sqrt(norm) > tm.epsilon + tol) return false;
            }
            return true;
        }
        case AttackKind::spatial_flow:
        case AttackKind::intensity_shift: {
            if (result.params.empty()) return false;
            for (const Tensor& p : result.params)
                for (double v : p.data())
                    if (std::abs(v) > tm.epsilon + tol) return false;
            return true;
        }
    }
    return false;
}

} // namespace crtlab
