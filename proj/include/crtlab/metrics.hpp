#pragma once

#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "crtlab/common.hpp"
#include "crtlab/data.hpp"
#include "crtlab/model.hpp"
#include "crtlab/rng.hpp"
#include "crtlab/tensor.hpp"
#include "crtlab/threat.hpp"

namespace crtlab {

// Lipschitz constant of softmax cross-entropy w.r.t. the logits in l2:
// the gradient is softmax(z) - onehot(y), whose norm never exceeds sqrt(2).
inline constexpr double kCrossEntropyLipschitz = 1.4142135623730951;

constexpr int kDefaultEvalSteps = 20; // evaluation uses stronger attacks than training

struct RunMetrics {
    int time_step = 0;
    std::string strategy;
    double clean_acc = 0.0;
    std::vector<std::pair<std::string, double>> per_attack; // schedule order
    double avg_known = 0.0;
    double union_known = 0.0;
    double avg_all = 0.0;
    double union_all = 0.0;
    double wall_time_s = 0.0;
    std::optional<double> diag_distance_sum; // loss-gap diagnostics, when recorded
    std::optional<double> diag_loss_gap;
};

// ---------------------------------------------------------------------------
// Accuracy metrics
// ---------------------------------------------------------------------------

inline std::vector<int> predict(const MlpModel& model, const Tensor& x) {
    const Tensor logits = model.forward(x);
    const std::size_t n = logits.shape()[0], k = logits.shape()[1];
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* z = logits.data().data() + i * k;
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j)
            if (z[j] > z[best]) best = j;
        out[i] = int(best);
    }
    return out;
}

inline double fraction_true(const std::vector<char>& flags) {
    if (flags.empty()) throw Error("fraction_true: empty flags");
    std::size_t c = 0;
    for (char f : flags) c += f ? 1 : 0;
    return double(c) / double(flags.size());
}

inline std::vector<char> clean_correct_flags(const MlpModel& model, const Dataset& data,
                                             std::size_t batch_size = 256) {
    const std::size_t n = data.size();
    std::vector<char> flags(n);
    for (std::size_t b = 0; b < n; b += batch_size) {
        const std::size_t e = std::min(n, b + batch_size);
        Dataset part = data.subset(b, e);
        std::vector<int> pred = predict(model, part.images);
        for (std::size_t i = b; i < e; ++i) flags[i] = pred[i - b] == data.labels[i];
    }
    return flags;
}

// Per-example correctness under one attack, evaluated batch-by-batch with a
// per-batch rng substream.
inline std::vector<char> attacked_correct_flags(const MlpModel& model, const ThreatModel& tm,
                                                const Dataset& data, int eval_steps, Rng rng,
                                                std::size_t batch_size = 256) {
    ThreatModel eval_tm = tm;
    eval_tm.steps = eval_steps;
    const std::size_t n = data.size();
    std::vector<char> flags(n);
    std::size_t batch_index = 0;
    for (std::size_t b = 0; b < n; b += batch_size, ++batch_index) {
        const std::size_t e = std::min(n, b + batch_size);
        Dataset part = data.subset(b, e);
        std::vector<int> y(data.labels.begin() + b, data.labels.begin() + e);
        AttackResult r = attack(model, part.images, eval_tm, AttackObjective::cross_entropy(y),
                                rng.child(batch_index), data.height, data.width);
        std::vector<int> pred = predict(model, r.x_adv);
        for (std::size_t i = b; i < e; ++i) flags[i] = pred[i - b] == data.labels[i];
    }
    return flags;
}

// Substream keyed by attack name, so evaluating one attack alone or as part
// of a union list sees identical randomness.
inline double robust_accuracy(const MlpModel& model, const ThreatModel& tm, const Dataset& data,
                              Rng rng, int eval_steps = kDefaultEvalSteps) {
    if (data.size() == 0) throw Error("robust_accuracy: empty dataset");
    return fraction_true(attacked_correct_flags(model, tm, data, eval_steps, rng.child(tm.name)));
}

inline std::vector<char> union_flags(const std::vector<std::vector<char>>& per_attack) {
    if (per_attack.empty()) throw Error("union_flags: no attacks");
    std::vector<char> out = per_attack[0];
    for (std::size_t a = 1; a < per_attack.size(); ++a)
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] && per_attack[a][i];
    return out;
}

// Worst case per example: correct iff correct under every attack in the list.
inline double union_accuracy(const MlpModel& model, const std::vector<ThreatModel>& tms,
                             const Dataset& data, Rng rng, int eval_steps = kDefaultEvalSteps) {
    if (tms.empty()) throw Error("union_accuracy: empty attack list");
    std::vector<std::vector<char>> flags;
    for (const ThreatModel& tm : tms)
        flags.push_back(attacked_correct_flags(model, tm, data, eval_steps, rng.child(tm.name)));
    return fraction_true(union_flags(flags));
}

// Full evaluation shared by the schedule runner: per-attack flags computed
// once, reused for all derived metrics. Attacks are independent given the
// read-only model and per-attack substreams, so `workers` may fan them out.
struct EvalReport {
    std::vector<char> clean;
    std::vector<std::pair<std::string, std::vector<char>>> per_attack; // input order
};

inline EvalReport evaluate(const MlpModel& model, const std::vector<ThreatModel>& tms,
                           const Dataset& data, Rng rng, int eval_steps = kDefaultEvalSteps,
                           int workers = 1) {
    EvalReport rep;
    rep.clean = clean_correct_flags(model, data);
    rep.per_attack.resize(tms.size());
    auto eval_one = [&](std::size_t a) {
        rep.per_attack[a] = {tms[a].name, attacked_correct_flags(model, tms[a], data, eval_steps,
                                                                 rng.child(tms[a].name))};
    };
    if (workers <= 1 || tms.size() <= 1) {
        for (std::size_t a = 0; a < tms.size(); ++a) eval_one(a);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers && w < int(tms.size()); ++w) pool.emplace_back([&, w] {
            for (std::size_t a = std::size_t(w); a < tms.size(); a += std::size_t(workers)) eval_one(a);
        });
        for (auto& t : pool) t.join();
    }
    return rep;
}

// ---------------------------------------------------------------------------
// CAR criteria checking
// ---------------------------------------------------------------------------

struct CarCriteria {
    double delta_known = 0.0;
    double delta_unknown = 0.0;
    int delta_t = 1; // grace period in schedule time steps

    void validate() const {
        if (!(0.0 < delta_known && delta_known < delta_unknown))
            throw Error("CarCriteria: need 0 < delta_known < delta_unknown");
        if (delta_t < 0) throw Error("CarCriteria: delta_t must be >= 0");
    }
};

enum class CarVerdict { grace_ok, steady_ok, violated };

inline const char* car_verdict_name(CarVerdict v) {
    switch (v) {
        case CarVerdict::grace_ok: return "grace-ok";
        case CarVerdict::steady_ok: return "steady-ok";
        case CarVerdict::violated: return "violated";
    }
    return "?";
}

struct CarCheck {
    int time_step = 0;
    CarVerdict verdict = CarVerdict::violated;
    double union_loss = 0.0;
    double threshold = 0.0;
    const char* binding = ""; // which tolerance applied
};

// Applies the CAR definition to a recorded timeline of Union robust losses
// over the known set. A step is in the grace window when some attack was
// introduced at T with T <= t < T + delta_t; evaluation happens after the
// update at t, so the introduction step itself is graced.
inline std::vector<CarCheck> check_car(const std::vector<std::pair<int, double>>& union_loss_by_step,
                                       const CarCriteria& criteria, const std::vector<int>& intro_times) {
    criteria.validate();
    std::vector<CarCheck> out;
    for (const auto& [t, loss] : union_loss_by_step) {
        bool grace = false;
        for (int T : intro_times)
            if (T <= t && t - T < criteria.delta_t) grace = true;
        CarCheck c;
        c.time_step = t;
        c.union_loss = loss;
        c.threshold = grace ? criteria.delta_unknown : criteria.delta_known;
        c.binding = grace ? "delta_unknown" : "delta_known";
        c.verdict = loss <= c.threshold ? (grace ? CarVerdict::grace_ok : CarVerdict::steady_ok)
                                        : CarVerdict::violated;
        out.push_back(c);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Theoretical bound diagnostics
// ---------------------------------------------------------------------------

enum class LossKind { cross_entropy, zero_one };

struct BoundReport {
    double lhs = 0.0;               // empirical loss gap
    double rhs_distance_term = 0.0; // M1 * mean of adversarial logit distances
    double hoeffding_d = 0.0;       // concentration term, 0-1 loss only
};

namespace detail {

inline double example_loss(const MlpModel& model, const std::vector<double>& x, int label,
                           LossKind kind) {
    Tensor xt({1, x.size()}, x);
    Tensor logits = model.forward(xt);
    if (kind == LossKind::cross_entropy) {
        return softmax_cross_entropy(logits, {label}).item();
    }
    const double* z = logits.data().data();
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.shape()[1]; ++j)
        if (z[j] > z[best]) best = j;
    return best == std::size_t(label) ? 0.0 : 1.0;
}

inline double example_logit_distance(const MlpModel& model, const std::vector<double>& a,
                                     const std::vector<double>& b) {
    Tensor ta({1, a.size()}, a), tb({1, b.size()}, b);
    return l2_norm_lastaxis(sub(model.forward(ta), model.forward(tb))).item();
}

inline double hoeffding(double m2, double rho, std::size_t n) {
    return m2 * std::sqrt(std::log(rho / 2.0) / (-2.0 * double(n)));
}

} // namespace detail

// Certification-mode bound check: both adversarial losses and logit
// distances are maximized exactly over explicit per-example candidate sets.
// With cross-entropy, lhs <= rhs_distance_term is a theorem; get a candidate
// list per example from the oracle grids.
inline BoundReport loss_gap_bound_check(const MlpModel& model,
                                        const std::vector<std::vector<double>>& inputs,
                                        const std::vector<int>& labels,
                                        const std::vector<std::vector<std::vector<double>>>& candidates1,
                                        const std::vector<std::vector<std::vector<double>>>& candidates2,
                                        LossKind loss_kind = LossKind::cross_entropy, double rho = 0.05) {
    const std::size_t n = inputs.size();
    if (n == 0 || labels.size() != n || candidates1.size() != n || candidates2.size() != n)
        throw Error("loss_gap_bound_check: inconsistent instance counts");
    double l1 = 0.0, l2 = 0.0, dist = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (candidates1[i].empty() || candidates2[i].empty())
            throw Error("loss_gap_bound_check: empty candidate set at instance " + std::to_string(i));
        double worst1 = 0.0, worst2 = 0.0, d1 = 0.0, d2 = 0.0;
        bool first = true;
        for (const auto& cand : candidates1[i]) {
            const double v = detail::example_loss(model, cand, labels[i], loss_kind);
            worst1 = first ? v : std::max(worst1, v);
            first = false;
            d1 = std::max(d1, detail::example_logit_distance(model, cand, inputs[i]));
        }
        first = true;
        for (const auto& cand : candidates2[i]) {
            const double v = detail::example_loss(model, cand, labels[i], loss_kind);
            worst2 = first ? v : std::max(worst2, v);
            first = false;
            d2 = std::max(d2, detail::example_logit_distance(model, cand, inputs[i]));
        }
        l1 += worst1;
        l2 += worst2;
        dist += d1 + d2;
    }
    BoundReport r;
    r.lhs = std::abs(l1 - l2) / double(n);
    r.rhs_distance_term = kCrossEntropyLipschitz * dist / double(n);
    r.hoeffding_d = loss_kind == LossKind::zero_one ? detail::hoeffding(1.0, rho, n) : 0.0;
    return r;
}

// Corollary-1 analogue: gap between the Union loss over C1 u C2 and the
// clean loss, against the same distance sum.
inline BoundReport union_clean_gap_check(const MlpModel& model,
                                         const std::vector<std::vector<double>>& inputs,
                                         const std::vector<int>& labels,
                                         const std::vector<std::vector<std::vector<double>>>& candidates1,
                                         const std::vector<std::vector<std::vector<double>>>& candidates2,
                                         LossKind loss_kind = LossKind::cross_entropy, double rho = 0.05) {
    const std::size_t n = inputs.size();
    if (n == 0 || labels.size() != n || candidates1.size() != n || candidates2.size() != n)
        throw Error("union_clean_gap_check: inconsistent instance counts");
    double l_union = 0.0, l_clean = 0.0, dist = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (candidates1[i].empty() || candidates2[i].empty())
            throw Error("union_clean_gap_check: empty candidate set at instance " + std::to_string(i));
        l_clean += detail::example_loss(model, inputs[i], labels[i], loss_kind);
        double u = 0.0, d1 = 0.0, d2 = 0.0;
        bool first = true;
        for (const auto& cand : candidates1[i]) {
            u = first ? detail::example_loss(model, cand, labels[i], loss_kind)
                      : std::max(u, detail::example_loss(model, cand, labels[i], loss_kind));
            first = false;
            d1 = std::max(d1, detail::example_logit_distance(model, cand, inputs[i]));
        }
        for (const auto& cand : candidates2[i]) {
            u = std::max(u, detail::example_loss(model, cand, labels[i], loss_kind));
            d2 = std::max(d2, detail::example_logit_distance(model, cand, inputs[i]));
        }
        l_union += u;
        dist += d1 + d2;
    }
    BoundReport r;
    r.lhs = (l_union - l_clean) / double(n);
    r.rhs_distance_term = kCrossEntropyLipschitz * dist / double(n);
    r.hoeffding_d = loss_kind == LossKind::zero_one ? detail::hoeffding(1.0, rho, n) : 0.0;
    return r;
}

// Diagnostic-mode bound check: maximizers approximated by PGD instead of
// enumeration. The inequality is NOT guaranteed here (the distance term may
// be undershot), so the report is informational.
inline BoundReport loss_gap_bound_diagnostic(const MlpModel& model, const ThreatModel& tm1,
                                             const ThreatModel& tm2, const Dataset& data, Rng rng,
                                             int attack_steps = 10,
                                             LossKind loss_kind = LossKind::cross_entropy,
                                             double rho = 0.05) {
    const std::size_t n = data.size();
    if (n == 0) throw Error("loss_gap_bound_diagnostic: empty dataset");
    Tensor clean_logits = model.forward(data.images);
    double l1 = 0.0, l2 = 0.0, dist = 0.0;
    for (const ThreatModel* tm : {&tm1, &tm2}) {
        ThreatModel probe = *tm;
        probe.steps = attack_steps;
        Rng tmrng = rng.child(tm->name);
        AttackResult rc = attack(model, data.images, probe, AttackObjective::cross_entropy(data.labels),
                                 tmrng.child("ce"), data.height, data.width);
        double loss = 0.0;
        if (loss_kind == LossKind::cross_entropy) {
            loss = mean(softmax_cross_entropy(model.forward(rc.x_adv), data.labels)).item();
        } else {
            std::vector<int> pred = predict(model, rc.x_adv);
            for (std::size_t i = 0; i < n; ++i) loss += pred[i] == data.labels[i] ? 0.0 : 1.0;
            loss /= double(n);
        }
        AttackResult rd = attack(model, data.images, probe, AttackObjective::logit_distance(clean_logits),
                                 tmrng.child("dist"), data.height, data.width);
        dist += mean(l2_norm_lastaxis(sub(model.forward(rd.x_adv), clean_logits))).item();
        (tm == &tm1 ? l1 : l2) = loss;
    }
    BoundReport r;
    r.lhs = std::abs(l1 - l2);
    r.rhs_distance_term = kCrossEntropyLipschitz * dist;
    r.hoeffding_d = loss_kind == LossKind::zero_one ? detail::hoeffding(1.0, rho, n) : 0.0;
    return r;
}

// Final-linear-layer bound: ||h(x') - h(x'')||_2 <= ||W||_2 ||g(x') - g(x'')||_2.
// The bias cancels in the difference, so the bias-free corollary is exact.
struct RepBound {
    double logit_distance = 0.0;
    double bound = 0.0; // spectral norm of W times representation distance
};

inline std::vector<RepBound> rep_bound_check(const MlpModel& model, const Tensor& xa, const Tensor& xb) {
    if (xa.shape() != xb.shape())
        throw ShapeError("rep_bound_check: shapes " + shape_str(xa.shape()) + " vs " + shape_str(xb.shape()));
    const double w_norm = model.final_layer_spectral_norm();
    auto fa = model.forward_with_representation(xa);
    auto fb = model.forward_with_representation(xb);
    Tensor logit_d = l2_norm_lastaxis(sub(fa.logits, fb.logits));
    Tensor rep_d = l2_norm_lastaxis(sub(fa.representation, fb.representation));
    std::vector<RepBound> out(logit_d.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = {logit_d.data()[i], w_norm * rep_d.data()[i]};
    return out;
}

// Pearson correlation over a recorded history; zero-variance series are
// reported as undefined rather than an error.
inline std::optional<double> correlation_diagnostic(const std::vector<double>& xs,
                                                    const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw Error("correlation_diagnostic: length mismatch");
    const std::size_t n = xs.size();
    if (n < 3) throw Error("correlation_diagnostic: need at least 3 points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= double(n);
    my /= double(n);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// CSV emission (fixed, versioned schema)
// ---------------------------------------------------------------------------

inline std::string format_sig6(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

inline std::string csv_header(const std::vector<std::string>& attack_names) {
    std::string h = "time_step,strategy,clean";
    for (const auto& a : attack_names) h += "," + a;
    h += ",avg_known,union_known,avg_all,union_all,wall_time_s";
    return h;
}

inline std::string csv_row(const RunMetrics& m) {
    std::string r = std::to_string(m.time_step) + "," + m.strategy + "," + format_sig6(m.clean_acc);
    for (const auto& [name, acc] : m.per_attack) r += "," + format_sig6(acc);
    r += "," + format_sig6(m.avg_known) + "," + format_sig6(m.union_known) + "," +
         format_sig6(m.avg_all) + "," + format_sig6(m.union_all) + "," + format_sig6(m.wall_time_s);
    return r;
}

} // namespace crtlab
