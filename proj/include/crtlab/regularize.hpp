#pragma once

#include <string>
#include <vector>

#include "crtlab/common.hpp"
#include "crtlab/model.hpp"
#include "crtlab/rng.hpp"
#include "crtlab/tensor.hpp"
#include "crtlab/threat.hpp"

namespace crtlab {

enum class RegKind { none, alr, vr, ur, gr };

enum class RegTarget { logits, representation };

inline const char* reg_kind_name(RegKind k) {
    switch (k) {
        case RegKind::none: return "none";
        case RegKind::alr: return "alr";
        case RegKind::vr: return "vr";
        case RegKind::ur: return "ur";
        case RegKind::gr: return "gr";
    }
    return "?";
}

struct RegularizerConfig {
    RegKind kind = RegKind::none;
    double lambda = 0.5;
    double sigma = 0.0;      // noise scale for UR/GR
    int inner_steps = 1;     // ascent steps for ALR/VR
    RegTarget target = RegTarget::logits;

    bool active() const { return kind != RegKind::none && lambda > 0.0; }

    void validate() const {
        if (lambda < 0.0) throw Error("RegularizerConfig: lambda must be >= 0");
        if (sigma < 0.0) throw Error("RegularizerConfig: sigma must be >= 0");
        if ((kind == RegKind::alr || kind == RegKind::vr) && inner_steps < 1)
            throw Error("RegularizerConfig: inner_steps must be >= 1 for ALR/VR");
    }
};

namespace detail {

inline Tensor target_output(const MlpModel& model, const Tensor& x, RegTarget target) {
    if (target == RegTarget::logits) return model.forward(x);
    return model.forward_with_representation(x).representation;
}

} // namespace detail

// R_ALR = (1/m) sum_i max_{x' in C(x_i)} ||h(x') - h(x_i)||_2, the inner max
// approximated by inner_steps of projected gradient ascent on the distance
// objective from a random start. The maximizer is then treated as a constant:
// gradients reach the parameters through both h(x') and h(x_i) only.
inline Tensor alr_term(const MlpModel& model, const Tensor& x, const ThreatModel& tm,
                       const RegularizerConfig& cfg, Rng rng, std::size_t height = 0,
                       std::size_t width = 0) {
    cfg.validate();
    Tensor reference = detail::target_output(frozen_copy(model), x, cfg.target).detached();
    ThreatModel inner = tm;
    inner.steps = cfg.inner_steps;
    const AttackObjective obj = cfg.target == RegTarget::logits
                                    ? AttackObjective::logit_distance(reference)
                                    : AttackObjective::representation_distance(reference);
    AttackResult r = attack(model, x, inner, obj, rng, height, width);
    Tensor out = detail::target_output(model, r.x_adv, cfg.target);
    Tensor clean = detail::target_output(model, x, cfg.target);
    return mean(l2_norm_lastaxis(sub(out, clean)));
}

// R_VR = (1/m) sum_i max_{x',x'' in C(x_i)} ||h(x') - h(x'')||_2 with the two
// perturbations ascended jointly on the pairwise-distance objective.
inline Tensor vr_term(const MlpModel& model, const Tensor& x, const ThreatModel& tm,
                      const RegularizerConfig& cfg, Rng rng, std::size_t height = 0,
                      std::size_t width = 0) {
    cfg.validate();
    tm.validate();
    Tensor x1, x2;
    if (tm.epsilon == 0.0) {
        x1 = x.detached();
        x2 = x.detached();
    } else {
        const MlpModel frozen = frozen_copy(model);
        detail::PerturbState s1(tm, x, height, width), s2(tm, x, height, width);
        s1.random_start(rng);
        s2.random_start(rng);
        for (int step = 0; step < cfg.inner_steps; ++step) {
            GradTape tape;
            Tensor a = detail::target_output(frozen, s1.apply(x), cfg.target);
            Tensor b = detail::target_output(frozen, s2.apply(x), cfg.target);
            tape.backward(sum(l2_norm_lastaxis(sub(a, b))));
            s1.ascend();
            s2.ascend();
        }
        s1.detach_params();
        s2.detach_params();
        x1 = s1.apply(x).detached();
        x2 = s2.apply(x).detached();
    }
    Tensor a = detail::target_output(model, x1, cfg.target);
    Tensor b = detail::target_output(model, x2, cfg.target);
    return mean(l2_norm_lastaxis(sub(a, b)));
}

// R = (1/m) sum_i ||h(clamp(x_i + eta)) - h(x_i)||_2 with eta uniform in
// [-sigma, sigma]^d (UR) or N(0, sigma^2) per coordinate (GR).
inline Tensor noise_term(const MlpModel& model, const Tensor& x, double sigma, bool gaussian, Rng rng,
                         RegTarget target = RegTarget::logits) {
    if (sigma < 0.0) throw Error("noise regularizer: sigma must be >= 0");
    std::vector<double> noisy = x.data();
    for (double& v : noisy) {
        const double eta = gaussian ? sigma * rng.normal() : rng.uniform(-sigma, sigma);
        v = std::clamp(v + eta, 0.0, 1.0);
    }
    Tensor xn(x.shape(), std::move(noisy));
    Tensor a = detail::target_output(model, xn, target);
    Tensor b = detail::target_output(model, x, target);
    return mean(l2_norm_lastaxis(sub(a, b)));
}

inline Tensor ur_term(const MlpModel& model, const Tensor& x, double sigma, Rng rng) {
    return noise_term(model, x, sigma, false, rng);
}

inline Tensor gr_term(const MlpModel& model, const Tensor& x, double sigma, Rng rng) {
    return noise_term(model, x, sigma, true, rng);
}

// L_reg = L + lambda * R. With lambda = 0 or kind none this returns the base
// loss tensor unchanged, bit for bit. For ALR/VR `selected` names the threat
// model chosen for this batch by the fine-tuning strategy.
inline Tensor regularized_loss(const MlpModel& model, const Tensor& x, const Tensor& base_loss,
                               const RegularizerConfig& cfg, const ThreatModel* selected, Rng rng,
                               std::size_t height = 0, std::size_t width = 0) {
    cfg.validate();
    if (!cfg.active()) return base_loss;
    Tensor reg;
    switch (cfg.kind) {
        case RegKind::alr:
            if (!selected) throw Error("regularized_loss: ALR needs a selected threat model");
            reg = alr_term(model, x, *selected, cfg, rng, height, width);
            break;
        case RegKind::vr:
            if (!selected) throw Error("regularized_loss: VR needs a selected threat model");
            reg = vr_term(model, x, *selected, cfg, rng, height, width);
            break;
        case RegKind::ur:
            reg = ur_term(model, x, cfg.sigma, rng);
            break;
        case RegKind::gr:
            reg = gr_term(model, x, cfg.sigma, rng);
            break;
        case RegKind::none:
            return base_loss;
    }
    return add(base_loss, scale(reg, cfg.lambda));
}

} // namespace crtlab
