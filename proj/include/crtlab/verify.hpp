#pragma once

// Certification suites behind the `verify` subcommand. Each check pits the
// implementation against an independent oracle (finite differences, brute
// force enumeration, dense SVD, analytic corner solutions) on freshly drawn
// random instances and reports counts.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "crtlab/metrics.hpp"
#include "crtlab/model.hpp"
#include "crtlab/oracle.hpp"
#include "crtlab/rng.hpp"
#include "crtlab/tensor.hpp"
#include "crtlab/threat.hpp"
#include "crtlab/train.hpp"

namespace crtlab::verify {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

namespace vdetail {

inline MlpModel random_model(const std::vector<std::size_t>& dims, Rng rng) {
    return MlpModel(dims, rng);
}

inline std::vector<double> random_unit_box(std::size_t n, Rng& rng, double lo = 0.05, double hi = 0.95) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

inline double grad_rel_err(const std::vector<double>& got, const std::vector<double>& want) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        num += (got[i] - want[i]) * (got[i] - want[i]);
        den += want[i] * want[i];
    }
    return std::sqrt(num) / std::max(1.0, std::sqrt(den));
}

} // namespace vdetail

// Tape gradients of a full MLP cross-entropy loss vs central differences.
inline CheckResult check_gradients(std::uint64_t seed, int instances = 100, double tol = 1e-4) {
    Rng root(seed);
    int worst_instance = -1;
    double worst = 0.0;
    for (int inst = 0; inst < instances; ++inst) {
        Rng r = root.child("grad").child(std::uint64_t(inst));
        const std::size_t d = 3 + r.uniform_index(5), h = 4 + r.uniform_index(7),
                          k = 2 + r.uniform_index(3), n = 2 + r.uniform_index(4);
        MlpModel m({d, h, k}, r.child("init"));
        Rng xr = r.child("x");
        std::vector<double> xv(n * d);
        for (double& v : xv) v = xr.uniform(-1, 1);
        std::vector<int> y(n);
        for (int& v : y) v = int(xr.uniform_index(k));
        Tensor x({n, d}, xv);

        GradTape tape;
        tape.backward(mean(softmax_cross_entropy(m.forward(x), y)));
        auto params = m.parameters();
        std::vector<double> tape_grad, fd_grad;
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            const auto& g = params[pi].grad();
            tape_grad.insert(tape_grad.end(), g.begin(), g.end());
            std::vector<double> fd = oracle::finite_diff_grad(
                [&](const std::vector<double>& v) {
                    MlpModel probe = m.clone();
                    probe.parameters()[pi].mutable_data() = v;
                    return mean(softmax_cross_entropy(probe.forward(x), y)).item();
                },
                params[pi].data(), 1e-5);
            fd_grad.insert(fd_grad.end(), fd.begin(), fd.end());
        }
        const double err = vdetail::grad_rel_err(tape_grad, fd_grad);
        if (err > worst) {
            worst = err;
            worst_instance = inst;
        }
    }
    CheckResult res;
    res.name = "gradients-vs-finite-differences";
    res.pass = worst < tol;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d instances, worst rel err %.3g (tol %.1g, instance %d)", instances,
                  worst, tol, worst_instance);
    res.detail = buf;
    return res;
}

// PGD against exhaustive enumeration on tiny constraint grids, per kind.
inline CheckResult check_attack_quality(std::uint64_t seed, int instances_per_kind = 200,
                                        double ratio = 0.95, double required_rate = 0.90) {
    Rng root(seed);
    CheckResult res;
    res.name = "pgd-vs-brute-force";
    res.pass = true;
    std::string detail;
    for (AttackKind kind :
         {AttackKind::linf, AttackKind::l2, AttackKind::spatial_flow, AttackKind::intensity_shift}) {
        int hits = 0;
        std::size_t candidate_total = 0;
        for (int inst = 0; inst < instances_per_kind; ++inst) {
            Rng r = root.child(attack_kind_name(kind)).child(std::uint64_t(inst));
            const double eps = r.uniform(0.1, 0.3);
            ThreatModel tm;
            tm.kind = kind;
            tm.name = attack_kind_name(kind);
            tm.epsilon = kind == AttackKind::spatial_flow ? r.uniform(0.6, 1.4) : eps;
            tm.steps = 10;
            tm.step_size = tm.epsilon / 4.0;
            tm.intensity_bins = 2;

            std::size_t d = 4, H = 0, W = 0;
            if (kind == AttackKind::spatial_flow) {
                d = 16;
                H = W = 4;
            }
            MlpModel m({d, 10, 3}, r.child("init"));
            oracle::MlpWeights w = m.export_weights();
            Rng xr = r.child("x");
            std::vector<double> xv = vdetail::random_unit_box(d, xr, 0.2, 0.8);
            const int label = int(xr.uniform_index(3));

            std::vector<std::vector<double>> candidates;
            switch (kind) {
                case AttackKind::linf: {
                    auto grid = oracle::grid_perturbations(d, {0, 1, 2, 3}, oracle::standard_levels(eps));
                    for (const auto& delta : grid) {
                        std::vector<double> c = xv;
                        for (std::size_t i = 0; i < d; ++i) c[i] = std::clamp(c[i] + delta[i], 0.0, 1.0);
                        candidates.push_back(std::move(c));
                    }
                    break;
                }
                case AttackKind::l2: {
                    // levels scaled so every grid point stays inside the ball
                    auto grid = oracle::grid_perturbations(d, {0, 1, 2, 3},
                                                           oracle::standard_levels(eps / 2.0));
                    for (const auto& delta : grid) {
                        std::vector<double> c = xv;
                        for (std::size_t i = 0; i < d; ++i) c[i] = std::clamp(c[i] + delta[i], 0.0, 1.0);
                        candidates.push_back(std::move(c));
                    }
                    break;
                }
                case AttackKind::spatial_flow: {
                    // 2 active pixels x 2 flow components at 3 levels each
                    const std::vector<double> levels{-tm.epsilon, 0.0, tm.epsilon};
                    std::vector<std::size_t> px{xr.uniform_index(16), 0};
                    do {
                        px[1] = xr.uniform_index(16);
                    } while (px[1] == px[0]);
                    for (double a : levels)
                        for (double b : levels)
                            for (double c : levels)
                                for (double e : levels) {
                                    std::vector<double> fr(16, 0.0), fc(16, 0.0);
                                    fr[px[0]] = a;
                                    fc[px[0]] = b;
                                    fr[px[1]] = c;
                                    fc[px[1]] = e;
                                    candidates.push_back(oracle::apply_flow(xv, 4, 4, fr, fc));
                                }
                    break;
                }
                case AttackKind::intensity_shift: {
                    const std::vector<double> levels{-eps, 0.0, eps};
                    for (double a : levels)
                        for (double b : levels)
                            candidates.push_back(oracle::apply_intensity_shift(xv, 2, {a, b}));
                    break;
                }
            }
            // enumeration must be exhaustive
            const std::size_t expect = kind == AttackKind::spatial_flow ? 81u
                                       : kind == AttackKind::intensity_shift ? 9u
                                                                             : 625u;
            if (candidates.size() != expect) {
                res.pass = false;
                res.detail = "candidate count mismatch";
                return res;
            }
            candidate_total += candidates.size();
            auto bf = oracle::brute_force_attack(w, candidates, label);

            AttackResult pgd = attack(m, Tensor({1, d}, xv), tm,
                                      AttackObjective::cross_entropy({label}), r.child("pgd"), H, W);
            const double value = oracle::cross_entropy(oracle::mlp_logits(w, pgd.x_adv.data()), label);
            if (value >= ratio * bf.best_objective) ++hits;
        }
        const double rate = double(hits) / double(instances_per_kind);
        char buf[120];
        std::snprintf(buf, sizeof(buf), "%s %d/%d (cands %zu); ", attack_kind_name(kind), hits,
                      instances_per_kind, candidate_total);
        detail += buf;
        if (rate < required_rate) res.pass = false;
    }
    res.detail = detail;
    return res;
}

// Appendix-D sandwich under exact enumeration maximizers.
inline CheckResult check_sandwich(std::uint64_t seed, int triples = 500, double tol = 1e-9) {
    Rng root(seed);
    int violations = 0;
    for (int inst = 0; inst < triples; ++inst) {
        Rng r = root.child("sandwich").child(std::uint64_t(inst));
        const std::size_t d = 3 + r.uniform_index(3);
        MlpModel m({d, 4 + r.uniform_index(6), 2 + r.uniform_index(3)}, r.child("init"));
        oracle::MlpWeights w = m.export_weights();
        Rng xr = r.child("x");
        std::vector<double> x = vdetail::random_unit_box(d, xr);
        Rng mr = r.child("mask");
        auto mask = oracle::random_mask(d, std::min<std::size_t>(d, 3), mr);
        auto grid = oracle::grid_perturbations(d, mask, oracle::standard_levels(r.uniform(0.05, 0.3)));
        std::vector<std::vector<double>> candidates;
        for (const auto& delta : grid) {
            std::vector<double> c = x;
            for (std::size_t i = 0; i < d; ++i) c[i] += delta[i];
            candidates.push_back(std::move(c));
        }
        const double alr = oracle::exact_regularizer(w, x, candidates, oracle::RegKindOracle::alr);
        const double vr = oracle::exact_regularizer(w, x, candidates, oracle::RegKindOracle::vr);
        if (!(alr <= vr + tol && vr <= 2.0 * alr + tol)) ++violations;
    }
    CheckResult res;
    res.name = "alr-vr-sandwich";
    res.pass = violations == 0;
    res.detail = std::to_string(triples) + " triples, " + std::to_string(violations) + " violations";
    return res;
}

// Theorem-1 empirical core and its Corollary-1 analogue with exact
// maximizers and the cross-entropy Lipschitz constant.
inline CheckResult check_loss_gap_bounds(std::uint64_t seed, int instances = 100) {
    Rng root(seed);
    int gap_viol = 0, union_viol = 0;
    for (int inst = 0; inst < instances; ++inst) {
        Rng r = root.child("bounds").child(std::uint64_t(inst));
        const std::size_t d = 4;
        MlpModel m({d, 4 + r.uniform_index(8), 2 + r.uniform_index(3)}, r.child("init"));
        const std::size_t k = m.num_classes();
        Rng xr = r.child("x");
        const std::size_t n = 3 + xr.uniform_index(3);
        std::vector<std::vector<double>> inputs;
        std::vector<int> labels;
        std::vector<std::vector<std::vector<double>>> c1, c2;
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> x = vdetail::random_unit_box(d, xr);
            labels.push_back(int(xr.uniform_index(k)));
            for (auto* fam : {&c1, &c2}) {
                auto mask = oracle::random_mask(d, 2, xr);
                auto grid = oracle::grid_perturbations(d, mask,
                                                       oracle::standard_levels(xr.uniform(0.05, 0.35)));
                std::vector<std::vector<double>> cands;
                for (const auto& delta : grid) {
                    std::vector<double> c = x;
                    for (std::size_t j = 0; j < d; ++j) c[j] = std::clamp(c[j] + delta[j], 0.0, 1.0);
                    cands.push_back(std::move(c));
                }
                fam->push_back(std::move(cands));
            }
            inputs.push_back(std::move(x));
        }
        auto gap = loss_gap_bound_check(m, inputs, labels, c1, c2);
        if (gap.lhs > gap.rhs_distance_term + 1e-12) ++gap_viol;
        auto uni = union_clean_gap_check(m, inputs, labels, c1, c2);
        if (uni.lhs > uni.rhs_distance_term + 1e-12) ++union_viol;
    }
    CheckResult res;
    res.name = "loss-gap-bound-certification";
    res.pass = gap_viol == 0 && union_viol == 0;
    res.detail = std::to_string(instances) + " instances, theorem violations " + std::to_string(gap_viol) +
                 ", corollary violations " + std::to_string(union_viol);
    return res;
}

// Final-linear-layer bound plus the spectral-norm oracle cross-check.
inline CheckResult check_rep_bound(std::uint64_t seed, int pairs = 1000, double svd_tol = 1e-6) {
    Rng root(seed);
    int violations = 0, svd_mismatches = 0;
    const int models = 25;
    const int pairs_per_model = (pairs + models - 1) / models;
    for (int mi = 0; mi < models; ++mi) {
        Rng r = root.child("rep").child(std::uint64_t(mi));
        const std::size_t d = 4 + r.uniform_index(4), h = 5 + r.uniform_index(6),
                          k = 2 + r.uniform_index(4);
        MlpModel m({d, h, k}, r.child("init"));
        const Tensor& W = m.final_weight();
        const double svd = oracle::spectral_norm_svd(W.data(), W.shape()[0], W.shape()[1]);
        const double pi = m.final_layer_spectral_norm(500, 1e-14);
        if (std::abs(pi - svd) > svd_tol * std::max(1.0, svd)) ++svd_mismatches;
        Rng xr = r.child("x");
        for (int p = 0; p < pairs_per_model; ++p) {
            std::vector<double> a(d), b(d);
            for (double& v : a) v = xr.uniform(-1, 2);
            for (double& v : b) v = xr.uniform(-1, 2);
            auto checks = rep_bound_check(m, Tensor({1, d}, a), Tensor({1, d}, b));
            if (checks[0].logit_distance > checks[0].bound * (1.0 + 1e-9) + 1e-12) ++violations;
        }
    }
    CheckResult res;
    res.name = "final-layer-representation-bound";
    res.pass = violations == 0 && svd_mismatches == 0;
    res.detail = std::to_string(models * pairs_per_model) + " pairs, " + std::to_string(violations) +
                 " bound violations, " + std::to_string(svd_mismatches) + " svd mismatches";
    return res;
}

// Union accuracy vs per-example worst-case enumeration. Binary linear models
// keep both PGD and the grid provably corner-exact, so the equality is not a
// coin flip; random MLPs fuzz the union <= min(individual) bound.
inline CheckResult check_union_accuracy(std::uint64_t seed, int instances = 40, int fuzz = 30) {
    Rng root(seed);
    int equal = 0;
    for (int inst = 0; inst < instances; ++inst) {
        Rng r = root.child("union").child(std::uint64_t(inst));
        const std::size_t d = 4;
        // binary linear model with no flat coordinates
        std::vector<double> wv(d * 2);
        for (std::size_t i = 0; i < d; ++i) {
            wv[i * 2 + 0] = r.uniform(-1, 1);
            double diff;
            do {
                diff = r.uniform(-1, 1);
            } while (std::abs(diff) < 0.05);
            wv[i * 2 + 1] = wv[i * 2 + 0] + diff;
        }
        MlpModel m = MlpModel::from_parameters({d, 2}, {Tensor({d, 2}, wv, true)},
                                               {Tensor::zeros({2}, true)});
        oracle::MlpWeights ow = m.export_weights();

        Rng xr = r.child("x");
        const std::size_t n = 12;
        std::vector<double> images(n * d);
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n * d; ++i) images[i] = xr.uniform(0.25, 0.75);
        for (std::size_t i = 0; i < n; ++i) labels[i] = int(xr.uniform_index(2));
        Dataset data;
        data.images = Tensor({n, d}, images);
        data.labels = labels;
        data.height = 1;
        data.width = d;
        data.classes = 2;
        data.split = "test";

        ThreatModel linf_tm;
        linf_tm.kind = AttackKind::linf;
        linf_tm.name = "linf";
        linf_tm.epsilon = r.uniform(0.05, 0.15);
        linf_tm.steps = 10;
        linf_tm.step_size = linf_tm.epsilon / 2.0;
        ThreatModel int_tm;
        int_tm.kind = AttackKind::intensity_shift;
        int_tm.name = "ints";
        int_tm.epsilon = r.uniform(0.05, 0.15);
        int_tm.steps = 10;
        int_tm.step_size = int_tm.epsilon / 2.0;
        int_tm.intensity_bins = 2;

        const double impl = union_accuracy(m, {linf_tm, int_tm}, data, r.child("eval"), 10);

        // enumeration ground truth per example: corners of each constraint
        std::size_t correct = 0;
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> x(images.begin() + i * d, images.begin() + (i + 1) * d);
            bool ok = true;
            auto check_candidates = [&](const std::vector<std::vector<double>>& cands) {
                for (const auto& c : cands) {
                    auto logits = oracle::mlp_logits(ow, c);
                    const int pred = logits[1] > logits[0] ? 1 : 0;
                    if (pred != labels[i]) return false;
                }
                return true;
            };
            std::vector<std::vector<double>> linf_corners;
            auto grid = oracle::grid_perturbations(d, {0, 1, 2, 3},
                                                   oracle::standard_levels(linf_tm.epsilon));
            for (const auto& delta : grid) {
                std::vector<double> c = x;
                for (std::size_t j = 0; j < d; ++j) c[j] = std::clamp(c[j] + delta[j], 0.0, 1.0);
                linf_corners.push_back(std::move(c));
            }
            std::vector<std::vector<double>> int_corners;
            for (double a : {-int_tm.epsilon, 0.0, int_tm.epsilon})
                for (double b : {-int_tm.epsilon, 0.0, int_tm.epsilon})
                    int_corners.push_back(oracle::apply_intensity_shift(x, 2, {a, b}));
            ok = check_candidates(linf_corners) && check_candidates(int_corners);
            if (ok) ++correct;
        }
        if (impl == double(correct) / double(n)) ++equal;
    }

    // fuzz: union is never above any individual accuracy
    int bound_viol = 0;
    for (int inst = 0; inst < fuzz; ++inst) {
        Rng r = root.child("unionfuzz").child(std::uint64_t(inst));
        Dataset data = generate_shapes(r.next_u64(), 24, 8, 8, 3, 0.1, "test");
        MlpModel m({64, 10, 3}, r.child("init"));
        std::vector<ThreatModel> tms;
        ThreatModel a;
        a.kind = AttackKind::linf;
        a.name = "a";
        a.epsilon = 0.06;
        a.steps = 5;
        tms.push_back(a);
        ThreatModel b;
        b.kind = AttackKind::l2;
        b.name = "b";
        b.epsilon = 0.4;
        b.steps = 5;
        tms.push_back(b);
        ThreatModel c;
        c.kind = AttackKind::intensity_shift;
        c.name = "c";
        c.epsilon = 0.08;
        c.steps = 5;
        tms.push_back(c);
        Rng er(r.next_u64());
        const double uni = union_accuracy(m, tms, data, er, 5);
        for (const auto& tm : tms)
            if (uni > robust_accuracy(m, tm, data, er, 5) + 1e-12) ++bound_viol;
    }

    CheckResult res;
    res.name = "union-accuracy-vs-enumeration";
    res.pass = equal == instances && bound_viol == 0;
    res.detail = std::to_string(equal) + "/" + std::to_string(instances) + " exact matches, " +
                 std::to_string(bound_viol) + " bound violations in fuzz";
    return res;
}

// Croce sampler frequencies against err / sum(err).
inline CheckResult check_croce_frequencies(std::uint64_t seed, int draws = 100000, double tol = 0.02) {
    Rng root(seed);
    CheckResult res;
    res.name = "croce-sampler-frequencies";
    res.pass = true;
    double worst = 0.0;
    for (int profile = 0; profile < 3; ++profile) {
        Rng r = root.child("croce").child(std::uint64_t(profile));
        const std::size_t count = 2 + r.uniform_index(3);
        std::vector<ThreatModel> known;
        RunningErr running;
        double total = 0.0;
        std::vector<double> errs;
        for (std::size_t i = 0; i < count; ++i) {
            ThreatModel tm;
            tm.kind = AttackKind::linf;
            tm.name = "atk" + std::to_string(i);
            tm.epsilon = 0.05;
            known.push_back(tm);
            const double e = r.uniform(0.05, 1.0);
            running.update(tm.name, e);
            errs.push_back(e);
            total += e;
        }
        std::map<std::string, int> counts;
        Rng draw_rng = r.child("draws");
        for (int i = 0; i < draws; ++i) counts[select_attack_croce(running, known, draw_rng).name]++;
        for (std::size_t i = 0; i < count; ++i) {
            const double want = errs[i] / total;
            const double got = double(counts[known[i].name]) / double(draws);
            worst = std::max(worst, std::abs(got - want));
            if (std::abs(got - want) > tol) res.pass = false;
        }
    }
    // degenerate all-zero profile must be uniform
    {
        std::vector<ThreatModel> known;
        for (int i = 0; i < 4; ++i) {
            ThreatModel tm;
            tm.kind = AttackKind::linf;
            tm.name = "z" + std::to_string(i);
            tm.epsilon = 0.05;
            known.push_back(tm);
        }
        RunningErr running;
        std::map<std::string, int> counts;
        Rng draw_rng = root.child("croce-zero");
        for (int i = 0; i < draws; ++i) counts[select_attack_croce(running, known, draw_rng).name]++;
        for (const auto& tm : known) {
            const double got = double(counts[tm.name]) / double(draws);
            worst = std::max(worst, std::abs(got - 0.25));
            if (std::abs(got - 0.25) > tol) res.pass = false;
        }
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%d draws/profile, worst abs deviation %.4f (tol %.2f)", draws, worst,
                  tol);
    res.detail = buf;
    return res;
}

inline std::vector<CheckResult> run_all(std::uint64_t seed, bool quick = false) {
    std::vector<CheckResult> out;
    out.push_back(check_gradients(seed, quick ? 25 : 100));
    out.push_back(check_attack_quality(seed, quick ? 40 : 200));
    out.push_back(check_sandwich(seed, quick ? 100 : 500));
    out.push_back(check_loss_gap_bounds(seed, quick ? 25 : 100));
    out.push_back(check_rep_bound(seed, quick ? 250 : 1000));
    out.push_back(check_union_accuracy(seed, quick ? 15 : 40, quick ? 10 : 30));
    out.push_back(check_croce_frequencies(seed, quick ? 20000 : 100000));
    return out;
}

} // namespace crtlab::verify
