#pragma once

#include <algorithm>
#include <deque>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "crtlab/common.hpp"
#include "crtlab/data.hpp"
#include "crtlab/metrics.hpp"
#include "crtlab/model.hpp"
#include "crtlab/optim.hpp"
#include "crtlab/regularize.hpp"
#include "crtlab/rng.hpp"
#include "crtlab/tensor.hpp"
#include "crtlab/threat.hpp"

namespace crtlab {

// Time-indexed set of threat models with introduction times; K(t) is the set
// of attacks whose introduction time is <= t, so it only ever grows.
struct KnowledgeSet {
    std::vector<ThreatModel> attacks; // ordered by introduced_at, non-decreasing

    void validate() const {
        if (attacks.empty()) throw Error("KnowledgeSet: no attacks");
        for (const ThreatModel& tm : attacks) tm.validate();
        for (std::size_t i = 1; i < attacks.size(); ++i)
            if (attacks[i].introduced_at < attacks[i - 1].introduced_at)
                throw Error("KnowledgeSet: introduction times must be non-decreasing");
        for (std::size_t i = 0; i < attacks.size(); ++i)
            for (std::size_t j = i + 1; j < attacks.size(); ++j)
                if (attacks[i].name == attacks[j].name)
                    throw Error("KnowledgeSet: duplicate attack name " + attacks[i].name);
    }

    std::vector<ThreatModel> known_at(int t) const {
        std::vector<ThreatModel> out;
        for (const ThreatModel& tm : attacks)
            if (tm.introduced_at <= t) out.push_back(tm);
        return out;
    }

    std::vector<int> introduction_times() const {
        std::vector<int> out;
        for (const ThreatModel& tm : attacks)
            if (out.empty() || out.back() != tm.introduced_at) out.push_back(tm.introduced_at);
        return out;
    }
};

enum class Strategy { ft_single, ft_max, ft_croce, scratch_avg, scratch_max, scratch_random };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::ft_single: return "ft_single";
        case Strategy::ft_max: return "ft_max";
        case Strategy::ft_croce: return "ft_croce";
        case Strategy::scratch_avg: return "scratch_avg";
        case Strategy::scratch_max: return "scratch_max";
        case Strategy::scratch_random: return "scratch_random";
    }
    return "?";
}

inline bool is_scratch(Strategy s) {
    return s == Strategy::scratch_avg || s == Strategy::scratch_max || s == Strategy::scratch_random;
}

struct TrainConfig {
    int epochs_initial = 100;
    int epochs_finetune = 10;
    std::size_t batch_size = 128;
    double base_lr_initial = 0.1;
    double lr_finetune = 0.001; // constant, no schedule
    double momentum = 0.9;
    double weight_decay = 0.0005;
    Strategy strategy = Strategy::ft_single;
    RegularizerConfig regularizer;
    std::uint64_t seed = 0;
    int croce_window = 50;       // batches of running robust loss per attack
    double holdout_fraction = 0.1;

    void validate() const {
        if (epochs_initial < 1 || epochs_finetune < 1) throw Error("TrainConfig: epochs must be >= 1");
        if (batch_size < 1) throw Error("TrainConfig: batch_size must be >= 1");
        if (!(base_lr_initial > 0.0) || !(lr_finetune > 0.0)) throw Error("TrainConfig: learning rates must be > 0");
        if (momentum < 0.0 || momentum >= 1.0) throw Error("TrainConfig: momentum must be in [0,1)");
        if (weight_decay < 0.0) throw Error("TrainConfig: weight_decay must be >= 0");
        if (croce_window < 1) throw Error("TrainConfig: croce_window must be >= 1");
        if (holdout_fraction < 0.0 || holdout_fraction >= 1.0)
            throw Error("TrainConfig: holdout_fraction must be in [0,1)");
        regularizer.validate();
    }
};

// Windowed arithmetic running average of robust loss, one series per attack,
// updated only for the attack used on a batch.
struct RunningErr {
    int window = 50;
    std::map<std::string, std::deque<double>> values;

    void update(const std::string& name, double v) {
        if (v < 0.0) throw Error("RunningErr: losses must be >= 0");
        auto& q = values[name];
        q.push_back(v);
        while (int(q.size()) > window) q.pop_front();
    }

    double err(const std::string& name) const {
        auto it = values.find(name);
        if (it == values.end() || it->second.empty()) return 0.0;
        double s = 0.0;
        for (double v : it->second) s += v;
        return s / double(it->second.size());
    }
};

// Samples attack P with probability err(P) / sum of errs; all-zero errs fall
// back to uniform.
inline const ThreatModel& select_attack_croce(const RunningErr& running,
                                              const std::vector<ThreatModel>& known, Rng& rng) {
    if (known.empty()) throw Error("select_attack_croce: empty knowledge set");
    double total = 0.0;
    std::vector<double> errs(known.size());
    for (std::size_t i = 0; i < known.size(); ++i) {
        errs[i] = running.err(known[i].name);
        total += errs[i];
    }
    const double u = rng.uniform();
    if (total <= 0.0) return known[std::size_t(u * double(known.size()))];
    double acc = 0.0;
    for (std::size_t i = 0; i < known.size(); ++i) {
        acc += errs[i] / total;
        if (u < acc) return known[i];
    }
    return known.back();
}

struct EpochStats {
    int epoch = 0;
    double mean_train_loss = 0.0;
    double selection_score = 0.0;
};

// Per-epoch Appendix-E style probe: adversarial logit-distance sum vs the
// union-minus-clean loss gap on a fixed subset, both via PGD.
struct DiagProbe {
    Dataset data;
    ThreatModel tm1, tm2;
    int attack_steps = 10;
};

struct DiagPoint {
    double distance_sum = 0.0;
    double union_loss = 0.0;
    double clean_loss = 0.0;
};

struct FitResult {
    MlpModel best_model;
    int best_epoch = -1;
    double best_score = -1.0;
    std::vector<EpochStats> history;
    std::vector<DiagPoint> diagnostics;
};

namespace detail {

// Mean attacked CE of one attack over a batch, on the current tape.
inline Tensor attacked_loss_vec(const MlpModel& model, const Tensor& x, const std::vector<int>& y,
                                const ThreatModel& tm, Rng arng, std::size_t H, std::size_t W) {
    AttackResult r = attack(model, x, tm, AttackObjective::cross_entropy(y), arng, H, W);
    return softmax_cross_entropy(model.forward(r.x_adv), y);
}

// Held-out model-selection score on the known attacks with training-strength
// attack parameters. MAX-objective strategies score by union accuracy, the
// rest by the average over known attacks.
inline double selection_score(const MlpModel& model, const std::vector<ThreatModel>& known,
                              const Dataset& holdout, Strategy strategy, Rng rng) {
    if (holdout.size() == 0) return 0.0;
    std::vector<std::vector<char>> flags;
    for (const ThreatModel& tm : known)
        flags.push_back(attacked_correct_flags(model, tm, holdout, tm.steps, rng.child(tm.name)));
    if (strategy == Strategy::ft_max || strategy == Strategy::scratch_max)
        return fraction_true(union_flags(flags));
    double s = 0.0;
    for (const auto& f : flags) s += fraction_true(f);
    return s / double(flags.size());
}

inline DiagPoint diag_probe_point(const MlpModel& model, const DiagProbe& probe, Rng rng) {
    const Dataset& d = probe.data;
    DiagPoint p;
    Tensor clean_logits = model.forward(d.images);
    p.clean_loss = mean(softmax_cross_entropy(clean_logits, d.labels)).item();

    std::vector<double> union_ce(d.size(), -std::numeric_limits<double>::infinity());
    for (const ThreatModel* tm : {&probe.tm1, &probe.tm2}) {
        ThreatModel probe_tm = *tm;
        probe_tm.steps = probe.attack_steps;
        Rng tmrng = rng.child(tm->name);
        // adversarial logit distance (PGD on the distance objective)
        AttackResult rd = attack(model, d.images, probe_tm,
                                 AttackObjective::logit_distance(clean_logits), tmrng.child("dist"),
                                 d.height, d.width);
        p.distance_sum +=
            mean(l2_norm_lastaxis(sub(model.forward(rd.x_adv), clean_logits))).item();
        // attacked CE for the union loss
        AttackResult rc = attack(model, d.images, probe_tm,
                                 AttackObjective::cross_entropy(d.labels), tmrng.child("ce"),
                                 d.height, d.width);
        Tensor ce = softmax_cross_entropy(model.forward(rc.x_adv), d.labels);
        for (std::size_t i = 0; i < d.size(); ++i)
            union_ce[i] = std::max(union_ce[i], ce.data()[i]);
    }
    double u = 0.0;
    for (double v : union_ce) u += v;
    p.union_loss = u / double(d.size());
    return p;
}

} // namespace detail

struct FitPhase {
    std::vector<ThreatModel> known; // K(t) for this phase; FT-Single trains on known.back()
    Strategy strategy = Strategy::ft_single;
    int epochs = 1;
    double lr = 0.1;
    bool multistep_lr = true;
    const DiagProbe* diag = nullptr;
};

// Shared training engine for initial training, fine-tuning, and the
// train-from-scratch baselines. Mutates `model` in place; the best-epoch
// clone (held-out known-attack score) is returned in the result.
inline FitResult fit(MlpModel& model, const Dataset& train, const Dataset& holdout,
                     const FitPhase& phase, const TrainConfig& cfg, Rng rng,
                     RunningErr* running = nullptr) {
    cfg.validate();
    if (phase.known.empty()) throw Error("fit: empty knowledge set");
    for (const ThreatModel& tm : phase.known) tm.validate();
    if (train.size() == 0) throw Error("fit: empty training set");

    const std::size_t n = train.size(), H = train.height, W = train.width;
    Rng attack_rng = rng.child("attack");
    Rng sampling_rng = rng.child("sampling");

    RunningErr local_running;
    local_running.window = cfg.croce_window;
    RunningErr& run_err = running ? *running : local_running;
    run_err.window = cfg.croce_window;

    SgdState opt(phase.lr, cfg.momentum, cfg.weight_decay);
    std::vector<Tensor> params = model.parameters();

    FitResult result;
    result.best_model = model.clone();
    result.best_score = -1.0;

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    for (int epoch = 0; epoch < phase.epochs; ++epoch) {
        opt.learning_rate = phase.multistep_lr ? lr_schedule(epoch, phase.epochs, phase.lr) : phase.lr;
        Rng shuffle_rng = sampling_rng.child("shuffle").child(std::uint64_t(epoch));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batches) {
            const std::size_t end = std::min(n, start + cfg.batch_size);
            const std::size_t m = end - start;
            std::vector<double> xb(m * H * W);
            std::vector<int> yb(m);
            for (std::size_t i = 0; i < m; ++i) {
                const std::size_t src = order[start + i];
                std::copy(train.images.data().begin() + src * H * W,
                          train.images.data().begin() + (src + 1) * H * W, xb.begin() + i * H * W);
                yb[i] = train.labels[src];
            }
            Tensor x({m, H * W}, std::move(xb));

            // attack selection for this batch
            const ThreatModel* selected = nullptr;
            switch (phase.strategy) {
                case Strategy::ft_single:
                    selected = &phase.known.back();
                    break;
                case Strategy::ft_croce: {
                    Rng pick = sampling_rng.child("croce").child(std::uint64_t(epoch)).child(batches);
                    selected = &select_attack_croce(run_err, phase.known, pick);
                    break;
                }
                case Strategy::scratch_random: {
                    Rng pick = sampling_rng.child("random").child(std::uint64_t(epoch)).child(batches);
                    selected = &phase.known[pick.uniform_index(phase.known.size())];
                    break;
                }
                case Strategy::ft_max:
                case Strategy::scratch_max:
                case Strategy::scratch_avg:
                    break; // all attacks, handled below
            }

            auto batch_attack_rng = [&](const std::string& name) {
                return attack_rng.child(name).child(std::uint64_t(epoch)).child(batches);
            };

            GradTape tape;
            Tensor base;
            if (selected) {
                base = mean(detail::attacked_loss_vec(model, x, yb, *selected,
                                                      batch_attack_rng(selected->name), H, W));
            } else {
                Tensor combined;
                for (std::size_t a = 0; a < phase.known.size(); ++a) {
                    Tensor li = detail::attacked_loss_vec(model, x, yb, phase.known[a],
                                                          batch_attack_rng(phase.known[a].name), H, W);
                    if (a == 0) {
                        combined = li;
                    } else if (phase.strategy == Strategy::scratch_avg) {
                        combined = add(combined, li);
                    } else {
                        combined = vmax(combined, li); // per-example worst case
                    }
                }
                if (phase.strategy == Strategy::scratch_avg)
                    combined = scale(combined, 1.0 / double(phase.known.size()));
                base = mean(combined);
            }

            Tensor loss = base;
            if (cfg.regularizer.active()) {
                const ThreatModel* reg_tm = selected;
                if (!reg_tm && (cfg.regularizer.kind == RegKind::alr || cfg.regularizer.kind == RegKind::vr)) {
                    // MAX/AVG have no single selected attack; pair the
                    // regularizer with a uniformly sampled one per batch.
                    Rng pick = sampling_rng.child("regpick").child(std::uint64_t(epoch)).child(batches);
                    reg_tm = &phase.known[pick.uniform_index(phase.known.size())];
                }
                Rng reg_rng = attack_rng.child("reg").child(std::uint64_t(epoch)).child(batches);
                loss = regularized_loss(model, x, base, cfg.regularizer, reg_tm, reg_rng, H, W);
            }

            tape.backward(loss);
            sgd_step(params, opt);

            const double base_value = base.item();
            loss_sum += base_value;
            if (phase.strategy == Strategy::ft_croce && selected) run_err.update(selected->name, base_value);
        }

        EpochStats es;
        es.epoch = epoch;
        es.mean_train_loss = batches ? loss_sum / double(batches) : 0.0;
        es.selection_score = detail::selection_score(model, phase.known, holdout, phase.strategy,
                                                     attack_rng.child("select").child(std::uint64_t(epoch)));
        result.history.push_back(es);
        if (es.selection_score > result.best_score) {
            result.best_score = es.selection_score;
            result.best_epoch = epoch;
            result.best_model = model.clone();
        }

        if (phase.diag) {
            result.diagnostics.push_back(detail::diag_probe_point(
                model, *phase.diag, attack_rng.child("diag").child(std::uint64_t(epoch))));
        }
    }
    return result;
}

// Initial adversarial training at t=0 on the initially known attack.
inline FitResult train_initial(MlpModel& model, const Dataset& train, const Dataset& holdout,
                               const ThreatModel& tm_init, const TrainConfig& cfg, Rng rng,
                               const DiagProbe* diag = nullptr) {
    FitPhase phase;
    phase.known = {tm_init};
    phase.strategy = Strategy::ft_single; // single known attack
    phase.epochs = cfg.epochs_initial;
    phase.lr = cfg.base_lr_initial;
    phase.multistep_lr = true;
    phase.diag = diag;
    return fit(model, train, holdout, phase, cfg, rng);
}

// One fine-tuning stage against K(t) with the configured strategy.
inline FitResult finetune_step(MlpModel& model, const Dataset& train, const Dataset& holdout,
                               const std::vector<ThreatModel>& known, const TrainConfig& cfg, Rng rng,
                               RunningErr* running = nullptr, const DiagProbe* diag = nullptr) {
    if (known.empty()) throw Error("finetune_step: K(t) must be nonempty");
    FitPhase phase;
    phase.known = known;
    phase.strategy = cfg.strategy;
    phase.epochs = cfg.epochs_finetune;
    phase.lr = cfg.lr_finetune;
    phase.multistep_lr = false; // constant fine-tuning rate
    phase.diag = diag;
    return fit(model, train, holdout, phase, cfg, rng, running);
}

} // namespace crtlab
