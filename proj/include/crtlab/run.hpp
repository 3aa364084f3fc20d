#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "crtlab/config.hpp"
#include "crtlab/data.hpp"
#include "crtlab/metrics.hpp"
#include "crtlab/model.hpp"
#include "crtlab/train.hpp"

namespace crtlab {

struct RunOptions {
    std::string output_dir_override;
    int workers = 1;
    bool quiet = false;
    // Injectable clock (seconds). The default measures real wall time; tests
    // and byte-reproducibility checks inject a fixed clock since measured
    // time is the one non-deterministic column of the CSV schema.
    std::function<double()> clock = [] {
        using namespace std::chrono;
        return duration<double>(steady_clock::now().time_since_epoch()).count();
    };
};

struct TimeStepOutput {
    int time_step = 0;
    RunMetrics metrics;
    std::string checkpoint_path;
    int best_epoch = -1;
    std::vector<DiagPoint> diagnostics;
};

struct RunOutput {
    std::vector<TimeStepOutput> steps;
    std::string csv_path;
    std::vector<CarCheck> car_checks;
};

namespace rundetail {

struct SplitData {
    Dataset fit;      // training minus hold-out
    Dataset holdout;  // model-selection split
    Dataset test;
};

inline SplitData load_data(const ExperimentConfig& cfg) {
    Dataset train, test;
    if (cfg.dataset.kind == DatasetSpec::Kind::shapes) {
        train = generate_shapes(cfg.seed, cfg.dataset.n_train, cfg.dataset.height, cfg.dataset.width,
                                cfg.dataset.classes, cfg.dataset.noise_std, "train");
        test = generate_shapes(cfg.seed, cfg.dataset.n_test, cfg.dataset.height, cfg.dataset.width,
                               cfg.dataset.classes, cfg.dataset.noise_std, "test");
    } else {
        train = load_idx(cfg.dataset.train_images, cfg.dataset.train_labels, cfg.dataset.max_n);
        test = load_idx(cfg.dataset.test_images, cfg.dataset.test_labels, cfg.dataset.max_n);
        if (train.height != cfg.dataset.height || train.width != cfg.dataset.width)
            throw ConfigError({"idx dataset geometry " + std::to_string(train.height) + "x" +
                               std::to_string(train.width) + " does not match the configured " +
                               std::to_string(cfg.dataset.height) + "x" + std::to_string(cfg.dataset.width)});
    }
    SplitData out;
    const std::size_t holdout_n = std::size_t(double(train.size()) * cfg.train.holdout_fraction);
    const std::size_t fit_n = train.size() - holdout_n;
    out.fit = train.subset(0, fit_n);
    out.holdout = holdout_n ? train.subset(fit_n, train.size()) : train.subset(0, 0);
    out.test = std::move(test);
    return out;
}

inline RunMetrics metrics_for(const ExperimentConfig& cfg, const MlpModel& model, int t,
                              const Dataset& test, int workers, double wall_time) {
    const std::vector<ThreatModel>& all = cfg.schedule.attacks;
    EvalReport rep = evaluate(model, all, test, Rng(cfg.seed).child("attack").child("eval").child(std::uint64_t(t)),
                              cfg.eval_steps, workers);
    RunMetrics m;
    m.time_step = t;
    m.strategy = strategy_name(cfg.train.strategy);
    m.clean_acc = fraction_true(rep.clean);
    std::vector<std::vector<char>> known_flags, all_flags;
    double known_sum = 0.0, all_sum = 0.0;
    std::size_t known_n = 0;
    for (std::size_t a = 0; a < all.size(); ++a) {
        const double acc = fraction_true(rep.per_attack[a].second);
        m.per_attack.emplace_back(all[a].name, acc);
        all_flags.push_back(rep.per_attack[a].second);
        all_sum += acc;
        if (all[a].introduced_at <= t) {
            known_flags.push_back(rep.per_attack[a].second);
            known_sum += acc;
            ++known_n;
        }
    }
    m.avg_known = known_sum / double(known_n);
    m.union_known = fraction_true(union_flags(known_flags));
    m.avg_all = all_sum / double(all.size());
    m.union_all = fraction_true(union_flags(all_flags));
    m.wall_time_s = wall_time;
    return m;
}

inline void write_diag_csv(const std::string& path, const std::vector<DiagPoint>& points) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "epoch,distance_sum,union_loss,clean_loss,loss_gap\n";
    for (std::size_t i = 0; i < points.size(); ++i)
        out << i << "," << format_sig6(points[i].distance_sum) << "," << format_sig6(points[i].union_loss)
            << "," << format_sig6(points[i].clean_loss) << ","
            << format_sig6(points[i].union_loss - points[i].clean_loss) << "\n";
}

} // namespace rundetail

// Full CAR timeline: initial training at the first introduction time, then
// one fine-tune (or train-from-scratch) stage per later introduction, each
// followed by evaluation against every scheduled attack, a checkpoint, and a
// CSV row. Deterministic given the config seed, except for wall_time_s under
// the real clock.
inline RunOutput run_schedule(const ExperimentConfig& cfg, const RunOptions& options = {}) {
    cfg.schedule.validate();
    cfg.train.validate();
    const std::string out_dir =
        options.output_dir_override.empty() ? cfg.output_dir : options.output_dir_override;
    std::filesystem::create_directories(out_dir);

    rundetail::SplitData data = rundetail::load_data(cfg);
    if (data.fit.height != cfg.dataset.height || data.fit.width != cfg.dataset.width)
        throw ConfigError({"dataset geometry mismatch"});

    // optional per-epoch loss-gap probe
    DiagProbe probe;
    const DiagProbe* probe_ptr = nullptr;
    if (cfg.diag) {
        probe.data = data.test.subset(0, std::min(cfg.diag->probe_size, data.test.size()));
        for (const ThreatModel& tm : cfg.schedule.attacks) {
            if (tm.name == cfg.diag->attack1) probe.tm1 = tm;
            if (tm.name == cfg.diag->attack2) probe.tm2 = tm;
        }
        probe.attack_steps = cfg.diag->steps;
        probe_ptr = &probe;
    }

    MlpModel model(cfg.layer_dims(), Rng(cfg.seed).child("init"));
    RunningErr running;
    running.window = cfg.train.croce_window;

    RunOutput output;
    std::vector<std::string> rows;
    const std::vector<int> times = cfg.schedule.introduction_times();
    for (std::size_t step_idx = 0; step_idx < times.size(); ++step_idx) {
        const int t = times[step_idx];
        const std::vector<ThreatModel> known = cfg.schedule.known_at(t);
        const double t0 = options.clock();

        Rng step_rng = Rng(cfg.seed).child("fit").child(std::uint64_t(t));
        FitResult fitres;
        if (is_scratch(cfg.train.strategy)) {
            // retrain from scratch on K(t) every time the knowledge set grows
            model = MlpModel(cfg.layer_dims(), Rng(cfg.seed).child("init"));
            FitPhase phase;
            phase.known = known;
            phase.strategy = cfg.train.strategy;
            phase.epochs = cfg.train.epochs_initial;
            phase.lr = cfg.train.base_lr_initial;
            phase.multistep_lr = true;
            phase.diag = probe_ptr;
            fitres = fit(model, data.fit, data.holdout, phase, cfg.train, step_rng);
        } else if (step_idx == 0) {
            fitres = train_initial(model, data.fit, data.holdout, known.front(), cfg.train, step_rng,
                                   probe_ptr);
        } else {
            fitres = finetune_step(model, data.fit, data.holdout, known, cfg.train, step_rng, &running,
                                   probe_ptr);
        }
        model = fitres.best_model.clone(); // continue the timeline from E*

        const double wall = options.clock() - t0;
        TimeStepOutput step;
        step.time_step = t;
        step.best_epoch = fitres.best_epoch;
        step.diagnostics = fitres.diagnostics;
        step.metrics = rundetail::metrics_for(cfg, model, t, data.test, options.workers, wall);

        char name[64];
        std::snprintf(name, sizeof(name), "checkpoint_t%03d.txt", t);
        step.checkpoint_path = out_dir + "/" + name;
        CheckpointMeta meta;
        meta.seed = cfg.seed;
        meta.epoch = fitres.best_epoch;
        meta.time_step = t;
        model.save_checkpoint(step.checkpoint_path, meta);

        if (probe_ptr && !fitres.diagnostics.empty()) {
            char dname[64];
            std::snprintf(dname, sizeof(dname), "diag_t%03d.csv", t);
            rundetail::write_diag_csv(out_dir + "/" + dname, fitres.diagnostics);
        }

        rows.push_back(csv_row(step.metrics));
        if (!options.quiet)
            std::printf("[t=%d] %s best_epoch=%d clean=%.4f union_known=%.4f union_all=%.4f (%.1fs)\n", t,
                        strategy_name(cfg.train.strategy), fitres.best_epoch, step.metrics.clean_acc,
                        step.metrics.union_known, step.metrics.union_all, wall);
        output.steps.push_back(std::move(step));
    }

    // metrics.csv, schema fixed, rows in time-step order
    std::vector<std::string> attack_names;
    for (const auto& tm : cfg.schedule.attacks) attack_names.push_back(tm.name);
    output.csv_path = out_dir + "/metrics.csv";
    {
        std::ofstream csv(output.csv_path);
        if (!csv) throw IoError("cannot write " + output.csv_path);
        csv << csv_header(attack_names) << "\n";
        for (const auto& r : rows) csv << r << "\n";
    }

    // post-hoc CAR verdicts on the 0-1 union loss over the known set
    if (cfg.car) {
        std::vector<std::pair<int, double>> losses;
        for (const auto& s : output.steps) losses.emplace_back(s.time_step, 1.0 - s.metrics.union_known);
        output.car_checks = check_car(losses, *cfg.car, cfg.schedule.introduction_times());
        if (!options.quiet)
            for (const auto& c : output.car_checks)
                std::printf("[car] t=%d union_loss=%.4f <=? %s=%.4f -> %s\n", c.time_step, c.union_loss,
                            c.binding, c.threshold, car_verdict_name(c.verdict));
    }
    return output;
}

} // namespace crtlab
