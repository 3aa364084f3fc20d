// crt-lab: train / eval / verify / diag for the continual robust training lab.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "crtlab/config.hpp"
#include "crtlab/metrics.hpp"
#include "crtlab/model.hpp"
#include "crtlab/run.hpp"
#include "crtlab/train.hpp"
#include "crtlab/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitConfigError = 2;
constexpr int kExitIoError = 3;
constexpr int kExitInternalError = 4;

int cmd_train(const std::string& config_path, const std::string& out_dir, int workers,
              bool fixed_clock) {
    crtlab::ExperimentConfig cfg = crtlab::parse_config(config_path);
    crtlab::RunOptions opt;
    opt.output_dir_override = out_dir;
    opt.workers = workers;
    if (fixed_clock) opt.clock = [] { return 0.0; };
    crtlab::RunOutput out = crtlab::run_schedule(cfg, opt);
    std::printf("wrote %s (%zu time steps)\n", out.csv_path.c_str(), out.steps.size());
    for (const auto& c : out.car_checks)
        if (c.verdict == crtlab::CarVerdict::violated) return kExitCheckFailed;
    return kExitOk;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint, const std::string& out_dir,
             int workers) {
    crtlab::ExperimentConfig cfg = crtlab::parse_config(config_path);
    auto [model, meta] = crtlab::MlpModel::load_checkpoint(checkpoint);
    if (model.layer_dims() != cfg.layer_dims())
        throw crtlab::ConfigError({"checkpoint dims do not match the config's model"});

    crtlab::Dataset test;
    if (cfg.dataset.kind == crtlab::DatasetSpec::Kind::shapes) {
        test = crtlab::generate_shapes(cfg.seed, cfg.dataset.n_test, cfg.dataset.height,
                                       cfg.dataset.width, cfg.dataset.classes, cfg.dataset.noise_std,
                                       "test");
    } else {
        test = crtlab::load_idx(cfg.dataset.test_images, cfg.dataset.test_labels, cfg.dataset.max_n);
    }
    crtlab::RunMetrics m = crtlab::rundetail::metrics_for(cfg, model, meta.time_step, test, workers, 0.0);
    std::vector<std::string> names;
    for (const auto& tm : cfg.schedule.attacks) names.push_back(tm.name);
    std::printf("%s\n%s\n", crtlab::csv_header(names).c_str(), crtlab::csv_row(m).c_str());
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream csv(out_dir + "/eval.csv");
        if (!csv) throw crtlab::IoError("cannot write " + out_dir + "/eval.csv");
        csv << crtlab::csv_header(names) << "\n" << crtlab::csv_row(m) << "\n";
    }
    return kExitOk;
}

int cmd_verify(std::uint64_t seed, bool quick) {
    auto results = crtlab::verify::run_all(seed, quick);
    bool all_pass = true;
    for (const auto& r : results) {
        std::printf("[%s] %s: %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
        all_pass = all_pass && r.pass;
    }
    return all_pass ? kExitOk : kExitCheckFailed;
}

int cmd_diag(const std::string& config_path, std::vector<std::string> checkpoints,
             const std::string& out_path) {
    crtlab::ExperimentConfig cfg = crtlab::parse_config(config_path);
    if (checkpoints.size() == 1 && std::filesystem::is_directory(checkpoints[0])) {
        std::vector<std::string> found;
        for (const auto& e : std::filesystem::directory_iterator(checkpoints[0])) {
            const std::string name = e.path().filename().string();
            if (name.rfind("checkpoint_", 0) == 0 && e.path().extension() == ".txt")
                found.push_back(e.path().string());
        }
        std::sort(found.begin(), found.end());
        checkpoints = std::move(found);
    }
    if (checkpoints.size() < 3)
        throw crtlab::Error("diag: need at least 3 checkpoints for a correlation, got " +
                            std::to_string(checkpoints.size()));

    // attack pair: explicit diag block, else the first two scheduled attacks
    crtlab::ThreatModel tm1, tm2;
    int steps = 10;
    std::size_t probe_n = 128;
    if (cfg.diag) {
        for (const auto& tm : cfg.schedule.attacks) {
            if (tm.name == cfg.diag->attack1) tm1 = tm;
            if (tm.name == cfg.diag->attack2) tm2 = tm;
        }
        steps = cfg.diag->steps;
        probe_n = cfg.diag->probe_size;
    } else {
        if (cfg.schedule.attacks.size() < 2)
            throw crtlab::ConfigError({"diag: need a diag block or at least two scheduled attacks"});
        tm1 = cfg.schedule.attacks[0];
        tm2 = cfg.schedule.attacks[1];
    }

    crtlab::Dataset test;
    if (cfg.dataset.kind == crtlab::DatasetSpec::Kind::shapes) {
        test = crtlab::generate_shapes(cfg.seed, cfg.dataset.n_test, cfg.dataset.height,
                                       cfg.dataset.width, cfg.dataset.classes, cfg.dataset.noise_std,
                                       "test");
    } else {
        test = crtlab::load_idx(cfg.dataset.test_images, cfg.dataset.test_labels, cfg.dataset.max_n);
    }
    crtlab::DiagProbe probe;
    probe.data = test.subset(0, std::min(probe_n, test.size()));
    probe.tm1 = tm1;
    probe.tm2 = tm2;
    probe.attack_steps = steps;

    std::vector<double> dist, gap;
    std::string csv = "checkpoint,distance_sum,union_loss,clean_loss,loss_gap\n";
    for (std::size_t i = 0; i < checkpoints.size(); ++i) {
        auto [model, meta] = crtlab::MlpModel::load_checkpoint(checkpoints[i]);
        crtlab::DiagPoint p = crtlab::detail::diag_probe_point(
            model, probe, crtlab::Rng(cfg.seed).child("attack").child("diag").child(i));
        dist.push_back(p.distance_sum);
        gap.push_back(p.union_loss - p.clean_loss);
        csv += checkpoints[i] + "," + crtlab::format_sig6(p.distance_sum) + "," +
               crtlab::format_sig6(p.union_loss) + "," + crtlab::format_sig6(p.clean_loss) + "," +
               crtlab::format_sig6(p.union_loss - p.clean_loss) + "\n";
    }
    auto r = crtlab::correlation_diagnostic(dist, gap);
    std::printf("%s", csv.c_str());
    if (r) {
        std::printf("pearson_r %.6f\n", *r);
    } else {
        std::printf("pearson_r undefined (zero-variance series)\n");
    }
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        if (!out) throw crtlab::IoError("cannot write " + out_path);
        out << csv;
        if (r)
            out << "pearson_r," << crtlab::format_sig6(*r) << "\n";
        else
            out << "pearson_r,undefined\n";
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continual robust training laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_dir, checkpoint, diag_out;
    std::vector<std::string> checkpoints;
    int workers = 1;
    bool fixed_clock = false, quick = false;
    std::uint64_t verify_seed = 1;

    CLI::App* train = app.add_subcommand("train", "run the full attack schedule");
    train->add_option("--config", config_path, "experiment config (JSON)")->required();
    train->add_option("--out", out_dir, "output directory override");
    train->add_option("--workers", workers, "evaluation parallelism");
    train->add_flag("--fixed-clock", fixed_clock,
                    "report wall_time_s as 0 for byte-reproducible CSV output");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint against the config's attacks");
    eval->add_option("--config", config_path, "experiment config (JSON)")->required();
    eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval->add_option("--out", out_dir, "output directory for eval.csv");
    eval->add_option("--workers", workers, "evaluation parallelism");

    CLI::App* verify = app.add_subcommand("verify", "run the oracle certification suites");
    verify->add_option("--seed", verify_seed, "seed for the random instances");
    verify->add_flag("--quick", quick, "smaller instance counts");

    CLI::App* diag = app.add_subcommand("diag", "loss-gap vs logit-distance history for checkpoints");
    diag->add_option("--config", config_path, "experiment config (JSON)")->required();
    diag->add_option("--checkpoints", checkpoints, "checkpoint files or one directory")->required();
    diag->add_option("--out", diag_out, "CSV output path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(config_path, out_dir, workers, fixed_clock);
        if (eval->parsed()) return cmd_eval(config_path, checkpoint, out_dir, workers);
        if (verify->parsed()) return cmd_verify(verify_seed, quick);
        if (diag->parsed()) return cmd_diag(config_path, checkpoints, diag_out);
    } catch (const crtlab::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfigError;
    } catch (const crtlab::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kExitIoError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInternalError;
    }
    return kExitInternalError;
}
