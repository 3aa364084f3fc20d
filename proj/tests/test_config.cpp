#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "crtlab/config.hpp"
#include "crtlab/run.hpp"

using namespace crtlab;
using nlohmann::json;

namespace {

json minimal_config() {
    return json{{"seed", 3},
                {"output_dir", "cfgtest_out"},
                {"dataset", {{"kind", "shapes"}, {"n_train", 200}, {"n_test", 60}}},
                {"attacks", json::array({json{{"name", "linf"},
                                              {"kind", "linf"},
                                              {"epsilon", 0.05},
                                              {"steps", 3},
                                              {"introduced_at", 0}}})},
                {"train", {{"epochs_initial", 2}, {"epochs_finetune", 2}, {"batch_size", 32}}},
                {"eval_steps", 3}};
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("minimal config parses with documented defaults") {
    ExperimentConfig cfg = parse_config_json(minimal_config(), "test");
    REQUIRE(cfg.seed == 3);
    REQUIRE(cfg.hidden == std::vector<std::size_t>{64, 64});
    REQUIRE(cfg.dataset.height == 12);
    REQUIRE(cfg.dataset.classes == 4);
    REQUIRE(cfg.train.base_lr_initial == 0.1);
    REQUIRE(cfg.train.lr_finetune == 0.001);
    REQUIRE(cfg.train.momentum == 0.9);
    REQUIRE(cfg.train.weight_decay == 0.0005);
    REQUIRE(cfg.train.strategy == Strategy::ft_single);
    REQUIRE(cfg.train.regularizer.kind == RegKind::none);
    REQUIRE(cfg.schedule.attacks.size() == 1);
    REQUIRE(cfg.layer_dims() == std::vector<std::size_t>{144, 64, 64, 4});
    REQUIRE_FALSE(cfg.car.has_value());
}

TEST_CASE("two attacks at t=0 is a semantic error naming both") {
    json cfg = minimal_config();
    cfg["attacks"].push_back(
        json{{"name", "l2"}, {"kind", "l2"}, {"epsilon", 0.5}, {"introduced_at", 0}});
    try {
        parse_config_json(cfg, "test");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        REQUIRE(msg.find("linf") != std::string::npos);
        REQUIRE(msg.find("l2") != std::string::npos);
        REQUIRE(msg.find("introduced_at = 0") != std::string::npos);
    }
}

TEST_CASE("negative lambda is a range error") {
    json cfg = minimal_config();
    cfg["regularizer"] = {{"kind", "alr"}, {"lambda", -1.0}};
    try {
        parse_config_json(cfg, "test");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        REQUIRE(std::string(e.what()).find("lambda") != std::string::npos);
    }
}

TEST_CASE("validation collects every violation instead of stopping early") {
    json cfg = minimal_config();
    cfg["regularizer"] = {{"kind", "alr"}, {"lambda", -1.0}};
    cfg["train"]["batch_size"] = 0;
    cfg["attacks"][0]["epsilon"] = -0.5;
    cfg["mystery_field"] = 7;
    try {
        parse_config_json(cfg, "test");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        REQUIRE(e.violations().size() >= 4);
        const std::string msg = e.what();
        REQUIRE(msg.find("lambda") != std::string::npos);
        REQUIRE(msg.find("batch_size") != std::string::npos);
        REQUIRE(msg.find("epsilon") != std::string::npos);
        REQUIRE(msg.find("mystery_field") != std::string::npos);
    }
}

TEST_CASE("config file IO and syntax errors are distinct") {
    REQUIRE_THROWS_AS(parse_config("does_not_exist.json"), IoError);
    const std::string path = "cfgtest_bad.json";
    std::ofstream(path) << "{ not json";
    REQUIRE_THROWS_AS(parse_config(path), ConfigError);
    std::filesystem::remove(path);
}

TEST_CASE("diag block must reference declared attacks") {
    json cfg = minimal_config();
    cfg["diag"] = {{"attack1", "linf"}, {"attack2", "ghost"}};
    REQUIRE_THROWS_AS(parse_config_json(cfg, "test"), ConfigError);
}

TEST_CASE("one-attack schedule equals train_initial on the same splits") {
    ExperimentConfig cfg = parse_config_json(minimal_config(), "test");
    RunOptions opt;
    opt.quiet = true;
    opt.clock = [] { return 0.0; };
    opt.output_dir_override = "cfgtest_run";
    RunOutput out = run_schedule(cfg, opt);
    REQUIRE(out.steps.size() == 1);

    // replicate by hand: same datasets, splits, seed plumbing
    Dataset train = generate_shapes(cfg.seed, 200, 12, 12, 4, 0.1, "train");
    Dataset fit_data = train.subset(0, 180), holdout = train.subset(180, 200);
    MlpModel model(cfg.layer_dims(), Rng(cfg.seed).child("init"));
    FitResult direct = train_initial(model, fit_data, holdout, cfg.schedule.attacks[0], cfg.train,
                                     Rng(cfg.seed).child("fit").child(std::uint64_t(0)));
    auto [loaded, meta] = MlpModel::load_checkpoint(out.steps[0].checkpoint_path);
    REQUIRE(meta.epoch == direct.best_epoch);
    for (std::size_t l = 0; l < loaded.num_layers(); ++l) {
        REQUIRE(loaded.weight(l).data() == direct.best_model.weight(l).data());
        REQUIRE(loaded.bias(l).data() == direct.best_model.bias(l).data());
    }
    std::filesystem::remove_all("cfgtest_run");
}

TEST_CASE("schedule runs are byte-identical under an injected clock") {
    json base = minimal_config();
    base["attacks"].push_back(json{
        {"name", "ints"}, {"kind", "intensity_shift"}, {"epsilon", 0.08}, {"steps", 3}, {"introduced_at", 1}});
    ExperimentConfig cfg = parse_config_json(base, "test");
    RunOptions opt;
    opt.quiet = true;
    opt.clock = [] { return 0.0; };
    opt.output_dir_override = "cfgtest_det_a";
    RunOutput a = run_schedule(cfg, opt);
    opt.output_dir_override = "cfgtest_det_b";
    RunOutput b = run_schedule(cfg, opt);
    REQUIRE(slurp(a.csv_path) == slurp(b.csv_path));
    REQUIRE_FALSE(slurp(a.csv_path).empty());
    for (std::size_t i = 0; i < a.steps.size(); ++i)
        REQUIRE(slurp(a.steps[i].checkpoint_path) == slurp(b.steps[i].checkpoint_path));
    std::filesystem::remove_all("cfgtest_det_a");
    std::filesystem::remove_all("cfgtest_det_b");
}

TEST_CASE("adding a later attack does not perturb the first training stage") {
    json one = minimal_config();
    ExperimentConfig cfg_one = parse_config_json(one, "test");
    json two = minimal_config();
    two["attacks"].push_back(json{
        {"name", "ints"}, {"kind", "intensity_shift"}, {"epsilon", 0.08}, {"steps", 3}, {"introduced_at", 1}});
    ExperimentConfig cfg_two = parse_config_json(two, "test");

    RunOptions opt;
    opt.quiet = true;
    opt.clock = [] { return 0.0; };
    opt.output_dir_override = "cfgtest_sub_a";
    RunOutput a = run_schedule(cfg_one, opt);
    opt.output_dir_override = "cfgtest_sub_b";
    RunOutput b = run_schedule(cfg_two, opt);
    // the t=0 checkpoint must be identical: substreams are keyed, not positional
    REQUIRE(slurp(a.steps[0].checkpoint_path) == slurp(b.steps[0].checkpoint_path));
    std::filesystem::remove_all("cfgtest_sub_a");
    std::filesystem::remove_all("cfgtest_sub_b");
}

TEST_CASE("epsilon=0 schedules report attack accuracy equal to clean accuracy") {
    json cfg_json = minimal_config();
    cfg_json["attacks"][0]["epsilon"] = 0.0;
    ExperimentConfig cfg = parse_config_json(cfg_json, "test");
    RunOptions opt;
    opt.quiet = true;
    opt.clock = [] { return 0.0; };
    opt.output_dir_override = "cfgtest_eps0";
    RunOutput out = run_schedule(cfg, opt);
    REQUIRE(out.steps[0].metrics.per_attack[0].second == out.steps[0].metrics.clean_acc);
    REQUIRE(out.steps[0].metrics.union_known == out.steps[0].metrics.clean_acc);
    std::filesystem::remove_all("cfgtest_eps0");
}

TEST_CASE("car verdicts appear when criteria are configured") {
    json cfg_json = minimal_config();
    cfg_json["car"] = {{"delta_known", 0.3}, {"delta_unknown", 0.6}, {"delta_t", 1}};
    ExperimentConfig cfg = parse_config_json(cfg_json, "test");
    RunOptions opt;
    opt.quiet = true;
    opt.clock = [] { return 0.0; };
    opt.output_dir_override = "cfgtest_car";
    RunOutput out = run_schedule(cfg, opt);
    REQUIRE(out.car_checks.size() == out.steps.size());
    std::filesystem::remove_all("cfgtest_car");
}
