#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "crtlab/common.hpp"
#include "crtlab/metrics.hpp"
#include "crtlab/regularize.hpp"
#include "crtlab/threat.hpp"
#include "crtlab/train.hpp"

namespace crtlab {

// Carries every violation found in one pass; parse_config never stops at the
// first problem.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> violations)
        : Error(join(violations)), violations_(std::move(violations)) {}

    const std::vector<std::string>& violations() const { return violations_; }

private:
    static std::string join(const std::vector<std::string>& v) {
        std::string out = "config validation failed:";
        for (const auto& s : v) out += "\n  - " + s;
        return out;
    }
    std::vector<std::string> violations_;
};

struct DatasetSpec {
    enum class Kind { shapes, idx };
    Kind kind = Kind::shapes;
    std::size_t n_train = 2000;
    std::size_t n_test = 500;
    std::size_t height = 12;
    std::size_t width = 12;
    std::size_t classes = 4;
    double noise_std = 0.1;
    // idx ingestion
    std::string train_images, train_labels, test_images, test_labels;
    std::size_t max_n = 100000;
};

struct DiagSpec {
    std::string attack1, attack2;
    std::size_t probe_size = 128;
    int steps = 10;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "out";
    DatasetSpec dataset;
    std::vector<std::size_t> hidden{64, 64};
    KnowledgeSet schedule;
    TrainConfig train;
    std::optional<CarCriteria> car;
    std::optional<DiagSpec> diag;
    int eval_steps = kDefaultEvalSteps;

    std::vector<std::size_t> layer_dims() const {
        std::vector<std::size_t> dims{dataset.height * dataset.width};
        dims.insert(dims.end(), hidden.begin(), hidden.end());
        dims.push_back(dataset.classes);
        return dims;
    }
};

namespace configdetail {

class Validator {
public:
    explicit Validator(std::vector<std::string>& sink) : sink_(sink) {}

    void fail(const std::string& where, const std::string& what) { sink_.push_back(where + ": " + what); }

    void check_keys(const nlohmann::json& obj, const std::string& where,
                    const std::set<std::string>& allowed) {
        for (auto it = obj.begin(); it != obj.end(); ++it)
            if (!allowed.count(it.key())) fail(where + "." + it.key(), "unknown field");
    }

    template <typename T>
    T get(const nlohmann::json& obj, const std::string& where, const char* key, T fallback) {
        if (!obj.contains(key)) return fallback;
        try {
            return obj.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            fail(where + "." + key, "wrong type");
            return fallback;
        }
    }

private:
    std::vector<std::string>& sink_;
};

inline bool valid_name(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
    return true;
}

inline std::optional<AttackKind> parse_kind(const std::string& s) {
    if (s == "linf") return AttackKind::linf;
    if (s == "l2") return AttackKind::l2;
    if (s == "spatial_flow") return AttackKind::spatial_flow;
    if (s == "intensity_shift") return AttackKind::intensity_shift;
    return std::nullopt;
}

inline std::optional<Strategy> parse_strategy(const std::string& s) {
    if (s == "ft_single") return Strategy::ft_single;
    if (s == "ft_max") return Strategy::ft_max;
    if (s == "ft_croce") return Strategy::ft_croce;
    if (s == "scratch_avg") return Strategy::scratch_avg;
    if (s == "scratch_max") return Strategy::scratch_max;
    if (s == "scratch_random") return Strategy::scratch_random;
    return std::nullopt;
}

inline std::optional<RegKind> parse_reg_kind(const std::string& s) {
    if (s == "none") return RegKind::none;
    if (s == "alr") return RegKind::alr;
    if (s == "vr") return RegKind::vr;
    if (s == "ur") return RegKind::ur;
    if (s == "gr") return RegKind::gr;
    return std::nullopt;
}

} // namespace configdetail

// Parses and validates an experiment config. Every violation is collected
// and reported together with its field path.
inline ExperimentConfig parse_config_json(const nlohmann::json& root, const std::string& source) {
    using configdetail::Validator;
    std::vector<std::string> violations;
    Validator v(violations);
    ExperimentConfig cfg;

    if (!root.is_object()) {
        v.fail(source, "top level must be an object");
        throw ConfigError(violations);
    }
    v.check_keys(root, source,
                 {"seed", "output_dir", "dataset", "model", "attacks", "train", "regularizer", "car",
                  "diag", "eval_steps"});

    cfg.seed = v.get<std::uint64_t>(root, source, "seed", 0);
    cfg.output_dir = v.get<std::string>(root, source, "output_dir", "out");
    cfg.eval_steps = v.get<int>(root, source, "eval_steps", kDefaultEvalSteps);
    if (cfg.eval_steps < 0) v.fail(source + ".eval_steps", "must be >= 0");

    // dataset
    if (root.contains("dataset")) {
        const auto& d = root.at("dataset");
        const std::string where = source + ".dataset";
        v.check_keys(d, where,
                     {"kind", "n_train", "n_test", "height", "width", "classes", "noise_std",
                      "train_images", "train_labels", "test_images", "test_labels", "max_n"});
        const std::string kind = v.get<std::string>(d, where, "kind", "shapes");
        if (kind == "shapes") {
            cfg.dataset.kind = DatasetSpec::Kind::shapes;
        } else if (kind == "idx") {
            cfg.dataset.kind = DatasetSpec::Kind::idx;
        } else {
            v.fail(where + ".kind", "must be shapes or idx");
        }
        cfg.dataset.n_train = v.get<std::size_t>(d, where, "n_train", cfg.dataset.n_train);
        cfg.dataset.n_test = v.get<std::size_t>(d, where, "n_test", cfg.dataset.n_test);
        cfg.dataset.height = v.get<std::size_t>(d, where, "height", cfg.dataset.height);
        cfg.dataset.width = v.get<std::size_t>(d, where, "width", cfg.dataset.width);
        cfg.dataset.classes = v.get<std::size_t>(d, where, "classes", cfg.dataset.classes);
        cfg.dataset.noise_std = v.get<double>(d, where, "noise_std", cfg.dataset.noise_std);
        cfg.dataset.train_images = v.get<std::string>(d, where, "train_images", "");
        cfg.dataset.train_labels = v.get<std::string>(d, where, "train_labels", "");
        cfg.dataset.test_images = v.get<std::string>(d, where, "test_images", "");
        cfg.dataset.test_labels = v.get<std::string>(d, where, "test_labels", "");
        cfg.dataset.max_n = v.get<std::size_t>(d, where, "max_n", cfg.dataset.max_n);
        if (cfg.dataset.kind == DatasetSpec::Kind::shapes) {
            if (cfg.dataset.n_train < 1) v.fail(where + ".n_train", "must be >= 1");
            if (cfg.dataset.n_test < 1) v.fail(where + ".n_test", "must be >= 1");
            if (cfg.dataset.height < 8 || cfg.dataset.width < 8)
                v.fail(where, "grid must be at least 8x8");
            if (cfg.dataset.classes < 1 || cfg.dataset.classes > glyphs::kTemplateCount)
                v.fail(where + ".classes",
                       "must be in [1," + std::to_string(glyphs::kTemplateCount) + "]");
            if (cfg.dataset.noise_std < 0.0) v.fail(where + ".noise_std", "must be >= 0");
        } else {
            for (const auto& [field, value] :
                 {std::pair<const char*, const std::string*>{"train_images", &cfg.dataset.train_images},
                  {"train_labels", &cfg.dataset.train_labels},
                  {"test_images", &cfg.dataset.test_images},
                  {"test_labels", &cfg.dataset.test_labels}})
                if (value->empty()) v.fail(where + "." + field, "required for idx datasets");
        }
    }

    // model
    if (root.contains("model")) {
        const auto& m = root.at("model");
        const std::string where = source + ".model";
        v.check_keys(m, where, {"hidden"});
        cfg.hidden = v.get<std::vector<std::size_t>>(m, where, "hidden", cfg.hidden);
        if (cfg.hidden.empty()) v.fail(where + ".hidden", "needs at least one hidden layer");
        for (std::size_t h : cfg.hidden)
            if (h == 0) v.fail(where + ".hidden", "layer sizes must be positive");
    }

    // attacks
    if (!root.contains("attacks") || !root.at("attacks").is_array() || root.at("attacks").empty()) {
        v.fail(source + ".attacks", "at least one attack is required");
    } else {
        int at_zero = 0;
        std::vector<std::string> at_zero_names;
        std::set<std::string> names;
        std::size_t idx = 0;
        for (const auto& a : root.at("attacks")) {
            const std::string where = source + ".attacks[" + std::to_string(idx++) + "]";
            v.check_keys(a, where,
                         {"name", "kind", "epsilon", "steps", "step_size", "introduced_at",
                          "intensity_bins"});
            ThreatModel tm;
            tm.name = v.get<std::string>(a, where, "name", "");
            if (!configdetail::valid_name(tm.name))
                v.fail(where + ".name", "must be nonempty [A-Za-z0-9_-]");
            if (!names.insert(tm.name).second) v.fail(where + ".name", "duplicate name " + tm.name);
            const std::string kind = v.get<std::string>(a, where, "kind", "");
            if (auto k = configdetail::parse_kind(kind)) {
                tm.kind = *k;
            } else {
                v.fail(where + ".kind", "must be one of linf, l2, spatial_flow, intensity_shift");
            }
            tm.epsilon = v.get<double>(a, where, "epsilon", -1.0);
            if (tm.epsilon < 0.0) v.fail(where + ".epsilon", "must be >= 0");
            tm.steps = v.get<int>(a, where, "steps", 10);
            if (tm.steps < 0) v.fail(where + ".steps", "must be >= 0");
            tm.step_size = v.get<double>(a, where, "step_size", 0.0);
            if (tm.step_size < 0.0) v.fail(where + ".step_size", "must be >= 0");
            tm.introduced_at = v.get<int>(a, where, "introduced_at", 0);
            if (tm.introduced_at < 0) v.fail(where + ".introduced_at", "must be >= 0");
            if (tm.introduced_at == 0) {
                ++at_zero;
                at_zero_names.push_back(tm.name);
            }
            tm.intensity_bins = v.get<std::size_t>(a, where, "intensity_bins", 8);
            if (tm.kind == AttackKind::intensity_shift && tm.intensity_bins < 1)
                v.fail(where + ".intensity_bins", "must be >= 1");
            cfg.schedule.attacks.push_back(tm);
        }
        if (at_zero != 1) {
            std::string offenders;
            for (const auto& n : at_zero_names) offenders += (offenders.empty() ? "" : ", ") + n;
            v.fail(source + ".attacks", "exactly one attack must have introduced_at = 0, found " +
                                            std::to_string(at_zero) +
                                            (offenders.empty() ? "" : " (" + offenders + ")"));
        }
        std::stable_sort(cfg.schedule.attacks.begin(), cfg.schedule.attacks.end(),
                         [](const ThreatModel& a, const ThreatModel& b) {
                             return a.introduced_at < b.introduced_at;
                         });
    }

    // train
    if (root.contains("train")) {
        const auto& t = root.at("train");
        const std::string where = source + ".train";
        v.check_keys(t, where,
                     {"strategy", "epochs_initial", "epochs_finetune", "batch_size", "lr_initial",
                      "lr_finetune", "momentum", "weight_decay", "croce_window", "holdout_fraction"});
        const std::string strat = v.get<std::string>(t, where, "strategy", "ft_single");
        if (auto s = configdetail::parse_strategy(strat)) {
            cfg.train.strategy = *s;
        } else {
            v.fail(where + ".strategy",
                   "must be one of ft_single, ft_max, ft_croce, scratch_avg, scratch_max, scratch_random");
        }
        cfg.train.epochs_initial = v.get<int>(t, where, "epochs_initial", cfg.train.epochs_initial);
        cfg.train.epochs_finetune = v.get<int>(t, where, "epochs_finetune", cfg.train.epochs_finetune);
        if (cfg.train.epochs_initial < 1) v.fail(where + ".epochs_initial", "must be >= 1");
        if (cfg.train.epochs_finetune < 1) v.fail(where + ".epochs_finetune", "must be >= 1");
        cfg.train.batch_size = v.get<std::size_t>(t, where, "batch_size", cfg.train.batch_size);
        if (cfg.train.batch_size < 1) v.fail(where + ".batch_size", "must be >= 1");
        cfg.train.base_lr_initial = v.get<double>(t, where, "lr_initial", cfg.train.base_lr_initial);
        cfg.train.lr_finetune = v.get<double>(t, where, "lr_finetune", cfg.train.lr_finetune);
        if (!(cfg.train.base_lr_initial > 0.0)) v.fail(where + ".lr_initial", "must be > 0");
        if (!(cfg.train.lr_finetune > 0.0)) v.fail(where + ".lr_finetune", "must be > 0");
        cfg.train.momentum = v.get<double>(t, where, "momentum", cfg.train.momentum);
        if (cfg.train.momentum < 0.0 || cfg.train.momentum >= 1.0)
            v.fail(where + ".momentum", "must be in [0,1)");
        cfg.train.weight_decay = v.get<double>(t, where, "weight_decay", cfg.train.weight_decay);
        if (cfg.train.weight_decay < 0.0) v.fail(where + ".weight_decay", "must be >= 0");
        cfg.train.croce_window = v.get<int>(t, where, "croce_window", cfg.train.croce_window);
        if (cfg.train.croce_window < 1) v.fail(where + ".croce_window", "must be >= 1");
        cfg.train.holdout_fraction = v.get<double>(t, where, "holdout_fraction", cfg.train.holdout_fraction);
        if (cfg.train.holdout_fraction < 0.0 || cfg.train.holdout_fraction >= 1.0)
            v.fail(where + ".holdout_fraction", "must be in [0,1)");
    }
    cfg.train.seed = cfg.seed;

    // regularizer
    if (root.contains("regularizer")) {
        const auto& r = root.at("regularizer");
        const std::string where = source + ".regularizer";
        v.check_keys(r, where, {"kind", "lambda", "sigma", "inner_steps", "target"});
        const std::string kind = v.get<std::string>(r, where, "kind", "none");
        if (auto k = configdetail::parse_reg_kind(kind)) {
            cfg.train.regularizer.kind = *k;
        } else {
            v.fail(where + ".kind", "must be one of none, alr, vr, ur, gr");
        }
        cfg.train.regularizer.lambda = v.get<double>(r, where, "lambda", 0.5);
        if (cfg.train.regularizer.lambda < 0.0) v.fail(where + ".lambda", "must be >= 0");
        cfg.train.regularizer.sigma = v.get<double>(r, where, "sigma", 0.0);
        if (cfg.train.regularizer.sigma < 0.0) v.fail(where + ".sigma", "must be >= 0");
        cfg.train.regularizer.inner_steps = v.get<int>(r, where, "inner_steps", 1);
        if (cfg.train.regularizer.inner_steps < 1) v.fail(where + ".inner_steps", "must be >= 1");
        const std::string target = v.get<std::string>(r, where, "target", "logits");
        if (target == "logits") {
            cfg.train.regularizer.target = RegTarget::logits;
        } else if (target == "representation") {
            cfg.train.regularizer.target = RegTarget::representation;
        } else {
            v.fail(where + ".target", "must be logits or representation");
        }
        if ((cfg.train.regularizer.kind == RegKind::ur || cfg.train.regularizer.kind == RegKind::gr) &&
            cfg.train.regularizer.sigma == 0.0)
            v.fail(where + ".sigma", "must be > 0 for ur/gr");
    }

    // car criteria
    if (root.contains("car")) {
        const auto& c = root.at("car");
        const std::string where = source + ".car";
        v.check_keys(c, where, {"delta_known", "delta_unknown", "delta_t"});
        CarCriteria cc;
        cc.delta_known = v.get<double>(c, where, "delta_known", 0.0);
        cc.delta_unknown = v.get<double>(c, where, "delta_unknown", 0.0);
        cc.delta_t = v.get<int>(c, where, "delta_t", 1);
        if (!(0.0 < cc.delta_known && cc.delta_known < cc.delta_unknown))
            v.fail(where, "need 0 < delta_known < delta_unknown");
        if (cc.delta_t < 0) v.fail(where + ".delta_t", "must be >= 0");
        cfg.car = cc;
    }

    // diag probe
    if (root.contains("diag")) {
        const auto& d = root.at("diag");
        const std::string where = source + ".diag";
        v.check_keys(d, where, {"attack1", "attack2", "probe_size", "steps"});
        DiagSpec ds;
        ds.attack1 = v.get<std::string>(d, where, "attack1", "");
        ds.attack2 = v.get<std::string>(d, where, "attack2", "");
        ds.probe_size = v.get<std::size_t>(d, where, "probe_size", 128);
        ds.steps = v.get<int>(d, where, "steps", 10);
        if (ds.probe_size < 2) v.fail(where + ".probe_size", "must be >= 2");
        if (ds.steps < 1) v.fail(where + ".steps", "must be >= 1");
        auto has_attack = [&](const std::string& n) {
            for (const auto& tm : cfg.schedule.attacks)
                if (tm.name == n) return true;
            return false;
        };
        if (!has_attack(ds.attack1)) v.fail(where + ".attack1", "names no declared attack");
        if (!has_attack(ds.attack2)) v.fail(where + ".attack2", "names no declared attack");
        cfg.diag = ds;
    }

    if (!violations.empty()) throw ConfigError(std::move(violations));
    cfg.schedule.validate();
    cfg.train.validate();
    return cfg;
}

inline ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("parse_config: cannot open " + path);
    nlohmann::json root;
    try {
        in >> root;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError({path + ": JSON syntax error: " + e.what()});
    }
    return parse_config_json(root, path);
}

} // namespace crtlab
