#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "crtlab/data.hpp"
#include "crtlab/metrics.hpp"
#include "crtlab/oracle.hpp"

using namespace crtlab;

namespace {

MlpModel random_model(std::vector<std::size_t> dims, std::uint64_t seed) {
    return MlpModel(std::move(dims), Rng(seed).child("init"));
}

ThreatModel make_tm(const std::string& name, AttackKind kind, double eps, int steps = 10) {
    ThreatModel tm;
    tm.name = name;
    tm.kind = kind;
    tm.epsilon = eps;
    tm.steps = steps;
    return tm;
}

MlpModel constant_class_model(std::size_t d, std::size_t k, std::size_t winner) {
    std::vector<double> b(k, 0.0);
    b[winner] = 5.0;
    return MlpModel::from_parameters({d, k}, {Tensor::zeros({d, k}, true)}, {Tensor({k}, b, true)});
}

} // namespace

TEST_CASE("epsilon=0 robust accuracy equals clean accuracy") {
    Dataset data = generate_shapes(2, 48, 8, 8, 2, 0.05, "test");
    MlpModel m = random_model({64, 12, 2}, 4);
    const double clean = fraction_true(clean_correct_flags(m, data));
    const double robust = robust_accuracy(m, make_tm("null", AttackKind::linf, 0.0), data, Rng(5));
    REQUIRE(robust == clean);
}

TEST_CASE("constant-class model has accuracy equal to the class prior under any attack") {
    Dataset data = generate_shapes(6, 60, 8, 8, 3, 0.05, "test");
    MlpModel m = constant_class_model(64, 3, 1);
    double prior = 0.0;
    for (int y : data.labels) prior += y == 1 ? 1.0 : 0.0;
    prior /= double(data.size());
    const double acc = robust_accuracy(m, make_tm("linf", AttackKind::linf, 0.1, 5), data, Rng(6));
    REQUIRE(acc == prior);
}

TEST_CASE("union accuracy of a single attack equals its robust accuracy") {
    Dataset data = generate_shapes(7, 32, 8, 8, 2, 0.05, "test");
    MlpModel m = random_model({64, 12, 2}, 8);
    ThreatModel tm = make_tm("linf", AttackKind::linf, 0.05, 5);
    REQUIRE(union_accuracy(m, {tm}, data, Rng(9)) == robust_accuracy(m, tm, data, Rng(9)));
}

TEST_CASE("union flags intersect per-attack correctness") {
    // attack A correct on {1,2}, B correct on {2,3}, n=3 -> union 1/3
    std::vector<std::vector<char>> flags{{1, 1, 0}, {0, 1, 1}};
    const auto u = union_flags(flags);
    REQUIRE(u == std::vector<char>{0, 1, 0});
    REQUIRE_THAT(fraction_true(u), Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));
}

TEST_CASE("union accuracy is bounded by each individual accuracy") {
    Dataset data = generate_shapes(10, 40, 8, 8, 2, 0.08, "test");
    Rng seeds(900);
    for (int trial = 0; trial < 5; ++trial) {
        MlpModel m = random_model({64, 16, 2}, seeds.next_u64());
        std::vector<ThreatModel> tms{make_tm("linf", AttackKind::linf, 0.06, 5),
                                     make_tm("l2", AttackKind::l2, 0.4, 5),
                                     make_tm("ints", AttackKind::intensity_shift, 0.08, 5)};
        Rng rng(seeds.next_u64());
        const double u = union_accuracy(m, tms, data, rng);
        for (const auto& tm : tms) REQUIRE(u <= robust_accuracy(m, tm, data, rng) + 1e-12);
    }
}

TEST_CASE("attack leaves the caller's model fully trainable") {
    // the search must run on a private copy: concurrent evaluation used to
    // race on the shared requires_grad flags and freeze the model for good
    Dataset data = generate_shapes(14, 40, 8, 8, 2, 0.05, "test");
    MlpModel m = random_model({64, 12, 2}, 15);
    std::vector<ThreatModel> tms{make_tm("a", AttackKind::linf, 0.05, 5),
                                 make_tm("b", AttackKind::l2, 0.3, 5),
                                 make_tm("c", AttackKind::intensity_shift, 0.06, 5)};
    (void)evaluate(m, tms, data, Rng(16), 5, 3);
    REQUIRE(m.params_require_grad());
    // a fresh training step must still record on the tape
    GradTape tape;
    Tensor loss = mean(softmax_cross_entropy(m.forward(data.images), data.labels));
    REQUIRE_NOTHROW(tape.backward(loss));
    REQUIRE(m.weight(0).has_grad());
}

TEST_CASE("evaluate fans per-attack work out to workers deterministically") {
    Dataset data = generate_shapes(11, 32, 8, 8, 2, 0.05, "test");
    MlpModel m = random_model({64, 12, 2}, 12);
    std::vector<ThreatModel> tms{make_tm("a", AttackKind::linf, 0.05, 5),
                                 make_tm("b", AttackKind::l2, 0.3, 5),
                                 make_tm("c", AttackKind::intensity_shift, 0.06, 5)};
    EvalReport serial = evaluate(m, tms, data, Rng(13), 5, 1);
    EvalReport parallel = evaluate(m, tms, data, Rng(13), 5, 3);
    REQUIRE(serial.clean == parallel.clean);
    for (std::size_t a = 0; a < tms.size(); ++a) {
        REQUIRE(serial.per_attack[a].first == parallel.per_attack[a].first);
        REQUIRE(serial.per_attack[a].second == parallel.per_attack[a].second);
    }
}

TEST_CASE("check_car applies the grace window and thresholds") {
    CarCriteria c;
    c.delta_known = 0.2;
    c.delta_unknown = 0.5;
    c.delta_t = 2;

    // all-zero losses pass every step
    auto all_zero = check_car({{0, 0.0}, {1, 0.0}, {2, 0.0}}, c, {0, 1});
    for (const auto& v : all_zero) REQUIRE(v.verdict != CarVerdict::violated);

    // loss 0.4 one step after an introduction at t=1 with delta_t=2: grace
    auto grace = check_car({{2, 0.4}}, c, {0, 1});
    REQUIRE(grace[0].verdict == CarVerdict::grace_ok);
    REQUIRE(std::string(grace[0].binding) == "delta_unknown");

    // same loss three steps after the introduction: steady bound binds
    auto late = check_car({{4, 0.4}}, c, {0, 1});
    REQUIRE(late[0].verdict == CarVerdict::violated);
    REQUIRE(std::string(late[0].binding) == "delta_known");

    auto ok_late = check_car({{4, 0.1}}, c, {0, 1});
    REQUIRE(ok_late[0].verdict == CarVerdict::steady_ok);

    CarCriteria bad;
    bad.delta_known = 0.5;
    bad.delta_unknown = 0.2;
    REQUIRE_THROWS_AS(check_car({{0, 0.0}}, bad, {0}), Error);
}

TEST_CASE("loss gap bound with identical constraint sets has lhs zero") {
    MlpModel m = random_model({3, 6, 2}, 21);
    Rng rng(22);
    std::vector<std::vector<double>> inputs{{0.2, 0.5, 0.7}};
    std::vector<int> labels{1};
    std::vector<std::vector<double>> set{{0.2, 0.5, 0.7}, {0.25, 0.45, 0.7}, {0.15, 0.55, 0.7}};
    auto r = loss_gap_bound_check(m, inputs, labels, {set}, {set});
    REQUIRE(r.lhs == 0.0);
    REQUIRE(r.rhs_distance_term >= 0.0);
    REQUIRE(r.hoeffding_d == 0.0); // cross-entropy: no Hoeffding term
}

TEST_CASE("loss gap bound with singleton sets {x} is exactly zero on both sides") {
    MlpModel m = random_model({3, 6, 2}, 23);
    std::vector<std::vector<double>> inputs{{0.3, 0.4, 0.5}};
    std::vector<int> labels{0};
    std::vector<std::vector<std::vector<double>>> cands{{{0.3, 0.4, 0.5}}};
    auto r = loss_gap_bound_check(m, inputs, labels, cands, cands);
    REQUIRE(r.lhs == 0.0);
    REQUIRE(r.rhs_distance_term == 0.0);
    auto u = union_clean_gap_check(m, inputs, labels, cands, cands);
    REQUIRE(u.lhs == 0.0);
    REQUIRE(u.rhs_distance_term == 0.0);
}

TEST_CASE("certified loss-gap inequality holds on random instances") {
    Rng seeds(24);
    for (int trial = 0; trial < 15; ++trial) {
        const std::uint64_t s = seeds.next_u64();
        MlpModel m = random_model({4, 8, 3}, s);
        Rng rng(s + 1);
        const std::size_t n = 4;
        std::vector<std::vector<double>> inputs;
        std::vector<int> labels;
        std::vector<std::vector<std::vector<double>>> c1, c2;
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> x(4);
            for (double& v : x) v = rng.uniform();
            labels.push_back(int(rng.uniform_index(3)));
            auto make_candidates = [&](double eps) {
                std::vector<std::vector<double>> out;
                auto mask = oracle::random_mask(4, 2, rng);
                for (const auto& delta : oracle::grid_perturbations(4, mask, oracle::standard_levels(eps))) {
                    std::vector<double> cand = x;
                    for (std::size_t j = 0; j < 4; ++j) cand[j] = std::clamp(cand[j] + delta[j], 0.0, 1.0);
                    out.push_back(std::move(cand));
                }
                return out;
            };
            c1.push_back(make_candidates(0.15));
            c2.push_back(make_candidates(0.3));
            inputs.push_back(std::move(x));
        }
        auto gap = loss_gap_bound_check(m, inputs, labels, c1, c2);
        REQUIRE(gap.lhs <= gap.rhs_distance_term + 1e-12);
        auto uni = union_clean_gap_check(m, inputs, labels, c1, c2);
        REQUIRE(uni.lhs <= uni.rhs_distance_term + 1e-12);
        REQUIRE(uni.lhs >= -1e-12); // union loss dominates clean loss
    }
}

TEST_CASE("hoeffding term appears for the 0-1 loss and matches the formula") {
    MlpModel m = random_model({3, 5, 2}, 25);
    std::vector<std::vector<double>> inputs{{0.1, 0.2, 0.3}, {0.4, 0.5, 0.6}};
    std::vector<int> labels{0, 1};
    std::vector<std::vector<std::vector<double>>> cands{{{0.1, 0.2, 0.3}}, {{0.4, 0.5, 0.6}}};
    const double rho = 0.05;
    auto r = loss_gap_bound_check(m, inputs, labels, cands, cands, LossKind::zero_one, rho);
    REQUIRE_THAT(r.hoeffding_d,
                 Catch::Matchers::WithinAbs(std::sqrt(std::log(rho / 2.0) / (-2.0 * 2.0)), 1e-12));
}

TEST_CASE("diagnostic-mode bound report is finite and nonnegative") {
    Dataset data = generate_shapes(30, 24, 8, 8, 2, 0.08, "test");
    MlpModel m = random_model({64, 12, 2}, 31);
    ThreatModel a = make_tm("linf", AttackKind::linf, 0.06, 5);
    ThreatModel b = make_tm("ints", AttackKind::intensity_shift, 0.08, 5);
    auto r = loss_gap_bound_diagnostic(m, a, b, data, Rng(32), 5);
    REQUIRE(std::isfinite(r.lhs));
    REQUIRE(r.lhs >= 0.0);
    REQUIRE(r.rhs_distance_term >= 0.0);
    auto z = loss_gap_bound_diagnostic(m, a, b, data, Rng(32), 5, LossKind::zero_one);
    REQUIRE(z.hoeffding_d > 0.0);
    REQUIRE(z.lhs <= 1.0);
}

TEST_CASE("representation bound: identical points give zero on both sides") {
    MlpModel m = random_model({5, 7, 3}, 26);
    Rng rng(27);
    std::vector<double> xv(10);
    for (double& v : xv) v = rng.uniform();
    Tensor x({2, 5}, xv);
    auto checks = rep_bound_check(m, x, x);
    for (const auto& c : checks) {
        REQUIRE(c.logit_distance == 0.0);
        REQUIRE(c.bound == 0.0);
    }
}

TEST_CASE("representation bound is exact for an isotropic final layer") {
    // final layer 2*I: logit distance is exactly twice the representation distance
    std::vector<double> w(9, 0.0);
    w[0] = w[4] = w[8] = 2.0;
    MlpModel m = MlpModel::from_parameters({3, 3}, {Tensor({3, 3}, w, true)}, {Tensor::zeros({3}, true)});
    Tensor a({1, 3}, {0.1, 0.2, 0.3});
    Tensor b({1, 3}, {0.3, 0.1, 0.5});
    auto checks = rep_bound_check(m, a, b);
    REQUIRE_THAT(checks[0].logit_distance, Catch::Matchers::WithinRel(checks[0].bound, 1e-12));
}

TEST_CASE("representation bound holds on random pairs") {
    Rng seeds(28);
    for (int trial = 0; trial < 20; ++trial) {
        const std::uint64_t s = seeds.next_u64();
        MlpModel m = random_model({6, 9, 4}, s);
        Rng rng(s + 1);
        std::vector<double> av(6), bv(6);
        for (double& v : av) v = rng.uniform(-1, 2);
        for (double& v : bv) v = rng.uniform(-1, 2);
        auto checks = rep_bound_check(m, Tensor({1, 6}, av), Tensor({1, 6}, bv));
        REQUIRE(checks[0].logit_distance <= checks[0].bound * (1.0 + 1e-9) + 1e-12);
    }
}

TEST_CASE("correlation diagnostic handles proportional, constant, and short series") {
    std::vector<double> xs{1.0, 2.0, 3.0, 4.0};
    std::vector<double> ys{2.0, 4.0, 6.0, 8.0};
    auto r = correlation_diagnostic(xs, ys);
    REQUIRE(r.has_value());
    REQUIRE_THAT(*r, Catch::Matchers::WithinAbs(1.0, 1e-12));

    auto anti = correlation_diagnostic(xs, {8.0, 6.0, 4.0, 2.0});
    REQUIRE_THAT(*anti, Catch::Matchers::WithinAbs(-1.0, 1e-12));

    auto flat = correlation_diagnostic(xs, {5.0, 5.0, 5.0, 5.0});
    REQUIRE_FALSE(flat.has_value());

    REQUIRE_THROWS_AS(correlation_diagnostic({1.0, 2.0}, {1.0, 2.0}), Error);
}

TEST_CASE("csv schema is fixed and prints six significant digits") {
    REQUIRE(csv_header({"linf", "flow"}) ==
            "time_step,strategy,clean,linf,flow,avg_known,union_known,avg_all,union_all,wall_time_s");
    RunMetrics m;
    m.time_step = 2;
    m.strategy = "ft_single";
    m.clean_acc = 0.987654321;
    m.per_attack = {{"linf", 0.5}, {"flow", 1.0 / 3.0}};
    m.avg_known = 0.41666666;
    m.union_known = 0.25;
    m.avg_all = 0.41666666;
    m.union_all = 0.25;
    m.wall_time_s = 12.3456789;
    REQUIRE(csv_row(m) == "2,ft_single,0.987654,0.5,0.333333,0.416667,0.25,0.416667,0.25,12.3457");
}
