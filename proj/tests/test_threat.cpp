#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "crtlab/data.hpp"
#include "crtlab/model.hpp"
#include "crtlab/oracle.hpp"
#include "crtlab/rng.hpp"
#include "crtlab/threat.hpp"

using namespace crtlab;

namespace {

MlpModel random_model(std::vector<std::size_t> dims, std::uint64_t seed) {
    return MlpModel(std::move(dims), Rng(seed).child("init"));
}

Tensor random_batch(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng = Rng(seed).child("x");
    std::vector<double> v(n * d);
    for (double& x : v) x = rng.uniform();
    return Tensor({n, d}, v);
}

std::vector<int> random_labels(std::size_t n, std::size_t k, std::uint64_t seed) {
    Rng rng = Rng(seed).child("y");
    std::vector<int> y(n);
    for (int& v : y) v = int(rng.uniform_index(k));
    return y;
}

double mean_ce(const MlpModel& m, const Tensor& x, const std::vector<int>& y) {
    return mean(softmax_cross_entropy(m.forward(x), y)).item();
}

ThreatModel make_tm(AttackKind kind, double eps, int steps = 10) {
    ThreatModel tm;
    tm.kind = kind;
    tm.name = attack_kind_name(kind);
    tm.epsilon = eps;
    tm.steps = steps;
    return tm;
}

} // namespace

TEST_CASE("epsilon=0 attacks return the input exactly") {
    MlpModel m = random_model({6, 8, 3}, 1);
    Tensor x = random_batch(4, 6, 2);
    std::vector<int> y = random_labels(4, 3, 3);
    for (AttackKind kind : {AttackKind::linf, AttackKind::l2, AttackKind::intensity_shift}) {
        AttackResult r = attack(m, x, make_tm(kind, 0.0), AttackObjective::cross_entropy(y), Rng(7));
        REQUIRE(r.x_adv.data() == x.data());
    }
    AttackResult r = attack(m, random_batch(2, 9, 4), make_tm(AttackKind::spatial_flow, 0.0),
                            AttackObjective::cross_entropy({0, 1}), Rng(7), 3, 3);
    REQUIRE(r.x_adv.data() == random_batch(2, 9, 4).data());
}

TEST_CASE("linf attack on a binary linear model reaches the FGSM corner") {
    // two-class linear model: grad direction w.r.t. x is (1-p0)(W_col1 - W_col0),
    // constant in x, so PGD with step size epsilon must land exactly on
    // clamp(x + eps * sign(grad)).
    Rng rng(42);
    const std::size_t d = 5;
    std::vector<double> w(d * 2);
    for (double& v : w) v = rng.uniform(-1, 1);
    for (std::size_t i = 0; i < d; ++i) REQUIRE(w[i * 2 + 1] != w[i * 2]); // no flat coordinates
    MlpModel m = MlpModel::from_parameters({d, 2}, {Tensor({d, 2}, w, true)}, {Tensor::zeros({2}, true)});

    const double eps = 8.0 / 255.0;
    std::vector<double> xv(d);
    for (double& v : xv) v = rng.uniform(0.2, 0.8);
    Tensor x({1, d}, xv);
    std::vector<int> y{0};

    ThreatModel tm = make_tm(AttackKind::linf, eps, 3);
    tm.step_size = eps;
    AttackResult r = attack(m, x, tm, AttackObjective::cross_entropy(y), Rng(9));

    for (std::size_t i = 0; i < d; ++i) {
        const double g = w[i * 2 + 1] - w[i * 2 + 0]; // label 0: ascent direction
        const double expect = std::clamp(xv[i] + eps * (g > 0 ? 1.0 : -1.0), 0.0, 1.0);
        REQUIRE(r.x_adv.data()[i] == expect);
    }
}

TEST_CASE("project_linf clamps coordinates and is idempotent") {
    const double eps = 8.0 / 255.0;
    std::vector<double> delta{0.1, -0.2};
    project_linf(delta, eps);
    REQUIRE(delta == std::vector<double>{eps, -eps});
    std::vector<double> again = delta;
    project_linf(again, eps);
    REQUIRE(again == delta);
    std::vector<double> feasible{0.01, -0.02};
    std::vector<double> kept = feasible;
    project_linf(kept, eps);
    REQUIRE(kept == feasible);
}

TEST_CASE("project_l2 rescales to the ball and preserves direction") {
    std::vector<double> delta{0.6, 0.8}; // norm 1
    project_l2(delta.data(), 2, 0.5);
    REQUIRE_THAT(std::hypot(delta[0], delta[1]), Catch::Matchers::WithinAbs(0.5, 1e-12));
    REQUIRE_THAT(delta[0] / delta[1], Catch::Matchers::WithinAbs(0.6 / 0.8, 1e-12));

    std::vector<double> zero{0.0, 0.0};
    project_l2(zero.data(), 2, 0.5);
    REQUIRE(zero == std::vector<double>{0.0, 0.0});
}

TEST_CASE("project_l2 returns the nearest point of the ball") {
    Rng rng(99);
    const double eps = 0.5;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> delta(4);
        for (double& v : delta) v = rng.uniform(-2, 2);
        std::vector<double> proj = delta;
        project_l2(proj.data(), proj.size(), eps);
        double dist_proj = 0.0;
        for (std::size_t i = 0; i < delta.size(); ++i)
            dist_proj += (delta[i] - proj[i]) * (delta[i] - proj[i]);
        // any sampled feasible point must be at least as far from delta
        for (int s = 0; s < 200; ++s) {
            std::vector<double> q(4);
            double norm = 0.0;
            for (double& v : q) {
                v = rng.uniform(-1, 1);
                norm += v * v;
            }
            norm = std::sqrt(norm);
            const double radius = rng.uniform(0.0, eps);
            double dist_q = 0.0;
            for (std::size_t i = 0; i < q.size(); ++i) {
                const double qi = norm > 0 ? q[i] / norm * radius : 0.0;
                dist_q += (delta[i] - qi) * (delta[i] - qi);
            }
            REQUIRE(dist_q >= dist_proj - 1e-9);
        }
    }
}

TEST_CASE("bilinear shift by one pixel with border clamp") {
    const std::size_t H = 3, W = 3;
    Rng rng(5);
    std::vector<double> img(H * W);
    for (double& v : img) v = rng.uniform();
    std::vector<double> rows(H * W), cols(H * W);
    for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
            rows[i * W + j] = double(i) + 1.0; // constant flow (1,0)
            cols[i * W + j] = double(j);
        }
    Tensor out = bilinear_sample(Tensor({1, H * W}, img), Tensor({1, H * W}, rows),
                                 Tensor({1, H * W}, cols), H, W);
    for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j)
            REQUIRE(out.data()[i * W + j] == img[std::min(i + 1, H - 1) * W + j]);
}

TEST_CASE("tensor warp agrees with the oracle flow warp") {
    const std::size_t H = 4, W = 5;
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> img(H * W), fr(H * W), fc(H * W);
        for (double& v : img) v = rng.uniform();
        for (double& v : fr) v = rng.uniform(-1.5, 1.5);
        for (double& v : fc) v = rng.uniform(-1.5, 1.5);
        std::vector<double> rows(H * W), cols(H * W);
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j) {
                rows[i * W + j] = double(i) + fr[i * W + j];
                cols[i * W + j] = double(j) + fc[i * W + j];
            }
        Tensor out = bilinear_sample(Tensor({1, H * W}, img), Tensor({1, H * W}, rows),
                                     Tensor({1, H * W}, cols), H, W);
        std::vector<double> expect = oracle::apply_flow(img, H, W, fr, fc);
        for (std::size_t p = 0; p < H * W; ++p)
            REQUIRE_THAT(out.data()[p], Catch::Matchers::WithinAbs(expect[p], 1e-12));
    }
}

TEST_CASE("intensity shift with one bin is a uniform brightness change") {
    MlpModel m = random_model({4, 6, 2}, 21);
    Tensor x = random_batch(3, 4, 22);
    std::vector<int> y = random_labels(3, 2, 23);
    ThreatModel tm = make_tm(AttackKind::intensity_shift, 0.2, 5);
    tm.intensity_bins = 1;
    AttackResult r = attack(m, x, tm, AttackObjective::cross_entropy(y), Rng(24));
    REQUIRE(r.params.size() == 1);
    REQUIRE(r.params[0].shape() == Shape{3, 1});
    for (std::size_t i = 0; i < 3; ++i) {
        const double s = r.params[0].data()[i];
        REQUIRE(std::abs(s) <= 0.2 + 1e-12);
        for (std::size_t j = 0; j < 4; ++j) {
            const double expect = std::clamp(x.data()[i * 4 + j] + s, 0.0, 1.0);
            REQUIRE_THAT(r.x_adv.data()[i * 4 + j], Catch::Matchers::WithinAbs(expect, 1e-12));
        }
    }
}

TEST_CASE("membership accepts the identity and rejects budget violations") {
    Tensor x = random_batch(2, 4, 31);
    for (AttackKind kind :
         {AttackKind::linf, AttackKind::l2, AttackKind::spatial_flow, AttackKind::intensity_shift}) {
        AttackResult same{x.detached(), {}};
        REQUIRE(membership(make_tm(kind, 0.3), x, same));
    }
    // l2 deviation 0.51 against a 0.5 budget
    std::vector<double> shifted = x.data();
    shifted[0] += 0.51;
    AttackResult r{Tensor({2, 4}, shifted), {}};
    REQUIRE_FALSE(membership(make_tm(AttackKind::l2, 0.5), x, r));
    shifted[0] = x.data()[0] + 0.49;
    AttackResult ok{Tensor({2, 4}, shifted), {}};
    REQUIRE(membership(make_tm(AttackKind::l2, 0.5), x, ok));
}

TEST_CASE("attack outputs always satisfy membership and the box constraint") {
    // 25 trials x 4 kinds x 100 examples = 10^4 fuzzed membership checks
    Rng seeds(404);
    const std::size_t batch = 100;
    for (int trial = 0; trial < 25; ++trial) {
        const std::uint64_t s = seeds.next_u64();
        MlpModel m = random_model({9, 12, 3}, s);
        Tensor x = random_batch(batch, 9, s + 1);
        std::vector<int> y = random_labels(batch, 3, s + 2);
        for (AttackKind kind :
             {AttackKind::linf, AttackKind::l2, AttackKind::spatial_flow, AttackKind::intensity_shift}) {
            ThreatModel tm = make_tm(kind, kind == AttackKind::spatial_flow ? 1.0 : 0.11, 5);
            AttackResult r = attack(m, x, tm, AttackObjective::cross_entropy(y), Rng(s + 3), 3, 3);
            REQUIRE(membership(tm, x, r));
            for (double v : r.x_adv.data()) {
                REQUIRE(v >= 0.0);
                REQUIRE(v <= 1.0);
            }
        }
    }
}

TEST_CASE("optimized attacks beat their own random start on average") {
    MlpModel m = random_model({9, 16, 4}, 77);
    Tensor x = random_batch(16, 9, 78);
    std::vector<int> y = random_labels(16, 4, 79);
    for (AttackKind kind :
         {AttackKind::linf, AttackKind::l2, AttackKind::spatial_flow, AttackKind::intensity_shift}) {
        ThreatModel tm = make_tm(kind, kind == AttackKind::spatial_flow ? 1.0 : 0.15, 0);
        Rng rng(555);
        AttackResult start = attack(m, x, tm, AttackObjective::cross_entropy(y), rng, 3, 3);
        tm.steps = 10;
        AttackResult opt = attack(m, x, tm, AttackObjective::cross_entropy(y), Rng(555), 3, 3);
        REQUIRE(mean_ce(m, opt.x_adv, y) >= mean_ce(m, start.x_adv, y));
    }
}

TEST_CASE("10-step PGD reaches most of the enumerated maximum (linf, small sample)") {
    // small preview of the acceptance-level oracle comparison
    Rng seeds(2029);
    int hits = 0;
    const int trials = 30;
    for (int trial = 0; trial < trials; ++trial) {
        const std::uint64_t s = seeds.next_u64();
        MlpModel m = random_model({4, 10, 3}, s);
        oracle::MlpWeights w = m.export_weights();
        Tensor x = random_batch(1, 4, s + 1);
        std::vector<int> y = random_labels(1, 3, s + 2);
        const double eps = 0.25;

        std::vector<std::size_t> mask{0, 1, 2, 3};
        auto grid = oracle::grid_perturbations(4, mask, oracle::standard_levels(eps));
        REQUIRE(grid.size() == 625);
        std::vector<std::vector<double>> candidates;
        for (const auto& delta : grid) {
            std::vector<double> cand = x.data();
            for (std::size_t i = 0; i < 4; ++i) cand[i] = std::clamp(cand[i] + delta[i], 0.0, 1.0);
            candidates.push_back(std::move(cand));
        }
        auto bf = oracle::brute_force_attack(w, candidates, y[0]);

        ThreatModel tm = make_tm(AttackKind::linf, eps, 10);
        tm.step_size = eps / 4.0; // traverse the whole ball within the step budget
        AttackResult r = attack(m, x, tm, AttackObjective::cross_entropy(y), Rng(s + 3));
        const double pgd = oracle::cross_entropy(oracle::mlp_logits(w, r.x_adv.data()), y[0]);
        if (pgd >= 0.95 * bf.best_objective) ++hits;
    }
    REQUIRE(hits >= int(0.9 * trials));
}

TEST_CASE("threat model validation rejects bad parameter combinations") {
    ThreatModel tm = make_tm(AttackKind::linf, -0.1);
    REQUIRE_THROWS_AS(tm.validate(), Error);
    tm = make_tm(AttackKind::l2, 0.5, -1);
    REQUIRE_THROWS_AS(tm.validate(), Error);
    tm = make_tm(AttackKind::intensity_shift, 0.1);
    tm.intensity_bins = 0;
    REQUIRE_THROWS_AS(tm.validate(), Error);
    tm = make_tm(AttackKind::linf, 8.0 / 255.0);
    REQUIRE_NOTHROW(tm.validate());
    REQUIRE(tm.effective_step_size() == 2.0 / 255.0);
    REQUIRE(make_tm(AttackKind::l2, 0.5).effective_step_size() == 0.075);
    REQUIRE(make_tm(AttackKind::spatial_flow, 1.0).effective_step_size() == 0.125);
}
