#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "crtlab/model.hpp"
#include "crtlab/oracle.hpp"
#include "crtlab/rng.hpp"

using namespace crtlab;

namespace {

MlpModel zero_model(std::vector<std::size_t> dims) {
    std::vector<Tensor> w, b;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        w.push_back(Tensor::zeros({dims[l], dims[l + 1]}, true));
        b.push_back(Tensor::zeros({dims[l + 1]}, true));
    }
    return MlpModel::from_parameters(dims, std::move(w), std::move(b));
}

} // namespace

TEST_CASE("zero-weight model yields all-zero logits") {
    MlpModel m = zero_model({4, 8, 3});
    Rng rng(1);
    std::vector<double> xv(8);
    for (double& v : xv) v = rng.uniform();
    Tensor x({2, 4}, xv);
    Tensor out = m.forward(x);
    for (double v : out.data()) REQUIRE(v == 0.0);
}

TEST_CASE("identity single linear layer passes the input through") {
    std::vector<double> id(9, 0.0);
    id[0] = id[4] = id[8] = 1.0;
    MlpModel m = MlpModel::from_parameters({3, 3}, {Tensor({3, 3}, id, true)},
                                           {Tensor::zeros({3}, true)});
    Tensor x({2, 3}, {0.1, -0.2, 0.3, 1.0, 2.0, 3.0});
    Tensor out = m.forward(x);
    REQUIRE(out.data() == x.data());
    // single-layer representation is the input itself
    auto wr = m.forward_with_representation(x);
    REQUIRE(wr.representation.data() == x.data());
}

TEST_CASE("random MLP logits match the straight-line oracle forward") {
    Rng rng(77);
    MlpModel m({2, 16, 3}, rng.child("init"));
    oracle::MlpWeights w = m.export_weights();
    Rng xr = rng.child("x");
    for (int trial = 0; trial < 25; ++trial) {
        std::vector<double> x{xr.uniform(-2, 2), xr.uniform(-2, 2)};
        Tensor xt({1, 2}, x);
        const Tensor logits = m.forward(xt);
        const std::vector<double> expect = oracle::mlp_logits(w, x);
        for (std::size_t j = 0; j < 3; ++j)
            REQUIRE_THAT(logits.data()[j], Catch::Matchers::WithinAbs(expect[j], 1e-12));
    }
}

TEST_CASE("forward is a pure function of parameters and input") {
    Rng rng(3);
    MlpModel m({5, 8, 4}, rng);
    Tensor x({3, 5}, std::vector<double>(15, 0.25));
    REQUIRE(m.forward(x).data() == m.forward(x).data());
}

TEST_CASE("forward rejects wrong input dimension") {
    Rng rng(3);
    MlpModel m({5, 8, 4}, rng);
    Tensor x({2, 4}, std::vector<double>(8, 0.0));
    REQUIRE_THROWS_AS(m.forward(x), ShapeError);
}

TEST_CASE("spectral norm of scaled identity and diagonal matrices") {
    {
        std::vector<double> w(9, 0.0);
        w[0] = w[4] = w[8] = 2.0;
        MlpModel m = MlpModel::from_parameters({3, 3}, {Tensor({3, 3}, w, true)}, {Tensor::zeros({3}, true)});
        REQUIRE_THAT(m.final_layer_spectral_norm(), Catch::Matchers::WithinAbs(2.0, 1e-10));
    }
    {
        std::vector<double> w{3.0, 0.0, 0.0, 1.0};
        MlpModel m = MlpModel::from_parameters({2, 2}, {Tensor({2, 2}, w, true)}, {Tensor::zeros({2}, true)});
        REQUIRE_THAT(m.final_layer_spectral_norm(), Catch::Matchers::WithinAbs(3.0, 1e-10));
    }
    {
        MlpModel m = zero_model({3, 3});
        REQUIRE(m.final_layer_spectral_norm() == 0.0);
    }
}

TEST_CASE("power iteration matches the dense SVD oracle on random matrices") {
    Rng rng(2024);
    for (int trial = 0; trial < 30; ++trial) {
        Rng trng = rng.child(std::uint64_t(trial));
        std::vector<double> w(5 * 8);
        for (double& v : w) v = trng.uniform(-1, 1);
        MlpModel m = MlpModel::from_parameters({5, 8}, {Tensor({5, 8}, w, true)}, {Tensor::zeros({8}, true)});
        const double pi = m.final_layer_spectral_norm(500, 1e-14);
        const double svd = oracle::spectral_norm_svd(w, 5, 8);
        REQUIRE_THAT(pi, Catch::Matchers::WithinRel(svd, 1e-6));
    }
}

TEST_CASE("checkpoint round trip is bit-exact") {
    Rng rng(11);
    MlpModel m({6, 7, 3}, rng);
    CheckpointMeta meta;
    meta.seed = 999;
    meta.epoch = 42;
    meta.time_step = 2;
    const std::string path = "ckpt_roundtrip_test.txt";
    m.save_checkpoint(path, meta);
    auto [loaded, lm] = MlpModel::load_checkpoint(path);
    REQUIRE(lm.seed == meta.seed);
    REQUIRE(lm.epoch == meta.epoch);
    REQUIRE(lm.time_step == meta.time_step);
    REQUIRE(loaded.layer_dims() == m.layer_dims());
    for (std::size_t l = 0; l < m.num_layers(); ++l) {
        REQUIRE(loaded.weight(l).data() == m.weight(l).data());
        REQUIRE(loaded.bias(l).data() == m.bias(l).data());
    }
    std::remove(path.c_str());
}

TEST_CASE("truncated checkpoint raises a corrupt-file error") {
    Rng rng(12);
    MlpModel m({4, 5, 2}, rng);
    const std::string path = "ckpt_truncated_test.txt";
    m.save_checkpoint(path, CheckpointMeta{});
    std::ifstream in(path);
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(path);
    out << all.substr(0, all.size() / 2);
    out.close();
    REQUIRE_THROWS_AS(MlpModel::load_checkpoint(path), CheckpointCorruptError);
    std::remove(path.c_str());
}

TEST_CASE("future checkpoint version is rejected, not coerced") {
    const std::string path = "ckpt_version_test.txt";
    std::ofstream out(path);
    out << "crtlab-checkpoint 999\ndims 2 2\nseed 0\nepoch 0\ntime_step 0\nend\n";
    out.close();
    REQUIRE_THROWS_AS(MlpModel::load_checkpoint(path), CheckpointVersionError);
    std::remove(path.c_str());
}

TEST_CASE("checkpoint with inconsistent tensor dims is rejected") {
    Rng rng(13);
    MlpModel m({3, 2}, rng);
    const std::string path = "ckpt_dims_test.txt";
    m.save_checkpoint(path, CheckpointMeta{});
    std::ifstream in(path);
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    // claim different dims than the stored tensors
    auto pos = all.find("dims 3 2");
    REQUIRE(pos != std::string::npos);
    all.replace(pos, 8, "dims 4 2");
    std::ofstream out(path);
    out << all;
    out.close();
    REQUIRE_THROWS_AS(MlpModel::load_checkpoint(path), CheckpointDimError);
    std::remove(path.c_str());
}
