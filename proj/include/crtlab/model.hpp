#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "crtlab/common.hpp"
#include "crtlab/oracle.hpp"
#include "crtlab/rng.hpp"
#include "crtlab/tensor.hpp"

namespace crtlab {

class CheckpointCorruptError : public IoError {
public:
    using IoError::IoError;
};

class CheckpointVersionError : public IoError {
public:
    using IoError::IoError;
};

class CheckpointDimError : public IoError {
public:
    using IoError::IoError;
};

struct CheckpointMeta {
    int format_version = 1;
    std::uint64_t seed = 0;
    int epoch = 0;
    int time_step = 0;
};

// ReLU MLP classifier with an explicitly linear final layer:
//   h(x) = g(x) W_last + b_last, g = post-activation penultimate output.
// Weight l is [fan_in, fan_out] so a batch [n,d] flows as x W + b.
class MlpModel {
public:
    MlpModel() = default;

    // Per-layer uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    MlpModel(std::vector<std::size_t> layer_dims, Rng rng) : dims_(std::move(layer_dims)) {
        if (dims_.size() < 2) throw Error("MlpModel: need at least input and output dims");
        for (std::size_t d : dims_)
            if (d == 0) throw Error("MlpModel: zero-sized layer");
        for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
            const std::size_t fan_in = dims_[l], fan_out = dims_[l + 1];
            const double bound = 1.0 / std::sqrt(double(fan_in));
            std::vector<double> w(fan_in * fan_out), b(fan_out);
            for (double& v : w) v = rng.uniform(-bound, bound);
            for (double& v : b) v = rng.uniform(-bound, bound);
            weights_.emplace_back(Shape{fan_in, fan_out}, std::move(w), true);
            biases_.emplace_back(Shape{fan_out}, std::move(b), true);
        }
    }

    static MlpModel from_parameters(std::vector<std::size_t> layer_dims, std::vector<Tensor> weights,
                                    std::vector<Tensor> biases) {
        MlpModel m;
        m.dims_ = std::move(layer_dims);
        m.weights_ = std::move(weights);
        m.biases_ = std::move(biases);
        if (m.weights_.size() + 1 != m.dims_.size() || m.biases_.size() != m.weights_.size())
            throw Error("MlpModel::from_parameters: layer count mismatch");
        for (std::size_t l = 0; l < m.weights_.size(); ++l) {
            if (m.weights_[l].shape() != Shape{m.dims_[l], m.dims_[l + 1]} ||
                m.biases_[l].shape() != Shape{m.dims_[l + 1]})
                throw Error("MlpModel::from_parameters: parameter shape mismatch at layer " + std::to_string(l));
        }
        return m;
    }

    const std::vector<std::size_t>& layer_dims() const { return dims_; }
    std::size_t input_dim() const { return dims_.front(); }
    std::size_t num_classes() const { return dims_.back(); }
    std::size_t num_layers() const { return weights_.size(); }

    Tensor& weight(std::size_t l) { return weights_.at(l); }
    const Tensor& weight(std::size_t l) const { return weights_.at(l); }
    Tensor& bias(std::size_t l) { return biases_.at(l); }
    const Tensor& bias(std::size_t l) const { return biases_.at(l); }
    const Tensor& final_weight() const { return weights_.back(); }

    std::vector<Tensor> parameters() {
        std::vector<Tensor> out;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            out.push_back(weights_[l]);
            out.push_back(biases_[l]);
        }
        return out;
    }

    void zero_grads() {
        for (auto& w : weights_) w.zero_grad();
        for (auto& b : biases_) b.zero_grad();
    }

    void set_requires_grad(bool b) {
        for (auto& w : weights_) w.set_requires_grad(b);
        for (auto& bi : biases_) bi.set_requires_grad(b);
    }

    bool params_require_grad() const { return weights_.front().requires_grad(); }

    // Deep copy: fresh payloads, grads dropped.
    MlpModel clone() const {
        MlpModel m;
        m.dims_ = dims_;
        for (const auto& w : weights_) m.weights_.push_back(w.clone());
        for (const auto& b : biases_) m.biases_.push_back(b.clone());
        return m;
    }

    Tensor forward(const Tensor& x) const { return forward_impl(x, nullptr); }

    struct LogitsAndRep {
        Tensor logits;
        Tensor representation; // post-activation penultimate output g(x)
    };

    LogitsAndRep forward_with_representation(const Tensor& x) const {
        Tensor rep;
        Tensor logits = forward_impl(x, &rep);
        return {logits, rep};
    }

    // Largest singular value of the final linear layer via power iteration.
    double final_layer_spectral_norm(int iters = 200, double tol = 1e-13) const {
        const Tensor& W = final_weight();
        const std::size_t r = W.shape()[0], k = W.shape()[1];
        const std::vector<double>& A = W.data();
        std::vector<double> v(k, 1.0 / std::sqrt(double(k)));
        std::vector<double> Av(r);
        double sigma = 0.0;
        for (int it = 0; it < iters; ++it) {
            for (std::size_t i = 0; i < r; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < k; ++j) s += A[i * k + j] * v[j];
                Av[i] = s;
            }
            double norm_av = 0.0;
            for (double x : Av) norm_av += x * x;
            norm_av = std::sqrt(norm_av);
            if (norm_av == 0.0) return 0.0;
            // v <- normalize(A^T A v)
            double norm_v = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                double s = 0.0;
                for (std::size_t i = 0; i < r; ++i) s += A[i * k + j] * Av[i];
                v[j] = s;
                norm_v += s * s;
            }
            norm_v = std::sqrt(norm_v);
            if (norm_v == 0.0) return 0.0;
            for (double& x : v) x /= norm_v;
            const double prev = sigma;
            sigma = norm_av;
            if (it > 0 && std::abs(sigma - prev) <= tol * std::max(1.0, sigma)) break;
        }
        return sigma;
    }

    // Raw weight copy for the enumeration oracles.
    oracle::MlpWeights export_weights() const {
        oracle::MlpWeights w;
        w.dims = dims_;
        for (const auto& t : weights_) w.weights.push_back(t.data());
        for (const auto& t : biases_) w.biases.push_back(t.data());
        return w;
    }

    void save_checkpoint(const std::string& path, const CheckpointMeta& meta) const;
    static std::pair<MlpModel, CheckpointMeta> load_checkpoint(const std::string& path);

private:
    Tensor forward_impl(const Tensor& x, Tensor* rep) const {
        if (x.rank() != 2 || x.shape()[1] != input_dim())
            throw ShapeError("MlpModel::forward: input " + shape_str(x.shape()) + " does not match model dim " +
                             std::to_string(input_dim()));
        Tensor act = x;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            Tensor z = add(matmul(act, weights_[l]), biases_[l]);
            if (l + 1 < weights_.size()) {
                act = relu(z);
            } else {
                // for a single linear layer the representation is the input
                if (rep) *rep = act;
                act = z;
            }
        }
        return act;
    }

    std::vector<std::size_t> dims_;
    std::vector<Tensor> weights_;
    std::vector<Tensor> biases_;
};

// ---------------------------------------------------------------------------
// Checkpoint format (version 1)
//
// Line-oriented text, shortest round-trip decimal for every f64 so that
// save -> load is bit-exact and files stay diffable:
//
//   crtlab-checkpoint 1
//   dims <d0> <d1> ... <dk>
//   seed <u64>  /  epoch <int>  /  time_step <int>
//   tensor w0 <fan_in> <fan_out>
//   <values on one line>
//   tensor b0 <fan_out>
//   ...
//   end
// ---------------------------------------------------------------------------

namespace detail {

inline std::string f64_to_string(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double f64_from_string(const std::string& s, const char* context) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw CheckpointCorruptError(std::string("checkpoint: bad float while reading ") + context);
    return v;
}

} // namespace detail

inline void MlpModel::save_checkpoint(const std::string& path, const CheckpointMeta& meta) const {
    std::ofstream out(path);
    if (!out) throw IoError("save_checkpoint: cannot open " + path);
    out << "crtlab-checkpoint " << meta.format_version << "\n";
    out << "dims";
    for (std::size_t d : dims_) out << " " << d;
    out << "\n";
    out << "seed " << meta.seed << "\n";
    out << "epoch " << meta.epoch << "\n";
    out << "time_step " << meta.time_step << "\n";
    auto dump = [&out](const char* tag, std::size_t l, const Tensor& t) {
        out << "tensor " << tag << l;
        for (std::size_t d : t.shape()) out << " " << d;
        out << "\n";
        const std::vector<double>& v = t.data();
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) out << " ";
            out << detail::f64_to_string(v[i]);
        }
        out << "\n";
    };
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        dump("w", l, weights_[l]);
        dump("b", l, biases_[l]);
    }
    out << "end\n";
    if (!out) throw IoError("save_checkpoint: write failed for " + path);
}

inline std::pair<MlpModel, CheckpointMeta> MlpModel::load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("load_checkpoint: cannot open " + path);
    std::string line, word;

    auto next_line = [&](const char* what) {
        if (!std::getline(in, line))
            throw CheckpointCorruptError(std::string("checkpoint: truncated before ") + what);
    };

    next_line("header");
    {
        std::istringstream h(line);
        std::string magic;
        int version = -1;
        if (!(h >> magic >> version) || magic != "crtlab-checkpoint")
            throw CheckpointCorruptError("checkpoint: bad magic line");
        if (version != 1)
            throw CheckpointVersionError("checkpoint: unsupported format version " + std::to_string(version));
    }

    CheckpointMeta meta;
    std::vector<std::size_t> dims;
    next_line("dims");
    {
        std::istringstream h(line);
        if (!(h >> word) || word != "dims") throw CheckpointCorruptError("checkpoint: missing dims line");
        std::size_t d;
        while (h >> d) dims.push_back(d);
        if (dims.size() < 2) throw CheckpointDimError("checkpoint: needs at least 2 dims");
        for (std::size_t d2 : dims)
            if (d2 == 0) throw CheckpointDimError("checkpoint: zero layer dim");
    }
    auto read_kv = [&](const char* key, auto& value) {
        next_line(key);
        std::istringstream h(line);
        if (!(h >> word) || word != key || !(h >> value))
            throw CheckpointCorruptError(std::string("checkpoint: missing ") + key + " line");
    };
    read_kv("seed", meta.seed);
    read_kv("epoch", meta.epoch);
    read_kv("time_step", meta.time_step);

    std::vector<Tensor> weights, biases;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        for (int which = 0; which < 2; ++which) {
            const bool is_weight = which == 0;
            const std::string expect = (is_weight ? "w" : "b") + std::to_string(l);
            next_line("tensor header");
            std::istringstream h(line);
            std::string tensor_kw, name;
            if (!(h >> tensor_kw >> name) || tensor_kw != "tensor" || name != expect)
                throw CheckpointCorruptError("checkpoint: expected tensor " + expect);
            Shape shape;
            std::size_t d;
            while (h >> d) shape.push_back(d);
            const Shape want = is_weight ? Shape{dims[l], dims[l + 1]} : Shape{dims[l + 1]};
            if (shape != want)
                throw CheckpointDimError("checkpoint: tensor " + expect + " has shape " + shape_str(shape) +
                                         ", dims imply " + shape_str(want));
            next_line("tensor values");
            std::istringstream vals(line);
            std::vector<double> v;
            v.reserve(numel(shape));
            while (vals >> word) v.push_back(detail::f64_from_string(word, expect.c_str()));
            if (v.size() != numel(shape))
                throw CheckpointCorruptError("checkpoint: tensor " + expect + " has " + std::to_string(v.size()) +
                                             " values, expected " + std::to_string(numel(shape)));
            if (is_weight)
                weights.emplace_back(shape, std::move(v), true);
            else
                biases.emplace_back(shape, std::move(v), true);
        }
    }
    next_line("end marker");
    if (line != "end") throw CheckpointCorruptError("checkpoint: missing end marker");
    return {MlpModel::from_parameters(dims, std::move(weights), std::move(biases)), meta};
}

} // namespace crtlab
