#pragma once

#include <string>
#include <vector>

#include "crtlab/common.hpp"
#include "crtlab/tensor.hpp"

namespace crtlab {

// SGD with momentum and weight decay:
//   v <- momentum * v + (grad + weight_decay * param)
//   param <- param - lr * v
struct SgdState {
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    std::vector<std::vector<double>> velocity; // matches parameter shapes, lazily sized

    SgdState() = default;
    SgdState(double lr, double mom, double wd) : learning_rate(lr), momentum(mom), weight_decay(wd) {
        validate();
    }

    void validate() const {
        if (!(learning_rate > 0.0)) throw Error("SgdState: learning_rate must be > 0");
        if (momentum < 0.0 || momentum >= 1.0) throw Error("SgdState: momentum must be in [0,1)");
        if (weight_decay < 0.0) throw Error("SgdState: weight_decay must be >= 0");
    }
};

inline void sgd_step(std::vector<Tensor>& params, SgdState& state) {
    state.validate();
    if (state.velocity.empty()) {
        state.velocity.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i)
            state.velocity[i].assign(params[i].size(), 0.0);
    }
    if (state.velocity.size() != params.size())
        throw Error("sgd_step: velocity count does not match parameter count");
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        if (!p.has_grad())
            throw Error("sgd_step: parameter " + std::to_string(i) + " has no gradient");
        std::vector<double>& v = state.velocity[i];
        if (v.size() != p.size()) throw Error("sgd_step: velocity shape mismatch at parameter " + std::to_string(i));
        const std::vector<double>& g = p.grad();
        std::vector<double>& w = p.mutable_data();
        for (std::size_t j = 0; j < w.size(); ++j) {
            v[j] = state.momentum * v[j] + (g[j] + state.weight_decay * w[j]);
            w[j] -= state.learning_rate * v[j];
        }
        require_finite(w, "sgd_step");
        p.zero_grad();
    }
}

// Multistep decay: base for the first half, /10 until 3/4, /100 after.
inline double lr_schedule(int epoch, int total_epochs, double base_lr) {
    if (epoch < 0 || epoch >= total_epochs)
        throw Error("lr_schedule: epoch " + std::to_string(epoch) + " outside [0," +
                    std::to_string(total_epochs) + ")");
    if (epoch < total_epochs / 2) return base_lr;
    if (epoch < 3 * total_epochs / 4) return base_lr / 10.0;
    return base_lr / 100.0;
}

} // namespace crtlab
