#pragma once

// Brute-force and analytic oracles used by tests and the certification mode.
// Everything here is written against plain double buffers, deliberately
// sharing no arithmetic code with the tensor/model path it cross-checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "crtlab/common.hpp"
#include "crtlab/rng.hpp"

namespace crtlab::oracle {

// Plain-loop MLP parameters: weights[l] is fan_in x fan_out row-major,
// biases[l] has fan_out entries. ReLU on all but the last layer.
struct MlpWeights {
    std::vector<std::size_t> dims; // input, hidden..., classes
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> biases;
};

// Straight-line forward for one example; returns logits and optionally the
// penultimate activation.
inline std::vector<double> mlp_logits(const MlpWeights& w, const std::vector<double>& x,
                                      std::vector<double>* representation = nullptr) {
    std::vector<double> act = x;
    const std::size_t layers = w.weights.size();
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t fan_in = w.dims[l], fan_out = w.dims[l + 1];
        std::vector<double> next(fan_out);
        for (std::size_t j = 0; j < fan_out; ++j) {
            double s = w.biases[l][j];
            for (std::size_t i = 0; i < fan_in; ++i) s += act[i] * w.weights[l][i * fan_out + j];
            next[j] = (l + 1 < layers && s < 0.0) ? 0.0 : s;
        }
        if (l + 1 == layers && representation) *representation = act;
        act = std::move(next);
    }
    return act;
}

inline double cross_entropy(const std::vector<double>& logits, int label) {
    double zmax = logits[0];
    for (double z : logits) zmax = std::max(zmax, z);
    double se = 0.0;
    for (double z : logits) se += std::exp(z - zmax);
    return std::log(se) + zmax - logits[std::size_t(label)];
}

inline double logit_l2_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

// Reference bilinear warp: x'(i,j) = sample(x, i + flow_row(i,j), j + flow_col(i,j)),
// coordinates clamped to the border.
inline std::vector<double> apply_flow(const std::vector<double>& img, std::size_t H, std::size_t W,
                                      const std::vector<double>& flow_row,
                                      const std::vector<double>& flow_col) {
    std::vector<double> out(H * W);
    for (std::size_t i = 0; i < H; ++i) {
        for (std::size_t j = 0; j < W; ++j) {
            double r = std::min(double(H - 1), std::max(0.0, double(i) + flow_row[i * W + j]));
            double c = std::min(double(W - 1), std::max(0.0, double(j) + flow_col[i * W + j]));
            std::size_t r0 = (H == 1) ? 0 : std::min(std::size_t(std::floor(r)), H - 2);
            std::size_t c0 = (W == 1) ? 0 : std::min(std::size_t(std::floor(c)), W - 2);
            std::size_t r1 = (H == 1) ? 0 : r0 + 1, c1 = (W == 1) ? 0 : c0 + 1;
            double fr = r - double(r0), fc = c - double(c0);
            out[i * W + j] = (1 - fr) * (1 - fc) * img[r0 * W + c0] + (1 - fr) * fc * img[r0 * W + c1] +
                             fr * (1 - fc) * img[r1 * W + c0] + fr * fc * img[r1 * W + c1];
        }
    }
    return out;
}

// Reference per-bin intensity shift with L uniform bins over [0,1].
inline std::vector<double> apply_intensity_shift(const std::vector<double>& x, std::size_t bins,
                                                 const std::vector<double>& shifts) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        std::size_t b = std::min(bins - 1, std::size_t(x[i] * double(bins)));
        out[i] = std::min(1.0, std::max(0.0, x[i] + shifts[b]));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Candidate enumeration
// ---------------------------------------------------------------------------

// Per-coordinate perturbation grid {-eps, -eps/2, 0, +eps/2, +eps} restricted
// to a small mask of active coordinates. Returns full perturbation vectors of
// length dim; the candidate count is exactly levels^|mask|.
inline std::vector<std::vector<double>> grid_perturbations(std::size_t dim,
                                                           const std::vector<std::size_t>& mask,
                                                           const std::vector<double>& levels) {
    for (std::size_t m : mask)
        if (m >= dim) throw Error("grid_perturbations: mask coordinate out of range");
    std::size_t count = 1;
    for (std::size_t i = 0; i < mask.size(); ++i) count *= levels.size();
    std::vector<std::vector<double>> out;
    out.reserve(count);
    std::vector<std::size_t> odometer(mask.size(), 0);
    for (std::size_t c = 0; c < count; ++c) {
        std::vector<double> delta(dim, 0.0);
        for (std::size_t i = 0; i < mask.size(); ++i) delta[mask[i]] = levels[odometer[i]];
        out.push_back(std::move(delta));
        for (std::size_t i = 0; i < odometer.size(); ++i) {
            if (++odometer[i] < levels.size()) break;
            odometer[i] = 0;
        }
    }
    return out;
}

inline std::vector<double> standard_levels(double eps) { return {-eps, -eps / 2, 0.0, eps / 2, eps}; }

// Random small mask of "active" coordinates, drawn without replacement.
inline std::vector<std::size_t> random_mask(std::size_t dim, std::size_t count, Rng& rng) {
    if (count > dim) throw Error("random_mask: more active coordinates than dimensions");
    std::vector<std::size_t> all(dim);
    for (std::size_t i = 0; i < dim; ++i) all[i] = i;
    rng.shuffle(all);
    all.resize(count);
    std::sort(all.begin(), all.end());
    return all;
}

// ---------------------------------------------------------------------------
// Brute-force maximizers
// ---------------------------------------------------------------------------

struct BruteForceResult {
    std::size_t best_index = 0;
    double best_objective = 0.0;
};

// Exhaustive argmax of `objective` over an explicit candidate list. Ties go
// to the first candidate in enumeration order.
inline BruteForceResult brute_force_max(const std::vector<std::vector<double>>& candidates,
                                        const std::function<double(const std::vector<double>&)>& objective) {
    if (candidates.empty()) throw Error("brute_force_max: empty candidate set");
    BruteForceResult r;
    r.best_objective = objective(candidates[0]);
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        double v = objective(candidates[i]);
        if (v > r.best_objective) {
            r.best_objective = v;
            r.best_index = i;
        }
    }
    return r;
}

// Exhaustive cross-entropy attack over candidate inputs.
inline BruteForceResult brute_force_attack(const MlpWeights& w, const std::vector<std::vector<double>>& candidates,
                                           int label) {
    return brute_force_max(candidates,
                           [&](const std::vector<double>& x) { return cross_entropy(mlp_logits(w, x), label); });
}

enum class RegKindOracle { alr, vr };

// Exact regularizer value for one example by enumeration:
//   ALR: max over the set of ||h(x') - h(x)||_2
//   VR : max over all ordered pairs of ||h(x') - h(x'')||_2
inline double exact_regularizer(const MlpWeights& w, const std::vector<double>& x,
                                const std::vector<std::vector<double>>& candidates, RegKindOracle kind) {
    if (candidates.empty()) throw Error("exact_regularizer: empty candidate set");
    std::vector<std::vector<double>> logits;
    logits.reserve(candidates.size());
    for (const auto& c : candidates) logits.push_back(mlp_logits(w, c));
    double best = 0.0;
    if (kind == RegKindOracle::alr) {
        const std::vector<double> ref = mlp_logits(w, x);
        for (const auto& l : logits) best = std::max(best, logit_l2_distance(l, ref));
    } else {
        for (std::size_t i = 0; i < logits.size(); ++i)
            for (std::size_t j = 0; j < logits.size(); ++j)
                best = std::max(best, logit_l2_distance(logits[i], logits[j]));
    }
    return best;
}

// ---------------------------------------------------------------------------
// Analytic oracles
// ---------------------------------------------------------------------------

// Central finite differences, O(step^2) error.
inline std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> params, double step) {
    if (!(step > 0.0)) throw Error("finite_diff_grad: step must be positive");
    std::vector<double> grad(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + step;
        const double up = f(params);
        params[i] = saved - step;
        const double down = f(params);
        params[i] = saved;
        grad[i] = (up - down) / (2.0 * step);
    }
    return grad;
}

// Largest singular value via cyclic Jacobi eigendecomposition of W^T W.
// W is rows x cols, row-major. Dense and slow on purpose: this is the oracle
// against which power iteration is checked.
inline double spectral_norm_svd(const std::vector<double>& W, std::size_t rows, std::size_t cols) {
    if (W.size() != rows * cols) throw Error("spectral_norm_svd: size mismatch");
    const std::size_t n = cols;
    std::vector<double> A(n * n, 0.0); // W^T W, symmetric PSD
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < rows; ++r) s += W[r * cols + i] * W[r * cols + j];
            A[i * n + j] = s;
        }
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += A[p * n + q] * A[p * n + q];
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = A[p * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (A[q * n + q] - A[p * n + p]) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = A[k * n + p], akq = A[k * n + q];
                    A[k * n + p] = c * akp - s * akq;
                    A[k * n + q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = A[p * n + k], aqk = A[q * n + k];
                    A[p * n + k] = c * apk - s * aqk;
                    A[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    double lmax = 0.0;
    for (std::size_t i = 0; i < n; ++i) lmax = std::max(lmax, A[i * n + i]);
    return std::sqrt(std::max(0.0, lmax));
}

} // namespace crtlab::oracle
