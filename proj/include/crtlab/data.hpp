#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "crtlab/common.hpp"
#include "crtlab/rng.hpp"
#include "crtlab/tensor.hpp"

namespace crtlab {

class IdxMagicError : public IoError {
public:
    using IoError::IoError;
};

class IdxLengthError : public IoError {
public:
    using IoError::IoError;
};

struct Dataset {
    Tensor images;              // [n, H*W], values in [0,1]
    std::vector<int> labels;    // class indices in [0,k)
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t classes = 0;
    std::string split;          // "train" / "test" / "idx"
    std::uint64_t seed = 0;

    std::size_t size() const { return labels.size(); }

    Dataset subset(std::size_t begin, std::size_t end) const {
        if (begin > end || end > size()) throw Error("Dataset::subset: bad range");
        const std::size_t d = height * width;
        std::vector<double> img((end - begin) * d);
        std::copy(images.data().begin() + begin * d, images.data().begin() + end * d, img.begin());
        Dataset out;
        out.images = Tensor({end - begin, d}, std::move(img));
        out.labels.assign(labels.begin() + begin, labels.begin() + end);
        out.height = height;
        out.width = width;
        out.classes = classes;
        out.split = split;
        out.seed = seed;
        return out;
    }
};

namespace glyphs {

constexpr std::size_t kTemplateCount = 8;

// Paints glyph `kind` into canvas[H*W] with top-left offset (r0,c0) and box
// size s. The shapes are deliberately far apart in pixel space so a small
// MLP separates them under jitter and noise.
inline void paint(std::vector<double>& canvas, std::size_t H, std::size_t W, std::size_t kind,
                  std::size_t r0, std::size_t c0, std::size_t s) {
    auto set = [&](std::size_t r, std::size_t c) {
        if (r < H && c < W) canvas[r * W + c] = 1.0;
    };
    const std::size_t mid = s / 2;
    switch (kind) {
        case 0: // horizontal bar
            for (std::size_t c = 0; c < s; ++c) {
                set(r0 + mid, c0 + c);
                set(r0 + mid - 1, c0 + c);
            }
            break;
        case 1: // vertical bar
            for (std::size_t r = 0; r < s; ++r) {
                set(r0 + r, c0 + mid);
                set(r0 + r, c0 + mid - 1);
            }
            break;
        case 2: // cross
            for (std::size_t c = 0; c < s; ++c) set(r0 + mid, c0 + c);
            for (std::size_t r = 0; r < s; ++r) set(r0 + r, c0 + mid);
            break;
        case 3: // square outline
            for (std::size_t i = 0; i < s; ++i) {
                set(r0, c0 + i);
                set(r0 + s - 1, c0 + i);
                set(r0 + i, c0);
                set(r0 + i, c0 + s - 1);
            }
            break;
        case 4: // main diagonal, 2px wide
            for (std::size_t i = 0; i < s; ++i) {
                set(r0 + i, c0 + i);
                if (i + 1 < s) set(r0 + i + 1, c0 + i);
            }
            break;
        case 5: // anti-diagonal, 2px wide
            for (std::size_t i = 0; i < s; ++i) {
                set(r0 + i, c0 + s - 1 - i);
                if (i + 1 < s) set(r0 + i + 1, c0 + s - 1 - i);
            }
            break;
        case 6: // filled center block
            for (std::size_t r = s / 4; r < s - s / 4; ++r)
                for (std::size_t c = s / 4; c < s - s / 4; ++c) set(r0 + r, c0 + c);
            break;
        case 7: // corner dots
            for (std::size_t dr = 0; dr < 2; ++dr)
                for (std::size_t dc = 0; dc < 2; ++dc) {
                    set(r0 + dr, c0 + dc);
                    set(r0 + dr, c0 + s - 1 - dc);
                    set(r0 + s - 1 - dr, c0 + dc);
                    set(r0 + s - 1 - dr, c0 + s - 1 - dc);
                }
            break;
        default:
            throw Error("glyphs::paint: unknown template");
    }
}

} // namespace glyphs

// Deterministic glyph dataset: class c draws template c at a jittered
// position, plus Gaussian pixel noise, clamped to [0,1]. Labels are assigned
// round-robin, so counts are balanced within one. The train and test splits
// draw from distinct substreams of the same seed.
inline Dataset generate_shapes(std::uint64_t seed, std::size_t n, std::size_t H, std::size_t W,
                               std::size_t k, double noise_std, const std::string& split = "train") {
    if (k == 0 || k > glyphs::kTemplateCount)
        throw Error("generate_shapes: k must be in [1," + std::to_string(glyphs::kTemplateCount) + "], got " +
                    std::to_string(k));
    if (H < 8 || W < 8) throw Error("generate_shapes: grid must be at least 8x8");
    if (noise_std < 0.0) throw Error("generate_shapes: noise_std must be >= 0");
    if (split != "train" && split != "test") throw Error("generate_shapes: split must be train or test");

    Rng rng = Rng(seed).child("data").child(split);
    const std::size_t d = H * W;
    const std::size_t box = std::min(H, W) - 4;
    std::vector<double> all(n * d, 0.0);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = i % k;
        labels[i] = int(cls);
        std::vector<double> canvas(d, 0.0);
        // jitter in [-2,2], clamped so the box stays inside the canvas
        const long max_r = long(H - box), max_c = long(W - box);
        long r0 = long(H - box) / 2 + long(rng.uniform_index(5)) - 2;
        long c0 = long(W - box) / 2 + long(rng.uniform_index(5)) - 2;
        r0 = std::clamp(r0, 0l, max_r);
        c0 = std::clamp(c0, 0l, max_c);
        glyphs::paint(canvas, H, W, cls, std::size_t(r0), std::size_t(c0), box);
        for (std::size_t p = 0; p < d; ++p) {
            double v = canvas[p];
            if (noise_std > 0.0) v += noise_std * rng.normal();
            all[i * d + p] = std::clamp(v, 0.0, 1.0);
        }
    }
    Dataset ds;
    ds.images = Tensor({n, d}, std::move(all));
    ds.labels = std::move(labels);
    ds.height = H;
    ds.width = W;
    ds.classes = k;
    ds.split = split;
    ds.seed = seed;
    return ds;
}

namespace detail {

inline std::uint32_t read_be_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw IoError(std::string("load_idx: truncated reading ") + what);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

} // namespace detail

// IDX ingestion (images magic 0x00000803, labels 0x00000801, big-endian dims,
// u8 pixels scaled to [0,1]).
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::size_t max_n) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw IoError("load_idx: cannot open " + images_path);
    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw IoError("load_idx: cannot open " + labels_path);

    const std::uint32_t img_magic = detail::read_be_u32(imgs, "image magic");
    if (img_magic != 0x00000803u)
        throw IdxMagicError("load_idx: bad image magic " + std::to_string(img_magic));
    const std::uint32_t lab_magic = detail::read_be_u32(labs, "label magic");
    if (lab_magic != 0x00000801u)
        throw IdxMagicError("load_idx: bad label magic " + std::to_string(lab_magic));

    const std::uint32_t n_img = detail::read_be_u32(imgs, "image count");
    const std::uint32_t H = detail::read_be_u32(imgs, "rows");
    const std::uint32_t W = detail::read_be_u32(imgs, "cols");
    const std::uint32_t n_lab = detail::read_be_u32(labs, "label count");
    if (n_img != n_lab)
        throw IdxLengthError("load_idx: " + std::to_string(n_img) + " images vs " + std::to_string(n_lab) +
                             " labels");

    const std::size_t n = std::min<std::size_t>(n_img, max_n);
    const std::size_t d = std::size_t(H) * W;
    std::vector<double> pixels(n * d);
    std::vector<unsigned char> row(d);
    for (std::size_t i = 0; i < n; ++i) {
        if (!imgs.read(reinterpret_cast<char*>(row.data()), std::streamsize(d)))
            throw IdxLengthError("load_idx: image data shorter than header count");
        for (std::size_t p = 0; p < d; ++p) pixels[i * d + p] = double(row[p]) / 255.0;
    }
    std::vector<int> labels(n);
    int max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        char c;
        if (!labs.get(c)) throw IdxLengthError("load_idx: label data shorter than header count");
        labels[i] = int(static_cast<unsigned char>(c));
        max_label = std::max(max_label, labels[i]);
    }
    Dataset ds;
    ds.images = Tensor({n, d}, std::move(pixels));
    ds.labels = std::move(labels);
    ds.height = H;
    ds.width = W;
    ds.classes = std::size_t(max_label) + 1;
    ds.split = "idx";
    return ds;
}

} // namespace crtlab
