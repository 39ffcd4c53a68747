#pragma once

#include "fairlab/dataset.hpp"
#include "fairlab/image.hpp"
#include "fairlab/rng.hpp"

namespace fairlab {

struct ViewPair {
    Image view1;
    Image view2;
    std::int64_t origin = -1;
};

namespace detail {

// Deterministic core of pad/flip/crop: zero-pad 4 on each side, optional
// horizontal flip, then take the H x H crop at offset (dy, dx), each in [0, 8].
inline Image pad_flip_crop_at(const Image& img, bool flip, int dy, int dx) {
    const int H = img.size;
    Image out(H);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H; ++y) {
            const int sy = y + dy - 4;
            if (sy < 0 || sy >= H) continue;  // zero padding
            for (int x = 0; x < H; ++x) {
                const int px = x + dx - 4;
                if (px < 0 || px >= H) continue;
                const int sx = flip ? H - 1 - px : px;
                out.at(c, y, x) = img.at(c, sy, sx);
            }
        }
    return out;
}

}  // namespace detail

inline Image pad_flip_crop(const Image& img, Prng& rng) {
    const bool flip = rng.bernoulli(0.5);
    const int dy = static_cast<int>(rng.uniform_int(9));
    const int dx = static_cast<int>(rng.uniform_int(9));
    return detail::pad_flip_crop_at(img, flip, dy, dx);
}

// One SimSiam-style view: pad/flip/crop, then random grayscale (p=0.2), then
// random brightness jitter (p=0.5, factor in [0.8, 1.2], clamped to [0,1]).
inline Image augment_view(const Image& img, Prng& rng) {
    Image v = pad_flip_crop(img, rng);
    if (rng.bernoulli(0.2)) v = apply_transform(v, DomainTransform{TransformKind::Grayscale, 0});
    if (rng.bernoulli(0.5)) {
        const float u = static_cast<float>(rng.uniform(0.8, 1.2));
        for (auto& p : v.px) p *= u;
        clamp01(v);
    }
    return v;
}

inline ViewPair two_views(const Image& img, Prng& rng, std::int64_t origin = -1) {
    ViewPair pair;
    pair.view1 = augment_view(img, rng);
    pair.view2 = augment_view(img, rng);
    pair.origin = origin;
    return pair;
}

// Per-example augmentation stream: independent of batch composition, so the
// epoch's augmentations replay identically after a resume.
inline Prng example_rng(std::uint64_t run_seed, int epoch, std::int64_t source_index) {
    return Prng::from_key({run_seed, tag("augment"), static_cast<std::uint64_t>(epoch),
                           static_cast<std::uint64_t>(source_index)});
}

}  // namespace fairlab
