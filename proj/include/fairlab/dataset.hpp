#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "fairlab/image.hpp"
#include "fairlab/rng.hpp"

namespace fairlab {

struct Example {
    Image image;
    int class_label = -1;
    int domain_label = -1;
    std::int64_t source_index = -1;
};

using Corpus = std::vector<Example>;

enum class TransformKind { IdentityColor, Grayscale, CropUpsample, DownUpsample };

struct DomainTransform {
    TransformKind kind = TransformKind::IdentityColor;
    int parameter = 0;  // crop size c or downsample size k
};

inline DomainTransform transform_from_name(const std::string& name) {
    if (name == "grayscale") return {TransformKind::Grayscale, 0};
    if (name == "c28") return {TransformKind::CropUpsample, 28};
    if (name == "d16") return {TransformKind::DownUpsample, 16};
    if (name == "d8") return {TransformKind::DownUpsample, 8};
    if (name == "color" || name == "identity") return {TransformKind::IdentityColor, 0};
    throw std::invalid_argument("unknown domain transform: " + name);
}

// Variant transforms scale with image size the way the 32x32 originals do
// (c28 keeps 28/32 of the side, d16 halves, d8 quarters).
inline DomainTransform scaled_variant(const std::string& name, int image_size) {
    DomainTransform t = transform_from_name(name);
    if (t.kind == TransformKind::CropUpsample) t.parameter = std::max(1, image_size * 28 / 32);
    if (t.kind == TransformKind::DownUpsample)
        t.parameter = std::max(1, image_size * t.parameter / 32);
    return t;
}

struct SkewSpec {
    int n_classes = 10;
    int n_domains = 2;
    double skew = 0.95;              // rho: majority-domain fraction within a class
    double limited_fraction = 1.0;   // f, applied by limit_dataset
    std::vector<int> majority_domain;          // class -> its majority domain
    std::vector<DomainTransform> transforms;   // domain -> pixel transform
};

struct DatasetBundle {
    int image_size = 0;
    int n_classes = 0;
    int n_domains = 0;
    SkewSpec spec;
    std::vector<Example> train;
    std::vector<std::vector<Example>> test_sets;              // [domain][i]
    std::vector<std::vector<std::int64_t>> per_class_domain_counts;  // [class][domain]
};

inline std::int64_t round_half_up(double x) {
    return static_cast<std::int64_t>(std::floor(x + 0.5));
}

// ---------------------------------------------------------------------------
// Pixel transforms
// ---------------------------------------------------------------------------
inline Image apply_transform(const Image& img, const DomainTransform& t) {
    const int H = img.size;
    switch (t.kind) {
        case TransformKind::IdentityColor:
            return img;
        case TransformKind::Grayscale: {
            Image out(H);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < H; ++x) {
                    const float l = luminance_bt601(img.at(0, y, x), img.at(1, y, x), img.at(2, y, x));
                    out.at(0, y, x) = l;
                    out.at(1, y, x) = l;
                    out.at(2, y, x) = l;
                }
            return out;
        }
        case TransformKind::CropUpsample: {
            const int c = t.parameter;
            if (c > H || c < 1)
                throw std::invalid_argument("crop-upsample: crop size " + std::to_string(c) +
                                            " invalid for image size " + std::to_string(H));
            const int off = (H - c) / 2;
            Image out(H);
            for (int ch = 0; ch < 3; ++ch)
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < H; ++x)
                        out.at(ch, y, x) = img.at(ch, off + y * c / H, off + x * c / H);
            return out;
        }
        case TransformKind::DownUpsample: {
            const int k = t.parameter;
            if (k > H || k < 1)
                throw std::invalid_argument("down-upsample: size " + std::to_string(k) +
                                            " invalid for image size " + std::to_string(H));
            // Block-average to k x k, then nearest-neighbor back to H x H.
            Image small(k);
            for (int ch = 0; ch < 3; ++ch)
                for (int by = 0; by < k; ++by)
                    for (int bx = 0; bx < k; ++bx) {
                        const int y0 = by * H / k, y1 = (by + 1) * H / k;
                        const int x0 = bx * H / k, x1 = (bx + 1) * H / k;
                        float acc = 0;
                        for (int y = y0; y < y1; ++y)
                            for (int x = x0; x < x1; ++x) acc += img.at(ch, y, x);
                        small.at(ch, by, bx) = acc / static_cast<float>((y1 - y0) * (x1 - x0));
                    }
            Image out(H);
            for (int ch = 0; ch < 3; ++ch)
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < H; ++x) out.at(ch, y, x) = small.at(ch, y * k / H, x * k / H);
            return out;
        }
    }
    throw std::logic_error("apply_transform: unreachable");
}

// ---------------------------------------------------------------------------
// Binary record IO. A record is one label byte followed by three channel
// planes of size*size bytes each; with size 32 this is exactly the CIFAR-10
// binary layout (3073-byte records).
// ---------------------------------------------------------------------------
inline Corpus load_records_binary(const std::vector<std::string>& paths, int image_size = 32) {
    const std::size_t record_len = 1 + static_cast<std::size_t>(3) * image_size * image_size;
    Corpus corpus;
    std::int64_t global_index = 0;
    for (const auto& path : paths) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open dataset file: " + path);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        if (bytes.size() % record_len != 0)
            throw std::runtime_error("dataset file " + path + " length " +
                                     std::to_string(bytes.size()) + " is not a multiple of " +
                                     std::to_string(record_len));
        const std::size_t n = bytes.size() / record_len;
        for (std::size_t r = 0; r < n; ++r) {
            const unsigned char* rec = reinterpret_cast<const unsigned char*>(bytes.data()) + r * record_len;
            const int label = rec[0];
            if (label > 9)
                throw std::runtime_error("dataset file " + path + " record " + std::to_string(r) +
                                         ": label byte " + std::to_string(label) + " out of range");
            Example ex;
            ex.image = Image(image_size);
            for (std::size_t i = 0; i < record_len - 1; ++i)
                ex.image.px[i] = static_cast<float>(rec[1 + i]) / 255.0f;
            ex.class_label = label;
            ex.source_index = global_index++;
            corpus.push_back(std::move(ex));
        }
    }
    return corpus;
}

inline Corpus load_cifar10_binary(const std::vector<std::string>& paths) {
    return load_records_binary(paths, 32);
}

inline void write_records_binary(const std::string& path, const std::vector<Example>& examples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write dataset file: " + path);
    for (const auto& ex : examples) {
        const unsigned char label = static_cast<unsigned char>(ex.class_label);
        out.put(static_cast<char>(label));
        for (float v : ex.image.px) {
            const int q = static_cast<int>(std::lround(static_cast<double>(v) * 255.0));
            out.put(static_cast<char>(static_cast<unsigned char>(std::clamp(q, 0, 255))));
        }
    }
}

// ---------------------------------------------------------------------------
// Synthetic corpus: class c is a bright rectangle whose shape encodes the
// class, drawn over a noisy background. The rectangle carries a random hue,
// so color is informative but removable by grayscale while the shape signal
// survives both grayscale and the training augmentation.
// ---------------------------------------------------------------------------
struct SynthParams {
    int n_classes = 10;
    int per_class = 200;
    int image_size = 16;
    std::uint64_t seed = 1234;
    float noise_level = 0.5f;
    float tint_saturation = 0.85f;
    float lum_lo = 0.6f;  // tint luminance range
    float lum_hi = 0.8f;
};

// Class signal: rectangle dimensions, invariant to the training augmentation
// (horizontal flips keep height/width; pad-4 crops cannot clip a rectangle
// placed inside the margin). Dimensions are laid out for a 16 px canvas and
// scaled for other sizes.
inline std::pair<int, int> synth_shape_for_class(int c, int image_size) {
    // Each half of the class range (one majority-domain group each) gets a
    // graded ladder from tiny to large shapes, so difficulty is symmetric
    // across groups and the sample-count threshold varies per class.
    static constexpr int dims[16][2] = {{2, 2}, {3, 3}, {4, 4}, {3, 8}, {6, 6}, {2, 5},
                                        {5, 3}, {3, 6}, {5, 5}, {8, 5}, {2, 4}, {4, 2},
                                        {5, 8}, {2, 8}, {8, 2}, {7, 7}};
    if (c < 0 || c >= 16) throw std::invalid_argument("synth corpus supports up to 16 classes");
    const int margin = image_size / 4;
    const int usable = image_size - 2 * margin;
    auto scaled = [&](int d) { return std::max(1, d * usable / 8); };
    return {scaled(dims[c][0]), scaled(dims[c][1])};
}

inline Corpus synth_corpus(const SynthParams& p) {
    if (p.n_classes > 16) throw std::invalid_argument("synth_corpus: too many classes");
    if (p.image_size < 8) throw std::invalid_argument("synth_corpus: image size too small");
    const int margin = p.image_size / 4;
    Corpus corpus;
    corpus.reserve(static_cast<std::size_t>(p.n_classes) * p.per_class);
    std::int64_t index = 0;
    for (int c = 0; c < p.n_classes; ++c) {
        const auto [rect_h, rect_w] = synth_shape_for_class(c, p.image_size);
        for (int i = 0; i < p.per_class; ++i) {
            Prng rng = Prng::from_key({p.seed, tag("synth"), static_cast<std::uint64_t>(c),
                                       static_cast<std::uint64_t>(i)});
            Example ex;
            ex.image = Image(p.image_size);
            for (auto& v : ex.image.px) v = static_cast<float>(rng.uniform(0.0, p.noise_level));
            float r, g, b;
            hsv_to_rgb(static_cast<float>(rng.uniform()), p.tint_saturation, 1.0f, r, g, b);
            // Equalize tint luminance so the rectangle keeps a consistent
            // brightness in the grayscale domain regardless of hue.
            const float target = static_cast<float>(rng.uniform(p.lum_lo, p.lum_hi));
            const float lum = luminance_bt601(r, g, b);
            if (lum > target) {
                const float s = target / lum;
                r *= s;
                g *= s;
                b *= s;
            } else {
                const float alpha = (target - lum) / std::max(1.0f - lum, 1e-6f);
                r = alpha + (1.0f - alpha) * r;
                g = alpha + (1.0f - alpha) * g;
                b = alpha + (1.0f - alpha) * b;
            }
            // Random placement inside the margin; crops never clip the shape.
            const int y_range = p.image_size - 2 * margin - rect_h + 1;
            const int x_range = p.image_size - 2 * margin - rect_w + 1;
            const int y0 = margin + (y_range > 0 ? static_cast<int>(rng.uniform_int(y_range)) : 0);
            const int x0 = margin + (x_range > 0 ? static_cast<int>(rng.uniform_int(x_range)) : 0);
            const int y1 = std::min(y0 + rect_h, p.image_size);
            const int x1 = std::min(x0 + rect_w, p.image_size);
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) {
                    ex.image.at(0, y, x) = r;
                    ex.image.at(1, y, x) = g;
                    ex.image.at(2, y, x) = b;
                }
            ex.class_label = c;
            ex.source_index = index++;
            corpus.push_back(std::move(ex));
        }
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// Skewed dataset construction. Within each class the first round((1-rho)*k)
// examples in corpus order become the minority domain, the rest the majority;
// every image is replaced by its domain's transform. Test sets are full
// transformed copies of the test corpus, one per domain.
// ---------------------------------------------------------------------------
inline DatasetBundle build_skewed(const Corpus& train_corpus, const Corpus& test_corpus,
                                  const SkewSpec& spec) {
    if (spec.n_domains != 2) throw std::invalid_argument("build_skewed: exactly two domains supported");
    if (spec.skew < 0.5 || spec.skew > 1.0)
        throw std::invalid_argument("build_skewed: skew must lie in [0.5, 1]");
    if (static_cast<int>(spec.majority_domain.size()) != spec.n_classes ||
        static_cast<int>(spec.transforms.size()) != spec.n_domains)
        throw std::invalid_argument("build_skewed: spec tables sized wrong");

    std::vector<std::vector<std::size_t>> by_class(spec.n_classes);
    for (std::size_t i = 0; i < train_corpus.size(); ++i) {
        const int c = train_corpus[i].class_label;
        if (c < 0 || c >= spec.n_classes)
            throw std::invalid_argument("build_skewed: class label out of range");
        by_class[c].push_back(i);
    }
    const std::size_t k = by_class.empty() ? 0 : by_class[0].size();
    for (const auto& g : by_class)
        if (g.size() != k) throw std::invalid_argument("build_skewed: corpus is not class-balanced");
    if (k == 0) throw std::invalid_argument("build_skewed: empty corpus");
    if (static_cast<double>(k) * (1.0 - spec.skew) < 1.0)
        throw std::invalid_argument("build_skewed: cannot realize skew " + std::to_string(spec.skew) +
                                    " with " + std::to_string(k) + " examples per class");

    DatasetBundle bundle;
    bundle.image_size = train_corpus[0].image.size;
    bundle.n_classes = spec.n_classes;
    bundle.n_domains = spec.n_domains;
    bundle.spec = spec;
    bundle.per_class_domain_counts.assign(spec.n_classes, std::vector<std::int64_t>(spec.n_domains, 0));
    bundle.train = train_corpus;

    const std::int64_t n_minor = round_half_up((1.0 - spec.skew) * static_cast<double>(k));
    for (int c = 0; c < spec.n_classes; ++c) {
        const int major = spec.majority_domain[c];
        const int minor = 1 - major;
        for (std::size_t pos = 0; pos < by_class[c].size(); ++pos) {
            Example& ex = bundle.train[by_class[c][pos]];
            const int d = pos < static_cast<std::size_t>(n_minor) ? minor : major;
            ex.domain_label = d;
            ex.image = apply_transform(ex.image, spec.transforms[d]);
            ++bundle.per_class_domain_counts[c][d];
        }
    }

    bundle.test_sets.resize(spec.n_domains);
    for (int d = 0; d < spec.n_domains; ++d) {
        bundle.test_sets[d].reserve(test_corpus.size());
        for (const auto& ex : test_corpus) {
            Example copy = ex;
            copy.domain_label = d;
            copy.image = apply_transform(copy.image, spec.transforms[d]);
            bundle.test_sets[d].push_back(std::move(copy));
        }
    }
    return bundle;
}

// ---------------------------------------------------------------------------
// Limited-data reduction: per class keep round(f*k) examples total, selecting
// the first round(f*n_minor) minority and first (total - minority) majority
// examples in original corpus order. Test sets are untouched.
// ---------------------------------------------------------------------------
inline DatasetBundle limit_dataset(const DatasetBundle& bundle, double f) {
    if (f <= 0.0 || f > 1.0) throw std::invalid_argument("limit_dataset: fraction must be in (0, 1]");
    if (f == 1.0) return bundle;

    DatasetBundle out = bundle;
    out.train.clear();
    out.per_class_domain_counts.assign(bundle.n_classes,
                                       std::vector<std::int64_t>(bundle.n_domains, 0));

    std::vector<std::vector<const Example*>> groups(
        static_cast<std::size_t>(bundle.n_classes) * bundle.n_domains);
    std::vector<std::int64_t> class_total(bundle.n_classes, 0);
    for (const auto& ex : bundle.train) {
        groups[static_cast<std::size_t>(ex.class_label) * bundle.n_domains + ex.domain_label]
            .push_back(&ex);
        ++class_total[ex.class_label];
    }

    for (int c = 0; c < bundle.n_classes; ++c) {
        const int major = bundle.spec.majority_domain[c];
        const int minor = 1 - major;
        auto& minor_group = groups[static_cast<std::size_t>(c) * bundle.n_domains + minor];
        auto& major_group = groups[static_cast<std::size_t>(c) * bundle.n_domains + major];
        const std::int64_t total_c = round_half_up(f * static_cast<double>(class_total[c]));
        std::int64_t n_minor =
            round_half_up(f * static_cast<double>(minor_group.size()));
        if (n_minor < 1)
            std::cerr << "limit_dataset: warning: class " << c
                      << " keeps no minority examples, skew degenerates\n";
        n_minor = std::min<std::int64_t>(n_minor, static_cast<std::int64_t>(minor_group.size()));
        const std::int64_t n_major =
            std::min<std::int64_t>(total_c - n_minor, static_cast<std::int64_t>(major_group.size()));
        for (std::int64_t i = 0; i < n_minor; ++i) out.train.push_back(*minor_group[i]);
        for (std::int64_t i = 0; i < n_major; ++i) out.train.push_back(*major_group[i]);
        out.per_class_domain_counts[c][minor] = n_minor;
        out.per_class_domain_counts[c][major] = n_major;
    }
    std::sort(out.train.begin(), out.train.end(),
              [](const Example& a, const Example& b) { return a.source_index < b.source_index; });
    return out;
}

// ---------------------------------------------------------------------------
// Directory serialization: train.bin + domains.u8 sidecar, test_<d>.bin,
// counts.csv (class, domain, count).
// ---------------------------------------------------------------------------
inline void save_bundle(const DatasetBundle& bundle, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    write_records_binary(dir + "/train.bin", bundle.train);
    {
        std::ofstream dom(dir + "/domains.u8", std::ios::binary);
        for (const auto& ex : bundle.train) dom.put(static_cast<char>(ex.domain_label));
    }
    for (int d = 0; d < bundle.n_domains; ++d)
        write_records_binary(dir + "/test_" + std::to_string(d) + ".bin", bundle.test_sets[d]);
    std::ofstream counts(dir + "/counts.csv");
    counts << "class,domain,count\n";
    for (int c = 0; c < bundle.n_classes; ++c)
        for (int d = 0; d < bundle.n_domains; ++d)
            counts << c << "," << d << "," << bundle.per_class_domain_counts[c][d] << "\n";
}

}  // namespace fairlab
