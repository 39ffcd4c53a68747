#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "fairlab/image.hpp"
#include "fairlab/losses.hpp"
#include "fairlab/ops.hpp"
#include "fairlab/optim.hpp"
#include "fairlab/rng.hpp"

namespace fairlab {

enum class BackboneKind { SmallConv, Mlp };

struct BackboneConfig {
    BackboneKind kind = BackboneKind::SmallConv;
    std::vector<int> widths = {8, 16, 32};
    int image_size = 16;
    int in_channels = 3;

    int feature_dim() const {
        if (kind == BackboneKind::Mlp) return widths.back();
        int side = image_size;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            if (side % 2 != 0)
                throw std::invalid_argument("backbone: image size not divisible by pooling stages");
            side /= 2;
        }
        return widths.back() * side * side;
    }
};

enum class ClsHeadKind { Nway, NDway, PerDomain };

struct HeadConfig {
    ClsHeadKind cls = ClsHeadKind::Nway;
    int n_classes = 10;
    int n_domains = 2;
    bool simsiam = false;
    int proj_dim = 128;  // projector width P; predictor bottleneck is P/4
    bool domain_head = false;
};

template <typename T>
struct Linear {
    Tensor<T> w;  // [in x out]
    Tensor<T> b;  // [out]
    Tensor<T> forward(const Tensor<T>& x) const { return add(matmul(x, w), b); }
};

template <typename T>
struct BatchNormLayer {
    Tensor<T> gamma, beta;
    Tensor<T> running_mean, running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);
    Tensor<T> forward(const Tensor<T>& x, bool training) {
        return batchnorm1d(x, gamma, beta, running_mean, running_var, momentum, eps, training);
    }
};

template <typename T>
struct ConvLayer {
    Tensor<T> w;  // [oc x ic x 3 x 3]
    Tensor<T> b;  // [oc]
};

// ---------------------------------------------------------------------------
// Model: shared backbone plus the head set a strategy needs. The classifier
// is one N-way layer, one joint (N*D)-way layer, or D independent N-way
// layers over shared features. SimSiam projector/predictor and the domain
// head are attached only when configured.
// ---------------------------------------------------------------------------
template <typename T>
class Model {
public:
    BackboneConfig backbone_cfg;
    HeadConfig head_cfg;

    static Model init(const BackboneConfig& bc, const HeadConfig& hc, std::uint64_t seed) {
        Model m;
        m.backbone_cfg = bc;
        m.head_cfg = hc;
        int ordinal = 0;
        auto next_rng = [&]() { return Prng::from_key({seed, tag("init"), static_cast<std::uint64_t>(ordinal++)}); };
        auto he_uniform = [&](Shape shape, int fan_in) {
            Tensor<T> t = Tensor<T>::zeros(std::move(shape), true);
            Prng rng = next_rng();
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
            for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
            return t;
        };
        auto make_linear = [&](int in, int out) {
            Linear<T> l;
            l.w = he_uniform({in, out}, in);
            l.b = Tensor<T>::zeros({out}, true);
            return l;
        };
        auto make_bn = [&](int width) {
            BatchNormLayer<T> bn;
            bn.gamma = Tensor<T>::full({width}, T(1), true);
            bn.beta = Tensor<T>::zeros({width}, true);
            bn.running_mean = Tensor<T>::zeros({width});
            bn.running_var = Tensor<T>::full({width}, T(1));
            return bn;
        };

        if (bc.kind == BackboneKind::SmallConv) {
            if (bc.widths.size() < 2 || bc.widths.size() > 4)
                throw std::invalid_argument("backbone: small-conv takes 2-4 stages");
            int ic = bc.in_channels;
            for (int oc : bc.widths) {
                ConvLayer<T> conv;
                conv.w = he_uniform({oc, ic, 3, 3}, ic * 9);
                conv.b = Tensor<T>::zeros({oc}, true);
                m.convs_.push_back(std::move(conv));
                ic = oc;
            }
        } else {
            int in = bc.in_channels * bc.image_size * bc.image_size;
            for (int out : bc.widths) {
                m.mlp_.push_back(make_linear(in, out));
                in = out;
            }
        }

        const int F = bc.feature_dim();
        const int head_out = hc.cls == ClsHeadKind::NDway ? hc.n_classes * hc.n_domains : hc.n_classes;
        const int n_heads = hc.cls == ClsHeadKind::PerDomain ? hc.n_domains : 1;
        for (int h = 0; h < n_heads; ++h) m.cls_heads_.push_back(make_linear(F, head_out));

        if (hc.simsiam) {
            const int P = hc.proj_dim;
            int in = F;
            for (int layer = 0; layer < 3; ++layer) {
                m.proj_.push_back(make_linear(in, P));
                m.proj_bn_.push_back(make_bn(P));
                in = P;
            }
            const int bottleneck = std::max(1, P / 4);
            m.pred_.push_back(make_linear(P, bottleneck));
            m.pred_bn_ = make_bn(bottleneck);
            m.pred_.push_back(make_linear(bottleneck, P));
            // A ReLU-dead bottleneck row must not produce an exactly-zero
            // prediction; the cosine target loss rejects zero-norm rows.
            std::fill(m.pred_.back().b.values().begin(), m.pred_.back().b.values().end(), T(0.01));
        }
        if (hc.domain_head) m.domain_head_ = make_linear(F, hc.n_domains);
        return m;
    }

    void set_training(bool on) { training_ = on; }
    bool training() const { return training_; }

    // Backbone features [B x F].
    Tensor<T> features(const Tensor<T>& batch) {
        if (backbone_cfg.kind == BackboneKind::SmallConv) {
            Tensor<T> h = batch;
            for (auto& conv : convs_) h = avgpool2d(relu(conv2d(h, conv.w, conv.b)), 2);
            return flatten(h);
        }
        Tensor<T> h = flatten(batch);
        for (auto& l : mlp_) h = relu(l.forward(h));
        return h;
    }

    // One logits tensor per classifier head (one entry unless PerDomain).
    std::vector<Tensor<T>> head_logits(const Tensor<T>& feats) {
        std::vector<Tensor<T>> out;
        for (auto& head : cls_heads_) out.push_back(head.forward(feats));
        return out;
    }

    // The logit block distillation matches: the one head for N-way/ND-way,
    // per-domain heads concatenated.
    Tensor<T> logits_block(const Tensor<T>& feats) {
        auto heads = head_logits(feats);
        Tensor<T> block = heads[0];
        for (std::size_t i = 1; i < heads.size(); ++i) block = concat_cols(block, heads[i]);
        return block;
    }

    Tensor<T> project(const Tensor<T>& feats) {
        if (proj_.empty()) throw std::runtime_error("model has no projector head");
        Tensor<T> h = feats;
        for (std::size_t i = 0; i < proj_.size(); ++i)
            h = relu(proj_bn_[i].forward(proj_[i].forward(h), training_));
        return h;
    }

    Tensor<T> predict_head(const Tensor<T>& z) {
        if (pred_.empty()) throw std::runtime_error("model has no predictor head");
        Tensor<T> h = relu(pred_bn_.forward(pred_[0].forward(z), training_));
        return pred_[1].forward(h);
    }

    Tensor<T> domain_logits(const Tensor<T>& feats) {
        if (!domain_head_) throw std::runtime_error("model has no domain head");
        return domain_head_->forward(feats);
    }

    bool has_simsiam() const { return !proj_.empty(); }
    bool has_domain_head() const { return domain_head_.has_value(); }
    int n_cls_heads() const { return static_cast<int>(cls_heads_.size()); }

    std::vector<NamedParam<T>> parameters() {
        std::vector<NamedParam<T>> out;
        auto push = [&](const std::string& name, Tensor<T> t) { out.push_back({name, std::move(t)}); };
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            push("backbone.conv" + std::to_string(i) + ".w", convs_[i].w);
            push("backbone.conv" + std::to_string(i) + ".b", convs_[i].b);
        }
        for (std::size_t i = 0; i < mlp_.size(); ++i) {
            push("backbone.fc" + std::to_string(i) + ".w", mlp_[i].w);
            push("backbone.fc" + std::to_string(i) + ".b", mlp_[i].b);
        }
        for (std::size_t i = 0; i < cls_heads_.size(); ++i) {
            push("cls" + std::to_string(i) + ".w", cls_heads_[i].w);
            push("cls" + std::to_string(i) + ".b", cls_heads_[i].b);
        }
        for (std::size_t i = 0; i < proj_.size(); ++i) {
            push("proj" + std::to_string(i) + ".w", proj_[i].w);
            push("proj" + std::to_string(i) + ".b", proj_[i].b);
            push("proj" + std::to_string(i) + ".bn.gamma", proj_bn_[i].gamma);
            push("proj" + std::to_string(i) + ".bn.beta", proj_bn_[i].beta);
        }
        if (!pred_.empty()) {
            push("pred0.w", pred_[0].w);
            push("pred0.b", pred_[0].b);
            push("pred.bn.gamma", pred_bn_.gamma);
            push("pred.bn.beta", pred_bn_.beta);
            push("pred1.w", pred_[1].w);
            push("pred1.b", pred_[1].b);
        }
        if (domain_head_) {
            push("domain.w", domain_head_->w);
            push("domain.b", domain_head_->b);
        }
        return out;
    }

    // Parameters of the classifier path only (backbone + cls heads).
    std::vector<NamedParam<T>> task_parameters() {
        std::vector<NamedParam<T>> all = parameters();
        std::vector<NamedParam<T>> out;
        for (auto& p : all)
            if (p.name.rfind("domain.", 0) != 0) out.push_back(p);
        return out;
    }

    std::vector<NamedParam<T>> shared_parameters() {
        std::vector<NamedParam<T>> all = parameters();
        std::vector<NamedParam<T>> out;
        for (auto& p : all)
            if (p.name.rfind("backbone.", 0) == 0) out.push_back(p);
        return out;
    }

    std::vector<NamedParam<T>> domain_parameters() {
        std::vector<NamedParam<T>> out;
        if (domain_head_) {
            out.push_back({"domain.w", domain_head_->w});
            out.push_back({"domain.b", domain_head_->b});
        }
        return out;
    }

    // Non-trained state (batchnorm running stats).
    std::vector<NamedParam<T>> buffers() {
        std::vector<NamedParam<T>> out;
        for (std::size_t i = 0; i < proj_bn_.size(); ++i) {
            out.push_back({"proj" + std::to_string(i) + ".bn.rm", proj_bn_[i].running_mean});
            out.push_back({"proj" + std::to_string(i) + ".bn.rv", proj_bn_[i].running_var});
        }
        if (!pred_.empty()) {
            out.push_back({"pred.bn.rm", pred_bn_.running_mean});
            out.push_back({"pred.bn.rv", pred_bn_.running_var});
        }
        return out;
    }

private:
    std::vector<ConvLayer<T>> convs_;
    std::vector<Linear<T>> mlp_;
    std::vector<Linear<T>> cls_heads_;
    std::vector<Linear<T>> proj_;
    std::vector<BatchNormLayer<T>> proj_bn_;
    std::vector<Linear<T>> pred_;
    BatchNormLayer<T> pred_bn_;
    std::optional<Linear<T>> domain_head_;
    bool training_ = true;
};

// ---------------------------------------------------------------------------
// Batch assembly from images (CHW layout matches the tensor layout directly).
// Pixels are mapped from [0,1] to [-1,1]; centered inputs keep ReLU units
// half-active under symmetric init.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> batch_from_images(const std::vector<const Image*>& images) {
    if (images.empty()) throw std::invalid_argument("batch_from_images: empty batch");
    const int H = images[0]->size;
    Tensor<T> batch = Tensor<T>::zeros({static_cast<int>(images.size()), 3, H, H});
    auto out = batch.values();
    const std::size_t per = static_cast<std::size_t>(3) * H * H;
    for (std::size_t i = 0; i < images.size(); ++i)
        for (std::size_t j = 0; j < per; ++j)
            out[i * per + j] = static_cast<T>(2.0f * images[i]->px[j] - 1.0f);
    return batch;
}

// ---------------------------------------------------------------------------
// Inference rules
// ---------------------------------------------------------------------------
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& t) {
    const int B = t.dim(0), N = t.dim(1);
    std::vector<int> out(B);
    const T* v = t.values().data();
    for (int i = 0; i < B; ++i) {
        int best = 0;
        for (int j = 1; j < N; ++j)
            if (v[i * N + j] > v[i * N + best]) best = j;
        out[i] = best;
    }
    return out;
}

// Sum of per-domain classification activations: s(y) = sum_d logits[d][.,y].
template <typename T>
Tensor<T> domain_independent_score(const std::vector<Tensor<T>>& per_domain_logits) {
    if (per_domain_logits.empty())
        throw std::invalid_argument("domain_independent_score: no heads");
    Tensor<T> acc = per_domain_logits[0].detach();
    for (std::size_t d = 1; d < per_domain_logits.size(); ++d) {
        if (per_domain_logits[d].shape() != acc.shape())
            throw std::invalid_argument("domain_independent_score: head shape mismatch");
        auto a = acc.values();
        auto b = per_domain_logits[d].values();
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    }
    return acc;
}

template <typename T>
std::vector<int> known_domain_predict(const std::vector<Tensor<T>>& per_domain_logits, int d_star) {
    if (d_star < 0 || d_star >= static_cast<int>(per_domain_logits.size()))
        throw std::invalid_argument("known_domain_predict: domain index " + std::to_string(d_star) +
                                    " out of range");
    return argmax_rows(per_domain_logits[d_star]);
}

enum class PriorRule { TrainSum, ShiftSum, ShiftMax };

// joint_probs rows are the (N*D)-way softmax with domain fastest:
// joint[b][y*D + d]. prior is the N x D training joint distribution.
template <typename T>
std::vector<int> prior_shift_predict(const Tensor<T>& joint_probs,
                                     const std::vector<std::vector<double>>& prior, PriorRule rule,
                                     int n_classes, int n_domains) {
    if (joint_probs.rank() != 2 || joint_probs.dim(1) != n_classes * n_domains)
        throw std::invalid_argument("prior_shift_predict: joint shape mismatch " +
                                    shape_str(joint_probs.shape()));
    if (static_cast<int>(prior.size()) != n_classes ||
        (n_classes > 0 && static_cast<int>(prior[0].size()) != n_domains))
        throw std::invalid_argument("prior_shift_predict: prior shape mismatch");
    const int B = joint_probs.dim(0);
    const T* p = joint_probs.values().data();
    std::vector<int> out(B);
    for (int i = 0; i < B; ++i) {
        int best = 0;
        double best_score = -1.0;
        for (int y = 0; y < n_classes; ++y) {
            double score = rule == PriorRule::ShiftMax ? 0.0 : 0.0;
            for (int d = 0; d < n_domains; ++d) {
                double v = static_cast<double>(p[i * n_classes * n_domains + y * n_domains + d]);
                if (rule != PriorRule::TrainSum) v /= std::max(prior[y][d], kNumericFloor);
                if (rule == PriorRule::ShiftMax) score = std::max(score, v);
                else score += v;
            }
            if (score > best_score) {
                best_score = score;
                best = y;
            }
        }
        out[i] = best;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: flat versioned key -> tensor container.
// ---------------------------------------------------------------------------
namespace ckpt {

inline constexpr std::uint32_t kMagic = 0x464c4350u;  // "FLCP"
inline constexpr std::uint32_t kVersion = 1;

template <typename T>
struct Entry {
    std::string name;
    Shape shape;
    std::vector<T> data;
};

template <typename T>
void save(const std::string& path, std::uint64_t config_hash, const std::vector<Entry<T>>& entries) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    auto put = [&](const void* p, std::size_t n) { out.write(static_cast<const char*>(p), n); };
    put(&kMagic, 4);
    put(&kVersion, 4);
    put(&config_hash, 8);
    const std::uint8_t dtype = sizeof(T);
    put(&dtype, 1);
    const std::uint32_t count = static_cast<std::uint32_t>(entries.size());
    put(&count, 4);
    for (const auto& e : entries) {
        const std::uint16_t len = static_cast<std::uint16_t>(e.name.size());
        put(&len, 2);
        put(e.name.data(), len);
        const std::uint8_t rank = static_cast<std::uint8_t>(e.shape.size());
        put(&rank, 1);
        for (int d : e.shape) {
            const std::int32_t dim = d;
            put(&dim, 4);
        }
        put(e.data.data(), e.data.size() * sizeof(T));
    }
}

template <typename T>
std::optional<std::vector<Entry<T>>> load(const std::string& path, std::uint64_t config_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    auto get = [&](void* p, std::size_t n) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
    };
    std::uint32_t magic = 0, version = 0;
    std::uint64_t hash = 0;
    get(&magic, 4);
    get(&version, 4);
    get(&hash, 8);
    if (magic != kMagic || version != kVersion) throw std::runtime_error("checkpoint: bad header in " + path);
    std::uint8_t dtype = 0;
    get(&dtype, 1);
    if (hash != config_hash || dtype != sizeof(T)) return std::nullopt;  // stale checkpoint
    std::uint32_t count = 0;
    get(&count, 4);
    std::vector<Entry<T>> entries(count);
    for (auto& e : entries) {
        std::uint16_t len = 0;
        get(&len, 2);
        e.name.resize(len);
        get(e.name.data(), len);
        std::uint8_t rank = 0;
        get(&rank, 1);
        e.shape.resize(rank);
        std::int64_t numel = 1;
        for (int r = 0; r < rank; ++r) {
            std::int32_t dim = 0;
            get(&dim, 4);
            e.shape[r] = dim;
            numel *= dim;
        }
        e.data.resize(static_cast<std::size_t>(numel));
        get(e.data.data(), e.data.size() * sizeof(T));
    }
    return entries;
}

}  // namespace ckpt

}  // namespace fairlab
