#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fairlab/augment.hpp"
#include "fairlab/dataset.hpp"
#include "fairlab/losses.hpp"
#include "fairlab/metrics.hpp"
#include "fairlab/nets.hpp"
#include "fairlab/optim.hpp"

namespace fairlab {

enum class StrategyKind {
    Baseline,
    Sampling,
    AdversarialUniform,
    AdversarialReversalProj,
    DomainDiscriminative,
    DomainIndependent,
};

enum class InferenceRule { Argmax, TrainSum, ShiftSum, ShiftMax, KnownDomain, ScoreSum };

// How the domain head trains under the loss-reversal scheme: descending the
// reversed loss as literally stated, or conventional domain cross-entropy.
enum class ReversalHeadMode { ReversedLoss, StandardCe };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::SgdMomentum;
    double learning_rate = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;
};

struct StrategyConfig {
    StrategyKind kind = StrategyKind::Baseline;
    bool ldbm = false;
    double kappa = 4.0;
    double adversarial_weight = 1.0;
    KlDirection kl_direction = KlDirection::StudentFirst;
    ReversalHeadMode reversal_head_mode = ReversalHeadMode::StandardCe;
    int epochs = 30;
    int batch_size = 32;
    std::uint64_t seed = 1;
    OptimizerConfig optimizer;
    int teacher_epochs = -1;                 // -1: same as epochs
    bool student_init_from_teacher = false;  // test hook for the L_SD == 0 identity
    int halt_after_logged_epochs = -1;       // test hook: simulate an interruption
};

struct EpochLog {
    int epoch = 0;  // 1-based, continuous across teacher and student phases
    double ce = 0.0;
    double simsiam = 0.0;
    double distill = 0.0;
    double adversarial = 0.0;
    double test_ce = 0.0;
    double bias_amplification = 0.0;
    double mean_accuracy = 0.0;
};

inline std::string strategy_name(StrategyKind k) {
    switch (k) {
        case StrategyKind::Baseline: return "baseline";
        case StrategyKind::Sampling: return "sampling";
        case StrategyKind::AdversarialUniform: return "adversarial-uniform";
        case StrategyKind::AdversarialReversalProj: return "adversarial-reversal-proj";
        case StrategyKind::DomainDiscriminative: return "domain-discriminative";
        case StrategyKind::DomainIndependent: return "domain-independent";
    }
    return "?";
}

inline StrategyKind strategy_from_name(const std::string& s) {
    for (StrategyKind k : {StrategyKind::Baseline, StrategyKind::Sampling,
                           StrategyKind::AdversarialUniform, StrategyKind::AdversarialReversalProj,
                           StrategyKind::DomainDiscriminative, StrategyKind::DomainIndependent})
        if (strategy_name(k) == s) return k;
    throw std::invalid_argument("unknown strategy: " + s);
}

inline std::string rule_name(InferenceRule r) {
    switch (r) {
        case InferenceRule::Argmax: return "argmax";
        case InferenceRule::TrainSum: return "train-sum";
        case InferenceRule::ShiftSum: return "shift-sum";
        case InferenceRule::ShiftMax: return "shift-max";
        case InferenceRule::KnownDomain: return "known-domain";
        case InferenceRule::ScoreSum: return "score-sum";
    }
    return "?";
}

inline std::vector<InferenceRule> applicable_rules(StrategyKind k) {
    switch (k) {
        case StrategyKind::DomainDiscriminative:
            return {InferenceRule::TrainSum, InferenceRule::ShiftSum, InferenceRule::ShiftMax};
        case StrategyKind::DomainIndependent:
            return {InferenceRule::KnownDomain, InferenceRule::ScoreSum};
        default:
            return {InferenceRule::Argmax};
    }
}

inline InferenceRule primary_rule(StrategyKind k) {
    switch (k) {
        case StrategyKind::DomainDiscriminative: return InferenceRule::ShiftSum;
        case StrategyKind::DomainIndependent: return InferenceRule::ScoreSum;
        default: return InferenceRule::Argmax;
    }
}

// ---------------------------------------------------------------------------
// Model construction for a strategy
// ---------------------------------------------------------------------------
inline HeadConfig head_config_for(const DatasetBundle& bundle, const StrategyConfig& cfg,
                                  int proj_dim = 128) {
    HeadConfig hc;
    hc.n_classes = bundle.n_classes;
    hc.n_domains = bundle.n_domains;
    hc.simsiam = cfg.ldbm;
    hc.proj_dim = proj_dim;
    switch (cfg.kind) {
        case StrategyKind::DomainDiscriminative: hc.cls = ClsHeadKind::NDway; break;
        case StrategyKind::DomainIndependent: hc.cls = ClsHeadKind::PerDomain; break;
        default: hc.cls = ClsHeadKind::Nway; break;
    }
    hc.domain_head = cfg.kind == StrategyKind::AdversarialUniform ||
                     cfg.kind == StrategyKind::AdversarialReversalProj;
    return hc;
}

template <typename T>
Model<T> make_model_for(const DatasetBundle& bundle, const StrategyConfig& cfg,
                        const BackboneConfig& bc, int proj_dim = 128) {
    return Model<T>::init(bc, head_config_for(bundle, cfg, proj_dim),
                          hash_combine(cfg.seed, tag("model")));
}

template <typename T>
void validate_model_for(Model<T>& model, const StrategyConfig& cfg) {
    const HeadConfig& hc = model.head_cfg;
    const ClsHeadKind want = cfg.kind == StrategyKind::DomainDiscriminative ? ClsHeadKind::NDway
                             : cfg.kind == StrategyKind::DomainIndependent  ? ClsHeadKind::PerDomain
                                                                            : ClsHeadKind::Nway;
    if (hc.cls != want)
        throw std::invalid_argument("train: classifier head does not match strategy " +
                                    strategy_name(cfg.kind));
    if (cfg.ldbm != model.has_simsiam())
        throw std::invalid_argument("train: SimSiam heads must be present exactly when ldbm is on");
    const bool adversarial = cfg.kind == StrategyKind::AdversarialUniform ||
                             cfg.kind == StrategyKind::AdversarialReversalProj;
    if (adversarial && !model.has_domain_head())
        throw std::invalid_argument("train: adversarial strategies need a domain head");
}

// ---------------------------------------------------------------------------
// Strategic sampling: per class, minority-domain indices are cycled until the
// domain counts balance; the whole epoch list is then shuffled.
// ---------------------------------------------------------------------------
inline std::vector<std::int64_t> strategic_sample_indices(const DatasetBundle& bundle, Prng& rng) {
    std::vector<std::int64_t> epoch;
    for (int c = 0; c < bundle.n_classes; ++c) {
        const int major = bundle.spec.majority_domain[c];
        std::vector<std::int64_t> major_idx, minor_idx;
        for (std::size_t i = 0; i < bundle.train.size(); ++i) {
            if (bundle.train[i].class_label != c) continue;
            if (bundle.train[i].domain_label == major) major_idx.push_back(static_cast<std::int64_t>(i));
            else minor_idx.push_back(static_cast<std::int64_t>(i));
        }
        if (minor_idx.empty())
            throw std::invalid_argument("strategic sampling: class " + std::to_string(c) +
                                        " has no minority examples");
        epoch.insert(epoch.end(), major_idx.begin(), major_idx.end());
        for (std::size_t j = 0; j < major_idx.size(); ++j)
            epoch.push_back(minor_idx[j % minor_idx.size()]);
    }
    rng.shuffle(epoch.begin(), epoch.end());
    return epoch;
}

// ---------------------------------------------------------------------------
// Gradient projection for loss-reversal adversarial training: remove from
// each task-gradient tensor its component along the domain-loss gradient.
// ---------------------------------------------------------------------------
template <typename T>
void reversal_projection_step(std::vector<std::vector<T>>& task_grads,
                              const std::vector<std::vector<T>>& domain_grads) {
    if (task_grads.size() != domain_grads.size())
        throw std::invalid_argument("reversal_projection_step: grad list size mismatch");
    for (std::size_t p = 0; p < task_grads.size(); ++p) {
        auto& gt = task_grads[p];
        const auto& gd = domain_grads[p];
        if (gt.size() != gd.size())
            throw std::invalid_argument("reversal_projection_step: tensor size mismatch");
        double dot = 0, denom = 0;
        for (std::size_t i = 0; i < gt.size(); ++i) {
            dot += static_cast<double>(gt[i]) * static_cast<double>(gd[i]);
            denom += static_cast<double>(gd[i]) * static_cast<double>(gd[i]);
        }
        if (denom <= 1e-12) continue;
        const T coef = static_cast<T>(dot / denom);
        for (std::size_t i = 0; i < gt.size(); ++i) gt[i] -= coef * gd[i];
    }
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------
inline std::vector<std::vector<double>> prior_from_counts(const DatasetBundle& bundle) {
    std::vector<std::vector<double>> prior(bundle.n_classes,
                                           std::vector<double>(bundle.n_domains, 0.0));
    double total = 0;
    for (const auto& row : bundle.per_class_domain_counts)
        for (auto v : row) total += static_cast<double>(v);
    for (int c = 0; c < bundle.n_classes; ++c)
        for (int d = 0; d < bundle.n_domains; ++d)
            prior[c][d] = static_cast<double>(bundle.per_class_domain_counts[c][d]) / total;
    return prior;
}

// Predictions for one test set. For the known-domain rule d_star must be
// given (the harness passes each test set's own domain).
template <typename T>
std::vector<PredictionRecord> predict_set(Model<T>& model, const StrategyConfig& cfg,
                                          const std::vector<Example>& test_set, int set_domain,
                                          const std::vector<std::vector<double>>& prior,
                                          InferenceRule rule,
                                          std::optional<int> d_star = std::nullopt) {
    if (rule == InferenceRule::KnownDomain && !d_star.has_value())
        throw std::invalid_argument("predict: known-domain rule needs d_star");
    model.set_training(false);
    const int n = static_cast<int>(test_set.size());
    const int n_classes = model.head_cfg.n_classes;
    const int n_domains = model.head_cfg.n_domains;
    std::vector<PredictionRecord> records;
    records.reserve(n);
    const int eval_batch = 256;
    for (int start = 0; start < n; start += eval_batch) {
        const int b = std::min(eval_batch, n - start);
        std::vector<const Image*> imgs(b);
        for (int i = 0; i < b; ++i) imgs[i] = &test_set[start + i].image;
        Tensor<T> x = batch_from_images<T>(imgs);
        Tensor<T> feats = model.features(x);
        std::vector<Tensor<T>> heads = model.head_logits(feats);
        std::vector<int> preds;
        switch (rule) {
            case InferenceRule::Argmax:
                preds = argmax_rows(heads[0]);
                break;
            case InferenceRule::TrainSum:
            case InferenceRule::ShiftSum:
            case InferenceRule::ShiftMax: {
                Tensor<T> joint = softmax_rows(heads[0]);
                const PriorRule pr = rule == InferenceRule::TrainSum  ? PriorRule::TrainSum
                                     : rule == InferenceRule::ShiftSum ? PriorRule::ShiftSum
                                                                       : PriorRule::ShiftMax;
                preds = prior_shift_predict(joint, prior, pr, n_classes, n_domains);
                break;
            }
            case InferenceRule::KnownDomain:
                preds = known_domain_predict(heads, *d_star);
                break;
            case InferenceRule::ScoreSum:
                preds = argmax_rows(domain_independent_score(heads));
                break;
        }
        for (int i = 0; i < b; ++i)
            records.push_back({preds[i], test_set[start + i].class_label, set_domain});
    }
    return records;
}

template <typename T>
std::vector<PredictionRecord> predict_bundle(Model<T>& model, const StrategyConfig& cfg,
                                             const DatasetBundle& bundle, InferenceRule rule) {
    const auto prior = prior_from_counts(bundle);
    std::vector<PredictionRecord> all;
    for (int d = 0; d < bundle.n_domains; ++d) {
        std::optional<int> d_star;
        if (rule == InferenceRule::KnownDomain) d_star = d;
        auto recs = predict_set(model, cfg, bundle.test_sets[d], d, prior, rule, d_star);
        all.insert(all.end(), recs.begin(), recs.end());
    }
    return all;
}

// One fused pass over both test sets: cross-entropy plus predictions under
// one rule, computing features once per batch. Used by the per-epoch logger.
template <typename T>
std::pair<double, std::vector<PredictionRecord>> epoch_eval(Model<T>& model,
                                                            const DatasetBundle& bundle,
                                                            InferenceRule rule) {
    model.set_training(false);
    const auto prior = prior_from_counts(bundle);
    const int n_classes = bundle.n_classes;
    const int n_domains = bundle.n_domains;
    double ce_acc = 0;
    std::int64_t count = 0;
    std::vector<PredictionRecord> records;
    const int eval_batch = 256;
    for (int d = 0; d < n_domains; ++d) {
        const auto& set = bundle.test_sets[d];
        for (std::size_t start = 0; start < set.size(); start += eval_batch) {
            const int b = static_cast<int>(std::min<std::size_t>(eval_batch, set.size() - start));
            std::vector<const Image*> imgs(b);
            std::vector<int> labels(b);
            for (int i = 0; i < b; ++i) {
                imgs[i] = &set[start + i].image;
                labels[i] = set[start + i].class_label;
            }
            Tensor<T> feats = model.features(batch_from_images<T>(imgs));
            std::vector<Tensor<T>> heads = model.head_logits(feats);

            Tensor<T> ce_logits;
            std::vector<int> eff_labels = labels;
            if (model.head_cfg.cls == ClsHeadKind::NDway) {
                ce_logits = heads[0];
                for (auto& y : eff_labels) y = y * n_domains + d;
            } else if (model.head_cfg.cls == ClsHeadKind::PerDomain) {
                ce_logits = heads[static_cast<std::size_t>(d)];
            } else {
                ce_logits = heads[0];
            }
            ce_acc += softmax_cross_entropy(ce_logits, eff_labels).item() * b;
            count += b;

            std::vector<int> preds;
            switch (rule) {
                case InferenceRule::Argmax: preds = argmax_rows(heads[0]); break;
                case InferenceRule::TrainSum:
                case InferenceRule::ShiftSum:
                case InferenceRule::ShiftMax: {
                    const PriorRule pr = rule == InferenceRule::TrainSum  ? PriorRule::TrainSum
                                         : rule == InferenceRule::ShiftSum ? PriorRule::ShiftSum
                                                                           : PriorRule::ShiftMax;
                    preds = prior_shift_predict(softmax_rows(heads[0]), prior, pr, n_classes,
                                                n_domains);
                    break;
                }
                case InferenceRule::KnownDomain: preds = known_domain_predict(heads, d); break;
                case InferenceRule::ScoreSum:
                    preds = argmax_rows(domain_independent_score(heads));
                    break;
            }
            for (int i = 0; i < b; ++i) records.push_back({preds[i], labels[i], d});
        }
    }
    return {count ? ce_acc / static_cast<double>(count) : 0.0, std::move(records)};
}

// Mean classification cross-entropy over both test sets under the strategy's
// own loss (joint labels for ND-way, true-domain routing for per-domain).
template <typename T>
double test_cross_entropy(Model<T>& model, const StrategyConfig& cfg, const DatasetBundle& bundle) {
    model.set_training(false);
    double acc = 0;
    std::int64_t count = 0;
    const int eval_batch = 256;
    for (int d = 0; d < bundle.n_domains; ++d) {
        const auto& set = bundle.test_sets[d];
        for (std::size_t start = 0; start < set.size(); start += eval_batch) {
            const int b = static_cast<int>(std::min<std::size_t>(eval_batch, set.size() - start));
            std::vector<const Image*> imgs(b);
            std::vector<int> labels(b);
            for (int i = 0; i < b; ++i) {
                imgs[i] = &set[start + i].image;
                labels[i] = set[start + i].class_label;
            }
            Tensor<T> feats = model.features(batch_from_images<T>(imgs));
            std::vector<Tensor<T>> heads = model.head_logits(feats);
            Tensor<T> logits;
            std::vector<int> eff_labels = labels;
            if (model.head_cfg.cls == ClsHeadKind::NDway) {
                logits = heads[0];
                for (auto& y : eff_labels) y = y * bundle.n_domains + d;
            } else if (model.head_cfg.cls == ClsHeadKind::PerDomain) {
                logits = heads[static_cast<std::size_t>(d)];
            } else {
                logits = heads[0];
            }
            acc += softmax_cross_entropy(logits, eff_labels).item() * b;
            count += b;
        }
    }
    return acc / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------
template <typename T>
struct TrainResult {
    Model<T> model;  // the final model (student when ldbm is on)
    std::optional<Model<T>> teacher;
    std::vector<EpochLog> logs;
};

namespace detail {

template <typename T>
std::vector<std::vector<T>> snapshot_grads(std::vector<NamedParam<T>>& params) {
    std::vector<std::vector<T>> out;
    out.reserve(params.size());
    for (auto& p : params) {
        p.tensor.ensure_grad();
        auto g = p.tensor.grad();
        out.emplace_back(g.begin(), g.end());
    }
    return out;
}

template <typename T>
void write_grads(std::vector<NamedParam<T>>& params, const std::vector<std::vector<T>>& grads) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i].tensor.zero_grad();
        auto g = params[i].tensor.grad();
        std::copy(grads[i].begin(), grads[i].end(), g.begin());
    }
}

template <typename T>
void zero_grads(std::vector<NamedParam<T>>& params) {
    for (auto& p : params) p.tensor.zero_grad();
}

// Round-trip through T with a forced store; a plain cast pair can be folded
// away by the optimizer, which would break checkpoint log round-trips.
template <typename T>
inline double quantize_to(double v) {
    volatile T t = static_cast<T>(v);
    return static_cast<double>(t);
}

inline double schedule_factor(int epoch, int total_epochs) {
    // Learning rate decays by 10x at each quarter of the run.
    const int quarter = std::min(3, total_epochs > 0 ? epoch * 4 / total_epochs : 0);
    double f = 1.0;
    for (int i = 0; i < quarter; ++i) f *= 0.1;
    return f;
}

// Fingerprint of everything that must match for a checkpoint to be reusable.
inline std::uint64_t run_fingerprint(const DatasetBundle& bundle, const StrategyConfig& cfg) {
    std::uint64_t h = tag("fairlab-run");
    auto mix = [&](std::uint64_t v) { h = hash_combine(h, v); };
    mix(static_cast<std::uint64_t>(cfg.kind));
    mix(cfg.ldbm ? 1 : 0);
    mix(static_cast<std::uint64_t>(cfg.kappa * 1e6));
    mix(static_cast<std::uint64_t>(cfg.adversarial_weight * 1e6));
    mix(static_cast<std::uint64_t>(cfg.kl_direction));
    mix(static_cast<std::uint64_t>(cfg.reversal_head_mode));
    mix(static_cast<std::uint64_t>(cfg.epochs));
    mix(static_cast<std::uint64_t>(cfg.batch_size));
    mix(cfg.seed);
    mix(static_cast<std::uint64_t>(cfg.optimizer.kind));
    mix(static_cast<std::uint64_t>(cfg.optimizer.learning_rate * 1e9));
    mix(static_cast<std::uint64_t>(cfg.optimizer.momentum * 1e9));
    mix(static_cast<std::uint64_t>(cfg.optimizer.weight_decay * 1e9));
    mix(static_cast<std::uint64_t>(cfg.teacher_epochs));
    mix(static_cast<std::uint64_t>(bundle.n_classes));
    mix(static_cast<std::uint64_t>(bundle.n_domains));
    mix(static_cast<std::uint64_t>(bundle.image_size));
    mix(static_cast<std::uint64_t>(bundle.train.size()));
    for (const auto& ex : bundle.train) {
        mix(static_cast<std::uint64_t>(ex.class_label));
        mix(static_cast<std::uint64_t>(ex.domain_label));
        mix(static_cast<std::uint64_t>(ex.source_index));
    }
    // Pixel content of a deterministic sample of training images.
    for (std::size_t i = 0; i < bundle.train.size(); i += std::max<std::size_t>(1, bundle.train.size() / 64)) {
        for (float v : bundle.train[i].image.px)
            mix(static_cast<std::uint64_t>(static_cast<std::int64_t>(v * 1e7)));
    }
    return h;
}

}  // namespace detail

template <typename T>
class Trainer {
public:
    Trainer(const DatasetBundle& bundle, StrategyConfig cfg, std::string checkpoint_path = "")
        : bundle_(bundle), cfg_(std::move(cfg)), checkpoint_path_(std::move(checkpoint_path)) {
        if (cfg_.kappa <= 0) throw std::invalid_argument("train: kappa must be > 0");
        if (cfg_.teacher_epochs < 0) cfg_.teacher_epochs = cfg_.epochs;
        fingerprint_ = detail::run_fingerprint(bundle_, cfg_);
    }

    TrainResult<T> run(Model<T> model) {
        validate_model_for(model, cfg_);
        TrainResult<T> result{std::move(model), std::nullopt, {}};

        int resume_phase = 0, resume_epoch = 0;
        const bool resumed = try_resume(result, resume_phase, resume_epoch);

        if (cfg_.ldbm) {
            if (!resumed || resume_phase == 0) {
                run_phase(result.model, nullptr, cfg_.teacher_epochs, /*phase=*/0,
                          resumed ? resume_epoch : 0, result);
                if (halted_) return result;
                result.teacher = std::move(result.model);
                result.model = make_student(*result.teacher);
                save_checkpoint(result, /*phase=*/1, /*epoch_done=*/0);
                resume_epoch = 0;
            }
            result.teacher->set_training(false);
            run_phase(result.model, &*result.teacher, cfg_.epochs, /*phase=*/1, resume_epoch,
                      result);
        } else {
            run_phase(result.model, nullptr, cfg_.epochs, /*phase=*/0, resumed ? resume_epoch : 0,
                      result);
        }
        return result;
    }

private:
    Model<T> make_student(Model<T>& teacher) {
        Model<T> student = Model<T>::init(teacher.backbone_cfg, teacher.head_cfg,
                                          hash_combine(cfg_.seed, tag("student")));
        if (cfg_.student_init_from_teacher) {
            Model<T>& t = teacher;
            auto src = t.parameters();
            auto dst = student.parameters();
            for (std::size_t i = 0; i < src.size(); ++i)
                std::copy(src[i].tensor.values().begin(), src[i].tensor.values().end(),
                          dst[i].tensor.values().begin());
            auto sbuf = t.buffers();
            auto dbuf = student.buffers();
            for (std::size_t i = 0; i < sbuf.size(); ++i)
                std::copy(sbuf[i].tensor.values().begin(), sbuf[i].tensor.values().end(),
                          dbuf[i].tensor.values().begin());
        }
        return student;
    }

    void run_phase(Model<T>& model, Model<T>* teacher, int n_epochs, int phase, int start_epoch,
                   TrainResult<T>& result) {
        const bool adversarial = cfg_.kind == StrategyKind::AdversarialUniform ||
                                 cfg_.kind == StrategyKind::AdversarialReversalProj;
        Optimizer<T> main_opt;
        main_opt.kind = cfg_.optimizer.kind;
        main_opt.momentum = static_cast<T>(cfg_.optimizer.momentum);
        main_opt.weight_decay = static_cast<T>(cfg_.optimizer.weight_decay);
        main_opt.attach(cfg_.kind == StrategyKind::AdversarialUniform ? model.task_parameters()
                                                                      : model.parameters());
        Optimizer<T> domain_opt;
        domain_opt.kind = cfg_.optimizer.kind;
        domain_opt.momentum = static_cast<T>(cfg_.optimizer.momentum);
        domain_opt.weight_decay = static_cast<T>(cfg_.optimizer.weight_decay);
        if (cfg_.kind == StrategyKind::AdversarialUniform) domain_opt.attach(model.domain_parameters());

        if (start_epoch > 0) restore_optimizers(main_opt, domain_opt, phase);

        const int epoch_offset = phase == 1 ? cfg_.teacher_epochs : 0;
        for (int epoch = start_epoch; epoch < n_epochs; ++epoch) {
            const double lr = cfg_.optimizer.learning_rate * detail::schedule_factor(epoch, n_epochs);
            main_opt.learning_rate = static_cast<T>(lr);
            domain_opt.learning_rate = static_cast<T>(lr);
            model.set_training(true);

            // Epoch index list.
            std::vector<std::int64_t> order;
            const std::uint64_t epoch_key = static_cast<std::uint64_t>(epoch_offset + epoch);
            if (cfg_.kind == StrategyKind::Sampling) {
                Prng rng = Prng::from_key({cfg_.seed, tag("sample"), epoch_key});
                order = strategic_sample_indices(bundle_, rng);
            } else {
                order.resize(bundle_.train.size());
                for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
                Prng rng = Prng::from_key({cfg_.seed, tag("shuffle"), epoch_key});
                rng.shuffle(order.begin(), order.end());
            }

            EpochLog log;
            log.epoch = epoch_offset + epoch + 1;
            double seen = 0;
            for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
                const int b = static_cast<int>(
                    std::min<std::size_t>(cfg_.batch_size, order.size() - start));
                if (b < 2 && model.has_simsiam()) continue;  // batchnorm needs >= 2
                BatchStats stats = train_batch(model, teacher, order, start, b, main_opt, domain_opt,
                                               static_cast<int>(epoch_key));
                log.ce += stats.ce * b;
                log.simsiam += stats.simsiam * b;
                log.distill += stats.distill * b;
                log.adversarial += stats.adversarial * b;
                seen += b;
            }
            if (seen > 0) {
                log.ce /= seen;
                log.simsiam /= seen;
                log.distill /= seen;
                log.adversarial /= seen;
            }

            // Per-epoch evaluation on both domain test sets.
            auto [test_ce, records] = epoch_eval(model, bundle_, primary_rule(cfg_.kind));
            log.test_ce = test_ce;
            log.mean_accuracy = accuracy_grid(records, bundle_.n_classes, bundle_.n_domains).mean;
            log.bias_amplification =
                mean_bias_amplification(records, bundle_.n_classes, bundle_.per_class_domain_counts);
            // Quantized to the run's scalar type so checkpoints round-trip exactly.
            for (double* field : {&log.ce, &log.simsiam, &log.distill, &log.adversarial,
                                  &log.test_ce, &log.bias_amplification, &log.mean_accuracy})
                *field = detail::quantize_to<T>(*field);
            result.logs.push_back(log);

            save_checkpoint(result, phase, epoch + 1, &main_opt, &domain_opt);
            if (cfg_.halt_after_logged_epochs >= 0 &&
                static_cast<int>(result.logs.size()) >= cfg_.halt_after_logged_epochs) {
                halted_ = true;
                return;
            }
        }
        model.set_training(false);
    }

    struct BatchStats {
        double ce = 0, simsiam = 0, distill = 0, adversarial = 0;
    };

    BatchStats train_batch(Model<T>& model, Model<T>* teacher,
                           const std::vector<std::int64_t>& order, std::size_t start, int b,
                           Optimizer<T>& main_opt, Optimizer<T>& domain_opt, int epoch_key) {
        BatchStats stats;
        // Assemble augmented views (outside the tape).
        std::vector<Image> view1(b), view2;
        std::vector<int> labels(b), domains(b);
        if (cfg_.ldbm) view2.resize(b);
        for (int i = 0; i < b; ++i) {
            const Example& ex = bundle_.train[static_cast<std::size_t>(order[start + i])];
            Prng rng = example_rng(cfg_.seed, epoch_key, ex.source_index);
            if (cfg_.ldbm) {
                ViewPair vp = two_views(ex.image, rng, ex.source_index);
                view1[i] = std::move(vp.view1);
                view2[i] = std::move(vp.view2);
            } else {
                view1[i] = pad_flip_crop(ex.image, rng);
            }
            labels[i] = ex.class_label;
            domains[i] = ex.domain_label;
        }
        std::vector<const Image*> v1_ptr(b), v2_ptr(b);
        for (int i = 0; i < b; ++i) v1_ptr[i] = &view1[i];
        Tensor<T> x1 = batch_from_images<T>(v1_ptr);
        Tensor<T> x2;
        if (cfg_.ldbm) {
            for (int i = 0; i < b; ++i) v2_ptr[i] = &view2[i];
            x2 = batch_from_images<T>(v2_ptr);
        }

        // Teacher logits for distillation, computed off-tape in eval mode.
        Tensor<T> teacher_logits;
        if (teacher) {
            Tensor<T> tf = teacher->features(x1);
            teacher_logits = teacher->logits_block(tf);
        }

        auto cls_loss = [&](const Tensor<T>& feats) {
            std::vector<Tensor<T>> heads = model.head_logits(feats);
            switch (cfg_.kind) {
                case StrategyKind::DomainDiscriminative: {
                    std::vector<int> joint(b);
                    for (int i = 0; i < b; ++i)
                        joint[i] = labels[i] * bundle_.n_domains + domains[i];
                    return softmax_cross_entropy(heads[0], joint);
                }
                case StrategyKind::DomainIndependent:
                    return softmax_cross_entropy(route_rows(heads, domains), labels);
                default:
                    return softmax_cross_entropy(heads[0], labels);
            }
        };

        Graph<T> graph;
        typename Graph<T>::Scope scope(graph);
        Tensor<T> feats1 = model.features(x1);
        Tensor<T> ce = cls_loss(feats1);
        stats.ce = static_cast<double>(ce.item());
        Tensor<T> total = ce;

        if (cfg_.ldbm) {
            Tensor<T> feats2 = model.features(x2);
            Tensor<T> z1 = model.project(feats1);
            Tensor<T> z2 = model.project(feats2);
            Tensor<T> p1 = model.predict_head(z1);
            Tensor<T> p2 = model.predict_head(z2);
            Tensor<T> sim = simsiam_loss(p1, z2, p2, z1);
            stats.simsiam = static_cast<double>(sim.item());
            total = add(total, sim);
            if (teacher) {
                Tensor<T> sd = kl_distill_loss(model.logits_block(feats1), teacher_logits,
                                               static_cast<T>(cfg_.kappa), cfg_.kl_direction);
                stats.distill = static_cast<double>(sd.item());
                total = add(total, sd);
            }
        }

        if (cfg_.kind == StrategyKind::AdversarialUniform) {
            // Alternation: one domain-head step on detached features, then the
            // main step on CE + lambda * confusion through the updated head.
            {
                Graph<T> head_graph;
                typename Graph<T>::Scope head_scope(head_graph);
                Tensor<T> dce = softmax_cross_entropy(model.domain_logits(feats1.detach()), domains);
                head_graph.backward(dce);
                domain_opt.step();
            }
            Tensor<T> conf = uniform_confusion_loss(softmax_rows(model.domain_logits(feats1)));
            stats.adversarial = static_cast<double>(conf.item());
            total = add(total, scale(conf, static_cast<T>(cfg_.adversarial_weight)));
            graph.backward(total);
            main_opt.step();
            auto dom_params = model.domain_parameters();
            detail::zero_grads(dom_params);  // confusion-path grads are discarded
            return stats;
        }

        if (cfg_.kind == StrategyKind::AdversarialReversalProj) {
            // Reversed domain loss: the mean log-likelihood of the true domain.
            Tensor<T> dce = softmax_cross_entropy(model.domain_logits(feats1), domains);
            Tensor<T> reversed = scale(dce, T(-1));
            stats.adversarial = static_cast<double>(reversed.item());

            auto all_params = model.parameters();
            detail::zero_grads(all_params);
            graph.backward(total);
            auto g_task = detail::snapshot_grads(all_params);
            detail::zero_grads(all_params);
            graph.clear_intermediate_grads();
            graph.backward(reversed);
            auto g_rev = detail::snapshot_grads(all_params);

            // Shared (backbone) tensors: project the task gradient off the
            // domain direction, then descend the reversed loss with weight
            // lambda. Cls head keeps its task gradient; the domain head
            // follows the configured mode.
            std::vector<std::vector<T>> final_grads = g_task;
            std::vector<std::vector<T>> shared_task, shared_rev;
            std::vector<std::size_t> shared_idx;
            for (std::size_t i = 0; i < all_params.size(); ++i) {
                const std::string& name = all_params[i].name;
                if (name.rfind("backbone.", 0) == 0) {
                    shared_idx.push_back(i);
                    shared_task.push_back(g_task[i]);
                    shared_rev.push_back(g_rev[i]);
                }
            }
            reversal_projection_step(shared_task, shared_rev);
            for (std::size_t s = 0; s < shared_idx.size(); ++s) {
                auto& dst = final_grads[shared_idx[s]];
                for (std::size_t j = 0; j < dst.size(); ++j)
                    dst[j] = shared_task[s][j] +
                             static_cast<T>(cfg_.adversarial_weight) * shared_rev[s][j];
            }
            for (std::size_t i = 0; i < all_params.size(); ++i) {
                const std::string& name = all_params[i].name;
                if (name.rfind("domain.", 0) == 0) {
                    final_grads[i] = g_rev[i];
                    if (cfg_.reversal_head_mode == ReversalHeadMode::StandardCe)
                        for (auto& v : final_grads[i]) v = -v;
                }
            }
            detail::write_grads(all_params, final_grads);
            main_opt.step();
            return stats;
        }

        graph.backward(total);
        main_opt.step();
        return stats;
    }

    // ---------------------------------------------------------------- resume
    void collect_model(const std::string& prefix, Model<T>& m,
                       std::vector<ckpt::Entry<T>>& entries) {
        for (auto& p : m.parameters())
            entries.push_back({prefix + p.name, p.tensor.shape(),
                               {p.tensor.values().begin(), p.tensor.values().end()}});
        for (auto& p : m.buffers())
            entries.push_back({prefix + "buf." + p.name, p.tensor.shape(),
                               {p.tensor.values().begin(), p.tensor.values().end()}});
    }

    void save_checkpoint(TrainResult<T>& result, int phase, int epoch_done,
                         Optimizer<T>* main_opt = nullptr, Optimizer<T>* domain_opt = nullptr) {
        if (checkpoint_path_.empty()) return;
        std::vector<ckpt::Entry<T>> entries;
        entries.push_back({"meta.phase", {1}, {static_cast<T>(phase)}});
        entries.push_back({"meta.epoch_done", {1}, {static_cast<T>(epoch_done)}});
        collect_model("model.", result.model, entries);
        if (result.teacher) collect_model("teacher.", *result.teacher, entries);
        if (main_opt) {
            entries.push_back({"meta.main_steps", {1}, {static_cast<T>(main_opt->step_count())}});
            auto& m1 = main_opt->moment1();
            for (std::size_t i = 0; i < m1.size(); ++i)
                entries.push_back({"opt.main.m1." + main_opt->params()[i].name,
                                   {static_cast<int>(m1[i].size())},
                                   m1[i]});
            if (main_opt->kind == OptimizerKind::Adam) {
                auto& m2 = main_opt->moment2();
                for (std::size_t i = 0; i < m2.size(); ++i)
                    entries.push_back({"opt.main.m2." + main_opt->params()[i].name,
                                       {static_cast<int>(m2[i].size())},
                                       m2[i]});
            }
        }
        if (domain_opt && !domain_opt->params().empty()) {
            entries.push_back({"meta.domain_steps", {1}, {static_cast<T>(domain_opt->step_count())}});
            auto& m1 = domain_opt->moment1();
            for (std::size_t i = 0; i < m1.size(); ++i)
                entries.push_back({"opt.domain.m1." + domain_opt->params()[i].name,
                                   {static_cast<int>(m1[i].size())},
                                   m1[i]});
        }
        std::vector<T> logflat;
        for (const auto& l : result.logs) {
            logflat.push_back(static_cast<T>(l.epoch));
            logflat.push_back(static_cast<T>(l.ce));
            logflat.push_back(static_cast<T>(l.simsiam));
            logflat.push_back(static_cast<T>(l.distill));
            logflat.push_back(static_cast<T>(l.adversarial));
            logflat.push_back(static_cast<T>(l.test_ce));
            logflat.push_back(static_cast<T>(l.bias_amplification));
            logflat.push_back(static_cast<T>(l.mean_accuracy));
        }
        entries.push_back({"logs", {std::max(1, static_cast<int>(result.logs.size())), 8},
                           logflat.empty() ? std::vector<T>(8, T(0)) : logflat});
        entries.push_back({"meta.log_count", {1}, {static_cast<T>(result.logs.size())}});
        ckpt::save(checkpoint_path_ + ".tmp", fingerprint_, entries);
        std::filesystem::rename(checkpoint_path_ + ".tmp", checkpoint_path_);
    }

    bool try_resume(TrainResult<T>& result, int& phase, int& epoch_done) {
        if (checkpoint_path_.empty()) return false;
        auto entries = ckpt::load<T>(checkpoint_path_, fingerprint_);
        if (!entries) return false;
        resume_entries_ = std::move(*entries);
        auto find = [&](const std::string& name) -> ckpt::Entry<T>* {
            for (auto& e : resume_entries_)
                if (e.name == name) return &e;
            return nullptr;
        };
        phase = static_cast<int>((*find("meta.phase")).data[0]);
        epoch_done = static_cast<int>((*find("meta.epoch_done")).data[0]);
        auto restore_model = [&](const std::string& prefix, Model<T>& m) {
            for (auto& p : m.parameters()) {
                ckpt::Entry<T>* e = find(prefix + p.name);
                if (!e) throw std::runtime_error("checkpoint missing entry " + prefix + p.name);
                std::copy(e->data.begin(), e->data.end(), p.tensor.values().begin());
            }
            for (auto& p : m.buffers()) {
                ckpt::Entry<T>* e = find(prefix + "buf." + p.name);
                if (!e) throw std::runtime_error("checkpoint missing entry " + prefix + p.name);
                std::copy(e->data.begin(), e->data.end(), p.tensor.values().begin());
            }
        };
        if (cfg_.ldbm && phase == 1) {
            result.teacher = std::move(result.model);
            restore_model("teacher.", *result.teacher);
            result.model = make_student(*result.teacher);
        }
        restore_model("model.", result.model);
        const int log_count = static_cast<int>((*find("meta.log_count")).data[0]);
        ckpt::Entry<T>* logs = find("logs");
        result.logs.clear();
        for (int i = 0; i < log_count; ++i) {
            EpochLog l;
            l.epoch = static_cast<int>(logs->data[i * 8 + 0]);
            l.ce = static_cast<double>(logs->data[i * 8 + 1]);
            l.simsiam = static_cast<double>(logs->data[i * 8 + 2]);
            l.distill = static_cast<double>(logs->data[i * 8 + 3]);
            l.adversarial = static_cast<double>(logs->data[i * 8 + 4]);
            l.test_ce = static_cast<double>(logs->data[i * 8 + 5]);
            l.bias_amplification = static_cast<double>(logs->data[i * 8 + 6]);
            l.mean_accuracy = static_cast<double>(logs->data[i * 8 + 7]);
            result.logs.push_back(l);
        }
        return true;
    }

    void restore_optimizers(Optimizer<T>& main_opt, Optimizer<T>& domain_opt, int phase) {
        auto find = [&](const std::string& name) -> ckpt::Entry<T>* {
            for (auto& e : resume_entries_)
                if (e.name == name) return &e;
            return nullptr;
        };
        if (ckpt::Entry<T>* steps = find("meta.main_steps"))
            main_opt.set_step_count(static_cast<std::int64_t>(steps->data[0]));
        for (std::size_t i = 0; i < main_opt.params().size(); ++i) {
            if (ckpt::Entry<T>* e = find("opt.main.m1." + main_opt.params()[i].name))
                main_opt.moment1()[i] = e->data;
            if (main_opt.kind == OptimizerKind::Adam)
                if (ckpt::Entry<T>* e = find("opt.main.m2." + main_opt.params()[i].name))
                    main_opt.moment2()[i] = e->data;
        }
        if (ckpt::Entry<T>* steps = find("meta.domain_steps"))
            domain_opt.set_step_count(static_cast<std::int64_t>(steps->data[0]));
        for (std::size_t i = 0; i < domain_opt.params().size(); ++i)
            if (ckpt::Entry<T>* e = find("opt.domain.m1." + domain_opt.params()[i].name))
                domain_opt.moment1()[i] = e->data;
        (void)phase;
    }

    const DatasetBundle& bundle_;
    StrategyConfig cfg_;
    std::string checkpoint_path_;
    std::uint64_t fingerprint_ = 0;
    bool halted_ = false;
    std::vector<ckpt::Entry<T>> resume_entries_;
};

template <typename T>
TrainResult<T> train(const DatasetBundle& bundle, Model<T> model, const StrategyConfig& cfg,
                     const std::string& checkpoint_path = "") {
    Trainer<T> trainer(bundle, cfg, checkpoint_path);
    return trainer.run(std::move(model));
}

}  // namespace fairlab
