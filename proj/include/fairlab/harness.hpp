#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>

#include "fairlab/config.hpp"
#include "fairlab/dataset.hpp"
#include "fairlab/metrics.hpp"
#include "fairlab/strategies.hpp"

namespace fairlab {

// ---------------------------------------------------------------------------
// Dataset assembly from an experiment config
// ---------------------------------------------------------------------------
inline DatasetBundle build_experiment_dataset(const ExperimentConfig& cfg) {
    Corpus train_corpus, test_corpus;
    int image_size = 32;
    if (cfg.dataset == "synthetic") {
        SynthParams p;
        p.n_classes = cfg.synth_classes;
        p.per_class = cfg.synth_per_class;
        p.image_size = cfg.synth_image_size;
        p.seed = cfg.synth_seed;
        p.noise_level = static_cast<float>(cfg.synth_noise);
        p.tint_saturation = static_cast<float>(cfg.synth_saturation);
        p.lum_lo = static_cast<float>(cfg.synth_lum_lo);
        p.lum_hi = static_cast<float>(cfg.synth_lum_hi);
        train_corpus = synth_corpus(p);
        SynthParams tp = p;
        tp.per_class = cfg.synth_per_class_test;
        tp.seed = hash_combine(cfg.synth_seed, tag("test-corpus"));
        test_corpus = synth_corpus(tp);
        image_size = cfg.synth_image_size;
    } else if (cfg.dataset == "cifar10-binary") {
        train_corpus = load_cifar10_binary(cfg.cifar_train_files);
        test_corpus = load_cifar10_binary(cfg.cifar_test_files);
        image_size = 32;
    } else {
        throw std::invalid_argument("unknown dataset kind: " + cfg.dataset);
    }

    int n_classes = 0;
    for (const auto& ex : train_corpus) n_classes = std::max(n_classes, ex.class_label + 1);

    SkewSpec spec;
    spec.n_classes = n_classes;
    spec.n_domains = 2;
    spec.skew = cfg.skew;
    spec.limited_fraction = cfg.limited_fraction;
    spec.majority_domain.resize(n_classes);
    for (int c = 0; c < n_classes; ++c) spec.majority_domain[c] = c < n_classes / 2 ? 0 : 1;
    spec.transforms = {DomainTransform{TransformKind::IdentityColor, 0},
                       scaled_variant(cfg.variant, image_size)};

    DatasetBundle bundle = build_skewed(train_corpus, test_corpus, spec);
    return limit_dataset(bundle, cfg.limited_fraction);
}

inline BackboneConfig backbone_from_config(const ExperimentConfig& cfg) {
    BackboneConfig bc;
    bc.kind = cfg.backbone == "mlp" ? BackboneKind::Mlp : BackboneKind::SmallConv;
    bc.widths = cfg.widths;
    bc.image_size = cfg.dataset == "synthetic" ? cfg.synth_image_size : 32;
    return bc;
}

inline StrategyConfig strategy_config_for(const ExperimentConfig& cfg, const StrategySpec& spec,
                                          std::uint64_t seed) {
    StrategyConfig sc;
    sc.kind = spec.kind;
    sc.ldbm = spec.ldbm;
    sc.kappa = cfg.kappa;
    sc.adversarial_weight = cfg.adversarial_weight;
    sc.kl_direction = cfg.kl_direction;
    sc.reversal_head_mode = cfg.reversal_head;
    sc.epochs = cfg.epochs;
    sc.teacher_epochs = cfg.teacher_epochs;
    sc.batch_size = cfg.batch_size;
    sc.seed = seed;
    sc.optimizer = cfg.optimizer;
    return sc;
}

// ---------------------------------------------------------------------------
// Collected results
// ---------------------------------------------------------------------------
struct RuleMetrics {
    double bias = 0;
    double acc_domain0 = 0;
    double acc_domain1 = 0;
    double mean = 0;
};

struct SeedRun {
    std::uint64_t seed = 0;
    std::map<InferenceRule, RuleMetrics> by_rule;
    std::vector<EpochLog> logs;
    std::vector<std::vector<std::vector<std::int64_t>>> confusion;  // [domain][true][pred]
};

struct StrategyRuns {
    StrategySpec spec;
    std::vector<SeedRun> seeds;
};

struct ExperimentResults {
    std::vector<StrategyRuns> strategies;
};

namespace detail {

template <typename T>
SeedRun run_one(const DatasetBundle& bundle, const ExperimentConfig& cfg, const StrategySpec& spec,
                std::uint64_t seed, const std::string& checkpoint_dir) {
    StrategyConfig sc = strategy_config_for(cfg, spec, seed);
    Model<T> model = make_model_for<T>(bundle, sc, backbone_from_config(cfg), cfg.proj_dim);
    std::string ckpt;
    if (!checkpoint_dir.empty())
        ckpt = checkpoint_dir + "/" + spec.label + "_seed" + std::to_string(seed) + ".ckpt";
    TrainResult<T> result = train(bundle, std::move(model), sc, ckpt);

    SeedRun run;
    run.seed = seed;
    run.logs = result.logs;
    for (InferenceRule rule : applicable_rules(spec.kind)) {
        auto records = predict_bundle(result.model, sc, bundle, rule);
        AccuracyGrid grid = accuracy_grid(records, bundle.n_classes, bundle.n_domains);
        RuleMetrics m;
        m.bias = mean_bias_score(records, bundle.n_classes, /*warn_unpredicted=*/false);
        m.acc_domain0 = grid.per_domain[0];
        m.acc_domain1 = grid.per_domain[1];
        m.mean = grid.mean;
        run.by_rule[rule] = m;
    }
    // Confusion matrices per domain under the primary rule.
    const auto prior = prior_from_counts(bundle);
    run.confusion.resize(bundle.n_domains);
    for (int d = 0; d < bundle.n_domains; ++d) {
        const InferenceRule rule = primary_rule(spec.kind);
        std::optional<int> d_star;
        if (rule == InferenceRule::KnownDomain) d_star = d;
        auto records = predict_set(result.model, sc, bundle.test_sets[d], d, prior, rule, d_star);
        run.confusion[d] = confusion_matrix(records, bundle.n_classes);
    }
    return run;
}

template <typename T>
ExperimentResults collect_impl(const ExperimentConfig& cfg, const DatasetBundle& bundle,
                               const std::string& checkpoint_dir) {
    ExperimentResults results;
    for (const auto& label : cfg.strategies) {
        StrategyRuns runs;
        runs.spec = parse_strategy_spec(label);
        for (std::uint64_t seed : cfg.seeds)
            runs.seeds.push_back(run_one<T>(bundle, cfg, runs.spec, seed, checkpoint_dir));
        results.strategies.push_back(std::move(runs));
    }
    return results;
}

inline double sample_stddev(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    double mean = 0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double acc = 0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

inline double mean_of(const std::vector<double>& xs) {
    double m = 0;
    for (double x : xs) m += x;
    return xs.empty() ? 0.0 : m / static_cast<double>(xs.size());
}

inline double median_of(std::vector<double> xs) {
    if (xs.empty()) return 0.0;
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace detail

inline ExperimentResults run_experiment_collect(const ExperimentConfig& cfg,
                                                const DatasetBundle& bundle,
                                                const std::string& checkpoint_dir = "") {
    if (cfg.precision == "f64") return detail::collect_impl<double>(cfg, bundle, checkpoint_dir);
    return detail::collect_impl<float>(cfg, bundle, checkpoint_dir);
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------
inline void render_heatmap(const std::vector<std::vector<std::int64_t>>& grid,
                           const std::string& path, int cell_px = 16) {
    if (grid.empty()) throw std::invalid_argument("render_heatmap: empty grid");
    const int rows = static_cast<int>(grid.size());
    const int cols = static_cast<int>(grid[0].size());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("render_heatmap: cannot write " + path);
    out << "P6\n" << cols * cell_px << " " << rows * cell_px << "\n255\n";
    for (int r = 0; r < rows; ++r) {
        std::int64_t rowmax = 0;
        for (std::int64_t v : grid[r]) rowmax = std::max(rowmax, v);
        for (int py = 0; py < cell_px; ++py)
            for (int c = 0; c < cols; ++c) {
                const unsigned char level =
                    rowmax == 0 ? 0
                                : static_cast<unsigned char>(
                                      std::lround(255.0 * static_cast<double>(grid[r][c]) /
                                                  static_cast<double>(rowmax)));
                for (int px = 0; px < cell_px; ++px) {
                    out.put(static_cast<char>(level));
                    out.put(static_cast<char>(level));
                    out.put(static_cast<char>(level));
                }
            }
    }
}

namespace detail {

inline std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

inline void write_epoch_csv(const std::string& path, const std::vector<EpochLog>& logs) {
    std::ofstream out(path);
    out << "epoch,ce,simsiam,distill,adversarial,test_ce,bias_amp,mean_acc\n";
    for (const auto& l : logs)
        out << l.epoch << "," << fmt6(l.ce) << "," << fmt6(l.simsiam) << "," << fmt6(l.distill)
            << "," << fmt6(l.adversarial) << "," << fmt6(l.test_ce) << ","
            << fmt6(l.bias_amplification) << "," << fmt6(l.mean_accuracy) << "\n";
}

inline void write_confusion_csv(const std::string& path,
                                const std::vector<std::vector<std::int64_t>>& grid) {
    std::ofstream out(path);
    for (const auto& row : grid) {
        for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << row[j];
        out << "\n";
    }
}

}  // namespace detail

// Runs every strategy x seed, evaluates every applicable inference rule on
// both domain test sets, and writes the report files. Returns nonzero when
// any run fails.
inline int run_experiment(const ExperimentConfig& cfg, ExperimentResults* out = nullptr) {
    namespace fs = std::filesystem;
    try {
        fs::create_directories(cfg.output_dir);
        fs::create_directories(cfg.output_dir + "/checkpoints");
        DatasetBundle bundle = build_experiment_dataset(cfg);
        ExperimentResults results =
            run_experiment_collect(cfg, bundle, cfg.output_dir + "/checkpoints");

        std::ofstream table(cfg.output_dir + "/table.csv");
        table << "strategy,inference,bias,acc_domain0,acc_domain1,mean,stddev_over_seeds\n";
        for (const auto& runs : results.strategies) {
            for (InferenceRule rule : applicable_rules(runs.spec.kind)) {
                std::vector<double> bias, a0, a1, mean;
                for (const auto& run : runs.seeds) {
                    const RuleMetrics& m = run.by_rule.at(rule);
                    bias.push_back(m.bias);
                    a0.push_back(m.acc_domain0);
                    a1.push_back(m.acc_domain1);
                    mean.push_back(m.mean);
                }
                table << runs.spec.label << "," << rule_name(rule) << ","
                      << detail::fmt6(detail::mean_of(bias)) << "," << detail::fmt6(detail::mean_of(a0))
                      << "," << detail::fmt6(detail::mean_of(a1)) << ","
                      << detail::fmt6(detail::mean_of(mean)) << ","
                      << detail::fmt6(detail::sample_stddev(mean)) << "\n";
            }
            for (const auto& run : runs.seeds)
                detail::write_epoch_csv(cfg.output_dir + "/epochs_" + runs.spec.label + "_" +
                                            std::to_string(run.seed) + ".csv",
                                        run.logs);
            // Confusion outputs come from the first seed's model.
            for (int d = 0; d < static_cast<int>(runs.seeds.front().confusion.size()); ++d) {
                const auto& grid = runs.seeds.front().confusion[d];
                detail::write_confusion_csv(cfg.output_dir + "/confusion_" + runs.spec.label + "_" +
                                                std::to_string(d) + ".csv",
                                            grid);
                render_heatmap(grid, cfg.output_dir + "/confusion_" + runs.spec.label + "_" +
                                         std::to_string(d) + ".ppm");
            }
        }
        if (out) *out = std::move(results);
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "run_experiment: " << e.what() << "\n";
        return 1;
    }
}

// One full experiment per skew level; emits sweep.csv with the per-strategy
// median (over seeds) accuracy and bias under each strategy's primary rule.
inline int sweep_skew(const ExperimentConfig& cfg, const std::vector<double>& skews) {
    namespace fs = std::filesystem;
    try {
        fs::create_directories(cfg.output_dir);
        std::ofstream sweep(cfg.output_dir + "/sweep.csv");
        sweep << "rho,strategy,mean_acc,bias\n";
        for (double rho : skews) {
            ExperimentConfig sub = cfg;
            sub.skew = rho;
            char rho_buf[32];
            std::snprintf(rho_buf, sizeof(rho_buf), "%.2f", rho);
            sub.output_dir = cfg.output_dir + "/rho_" + rho_buf;
            ExperimentResults results;
            if (int rc = run_experiment(sub, &results); rc != 0) return rc;
            for (const auto& runs : results.strategies) {
                std::vector<double> acc, bias;
                for (const auto& run : runs.seeds) {
                    const RuleMetrics& m = run.by_rule.at(primary_rule(runs.spec.kind));
                    acc.push_back(m.mean);
                    bias.push_back(m.bias);
                }
                sweep << rho_buf << "," << runs.spec.label << ","
                      << detail::fmt6(detail::median_of(acc)) << ","
                      << detail::fmt6(detail::median_of(bias)) << "\n";
            }
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "sweep_skew: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace fairlab
