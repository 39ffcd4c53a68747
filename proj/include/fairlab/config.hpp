#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fairlab/strategies.hpp"

namespace fairlab {

// One experiment: a dataset recipe, a strategy list, seeds, and output paths.
struct ExperimentConfig {
    // dataset
    std::string dataset = "synthetic";  // "synthetic" | "cifar10-binary"
    std::vector<std::string> cifar_train_files;
    std::vector<std::string> cifar_test_files;
    int synth_classes = 10;
    int synth_per_class = 200;
    int synth_per_class_test = 50;
    int synth_image_size = 16;
    std::uint64_t synth_seed = 1234;
    double synth_noise = 0.5;
    double synth_saturation = 0.85;
    double synth_lum_lo = 0.6;
    double synth_lum_hi = 0.8;
    std::string variant = "grayscale";  // grayscale | c28 | d16 | d8
    double skew = 0.95;
    double limited_fraction = 0.25;

    // training
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    int epochs = 30;
    int batch_size = 32;
    OptimizerConfig optimizer;
    double kappa = 4.0;
    double adversarial_weight = 1.0;
    KlDirection kl_direction = KlDirection::StudentFirst;
    ReversalHeadMode reversal_head = ReversalHeadMode::StandardCe;
    int teacher_epochs = -1;
    std::string precision = "f32";  // f32 | f64
    std::string backbone = "small-conv";
    std::vector<int> widths = {8, 16, 32};
    int proj_dim = 128;

    // strategies: "<name>" or "<name>+ldbm"
    std::vector<std::string> strategies = {"baseline"};

    std::string output_dir = "out";
};

struct StrategySpec {
    StrategyKind kind;
    bool ldbm;
    std::string label;
};

inline StrategySpec parse_strategy_spec(const std::string& spec) {
    std::string name = spec;
    bool ldbm = false;
    const std::string suffix = "+ldbm";
    if (name.size() > suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
        ldbm = true;
        name = name.substr(0, name.size() - suffix.size());
    }
    return {strategy_from_name(name), ldbm, spec};
}

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace detail

// Flat key = value text format; '#' starts a comment; the `strategy` key
// repeats, everything else overwrites. Unknown keys are rejected.
inline ExperimentConfig parse_config_text(std::istream& in, const std::string& origin = "<config>") {
    ExperimentConfig cfg;
    cfg.strategies.clear();
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                        ": expected 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        auto as_double = [&] { return std::stod(value); };
        auto as_int = [&] { return std::stoi(value); };
        auto as_u64 = [&] { return static_cast<std::uint64_t>(std::stoull(value)); };

        if (key == "dataset") cfg.dataset = value;
        else if (key == "cifar.train") cfg.cifar_train_files = detail::split_list(value);
        else if (key == "cifar.test") cfg.cifar_test_files = detail::split_list(value);
        else if (key == "synthetic.classes") cfg.synth_classes = as_int();
        else if (key == "synthetic.per_class") cfg.synth_per_class = as_int();
        else if (key == "synthetic.per_class_test") cfg.synth_per_class_test = as_int();
        else if (key == "synthetic.image_size") cfg.synth_image_size = as_int();
        else if (key == "synthetic.seed") cfg.synth_seed = as_u64();
        else if (key == "synthetic.noise") cfg.synth_noise = as_double();
        else if (key == "synthetic.saturation") cfg.synth_saturation = as_double();
        else if (key == "synthetic.lum_lo") cfg.synth_lum_lo = as_double();
        else if (key == "synthetic.lum_hi") cfg.synth_lum_hi = as_double();
        else if (key == "variant") cfg.variant = value;
        else if (key == "skew") cfg.skew = as_double();
        else if (key == "limited_fraction") cfg.limited_fraction = as_double();
        else if (key == "seeds") {
            cfg.seeds.clear();
            for (const auto& s : detail::split_list(value))
                cfg.seeds.push_back(static_cast<std::uint64_t>(std::stoull(s)));
        } else if (key == "epochs") cfg.epochs = as_int();
        else if (key == "teacher_epochs") cfg.teacher_epochs = as_int();
        else if (key == "batch_size") cfg.batch_size = as_int();
        else if (key == "learning_rate") cfg.optimizer.learning_rate = as_double();
        else if (key == "momentum") cfg.optimizer.momentum = as_double();
        else if (key == "weight_decay") cfg.optimizer.weight_decay = as_double();
        else if (key == "optimizer") {
            if (value == "sgd") cfg.optimizer.kind = OptimizerKind::SgdMomentum;
            else if (value == "adam") cfg.optimizer.kind = OptimizerKind::Adam;
            else throw std::invalid_argument(origin + ": unknown optimizer " + value);
        } else if (key == "kappa") cfg.kappa = as_double();
        else if (key == "adversarial_weight") cfg.adversarial_weight = as_double();
        else if (key == "kl_direction") {
            if (value == "student-first") cfg.kl_direction = KlDirection::StudentFirst;
            else if (value == "teacher-first") cfg.kl_direction = KlDirection::TeacherFirst;
            else throw std::invalid_argument(origin + ": unknown kl_direction " + value);
        } else if (key == "reversal_head") {
            if (value == "standard-ce") cfg.reversal_head = ReversalHeadMode::StandardCe;
            else if (value == "reversed-loss") cfg.reversal_head = ReversalHeadMode::ReversedLoss;
            else throw std::invalid_argument(origin + ": unknown reversal_head " + value);
        } else if (key == "precision") {
            if (value != "f32" && value != "f64")
                throw std::invalid_argument(origin + ": precision must be f32 or f64");
            cfg.precision = value;
        } else if (key == "backbone") cfg.backbone = value;
        else if (key == "widths") {
            cfg.widths.clear();
            for (const auto& s : detail::split_list(value)) cfg.widths.push_back(std::stoi(s));
        } else if (key == "proj_dim") cfg.proj_dim = as_int();
        else if (key == "strategy") cfg.strategies.push_back(value);
        else if (key == "output_dir") cfg.output_dir = value;
        else
            throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": unknown key '" +
                                        key + "'");
    }
    if (cfg.strategies.empty()) cfg.strategies = {"baseline"};
    if (cfg.seeds.empty()) throw std::invalid_argument(origin + ": seeds must be nonempty");
    for (const auto& s : cfg.strategies) parse_strategy_spec(s);  // validate early
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    return parse_config_text(in, path);
}

}  // namespace fairlab
