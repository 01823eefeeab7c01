#pragma once

#include "buzz/blackbox.hpp"
#include "buzz/bufferviz.hpp"
#include "buzz/config.hpp"
#include "buzz/dataio.hpp"
#include "buzz/defense.hpp"
#include "buzz/models.hpp"
#include "buzz/profile.hpp"

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace buzz {

struct DataConfig {
    std::string source = "synthetic"; // synthetic | idx | cifar
    std::size_t classes = 10;
    std::size_t train_per_class = 800;
    std::size_t test_per_class = 100;
    std::size_t side = 12;
    std::filesystem::path train_images, train_labels, test_images, test_labels;
    std::vector<std::filesystem::path> cifar_train, cifar_test;
    std::size_t train_limit = 0; // 0 keeps everything
    std::size_t test_limit = 0;
    bool synthetic_fallback = false;
};

struct MapConfig {
    std::vector<std::string> variants;
    std::vector<std::size_t> samples; // test-set indices; empty picks one automatically
    std::size_t nx = 101;
    std::size_t ny = 101;
    double extent = 0.0; // 0 uses default_grid
    RadialMode mode = RadialMode::OrthogonalToGradient;
};

struct ExperimentConfig {
    std::string name = "experiment";
    std::uint64_t seed = 1;
    std::filesystem::path out = "out";

    DataConfig data;
    DatasetProfile profile;
    std::string network_preset = "small";
    TrainConfig train;

    std::vector<std::string> variants = {"vanilla"};

    std::vector<AttackConfig> attacks; // one per family, untargeted form
    std::vector<bool> targeted_modes = {false};
    std::vector<std::string> pipelines = {"mixed"};
    std::size_t eval_size = 1000;
    std::size_t attack_chunk = 128;

    std::string synthetic_preset = "small";
    std::size_t synthetic_rounds = 4;
    double synthetic_lambda = 0.1;
    TrainConfig synthetic_train;
    std::size_t synthetic_max_set = 0;

    MapConfig map;
    std::filesystem::path published;

    // Relative paths resolve against base_dir. Throws ConfigError.
    static ExperimentConfig from_doc(const ConfigDoc& doc, const std::filesystem::path& base_dir = {});
    static ExperimentConfig load(const std::filesystem::path& path);
    // Resolved form, written next to the outputs.
    ConfigDoc to_doc() const;
    void validate() const;

    std::uint64_t seed_for(const std::string& purpose) const;
};

struct Datasets {
    LabeledDataset train;
    LabeledDataset test;
};

Datasets load_datasets(const ExperimentConfig& cfg, std::ostream& log);

// Paper-facing defaults of a profile in config form (one section per attack).
ConfigDoc profile_doc(const DatasetProfile& profile);

// Output layout under cfg.out.
std::filesystem::path bundle_dir(const ExperimentConfig& cfg, const std::string& variant);
std::string campaign_name(const std::string& defense, AttackFamily family, bool targeted, const std::string& pipeline);

void cmd_train(const ExperimentConfig& cfg, std::ostream& log);
void cmd_attack(const ExperimentConfig& cfg, std::ostream& log);
void cmd_report(const ExperimentConfig& cfg, std::ostream& log);
void cmd_map(const ExperimentConfig& cfg, std::ostream& log);

// Invariant suites plus a tiny end-to-end run; writes CSVs under out.
// Returns the number of failed checks.
std::size_t cmd_selfcheck(const std::filesystem::path& out, std::ostream& log);

} // namespace buzz
