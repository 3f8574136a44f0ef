#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "uqc/nn.hpp"
#include "uqc/trainconfig.hpp"

namespace uqc::config {

// Anything wrong with user-supplied configuration. The CLI maps this to
// exit code 2; every other failure is a stage failure (exit 1).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataSpec {
    std::string kind = "directory";  // "directory" | "mnist"
    std::string path;
    std::string manifest;            // optional label manifest (directory kind)
    size_t subsample = 0;            // 0 = use everything
    double train_fraction = 0.9;
};

struct PreprocessSpec {
    bool fuzzy = true;
    bool sharpen = true;
    bool hflip = true;
    int side = 32;
};

struct VaeSpec {
    int latent = 80;
    std::vector<int> widths = {32, 64, 128, 256};
    std::string prior = "mixture";   // "standard" | "mixture"
    int prior_components = 0;        // 0 = cluster.k
    int epochs = 200;
    int batch = 128;
    double lr = 0.01;
    std::string optimizer = "adam";
    int patience = 10;
    double min_rel_improvement = 1e-4;
};

struct ClusterSpec {
    int k = 3;
    double gamma = 0.1;
    int epochs = 200;
    int batch = 64;
    double lr = 5e-3;
    std::string optimizer = "adam";
    int patience = 10;
    double min_rel_improvement = 1e-4;
};

struct EmbedSpec {
    int n_neighbors = 15;
    double min_dist = 0.1;
    int n_epochs = 0;        // 0 = auto
    int min_cluster_size = 0;  // 0 = auto
};

struct RunSpec {
    uint64_t seed = 1;
    std::string out_dir = "runs/out";
    bool pretrain = true;  // false: random-init VAE goes straight to fine-tuning
};

struct RunConfig {
    DataSpec data;
    PreprocessSpec preprocess;
    VaeSpec vae;
    ClusterSpec cluster;
    EmbedSpec embed;
    RunSpec run;

    void validate() const;  // throws ConfigError
    TrainConfig vae_train_config() const;
    TrainConfig cluster_train_config() const;
    int prior_components() const { return vae.prior_components > 0 ? vae.prior_components : cluster.k; }
};

// INI dialect: [section] headers, key = value lines, # or ; comments.
// Unknown sections or keys are configuration errors.
RunConfig parse_ini(const std::string& text);
RunConfig load_config(const std::string& path);

// "section.key=value" (or "section.key value" split by the caller).
void apply_override(RunConfig& cfg, const std::string& dotted_key, const std::string& value);

// Fixed section order, sorted keys, every field explicit. Hash input and the
// config copy written into run directories.
std::string canonical_ini(const RunConfig& cfg);

uint64_t fnv1a64(const std::string& text);
std::string config_hash(const RunConfig& cfg);  // 16 hex digits
std::string run_id(const RunConfig& cfg);       // 40 hex digits, deterministic

nn::OptimizerConfig::Kind parse_optimizer(const std::string& name);

}  // namespace uqc::config
