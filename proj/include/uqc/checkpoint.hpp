#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "uqc/vae.hpp"

namespace uqc::checkpoint {

// Model checkpoint, binary, little-endian, magic "UQC1".
// Layout: header (config hash, stage, epoch, optimizer step), preprocessing
// provenance (fuzzy/sharpen flags, side), architecture (latent, widths, prior
// kind and components, init seed), then every named parameter with its Adam
// slots, then optional DEC centroids. Round-trips bit exactly.
struct Checkpoint {
    uint64_t config_hash = 0;
    std::string stage;  // "random" | "pretrain" | "finetune"
    int epoch = 0;
    long long opt_t = 0;
    bool pp_fuzzy = true;
    bool pp_sharpen = true;
    int side = 32;
    int latent = 80;
    std::vector<int> widths;
    uint8_t prior_kind = 0;  // 0 standard, 1 mixture
    int prior_components = 0;
    uint64_t init_seed = 0;
    std::vector<std::pair<std::string, std::array<Eigen::VectorXd, 3>>> tensors;  // value, m, v
    std::optional<Eigen::MatrixXd> centroids;  // K x latent
};

void save_checkpoint(const std::string& path, vae::VaeModel& model,
                     const Eigen::MatrixXd* centroids, const std::string& stage, int epoch,
                     long long opt_t, uint64_t config_hash, bool pp_fuzzy, bool pp_sharpen);

// Throws std::runtime_error mentioning "version" on wrong magic/version and
// "corrupt" on truncation.
Checkpoint load_checkpoint(const std::string& path);

// Rebuilds the model and copies stored parameter values and optimizer slots
// into it (matched by name; mismatch is an error).
std::unique_ptr<vae::VaeModel> restore_model(const Checkpoint& ckpt);

// Inference sidecar, magic "UQS1": the frozen reducer state fitted at
// evaluation time. Fitted latents with their 2-D coordinates and labels, the
// 2-D cluster centroids, and the neighbor count used for out-of-sample
// placement.
struct Sidecar {
    uint64_t config_hash = 0;
    Eigen::MatrixXd latents;      // M x N
    Eigen::MatrixXd coords;       // M x 2
    std::vector<int> labels;      // resolved, [0, C)
    Eigen::MatrixXd centroids2d;  // C x 2
    int n_neighbors = 15;
};

void save_sidecar(const std::string& path, const Sidecar& sc);
Sidecar load_sidecar(const std::string& path);

// finetune.uqc -> finetune.uqs
std::string sidecar_path(const std::string& checkpoint_path);

}  // namespace uqc::checkpoint
