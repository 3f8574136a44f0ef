#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "uqc/data.hpp"
#include "uqc/nn.hpp"
#include "uqc/rng.hpp"
#include "uqc/trainconfig.hpp"

namespace uqc::vae {

struct PriorSpec {
    enum class Kind { standard_normal, gaussian_mixture };
    Kind kind = Kind::standard_normal;
    int components = 0;          // K_p, mixture only
    Eigen::MatrixXd means;       // K_p x N
    Eigen::MatrixXd logvars;     // K_p x N
    Eigen::VectorXd weight_logits;  // K_p, weights = softmax(logits)

    Eigen::VectorXd weights() const;
    static PriorSpec standard_normal();
    // Trainable mixture; means start on a seeded scaled simplex, unit variances,
    // uniform weights.
    static PriorSpec gaussian_mixture(int components, int latent_dim, uint64_t seed);
};

struct LatentBatch {
    Eigen::MatrixXd mu;       // B x N
    Eigen::MatrixXd logvar;   // B x N, clamped to [-20, 20]
    Eigen::MatrixXd z;        // B x N
};

struct VaeLossParts {
    double reconstruction = 0.0;
    double kl = 0.0;
    double total = 0.0;
};

// KL(q(z|x) || prior) averaged over the batch. Closed form for the standard
// normal prior; single-sample Monte Carlo (using code.z) for the mixture.
double kl_divergence(const LatentBatch& code, const PriorSpec& prior);

// reconstruction = per-image sum of squared pixel errors, batch mean.
VaeLossParts vae_loss(const nn::Tensor& x, const nn::Tensor& x_hat, const LatentBatch& code,
                      const PriorSpec& prior);

// Pads (centered, zeros) images smaller than side and stacks into (M,1,side,side).
nn::Tensor to_tensor(const std::vector<const Image*>& images, int side);
nn::Tensor to_tensor(const data::Dataset& ds, int side);
// Extracts sample n, center-cropping back to rows x cols.
Image from_tensor(const nn::Tensor& t, int n, int rows, int cols);

class VaeModel {
public:
    VaeModel(int side, int latent_dim, PriorSpec prior, uint64_t seed,
             std::vector<int> widths = {32, 64, 128, 256});

    int side() const { return side_; }
    int latent_dim() const { return latent_; }
    const std::vector<int>& widths() const { return widths_; }
    uint64_t init_seed() const { return init_seed_; }
    std::string architecture_tag() const;

    const PriorSpec& prior() const;  // reflects current (possibly trained) values
    PriorSpec& prior_mutable() { return prior_; }

    // sampler == nullptr gives z = mu.
    LatentBatch encode(const nn::Tensor& x, Rng* sampler);
    nn::Tensor decode(const Eigen::MatrixXd& z);

    // Paired train-time passes; backward must follow its forward. extra_dz
    // (B x N) is added to the reconstruction's dL/dz (clustering coupling).
    VaeLossParts train_forward(const nn::Tensor& x, Rng& sampler);
    void train_backward(const Eigen::MatrixXd* extra_dz = nullptr);
    // latent batch cached by the last train_forward
    const LatentBatch& last_code() const { return last_code_; }

    std::vector<nn::Param*> params();

    // Refreshes the PriorSpec view after optimizer steps touched the
    // trainable mixture parameters.
    void sync_prior();

private:
    LatentBatch encode_cached(const nn::Tensor& x, Rng* sampler);
    Eigen::MatrixXd decoder_backward_to_z(const nn::Tensor& dxhat);

    int side_, latent_;
    std::vector<int> widths_;
    uint64_t init_seed_;
    PriorSpec prior_;
    std::vector<nn::Param> prior_params_;  // mixture only: means, logvars, logits

    std::vector<std::unique_ptr<nn::Layer>> encoder_;
    std::unique_ptr<nn::Dense> mu_head_;
    std::unique_ptr<nn::Dense> logvar_head_;
    std::vector<std::unique_ptr<nn::Layer>> decoder_;  // dense, relu, convT..., sigmoid

    // train_forward cache
    nn::Tensor last_x_, last_xhat_;
    LatentBatch last_code_;
    Eigen::MatrixXd last_eps_;
    Eigen::ArrayXXd clamp_mask_;
    Eigen::MatrixXd last_resp_;   // mixture only
    int bottleneck_side_ = 0;
};

// Minimizes vae_loss with the configured optimizer. Returns per-epoch mean
// loss parts. Aborts with a diagnostic naming the epoch if the loss goes
// non-finite. Fully seeded; cfg.epochs_max == 0 returns params unchanged.
std::vector<VaeLossParts> pretrain(VaeModel& model, const data::Dataset& train, const TrainConfig& cfg,
                                   nn::Optimizer* optimizer = nullptr);

}  // namespace uqc::vae
