#pragma once

#include <vector>

#include <Eigen/Dense>

#include "uqc/data.hpp"
#include "uqc/trainconfig.hpp"
#include "uqc/vae.hpp"

namespace uqc::cluster {

struct Centroids {
    Eigen::MatrixXd mu;  // K x N
    int K() const { return static_cast<int>(mu.rows()); }
};

struct SoftAssignment {
    Eigen::MatrixXd yp;  // M x K, row-stochastic
    Eigen::MatrixXd yt;  // M x K or empty
};

// Lloyd's algorithm with k-means++ seeding, 20 restarts, best inertia kept.
Centroids init_centroids(const Eigen::MatrixXd& latents, int K, uint64_t seed);

// Plain k-means returning labels too (used by the comparison harness).
std::pair<Centroids, std::vector<int>> kmeans(const Eigen::MatrixXd& points, int K, uint64_t seed);

// Student-t kernel (degree 1): yp_ik = (1+||z_i-mu_k||^2)^-1, row-normalized.
SoftAssignment soft_assign(const Eigen::MatrixXd& latents, const Centroids& centroids);

// f_k = column sums of yp; yt_ik = (yp_ik^2/f_k) / sum_k'(yp_ik'^2/f_k').
// Throws on a collapsed cluster (f_k = 0).
Eigen::MatrixXd target_distribution(const Eigen::MatrixXd& yp);

// KL(yt || yp) averaged over rows; 0*log(0/q) = 0; yp=0 under yt>0 overflows.
double clustering_loss(const Eigen::MatrixXd& yt, const Eigen::MatrixXd& yp);

double joint_loss(const vae::VaeLossParts& vae_parts, double lc, double gamma);

struct FinetuneEpoch {
    double lv = 0.0;   // VAE part
    double lc = 0.0;   // clustering part
    double total = 0.0;
};

// Joint DEC fine-tuning: every epoch recomputes Y^p over the full training
// set from mu-latents, refreshes and freezes Y^t, then minibatch-minimizes
// L = L_V + gamma*L_C updating encoder, decoder, and centroid rows. Stops on
// loss stagnation (relative improvement < cfg.min_rel_improvement for
// cfg.patience epochs) or cfg.epochs_max. Aborts on cluster collapse or
// non-finite loss.
std::vector<FinetuneEpoch> finetune(vae::VaeModel& model, Centroids& centroids,
                                    const data::Dataset& train, const TrainConfig& cfg);

// Gradient of the batch-averaged gamma*KL(yt||yp) term, for tests and the
// training loop: returns dL/dz (B x N) and accumulates dL/dmu into dmu.
Eigen::MatrixXd clustering_grads(const Eigen::MatrixXd& z, const Centroids& centroids,
                                 const Eigen::MatrixXd& yt, double gamma, Eigen::MatrixXd& dmu);

}  // namespace uqc::cluster
