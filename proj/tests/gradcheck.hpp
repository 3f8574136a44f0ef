#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "uqc/vae.hpp"

namespace testutil {

// An additional loss term attached to the latent batch, with its dL/dz.
// Used to exercise the extra_dz coupling exactly like fine-tuning does.
struct CoupledLoss {
    std::function<double(const Eigen::MatrixXd& z)> loss;
    std::function<Eigen::MatrixXd(const Eigen::MatrixXd& z)> dz;
};

// VAE loss as a deterministic function of the parameters: the reparameterization
// noise is replayed from a fixed seed on every call.
inline double vae_loss_with_fixed_noise(uqc::vae::VaeModel& model, const uqc::nn::Tensor& x,
                                        uint64_t noise_seed, const CoupledLoss* couple = nullptr) {
    uqc::Rng sampler(noise_seed);
    const uqc::vae::VaeLossParts parts = model.train_forward(x, sampler);
    double total = parts.total;
    if (couple) total += couple->loss(model.last_code().z);
    return total;
}

// Central finite differences on a few coordinates of every parameter tensor,
// returning the worst relative error against the analytic gradient.
//
// A coordinate is only used when the finite difference is consistent across
// two step sizes; inconsistency means a ReLU kink sits inside the stencil,
// where the central-difference oracle itself is invalid, and another
// coordinate is drawn instead. A wrong analytic gradient cannot hide behind
// this: it disagrees with the (scale-consistent) difference quotients.
inline double vae_fd_worst_rel_error(uqc::vae::VaeModel& model, const uqc::nn::Tensor& x,
                                     uint64_t noise_seed, const CoupledLoss* couple = nullptr,
                                     double step = 1e-4) {
    auto params = model.params();

    uqc::Rng sampler(noise_seed);
    model.train_forward(x, sampler);
    uqc::nn::Optimizer::zero_grad(params);
    if (couple) {
        const Eigen::MatrixXd extra = couple->dz(model.last_code().z);
        model.train_backward(&extra);
    } else {
        model.train_backward();
    }
    std::vector<Eigen::VectorXd> grads;
    grads.reserve(params.size());
    for (uqc::nn::Param* p : params) grads.push_back(p->grad);

    const auto fd_at = [&](uqc::nn::Param* p, Eigen::Index j, double h) {
        const double keep = p->value[j];
        p->value[j] = keep + h;
        const double lp = vae_loss_with_fixed_noise(model, x, noise_seed, couple);
        p->value[j] = keep - h;
        const double lm = vae_loss_with_fixed_noise(model, x, noise_seed, couple);
        p->value[j] = keep;
        return (lp - lm) / (2.0 * h);
    };

    uqc::Rng pick(77);
    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        uqc::nn::Param* p = params[pi];
        const int slots = static_cast<int>(std::min<Eigen::Index>(3, p->value.size()));
        int valid = 0;
        for (int k = 0; k < slots; ++k) {
            for (int attempt = 0; attempt < 8; ++attempt) {
                const Eigen::Index j =
                    static_cast<Eigen::Index>(pick.uniform_index(static_cast<size_t>(p->value.size())));
                const double fd = fd_at(p, j, step);
                const double fd_small = fd_at(p, j, step / 4.0);
                const double scale_gap =
                    std::abs(fd - fd_small) / std::max({1.0, std::abs(fd), std::abs(fd_small)});
                if (scale_gap > 1e-5) continue;  // kink inside the stencil
                const double got = grads[pi][j];
                const double rel = std::abs(fd - got) / std::max({1.0, std::abs(fd), std::abs(got)});
                worst = std::max(worst, rel);
                ++valid;
                break;
            }
        }
        if (valid == 0) worst = std::max(worst, 1.0);  // nothing checkable: fail loudly
    }
    return worst;
}

}  // namespace testutil
