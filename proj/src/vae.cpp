#include "uqc/vae.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace uqc::vae {

namespace {

constexpr double kLogvarClamp = 20.0;
constexpr double kLog2Pi = 1.8378770664093453;

int norm_groups(int channels) {
    int g = std::min(8, channels);
    while (channels % g != 0) --g;
    return g;
}

Eigen::MatrixXd mat_from_tensor(const nn::Tensor& t) {
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        t.data.data(), t.n, t.features());
}

nn::Tensor tensor_from_mat(const Eigen::MatrixXd& m) {
    nn::Tensor t(static_cast<int>(m.rows()), static_cast<int>(m.cols()), 1, 1);
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        t.data.data(), m.rows(), m.cols()) = m;
    return t;
}

// log p_mix(z) rowwise, plus responsibilities if asked
Eigen::VectorXd mixture_log_density(const Eigen::MatrixXd& z, const PriorSpec& prior,
                                    Eigen::MatrixXd* resp) {
    const int b = static_cast<int>(z.rows());
    const int kp = prior.components;
    const Eigen::VectorXd w = prior.weights();
    Eigen::MatrixXd logc(b, kp);  // log w_c + log N_c(z_i)
    for (int c = 0; c < kp; ++c) {
        const auto mc = prior.means.row(c).array();
        const auto lvc = prior.logvars.row(c).array();
        const double base = std::log(w[c]) - 0.5 * (kLog2Pi * z.cols() + lvc.sum());
        for (int i = 0; i < b; ++i) {
            const auto d = z.row(i).array() - mc;
            logc(i, c) = base - 0.5 * (d.square() / lvc.exp()).sum();
        }
    }
    Eigen::VectorXd out(b);
    for (int i = 0; i < b; ++i) {
        const double mx = logc.row(i).maxCoeff();
        const double lse = mx + std::log((logc.row(i).array() - mx).exp().sum());
        out[i] = lse;
        if (resp) resp->row(i) = (logc.row(i).array() - lse).exp();
    }
    return out;
}

}  // namespace

Eigen::VectorXd PriorSpec::weights() const {
    if (kind == Kind::standard_normal) return Eigen::VectorXd();
    const double mx = weight_logits.maxCoeff();
    Eigen::VectorXd w = (weight_logits.array() - mx).exp();
    return w / w.sum();
}

PriorSpec PriorSpec::standard_normal() { return PriorSpec{}; }

PriorSpec PriorSpec::gaussian_mixture(int components, int latent_dim, uint64_t seed) {
    if (components < 1) throw std::domain_error("mixture needs at least one component");
    PriorSpec p;
    p.kind = Kind::gaussian_mixture;
    p.components = components;
    p.means = Eigen::MatrixXd::Zero(components, latent_dim);
    Rng rng(seed);
    const double scale = 3.0;
    for (int c = 0; c < components; ++c) {
        p.means(c, c % latent_dim) = scale;
        for (int d = 0; d < latent_dim; ++d) p.means(c, d) += rng.normal(0.0, 0.01);
    }
    p.logvars = Eigen::MatrixXd::Zero(components, latent_dim);
    p.weight_logits = Eigen::VectorXd::Zero(components);
    return p;
}

double kl_divergence(const LatentBatch& code, const PriorSpec& prior) {
    const double b = static_cast<double>(code.mu.rows());
    if (prior.kind == PriorSpec::Kind::standard_normal) {
        return (-0.5 * (1.0 + code.logvar.array() - code.mu.array().square() - code.logvar.array().exp())).sum() / b;
    }
    // log q(z|x) with z = mu + sigma*eps: eps^2 = (z-mu)^2 / exp(logvar)
    const Eigen::ArrayXXd eps2 = (code.z - code.mu).array().square() / code.logvar.array().exp();
    double logq = 0.0;
    for (int i = 0; i < code.mu.rows(); ++i)
        logq += -0.5 * (kLog2Pi * code.mu.cols() + code.logvar.row(i).sum() + eps2.row(i).sum());
    const double logp = mixture_log_density(code.z, prior, nullptr).sum();
    return (logq - logp) / b;
}

VaeLossParts vae_loss(const nn::Tensor& x, const nn::Tensor& x_hat, const LatentBatch& code,
                      const PriorSpec& prior) {
    if (x.data.size() != x_hat.data.size()) throw std::domain_error("vae_loss: shape mismatch");
    VaeLossParts parts;
    parts.reconstruction = (x_hat.data - x.data).squaredNorm() / static_cast<double>(x.n);
    parts.kl = kl_divergence(code, prior);
    parts.total = parts.reconstruction + parts.kl;
    return parts;
}

nn::Tensor to_tensor(const std::vector<const Image*>& images, int side) {
    nn::Tensor t(static_cast<int>(images.size()), 1, side, side);
    for (size_t i = 0; i < images.size(); ++i) {
        const Image& img = *images[i];
        const int rows = static_cast<int>(img.rows());
        const int cols = static_cast<int>(img.cols());
        if (rows > side || cols > side) throw std::domain_error("image exceeds model side");
        const int ro = (side - rows) / 2;
        const int co = (side - cols) / 2;
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) t.at(static_cast<int>(i), 0, ro + r, co + c) = img(r, c);
    }
    return t;
}

nn::Tensor to_tensor(const data::Dataset& ds, int side) {
    std::vector<const Image*> ptrs;
    ptrs.reserve(ds.samples.size());
    for (const auto& s : ds.samples) ptrs.push_back(&s.pixels);
    return to_tensor(ptrs, side);
}

Image from_tensor(const nn::Tensor& t, int n, int rows, int cols) {
    const int ro = (t.h - rows) / 2;
    const int co = (t.w - cols) / 2;
    Image img(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) img(r, c) = t.at(n, 0, ro + r, co + c);
    return img;
}

VaeModel::VaeModel(int side, int latent_dim, PriorSpec prior, uint64_t seed, std::vector<int> widths)
    : side_(side), latent_(latent_dim), widths_(std::move(widths)), init_seed_(seed), prior_(std::move(prior)) {
    const int blocks = static_cast<int>(widths_.size());
    if (blocks < 1) throw std::domain_error("at least one convolution block required");
    const int factor = 1 << blocks;
    if (side_ % factor != 0) throw std::domain_error("side must be divisible by " + std::to_string(factor));
    if (latent_ < 2) throw std::domain_error("latent_dim must be >= 2");
    bottleneck_side_ = side_ / factor;

    Rng rng(seed);
    int cin = 1;
    for (int w : widths_) {
        encoder_.push_back(std::make_unique<nn::Conv2d>(cin, w, 3, 2, 1, rng));
        encoder_.push_back(std::make_unique<nn::GroupNorm>(w, norm_groups(w)));
        encoder_.push_back(std::make_unique<nn::ReLU>());
        cin = w;
    }
    const int feat = widths_.back() * bottleneck_side_ * bottleneck_side_;
    mu_head_ = std::make_unique<nn::Dense>(feat, latent_, rng);
    logvar_head_ = std::make_unique<nn::Dense>(feat, latent_, rng);

    decoder_.push_back(std::make_unique<nn::Dense>(latent_, feat, rng));
    decoder_.push_back(std::make_unique<nn::ReLU>());
    for (int i = blocks - 1; i >= 1; --i) {
        decoder_.push_back(std::make_unique<nn::ConvTranspose2d>(widths_[i], widths_[i - 1], 4, 2, 1, rng));
        decoder_.push_back(std::make_unique<nn::GroupNorm>(widths_[i - 1], norm_groups(widths_[i - 1])));
        decoder_.push_back(std::make_unique<nn::ReLU>());
    }
    decoder_.push_back(std::make_unique<nn::ConvTranspose2d>(widths_.front(), 1, 4, 2, 1, rng));
    decoder_.push_back(std::make_unique<nn::Sigmoid>());

    if (prior_.kind == PriorSpec::Kind::gaussian_mixture) {
        const int kp = prior_.components;
        prior_params_.emplace_back("prior.means", static_cast<Eigen::Index>(kp) * latent_);
        prior_params_.emplace_back("prior.logvars", static_cast<Eigen::Index>(kp) * latent_);
        prior_params_.emplace_back("prior.logits", kp);
        Eigen::Map<Eigen::MatrixXd>(prior_params_[0].value.data(), kp, latent_) = prior_.means;
        Eigen::Map<Eigen::MatrixXd>(prior_params_[1].value.data(), kp, latent_) = prior_.logvars;
        prior_params_[2].value = prior_.weight_logits;
    }
}

void VaeModel::sync_prior() {
    if (prior_.kind != PriorSpec::Kind::gaussian_mixture) return;
    const int kp = prior_.components;
    prior_.means = Eigen::Map<const Eigen::MatrixXd>(prior_params_[0].value.data(), kp, latent_);
    prior_.logvars = Eigen::Map<const Eigen::MatrixXd>(prior_params_[1].value.data(), kp, latent_);
    prior_.weight_logits = prior_params_[2].value;
}

const PriorSpec& VaeModel::prior() const { return prior_; }

std::string VaeModel::architecture_tag() const {
    std::ostringstream os;
    os << "cnn-vae/side" << side_ << "/lat" << latent_ << "/w";
    for (size_t i = 0; i < widths_.size(); ++i) os << (i ? "-" : "") << widths_[i];
    os << "/gn-relu/k3s2-k4s2";
    return os.str();
}

std::vector<nn::Param*> VaeModel::params() {
    std::vector<nn::Param*> out;
    for (auto& l : encoder_)
        for (nn::Param* p : l->params()) out.push_back(p);
    for (nn::Param* p : mu_head_->params()) out.push_back(p);
    for (nn::Param* p : logvar_head_->params()) out.push_back(p);
    for (auto& l : decoder_)
        for (nn::Param* p : l->params()) out.push_back(p);
    for (auto& p : prior_params_) out.push_back(&p);
    return out;
}

LatentBatch VaeModel::encode_cached(const nn::Tensor& x, Rng* sampler) {
    if (x.c != 1 || x.h != side_ || x.w != side_) throw std::domain_error("encode: batch shape mismatch");
    nn::Tensor t = x;
    for (auto& l : encoder_) t = l->forward(t);
    t = t.flattened();
    const nn::Tensor mu_t = mu_head_->forward(t);
    const nn::Tensor lv_t = logvar_head_->forward(t);

    LatentBatch code;
    code.mu = mat_from_tensor(mu_t);
    Eigen::MatrixXd lv_raw = mat_from_tensor(lv_t);
    clamp_mask_ = (lv_raw.array() > -kLogvarClamp && lv_raw.array() < kLogvarClamp).cast<double>();
    code.logvar = lv_raw.cwiseMax(-kLogvarClamp).cwiseMin(kLogvarClamp);

    last_eps_.resize(code.mu.rows(), code.mu.cols());
    if (sampler) {
        for (Eigen::Index i = 0; i < last_eps_.rows(); ++i)
            for (Eigen::Index d = 0; d < last_eps_.cols(); ++d) last_eps_(i, d) = sampler->normal();
    } else {
        last_eps_.setZero();
    }
    code.z = code.mu.array() + (code.logvar.array() / 2.0).exp() * last_eps_.array();
    return code;
}

LatentBatch VaeModel::encode(const nn::Tensor& x, Rng* sampler) { return encode_cached(x, sampler); }

nn::Tensor VaeModel::decode(const Eigen::MatrixXd& z) {
    if (z.cols() != latent_) throw std::domain_error("decode: latent length mismatch");
    nn::Tensor t = tensor_from_mat(z);
    t = decoder_[0]->forward(t);
    t = decoder_[1]->forward(t);
    t = t.reshaped(widths_.back(), bottleneck_side_, bottleneck_side_);
    for (size_t i = 2; i < decoder_.size(); ++i) t = decoder_[i]->forward(t);
    return t;
}

Eigen::MatrixXd VaeModel::decoder_backward_to_z(const nn::Tensor& dxhat) {
    nn::Tensor t = dxhat;
    for (size_t i = decoder_.size(); i-- > 2;) t = decoder_[i]->backward(t);
    t = t.flattened();
    t = decoder_[1]->backward(t);
    t = decoder_[0]->backward(t);
    return mat_from_tensor(t);
}

VaeLossParts VaeModel::train_forward(const nn::Tensor& x, Rng& sampler) {
    sync_prior();
    last_x_ = x;
    last_code_ = encode_cached(x, &sampler);
    last_xhat_ = decode(last_code_.z);

    const double b = static_cast<double>(x.n);
    VaeLossParts parts;
    parts.reconstruction = (last_xhat_.data - x.data).squaredNorm() / b;
    if (prior_.kind == PriorSpec::Kind::standard_normal) {
        parts.kl = (-0.5 * (1.0 + last_code_.logvar.array() - last_code_.mu.array().square()
                            - last_code_.logvar.array().exp())).sum() / b;
    } else {
        last_resp_.resize(x.n, prior_.components);
        const Eigen::VectorXd logp = mixture_log_density(last_code_.z, prior_, &last_resp_);
        double logq = 0.0;
        for (int i = 0; i < x.n; ++i)
            logq += -0.5 * (kLog2Pi * latent_ + last_code_.logvar.row(i).sum()
                            + last_eps_.row(i).array().square().sum());
        parts.kl = (logq - logp.sum()) / b;
    }
    parts.total = parts.reconstruction + parts.kl;
    return parts;
}

void VaeModel::train_backward(const Eigen::MatrixXd* extra_dz) {
    const double b = static_cast<double>(last_x_.n);
    nn::Tensor dxhat = last_xhat_;
    dxhat.data = 2.0 * (last_xhat_.data - last_x_.data) / b;

    Eigen::MatrixXd dz = decoder_backward_to_z(dxhat);
    if (prior_.kind == PriorSpec::Kind::gaussian_mixture) {
        // dKL/dz = -grad_z log p_mix / B, via responsibilities; also the prior
        // parameter gradients (accumulated, zero_grad is the caller's job)
        const Eigen::VectorXd w = prior_.weights();
        Eigen::Map<Eigen::MatrixXd> dmeans(prior_params_[0].grad.data(), prior_.components, latent_);
        Eigen::Map<Eigen::MatrixXd> dlogvars(prior_params_[1].grad.data(), prior_.components, latent_);
        for (int i = 0; i < last_x_.n; ++i)
            for (int c = 0; c < prior_.components; ++c) {
                const auto diff = last_code_.z.row(i).array() - prior_.means.row(c).array();
                const auto var = prior_.logvars.row(c).array().exp();
                const double r = last_resp_(i, c);
                dz.row(i).array() += r * diff / var / b;
                dmeans.row(c).array() -= r * diff / var / b;
                dlogvars.row(c).array() -= r * 0.5 * (diff.square() / var - 1.0) / b;
                prior_params_[2].grad[c] -= (r - w[c]) / b;
            }
    }
    if (extra_dz) dz += *extra_dz;

    const Eigen::ArrayXXd sigma_half_eps = 0.5 * (last_code_.logvar.array() / 2.0).exp() * last_eps_.array();
    Eigen::MatrixXd dmu = dz;
    Eigen::MatrixXd dlv = (dz.array() * sigma_half_eps).matrix();
    if (prior_.kind == PriorSpec::Kind::standard_normal) {
        dmu.array() += last_code_.mu.array() / b;
        dlv.array() += 0.5 * (last_code_.logvar.array().exp() - 1.0) / b;
    } else {
        dlv.array() += -0.5 / b;
    }
    dlv.array() *= clamp_mask_;

    nn::Tensor df_mu = mu_head_->backward(tensor_from_mat(dmu));
    nn::Tensor df_lv = logvar_head_->backward(tensor_from_mat(dlv));
    nn::Tensor df = df_mu;
    df.data += df_lv.data;
    df = df.reshaped(widths_.back(), bottleneck_side_, bottleneck_side_);
    for (size_t i = encoder_.size(); i-- > 0;) df = encoder_[i]->backward(df);
}

std::vector<VaeLossParts> pretrain(VaeModel& model, const data::Dataset& train, const TrainConfig& cfg,
                                   nn::Optimizer* optimizer) {
    cfg.validate();
    if (train.samples.empty()) throw std::invalid_argument("pretrain: empty training set");

    nn::OptimizerConfig ocfg;
    ocfg.kind = cfg.optimizer;
    ocfg.lr = cfg.lr;
    std::unique_ptr<nn::Optimizer> local;
    if (!optimizer) {
        local = std::make_unique<nn::Optimizer>(ocfg);
        optimizer = local.get();
    }
    auto params = model.params();

    Rng order_rng(cfg.seed);
    Rng sampler(cfg.seed ^ 0x5851f42d4c957f2dULL);

    const size_t m = train.samples.size();
    std::vector<size_t> idx(m);
    for (size_t i = 0; i < m; ++i) idx[i] = i;

    std::vector<VaeLossParts> history;
    EarlyStopper stopper(cfg.min_rel_improvement, cfg.patience);
    for (int epoch = 0; epoch < cfg.epochs_max; ++epoch) {
        order_rng.shuffle(idx);
        VaeLossParts epoch_mean;
        size_t seen = 0;
        for (size_t start = 0; start < m; start += static_cast<size_t>(cfg.batch)) {
            const size_t end = std::min(m, start + static_cast<size_t>(cfg.batch));
            std::vector<const Image*> imgs;
            imgs.reserve(end - start);
            for (size_t i = start; i < end; ++i) imgs.push_back(&train.samples[idx[i]].pixels);
            const nn::Tensor x = to_tensor(imgs, model.side());
            const VaeLossParts parts = model.train_forward(x, sampler);
            if (!std::isfinite(parts.total))
                throw std::runtime_error("pretrain diverged (non-finite loss) at epoch " + std::to_string(epoch));
            nn::Optimizer::zero_grad(params);
            model.train_backward();
            optimizer->step(params);
            const double w = static_cast<double>(end - start);
            epoch_mean.reconstruction += parts.reconstruction * w;
            epoch_mean.kl += parts.kl * w;
            epoch_mean.total += parts.total * w;
            seen += end - start;
        }
        epoch_mean.reconstruction /= static_cast<double>(seen);
        epoch_mean.kl /= static_cast<double>(seen);
        epoch_mean.total /= static_cast<double>(seen);
        history.push_back(epoch_mean);
        if (stopper.feed(epoch_mean.total)) break;
    }
    model.sync_prior();
    return history;
}

}  // namespace uqc::vae
