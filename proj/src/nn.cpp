#include "uqc/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace uqc::nn {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void he_init(Eigen::VectorXd& w, int fan_in, Rng& rng) {
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, std);
}

int conv_out(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int cin, int cout, int kernel, int stride, int pad, Rng& rng)
    : cin_(cin), cout_(cout), k_(kernel), s_(stride), p_(pad),
      weight_("conv.weight", static_cast<Eigen::Index>(cin) * kernel * kernel * cout),
      bias_("conv.bias", cout) {
    he_init(weight_.value, cin * kernel * kernel, rng);
}

std::string Conv2d::tag() const {
    return "conv" + std::to_string(k_) + "s" + std::to_string(s_) + ":" + std::to_string(cin_) + ">" + std::to_string(cout_);
}

Tensor Conv2d::forward(const Tensor& x) {
    if (x.c != cin_) throw std::domain_error("conv: channel mismatch");
    x_ = x;
    const int oh = conv_out(x.h, k_, s_, p_);
    const int ow = conv_out(x.w, k_, s_, p_);
    Tensor y(x.n, cout_, oh, ow);
    const Eigen::Map<const Eigen::MatrixXd> W(weight_.value.data(), static_cast<Eigen::Index>(cin_) * k_ * k_, cout_);
    Eigen::MatrixXd cols(static_cast<Eigen::Index>(oh) * ow, static_cast<Eigen::Index>(cin_) * k_ * k_);
    for (int n = 0; n < x.n; ++n) {
        for (int r = 0; r < oh; ++r)
            for (int c = 0; c < ow; ++c) {
                const Eigen::Index row = static_cast<Eigen::Index>(r) * ow + c;
                for (int ic = 0; ic < cin_; ++ic)
                    for (int kr = 0; kr < k_; ++kr)
                        for (int kc = 0; kc < k_; ++kc) {
                            const int ir = r * s_ - p_ + kr;
                            const int icol = c * s_ - p_ + kc;
                            const bool in = ir >= 0 && ir < x.h && icol >= 0 && icol < x.w;
                            cols(row, (static_cast<Eigen::Index>(ic) * k_ + kr) * k_ + kc) =
                                in ? x.at(n, ic, ir, icol) : 0.0;
                        }
            }
        const Eigen::MatrixXd prod = cols * W;  // (oh*ow) x cout
        for (int co = 0; co < cout_; ++co) {
            const double b = bias_.value[co];
            for (int r = 0; r < oh; ++r)
                for (int c = 0; c < ow; ++c)
                    y.at(n, co, r, c) = prod(static_cast<Eigen::Index>(r) * ow + c, co) + b;
        }
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
    const int oh = dy.h, ow = dy.w;
    Tensor dx(x_.n, cin_, x_.h, x_.w);
    const Eigen::Map<const Eigen::MatrixXd> W(weight_.value.data(), static_cast<Eigen::Index>(cin_) * k_ * k_, cout_);
    Eigen::Map<Eigen::MatrixXd> dW(weight_.grad.data(), static_cast<Eigen::Index>(cin_) * k_ * k_, cout_);
    Eigen::MatrixXd cols(static_cast<Eigen::Index>(oh) * ow, static_cast<Eigen::Index>(cin_) * k_ * k_);
    Eigen::MatrixXd dY(static_cast<Eigen::Index>(oh) * ow, cout_);
    for (int n = 0; n < x_.n; ++n) {
        for (int co = 0; co < cout_; ++co)
            for (int r = 0; r < oh; ++r)
                for (int c = 0; c < ow; ++c)
                    dY(static_cast<Eigen::Index>(r) * ow + c, co) = dy.at(n, co, r, c);
        for (int r = 0; r < oh; ++r)
            for (int c = 0; c < ow; ++c) {
                const Eigen::Index row = static_cast<Eigen::Index>(r) * ow + c;
                for (int ic = 0; ic < cin_; ++ic)
                    for (int kr = 0; kr < k_; ++kr)
                        for (int kc = 0; kc < k_; ++kc) {
                            const int ir = r * s_ - p_ + kr;
                            const int icol = c * s_ - p_ + kc;
                            const bool in = ir >= 0 && ir < x_.h && icol >= 0 && icol < x_.w;
                            cols(row, (static_cast<Eigen::Index>(ic) * k_ + kr) * k_ + kc) =
                                in ? x_.at(n, ic, ir, icol) : 0.0;
                        }
            }
        dW.noalias() += cols.transpose() * dY;
        bias_.grad += dY.colwise().sum().transpose();
        const Eigen::MatrixXd dcols = dY * W.transpose();
        for (int r = 0; r < oh; ++r)
            for (int c = 0; c < ow; ++c) {
                const Eigen::Index row = static_cast<Eigen::Index>(r) * ow + c;
                for (int ic = 0; ic < cin_; ++ic)
                    for (int kr = 0; kr < k_; ++kr)
                        for (int kc = 0; kc < k_; ++kc) {
                            const int ir = r * s_ - p_ + kr;
                            const int icol = c * s_ - p_ + kc;
                            if (ir < 0 || ir >= x_.h || icol < 0 || icol >= x_.w) continue;
                            dx.at(n, ic, ir, icol) += dcols(row, (static_cast<Eigen::Index>(ic) * k_ + kr) * k_ + kc);
                        }
            }
    }
    return dx;
}

// ----------------------------------------------------- ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(int cin, int cout, int kernel, int stride, int pad, Rng& rng)
    : cin_(cin), cout_(cout), k_(kernel), s_(stride), p_(pad),
      weight_("convt.weight", static_cast<Eigen::Index>(cin) * cout * kernel * kernel),
      bias_("convt.bias", cout) {
    he_init(weight_.value, cin * kernel * kernel, rng);
}

std::string ConvTranspose2d::tag() const {
    return "convt" + std::to_string(k_) + "s" + std::to_string(s_) + ":" + std::to_string(cin_) + ">" + std::to_string(cout_);
}

Tensor ConvTranspose2d::forward(const Tensor& x) {
    if (x.c != cin_) throw std::domain_error("convt: channel mismatch");
    x_ = x;
    const int oh = (x.h - 1) * s_ - 2 * p_ + k_;
    const int ow = (x.w - 1) * s_ - 2 * p_ + k_;
    Tensor y(x.n, cout_, oh, ow);
    const Eigen::Map<const Eigen::MatrixXd> W(weight_.value.data(), cin_, static_cast<Eigen::Index>(cout_) * k_ * k_);
    Eigen::MatrixXd xmat(static_cast<Eigen::Index>(x.h) * x.w, cin_);
    for (int n = 0; n < x.n; ++n) {
        for (int ic = 0; ic < cin_; ++ic)
            for (int r = 0; r < x.h; ++r)
                for (int c = 0; c < x.w; ++c)
                    xmat(static_cast<Eigen::Index>(r) * x.w + c, ic) = x.at(n, ic, r, c);
        const Eigen::MatrixXd prod = xmat * W;  // (h*w) x (cout*k*k)
        for (int r = 0; r < x.h; ++r)
            for (int c = 0; c < x.w; ++c) {
                const Eigen::Index row = static_cast<Eigen::Index>(r) * x.w + c;
                for (int co = 0; co < cout_; ++co)
                    for (int kr = 0; kr < k_; ++kr)
                        for (int kc = 0; kc < k_; ++kc) {
                            const int orow = r * s_ - p_ + kr;
                            const int ocol = c * s_ - p_ + kc;
                            if (orow < 0 || orow >= oh || ocol < 0 || ocol >= ow) continue;
                            y.at(n, co, orow, ocol) += prod(row, (static_cast<Eigen::Index>(co) * k_ + kr) * k_ + kc);
                        }
            }
        for (int co = 0; co < cout_; ++co)
            for (int r = 0; r < oh; ++r)
                for (int c = 0; c < ow; ++c) y.at(n, co, r, c) += bias_.value[co];
    }
    return y;
}

Tensor ConvTranspose2d::backward(const Tensor& dy) {
    const int oh = dy.h, ow = dy.w;
    Tensor dx(x_.n, cin_, x_.h, x_.w);
    const Eigen::Map<const Eigen::MatrixXd> W(weight_.value.data(), cin_, static_cast<Eigen::Index>(cout_) * k_ * k_);
    Eigen::Map<Eigen::MatrixXd> dW(weight_.grad.data(), cin_, static_cast<Eigen::Index>(cout_) * k_ * k_);
    Eigen::MatrixXd dcols(static_cast<Eigen::Index>(x_.h) * x_.w, static_cast<Eigen::Index>(cout_) * k_ * k_);
    Eigen::MatrixXd xmat(static_cast<Eigen::Index>(x_.h) * x_.w, cin_);
    for (int n = 0; n < x_.n; ++n) {
        for (int r = 0; r < x_.h; ++r)
            for (int c = 0; c < x_.w; ++c) {
                const Eigen::Index row = static_cast<Eigen::Index>(r) * x_.w + c;
                for (int co = 0; co < cout_; ++co)
                    for (int kr = 0; kr < k_; ++kr)
                        for (int kc = 0; kc < k_; ++kc) {
                            const int orow = r * s_ - p_ + kr;
                            const int ocol = c * s_ - p_ + kc;
                            const bool in = orow >= 0 && orow < oh && ocol >= 0 && ocol < ow;
                            dcols(row, (static_cast<Eigen::Index>(co) * k_ + kr) * k_ + kc) =
                                in ? dy.at(n, co, orow, ocol) : 0.0;
                        }
            }
        for (int ic = 0; ic < cin_; ++ic)
            for (int r = 0; r < x_.h; ++r)
                for (int c = 0; c < x_.w; ++c)
                    xmat(static_cast<Eigen::Index>(r) * x_.w + c, ic) = x_.at(n, ic, r, c);
        dW.noalias() += xmat.transpose() * dcols;
        const Eigen::MatrixXd dxmat = dcols * W.transpose();
        for (int ic = 0; ic < cin_; ++ic)
            for (int r = 0; r < x_.h; ++r)
                for (int c = 0; c < x_.w; ++c)
                    dx.at(n, ic, r, c) = dxmat(static_cast<Eigen::Index>(r) * x_.w + c, ic);
        for (int co = 0; co < cout_; ++co) {
            double s = 0.0;
            for (int r = 0; r < oh; ++r)
                for (int c = 0; c < ow; ++c) s += dy.at(n, co, r, c);
            bias_.grad[co] += s;
        }
    }
    return dx;
}

// -------------------------------------------------------------- GroupNorm

GroupNorm::GroupNorm(int channels, int groups)
    : channels_(channels), groups_(groups),
      gamma_("gn.gamma", channels), beta_("gn.beta", channels) {
    if (groups < 1 || channels % groups != 0)
        throw std::domain_error("group count must divide channels");
    gamma_.value.setOnes();
}

std::string GroupNorm::tag() const {
    return "gn" + std::to_string(groups_) + ":" + std::to_string(channels_);
}

Tensor GroupNorm::forward(const Tensor& x) {
    if (x.c != channels_) throw std::domain_error("groupnorm: channel mismatch");
    constexpr double kEps = 1e-5;
    const int cg = channels_ / groups_;
    const Eigen::Index group_sz = static_cast<Eigen::Index>(cg) * x.h * x.w;
    xhat_ = Tensor(x.n, x.c, x.h, x.w);
    inv_std_.resize(x.n, groups_);
    Tensor y(x.n, x.c, x.h, x.w);
    for (int n = 0; n < x.n; ++n)
        for (int g = 0; g < groups_; ++g) {
            const Eigen::Index base = ((static_cast<Eigen::Index>(n) * channels_ + static_cast<Eigen::Index>(g) * cg)) * x.h * x.w;
            auto seg = x.data.segment(base, group_sz);
            const double mean = seg.mean();
            const double var = (seg.array() - mean).square().mean();
            const double inv = 1.0 / std::sqrt(var + kEps);
            inv_std_(n, g) = inv;
            xhat_.data.segment(base, group_sz) = (seg.array() - mean) * inv;
            for (int lc = 0; lc < cg; ++lc) {
                const int ch = g * cg + lc;
                const Eigen::Index cbase = base + static_cast<Eigen::Index>(lc) * x.h * x.w;
                y.data.segment(cbase, static_cast<Eigen::Index>(x.h) * x.w) =
                    xhat_.data.segment(cbase, static_cast<Eigen::Index>(x.h) * x.w).array() * gamma_.value[ch] + beta_.value[ch];
            }
        }
    return y;
}

Tensor GroupNorm::backward(const Tensor& dy) {
    const int cg = channels_ / groups_;
    const Eigen::Index plane = static_cast<Eigen::Index>(dy.h) * dy.w;
    const Eigen::Index group_sz = static_cast<Eigen::Index>(cg) * plane;
    Tensor dx(dy.n, dy.c, dy.h, dy.w);
    Eigen::VectorXd dxhat(group_sz);
    for (int n = 0; n < dy.n; ++n)
        for (int g = 0; g < groups_; ++g) {
            const Eigen::Index base = ((static_cast<Eigen::Index>(n) * channels_ + static_cast<Eigen::Index>(g) * cg)) * plane;
            for (int lc = 0; lc < cg; ++lc) {
                const int ch = g * cg + lc;
                const Eigen::Index cbase = base + static_cast<Eigen::Index>(lc) * plane;
                auto dyc = dy.data.segment(cbase, plane);
                auto xhc = xhat_.data.segment(cbase, plane);
                gamma_.grad[ch] += dyc.dot(xhc);
                beta_.grad[ch] += dyc.sum();
                dxhat.segment(static_cast<Eigen::Index>(lc) * plane, plane) = dyc * gamma_.value[ch];
            }
            const double m = static_cast<double>(group_sz);
            auto xh = xhat_.data.segment(base, group_sz);
            const double s1 = dxhat.sum();
            const double s2 = dxhat.dot(xh);
            dx.data.segment(base, group_sz) =
                inv_std_(n, g) * (dxhat.array() - s1 / m - xh.array() * (s2 / m));
        }
    return dx;
}

// ------------------------------------------------------------- pointwise

Tensor ReLU::forward(const Tensor& x) {
    x_ = x;
    Tensor y = x;
    y.data = x.data.cwiseMax(0.0);
    return y;
}

Tensor ReLU::backward(const Tensor& dy) {
    Tensor dx = dy;
    for (Eigen::Index i = 0; i < dx.data.size(); ++i)
        if (x_.data[i] <= 0.0) dx.data[i] = 0.0;
    return dx;
}

Tensor Sigmoid::forward(const Tensor& x) {
    Tensor y = x;
    y.data = x.data.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    y_ = y;
    return y;
}

Tensor Sigmoid::backward(const Tensor& dy) {
    Tensor dx = dy;
    dx.data = dy.data.array() * y_.data.array() * (1.0 - y_.data.array());
    return dx;
}

// ----------------------------------------------------------------- Dense

Dense::Dense(int in, int out, Rng& rng)
    : in_(in), out_(out), weight_("dense.weight", static_cast<Eigen::Index>(in) * out), bias_("dense.bias", out) {
    he_init(weight_.value, in, rng);
}

std::string Dense::tag() const {
    return "dense:" + std::to_string(in_) + ">" + std::to_string(out_);
}

Tensor Dense::forward(const Tensor& x) {
    if (x.features() != in_) throw std::domain_error("dense: feature mismatch");
    x_ = x;
    const ConstMatMap X(x.data.data(), x.n, in_);
    const Eigen::Map<const Eigen::MatrixXd> W(weight_.value.data(), in_, out_);
    Tensor y(x.n, out_, 1, 1);
    MatMap Y(y.data.data(), x.n, out_);
    Y.noalias() = X * W;
    Y.rowwise() += bias_.value.transpose();
    return y;
}

Tensor Dense::backward(const Tensor& dy) {
    const ConstMatMap dY(dy.data.data(), dy.n, out_);
    const ConstMatMap X(x_.data.data(), x_.n, in_);
    const Eigen::Map<const Eigen::MatrixXd> W(weight_.value.data(), in_, out_);
    Eigen::Map<Eigen::MatrixXd> dW(weight_.grad.data(), in_, out_);
    dW.noalias() += X.transpose() * dY;
    bias_.grad += dY.colwise().sum().transpose();
    Tensor dx(x_.n, x_.c, x_.h, x_.w);
    MatMap dX(dx.data.data(), x_.n, in_);
    dX.noalias() = dY * W.transpose();
    return dx;
}

// ------------------------------------------------------------- Optimizer

void Optimizer::step(const std::vector<Param*>& params) {
    ++t_;
    if (cfg_.kind == OptimizerConfig::Kind::adam) {
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (Param* p : params) {
            p->m = cfg_.beta1 * p->m + (1.0 - cfg_.beta1) * p->grad;
            p->v = cfg_.beta2 * p->v.array() + (1.0 - cfg_.beta2) * p->grad.array().square();
            p->value.array() -= cfg_.lr * (p->m.array() / bc1) / ((p->v.array() / bc2).sqrt() + cfg_.eps);
        }
    } else {
        for (Param* p : params) {
            p->m = cfg_.momentum * p->m - cfg_.lr * p->grad;
            p->value += p->m;
        }
    }
}

void Optimizer::zero_grad(const std::vector<Param*>& params) {
    for (Param* p : params) p->grad.setZero();
}

}  // namespace uqc::nn
