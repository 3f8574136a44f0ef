#pragma once

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "uqc/rng.hpp"

namespace uqc::nn {

// Dense NCHW tensor, double precision throughout.
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    Eigen::VectorXd data;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_) {
        data = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_) * c_ * h_ * w_);
    }
    double& at(int in, int ic, int ih, int iw) {
        return data[((static_cast<Eigen::Index>(in) * c + ic) * h + ih) * w + iw];
    }
    double at(int in, int ic, int ih, int iw) const {
        return data[((static_cast<Eigen::Index>(in) * c + ic) * h + ih) * w + iw];
    }
    Eigen::Index size() const { return data.size(); }
    int features() const { return c * h * w; }
    // flat view (n, c*h*w, 1, 1) sharing the same element order
    Tensor flattened() const {
        Tensor t = *this;
        t.c = features();
        t.h = t.w = 1;
        return t;
    }
    Tensor reshaped(int c_, int h_, int w_) const {
        Tensor t = *this;
        t.c = c_;
        t.h = h_;
        t.w = w_;
        return t;
    }
};

struct Param {
    std::string name;
    Eigen::VectorXd value;
    Eigen::VectorXd grad;
    Eigen::VectorXd m, v;  // optimizer slots

    explicit Param(std::string n, Eigen::Index size) : name(std::move(n)) {
        value = Eigen::VectorXd::Zero(size);
        grad = Eigen::VectorXd::Zero(size);
        m = Eigen::VectorXd::Zero(size);
        v = Eigen::VectorXd::Zero(size);
    }
};

class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x) = 0;
    virtual Tensor backward(const Tensor& dy) = 0;
    virtual std::vector<Param*> params() { return {}; }
    virtual std::string tag() const = 0;
};

// 3x3 stride-2 pad-1 by default; zero padding, im2col + GEMM per image.
class Conv2d : public Layer {
public:
    Conv2d(int cin, int cout, int kernel, int stride, int pad, Rng& rng);
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    std::vector<Param*> params() override { return {&weight_, &bias_}; }
    std::string tag() const override;

    int cin() const { return cin_; }
    int cout() const { return cout_; }

private:
    int cin_, cout_, k_, s_, p_;
    Param weight_;  // (cin*k*k) x cout, column-major flat
    Param bias_;    // cout
    Tensor x_;      // cached input
};

// 4x4 stride-2 pad-1 by default; output side = 2 * input side.
class ConvTranspose2d : public Layer {
public:
    ConvTranspose2d(int cin, int cout, int kernel, int stride, int pad, Rng& rng);
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    std::vector<Param*> params() override { return {&weight_, &bias_}; }
    std::string tag() const override;

private:
    int cin_, cout_, k_, s_, p_;
    Param weight_;  // cin x (cout*k*k)
    Param bias_;    // cout
    Tensor x_;
};

// Batch-independent normalization over (channels/groups, H, W) per sample.
class GroupNorm : public Layer {
public:
    GroupNorm(int channels, int groups);
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    std::vector<Param*> params() override { return {&gamma_, &beta_}; }
    std::string tag() const override;

private:
    int channels_, groups_;
    Param gamma_, beta_;
    Tensor xhat_;
    Eigen::MatrixXd inv_std_;  // n x groups
};

class ReLU : public Layer {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    std::string tag() const override { return "relu"; }

private:
    Tensor x_;
};

class Sigmoid : public Layer {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    std::string tag() const override { return "sigmoid"; }

private:
    Tensor y_;
};

class Dense : public Layer {
public:
    Dense(int in, int out, Rng& rng);
    Tensor forward(const Tensor& x) override;  // x flattened to (n, in)
    Tensor backward(const Tensor& dy) override;
    std::vector<Param*> params() override { return {&weight_, &bias_}; }
    std::string tag() const override;

    int in() const { return in_; }
    int out() const { return out_; }

private:
    int in_, out_;
    Param weight_;  // in x out
    Param bias_;    // out
    Tensor x_;
};

struct OptimizerConfig {
    enum class Kind { adam, sgd_momentum };
    Kind kind = Kind::adam;
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double momentum = 0.9;
};

class Optimizer {
public:
    explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}
    void step(const std::vector<Param*>& params);
    static void zero_grad(const std::vector<Param*>& params);
    long long t() const { return t_; }
    void set_t(long long t) { t_ = t; }
    const OptimizerConfig& config() const { return cfg_; }

private:
    OptimizerConfig cfg_;
    long long t_ = 0;
};

}  // namespace uqc::nn
