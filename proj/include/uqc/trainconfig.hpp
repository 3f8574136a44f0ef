#pragma once

#include <cstdint>

#include "uqc/nn.hpp"

namespace uqc {

struct TrainConfig {
    int epochs_max = 200;
    int patience = 10;
    double min_rel_improvement = 1e-4;
    int batch = 128;                 // finetune default 64
    double lr = 0.01;                // finetune default 0.005
    double gamma = 0.1;
    int K = 3;
    uint64_t seed = 0;
    nn::OptimizerConfig::Kind optimizer = nn::OptimizerConfig::Kind::adam;

    void validate() const;
};

// Tracks "relative improvement below threshold for `patience` consecutive
// epochs" stagnation. feed() returns true once training should stop.
class EarlyStopper {
public:
    EarlyStopper(double min_rel_improvement, int patience)
        : min_rel_(min_rel_improvement), patience_(patience) {}
    bool feed(double loss);

private:
    double min_rel_;
    int patience_;
    double prev_ = 0.0;
    bool has_prev_ = false;
    int stale_ = 0;
};

}  // namespace uqc
