#include "uqc/trainconfig.hpp"

#include <cmath>
#include <stdexcept>

namespace uqc {

void TrainConfig::validate() const {
    if (gamma < 0.0) throw std::domain_error("gamma must be >= 0");
    if (patience < 1) throw std::domain_error("patience must be >= 1");
    if (batch < 1) throw std::domain_error("batch must be >= 1");
    if (lr <= 0.0) throw std::domain_error("lr must be > 0");
    if (epochs_max < 0) throw std::domain_error("epochs_max must be >= 0");
    if (K < 1) throw std::domain_error("K must be >= 1");
}

bool EarlyStopper::feed(double loss) {
    if (has_prev_) {
        const double rel = (prev_ - loss) / std::max(std::abs(prev_), 1e-12);
        stale_ = rel < min_rel_ ? stale_ + 1 : 0;
    }
    prev_ = loss;
    has_prev_ = true;
    return stale_ >= patience_;
}

}  // namespace uqc
