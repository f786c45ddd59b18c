#ifndef CITYSCOPE_CALLBACKS_HPP
#define CITYSCOPE_CALLBACKS_HPP

#include <algorithm>
#include <cmath>
#include <limits>

#include "cityscope/errors.hpp"

namespace cityscope {

enum class StopDecision { keep_going, stop };

// Shared monitoring state for the two per-epoch callbacks.
// best_val_loss is the strict running minimum; the early-stopping counter
// additionally honours min_delta, the LR counter does not.
struct CallbackState {
    double best_val_loss = std::numeric_limits<double>::infinity();
    int epochs_since_improvement = 0;     // early stopping
    int lr_epochs_since_improvement = 0;  // reduce-LR-on-plateau
};

struct EarlyStoppingResult {
    bool improved = false;  // caller snapshots best params when true
    StopDecision decision = StopDecision::keep_going;
};

inline EarlyStoppingResult early_stopping_update(CallbackState& state, double val_loss,
                                                 int patience, double min_delta) {
    if (!std::isfinite(val_loss)) fail("NonFiniteLoss", "validation loss is not finite");
    if (patience < 1) fail("BadConfig", "early_stop_patience must be >= 1");
    EarlyStoppingResult result;
    if (val_loss < state.best_val_loss - min_delta) {
        state.epochs_since_improvement = 0;
        result.improved = true;
    } else {
        state.epochs_since_improvement += 1;
        if (state.epochs_since_improvement >= patience) result.decision = StopDecision::stop;
    }
    state.best_val_loss = std::min(state.best_val_loss, val_loss);
    return result;
}

// Multiplies lr by factor (never below min_lr) after `patience` epochs
// without improvement; the counter resets on every reduction.
inline double reduce_lr_on_plateau_update(CallbackState& state, double val_loss, double lr,
                                          int patience, double factor, double min_lr) {
    if (!std::isfinite(val_loss)) fail("NonFiniteLoss", "validation loss is not finite");
    if (factor <= 0.0 || factor >= 1.0) fail("BadConfig", "lr_reduce_factor must be in (0,1)");
    if (patience < 1) fail("BadConfig", "lr_reduce_patience must be >= 1");
    if (val_loss < state.best_val_loss) {
        state.lr_epochs_since_improvement = 0;
    } else {
        state.lr_epochs_since_improvement += 1;
        if (state.lr_epochs_since_improvement >= patience) {
            lr = std::max(lr * factor, min_lr);
            state.lr_epochs_since_improvement = 0;
        }
    }
    return lr;
}

} // namespace cityscope

#endif
