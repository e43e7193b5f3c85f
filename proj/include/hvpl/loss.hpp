#pragma once

#include <memory>
#include <vector>

#include "hvpl/matrix.hpp"
#include "hvpl/tape.hpp"

namespace hvpl {

// Exact rectangular minimum-cost assignment (Jonker-Volgenant style shortest
// augmenting paths). Returns, per row, the assigned column or -1; exactly
// min(rows, cols) rows are assigned.
std::vector<int> hungarian(const Matrix& cost);

struct GtInstanceRef {
    int local_class = 0;  // column in the task classifier, before no-object
    std::shared_ptr<const std::vector<uint8_t>> mask;  // frames concatenated, N_f * HW bits
};

struct PromptOutputs {
    Var class_logits;  // L x (K+1), last column is no-object
    Var mask_logits;   // (N_f * L) x HW, frame-major rows
    int n_prompts = 0;
    int n_frames = 0;
};

struct LossResult {
    Var total;                    // 1 x 1 scalar node
    std::vector<int> assignment;  // per prompt, matched gt index or -1
};

// Set-prediction objective: Hungarian matching between prompts and ground
// truth with cost 2*(-log p_class) + 5*(1 - Dice) + 5*BCE per pair, matched
// pairs contribute the same weighted terms, unmatched prompts contribute the
// plain no-object classification term. A fixed assignment can be supplied to
// evaluate the same matched objective at perturbed parameters.
// Throws NumericError on non-finite predictions.
LossResult set_prediction_loss(Tape& t, const PromptOutputs& pred,
                               const std::vector<GtInstanceRef>& gts,
                               const std::vector<int>* fixed_assignment = nullptr);

}  // namespace hvpl
