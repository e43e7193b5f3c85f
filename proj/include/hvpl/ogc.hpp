#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hvpl/detector.hpp"
#include "hvpl/linalg.hpp"
#include "hvpl/matio.hpp"
#include "hvpl/matrix.hpp"

namespace hvpl {

// Representative feature space of a finished task plus its orthogonal split.
// v1 holds the first floor(xi * D) right-singular directions (retained
// old-task space), v0 the remaining D - floor(xi * D) (where new-task frame
// prompt updates are allowed to live).
struct OrthoSpace {
    int task_id = 0;
    Matrix o;     // N_o x D, N_o = B * L_p^f
    Matrix v1;    // D x floor(xi*D)
    Matrix v0;    // D x (D - floor(xi*D))
    std::vector<double> s;
    double xi = 0.7;
    int b_videos = 0;
    uint64_t seed = 0;
};

// SVD split of a feature-space matrix under the elastic threshold.
void svd_split(const Matrix& o, double xi, Matrix& v1_out, Matrix& v0_out,
               std::vector<double>& s_out);

// Projects a raw frame-prompt gradient onto the retained-orthogonal
// complement: delta_star = delta * v0 * v0^T.
Matrix project_gradient(const Matrix& delta, const OrthoSpace& space);

// Builds the representative feature space for a finished task: samples
// b_videos train videos stratified so that every class of the task appears,
// extracts decoded prompt features per video, compresses the feature
// dimension D -> D/N_f with a per-video PCA, re-concatenates the per-frame
// slices of each prompt position back to width D, and stacks everything into
// an (B * L_p^f) x D matrix.
struct FeatureSpaceInputs {
    const Detector* detector = nullptr;
    Matrix frame_prompts;                       // P_frm of the finished task
    std::vector<const FrameFeatures*> features;  // per train video
    std::vector<std::vector<int>> video_classes;  // classes present per video
    std::vector<int> task_classes;              // label space of the task
    int b_videos = 0;
    uint64_t seed = 0;
    int task_id = 0;
    double xi = 0.7;
};

OrthoSpace build_feature_space(const FeatureSpaceInputs& in);

// --- optimizer ---------------------------------------------------------------

struct OptimizerConfig {
    enum class Kind { Sgd, Adam };
    Kind kind = Kind::Adam;
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct ParamState {
    Matrix m, v;
    long step = 0;
};

// In-place parameter update; Adam moments accumulate the gradient they are
// handed, so projected gradients never leak forbidden directions into the
// moments.
void optimizer_apply(const OptimizerConfig& cfg, Matrix& param, const Matrix& grad,
                     ParamState& state);

// Frame-prompt update with an already projected gradient. Only valid from the
// second task onward; throws UsageError at task 1.
void apply_projected_update(const OptimizerConfig& cfg, Matrix& p_frm, const Matrix& delta_star,
                            ParamState& state, int task);

// --- persistence -------------------------------------------------------------

// Writes ortho_space_t{N}.hvpl (records O, V1, V0, S) plus a JSON sidecar
// with xi/task/b/seed, then removes every other ortho_space_t*.hvpl in the
// directory so at most one space exists on disk. Returns the byte size of the
// binary file.
size_t persist_space(const OrthoSpace& space, const std::string& dir,
                     MatDType dtype = MatDType::F64);
OrthoSpace load_space(const std::string& path);
std::optional<std::string> find_space_file(const std::string& dir);

}  // namespace hvpl
