#pragma once

#include <functional>
#include <span>
#include <vector>

#include "reenact/energy.hpp"

namespace reenact {

struct SolverSchedule {
  int levels = 3;
  std::vector<int> irls_iterations = {7, 1, 0};  // per level, coarsest first
  int gn_steps = 1;                               // per IRLS iteration
  int pcg_iterations = 4;                         // per GN step
  double pcg_tolerance = 1e-10;                   // on |r| / |b|
  double damping = 1e-4;                          // relative to diag(JtWJ)
  int max_halvings = 4;
  int passes = 1;  // repetitions of the whole coarse-to-fine sweep

  // Keyframe bundle: 10 IRLS iterations on the coarsest level and 3 on the
  // medium, 40 PCG iterations, 10 passes.
  static SolverSchedule bundle();
  void validate() const;
};

// Raised when the face leaves every view during a solve.
class TrackingLostError : public Error {
 public:
  TrackingLostError(int level, int iteration, const std::string& message);
  int level() const { return level_; }
  int iteration() const { return iteration_; }

 private:
  int level_;
  int iteration_;
};

using LinearOperator = std::function<VecX(const VecX&)>;

struct PcgResult {
  VecX x;
  int iterations = 0;
  std::vector<double> residual_norms;  // |b - A x_k|, k = 0 is x = 0
  std::vector<double> objective;       // 1/2 x'Ax - b'x at each iterate
};

// Jacobi-preconditioned CG from x = 0. `diagonal` is the preconditioner M.
PcgResult pcg_solve(const LinearOperator& apply_a, const VecX& b, const VecX& diagonal, int iterations,
                    double tolerance);

struct GaussNewtonStep {
  VecX increment;  // system columns
  double lambda = 0.0;
  PcgResult pcg;
};

// Solves (JtWJ + lambda D) dx = -JtWr matrix-free, D = diag(JtWJ) with
// empty columns set to 1.
GaussNewtonStep gauss_newton_step(const ResidualSystem& system, double damping, int pcg_iterations,
                                  double pcg_tolerance);

// Tries the steps 1, 1/2, ... 2^-max_halvings in order and returns the first
// one that lowers `objective` below `current`, or 0 with `current`.
struct LineSearch {
  double step = 0.0;
  double value = 0.0;
};
LineSearch backtrack(const std::function<double(double)>& objective, double current, int max_halvings);

// Local increment for a column map: entries of frozen parameters are zero.
VecX gather_increment(const ColumnMap& columns, const VecX& system_increment);

// Applies a system increment; frozen parameters are copied bitwise.
ParamVector apply_columns(const ParamVector& x, const ColumnMap& columns, const VecX& system_increment);

// Observation decimated by `factor` with recomputed normals, scaled camera and
// landmark / marker coordinates.
FrameObservation downsample_observation(const FrameObservation& view, int factor);

// pyramid[l][v] is view v decimated by 2^l; level 0 is the input.
std::vector<std::vector<FrameObservation>> build_pyramid(std::span<const FrameObservation> views, int levels);

struct LevelTrace {
  int level = 0;   // pyramid level, 0 is full resolution
  int factor = 1;
  std::vector<double> energy;  // true energy before and after each IRLS iteration
};

struct SolveResult {
  ParamVector x;
  std::vector<LevelTrace> levels;  // in solve order, coarsest first within a pass
};

// Coarse-to-fine IRLS with one damped GN solve per iteration.
SolveResult irls_solve(const FaceBasis& basis, std::span<const FrameObservation> views, const ParamVector& x0,
                       const EnergyOptions& options, const SolverSchedule& schedule, const ColumnMap& columns);

struct TrackingState {
  ParamVector current;
  ParamVector previous;
  bool identity_frozen = false;
  int frames = 0;
};

// Solves the next frame starting from the last result.
SolveResult track_frame(TrackingState& state, const FaceBasis& basis, std::span<const FrameObservation> views,
                        const EnergyOptions& options, const SolverSchedule& schedule);

struct BundleResult {
  VecX alpha;
  VecX beta;
  std::vector<ParamVector> frames;  // per keyframe, with the shared identity
  std::vector<LevelTrace> levels;
  bool under_constrained = false;   // every keyframe ended with the same rotation
};

// Joint fit of a shared identity and per-keyframe pose, expression and
// lighting. Columns are [alpha | beta | frame 0 | frame 1 | ...].
BundleResult bundle_identity(const FaceBasis& basis, std::span<const std::vector<FrameObservation>> keyframes,
                             std::span<const ParamVector> init, const EnergyOptions& options,
                             const SolverSchedule& schedule = SolverSchedule::bundle());

}  // namespace reenact
