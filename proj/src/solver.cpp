#include "reenact/solver.hpp"

#include <cmath>
#include <limits>
#include <utility>

namespace reenact {

SolverSchedule SolverSchedule::bundle() {
  SolverSchedule s;
  s.irls_iterations = {10, 3, 0};
  s.pcg_iterations = 40;
  s.passes = 10;
  return s;
}

void SolverSchedule::validate() const {
  require(levels >= 1, ErrorCode::kInvalidArgument, "schedule needs at least one level");
  require(static_cast<int>(irls_iterations.size()) == levels, ErrorCode::kInvalidArgument,
          "one IRLS count per pyramid level");
  for (int n : irls_iterations) require(n >= 0, ErrorCode::kInvalidArgument, "negative IRLS count");
  require(gn_steps >= 0 && pcg_iterations >= 0 && max_halvings >= 0 && passes >= 1, ErrorCode::kInvalidArgument,
          "negative iteration count");
  require(pcg_tolerance >= 0.0 && damping >= 0.0, ErrorCode::kInvalidArgument, "negative tolerance or damping");
}

TrackingLostError::TrackingLostError(int level, int iteration, const std::string& message)
    : Error(ErrorCode::kTrackingLost, "tracking lost at level " + std::to_string(level) + " iteration " +
                                          std::to_string(iteration) + ": " + message),
      level_(level),
      iteration_(iteration) {}

PcgResult pcg_solve(const LinearOperator& apply_a, const VecX& b, const VecX& diagonal, int iterations,
                    double tolerance) {
  require(diagonal.size() == b.size(), ErrorCode::kDimensionMismatch, "preconditioner size");
  require((diagonal.array() > 0.0).all(), ErrorCode::kInvalidArgument, "preconditioner must be positive");
  PcgResult out;
  const Eigen::Index n = b.size();
  out.x = VecX::Zero(n);
  VecX r = b;
  const double b_norm = b.norm();
  out.residual_norms.push_back(b_norm);
  out.objective.push_back(0.0);
  if (b_norm == 0.0) return out;
  VecX z = r.cwiseQuotient(diagonal);
  VecX p = z;
  double rz = r.dot(z);
  for (int k = 0; k < iterations; ++k) {
    const VecX ap = apply_a(p);
    const double pap = p.dot(ap);
    require(std::isfinite(pap), ErrorCode::kNumerical, "non-finite value in PCG");
    if (pap <= 0.0) break;
    const double step = rz / pap;
    out.x += step * p;
    r -= step * ap;
    ++out.iterations;
    out.residual_norms.push_back(r.norm());
    out.objective.push_back(-0.5 * out.x.dot(b + r));
    require(out.x.allFinite(), ErrorCode::kNumerical, "non-finite value in PCG");
    if (r.norm() <= tolerance * b_norm) break;
    z = r.cwiseQuotient(diagonal);
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }
  return out;
}

GaussNewtonStep gauss_newton_step(const ResidualSystem& system, double damping, int pcg_iterations,
                                  double pcg_tolerance) {
  GaussNewtonStep step;
  step.lambda = damping;
  const VecX g = system.gradient();
  VecX scale = system.normal_diagonal();
  for (Eigen::Index i = 0; i < scale.size(); ++i)
    if (!(scale[i] > 0.0)) scale[i] = 1.0;
  const VecX shift = damping * scale;
  step.pcg = pcg_solve([&](const VecX& v) { VecX out = system.apply_normal(v); out += shift.cwiseProduct(v); return out; },
                       -g, scale + shift, pcg_iterations, pcg_tolerance);
  step.increment = step.pcg.x;
  return step;
}

LineSearch backtrack(const std::function<double(double)>& objective, double current, int max_halvings) {
  double s = 1.0;
  for (int k = 0; k <= max_halvings; ++k, s *= 0.5) {
    const double value = objective(s);
    if (value < current) return {s, value};
  }
  return {0.0, current};
}

VecX gather_increment(const ColumnMap& columns, const VecX& system_increment) {
  const int n = static_cast<int>(columns.local_to_global.size());
  VecX local = VecX::Zero(n);
  for (int i = 0; i < n; ++i) {
    const int g = columns.local_to_global[i];
    if (g >= 0) local[i] = system_increment[g];
  }
  return local;
}

ParamVector apply_columns(const ParamVector& x, const ColumnMap& columns, const VecX& system_increment) {
  const ParamVector moved = apply_increment(x, gather_increment(columns, system_increment));
  VecX flat = moved.flatten();
  const VecX base = x.flatten();
  for (int i = 0; i < flat.size(); ++i)
    if (columns.local_to_global[i] < 0) flat[i] = base[i];
  return ParamVector::unflatten(x.dims(), flat);
}

namespace {

Vec2 decimated_pixel(const Vec2& p, int factor) { return (p.array() + 0.5 * (factor - 1)) / factor; }

}  // namespace

FrameObservation downsample_observation(const FrameObservation& view, int factor) {
  if (factor == 1) return view;
  FrameObservation out;
  out.camera = view.camera.scaled(factor);
  out.rgb = decimate(view.rgb, factor);
  if (view.has_depth()) {
    out.depth = decimate(view.depth, factor);
    out.normals = depth_normals(out.depth, out.camera);
  }
  out.landmarks = view.landmarks;
  for (auto& l : out.landmarks) l.position = decimated_pixel(l.position, factor);
  out.markers = view.markers;
  for (auto& m : out.markers) m.position = decimated_pixel(m.position, factor);
  out.marker_reference = view.marker_reference;
  return out;
}

std::vector<std::vector<FrameObservation>> build_pyramid(std::span<const FrameObservation> views, int levels) {
  require(levels >= 1, ErrorCode::kInvalidArgument, "pyramid needs at least one level");
  std::vector<std::vector<FrameObservation>> pyramid(levels);
  for (int l = 0; l < levels; ++l)
    for (const auto& v : views) pyramid[l].push_back(downsample_observation(v, 1 << l));
  return pyramid;
}

namespace {

// Several parameter vectors solved in one system, each observed by its own views.
struct Problem {
  const FaceBasis* basis;
  const EnergyOptions* options;
  std::vector<std::span<const FrameObservation>> views;
  std::vector<ColumnMap> columns;
  int num_params;
};

double problem_energy(const Problem& p, const std::vector<ParamVector>& states) {
  double e = 0.0;
  for (size_t g = 0; g < states.size(); ++g) e += evaluate_energy(*p.basis, p.views[g], states[g], *p.options);
  return e;
}

ResidualSystem problem_system(const Problem& p, const std::vector<ParamVector>& states) {
  ResidualSystem total(p.num_params);
  for (size_t g = 0; g < states.size(); ++g) {
    const auto fps = compute_footprints(*p.basis, p.views[g], states[g], *p.options);
    ResidualSystem s = assemble(*p.basis, p.views[g], states[g], *p.options, fps, p.columns[g], p.num_params, true);
    for (auto b : s.blocks()) {
      if (states.size() > 1) b.name = "k" + std::to_string(g) + "/" + b.name;
      total.add(std::move(b));
    }
  }
  return total;
}

std::vector<ParamVector> problem_apply(const Problem& p, const std::vector<ParamVector>& states, const VecX& inc) {
  std::vector<ParamVector> out;
  for (size_t g = 0; g < states.size(); ++g) out.push_back(apply_columns(states[g], p.columns[g], inc));
  return out;
}

LevelTrace run_level(const Problem& p, const SolverSchedule& schedule, int level, int iterations,
                     std::vector<ParamVector>& states) {
  LevelTrace trace;
  trace.level = level;
  trace.factor = 1 << level;
  int it = 0;
  try {
    double energy = problem_energy(p, states);
    trace.energy.push_back(energy);
    for (it = 0; it < iterations; ++it) {
      for (int k = 0; k < schedule.gn_steps; ++k) {
        const ResidualSystem system = problem_system(p, states);
        const GaussNewtonStep step =
            gauss_newton_step(system, schedule.damping, schedule.pcg_iterations, schedule.pcg_tolerance);
        const auto trial = [&](double s) {
          try {
            return problem_energy(p, problem_apply(p, states, s * step.increment));
          } catch (const Error& e) {
            if (e.code() != ErrorCode::kTrackingLost) throw;
            return std::numeric_limits<double>::infinity();
          }
        };
        const LineSearch ls = backtrack(trial, energy, schedule.max_halvings);
        if (ls.step > 0.0) {
          states = problem_apply(p, states, ls.step * step.increment);
          energy = ls.value;
        }
      }
      trace.energy.push_back(energy);
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kTrackingLost) throw;
    throw TrackingLostError(level, it, e.what());
  }
  return trace;
}

// Runs the coarse-to-fine schedule. `views[g]` are full-resolution views.
std::vector<LevelTrace> run_schedule(const FaceBasis& basis, const EnergyOptions& options,
                                     const std::vector<std::span<const FrameObservation>>& views,
                                     const std::vector<ColumnMap>& columns, int num_params,
                                     const SolverSchedule& schedule, std::vector<ParamVector>& states) {
  schedule.validate();
  // scaled[i][g]: views of group g at the i-th scheduled level.
  std::vector<std::vector<std::vector<FrameObservation>>> scaled(schedule.levels);
  for (int i = 0; i < schedule.levels; ++i) {
    if (schedule.irls_iterations[i] == 0) continue;
    const int level = schedule.levels - 1 - i;
    for (const auto& v : views) {
      std::vector<FrameObservation> level_views;
      for (const auto& o : v) level_views.push_back(downsample_observation(o, 1 << level));
      scaled[i].push_back(std::move(level_views));
    }
  }
  std::vector<LevelTrace> traces;
  for (int pass = 0; pass < schedule.passes; ++pass) {
    for (int i = 0; i < schedule.levels; ++i) {
      if (schedule.irls_iterations[i] == 0) continue;
      Problem p{&basis, &options, {}, columns, num_params};
      for (const auto& s : scaled[i]) p.views.emplace_back(s);
      traces.push_back(run_level(p, schedule, schedule.levels - 1 - i, schedule.irls_iterations[i], states));
    }
  }
  return traces;
}

}  // namespace

SolveResult irls_solve(const FaceBasis& basis, std::span<const FrameObservation> views, const ParamVector& x0,
                       const EnergyOptions& options, const SolverSchedule& schedule, const ColumnMap& columns) {
  require(x0.finite(), ErrorCode::kInvalidArgument, "initial parameters are not finite");
  require(x0.dims() == basis.dims(), ErrorCode::kDimensionMismatch, "parameter and basis dimensions differ");
  std::vector<ParamVector> states = {x0};
  SolveResult out;
  out.levels = run_schedule(basis, options, {views}, {columns}, columns.num_active(), schedule, states);
  out.x = std::move(states[0]);
  return out;
}

SolveResult track_frame(TrackingState& state, const FaceBasis& basis, std::span<const FrameObservation> views,
                        const EnergyOptions& options, const SolverSchedule& schedule) {
  const ParamLayout layout{basis.dims()};
  const ColumnMap columns = state.identity_frozen ? ColumnMap::tracking(layout) : ColumnMap::all(layout);
  SolveResult r = irls_solve(basis, views, state.current, options, schedule, columns);
  state.previous = state.current;
  state.current = r.x;
  ++state.frames;
  return r;
}

BundleResult bundle_identity(const FaceBasis& basis, std::span<const std::vector<FrameObservation>> keyframes,
                             std::span<const ParamVector> init, const EnergyOptions& options,
                             const SolverSchedule& schedule) {
  require(!keyframes.empty(), ErrorCode::kInvalidArgument, "bundle needs keyframes");
  require(init.size() == keyframes.size(), ErrorCode::kDimensionMismatch, "one initial estimate per keyframe");
  const ParamLayout layout{basis.dims()};
  const FaceDims dims = basis.dims();
  const int shared = dims.identity + dims.albedo;
  const int per_frame = layout.size() - shared;

  std::vector<ColumnMap> columns;
  std::vector<ParamVector> states;
  std::vector<std::span<const FrameObservation>> views;
  for (size_t k = 0; k < keyframes.size(); ++k) {
    ColumnMap m;
    m.local_to_global.resize(layout.size());
    const int offset = shared + static_cast<int>(k) * per_frame;
    int next = offset;
    for (int i = 0; i < layout.size(); ++i) {
      if (i >= layout.alpha() && i < layout.delta())
        m.local_to_global[i] = i - layout.alpha();
      else
        m.local_to_global[i] = next++;
    }
    columns.push_back(std::move(m));
    ParamVector x = init[k];
    x.alpha = init[0].alpha;
    x.beta = init[0].beta;
    states.push_back(std::move(x));
    views.emplace_back(keyframes[k]);
  }

  BundleResult out;
  const int num_params = shared + static_cast<int>(keyframes.size()) * per_frame;
  out.levels = run_schedule(basis, options, views, columns, num_params, schedule, states);
  out.under_constrained = true;
  for (const auto& x : states) {
    const Mat3 relative = x.rotation_matrix() * states[0].rotation_matrix().transpose();
    if (Eigen::AngleAxisd(relative).angle() > 1e-6) out.under_constrained = false;
  }
  out.alpha = states[0].alpha;
  out.beta = states[0].beta;
  out.frames = std::move(states);
  return out;
}

}  // namespace reenact
