#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rsmf/cost_models.hpp"
#include "rsmf/hjb_solver.hpp"
#include "rsmf/simplex_lattice.hpp"
#include "rsmf/simulator.hpp"

namespace rsmf {

/// Open-loop control. `at(t, piece, q)` writes per-edge rates at time t, where `piece`
/// indexes the interval between consecutive breakpoints containing the current step.
/// Integration steps never straddle a breakpoint.
struct ControlPath {
  std::vector<double> breakpoints;
  std::function<void(double t, std::size_t piece, std::span<double> q)> at;
};

/// Piecewise-constant rates on equal segments of [0, duration].
struct PiecewiseControl {
  double duration = 0.0;
  std::vector<std::vector<double>> rates;  ///< rates[segment][edge]
  ControlPath path() const;
};

struct Trajectory {
  std::vector<double> t;
  std::vector<std::vector<double>> mu;
  std::vector<std::vector<double>> q;  ///< rates at the start of each step (size t.size() - 1)
  double running_cost = 0.0;           ///< integral of sum mu_x F(q) + R up to exit or the end
  bool exited = false;
  std::optional<double> exit_time;
};

struct IntegrateOptions {
  double h = 1e-3;
  bool accumulate_cost = true;
  const TargetKind* target = nullptr;  ///< stop at the first entry when set (HalfSpace or Ball)
  bool record = true;
};

/// RK4 for d mu/dt = sum_{(x,y)} v_xy mu_x q_xy with per-step renormalization onto the
/// simplex; the running cost is integrated as an extra state. Throws StepSizeError if a
/// coordinate drops below -1e-6 before renormalization.
Trajectory integrate_path(const CostModel& model, std::span<const double> m0, const ControlPath& control,
                          double duration, const IntegrateOptions& opts = {});

/// Signed margin to a continuous target: <= 0 inside.
double target_margin(const TargetKind& kind, std::span<const double> m);

/// Euclidean distance from m to the target region (0 inside).
double distance_to_target(const TargetKind& kind, std::span<const double> m);

/// Point of the target near m, pushed `margin` into its interior and kept strictly
/// inside the simplex.
std::vector<double> interior_target_point(const TargetKind& kind, std::span<const double> m, double margin);

struct StraightLine {
  std::vector<double> start;
  std::vector<double> end;
  std::vector<double> direction;  ///< unit vector (m_tilde - m) / |m_tilde - m|
  std::vector<double> flux;       ///< constant f_xy = mu_x(t) q_xy(t)
  double duration = 0.0;          ///< |m_tilde - m| at unit speed
  double max_flux = 0.0;          ///< the flux bound c-bar
  double residual = 0.0;          ///< |sum f v - direction|
  std::vector<int> sources;       ///< source state of each edge
  /// q_xy(t) = f_xy / mu_x(t) along the segment.
  ControlPath path() const;
};

/// Constant-flux control moving m to m_tilde at unit speed with q >= gamma along the way:
/// a nonnegative least-squares split of the direction over the edge vectors plus flux
/// around directed cycles. Throws PreconditionError unless both points are interior.
StraightLine straight_line_control(const CostModel& model, std::span<const double> m,
                                   std::span<const double> m_tilde);

/// Running cost of the straight-line path.
double straight_line_cost(const CostModel& model, const StraightLine& line, double h = 1e-4);

struct OptimizeOptions {
  std::size_t segments = 8;
  std::size_t random_restarts = 3;
  double h_fraction = 1e-3;              ///< integration step as a fraction of the duration
  std::optional<double> penalty;         ///< default 1e3 * R_max * duration
  double interior_margin = 0.01;
  std::uint64_t seed = 1;
  unsigned workers = 0;
  std::size_t max_rounds = 400;
  double initial_step = 0.5;
  double min_step = 1e-6;
  std::optional<PiecewiseControl> warm_start;  ///< refined into `segments` pieces if needed
};

struct RestartOutcome {
  std::string label;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  bool exited = false;
};

struct OptimizeResult {
  double cost = 0.0;  ///< running cost of the best exiting trajectory (an upper bound on the value)
  bool exited = false;
  PiecewiseControl control;
  Trajectory trajectory;
  std::vector<RestartOutcome> restarts;
  std::vector<std::string> warnings;
};

/// Multistart coordinate descent over piecewise-constant log-rates and the duration.
/// The target must be a HalfSpace or a Ball.
OptimizeResult optimize_V(const CostModel& model, const TargetKind& target, std::span<const double> m0,
                          const OptimizeOptions& opts = {});

/// Penalized objective minimized by optimize_V.
double deterministic_objective(const CostModel& model, const TargetKind& target, std::span<const double> m0,
                               const PiecewiseControl& control, double h_fraction, double penalty,
                               bool* exited = nullptr);

/// Tracking control for the n-agent chain: q^n = q_ref(t) mu^n_x(t-) / mu_ref,x(t) while
/// the path stays in the tube of radius r2 around the reference; nominal rates after the
/// first tube exit and after the reference ends.
class TrackingControl : public TimeVaryingControl {
 public:
  TrackingControl(const CostModel& model, std::shared_ptr<const Trajectory> reference, double r2);
  std::span<const double> breakpoints() const override { return reference_->t; }
  void rates(double t, std::span<const int> counts, std::span<double> q) override;
  bool reverted() const { return reverted_; }

 private:
  const CostModel* model_;
  std::shared_ptr<const Trajectory> reference_;
  double r2_;
  bool reverted_ = false;
};

/// Factory producing fresh per-trial tracking controls. Throws PreconditionError if the
/// reference touches the simplex boundary.
ControlFactory tracking_policy(const CostModel& model, std::shared_ptr<const Trajectory> reference, double r2);

struct TrackingRow {
  int n = 0;
  double cost = 0.0;
  double stderr_ = 0.0;
  double tube_exit_fraction = 0.0;
  std::size_t censored = 0;
};

struct TrackingResult {
  double deterministic_cost = 0.0;
  std::vector<TrackingRow> rows;
};

/// Optimizes a reference from m0, extends it past the exit by `overshoot` (relative), and
/// simulates the tracking control for each n.
TrackingResult tracking_experiment(const CostModel& model, const TargetKind& target, std::span<const double> m0,
                                   std::span<const int> n_list, double r2, std::size_t trials, std::uint64_t seed,
                                   const OptimizeOptions& opts = {}, double overshoot = 0.1);

struct ConvergenceRow {
  int n = 0;
  double gap = 0.0;      ///< sup over the coarse points of |V^n - V_hat|
  std::size_t worst = 0;  ///< coarse ordinal attaining it
};

struct ConvergenceResult {
  int coarse_n = 0;
  std::vector<std::vector<int>> coarse_points;
  std::vector<double> reference;            ///< V_hat at the coarse points
  std::vector<std::vector<double>> lattice;  ///< V^n at the coarse points, per n
  std::vector<ConvergenceRow> rows;
  bool decreasing = false;
  double final_over_initial = 0.0;
};

/// Lattice values against trajectory optimization at the points of the coarsest grid.
/// Every n must be a multiple of the smallest. Refuses (PreconditionError) when the cost
/// fails the growth gate.
ConvergenceResult convergence_study(const CostModel& model, const TargetKind& target, std::span<const int> n_list,
                                    const OptimizeOptions& opts = {}, const SolveVOptions& solver = {});

}  // namespace rsmf
