#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ergohjb/dual_lp.hpp"
#include "ergohjb/grid.hpp"
#include "ergohjb/model.hpp"
#include "ergohjb/philox.hpp"

namespace ergohjb {

/// Markov feedback xi_k(x): grid-sampled with multilinear interpolation, zero, or linear c x.
class FeedbackControl {
 public:
  enum class Kind { Grid, Zero, Linear };

  static FeedbackControl zero(int dimension) {
    FeedbackControl c;
    c.kind_ = Kind::Zero;
    c.dim_ = dimension;
    return c;
  }

  static FeedbackControl linear(double coefficient, int dimension) {
    FeedbackControl c;
    c.kind_ = Kind::Linear;
    c.dim_ = dimension;
    c.coef_ = coefficient;
    return c;
  }

  static FeedbackControl sampled(const Grid& grid, const ControlFieldPair& field) {
    if (field.nodes() != grid.size() || field.dimension() != grid.dimension())
      throw ParameterError("control field does not match grid");
    if (!field.xi[0].allFinite() || !field.xi[1].allFinite()) throw ParameterError("control field is not finite");
    FeedbackControl c;
    c.kind_ = Kind::Grid;
    c.dim_ = grid.dimension();
    c.grid_ = grid;
    c.field_ = field;
    return c;
  }

  Kind kind() const { return kind_; }
  int dimension() const { return dim_; }
  const std::optional<Grid>& grid() const { return grid_; }

  /// Regime index k in {0, 1}. Grid controls are evaluated at x clamped to the box.
  Vec value(int k, const Vec& x) const {
    switch (kind_) {
      case Kind::Zero:
        return Vec::Zero(dim_);
      case Kind::Linear:
        return coef_ * x;
      case Kind::Grid:
        break;
    }
    const Grid& g = *grid_;
    const double h = g.spacing();
    const int last = g.nodes_per_axis() - 1;
    int i0[2] = {0, 0};
    double w[2] = {0.0, 0.0};
    for (int a = 0; a < dim_; ++a) {
      const double t = std::clamp((x[a] + g.half_width()) / h, 0.0, static_cast<double>(last));
      int i = static_cast<int>(t);
      if (i >= last) i = last - 1;
      i0[a] = i;
      w[a] = t - i;
    }
    const auto& f = field_.xi[k];
    if (dim_ == 1) return Vec((1.0 - w[0]) * f.col(i0[0]) + w[0] * f.col(i0[0] + 1));
    const int n00 = g.node_of(i0[0], i0[1]), n10 = g.node_of(i0[0] + 1, i0[1]);
    const int n01 = g.node_of(i0[0], i0[1] + 1), n11 = g.node_of(i0[0] + 1, i0[1] + 1);
    return Vec((1.0 - w[0]) * (1.0 - w[1]) * f.col(n00) + w[0] * (1.0 - w[1]) * f.col(n10) +
               (1.0 - w[0]) * w[1] * f.col(n01) + w[0] * w[1] * f.col(n11));
  }

 private:
  Kind kind_ = Kind::Zero;
  int dim_ = 1;
  double coef_ = 0.0;
  std::optional<Grid> grid_;
  ControlFieldPair field_;
};

enum class SwitchingMode { Thinning, Uniformization };

struct SimulationParams {
  double T = 50.0;
  double dt = 1e-3;
  int paths = 10000;
  double burn_in = 0.1;  // fraction of T
  std::uint64_t seed = 0;
  int threads = 1;
  SwitchingMode switching = SwitchingMode::Thinning;
  double box = 0.0;  // clamp box half-width; 0 = the control grid's box
  std::optional<Vec> x0;  // default x_ref
  int s0 = 1;
  int record_path = -1;  // path whose trajectory is recorded (-1: none)
  int record_stride = 100;
  /// Optional grid x control-mesh histogram of (X, U, S) samples after burn-in.
  std::optional<Grid> histogram_grid;
  std::optional<ControlMesh> histogram_mesh;
};

struct PathSample {
  double t = 0.0;
  Vec x;
  int state = 1;
  Vec u;
  double cost = 0.0;
};

struct PathResult {
  double tail_average = 0.0;
  double time_state1 = 0.0;  // fraction of tail time in regime 1
  std::uint64_t switches[2] = {0, 0};
  double time_in[2] = {0.0, 0.0};
  double rate_integral[2] = {0.0, 0.0};  // int alpha_k(X_t) dt over tail time in k
  std::uint64_t clamps = 0;
};

struct SimulationEstimate {
  double lambda_hat = 0.0;
  double std_error = 0.0;
  std::vector<double> tail_averages;
  double state1_fraction = 0.0;
  double state1_fraction_se = 0.0;
  std::uint64_t switches[2] = {0, 0};
  double time_in[2] = {0.0, 0.0};
  double rate_integral[2] = {0.0, 0.0};
  std::uint64_t clamp_count = 0;
  bool reliable = true;         // clamp_count == 0
  bool pde_unverified = false;  // gamma_1 != gamma_2: no optimality claim
  double T = 0.0;
  double dt = 0.0;
  int paths = 0;
  std::uint64_t seed = 0;
  double rate_bound = 0.0;  // upsilon alpha_0 estimate used by the dt guard
  std::vector<PathSample> sample_path;
  std::optional<Grid> histogram_grid;
  std::optional<ControlMesh> histogram_mesh;
  std::vector<std::uint64_t> histogram;  // LpData column order
  std::uint64_t histogram_samples = 0;

  /// Observed switch intensity out of regime k and the time average of alpha_k while in k.
  double observed_intensity(int k) const { return time_in[k] > 0.0 ? switches[k] / time_in[k] : 0.0; }
  double mean_rate(int k) const { return time_in[k] > 0.0 ? rate_integral[k] / time_in[k] : 0.0; }
};

namespace detail {

inline double rate_upper_bound(const ProblemSpec& p, double box) {
  const Grid g(p.dimension, box, box / 50.0);
  double m = 0.0;
  for (int node = 0; node < g.size(); ++node)
    for (int k = 0; k < 2; ++k) m = std::max(m, p.alpha[k].value(g.coordinate(node)));
  return m;
}

struct PathOutput {
  PathResult result;
  std::vector<PathSample> samples;
};

inline PathResult simulate_one_path(const ProblemSpec& problem, const FeedbackControl& control,
                                    const SimulationParams& prm, double box, double rate_bound, std::uint64_t path,
                                    std::vector<std::uint64_t>* histogram, std::vector<PathSample>* record) {
  const int dim = problem.dimension;
  const auto& spec = problem.hamiltonians;
  const PathStream noise(prm.seed, path, 0);
  const PathStream clock(prm.seed, path, 1);
  const std::uint64_t steps = static_cast<std::uint64_t>(std::llround(prm.T / prm.dt));
  const std::uint64_t burn = static_cast<std::uint64_t>(std::llround(prm.burn_in * static_cast<double>(steps)));
  const double dt = prm.dt, sdt = std::sqrt(2.0 * dt);
  Vec x = prm.x0 ? *prm.x0 : problem.x_ref;
  int s = prm.s0 - 1;
  PathResult r;
  double acc = 0.0, tail_time = 0.0, t1 = 0.0;

  // Uniformization clock state.
  std::uint64_t event = 0;
  double next_event = 0.0;
  auto schedule_event = [&](double now) {
    const auto d = clock.draw(event);
    next_event = now - std::log(d.uniform[0]) / rate_bound;
  };
  if (prm.switching == SwitchingMode::Uniformization) schedule_event(0.0);

  PathStream::Draw draw{};
  std::uint64_t cached = ~std::uint64_t{0};
  const int nodes = prm.histogram_grid ? prm.histogram_grid->size() : 0;
  const int nc = prm.histogram_mesh ? prm.histogram_mesh->size() : 0;

  for (std::uint64_t i = 0; i < steps; ++i) {
    const Vec xi = control.value(s, x);
    const double alpha = problem.alpha[s].value(x);
    const double cost = problem.f[s].value(x) + lagrangian_eval(spec, StateIndex(s + 1), x, xi);
    if (record && (i % static_cast<std::uint64_t>(prm.record_stride)) == 0)
      record->push_back({static_cast<double>(i) * dt, x, s + 1, xi, cost});
    if (i >= burn) {
      acc += cost * dt;
      tail_time += dt;
      if (s == 0) t1 += dt;
      r.time_in[s] += dt;
      r.rate_integral[s] += alpha * dt;
      if (histogram) {
        const int node = prm.histogram_grid->nearest_node(x);
        const int c = prm.histogram_mesh->nearest(xi);
        ++(*histogram)[static_cast<size_t>((s * nodes + node) * nc + c)];
      }
    }

    const std::uint64_t blk = dim == 1 ? i / 2 : i;
    if (blk != cached) {
      draw = noise.draw(blk);
      cached = blk;
    }
    const int lane = dim == 1 ? static_cast<int>(i % 2) : 0;
    const double t_now = static_cast<double>(i) * dt;

    bool flip = false;
    if (prm.switching == SwitchingMode::Thinning) {
      flip = draw.uniform[lane] < alpha * dt;
    } else {
      while (next_event < t_now + dt) {
        const auto d = clock.draw(event);
        if (d.uniform[1] * rate_bound < alpha) flip = !flip;
        ++event;
        schedule_event(next_event);
      }
    }

    for (int a = 0; a < dim; ++a) x[a] += -xi[a] * dt + sdt * draw.normal[dim == 1 ? lane : a];
    bool clamped = false;
    for (int a = 0; a < dim; ++a) {
      if (x[a] > box) {
        x[a] = box;
        clamped = true;
      } else if (x[a] < -box) {
        x[a] = -box;
        clamped = true;
      }
    }
    if (clamped) ++r.clamps;
    if (flip) {
      if (i >= burn) ++r.switches[s];
      s = 1 - s;
    }
  }
  r.tail_average = tail_time > 0.0 ? acc / tail_time : 0.0;
  r.time_state1 = tail_time > 0.0 ? t1 / tail_time : 0.0;
  return r;
}

}  // namespace detail

/// Euler-Maruyama for dX = -xi(X, S) dt + sqrt(2) dW with regime switching at rate alpha_S(X);
/// running cost f_S(X) + l_S(X, xi) averaged over [burn_in T, T] per path. Paths are independent
/// Philox streams keyed by (seed, path index); results are reduced in path order so the estimate
/// does not depend on the thread count.
inline SimulationEstimate simulate_paths(const ProblemSpec& problem, const FeedbackControl& control,
                                         const SimulationParams& prm) {
  problem.validate();
  if (control.dimension() != problem.dimension) throw ParameterError("control dimension differs from problem");
  if (!(prm.T > 0.0) || !(prm.dt > 0.0) || prm.dt > prm.T) throw ParameterError("need 0 < dt <= T");
  if (prm.paths < 1) throw ParameterError("need at least one path");
  if (!(prm.burn_in >= 0.0 && prm.burn_in < 1.0)) throw ParameterError("burn-in fraction must be in [0, 1)");
  if (prm.s0 != 1 && prm.s0 != 2) throw ParameterError("initial regime must be 1 or 2");
  if (prm.record_stride < 1) throw ParameterError("record stride must be >= 1");
  if (prm.histogram_grid.has_value() != prm.histogram_mesh.has_value())
    throw ParameterError("histogram needs both a grid and a control mesh");
  double box = prm.box;
  if (box == 0.0) {
    if (!control.grid()) throw ParameterError("clamp box must be given for analytic controls");
    box = control.grid()->half_width();
  }
  if (!(box > 0.0)) throw ParameterError("clamp box must be positive");
  if (prm.x0 && prm.x0->size() != problem.dimension) throw ParameterError("x0 dimension mismatch");

  const double rate_bound = detail::rate_upper_bound(problem, box);
  if (prm.switching == SwitchingMode::Thinning && prm.dt * rate_bound > 0.1)
    throw ParameterError("thinning needs dt * max alpha <= 0.1 (got " + std::to_string(prm.dt * rate_bound) + ")");
  if (prm.switching == SwitchingMode::Uniformization && !(rate_bound > 0.0))
    throw ParameterError("uniformization needs a positive rate bound");

  const int threads = std::max(1, std::min(prm.threads, prm.paths));
  std::vector<PathResult> results(static_cast<size_t>(prm.paths));
  const size_t hsize = prm.histogram_grid
                           ? static_cast<size_t>(2 * prm.histogram_grid->size() * prm.histogram_mesh->size())
                           : 0;
  std::vector<std::vector<std::uint64_t>> hist(static_cast<size_t>(threads),
                                               std::vector<std::uint64_t>(hsize, 0));
  std::vector<PathSample> record;
  std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));

  auto work = [&](int t) {
    try {
      for (int p = t; p < prm.paths; p += threads) {
        std::vector<PathSample>* rec = p == prm.record_path ? &record : nullptr;
        results[static_cast<size_t>(p)] = detail::simulate_one_path(problem, control, prm, box, rate_bound,
                                                                    static_cast<std::uint64_t>(p),
                                                                    hsize ? &hist[static_cast<size_t>(t)] : nullptr, rec);
      }
    } catch (...) {
      errors[static_cast<size_t>(t)] = std::current_exception();
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  SimulationEstimate est;
  est.T = prm.T;
  est.dt = prm.dt;
  est.paths = prm.paths;
  est.seed = prm.seed;
  est.rate_bound = rate_bound;
  est.pde_unverified = problem.hamiltonians.states[0].gamma != problem.hamiltonians.states[1].gamma;
  est.tail_averages.reserve(results.size());
  double sum = 0.0, sum1 = 0.0;
  for (const auto& r : results) {
    est.tail_averages.push_back(r.tail_average);
    sum += r.tail_average;
    sum1 += r.time_state1;
    for (int k = 0; k < 2; ++k) {
      est.switches[k] += r.switches[k];
      est.time_in[k] += r.time_in[k];
      est.rate_integral[k] += r.rate_integral[k];
    }
    est.clamp_count += r.clamps;
  }
  const double n = static_cast<double>(prm.paths);
  est.lambda_hat = sum / n;
  est.state1_fraction = sum1 / n;
  if (prm.paths > 1) {
    double v = 0.0, v1 = 0.0;
    for (const auto& r : results) {
      v += (r.tail_average - est.lambda_hat) * (r.tail_average - est.lambda_hat);
      v1 += (r.time_state1 - est.state1_fraction) * (r.time_state1 - est.state1_fraction);
    }
    est.std_error = std::sqrt(v / (n - 1.0) / n);
    est.state1_fraction_se = std::sqrt(v1 / (n - 1.0) / n);
  }
  est.reliable = est.clamp_count == 0;
  est.sample_path = std::move(record);
  if (hsize) {
    est.histogram_grid = prm.histogram_grid;
    est.histogram_mesh = prm.histogram_mesh;
    est.histogram.assign(hsize, 0);
    for (const auto& h : hist)
      for (size_t i = 0; i < hsize; ++i) est.histogram[i] += h[i];
    for (auto c : est.histogram) est.histogram_samples += c;
  }
  return est;
}

/// Normalized (X, U, S) histogram as a measure on the LP's grid x mesh x regime.
inline OccupationMeasure empirical_measure(const SimulationEstimate& est, const LpData& lp) {
  if (!est.histogram_grid || !(*est.histogram_grid == lp.grid) || !est.histogram_mesh ||
      est.histogram_mesh->size() != lp.mesh.size())
    throw ParameterError("simulation histogram was not collected on this LP's grid and mesh");
  if (est.histogram_samples == 0) throw ParameterError("simulation histogram is empty");
  Eigen::VectorXd w(static_cast<Eigen::Index>(est.histogram.size()));
  const double total = static_cast<double>(est.histogram_samples);
  for (size_t i = 0; i < est.histogram.size(); ++i) w[static_cast<Eigen::Index>(i)] = static_cast<double>(est.histogram[i]) / total;
  return make_occupation_measure(lp, std::move(w));
}

}  // namespace ergohjb
