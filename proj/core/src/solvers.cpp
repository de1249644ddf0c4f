#include "css/solvers.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>

#include "css/error.hpp"
#include "css/linalg.hpp"

namespace css::solvers {

namespace {

using compiler::AffineForm;
using compiler::PsdBlock;
using compiler::QcqpProblem;
using compiler::SquaredAffineConstraint;

constexpr double kInf = std::numeric_limits<double>::infinity();

struct BlockState {
  Eigen::LLT<Eigen::MatrixXd> llt;
  bool ok = false;
};

BlockState factor_block(const PsdBlock& block, const Eigen::VectorXd& kappa) {
  BlockState state;
  Eigen::MatrixXd m = block.eval(kappa);
  m.diagonal().array() -= block.epsilon;
  state.llt.compute(m);
  state.ok = state.llt.info() == Eigen::Success && m.allFinite();
  if (state.ok) {
    // LLT can succeed on barely-indefinite matrices; reject non-positive pivots.
    const auto& l = state.llt.matrixLLT();
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
      if (!(l(i, i) > 0.0)) {
        state.ok = false;
        break;
      }
    }
  }
  return state;
}

bool full_in_domain(const QcqpProblem& prob, const Eigen::VectorXd& kappa) {
  for (const auto& c : prob.constraints) {
    if (!(c.eval(kappa) < 0.0)) return false;
  }
  for (const auto& b : prob.psd_blocks) {
    if (!factor_block(b, kappa).ok) return false;
  }
  for (Eigen::Index i : prob.nonneg) {
    if (!(kappa[i] > 0.0)) return false;
  }
  return true;
}

Eigen::VectorXd full_warm_start(const QcqpProblem& prob, Eigen::VectorXd kappa) {
  for (Eigen::Index i : prob.nonneg) {
    if (kappa[i] < 0.5) kappa[i] = 0.5;
  }
  for (const auto& c : prob.constraints) {
    if (!c.slack_index) continue;
    const double slack_coeff = c.linear.coeffs[*c.slack_index];
    if (slack_coeff >= 0.0) continue;
    const double saved = kappa[*c.slack_index];
    kappa[*c.slack_index] = 0.0;
    const double unslacked = c.eval(kappa);
    kappa[*c.slack_index] = std::max(saved, (unslacked + 1.0) / -slack_coeff);
  }
  return kappa;
}

/// Closed-form partial minimum of rho*s - mu*log(s - g) - mu*log(s) over
/// s > max(0, g). Slacked constraints enter the barrier subproblem through
/// this smooth convex penalty of g alone, which removes the slack variables
/// (and their tiny central-path gaps) from the Newton system.
struct SlackPenalty {
  double value = 0.0;
  double d1 = 0.0;  // = lambda, the constraint multiplier
  double d2 = 0.0;
  double s = 0.0;   // argmin slack
};

SlackPenalty slack_penalty(double g, double rho, double mu) {
  SlackPenalty out;
  const double root = std::sqrt(rho * rho * g * g + 4.0 * mu * mu);
  // s and the gap s - g both rationalized: the naive forms cancel
  // catastrophically when |rho g| >> mu.
  double gap;  // = s - g > 0 for every finite g
  if (g >= 0.0) {
    out.s = (rho * g + 2.0 * mu + root) / (2.0 * rho);
    gap = (2.0 * mu + 4.0 * mu * mu / (root + rho * g)) / (2.0 * rho);
  } else {
    out.s = (2.0 * mu + 4.0 * mu * mu / (root - rho * g)) / (2.0 * rho);
    gap = out.s - g;
  }
  out.value = rho * out.s - mu * std::log(gap) - mu * std::log(out.s);
  out.d1 = mu / gap;
  const double ds_dg = (rho * out.s - mu) / root;
  out.d2 = out.d1 / gap * (1.0 - ds_dg);
  return out;
}

/// The solve works on a reduced problem with per-constraint slacks
/// eliminated; `to_full` maps reduced variables back to problem variables.
struct Reduced {
  Eigen::VectorXd obj_quad;
  Eigen::VectorXd obj_lin;
  std::vector<SquaredAffineConstraint> cons;  // coefficients over reduced vars
  std::vector<double> rho;                    // > 0 when the constraint was slacked
  std::vector<PsdBlock> blocks;
  std::vector<Eigen::Index> nonneg;
  std::vector<Eigen::Index> to_full;
  std::vector<Eigen::Index> slack_var;  // constraint -> full slack index or -1
  Eigen::Index full_size = 0;

  Eigen::Index size() const { return obj_lin.size(); }
};

/// A full variable is eliminable when it is a nonnegative, linearly
/// penalized slack appearing with coefficient -1 in exactly one constraint.
Reduced reduce(const QcqpProblem& prob) {
  const Eigen::Index n = prob.objective_linear.size();
  std::vector<int> uses(static_cast<std::size_t>(n), 0);
  std::vector<Eigen::Index> owner(static_cast<std::size_t>(n), -1);
  for (std::size_t ci = 0; ci < prob.constraints.size(); ++ci) {
    const auto& c = prob.constraints[ci];
    for (Eigen::Index v = 0; v < n; ++v) {
      double touch = std::abs(c.linear.coeffs[v]);
      for (const auto& a : c.squares) touch += std::abs(a.coeffs[v]);
      if (touch != 0.0) {
        ++uses[static_cast<std::size_t>(v)];
        owner[static_cast<std::size_t>(v)] = static_cast<Eigen::Index>(ci);
      }
    }
  }
  std::vector<bool> in_block(static_cast<std::size_t>(n), false);
  for (const auto& b : prob.psd_blocks) {
    for (const auto& [v, mat] : b.coeffs) in_block[static_cast<std::size_t>(v)] = true;
  }
  std::vector<bool> nonneg_flag(static_cast<std::size_t>(n), false);
  for (Eigen::Index i : prob.nonneg) nonneg_flag[static_cast<std::size_t>(i)] = true;

  std::vector<bool> eliminate(static_cast<std::size_t>(n), false);
  for (std::size_t ci = 0; ci < prob.constraints.size(); ++ci) {
    const auto& c = prob.constraints[ci];
    if (!c.slack_index) continue;
    const Eigen::Index v = *c.slack_index;
    bool in_squares = false;
    for (const auto& a : c.squares) in_squares = in_squares || a.coeffs[v] != 0.0;
    if (uses[static_cast<std::size_t>(v)] == 1 && owner[static_cast<std::size_t>(v)] ==
            static_cast<Eigen::Index>(ci) &&
        !in_squares && c.linear.coeffs[v] == -1.0 && nonneg_flag[static_cast<std::size_t>(v)] &&
        !in_block[static_cast<std::size_t>(v)] && prob.objective_quad_diag[v] == 0.0 &&
        prob.objective_linear[v] > 0.0) {
      eliminate[static_cast<std::size_t>(v)] = true;
    }
  }

  Reduced red;
  red.full_size = n;
  std::vector<Eigen::Index> to_reduced(static_cast<std::size_t>(n), -1);
  for (Eigen::Index v = 0; v < n; ++v) {
    if (!eliminate[static_cast<std::size_t>(v)]) {
      to_reduced[static_cast<std::size_t>(v)] = static_cast<Eigen::Index>(red.to_full.size());
      red.to_full.push_back(v);
    }
  }
  const auto m = static_cast<Eigen::Index>(red.to_full.size());

  auto shrink = [&](const AffineForm& f) {
    AffineForm out;
    out.offset = f.offset;
    out.coeffs = Eigen::VectorXd::Zero(m);
    for (Eigen::Index r = 0; r < m; ++r) out.coeffs[r] = f.coeffs[red.to_full[static_cast<std::size_t>(r)]];
    return out;
  };

  red.obj_quad = Eigen::VectorXd::Zero(m);
  red.obj_lin = Eigen::VectorXd::Zero(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    red.obj_quad[r] = prob.objective_quad_diag[red.to_full[static_cast<std::size_t>(r)]];
    red.obj_lin[r] = prob.objective_linear[red.to_full[static_cast<std::size_t>(r)]];
  }

  for (const auto& c : prob.constraints) {
    SquaredAffineConstraint rc;
    rc.label = c.label;
    for (const auto& a : c.squares) rc.squares.push_back(shrink(a));
    rc.linear = shrink(c.linear);
    const bool slacked = c.slack_index && eliminate[static_cast<std::size_t>(*c.slack_index)];
    red.rho.push_back(slacked ? prob.objective_linear[*c.slack_index] : 0.0);
    red.slack_var.push_back(slacked ? *c.slack_index : -1);
    red.cons.push_back(std::move(rc));
  }

  for (const auto& b : prob.psd_blocks) {
    PsdBlock rb;
    rb.label = b.label;
    rb.epsilon = b.epsilon;
    rb.constant = b.constant;
    for (const auto& [v, mat] : b.coeffs) {
      rb.coeffs.emplace_back(to_reduced[static_cast<std::size_t>(v)], mat);
    }
    red.blocks.push_back(std::move(rb));
  }
  for (Eigen::Index i : prob.nonneg) {
    if (!eliminate[static_cast<std::size_t>(i)]) {
      red.nonneg.push_back(to_reduced[static_cast<std::size_t>(i)]);
    }
  }
  return red;
}

/// Reconstructs the full decision vector: eliminated slacks take their
/// closed-form optimum at level mu.
Eigen::VectorXd reconstruct(const Reduced& red, const Eigen::VectorXd& kappa_red, double mu) {
  Eigen::VectorXd full = Eigen::VectorXd::Zero(red.full_size);
  for (std::size_t r = 0; r < red.to_full.size(); ++r) {
    full[red.to_full[r]] = kappa_red[static_cast<Eigen::Index>(r)];
  }
  for (std::size_t ci = 0; ci < red.cons.size(); ++ci) {
    if (red.slack_var[ci] < 0) continue;
    const double g = red.cons[ci].eval(kappa_red);
    full[red.slack_var[ci]] = slack_penalty(g, red.rho[ci], mu).s;
  }
  return full;
}

bool reduced_in_domain(const Reduced& red, const Eigen::VectorXd& kappa) {
  for (std::size_t ci = 0; ci < red.cons.size(); ++ci) {
    if (red.rho[ci] > 0.0) continue;  // slacked: defined everywhere
    if (!(red.cons[ci].eval(kappa) < 0.0)) return false;
  }
  for (const auto& b : red.blocks) {
    if (!factor_block(b, kappa).ok) return false;
  }
  for (Eigen::Index i : red.nonneg) {
    if (!(kappa[i] > 0.0)) return false;
  }
  return true;
}

double reduced_merit(const Reduced& red, const Eigen::VectorXd& kappa, double mu) {
  double value = kappa.dot(red.obj_quad.cwiseProduct(kappa)) + red.obj_lin.dot(kappa);
  for (std::size_t ci = 0; ci < red.cons.size(); ++ci) {
    const double g = red.cons[ci].eval(kappa);
    if (red.rho[ci] > 0.0) {
      value += slack_penalty(g, red.rho[ci], mu).value;
    } else {
      if (!(g < 0.0)) return kInf;
      value -= mu * std::log(-g);
    }
  }
  for (const auto& b : red.blocks) {
    const BlockState state = factor_block(b, kappa);
    if (!state.ok) return kInf;
    double logdet = 0.0;
    const auto& l = state.llt.matrixLLT();
    for (Eigen::Index i = 0; i < l.rows(); ++i) logdet += std::log(l(i, i));
    value -= mu * 2.0 * logdet;
  }
  for (Eigen::Index i : red.nonneg) {
    if (!(kappa[i] > 0.0)) return kInf;
    value -= mu * std::log(kappa[i]);
  }
  return std::isfinite(value) ? value : kInf;
}

std::vector<Eigen::MatrixXd> reduced_curvatures(const Reduced& red) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(red.cons.size());
  const Eigen::Index m = red.size();
  for (const auto& c : red.cons) {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(m, m);
    for (const auto& a : c.squares) h.noalias() += 2.0 * a.coeffs * a.coeffs.transpose();
    out.push_back(std::move(h));
  }
  return out;
}

void reduced_derivatives(const Reduced& red, const std::vector<Eigen::MatrixXd>& curvatures,
                         const Eigen::VectorXd& kappa, double mu, Eigen::VectorXd& grad,
                         Eigen::MatrixXd& hess,
                         const std::vector<bool>* clamp_crease = nullptr) {
  const Eigen::Index m = kappa.size();
  grad = 2.0 * red.obj_quad.cwiseProduct(kappa) + red.obj_lin;
  hess = (2.0 * red.obj_quad).asDiagonal();

  Eigen::VectorXd grad_g(m);
  for (std::size_t ci = 0; ci < red.cons.size(); ++ci) {
    const auto& c = red.cons[ci];
    const double g = c.eval(kappa);
    grad_g = c.linear.coeffs;
    for (const auto& a : c.squares) grad_g.noalias() += 2.0 * a.eval(kappa) * a.coeffs;
    if (red.rho[ci] > 0.0) {
      const SlackPenalty phi = slack_penalty(g, red.rho[ci], mu);
      grad.noalias() += phi.d1 * grad_g;
      double d2 = phi.d2;
      if (clamp_crease && (*clamp_crease)[ci]) {
        // The step would cross this penalty's crease: use the curvature at
        // the crease so Newton lands on it instead of hopping across.
        d2 = std::max(d2, red.rho[ci] * red.rho[ci] / (8.0 * mu));
      }
      hess.noalias() += d2 * grad_g * grad_g.transpose();
      hess.noalias() += phi.d1 * curvatures[ci];
    } else {
      const double inv = 1.0 / (-g);
      grad.noalias() += mu * inv * grad_g;
      hess.noalias() += mu * inv * inv * grad_g * grad_g.transpose();
      hess.noalias() += mu * inv * curvatures[ci];
    }
  }

  for (const auto& b : red.blocks) {
    const BlockState state = factor_block(b, kappa);
    const Eigen::Index dim = b.constant.rows();
    const Eigen::MatrixXd inv = state.llt.solve(Eigen::MatrixXd::Identity(dim, dim));
    std::vector<Eigen::MatrixXd> x;
    x.reserve(b.coeffs.size());
    for (const auto& [index, cmat] : b.coeffs) x.push_back(inv * cmat);
    for (std::size_t a = 0; a < b.coeffs.size(); ++a) {
      const Eigen::Index va = b.coeffs[a].first;
      grad[va] -= mu * x[a].trace();
      for (std::size_t bb = a; bb < b.coeffs.size(); ++bb) {
        const Eigen::Index vb = b.coeffs[bb].first;
        const double hab = mu * (x[a].array() * x[bb].transpose().array()).sum();
        hess(va, vb) += hab;
        if (va != vb) hess(vb, va) += hab;
      }
    }
  }

  for (Eigen::Index i : red.nonneg) {
    grad[i] -= mu / kappa[i];
    hess(i, i) += mu / (kappa[i] * kappa[i]);
  }
}

/// KKT certificate at a full-space point: multipliers for the active set
/// (|g| below a sqrt(mu) threshold) are refit by least squares, which
/// removes the floating-point cancellation the raw barrier gradient suffers
/// near the central path; inactive constraints keep multiplier zero so their
/// complementarity is exact. Returns max of scaled stationarity and
/// complementarity over the exhibited multipliers.
double kkt_certificate(const QcqpProblem& prob, const Eigen::VectorXd& kappa, double mu) {
  const Eigen::Index n = kappa.size();
  const Eigen::VectorXd grad_f0 =
      2.0 * prob.objective_quad_diag.cwiseProduct(kappa) + prob.objective_linear;
  const double active_threshold = std::sqrt(mu);

  std::vector<Eigen::VectorXd> directions;  // gradient of each active inequality
  std::vector<double> slacks;               // |g| of each active inequality

  auto consider = [&](Eigen::VectorXd grad_g, double g) {
    if (!(g < 0.0)) return;
    if (-g > active_threshold) return;  // inactive: multiplier stays zero
    directions.push_back(std::move(grad_g));
    slacks.push_back(-g);
  };
  for (const auto& c : prob.constraints) {
    Eigen::VectorXd grad_g = c.linear.coeffs;
    for (const auto& a : c.squares) grad_g.noalias() += 2.0 * a.eval(kappa) * a.coeffs;
    consider(std::move(grad_g), c.eval(kappa));
  }
  for (Eigen::Index i : prob.nonneg) {
    Eigen::VectorXd grad_g = Eigen::VectorXd::Zero(n);
    grad_g[i] = -1.0;
    consider(std::move(grad_g), -kappa[i]);
  }

  // PSD blocks enter through a scalar rescaling of the barrier multiplier
  // Lambda_b = c_b * mu * M^{-1} (PSD for any c_b >= 0).
  std::vector<double> block_comp;
  for (const auto& b : prob.psd_blocks) {
    const BlockState state = factor_block(b, kappa);
    if (!state.ok) return kInf;
    const Eigen::Index dim = b.constant.rows();
    const Eigen::MatrixXd inv = state.llt.solve(Eigen::MatrixXd::Identity(dim, dim));
    Eigen::VectorXd direction = Eigen::VectorXd::Zero(n);
    for (const auto& [index, cmat] : b.coeffs) {
      direction[index] -= mu * (inv.array() * cmat.transpose().array()).sum();
    }
    if (direction.lpNorm<Eigen::Infinity>() == 0.0) continue;
    directions.push_back(std::move(direction));
    slacks.push_back(0.0);
    block_comp.push_back(mu * static_cast<double>(dim));  // tr(mu M^{-1} (M - eps I))
  }

  Eigen::VectorXd residual = grad_f0;
  double comp = 0.0;
  double scale = std::max(1.0, grad_f0.lpNorm<Eigen::Infinity>());
  if (!directions.empty()) {
    // Nonnegative fit by a few rounds of least squares with pruning of
    // negative multipliers.
    std::vector<std::size_t> active(directions.size());
    for (std::size_t c = 0; c < directions.size(); ++c) active[c] = c;
    Eigen::VectorXd fit;
    for (int round = 0; round < 4 && !active.empty(); ++round) {
      Eigen::MatrixXd j(n, static_cast<Eigen::Index>(active.size()));
      for (std::size_t c = 0; c < active.size(); ++c) {
        j.col(static_cast<Eigen::Index>(c)) = directions[active[c]];
      }
      fit = j.colPivHouseholderQr().solve(-grad_f0);
      std::vector<std::size_t> keep;
      for (std::size_t c = 0; c < active.size(); ++c) {
        if (fit[static_cast<Eigen::Index>(c)] > 0.0) keep.push_back(active[c]);
      }
      if (keep.size() == active.size()) break;
      active = std::move(keep);
    }
    residual = grad_f0;
    const std::size_t n_ineq = directions.size() - block_comp.size();
    if (!active.empty()) {
      Eigen::MatrixXd j(n, static_cast<Eigen::Index>(active.size()));
      for (std::size_t c = 0; c < active.size(); ++c) {
        j.col(static_cast<Eigen::Index>(c)) = directions[active[c]];
      }
      fit = j.colPivHouseholderQr().solve(-grad_f0);
      for (Eigen::Index c = 0; c < fit.size(); ++c) fit[c] = std::max(fit[c], 0.0);
      residual += j * fit;
      for (std::size_t c = 0; c < active.size(); ++c) {
        const double weight = fit[static_cast<Eigen::Index>(c)];
        const std::size_t index = active[c];
        const double activity =
            index < n_ineq ? weight * slacks[index] : weight * block_comp[index - n_ineq];
        comp = std::max(comp, activity);
        scale = std::max(scale, weight * directions[index].lpNorm<Eigen::Infinity>());
      }
    }
  }
  return std::max(residual.lpNorm<Eigen::Infinity>() / scale, comp);
}

/// Alternative certificate from the barrier multipliers themselves: the
/// scaled gradient of the reduced merit. Exact at a centered point; used as
/// a fallback when the least-squares refit is the noisier of the two.
double barrier_certificate(const Reduced& red, const std::vector<Eigen::MatrixXd>& curvatures,
                           const Eigen::VectorXd& kappa, double mu) {
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
  reduced_derivatives(red, curvatures, kappa, mu, grad, hess);
  const Eigen::VectorXd grad_f0 = 2.0 * red.obj_quad.cwiseProduct(kappa) + red.obj_lin;
  const double scale = std::max(
      {1.0, grad_f0.lpNorm<Eigen::Infinity>(), (grad - grad_f0).lpNorm<Eigen::Infinity>()});
  return std::max(grad.lpNorm<Eigen::Infinity>() / scale, mu);
}

struct PathOptions {
  /// Optional early exit, checked after every accepted Newton step.
  std::function<bool(const Eigen::VectorXd&)> stop_early;
  /// Optional certificate used for best-iterate tracking in the last stage.
  std::function<double(const Eigen::VectorXd&, double)> certificate;
};

struct PathResult {
  Eigen::VectorXd kappa;
  double mu_final = 0.0;
  double stationarity = kInf;
  int newton_iterations = 0;
  bool stopped_early = false;
};

PathResult central_path(const Reduced& red, const Eigen::VectorXd& start,
                        const SolverConfig& cfg, const PathOptions& options = {}) {
  const bool trace = std::getenv("CSS_SOLVER_TRACE") != nullptr;
  PathResult result;
  result.kappa = start;
  const std::vector<Eigen::MatrixXd> curvatures = reduced_curvatures(red);
  const Eigen::Index m = start.size();
  Eigen::VectorXd grad(m);
  Eigen::MatrixXd hess(m, m);

  double mu = cfg.barrier_mu0;
  Eigen::VectorXd best_kappa = result.kappa;
  double best_stationarity = kInf;
  for (int outer = 0; outer < cfg.max_outer_iters; ++outer) {
    const bool last_stage = mu <= cfg.mu_min;
    for (int inner = 0; inner < cfg.max_newton_iters; ++inner) {
      if (last_stage && options.certificate) {
        // The certificate bottoms out at evaluation noise, so keep the best
        // iterate seen rather than requiring monotone decay.
        const double stationarity = options.certificate(result.kappa, mu);
        if (stationarity < best_stationarity) {
          best_stationarity = stationarity;
          best_kappa = result.kappa;
        }
        if (stationarity <= 0.1 * cfg.tol_kkt) break;
      }

      // Newton step on the Jacobi-scaled system (the slack penalties make
      // curvatures span ~14 orders of magnitude), with escalating Tikhonov
      // regularization as the fallback.
      auto newton_step = [&](Eigen::VectorXd& out) {
        Eigen::VectorXd scaling = hess.diagonal().cwiseMax(1e-12).cwiseSqrt().cwiseInverse();
        double reg = 0.0;
        for (int attempt = 0; attempt < 7; ++attempt) {
          Eigen::MatrixXd h = scaling.asDiagonal() * hess * scaling.asDiagonal();
          if (reg > 0.0) h.diagonal().array() += reg;
          Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
          if (ldlt.info() == Eigen::Success) {
            const Eigen::VectorXd scaled_rhs = -(scaling.cwiseProduct(grad));
            out = scaling.cwiseProduct(ldlt.solve(scaled_rhs));
            if (out.allFinite() && -grad.dot(out) >= -1e-12) return;
          }
          reg = (reg == 0.0) ? 1e-12 : reg * 100.0;
        }
        throw Error(ErrorCode::numerical_failure, "Newton system not positive definite");
      };

      reduced_derivatives(red, curvatures, result.kappa, mu, grad, hess);
      Eigen::VectorXd step;
      newton_step(step);

      // Semismooth guard: when the step would hop across slack-penalty
      // creases, recompute it with the crease curvature so the active set
      // can settle. Repeated because the corrected step may expose new
      // crossings.
      std::vector<bool> clamp(red.cons.size(), false);
      for (int round = 0; round < 5; ++round) {
        bool new_crossing = false;
        for (std::size_t ci = 0; ci < red.cons.size(); ++ci) {
          if (red.rho[ci] <= 0.0 || clamp[ci]) continue;
          const double g0 = red.cons[ci].eval(result.kappa);
          const double g1 = red.cons[ci].eval(result.kappa + step);
          if ((g0 > 0.0) != (g1 > 0.0) && std::abs(g0) > 16.0 * mu / red.rho[ci]) {
            clamp[ci] = true;
            new_crossing = true;
          }
        }
        if (!new_crossing) break;
        reduced_derivatives(red, curvatures, result.kappa, mu, grad, hess, &clamp);
        newton_step(step);
      }

      const double decrement = std::max(0.0, -grad.dot(step));
      const double f0 = reduced_merit(red, result.kappa, mu);
      if (decrement * 0.5 <= 1e-18 * (1.0 + std::abs(f0))) break;

      // Fraction-to-boundary cap: one step may consume at most 99% of any
      // barrier margin. Wall-hugging iterates are merit-cheap (the log only
      // pays ~mu per decade) but destroy the Newton conditioning, so they
      // must be approached gradually.
      double alpha = 1.0;
      {
        auto margins_ok = [&](const Eigen::VectorXd& trial) {
          for (std::size_t ci = 0; ci < red.cons.size(); ++ci) {
            if (red.rho[ci] > 0.0) continue;
            if (red.cons[ci].eval(trial) > 0.01 * red.cons[ci].eval(result.kappa)) return false;
          }
          for (const auto& b : red.blocks) {
            Eigen::MatrixXd now = b.eval(result.kappa);
            now.diagonal().array() -= b.epsilon;
            Eigen::MatrixXd next = b.eval(trial);
            next.diagonal().array() -= b.epsilon;
            if (min_eigenvalue(next) < 0.01 * min_eigenvalue(now)) return false;
          }
          for (Eigen::Index i : red.nonneg) {
            if (trial[i] < 0.01 * result.kappa[i]) return false;
          }
          return true;
        };
        for (int cap = 0; cap < 40 && !margins_ok(result.kappa + alpha * step); ++cap) {
          alpha *= 0.5;
        }
      }

      // Armijo backtracking with an allowance for floating-point noise in
      // the merit difference; near the central path the noise term lets the
      // polishing full steps through.
      const double noise_floor = 1e-13 * (1.0 + std::abs(f0));
      bool moved = false;
      double achieved = 0.0;
      for (int ls = 0; ls < 60; ++ls) {
        Eigen::VectorXd trial = result.kappa + alpha * step;
        const double f1 = reduced_merit(red, trial, mu);
        if (f1 <= f0 - 0.25 * alpha * decrement + noise_floor) {
          achieved = f0 - f1;
          result.kappa = std::move(trial);
          moved = true;
          break;
        }
        alpha *= 0.5;
      }

      // Against steep barrier walls the Newton system loses all accurate
      // digits and the step degenerates; the raw gradient still points out
      // of the pocket, so fall back to scaled steepest descent when Newton
      // stops paying.
      if (!moved || achieved <= 1e-8 * (1.0 + std::abs(f0))) {
        Eigen::VectorXd descent = -grad;
        const double gnorm = descent.norm();
        if (gnorm > 0.0) {
          descent *= (1.0 + result.kappa.norm()) / gnorm;
          double beta = 1.0;
          for (int ls = 0; ls < 60; ++ls) {
            Eigen::VectorXd trial = result.kappa + beta * descent;
            const double f1 = reduced_merit(red, trial, mu);
            if (f1 < f0 - noise_floor &&
                (!moved || f1 < f0 - achieved)) {
              result.kappa = std::move(trial);
              moved = true;
              break;
            }
            beta *= 0.5;
          }
        }
      }
      ++result.newton_iterations;
      if (trace) {
        double wall = 1e300;
        for (const auto& b : red.blocks) {
          Eigen::MatrixXd m = b.eval(result.kappa);
          m.diagonal().array() -= b.epsilon;
          wall = std::min(wall, min_eigenvalue(m));
        }
        std::fprintf(stderr,
                     "  mu %.1e inner %d F %.6e decrement %.3e margin %.2e alpha %.2e moved %d\n",
                     mu, inner, f0, decrement, wall, alpha, moved);
      }
      if (!moved) break;
      if (options.stop_early && options.stop_early(result.kappa)) {
        result.stopped_early = true;
        result.mu_final = mu;
        return result;
      }
    }
    if (last_stage) break;
    mu = std::max(mu / cfg.barrier_factor, cfg.mu_min);
  }

  result.mu_final = mu;
  if (options.certificate) {
    const double final_stationarity = options.certificate(result.kappa, mu);
    if (best_stationarity < final_stationarity) {
      result.kappa = best_kappa;
      result.stationarity = best_stationarity;
    } else {
      result.stationarity = final_stationarity;
    }
  }
  return result;
}

/// Phase-I program over the reduced space: one extra feasibility variable s
/// relaxes the unslacked constraints, sign bounds, and PSD blocks (slacked
/// constraints are satisfiable by construction and stay as penalties).
Reduced phase1_reduced(const Reduced& red) {
  const Eigen::Index m = red.size();
  Reduced aug;
  aug.full_size = m + 1;
  for (Eigen::Index r = 0; r < m + 1; ++r) aug.to_full.push_back(r);
  const Eigen::Index s = m;

  auto extend = [&](const AffineForm& f, double s_coeff) {
    AffineForm out;
    out.coeffs = Eigen::VectorXd::Zero(m + 1);
    out.coeffs.head(m) = f.coeffs;
    out.coeffs[s] = s_coeff;
    out.offset = f.offset;
    return out;
  };

  for (std::size_t ci = 0; ci < red.cons.size(); ++ci) {
    const auto& c = red.cons[ci];
    SquaredAffineConstraint ac;
    ac.label = c.label;
    const bool slacked = red.rho[ci] > 0.0;
    for (const auto& a : c.squares) ac.squares.push_back(extend(a, 0.0));
    ac.linear = extend(c.linear, slacked ? 0.0 : -1.0);
    aug.cons.push_back(std::move(ac));
    aug.rho.push_back(red.rho[ci]);
    aug.slack_var.push_back(-1);
  }
  for (Eigen::Index i : red.nonneg) {
    SquaredAffineConstraint bound;
    bound.label = "nonneg";
    bound.linear.coeffs = Eigen::VectorXd::Zero(m + 1);
    bound.linear.coeffs[i] = -1.0;
    bound.linear.coeffs[s] = -1.0;
    aug.cons.push_back(std::move(bound));
    aug.rho.push_back(0.0);
    aug.slack_var.push_back(-1);
  }
  for (const auto& b : red.blocks) {
    PsdBlock ab = b;
    ab.coeffs.emplace_back(s, Eigen::MatrixXd::Identity(b.constant.rows(), b.constant.cols()));
    aug.blocks.push_back(std::move(ab));
  }
  // The tiny quadratic term keeps the subproblem bounded in the flat
  // directions the barrier alone does not control.
  aug.obj_quad = Eigen::VectorXd::Constant(m + 1, 1e-9);
  aug.obj_lin = Eigen::VectorXd::Zero(m + 1);
  aug.obj_lin[s] = 1.0;
  return aug;
}

double phase1_start_level(const Reduced& red, const Eigen::VectorXd& kappa) {
  double level = 0.0;
  for (std::size_t ci = 0; ci < red.cons.size(); ++ci) {
    if (red.rho[ci] > 0.0) continue;
    level = std::max(level, red.cons[ci].eval(kappa));
  }
  for (const auto& b : red.blocks) {
    Eigen::MatrixXd m = b.eval(kappa);
    m.diagonal().array() -= b.epsilon;
    level = std::max(level, -min_eigenvalue(m));
  }
  for (Eigen::Index i : red.nonneg) level = std::max(level, -kappa[i]);
  return level + 1.0 + 0.1 * std::abs(level);
}

}  // namespace

Eigen::VectorXd lift_slacks(const compiler::QcqpProblem& problem, Eigen::VectorXd kappa) {
  return full_warm_start(problem, std::move(kappa));
}

bool strictly_feasible(const compiler::QcqpProblem& problem, const Eigen::VectorXd& kappa) {
  return full_in_domain(problem, kappa);
}

const char* to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::max_iters: return "max_iters";
  }
  return "unknown";
}

SynthesisResult solve_qcqp(const QcqpProblem& problem, const SolverConfig& cfg) {
  const Eigen::Index n = problem.objective_linear.size();
  if (problem.objective_quad_diag.size() != n) {
    throw Error(ErrorCode::dimension_mismatch, "objective vectors disagree");
  }

  SynthesisResult result;
  result.labels.reserve(problem.constraints.size());
  for (const auto& c : problem.constraints) result.labels.push_back(c.label);

  const Reduced red = reduce(problem);
  const Eigen::VectorXd full0 =
      problem.initial_guess ? *problem.initial_guess : Eigen::VectorXd::Zero(n);
  Eigen::VectorXd kappa(red.size());
  for (std::size_t r = 0; r < red.to_full.size(); ++r) {
    kappa[static_cast<Eigen::Index>(r)] = full0[red.to_full[r]];
  }
  for (Eigen::Index i : red.nonneg) {
    if (kappa[i] < 0.5) kappa[i] = 0.5;
  }

  auto finish = [&](SolveStatus status, double kkt, double mu, int iters) {
    result.status = status;
    result.kkt_residual = kkt;
    result.newton_iterations += iters;
    result.kappa = reconstruct(red, kappa, mu);
    if (problem.layout.nu > 0) result.k = problem.layout.unpack_k(result.kappa);
    result.slacks = result.kappa.segment(problem.layout.k_count(), problem.layout.slack_count);
    result.objective_value = problem.objective(result.kappa);
    result.residuals.resize(static_cast<Eigen::Index>(problem.constraints.size()));
    for (std::size_t c = 0; c < problem.constraints.size(); ++c) {
      result.residuals[static_cast<Eigen::Index>(c)] = problem.constraints[c].eval(result.kappa);
    }
    return result;
  };

  if (!reduced_in_domain(red, kappa)) {
    const Reduced aug = phase1_reduced(red);
    Eigen::VectorXd start(red.size() + 1);
    start.head(red.size()) = kappa;
    start[red.size()] = phase1_start_level(red, kappa);

    PathOptions stop;
    const Eigen::Index s_index = red.size();
    stop.stop_early = [s_index](const Eigen::VectorXd& point) {
      return point[s_index] < -1e-6;
    };
    SolverConfig phase1_cfg = cfg;
    phase1_cfg.mu_min = 1e-10;
    const PathResult phase1 = central_path(aug, start, phase1_cfg, stop);

    if (!phase1.stopped_early && phase1.kappa[s_index] >= -1e-8) {
      kappa = phase1.kappa.head(red.size());
      result.newton_iterations = phase1.newton_iterations;
      return finish(SolveStatus::infeasible, kInf, phase1.mu_final, 0);
    }
    kappa = phase1.kappa.head(red.size());
    result.newton_iterations = phase1.newton_iterations;
  }

  PathOptions options;
  const std::vector<Eigen::MatrixXd> cert_curvatures = reduced_curvatures(red);
  options.certificate = [&](const Eigen::VectorXd& point, double mu) {
    // Either exhibited multiplier set certifies; report the better one.
    return std::min(kkt_certificate(problem, reconstruct(red, point, mu), mu),
                    barrier_certificate(red, cert_curvatures, point, mu));
  };
  // Start the path where the barrier is commensurate with the objective;
  // with mu too small the first stage is already the endgame and Newton
  // dives into the constraint walls instead of following the path.
  SolverConfig path_cfg = cfg;
  double start_scale = std::abs(red.obj_lin.dot(kappa) +
                                kappa.dot(red.obj_quad.cwiseProduct(kappa)));
  for (std::size_t ci = 0; ci < red.cons.size(); ++ci) {
    if (red.rho[ci] > 0.0) {
      start_scale += red.rho[ci] * std::max(0.0, red.cons[ci].eval(kappa));
    }
  }
  const double barrier_count = std::max<double>(1.0, static_cast<double>(red.cons.size()));
  path_cfg.barrier_mu0 = std::max(cfg.barrier_mu0, (start_scale + 1.0) / barrier_count);
  const PathResult path = central_path(red, kappa, path_cfg, options);
  kappa = path.kappa;
  const double kkt = std::max(path.stationarity, path.mu_final);
  return finish(kkt <= cfg.tol_kkt ? SolveStatus::optimal : SolveStatus::max_iters, kkt,
                path.mu_final, path.newton_iterations);
}

namespace {

/// Index bookkeeping for the LMI search variables (Q upper triangle, Y, Lambda).
struct LmiLayout {
  Eigen::Index n = 0;
  Eigen::Index nu = 0;

  Eigen::Index q_count() const { return n * (n + 1) / 2; }
  Eigen::Index q_index(Eigen::Index i, Eigen::Index j) const {
    if (i > j) std::swap(i, j);
    return i * n - i * (i - 1) / 2 + (j - i);
  }
  Eigen::Index y_index(Eigen::Index i, Eigen::Index j) const { return q_count() + j * nu + i; }
  Eigen::Index lambda_index(Eigen::Index i) const { return q_count() + nu * n + i; }
  Eigen::Index size() const { return q_count() + nu * n + n; }

  Eigen::MatrixXd basis(Eigen::Index i, Eigen::Index j) const {
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
    s(i, j) += 1.0;
    s(j, i) += 1.0;
    if (i == j) s(i, j) = 1.0;
    return s;
  }

  Eigen::MatrixXd unpack_q(const Eigen::VectorXd& kappa) const {
    Eigen::MatrixXd q(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i; j < n; ++j) {
        q(i, j) = kappa[q_index(i, j)];
        q(j, i) = q(i, j);
      }
    }
    return q;
  }

  Eigen::MatrixXd unpack_y(const Eigen::VectorXd& kappa) const {
    Eigen::MatrixXd y(nu, n);
    for (Eigen::Index i = 0; i < nu; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) y(i, j) = kappa[y_index(i, j)];
    }
    return y;
  }
};

}  // namespace

LyapunovSearch find_p(const systems::LinearSystem& sys, double beta_v, const SolverConfig& cfg) {
  const Eigen::Index n = sys.nx();
  const Eigen::Index nu = sys.nu();
  LmiLayout lmi{n, nu};

  QcqpProblem prob;
  prob.layout.extra_count = lmi.size();

  // -(QA' + AQ + beta Q + Y'B' + BY + diag(Lambda)) >= eps I
  PsdBlock stability;
  stability.label = "stability";
  stability.epsilon = cfg.psd_epsilon;
  stability.constant = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      const Eigen::MatrixXd s = lmi.basis(i, j);
      stability.coeffs.emplace_back(
          lmi.q_index(i, j),
          -symmetrize(s * sys.a.transpose() + sys.a * s + beta_v * s));
    }
  }
  for (Eigen::Index i = 0; i < nu; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      Eigen::MatrixXd c = Eigen::MatrixXd::Zero(n, n);
      c.col(j) -= sys.b.col(i);
      c.row(j) -= sys.b.col(i).transpose();
      stability.coeffs.emplace_back(lmi.y_index(i, j), std::move(c));
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(n, n);
    c(i, i) = -1.0;
    stability.coeffs.emplace_back(lmi.lambda_index(i), std::move(c));
  }
  prob.psd_blocks.push_back(std::move(stability));

  // The LMI is scale free, so pin the normalization: 0.25 I <= Q <= 10 I and
  // |Y| <= 50 elementwise. This keeps P = Q^{-1} well conditioned and the
  // recovered gain Y Q^{-1} at a sane magnitude for warm starts.
  const double q_min = 0.25;
  const double q_max = 10.0;
  const double y_box = 50.0;

  PsdBlock q_pd;
  q_pd.label = "q_pd";
  q_pd.epsilon = q_min;
  q_pd.constant = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      q_pd.coeffs.emplace_back(lmi.q_index(i, j), lmi.basis(i, j));
    }
  }
  prob.psd_blocks.push_back(std::move(q_pd));

  PsdBlock q_cap;
  q_cap.label = "q_cap";
  q_cap.epsilon = 0.0;
  q_cap.constant = q_max * Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      q_cap.coeffs.emplace_back(lmi.q_index(i, j), -lmi.basis(i, j));
    }
  }
  prob.psd_blocks.push_back(std::move(q_cap));

  // Margins dominate; the small quadratic term breaks the scale degeneracy
  // by pulling Q toward the identity and Y toward zero.
  const double reg = 1e-2;
  prob.objective_quad_diag = Eigen::VectorXd::Constant(lmi.size(), reg);
  prob.objective_linear = Eigen::VectorXd::Zero(lmi.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    prob.objective_linear[lmi.q_index(i, i)] = -2.0 * reg;  // (q_ii - 1)^2 pull
  }

  auto linear_cap = [&](Eigen::Index var, double sign, double bound, const std::string& label) {
    SquaredAffineConstraint cap;
    cap.label = label;
    cap.linear.coeffs = Eigen::VectorXd::Zero(lmi.size());
    cap.linear.coeffs[var] = sign;
    cap.linear.offset = -bound;
    prob.constraints.push_back(std::move(cap));
  };

  // 0 <= Lambda_i <= 1; the weights lambda are fixed to all-ones.
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index li = lmi.lambda_index(i);
    prob.nonneg.push_back(li);
    prob.objective_linear[li] = -1.0;
    linear_cap(li, 1.0, 1.0, "lambda_cap[" + std::to_string(i) + "]");
  }
  for (Eigen::Index i = 0; i < nu; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const Eigen::Index yi = lmi.y_index(i, j);
      const std::string tag = std::to_string(i) + "," + std::to_string(j);
      linear_cap(yi, 1.0, y_box, "y_hi[" + tag + "]");
      linear_cap(yi, -1.0, y_box, "y_lo[" + tag + "]");
    }
  }

  Eigen::VectorXd guess = Eigen::VectorXd::Zero(lmi.size());
  for (Eigen::Index i = 0; i < n; ++i) guess[lmi.q_index(i, i)] = 1.0;
  prob.initial_guess = guess;

  const SynthesisResult sol = solve_qcqp(prob, cfg);
  if (sol.status == SolveStatus::infeasible) {
    throw Error(ErrorCode::infeasible,
                "no Lyapunov matrix exists: (A, B) is not stabilizable at rate beta_v");
  }
  if (sol.status != SolveStatus::optimal) {
    throw Error(ErrorCode::numerical_failure, "Lyapunov search did not converge");
  }

  const Eigen::MatrixXd q = lmi.unpack_q(sol.kappa);
  Eigen::LLT<Eigen::MatrixXd> llt(q);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::numerical_failure, "Q is not positive definite");
  }
  LyapunovSearch out;
  out.p = symmetrize(llt.solve(Eigen::MatrixXd::Identity(n, n)));
  out.k_lmi = lmi.unpack_y(sol.kappa) * out.p;
  return out;
}

double verify_lyapunov(const Eigen::MatrixXd& p, const Eigen::MatrixXd& a,
                       const Eigen::MatrixXd& b, const Eigen::MatrixXd& k, double beta_v) {
  if (p.rows() != a.rows() || b.rows() != a.rows() || k.rows() != b.cols() ||
      k.cols() != a.cols()) {
    throw Error(ErrorCode::dimension_mismatch, "verify_lyapunov shape mismatch");
  }
  const Eigen::MatrixXd closed = a + b * k;
  return max_eigenvalue(closed.transpose() * p + p * closed + beta_v * p);
}

}  // namespace css::solvers
