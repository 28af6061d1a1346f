#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "pars/monomial.hpp"
#include "pars/polynomial.hpp"
#include "pars/polynomial_matrix.hpp"
#include "pars/psys.hpp"
#include "pars/sdp.hpp"
#include "pars/sos.hpp"

namespace pars {

/// Affine parameter dependence folded into one constant realization: the
/// state block is followed by one channel block per parameter, each carrying
/// a rank factorization of that parameter's coefficient matrix.
struct LftRealization {
  Eigen::MatrixXd Abar, Bbar, Cbar;
  std::vector<int> block_sizes;
  Eigen::MatrixXd D;
  SemialgebraicSet params;

  int total_size() const {
    int total = 0;
    for (int s : block_sizes) total += s;
    return total;
  }

  void validate() const {
    if (block_sizes.empty() || block_sizes.front() < 0) {
      throw std::invalid_argument("LftRealization: missing state block");
    }
    for (int s : block_sizes) {
      if (s < 0) throw std::invalid_argument("LftRealization: negative block size");
    }
    const int total = total_size();
    if (Abar.rows() != total || Abar.cols() != total) {
      throw std::invalid_argument("LftRealization: Abar side mismatch");
    }
    if (Bbar.rows() != total || Cbar.cols() != total) {
      throw std::invalid_argument("LftRealization: Bbar/Cbar size mismatch");
    }
    if (static_cast<int>(block_sizes.size()) != params.p + 1) {
      throw std::invalid_argument("LftRealization: one channel block per parameter required");
    }
  }
};

/// Block-diagonal solutions of the two structured Lyapunov inequalities,
/// together with the per-alternation objective log.
struct StructuredGramians {
  Eigen::MatrixXd X, Y;
  std::vector<int> block_sizes;
  std::vector<double> objective_history;
  int alternations = 0;
};

struct GramianOptions {
  double stop_tol = 1e-6;
  int max_alternations = 100;
  std::optional<Eigen::MatrixXd> initial_x;
  std::optional<Eigen::MatrixXd> initial_y;
  SdpOptions sdp{};
};

/// Factors A(alpha) = A0 + sum_l alpha_l U_l A_l with U_l of orthonormal
/// columns (rank from singular values above 1e-10, each column's
/// largest-magnitude entry made positive) and assembles the one-big-matrix
/// realization [A0, U_1, ..; A_1, 0, ..; ..].
inline LftRealization lft_realize(const ParamStateSpace& sys) {
  sys.validate();
  if (sys.domain != TimeDomain::Discrete) {
    throw std::invalid_argument("lft_realize: only discrete-time systems are supported");
  }
  if (sys.A.degree() > 1 || sys.B.degree() > 0 || sys.C.degree() > 0 || sys.D.degree() > 0) {
    throw std::invalid_argument(
        "lft_realize: baseline requires affine LFT form (A affine in the parameters; B, C, D "
        "constant)");
  }
  const int p = sys.params.p;
  const int n = sys.n();

  LftRealization out;
  out.block_sizes = {n};
  std::vector<Eigen::MatrixXd> u_blocks, a_blocks;
  for (int l = 0; l < p; ++l) {
    const Eigen::MatrixXd coeff = sys.A.coefficient(Monomial::variable(l, p));
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(coeff, Eigen::ComputeThinU | Eigen::ComputeThinV);
    int rank = 0;
    while (rank < svd.singularValues().size() && svd.singularValues()(rank) > 1e-10) ++rank;
    Eigen::MatrixXd u = svd.matrixU().leftCols(rank);
    Eigen::MatrixXd a =
        svd.singularValues().head(rank).asDiagonal() * svd.matrixV().leftCols(rank).transpose();
    for (int c = 0; c < rank; ++c) {
      int imax = 0;
      u.col(c).cwiseAbs().maxCoeff(&imax);
      if (u(imax, c) < 0.0) {
        u.col(c) = -u.col(c);
        a.row(c) = -a.row(c);
      }
    }
    out.block_sizes.push_back(rank);
    u_blocks.push_back(std::move(u));
    a_blocks.push_back(std::move(a));
  }

  const int total = out.total_size();
  out.Abar = Eigen::MatrixXd::Zero(total, total);
  out.Abar.topLeftCorner(n, n) = sys.A.coefficient(Monomial::one(p));
  int offset = n;
  for (int l = 0; l < p; ++l) {
    const int r = out.block_sizes[static_cast<std::size_t>(l) + 1];
    out.Abar.block(0, offset, n, r) = u_blocks[static_cast<std::size_t>(l)];
    out.Abar.block(offset, 0, r, n) = a_blocks[static_cast<std::size_t>(l)];
    offset += r;
  }
  out.Bbar = Eigen::MatrixXd::Zero(total, sys.m());
  out.Bbar.topRows(n) = sys.B.coefficient(Monomial::one(p));
  out.Cbar = Eigen::MatrixXd::Zero(sys.o(), total);
  out.Cbar.leftCols(n) = sys.C.coefficient(Monomial::one(p));
  out.D = sys.D.coefficient(Monomial::one(p));
  out.params = sys.params;
  return out;
}

namespace detail {

inline LinPolyMatrix bitwise_symmetrized(const LinPolyMatrix& e) {
  return (e + e.transpose()).scaled(0.5);
}

/// One solve of the linearized problem: both Lyapunov inequalities as
/// equalities with PSD slacks, block-diagonal X and Y, and either the
/// initialization objective trace(X) + trace(Y) or the alternation objective
/// trace(X_old Y + X Y_old).
inline SdpStatus gramian_step(const LftRealization& lft, const Eigen::MatrixXd* x_old,
                              const Eigen::MatrixXd* y_old, const SdpOptions& sdp_opts,
                              Eigen::MatrixXd& x_out, Eigen::MatrixXd& y_out,
                              double& objective_out, std::string& message_out) {
  const int total = lft.total_size();
  SosProgram prog(0);
  std::vector<std::pair<int, SosMatrixVar>> x_vars, y_vars;
  int offset = 0;
  for (std::size_t i = 0; i < lft.block_sizes.size(); ++i) {
    const int s = lft.block_sizes[i];
    if (s > 0) {
      x_vars.emplace_back(offset,
                          prog.declare_sos_matrix("x-block-" + std::to_string(i), s, 0));
      y_vars.emplace_back(offset,
                          prog.declare_sos_matrix("y-block-" + std::to_string(i), s, 0));
    }
    offset += s;
  }
  auto xe = prog.lift(PolynomialMatrix::zero(total, total, 0));
  auto ye = prog.lift(PolynomialMatrix::zero(total, total, 0));
  for (const auto& [off, var] : x_vars) xe.set_block(off, off, prog.expr(var));
  for (const auto& [off, var] : y_vars) ye.set_block(off, off, prog.expr(var));

  auto abar = prog.lift(PolynomialMatrix::constant(lft.Abar, 0));
  auto ctc = prog.lift(PolynomialMatrix::constant(lft.Cbar.transpose() * lft.Cbar, 0));
  auto bbt = prog.lift(PolynomialMatrix::constant(lft.Bbar * lft.Bbar.transpose(), 0));
  auto obs_slack = prog.declare_sos_matrix("obs-slack", total, 0);
  auto ctrl_slack = prog.declare_sos_matrix("ctrl-slack", total, 0);

  auto axa = bitwise_symmetrized(abar.transpose() * xe * abar);
  auto aya = bitwise_symmetrized(abar * ye * abar.transpose());
  prog.assert_zero(axa - xe + ctc + prog.expr(obs_slack));
  prog.assert_zero(aya - ye + bbt + prog.expr(ctrl_slack));

  if (x_old != nullptr && y_old != nullptr) {
    auto xo = prog.lift(PolynomialMatrix::constant(*x_old, 0));
    auto yo = prog.lift(PolynomialMatrix::constant(*y_old, 0));
    prog.set_objective_min((xo * ye).trace() + (xe * yo).trace());
  } else {
    prog.set_objective_min(xe.trace() + ye.trace());
  }

  auto compiled = prog.compile();
  auto sol = solve(compiled.problem, sdp_opts);
  message_out = sol.message;
  if (sol.status != SdpStatus::Feasible) return sol.status;

  x_out = Eigen::MatrixXd::Zero(total, total);
  y_out = Eigen::MatrixXd::Zero(total, total);
  for (const auto& [off, var] : x_vars) {
    x_out.block(off, off, var.size, var.size) =
        prog.value_of(var, sol).evaluate(std::vector<double>{});
  }
  for (const auto& [off, var] : y_vars) {
    y_out.block(off, off, var.size, var.size) =
        prog.value_of(var, sol).evaluate(std::vector<double>{});
  }
  objective_out = sol.objective + compiled.objective_offset;
  return SdpStatus::Feasible;
}

}  // namespace detail

/// Alternating linearized-trace minimization over the structured Gramian
/// cone. The first solve (minimum-trace feasibility unless both initial
/// matrices are supplied) doubles as the feasibility check.
inline StructuredGramians solve_gramians(const LftRealization& lft,
                                         const GramianOptions& opts = {}) {
  lft.validate();
  if (!(opts.stop_tol > 0.0) || opts.max_alternations < 1) {
    throw std::invalid_argument("solve_gramians: bad options");
  }
  const int total = lft.total_size();
  Eigen::MatrixXd x_old, y_old;
  std::string message;

  if (opts.initial_x.has_value() != opts.initial_y.has_value()) {
    throw std::invalid_argument("solve_gramians: supply both initial matrices or neither");
  }
  if (opts.initial_x.has_value()) {
    if (opts.initial_x->rows() != total || opts.initial_x->cols() != total ||
        opts.initial_y->rows() != total || opts.initial_y->cols() != total) {
      throw std::invalid_argument("solve_gramians: initial matrix size mismatch");
    }
    x_old = *opts.initial_x;
    y_old = *opts.initial_y;
  } else {
    double obj = 0.0;
    const SdpStatus status =
        detail::gramian_step(lft, nullptr, nullptr, opts.sdp, x_old, y_old, obj, message);
    if (status == SdpStatus::Infeasible) {
      throw std::runtime_error("solve_gramians: no structured Gramians (system not LFT-stable)");
    }
    if (status != SdpStatus::Feasible) {
      throw std::runtime_error("solve_gramians: initialization solve failed (" + message + ")");
    }
  }

  StructuredGramians out;
  out.block_sizes = lft.block_sizes;
  out.X = x_old;
  out.Y = y_old;
  for (int k = 0; k < opts.max_alternations; ++k) {
    Eigen::MatrixXd x_new, y_new;
    double objective = 0.0;
    const SdpStatus status =
        detail::gramian_step(lft, &x_old, &y_old, opts.sdp, x_new, y_new, objective, message);
    if (status == SdpStatus::Infeasible) {
      throw std::runtime_error("solve_gramians: no structured Gramians (system not LFT-stable)");
    }
    if (status != SdpStatus::Feasible) {
      throw std::runtime_error("solve_gramians: alternation solve failed (" + message + ")");
    }
    out.objective_history.push_back(objective);
    out.alternations = k + 1;
    out.X = x_new;
    out.Y = y_new;
    const double change = (x_new - x_old).norm() + (y_new - y_old).norm();
    x_old = x_new;
    y_old = y_new;
    if (change <= opts.stop_tol) break;
  }
  return out;
}

/// Per-block contragredient balancing followed by truncation to the
/// requested sizes. Returns the reduced parameter-dependent system and the
/// a-priori gain bound: twice the sum of every dropped balanced singular
/// value (for fully dropped blocks, the square roots of the eigenvalues of
/// X_jj Y_jj).
inline std::pair<ParamStateSpace, double> balance_and_truncate(
    const LftRealization& lft, const StructuredGramians& grams, const std::vector<int>& keep) {
  lft.validate();
  const int total = lft.total_size();
  if (grams.X.rows() != total || grams.Y.rows() != total) {
    throw std::invalid_argument("balance_and_truncate: Gramian size mismatch");
  }
  if (keep.size() != lft.block_sizes.size()) {
    throw std::invalid_argument("balance_and_truncate: one retained size per block required");
  }
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i] < 0 || keep[i] > lft.block_sizes[i]) {
      throw std::invalid_argument("balance_and_truncate: retained size out of range for block " +
                                  std::to_string(i));
    }
  }

  Eigen::MatrixXd transform = Eigen::MatrixXd::Identity(total, total);
  double bound = 0.0;
  std::vector<int> selected;
  int offset = 0;
  for (std::size_t i = 0; i < lft.block_sizes.size(); ++i) {
    const int s = lft.block_sizes[i];
    if (s == 0) continue;
    const Eigen::MatrixXd xb = grams.X.block(offset, offset, s, s);
    const Eigen::MatrixXd yb = grams.Y.block(offset, offset, s, s);
    if (keep[i] > 0) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> xev(xb), yev(yb);
      if (xev.eigenvalues().minCoeff() < 1e-10 || yev.eigenvalues().minCoeff() < 1e-10) {
        throw std::runtime_error("balance_and_truncate: singular Gramian block " +
                                 std::to_string(i));
      }
      Eigen::MatrixXd lower = Eigen::LLT<Eigen::MatrixXd>(yb).matrixL();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lower.transpose() * xb * lower);
      // Ascending eigenvalues; balanced directions want the largest first.
      Eigen::VectorXd sigma2 = es.eigenvalues().reverse();
      Eigen::MatrixXd u = es.eigenvectors().rowwise().reverse();
      Eigen::VectorXd sigma = sigma2.cwiseMax(0.0).cwiseSqrt();
      transform.block(offset, offset, s, s) =
          lower * u * sigma.cwiseSqrt().cwiseInverse().asDiagonal();
      for (int k = keep[i]; k < s; ++k) bound += sigma(k);
      for (int k = 0; k < keep[i]; ++k) selected.push_back(offset + k);
    } else {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> xev(xb);
      Eigen::MatrixXd xhalf = xev.operatorSqrt();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(xhalf * yb * xhalf);
      bound += es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    }
    offset += s;
  }
  bound *= 2.0;

  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(transform);
  const Eigen::MatrixXd abal = lu.solve(lft.Abar * transform);
  const Eigen::MatrixXd bbal = lu.solve(lft.Bbar);
  const Eigen::MatrixXd cbal = lft.Cbar * transform;

  const int kept_total = static_cast<int>(selected.size());
  Eigen::MatrixXd ar(kept_total, kept_total), br(kept_total, lft.Bbar.cols()),
      cr(lft.Cbar.rows(), kept_total);
  for (int i = 0; i < kept_total; ++i) {
    for (int j = 0; j < kept_total; ++j) ar(i, j) = abal(selected[i], selected[j]);
    br.row(i) = bbal.row(selected[i]);
    cr.col(i) = cbal.col(selected[i]);
  }

  // Channels are dropped from the tail of the parameter list; a kept channel
  // after a dropped one still needs the dropped parameter's index, so the
  // reduced parameter count is the last kept channel.
  int reduced_p = 0;
  for (std::size_t i = 1; i < keep.size(); ++i) {
    if (keep[i] > 0) reduced_p = static_cast<int>(i);
  }

  const int nr = keep[0];
  ParamStateSpace reduced;
  reduced.domain = TimeDomain::Discrete;
  reduced.A = PolynomialMatrix::zero(nr, nr, reduced_p);
  reduced.A.add_term(Monomial::one(reduced_p), ar.topLeftCorner(nr, nr));
  int channel_offset = nr;
  for (std::size_t i = 1; i < keep.size(); ++i) {
    const int r = keep[i];
    if (r == 0) continue;
    const Eigen::MatrixXd u = ar.block(0, channel_offset, nr, r);
    const Eigen::MatrixXd a = ar.block(channel_offset, 0, r, nr);
    reduced.A.add_term(Monomial::variable(static_cast<int>(i) - 1, reduced_p), u * a);
    channel_offset += r;
  }
  reduced.B = PolynomialMatrix::constant(br.topRows(nr), reduced_p);
  reduced.C = PolynomialMatrix::constant(cr.leftCols(nr), reduced_p);
  reduced.D = PolynomialMatrix::constant(lft.D, reduced_p);
  reduced.params = project_domain(lft.params, reduced_p);
  reduced.validate();
  return {std::move(reduced), bound};
}

}  // namespace pars
