#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <random>
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

enum class InitStrategy { TruncatedNominal, Random };

/// Solver tolerances for the alternation subproblems. The margin objective
/// is flat near its optimum, so the duality-gap target is looser than the
/// solver's own default, and the feasibility target leaves room for the
/// storage-sized coefficients these subproblems carry. Certified margins
/// dwarf the equality slack this admits, and a slightly inexact model step
/// only risks the next storage step rejecting it.
inline SdpOptions reduction_sdp_defaults() {
  SdpOptions opts;
  opts.feas_tol = 1e-7;
  opts.gap_tol = 1e-6;
  return opts;
}

/// Bisection range for the error level. A nonpositive tol selects the
/// default of one percent of the initial upper end.
struct GammaSearch {
  double lo = 0.0;
  double hi = 1.0;
  double tol = 0.0;
};

struct ReductionConfig {
  int n_prime = 1;
  int p_prime = 0;

  /// Degree caps for the reduced model's coefficient polynomials.
  int d_A = 1;
  int d_B = 0;
  int d_C = 0;
  int d_D = 0;

  /// Degrees of the storage function and the domain multipliers. An empty
  /// d_Q list gives every constraint multiplier degree zero.
  int d_P = 2;
  int d_Q0 = 2;
  std::vector<int> d_Q;

  /// Outer-loop stop threshold on the grid spectral norm of the storage
  /// function update.
  double delta = 1e-4;

  /// Strict-negativity shift added to the certified matrix inequality.
  double epsilon = 1e-6;

  /// Weight of the storage Gram trace added to the storage-step objective.
  /// The margin maximum usually sits on a flat face; the anchor selects a
  /// minimal-norm point on it so the alternation settles instead of
  /// drifting. The margin it reports is biased down by at most the weight
  /// times the Gram trace, which only makes feasibility claims conservative.
  double anchor_weight = 1e-5;

  /// Exactly one of these drives reduce(); the step and run entry points
  /// take the level as an explicit argument instead.
  std::optional<double> fixed_gamma;
  std::optional<GammaSearch> gamma_search;

  int max_outer_iters = 40;
  int max_alternations = 30;
  int grid_per_dim = 21;

  InitStrategy init = InitStrategy::TruncatedNominal;
  unsigned seed = 0;

  /// Overrides the initialization strategy when present.
  std::optional<ParamStateSpace> initial_model;

  SdpOptions sdp = reduction_sdp_defaults();

  int multiplier_degree(std::size_t l) const {
    return d_Q.empty() ? 0 : d_Q.at(l);
  }

  void validate(const ParamStateSpace& full) const {
    full.validate();
    if (n_prime < 1) {
      throw std::invalid_argument("ReductionConfig: n_prime must be at least 1");
    }
    if (p_prime < 0 || p_prime > full.params.p) {
      throw std::invalid_argument("ReductionConfig: p_prime out of range");
    }
    if (d_A < 0 || d_B < 0 || d_C < 0 || d_D < 0 || d_P < 0 || d_Q0 < 0) {
      throw std::invalid_argument("ReductionConfig: negative degree");
    }
    for (int d : d_Q) {
      if (d < 0) throw std::invalid_argument("ReductionConfig: negative degree");
    }
    if (!d_Q.empty() && d_Q.size() != full.params.constraints.size()) {
      throw std::invalid_argument("ReductionConfig: d_Q must list one degree per domain constraint");
    }
    if (!(delta > 0.0)) {
      throw std::invalid_argument("ReductionConfig: delta must be positive");
    }
    if (epsilon < 0.0) {
      throw std::invalid_argument("ReductionConfig: epsilon must be nonnegative");
    }
    if (anchor_weight < 0.0) {
      throw std::invalid_argument("ReductionConfig: anchor_weight must be nonnegative");
    }
    if (fixed_gamma && gamma_search) {
      throw std::invalid_argument("ReductionConfig: fixed_gamma and gamma_search are mutually exclusive");
    }
    if (fixed_gamma && !(*fixed_gamma > 0.0)) {
      throw std::invalid_argument("ReductionConfig: fixed_gamma must be positive");
    }
    if (gamma_search && (gamma_search->lo < 0.0 || !(gamma_search->hi > gamma_search->lo))) {
      throw std::invalid_argument("ReductionConfig: gamma search range must satisfy 0 <= lo < hi");
    }
    if (max_outer_iters < 1 || max_alternations < 1) {
      throw std::invalid_argument("ReductionConfig: iteration caps must be positive");
    }
    if (grid_per_dim < 1) {
      throw std::invalid_argument("ReductionConfig: grid_per_dim must be positive");
    }
    if (initial_model) {
      initial_model->validate();
      if (initial_model->domain != full.domain) {
        throw std::invalid_argument("ReductionConfig: initial model time domain mismatch");
      }
      if (initial_model->n() != n_prime || initial_model->m() != full.m() ||
          initial_model->o() != full.o()) {
        throw std::invalid_argument("ReductionConfig: initial model dimensions mismatch");
      }
      if (initial_model->params.p != p_prime) {
        throw std::invalid_argument("ReductionConfig: initial model parameter count mismatch");
      }
    }
  }
};

/// Solver verdict for one convex subproblem. The subproblem maximizes a
/// uniform diagonal slack, so the certified inequality holds exactly when
/// the solve is feasible with nonnegative margin.
struct StepOutcome {
  SdpStatus status = SdpStatus::Indeterminate;
  bool feasible = false;
  double margin = 0.0;
  double primal_residual = std::numeric_limits<double>::infinity();
  double dual_residual = std::numeric_limits<double>::infinity();
  std::string message;
};

struct StepPResult {
  StepOutcome outcome;
  PolynomialMatrix P = PolynomialMatrix::zero(0, 0, 0);
  std::vector<PolynomialMatrix> multipliers;
};

struct StepModelResult {
  StepOutcome outcome;
  ParamStateSpace model;
  std::vector<PolynomialMatrix> multipliers;
};

/// One subproblem solve in the alternation. p_change is the grid spectral
/// norm of the storage update on storage steps and -1 on model steps.
struct StepLog {
  int iteration = 0;
  std::string subproblem;
  SdpStatus status = SdpStatus::Indeterminate;
  double margin = 0.0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double p_change = -1.0;
};

struct GammaProbe {
  double gamma = 0.0;
  bool feasible = false;
};

struct ReductionResult {
  ParamStateSpace reduced;

  /// Storage function certifying the error level, with the multipliers of
  /// the final model solve (constant term first, then one per constraint).
  PolynomialMatrix certificate = PolynomialMatrix::zero(0, 0, 0);
  std::vector<PolynomialMatrix> multipliers;

  double certified_gamma = 0.0;
  double sampled_error = 0.0;
  bool converged = false;
  std::vector<StepLog> iteration_log;

  /// Levels probed by bisection, in probe order; empty for fixed-level runs.
  std::vector<GammaProbe> probes;
};

/// Negative-side blocks of the continuous-time level test
///   [ At'P + P At    P Bt    Ct' ]
///   [ Bt'P           -g I    Dt' ]
///   [ Ct             Dt      -g I ]
/// This symmetric split of the level is a constant congruence and scaling
/// away from the squared-level form, so the certified level is unchanged
/// while the data stays balanced. At most one of the system expressions and
/// the storage expression may carry decision variables.
inline LinPolyMatrix build_continuous_blocks(const SosProgram& prog, const LinPolyMatrix& at,
                                             const LinPolyMatrix& bt, const LinPolyMatrix& ct,
                                             const LinPolyMatrix& dt, const LinPolyMatrix& storage,
                                             double gamma) {
  if (!(gamma > 0.0)) {
    throw std::invalid_argument("build_continuous_blocks: gamma must be positive");
  }
  const int na = at.rows();
  const int m = bt.cols();
  const int o = ct.rows();
  if (at.cols() != na || bt.rows() != na || ct.cols() != na || dt.rows() != o ||
      dt.cols() != m || storage.rows() != na || storage.cols() != na) {
    throw std::invalid_argument("build_continuous_blocks: block shape mismatch");
  }
  const LinPolyMatrix lyap = storage * at;
  const LinPolyMatrix input = bt.transpose() * storage;
  LinPolyMatrix out = prog.lift(PolynomialMatrix::zero(na + m + o, na + m + o, at.num_vars()));
  out.set_block(0, 0, lyap.transpose() + lyap);
  out.set_block(na, 0, input);
  out.set_block(0, na, input.transpose());
  out.set_block(na, na, prog.identity(m).scaled(-gamma));
  out.set_block(na + m, 0, ct);
  out.set_block(0, na + m, ct.transpose());
  out.set_block(na + m, na, dt);
  out.set_block(na, na + m, dt.transpose());
  out.set_block(na + m, na + m, prog.identity(o).scaled(-gamma));
  return out;
}

/// Positive-side blocks of the discrete-time level test
///   [ P          At P       sqrt(g) Bt   0          ]
///   [ P At'      P          0            P Ct'/sqrt(g) ]
///   [ sqrt(g) Bt'  0        g I          Dt'        ]
///   [ 0          Ct P/sqrt(g)  Dt        g I        ]
/// The square-root split of the level across the input and output rows is a
/// constant congruence of the squared-level form, so the certified level is
/// unchanged while the data stays balanced.
inline LinPolyMatrix build_discrete_blocks(const SosProgram& prog, const LinPolyMatrix& at,
                                           const LinPolyMatrix& bt, const LinPolyMatrix& ct,
                                           const LinPolyMatrix& dt, const LinPolyMatrix& storage,
                                           double gamma) {
  if (!(gamma > 0.0)) {
    throw std::invalid_argument("build_discrete_blocks: gamma must be positive");
  }
  const int na = at.rows();
  const int m = bt.cols();
  const int o = ct.rows();
  if (at.cols() != na || bt.rows() != na || ct.cols() != na || dt.rows() != o ||
      dt.cols() != m || storage.rows() != na || storage.cols() != na) {
    throw std::invalid_argument("build_discrete_blocks: block shape mismatch");
  }
  const double root = std::sqrt(gamma);
  const LinPolyMatrix btn = bt.scaled(root);
  const LinPolyMatrix prop = at * storage;
  const LinPolyMatrix outmap = storage * ct.transpose().scaled(1.0 / root);
  const LinPolyMatrix feed = dt.transpose();
  LinPolyMatrix out =
      prog.lift(PolynomialMatrix::zero(2 * na + m + o, 2 * na + m + o, at.num_vars()));
  out.set_block(0, 0, storage);
  out.set_block(na, na, storage);
  out.set_block(0, na, prop);
  out.set_block(na, 0, prop.transpose());
  out.set_block(0, 2 * na, btn);
  out.set_block(2 * na, 0, btn.transpose());
  out.set_block(2 * na, 2 * na, prog.identity(m).scaled(gamma));
  out.set_block(na, 2 * na + m, outmap);
  out.set_block(2 * na + m, na, outmap.transpose());
  out.set_block(2 * na, 2 * na + m, feed);
  out.set_block(2 * na + m, 2 * na, feed.transpose());
  out.set_block(2 * na + m, 2 * na + m, prog.identity(o).scaled(gamma));
  return out;
}

inline LinPolyMatrix build_continuous_blocks(const SosProgram& prog, const ParamStateSpace& full,
                                             const ParamStateSpace& model, int p_prime,
                                             const LinPolyMatrix& storage, double gamma) {
  const ParamStateSpace err = augment(full, model, p_prime);
  return build_continuous_blocks(prog, prog.lift(err.A), prog.lift(err.B), prog.lift(err.C),
                                 prog.lift(err.D), storage, gamma);
}

inline LinPolyMatrix build_discrete_blocks(const SosProgram& prog, const ParamStateSpace& full,
                                           const ParamStateSpace& model, int p_prime,
                                           const LinPolyMatrix& storage, double gamma) {
  const ParamStateSpace err = augment(full, model, p_prime);
  return build_discrete_blocks(prog, prog.lift(err.A), prog.lift(err.B), prog.lift(err.C),
                               prog.lift(err.D), storage, gamma);
}

namespace detail {

/// Certificate variables of one subproblem: the diagonal slack that is
/// maximized, the constant multiplier, and one multiplier per constraint.
struct CertificateVars {
  FreePolyMatrixVar margin;
  SosMatrixVar q0;
  std::vector<SosMatrixVar> q;
};

/// Poses negative_part + epsilon I + t I + Q0 + sum_l Ql ql = 0 with free
/// scalar t and SOS multipliers, and sets the objective to maximize t minus
/// the weighted anchor. The identity corner blocks of the assembled
/// expression bound t above, so the maximization is never unbounded.
///
/// The anchor must be norm-like on the subproblem's decision variables
/// (Gram traces of PSD variables). Multiplier traces are affine in any free
/// variables through the equality, so they only qualify when every other
/// variable in the subproblem is PSD as well.
inline CertificateVars attach_certificate(SosProgram& prog, const LinPolyMatrix& negative_part,
                                          const SemialgebraicSet& dom, const ReductionConfig& cfg,
                                          double anchor_weight, const LinForm& anchor) {
  if (!cfg.d_Q.empty() && cfg.d_Q.size() != dom.constraints.size()) {
    throw std::invalid_argument("attach_certificate: d_Q must list one degree per domain constraint");
  }
  if (cfg.epsilon < 0.0) {
    throw std::invalid_argument("attach_certificate: epsilon must be nonnegative");
  }
  const int side = negative_part.rows();
  // The multipliers must reach every monomial degree present in the blocks.
  // Otherwise the top-degree rows of the equality pin the step's free
  // variables to an exact linear system, and any noise in the data carried
  // over from the previous step makes that system inconsistent or drags the
  // margin far below what the data supports. Raising the constant multiplier
  // restores coverage and never weakens the certificate.
  int needed = 0;
  for (const auto& [mono, forms] : negative_part.terms()) {
    if (mono.degree() <= needed) continue;
    for (const auto& f : forms) {
      if (!f.is_zero()) {
        needed = mono.degree();
        break;
      }
    }
  }
  int covered = cfg.d_Q0;
  for (std::size_t l = 0; l < dom.constraints.size(); ++l) {
    covered = std::max(covered, cfg.multiplier_degree(l) + dom.constraints[l].degree());
  }
  const int d_q0 = covered >= needed ? cfg.d_Q0 : needed;
  CertificateVars vars{prog.declare_free_poly_matrix("margin", 1, 1, 0),
                       prog.declare_sos_matrix("multiplier-0", side, d_q0),
                       {}};
  const LinPolyMatrix te = prog.expr(vars.margin);
  LinPolyMatrix tdiag = prog.lift(PolynomialMatrix::zero(side, side, dom.p));
  for (int i = 0; i < side; ++i) tdiag.set_block(i, i, te);
  LinPolyMatrix total =
      negative_part + prog.identity(side).scaled(cfg.epsilon) + tdiag + prog.expr(vars.q0);
  for (std::size_t l = 0; l < dom.constraints.size(); ++l) {
    vars.q.push_back(prog.declare_sos_matrix("multiplier-" + std::to_string(l + 1), side,
                                             cfg.multiplier_degree(l)));
    total = total + prog.expr(vars.q.back()).scaled_by_poly(dom.constraints[l]);
  }
  prog.assert_zero(total);
  prog.set_objective_min(te.trace().scaled(-1.0) + anchor.scaled(anchor_weight));
  return vars;
}

inline StepOutcome outcome_of(const SosProgram& prog, const CertificateVars& cert,
                              const SdpSolution& sol, int p) {
  StepOutcome out;
  out.status = sol.status;
  out.primal_residual = sol.primal_residual;
  out.dual_residual = sol.dual_residual;
  out.message = sol.message;
  if (sol.status == SdpStatus::Feasible) {
    out.margin = prog.value_of(cert.margin, sol)
                     .evaluate(std::vector<double>(static_cast<std::size_t>(p), 0.0))(0, 0);
    out.feasible = out.margin >= 0.0;
  }
  return out;
}

inline std::vector<PolynomialMatrix> extract_multipliers(const SosProgram& prog,
                                                         const CertificateVars& cert,
                                                         const SdpSolution& sol) {
  std::vector<PolynomialMatrix> out;
  out.push_back(prog.value_of(cert.q0, sol));
  for (const auto& qv : cert.q) out.push_back(prog.value_of(qv, sol));
  return out;
}

/// Rebuilds a numerically symmetric matrix so every coefficient is
/// bitwise-equal to its transpose; equality assertions on expressions built
/// from it then collapse to the upper triangle.
inline PolynomialMatrix exact_symmetrized(const PolynomialMatrix& mat) {
  PolynomialMatrix out = PolynomialMatrix::zero(mat.rows(), mat.cols(), mat.num_vars());
  for (const auto& [m, c] : mat.terms()) {
    out.add_term(m, 0.5 * (c + c.transpose()).eval());
  }
  out.prune();
  out.mark_symmetric();
  return out;
}

inline double grid_spectral_change(const PolynomialMatrix& current,
                                   const PolynomialMatrix& previous,
                                   const SemialgebraicSet& dom, int per_dim) {
  double worst = 0.0;
  for (const auto& alpha : dom.sample_grid(per_dim)) {
    if (!dom.admits(alpha)) continue;
    const Eigen::MatrixXd diff = current.evaluate(alpha) - previous.evaluate(alpha);
    const Eigen::MatrixXd sym = 0.5 * (diff + diff.transpose());
    const Eigen::VectorXd ev =
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(sym, Eigen::EigenvaluesOnly).eigenvalues();
    if (ev.size() > 0) {
      worst = std::max(worst, std::max(std::abs(ev.minCoeff()), std::abs(ev.maxCoeff())));
    }
  }
  return worst;
}

inline Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (int i = 0; i < a.rows(); ++i) {
    for (int j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

/// Solves a X + X a' + rhs = 0 (continuous) or a X a' - X + rhs = 0
/// (discrete) by linearization over the vectorized unknown.
inline Eigen::MatrixXd dense_lyapunov(const Eigen::MatrixXd& a, const Eigen::MatrixXd& rhs,
                                      TimeDomain domain) {
  const int n = static_cast<int>(a.rows());
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd lhs =
      domain == TimeDomain::Continuous
          ? (kron(eye, a) + kron(a, eye)).eval()
          : (kron(a, a) - Eigen::MatrixXd::Identity(n * n, n * n)).eval();
  const Eigen::Map<const Eigen::VectorXd> vec_rhs(rhs.data(), n * n);
  const Eigen::VectorXd vec_x = lhs.partialPivLu().solve(-vec_rhs);
  Eigen::MatrixXd x = Eigen::Map<const Eigen::MatrixXd>(vec_x.data(), n, n);
  x = 0.5 * (x + x.transpose()).eval();
  Eigen::MatrixXd residual;
  if (domain == TimeDomain::Continuous) {
    residual = a * x + x * a.transpose() + rhs;
  } else {
    residual = a * x * a.transpose() - x + rhs;
  }
  if (residual.cwiseAbs().maxCoeff() > 1e-6 * (1.0 + rhs.norm() + x.norm())) {
    throw std::runtime_error("dense_lyapunov: no unique solution (marginally stable dynamics)");
  }
  return x;
}

struct TruncationBasis {
  Eigen::MatrixXd v, w;
};

/// Contragredient balancing of the nominal Gramians followed by truncation
/// to the dominant states: v spans the kept subspace, w projects onto it.
inline TruncationBasis nominal_truncation_basis(const FixedStateSpace& nominal, int keep) {
  const Eigen::MatrixXd gram_obs = dense_lyapunov(
      nominal.A.transpose(), (nominal.C.transpose() * nominal.C).eval(), nominal.domain);
  const Eigen::MatrixXd gram_ctrl =
      dense_lyapunov(nominal.A, (nominal.B * nominal.B.transpose()).eval(), nominal.domain);
  const Eigen::LLT<Eigen::MatrixXd> llt(gram_ctrl);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error(
        "nominal_truncation_basis: controllability Gramian is not positive definite; supply an "
        "initial model");
  }
  const Eigen::MatrixXd l = llt.matrixL();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(l.transpose() * gram_obs * l);
  const Eigen::VectorXd ev = es.eigenvalues().reverse();
  const Eigen::MatrixXd u = es.eigenvectors().rowwise().reverse();
  if (!(ev.minCoeff() > 1e-12 * std::max(1.0, ev.maxCoeff()))) {
    throw std::runtime_error(
        "nominal_truncation_basis: balanced spectrum is numerically singular; supply an initial "
        "model");
  }
  const Eigen::MatrixXd transform =
      l * u * ev.cwiseSqrt().cwiseSqrt().cwiseInverse().asDiagonal();
  TruncationBasis out;
  out.v = transform.leftCols(keep);
  out.w = transform.inverse().topRows(keep);
  return out;
}

/// Freezes the trailing parameters at the box center and drops monomials
/// above the degree cap. The result lives over the leading p_prime
/// parameters only.
inline PolynomialMatrix substitute_tail(const PolynomialMatrix& mat,
                                        const std::vector<double>& center, int p_prime,
                                        int max_degree) {
  PolynomialMatrix out = PolynomialMatrix::zero(mat.rows(), mat.cols(), p_prime);
  for (const auto& [m, c] : mat.terms()) {
    double scale = 1.0;
    for (int i = p_prime; i < m.num_vars(); ++i) {
      scale *= std::pow(center[static_cast<std::size_t>(i)], m.exponent(i));
    }
    const auto& exps = m.exponents();
    Monomial head(std::vector<int>(exps.begin(), exps.begin() + p_prime));
    if (head.degree() > max_degree) continue;
    out.add_term(head, scale * c);
  }
  out.prune();
  return out;
}

inline ParamStateSpace truncated_nominal_init(const ParamStateSpace& full,
                                              const ReductionConfig& cfg) {
  const int n = full.n();
  const int p = full.params.p;
  std::vector<double> center(static_cast<std::size_t>(p));
  for (int i = 0; i < p; ++i) {
    center[static_cast<std::size_t>(i)] =
        0.5 * (full.params.box[static_cast<std::size_t>(i)].first +
               full.params.box[static_cast<std::size_t>(i)].second);
  }
  PolynomialMatrix a = substitute_tail(full.A, center, cfg.p_prime, cfg.d_A);
  PolynomialMatrix b = substitute_tail(full.B, center, cfg.p_prime, cfg.d_B);
  PolynomialMatrix c = substitute_tail(full.C, center, cfg.p_prime, cfg.d_C);
  PolynomialMatrix d = substitute_tail(full.D, center, cfg.p_prime, cfg.d_D);
  if (cfg.n_prime < n) {
    const FixedStateSpace nominal = full.at(center);
    if (!(stability_margin(nominal) > 0.0)) {
      throw std::runtime_error(
          "truncated_nominal_init: system unstable at the box center; supply an initial model");
    }
    const TruncationBasis basis = nominal_truncation_basis(nominal, cfg.n_prime);
    PolynomialMatrix ar = PolynomialMatrix::zero(cfg.n_prime, cfg.n_prime, cfg.p_prime);
    for (const auto& [m, coeff] : a.terms()) ar.add_term(m, basis.w * coeff * basis.v);
    PolynomialMatrix br = PolynomialMatrix::zero(cfg.n_prime, full.m(), cfg.p_prime);
    for (const auto& [m, coeff] : b.terms()) br.add_term(m, basis.w * coeff);
    PolynomialMatrix cr = PolynomialMatrix::zero(full.o(), cfg.n_prime, cfg.p_prime);
    for (const auto& [m, coeff] : c.terms()) cr.add_term(m, coeff * basis.v);
    a = std::move(ar);
    b = std::move(br);
    c = std::move(cr);
  } else if (cfg.n_prime > n) {
    PolynomialMatrix ap = PolynomialMatrix::zero(cfg.n_prime, cfg.n_prime, cfg.p_prime);
    ap.set_block(0, 0, a);
    const double pole = full.domain == TimeDomain::Continuous ? -1.0 : 0.0;
    for (int i = n; i < cfg.n_prime; ++i) {
      ap.set_entry(i, i, Polynomial::constant(cfg.p_prime, pole));
    }
    PolynomialMatrix bp = PolynomialMatrix::zero(cfg.n_prime, full.m(), cfg.p_prime);
    bp.set_block(0, 0, b);
    PolynomialMatrix cp = PolynomialMatrix::zero(full.o(), cfg.n_prime, cfg.p_prime);
    cp.set_block(0, 0, c);
    a = std::move(ap);
    b = std::move(bp);
    c = std::move(cp);
  }
  ParamStateSpace model;
  model.domain = full.domain;
  model.A = std::move(a);
  model.B = std::move(b);
  model.C = std::move(c);
  model.D = std::move(d);
  model.params = project_domain(full.params, cfg.p_prime);
  model.validate();
  return model;
}

/// Constant random model with the dynamics rescaled to a safe stability
/// margin; deterministic for a fixed seed.
inline ParamStateSpace random_init(const ParamStateSpace& full, const ReductionConfig& cfg) {
  std::mt19937 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const auto fill = [&](int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) m(i, j) = unit(rng);
    }
    return m;
  };
  Eigen::MatrixXd a = fill(cfg.n_prime, cfg.n_prime);
  const Eigen::VectorXcd ev = a.eigenvalues();
  if (full.domain == TimeDomain::Continuous) {
    a -= (ev.real().maxCoeff() + 0.5) * Eigen::MatrixXd::Identity(cfg.n_prime, cfg.n_prime);
  } else {
    const double rho = ev.cwiseAbs().maxCoeff();
    if (rho > 1e-12) {
      a *= 0.5 / rho;
    } else {
      a.setZero();
    }
  }
  ParamStateSpace model;
  model.domain = full.domain;
  model.A = PolynomialMatrix::constant(a, cfg.p_prime);
  model.B = PolynomialMatrix::constant(fill(cfg.n_prime, full.m()), cfg.p_prime);
  model.C = PolynomialMatrix::constant(fill(full.o(), cfg.n_prime), cfg.p_prime);
  model.D = PolynomialMatrix::constant(Eigen::MatrixXd::Zero(full.o(), full.m()), cfg.p_prime);
  model.params = project_domain(full.params, cfg.p_prime);
  model.validate();
  return model;
}

}  // namespace detail

/// Solves for a storage function certifying the level for a fixed reduced
/// model. Feasible outcomes carry the storage polynomial and multipliers.
inline StepPResult step_P(const ParamStateSpace& full, const ParamStateSpace& model, double gamma,
                          const ReductionConfig& cfg) {
  cfg.validate(full);
  if (!(gamma > 0.0)) throw std::invalid_argument("step_P: gamma must be positive");
  const ParamStateSpace err = augment(full, model, cfg.p_prime);
  SosProgram prog(full.params.p);
  const SosMatrixVar storage = prog.declare_sos_matrix("storage", err.n(), cfg.d_P);
  const LinPolyMatrix pe = prog.expr(storage);
  const LinPolyMatrix blocks =
      full.domain == TimeDomain::Continuous
          ? build_continuous_blocks(prog, prog.lift(err.A), prog.lift(err.B), prog.lift(err.C),
                                    prog.lift(err.D), pe, gamma)
          : build_discrete_blocks(prog, prog.lift(err.A), prog.lift(err.B), prog.lift(err.C),
                                  prog.lift(err.D), pe, gamma)
                .scaled(-1.0);
  const auto cert = detail::attach_certificate(prog, blocks, full.params, cfg,
                                               cfg.anchor_weight, prog.gram_trace(storage));
  const auto compiled = prog.compile();
  const SdpSolution sol = solve(compiled.problem, cfg.sdp);
  StepPResult out;
  out.outcome = detail::outcome_of(prog, cert, sol, full.params.p);
  if (sol.status == SdpStatus::Feasible) {
    out.P = prog.value_of(storage, sol);
    out.multipliers = detail::extract_multipliers(prog, cert, sol);
  }
  return out;
}

/// Solves for reduced-model coefficients certifying the level for a fixed
/// storage function. The model coefficients live over the leading p_prime
/// parameters with the configured degree caps.
inline StepModelResult step_model(const ParamStateSpace& full, const PolynomialMatrix& storage,
                                  double gamma, const ReductionConfig& cfg) {
  cfg.validate(full);
  if (!(gamma > 0.0)) throw std::invalid_argument("step_model: gamma must be positive");
  const int n = full.n();
  const int m = full.m();
  const int o = full.o();
  const int p = full.params.p;
  const int na = n + cfg.n_prime;
  if (storage.rows() != na || storage.cols() != na) {
    throw std::invalid_argument("step_model: storage size must match the joint state dimension");
  }
  if (storage.num_vars() != p) {
    throw std::invalid_argument("step_model: storage parameter count mismatch");
  }
  SosProgram prog(p);
  const FreePolyMatrixVar av =
      prog.declare_free_poly_matrix("reduced-A", cfg.n_prime, cfg.n_prime, cfg.d_A, cfg.p_prime);
  const FreePolyMatrixVar bv =
      prog.declare_free_poly_matrix("reduced-B", cfg.n_prime, m, cfg.d_B, cfg.p_prime);
  const FreePolyMatrixVar cv =
      prog.declare_free_poly_matrix("reduced-C", o, cfg.n_prime, cfg.d_C, cfg.p_prime);
  const FreePolyMatrixVar dv =
      prog.declare_free_poly_matrix("reduced-D", o, m, cfg.d_D, cfg.p_prime);
  LinPolyMatrix at = prog.lift(PolynomialMatrix::zero(na, na, p));
  at.set_block(0, 0, prog.lift(full.A));
  at.set_block(n, n, prog.expr(av));
  LinPolyMatrix bt = prog.lift(PolynomialMatrix::zero(na, m, p));
  bt.set_block(0, 0, prog.lift(full.B));
  bt.set_block(n, 0, prog.expr(bv));
  LinPolyMatrix ct = prog.lift(PolynomialMatrix::zero(o, na, p));
  ct.set_block(0, 0, prog.lift(full.C));
  ct.set_block(0, n, prog.expr(cv).scaled(-1.0));
  const LinPolyMatrix dt = prog.lift(full.D) - prog.expr(dv);
  const LinPolyMatrix pe = prog.lift(detail::exact_symmetrized(storage));
  const LinPolyMatrix blocks =
      full.domain == TimeDomain::Continuous
          ? build_continuous_blocks(prog, at, bt, ct, dt, pe, gamma)
          : build_discrete_blocks(prog, at, bt, ct, dt, pe, gamma).scaled(-1.0);
  const auto cert = detail::attach_certificate(prog, blocks, full.params, cfg, 0.0, LinForm());
  const auto compiled = prog.compile();
  const SdpSolution sol = solve(compiled.problem, cfg.sdp);
  StepModelResult out;
  out.outcome = detail::outcome_of(prog, cert, sol, p);
  if (sol.status == SdpStatus::Feasible) {
    out.model.domain = full.domain;
    out.model.A = prog.value_of(av, sol).restricted(cfg.p_prime);
    out.model.B = prog.value_of(bv, sol).restricted(cfg.p_prime);
    out.model.C = prog.value_of(cv, sol).restricted(cfg.p_prime);
    out.model.D = prog.value_of(dv, sol).restricted(cfg.p_prime);
    out.model.params = project_domain(full.params, cfg.p_prime);
    out.model.validate();
    out.multipliers = detail::extract_multipliers(prog, cert, sol);
  }
  return out;
}

/// Alternates the storage and model subproblems at a fixed level until the
/// storage update stalls. Returns the last certified pair, or nothing when
/// no iterate is certified at this level.
inline std::optional<ReductionResult> run_procedure1(const ParamStateSpace& full,
                                                     const ReductionConfig& cfg, double gamma) {
  cfg.validate(full);
  if (!(gamma > 0.0)) throw std::invalid_argument("run_procedure1: gamma must be positive");
  int admissible = 0;
  for (const auto& alpha : full.params.sample_grid(cfg.grid_per_dim)) {
    if (!full.params.admits(alpha)) continue;
    ++admissible;
    if (!(stability_margin(full.at(alpha)) > 0.0)) {
      throw std::domain_error("run_procedure1: full model is unstable on the sampled domain");
    }
  }
  if (admissible == 0) {
    throw std::domain_error("run_procedure1: no admissible grid points in the parameter domain");
  }
  ParamStateSpace model =
      cfg.initial_model ? *cfg.initial_model
                        : (cfg.init == InitStrategy::TruncatedNominal
                               ? detail::truncated_nominal_init(full, cfg)
                               : detail::random_init(full, cfg));
  ReductionResult out;
  out.certified_gamma = gamma;
  PolynomialMatrix p_old =
      PolynomialMatrix::zero(full.n() + model.n(), full.n() + model.n(), full.params.p);
  bool certified = false;
  for (int iteration = 1; iteration <= cfg.max_alternations; ++iteration) {
    const StepPResult sp = step_P(full, model, gamma, cfg);
    StepLog log_p;
    log_p.iteration = iteration;
    log_p.subproblem = "P";
    log_p.status = sp.outcome.status;
    log_p.margin = sp.outcome.margin;
    log_p.primal_residual = sp.outcome.primal_residual;
    log_p.dual_residual = sp.outcome.dual_residual;
    if (sp.outcome.feasible) {
      log_p.p_change = detail::grid_spectral_change(sp.P, p_old, full.params, cfg.grid_per_dim);
    }
    out.iteration_log.push_back(log_p);
    if (!sp.outcome.feasible) {
      if (!certified) return std::nullopt;
      out.converged = false;
      break;
    }
    out.certificate = sp.P;
    out.multipliers = sp.multipliers;
    out.reduced = model;
    certified = true;
    const StepModelResult sm = step_model(full, sp.P, gamma, cfg);
    StepLog log_m;
    log_m.iteration = iteration;
    log_m.subproblem = "model";
    log_m.status = sm.outcome.status;
    log_m.margin = sm.outcome.margin;
    log_m.primal_residual = sm.outcome.primal_residual;
    log_m.dual_residual = sm.outcome.dual_residual;
    out.iteration_log.push_back(log_m);
    if (!sm.outcome.feasible) {
      out.converged = false;
      break;
    }
    model = sm.model;
    out.reduced = model;
    out.multipliers = sm.multipliers;
    if (log_p.p_change <= cfg.delta) {
      out.converged = true;
      break;
    }
    p_old = sp.P;
  }
  if (!certified) return std::nullopt;
  out.sampled_error =
      sampled_sup_error(full, out.reduced, cfg.p_prime, cfg.grid_per_dim).value;
  return out;
}

/// Bisects the level over run_procedure1 feasibility. The upper end is
/// doubled until feasible before bisection starts; later probes warm-start
/// from the last certified model.
inline ReductionResult bisect_gamma(const ParamStateSpace& full, const ReductionConfig& cfg) {
  cfg.validate(full);
  if (!cfg.gamma_search) {
    throw std::invalid_argument("bisect_gamma: config lacks a gamma search range");
  }
  const GammaSearch gs = *cfg.gamma_search;
  const double tol = gs.tol > 0.0 ? gs.tol : 0.01 * gs.hi;
  double lo = gs.lo;
  double hi = gs.hi;
  ReductionConfig probe_cfg = cfg;
  probe_cfg.fixed_gamma.reset();
  probe_cfg.gamma_search.reset();
  std::vector<GammaProbe> probes;
  std::optional<ReductionResult> best;
  int doublings = 0;
  while (true) {
    best = run_procedure1(full, probe_cfg, hi);
    probes.push_back({hi, best.has_value()});
    if (best) break;
    lo = std::max(lo, hi);
    if (++doublings > 10) {
      throw std::runtime_error("bisect_gamma: no feasible gamma up to " + std::to_string(hi) +
                               "; increase the certificate degree d_P");
    }
    hi *= 2.0;
  }
  probe_cfg.initial_model = best->reduced;
  int outer = 0;
  while (hi - lo > tol && outer++ < cfg.max_outer_iters) {
    const double mid = 0.5 * (lo + hi);
    auto probe = run_procedure1(full, probe_cfg, mid);
    probes.push_back({mid, probe.has_value()});
    if (probe) {
      best = std::move(probe);
      hi = mid;
      probe_cfg.initial_model = best->reduced;
    } else {
      lo = mid;
    }
  }
  best->probes = std::move(probes);
  return *best;
}

/// Reduces at a fixed level or via bisection, per the configuration.
inline ReductionResult reduce(const ParamStateSpace& full, const ReductionConfig& cfg) {
  cfg.validate(full);
  if (cfg.fixed_gamma) {
    auto result = run_procedure1(full, cfg, *cfg.fixed_gamma);
    if (!result) {
      throw std::runtime_error("reduce: infeasible at gamma=" + std::to_string(*cfg.fixed_gamma) +
                               "; raise gamma or increase the certificate degree d_P");
    }
    return *result;
  }
  if (!cfg.gamma_search) {
    throw std::invalid_argument("reduce: set fixed_gamma or gamma_search");
  }
  return bisect_gamma(full, cfg);
}

}  // namespace pars
