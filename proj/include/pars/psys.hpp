#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "pars/polynomial.hpp"
#include "pars/polynomial_matrix.hpp"

namespace pars {

enum class TimeDomain { Continuous, Discrete };

inline const char* to_string(TimeDomain d) {
  return d == TimeDomain::Continuous ? "continuous" : "discrete";
}

/// Parameter region { alpha | q_l(alpha) >= 0 } together with a box that
/// bounds it, used to lay out deterministic sampling grids.
struct SemialgebraicSet {
  int p = 0;
  std::vector<Polynomial> constraints;
  std::vector<std::pair<double, double>> box;

  void validate() const {
    if (p < 0) throw std::invalid_argument("SemialgebraicSet: negative parameter count");
    if (static_cast<int>(box.size()) != p) {
      throw std::invalid_argument("SemialgebraicSet: box must give one interval per parameter");
    }
    for (const auto& [lo, hi] : box) {
      if (!(lo <= hi)) throw std::invalid_argument("SemialgebraicSet: empty box interval");
    }
    for (const auto& q : constraints) {
      if (q.num_vars() != p) {
        throw std::invalid_argument("SemialgebraicSet: constraint parameter count mismatch");
      }
    }
  }

  bool admits(const std::vector<double>& alpha, double tol = 1e-9) const {
    for (const auto& q : constraints) {
      if (q.evaluate(alpha) < -tol) return false;
    }
    return true;
  }

  /// All grid points of the box, `per_dim` per axis, first axis slowest.
  /// Membership is not filtered here; callers test admits() per point.
  std::vector<std::vector<double>> sample_grid(int per_dim) const {
    validate();
    if (per_dim < 1) throw std::invalid_argument("SemialgebraicSet: grid needs >= 1 point");
    std::vector<std::vector<double>> axes(static_cast<std::size_t>(p));
    for (int d = 0; d < p; ++d) {
      const auto [lo, hi] = box[d];
      if (per_dim == 1) {
        axes[d] = {0.5 * (lo + hi)};
      } else {
        axes[d].reserve(per_dim);
        for (int k = 0; k < per_dim; ++k) {
          axes[d].push_back(lo + (hi - lo) * k / (per_dim - 1));
        }
      }
    }
    std::vector<std::vector<double>> points;
    points.reserve(static_cast<std::size_t>(std::pow(per_dim, p)));
    std::vector<int> idx(static_cast<std::size_t>(p), 0);
    while (true) {
      std::vector<double> alpha(static_cast<std::size_t>(p));
      for (int d = 0; d < p; ++d) alpha[d] = axes[d][idx[d]];
      points.push_back(std::move(alpha));
      int d = p - 1;
      while (d >= 0 && ++idx[d] == per_dim) idx[d--] = 0;
      if (d < 0) break;
    }
    return points;
  }
};

/// State-space model with real matrices, the result of pinning parameters.
struct FixedStateSpace {
  TimeDomain domain = TimeDomain::Continuous;
  Eigen::MatrixXd A, B, C, D;

  int n() const { return static_cast<int>(A.rows()); }
  int m() const { return static_cast<int>(B.cols()); }
  int o() const { return static_cast<int>(C.rows()); }

  void validate() const {
    if (A.rows() != A.cols()) throw std::invalid_argument("FixedStateSpace: A must be square");
    if (B.rows() != A.rows()) throw std::invalid_argument("FixedStateSpace: B row mismatch");
    if (C.cols() != A.rows()) throw std::invalid_argument("FixedStateSpace: C column mismatch");
    if (D.rows() != C.rows() || D.cols() != B.cols()) {
      throw std::invalid_argument("FixedStateSpace: D shape mismatch");
    }
    if (B.cols() < 1 || C.rows() < 1) {
      throw std::invalid_argument("FixedStateSpace: needs at least one input and output");
    }
  }
};

/// State-space model whose matrices are polynomial in the parameters.
struct ParamStateSpace {
  TimeDomain domain = TimeDomain::Continuous;
  PolynomialMatrix A = PolynomialMatrix::zero(0, 0, 1);
  PolynomialMatrix B = PolynomialMatrix::zero(0, 1, 1);
  PolynomialMatrix C = PolynomialMatrix::zero(1, 0, 1);
  PolynomialMatrix D = PolynomialMatrix::zero(1, 1, 1);
  SemialgebraicSet params;

  int n() const { return A.rows(); }
  int m() const { return B.cols(); }
  int o() const { return C.rows(); }

  void validate() const {
    params.validate();
    if (A.rows() != A.cols()) throw std::invalid_argument("ParamStateSpace: A must be square");
    if (B.rows() != A.rows()) throw std::invalid_argument("ParamStateSpace: B row mismatch");
    if (C.cols() != A.rows()) throw std::invalid_argument("ParamStateSpace: C column mismatch");
    if (D.rows() != C.rows() || D.cols() != B.cols()) {
      throw std::invalid_argument("ParamStateSpace: D shape mismatch");
    }
    if (B.cols() < 1 || C.rows() < 1) {
      throw std::invalid_argument("ParamStateSpace: needs at least one input and output");
    }
    for (const PolynomialMatrix* mat : {&A, &B, &C, &D}) {
      if (mat->num_vars() != params.p) {
        throw std::invalid_argument("ParamStateSpace: matrix parameter count mismatch");
      }
    }
  }

  FixedStateSpace at(const std::vector<double>& alpha) const {
    if (static_cast<int>(alpha.size()) != params.p) {
      throw std::invalid_argument("ParamStateSpace::at: wrong parameter count");
    }
    FixedStateSpace fixed;
    fixed.domain = domain;
    fixed.A = A.evaluate(alpha);
    fixed.B = B.evaluate(alpha);
    fixed.C = C.evaluate(alpha);
    fixed.D = D.evaluate(alpha);
    return fixed;
  }
};

/// Keeps the leading p_prime parameters.
inline std::vector<double> project_params(const std::vector<double>& alpha, int p_prime) {
  if (p_prime < 0 || p_prime > static_cast<int>(alpha.size())) {
    throw std::invalid_argument("project_params: p_prime out of range");
  }
  return std::vector<double>(alpha.begin(), alpha.begin() + p_prime);
}

/// Restricts a domain to its leading p_prime parameters. Box entries are
/// copied verbatim; constraints that involve any dropped parameter are
/// removed, the rest are rewritten over the shorter variable list.
inline SemialgebraicSet project_domain(const SemialgebraicSet& dom, int p_prime) {
  if (p_prime < 0 || p_prime > dom.p) {
    throw std::invalid_argument("project_domain: p_prime out of range");
  }
  SemialgebraicSet out;
  out.p = p_prime;
  out.box.assign(dom.box.begin(), dom.box.begin() + p_prime);
  for (const auto& q : dom.constraints) {
    if (q.supported_on_prefix(p_prime)) {
      out.constraints.push_back(q.restricted(p_prime));
    }
  }
  out.validate();
  return out;
}

/// Error system whose transfer function is G(.;alpha) - G'(.;T(alpha)):
/// block-diagonal dynamics, stacked input maps, differenced output maps.
inline ParamStateSpace augment(const ParamStateSpace& full, const ParamStateSpace& reduced,
                               int p_prime) {
  full.validate();
  reduced.validate();
  if (full.domain != reduced.domain) {
    throw std::invalid_argument("augment: time domains differ");
  }
  if (full.m() != reduced.m() || full.o() != reduced.o()) {
    throw std::invalid_argument("augment: input/output dimensions differ");
  }
  if (reduced.params.p != p_prime) {
    throw std::invalid_argument("augment: reduced system must use exactly p_prime parameters");
  }
  if (p_prime > full.params.p) {
    throw std::invalid_argument("augment: p_prime exceeds the full parameter count");
  }
  const int p = full.params.p;
  const int n = full.n();
  const int nr = reduced.n();

  ParamStateSpace out;
  out.domain = full.domain;
  out.params = full.params;
  out.A = PolynomialMatrix::zero(n + nr, n + nr, p);
  out.A.set_block(0, 0, full.A);
  out.A.set_block(n, n, reduced.A.embedded(p));
  out.B = PolynomialMatrix::zero(n + nr, full.m(), p);
  out.B.set_block(0, 0, full.B);
  out.B.set_block(n, 0, reduced.B.embedded(p));
  out.C = PolynomialMatrix::zero(full.o(), n + nr, p);
  out.C.set_block(0, 0, full.C);
  out.C.set_block(0, n, reduced.C.embedded(p) * -1.0);
  out.D = full.D - reduced.D.embedded(p);
  return out;
}

/// Positive distance to instability: -max Re(lambda) for continuous systems,
/// 1 - rho(A) for discrete ones.
inline double stability_margin(const FixedStateSpace& sys) {
  sys.validate();
  if (sys.n() == 0) return std::numeric_limits<double>::infinity();
  Eigen::EigenSolver<Eigen::MatrixXd> es(sys.A, false);
  if (sys.domain == TimeDomain::Continuous) {
    return -es.eigenvalues().real().maxCoeff();
  }
  return 1.0 - es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Transfer matrix at one frequency: s = i*w for continuous systems,
/// z = exp(i*w) for discrete ones.
inline Eigen::MatrixXcd freq_response(const FixedStateSpace& sys, double w) {
  const std::complex<double> iu(0.0, 1.0);
  if (sys.n() == 0) return sys.D.cast<std::complex<double>>();
  const std::complex<double> point =
      sys.domain == TimeDomain::Continuous ? iu * w : std::exp(iu * w);
  Eigen::MatrixXcd shifted =
      point * Eigen::MatrixXcd::Identity(sys.n(), sys.n()) - sys.A.cast<std::complex<double>>();
  Eigen::MatrixXcd x = shifted.partialPivLu().solve(sys.B.cast<std::complex<double>>());
  return sys.C.cast<std::complex<double>>() * x + sys.D.cast<std::complex<double>>();
}

inline double peak_gain_at(const FixedStateSpace& sys, double w) {
  return freq_response(sys, w).jacobiSvd().singularValues()(0);
}

namespace detail {

inline double golden_max(const std::function<double(double)>& g, double lo, double hi,
                         int iters = 80) {
  const double invphi = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = lo, b = hi;
  double c = b - invphi * (b - a);
  double d = a + invphi * (b - a);
  double gc = g(c), gd = g(d);
  for (int k = 0; k < iters && b - a > 1e-14 * (1.0 + std::abs(a) + std::abs(b)); ++k) {
    if (gc > gd) {
      b = d;
      d = c;
      gd = gc;
      c = b - invphi * (b - a);
      gc = g(c);
    } else {
      a = c;
      c = d;
      gc = gd;
      d = a + invphi * (b - a);
      gd = g(d);
    }
  }
  return std::max(g(0.5 * (a + b)), std::max(gc, gd));
}

/// Best achieved gain over a candidate frequency list, locally refined
/// around the winner. Returns the gain; the frequencies need not be sorted.
inline double refined_peak_lower_bound(const FixedStateSpace& sys, std::vector<double> freqs) {
  std::sort(freqs.begin(), freqs.end());
  freqs.erase(std::unique(freqs.begin(), freqs.end()), freqs.end());
  double best = 0.0;
  std::size_t best_idx = 0;
  for (std::size_t i = 0; i < freqs.size(); ++i) {
    const double g = peak_gain_at(sys, freqs[i]);
    if (g > best) {
      best = g;
      best_idx = i;
    }
  }
  if (freqs.empty()) return best;
  const double lo = best_idx == 0 ? freqs.front() : freqs[best_idx - 1];
  const double hi = best_idx + 1 == freqs.size() ? freqs.back() : freqs[best_idx + 1];
  if (hi > lo) {
    best = std::max(best, golden_max([&](double w) { return peak_gain_at(sys, w); }, lo, hi));
  }
  return best;
}

/// Continuous-time level test: gamma is attained as a singular value of the
/// frequency response at frequency w iff the gamma-Hamiltonian has the
/// eigenvalue i*w. Returns the positive crossing frequencies (empty when the
/// whole response stays below gamma).
inline std::vector<double> imaginary_axis_crossings(const FixedStateSpace& sys, double gamma) {
  const int n = sys.n();
  const int m = sys.m();
  Eigen::MatrixXd r = gamma * gamma * Eigen::MatrixXd::Identity(m, m) -
                      sys.D.transpose() * sys.D;
  Eigen::LLT<Eigen::MatrixXd> r_llt(r);
  if (r_llt.info() != Eigen::Success) {
    // gamma at or below sigma_max(D): treat as crossed everywhere.
    return {0.0};
  }
  Eigen::MatrixXd rinv_dt_c = r_llt.solve(sys.D.transpose() * sys.C);
  Eigen::MatrixXd rinv_bt = r_llt.solve(sys.B.transpose());
  Eigen::MatrixXd ahat = sys.A + sys.B * rinv_dt_c;
  Eigen::MatrixXd s = sys.B * rinv_bt;
  Eigen::MatrixXd q = sys.C.transpose() *
                      (Eigen::MatrixXd::Identity(sys.o(), sys.o()) +
                       sys.D * r_llt.solve(sys.D.transpose())) *
                      sys.C;
  Eigen::MatrixXd h(2 * n, 2 * n);
  h << ahat, s, -q, -ahat.transpose();
  Eigen::EigenSolver<Eigen::MatrixXd> es(h, false);
  std::vector<double> ws;
  for (int i = 0; i < es.eigenvalues().size(); ++i) {
    const std::complex<double> ev = es.eigenvalues()(i);
    if (std::abs(ev.real()) <= 1e-8 * std::max(1.0, std::abs(ev)) && ev.imag() >= 0.0) {
      ws.push_back(ev.imag());
    }
  }
  std::sort(ws.begin(), ws.end());
  return ws;
}

/// Discrete-time level test via the symplectic pencil: gamma is attained on
/// the unit circle iff the pencil has a unit-modulus generalized eigenvalue.
/// Returns the crossing angles in [0, pi].
inline std::vector<double> unit_circle_crossings(const FixedStateSpace& sys, double gamma) {
  const int n = sys.n();
  const int m = sys.m();
  Eigen::MatrixXd r = gamma * gamma * Eigen::MatrixXd::Identity(m, m) -
                      sys.D.transpose() * sys.D;
  Eigen::LLT<Eigen::MatrixXd> r_llt(r);
  if (r_llt.info() != Eigen::Success) return {0.0};
  Eigen::MatrixXd ahat = sys.A + sys.B * r_llt.solve(sys.D.transpose() * sys.C);
  Eigen::MatrixXd s = sys.B * r_llt.solve(sys.B.transpose());
  Eigen::MatrixXd q = sys.C.transpose() *
                      (Eigen::MatrixXd::Identity(sys.o(), sys.o()) +
                       sys.D * r_llt.solve(sys.D.transpose())) *
                      sys.C;
  // lhs v = lambda rhs v encodes the two coupled recursions
  //   z x = Ahat x + S q   and   q = z (Ahat' q + Q x).
  Eigen::MatrixXd lhs(2 * n, 2 * n), rhs(2 * n, 2 * n);
  lhs << ahat, s, Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Identity(n, n);
  rhs << Eigen::MatrixXd::Identity(n, n), Eigen::MatrixXd::Zero(n, n), q, ahat.transpose();
  Eigen::GeneralizedEigenSolver<Eigen::MatrixXd> ges(lhs, rhs, true);
  std::vector<double> thetas;
  for (int i = 0; i < ges.alphas().size(); ++i) {
    const std::complex<double> a = ges.alphas()(i);
    const double b = ges.betas()(i);
    const double scale = std::abs(a) + std::abs(b);
    if (scale < 1e-14) continue;
    if (std::abs(std::abs(a) - std::abs(b)) <= 1e-8 * scale) {
      const double theta = std::abs(std::arg(a / b));
      thetas.push_back(theta);
    }
  }
  std::sort(thetas.begin(), thetas.end());
  return thetas;
}

inline std::vector<double> level_crossings(const FixedStateSpace& sys, double gamma) {
  return sys.domain == TimeDomain::Continuous ? imaginary_axis_crossings(sys, gamma)
                                              : unit_circle_crossings(sys, gamma);
}

inline std::vector<double> seed_frequencies(const FixedStateSpace& sys) {
  std::vector<double> freqs;
  if (sys.domain == TimeDomain::Continuous) {
    freqs.push_back(0.0);
    double scale = 1.0;
    Eigen::EigenSolver<Eigen::MatrixXd> es(sys.A, false);
    for (int i = 0; i < es.eigenvalues().size(); ++i) {
      const std::complex<double> ev = es.eigenvalues()(i);
      scale = std::max(scale, std::abs(ev));
      freqs.push_back(std::abs(ev));
      if (std::abs(ev.imag()) > 1e-12) freqs.push_back(std::abs(ev.imag()));
    }
    for (int k = 0; k <= 96; ++k) {
      freqs.push_back(scale * std::pow(10.0, -3.0 + 6.0 * k / 96.0));
    }
  } else {
    const int sweep = 2048;
    for (int k = 0; k <= sweep; ++k) {
      freqs.push_back(M_PI * k / sweep);
    }
    Eigen::EigenSolver<Eigen::MatrixXd> es(sys.A, false);
    for (int i = 0; i < es.eigenvalues().size(); ++i) {
      freqs.push_back(std::abs(std::arg(es.eigenvalues()(i))));
    }
  }
  return freqs;
}

}  // namespace detail

/// Worst-case frequency-domain gain of a stable fixed system, to relative
/// accuracy `tol`. Continuous systems use lower-bound/level-set iterations
/// with the Hamiltonian imaginary-axis test; discrete systems seed the lower
/// bound with a 2048-point unit-circle sweep (locally refined) and certify
/// with the symplectic-pencil test.
inline double hinf_norm(const FixedStateSpace& sys, double tol = 1e-7) {
  sys.validate();
  if (!(tol > 0.0)) throw std::invalid_argument("hinf_norm: tol must be positive");
  const double d_gain = sys.D.jacobiSvd().singularValues().size() > 0
                            ? sys.D.jacobiSvd().singularValues()(0)
                            : 0.0;
  if (sys.n() == 0) return d_gain;
  if (stability_margin(sys) <= 1e-9) {
    throw std::domain_error("hinf_norm: infinite H-infinity norm (system is not stable)");
  }

  double lo = std::max(d_gain, detail::refined_peak_lower_bound(sys, detail::seed_frequencies(sys)));
  if (lo < 1e-300) return 0.0;

  const double step = std::max(tol, 1e-12);
  for (int iter = 0; iter < 200; ++iter) {
    const double gamma = lo * (1.0 + 2.0 * step);
    std::vector<double> crossings = detail::level_crossings(sys, gamma);
    if (crossings.empty()) return lo * (1.0 + step);

    // Raise the lower bound: evaluate the gain between consecutive
    // crossings (and at the crossings themselves).
    std::vector<double> candidates = crossings;
    for (std::size_t i = 0; i + 1 < crossings.size(); ++i) {
      candidates.push_back(0.5 * (crossings[i] + crossings[i + 1]));
    }
    double improved = lo;
    for (double w : candidates) improved = std::max(improved, peak_gain_at(sys, w));
    if (improved <= lo * (1.0 + 1e-13)) {
      // Tangent or numerically flat peak: fall back to plain bisection on
      // the level test, which needs no further gain improvements.
      double hi = lo * (1.0 + 2.0 * step);
      int doublings = 0;
      while (!detail::level_crossings(sys, hi).empty() && doublings++ < 80) {
        hi *= 2.0;
      }
      if (doublings >= 80) {
        throw std::runtime_error("hinf_norm: level test failed to clear; system may be "
                                 "marginally stable");
      }
      double lo_b = lo;
      while (hi - lo_b > tol * (1.0 + lo_b)) {
        const double mid = 0.5 * (lo_b + hi);
        if (detail::level_crossings(sys, mid).empty()) {
          hi = mid;
        } else {
          lo_b = mid;
        }
      }
      return 0.5 * (lo_b + hi);
    }
    lo = improved;
  }
  throw std::runtime_error("hinf_norm: failed to converge");
}

struct SupErrorSample {
  double value = 0.0;
  std::vector<double> argmax;
  int admissible_points = 0;
};

/// Largest sampled error-system gain over the admissible grid, traversed in
/// deterministic row-major order (ties keep the first maximizer).
inline SupErrorSample sampled_sup_error(const ParamStateSpace& full,
                                        const ParamStateSpace& reduced, int p_prime,
                                        int grid_per_dim = 21, double hinf_tol = 1e-7) {
  const ParamStateSpace err = augment(full, reduced, p_prime);
  SupErrorSample out;
  bool any = false;
  for (const auto& alpha : err.params.sample_grid(grid_per_dim)) {
    if (!err.params.admits(alpha)) continue;
    ++out.admissible_points;
    double value = 0.0;
    try {
      value = hinf_norm(err.at(alpha), hinf_tol);
    } catch (const std::domain_error&) {
      std::string where = "[";
      for (std::size_t i = 0; i < alpha.size(); ++i) {
        where += (i ? "," : "") + std::to_string(alpha[i]);
      }
      throw std::domain_error("sampled_sup_error: error system unstable at alpha=" + where +
                              "]");
    }
    if (!any || value > out.value) {
      any = true;
      out.value = value;
      out.argmax = alpha;
    }
  }
  if (!any) throw std::runtime_error("sampled_sup_error: no admissible grid points");
  return out;
}

}  // namespace pars
