#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <random>

#include "pars/sdp.hpp"
#include "pars/sdpa.hpp"

#include <sstream>

using pars::SdpOptions;
using pars::SdpProblem;
using pars::SdpSolution;
using pars::SdpStatus;

namespace {

// min t such that t*I - A >= 0 for A = [[1, 1], [1, 1]]; the optimum is the
// largest eigenvalue of A, which is 2.
SdpProblem eigenvalue_bound_problem() {
  SdpProblem p;
  p.psd_blocks = {2};
  p.free_count = 1;
  const int t = p.free_index(0);
  // S = t*I - A entrywise.
  p.equalities.push_back({{{p.entry_index(0, 0, 0), 1.0}, {t, -1.0}}, -1.0});
  p.equalities.push_back({{{p.entry_index(0, 0, 1), 1.0}}, -1.0});
  p.equalities.push_back({{{p.entry_index(0, 1, 1), 1.0}, {t, -1.0}}, -1.0});
  p.objective = {{t, 1.0}};
  return p;
}

}  // namespace

TEST_CASE("eigenvalue bound problem solves to high accuracy") {
  SdpProblem p = eigenvalue_bound_problem();
  SdpSolution s = pars::solve(p);
  REQUIRE(s.status == SdpStatus::Feasible);
  CHECK(s.objective == Catch::Approx(2.0).margin(1e-7));
  CHECK(s.gap <= 1e-6);
  CHECK(s.primal_residual <= 1e-7);

  SECTION("independent check agrees") {
    auto rep = pars::check_solution(p, s);
    CHECK(rep.primal_feasible());
    CHECK(rep.objective == Catch::Approx(2.0).margin(1e-7));
    CHECK(rep.duality_gap <= 1e-6);
    CHECK(rep.min_dual_slack_eigenvalue >= -1e-8);
  }

  SECTION("solves are deterministic") {
    SdpSolution s2 = pars::solve(p);
    CHECK(s2.status == s.status);
    CHECK(s2.objective == s.objective);
    CHECK(s2.iterations == s.iterations);
  }
}

TEST_CASE("fixed-entry feasibility problems") {
  // X is 2x2 PSD with unit diagonal and pinned off-diagonal entry v; this is
  // feasible exactly when |v| <= 1.
  auto correlation = [](double v) {
    SdpProblem p;
    p.psd_blocks = {2};
    p.equalities.push_back({{{p.entry_index(0, 0, 0), 1.0}}, 1.0});
    p.equalities.push_back({{{p.entry_index(0, 1, 1), 1.0}}, 1.0});
    p.equalities.push_back({{{p.entry_index(0, 0, 1), 1.0}}, v});
    return p;
  };

  SECTION("interior instance") {
    SdpSolution s = pars::solve(correlation(0.6));
    REQUIRE(s.status == SdpStatus::Feasible);
    CHECK(s.blocks[0](0, 1) == Catch::Approx(0.6).margin(1e-7));
    CHECK(pars::check_solution(correlation(0.6), s).primal_feasible());
  }

  SECTION("infeasible instance carries a verified certificate") {
    SdpProblem p = correlation(1.2);
    SdpSolution s = pars::solve(p);
    REQUIRE(s.status == SdpStatus::Infeasible);
    REQUIRE(s.certificate.has_value());
    CHECK(s.certificate->b_dot_y > 0.0);
    CHECK(s.certificate->max_block_eigenvalue <= 1e-7);
  }
}

TEST_CASE("scalar sign constraints") {
  SECTION("nonnegative scalar pinned to a negative value is infeasible") {
    SdpProblem p;
    p.psd_blocks = {1};
    p.equalities.push_back({{{p.entry_index(0, 0, 0), 1.0}}, -1.0});
    SdpSolution s = pars::solve(p);
    REQUIRE(s.status == SdpStatus::Infeasible);
    REQUIRE(s.certificate.has_value());
  }

  SECTION("stability multiplier bound") {
    // Find p >= 0 with -2p + s = -1 and slack s >= 0, i.e. p = (1 + s)/2,
    // so any solution has p >= 1/2.
    SdpProblem prob;
    prob.psd_blocks = {1, 1};
    prob.equalities.push_back(
        {{{prob.entry_index(0, 0, 0), -2.0}, {prob.entry_index(1, 0, 0), 1.0}}, -1.0});
    SdpSolution s = pars::solve(prob);
    REQUIRE(s.status == SdpStatus::Feasible);
    CHECK(s.blocks[0](0, 0) >= 0.5 - 1e-7);
  }
}

TEST_CASE("free variables couple into the cone") {
  // min f subject to f = X_00 with X_00 >= 0: the optimum is 0.
  SdpProblem p;
  p.psd_blocks = {1};
  p.free_count = 1;
  p.equalities.push_back(
      {{{p.free_index(0), 1.0}, {p.entry_index(0, 0, 0), -1.0}}, 0.0});
  p.objective = {{p.free_index(0), 1.0}};
  SdpSolution s = pars::solve(p);
  REQUIRE(s.status == SdpStatus::Feasible);
  CHECK(s.objective == Catch::Approx(0.0).margin(1e-6));

  SECTION("unused free variables are pinned to zero") {
    SdpProblem q = p;
    q.free_count = 3;
    SdpSolution s2 = pars::solve(q);
    REQUIRE(s2.status == SdpStatus::Feasible);
    CHECK(s2.free_values(1) == 0.0);
    CHECK(s2.free_values(2) == 0.0);
  }
}

TEST_CASE("degenerate rows are handled before the iteration") {
  SECTION("zero row with zero rhs is dropped") {
    SdpProblem p;
    p.psd_blocks = {1};
    p.equalities.push_back({{}, 0.0});
    p.equalities.push_back({{{p.entry_index(0, 0, 0), 1.0}}, 2.0});
    SdpSolution s = pars::solve(p);
    REQUIRE(s.status == SdpStatus::Feasible);
    CHECK(s.blocks[0](0, 0) == Catch::Approx(2.0).margin(1e-7));
  }

  SECTION("zero row with nonzero rhs is a one-row infeasibility certificate") {
    SdpProblem p;
    p.psd_blocks = {1};
    p.equalities.push_back({{{p.entry_index(0, 0, 0), 1.0}}, 2.0});
    p.equalities.push_back({{{p.entry_index(0, 0, 0), 0.0}}, 3.0});
    SdpSolution s = pars::solve(p);
    REQUIRE(s.status == SdpStatus::Infeasible);
    REQUIRE(s.certificate.has_value());
    CHECK(s.certificate->y(1) != 0.0);
    CHECK(s.certificate->b_dot_y > 0.0);
  }

  SECTION("duplicate terms in a row are merged") {
    SdpProblem p;
    p.psd_blocks = {1};
    // 0.5*x + 0.5*x = 3  =>  x = 3.
    p.equalities.push_back(
        {{{p.entry_index(0, 0, 0), 0.5}, {p.entry_index(0, 0, 0), 0.5}}, 3.0});
    SdpSolution s = pars::solve(p);
    REQUIRE(s.status == SdpStatus::Feasible);
    CHECK(s.blocks[0](0, 0) == Catch::Approx(3.0).margin(1e-7));
  }
}

TEST_CASE("randomized instances with known status") {
  std::mt19937 rng(777);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);

  SECTION("problems constructed around a feasible point are never called infeasible") {
    for (int trial = 0; trial < 20; ++trial) {
      const int n = 3;
      SdpProblem p;
      p.psd_blocks = {n};
      Eigen::MatrixXd G(n, n);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) G(i, j) = unif(rng);
      }
      Eigen::MatrixXd X0 = G * G.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
      for (int row = 0; row < 4; ++row) {
        SdpProblem::Row r;
        double rhs = 0.0;
        for (int i = 0; i < n; ++i) {
          for (int j = i; j < n; ++j) {
            const double c = unif(rng);
            r.terms.push_back({p.entry_index(0, i, j), c});
            rhs += c * X0(i, j);
          }
        }
        r.rhs = rhs;
        p.equalities.push_back(r);
      }
      SdpSolution s = pars::solve(p);
      REQUIRE(s.status != SdpStatus::Infeasible);
      if (s.status == SdpStatus::Feasible) {
        CHECK(pars::check_solution(p, s).primal_feasible());
      }
    }
  }

  SECTION("problems with a planted Farkas ray are never called feasible") {
    for (int trial = 0; trial < 20; ++trial) {
      const int n = 3;
      SdpProblem p;
      p.psd_blocks = {n};
      Eigen::MatrixXd M(n, n);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) M(i, j) = unif(rng);
      }
      M = 0.5 * (M + M.transpose().eval());
      // Rows A_1 = -I + M and A_2 = -M give A*( (1,1) ) = -I <= 0 while
      // b'(1,1) = 1 > 0: a Farkas ray, so <A_1,X> + <A_2,X> = 1 with X >= 0
      // would force <-I, X> = 1, impossible.
      Eigen::MatrixXd A1 = -Eigen::MatrixXd::Identity(n, n) + M;
      Eigen::MatrixXd A2 = -M;
      auto push_row = [&p, n](const Eigen::MatrixXd& A, double rhs) {
        SdpProblem::Row r;
        for (int i = 0; i < n; ++i) {
          for (int j = i; j < n; ++j) {
            const double c = (i == j) ? A(i, i) : 2.0 * A(i, j);
            if (c != 0.0) r.terms.push_back({p.entry_index(0, i, j), c});
          }
        }
        r.rhs = rhs;
        p.equalities.push_back(r);
      };
      push_row(A1, 0.25);
      push_row(A2, 0.75);
      SdpSolution s = pars::solve(p);
      REQUIRE(s.status != SdpStatus::Feasible);
      if (s.status == SdpStatus::Infeasible) {
        REQUIRE(s.certificate.has_value());
        CHECK(s.certificate->b_dot_y > 0.0);
        CHECK(s.certificate->max_block_eigenvalue <= 1e-7);
        CHECK(s.certificate->max_free_residual <= 1e-7);
      }
    }
  }
}

TEST_CASE("check_solution evaluates candidates independently") {
  SdpProblem p = eigenvalue_bound_problem();

  SdpSolution hand;
  hand.status = SdpStatus::Feasible;
  Eigen::MatrixXd S(2, 2);
  S << 1.0, -1.0, -1.0, 1.0;
  hand.blocks = {S};
  hand.free_values = Eigen::VectorXd::Constant(1, 2.0);
  auto rep = pars::check_solution(p, hand);
  CHECK(rep.max_equality_violation <= 1e-12);
  CHECK(rep.min_block_eigenvalue >= -1e-12);
  CHECK(rep.objective == Catch::Approx(2.0));

  SECTION("violations are reported, not masked") {
    hand.free_values(0) = 1.0;  // S no longer matches t*I - A
    auto bad = pars::check_solution(p, hand);
    CHECK(bad.max_equality_violation == Catch::Approx(1.0).margin(1e-12));
    CHECK_FALSE(bad.primal_feasible());
  }

  SECTION("infeasible PSD candidate is flagged") {
    hand.blocks[0](0, 0) = -1.0;
    hand.blocks[0](1, 1) = -1.0;
    auto bad = pars::check_solution(p, hand);
    CHECK(bad.min_block_eigenvalue < -0.5);
  }
}

TEST_CASE("problem validation rejects malformed input") {
  SdpProblem p;
  p.psd_blocks = {0};
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);

  SdpProblem q;
  q.psd_blocks = {2};
  q.equalities.push_back({{{99, 1.0}}, 0.0});
  CHECK_THROWS_AS(q.validate(), std::invalid_argument);

  SdpProblem r;
  r.psd_blocks = {2};
  CHECK_THROWS_AS(r.entry_index(0, 1, 0), std::invalid_argument);
  CHECK(r.entry_index(0, 0, 1) == 1);
  CHECK(r.entry_index(0, 1, 1) == 2);
}

TEST_CASE("sdpa serialization") {
  SdpProblem p = eigenvalue_bound_problem();

  SECTION("write, read, write is byte-identical") {
    std::ostringstream first;
    pars::write_sdpa(p, first);
    std::istringstream back(first.str());
    SdpProblem reloaded = pars::read_sdpa(back);
    std::ostringstream second;
    pars::write_sdpa(reloaded, second);
    CHECK(first.str() == second.str());
  }

  SECTION("reloaded problem solves to the same optimum") {
    std::ostringstream os;
    pars::write_sdpa(p, os);
    std::istringstream is(os.str());
    SdpProblem reloaded = pars::read_sdpa(is);
    SdpSolution a = pars::solve(p);
    SdpSolution b = pars::solve(reloaded);
    REQUIRE(a.status == SdpStatus::Feasible);
    REQUIRE(b.status == SdpStatus::Feasible);
    CHECK(a.objective == Catch::Approx(b.objective).margin(1e-9));
  }

  SECTION("problems without free scalars round trip too") {
    SdpProblem q;
    q.psd_blocks = {2, 1};
    q.equalities.push_back({{{q.entry_index(0, 0, 0), 1.0}, {q.entry_index(1, 0, 0), 2.0}}, 1.0});
    q.equalities.push_back({{{q.entry_index(0, 0, 1), -0.5}}, 0.25});
    std::ostringstream first;
    pars::write_sdpa(q, first);
    std::istringstream back(first.str());
    SdpProblem reloaded = pars::read_sdpa(back);
    CHECK(reloaded.psd_blocks == q.psd_blocks);
    CHECK(reloaded.free_count == 0);
    std::ostringstream second;
    pars::write_sdpa(reloaded, second);
    CHECK(first.str() == second.str());
  }

  SECTION("malformed input is rejected") {
    std::istringstream bad("1\n1\n2\n1.0\n1 5 1 1 1.0\n");
    CHECK_THROWS_AS(pars::read_sdpa(bad), std::runtime_error);
    std::istringstream truncated("2\n1\n");
    CHECK_THROWS_AS(pars::read_sdpa(truncated), std::runtime_error);
  }
}
