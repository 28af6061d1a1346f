#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pars/monomial.hpp"
#include "pars/polynomial.hpp"
#include "pars/polynomial_matrix.hpp"

namespace pars {

/// One declared decision-variable group (a Gram block or a batch of free
/// scalar coefficients) inside a program. Scalar ids are global and
/// contiguous per group, so a name lookup is a range search.
struct VarGroup {
  std::string name;
  int id_start = 0;
  int count = 0;
};

using VarGroups = std::vector<VarGroup>;

inline const std::string& group_name_of(const VarGroups& groups, int id) {
  static const std::string unknown = "<unknown>";
  for (const auto& g : groups) {
    if (id >= g.id_start && id < g.id_start + g.count) return g.name;
  }
  return unknown;
}

/// Affine form c0 + sum_k c_k * v_k over the decision scalars of a program.
class LinForm {
 public:
  LinForm() = default;
  explicit LinForm(double constant) : constant_(constant) {}

  static LinForm variable(int id, double coeff = 1.0) {
    LinForm f;
    f.terms_.emplace_back(id, coeff);
    return f;
  }

  double constant() const { return constant_; }
  const std::vector<std::pair<int, double>>& terms() const { return terms_; }
  bool is_constant() const { return terms_.empty(); }
  bool is_zero() const { return constant_ == 0.0 && terms_.empty(); }

  int first_var() const {
    if (terms_.empty()) throw std::logic_error("LinForm::first_var: constant form");
    return terms_.front().first;
  }

  LinForm& operator+=(const LinForm& o) {
    constant_ += o.constant_;
    if (!o.terms_.empty()) {
      std::vector<std::pair<int, double>> merged;
      merged.reserve(terms_.size() + o.terms_.size());
      std::size_t a = 0, b = 0;
      while (a < terms_.size() && b < o.terms_.size()) {
        if (terms_[a].first < o.terms_[b].first) {
          merged.push_back(terms_[a++]);
        } else if (terms_[a].first > o.terms_[b].first) {
          merged.push_back(o.terms_[b++]);
        } else {
          merged.emplace_back(terms_[a].first, terms_[a].second + o.terms_[b].second);
          ++a;
          ++b;
        }
      }
      while (a < terms_.size()) merged.push_back(terms_[a++]);
      while (b < o.terms_.size()) merged.push_back(o.terms_[b++]);
      std::erase_if(merged, [](const auto& t) { return t.second == 0.0; });
      terms_ = std::move(merged);
    }
    return *this;
  }

  LinForm operator+(const LinForm& o) const {
    LinForm r = *this;
    r += o;
    return r;
  }

  LinForm operator-(const LinForm& o) const { return *this + o.scaled(-1.0); }

  LinForm scaled(double s) const {
    LinForm r;
    r.constant_ = constant_ * s;
    if (s != 0.0) {
      r.terms_ = terms_;
      for (auto& t : r.terms_) t.second *= s;
    }
    return r;
  }

  void drop_small_terms(double tol) {
    std::erase_if(terms_, [tol](const auto& t) { return std::abs(t.second) <= tol; });
    if (std::abs(constant_) <= tol) constant_ = 0.0;
  }

  bool identical(const LinForm& o) const {
    return constant_ == o.constant_ && terms_ == o.terms_;
  }

 private:
  double constant_ = 0.0;
  std::vector<std::pair<int, double>> terms_;
};

/// Product that rejects decision-variable bilinearity; `groups` supplies the
/// names used in the diagnostic.
inline LinForm multiply(const LinForm& a, const LinForm& b, const VarGroups& groups) {
  if (!a.is_constant() && !b.is_constant()) {
    throw std::invalid_argument(
        "bilinear expression: product of decision variables '" +
        group_name_of(groups, a.first_var()) + "' and '" +
        group_name_of(groups, b.first_var()) +
        "' (constraints must stay affine; fix one of them first)");
  }
  if (a.is_constant()) return b.scaled(a.constant());
  return a.scaled(b.constant());
}

/// Matrix polynomial whose coefficients are affine forms in the decision
/// scalars: the expression currency of SOS program assembly.
class LinPolyMatrix {
 public:
  using TermMap = std::map<Monomial, std::vector<LinForm>, GradedLexLess>;

  LinPolyMatrix(int rows, int cols, int num_vars,
                std::shared_ptr<const VarGroups> groups = nullptr)
      : rows_(rows), cols_(cols), num_vars_(num_vars), groups_(std::move(groups)) {
    if (rows < 0 || cols < 0 || num_vars < 0) {
      throw std::invalid_argument("LinPolyMatrix: negative dimension");
    }
  }

  static LinPolyMatrix lift(const PolynomialMatrix& m,
                            std::shared_ptr<const VarGroups> groups = nullptr) {
    LinPolyMatrix r(m.rows(), m.cols(), m.num_vars(), std::move(groups));
    for (const auto& [mono, coeff] : m.terms()) {
      auto& slab = r.slab(mono);
      for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) {
          slab[r.flat(i, j)] += LinForm(coeff(i, j));
        }
      }
    }
    return r;
  }

  static LinPolyMatrix identity(int n, int num_vars,
                                std::shared_ptr<const VarGroups> groups = nullptr) {
    return lift(PolynomialMatrix::identity(n, num_vars), std::move(groups));
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int num_vars() const { return num_vars_; }
  const TermMap& terms() const { return terms_; }
  const std::shared_ptr<const VarGroups>& groups() const { return groups_; }

  LinForm& at(const Monomial& mono, int i, int j) {
    check_index(i, j);
    return slab(mono)[flat(i, j)];
  }

  const LinForm* find(const Monomial& mono, int i, int j) const {
    check_index(i, j);
    auto it = terms_.find(mono);
    if (it == terms_.end()) return nullptr;
    return &it->second[flat(i, j)];
  }

  LinPolyMatrix operator+(const LinPolyMatrix& o) const {
    check_same_shape(o, "operator+");
    LinPolyMatrix r = *this;
    r.merge_groups(o);
    for (const auto& [mono, forms] : o.terms_) {
      auto& slab_r = r.slab(mono);
      for (std::size_t q = 0; q < forms.size(); ++q) slab_r[q] += forms[q];
    }
    return r;
  }

  LinPolyMatrix operator-(const LinPolyMatrix& o) const { return *this + o.scaled(-1.0); }

  LinPolyMatrix scaled(double s) const {
    LinPolyMatrix r(rows_, cols_, num_vars_, groups_);
    for (const auto& [mono, forms] : terms_) {
      auto& slab_r = r.slab(mono);
      for (std::size_t q = 0; q < forms.size(); ++q) slab_r[q] = forms[q].scaled(s);
    }
    return r;
  }

  /// Multiplies every coefficient by a fixed scalar polynomial (used for the
  /// multiplier terms Q(a) * q(a); never introduces bilinearity).
  LinPolyMatrix scaled_by_poly(const Polynomial& p) const {
    if (p.num_vars() != num_vars_) {
      throw std::invalid_argument("LinPolyMatrix::scaled_by_poly: parameter count mismatch");
    }
    LinPolyMatrix r(rows_, cols_, num_vars_, groups_);
    for (const auto& [mp, cp] : p.terms()) {
      for (const auto& [mono, forms] : terms_) {
        auto& slab_r = r.slab(mp * mono);
        for (std::size_t q = 0; q < forms.size(); ++q) slab_r[q] += forms[q].scaled(cp);
      }
    }
    return r;
  }

  LinPolyMatrix operator*(const LinPolyMatrix& o) const {
    if (o.num_vars_ != num_vars_) {
      throw std::invalid_argument("LinPolyMatrix::operator*: parameter count mismatch");
    }
    if (cols_ != o.rows_) {
      throw std::invalid_argument("LinPolyMatrix::operator*: inner dimension mismatch");
    }
    LinPolyMatrix r(rows_, o.cols_, num_vars_, groups_);
    r.merge_groups(o);
    static const VarGroups empty_groups;
    const VarGroups& names = r.groups_ ? *r.groups_ : empty_groups;
    for (const auto& [ma, fa] : terms_) {
      for (const auto& [mb, fb] : o.terms_) {
        auto& slab_r = r.slab(ma * mb);
        for (int i = 0; i < rows_; ++i) {
          for (int j = 0; j < o.cols_; ++j) {
            LinForm acc;
            for (int k = 0; k < cols_; ++k) {
              const LinForm& left = fa[flat(i, k)];
              const LinForm& right = fb[o.flat(k, j)];
              if (left.is_zero() || right.is_zero()) continue;
              acc += multiply(left, right, names);
            }
            if (!acc.is_zero()) slab_r[r.flat(i, j)] += acc;
          }
        }
      }
    }
    return r;
  }

  LinPolyMatrix transpose() const {
    LinPolyMatrix r(cols_, rows_, num_vars_, groups_);
    for (const auto& [mono, forms] : terms_) {
      auto& slab_r = r.slab(mono);
      for (int i = 0; i < rows_; ++i) {
        for (int j = 0; j < cols_; ++j) slab_r[r.flat(j, i)] = forms[flat(i, j)];
      }
    }
    return r;
  }

  void set_block(int i0, int j0, const LinPolyMatrix& block) {
    if (block.num_vars_ != num_vars_) {
      throw std::invalid_argument("LinPolyMatrix::set_block: parameter count mismatch");
    }
    if (i0 < 0 || j0 < 0 || i0 + block.rows_ > rows_ || j0 + block.cols_ > cols_) {
      throw std::invalid_argument("LinPolyMatrix::set_block: block out of range");
    }
    merge_groups(block);
    for (auto& [mono, forms] : terms_) {
      for (int i = 0; i < block.rows_; ++i) {
        for (int j = 0; j < block.cols_; ++j) forms[flat(i0 + i, j0 + j)] = LinForm();
      }
    }
    for (const auto& [mono, bf] : block.terms_) {
      auto& forms = slab(mono);
      for (int i = 0; i < block.rows_; ++i) {
        for (int j = 0; j < block.cols_; ++j) {
          forms[flat(i0 + i, j0 + j)] = bf[block.flat(i, j)];
        }
      }
    }
  }

  LinForm trace() const {
    if (rows_ != cols_) throw std::invalid_argument("LinPolyMatrix::trace: not square");
    LinForm t;
    auto it = terms_.find(Monomial::one(num_vars_));
    if (it != terms_.end()) {
      for (int i = 0; i < rows_; ++i) t += it->second[flat(i, i)];
    }
    for (const auto& [mono, forms] : terms_) {
      if (mono.degree() == 0) continue;
      for (int i = 0; i < rows_; ++i) {
        if (!forms[flat(i, i)].is_zero()) {
          throw std::invalid_argument(
              "LinPolyMatrix::trace: parameter-dependent diagonal has no scalar trace");
        }
      }
    }
    return t;
  }

  /// Structural symmetry under exact coefficient comparison; assembled
  /// symmetric expressions reproduce mirrored entries bit for bit.
  bool is_symmetric() const {
    if (rows_ != cols_) return false;
    for (const auto& [mono, forms] : terms_) {
      for (int i = 0; i < rows_; ++i) {
        for (int j = i + 1; j < cols_; ++j) {
          if (!forms[flat(i, j)].identical(forms[flat(j, i)])) return false;
        }
      }
    }
    return true;
  }

  std::size_t flat(int i, int j) const { return static_cast<std::size_t>(i) * cols_ + j; }

 private:
  void check_index(int i, int j) const {
    if (i < 0 || i >= rows_ || j < 0 || j >= cols_) {
      throw std::invalid_argument("LinPolyMatrix: entry index out of range");
    }
  }

  void check_same_shape(const LinPolyMatrix& o, const char* where) const {
    if (o.rows_ != rows_ || o.cols_ != cols_ || o.num_vars_ != num_vars_) {
      throw std::invalid_argument(std::string("LinPolyMatrix::") + where + ": shape mismatch");
    }
  }

  void merge_groups(const LinPolyMatrix& o) {
    if (!groups_) {
      groups_ = o.groups_;
    } else if (o.groups_ && o.groups_ != groups_) {
      throw std::invalid_argument(
          "LinPolyMatrix: mixing expressions from two different programs");
    }
  }

  std::vector<LinForm>& slab(const Monomial& mono) {
    if (mono.num_vars() != num_vars_) {
      throw std::invalid_argument("LinPolyMatrix: monomial parameter count mismatch");
    }
    auto it = terms_.find(mono);
    if (it == terms_.end()) {
      it = terms_
               .emplace(mono, std::vector<LinForm>(static_cast<std::size_t>(rows_) *
                                                   static_cast<std::size_t>(cols_)))
               .first;
    }
    return it->second;
  }

  int rows_ = 0;
  int cols_ = 0;
  int num_vars_ = 0;
  std::shared_ptr<const VarGroups> groups_;
  TermMap terms_;
};

}  // namespace pars
