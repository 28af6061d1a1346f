#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pars/sdp.hpp"

namespace pars {

/// SDPA sparse-format serialization of SdpProblem for interchange with
/// external solvers and for debugging dumps.
///
/// The file encodes the dual-form pairing: each equality row i becomes the
/// constraint matrix F_i with scalar c_i equal to the row right-hand side,
/// and F_0 is the negated objective. Free scalars are carried as a trailing
/// diagonal block of paired nonnegative entries (f = f+ - f-), announced by
/// a leading "*FREEVARS n" comment so that reading one of our files recovers
/// the free-variable structure exactly. Foreign diagonal blocks without the
/// marker are mapped to runs of 1x1 PSD blocks.

namespace detail {

inline std::string format_float(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct SdpaEntry {
  int mat = 0;
  int block = 0;
  int r = 0;
  int c = 0;
  double value = 0.0;
};

}  // namespace detail

inline void write_sdpa(const SdpProblem& prob, std::ostream& os) {
  prob.validate();
  const int m = static_cast<int>(prob.equalities.size());
  const int nb = static_cast<int>(prob.psd_blocks.size());
  const int mvars = prob.matrix_var_count();
  const bool has_free = prob.free_count > 0;
  const int total_blocks = nb + (has_free ? 1 : 0);

  if (has_free) os << "*FREEVARS " << prob.free_count << "\n";
  os << m << "\n";
  os << total_blocks << "\n";
  for (int k = 0; k < nb; ++k) {
    os << prob.psd_blocks[static_cast<std::size_t>(k)];
    if (k + 1 < total_blocks) os << " ";
  }
  if (has_free) os << -2 * prob.free_count;
  os << "\n";
  for (int i = 0; i < m; ++i) {
    os << detail::format_float(prob.equalities[static_cast<std::size_t>(i)].rhs);
    if (i + 1 < m) os << " ";
  }
  os << "\n";

  // Locate a packed variable index inside the block structure.
  std::vector<int> offsets(static_cast<std::size_t>(nb) + 1, 0);
  for (int k = 0; k < nb; ++k) {
    offsets[static_cast<std::size_t>(k) + 1] =
        offsets[static_cast<std::size_t>(k)] +
        prob.psd_blocks[static_cast<std::size_t>(k)] *
            (prob.psd_blocks[static_cast<std::size_t>(k)] + 1) / 2;
  }
  auto locate = [&](int var, int& block, int& r, int& c) {
    int k = static_cast<int>(std::upper_bound(offsets.begin(), offsets.end(), var) -
                             offsets.begin()) - 1;
    block = k;
    int rem = var - offsets[static_cast<std::size_t>(k)];
    const int n = prob.psd_blocks[static_cast<std::size_t>(k)];
    int i = 0;
    while (rem >= n - i) {
      rem -= n - i;
      ++i;
    }
    r = i;
    c = i + rem;
  };

  auto emit_terms = [&](int matno, const std::vector<SdpProblem::Term>& terms, double sign,
                        std::vector<detail::SdpaEntry>& out) {
    // Canonicalize: merge duplicate variables first.
    std::vector<SdpProblem::Term> sorted = terms;
    std::sort(sorted.begin(), sorted.end(),
              [](const SdpProblem::Term& a, const SdpProblem::Term& b) { return a.var < b.var; });
    std::vector<SdpProblem::Term> merged;
    for (const auto& t : sorted) {
      if (!merged.empty() && merged.back().var == t.var) {
        merged.back().coeff += t.coeff;
      } else {
        merged.push_back(t);
      }
    }
    for (const auto& t : merged) {
      if (t.coeff == 0.0) continue;
      if (t.var < mvars) {
        int k, r, c;
        locate(t.var, k, r, c);
        const double v = (r == c) ? t.coeff : 0.5 * t.coeff;
        out.push_back({matno, k + 1, r + 1, c + 1, sign * v});
      } else {
        const int s = t.var - mvars;
        out.push_back({matno, nb + 1, 2 * s + 1, 2 * s + 1, sign * t.coeff});
        out.push_back({matno, nb + 1, 2 * s + 2, 2 * s + 2, -sign * t.coeff});
      }
    }
  };

  std::vector<detail::SdpaEntry> entries;
  emit_terms(0, prob.objective, -1.0, entries);
  for (int i = 0; i < m; ++i) {
    emit_terms(i + 1, prob.equalities[static_cast<std::size_t>(i)].terms, 1.0, entries);
  }
  std::sort(entries.begin(), entries.end(),
            [](const detail::SdpaEntry& a, const detail::SdpaEntry& b) {
              if (a.mat != b.mat) return a.mat < b.mat;
              if (a.block != b.block) return a.block < b.block;
              if (a.r != b.r) return a.r < b.r;
              return a.c < b.c;
            });
  for (const auto& e : entries) {
    os << e.mat << " " << e.block << " " << e.r << " " << e.c << " "
       << detail::format_float(e.value) << "\n";
  }
}

inline SdpProblem read_sdpa(std::istream& is) {
  SdpProblem prob;
  int declared_free = 0;

  std::string line;
  std::vector<std::string> payload;
  bool counts_read = false;
  int m = -1, nblocks = -1;
  std::vector<int> raw_blocks;
  std::vector<double> rhs;
  std::vector<detail::SdpaEntry> entries;

  int stage = 0;  // 0: m, 1: nblocks, 2: sizes, 3: rhs, 4: entries
  while (std::getline(is, line)) {
    // Comments and blank lines; the free-variable marker rides on a comment.
    std::size_t start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos) continue;
    if (line[start] == '*' || line[start] == '"') {
      std::istringstream cs(line.substr(start + 1));
      std::string tag;
      if (cs >> tag && tag == "FREEVARS") {
        if (!(cs >> declared_free) || declared_free < 0) {
          throw std::runtime_error("read_sdpa: malformed FREEVARS marker");
        }
      }
      continue;
    }
    std::istringstream ls(line);
    if (stage == 0) {
      if (!(ls >> m) || m < 0) throw std::runtime_error("read_sdpa: bad constraint count");
      stage = 1;
    } else if (stage == 1) {
      if (!(ls >> nblocks) || nblocks < 0) throw std::runtime_error("read_sdpa: bad block count");
      stage = 2;
    } else if (stage == 2) {
      int s;
      while (ls >> s) raw_blocks.push_back(s);
      if (static_cast<int>(raw_blocks.size()) < nblocks) continue;
      if (static_cast<int>(raw_blocks.size()) != nblocks) {
        throw std::runtime_error("read_sdpa: block size list length mismatch");
      }
      stage = (m == 0) ? 4 : 3;
    } else if (stage == 3) {
      double v;
      while (ls >> v) rhs.push_back(v);
      if (static_cast<int>(rhs.size()) < m) continue;
      if (static_cast<int>(rhs.size()) != m) {
        throw std::runtime_error("read_sdpa: right-hand side length mismatch");
      }
      stage = 4;
    } else {
      detail::SdpaEntry e;
      if (!(ls >> e.mat >> e.block >> e.r >> e.c >> e.value)) {
        throw std::runtime_error("read_sdpa: malformed entry line: " + line);
      }
      if (e.mat < 0 || e.mat > m) throw std::runtime_error("read_sdpa: entry matrix out of range");
      if (e.block < 1 || e.block > nblocks) {
        throw std::runtime_error("read_sdpa: entry block out of range");
      }
      entries.push_back(e);
    }
    counts_read = true;
  }
  if (!counts_read || stage < 4) {
    if (!(stage == 4 || (stage == 3 && m == 0) || (stage == 2 && nblocks == 0)))
      throw std::runtime_error("read_sdpa: truncated file");
  }

  // Interpret blocks. A trailing diagonal block announced by the marker
  // carries the free scalars; other diagonal blocks become 1x1 PSD blocks.
  const int nb_raw = static_cast<int>(raw_blocks.size());
  int free_block = -1;
  if (declared_free > 0) {
    if (nb_raw == 0 || raw_blocks[static_cast<std::size_t>(nb_raw - 1)] != -2 * declared_free) {
      throw std::runtime_error("read_sdpa: FREEVARS marker does not match trailing block");
    }
    free_block = nb_raw - 1;
    prob.free_count = declared_free;
  }

  // Map raw block index -> (first PSD block index, side, diagonal?).
  struct RawBlock {
    int first = 0;
    int side = 0;
    bool diagonal = false;
  };
  std::vector<RawBlock> map(static_cast<std::size_t>(nb_raw));
  for (int k = 0; k < nb_raw; ++k) {
    if (k == free_block) continue;
    const int s = raw_blocks[static_cast<std::size_t>(k)];
    RawBlock rb;
    rb.first = static_cast<int>(prob.psd_blocks.size());
    if (s > 0) {
      rb.side = s;
      prob.psd_blocks.push_back(s);
    } else if (s < 0) {
      rb.side = -s;
      rb.diagonal = true;
      for (int i = 0; i < -s; ++i) prob.psd_blocks.push_back(1);
    } else {
      throw std::runtime_error("read_sdpa: zero block size");
    }
    map[static_cast<std::size_t>(k)] = rb;
  }

  prob.equalities.resize(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    prob.equalities[static_cast<std::size_t>(i)].rhs = rhs[static_cast<std::size_t>(i)];
  }

  std::vector<std::vector<detail::SdpaEntry>> free_parts(static_cast<std::size_t>(m) + 1);
  for (const auto& e : entries) {
    const int k = e.block - 1;
    if (k == free_block) {
      if (e.r != e.c) throw std::runtime_error("read_sdpa: off-diagonal entry in diagonal block");
      free_parts[static_cast<std::size_t>(e.mat)].push_back(e);
      continue;
    }
    const RawBlock& rb = map[static_cast<std::size_t>(k)];
    if (e.r < 1 || e.c < e.r || e.c > rb.side) {
      throw std::runtime_error("read_sdpa: entry index out of block range");
    }
    int var;
    if (rb.diagonal) {
      if (e.r != e.c) throw std::runtime_error("read_sdpa: off-diagonal entry in diagonal block");
      var = prob.entry_index(rb.first + e.r - 1, 0, 0);
    } else {
      var = prob.entry_index(rb.first, e.r - 1, e.c - 1);
    }
    const double packed = (e.r == e.c) ? e.value : 2.0 * e.value;
    if (e.mat == 0) {
      prob.objective.push_back({var, -packed});
    } else {
      prob.equalities[static_cast<std::size_t>(e.mat - 1)].terms.push_back({var, packed});
    }
  }

  // Reassemble free coefficients from their paired diagonal entries.
  for (int mi = 0; mi <= m; ++mi) {
    auto& part = free_parts[static_cast<std::size_t>(mi)];
    std::sort(part.begin(), part.end(),
              [](const detail::SdpaEntry& a, const detail::SdpaEntry& b) { return a.r < b.r; });
    for (std::size_t q = 0; q < part.size(); ++q) {
      const auto& e = part[q];
      if (e.r % 2 == 1) {
        const int s = (e.r - 1) / 2;
        if (q + 1 >= part.size() || part[q + 1].r != e.r + 1 ||
            part[q + 1].value != -e.value) {
          throw std::runtime_error("read_sdpa: unpaired free-variable entry");
        }
        if (mi == 0) {
          prob.objective.push_back({prob.free_index(s), -e.value});
        } else {
          prob.equalities[static_cast<std::size_t>(mi - 1)].terms.push_back(
              {prob.free_index(s), e.value});
        }
        ++q;
      } else {
        throw std::runtime_error("read_sdpa: unpaired free-variable entry");
      }
    }
  }

  prob.validate();
  return prob;
}

inline void write_sdpa_file(const SdpProblem& prob, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_sdpa_file: cannot open " + path);
  write_sdpa(prob, os);
}

inline SdpProblem read_sdpa_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_sdpa_file: cannot open " + path);
  return read_sdpa(is);
}

}  // namespace pars
