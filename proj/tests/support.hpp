#pragma once

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <cstddef>
#include <vector>

#include "ddseq/vocab.hpp"

namespace ddseq::testkit {

/// Residues plus specials; with two residues the diffusable alphabet of an
/// absorbing chain is {A, B, [X]}.
inline Vocab tiny_vocab(int residues) {
  static const char* letters = "ABCD";
  return Vocab::from_letters(std::string_view(letters, static_cast<std::size_t>(residues)));
}

struct ChiSquared {
  double statistic = 0;
  double critical = 0;
  int dof = 0;
  bool pass() const { return dof == 0 || statistic <= critical; }
};

/// Pearson goodness of fit of observed counts against expected probabilities.
/// Cells with zero expected mass must be empty.
inline ChiSquared chi_squared(const std::vector<long>& counts, const std::vector<double>& probs, double alpha = 1e-3) {
  ChiSquared r;
  long n = 0;
  for (long c : counts) n += c;
  int cells = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (probs[i] <= 0) {
      if (counts[i] != 0) r.statistic = INFINITY;
      continue;
    }
    const double e = probs[i] * static_cast<double>(n);
    r.statistic += (counts[i] - e) * (counts[i] - e) / e;
    ++cells;
  }
  r.dof = cells - 1;
  if (r.dof > 0) r.critical = boost::math::quantile(boost::math::complement(boost::math::chi_squared(r.dof), alpha));
  return r;
}

}  // namespace ddseq::testkit
