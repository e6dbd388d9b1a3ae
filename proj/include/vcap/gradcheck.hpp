#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vcap/matrix.hpp"

namespace vcap {

struct GradCheckEntry {
  std::string group;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool all_pass() const;
};

struct GradCheckOptions {
  std::size_t rounds = 20;   // random inputs per group
  double eps = 1e-5;         // central difference step
  bool corrupt = false;      // test hook: perturb one analytic gradient
};

// rel err = |a - f| / max(|a|, |f|, 1e-4); the floor keeps structurally zero
// gradients from amplifying finite-difference noise.
double gradient_rel_err(double analytic, double numeric);

// Finite-difference verification of every model component: both temporal
// attention triples, the semantic cross attention, the graph transformer, the
// decoder, both losses, and the composed teacher pipeline (looser tolerance).
GradCheckReport run_gradcheck(uint64_t seed, const GradCheckOptions& options = {});

}  // namespace vcap
