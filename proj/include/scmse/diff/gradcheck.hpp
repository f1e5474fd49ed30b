#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "scmse/diff/tape.hpp"
#include "scmse/rng.hpp"

namespace scmse::diff {

struct GradCheckIssue {
  std::string param;
  Index index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  bool pass = true;
  int coords_checked = 0;
  double worst_rel = 0.0;
  GradCheckIssue worst;
  std::vector<GradCheckIssue> failures;
};

/// Central-difference check of every trainable entry in `store` against the
/// analytic gradients produced by `build` (a closure constructing the loss
/// graph on a fresh tape). At least `coords_per_param` random coordinates
/// are probed per entry; forward evaluations run on store copies so run
/// state (normalization averages) cannot leak between probes.
template <typename Builder>
GradCheckReport grad_check(const ParameterStore<double>& store, Builder build,
                           double tolerance = 1e-4, int coords_per_param = 10,
                           uint64_t seed = 0, double step = 1e-5) {
  GradCheckReport report;

  std::map<std::string, Tensor<double>> analytic;
  {
    ParameterStore<double> work = store;
    work.zero_grads();
    Tape<double> tape;
    Var<double> loss = build(tape, work);
    tape.backward(loss);
    for (const auto& [name, e] : work) analytic[name] = e.grad;
  }

  auto eval_at = [&](const std::string& name, Index coord, double delta) {
    ParameterStore<double> work = store;
    work.entry(name).value[coord] += delta;
    Tape<double> tape;
    return build(tape, work).scalar();
  };

  Rng rng(seed, "gradcheck");
  for (const auto& [name, e] : store) {
    if (e.state_only) continue;
    const Index n = e.value.numel();
    std::vector<Index> coords;
    if (n <= coords_per_param) {
      for (Index i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (int i = 0; i < coords_per_param; ++i)
        coords.push_back(static_cast<Index>(rng.below(static_cast<uint64_t>(n))));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }
    for (Index coord : coords) {
      const double up = eval_at(name, coord, step);
      const double down = eval_at(name, coord, -step);
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[name][coord];
      const double rel = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++report.coords_checked;
      GradCheckIssue issue{name, coord, a, numeric, rel};
      if (rel > report.worst_rel) {
        report.worst_rel = rel;
        report.worst = issue;
      }
      if (rel > tolerance) {
        report.pass = false;
        report.failures.push_back(issue);
      }
    }
  }
  std::sort(report.failures.begin(), report.failures.end(),
            [](const GradCheckIssue& a, const GradCheckIssue& b) {
              return a.rel_error > b.rel_error;
            });
  return report;
}

}  // namespace scmse::diff
