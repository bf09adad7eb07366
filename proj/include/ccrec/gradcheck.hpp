#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ccrec/rng.hpp"
#include "ccrec/tensor.hpp"

namespace ccrec::nn {

struct GradCheckReport {
  size_t probes = 0;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::string worst_param;
  size_t worst_index = 0;
};

// Compares analytic gradients against central finite differences at h on
// randomly probed coordinates. The loss closure must zero the gradients,
// run forward and (when asked) backward, and return the loss; it must be
// deterministic, which is verified by evaluating it twice.
//
// Relative error: |fd - g| / max(|fd| + |g|, 1e-8).
inline GradCheckReport check_gradients(
    const std::vector<Parameter<double>*>& params,
    const std::function<double(bool with_grad)>& loss_fn, size_t probe_count,
    double tolerance, Rng& rng, double h = 1e-4) {
  GradCheckReport report;
  report.tolerance = tolerance;

  double base = loss_fn(true);
  if (!std::isfinite(base)) throw NumericError("loss is not finite");

  // Snapshot analytic gradients before any further evaluation can clear them.
  std::vector<Tensor<double>> analytic;
  analytic.reserve(params.size());
  size_t total = 0;
  for (auto* p : params) {
    analytic.push_back(p->grad);
    total += p->value.size();
  }

  double base2 = loss_fn(false);
  if (base != base2)
    throw ContractError("loss is not deterministic under a fixed seed");
  if (total == 0) throw ContractError("no parameters to probe");

  report.probes = probe_count;
  for (size_t probe = 0; probe < probe_count; ++probe) {
    size_t flat = static_cast<size_t>(rng.below(total));
    size_t pi = 0;
    while (flat >= params[pi]->value.size()) {
      flat -= params[pi]->value.size();
      ++pi;
    }
    double& w = params[pi]->value.data[flat];
    double orig = w;
    w = orig + h;
    double lp = loss_fn(false);
    w = orig - h;
    double lm = loss_fn(false);
    w = orig;
    double fd = (lp - lm) / (2.0 * h);
    double g = analytic[pi].data[flat];
    double denom = std::abs(fd) + std::abs(g);
    double rel = std::abs(fd - g) / (denom > 1e-8 ? denom : 1e-8);
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_param = params[pi]->name;
      report.worst_index = flat;
    }
  }
  report.pass = report.max_rel_err < tolerance;
  return report;
}

}  // namespace ccrec::nn
