#include "geocause/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace geocause {

std::string specification_name(Specification s) {
  switch (s) {
    case Specification::a_diffmeans: return "a";
    case Specification::b_x_fe: return "b";
    case Specification::c1_m: return "c1";
    case Specification::c2_m_x_fe: return "c2";
  }
  return "?";
}

Specification parse_specification(const std::string& s) {
  if (s == "a" || s == "a_diffmeans") return Specification::a_diffmeans;
  if (s == "b" || s == "b_x_fe") return Specification::b_x_fe;
  if (s == "c1" || s == "c1_m") return Specification::c1_m;
  if (s == "c2" || s == "c2_m_x_fe") return Specification::c2_m_x_fe;
  throw DataError("unknown specification '" + s +
                  "' (expected a, b, c1, or c2)");
}

namespace {

void check_aligned(std::span<const double> y, std::span<const int> a) {
  if (y.size() != a.size()) {
    throw ValidationError("estimator: outcome and treatment lengths differ (" +
                          std::to_string(y.size()) + " vs " +
                          std::to_string(a.size()) + ")");
  }
  if (y.empty()) throw ValidationError("estimator: empty sample");
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!std::isfinite(y[i])) {
      throw DataError("estimator: non-finite outcome at index " +
                      std::to_string(i));
    }
    if (a[i] != 0 && a[i] != 1) {
      throw ValidationError("estimator: treatment must be 0/1, got " +
                            std::to_string(a[i]) + " at index " +
                            std::to_string(i));
    }
  }
}

void check_propensities(std::span<const double> p, std::size_t n) {
  if (p.size() != n) {
    throw ValidationError("estimator: propensity length " +
                          std::to_string(p.size()) + " != sample size " +
                          std::to_string(n));
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] > 0.0 && p[i] < 1.0)) {
      throw ValidationError("estimator: propensity " + format_double(p[i]) +
                            " at index " + std::to_string(i) +
                            " outside (0, 1); clip before weighting");
    }
  }
}

void check_both_arms(std::span<const int> a) {
  bool any_t = false, any_c = false;
  for (int v : a) (v ? any_t : any_c) = true;
  if (!any_t || !any_c) {
    throw DataError(std::string("estimator: degenerate arm (no ") +
                    (any_t ? "control" : "treated") + " observations)");
  }
}

}  // namespace

double diff_in_means(std::span<const double> y, std::span<const int> a) {
  check_aligned(y, a);
  check_both_arms(a);
  double sum_t = 0.0, sum_c = 0.0;
  std::size_t n_t = 0, n_c = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (a[i]) { sum_t += y[i]; ++n_t; }
    else { sum_c += y[i]; ++n_c; }
  }
  return sum_t / static_cast<double>(n_t) - sum_c / static_cast<double>(n_c);
}

double hajek_ate(std::span<const double> y, std::span<const int> a,
                 std::span<const double> p) {
  check_aligned(y, a);
  check_propensities(p, y.size());
  check_both_arms(a);
  double wy_t = 0.0, w_t = 0.0, wy_c = 0.0, w_c = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (a[i]) {
      const double w = 1.0 / p[i];
      wy_t += w * y[i];
      w_t += w;
    } else {
      const double w = 1.0 / (1.0 - p[i]);
      wy_c += w * y[i];
      w_c += w;
    }
  }
  return wy_t / w_t - wy_c / w_c;
}

HajekWeights hajek_arm_weights(std::span<const int> a,
                               std::span<const double> p) {
  check_propensities(p, a.size());
  check_both_arms(a);
  HajekWeights w;
  double w_t = 0.0, w_c = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]) { w.treated.push_back(1.0 / p[i]); w_t += w.treated.back(); }
    else { w.control.push_back(1.0 / (1.0 - p[i])); w_c += w.control.back(); }
  }
  for (auto& v : w.treated) v /= w_t;
  for (auto& v : w.control) v /= w_c;
  return w;
}

double horvitz_thompson_ate(std::span<const double> y, std::span<const int> a,
                            std::span<const double> p) {
  check_aligned(y, a);
  check_propensities(p, y.size());
  check_both_arms(a);
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    acc += a[i] ? y[i] / p[i] : -y[i] / (1.0 - p[i]);
  }
  return acc / static_cast<double>(y.size());
}

double ate_variance(std::span<const double> y, std::span<const int> a,
                    std::span<const double> p,
                    const VarianceOptions& options) {
  check_aligned(y, a);
  check_propensities(p, y.size());
  check_both_arms(a);
  const std::size_t n = y.size();

  // Weighted arm means (the ratio estimator's centres).
  double wy_t = 0.0, w_t = 0.0, wy_c = 0.0, w_c = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i]) { wy_t += y[i] / p[i]; w_t += 1.0 / p[i]; }
    else { wy_c += y[i] / (1.0 - p[i]); w_c += 1.0 / (1.0 - p[i]); }
  }
  const double mu1 = wy_t / w_t, mu0 = wy_c / w_c;

  std::vector<double> psi(n);
  for (std::size_t i = 0; i < n; ++i) {
    psi[i] = a[i] ? (y[i] - mu1) / p[i] : -(y[i] - mu0) / (1.0 - p[i]);
  }

  if (!options.cluster) {
    double ss = 0.0;
    for (double v : psi) ss += v * v;
    return ss / (static_cast<double>(n) * static_cast<double>(n));
  }

  if (options.cluster_ids.size() != n) {
    throw ValidationError("ate_variance: cluster id count " +
                          std::to_string(options.cluster_ids.size()) +
                          " != sample size " + std::to_string(n));
  }
  std::map<std::string, double> cluster_sum;
  for (std::size_t i = 0; i < n; ++i) cluster_sum[options.cluster_ids[i]] += psi[i];
  const std::size_t g = cluster_sum.size();
  if (g < 2) {
    throw DataError(
        "ate_variance: clustering requires at least 2 clusters, got " +
        std::to_string(g));
  }
  double ss = 0.0;
  for (const auto& [id, s] : cluster_sum) ss += s * s;
  const double small_sample = static_cast<double>(g) / static_cast<double>(g - 1);
  return small_sample * ss /
         (static_cast<double>(n) * static_cast<double>(n));
}

AteEstimate estimate_ate(const PanelSlice& panel,
                         std::span<const double> propensity,
                         Specification spec, const EstimateOptions& options) {
  // Cells without an outcome stay in the panel for training but are excluded
  // from the weighted sums.
  std::vector<double> y, p;
  std::vector<int> a;
  std::vector<std::string> clusters;
  const bool have_p = !propensity.empty();
  if (have_p && propensity.size() != panel.cells.size()) {
    throw ValidationError("estimate_ate: propensity length " +
                          std::to_string(propensity.size()) +
                          " != cell count " +
                          std::to_string(panel.cells.size()));
  }
  for (std::size_t i = 0; i < panel.cells.size(); ++i) {
    const auto& cell = panel.cells[i];
    if (!cell.outcome_lead) continue;
    y.push_back(*cell.outcome_lead);
    a.push_back(cell.treated);
    p.push_back(have_p ? propensity[i] : 0.5);
    clusters.push_back(cell.adm2_id);
  }
  if (y.empty()) {
    throw ValidationError("estimate_ate: no cells carry an outcome");
  }

  AteEstimate est;
  est.funder = panel.funder;
  est.sector_code = panel.sector_code;
  est.specification = spec;
  est.clip_lo = panel.clip_lo;
  est.clip_hi = panel.clip_hi;
  est.ate = options.raw_ht ? horvitz_thompson_ate(y, a, p) : hajek_ate(y, a, p);

  VarianceOptions vo;
  vo.cluster = options.cluster_adm2;
  vo.cluster_ids = clusters;
  const double var = ate_variance(y, a, p, vo);
  est.std_error = std::sqrt(var);
  est.ci_low = est.ate - options.z_value * est.std_error;
  est.ci_high = est.ate + options.z_value * est.std_error;
  est.variance_method =
      options.cluster_adm2 ? "influence_cluster_adm2" : "influence";
  for (int v : a) {
    if (v) ++est.n_treated;
    else ++est.n_control;
  }
  return est;
}

SpecificationRun run_specifications(
    const PanelSlice& panel,
    const std::vector<std::pair<Specification, std::vector<double>>>&
        propensities_by_spec,
    const EstimateOptions& options) {
  SpecificationRun run;
  for (const auto& [spec, props] : propensities_by_spec) {
    if (spec != Specification::a_diffmeans && props.empty()) {
      run.skipped.push_back(specification_name(spec));
      continue;
    }
    run.estimates.push_back(estimate_ate(panel, props, spec, options));
  }
  return run;
}

}  // namespace geocause
