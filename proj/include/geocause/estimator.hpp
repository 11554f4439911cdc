#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "geocause/common.hpp"
#include "geocause/geo.hpp"

namespace geocause {

/// The four estimation specifications: unadjusted difference in means,
/// tabular covariates with district fixed effects, imagery only, and
/// imagery plus tabular covariates with fixed effects.
enum class Specification { a_diffmeans, b_x_fe, c1_m, c2_m_x_fe };

std::string specification_name(Specification s);  // "a", "b", "c1", "c2"
Specification parse_specification(const std::string& s);

struct AteEstimate {
  Funder funder = Funder::WorldBank;
  int sector_code = 0;
  Specification specification = Specification::a_diffmeans;
  double ate = 0.0;        // wealth-index points
  double std_error = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t n_treated = 0;
  std::size_t n_control = 0;
  double clip_lo = 0.0;
  double clip_hi = 1.0;
  std::string variance_method;  // "influence" or "influence_cluster_adm2"
};

/// mean(Y | A=1) - mean(Y | A=0). Throws DataError("degenerate arm")
/// when either arm is empty.
double diff_in_means(std::span<const double> y, std::span<const int> a);

/// Ratio-normalized inverse-probability-weighted difference:
///   sum(A*Y/p)/sum(A/p) - sum((1-A)*Y/(1-p))/sum((1-A)/(1-p)).
/// Propensities must already be clipped inside (0, 1).
double hajek_ate(std::span<const double> y, std::span<const int> a,
                 std::span<const double> p);

/// The unnormalized inverse-probability form (1/n)*sum(A*Y/p - (1-A)*Y/(1-p)),
/// kept behind a flag for comparison with the ratio-normalized default.
double horvitz_thompson_ate(std::span<const double> y, std::span<const int> a,
                            std::span<const double> p);

/// Normalized weights underlying the ratio estimator: treated weights
/// (1/p_i)/sum over treated, control weights (1/(1-p_i))/sum over control.
/// Each arm's weights sum to 1 by construction.
struct HajekWeights {
  std::vector<double> treated;  // one entry per treated observation, in order
  std::vector<double> control;
};

HajekWeights hajek_arm_weights(std::span<const int> a,
                               std::span<const double> p);

struct VarianceOptions {
  bool cluster = false;
  // One id per observation; required when cluster is true.
  std::span<const std::string> cluster_ids;
};

/// Influence-function variance of the ratio-normalized estimator:
///   psi_i = A_i (Y_i - mu1) / p_i - (1 - A_i)(Y_i - mu0) / (1 - p_i),
///   Var = (1/n^2) * sum(psi_i^2),
/// where mu1/mu0 are the weighted arm means. Under clustering, psi is summed
/// within cluster before squaring and the total is scaled by G/(G-1).
double ate_variance(std::span<const double> y, std::span<const int> a,
                    std::span<const double> p,
                    const VarianceOptions& options = {});

struct EstimateOptions {
  bool cluster_adm2 = false;
  bool raw_ht = false;  // use the unnormalized estimator for the point value
  double z_value = 1.959963984540054;  // 95% normal interval
};

/// Point estimate + uncertainty for one specification over panel cells that
/// carry an outcome. `propensity` must align with `panel.cells`; pass an
/// empty span for the unadjusted specification (constant 0.5 is used, under
/// which the ratio estimator reduces exactly to the difference in means).
AteEstimate estimate_ate(const PanelSlice& panel,
                         std::span<const double> propensity,
                         Specification spec,
                         const EstimateOptions& options = {});

/// Run every requested specification on a shared unit set. Specifications
/// whose propensities are absent are skipped (reported via `skipped`).
struct SpecificationRun {
  std::vector<AteEstimate> estimates;
  std::vector<std::string> skipped;
};

SpecificationRun run_specifications(
    const PanelSlice& panel,
    const std::vector<std::pair<Specification, std::vector<double>>>&
        propensities_by_spec,
    const EstimateOptions& options = {});

}  // namespace geocause
