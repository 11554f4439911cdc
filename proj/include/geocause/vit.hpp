#pragma once

#include <Eigen/Core>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "geocause/covariates.hpp"
#include "geocause/estimator.hpp"
#include "geocause/geo.hpp"
#include "geocause/tensor.hpp"

namespace geocause {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ModelConfig {
  std::size_t patch_size = 16;
  std::size_t embed_dim = 64;
  std::size_t num_layers = 8;
  std::size_t num_heads = 4;
  float dropout_rate = 0.10f;
  float drop_path_rate = 0.10f;  // constant per layer
  std::size_t tabular_width = 0;
  std::size_t image_bands = 5;
  std::size_t image_side = 64;
  bool use_images = true;
  enum class Activation { Gelu, Relu } activation = Activation::Gelu;

  void validate() const;
  std::size_t patches_per_side() const { return image_side / patch_size; }
  std::size_t num_patches() const {
    return use_images ? patches_per_side() * patches_per_side() : 0;
  }
  std::size_t patch_dim() const {
    return image_bands * patch_size * patch_size;
  }
  /// Tokens fed to the encoder: summary token + patches + tabular token.
  std::size_t sequence_length() const {
    return 1 + num_patches() + (tabular_width > 0 ? 1 : 0);
  }
};

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// Raw per-sample inputs lifted into tensors. `patches` is the flattened
/// patch matrix [num_patches x patch_dim] (masked pixels zeroed), `tabular`
/// the standardized covariate row [1 x tabular_width]; either may be null
/// when the configuration omits that stream.
struct ForwardInputs {
  TensorPtr patches;
  TensorPtr tabular;
};

/// Fused image+tabular transformer emitting a single treatment logit.
///
/// Architecture: learned patch projection and tabular projection feed a
/// token sequence [summary, patches..., tabular]; learned per-position
/// embeddings are added; a pre-norm transformer encoder (multi-head
/// self-attention + 4x MLP, residual branches with dropout and constant-rate
/// drop path) processes the sequence; a final normalisation and a
/// zero-initialised linear head read the summary token.
///
/// Special case: with num_layers == 0 no mixing ever reaches the summary
/// token, so the head instead reads the mean of the content tokens, making
/// the configuration an exact logistic model — useful for closed-form
/// sensitivity checks.
class PropensityModel {
 public:
  PropensityModel(ModelConfig cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<TensorPtr>& parameters() const { return params_; }

  /// Validate and lift one observation into tensors (masked pixels -> 0).
  ForwardInputs prepare(const ImageTile* tile,
                        const std::vector<double>* std_covariates) const;

  /// Token sequence [T x D] after fusion and positional embedding, before
  /// the encoder. Exposed for shape and zero-input tests.
  TensorPtr fuse_inputs(Tape* tape, const ForwardInputs& in) const;

  /// Single treatment logit [1 x 1]. In train mode, dropout and drop-path
  /// draw from `rng`; in eval mode the pass is deterministic and rng unused.
  TensorPtr forward_logit(Tape* tape, const ForwardInputs& in, bool train_mode,
                          SplitMix* rng) const;

  /// Eval-mode treatment probability in (0, 1).
  double forward_propensity(const ImageTile* tile,
                            const std::vector<double>* std_covariates) const;

  /// Restore parameter values from a checkpoint written by save().
  void save(const std::string& path) const;
  void load(const std::string& path);

 private:
  struct LayerParams {
    TensorPtr ln1_g, ln1_b;
    TensorPtr wq, bq, wk, bk, wv, bv, wo, bo;
    TensorPtr ln2_g, ln2_b;
    TensorPtr mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  };

  TensorPtr attention(Tape* tape, const TensorPtr& x,
                      const LayerParams& lp) const;
  TensorPtr mlp(Tape* tape, const TensorPtr& x, const LayerParams& lp) const;
  TensorPtr residual_branch(Tape* tape, const TensorPtr& h, TensorPtr branch,
                            bool train_mode, SplitMix* rng) const;

  ModelConfig cfg_;
  TensorPtr patch_w_, patch_b_;
  TensorPtr tab_w_, tab_b_;
  TensorPtr cls_;   // [1 x D]
  TensorPtr pos_;   // [T x D]
  std::vector<LayerParams> layers_;
  TensorPtr final_ln_g_, final_ln_b_;
  TensorPtr head_w_, head_b_;
  std::vector<TensorPtr> params_;
};

// ---------------------------------------------------------------------------
// Grouped cross-fitting
// ---------------------------------------------------------------------------

struct FoldAssignment {
  std::size_t num_folds = 0;
  std::map<std::string, std::size_t> fold_of_adm2;

  std::size_t fold_of(const std::string& adm2_id) const;
};

/// Partition district ids into k groups of near-equal size, shuffled under
/// `seed`. Every district lands in exactly one validation fold.
FoldAssignment make_grouped_folds(const std::set<std::string>& adm2_ids,
                                  std::size_t k, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Tabular design: continuous covariates and/or fixed-effect dummies,
// raw (standardization happens per training fold).
// ---------------------------------------------------------------------------

struct TabularDesign {
  std::vector<std::string> names;
  Eigen::MatrixXd columns;  // one row per panel cell, aligned with panel order

  bool empty() const { return names.empty(); }
};

TabularDesign build_tabular_design(const PanelSlice& panel,
                                   bool include_continuous, bool include_fe,
                                   std::size_t fe_min_count = 5);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  std::size_t folds = 10;
  float learning_rate = 1e-3f;
  float momentum = 0.9f;
  float weight_decay = 0.0f;
  double clip_lo = 0.01;
  double clip_hi = 0.99;
  std::uint64_t seed = 0;
  bool standardize_globally = false;  // default: per-training-fold statistics
  double sd_floor = 1e-8;
};

/// Deterministic class-balanced minibatch sampler: each batch holds
/// batch_size/2 treated and batch_size/2 control indices, drawn with
/// replacement from the respective pools.
class BalancedBatchSampler {
 public:
  BalancedBatchSampler(std::vector<std::size_t> treated,
                       std::vector<std::size_t> control,
                       std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next_batch();

 private:
  std::vector<std::size_t> treated_, control_;
  std::size_t batch_size_;
  SplitMix rng_;
};

struct TrainedFold {
  std::size_t fold_index = 0;
  std::shared_ptr<PropensityModel> model;
  StandardizeFit preprocess;  // identity when the spec has no tabular stream
  std::vector<double> epoch_losses;
};

struct TrainResult {
  FoldAssignment folds;
  std::vector<TrainedFold> fold_models;
  // Aligned with the panel's cell order:
  std::vector<double> oof_probability;  // clipped to [clip_lo, clip_hi]
  std::vector<std::size_t> oof_fold;
  // Mean d probability / d covariate over all cells (by original design
  // column name); empty when the spec has no tabular stream.
  std::vector<std::string> salience_names;
  std::vector<double> salience_values;
};

/// Cross-fitted propensity training. For every panel cell the reported
/// probability comes from the fold model that never saw the cell's district.
/// `tiles` must cover every cell's tile_ref when the config uses images.
TrainResult train_propensity(const PanelSlice& panel,
                             const std::map<std::string, ImageTile>& tiles,
                             const TabularDesign& design,
                             const ModelConfig& model_cfg,
                             const TrainConfig& train_cfg);

/// Signed mean sensitivity of the predicted probability to each standardized
/// tabular input, over the supplied rows: s_j = mean_i d pi_i / d x_ij.
/// Rows of `std_tabular` align with `tiles` (entries may be null for
/// image-free models). Throws ValidationError for tabular-free models.
std::vector<double> salience_gradients(
    const PropensityModel& model, const Eigen::MatrixXd& std_tabular,
    const std::vector<const ImageTile*>& tiles);

/// Model configuration and raw tabular design for one trainable estimation
/// specification: tabular covariates + fixed effects without imagery,
/// imagery alone, or both streams fused. The unadjusted specification has
/// nothing to train and is rejected with ValidationError.
struct SpecTrainInputs {
  ModelConfig model;
  TabularDesign design;
};

SpecTrainInputs make_spec_inputs(const PanelSlice& panel, Specification spec,
                                 const ModelConfig& base);

}  // namespace geocause
