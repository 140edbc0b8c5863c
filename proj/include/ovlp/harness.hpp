#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ovlp/contrastive.hpp"
#include "ovlp/diffkit.hpp"
#include "ovlp/iou_filter.hpp"
#include "ovlp/metrics.hpp"
#include "ovlp/objectives.hpp"
#include "ovlp/synthworld.hpp"

namespace ovlp {

struct ModuleToggles {
  bool oid = true;
  bool occ = true;
  bool osc = true;

  friend bool operator==(const ModuleToggles&, const ModuleToggles&) = default;
};

struct OptimizerSettings {
  double lr = 0.05;
  double momentum = 0.9;
  int epochs = 30;
  int batch_size = 8;
};

/// Downstream QA stage run after the proxy pre-training.
struct QaSettings {
  int epochs = 10;
  bool freeze_encoders = true;
  // false: skip the proxy stage and train grounding + QA from random init.
  bool pretrain = true;
};

struct RunConfig {
  std::string train_data;
  std::string eval_data;  // empty: evaluate on train_data

  MlpSpec proposal_encoder{{20, 32, 16}, Nonlinearity::Tanh, true};
  MlpSpec text_encoder{{26, 32, 16}, Nonlinearity::Tanh, true};
  MlpSpec fusion_head{{48, 32, 1}, Nonlinearity::Tanh, false};
  MlpSpec box_head{{36, 32, 6}, Nonlinearity::Tanh, false};
  MlpSpec qa_head{{32, 6}, Nonlinearity::Tanh, false};

  FilterConfig filter;
  SimilarityConfig similarity;
  LossWeights loss_weights;
  ModuleToggles toggles;
  OptimizerSettings optimizer;
  QaSettings qa;
  std::uint64_t seed = 1;
  std::vector<double> eval_thresholds{0.25, 0.5};
  std::vector<std::size_t> em_k{1, 10};
  int threads = 1;  // ablate/sweep only

  void validate() const;
  // Dimension agreement between the networks and a dataset.
  void validate_for(const Dataset& ds) const;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);

  /// FNV-1a over the model-defining fields (paths, thresholds and thread
  /// count excluded), hex encoded.
  std::string hash() const;
};

/// Per-sample prediction consumed by evaluation.
struct Prediction {
  std::size_t selected = 0;  // highest matching score, lowest index on ties
  Aabb3 box;                 // selected proposal after box refinement
  std::vector<int> ranked_answers;
};

/// Proposal encoder, text encoder, fusion scorer, box-offset head and QA head.
class GroundingModel {
 public:
  explicit GroundingModel(const RunConfig& cfg);

  void init(std::uint64_t seed);
  const RunConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  /// Loss terms of one batch; with `with_grad` also accumulates d total / d params.
  struct BatchTerms {
    TermValues terms;
    LossReport report;
  };
  enum class Stage { Pretrain, Finetune, Scratch };
  BatchTerms batch_loss(std::span<const SceneSample* const> batch, Stage stage, bool with_grad);

  /// Same total as batch_loss, evaluated in long double without gradients;
  /// the finite-difference side of gradient checks.
  long double precise_loss(std::span<const SceneSample* const> batch, Stage stage) const;

  Prediction predict(const SceneSample& s) const;

  /// QA head input [H_top, T] under the current encoders and fusion head.
  std::vector<double> qa_input(const SceneSample& s) const;
  /// Weighted QA loss on precomputed head inputs; gradients reach the QA head only.
  double qa_head_loss(std::span<const std::vector<double>* const> inputs, std::span<const int> answers,
                      bool with_grad);

  /// Box after applying offsets (center += size * d[0:3], size *= exp(d[3:6])).
  static Aabb3 refine(const Aabb3& box, std::span<const double> offsets);

  nlohmann::json checkpoint_json() const;
  static GroundingModel from_checkpoint(const nlohmann::json& doc);
  void save(const std::string& path) const;
  static GroundingModel load(const std::string& path);

  // Scales analytic gradients of the fusion head; gradcheck negative control.
  void set_gradient_corruption(double factor) { corruption_ = factor; }

 private:
  RunConfig cfg_;
  ParamStore store_;
  Mlp proposal_encoder_, text_encoder_, fusion_, box_head_, qa_head_;
  double corruption_ = 1.0;
};

struct EpochLog {
  std::string stage;
  int epoch = 0;
  LossReport mean;  // mean over steps of each term present
  std::size_t steps = 0;
};

struct TrainLog {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<EpochLog> epochs;
  MetricReport final_report;
  double wall_clock_seconds = 0.0;

  nlohmann::json to_json() const;
};

struct TrainResult {
  GroundingModel model;
  TrainLog log;
};

/// Deterministic given cfg.seed. Throws Error(Diverged) naming the step on a
/// non-finite loss.
TrainResult train(const RunConfig& cfg, const Dataset& train_data, const Dataset& eval_data);

std::vector<Prediction> predict_all(const GroundingModel& model, const Dataset& ds);

/// 0.5 * [class read off the selected proposal matches the target]
/// + 0.5 * [top QA answer matches the target color].
double caption_surrogate(const SceneSample& s, const Prediction& p);

MetricReport evaluate_predictions(const Dataset& ds, std::span<const Prediction> preds,
                                  std::span<const double> thresholds, std::span<const std::size_t> em_k);
MetricReport evaluate(const GroundingModel& model, const Dataset& ds);
/// Refuses when `cfg` is given and its hash differs from the checkpoint's.
MetricReport evaluate_checkpoint(const nlohmann::json& checkpoint, const Dataset& ds, const RunConfig* cfg);

/// Picks the proposal with the highest IoU; used to check evaluation against
/// the generator's coverage audit.
std::vector<Prediction> oracle_predictions(const Dataset& ds);

struct AblationRow {
  std::string name;
  ModuleToggles toggles;
};
std::vector<AblationRow> ablation_rows();

struct CellStats {
  double median = 0.0, min = 0.0, max = 0.0;
};

struct AblationCell {
  std::string row;
  std::vector<std::uint64_t> seeds;
  std::vector<std::optional<MetricReport>> reports;  // nullopt: run failed
  std::vector<std::string> failures;
  std::map<std::string, CellStats> stats;  // over successful runs, overall split
  bool failed = false;
};

struct AblationTable {
  std::vector<AblationCell> cells;
  nlohmann::json to_json() const;
  std::string to_text() const;
  const AblationCell& cell(const std::string& row) const;
};

AblationTable ablate(const RunConfig& base, std::span<const AblationRow> rows, std::span<const std::uint64_t> seeds,
                     const Dataset& train_data, const Dataset& eval_data);

struct SweepPoint {
  double delta = 0.0;
  std::string variant;  // "full" or "oid_only"
  CellStats acc25, acc50;
  bool failed = false;
};

struct SweepResult {
  std::vector<SweepPoint> points;
  // Median Acc@0.5 of the full model at the largest delta does not exceed the
  // best median over the smaller deltas.
  bool drops_at_large_delta = false;
  nlohmann::json to_json() const;
  std::string csv(const std::string& variant, const std::string& metric) const;
};

SweepResult delta_sweep(const RunConfig& base, std::span<const double> deltas, std::span<const std::uint64_t> seeds,
                        const Dataset& train_data, const Dataset& eval_data);

struct CompositeGradcheck {
  std::vector<std::uint64_t> seeds;
  std::vector<GradcheckReport> reports;
  bool pass = false;
  nlohmann::json to_json() const;
};

/// Finite-difference check of the full pre-training loss at random init on a
/// small generated batch, once per seed.
CompositeGradcheck gradcheck_composite(const RunConfig& cfg, std::span<const std::uint64_t> seeds, double h,
                                       double tol, bool corrupt = false);

/// Pre-train + fine-tune versus training from scratch for the same number of
/// downstream epochs.
nlohmann::json compare_scratch(const RunConfig& base, std::span<const std::uint64_t> seeds, const Dataset& train_data,
                               const Dataset& eval_data);

std::string format_report_table(const MetricReport& r);

}  // namespace ovlp
