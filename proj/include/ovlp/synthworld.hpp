#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ovlp/geom3d.hpp"
#include "ovlp/matrix.hpp"

namespace ovlp {

struct SceneObject {
  Aabb3 box;
  int class_id = 0;
  int color_id = 0;
  int object_id = 0;

  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

enum class SplitTag { Unique, Multiple };
const char* split_name(SplitTag t);

enum class Relation { None = 0, Leftmost = 1, Rightmost = 2, NearestToClass = 3 };
inline constexpr int kRelationCount = 4;

/// One (scene, target, description) triple.
struct SceneSample {
  std::string scene_id;
  std::vector<SceneObject> objects;
  std::vector<Aabb3> proposals;
  Matrix proposal_features;  // one row per proposal: box params ++ class scores ++ color scores
  int target_object_id = 0;
  std::vector<double> description_code;
  int qa_answer_id = 0;
  SplitTag split_tag = SplitTag::Unique;

  const SceneObject& target() const;

  friend bool operator==(const SceneSample&, const SceneSample&) = default;
};

struct GeneratorParams {
  std::uint64_t seed = 7;
  int n_scenes = 200;
  int objects_per_scene = 6;
  int jitter_per_object = 4;
  int clutter_per_scene = 8;
  double noise_scale = 0.05;
  int num_classes = 8;
  int num_colors = 6;
  double attribute_noise = 0.1;  // gaussian added to attribute one-hots
  double attribute_flip = 0.1;   // chance a jitter reports a random class/color
  int max_attempts = 1000;       // scene rejection-sampling budget

  void validate() const;
  friend bool operator==(const GeneratorParams&, const GeneratorParams&) = default;
};

/// Proposal-coverage figures computed while generating.
struct GenerationAudit {
  std::size_t samples = 0;
  std::size_t unique_samples = 0;
  std::size_t multiple_samples = 0;
  double coverage_at_025 = 0.0;  // fraction of samples with a proposal at IoU >= 0.25
  double coverage_at_050 = 0.0;
  double mean_best_iou = 0.0;

  friend bool operator==(const GenerationAudit&, const GenerationAudit&) = default;
};

struct Dataset {
  int version = 1;
  GeneratorParams params;
  GenerationAudit audit;
  std::vector<SceneSample> samples;

  int num_classes() const { return params.num_classes; }
  int num_colors() const { return params.num_colors; }
  std::size_t feature_dim() const { return 6 + params.num_classes + params.num_colors; }
  std::size_t description_dim() const { return 2 * params.num_classes + params.num_colors + kRelationCount; }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Deterministic for a fixed seed. Throws Error(GenerationFailed) naming the
/// seed when rejection sampling runs out of attempts, or when the coverage
/// audit fails for a low-noise configuration.
Dataset generate(const GeneratorParams& params);

/// Fixed symbolic description: one-hots of class, color, relation tag and the
/// relation's reference class (all zero unless nearest-to-class).
std::vector<double> encode_description(int class_id, int color_id, Relation rel, int rel_class, int num_classes,
                                       int num_colors);

GenerationAudit audit(const std::vector<SceneSample>& samples);

/// JSON lines: a header record, then one SceneSample per line.
void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

std::string dataset_to_jsonl(const Dataset& ds);
Dataset dataset_from_jsonl(const std::string& text);

}  // namespace ovlp
