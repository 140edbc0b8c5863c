#include "ovlp/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>

#include "json.hpp"
#include "ovlp/error.hpp"
#include "ovlp/rng.hpp"

namespace ovlp {

using nlohmann::json;

const char* split_name(SplitTag t) { return t == SplitTag::Unique ? "unique" : "multiple"; }

const SceneObject& SceneSample::target() const {
  for (const SceneObject& o : objects)
    if (o.object_id == target_object_id) return o;
  reject("sample " + scene_id + ": target " + std::to_string(target_object_id) + " is not an object of the scene");
}

void GeneratorParams::validate() const {
  if (n_scenes < 1 || objects_per_scene < 1 || jitter_per_object < 1 || clutter_per_scene < 1) {
    reject("generator counts must be >= 1");
  }
  if (!(noise_scale >= 0.0)) reject("noise_scale must be >= 0");
  if (num_classes < 1 || num_colors < 1) reject("class and color counts must be >= 1");
  if (!(attribute_noise >= 0.0) || !(attribute_flip >= 0.0 && attribute_flip <= 1.0)) {
    reject("attribute noise settings out of range");
  }
  if (max_attempts < 1) reject("max_attempts must be >= 1");
}

std::vector<double> encode_description(int class_id, int color_id, Relation rel, int rel_class, int num_classes,
                                       int num_colors) {
  std::vector<double> code(2 * num_classes + num_colors + kRelationCount, 0.0);
  code[class_id] = 1.0;
  code[num_classes + color_id] = 1.0;
  code[num_classes + num_colors + static_cast<int>(rel)] = 1.0;
  if (rel == Relation::NearestToClass) code[num_classes + num_colors + kRelationCount + rel_class] = 1.0;
  return code;
}

namespace {

constexpr double kMinProposalExtent = 0.02;

// Canonical per-class extents; independent of the dataset seed so a class
// always has the same typical shape.
std::vector<Vec3> class_sizes(int num_classes) {
  Rng rng(0x5eed'c1a5'5e5ULL);
  std::vector<Vec3> sizes(num_classes);
  for (Vec3& s : sizes)
    for (double& v : s) v = rng.uniform(0.12, 0.32);
  return sizes;
}

struct TargetDescription {
  Relation rel = Relation::None;
  int rel_class = -1;
};

double planar_dist(const Aabb3& a, const Aabb3& b) {
  const double dx = a.center[0] - b.center[0], dy = a.center[1] - b.center[1];
  return std::sqrt(dx * dx + dy * dy);
}

// Relation that singles out `t` among objects sharing its class and color, or
// nullopt when none of the available relations does.
std::optional<TargetDescription> describe(const std::vector<SceneObject>& objs, std::size_t t, int num_classes) {
  std::vector<std::size_t> group;
  for (std::size_t i = 0; i < objs.size(); ++i)
    if (objs[i].class_id == objs[t].class_id && objs[i].color_id == objs[t].color_id) group.push_back(i);
  if (group.size() == 1) return TargetDescription{};

  auto strictly_extreme = [&](auto key, bool smallest) {
    for (std::size_t i : group) {
      if (i == t) continue;
      const double a = key(objs[t]), b = key(objs[i]);
      if (smallest ? !(a < b) : !(a > b)) return false;
    }
    return true;
  };
  auto x_of = [](const SceneObject& o) { return o.box.center[0]; };
  if (strictly_extreme(x_of, true)) return TargetDescription{Relation::Leftmost, -1};
  if (strictly_extreme(x_of, false)) return TargetDescription{Relation::Rightmost, -1};

  for (int x = 0; x < num_classes; ++x) {
    if (x == objs[t].class_id) continue;
    bool present = false;
    for (const SceneObject& o : objs) present = present || o.class_id == x;
    if (!present) continue;
    auto nearest = [&](const SceneObject& from) {
      double d = std::numeric_limits<double>::infinity();
      for (const SceneObject& o : objs)
        if (o.class_id == x) d = std::min(d, planar_dist(from.box, o.box));
      return d;
    };
    if (strictly_extreme(nearest, true)) return TargetDescription{Relation::NearestToClass, x};
  }
  return std::nullopt;
}

std::vector<double> noisy_one_hot(Rng& rng, int label, int n, const GeneratorParams& p) {
  std::vector<double> v(n, 0.0);
  v[label] = 1.0;
  for (double& x : v) x += p.attribute_noise * rng.normal();
  return v;
}

void append_features(Matrix& m, const Aabb3& box, const std::vector<double>& cls, const std::vector<double>& col) {
  const std::size_t r = m.rows++;
  m.data.resize(m.rows * m.cols);
  std::size_t j = 0;
  for (double v : box.center) m(r, j++) = v;
  for (double v : box.size) m(r, j++) = v;
  for (double v : cls) m(r, j++) = v;
  for (double v : col) m(r, j++) = v;
}

struct Scene {
  std::vector<SceneObject> objects;
  std::vector<TargetDescription> descriptions;
};

std::optional<Scene> try_scene(Rng& rng, const GeneratorParams& p, const std::vector<Vec3>& sizes) {
  Scene s;
  for (int k = 0; k < p.objects_per_scene; ++k) {
    SceneObject o;
    o.object_id = k;
    o.class_id = static_cast<int>(rng.below(p.num_classes));
    o.color_id = static_cast<int>(rng.below(p.num_colors));
    Vec3 size;
    for (int i = 0; i < 3; ++i) size[i] = sizes[o.class_id][i] * rng.uniform(0.9, 1.1);
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      // Resting on the floor of the unit room.
      const Vec3 c{rng.uniform(0.5 * size[0], 1.0 - 0.5 * size[0]), rng.uniform(0.5 * size[1], 1.0 - 0.5 * size[1]),
                   0.5 * size[2]};
      o.box = Aabb3::make(c, size);
      placed = std::all_of(s.objects.begin(), s.objects.end(),
                           [&](const SceneObject& other) { return iou(other.box, o.box) <= 0.05; });
    }
    if (!placed) return std::nullopt;
    s.objects.push_back(o);
  }
  for (std::size_t t = 0; t < s.objects.size(); ++t) {
    auto d = describe(s.objects, t, p.num_classes);
    if (!d) return std::nullopt;
    s.descriptions.push_back(*d);
  }
  return s;
}

// Gaussian jitter with sd 0.7 * noise on the center and 0.5 * noise on each
// extent (scene units), extents resampled until above the minimum.
Aabb3 jitter(Rng& rng, const Aabb3& src, double noise) {
  Aabb3 b = src;
  for (int i = 0; i < 3; ++i) b.center[i] += 0.7 * noise * rng.normal();
  for (int i = 0; i < 3; ++i) {
    double v;
    do {
      v = src.size[i] + 0.5 * noise * rng.normal();
    } while (v <= kMinProposalExtent);
    b.size[i] = v;
  }
  return b;
}

}  // namespace

GenerationAudit audit(const std::vector<SceneSample>& samples) {
  GenerationAudit a;
  a.samples = samples.size();
  if (samples.empty()) return a;
  std::size_t c25 = 0, c50 = 0;
  double sum_best = 0.0;
  for (const SceneSample& s : samples) {
    (s.split_tag == SplitTag::Unique ? a.unique_samples : a.multiple_samples)++;
    double best = 0.0;
    const Aabb3& gt = s.target().box;
    for (const Aabb3& b : s.proposals) best = std::max(best, iou(b, gt));
    c25 += best >= 0.25;
    c50 += best >= 0.5;
    sum_best += best;
  }
  const double n = static_cast<double>(samples.size());
  a.coverage_at_025 = static_cast<double>(c25) / n;
  a.coverage_at_050 = static_cast<double>(c50) / n;
  a.mean_best_iou = sum_best / n;
  return a;
}

Dataset generate(const GeneratorParams& p) {
  p.validate();
  Dataset ds;
  ds.params = p;
  const std::vector<Vec3> sizes = class_sizes(p.num_classes);
  Rng rng(p.seed);

  for (int scene = 0; scene < p.n_scenes; ++scene) {
    std::optional<Scene> s;
    for (int attempt = 0; attempt < p.max_attempts && !s; ++attempt) s = try_scene(rng, p, sizes);
    if (!s) {
      throw Error(ErrorCode::GenerationFailed, "generation failed for seed " + std::to_string(p.seed) + ": scene " +
                                                   std::to_string(scene) + " exhausted " +
                                                   std::to_string(p.max_attempts) + " placement attempts");
    }

    std::vector<Aabb3> boxes;
    std::vector<std::vector<double>> cls, col;
    for (const SceneObject& o : s->objects) {
      for (int j = 0; j < p.jitter_per_object; ++j) {
        boxes.push_back(p.noise_scale == 0.0 ? o.box : jitter(rng, o.box, p.noise_scale));
        const int c = rng.uniform() < p.attribute_flip ? static_cast<int>(rng.below(p.num_classes)) : o.class_id;
        const int k = rng.uniform() < p.attribute_flip ? static_cast<int>(rng.below(p.num_colors)) : o.color_id;
        cls.push_back(noisy_one_hot(rng, c, p.num_classes, p));
        col.push_back(noisy_one_hot(rng, k, p.num_colors, p));
      }
    }
    for (int j = 0; j < p.clutter_per_scene; ++j) {
      Vec3 size;
      for (double& v : size) v = rng.uniform(0.05, 0.3);
      // Same vertical center noise as the object proposals.
      const double z = 0.5 * size[2] + 0.7 * p.noise_scale * rng.normal();
      const Vec3 c{rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), z};
      boxes.push_back(Aabb3::make(c, size));
      cls.push_back(noisy_one_hot(rng, static_cast<int>(rng.below(p.num_classes)), p.num_classes, p));
      col.push_back(noisy_one_hot(rng, static_cast<int>(rng.below(p.num_colors)), p.num_colors, p));
    }
    // Fisher-Yates so proposal order carries no information.
    std::vector<std::size_t> order(boxes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[rng.below(i + 1)]);

    std::vector<Aabb3> proposals;
    Matrix features(0, 6 + p.num_classes + p.num_colors);
    for (std::size_t i : order) {
      proposals.push_back(boxes[i]);
      append_features(features, boxes[i], cls[i], col[i]);
    }

    char id[32];
    std::snprintf(id, sizeof id, "scene_%04d", scene);
    for (std::size_t t = 0; t < s->objects.size(); ++t) {
      const SceneObject& tgt = s->objects[t];
      SceneSample smp;
      smp.scene_id = id;
      smp.objects = s->objects;
      smp.proposals = proposals;
      smp.proposal_features = features;
      smp.target_object_id = tgt.object_id;
      smp.description_code = encode_description(tgt.class_id, tgt.color_id, s->descriptions[t].rel,
                                                s->descriptions[t].rel_class, p.num_classes, p.num_colors);
      smp.qa_answer_id = tgt.color_id;
      const auto same_class = std::count_if(s->objects.begin(), s->objects.end(),
                                            [&](const SceneObject& o) { return o.class_id == tgt.class_id; });
      smp.split_tag = same_class == 1 ? SplitTag::Unique : SplitTag::Multiple;
      ds.samples.push_back(std::move(smp));
    }
  }

  ds.audit = audit(ds.samples);
  if (p.noise_scale <= 0.05 && p.jitter_per_object >= 4 && ds.audit.coverage_at_025 < 0.99) {
    throw Error(ErrorCode::GenerationFailed,
                "generation audit failed for seed " + std::to_string(p.seed) + ": only " +
                    std::to_string(ds.audit.coverage_at_025) + " of samples have a proposal with IoU >= 0.25");
  }
  return ds;
}

// ---------------------------------------------------------------------------
// JSON lines

namespace {

json box_json(const Aabb3& b) { return {{"center", b.center}, {"size", b.size}}; }

json params_json(const GeneratorParams& p) {
  return {{"n_scenes", p.n_scenes},
          {"objects_per_scene", p.objects_per_scene},
          {"jitter_per_object", p.jitter_per_object},
          {"clutter_per_scene", p.clutter_per_scene},
          {"noise_scale", p.noise_scale},
          {"attribute_noise", p.attribute_noise},
          {"attribute_flip", p.attribute_flip},
          {"max_attempts", p.max_attempts}};
}

json audit_json(const GenerationAudit& a) {
  return {{"samples", a.samples},
          {"unique_samples", a.unique_samples},
          {"multiple_samples", a.multiple_samples},
          {"coverage_at_025", a.coverage_at_025},
          {"coverage_at_050", a.coverage_at_050},
          {"mean_best_iou", a.mean_best_iou}};
}

json sample_json(const SceneSample& s) {
  json objects = json::array();
  for (const SceneObject& o : s.objects) {
    objects.push_back({{"object_id", o.object_id},
                       {"class_id", o.class_id},
                       {"color_id", o.color_id},
                       {"center", o.box.center},
                       {"size", o.box.size}});
  }
  json proposals = json::array();
  for (const Aabb3& b : s.proposals) proposals.push_back(box_json(b));
  json features = json::array();
  for (std::size_t r = 0; r < s.proposal_features.rows; ++r) {
    auto row = s.proposal_features.row(r);
    features.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return {{"scene_id", s.scene_id},
          {"objects", objects},
          {"proposals", proposals},
          {"proposal_features", features},
          {"target_object_id", s.target_object_id},
          {"description_code", s.description_code},
          {"qa_answer_id", s.qa_answer_id},
          {"split_tag", split_name(s.split_tag)}};
}

// Field access that names the line and field on failure.
class LineReader {
 public:
  LineReader(const json& j, std::size_t line) : j_(j), line_(line) {}

  template <typename T>
  T get(const json& parent, const std::string& field, const std::string& path) const {
    if (!parent.is_object() || !parent.contains(field)) fail(path + field, "missing");
    try {
      return parent.at(field).get<T>();
    } catch (const json::exception&) {
      fail(path + field, "has the wrong type");
    }
  }
  template <typename T>
  T get(const std::string& field) const {
    return get<T>(j_, field, "");
  }

  Aabb3 box(const json& parent, const std::string& path) const {
    Aabb3 b{get<Vec3>(parent, "center", path), get<Vec3>(parent, "size", path)};
    if (!b.valid()) fail(path + "size", "must be positive");
    return b;
  }

  [[noreturn]] void fail(const std::string& field, const std::string& what) const {
    throw Error(ErrorCode::Parse, "line " + std::to_string(line_) + ": field '" + field + "' " + what);
  }

  const json& doc() const { return j_; }

 private:
  const json& j_;
  std::size_t line_;
};

SceneSample parse_sample(const LineReader& r, const Dataset& ds) {
  SceneSample s;
  s.scene_id = r.get<std::string>("scene_id");
  const json& objs = r.doc().contains("objects") ? r.doc().at("objects") : json();
  if (!objs.is_array()) r.fail("objects", "must be an array");
  for (std::size_t i = 0; i < objs.size(); ++i) {
    const std::string path = "objects[" + std::to_string(i) + "].";
    SceneObject o;
    o.object_id = r.get<int>(objs[i], "object_id", path);
    o.class_id = r.get<int>(objs[i], "class_id", path);
    o.color_id = r.get<int>(objs[i], "color_id", path);
    o.box = r.box(objs[i], path);
    if (o.class_id < 0 || o.class_id >= ds.num_classes()) r.fail(path + "class_id", "out of range");
    if (o.color_id < 0 || o.color_id >= ds.num_colors()) r.fail(path + "color_id", "out of range");
    s.objects.push_back(o);
  }
  const json& props = r.doc().contains("proposals") ? r.doc().at("proposals") : json();
  if (!props.is_array()) r.fail("proposals", "must be an array");
  for (std::size_t i = 0; i < props.size(); ++i) s.proposals.push_back(r.box(props[i], "proposals[" + std::to_string(i) + "]."));

  const auto feats = r.get<std::vector<std::vector<double>>>("proposal_features");
  if (feats.size() != s.proposals.size()) r.fail("proposal_features", "must have one row per proposal");
  s.proposal_features = Matrix(0, ds.feature_dim());
  for (std::size_t i = 0; i < feats.size(); ++i) {
    if (feats[i].size() != ds.feature_dim()) {
      r.fail("proposal_features[" + std::to_string(i) + "]", "must have " + std::to_string(ds.feature_dim()) + " entries");
    }
    s.proposal_features.data.insert(s.proposal_features.data.end(), feats[i].begin(), feats[i].end());
    ++s.proposal_features.rows;
  }
  s.target_object_id = r.get<int>("target_object_id");
  if (std::none_of(s.objects.begin(), s.objects.end(),
                   [&](const SceneObject& o) { return o.object_id == s.target_object_id; })) {
    r.fail("target_object_id", "does not name an object of the scene");
  }
  s.description_code = r.get<std::vector<double>>("description_code");
  if (s.description_code.size() != ds.description_dim()) {
    r.fail("description_code", "must have " + std::to_string(ds.description_dim()) + " entries");
  }
  s.qa_answer_id = r.get<int>("qa_answer_id");
  if (s.qa_answer_id < 0 || s.qa_answer_id >= ds.num_colors()) r.fail("qa_answer_id", "out of range");
  const auto tag = r.get<std::string>("split_tag");
  if (tag == "unique") {
    s.split_tag = SplitTag::Unique;
  } else if (tag == "multiple") {
    s.split_tag = SplitTag::Multiple;
  } else {
    r.fail("split_tag", "must be \"unique\" or \"multiple\"");
  }
  return s;
}

}  // namespace

std::string dataset_to_jsonl(const Dataset& ds) {
  std::string out;
  json header = {{"record", "header"},        {"version", ds.version},   {"seed", ds.params.seed},
                 {"C", ds.params.num_classes}, {"A", ds.params.num_colors}, {"generator", params_json(ds.params)},
                 {"audit", audit_json(ds.audit)}};
  out += header.dump();
  out += '\n';
  for (const SceneSample& s : ds.samples) {
    out += sample_json(s).dump();
    out += '\n';
  }
  return out;
}

Dataset dataset_from_jsonl(const std::string& text) {
  Dataset ds;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::Parse, "line " + std::to_string(lineno) + ": not valid JSON (" + e.what() + ")");
    }
    LineReader r(j, lineno);
    if (first && j.is_object() && j.contains("record") && j.at("record") == "header") {
      ds.version = r.get<int>("version");
      ds.params.seed = r.get<std::uint64_t>("seed");
      ds.params.num_classes = r.get<int>("C");
      ds.params.num_colors = r.get<int>("A");
      if (j.contains("generator")) {
        const json& g = j.at("generator");
        ds.params.n_scenes = r.get<int>(g, "n_scenes", "generator.");
        ds.params.objects_per_scene = r.get<int>(g, "objects_per_scene", "generator.");
        ds.params.jitter_per_object = r.get<int>(g, "jitter_per_object", "generator.");
        ds.params.clutter_per_scene = r.get<int>(g, "clutter_per_scene", "generator.");
        ds.params.noise_scale = r.get<double>(g, "noise_scale", "generator.");
        ds.params.attribute_noise = r.get<double>(g, "attribute_noise", "generator.");
        ds.params.attribute_flip = r.get<double>(g, "attribute_flip", "generator.");
        ds.params.max_attempts = r.get<int>(g, "max_attempts", "generator.");
      }
      if (j.contains("audit")) {
        const json& a = j.at("audit");
        ds.audit.samples = r.get<std::size_t>(a, "samples", "audit.");
        ds.audit.unique_samples = r.get<std::size_t>(a, "unique_samples", "audit.");
        ds.audit.multiple_samples = r.get<std::size_t>(a, "multiple_samples", "audit.");
        ds.audit.coverage_at_025 = r.get<double>(a, "coverage_at_025", "audit.");
        ds.audit.coverage_at_050 = r.get<double>(a, "coverage_at_050", "audit.");
        ds.audit.mean_best_iou = r.get<double>(a, "mean_best_iou", "audit.");
      }
      if (ds.params.num_classes < 1 || ds.params.num_colors < 1) r.fail("C", "and A must be >= 1");
      first = false;
      continue;
    }
    first = false;
    if (!j.is_object()) throw Error(ErrorCode::Parse, "line " + std::to_string(lineno) + ": record is not an object");
    ds.samples.push_back(parse_sample(r, ds));
  }
  return ds;
}

void write_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open '" + path + "' for writing");
  out << dataset_to_jsonl(ds);
  if (!out) throw Error(ErrorCode::Io, "write to '" + path + "' failed");
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return dataset_from_jsonl(buf.str());
}

}  // namespace ovlp
