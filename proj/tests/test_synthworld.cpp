#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "ovlp/error.hpp"
#include "ovlp/synthworld.hpp"
#include "support.hpp"

using namespace ovlp;

namespace {

GeneratorParams small(std::uint64_t seed, int scenes = 20) {
  GeneratorParams p;
  p.seed = seed;
  p.n_scenes = scenes;
  return p;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("ovlp_test_" + name)).string();
}

int argmax_range(const std::vector<double>& v, std::size_t from, std::size_t count) {
  std::size_t best = from;
  for (std::size_t i = from; i < from + count; ++i)
    if (v[i] > v[best]) best = i;
  return static_cast<int>(best - from);
}

double planar(const Aabb3& a, const Aabb3& b) { return std::hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]); }

// Decodes the description and counts the objects it could refer to.
std::size_t referents(const SceneSample& s, int C, int A) {
  const auto& code = s.description_code;
  const int cls = argmax_range(code, 0, C), color = argmax_range(code, C, A);
  const int rel = argmax_range(code, C + A, kRelationCount);
  const int ref = rel == static_cast<int>(Relation::NearestToClass) ? argmax_range(code, C + A + kRelationCount, C) : -1;
  std::vector<const SceneObject*> group;
  for (const SceneObject& o : s.objects)
    if (o.class_id == cls && o.color_id == color) group.push_back(&o);
  if (rel == static_cast<int>(Relation::None)) return group.size();

  auto key = [&](const SceneObject& o) {
    if (rel == static_cast<int>(Relation::Leftmost)) return o.box.center[0];
    if (rel == static_cast<int>(Relation::Rightmost)) return -o.box.center[0];
    double d = 1e9;
    for (const SceneObject& r : s.objects)
      if (r.class_id == ref) d = std::min(d, planar(o.box, r.box));
    return d;
  };
  double best = 1e18;
  for (const SceneObject* o : group) best = std::min(best, key(*o));
  std::size_t n = 0;
  for (const SceneObject* o : group) n += key(*o) == best;
  return n;
}

}  // namespace

TEST_SUITE("synthworld") {
  TEST_CASE("parameter validation") {
    GeneratorParams p = small(1);
    p.n_scenes = 0;
    CHECK_THROWS_AS(generate(p), Error);
    p = small(1);
    p.noise_scale = -0.1;
    CHECK_THROWS_AS(generate(p), Error);
  }

  TEST_CASE("deterministic for a fixed seed") {
    const Dataset a = generate(small(3)), b = generate(small(3)), c = generate(small(4));
    CHECK(a == b);
    CHECK(dataset_to_jsonl(a) == dataset_to_jsonl(b));
    CHECK_FALSE(a == c);
  }

  TEST_CASE("structure of generated samples") {
    const Dataset ds = generate(small(5, 40));
    const GeneratorParams& p = ds.params;
    CHECK(ds.samples.size() == static_cast<std::size_t>(p.n_scenes * p.objects_per_scene));
    for (const SceneSample& s : ds.samples) {
      CHECK(s.objects.size() == static_cast<std::size_t>(p.objects_per_scene));
      CHECK(s.proposals.size() ==
            static_cast<std::size_t>(p.objects_per_scene * p.jitter_per_object + p.clutter_per_scene));
      CHECK(s.proposal_features.rows == s.proposals.size());
      CHECK(s.proposal_features.cols == ds.feature_dim());
      CHECK(s.description_code.size() == ds.description_dim());
      CHECK(s.qa_answer_id == s.target().color_id);

      // Split predicate.
      int same_class = 0;
      for (const SceneObject& o : s.objects) same_class += o.class_id == s.target().class_id;
      CHECK((s.split_tag == SplitTag::Unique) == (same_class == 1));

      // Objects overlap at most slightly.
      for (std::size_t i = 0; i < s.objects.size(); ++i)
        for (std::size_t j = i + 1; j < s.objects.size(); ++j) CHECK(iou(s.objects[i].box, s.objects[j].box) <= 0.05);

      CHECK(referents(s, ds.num_classes(), ds.num_colors()) == 1);
    }
    CHECK(ds.audit.unique_samples + ds.audit.multiple_samples == ds.samples.size());
    CHECK(ds.audit.multiple_samples > 0);
  }

  TEST_CASE("zero noise reproduces the objects") {
    GeneratorParams p = small(9, 10);
    p.noise_scale = 0.0;
    const Dataset ds = generate(p);
    for (const SceneSample& s : ds.samples) {
      for (const SceneObject& o : s.objects) {
        int exact = 0;
        for (const Aabb3& b : s.proposals) exact += iou(b, o.box) == 1.0;
        CHECK(exact >= p.jitter_per_object);
      }
    }
    CHECK(ds.audit.coverage_at_050 == 1.0);
  }

  TEST_CASE("audit matches a recount") {
    const Dataset ds = generate(small(7, 200));
    std::size_t c25 = 0, c50 = 0;
    for (const SceneSample& s : ds.samples) {
      double best = 0.0;
      for (const Aabb3& b : s.proposals) best = std::max(best, iou(b, s.target().box));
      c25 += best >= 0.25;
      c50 += best >= 0.5;
    }
    const double n = static_cast<double>(ds.samples.size());
    CHECK(ds.audit.coverage_at_025 == c25 / n);
    CHECK(ds.audit.coverage_at_050 == c50 / n);
    CHECK(ds.audit.coverage_at_025 >= 0.99);
    CHECK(audit(ds.samples) == ds.audit);
  }

  TEST_CASE("description encoding") {
    const auto code = encode_description(2, 1, Relation::NearestToClass, 4, 8, 6);
    CHECK(code.size() == 2 * 8 + 6 + kRelationCount);
    CHECK(code[2] == 1.0);
    CHECK(code[8 + 1] == 1.0);
    CHECK(code[8 + 6 + 3] == 1.0);
    CHECK(code[8 + 6 + kRelationCount + 4] == 1.0);
    double sum = 0.0;
    for (double v : code) sum += v;
    CHECK(sum == 4.0);
  }

  TEST_CASE("file round trip") {
    const Dataset ds = generate(small(11));
    const std::string path = temp_path("roundtrip.jsonl");
    write_dataset(ds, path);
    CHECK(read_dataset(path) == ds);
    std::remove(path.c_str());

    Dataset empty;
    const std::string epath = temp_path("empty.jsonl");
    write_dataset(empty, epath);
    CHECK(read_dataset(epath).samples.empty());
    std::remove(epath.c_str());
    { std::ofstream(epath).flush(); }
    CHECK(read_dataset(epath).samples.empty());
    std::remove(epath.c_str());

    CHECK_THROWS_AS(read_dataset(temp_path("does_not_exist.jsonl")), Error);
  }

  TEST_CASE("hand-written fixture") {
    const std::string header = R"({"record":"header","version":1,"seed":3,"C":2,"A":2})";
    const std::string line =
        R"({"scene_id":"s0","objects":[{"object_id":0,"class_id":1,"color_id":0,"center":[0.5,0.5,0.1],"size":[0.2,0.2,0.2]}],)"
        R"("proposals":[{"center":[0.5,0.5,0.1],"size":[0.2,0.2,0.2]}],)"
        R"("proposal_features":[[0.5,0.5,0.1,0.2,0.2,0.2,0,1,1,0]],)"
        R"("target_object_id":0,"description_code":[0,1,1,0,1,0,0,0,0,0],"qa_answer_id":0,"split_tag":"unique"})";
    const Dataset ds = dataset_from_jsonl(header + "\n" + line + "\n");
    CHECK(ds.params.seed == 3);
    CHECK(ds.num_classes() == 2);
    REQUIRE(ds.samples.size() == 1);
    const SceneSample& s = ds.samples[0];
    CHECK(s.scene_id == "s0");
    REQUIRE(s.objects.size() == 1);
    CHECK(s.objects[0].class_id == 1);
    CHECK(s.objects[0].box == Aabb3::make({0.5, 0.5, 0.1}, {0.2, 0.2, 0.2}));
    CHECK(s.proposals == std::vector<Aabb3>{Aabb3::make({0.5, 0.5, 0.1}, {0.2, 0.2, 0.2})});
    CHECK(s.proposal_features(0, 7) == 1.0);
    CHECK(s.description_code == encode_description(1, 0, Relation::None, -1, 2, 2));
    CHECK(s.split_tag == SplitTag::Unique);
  }

  TEST_CASE("malformed lines name the line and field") {
    const Dataset ds = generate(small(13, 3));
    const std::string text = dataset_to_jsonl(ds);
    auto message_for = [](const std::string& t) {
      try {
        dataset_from_jsonl(t);
      } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Parse);
        return std::string(e.what());
      }
      return std::string("no error");
    };
    // Third line is the second sample.
    std::string broken = text;
    const std::size_t second = broken.find('\n', broken.find('\n') + 1) + 1;
    const std::size_t pos = broken.find("\"qa_answer_id\"", second);
    broken.replace(pos, 14, "\"qa_answer_xx\"");
    const std::string msg = message_for(broken);
    CHECK(msg.find("line 3") != std::string::npos);
    CHECK(msg.find("qa_answer_id") != std::string::npos);

    std::string bad_json = text;
    bad_json.insert(second, "{not json\n");
    CHECK(message_for(bad_json).find("line 3") != std::string::npos);

    std::string bad_box = text;
    const std::size_t size_pos = bad_box.find("\"size\":[", second) + 8;
    bad_box.insert(size_pos, "-");
    const std::string box_msg = message_for(bad_box);
    CHECK(box_msg.find("line 3") != std::string::npos);
    CHECK(box_msg.find("size") != std::string::npos);
  }
}
