// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "extended.hpp"
#include "ovlp/contrastive.hpp"
#include "ovlp/error.hpp"
#include "ovlp/geom3d.hpp"
#include "ovlp/harness.hpp"
#include "ovlp/iou_filter.hpp"
#include "ovlp/metrics.hpp"
#include "ovlp/objectives.hpp"
#include "ovlp/synthworld.hpp"
#include "support.hpp"

using namespace ovlp;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Central difference of an extended-precision function at a double point,
// divided by the step that was actually taken.
double precise_central(const std::function<long double(std::span<const double>)>& f, std::vector<double> x,
                       std::size_t i, double h) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double xp = x[i];
  const long double fp = f(x);
  x[i] = x0 - h;
  const double xm = x[i];
  const long double fm = f(x);
  return static_cast<double>((fp - fm) / (static_cast<long double>(xp) - xm));
}

// ---------------------------------------------------------------------------

Outcome geometry() {
  Outcome o;
  const Aabb3 unit = Aabb3::make({0.5, 0.5, 0.5}, {1, 1, 1});
  const Aabb3 shifted = Aabb3::make({1.0, 0.5, 0.5}, {1, 1, 1});
  const Aabb3 far = Aabb3::make({5.0, 0.5, 0.5}, {1, 1, 1});
  const bool hand = iou(unit, unit) == 1.0 && iou(unit, far) == 0.0 && std::abs(iou(unit, shifted) - 1.0 / 3.0) <= 1e-12;
  o.pass = hand;

  Rng rng(2024);
  double worst = 0.0;
  int overlapping = 0;
  for (int t = 0; t < 100; ++t) {
    const Aabb3 a = testing::random_box(rng, 0.5), b = testing::random_box(rng, 0.5);
    const double closed = iou(a, b);
    overlapping += closed > 0.0;
    worst = std::max(worst, std::abs(closed - iou_oracle(a, b, 1'000'000, 1000 + t)));
  }
  o.pass = o.pass && worst <= 0.01;
  o.detail = "100 pairs (" + std::to_string(overlapping) + " overlapping), max |closed - sampled| = " + fmt(worst) +
             "; hand cases " + (hand ? "exact" : "WRONG");
  return o;
}

// ---------------------------------------------------------------------------

struct GradTally {
  int configs = 0;
  double worst = 0.0;
  void add(double e) { worst = std::max(worst, e); }
};

GradTally diou_gradients() {
  GradTally t;
  Rng rng(11);
  while (t.configs < 100) {
    const Aabb3 pred = testing::random_box(rng, 0.7), gt = testing::random_box(rng, 0.7);
    if (!testing::faces_apart(pred, gt, 1e-3)) continue;
    const BoxGrad g = diou_grad(pred, gt);
    const std::vector<double> p{pred.center[0], pred.center[1], pred.center[2], pred.size[0], pred.size[1], pred.size[2]};
    const auto f = [&](std::span<const double> x) {
      ext::Box b;
      std::copy(x.begin(), x.end(), b.begin());
      return ext::diou_loss(b, gt);
    };
    for (std::size_t i = 0; i < 6; ++i) t.add(testing::rel_err(g[i], precise_central(f, p, i, 1e-5)));
    ++t.configs;
  }
  return t;
}

EmbeddingSet random_set(Rng& rng, std::size_t n, std::size_t d, double delta) {
  EmbeddingSet s;
  s.proposal_embeddings = Matrix(n, d);
  for (double& v : s.proposal_embeddings.data) v = rng.normal() * 0.6;
  s.text_embedding.resize(d);
  for (double& v : s.text_embedding) v = rng.normal() * 0.6;
  std::vector<double> ious(n);
  for (double& v : ious) v = rng.uniform();
  FilterConfig fc;
  fc.delta = delta;
  s.partition = filter_ious(ious, fc);
  return s;
}

// Flattened (all proposal embeddings, then all text embeddings) view of a batch.
std::vector<double> flatten(const std::vector<EmbeddingSet>& batch) {
  std::vector<double> x;
  for (const auto& s : batch) x.insert(x.end(), s.proposal_embeddings.data.begin(), s.proposal_embeddings.data.end());
  for (const auto& s : batch) x.insert(x.end(), s.text_embedding.begin(), s.text_embedding.end());
  return x;
}

std::vector<double> flatten(const std::vector<EmbeddingGrad>& grads) {
  std::vector<double> x;
  for (const auto& g : grads) x.insert(x.end(), g.proposal_embeddings.data.begin(), g.proposal_embeddings.data.end());
  for (const auto& g : grads) x.insert(x.end(), g.text_embedding.begin(), g.text_embedding.end());
  return x;
}

// Batch mean of the per-sample term over samples that are not skipped, in long double.
long double precise_contrastive(const std::vector<EmbeddingSet>& shape, std::span<const double> x,
                                const SimilarityConfig& cfg, bool self) {
  std::size_t offset = 0, text_offset = 0;
  for (const auto& s : shape) text_offset += s.proposal_embeddings.data.size();
  long double sum = 0.0L;
  std::size_t used = 0;
  for (const auto& s : shape) {
    const std::size_t n = s.proposal_embeddings.rows, d = s.proposal_embeddings.cols;
    std::vector<ext::Vec> h(n);
    for (std::size_t p = 0; p < n; ++p) h[p] = ext::widen(x.subspan(offset + p * d, d));
    const ext::Vec t = ext::widen(x.subspan(text_offset, d));
    offset += n * d;
    text_offset += d;
    const std::size_t positives = s.partition.pos_indices.size();
    if (self ? positives < 2 : positives < 1) continue;
    sum += self ? ext::osc_sample(h, s.partition, cfg) : ext::occ_sample(h, t, s.partition, cfg);
    ++used;
  }
  return sum / static_cast<long double>(used);
}

GradTally contrastive_gradients(bool self) {
  GradTally t;
  Rng rng(self ? 23 : 19);
  while (t.configs < 100) {
    const std::size_t d = 2 + rng.below(15), b = 1 + rng.below(3);
    SimilarityConfig cfg;
    cfg.kind = rng.uniform() < 0.5 ? SimilarityKind::Dot : SimilarityKind::Cosine;
    cfg.temperature = rng.uniform(0.3, 2.0);
    std::vector<EmbeddingSet> batch;
    for (std::size_t i = 0; i < b; ++i) batch.push_back(random_set(rng, 2 + rng.below(8), d, rng.uniform(0.1, 0.6)));
    const auto r = self ? osc_loss(batch, cfg) : occ_loss(batch, cfg);
    if (!r) continue;
    const std::vector<double> x = flatten(batch), g = flatten(r->grads);
    const auto f = [&](std::span<const double> v) { return precise_contrastive(batch, v, cfg, self); };
    for (std::size_t i = 0; i < x.size(); ++i) {
      // The text embedding does not enter the self-contrast term.
      if (self && i >= x.size() - b * d) break;
      t.add(testing::rel_err(g[i], precise_central(f, x, i, 1e-5)));
    }
    ++t.configs;
  }
  return t;
}

GradTally ce_gradients() {
  GradTally t;
  Rng rng(29);
  for (; t.configs < 100; ++t.configs) {
    const std::size_t n = 2 + rng.below(20);
    std::vector<double> scores(n), target(n, 0.0);
    for (double& s : scores) s = rng.normal() * 2.0;
    if (rng.uniform() < 0.5) {
      target[rng.below(n)] = 1.0;
    } else {
      double mass = 0.0;
      for (double& v : target) mass += v = rng.uniform();
      for (double& v : target) v /= mass;
    }
    const CrossEntropyResult r = cross_entropy(scores, target);
    const auto f = [&](std::span<const double> x) { return ext::cross_entropy(ext::widen(x), target); };
    for (std::size_t i = 0; i < n; ++i) t.add(testing::rel_err(r.grad[i], precise_central(f, scores, i, 1e-5)));
  }
  return t;
}

GradTally composite_gradients() {
  GradTally t;
  Rng rng(31);
  for (; t.configs < 100; ++t.configs) {
    RunConfig cfg;
    const std::size_t d = 2 + rng.below(5);
    auto hidden = [&] { return 2 + rng.below(7); };
    cfg.proposal_encoder.layer_dims = {20, hidden(), d};
    cfg.text_encoder.layer_dims = {26, hidden(), d};
    cfg.fusion_head.layer_dims = {3 * d, hidden(), 1};
    cfg.box_head.layer_dims = {d + 20, hidden(), 6};
    cfg.qa_head.layer_dims = {2 * d, 6};
    cfg.similarity.kind = rng.uniform() < 0.5 ? SimilarityKind::Dot : SimilarityKind::Cosine;
    cfg.similarity.temperature = rng.uniform(0.5, 2.0);
    cfg.filter.delta = rng.uniform(0.1, 0.5);
    const std::vector<std::uint64_t> seed{100 + static_cast<std::uint64_t>(t.configs)};
    const CompositeGradcheck r = gradcheck_composite(cfg, seed, 1e-5, 1e-4);
    t.add(r.reports[0].worst);
  }
  return t;
}

Outcome gradients() {
  Outcome o;
  const auto check = [&](const std::string& name, const GradTally& t, double tol) {
    const bool ok = t.configs >= 100 && t.worst <= tol;
    o.pass = o.pass && ok;
    if (!o.detail.empty()) o.detail += "; ";
    o.detail += name + " " + std::to_string(t.configs) + " configs worst " + fmt(t.worst) + (ok ? "" : " (over tol)");
  };
  const auto t0 = std::chrono::steady_clock::now();
  check("diou", diou_gradients(), 1e-5);
  check("occ", contrastive_gradients(false), 1e-5);
  check("osc", contrastive_gradients(true), 1e-5);
  check("ce", ce_gradients(), 1e-5);
  check("composite", composite_gradients(), 1e-4);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs >= 120.0) {
    o.pass = false;
    o.detail += "; over the 2 min budget";
  }
  return o;
}

// ---------------------------------------------------------------------------

Outcome occ_reduction() {
  Outcome o;
  Rng rng(37);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + rng.below(12), d = 2 + rng.below(16);
    EmbeddingSet s = random_set(rng, n, d, 0.5);
    std::vector<double> ious(n, 0.1);
    const std::size_t pos = rng.below(n);
    ious[pos] = 0.9;
    s.partition = filter_ious(ious, FilterConfig{});
    SimilarityConfig cfg;
    cfg.kind = t % 2 ? SimilarityKind::Cosine : SimilarityKind::Dot;
    cfg.temperature = rng.uniform(0.2, 2.0);

    // -log(e^{s(H+, T)} / sum_p e^{s(H_p, T)}), plain arithmetic.
    double denom = 0.0, pos_score = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      double uv = 0.0, uu = 0.0, vv = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        uv += s.proposal_embeddings(p, i) * s.text_embedding[i];
        uu += s.proposal_embeddings(p, i) * s.proposal_embeddings(p, i);
        vv += s.text_embedding[i] * s.text_embedding[i];
      }
      const double score = cfg.kind == SimilarityKind::Dot ? uv / cfg.temperature
                                                            : uv / (std::sqrt(uu) * std::sqrt(vv) * cfg.temperature);
      denom += std::exp(score);
      if (p == pos) pos_score = score;
    }
    const double reference = std::log(denom) - pos_score;
    worst = std::max(worst, std::abs(occ_loss(std::vector{s}, cfg)->loss - reference));
  }
  o.pass = worst <= 1e-12;
  o.detail = "1000 single-positive instances, max |occ - pairwise| = " + fmt(worst);
  return o;
}

// ---------------------------------------------------------------------------

Outcome label_smoothing() {
  Outcome o;
  Rng rng(41);
  int violations = 0, smoothed = 0, one_hot = 0;
  double worst_sum = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + rng.below(15);
    std::vector<double> ious(n);
    for (double& v : ious) v = rng.uniform() < 0.1 ? 0.0 : rng.uniform();
    FilterConfig cfg;
    cfg.delta = rng.uniform(0.05, 0.9);
    cfg.epsilon = rng.uniform() < 0.15 ? 0.0 : rng.uniform(0.0, 0.5);
    const FilterResult r = filter_ious(ious, cfg);
    double sum = 0.0;
    for (double w : r.weights) {
      violations += w < 0.0;
      sum += w;
    }
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
    if (r.k_count >= 1 && cfg.epsilon > 0.0) {
      ++smoothed;
      violations += r.weights[r.argmax_index] != 1.0 - cfg.epsilon;
    }
    if (r.k_count == 0 || cfg.epsilon == 0.0) {
      ++one_hot;
      for (std::size_t p = 0; p < n; ++p) violations += r.weights[p] != (p == r.argmax_index ? 1.0 : 0.0);
    }
  }
  o.pass = violations == 0 && worst_sum <= 1e-12;
  o.detail = "1000 inputs (" + std::to_string(smoothed) + " smoothed, " + std::to_string(one_hot) +
             " one-hot), max |sum - 1| = " + fmt(worst_sum) + ", violations = " + std::to_string(violations);
  return o;
}

// ---------------------------------------------------------------------------

Outcome metric_algebra() {
  Outcome o;
  Rng rng(43);
  const Aabb3 gt = Aabb3::make({0.5, 0.5, 0.5}, {1, 1, 1});
  const std::vector<double> ks{0.05, 0.1, 0.25, 0.4, 0.5, 0.75, 0.9, 1.0};
  double worst = 0.0;
  int violations = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng.below(60);
    std::vector<GroundingOutcome> outs;
    std::vector<GatedScore> ones, scored;
    for (std::size_t i = 0; i < n; ++i) {
      const Aabb3 pred = rng.uniform() < 0.1 ? gt : testing::random_box(rng, 0.8);
      const SplitTag tag = rng.uniform() < 0.5 ? SplitTag::Unique : SplitTag::Multiple;
      outs.push_back({pred, gt, tag});
      ones.push_back({1.0, iou(pred, gt), tag});
      scored.push_back({rng.uniform(), iou(pred, gt), tag});
    }
    double prev_acc = 2.0, prev_m = 2.0;
    for (double k : ks) {
      const double acc = acc_at_k(outs, k).overall, m = m_at_k_iou(scored, k);
      worst = std::max(worst, std::abs(m_at_k_iou(ones, k) - acc));
      violations += acc > prev_acc;
      violations += m > prev_m;
      prev_acc = acc;
      prev_m = m;
    }

    const int answers = 3 + static_cast<int>(rng.below(8));
    std::vector<std::vector<int>> ranked(n);
    std::vector<std::set<int>> truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      ranked[i].resize(answers);
      std::iota(ranked[i].begin(), ranked[i].end(), 0);
      for (std::size_t a = ranked[i].size(); a-- > 1;) std::swap(ranked[i][a], ranked[i][rng.below(a + 1)]);
      truth[i].insert(static_cast<int>(rng.below(answers)));
      if (rng.uniform() < 0.3) truth[i].insert(static_cast<int>(rng.below(answers)));
    }
    double prev_em = -1.0;
    for (std::size_t k = 1; k <= static_cast<std::size_t>(answers) + 1; ++k) {
      const double em = em_at_k(ranked, truth, k);
      violations += em < prev_em;
      prev_em = em;
    }
  }
  o.pass = worst <= 1e-12 && violations == 0;
  o.detail = "100 sets, max |m@k(m=1) - Acc@k| = " + fmt(worst) + ", monotonicity violations = " +
             std::to_string(violations);
  return o;
}

// ---------------------------------------------------------------------------

struct DefaultData {
  Dataset train, eval;
};

const DefaultData& default_data() {
  static const DefaultData d = [] {
    GeneratorParams p;
    DefaultData out{generate(p), {}};
    p.seed = 1007;
    out.eval = generate(p);
    return out;
  }();
  return d;
}

const std::vector<std::uint64_t> kFiveSeeds{1, 2, 3, 4, 5};

Outcome ablation() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = ablation_rows();
  const AblationTable table = ablate(RunConfig{}, rows, kFiveSeeds, default_data().train, default_data().eval);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << table.to_text();
  for (const AblationCell& c : table.cells) o.pass = o.pass && !c.failed;
  if (!o.pass) {
    o.detail = "a grid cell failed";
    return o;
  }
  const std::string key = acc_key(0.5);
  const double none = table.cell("none").stats.at(key).median;
  const double oid = table.cell("oid").stats.at(key).median;
  const double all = table.cell("all").stats.at(key).median;
  o.pass = all > none && oid > none && secs < 600.0;
  o.detail = "median Acc@0.5 none " + fixed(none) + ", oid " + fixed(oid) + " (" + (oid > none ? "+" : "") +
             fixed(oid - none) + "), all " + fixed(all) + " (" + (all > none ? "+" : "") + fixed(all - none) + "); 25 runs in " +
             fixed(secs, 0) + " s";
  return o;
}

Outcome delta_sweep_shape() {
  Outcome o;
  const std::vector<double> deltas{0.1, 0.25, 0.5, 0.75};
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const SweepResult s = delta_sweep(RunConfig{}, deltas, seeds, default_data().train, default_data().eval);
  std::ostringstream curve;
  for (const SweepPoint& p : s.points) {
    o.pass = o.pass && !p.failed;
    if (p.variant == "full") curve << (curve.tellp() ? ", " : "") << p.delta << ": " << fixed(p.acc50.median);
  }
  o.detail = "full-model median Acc@0.5 by delta {" + curve.str() + "}; drop at delta 0.75: " +
             (s.drops_at_large_delta ? "holds" : "does not hold (logged discrepancy)");
  return o;
}

// ---------------------------------------------------------------------------

Outcome determinism() {
  Outcome o;
  std::vector<std::string> failures;
  const auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };
  const auto dir = std::filesystem::temp_directory_path() / "ovlp_acceptance";
  std::filesystem::create_directories(dir);

  const Dataset& ds = default_data().train;
  const Dataset again = generate(GeneratorParams{});
  expect(again == ds && dataset_to_jsonl(again) == dataset_to_jsonl(ds), "dataset regeneration");
  const std::string ds_path = (dir / "train.jsonl").string();
  write_dataset(ds, ds_path);
  const Dataset reread = read_dataset(ds_path);
  expect(reread == ds, "dataset file round trip");
  write_dataset(reread, (dir / "train2.jsonl").string());
  expect(dataset_to_jsonl(read_dataset((dir / "train2.jsonl").string())) == dataset_to_jsonl(ds), "dataset rewrite");

  GeneratorParams small;
  small.n_scenes = 30;
  const Dataset data = generate(small);
  RunConfig cfg;
  cfg.optimizer.epochs = 3;
  cfg.qa.epochs = 2;
  const TrainResult a = train(cfg, data, data), b = train(cfg, data, data);
  auto log_text = [](const TrainLog& l) {
    nlohmann::json j = l.to_json();
    j.erase("wall_clock_seconds");
    return j.dump();
  };
  expect(log_text(a.log) == log_text(b.log), "train log");
  expect(a.model.checkpoint_json().dump() == b.model.checkpoint_json().dump(), "checkpoint");
  expect(evaluate(a.model, data).to_json().dump() == evaluate(b.model, data).to_json().dump(), "report");

  const std::string ckpt = (dir / "checkpoint.json").string();
  a.model.save(ckpt);
  const GroundingModel loaded = GroundingModel::load(ckpt);
  bool exact = true;
  for (const auto& [name, p] : a.model.params().params()) exact = exact && loaded.params().at(name).value == p.value;
  expect(exact, "checkpoint file round trip");
  expect(loaded.checkpoint_json().dump() == a.model.checkpoint_json().dump(), "checkpoint rewrite");
  expect(evaluate_checkpoint(loaded.checkpoint_json(), data, &cfg).to_json() == evaluate(a.model, data).to_json(),
         "report from reloaded checkpoint");
  std::filesystem::remove_all(dir);

  o.pass = failures.empty();
  o.detail = "datasets, logs, checkpoints and reports bit-identical; files round-trip";
  if (!o.pass) {
    o.detail = "mismatch in:";
    for (const auto& f : failures) o.detail += " " + f + ";";
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"geometry oracle equivalence", geometry},
      {"gradient suite", gradients},
      {"OCC reduction to pairwise contrast", occ_reduction},
      {"label-smoothing distribution", label_smoothing},
      {"metric algebra", metric_algebra},
      {"ablation direction", ablation},
      {"delta-sweep shape", delta_sweep_shape},
      {"determinism and round trips", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[i].first << ": " << o.detail << " ("
              << fixed(secs, 1) << " s)" << std::endl;
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
