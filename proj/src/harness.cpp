#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

#include "ovlp/error.hpp"
#include "ovlp/harness.hpp"

namespace ovlp {

using nlohmann::json;

namespace {

const char* stage_name(GroundingModel::Stage s) {
  switch (s) {
    case GroundingModel::Stage::Pretrain: return "pretrain";
    case GroundingModel::Stage::Finetune: return "finetune";
    case GroundingModel::Stage::Scratch: return "scratch";
  }
  return "?";
}

void run_stage(GroundingModel& model, const Dataset& data, GroundingModel::Stage stage, int epochs, Rng& rng,
               TrainLog& log) {
  const RunConfig& cfg = model.config();
  const std::size_t n = data.samples.size();
  const std::size_t bs = static_cast<std::size_t>(cfg.optimizer.batch_size);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  model.params().reset_velocity();

  // With frozen encoders and fusion head the QA inputs never change, so they
  // are computed once for the whole stage.
  const bool frozen_qa = stage == GroundingModel::Stage::Finetune && cfg.qa.freeze_encoders;
  std::vector<std::vector<double>> qa_inputs;
  std::vector<int> answers;
  if (frozen_qa) {
    for (const SceneSample& s : data.samples) {
      qa_inputs.push_back(model.qa_input(s));
      answers.push_back(s.qa_answer_id);
    }
  }

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    for (std::size_t i = n; i-- > 1;) std::swap(order[i], order[rng.below(i + 1)]);
    if (frozen_qa) {
      double sum = 0.0;
      std::size_t steps = 0;
      for (std::size_t start = 0; start < n; start += bs) {
        std::vector<const std::vector<double>*> in;
        std::vector<int> ans;
        for (std::size_t i = start; i < std::min(n, start + bs); ++i) {
          in.push_back(&qa_inputs[order[i]]);
          ans.push_back(answers[order[i]]);
        }
        model.params().zero_grad();
        const double loss = model.qa_head_loss(in, ans, true);
        if (!std::isfinite(loss)) {
          throw Error(ErrorCode::Diverged, "non-finite qa loss in finetune epoch " + std::to_string(epoch) + " step " +
                                               std::to_string(steps + 1));
        }
        sum += loss;
        sgd_step(model.params(), cfg.optimizer.lr, cfg.optimizer.momentum);
        ++steps;
      }
      EpochLog e;
      e.stage = stage_name(stage);
      e.epoch = epoch;
      e.steps = steps;
      e.mean.per_term["qa"] = sum / static_cast<double>(steps);
      e.mean.total = model.config().loss_weights.w_qa * e.mean.per_term["qa"];
      log.epochs.push_back(std::move(e));
      continue;
    }
    std::map<std::string, double> sums;
    std::map<std::string, std::size_t> counts;
    double total = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < n; start += bs) {
      std::vector<const SceneSample*> batch;
      for (std::size_t i = start; i < std::min(n, start + bs); ++i) batch.push_back(&data.samples[order[i]]);
      model.params().zero_grad();
      const auto terms = model.batch_loss(batch, stage, true);
      if (!std::isfinite(terms.report.total)) {
        throw Error(ErrorCode::Diverged, std::string("non-finite loss in ") + stage_name(stage) + " epoch " +
                                             std::to_string(epoch) + " step " + std::to_string(steps + 1));
      }
      for (const auto& [name, v] : terms.report.per_term) {
        if (!std::isfinite(v)) {
          throw Error(ErrorCode::Diverged, "non-finite " + name + " loss in " + stage_name(stage) + " epoch " +
                                               std::to_string(epoch) + " step " + std::to_string(steps + 1));
        }
        sums[name] += v;
        counts[name] += 1;
      }
      total += terms.report.total;
      sgd_step(model.params(), cfg.optimizer.lr, cfg.optimizer.momentum);
      ++steps;
    }
    EpochLog e;
    e.stage = stage_name(stage);
    e.epoch = epoch;
    e.steps = steps;
    for (const auto& [name, v] : sums) e.mean.per_term[name] = v / static_cast<double>(counts[name]);
    e.mean.total = steps ? total / static_cast<double>(steps) : 0.0;
    log.epochs.push_back(std::move(e));
  }
}

CellStats stats_of(std::vector<double> v) {
  CellStats s;
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  s.median = v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
  s.min = v.front();
  s.max = v.back();
  return s;
}

json stats_json(const CellStats& s) { return {{"median", s.median}, {"min", s.min}, {"max", s.max}}; }

// Runs `jobs` tasks on `threads` workers; results land by index so ordering
// never depends on scheduling.
void run_parallel(std::size_t jobs, int threads, const std::function<void(std::size_t)>& task) {
  const std::size_t workers = std::min<std::size_t>(std::max(1, threads), jobs);
  if (workers <= 1) {
    for (std::size_t i = 0; i < jobs; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < jobs; i = next++) task(i);
    });
  }
  for (auto& t : pool) t.join();
}

std::string fmt(double v, int prec = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

}  // namespace

json TrainLog::to_json() const {
  json epochs_json = json::array();
  for (const EpochLog& e : epochs) {
    epochs_json.push_back(
        {{"stage", e.stage}, {"epoch", e.epoch}, {"steps", e.steps}, {"terms", e.mean.per_term}, {"total", e.mean.total}});
  }
  return {{"seed", seed},
          {"config_hash", config_hash},
          {"epochs", epochs_json},
          {"final_report", final_report.to_json()},
          {"wall_clock_seconds", wall_clock_seconds}};
}

TrainResult train(const RunConfig& cfg, const Dataset& train_data, const Dataset& eval_data) {
  cfg.validate();
  if (train_data.samples.empty()) reject("train: training dataset is empty");
  if (eval_data.samples.empty()) reject("train: evaluation dataset is empty");
  cfg.validate_for(train_data);
  cfg.validate_for(eval_data);
  const auto t0 = std::chrono::steady_clock::now();

  TrainResult r{GroundingModel(cfg), TrainLog{}};
  r.model.init(cfg.seed);
  r.log.seed = cfg.seed;
  r.log.config_hash = cfg.hash();
  Rng order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  if (cfg.qa.pretrain) {
    run_stage(r.model, train_data, GroundingModel::Stage::Pretrain, cfg.optimizer.epochs, order_rng, r.log);
    if (cfg.qa.epochs > 0) run_stage(r.model, train_data, GroundingModel::Stage::Finetune, cfg.qa.epochs, order_rng, r.log);
  } else {
    run_stage(r.model, train_data, GroundingModel::Stage::Scratch, cfg.qa.epochs, order_rng, r.log);
  }
  r.log.final_report = evaluate(r.model, eval_data);
  r.log.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::vector<Prediction> predict_all(const GroundingModel& model, const Dataset& ds) {
  model.config().validate_for(ds);
  std::vector<Prediction> out;
  out.reserve(ds.samples.size());
  for (const SceneSample& s : ds.samples) out.push_back(model.predict(s));
  return out;
}

double caption_surrogate(const SceneSample& s, const Prediction& p) {
  const int nc = static_cast<int>(s.proposal_features.cols) - 6 - static_cast<int>(p.ranked_answers.size());
  const auto row = s.proposal_features.row(p.selected);
  int cls = 0;
  for (int c = 1; c < nc; ++c)
    if (row[6 + c] > row[6 + cls]) cls = c;
  const SceneObject& t = s.target();
  double m = cls == t.class_id ? 0.5 : 0.0;
  if (!p.ranked_answers.empty() && p.ranked_answers.front() == t.color_id) m += 0.5;
  return m;
}

MetricReport evaluate_predictions(const Dataset& ds, std::span<const Prediction> preds,
                                  std::span<const double> thresholds, std::span<const std::size_t> em_k) {
  if (ds.samples.empty()) reject("evaluate: dataset is empty");
  if (preds.size() != ds.samples.size()) reject("evaluate: one prediction per sample required");
  std::vector<GroundingOutcome> outcomes;
  std::vector<GatedScore> gated;
  std::vector<std::vector<int>> ranked_u, ranked_m, ranked_all;
  std::vector<std::set<int>> gt_u, gt_m, gt_all;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const SceneSample& s = ds.samples[i];
    const Aabb3& gt = s.target().box;
    outcomes.push_back({preds[i].box, gt, s.split_tag});
    gated.push_back({caption_surrogate(s, preds[i]), iou(preds[i].box, gt), s.split_tag});
    ranked_all.push_back(preds[i].ranked_answers);
    gt_all.push_back({s.qa_answer_id});
    auto& rk = s.split_tag == SplitTag::Unique ? ranked_u : ranked_m;
    auto& gk = s.split_tag == SplitTag::Unique ? gt_u : gt_m;
    rk.push_back(preds[i].ranked_answers);
    gk.push_back({s.qa_answer_id});
  }
  MetricReport r;
  r.samples = preds.size();
  for (double k : thresholds) {
    r.values[acc_key(k)] = acc_at_k(outcomes, k);
    r.values[m_key(k)] = m_at_k_iou_by_split(gated, k);
  }
  for (std::size_t k : em_k) {
    SplitValues v;
    v.overall = em_at_k(ranked_all, gt_all, k);
    if (!ranked_u.empty()) v.unique = em_at_k(ranked_u, gt_u, k);
    if (!ranked_m.empty()) v.multiple = em_at_k(ranked_m, gt_m, k);
    r.values[em_key(k)] = v;
  }
  return r;
}

MetricReport evaluate(const GroundingModel& model, const Dataset& ds) {
  const auto preds = predict_all(model, ds);
  return evaluate_predictions(ds, preds, model.config().eval_thresholds, model.config().em_k);
}

MetricReport evaluate_checkpoint(const json& checkpoint, const Dataset& ds, const RunConfig* cfg) {
  GroundingModel model = GroundingModel::from_checkpoint(checkpoint);
  if (cfg) {
    if (cfg->hash() != model.config().hash()) {
      throw Error(ErrorCode::ConfigMismatch, "checkpoint was trained with config hash " + model.config().hash() +
                                                 ", supplied config hashes to " + cfg->hash());
    }
    const auto preds = predict_all(model, ds);
    return evaluate_predictions(ds, preds, cfg->eval_thresholds, cfg->em_k);
  }
  return evaluate(model, ds);
}

std::vector<Prediction> oracle_predictions(const Dataset& ds) {
  std::vector<Prediction> out;
  for (const SceneSample& s : ds.samples) {
    Prediction p;
    const Aabb3& gt = s.target().box;
    double best = -1.0;
    for (std::size_t i = 0; i < s.proposals.size(); ++i) {
      const double v = iou(s.proposals[i], gt);
      if (v > best) {
        best = v;
        p.selected = i;
      }
    }
    p.box = s.proposals[p.selected];
    p.ranked_answers.push_back(s.qa_answer_id);
    for (int a = 0; a < ds.num_colors(); ++a)
      if (a != s.qa_answer_id) p.ranked_answers.push_back(a);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<AblationRow> ablation_rows() {
  return {{"none", {false, false, false}},
          {"oid", {true, false, false}},
          {"occ", {false, true, false}},
          {"osc", {false, false, true}},
          {"all", {true, true, true}}};
}

const AblationCell& AblationTable::cell(const std::string& row) const {
  for (const AblationCell& c : cells)
    if (c.row == row) return c;
  reject("ablation table has no row '" + row + "'");
}

json AblationTable::to_json() const {
  json rows = json::array();
  for (const AblationCell& c : cells) {
    json runs = json::array();
    for (std::size_t i = 0; i < c.seeds.size(); ++i) {
      json run = {{"seed", c.seeds[i]}};
      if (c.reports[i]) {
        run["report"] = c.reports[i]->to_json();
      } else {
        run["error"] = c.failures[i];
      }
      runs.push_back(run);
    }
    json stats = json::object();
    for (const auto& [k, s] : c.stats) stats[k] = stats_json(s);
    rows.push_back({{"row", c.row}, {"failed", c.failed}, {"stats", stats}, {"runs", runs}});
  }
  return {{"rows", rows}};
}

std::string AblationTable::to_text() const {
  std::ostringstream os;
  const char* cols[] = {"acc@0.25", "acc@0.5", "em@1", "em@10"};
  os << "row     ";
  for (const char* c : cols) os << "  " << c << " (median [min,max])";
  os << '\n';
  for (const AblationCell& c : cells) {
    char name[16];
    std::snprintf(name, sizeof name, "%-8s", c.row.c_str());
    os << name;
    for (const char* col : cols) {
      auto it = c.stats.find(col);
      if (it == c.stats.end()) {
        os << "  " << "n/a";
        continue;
      }
      os << "  " << fmt(it->second.median) << " [" << fmt(it->second.min) << "," << fmt(it->second.max) << "]";
    }
    if (c.failed) os << "  (FAILED runs present)";
    os << '\n';
  }
  return os.str();
}

AblationTable ablate(const RunConfig& base, std::span<const AblationRow> rows, std::span<const std::uint64_t> seeds,
                     const Dataset& train_data, const Dataset& eval_data) {
  base.validate();
  if (seeds.empty()) reject("ablate: at least one seed required");
  if (rows.empty()) reject("ablate: at least one row required");
  AblationTable table;
  for (const AblationRow& row : rows) {
    AblationCell c;
    c.row = row.name;
    c.seeds.assign(seeds.begin(), seeds.end());
    c.reports.resize(seeds.size());
    c.failures.resize(seeds.size());
    table.cells.push_back(std::move(c));
  }
  const std::size_t jobs = rows.size() * seeds.size();
  std::mutex mu;
  run_parallel(jobs, base.threads, [&](std::size_t job) {
    const std::size_t r = job / seeds.size(), s = job % seeds.size();
    RunConfig cfg = base;
    cfg.toggles = rows[r].toggles;
    cfg.seed = seeds[s];
    try {
      auto result = train(cfg, train_data, eval_data);
      std::lock_guard lock(mu);
      table.cells[r].reports[s] = result.log.final_report;
    } catch (const std::exception& e) {
      std::lock_guard lock(mu);
      table.cells[r].failures[s] = e.what();
    }
  });
  for (AblationCell& c : table.cells) {
    std::map<std::string, std::vector<double>> vals;
    for (std::size_t i = 0; i < c.reports.size(); ++i) {
      if (!c.reports[i]) {
        c.failed = true;
        continue;
      }
      for (const auto& [k, v] : c.reports[i]->values) vals[k].push_back(v.overall);
    }
    for (auto& [k, v] : vals) c.stats[k] = stats_of(v);
  }
  return table;
}

json SweepResult::to_json() const {
  json pts = json::array();
  for (const SweepPoint& p : points) {
    pts.push_back({{"delta", p.delta},
                   {"variant", p.variant},
                   {"failed", p.failed},
                   {"acc@0.25", stats_json(p.acc25)},
                   {"acc@0.5", stats_json(p.acc50)}});
  }
  return {{"points", pts}, {"monotonicity", {{"drops_at_large_delta", drops_at_large_delta}}}};
}

std::string SweepResult::csv(const std::string& variant, const std::string& metric) const {
  std::ostringstream os;
  os.precision(17);
  os << "delta," << metric << '\n';
  for (const SweepPoint& p : points) {
    if (p.variant != variant) continue;
    os << p.delta << ',' << (metric == "acc@0.25" ? p.acc25.median : p.acc50.median) << '\n';
  }
  return os.str();
}

SweepResult delta_sweep(const RunConfig& base, std::span<const double> deltas, std::span<const std::uint64_t> seeds,
                        const Dataset& train_data, const Dataset& eval_data) {
  if (deltas.empty()) reject("delta_sweep: no deltas");
  for (double d : deltas)
    if (!(d > 0.0 && d <= 1.0)) reject("delta_sweep: deltas must lie in (0, 1]");
  if (seeds.empty()) reject("delta_sweep: at least one seed required");
  RunConfig cfg = base;
  if (std::find(cfg.eval_thresholds.begin(), cfg.eval_thresholds.end(), 0.25) == cfg.eval_thresholds.end())
    cfg.eval_thresholds.push_back(0.25);
  if (std::find(cfg.eval_thresholds.begin(), cfg.eval_thresholds.end(), 0.5) == cfg.eval_thresholds.end())
    cfg.eval_thresholds.push_back(0.5);

  const std::vector<std::pair<std::string, ModuleToggles>> variants{{"full", {true, true, true}},
                                                                    {"oid_only", {true, false, false}}};
  const std::size_t per_point = seeds.size();
  const std::size_t points = deltas.size() * variants.size();
  std::vector<std::optional<MetricReport>> reports(points * per_point);
  run_parallel(reports.size(), base.threads, [&](std::size_t job) {
    const std::size_t point = job / per_point, s = job % per_point;
    RunConfig c = cfg;
    c.filter.delta = deltas[point / variants.size()];
    c.toggles = variants[point % variants.size()].second;
    c.seed = seeds[s];
    try {
      reports[job] = train(c, train_data, eval_data).log.final_report;
    } catch (const std::exception&) {
      reports[job].reset();
    }
  });

  SweepResult out;
  for (std::size_t point = 0; point < points; ++point) {
    SweepPoint p;
    p.delta = deltas[point / variants.size()];
    p.variant = variants[point % variants.size()].first;
    std::vector<double> a25, a50;
    for (std::size_t s = 0; s < per_point; ++s) {
      const auto& r = reports[point * per_point + s];
      if (!r) {
        p.failed = true;
        continue;
      }
      a25.push_back(r->values.at(acc_key(0.25)).overall);
      a50.push_back(r->values.at(acc_key(0.5)).overall);
    }
    p.acc25 = stats_of(a25);
    p.acc50 = stats_of(a50);
    out.points.push_back(p);
  }

  // Largest delta of the full model against the best of the others.
  const double largest = *std::max_element(deltas.begin(), deltas.end());
  double at_largest = 0.0, best_other = -1.0;
  for (const SweepPoint& p : out.points) {
    if (p.variant != "full") continue;
    if (p.delta == largest) {
      at_largest = p.acc50.median;
    } else {
      best_other = std::max(best_other, p.acc50.median);
    }
  }
  out.drops_at_large_delta = best_other < 0.0 || at_largest <= best_other;
  return out;
}

json CompositeGradcheck::to_json() const {
  json runs = json::array();
  for (std::size_t i = 0; i < reports.size(); ++i) {
    runs.push_back({{"seed", seeds[i]},
                    {"pass", reports[i].pass},
                    {"worst_relative_error", reports[i].worst},
                    {"worst_parameter", reports[i].worst_param},
                    {"worst_index", reports[i].worst_index},
                    {"coordinates", reports[i].coordinates},
                    {"per_parameter", reports[i].max_rel_error}});
  }
  return {{"pass", pass}, {"runs", runs}};
}

CompositeGradcheck gradcheck_composite(const RunConfig& cfg, std::span<const std::uint64_t> seeds, double h,
                                       double tol, bool corrupt) {
  cfg.validate();
  const int num_colors = static_cast<int>(cfg.qa_head.output_dim());
  const int num_classes = static_cast<int>(cfg.proposal_encoder.input_dim()) - 6 - num_colors;
  if (num_classes < 1) reject("gradcheck: proposal_encoder input is too small for the QA answer count");

  CompositeGradcheck out;
  out.pass = true;
  for (std::uint64_t seed : seeds) {
    GeneratorParams gp;
    gp.seed = seed;
    gp.n_scenes = 1;
    gp.objects_per_scene = 3;
    gp.jitter_per_object = 3;
    gp.clutter_per_scene = 4;
    gp.num_classes = num_classes;
    gp.num_colors = num_colors;
    const Dataset ds = generate(gp);
    cfg.validate_for(ds);
    std::vector<const SceneSample*> batch{&ds.samples[0], &ds.samples[1]};

    GroundingModel model(cfg);
    model.init(seed);
    if (corrupt) model.set_gradient_corruption(1.5);
    const LossClosure closure = [&](ParamStore&, bool with_grad) {
      return model.batch_loss(batch, GroundingModel::Stage::Pretrain, with_grad).report.total;
    };
    const ValueClosure value = [&](const ParamStore&) {
      return model.precise_loss(batch, GroundingModel::Stage::Pretrain);
    };
    GradcheckReport r = gradcheck(closure, value, model.params(), h, tol);
    out.pass = out.pass && r.pass;
    out.seeds.push_back(seed);
    out.reports.push_back(std::move(r));
  }
  return out;
}

json compare_scratch(const RunConfig& base, std::span<const std::uint64_t> seeds, const Dataset& train_data,
                     const Dataset& eval_data) {
  if (seeds.empty()) reject("compare_scratch: at least one seed required");
  const std::vector<std::string> keys{acc_key(0.25), acc_key(0.5), em_key(1), em_key(10)};
  json out = json::object();
  for (bool pretrain : {true, false}) {
    RunConfig cfg = base;
    cfg.qa.pretrain = pretrain;
    if (!pretrain) cfg.qa.freeze_encoders = false;
    cfg.eval_thresholds = {0.25, 0.5};
    cfg.em_k = {1, 10};
    std::vector<std::optional<MetricReport>> reports(seeds.size());
    run_parallel(seeds.size(), base.threads, [&](std::size_t i) {
      RunConfig c = cfg;
      c.seed = seeds[i];
      reports[i] = train(c, train_data, eval_data).log.final_report;
    });
    json row = json::object();
    for (const std::string& k : keys) {
      std::vector<double> v;
      for (const auto& r : reports) v.push_back(r->values.at(k).overall);
      row[k] = stats_json(stats_of(v));
    }
    out[pretrain ? "pretrain" : "scratch"] = row;
  }
  return out;
}

std::string format_report_table(const MetricReport& r) {
  std::ostringstream os;
  os << "metric      overall   unique    multiple\n";
  for (const auto& [name, v] : r.values) {
    char line[96];
    std::snprintf(line, sizeof line, "%-10s  %-8s  %-8s  %-8s\n", name.c_str(), fmt(v.overall).c_str(),
                  v.unique ? fmt(*v.unique).c_str() : "-", v.multiple ? fmt(*v.multiple).c_str() : "-");
    os << line;
  }
  os << "samples: " << r.samples << '\n';
  return os.str();
}

}  // namespace ovlp
