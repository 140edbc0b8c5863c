// Command-line front end. Talks to the library only through ovlp.h.
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ovlp/ovlp.h"

namespace fs = std::filesystem;

namespace {

struct Failure {
  int status;
};

void check(ovlp_status st, const std::string& what) {
  if (st != OVLP_OK) {
    std::cerr << "error: " << what << ": " << ovlp_last_error() << "\n";
    throw Failure{static_cast<int>(st)};
  }
}

// Takes ownership of a library string.
std::string take(char* s) {
  std::string out = s ? s : "";
  ovlp_string_free(s);
  return out;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  f << text;
  if (!text.empty() && text.back() != '\n') f << '\n';
  if (!f) {
    std::cerr << "error: cannot write " << path << "\n";
    throw Failure{OVLP_ERR_IO};
  }
}

using ConfigPtr = std::unique_ptr<ovlp_config, decltype(&ovlp_config_free)>;
using DatasetPtr = std::unique_ptr<ovlp_dataset, decltype(&ovlp_dataset_free)>;
using ModelPtr = std::unique_ptr<ovlp_model, decltype(&ovlp_model_free)>;

ConfigPtr load_config(const std::string& path) {
  ovlp_config* c = nullptr;
  if (path.empty()) {
    check(ovlp_config_default(&c), "default config");
  } else {
    check(ovlp_config_load(path.c_str(), &c), "config " + path);
  }
  return {c, ovlp_config_free};
}

DatasetPtr read_dataset(const std::string& path) {
  ovlp_dataset* d = nullptr;
  check(ovlp_dataset_read(path.c_str(), &d), "dataset " + path);
  return {d, ovlp_dataset_free};
}

// --data/--eval-data override the paths named by the config.
std::pair<DatasetPtr, DatasetPtr> datasets(const ovlp_config* cfg, const std::string& data,
                                           const std::string& eval_data) {
  if (data.empty()) {
    ovlp_dataset* t = nullptr;
    ovlp_dataset* e = nullptr;
    check(ovlp_config_datasets(cfg, &t, &e), "datasets");
    DatasetPtr train(t, ovlp_dataset_free), eval(e, ovlp_dataset_free);
    if (!eval_data.empty()) eval = read_dataset(eval_data);
    return {std::move(train), std::move(eval)};
  }
  DatasetPtr train = read_dataset(data);
  DatasetPtr eval = eval_data.empty() ? DatasetPtr(nullptr, ovlp_dataset_free) : read_dataset(eval_data);
  return {std::move(train), std::move(eval)};
}

struct GenArgs {
  ovlp_gen_params p{};
  std::string out;
};

struct TrainArgs {
  std::string config, data, eval_data, out = "run";
  std::int64_t seed = -1;
};

struct EvalArgs {
  std::string ckpt, data, report, config;
};

struct GridArgs {
  std::string config, data, eval_data, out;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<double> deltas{0.1, 0.25, 0.5, 0.75};
  int threads = 1;
};

struct GradArgs {
  std::string config, out;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  double h = 1e-5;
  double tol = 1e-4;
  bool corrupt = false;
};

int run_gen(const GenArgs& a) {
  ovlp_dataset* d = nullptr;
  check(ovlp_dataset_generate(&a.p, &d), "generate");
  DatasetPtr ds(d, ovlp_dataset_free);
  check(ovlp_dataset_write(ds.get(), a.out.c_str()), "write " + a.out);
  char* audit = nullptr;
  check(ovlp_dataset_audit_json(ds.get(), &audit), "audit");
  std::cout << take(audit) << "\n";
  return 0;
}

void set_threads(ovlp_config* cfg, int threads) {
  if (threads > 1) check(ovlp_config_set_threads(cfg, threads), "threads");
}

int run_train(const TrainArgs& a) {
  ConfigPtr cfg = load_config(a.config);
  if (a.seed >= 0) check(ovlp_config_set_seed(cfg.get(), static_cast<std::uint64_t>(a.seed)), "seed");
  auto [train, eval] = datasets(cfg.get(), a.data, a.eval_data);
  ovlp_model* m = nullptr;
  char* log = nullptr;
  check(ovlp_train(cfg.get(), train.get(), eval.get(), &m, &log), "train");
  ModelPtr model(m, ovlp_model_free);
  const std::string log_text = take(log);
  const fs::path out(a.out);
  fs::create_directories(out);
  check(ovlp_model_save(model.get(), (out / "checkpoint.json").c_str()), "save checkpoint");
  write_file(out / "train_log.json", log_text);
  char* cfg_json = nullptr;
  check(ovlp_config_to_json(cfg.get(), &cfg_json), "config json");
  write_file(out / "config.json", take(cfg_json));

  char* report = nullptr;
  check(ovlp_evaluate(model.get(), eval ? eval.get() : train.get(), nullptr, &report), "evaluate");
  char* table = nullptr;
  check(ovlp_report_format(report, &table), "format");
  ovlp_string_free(report);
  std::cout << take(table) << "wrote " << (out / "checkpoint.json").string() << "\n";
  return 0;
}

int run_eval(const EvalArgs& a) {
  ovlp_model* m = nullptr;
  check(ovlp_model_load(a.ckpt.c_str(), &m), "checkpoint " + a.ckpt);
  ModelPtr model(m, ovlp_model_free);
  DatasetPtr ds = read_dataset(a.data);
  ConfigPtr cfg(nullptr, ovlp_config_free);
  if (!a.config.empty()) cfg = load_config(a.config);
  char* report = nullptr;
  check(ovlp_evaluate(model.get(), ds.get(), cfg.get(), &report), "evaluate");
  const std::string text = take(report);
  if (!a.report.empty()) write_file(a.report, text);
  char* table = nullptr;
  check(ovlp_report_format(text.c_str(), &table), "format");
  std::cout << take(table);
  return 0;
}

int run_ablate(const GridArgs& a) {
  ConfigPtr cfg = load_config(a.config);
  set_threads(cfg.get(), a.threads);
  auto [train, eval] = datasets(cfg.get(), a.data, a.eval_data);
  char* json = nullptr;
  char* text = nullptr;
  check(ovlp_ablate(cfg.get(), a.seeds.data(), a.seeds.size(), train.get(), eval.get(), &json, &text), "ablate");
  const std::string table = take(text);
  const fs::path out(a.out);
  write_file(out / "ablation.json", take(json));
  write_file(out / "ablation.txt", table);
  std::cout << table;
  return 0;
}

int run_sweep(const GridArgs& a) {
  ConfigPtr cfg = load_config(a.config);
  set_threads(cfg.get(), a.threads);
  auto [train, eval] = datasets(cfg.get(), a.data, a.eval_data);
  ovlp_sweep* s = nullptr;
  check(ovlp_delta_sweep(cfg.get(), a.deltas.data(), a.deltas.size(), a.seeds.data(), a.seeds.size(), train.get(),
                         eval.get(), &s),
        "sweep");
  std::unique_ptr<ovlp_sweep, decltype(&ovlp_sweep_free)> sweep(s, ovlp_sweep_free);
  const fs::path out(a.out);
  char* json = nullptr;
  check(ovlp_sweep_json(sweep.get(), &json), "sweep json");
  const std::string doc = take(json);
  write_file(out / "sweep.json", doc);
  for (const char* variant : {"full", "oid_only"}) {
    for (const char* metric : {"acc@0.25", "acc@0.5"}) {
      char* csv = nullptr;
      check(ovlp_sweep_csv(sweep.get(), variant, metric, &csv), "sweep csv");
      std::string name = std::string(variant) + "_" + metric + ".csv";
      for (char& c : name) {
        if (c == '@') c = '_';
      }
      write_file(out / name, take(csv));
    }
  }
  std::cout << doc << "\n";
  return 0;
}

int run_gradcheck(const GradArgs& a) {
  ConfigPtr cfg = load_config(a.config);
  int pass = 0;
  char* json = nullptr;
  check(ovlp_gradcheck(cfg.get(), a.seeds.data(), a.seeds.size(), a.h, a.tol, a.corrupt ? 1 : 0, &pass, &json),
        "gradcheck");
  const std::string doc = take(json);
  if (!a.out.empty()) write_file(a.out, doc);
  std::cout << doc << "\n" << (pass ? "gradcheck passed" : "gradcheck FAILED") << "\n";
  return pass ? 0 : OVLP_ERR_GRADCHECK_FAILED;
}

int run_compare(const GridArgs& a) {
  ConfigPtr cfg = load_config(a.config);
  auto [train, eval] = datasets(cfg.get(), a.data, a.eval_data);
  char* json = nullptr;
  check(ovlp_compare_scratch(cfg.get(), a.seeds.data(), a.seeds.size(), train.get(), eval.get(), &json),
        "compare-scratch");
  const std::string doc = take(json);
  if (!a.out.empty()) write_file(a.out, doc);
  std::cout << doc << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ovlp: IoU-guided contrastive pre-training on synthetic 3D grounding scenes"};
  app.set_version_flag("--version", std::string(ovlp_version()));
  app.require_subcommand(1);

  GenArgs gen;
  ovlp_gen_params_default(&gen.p);
  auto* g = app.add_subcommand("gen", "generate a synthetic dataset (JSON lines)");
  g->add_option("--seed", gen.p.seed, "generator seed")->capture_default_str();
  g->add_option("--scenes", gen.p.n_scenes, "number of scenes")->capture_default_str();
  g->add_option("--objects", gen.p.objects_per_scene, "objects per scene")->capture_default_str();
  g->add_option("--jitters", gen.p.jitter_per_object, "jittered proposals per object")->capture_default_str();
  g->add_option("--clutter", gen.p.clutter_per_scene, "clutter proposals per scene")->capture_default_str();
  g->add_option("--noise", gen.p.noise_scale, "proposal jitter scale")->capture_default_str();
  g->add_option("--classes", gen.p.num_classes, "number of classes")->capture_default_str();
  g->add_option("--colors", gen.p.num_colors, "number of colors")->capture_default_str();
  g->add_option("--attribute-noise", gen.p.attribute_noise)->capture_default_str();
  g->add_option("--attribute-flip", gen.p.attribute_flip)->capture_default_str();
  g->add_option("--out", gen.out, "output .jsonl path")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "pre-train, fine-tune and write checkpoint + log");
  t->add_option("--config", tr.config, "RunConfig JSON (defaults when omitted)");
  t->add_option("--data", tr.data, "training dataset (overrides config)");
  t->add_option("--eval-data", tr.eval_data, "evaluation dataset (overrides config)");
  t->add_option("--seed", tr.seed, "training seed (overrides config)");
  t->add_option("--out", tr.out, "output directory")->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint");
  e->add_option("--ckpt", ev.ckpt, "checkpoint JSON")->required();
  e->add_option("--data", ev.data, "dataset")->required();
  e->add_option("--report", ev.report, "write MetricReport JSON here");
  e->add_option("--config", ev.config, "refuse unless the checkpoint was trained with this config");

  GridArgs ab;
  auto* a = app.add_subcommand("ablate", "none/oid/occ/osc/all grid over seeds");
  a->add_option("--config", ab.config, "base RunConfig JSON");
  a->add_option("--data", ab.data, "training dataset (overrides config)");
  a->add_option("--eval-data", ab.eval_data, "evaluation dataset (overrides config)");
  a->add_option("--seeds", ab.seeds, "training seeds")->capture_default_str();
  a->add_option("--threads", ab.threads, "parallel runs")->capture_default_str();
  a->add_option("--out", ab.out, "output directory")->required();

  GridArgs sw;
  sw.seeds = {1, 2, 3};
  auto* s = app.add_subcommand("sweep-delta", "IoU-filter threshold sweep, full model and OID-only");
  s->add_option("--config", sw.config, "base RunConfig JSON");
  s->add_option("--data", sw.data, "training dataset (overrides config)");
  s->add_option("--eval-data", sw.eval_data, "evaluation dataset (overrides config)");
  s->add_option("--deltas", sw.deltas, "thresholds")->capture_default_str();
  s->add_option("--seeds", sw.seeds, "training seeds")->capture_default_str();
  s->add_option("--threads", sw.threads, "parallel runs")->capture_default_str();
  s->add_option("--out", sw.out, "output directory")->required();

  GradArgs gc;
  auto* gcmd = app.add_subcommand("gradcheck", "finite-difference check of the composite loss");
  gcmd->add_option("--config", gc.config, "RunConfig JSON");
  gcmd->add_option("--seeds", gc.seeds, "init seeds")->capture_default_str();
  gcmd->add_option("--step", gc.h, "central-difference step")->capture_default_str();
  gcmd->add_option("--tol", gc.tol, "relative tolerance")->capture_default_str();
  gcmd->add_flag("--corrupt", gc.corrupt, "scale fusion gradients (negative control)");
  gcmd->add_option("--out", gc.out, "write report JSON here");

  GridArgs cs;
  cs.seeds = {1, 2, 3};
  auto* c = app.add_subcommand("compare-scratch", "pre-trained versus from-scratch downstream training");
  c->add_option("--config", cs.config, "base RunConfig JSON");
  c->add_option("--data", cs.data, "training dataset (overrides config)");
  c->add_option("--eval-data", cs.eval_data, "evaluation dataset (overrides config)");
  c->add_option("--seeds", cs.seeds, "training seeds")->capture_default_str();
  c->add_option("--out", cs.out, "write JSON here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*g) return run_gen(gen);
    if (*t) return run_train(tr);
    if (*e) return run_eval(ev);
    if (*a) return run_ablate(ab);
    if (*s) return run_sweep(sw);
    if (*gcmd) return run_gradcheck(gc);
    if (*c) return run_compare(cs);
  } catch (const Failure& f) {
    return f.status;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
