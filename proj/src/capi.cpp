#include "ovlp/ovlp.h"

#include <cstring>
#include <exception>
#include <string>
#include <vector>

#include "ovlp/error.hpp"
#include "ovlp/geom3d.hpp"
#include "ovlp/harness.hpp"
#include "ovlp/iou_filter.hpp"
#include "ovlp/synthworld.hpp"

struct ovlp_dataset {
  ovlp::Dataset ds;
};

struct ovlp_config {
  ovlp::RunConfig cfg;
};

struct ovlp_model {
  ovlp::GroundingModel model;
};

struct ovlp_sweep {
  ovlp::SweepResult result;
};

namespace {

thread_local std::string last_error;

ovlp_status status_of(ovlp::ErrorCode c) {
  switch (c) {
    case ovlp::ErrorCode::InvalidArgument: return OVLP_ERR_INVALID_ARGUMENT;
    case ovlp::ErrorCode::Io: return OVLP_ERR_IO;
    case ovlp::ErrorCode::Parse: return OVLP_ERR_PARSE;
    case ovlp::ErrorCode::DegenerateBatch: return OVLP_ERR_DEGENERATE_BATCH;
    case ovlp::ErrorCode::Diverged: return OVLP_ERR_DIVERGED;
    case ovlp::ErrorCode::ConfigMismatch: return OVLP_ERR_CONFIG_MISMATCH;
    case ovlp::ErrorCode::GenerationFailed: return OVLP_ERR_GENERATION_FAILED;
    case ovlp::ErrorCode::GradcheckFailed: return OVLP_ERR_GRADCHECK_FAILED;
  }
  return OVLP_ERR_INTERNAL;
}

template <class F>
ovlp_status guard(F&& f) {
  try {
    f();
    last_error.clear();
    return OVLP_OK;
  } catch (const ovlp::Error& e) {
    last_error = e.what();
    return status_of(e.code());
  } catch (const nlohmann::json::exception& e) {
    last_error = e.what();
    return OVLP_ERR_PARSE;
  } catch (const std::exception& e) {
    last_error = e.what();
    return OVLP_ERR_INTERNAL;
  } catch (...) {
    last_error = "unknown error";
    return OVLP_ERR_INTERNAL;
  }
}

void need(const void* p, const char* name) {
  if (p == nullptr) ovlp::reject(std::string(name) + " must not be null");
}

char* dup(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

ovlp::Aabb3 to_box(const ovlp_box* b) {
  return ovlp::Aabb3::make({b->center[0], b->center[1], b->center[2]}, {b->size[0], b->size[1], b->size[2]});
}

std::vector<std::uint64_t> seed_list(const uint64_t* seeds, size_t n) {
  if (n == 0) ovlp::reject("at least one seed required");
  need(seeds, "seeds");
  return {seeds, seeds + n};
}

const ovlp::Dataset& eval_or_train(const ovlp_dataset* train, const ovlp_dataset* eval) {
  return eval ? eval->ds : train->ds;
}

}  // namespace

extern "C" {

const char* ovlp_last_error(void) { return last_error.c_str(); }

const char* ovlp_version(void) { return "0.1.0"; }

void ovlp_string_free(char* s) { delete[] s; }

ovlp_status ovlp_box_iou(const ovlp_box* a, const ovlp_box* b, double* out) {
  return guard([&] {
    need(a, "a");
    need(b, "b");
    need(out, "out");
    *out = ovlp::iou(to_box(a), to_box(b));
  });
}

ovlp_status ovlp_box_diou(const ovlp_box* pred, const ovlp_box* gt, double* loss, double grad[6]) {
  return guard([&] {
    need(pred, "pred");
    need(gt, "gt");
    need(loss, "loss");
    const ovlp::Aabb3 p = to_box(pred), g = to_box(gt);
    *loss = ovlp::diou_loss(p, g).loss;
    if (grad) {
      const ovlp::BoxGrad d = ovlp::diou_grad(p, g);
      std::copy(d.begin(), d.end(), grad);
    }
  });
}

ovlp_status ovlp_filter_ious(const double* ious, size_t n, double delta, double epsilon, double* weights_out,
                             size_t* k_out, size_t* argmax_out) {
  return guard([&] {
    need(ious, "ious");
    need(weights_out, "weights_out");
    ovlp::FilterConfig cfg;
    cfg.delta = delta;
    cfg.epsilon = epsilon;
    const ovlp::FilterResult r = ovlp::filter_ious(std::vector<double>(ious, ious + n), cfg);
    std::copy(r.weights.begin(), r.weights.end(), weights_out);
    if (k_out) *k_out = r.k_count;
    if (argmax_out) *argmax_out = r.argmax_index;
  });
}

void ovlp_gen_params_default(ovlp_gen_params* out) {
  if (out == nullptr) return;
  const ovlp::GeneratorParams p;
  *out = {p.seed,          p.n_scenes,    p.objects_per_scene, p.jitter_per_object, p.clutter_per_scene,
          p.noise_scale,   p.num_classes, p.num_colors,        p.attribute_noise,   p.attribute_flip,
          p.max_attempts};
}

ovlp_status ovlp_dataset_generate(const ovlp_gen_params* params, ovlp_dataset** out) {
  return guard([&] {
    need(params, "params");
    need(out, "out");
    ovlp::GeneratorParams p;
    p.seed = params->seed;
    p.n_scenes = params->n_scenes;
    p.objects_per_scene = params->objects_per_scene;
    p.jitter_per_object = params->jitter_per_object;
    p.clutter_per_scene = params->clutter_per_scene;
    p.noise_scale = params->noise_scale;
    p.num_classes = params->num_classes;
    p.num_colors = params->num_colors;
    p.attribute_noise = params->attribute_noise;
    p.attribute_flip = params->attribute_flip;
    p.max_attempts = params->max_attempts;
    *out = new ovlp_dataset{ovlp::generate(p)};
  });
}

ovlp_status ovlp_dataset_read(const char* path, ovlp_dataset** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new ovlp_dataset{ovlp::read_dataset(path)};
  });
}

ovlp_status ovlp_dataset_write(const ovlp_dataset* ds, const char* path) {
  return guard([&] {
    need(ds, "dataset");
    need(path, "path");
    ovlp::write_dataset(ds->ds, path);
  });
}

ovlp_status ovlp_dataset_audit_json(const ovlp_dataset* ds, char** out) {
  return guard([&] {
    need(ds, "dataset");
    need(out, "out");
    const ovlp::GenerationAudit& a = ds->ds.audit;
    const nlohmann::json j = {{"samples", a.samples},
                              {"unique_samples", a.unique_samples},
                              {"multiple_samples", a.multiple_samples},
                              {"coverage_at_025", a.coverage_at_025},
                              {"coverage_at_050", a.coverage_at_050},
                              {"mean_best_iou", a.mean_best_iou}};
    *out = dup(j.dump(2));
  });
}

size_t ovlp_dataset_size(const ovlp_dataset* ds) { return ds ? ds->ds.samples.size() : 0; }

void ovlp_dataset_free(ovlp_dataset* ds) { delete ds; }

ovlp_status ovlp_config_default(ovlp_config** out) {
  return guard([&] {
    need(out, "out");
    *out = new ovlp_config{};
  });
}

ovlp_status ovlp_config_load(const char* path, ovlp_config** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new ovlp_config{ovlp::RunConfig::load(path)};
  });
}

ovlp_status ovlp_config_from_json(const char* json, ovlp_config** out) {
  return guard([&] {
    need(json, "json");
    need(out, "out");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(json);
    } catch (const nlohmann::json::parse_error& e) {
      throw ovlp::Error(ovlp::ErrorCode::Parse, std::string("config: ") + e.what());
    }
    *out = new ovlp_config{ovlp::RunConfig::from_json(j)};
  });
}

ovlp_status ovlp_config_to_json(const ovlp_config* cfg, char** out) {
  return guard([&] {
    need(cfg, "config");
    need(out, "out");
    *out = dup(cfg->cfg.to_json().dump(2));
  });
}

ovlp_status ovlp_config_hash(const ovlp_config* cfg, char** out) {
  return guard([&] {
    need(cfg, "config");
    need(out, "out");
    *out = dup(cfg->cfg.hash());
  });
}

ovlp_status ovlp_config_set_seed(ovlp_config* cfg, uint64_t seed) {
  return guard([&] {
    need(cfg, "config");
    cfg->cfg.seed = seed;
  });
}

ovlp_status ovlp_config_set_threads(ovlp_config* cfg, int threads) {
  return guard([&] {
    need(cfg, "config");
    if (threads < 1) ovlp::reject("threads must be >= 1");
    cfg->cfg.threads = threads;
  });
}

ovlp_status ovlp_config_datasets(const ovlp_config* cfg, ovlp_dataset** train, ovlp_dataset** eval) {
  ovlp_dataset* t = nullptr;
  ovlp_dataset* e = nullptr;
  const ovlp_status st = guard([&] {
    need(cfg, "config");
    need(train, "train");
    need(eval, "eval");
    const ovlp::RunConfig& c = cfg->cfg;
    if (c.train_data.empty()) {
      ovlp::GeneratorParams p;
      t = new ovlp_dataset{ovlp::generate(p)};
      if (c.eval_data.empty()) {
        p.seed = 1007;
        e = new ovlp_dataset{ovlp::generate(p)};
      }
    } else {
      t = new ovlp_dataset{ovlp::read_dataset(c.train_data)};
    }
    if (!c.eval_data.empty()) e = new ovlp_dataset{ovlp::read_dataset(c.eval_data)};
    if (e == nullptr) e = new ovlp_dataset{t->ds};
  });
  if (st != OVLP_OK) {
    delete t;
    delete e;
    return st;
  }
  *train = t;
  *eval = e;
  return st;
}

void ovlp_config_free(ovlp_config* cfg) { delete cfg; }

ovlp_status ovlp_train(const ovlp_config* cfg, const ovlp_dataset* train, const ovlp_dataset* eval,
                       ovlp_model** model_out, char** log_json) {
  return guard([&] {
    need(cfg, "config");
    need(train, "train");
    need(model_out, "model_out");
    ovlp::TrainResult r = ovlp::train(cfg->cfg, train->ds, eval_or_train(train, eval));
    if (log_json) *log_json = dup(r.log.to_json().dump(2));
    *model_out = new ovlp_model{std::move(r.model)};
  });
}

ovlp_status ovlp_model_save(const ovlp_model* model, const char* path) {
  return guard([&] {
    need(model, "model");
    need(path, "path");
    model->model.save(path);
  });
}

ovlp_status ovlp_model_load(const char* path, ovlp_model** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new ovlp_model{ovlp::GroundingModel::load(path)};
  });
}

ovlp_status ovlp_model_config_hash(const ovlp_model* model, char** out) {
  return guard([&] {
    need(model, "model");
    need(out, "out");
    *out = dup(model->model.config().hash());
  });
}

void ovlp_model_free(ovlp_model* model) { delete model; }

ovlp_status ovlp_evaluate(const ovlp_model* model, const ovlp_dataset* ds, const ovlp_config* cfg,
                          char** report_json) {
  return guard([&] {
    need(model, "model");
    need(ds, "dataset");
    need(report_json, "report_json");
    const ovlp::RunConfig& mc = model->model.config();
    const ovlp::RunConfig* use = &mc;
    if (cfg) {
      if (cfg->cfg.hash() != mc.hash()) {
        throw ovlp::Error(ovlp::ErrorCode::ConfigMismatch, "checkpoint was trained with config hash " + mc.hash() +
                                                               ", supplied config hashes to " + cfg->cfg.hash());
      }
      use = &cfg->cfg;
    }
    use->validate_for(ds->ds);
    const auto preds = ovlp::predict_all(model->model, ds->ds);
    const ovlp::MetricReport r = ovlp::evaluate_predictions(ds->ds, preds, use->eval_thresholds, use->em_k);
    *report_json = dup(r.to_json().dump(2));
  });
}

ovlp_status ovlp_report_format(const char* report_json, char** out) {
  return guard([&] {
    need(report_json, "report_json");
    need(out, "out");
    const ovlp::MetricReport r = ovlp::MetricReport::from_json(nlohmann::json::parse(report_json));
    *out = dup(ovlp::format_report_table(r));
  });
}

ovlp_status ovlp_ablate(const ovlp_config* cfg, const uint64_t* seeds, size_t n_seeds, const ovlp_dataset* train,
                        const ovlp_dataset* eval, char** table_json, char** text) {
  return guard([&] {
    need(cfg, "config");
    need(train, "train");
    need(table_json, "table_json");
    const auto s = seed_list(seeds, n_seeds);
    const auto rows = ovlp::ablation_rows();
    const ovlp::AblationTable t = ovlp::ablate(cfg->cfg, rows, s, train->ds, eval_or_train(train, eval));
    *table_json = dup(t.to_json().dump(2));
    if (text) *text = dup(t.to_text());
  });
}

ovlp_status ovlp_delta_sweep(const ovlp_config* cfg, const double* deltas, size_t n_deltas, const uint64_t* seeds,
                             size_t n_seeds, const ovlp_dataset* train, const ovlp_dataset* eval, ovlp_sweep** out) {
  return guard([&] {
    need(cfg, "config");
    need(train, "train");
    need(out, "out");
    if (n_deltas == 0) ovlp::reject("at least one delta required");
    need(deltas, "deltas");
    const auto s = seed_list(seeds, n_seeds);
    const std::vector<double> d(deltas, deltas + n_deltas);
    *out = new ovlp_sweep{ovlp::delta_sweep(cfg->cfg, d, s, train->ds, eval_or_train(train, eval))};
  });
}

ovlp_status ovlp_sweep_json(const ovlp_sweep* sweep, char** out) {
  return guard([&] {
    need(sweep, "sweep");
    need(out, "out");
    *out = dup(sweep->result.to_json().dump(2));
  });
}

ovlp_status ovlp_sweep_csv(const ovlp_sweep* sweep, const char* variant, const char* metric, char** out) {
  return guard([&] {
    need(sweep, "sweep");
    need(variant, "variant");
    need(metric, "metric");
    need(out, "out");
    *out = dup(sweep->result.csv(variant, metric));
  });
}

void ovlp_sweep_free(ovlp_sweep* sweep) { delete sweep; }

ovlp_status ovlp_gradcheck(const ovlp_config* cfg, const uint64_t* seeds, size_t n_seeds, double h, double tol,
                           int corrupt, int* pass, char** report_json) {
  return guard([&] {
    need(cfg, "config");
    need(pass, "pass");
    const auto s = seed_list(seeds, n_seeds);
    const ovlp::CompositeGradcheck r = ovlp::gradcheck_composite(cfg->cfg, s, h, tol, corrupt != 0);
    *pass = r.pass ? 1 : 0;
    if (report_json) *report_json = dup(r.to_json().dump(2));
  });
}

ovlp_status ovlp_compare_scratch(const ovlp_config* cfg, const uint64_t* seeds, size_t n_seeds,
                                 const ovlp_dataset* train, const ovlp_dataset* eval, char** out) {
  return guard([&] {
    need(cfg, "config");
    need(train, "train");
    need(out, "out");
    const auto s = seed_list(seeds, n_seeds);
    *out = dup(ovlp::compare_scratch(cfg->cfg, s, train->ds, eval_or_train(train, eval)).dump(2));
  });
}

}  // extern "C"
