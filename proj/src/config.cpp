#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "ovlp/error.hpp"
#include "ovlp/harness.hpp"

namespace ovlp {

using nlohmann::json;

namespace {

json mlp_to_json(const MlpSpec& s) {
  return {{"layer_dims", s.layer_dims},
          {"nonlinearity", s.nonlinearity == Nonlinearity::Tanh ? "tanh" : "relu"},
          {"output_normalize", s.output_normalize}};
}

[[noreturn]] void bad_field(const std::string& field, const std::string& what) {
  throw Error(ErrorCode::Parse, "config field '" + field + "' " + what);
}

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) bad_field(where, "must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, _] : j.items())
    if (!ok.count(k)) bad_field(where.empty() ? k : where + "." + k, "is not a recognized setting");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    bad_field(where.empty() ? key : where + "." + key, "has the wrong type");
  }
}

MlpSpec mlp_from_json(const json& j, MlpSpec spec, const std::string& where) {
  check_keys(j, where, {"layer_dims", "nonlinearity", "output_normalize"});
  read(j, "layer_dims", spec.layer_dims, where);
  std::string nl = spec.nonlinearity == Nonlinearity::Tanh ? "tanh" : "relu";
  read(j, "nonlinearity", nl, where);
  if (nl == "tanh") {
    spec.nonlinearity = Nonlinearity::Tanh;
  } else if (nl == "relu") {
    spec.nonlinearity = Nonlinearity::Relu;
  } else {
    bad_field(where + ".nonlinearity", "must be \"tanh\" or \"relu\"");
  }
  read(j, "output_normalize", spec.output_normalize, where);
  return spec;
}

json model_json(const RunConfig& c) {
  return {{"proposal_encoder", mlp_to_json(c.proposal_encoder)},
          {"text_encoder", mlp_to_json(c.text_encoder)},
          {"fusion_head", mlp_to_json(c.fusion_head)},
          {"box_head", mlp_to_json(c.box_head)},
          {"qa_head", mlp_to_json(c.qa_head)},
          {"filter", {{"delta", c.filter.delta}, {"epsilon", c.filter.epsilon}}},
          {"similarity",
           {{"kind", c.similarity.kind == SimilarityKind::Dot ? "dot" : "cosine"},
            {"temperature", c.similarity.temperature}}},
          {"loss_weights",
           {{"w_vg", c.loss_weights.w_vg},
            {"w_oid", c.loss_weights.w_oid},
            {"w_occ", c.loss_weights.w_occ},
            {"w_osc", c.loss_weights.w_osc},
            {"w_qa", c.loss_weights.w_qa}}},
          {"toggles", {{"oid", c.toggles.oid}, {"occ", c.toggles.occ}, {"osc", c.toggles.osc}}},
          {"optimizer",
           {{"lr", c.optimizer.lr},
            {"momentum", c.optimizer.momentum},
            {"epochs", c.optimizer.epochs},
            {"batch_size", c.optimizer.batch_size}}},
          {"qa",
           {{"epochs", c.qa.epochs}, {"freeze_encoders", c.qa.freeze_encoders}, {"pretrain", c.qa.pretrain}}},
          {"seed", c.seed}};
}

}  // namespace

void RunConfig::validate() const {
  for (const MlpSpec* s : {&proposal_encoder, &text_encoder, &fusion_head, &box_head, &qa_head}) s->validate();
  filter.validate();
  similarity.validate();
  loss_weights.validate();
  const std::size_t d = proposal_encoder.output_dim();
  if (text_encoder.output_dim() != d) reject("text_encoder and proposal_encoder must share the embedding size");
  if (fusion_head.input_dim() != 3 * d || fusion_head.output_dim() != 1) {
    reject("fusion_head must map 3 x embedding (" + std::to_string(3 * d) + ") to 1");
  }
  const std::size_t box_in = d + proposal_encoder.input_dim();
  if (box_head.input_dim() != box_in || box_head.output_dim() != 6) {
    reject("box_head must map embedding plus proposal features (" + std::to_string(box_in) + ") to 6 offsets");
  }
  if (qa_head.input_dim() != 2 * d) reject("qa_head input must be 2 x embedding (" + std::to_string(2 * d) + ")");
  if (optimizer.epochs < 1) reject("optimizer.epochs must be >= 1");
  if (optimizer.batch_size < 1) reject("optimizer.batch_size must be >= 1");
  if (!(optimizer.lr > 0.0)) reject("optimizer.lr must be > 0");
  if (!(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0)) reject("optimizer.momentum must lie in [0, 1)");
  if (qa.epochs < 0) reject("qa.epochs must be >= 0");
  if (!qa.pretrain && qa.epochs < 1) reject("qa.epochs must be >= 1 when training from scratch");
  for (double k : eval_thresholds)
    if (!(k > 0.0 && k <= 1.0)) reject("eval thresholds must lie in (0, 1]");
  for (std::size_t k : em_k)
    if (k < 1) reject("em_k entries must be >= 1");
  if (threads < 1) reject("threads must be >= 1");
}

void RunConfig::validate_for(const Dataset& ds) const {
  if (proposal_encoder.input_dim() != ds.feature_dim()) {
    throw Error(ErrorCode::ConfigMismatch, "proposal_encoder expects " + std::to_string(proposal_encoder.input_dim()) +
                                               " features, dataset provides " + std::to_string(ds.feature_dim()));
  }
  if (text_encoder.input_dim() != ds.description_dim()) {
    throw Error(ErrorCode::ConfigMismatch, "text_encoder expects " + std::to_string(text_encoder.input_dim()) +
                                               " description entries, dataset provides " +
                                               std::to_string(ds.description_dim()));
  }
  if (qa_head.output_dim() != static_cast<std::size_t>(ds.num_colors())) {
    throw Error(ErrorCode::ConfigMismatch, "qa_head has " + std::to_string(qa_head.output_dim()) +
                                               " answers, dataset has " + std::to_string(ds.num_colors()));
  }
}

json RunConfig::to_json() const {
  json j = model_json(*this);
  j["train_data"] = train_data;
  j["eval_data"] = eval_data;
  j["eval_thresholds"] = eval_thresholds;
  j["em_k"] = em_k;
  j["threads"] = threads;
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  check_keys(j, "",
             {"train_data", "eval_data", "proposal_encoder", "text_encoder", "fusion_head", "box_head", "qa_head",
              "filter", "similarity", "loss_weights", "toggles", "optimizer", "qa", "seed", "eval_thresholds", "em_k",
              "threads"});
  RunConfig c;
  read(j, "train_data", c.train_data, "");
  read(j, "eval_data", c.eval_data, "");
  if (j.contains("proposal_encoder")) c.proposal_encoder = mlp_from_json(j["proposal_encoder"], c.proposal_encoder, "proposal_encoder");
  if (j.contains("text_encoder")) c.text_encoder = mlp_from_json(j["text_encoder"], c.text_encoder, "text_encoder");
  if (j.contains("fusion_head")) c.fusion_head = mlp_from_json(j["fusion_head"], c.fusion_head, "fusion_head");
  if (j.contains("box_head")) c.box_head = mlp_from_json(j["box_head"], c.box_head, "box_head");
  if (j.contains("qa_head")) c.qa_head = mlp_from_json(j["qa_head"], c.qa_head, "qa_head");
  if (j.contains("filter")) {
    const json& f = j["filter"];
    check_keys(f, "filter", {"delta", "epsilon"});
    read(f, "delta", c.filter.delta, "filter");
    read(f, "epsilon", c.filter.epsilon, "filter");
  }
  if (j.contains("similarity")) {
    const json& s = j["similarity"];
    check_keys(s, "similarity", {"kind", "temperature"});
    std::string kind = "dot";
    read(s, "kind", kind, "similarity");
    if (kind == "dot") {
      c.similarity.kind = SimilarityKind::Dot;
    } else if (kind == "cosine") {
      c.similarity.kind = SimilarityKind::Cosine;
    } else {
      bad_field("similarity.kind", "must be \"dot\" or \"cosine\"");
    }
    read(s, "temperature", c.similarity.temperature, "similarity");
  }
  if (j.contains("loss_weights")) {
    const json& w = j["loss_weights"];
    check_keys(w, "loss_weights", {"w_vg", "w_oid", "w_occ", "w_osc", "w_qa"});
    read(w, "w_vg", c.loss_weights.w_vg, "loss_weights");
    read(w, "w_oid", c.loss_weights.w_oid, "loss_weights");
    read(w, "w_occ", c.loss_weights.w_occ, "loss_weights");
    read(w, "w_osc", c.loss_weights.w_osc, "loss_weights");
    read(w, "w_qa", c.loss_weights.w_qa, "loss_weights");
  }
  if (j.contains("toggles")) {
    const json& t = j["toggles"];
    check_keys(t, "toggles", {"oid", "occ", "osc"});
    read(t, "oid", c.toggles.oid, "toggles");
    read(t, "occ", c.toggles.occ, "toggles");
    read(t, "osc", c.toggles.osc, "toggles");
  }
  if (j.contains("optimizer")) {
    const json& o = j["optimizer"];
    check_keys(o, "optimizer", {"lr", "momentum", "epochs", "batch_size"});
    read(o, "lr", c.optimizer.lr, "optimizer");
    read(o, "momentum", c.optimizer.momentum, "optimizer");
    read(o, "epochs", c.optimizer.epochs, "optimizer");
    read(o, "batch_size", c.optimizer.batch_size, "optimizer");
  }
  if (j.contains("qa")) {
    const json& q = j["qa"];
    check_keys(q, "qa", {"epochs", "freeze_encoders", "pretrain"});
    read(q, "epochs", c.qa.epochs, "qa");
    read(q, "freeze_encoders", c.qa.freeze_encoders, "qa");
    read(q, "pretrain", c.qa.pretrain, "qa");
  }
  read(j, "seed", c.seed, "");
  read(j, "eval_thresholds", c.eval_thresholds, "");
  read(j, "em_k", c.em_k, "");
  read(j, "threads", c.threads, "");
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  json j;
  try {
    j = json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Parse, "config '" + path + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

std::string RunConfig::hash() const {
  const std::string text = model_json(*this).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace ovlp
