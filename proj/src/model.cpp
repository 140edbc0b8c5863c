#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ovlp/error.hpp"
#include "ovlp/harness.hpp"
#include "extended.hpp"

namespace ovlp {

using nlohmann::json;

GroundingModel::GroundingModel(const RunConfig& cfg)
    : cfg_(cfg),
      proposal_encoder_(cfg.proposal_encoder, "proposal_encoder"),
      text_encoder_(cfg.text_encoder, "text_encoder"),
      fusion_(cfg.fusion_head, "fusion_head"),
      box_head_(cfg.box_head, "box_head"),
      qa_head_(cfg.qa_head, "qa_head") {
  cfg_.validate();
  for (const Mlp* m : {&proposal_encoder_, &text_encoder_, &fusion_, &box_head_, &qa_head_}) m->declare(store_);
}

void GroundingModel::init(std::uint64_t seed) {
  Rng rng(seed);
  proposal_encoder_.init(store_, rng);
  text_encoder_.init(store_, rng);
  fusion_.init(store_, rng);
  // Zero offsets until OID gives the box head a gradient.
  box_head_.init(store_, rng, /*zero_last=*/true);
  qa_head_.init(store_, rng);
  store_.zero_grad();
  store_.reset_velocity();
}

Aabb3 GroundingModel::refine(const Aabb3& box, std::span<const double> offsets) {
  Aabb3 out = box;
  for (int i = 0; i < 3; ++i) {
    out.center[i] = box.center[i] + box.size[i] * offsets[i];
    out.size[i] = box.size[i] * std::exp(offsets[3 + i]);
  }
  return out;
}

namespace {

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

std::vector<double> concat(std::initializer_list<std::span<const double>> parts) {
  std::vector<double> out;
  for (auto p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::vector<double> hadamard(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

void add_into(std::span<double> dst, std::span<const double> src, double scale = 1.0) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

// Forward state of one sample.
struct SampleState {
  std::vector<MlpCache> enc;
  MlpCache text;
  std::vector<MlpCache> fusion;
  std::vector<double> scores;
  FilterResult partition;
  Matrix grad_h;
  std::vector<double> grad_t;
};

// Matching-score input [H, T, H * T].
std::vector<double> fusion_input(std::span<const double> h, std::span<const double> t) {
  return concat({h, t, hadamard(h, t)});
}

// The box head sees the raw proposal features next to the embedding, so the
// offsets stay tied to the proposal's own geometry.
std::vector<double> box_input(std::span<const double> h, std::span<const double> features) {
  std::vector<double> out(h.begin(), h.end());
  out.insert(out.end(), features.begin(), features.end());
  return out;
}

}  // namespace

GroundingModel::BatchTerms GroundingModel::batch_loss(std::span<const SceneSample* const> batch, Stage stage,
                                                     bool with_grad) {
  if (batch.empty()) reject("batch_loss: empty batch");
  const std::size_t d = proposal_encoder_.spec().output_dim();
  const LossWeights& w = cfg_.loss_weights;
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  const bool pre = stage == Stage::Pretrain;
  const bool do_vg = (pre || stage == Stage::Scratch) && w.w_vg > 0.0;
  const bool do_oid = pre && cfg_.toggles.oid && w.w_oid > 0.0;
  const bool do_occ = pre && cfg_.toggles.occ && w.w_occ > 0.0;
  const bool do_osc = pre && cfg_.toggles.osc && w.w_osc > 0.0;
  const bool do_qa = (stage == Stage::Finetune || stage == Stage::Scratch) && w.w_qa > 0.0;
  const bool train_encoders = stage != Stage::Finetune || !cfg_.qa.freeze_encoders;

  // Label smoothing is part of the IoU-guided detection module; without it the
  // matching target is the one-hot argmax-IoU proposal.
  FilterConfig fcfg = cfg_.filter;
  if (!(pre && cfg_.toggles.oid)) fcfg.epsilon = 0.0;

  std::vector<SampleState> st(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const SceneSample& s = *batch[b];
    SampleState& x = st[b];
    const std::size_t n = s.proposals.size();
    x.text = text_encoder_.forward(store_, s.description_code);
    const std::vector<double>& t = x.text.output;
    for (std::size_t p = 0; p < n; ++p) {
      x.enc.push_back(proposal_encoder_.forward(store_, s.proposal_features.row(p)));
      const std::vector<double>& h = x.enc.back().output;
      x.fusion.push_back(fusion_.forward(store_, fusion_input(h, t)));
      x.scores.push_back(x.fusion.back().output[0]);
    }
    x.partition = filter(s.proposals, s.target().box, fcfg);
    x.grad_h = Matrix(n, d);
    x.grad_t.assign(d, 0.0);
  }

  BatchTerms out;
  std::vector<std::vector<double>> dscores(batch.size());

  if (do_vg) {
    double sum = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const CrossEntropyResult ce = cross_entropy(st[b].scores, st[b].partition.weights);
      sum += ce.loss;
      dscores[b] = ce.grad;
      for (double& g : dscores[b]) g *= w.w_vg * inv_b;
    }
    out.terms.vg = sum * inv_b;
  }

  if (do_oid) {
    double sum = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const SceneSample& s = *batch[b];
      SampleState& x = st[b];
      const std::size_t n = s.proposals.size();
      std::vector<Aabb3> refined(s.proposals);
      std::vector<MlpCache> heads(n);
      for (std::size_t p = 0; p < n; ++p) {
        if (x.partition.weights[p] == 0.0) continue;
        heads[p] = box_head_.forward(store_, box_input(x.enc[p].output, s.proposal_features.row(p)));
        refined[p] = refine(s.proposals[p], heads[p].output);
      }
      const OidResult oid = oid_loss(refined, s.target().box, x.partition);
      sum += oid.loss;
      if (!with_grad) continue;
      for (std::size_t p = 0; p < n; ++p) {
        if (x.partition.weights[p] == 0.0) continue;
        std::vector<double> doff(6);
        for (int i = 0; i < 3; ++i) {
          doff[i] = oid.grads[p][i] * s.proposals[p].size[i];
          doff[3 + i] = oid.grads[p][3 + i] * refined[p].size[i];
        }
        for (double& g : doff) g *= w.w_oid * inv_b;
        const std::vector<double> gh = box_head_.backward(store_, heads[p], doff);
        add_into(x.grad_h.row(p), std::span<const double>(gh).subspan(0, d));
      }
    }
    out.terms.oid = sum * inv_b;
  }

  if (do_occ || do_osc) {
    std::vector<EmbeddingSet> sets(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      EmbeddingSet& e = sets[b];
      const std::size_t n = st[b].enc.size();
      e.proposal_embeddings = Matrix(n, d);
      for (std::size_t p = 0; p < n; ++p) std::copy_n(st[b].enc[p].output.begin(), d, e.proposal_embeddings.row(p).begin());
      e.text_embedding = st[b].text.output;
      e.partition = st[b].partition;
    }
    if (do_occ) {
      if (auto r = occ_loss(sets, cfg_.similarity)) {
        out.terms.occ = r->loss;
        if (with_grad) {
          for (std::size_t b = 0; b < batch.size(); ++b) {
            add_into(st[b].grad_h.data, r->grads[b].proposal_embeddings.data, w.w_occ);
            add_into(st[b].grad_t, r->grads[b].text_embedding, w.w_occ);
          }
        }
      }
    }
    if (do_osc) {
      if (auto r = osc_loss(sets, cfg_.similarity)) {
        out.terms.osc = r->loss;
        if (with_grad) {
          for (std::size_t b = 0; b < batch.size(); ++b)
            add_into(st[b].grad_h.data, r->grads[b].proposal_embeddings.data, w.w_osc);
        }
      }
    }
  }

  if (do_qa) {
    double sum = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const SceneSample& s = *batch[b];
      SampleState& x = st[b];
      const std::size_t top = argmax(x.scores);
      const MlpCache qa = qa_head_.forward(store_, concat({x.enc[top].output, x.text.output}));
      std::vector<double> target(qa.output.size(), 0.0);
      target[static_cast<std::size_t>(s.qa_answer_id)] = 1.0;
      const CrossEntropyResult ce = cross_entropy(qa.output, target);
      sum += ce.loss;
      if (!with_grad) continue;
      std::vector<double> g = ce.grad;
      for (double& v : g) v *= w.w_qa * inv_b;
      const std::vector<double> gx = qa_head_.backward(store_, qa, g);
      if (train_encoders) {
        add_into(x.grad_h.row(top), std::span<const double>(gx).subspan(0, d));
        add_into(x.grad_t, std::span<const double>(gx).subspan(d, d));
      }
    }
    out.terms.qa = sum * inv_b;
  }

  if (with_grad) {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      SampleState& x = st[b];
      const std::vector<double>& t = x.text.output;
      for (std::size_t p = 0; p < x.enc.size(); ++p) {
        if (do_vg) {
          const double ds = dscores[b][p];
          const std::vector<double> gx = fusion_.backward(store_, x.fusion[p], std::span<const double>(&ds, 1));
          const std::vector<double>& h = x.enc[p].output;
          auto gh = x.grad_h.row(p);
          for (std::size_t i = 0; i < d; ++i) {
            gh[i] += gx[i] + gx[2 * d + i] * t[i];
            x.grad_t[i] += gx[d + i] + gx[2 * d + i] * h[i];
          }
        }
        if (!train_encoders) continue;
        const auto gh = x.grad_h.row(p);
        if (std::any_of(gh.begin(), gh.end(), [](double v) { return v != 0.0; })) {
          proposal_encoder_.backward(store_, x.enc[p], gh);
        }
      }
      if (train_encoders) text_encoder_.backward(store_, x.text, x.grad_t);
    }
    if (corruption_ != 1.0) {
      for (std::size_t l = 0; l < fusion_.layers(); ++l) {
        for (double& g : store_.at(fusion_.weight_name(l)).grad) g *= corruption_;
      }
    }
  }

  out.report = total_loss(out.terms, w);
  return out;
}

long double GroundingModel::precise_loss(std::span<const SceneSample* const> batch, Stage stage) const {
  using ext::Real;
  using ext::Vec;
  if (batch.empty()) reject("precise_loss: empty batch");
  const LossWeights& w = cfg_.loss_weights;
  const bool pre = stage == Stage::Pretrain;
  const bool do_vg = (pre || stage == Stage::Scratch) && w.w_vg > 0.0;
  const bool do_oid = pre && cfg_.toggles.oid && w.w_oid > 0.0;
  const bool do_occ = pre && cfg_.toggles.occ && w.w_occ > 0.0;
  const bool do_osc = pre && cfg_.toggles.osc && w.w_osc > 0.0;
  const bool do_qa = (stage == Stage::Finetune || stage == Stage::Scratch) && w.w_qa > 0.0;
  FilterConfig fcfg = cfg_.filter;
  if (!(pre && cfg_.toggles.oid)) fcfg.epsilon = 0.0;

  Real vg = 0.0L, oid = 0.0L, occ = 0.0L, osc = 0.0L, qa = 0.0L;
  std::size_t occ_used = 0, osc_used = 0;
  for (const SceneSample* sp : batch) {
    const SceneSample& s = *sp;
    const std::size_t n = s.proposals.size();
    const Vec t = ext::mlp_forward(text_encoder_, store_, ext::widen(s.description_code));
    std::vector<Vec> h(n);
    Vec scores(n);
    std::vector<double> rounded(n);
    for (std::size_t p = 0; p < n; ++p) {
      h[p] = ext::mlp_forward(proposal_encoder_, store_, ext::widen(s.proposal_features.row(p)));
      Vec in = h[p];
      in.insert(in.end(), t.begin(), t.end());
      for (std::size_t i = 0; i < t.size(); ++i) in.push_back(h[p][i] * t[i]);
      scores[p] = ext::mlp_forward(fusion_, store_, in)[0];
      rounded[p] = static_cast<double>(scores[p]);
    }
    const FilterResult fr = filter(s.proposals, s.target().box, fcfg);
    if (do_vg) vg += ext::cross_entropy(scores, fr.weights);
    if (do_oid) {
      for (std::size_t p = 0; p < n; ++p) {
        if (fr.weights[p] == 0.0) continue;
        Vec in = h[p];
        for (double f : s.proposal_features.row(p)) in.push_back(f);
        const Vec off = ext::mlp_forward(box_head_, store_, in);
        oid += fr.weights[p] * ext::diou_loss(ext::refine(s.proposals[p], off), s.target().box);
      }
    }
    if (do_occ && !fr.pos_indices.empty()) {
      occ += ext::occ_sample(h, t, fr, cfg_.similarity);
      ++occ_used;
    }
    if (do_osc && fr.pos_indices.size() >= 2) {
      osc += ext::osc_sample(h, fr, cfg_.similarity);
      ++osc_used;
    }
    if (do_qa) {
      Vec in = h[argmax(rounded)];
      in.insert(in.end(), t.begin(), t.end());
      const Vec logits = ext::mlp_forward(qa_head_, store_, in);
      std::vector<double> target(logits.size(), 0.0);
      target.at(static_cast<std::size_t>(s.qa_answer_id)) = 1.0;
      qa += ext::cross_entropy(logits, target);
    }
  }
  const Real b = static_cast<Real>(batch.size());
  Real total = 0.0L;
  if (do_vg) total += w.w_vg * vg / b;
  if (do_oid) total += w.w_oid * oid / b;
  if (occ_used > 0) total += w.w_occ * occ / static_cast<Real>(occ_used);
  if (osc_used > 0) total += w.w_osc * osc / static_cast<Real>(osc_used);
  if (do_qa) total += w.w_qa * qa / b;
  return total;
}

Prediction GroundingModel::predict(const SceneSample& s) const {
  const std::vector<double> t = text_encoder_.forward(store_, s.description_code).output;
  std::vector<double> scores;
  std::vector<std::vector<double>> hs;
  for (std::size_t p = 0; p < s.proposals.size(); ++p) {
    hs.push_back(proposal_encoder_.forward(store_, s.proposal_features.row(p)).output);
    scores.push_back(fusion_.forward(store_, fusion_input(hs.back(), t)).output[0]);
  }
  Prediction out;
  out.selected = argmax(scores);
  out.box = refine(s.proposals[out.selected], box_head_.forward(store_, box_input(hs[out.selected], s.proposal_features.row(out.selected))).output);
  const std::vector<double> logits = qa_head_.forward(store_, concat({hs[out.selected], t})).output;
  out.ranked_answers.resize(logits.size());
  std::iota(out.ranked_answers.begin(), out.ranked_answers.end(), 0);
  std::stable_sort(out.ranked_answers.begin(), out.ranked_answers.end(),
                   [&](int a, int b) { return logits[a] > logits[b]; });
  return out;
}

std::vector<double> GroundingModel::qa_input(const SceneSample& s) const {
  const Prediction p = predict(s);
  const std::vector<double> t = text_encoder_.forward(store_, s.description_code).output;
  const std::vector<double> h = proposal_encoder_.forward(store_, s.proposal_features.row(p.selected)).output;
  return concat({h, t});
}

double GroundingModel::qa_head_loss(std::span<const std::vector<double>* const> inputs, std::span<const int> answers,
                                    bool with_grad) {
  if (inputs.empty() || inputs.size() != answers.size()) reject("qa_head_loss: one answer per input required");
  const double scale = cfg_.loss_weights.w_qa / static_cast<double>(inputs.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const MlpCache qa = qa_head_.forward(store_, *inputs[i]);
    std::vector<double> target(qa.output.size(), 0.0);
    target.at(static_cast<std::size_t>(answers[i])) = 1.0;
    const CrossEntropyResult ce = cross_entropy(qa.output, target);
    sum += ce.loss;
    if (!with_grad) continue;
    std::vector<double> g = ce.grad;
    for (double& v : g) v *= scale;
    qa_head_.backward(store_, qa, g);
  }
  return sum / static_cast<double>(inputs.size());
}

json GroundingModel::checkpoint_json() const {
  return {{"format", "ovlp-checkpoint"},
          {"version", 1},
          {"config_hash", cfg_.hash()},
          {"config", cfg_.to_json()},
          {"parameters", params_to_json(store_)}};
}

GroundingModel GroundingModel::from_checkpoint(const json& doc) {
  if (!doc.is_object() || !doc.contains("config") || !doc.contains("parameters") || !doc.contains("config_hash")) {
    throw Error(ErrorCode::Parse, "checkpoint must contain config, config_hash and parameters");
  }
  GroundingModel m(RunConfig::from_json(doc.at("config")));
  if (doc.at("config_hash") != m.cfg_.hash()) {
    throw Error(ErrorCode::ConfigMismatch, "checkpoint config_hash does not match its embedded config");
  }
  params_from_json(doc.at("parameters"), m.store_);
  return m;
}

void GroundingModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open '" + path + "' for writing");
  out << checkpoint_json().dump(1) << '\n';
  if (!out) throw Error(ErrorCode::Io, "write to '" + path + "' failed");
}

GroundingModel GroundingModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open checkpoint '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  json doc;
  try {
    doc = json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Parse, "checkpoint '" + path + "' is not valid JSON: " + e.what());
  }
  return from_checkpoint(doc);
}

}  // namespace ovlp
