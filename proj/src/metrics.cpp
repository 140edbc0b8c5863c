#include "ovlp/metrics.hpp"

#include <algorithm>
#include <cstdio>

#include "ovlp/error.hpp"

namespace ovlp {

namespace {

// Mean of `values` overall and per split tag.
SplitValues split_mean(std::span<const double> values, std::span<const SplitTag> tags) {
  SplitValues out;
  double sum = 0.0, su = 0.0, sm = 0.0;
  std::size_t nu = 0, nm = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    sum += values[i];
    if (tags[i] == SplitTag::Unique) {
      su += values[i];
      ++nu;
    } else {
      sm += values[i];
      ++nm;
    }
  }
  out.overall = sum / static_cast<double>(values.size());
  if (nu) out.unique = su / static_cast<double>(nu);
  if (nm) out.multiple = sm / static_cast<double>(nm);
  return out;
}

std::string fmt_threshold(const char* prefix, double k) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s@%g", prefix, k);
  return buf;
}

}  // namespace

SplitValues acc_at_k(std::span<const GroundingOutcome> outcomes, double k) {
  if (outcomes.empty()) reject("acc_at_k: no outcomes");
  std::vector<double> hit;
  std::vector<SplitTag> tags;
  for (const GroundingOutcome& o : outcomes) {
    hit.push_back(iou(o.predicted_box, o.gt_box) >= k ? 1.0 : 0.0);
    tags.push_back(o.split_tag);
  }
  return split_mean(hit, tags);
}

double m_at_k_iou(std::span<const GatedScore> scores, double k) {
  if (scores.empty()) reject("m_at_k_iou: no scores");
  double sum = 0.0;
  for (const GatedScore& s : scores) sum += s.iou >= k ? s.metric_value : 0.0;
  return sum / static_cast<double>(scores.size());
}

SplitValues m_at_k_iou_by_split(std::span<const GatedScore> scores, double k) {
  if (scores.empty()) reject("m_at_k_iou: no scores");
  std::vector<double> gated;
  std::vector<SplitTag> tags;
  for (const GatedScore& s : scores) {
    gated.push_back(s.iou >= k ? s.metric_value : 0.0);
    tags.push_back(s.split_tag);
  }
  return split_mean(gated, tags);
}

double em_at_k(std::span<const std::vector<int>> ranked_answers, std::span<const std::set<int>> gt_answers,
               std::size_t k) {
  if (ranked_answers.size() != gt_answers.size()) reject("em_at_k: prediction and ground-truth counts differ");
  if (ranked_answers.empty()) reject("em_at_k: no samples");
  if (k == 0) reject("em_at_k: k must be >= 1");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ranked_answers.size(); ++i) {
    const auto& ranked = ranked_answers[i];
    const std::size_t top = std::min(k, ranked.size());
    hits += std::any_of(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(top),
                        [&](int a) { return gt_answers[i].count(a) != 0; });
  }
  return static_cast<double>(hits) / static_cast<double>(ranked_answers.size());
}

std::string acc_key(double k) { return fmt_threshold("acc", k); }
std::string m_key(double k) { return fmt_threshold("m", k); }
std::string em_key(std::size_t k) { return "em@" + std::to_string(k); }

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, v] : values) {
    nlohmann::json e = {{"overall", v.overall}};
    e["unique"] = v.unique ? nlohmann::json(*v.unique) : nlohmann::json(nullptr);
    e["multiple"] = v.multiple ? nlohmann::json(*v.multiple) : nlohmann::json(nullptr);
    j[name] = e;
  }
  return {{"samples", samples}, {"metrics", j}};
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  try {
    r.samples = j.at("samples").get<std::size_t>();
    for (const auto& [name, e] : j.at("metrics").items()) {
      SplitValues v;
      v.overall = e.at("overall").get<double>();
      if (!e.at("unique").is_null()) v.unique = e.at("unique").get<double>();
      if (!e.at("multiple").is_null()) v.multiple = e.at("multiple").get<double>();
      r.values[name] = v;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("metric report: ") + e.what());
  }
  return r;
}

}  // namespace ovlp
