#include "ovlp/diffkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "ovlp/error.hpp"
#include "ovlp/matrix.hpp"

namespace ovlp {

Param& ParamStore::add(const std::string& name, std::vector<std::size_t> shape) {
  if (params_.count(name)) reject("duplicate parameter name '" + name + "'");
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  Param& p = params_[name];
  p.shape = std::move(shape);
  p.value.assign(n, 0.0);
  p.grad.assign(n, 0.0);
  p.velocity.assign(n, 0.0);
  return p;
}

Param& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) reject("unknown parameter '" + name + "'");
  return it->second;
}

const Param& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) reject("unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::reset_velocity() {
  for (auto& [_, p] : params_) std::fill(p.velocity.begin(), p.velocity.end(), 0.0);
}

void ParamStore::zero_grad() {
  for (auto& [_, p] : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value.size();
  return n;
}

void MlpSpec::validate() const {
  if (layer_dims.size() < 2) reject("mlp needs at least input and output dims");
  for (std::size_t d : layer_dims)
    if (d == 0) reject("mlp layer dims must be positive");
}

Mlp::Mlp(MlpSpec spec, std::string prefix) : spec_(std::move(spec)), prefix_(std::move(prefix)) {
  spec_.validate();
  for (std::size_t l = 0; l < layers(); ++l) {
    weight_names_.push_back(prefix_ + ".w" + std::to_string(l));
    bias_names_.push_back(prefix_ + ".b" + std::to_string(l));
  }
}

void Mlp::declare(ParamStore& store) const {
  for (std::size_t l = 0; l < layers(); ++l) {
    const std::size_t in = spec_.layer_dims[l], out = spec_.layer_dims[l + 1];
    store.add(weight_name(l), {out, in});
    store.add(bias_name(l), {out});
  }
}

void Mlp::init(ParamStore& store, Rng& rng, bool zero_last) const {
  for (std::size_t l = 0; l < layers(); ++l) {
    if (!store.contains(weight_name(l))) reject(prefix_ + ": parameters not declared");
    const std::size_t in = spec_.layer_dims[l], out = spec_.layer_dims[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    const bool zero = zero_last && l + 1 == layers();
    for (double& w : store.at(weight_name(l)).value) w = zero ? 0.0 : rng.uniform(-bound, bound);
    std::fill(store.at(bias_name(l)).value.begin(), store.at(bias_name(l)).value.end(), 0.0);
  }
  store.touch();
}

MlpCache Mlp::forward(const ParamStore& store, std::span<const double> input) const {
  if (input.size() != spec_.input_dim()) {
    reject(prefix_ + ": input has dimension " + std::to_string(input.size()) + ", expected " +
           std::to_string(spec_.input_dim()));
  }
  MlpCache c;
  c.store_version = store.version();
  std::vector<double> x(input.begin(), input.end());
  for (std::size_t l = 0; l < layers(); ++l) {
    const std::size_t in = spec_.layer_dims[l], out = spec_.layer_dims[l + 1];
    const std::vector<double>& w = store.at(weight_name(l)).value;
    const std::vector<double>& b = store.at(bias_name(l)).value;
    std::vector<double> z(out);
    for (std::size_t o = 0; o < out; ++o) z[o] = b[o] + dot(std::span<const double>(w.data() + o * in, in), x);
    c.inputs.push_back(std::move(x));
    c.pre.push_back(z);
    if (l + 1 < layers()) {
      for (double& v : z) v = spec_.nonlinearity == Nonlinearity::Tanh ? std::tanh(v) : std::max(0.0, v);
    }
    x = std::move(z);
  }
  c.unnormalized = x;
  if (spec_.output_normalize) {
    const double norm = std::sqrt(dot(x, x));
    if (norm == 0.0) reject(prefix_ + ": cannot normalize a zero output");
    for (double& v : x) v /= norm;
  }
  c.output = std::move(x);
  return c;
}

std::vector<double> Mlp::backward(ParamStore& store, const MlpCache& cache, std::span<const double> upstream) const {
  if (cache.store_version != store.version() || cache.inputs.size() != layers()) {
    reject(prefix_ + ": stale forward cache");
  }
  if (upstream.size() != spec_.output_dim()) reject(prefix_ + ": upstream gradient has wrong dimension");
  std::vector<double> g(upstream.begin(), upstream.end());
  if (spec_.output_normalize) {
    const std::vector<double>& y = cache.output;
    const double norm = std::sqrt(dot(cache.unnormalized, cache.unnormalized));
    const double yg = dot(y, g);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = (g[i] - y[i] * yg) / norm;
  }
  for (std::size_t l = layers(); l-- > 0;) {
    const std::size_t in = spec_.layer_dims[l], out = spec_.layer_dims[l + 1];
    if (l + 1 < layers()) {
      const std::vector<double>& z = cache.pre[l];
      for (std::size_t o = 0; o < out; ++o) {
        if (spec_.nonlinearity == Nonlinearity::Tanh) {
          const double t = std::tanh(z[o]);
          g[o] *= 1.0 - t * t;
        } else {
          g[o] *= z[o] > 0.0 ? 1.0 : 0.0;
        }
      }
    }
    Param& w = store.at(weight_name(l));
    Param& b = store.at(bias_name(l));
    const std::vector<double>& x = cache.inputs[l];
    std::vector<double> gx(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double go = g[o];
      b.grad[o] += go;
      if (go == 0.0) continue;
      double* wg = w.grad.data() + o * in;
      const double* wv = w.value.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) {
        wg[i] += go * x[i];
        gx[i] += go * wv[i];
      }
    }
    g = std::move(gx);
  }
  return g;
}

double min_abs_hidden_preactivation(const MlpCache& cache) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l + 1 < cache.pre.size(); ++l)
    for (double z : cache.pre[l]) m = std::min(m, std::abs(z));
  return m;
}

void sgd_step(ParamStore& store, double lr, double momentum) {
  if (!(lr > 0.0)) reject("sgd_step: learning rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) reject("sgd_step: momentum must lie in [0, 1)");
  for (auto& [_, p] : store.params()) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      p.velocity[i] = momentum * p.velocity[i] + p.grad[i];
      p.value[i] -= lr * p.velocity[i];
      p.grad[i] = 0.0;
    }
  }
  store.touch();
}

namespace {

GradcheckReport central_differences(const LossClosure& closure, const ValueClosure& value, ParamStore& store,
                                    double h, double tol) {
  if (!(h > 0.0)) reject("gradcheck: step must be > 0");
  store.zero_grad();
  const double base = closure(store, true);
  std::map<std::string, std::vector<double>> analytic;
  for (auto& [name, p] : store.params()) analytic[name] = p.grad;
  store.zero_grad();

  const long double v0 = value(store);
  const long double again = value(store);
  if (std::memcmp(&v0, &again, sizeof(double)) != 0 || v0 != again) {
    reject("gradcheck: closure is not deterministic (repeated evaluation differs)");
  }
  if (std::abs(static_cast<double>(v0) - base) > 1e-9 * std::max(1.0, std::abs(base))) {
    reject("gradcheck: value closure disagrees with the gradient closure");
  }

  GradcheckReport r;
  for (auto& [name, p] : store.params()) {
    double worst = 0.0;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double x0 = p.value[i];
      const double xp = x0 + h, xm = x0 - h;
      p.value[i] = xp;
      store.touch();
      const long double fp = value(store);
      p.value[i] = xm;
      store.touch();
      const long double fm = value(store);
      p.value[i] = x0;
      store.touch();
      // The realized step, since x0 +- h is rounded to double.
      const double num = static_cast<double>((fp - fm) / (static_cast<long double>(xp) - xm));
      const double a = analytic[name][i];
      double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-8});
      if (std::isnan(rel)) rel = std::numeric_limits<double>::infinity();
      worst = std::max(worst, rel);
      if (rel > r.worst) {
        r.worst = rel;
        r.worst_param = name;
        r.worst_index = i;
      }
      ++r.coordinates;
    }
    r.max_rel_error[name] = worst;
  }
  store.zero_grad();
  r.pass = r.worst <= tol;
  return r;
}

}  // namespace

GradcheckReport gradcheck(const LossClosure& closure, ParamStore& store, double h, double tol) {
  const ValueClosure value = [&](const ParamStore&) { return static_cast<long double>(closure(store, false)); };
  return central_differences(closure, value, store, h, tol);
}

GradcheckReport gradcheck(const LossClosure& closure, const ValueClosure& value, ParamStore& store, double h,
                          double tol) {
  return central_differences(closure, value, store, h, tol);
}

nlohmann::json params_to_json(const ParamStore& store) {
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& [name, p] : store.params()) doc[name] = {{"shape", p.shape}, {"data", p.value}};
  return doc;
}

void params_from_json(const nlohmann::json& doc, ParamStore& store) {
  if (!doc.is_object()) throw Error(ErrorCode::Parse, "checkpoint parameters must be a JSON object");
  if (doc.size() != store.params().size()) {
    throw Error(ErrorCode::ConfigMismatch, "checkpoint has " + std::to_string(doc.size()) + " parameters, model expects " +
                                               std::to_string(store.params().size()));
  }
  for (auto& [name, p] : store.params()) {
    if (!doc.contains(name)) throw Error(ErrorCode::ConfigMismatch, "checkpoint lacks parameter '" + name + "'");
    const auto& entry = doc.at(name);
    std::vector<std::size_t> shape;
    std::vector<double> data;
    try {
      shape = entry.at("shape").get<std::vector<std::size_t>>();
      data = entry.at("data").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::Parse, "checkpoint parameter '" + name + "': " + e.what());
    }
    if (shape != p.shape || data.size() != p.value.size()) {
      throw Error(ErrorCode::ConfigMismatch, "checkpoint parameter '" + name + "' has a different shape");
    }
    p.value = std::move(data);
    std::fill(p.grad.begin(), p.grad.end(), 0.0);
    std::fill(p.velocity.begin(), p.velocity.end(), 0.0);
  }
  store.touch();
}

}  // namespace ovlp
