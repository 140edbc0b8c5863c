#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ovlp/rng.hpp"

namespace ovlp {

struct Param {
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<double> velocity;  // momentum buffer owned by sgd_step
};

/// Named parameters with paired gradient accumulators. Iteration order is by
/// name, which fixes the order of every reduction over parameters.
class ParamStore {
 public:
  Param& add(const std::string& name, std::vector<std::size_t> shape);
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::map<std::string, Param>& params() { return params_; }
  const std::map<std::string, Param>& params() const { return params_; }

  void zero_grad();
  void reset_velocity();
  std::size_t total_size() const;

  // Bumped by every optimizer step; forward caches record it.
  std::uint64_t version() const { return version_; }
  void touch() { ++version_; }

 private:
  std::map<std::string, Param> params_;
  std::uint64_t version_ = 0;
};

enum class Nonlinearity { Tanh, Relu };

struct MlpSpec {
  std::vector<std::size_t> layer_dims;  // input, hidden..., output
  Nonlinearity nonlinearity = Nonlinearity::Tanh;
  bool output_normalize = false;

  void validate() const;
  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }
};

/// What backward needs from one forward call.
struct MlpCache {
  std::uint64_t store_version = 0;
  std::vector<std::vector<double>> inputs;  // input to each affine layer
  std::vector<std::vector<double>> pre;     // pre-activation of each layer
  std::vector<double> unnormalized;         // last-layer output before normalization
  std::vector<double> output;
};

/// Dense affine layers with `nonlinearity` between them (not after the last),
/// optionally unit-normalizing the final output. Parameters live in a
/// ParamStore under "<prefix>.w<i>" (out x in) and "<prefix>.b<i>".
class Mlp {
 public:
  Mlp() = default;
  Mlp(MlpSpec spec, std::string prefix);

  const MlpSpec& spec() const { return spec_; }
  const std::string& prefix() const { return prefix_; }

  // Registers zero-valued parameters in the store.
  void declare(ParamStore& store) const;
  // Glorot-uniform weights, zero biases; zero_last zeroes the final layer.
  void init(ParamStore& store, Rng& rng, bool zero_last = false) const;

  MlpCache forward(const ParamStore& store, std::span<const double> input) const;
  // Accumulates parameter gradients into the store; returns d loss / d input.
  std::vector<double> backward(ParamStore& store, const MlpCache& cache, std::span<const double> upstream) const;

  std::size_t layers() const { return spec_.layer_dims.size() - 1; }
  const std::string& weight_name(std::size_t layer) const { return weight_names_[layer]; }
  const std::string& bias_name(std::size_t layer) const { return bias_names_[layer]; }

 private:
  MlpSpec spec_;
  std::string prefix_;
  std::vector<std::string> weight_names_, bias_names_;
};

/// Smallest |pre-activation| over hidden units; relu gradient checks require
/// this to stay clear of the kink.
double min_abs_hidden_preactivation(const MlpCache& cache);

/// v <- momentum * v + grad; p <- p - lr * v; then grads are zeroed.
void sgd_step(ParamStore& store, double lr, double momentum);

struct GradcheckReport {
  std::map<std::string, double> max_rel_error;  // per parameter
  double worst = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
  bool pass = false;
};

/// Loss closure for gradcheck. With `with_grad` it must also accumulate the
/// analytic gradient into the store (grads are zeroed beforehand).
using LossClosure = std::function<double(ParamStore&, bool with_grad)>;

/// Central differences on every coordinate with relative error
/// |a - n| / max(|a|, |n|, 1e-8). Rejects closures whose value is not
/// reproducible across repeated evaluation.
GradcheckReport gradcheck(const LossClosure& closure, ParamStore& store, double h, double tol);

/// Loss value in extended precision for the finite-difference side.
using ValueClosure = std::function<long double(const ParamStore&)>;

/// As above, with the differences taken from `value`, which must agree with
/// the closure's loss to 1e-9 relative.
GradcheckReport gradcheck(const LossClosure& closure, const ValueClosure& value, ParamStore& store, double h,
                          double tol);

/// Checkpoint: JSON object name -> {"shape": [...], "data": [...]}.
/// Values are written with round-trip precision, so reload is bit-exact.
nlohmann::json params_to_json(const ParamStore& store);
// Every declared parameter must be present with a matching shape.
void params_from_json(const nlohmann::json& doc, ParamStore& store);

}  // namespace ovlp
