#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace deqsep {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Operand shapes do not conform for the requested operation.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// An operation produced a non-finite value (overflow, 0/0, sqrt of a
/// negative number). Finite inputs never yield silent NaN/Inf.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Tape;

/// Dense row-major tensor of 64-bit floats. Handles are cheap to copy and
/// share storage; operations never mutate their inputs. values_mut() exists
/// for parameter updates and buffer writes between recorded passes.
class Tensor {
 public:
  struct Data {
    Shape shape;
    std::vector<double> values;
    bool requires_grad = false;
    std::shared_ptr<Data> grad;
  };

  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng);

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rank() const;
  std::size_t dim(std::size_t axis) const;

  std::span<const double> values() const;
  std::span<double> values_mut();
  double operator()(std::size_t i) const;
  double operator()(std::size_t i, std::size_t j) const;
  double operator()(std::size_t i, std::size_t j, std::size_t k) const;
  double scalar_value() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool enable);
  bool has_grad() const;
  Tensor grad() const;
  void clear_grad();
  /// Installs a gradient; refuses to overwrite one that is already present,
  /// so stale gradients must be cleared between backward passes.
  void set_grad(const Tensor& g);

  /// Value copy detached from any gradient bookkeeping.
  Tensor detach() const;

  const std::shared_ptr<Data>& node() const { return data_; }

 private:
  explicit Tensor(std::shared_ptr<Data> data) : data_(std::move(data)) {}
  std::shared_ptr<Data> data_;
};

Tensor zeros_like(const Tensor& t);
Tensor ones_like(const Tensor& t);

/// Gradient accumulator keyed by tensor identity.
class GradMap {
 public:
  void add(const Tensor& key, std::span<const double> contribution);
  bool has(const Tensor& key) const;
  Tensor get(const Tensor& key) const;
  Tensor get_or_zeros(const Tensor& key) const;

 private:
  std::unordered_map<const Tensor::Data*, std::pair<Shape, std::vector<double>>> entries_;
};

/// Records primitive operations for reverse-mode differentiation. A tape is a
/// single-threaded context; independent tapes may live on different threads.
class Tape {
 public:
  /// Maps the upstream gradient of the node output to one gradient per input
  /// (undefined entries mean "no gradient for this input").
  using BackwardFn = std::function<std::vector<Tensor>(const Tensor& upstream)>;

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  /// Reverse sweep from a scalar loss recorded on this tape. Fills `grad` on
  /// every requires-grad tensor that appears on the tape (zeros where the
  /// loss does not reach). A tape can run backward once.
  void backward(const Tensor& loss);

  /// Reverse sweep seeding d(output) = seed. Returns raw gradients without
  /// touching persistent `grad` slots; may be called repeatedly.
  GradMap accumulate(const Tensor& output, const Tensor& seed) const;

  void push(Tensor output, std::vector<Tensor> inputs, BackwardFn backward);

 private:
  struct Node {
    Tensor output;
    std::vector<Tensor> inputs;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// RAII switch for the thread's active tape; nullptr suspends recording.
class TapeScope {
 public:
  explicit TapeScope(Tape* tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Primitives. Elementwise binaries broadcast a lower-rank operand whose shape
// is a suffix of the other's (leading axes replicate); nothing else.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& t, double factor);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor tanh(const Tensor& t);
Tensor sigmoid(const Tensor& t);
Tensor relu(const Tensor& t);
Tensor sqrt(const Tensor& t);
Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis);
Tensor concat_many(const std::vector<Tensor>& parts, std::size_t axis);
Tensor concat_last(const Tensor& a, const Tensor& b);
Tensor slice(const Tensor& t, std::size_t axis, std::size_t start, std::size_t count);
Tensor reshape(const Tensor& t, Shape shape);
Tensor transpose(const Tensor& t);
Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);

/// v^T · J_f at `at`, computed on a private tape; the ambient tape is never
/// touched, so this is safe inside another backward pass.
Tensor vjp(const std::function<Tensor(const Tensor&)>& f, const Tensor& at,
           const Tensor& v);

/// Prepared VJP: records f once and supports many pulls against that tape.
class VjpFunction {
 public:
  VjpFunction(const std::function<Tensor(const Tensor&)>& f, const Tensor& at);
  const Tensor& output() const { return output_; }
  Tensor pull(const Tensor& v) const;

 private:
  Tape tape_;
  Tensor probe_;
  Tensor output_;
  Shape at_shape_;
};

/// Runs `forward` with recording suspended and places one opaque node on the
/// active tape; interior operations leave no tape footprint.
Tensor custom_gradient(const std::vector<Tensor>& inputs,
                       const std::function<Tensor()>& forward,
                       const Tape::BackwardFn& backward);

/// Named map of trainable tensors. Iteration order is lexicographic in the
/// parameter path, so serialization and optimizer sweeps are deterministic.
class ParamSet {
 public:
  Tensor& declare(const std::string& path, Tensor value);
  const Tensor& at(const std::string& path) const;
  bool contains(const std::string& path) const;
  std::size_t total_count() const;
  void zero_grad();
  const std::map<std::string, Tensor>& entries() const { return entries_; }

 private:
  std::map<std::string, Tensor> entries_;
};

// Plain numeric helpers; never recorded.
double l2_norm(const Tensor& t);
double max_abs(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);
double dot(const Tensor& a, const Tensor& b);

}  // namespace deqsep
