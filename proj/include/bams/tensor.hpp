#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace bams {

// Shape/operand mismatch between tensors.
struct DimError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// API misuse (non-scalar loss, stepping a finished episode, ...).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Invalid run configuration; the message names the offending field.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Filesystem/serialization failure.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training diverged (NaN gradient/loss).
struct TrainAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // same length as values once allocated
  bool requires_grad = false;
  std::string name;  // parameters carry names for diagnostics
};

// Dense row-major 64-bit float tensor. Copies share storage; ops produce
// fresh tensors and record their adjoints on the active Tape, if any.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool track = false);

  static Tensor zeros(Shape shape, bool track = false);
  static Tensor full(Shape shape, double fill, bool track = false);
  static Tensor scalar(double v, bool track = false);

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  int64_t size() const { return static_cast<int64_t>(d_->values.size()); }
  bool tracked() const { return d_ && d_->requires_grad; }

  std::vector<double>& values() { return d_->values; }
  const std::vector<double>& values() const { return d_->values; }
  double item() const;  // value of a single-element tensor

  // Gradient buffer; allocated (zeroed) on first access.
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();
  bool all_finite() const;

  void set_name(std::string n) { d_->name = std::move(n); }
  const std::string& name() const { return d_->name; }

  Tensor detached() const;  // value copy, tracking off
  Tensor clone() const;     // deep copy, tracking preserved

  const std::shared_ptr<TensorData>& data() const { return d_; }

 private:
  std::shared_ptr<TensorData> d_;
};

// Reverse-mode record of one forward pass. Constructing a Tape makes it the
// active record for the current thread; destruction restores the previous
// one. Ops append a node when at least one operand is tracked. backward()
// replays nodes in reverse order, visiting each exactly once.
//
// A record and the tensors it references belong to one thread. Disjoint
// records may run on different threads concurrently.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  struct Node {
    const char* op;
    std::vector<int64_t> inputs;
    int64_t output;
    std::function<void()> back;
  };

  void record(const char* op, const std::vector<Tensor>& inputs, const Tensor& output,
              std::function<void()> back);

  // Seeds d(loss)=1 and accumulates gradients into every recorded tensor.
  // loss must be a tracked scalar produced under this record.
  void backward(const Tensor& loss);

  int64_t node_count() const { return static_cast<int64_t>(nodes_.size()); }
  int64_t last_backward_visits() const { return visits_; }
  const std::vector<Node>& nodes() const { return nodes_; }

 private:
  int64_t id_of(const TensorData* t);

  std::vector<Node> nodes_;
  std::unordered_map<const TensorData*, int64_t> ids_;
  int64_t next_id_ = 0;
  int64_t visits_ = 0;
  Tape* prev_ = nullptr;
};

}  // namespace bams
