#include "bams/tensor.hpp"

#include <cmath>
#include <sstream>

namespace bams {

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool track) {
  for (int d : shape) {
    if (d <= 0) throw DimError("tensor dimension must be positive, got shape " + shape_str(shape));
  }
  if (numel(shape) != static_cast<int64_t>(values.size())) {
    throw DimError("value count " + std::to_string(values.size()) + " does not match shape " +
                   shape_str(shape));
  }
  d_ = std::make_shared<TensorData>();
  d_->shape = std::move(shape);
  d_->values = std::move(values);
  d_->requires_grad = track;
  if (track) d_->grad.assign(d_->values.size(), 0.0);
}

Tensor Tensor::zeros(Shape shape, bool track) {
  return Tensor(shape, std::vector<double>(numel(shape), 0.0), track);
}

Tensor Tensor::full(Shape shape, double fill, bool track) {
  return Tensor(shape, std::vector<double>(numel(shape), fill), track);
}

Tensor Tensor::scalar(double v, bool track) { return Tensor({1}, {v}, track); }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return d_->values[0];
}

std::vector<double>& Tensor::grad() {
  if (d_->grad.size() != d_->values.size()) d_->grad.assign(d_->values.size(), 0.0);
  return d_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (d_->grad.size() != d_->values.size()) d_->grad.assign(d_->values.size(), 0.0);
  return d_->grad;
}

void Tensor::zero_grad() { d_->grad.assign(d_->values.size(), 0.0); }

bool Tensor::all_finite() const {
  for (double v : d_->values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::detached() const { return Tensor(d_->shape, d_->values, false); }

Tensor Tensor::clone() const {
  Tensor t(d_->shape, d_->values, d_->requires_grad);
  t.d_->grad = d_->grad;
  t.d_->name = d_->name;
  return t;
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

int64_t Tape::id_of(const TensorData* t) {
  auto it = ids_.find(t);
  if (it != ids_.end()) return it->second;
  int64_t id = next_id_++;
  ids_.emplace(t, id);
  return id;
}

void Tape::record(const char* op, const std::vector<Tensor>& inputs, const Tensor& output,
                  std::function<void()> back) {
  Node node;
  node.op = op;
  node.inputs.reserve(inputs.size());
  for (const Tensor& in : inputs) {
    node.inputs.push_back(id_of(in.data().get()));
    if (in.tracked()) in.data()->grad.resize(in.size(), 0.0);
  }
  node.output = id_of(output.data().get());
  output.data()->grad.assign(output.size(), 0.0);
  node.back = std::move(back);
  nodes_.push_back(std::move(node));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.tracked()) throw ContractError("backward: loss is not tracked");
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  loss.data()->grad.assign(1, 1.0);
  visits_ = 0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->back();
    ++visits_;
  }
}

}  // namespace bams
