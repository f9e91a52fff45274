#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace neurohybrid {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {
template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // allocated lazily, same length as values once present
  bool requires_grad = false;
};
}  // namespace detail

// Dense N-d tensor with shared storage. Copies are shallow handles; clone()
// makes a deep copy. Gradients live next to the values so a tensor can be
// used both as a network parameter and as an intermediate activation.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : s_(std::make_shared<detail::TensorStorage<T>>()) {}

  explicit Tensor(Shape shape, T fill = T(0)) : s_(std::make_shared<detail::TensorStorage<T>>()) {
    const int64_t n = shape_numel(shape);
    s_->shape = std::move(shape);
    s_->values.assign(static_cast<size_t>(n), fill);
  }

  Tensor(Shape shape, std::vector<T> values) : s_(std::make_shared<detail::TensorStorage<T>>()) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
      throw std::invalid_argument("tensor: value count " + std::to_string(values.size()) +
                                  " does not match shape " + shape_str(shape));
    s_->shape = std::move(shape);
    s_->values = std::move(values);
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  const Shape& shape() const { return s_->shape; }
  int64_t extent(size_t axis) const { return s_->shape.at(axis); }
  size_t rank() const { return s_->shape.size(); }
  int64_t numel() const { return static_cast<int64_t>(s_->values.size()); }

  T* data() { return s_->values.data(); }
  const T* data() const { return s_->values.data(); }
  std::vector<T>& values() { return s_->values; }
  const std::vector<T>& values() const { return s_->values; }

  T& operator[](int64_t i) { return s_->values[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return s_->values[static_cast<size_t>(i)]; }

  bool requires_grad() const { return s_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    s_->requires_grad = b;
    return *this;
  }

  bool has_grad() const { return !s_->grad.empty(); }
  std::vector<T>& grad() {
    ensure_grad();
    return s_->grad;
  }
  const std::vector<T>& grad() const {
    if (s_->grad.empty()) throw std::logic_error("tensor: gradient not allocated");
    return s_->grad;
  }
  void ensure_grad() {
    if (s_->grad.empty()) s_->grad.assign(s_->values.size(), T(0));
  }
  void zero_grad() {
    if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
  }

  Tensor clone() const {
    Tensor c;
    c.s_->shape = s_->shape;
    c.s_->values = s_->values;
    c.s_->requires_grad = s_->requires_grad;
    return c;
  }

  void fill(T v) { std::fill(s_->values.begin(), s_->values.end(), v); }

  // Identity of the underlying storage; two handles to one tensor compare equal.
  const void* id() const { return s_.get(); }
  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

 private:
  std::shared_ptr<detail::TensorStorage<T>> s_;
};

// Reverse-mode tape. Operations append a closure that scatters the output
// gradient back to the inputs; backward() replays them newest-first.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> fn, std::vector<Tensor<T>> touched) {
    for (auto& t : touched) t.ensure_grad();
    for (const auto& t : touched) known_.insert(t.id());
    nodes_.push_back(Node{std::move(fn), std::move(touched)});
  }

  size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    known_.clear();
  }

  void zero_gradients() {
    for (auto& n : nodes_)
      for (auto& t : n.touched) t.zero_grad();
  }

  void backward(Tensor<T>& loss) {
    if (loss.numel() != 1)
      throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
    if (!known_.count(loss.id()))
      throw std::invalid_argument("backward: loss tensor was not produced on this tape");
    loss.ensure_grad();
    loss.grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
  }

 private:
  struct Node {
    std::function<void()> fn;
    std::vector<Tensor<T>> touched;
  };
  std::vector<Node> nodes_;
  std::unordered_set<const void*> known_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace neurohybrid
