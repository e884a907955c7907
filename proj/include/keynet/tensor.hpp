#pragma once

#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace keynet {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

class Tensor;

// One node per op output. `backward` propagates the output's grad into the
// parents' grad buffers.
struct TensorNode {
  std::vector<Tensor> parents;
  std::function<void(Tensor&)> backward;
};

// Dense row-major 64-bit tensor. Value-semantics handle over shared storage;
// copying a Tensor aliases the same data, which is what the autograd graph
// needs to route gradients back to the original parameter.
class Tensor {
 public:
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  std::shared_ptr<std::vector<double>> grad;  // allocated on demand
  bool requires_grad = false;
  std::shared_ptr<TensorNode> node;  // null for leaves

  Tensor() = default;

  static Tensor zeros(Shape s, bool requires_grad = false) {
    Tensor t;
    t.shape = std::move(s);
    validate_shape(t.shape);
    t.data = std::make_shared<std::vector<double>>(shape_numel(t.shape), 0.0);
    t.requires_grad = requires_grad;
    // Gradient storage is allocated up front so every copy of this handle
    // aliases the same buffer.
    if (requires_grad) {
      t.grad = std::make_shared<std::vector<double>>(t.data->size(), 0.0);
    }
    return t;
  }

  static Tensor full(Shape s, double value, bool requires_grad = false) {
    Tensor t = zeros(std::move(s), requires_grad);
    for (double& v : *t.data) v = value;
    return t;
  }

  static Tensor from_values(Shape s, std::vector<double> values,
                            bool requires_grad = false) {
    Tensor t;
    t.shape = std::move(s);
    validate_shape(t.shape);
    if (values.size() != shape_numel(t.shape)) {
      throw std::invalid_argument("Tensor: " + std::to_string(values.size()) +
                                  " values for shape " + shape_str(t.shape));
    }
    t.data = std::make_shared<std::vector<double>>(std::move(values));
    t.requires_grad = requires_grad;
    if (requires_grad) {
      t.grad = std::make_shared<std::vector<double>>(t.data->size(), 0.0);
    }
    return t;
  }

  std::size_t numel() const { return data ? data->size() : 0; }
  bool defined() const { return static_cast<bool>(data); }
  bool is_leaf() const { return !node; }

  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& at(int i, int j) { return (*data)[idx2(i, j)]; }
  double at(int i, int j) const { return (*data)[idx2(i, j)]; }
  double& operator[](std::size_t i) { return (*data)[i]; }
  double operator[](std::size_t i) const { return (*data)[i]; }

  std::vector<double>& values() { return *data; }
  const std::vector<double>& values() const { return *data; }

  void ensure_grad() {
    if (!grad) grad = std::make_shared<std::vector<double>>(numel(), 0.0);
  }

  void zero_grad() {
    if (grad) {
      for (double& g : *grad) g = 0.0;
    }
  }

  double scalar() const {
    if (numel() != 1) {
      throw std::invalid_argument("Tensor::scalar on shape " +
                                  shape_str(shape));
    }
    return (*data)[0];
  }

 private:
  static void validate_shape(const Shape& s) {
    for (int d : s) {
      if (d <= 0) {
        throw std::invalid_argument("Tensor: non-positive extent in " +
                                    shape_str(s));
      }
    }
  }

  std::size_t idx2(int i, int j) const {
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(cols()) +
           static_cast<std::size_t>(j);
  }
};

// Reverse-mode sweep from a scalar root. Leaf gradients accumulate across
// calls; interior gradients are rebuilt per call.
inline void backward(Tensor& root) {
  if (root.numel() != 1) {
    throw std::invalid_argument("backward: root must be scalar, got " +
                                shape_str(root.shape));
  }

  // Topological order over op nodes.
  std::vector<Tensor> order;
  std::unordered_set<const TensorNode*> seen;
  std::vector<std::pair<Tensor, std::size_t>> stack;
  if (root.node && !seen.count(root.node.get())) {
    seen.insert(root.node.get());
    stack.emplace_back(root, 0);
  }
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    if (next < t.node->parents.size()) {
      Tensor p = t.node->parents[next++];
      if (p.node && !seen.count(p.node.get())) {
        seen.insert(p.node.get());
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(t);
      stack.pop_back();
    }
  }

  // Fresh interior grads for this pass.
  for (Tensor& t : order) {
    t.ensure_grad();
    t.zero_grad();
    for (Tensor& p : t.node->parents) {
      if (p.requires_grad) p.ensure_grad();
    }
  }
  root.ensure_grad();
  if (root.node) (*root.grad)[0] = 0.0;
  (*root.grad)[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (it->node->backward) it->node->backward(*it);
  }
}

}  // namespace keynet
