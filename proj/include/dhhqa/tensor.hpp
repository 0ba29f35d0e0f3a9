#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace dhhqa {

// Reverse-mode autograd over dense double tensors. Ops build an implicit
// graph of shared nodes; backward() runs a topological sweep from a scalar
// loss, accumulating into the grad buffers of requires_grad leaves.
class Tensor {
 public:
  struct Node;
  using NodePtr = std::shared_ptr<Node>;

  struct Node {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // same length as data once backward touches it
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;  // pushes grad into parents

    std::size_t numel() const { return data.size(); }
    void ensure_grad() {
      if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
  };

  Tensor() = default;
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}
  Tensor(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);

  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }
  std::vector<double>& grad() { return node_->grad; }
  const std::vector<double>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  std::size_t numel() const { return node_->numel(); }
  std::size_t dim(int i) const { return node_->shape.at(i); }
  std::size_t ndim() const { return node_->shape.size(); }
  NodePtr node() const { return node_; }
  double item() const;

  void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

  // reverse-mode sweep; `*this` must be scalar
  void backward() const;

 private:
  NodePtr node_;
};

namespace detail {
// 32-bit matrix kernels shared with the training fast path. C[m,n] += A[m,k]·B[k,n].
void sgemm_acc(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
               std::size_t n);
// C[m,n] += Aᵀ·B with A stored [k,m]
void sgemm_at_b_acc(const float* a, const float* b, float* c, std::size_t k, std::size_t m,
                    std::size_t n);
// C[m,k] += A·Bᵀ with A [m,n], B [k,n]
void sgemm_a_bt_acc(const float* a, const float* b, float* c, std::size_t m, std::size_t n,
                    std::size_t k);
}  // namespace detail

// elementwise, same shape
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

// [m x k] * [k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);  // 2-D

// broadcast a row vector [n] over the rows of [m x n]
Tensor add_rowvec(const Tensor& a, const Tensor& row);

Tensor reshape(const Tensor& a, std::vector<std::size_t> shape);

// along the last axis
Tensor softmax(const Tensor& a);
// standard normalization with learned gamma/beta, epsilon 1e-5
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta);
Tensor gelu(const Tensor& a);

// mean over axis 0 of [m x n] -> [n]
Tensor mean_axis0(const Tensor& a);
Tensor sum_all(const Tensor& a);  // -> scalar []

// row-wise stacking / slicing of 2-D tensors
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);

}  // namespace dhhqa
