#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dppt/common.hpp"

namespace dppt {

class Tensor;

namespace detail {

struct TensorImpl;

// Per-backward-pass gradient buffers, keyed by tensor identity. Kept
// outside TensorImpl so independent backward passes (one per sample)
// can run on different threads against shared parameter leaves.
using GradTable = std::unordered_map<const TensorImpl*, std::vector<double>>;

struct Node {
    std::vector<std::shared_ptr<TensorImpl>> parents;
    // Receives the output gradient and accumulates into the parents'
    // entries of the table.
    std::function<void(const std::vector<double>&, GradTable&)> backprop;
};

struct TensorImpl {
    std::vector<int64_t> shape;
    std::vector<double> data;
    std::optional<std::vector<double>> grad;
    std::shared_ptr<Node> node;  // null for leaves and no-grad results
    bool requires_grad = false;
};

bool grad_enabled();

// Reverse topological sweep from `loss`; returns gradients for every
// requires-grad tensor in the reachable graph. Does not touch .grad.
GradTable run_backward(const Tensor& loss);

std::vector<double>& grad_buf(GradTable& table, const TensorImpl* t);

}  // namespace detail

// Disables graph construction in scope (thread-local), torch-style.
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Dense row-major float64 tensor with optional reverse-mode gradient
// tracking. Copies are shallow (shared storage); ops allocate new
// tensors. Single-threaded graph construction per graph.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int64_t> shape);
    static Tensor full(std::vector<int64_t> shape, double value);
    static Tensor from_data(std::vector<int64_t> shape, std::vector<double> data);
    static Tensor scalar(double value);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int64_t>& shape() const;
    int64_t dim(int i) const;
    int ndim() const;
    int64_t numel() const;

    double* data();
    const double* data() const;
    double item() const;  // numel()==1 only
    double at(std::initializer_list<int64_t> idx) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool v);  // leaves only
    bool is_leaf() const;

    // Populated by backward(); null until then.
    const std::vector<double>* grad() const;
    void zero_grad();
    void accumulate_grad(const std::vector<double>& g);

    // Same data (copied), no graph history, requires_grad off.
    Tensor detach() const;
    Tensor clone() const;  // deep copy, leaf

    const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

private:
    friend Tensor make_result(std::vector<int64_t>, std::vector<double>,
                              std::vector<Tensor>,
                              std::function<void(const std::vector<double>&, detail::GradTable&)>);
    std::shared_ptr<detail::TensorImpl> impl_;
};

int64_t numel_of(const std::vector<int64_t>& shape);
std::string shape_str(const std::vector<int64_t>& shape);

// ---- operations -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// same-shape add, or matrix[m x n] + bias row[n]
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-6);
Tensor gelu(const Tensor& x);
Tensor mse(const Tensor& a, const Tensor& b);  // mean reduction
Tensor sum(const Tensor& x);
Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& indices);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& x, int64_t r0, int64_t r1);
Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& x, std::vector<int64_t> shape);

// Populates .grad on every requires-grad tensor reachable from `loss`
// (accumulating across calls). `loss` must be scalar.
void backward(const Tensor& loss);

}  // namespace dppt
