#pragma once

// Dense double-precision tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto shared storage. Operations are free
// functions that take the Tape they record onto as their first argument; an
// operation is only recorded when at least one input requires a gradient and
// the tape is enabled, so inference runs on a disabled tape allocate no
// adjoint state at all.

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace transfir::numerics {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                         bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return static_cast<bool>(storage_); }

    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;
    std::size_t rows() const;
    // Product of all trailing dimensions; the row width of a row-major view.
    std::size_t cols() const;

    std::span<const double> values() const;
    // Direct write access. Only optimizers and tests should mutate a tensor
    // after it has been consumed by a recorded operation.
    std::span<double> mutable_values();

    double at(std::size_t i) const { return values()[i]; }
    double at(std::size_t r, std::size_t c) const { return values()[r * cols() + c]; }
    double item() const;

    bool requires_grad() const;
    bool has_grad() const;
    std::span<const double> grad() const;
    // Allocates a zero gradient buffer on first access.
    std::span<double> grad_buffer();
    void zero_grad();
    void clear_grad();

    // Copy of the values with no gradient tracking (stop-gradient).
    Tensor detach() const;
    // Deep copy preserving requires_grad but not the gradient.
    Tensor clone() const;

    bool same_storage(const Tensor& other) const noexcept { return storage_ == other.storage_; }

private:
    struct Storage {
        Shape shape;
        std::vector<double> values;
        std::vector<double> grad;
        bool requires_grad = false;
        bool has_grad = false;
    };

    explicit Tensor(std::shared_ptr<Storage> s) : storage_(std::move(s)) {}
    Storage& storage() const;

    std::shared_ptr<Storage> storage_;
};

// Ordered record of executed operations. backward() replays the adjoints in
// reverse order, each exactly once, and then clears the record.
class Tape {
public:
    explicit Tape(bool enabled = true) : enabled_(enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool enabled() const noexcept { return enabled_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    // True when an op with these inputs must be recorded.
    bool should_record(std::initializer_list<const Tensor*> inputs) const;
    void record(Tensor output, std::function<void(std::span<const double>)> adjoint);

    void backward(const Tensor& loss);
    void clear() { nodes_.clear(); }

private:
    struct Node {
        Tensor output;
        std::function<void(std::span<const double>)> adjoint;
    };
    bool enabled_;
    std::vector<Node> nodes_;
};

// ---- Operations -------------------------------------------------------------

// x[n×a]·W[a×b] + bias[b]; bias may be undefined.
Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias = {});
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
// a[n×k]·b[m×k]ᵀ
Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& x, double factor);
Tensor sum(Tape& tape, const Tensor& x);

Tensor tanh(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor relu(Tape& tape, const Tensor& x);

Tensor softmax_rows(Tape& tape, const Tensor& x);
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& shift,
                  double eps = 1e-5);

// Rows of x selected by index, in index order (duplicates allowed).
Tensor gather_rows(Tape& tape, const Tensor& x, std::span<const std::size_t> index);
Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts);
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);

// Two-row convolution: stack is 2×d, kernels C×2×w (w odd), zero padding
// (w-1)/2. Output C×d.
Tensor conv_rows(Tape& tape, const Tensor& stack, const Tensor& kernels);
// Batched form over S (first, second) row pairs; output S×(C·d), channel-major.
Tensor conv_pairs(Tape& tape, const Tensor& first, const Tensor& second, const Tensor& kernels);

// Mean over rows of -log softmax(logits)[target].
Tensor cross_entropy_logits(Tape& tape, const Tensor& logits, std::span<const std::size_t> target);

// Multi-head scaled dot-product self-attention restricted to segments.
// offsets has S+1 entries delimiting rows of q/k/v; heads must divide the width.
Tensor segment_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                         std::span<const std::size_t> offsets, std::size_t heads);
// Softmax of an N×1 score column within each segment.
Tensor segment_softmax(Tape& tape, const Tensor& scores, std::span<const std::size_t> offsets);
// Row S of the result is Σ weights[i]·x[i] over segment S; empty segments give zeros.
Tensor segment_weighted_sum(Tape& tape, const Tensor& weights, const Tensor& x,
                            std::span<const std::size_t> offsets);

// ---- Parameters -------------------------------------------------------------

// Glorot-uniform matrix of the given shape (defaults to fan_in×fan_out).
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng, Shape shape = {});

// Named trainable tensors. Handles share storage with the owning struct.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

// ---- Gradient checking ------------------------------------------------------

// Builds a scalar loss on the given tape from captured parameters.
using ScalarFn = std::function<Tensor(Tape&)>;

// Central-difference check of d loss / d param. Perturbs param in place and
// restores it. Returns max |a - n| / (|a| + |n| + 1e-12) over coordinates.
double finite_diff_check(const ScalarFn& f, Tensor param, double h = 1e-5);

// Same check for a function of a single tensor argument.
double finite_diff_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x,
                         double h = 1e-5);

}  // namespace transfir::numerics
