#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace crossrf {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Mode { Train, Eval };

/// Thrown for malformed shapes or arguments passed to a tensor op.
class ShapeError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown when a forward value or loss becomes non-finite.
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// A persistent, trainable array. Lives outside any tape; a tape binds to it
/// through Tape::parameter() and accumulates into `grad` on backward().
template <typename Scalar>
struct Parameter {
    Shape shape;
    Vector<Scalar> value;
    Vector<Scalar> grad;
    bool requires_grad = true;

    Parameter() = default;
    explicit Parameter(Shape s) : shape(std::move(s)), value(Vector<Scalar>::Zero(numel(shape))) {}

    /// Drops the gradient; a parameter with no gradient is treated as unreached.
    void clear_grad() { grad.resize(0); }
    [[nodiscard]] bool has_grad() const { return grad.size() == value.size(); }
};

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid until the tape is cleared.
template <typename Scalar>
class Tensor {
  public:
    using Vec = Vector<Scalar>;

    Tensor() = default;
    Tensor(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

    [[nodiscard]] const Shape& shape() const { return tape_->shape(id_); }
    [[nodiscard]] Index dim(std::size_t axis) const { return shape().at(axis); }
    [[nodiscard]] std::size_t rank() const { return shape().size(); }
    [[nodiscard]] Index size() const { return value().size(); }
    [[nodiscard]] const Vec& value() const { return tape_->value(id_); }
    [[nodiscard]] bool requires_grad() const { return tape_->requires_grad(id_); }
    [[nodiscard]] std::size_t id() const { return id_; }
    [[nodiscard]] Tape<Scalar>& tape() const { return *tape_; }
    [[nodiscard]] bool valid() const { return tape_ != nullptr; }

    /// Value of a single-element tensor.
    [[nodiscard]] Scalar item() const;

  private:
    Tape<Scalar>* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Reverse-mode differentiation tape. Nodes are appended in evaluation order, so
/// every node's inputs precede it and a reverse sweep is a valid topological order.
template <typename Scalar>
class Tape {
  public:
    using Vec = Vector<Scalar>;
    /// Propagates the gradient of node `self` into its inputs via accumulate().
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Tensor<Scalar> constant(Shape shape, Vec value);
    Tensor<Scalar> variable(Shape shape, Vec value);
    Tensor<Scalar> parameter(Parameter<Scalar>& param);

    /// Records an op output. `requires_grad` is inferred from the inputs.
    Tensor<Scalar> record(const char* op, Shape shape, Vec value, std::vector<std::size_t> inputs,
                          BackwardFn backward);

    /// Reverse sweep from a scalar loss. Leaf gradients are readable through grad();
    /// bound parameters have their gradients added into Parameter::grad.
    void backward(const Tensor<Scalar>& loss);

    [[nodiscard]] const Vec& grad(const Tensor<Scalar>& t) const;
    [[nodiscard]] bool has_grad(const Tensor<Scalar>& t) const;

    void clear() { nodes_.clear(); }
    [[nodiscard]] std::size_t size() const { return nodes_.size(); }

    /// Name of the first op whose output holds a NaN or Inf, or empty if none.
    [[nodiscard]] std::string first_nonfinite_op() const;

    // Accessors used by op implementations.
    [[nodiscard]] const char* op(std::size_t id) const { return nodes_[id].op; }
    [[nodiscard]] const Shape& shape(std::size_t id) const { return nodes_[id].shape; }
    [[nodiscard]] const Vec& value(std::size_t id) const { return nodes_[id].value; }
    [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    [[nodiscard]] const Vec& node_grad(std::size_t id) const { return nodes_[id].grad; }
    [[nodiscard]] std::size_t input(std::size_t id, std::size_t k) const { return nodes_[id].inputs[k]; }

    /// Adds `delta` into the gradient slot of `id`; a no-op for nodes that do not require grad.
    template <typename Derived>
    void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& delta) {
        Node& n = nodes_[id];
        if (!n.requires_grad) return;
        if (n.grad.size() == 0) {
            n.grad = delta;
        } else {
            n.grad += delta;
        }
    }

    /// Mutable slot for ops that scatter (conv, pooling). Allocated zeroed on first use.
    Vec* grad_slot(std::size_t id) {
        Node& n = nodes_[id];
        if (!n.requires_grad) return nullptr;
        if (n.grad.size() == 0) n.grad.setZero(n.value.size());
        return &n.grad;
    }

  private:
    struct Node {
        const char* op = "";
        Shape shape;
        Vec value;
        Vec grad;
        bool requires_grad = false;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        Parameter<Scalar>* param = nullptr;
    };

    std::vector<Node> nodes_;
};

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
    if (value().size() != 1) {
        throw ShapeError("item() on tensor of shape " + to_string(shape()));
    }
    return value()[0];
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace crossrf
