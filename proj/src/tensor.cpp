#include "crossrf/tensor.hpp"

#include <sstream>

namespace crossrf {

Index numel(const Shape& shape) {
    Index n = 1;
    for (Index d : shape) n *= d;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void check_shape(const Shape& shape, Index size) {
    for (Index d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + to_string(shape));
    }
    if (numel(shape) != size) {
        throw ShapeError("shape " + to_string(shape) + " does not match " + std::to_string(size) +
                         " values");
    }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> Tape<Scalar>::constant(Shape shape, Vec value) {
    check_shape(shape, value.size());
    Node n;
    n.op = "constant";
    n.shape = std::move(shape);
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <typename Scalar>
Tensor<Scalar> Tape<Scalar>::variable(Shape shape, Vec value) {
    check_shape(shape, value.size());
    Node n;
    n.op = "variable";
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <typename Scalar>
Tensor<Scalar> Tape<Scalar>::parameter(Parameter<Scalar>& param) {
    check_shape(param.shape, param.value.size());
    Node n;
    n.op = "parameter";
    n.shape = param.shape;
    n.value = param.value;
    n.requires_grad = param.requires_grad;
    n.param = &param;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <typename Scalar>
Tensor<Scalar> Tape<Scalar>::record(const char* op, Shape shape, Vec value,
                                    std::vector<std::size_t> inputs, BackwardFn backward) {
    if (numel(shape) != value.size()) {
        throw ShapeError(std::string(op) + ": output shape " + to_string(shape) +
                         " does not match value size");
    }
    Node n;
    n.op = op;
    n.shape = std::move(shape);
    n.value = std::move(value);
    for (std::size_t in : inputs) {
        if (nodes_[in].requires_grad) n.requires_grad = true;
    }
#ifndef NDEBUG
    if (!n.value.allFinite()) {
        bool inputs_finite = true;
        for (std::size_t in : inputs) inputs_finite = inputs_finite && nodes_[in].value.allFinite();
        if (inputs_finite) throw NumericalError(std::string(op) + " produced a non-finite value");
    }
#endif
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <typename Scalar>
void Tape<Scalar>::backward(const Tensor<Scalar>& loss) {
    if (&loss.tape() != this) throw std::invalid_argument("backward: loss is not on this tape");
    const std::size_t root = loss.id();
    if (nodes_[root].value.size() != 1) {
        throw ShapeError("backward: loss must be scalar, got shape " + to_string(nodes_[root].shape));
    }
    for (Node& n : nodes_) n.grad.resize(0);
    if (!nodes_[root].requires_grad) return;
    nodes_[root].grad = Vec::Ones(1);

    for (std::size_t i = root + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.size() == 0) continue;
        if (n.backward) n.backward(*this, i);
        if (n.param != nullptr) {
            Parameter<Scalar>& p = *n.param;
            if (p.grad.size() != n.grad.size()) p.grad.setZero(n.grad.size());
            p.grad += n.grad;
        }
    }
}

template <typename Scalar>
const typename Tape<Scalar>::Vec& Tape<Scalar>::grad(const Tensor<Scalar>& t) const {
    const Node& n = nodes_.at(t.id());
    if (!n.requires_grad) throw std::logic_error("grad: tensor does not require grad");
    if (n.grad.size() == 0) throw std::logic_error("grad: tensor is not reachable from the loss");
    return n.grad;
}

template <typename Scalar>
bool Tape<Scalar>::has_grad(const Tensor<Scalar>& t) const {
    const Node& n = nodes_.at(t.id());
    return n.requires_grad && n.grad.size() != 0;
}

template <typename Scalar>
std::string Tape<Scalar>::first_nonfinite_op() const {
    for (const Node& n : nodes_) {
        if (!n.value.allFinite()) return n.op;
    }
    return {};
}

template class Tape<float>;
template class Tape<double>;

}  // namespace crossrf
