#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "savehr/matrix.hpp"

namespace savehr {

// A learnable array: value plus an accumulated gradient of the same shape.
struct ParamSlot {
    std::string name;
    Matrix value;
    Matrix grad;

    ParamSlot() = default;
    ParamSlot(std::string n, Matrix v)
        : name(std::move(n)), value(std::move(v)), grad(Matrix::zeros(value.rows, value.cols)) {}

    void zero_grad() { grad.fill(0.0); }
};

// Define-by-run reverse-mode tape. Rebuilt per forward pass; backward replays
// recorded ops in reverse insertion order, which fixes the accumulation order.
class Tape {
public:
    struct Var {
        int id{-1};
        bool valid() const { return id >= 0; }
    };

    Var constant(Matrix m);
    Var scalar(double v);
    // Leases a parameter onto the tape; backward() flushes the accumulated
    // gradient back into slot.grad.
    Var param(ParamSlot& slot);

    const Matrix& val(Var v) const { return nodes_[v.id].value; }
    const Matrix& grad_of(Var v) const { return nodes_[v.id].grad; }

    Var matmul(Var a, Var b);
    Var transpose(Var a);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var hadamard(Var a, Var b);
    Var scale(Var a, double c);
    // Elementwise a*x + b.
    Var affine(Var x, double a, double b);
    Var tanh_elem(Var a);
    Var sigmoid_elem(Var a);
    Var relu_elem(Var a);
    Var row_softmax(Var a);
    Var log_elem(Var a);
    Var sum_all(Var a);
    Var pick(Var a, int r, int c);
    // Multiplies every entry of m by the scalar node s (1x1); grads to both.
    Var scale_by(Var m, Var s);
    Var gather_rows(Var table, const std::vector<int>& ids);
    // Appends one column of constants (no gradient through the column).
    Var append_col_const(Var m, const std::vector<double>& col);
    Var reshape(Var a, int r, int c);
    // Stacks a on top of b (same column count).
    Var vconcat(Var a, Var b);
    // Extends m with zero rows up to total_rows.
    Var pad_rows(Var m, int total_rows);
    // Stacks 1x1 scalars into a single 1xn row.
    Var hstack_scalars(const std::vector<Var>& xs);
    Var dropout_mask(Var a, const std::vector<double>& keep_mask, double keep_prob);

    void backward(Var loss);

    std::size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
    };

    int push(Matrix value);
    Matrix& g(int id) { return nodes_[id].grad; }
    const Matrix& v(int id) const { return nodes_[id].value; }

    std::vector<Node> nodes_;
    std::vector<std::function<void(Tape&)>> back_;
    std::vector<std::pair<ParamSlot*, int>> leased_;
};

}  // namespace savehr
