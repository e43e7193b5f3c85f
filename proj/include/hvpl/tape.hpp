#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "hvpl/matrix.hpp"
#include "hvpl/tree.hpp"

namespace hvpl {

// Handle into a Tape. Only valid for the tape that produced it.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense matrices. One tape per training step, single
// writer. Nodes are appended in topological order, so the backward pass is a
// single reverse walk that visits each node once. Gradients propagate only
// through subgraphs that reach a registered parameter; after backward() the
// gradients of non-parameters are released.
class Tape {
public:
    Var constant(Matrix v);
    Var param(Matrix v);

    const Matrix& val(Var v) const;
    // Gradient of the last backward() loss w.r.t. a parameter node.
    const Matrix& grad(Var v) const;
    bool is_param(Var v) const;
    size_t node_count() const { return nodes_.size(); }

    // loss must be 1x1; throws UsageError otherwise.
    void backward(Var loss);

    // --- recorded operations ---
    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b);  // a * b^T
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);  // elementwise
    Var scale(Var a, double s);
    Var add_scalar(Var a, double s);
    Var add_row(Var a, Var row);  // broadcast 1 x D over rows
    Var mul_row(Var a, Var row);
    Var mul_col(Var a, Var col);  // broadcast N x 1 over columns
    Var exp(Var a);
    Var softplus(Var a);
    Var silu(Var a);
    Var reciprocal(Var a);
    Var softmax_rows(Var a);
    Var layer_norm_rows(Var a);
    Var dwconv1d(Var x, Var kernel, Var bias);
    Var concat_rows(const std::vector<Var>& parts);
    Var concat_cols(const std::vector<Var>& parts);
    Var slice_rows(Var a, int r0, int r1);
    Var slice_cols(Var a, int c0, int c1);
    Var sum_all(Var a);

    // Two-pass tree recurrence (leaf->root accumulation, root->leaf
    // propagation) over per-vertex decay abar and drive beta, both N x Q.
    Var tree_scan(Var abar, Var beta, std::shared_ptr<const SpanningTree> tree);

    // Stable -log softmax(logits[row])[target]; output 1x1.
    Var ce_logits_row(Var logits, int row, int target);
    // Mean binary cross-entropy from logits over the listed rows against the
    // concatenated 0/1 target; output 1x1.
    Var bce_rows(Var logits, std::shared_ptr<const std::vector<int>> rows,
                 std::shared_ptr<const std::vector<uint8_t>> target);
    // Soft Dice loss (1 - overlap) with +1 smoothing over the listed rows.
    Var dice_rows(Var logits, std::shared_ptr<const std::vector<int>> rows,
                  std::shared_ptr<const std::vector<uint8_t>> target);

private:
    enum class Op : uint8_t {
        Leaf, MatMul, MatMulNT, Add, Sub, Mul, Scale, AddScalar, AddRow, MulRow,
        MulCol, Exp, Softplus, Silu, Recip, SoftmaxRows, LayerNorm, DwConv,
        ConcatRows, ConcatCols, SliceRows, SliceCols, SumAll, TreeScan,
        CeLogitsRow, BceRows, DiceRows,
    };

    struct Node {
        Matrix value;
        Op op = Op::Leaf;
        bool requires_grad = false;
        bool is_param = false;
        int in[3] = {-1, -1, -1};
        double scalar = 0.0;
        int i0 = 0, i1 = 0;
        std::shared_ptr<const void> aux;
    };

    Var push(Node n);
    Matrix& grad_buf(int id, int rows, int cols);
    void backward_node(int id);

    std::vector<Node> nodes_;
    std::vector<Matrix> grads_;
};

}  // namespace hvpl
