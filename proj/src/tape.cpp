#include "hvpl/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace hvpl {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double softplus_stable(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

struct ConcatAux {
    std::vector<int> offsets;  // per part, row (or col) start
};

struct TreeScanAux {
    std::shared_ptr<const SpanningTree> tree;
    Matrix zeta;  // stashed by the forward pass for the adjoint
};

struct MaskAux {
    std::shared_ptr<const std::vector<int>> rows;
    std::shared_ptr<const std::vector<uint8_t>> target;
};

}  // namespace

Var Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix v) {
    Node n;
    n.value = std::move(v);
    return push(std::move(n));
}

Var Tape::param(Matrix v) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = true;
    n.is_param = true;
    return push(std::move(n));
}

const Matrix& Tape::val(Var v) const { return nodes_.at(v.id).value; }

bool Tape::is_param(Var v) const { return nodes_.at(v.id).is_param; }

const Matrix& Tape::grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (!n.is_param) throw UsageError("Tape::grad: node is not a registered parameter");
    if (grads_.size() != nodes_.size() || grads_[v.id].empty())
        throw StateError("Tape::grad: run backward() first");
    return grads_[v.id];
}

Matrix& Tape::grad_buf(int id, int rows, int cols) {
    Matrix& g = grads_[id];
    if (g.empty()) g = Matrix(rows, cols);
    return g;
}

Var Tape::matmul(Var a, Var b) {
    Node n;
    n.op = Op::MatMul;
    n.in[0] = a.id;
    n.in[1] = b.id;
    n.value = hvpl::matmul(val(a), val(b));
    n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
    return push(std::move(n));
}

Var Tape::matmul_nt(Var a, Var b) {
    Node n;
    n.op = Op::MatMulNT;
    n.in[0] = a.id;
    n.in[1] = b.id;
    n.value = hvpl::matmul_nt(val(a), val(b));
    n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
    return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
    Node n;
    n.op = Op::Add;
    n.in[0] = a.id;
    n.in[1] = b.id;
    n.value = hvpl::add(val(a), val(b));
    n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
    return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
    Node n;
    n.op = Op::Sub;
    n.in[0] = a.id;
    n.in[1] = b.id;
    n.value = hvpl::sub(val(a), val(b));
    n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
    return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
    Node n;
    n.op = Op::Mul;
    n.in[0] = a.id;
    n.in[1] = b.id;
    n.value = hvpl::hadamard(val(a), val(b));
    n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
    return push(std::move(n));
}

Var Tape::scale(Var a, double s) {
    Node n;
    n.op = Op::Scale;
    n.in[0] = a.id;
    n.scalar = s;
    n.value = hvpl::scale(val(a), s);
    n.requires_grad = nodes_[a.id].requires_grad;
    return push(std::move(n));
}

Var Tape::add_scalar(Var a, double s) {
    Node n;
    n.op = Op::AddScalar;
    n.in[0] = a.id;
    n.scalar = s;
    n.value = val(a);
    for (size_t i = 0; i < n.value.size(); ++i) n.value.data()[i] += s;
    n.requires_grad = nodes_[a.id].requires_grad;
    return push(std::move(n));
}

Var Tape::add_row(Var a, Var row) {
    const Matrix& r = val(row);
    check_shape(r.rows() == 1 && r.cols() == val(a).cols(), "add_row: row must be 1 x cols(a)");
    Node n;
    n.op = Op::AddRow;
    n.in[0] = a.id;
    n.in[1] = row.id;
    n.value = val(a);
    for (int i = 0; i < n.value.rows(); ++i) {
        double* o = n.value.row(i);
        for (int j = 0; j < n.value.cols(); ++j) o[j] += r(0, j);
    }
    n.requires_grad = nodes_[a.id].requires_grad || nodes_[row.id].requires_grad;
    return push(std::move(n));
}

Var Tape::mul_row(Var a, Var row) {
    const Matrix& r = val(row);
    check_shape(r.rows() == 1 && r.cols() == val(a).cols(), "mul_row: row must be 1 x cols(a)");
    Node n;
    n.op = Op::MulRow;
    n.in[0] = a.id;
    n.in[1] = row.id;
    n.value = val(a);
    for (int i = 0; i < n.value.rows(); ++i) {
        double* o = n.value.row(i);
        for (int j = 0; j < n.value.cols(); ++j) o[j] *= r(0, j);
    }
    n.requires_grad = nodes_[a.id].requires_grad || nodes_[row.id].requires_grad;
    return push(std::move(n));
}

Var Tape::mul_col(Var a, Var col) {
    const Matrix& c = val(col);
    check_shape(c.cols() == 1 && c.rows() == val(a).rows(), "mul_col: col must be rows(a) x 1");
    Node n;
    n.op = Op::MulCol;
    n.in[0] = a.id;
    n.in[1] = col.id;
    n.value = val(a);
    for (int i = 0; i < n.value.rows(); ++i) {
        double* o = n.value.row(i);
        const double f = c(i, 0);
        for (int j = 0; j < n.value.cols(); ++j) o[j] *= f;
    }
    n.requires_grad = nodes_[a.id].requires_grad || nodes_[col.id].requires_grad;
    return push(std::move(n));
}

Var Tape::exp(Var a) {
    Node n;
    n.op = Op::Exp;
    n.in[0] = a.id;
    n.value = val(a);
    for (size_t i = 0; i < n.value.size(); ++i) n.value.data()[i] = std::exp(n.value.data()[i]);
    n.requires_grad = nodes_[a.id].requires_grad;
    return push(std::move(n));
}

Var Tape::softplus(Var a) {
    Node n;
    n.op = Op::Softplus;
    n.in[0] = a.id;
    n.value = val(a);
    for (size_t i = 0; i < n.value.size(); ++i)
        n.value.data()[i] = softplus_stable(n.value.data()[i]);
    n.requires_grad = nodes_[a.id].requires_grad;
    return push(std::move(n));
}

Var Tape::silu(Var a) {
    Node n;
    n.op = Op::Silu;
    n.in[0] = a.id;
    n.value = hvpl::silu(val(a));
    n.requires_grad = nodes_[a.id].requires_grad;
    return push(std::move(n));
}

Var Tape::reciprocal(Var a) {
    Node n;
    n.op = Op::Recip;
    n.in[0] = a.id;
    n.value = val(a);
    for (size_t i = 0; i < n.value.size(); ++i) n.value.data()[i] = 1.0 / n.value.data()[i];
    n.requires_grad = nodes_[a.id].requires_grad;
    return push(std::move(n));
}

Var Tape::softmax_rows(Var a) {
    Node n;
    n.op = Op::SoftmaxRows;
    n.in[0] = a.id;
    n.value = hvpl::softmax_rows(val(a));
    n.requires_grad = nodes_[a.id].requires_grad;
    return push(std::move(n));
}

Var Tape::layer_norm_rows(Var a) {
    Node n;
    n.op = Op::LayerNorm;
    n.in[0] = a.id;
    n.value = hvpl::layer_norm_rows(val(a));
    n.requires_grad = nodes_[a.id].requires_grad;
    return push(std::move(n));
}

Var Tape::dwconv1d(Var x, Var kernel, Var bias) {
    Node n;
    n.op = Op::DwConv;
    n.in[0] = x.id;
    n.in[1] = kernel.id;
    n.in[2] = bias.id;
    n.value = hvpl::depthwise_conv1d(val(x), val(kernel), val(bias));
    n.requires_grad = nodes_[x.id].requires_grad || nodes_[kernel.id].requires_grad ||
                      nodes_[bias.id].requires_grad;
    return push(std::move(n));
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
    check_shape(!parts.empty(), "concat_rows: empty");
    std::vector<Matrix> vals;
    // Variable arity: input ids and offsets live in the aux block.
    auto ids = std::make_shared<std::pair<ConcatAux, std::vector<int>>>();
    int off = 0;
    bool req = false;
    for (const Var& p : parts) {
        vals.push_back(val(p));
        ids->first.offsets.push_back(off);
        ids->second.push_back(p.id);
        off += val(p).rows();
        req = req || nodes_[p.id].requires_grad;
    }
    Node n;
    n.op = Op::ConcatRows;
    n.value = hvpl::concat_rows(vals);
    n.requires_grad = req;
    n.aux = ids;
    return push(std::move(n));
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    check_shape(!parts.empty(), "concat_cols: empty");
    const int rows = val(parts[0]).rows();
    int cols = 0;
    bool req = false;
    for (const Var& p : parts) {
        check_shape(val(p).rows() == rows, "concat_cols: row mismatch");
        cols += val(p).cols();
        req = req || nodes_[p.id].requires_grad;
    }
    Node n;
    n.op = Op::ConcatCols;
    n.value = Matrix(rows, cols);
    auto ids = std::make_shared<std::pair<ConcatAux, std::vector<int>>>();
    int off = 0;
    for (const Var& p : parts) {
        const Matrix& m = val(p);
        for (int i = 0; i < rows; ++i)
            std::memcpy(n.value.row(i) + off, m.row(i), m.cols() * sizeof(double));
        ids->first.offsets.push_back(off);
        ids->second.push_back(p.id);
        off += m.cols();
    }
    n.requires_grad = req;
    n.aux = ids;
    return push(std::move(n));
}

Var Tape::slice_rows(Var a, int r0, int r1) {
    const Matrix& m = val(a);
    check_shape(0 <= r0 && r0 <= r1 && r1 <= m.rows(), "slice_rows: bad range");
    Node n;
    n.op = Op::SliceRows;
    n.in[0] = a.id;
    n.i0 = r0;
    n.i1 = r1;
    n.value = Matrix(r1 - r0, m.cols());
    for (int i = r0; i < r1; ++i)
        std::memcpy(n.value.row(i - r0), m.row(i), m.cols() * sizeof(double));
    n.requires_grad = nodes_[a.id].requires_grad;
    return push(std::move(n));
}

Var Tape::slice_cols(Var a, int c0, int c1) {
    const Matrix& m = val(a);
    check_shape(0 <= c0 && c0 <= c1 && c1 <= m.cols(), "slice_cols: bad range");
    Node n;
    n.op = Op::SliceCols;
    n.in[0] = a.id;
    n.i0 = c0;
    n.i1 = c1;
    n.value = Matrix(m.rows(), c1 - c0);
    for (int i = 0; i < m.rows(); ++i)
        std::memcpy(n.value.row(i), m.row(i) + c0, (c1 - c0) * sizeof(double));
    n.requires_grad = nodes_[a.id].requires_grad;
    return push(std::move(n));
}

Var Tape::sum_all(Var a) {
    Node n;
    n.op = Op::SumAll;
    n.in[0] = a.id;
    n.value = Matrix(1, 1);
    double s = 0.0;
    for (size_t i = 0; i < val(a).size(); ++i) s += val(a).data()[i];
    n.value(0, 0) = s;
    n.requires_grad = nodes_[a.id].requires_grad;
    return push(std::move(n));
}

Var Tape::tree_scan(Var abar, Var beta, std::shared_ptr<const SpanningTree> tree) {
    const Matrix& A = val(abar);
    const Matrix& B = val(beta);
    check_shape(A.same_shape(B), "tree_scan: abar/beta shape mismatch");
    check_shape(A.rows() == tree->n, "tree_scan: tree size mismatch");

    auto aux = std::make_shared<TreeScanAux>();
    aux->tree = tree;

    Matrix zeta = B;
    Matrix h;
    tree_scan_passes(*tree, A, zeta, h);
    aux->zeta = std::move(zeta);
    Node n;
    n.op = Op::TreeScan;
    n.in[0] = abar.id;
    n.in[1] = beta.id;
    n.value = std::move(h);
    n.aux = aux;
    n.requires_grad = nodes_[abar.id].requires_grad || nodes_[beta.id].requires_grad;
    return push(std::move(n));
}

Var Tape::ce_logits_row(Var logits, int row, int target) {
    const Matrix& m = val(logits);
    check_shape(0 <= row && row < m.rows() && 0 <= target && target < m.cols(),
                "ce_logits_row: index out of range");
    double mx = m(row, 0);
    for (int j = 1; j < m.cols(); ++j) mx = std::max(mx, m(row, j));
    double lse = 0.0;
    for (int j = 0; j < m.cols(); ++j) lse += std::exp(m(row, j) - mx);
    lse = mx + std::log(lse);
    Node n;
    n.op = Op::CeLogitsRow;
    n.in[0] = logits.id;
    n.i0 = row;
    n.i1 = target;
    n.value = Matrix(1, 1);
    n.value(0, 0) = lse - m(row, target);
    n.requires_grad = nodes_[logits.id].requires_grad;
    return push(std::move(n));
}

Var Tape::bce_rows(Var logits, std::shared_ptr<const std::vector<int>> rows,
                   std::shared_ptr<const std::vector<uint8_t>> target) {
    const Matrix& m = val(logits);
    check_shape(rows->size() * m.cols() == target->size(), "bce_rows: target size mismatch");
    double total = 0.0;
    size_t t = 0;
    for (int r : *rows) {
        const double* z = m.row(r);
        for (int j = 0; j < m.cols(); ++j, ++t) {
            const double zz = z[j];
            const double y = (*target)[t];
            // max(z,0) - z*y + log(1 + exp(-|z|))
            total += std::max(zz, 0.0) - zz * y + std::log1p(std::exp(-std::fabs(zz)));
        }
    }
    auto aux = std::make_shared<MaskAux>();
    aux->rows = rows;
    aux->target = target;
    Node n;
    n.op = Op::BceRows;
    n.in[0] = logits.id;
    n.value = Matrix(1, 1);
    n.value(0, 0) = total / static_cast<double>(target->size());
    n.aux = aux;
    n.requires_grad = nodes_[logits.id].requires_grad;
    return push(std::move(n));
}

Var Tape::dice_rows(Var logits, std::shared_ptr<const std::vector<int>> rows,
                    std::shared_ptr<const std::vector<uint8_t>> target) {
    const Matrix& m = val(logits);
    check_shape(rows->size() * m.cols() == target->size(), "dice_rows: target size mismatch");
    double inter = 0.0, psum = 0.0, gsum = 0.0;
    size_t t = 0;
    for (int r : *rows) {
        const double* z = m.row(r);
        for (int j = 0; j < m.cols(); ++j, ++t) {
            const double p = sigmoid(z[j]);
            const double y = (*target)[t];
            inter += p * y;
            psum += p;
            gsum += y;
        }
    }
    auto aux = std::make_shared<MaskAux>();
    aux->rows = rows;
    aux->target = target;
    Node n;
    n.op = Op::DiceRows;
    n.in[0] = logits.id;
    n.value = Matrix(1, 1);
    n.value(0, 0) = 1.0 - (2.0 * inter + 1.0) / (psum + gsum + 1.0);
    n.aux = aux;
    n.requires_grad = nodes_[logits.id].requires_grad;
    return push(std::move(n));
}

void Tape::backward(Var loss) {
    const Node& ln = nodes_.at(loss.id);
    if (ln.value.rows() != 1 || ln.value.cols() != 1)
        throw UsageError("backward: loss must be a 1x1 scalar node");

    grads_.assign(nodes_.size(), Matrix());
    grads_[loss.id] = Matrix::filled(1, 1, 1.0);

    for (int id = loss.id; id >= 0; --id) {
        if (!nodes_[id].requires_grad) continue;
        if (grads_[id].empty()) continue;  // not reached from the loss
        backward_node(id);
    }
    // Gradients of non-parameters are not retained.
    for (size_t i = 0; i < nodes_.size(); ++i)
        if (!nodes_[i].is_param) grads_[i] = Matrix();
}

void Tape::backward_node(int id) {
    Node& n = nodes_[id];
    const Matrix& g = grads_[id];

    auto needs = [&](int in) { return in >= 0 && nodes_[in].requires_grad; };
    auto buf = [&](int in) -> Matrix& {
        return grad_buf(in, nodes_[in].value.rows(), nodes_[in].value.cols());
    };

    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::MatMul: {
            if (needs(n.in[0])) {
                Matrix da = hvpl::matmul_nt(g, nodes_[n.in[1]].value);
                Matrix& acc = buf(n.in[0]);
                for (size_t i = 0; i < acc.size(); ++i) acc.data()[i] += da.data()[i];
            }
            if (needs(n.in[1])) {
                Matrix db = hvpl::matmul_tn(nodes_[n.in[0]].value, g);
                Matrix& acc = buf(n.in[1]);
                for (size_t i = 0; i < acc.size(); ++i) acc.data()[i] += db.data()[i];
            }
            break;
        }
        case Op::MatMulNT: {
            // out = a b^T: da = g b; db = g^T a
            if (needs(n.in[0])) {
                Matrix da = hvpl::matmul(g, nodes_[n.in[1]].value);
                Matrix& acc = buf(n.in[0]);
                for (size_t i = 0; i < acc.size(); ++i) acc.data()[i] += da.data()[i];
            }
            if (needs(n.in[1])) {
                Matrix db = hvpl::matmul_tn(g, nodes_[n.in[0]].value);
                Matrix& acc = buf(n.in[1]);
                for (size_t i = 0; i < acc.size(); ++i) acc.data()[i] += db.data()[i];
            }
            break;
        }
        case Op::Add:
            for (int s = 0; s < 2; ++s) {
                if (!needs(n.in[s])) continue;
                Matrix& acc = buf(n.in[s]);
                for (size_t i = 0; i < acc.size(); ++i) acc.data()[i] += g.data()[i];
            }
            break;
        case Op::Sub: {
            if (needs(n.in[0])) {
                Matrix& acc = buf(n.in[0]);
                for (size_t i = 0; i < acc.size(); ++i) acc.data()[i] += g.data()[i];
            }
            if (needs(n.in[1])) {
                Matrix& acc = buf(n.in[1]);
                for (size_t i = 0; i < acc.size(); ++i) acc.data()[i] -= g.data()[i];
            }
            break;
        }
        case Op::Mul: {
            if (needs(n.in[0])) {
                Matrix& acc = buf(n.in[0]);
                const Matrix& other = nodes_[n.in[1]].value;
                for (size_t i = 0; i < acc.size(); ++i) acc.data()[i] += g.data()[i] * other.data()[i];
            }
            if (needs(n.in[1])) {
                Matrix& acc = buf(n.in[1]);
                const Matrix& other = nodes_[n.in[0]].value;
                for (size_t i = 0; i < acc.size(); ++i) acc.data()[i] += g.data()[i] * other.data()[i];
            }
            break;
        }
        case Op::Scale: {
            if (needs(n.in[0])) {
                Matrix& acc = buf(n.in[0]);
                for (size_t i = 0; i < acc.size(); ++i) acc.data()[i] += g.data()[i] * n.scalar;
            }
            break;
        }
        case Op::AddScalar: {
            if (needs(n.in[0])) {
                Matrix& acc = buf(n.in[0]);
                for (size_t i = 0; i < acc.size(); ++i) acc.data()[i] += g.data()[i];
            }
            break;
        }
        case Op::AddRow: {
            if (needs(n.in[0])) {
                Matrix& acc = buf(n.in[0]);
                for (size_t i = 0; i < acc.size(); ++i) acc.data()[i] += g.data()[i];
            }
            if (needs(n.in[1])) {
                Matrix& acc = buf(n.in[1]);
                for (int i = 0; i < g.rows(); ++i) {
                    const double* gr = g.row(i);
                    for (int j = 0; j < g.cols(); ++j) acc(0, j) += gr[j];
                }
            }
            break;
        }
        case Op::MulRow: {
            const Matrix& a = nodes_[n.in[0]].value;
            const Matrix& r = nodes_[n.in[1]].value;
            if (needs(n.in[0])) {
                Matrix& acc = buf(n.in[0]);
                for (int i = 0; i < g.rows(); ++i) {
                    const double* gr = g.row(i);
                    double* ar = acc.row(i);
                    for (int j = 0; j < g.cols(); ++j) ar[j] += gr[j] * r(0, j);
                }
            }
            if (needs(n.in[1])) {
                Matrix& acc = buf(n.in[1]);
                for (int i = 0; i < g.rows(); ++i) {
                    const double* gr = g.row(i);
                    const double* av = a.row(i);
                    for (int j = 0; j < g.cols(); ++j) acc(0, j) += gr[j] * av[j];
                }
            }
            break;
        }
        case Op::MulCol: {
            const Matrix& a = nodes_[n.in[0]].value;
            const Matrix& c = nodes_[n.in[1]].value;
            if (needs(n.in[0])) {
                Matrix& acc = buf(n.in[0]);
                for (int i = 0; i < g.rows(); ++i) {
                    const double* gr = g.row(i);
                    double* ar = acc.row(i);
                    const double f = c(i, 0);
                    for (int j = 0; j < g.cols(); ++j) ar[j] += gr[j] * f;
                }
            }
            if (needs(n.in[1])) {
                Matrix& acc = buf(n.in[1]);
                for (int i = 0; i < g.rows(); ++i) {
                    const double* gr = g.row(i);
                    const double* av = a.row(i);
                    double s = 0.0;
                    for (int j = 0; j < g.cols(); ++j) s += gr[j] * av[j];
                    acc(i, 0) += s;
                }
            }
            break;
        }
        case Op::Exp: {
            if (needs(n.in[0])) {
                Matrix& acc = buf(n.in[0]);
                for (size_t i = 0; i < acc.size(); ++i)
                    acc.data()[i] += g.data()[i] * n.value.data()[i];
            }
            break;
        }
        case Op::Softplus: {
            if (needs(n.in[0])) {
                Matrix& acc = buf(n.in[0]);
                const Matrix& x = nodes_[n.in[0]].value;
                for (size_t i = 0; i < acc.size(); ++i)
                    acc.data()[i] += g.data()[i] * sigmoid(x.data()[i]);
            }
            break;
        }
        case Op::Silu: {
            if (needs(n.in[0])) {
                Matrix& acc = buf(n.in[0]);
                const Matrix& x = nodes_[n.in[0]].value;
                for (size_t i = 0; i < acc.size(); ++i) {
                    const double s = sigmoid(x.data()[i]);
                    acc.data()[i] += g.data()[i] * s * (1.0 + x.data()[i] * (1.0 - s));
                }
            }
            break;
        }
        case Op::Recip: {
            if (needs(n.in[0])) {
                Matrix& acc = buf(n.in[0]);
                for (size_t i = 0; i < acc.size(); ++i) {
                    const double o = n.value.data()[i];
                    acc.data()[i] -= g.data()[i] * o * o;
                }
            }
            break;
        }
        case Op::SoftmaxRows: {
            if (needs(n.in[0])) {
                Matrix& acc = buf(n.in[0]);
                for (int i = 0; i < g.rows(); ++i) {
                    const double* gr = g.row(i);
                    const double* s = n.value.row(i);
                    double dotgs = 0.0;
                    for (int j = 0; j < g.cols(); ++j) dotgs += gr[j] * s[j];
                    double* ar = acc.row(i);
                    for (int j = 0; j < g.cols(); ++j) ar[j] += s[j] * (gr[j] - dotgs);
                }
            }
            break;
        }
        case Op::LayerNorm: {
            if (needs(n.in[0])) {
                Matrix& acc = buf(n.in[0]);
                const Matrix& x = nodes_[n.in[0]].value;
                const int d = x.cols();
                for (int i = 0; i < x.rows(); ++i) {
                    const double* xr = x.row(i);
                    const double* gr = g.row(i);
                    const double* yr = n.value.row(i);
                    double mean = 0.0;
                    for (int j = 0; j < d; ++j) mean += xr[j];
                    mean /= d;
                    double var = 0.0;
                    for (int j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
                    var /= d;
                    const double inv = 1.0 / std::sqrt(var + 1e-12);
                    double gmean = 0.0, gymean = 0.0;
                    for (int j = 0; j < d; ++j) {
                        gmean += gr[j];
                        gymean += gr[j] * yr[j];
                    }
                    gmean /= d;
                    gymean /= d;
                    double* ar = acc.row(i);
                    for (int j = 0; j < d; ++j) ar[j] += inv * (gr[j] - gmean - yr[j] * gymean);
                }
            }
            break;
        }
        case Op::DwConv: {
            const Matrix& x = nodes_[n.in[0]].value;
            const Matrix& k = nodes_[n.in[1]].value;
            const int rows = x.rows(), d = x.cols(), ks = k.rows();
            const int pad = conv1d_pad_left(ks);
            if (needs(n.in[0])) {
                Matrix& acc = buf(n.in[0]);
                for (int i = 0; i < rows; ++i) {
                    const double* gr = g.row(i);
                    for (int t = 0; t < ks; ++t) {
                        const int src = i - pad + t;
                        if (src < 0 || src >= rows) continue;
                        double* ar = acc.row(src);
                        const double* kr = k.row(t);
                        for (int j = 0; j < d; ++j) ar[j] += gr[j] * kr[j];
                    }
                }
            }
            if (needs(n.in[1])) {
                Matrix& acc = buf(n.in[1]);
                for (int i = 0; i < rows; ++i) {
                    const double* gr = g.row(i);
                    for (int t = 0; t < ks; ++t) {
                        const int src = i - pad + t;
                        if (src < 0 || src >= rows) continue;
                        const double* xr = x.row(src);
                        double* kr = acc.row(t);
                        for (int j = 0; j < d; ++j) kr[j] += gr[j] * xr[j];
                    }
                }
            }
            if (needs(n.in[2])) {
                Matrix& acc = buf(n.in[2]);
                for (int i = 0; i < rows; ++i) {
                    const double* gr = g.row(i);
                    for (int j = 0; j < d; ++j) acc(0, j) += gr[j];
                }
            }
            break;
        }
        case Op::ConcatRows: {
            const auto* ids =
                static_cast<const std::pair<ConcatAux, std::vector<int>>*>(n.aux.get());
            for (size_t p = 0; p < ids->second.size(); ++p) {
                const int in = ids->second[p];
                if (!nodes_[in].requires_grad) continue;
                Matrix& acc = buf(in);
                const int off = ids->first.offsets[p];
                for (int i = 0; i < acc.rows(); ++i) {
                    const double* gr = g.row(off + i);
                    double* ar = acc.row(i);
                    for (int j = 0; j < acc.cols(); ++j) ar[j] += gr[j];
                }
            }
            break;
        }
        case Op::ConcatCols: {
            const auto* ids =
                static_cast<const std::pair<ConcatAux, std::vector<int>>*>(n.aux.get());
            for (size_t p = 0; p < ids->second.size(); ++p) {
                const int in = ids->second[p];
                if (!nodes_[in].requires_grad) continue;
                Matrix& acc = buf(in);
                const int off = ids->first.offsets[p];
                for (int i = 0; i < acc.rows(); ++i) {
                    const double* gr = g.row(i) + off;
                    double* ar = acc.row(i);
                    for (int j = 0; j < acc.cols(); ++j) ar[j] += gr[j];
                }
            }
            break;
        }
        case Op::SliceRows: {
            if (needs(n.in[0])) {
                Matrix& acc = buf(n.in[0]);
                for (int i = 0; i < g.rows(); ++i) {
                    double* ar = acc.row(n.i0 + i);
                    const double* gr = g.row(i);
                    for (int j = 0; j < g.cols(); ++j) ar[j] += gr[j];
                }
            }
            break;
        }
        case Op::SliceCols: {
            if (needs(n.in[0])) {
                Matrix& acc = buf(n.in[0]);
                for (int i = 0; i < g.rows(); ++i) {
                    double* ar = acc.row(i) + n.i0;
                    const double* gr = g.row(i);
                    for (int j = 0; j < g.cols(); ++j) ar[j] += gr[j];
                }
            }
            break;
        }
        case Op::SumAll: {
            if (needs(n.in[0])) {
                Matrix& acc = buf(n.in[0]);
                const double gv = g(0, 0);
                for (size_t i = 0; i < acc.size(); ++i) acc.data()[i] += gv;
            }
            break;
        }
        case Op::TreeScan: {
            const auto* aux = static_cast<const TreeScanAux*>(n.aux.get());
            const SpanningTree& tree = *aux->tree;
            const Matrix& A = nodes_[n.in[0]].value;
            const Matrix& zeta = aux->zeta;
            const Matrix& h = n.value;
            const int q = A.cols();

            Matrix hbar = g;  // accumulates parent contributions
            Matrix zbar(tree.n, q);
            Matrix abar_bar(tree.n, q);

            // Reverse of the downward pass: children before parents.
            for (int idx = tree.n - 1; idx >= 0; --idx) {
                const int j = tree.bto[idx];
                if (j == tree.root) {
                    double* zr = zbar.row(j);
                    const double* hr = hbar.row(j);
                    for (int c = 0; c < q; ++c) zr[c] += hr[c];
                    continue;
                }
                const int p = tree.parent[j];
                const double* aj = A.row(j);
                const double* zj = zeta.row(j);
                const double* hj = hbar.row(j);
                const double* hp = h.row(p);
                double* hpb = hbar.row(p);
                double* zjb = zbar.row(j);
                double* ajb = abar_bar.row(j);
                for (int c = 0; c < q; ++c) {
                    hpb[c] += aj[c] * hj[c];
                    zjb[c] += (1.0 - aj[c] * aj[c]) * hj[c];
                    ajb[c] += (hp[c] - 2.0 * aj[c] * zj[c]) * hj[c];
                }
            }
            // Reverse of the upward pass: parents before children.
            for (int idx = 0; idx < tree.n; ++idx) {
                const int j = tree.bto[idx];
                if (j == tree.root) continue;
                const int p = tree.parent[j];
                const double* aj = A.row(j);
                const double* zj = zeta.row(j);
                const double* zpb = zbar.row(p);
                double* zjb = zbar.row(j);
                double* ajb = abar_bar.row(j);
                for (int c = 0; c < q; ++c) {
                    zjb[c] += aj[c] * zpb[c];
                    ajb[c] += zj[c] * zpb[c];
                }
            }
            if (needs(n.in[0])) {
                Matrix& acc = buf(n.in[0]);
                for (size_t i = 0; i < acc.size(); ++i) acc.data()[i] += abar_bar.data()[i];
            }
            if (needs(n.in[1])) {
                Matrix& acc = buf(n.in[1]);
                for (size_t i = 0; i < acc.size(); ++i) acc.data()[i] += zbar.data()[i];
            }
            break;
        }
        case Op::CeLogitsRow: {
            if (needs(n.in[0])) {
                Matrix& acc = buf(n.in[0]);
                const Matrix& m = nodes_[n.in[0]].value;
                const int r = n.i0, tgt = n.i1;
                double mx = m(r, 0);
                for (int j = 1; j < m.cols(); ++j) mx = std::max(mx, m(r, j));
                double z = 0.0;
                for (int j = 0; j < m.cols(); ++j) z += std::exp(m(r, j) - mx);
                const double gv = g(0, 0);
                for (int j = 0; j < m.cols(); ++j) {
                    const double p = std::exp(m(r, j) - mx) / z;
                    acc(r, j) += gv * (p - (j == tgt ? 1.0 : 0.0));
                }
            }
            break;
        }
        case Op::BceRows: {
            if (needs(n.in[0])) {
                Matrix& acc = buf(n.in[0]);
                const auto* aux = static_cast<const MaskAux*>(n.aux.get());
                const Matrix& m = nodes_[n.in[0]].value;
                const double gv = g(0, 0) / static_cast<double>(aux->target->size());
                size_t t = 0;
                for (int r : *aux->rows) {
                    const double* z = m.row(r);
                    double* ar = acc.row(r);
                    for (int j = 0; j < m.cols(); ++j, ++t)
                        ar[j] += gv * (sigmoid(z[j]) - (*aux->target)[t]);
                }
            }
            break;
        }
        case Op::DiceRows: {
            if (needs(n.in[0])) {
                Matrix& acc = buf(n.in[0]);
                const auto* aux = static_cast<const MaskAux*>(n.aux.get());
                const Matrix& m = nodes_[n.in[0]].value;
                double inter = 0.0, psum = 0.0, gsum = 0.0;
                size_t t = 0;
                for (int r : *aux->rows) {
                    const double* z = m.row(r);
                    for (int j = 0; j < m.cols(); ++j, ++t) {
                        const double p = sigmoid(z[j]);
                        inter += p * (*aux->target)[t];
                        psum += p;
                        gsum += (*aux->target)[t];
                    }
                }
                const double num = 2.0 * inter + 1.0;
                const double den = psum + gsum + 1.0;
                const double gv = g(0, 0);
                t = 0;
                for (int r : *aux->rows) {
                    const double* z = m.row(r);
                    double* ar = acc.row(r);
                    for (int j = 0; j < m.cols(); ++j, ++t) {
                        const double p = sigmoid(z[j]);
                        const double y = (*aux->target)[t];
                        // d/dp of (1 - num/den) = -(2 y den - num) / den^2
                        const double dLdp = -(2.0 * y * den - num) / (den * den);
                        ar[j] += gv * dLdp * p * (1.0 - p);
                    }
                }
            }
            break;
        }
    }
}

}  // namespace hvpl
