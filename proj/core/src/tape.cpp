#include "nacd/tape.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace nacd {

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument("tape: " + what); }

void check(bool ok, const char* what) {
    if (!ok) fail(what);
}

// (B,R,K) x (B,K,C) -> (B,R,C); batch may be 1 for the 2-D case.
void matmul_kernel(const double* a, const double* b, double* out, int64_t batch, int64_t r, int64_t k,
                   int64_t c) {
    for (int64_t bi = 0; bi < batch; ++bi) {
        const double* pa = a + bi * r * k;
        const double* pb = b + bi * k * c;
        double* po = out + bi * r * c;
        for (int64_t i = 0; i < r; ++i) {
            double* rowo = po + i * c;
            for (int64_t j = 0; j < c; ++j) rowo[j] = 0.0;
            const double* rowa = pa + i * k;
            for (int64_t kk = 0; kk < k; ++kk) {
                const double av = rowa[kk];
                if (av == 0.0) continue;
                const double* rowb = pb + kk * c;
                for (int64_t j = 0; j < c; ++j) rowo[j] += av * rowb[j];
            }
        }
    }
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Neg: return "neg";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Tanh: return "tanh";
        case Op::Sqrt: return "sqrt";
        case Op::Recip: return "recip";
        case Op::CMul: return "cmul";
        case Op::CAdd: return "cadd";
        case Op::SMul: return "smul";
        case Op::MatMul: return "matmul";
        case Op::Transpose: return "transpose";
        case Op::Reshape: return "reshape";
        case Op::GatherRows: return "gather_rows";
        case Op::ScatterRows: return "scatter_rows";
        case Op::SelectCols: return "select_cols";
        case Op::ScatterCols: return "scatter_cols";
        case Op::RowSum: return "row_sum";
        case Op::BcastLast: return "bcast_last";
        case Op::LogSumExp: return "logsumexp";
        case Op::SumLead: return "sum_lead";
        case Op::TileLead: return "tile_lead";
        case Op::SumAll: return "sum_all";
        case Op::BcastFull: return "bcast_full";
        case Op::ConcatDim1: return "concat_dim1";
        case Op::SliceDim1: return "slice_dim1";
        case Op::PadDim1: return "pad_dim1";
        case Op::SplitHeads: return "split_heads";
        case Op::MergeHeads: return "merge_heads";
    }
    return "?";
}

NodeId Tape::push(Node n) {
    compute(n);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::leaf(Tensor v, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(v);
    n.diff = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

#define BINARY_SAME_SHAPE(NAME, OPCODE)                                          \
    NodeId Tape::NAME(NodeId a, NodeId b) {                                      \
        check(same_shape(val(a).shape, val(b).shape), #NAME ": shape mismatch"); \
        Node n;                                                                  \
        n.op = OPCODE;                                                           \
        n.a = a;                                                                 \
        n.b = b;                                                                 \
        return push(std::move(n));                                               \
    }

BINARY_SAME_SHAPE(add, Op::Add)
BINARY_SAME_SHAPE(sub, Op::Sub)
BINARY_SAME_SHAPE(mul, Op::Mul)
#undef BINARY_SAME_SHAPE

#define UNARY(NAME, OPCODE)          \
    NodeId Tape::NAME(NodeId a) {    \
        Node n;                      \
        n.op = OPCODE;               \
        n.a = a;                     \
        return push(std::move(n));   \
    }

UNARY(neg, Op::Neg)
UNARY(exp, Op::Exp)
UNARY(log, Op::Log)
UNARY(tanh, Op::Tanh)
UNARY(sqrt, Op::Sqrt)
UNARY(recip, Op::Recip)
#undef UNARY

NodeId Tape::cmul(NodeId a, double c) {
    Node n;
    n.op = Op::CMul;
    n.a = a;
    n.c = c;
    return push(std::move(n));
}

NodeId Tape::cadd(NodeId a, double c) {
    Node n;
    n.op = Op::CAdd;
    n.a = a;
    n.c = c;
    return push(std::move(n));
}

NodeId Tape::smul(NodeId a, NodeId s) {
    check(val(s).numel() == 1, "smul: scale must be a scalar node");
    Node n;
    n.op = Op::SMul;
    n.a = a;
    n.b = s;
    return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    const Shape& sa = val(a).shape;
    const Shape& sb = val(b).shape;
    check(sa.size() == sb.size() && (sa.size() == 2 || sa.size() == 3), "matmul: rank must be 2 or 3");
    if (sa.size() == 3) check(sa[0] == sb[0], "matmul: batch mismatch");
    check(sa[sa.size() - 1] == sb[sb.size() - 2], "matmul: inner dim mismatch");
    Node n;
    n.op = Op::MatMul;
    n.a = a;
    n.b = b;
    return push(std::move(n));
}

NodeId Tape::transpose(NodeId a) {
    check(val(a).rank() >= 2, "transpose: rank must be >= 2");
    Node n;
    n.op = Op::Transpose;
    n.a = a;
    return push(std::move(n));
}

NodeId Tape::reshape(NodeId a, Shape s) {
    check(shape_numel(s) == val(a).numel(), "reshape: numel mismatch");
    Node n;
    n.op = Op::Reshape;
    n.a = a;
    n.value.shape = std::move(s);  // target shape attr
    return push(std::move(n));
}

NodeId Tape::gather_rows(NodeId table, IndexVec ids) {
    check(val(table).rank() == 2, "gather_rows: table must be 2-D");
    for (int64_t i : *ids) check(i >= 0 && i < val(table).dim(0), "gather_rows: id out of range");
    Node n;
    n.op = Op::GatherRows;
    n.a = table;
    n.idx = std::move(ids);
    return push(std::move(n));
}

NodeId Tape::scatter_rows(NodeId g, IndexVec ids, int64_t rows) {
    check(val(g).rank() == 2, "scatter_rows: input must be 2-D");
    check(static_cast<int64_t>(ids->size()) == val(g).dim(0), "scatter_rows: ids/rows mismatch");
    Node n;
    n.op = Op::ScatterRows;
    n.a = g;
    n.idx = std::move(ids);
    n.i0 = rows;
    return push(std::move(n));
}

NodeId Tape::select_cols(NodeId a, IndexVec cols) {
    check(val(a).rank() == 2, "select_cols: input must be 2-D");
    check(static_cast<int64_t>(cols->size()) == val(a).dim(0), "select_cols: one id per row");
    Node n;
    n.op = Op::SelectCols;
    n.a = a;
    n.idx = std::move(cols);
    return push(std::move(n));
}

NodeId Tape::scatter_cols(NodeId a, IndexVec cols, int64_t ncols) {
    check(val(a).rank() == 2 && val(a).dim(1) == 1, "scatter_cols: input must be (R,1)");
    Node n;
    n.op = Op::ScatterCols;
    n.a = a;
    n.idx = std::move(cols);
    n.i0 = ncols;
    return push(std::move(n));
}

NodeId Tape::row_sum(NodeId a) {
    Node n;
    n.op = Op::RowSum;
    n.a = a;
    return push(std::move(n));
}

NodeId Tape::bcast_last(NodeId a, int64_t cols) {
    check(val(a).cols() == 1, "bcast_last: last dim must be 1");
    Node n;
    n.op = Op::BcastLast;
    n.a = a;
    n.i0 = cols;
    return push(std::move(n));
}

NodeId Tape::logsumexp(NodeId a) {
    Node n;
    n.op = Op::LogSumExp;
    n.a = a;
    return push(std::move(n));
}

NodeId Tape::sum_lead(NodeId a) {
    check(val(a).rank() >= 1, "sum_lead: rank must be >= 1");
    Node n;
    n.op = Op::SumLead;
    n.a = a;
    return push(std::move(n));
}

NodeId Tape::tile_lead(NodeId a, Shape s) {
    check(val(a).rank() == 1, "tile_lead: input must be 1-D");
    check(!s.empty() && s.back() == val(a).dim(0), "tile_lead: last dim must match input");
    Node n;
    n.op = Op::TileLead;
    n.a = a;
    n.value.shape = std::move(s);
    return push(std::move(n));
}

NodeId Tape::sum_all(NodeId a) {
    Node n;
    n.op = Op::SumAll;
    n.a = a;
    return push(std::move(n));
}

NodeId Tape::bcast_full(NodeId a, Shape s) {
    check(val(a).numel() == 1, "bcast_full: input must be scalar");
    Node n;
    n.op = Op::BcastFull;
    n.a = a;
    n.value.shape = std::move(s);
    return push(std::move(n));
}

NodeId Tape::concat_dim1(NodeId a, NodeId b) {
    const Shape& sa = val(a).shape;
    const Shape& sb = val(b).shape;
    check(sa.size() == 3 && sb.size() == 3, "concat_dim1: inputs must be 3-D");
    check(sa[0] == sb[0] && sa[2] == sb[2], "concat_dim1: batch/feature dims must match");
    Node n;
    n.op = Op::ConcatDim1;
    n.a = a;
    n.b = b;
    return push(std::move(n));
}

NodeId Tape::slice_dim1(NodeId a, int64_t start, int64_t len) {
    const Shape& s = val(a).shape;
    check(s.size() == 3, "slice_dim1: input must be 3-D");
    check(start >= 0 && len >= 0 && start + len <= s[1], "slice_dim1: range out of bounds");
    Node n;
    n.op = Op::SliceDim1;
    n.a = a;
    n.i0 = start;
    n.i1 = len;
    return push(std::move(n));
}

NodeId Tape::pad_dim1(NodeId a, int64_t start, int64_t full_len) {
    const Shape& s = val(a).shape;
    check(s.size() == 3, "pad_dim1: input must be 3-D");
    check(start >= 0 && start + s[1] <= full_len, "pad_dim1: range out of bounds");
    Node n;
    n.op = Op::PadDim1;
    n.a = a;
    n.i0 = start;
    n.i1 = full_len;
    return push(std::move(n));
}

NodeId Tape::split_heads(NodeId a, int64_t heads) {
    const Shape& s = val(a).shape;
    check(s.size() == 3, "split_heads: input must be 3-D");
    check(heads > 0 && s[2] % heads == 0, "split_heads: feature dim not divisible by heads");
    Node n;
    n.op = Op::SplitHeads;
    n.a = a;
    n.i0 = heads;
    return push(std::move(n));
}

NodeId Tape::merge_heads(NodeId a, int64_t heads) {
    const Shape& s = val(a).shape;
    check(s.size() == 3, "merge_heads: input must be 3-D");
    check(heads > 0 && s[0] % heads == 0, "merge_heads: batch dim not divisible by heads");
    Node n;
    n.op = Op::MergeHeads;
    n.a = a;
    n.i0 = heads;
    return push(std::move(n));
}

void Tape::compute(Node& n) const {
    const Tensor* A = n.a >= 0 ? &nodes_[static_cast<size_t>(n.a)].value : nullptr;
    const Tensor* B = n.b >= 0 ? &nodes_[static_cast<size_t>(n.b)].value : nullptr;
    Tensor& out = n.value;
    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Add: {
            out = Tensor(A->shape);
            for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = A->at(i) + B->at(i);
            break;
        }
        case Op::Sub: {
            out = Tensor(A->shape);
            for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = A->at(i) - B->at(i);
            break;
        }
        case Op::Mul: {
            out = Tensor(A->shape);
            for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = A->at(i) * B->at(i);
            break;
        }
        case Op::Neg: {
            out = Tensor(A->shape);
            for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = -A->at(i);
            break;
        }
        case Op::Exp: {
            out = Tensor(A->shape);
            for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = std::exp(A->at(i));
            break;
        }
        case Op::Log: {
            out = Tensor(A->shape);
            for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = std::log(A->at(i));
            break;
        }
        case Op::Tanh: {
            out = Tensor(A->shape);
            for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = std::tanh(A->at(i));
            break;
        }
        case Op::Sqrt: {
            out = Tensor(A->shape);
            for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = std::sqrt(A->at(i));
            break;
        }
        case Op::Recip: {
            out = Tensor(A->shape);
            for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = 1.0 / A->at(i);
            break;
        }
        case Op::CMul: {
            out = Tensor(A->shape);
            for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = A->at(i) * n.c;
            break;
        }
        case Op::CAdd: {
            out = Tensor(A->shape);
            for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = A->at(i) + n.c;
            break;
        }
        case Op::SMul: {
            const double s = B->at(0);
            out = Tensor(A->shape);
            for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = A->at(i) * s;
            break;
        }
        case Op::MatMul: {
            const Shape& sa = A->shape;
            const Shape& sb = B->shape;
            const bool batched = sa.size() == 3;
            const int64_t batch = batched ? sa[0] : 1;
            const int64_t r = sa[sa.size() - 2];
            const int64_t k = sa[sa.size() - 1];
            const int64_t c = sb[sb.size() - 1];
            out = batched ? Tensor({batch, r, c}) : Tensor({r, c});
            matmul_kernel(A->data.data(), B->data.data(), out.data.data(), batch, r, k, c);
            break;
        }
        case Op::Transpose: {
            Shape s = A->shape;
            const size_t d = s.size();
            std::swap(s[d - 2], s[d - 1]);
            const int64_t r = A->shape[d - 2];
            const int64_t c = A->shape[d - 1];
            const int64_t batch = A->numel() / (r * c);
            out = Tensor(std::move(s));
            for (int64_t bi = 0; bi < batch; ++bi) {
                const double* pa = A->data.data() + bi * r * c;
                double* po = out.data.data() + bi * r * c;
                for (int64_t i = 0; i < r; ++i)
                    for (int64_t j = 0; j < c; ++j) po[j * r + i] = pa[i * c + j];
            }
            break;
        }
        case Op::Reshape: {
            Shape target = out.shape;
            out = Tensor(std::move(target), A->data);
            break;
        }
        case Op::GatherRows: {
            const int64_t c = A->dim(1);
            const int64_t nout = static_cast<int64_t>(n.idx->size());
            out = Tensor({nout, c});
            for (int64_t i = 0; i < nout; ++i)
                std::memcpy(out.data.data() + i * c, A->data.data() + (*n.idx)[static_cast<size_t>(i)] * c,
                            static_cast<size_t>(c) * sizeof(double));
            break;
        }
        case Op::ScatterRows: {
            const int64_t c = A->dim(1);
            out = Tensor({n.i0, c});
            for (size_t i = 0; i < n.idx->size(); ++i) {
                const double* src = A->data.data() + static_cast<int64_t>(i) * c;
                double* dst = out.data.data() + (*n.idx)[i] * c;
                for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
            }
            break;
        }
        case Op::SelectCols: {
            const int64_t r = A->dim(0);
            const int64_t c = A->dim(1);
            out = Tensor({r, 1});
            for (int64_t i = 0; i < r; ++i) out.at(i) = A->at(i * c + (*n.idx)[static_cast<size_t>(i)]);
            break;
        }
        case Op::ScatterCols: {
            const int64_t r = A->dim(0);
            out = Tensor({r, n.i0});
            for (int64_t i = 0; i < r; ++i) out.at(i * n.i0 + (*n.idx)[static_cast<size_t>(i)]) = A->at(i);
            break;
        }
        case Op::RowSum: {
            const int64_t c = A->cols();
            const int64_t r = A->rows();
            Shape s = A->shape;
            s.back() = 1;
            out = Tensor(std::move(s));
            for (int64_t i = 0; i < r; ++i) {
                double acc = 0.0;
                const double* row = A->data.data() + i * c;
                for (int64_t j = 0; j < c; ++j) acc += row[j];
                out.at(i) = acc;
            }
            break;
        }
        case Op::BcastLast: {
            const int64_t r = A->rows();
            Shape s = A->shape;
            s.back() = n.i0;
            out = Tensor(std::move(s));
            for (int64_t i = 0; i < r; ++i) {
                const double v = A->at(i);
                double* row = out.data.data() + i * n.i0;
                for (int64_t j = 0; j < n.i0; ++j) row[j] = v;
            }
            break;
        }
        case Op::LogSumExp: {
            const int64_t c = A->cols();
            const int64_t r = A->rows();
            Shape s = A->shape;
            s.back() = 1;
            out = Tensor(std::move(s));
            for (int64_t i = 0; i < r; ++i) {
                const double* row = A->data.data() + i * c;
                double m = row[0];
                for (int64_t j = 1; j < c; ++j)
                    if (row[j] > m) m = row[j];
                double acc = 0.0;
                for (int64_t j = 0; j < c; ++j) acc += std::exp(row[j] - m);
                out.at(i) = m + std::log(acc);
            }
            break;
        }
        case Op::SumLead: {
            const int64_t c = A->cols();
            const int64_t r = A->rows();
            out = Tensor({c});
            for (int64_t i = 0; i < r; ++i) {
                const double* row = A->data.data() + i * c;
                for (int64_t j = 0; j < c; ++j) out.at(j) += row[j];
            }
            break;
        }
        case Op::TileLead: {
            Shape target = out.shape;
            const int64_t c = target.back();
            const int64_t r = shape_numel(target) / c;
            out = Tensor(std::move(target));
            for (int64_t i = 0; i < r; ++i)
                std::memcpy(out.data.data() + i * c, A->data.data(), static_cast<size_t>(c) * sizeof(double));
            break;
        }
        case Op::SumAll: {
            double acc = 0.0;
            for (int64_t i = 0; i < A->numel(); ++i) acc += A->at(i);
            out = Tensor::scalar(acc);
            break;
        }
        case Op::BcastFull: {
            Shape target = out.shape;
            out = Tensor::full(std::move(target), A->at(0));
            break;
        }
        case Op::ConcatDim1: {
            const int64_t bdim = A->dim(0);
            const int64_t l1 = A->dim(1);
            const int64_t l2 = B->dim(1);
            const int64_t d = A->dim(2);
            out = Tensor({bdim, l1 + l2, d});
            for (int64_t bi = 0; bi < bdim; ++bi) {
                std::memcpy(out.data.data() + bi * (l1 + l2) * d, A->data.data() + bi * l1 * d,
                            static_cast<size_t>(l1 * d) * sizeof(double));
                std::memcpy(out.data.data() + (bi * (l1 + l2) + l1) * d, B->data.data() + bi * l2 * d,
                            static_cast<size_t>(l2 * d) * sizeof(double));
            }
            break;
        }
        case Op::SliceDim1: {
            const int64_t bdim = A->dim(0);
            const int64_t l = A->dim(1);
            const int64_t d = A->dim(2);
            out = Tensor({bdim, n.i1, d});
            for (int64_t bi = 0; bi < bdim; ++bi)
                std::memcpy(out.data.data() + bi * n.i1 * d, A->data.data() + (bi * l + n.i0) * d,
                            static_cast<size_t>(n.i1 * d) * sizeof(double));
            break;
        }
        case Op::PadDim1: {
            const int64_t bdim = A->dim(0);
            const int64_t l = A->dim(1);
            const int64_t d = A->dim(2);
            out = Tensor({bdim, n.i1, d});
            for (int64_t bi = 0; bi < bdim; ++bi)
                std::memcpy(out.data.data() + (bi * n.i1 + n.i0) * d, A->data.data() + bi * l * d,
                            static_cast<size_t>(l * d) * sizeof(double));
            break;
        }
        case Op::SplitHeads: {
            const int64_t bdim = A->dim(0);
            const int64_t l = A->dim(1);
            const int64_t d = A->dim(2);
            const int64_t h = n.i0;
            const int64_t dh = d / h;
            out = Tensor({bdim * h, l, dh});
            for (int64_t bi = 0; bi < bdim; ++bi)
                for (int64_t hi = 0; hi < h; ++hi)
                    for (int64_t li = 0; li < l; ++li)
                        std::memcpy(out.data.data() + (((bi * h + hi) * l) + li) * dh,
                                    A->data.data() + (bi * l + li) * d + hi * dh,
                                    static_cast<size_t>(dh) * sizeof(double));
            break;
        }
        case Op::MergeHeads: {
            const int64_t bh = A->dim(0);
            const int64_t l = A->dim(1);
            const int64_t dh = A->dim(2);
            const int64_t h = n.i0;
            const int64_t bdim = bh / h;
            out = Tensor({bdim, l, dh * h});
            for (int64_t bi = 0; bi < bdim; ++bi)
                for (int64_t hi = 0; hi < h; ++hi)
                    for (int64_t li = 0; li < l; ++li)
                        std::memcpy(out.data.data() + (bi * l + li) * dh * h + hi * dh,
                                    A->data.data() + (((bi * h + hi) * l) + li) * dh,
                                    static_cast<size_t>(dh) * sizeof(double));
            break;
        }
    }
}

std::unordered_map<NodeId, NodeId> Tape::grad(NodeId out, const std::vector<NodeId>& wrt) {
    check(val(out).numel() == 1, "grad: output must be scalar");
    const size_t n0 = nodes_.size();

    // descendants of wrt
    std::vector<uint8_t> desc(n0, 0);
    for (NodeId w : wrt) desc[static_cast<size_t>(w)] = 1;
    for (size_t i = 0; i < n0; ++i) {
        if (desc[i]) continue;
        const Node& nd = nodes_[i];
        if ((nd.a >= 0 && desc[static_cast<size_t>(nd.a)]) || (nd.b >= 0 && desc[static_cast<size_t>(nd.b)]))
            desc[i] = 1;
    }
    // ancestors of out
    std::vector<uint8_t> anc(n0, 0);
    anc[static_cast<size_t>(out)] = 1;
    for (size_t i = static_cast<size_t>(out) + 1; i-- > 0;) {
        if (!anc[i]) continue;
        const Node& nd = nodes_[i];
        if (nd.a >= 0) anc[static_cast<size_t>(nd.a)] = 1;
        if (nd.b >= 0) anc[static_cast<size_t>(nd.b)] = 1;
    }

    std::vector<NodeId> adj(n0, -1);
    adj[static_cast<size_t>(out)] = scalar(1.0);

    auto needed = [&](NodeId id) { return id >= 0 && desc[static_cast<size_t>(id)] && anc[static_cast<size_t>(id)]; };
    auto accumulate = [&](NodeId target, NodeId contrib) {
        NodeId& slot = adj[static_cast<size_t>(target)];
        slot = slot < 0 ? contrib : add(slot, contrib);
    };

    for (size_t id = static_cast<size_t>(out) + 1; id-- > 0;) {
        if (!needed(static_cast<NodeId>(id)) || adj[id] < 0) continue;
        const NodeId g = adj[id];
        // copy attrs out: emitting ops may reallocate nodes_
        const Op op = nodes_[id].op;
        const NodeId a = nodes_[id].a;
        const NodeId b = nodes_[id].b;
        const double c = nodes_[id].c;
        const int64_t i0 = nodes_[id].i0;
        const IndexVec idx = nodes_[id].idx;
        const Shape in_shape = a >= 0 ? val(a).shape : Shape{};
        const Shape out_shape = val(static_cast<NodeId>(id)).shape;
        const NodeId self = static_cast<NodeId>(id);

        const bool need_a = needed(a);
        const bool need_b = needed(b);
        if (!need_a && !need_b) continue;

        switch (op) {
            case Op::Leaf:
                break;
            case Op::Add:
                if (need_a) accumulate(a, g);
                if (need_b) accumulate(b, g);
                break;
            case Op::Sub:
                if (need_a) accumulate(a, g);
                if (need_b) accumulate(b, neg(g));
                break;
            case Op::Mul:
                if (need_a) accumulate(a, mul(g, b));
                if (need_b) accumulate(b, mul(g, a));
                break;
            case Op::Neg:
                accumulate(a, neg(g));
                break;
            case Op::Exp:
                accumulate(a, mul(g, self));
                break;
            case Op::Log:
                accumulate(a, mul(g, recip(a)));
                break;
            case Op::Tanh:
                // g * (1 - tanh^2)
                accumulate(a, mul(g, cadd(neg(mul(self, self)), 1.0)));
                break;
            case Op::Sqrt:
                // g / (2*sqrt(x)); undefined at exactly 0
                accumulate(a, cmul(mul(g, recip(self)), 0.5));
                break;
            case Op::Recip:
                accumulate(a, neg(mul(g, mul(self, self))));
                break;
            case Op::CMul:
                accumulate(a, cmul(g, c));
                break;
            case Op::CAdd:
                accumulate(a, g);
                break;
            case Op::SMul:
                if (need_a) accumulate(a, smul(g, b));
                if (need_b) accumulate(b, sum_all(mul(g, a)));
                break;
            case Op::MatMul:
                if (need_a) accumulate(a, matmul(g, transpose(b)));
                if (need_b) accumulate(b, matmul(transpose(a), g));
                break;
            case Op::Transpose:
                accumulate(a, transpose(g));
                break;
            case Op::Reshape:
                accumulate(a, reshape(g, in_shape));
                break;
            case Op::GatherRows:
                accumulate(a, scatter_rows(g, idx, in_shape[0]));
                break;
            case Op::ScatterRows:
                accumulate(a, gather_rows(g, idx));
                break;
            case Op::SelectCols:
                accumulate(a, scatter_cols(g, idx, in_shape[1]));
                break;
            case Op::ScatterCols:
                accumulate(a, select_cols(g, idx));
                break;
            case Op::RowSum:
                accumulate(a, bcast_last(g, in_shape.back()));
                break;
            case Op::BcastLast:
                accumulate(a, row_sum(g));
                break;
            case Op::LogSumExp: {
                // d lse / dx = softmax(x)
                NodeId sm = exp(sub(a, bcast_last(self, in_shape.back())));
                accumulate(a, mul(sm, bcast_last(g, in_shape.back())));
                break;
            }
            case Op::SumLead:
                accumulate(a, tile_lead(g, in_shape));
                break;
            case Op::TileLead:
                accumulate(a, sum_lead(g));
                break;
            case Op::SumAll:
                accumulate(a, bcast_full(g, in_shape));
                break;
            case Op::BcastFull:
                accumulate(a, sum_all(g));
                break;
            case Op::ConcatDim1: {
                const int64_t l1 = in_shape[1];
                const int64_t l2 = out_shape[1] - l1;
                if (need_a && l1 > 0) accumulate(a, slice_dim1(g, 0, l1));
                if (need_b && l2 > 0) accumulate(b, slice_dim1(g, l1, l2));
                break;
            }
            case Op::SliceDim1:
                accumulate(a, pad_dim1(g, i0, in_shape[1]));
                break;
            case Op::PadDim1:
                accumulate(a, slice_dim1(g, i0, in_shape[1]));
                break;
            case Op::SplitHeads:
                accumulate(a, merge_heads(g, i0));
                break;
            case Op::MergeHeads:
                accumulate(a, split_heads(g, i0));
                break;
        }
    }

    std::unordered_map<NodeId, NodeId> result;
    for (NodeId w : wrt) {
        NodeId gw = adj[static_cast<size_t>(w)];
        if (gw < 0) gw = constant(Tensor::zeros(val(w).shape));
        result[w] = gw;
    }
    return result;
}

void Tape::replay() {
    for (auto& n : nodes_) {
        if (n.op == Op::Leaf) continue;
        if (n.op == Op::Reshape || n.op == Op::TileLead || n.op == Op::BcastFull) {
            // target shape doubles as an attribute; keep it
            Node tmp;
            tmp.op = n.op;
            tmp.a = n.a;
            tmp.b = n.b;
            tmp.c = n.c;
            tmp.i0 = n.i0;
            tmp.i1 = n.i1;
            tmp.idx = n.idx;
            tmp.value.shape = n.value.shape;
            compute(tmp);
            n.value = std::move(tmp.value);
        } else {
            compute(n);
        }
    }
}

std::string Tape::dump() const {
    std::ostringstream os;
    for (size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        os << i << "\t" << op_name(n.op);
        if (n.a >= 0) os << " a=" << n.a;
        if (n.b >= 0) os << " b=" << n.b;
        if (n.op == Op::CMul || n.op == Op::CAdd) os << " c=" << n.c;
        if (n.idx) os << " idx[" << n.idx->size() << "]";
        os << "\tshape=" << shape_str(n.value.shape);
        if (n.op == Op::Leaf) os << (n.diff ? " (diff)" : " (const)");
        os << "\n";
    }
    return os.str();
}

}  // namespace nacd
