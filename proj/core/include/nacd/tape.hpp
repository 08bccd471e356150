#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "nacd/tensor.hpp"

namespace nacd {

using NodeId = int32_t;
using IndexVec = std::shared_ptr<const std::vector<int64_t>>;

enum class Op : uint8_t {
    Leaf,
    // elementwise
    Add, Sub, Mul, Neg, Exp, Log, Tanh, Sqrt, Recip,
    CMul, CAdd,   // x * c, x + c with a compile-in constant
    SMul,         // x * s where s is a scalar node (shape {1})
    // linear algebra
    MatMul,       // 2-D, or 3-D batched with equal leading dim
    Transpose,    // swap last two dims
    Reshape,
    // indexing
    GatherRows,   // table (R,C) + ids -> (n,C)
    ScatterRows,  // g (n,C) + ids + R -> (R,C), duplicate ids accumulate
    SelectCols,   // x (R,C) + col ids (len R) -> (R,1)
    ScatterCols,  // g (R,1) + col ids + C -> (R,C)
    // reductions / broadcasts over the last axis
    RowSum,       // (...,C) -> (...,1)
    BcastLast,    // (...,1) -> (...,C)
    LogSumExp,    // (...,C) -> (...,1)
    SumLead,      // (...,C) -> (C)
    TileLead,     // (C) -> (...,C)
    SumAll,       // -> {1}
    BcastFull,    // {1} -> shape
    // sequence-dimension ops on (B,L,d)
    ConcatDim1,
    SliceDim1,    // i0=start, i1=len
    PadDim1,      // i0=start, i1=full length, zeros elsewhere
    SplitHeads,   // (B,L,d) -> (B*H,L,d/H), i0=H
    MergeHeads,   // (B*H,L,dh) -> (B,L,dh*H), i0=H
};

const char* op_name(Op op);

struct Node {
    Op op = Op::Leaf;
    NodeId a = -1;
    NodeId b = -1;
    double c = 0.0;        // constant for CMul/CAdd
    int64_t i0 = 0;        // int attrs (start, heads, ...)
    int64_t i1 = 0;
    IndexVec idx;          // gather/select indices
    Tensor value;          // computed eagerly on append
    bool diff = false;     // leaf flagged as a differentiation root
};

// Append-only record of primitive tensor operations. Values are computed
// eagerly as nodes are appended; grad() appends the adjoint computation as
// further record operations, so gradients are themselves differentiable
// (backward-of-backward gives exact unrolled hypergradients).
class Tape {
public:
    NodeId leaf(Tensor v, bool requires_grad = false);
    NodeId constant(Tensor v) { return leaf(std::move(v), false); }
    NodeId scalar(double v) { return constant(Tensor::scalar(v)); }

    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId neg(NodeId a);
    NodeId exp(NodeId a);
    NodeId log(NodeId a);
    NodeId tanh(NodeId a);
    NodeId sqrt(NodeId a);
    NodeId recip(NodeId a);
    NodeId cmul(NodeId a, double c);
    NodeId cadd(NodeId a, double c);
    NodeId smul(NodeId a, NodeId s);
    NodeId matmul(NodeId a, NodeId b);
    NodeId transpose(NodeId a);
    NodeId reshape(NodeId a, Shape s);
    NodeId gather_rows(NodeId table, IndexVec ids);
    NodeId scatter_rows(NodeId g, IndexVec ids, int64_t rows);
    NodeId select_cols(NodeId a, IndexVec cols);
    NodeId scatter_cols(NodeId a, IndexVec cols, int64_t ncols);
    NodeId row_sum(NodeId a);
    NodeId bcast_last(NodeId a, int64_t cols);
    NodeId logsumexp(NodeId a);
    NodeId sum_lead(NodeId a);
    NodeId tile_lead(NodeId a, Shape s);
    NodeId sum_all(NodeId a);
    NodeId bcast_full(NodeId a, Shape s);
    NodeId concat_dim1(NodeId a, NodeId b);
    NodeId slice_dim1(NodeId a, int64_t start, int64_t len);
    NodeId pad_dim1(NodeId a, int64_t start, int64_t full_len);
    NodeId split_heads(NodeId a, int64_t heads);
    NodeId merge_heads(NodeId a, int64_t heads);

    // convenience: sum of squares -> scalar node
    NodeId sumsq(NodeId a) { return sum_all(mul(a, a)); }

    const Tensor& val(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }
    const Node& node(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }
    size_t size() const { return nodes_.size(); }

    // Exact reverse-mode derivatives of a scalar node w.r.t. the given nodes.
    // Adjoint computations are appended to this tape; the returned map gives
    // one adjoint node per requested node (zeros where unreachable).
    std::unordered_map<NodeId, NodeId> grad(NodeId out, const std::vector<NodeId>& wrt);

    // Recompute every non-leaf value in order. Used to check replay determinism.
    void replay();

    // Structured-text listing for inspection.
    std::string dump() const;

private:
    NodeId push(Node n);
    void compute(Node& n) const;

    std::vector<Node> nodes_;
};

}  // namespace nacd
