// tape.hpp - part of volsynth: reverse-mode autodiff over dense tensors.
//
// A Tape is a single-threaded unit of work: leaves are registered, ops are
// recorded in execution order, and backward() walks the record once in
// reverse. The operator set is exactly what the model zoo needs. Individual
// kernels may fan out over the worker pool; they only ever parallelize over
// disjoint output tiles or reduce in a fixed order, so results do not depend
// on the worker count.
#pragma once

#include <cstdint>
#include <vector>

#include "tensor.hpp"

namespace volsynth::ad {

struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

enum class Op : uint8_t {
  leaf,
  conv,
  relu,
  leaky_relu,
  prelu,
  upsample_nn,
  add,
  concat_c,
  broadcast_c,
  gsum_pool,
  linear,
  mean,
  mean_abs_diff,
  scale,
};

template <class Real>
class Tape {
 public:
  using Tensor = TensorT<Real>;

  Var leaf(Tensor value, bool requires_grad = false);

  // Cross-correlation with zero padding; x is (N,C,spatial...) with 2 or 3
  // spatial dims, w is (Co,Ci,kernel...), b is (Co). Output spatial size is
  // floor((in + 2*pad - k)/stride) + 1.
  Var conv(Var x, Var w, Var b, int stride, int pad);
  Var relu(Var x);
  Var leaky_relu(Var x, double alpha);
  Var prelu(Var x, Var slopes);  // one learnable slope per channel
  Var upsample_nn(Var x, int factor);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);  // composed from scale + add
  Var concat_channels(const std::vector<Var>& xs);
  Var broadcast_channels(Var x, int64_t channels);  // replicate a 1-channel input
  Var global_sum_pool(Var x);                       // (N,C,sp...) -> (N,C)
  Var linear(Var x, Var w, Var b);                  // x (N,K), w (M,K), b (M)
  Var mean(Var x);                                  // -> scalar (1,1)
  Var mean_abs_diff(Var x, Var y);                  // -> scalar (1,1)
  Var scale(Var x, double s);

  const Tensor& value(Var v) const { return node(v).val; }
  bool requires_grad(Var v) const { return node(v).needs_grad; }

  // Accumulates gradients for every recorded var that (transitively) leads
  // to a requires_grad leaf. loss must be scalar.
  void backward(Var loss);

  // Gradient of the last backward() w.r.t. v; zeros if v never received one.
  const Tensor& grad(Var v);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Op op = Op::leaf;
    std::vector<int32_t> in;
    Tensor val;
    Tensor grad;
    bool needs_grad = false;
    bool grad_alloc = false;
    int stride = 1;
    int pad = 0;
    int factor = 1;
    double alpha = 0.0;
  };

  Node& node(Var v) {
    require(v.valid() && v.id < static_cast<int32_t>(nodes_.size()), errc::invalid,
            "tape: invalid var");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    require(v.valid() && v.id < static_cast<int32_t>(nodes_.size()), errc::invalid,
            "tape: invalid var");
    return nodes_[v.id];
  }

  Var push(Node n);
  void ensure_grad(Node& n);
  void backward_node(Node& n);

  std::vector<Node> nodes_;
};

using Tape32 = Tape<float>;
using Tape64 = Tape<double>;

}  // namespace volsynth::ad
