#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "omniseq/domain.hpp"
#include "omniseq/matrix.hpp"

namespace omniseq {

struct Parameter {
  std::string name;
  Matrix value;
};

// Dense gradient buffers for a fixed list of parameters.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::span<const Parameter* const> params);

  // nullptr when `p` is not tracked.
  Matrix* find(const Parameter& p);
  const Matrix& at(const Parameter& p) const;
  void zero();

  std::span<const Parameter* const> params() const { return params_; }

 private:
  std::vector<const Parameter*> params_;
  std::vector<Matrix> grads_;
};

// Handle to a value recorded on a Tape.
struct Var {
  std::uint32_t index = 0;
};

// One supervised row for the sampled cross-entropy: `candidates[0]` is the
// positive item, the rest are negatives.
struct CandidateRow {
  std::size_t position = 0;
  std::vector<ItemId> candidates;
};

// Records primitive operations during a forward pass and replays them in
// reverse to accumulate parameter gradients. One pass per tape; not
// thread-safe, but distinct tapes are independent.
class Tape {
 public:
  Var param(const Parameter& p);
  Var constant(Matrix m);

  const Matrix& value(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var transpose(Var a);
  Var add(Var a, Var b);
  Var add_row(Var x, Var row);  // broadcast a 1 x c row over every row of x
  Var scale(Var x, double s);
  Var relu(Var x);
  Var hadamard(Var x, Matrix mask);  // elementwise product with a constant
  Var layer_norm(Var x, Var gain, Var bias, double epsilon);
  // Row-wise softmax where row p only sees columns 0..p. Masked entries get
  // exactly zero weight, the same as adding -1e9 before the exponent.
  Var causal_softmax(Var scores);
  // Softmax over all entries of x taken as one distribution.
  Var softmax(Var x);
  Var row_sums(Var x);   // r x c -> r x 1
  Var mean_rows(Var x);  // r x c -> 1 x c
  Var gather(const Parameter& table, std::span<const ItemId> rows);
  Var concat_rows(std::span<const Var> parts);
  Var slice_cols(Var x, std::size_t begin, std::size_t count);
  Var concat_cols(std::span<const Var> parts);
  Var sum(Var x);
  Var element(Var x, std::size_t r, std::size_t c);
  // scale * sum over rows of -log softmax(h_p . E[c])[0], with E the table
  // rows of the candidates (weight tying). Returns a 1 x 1 value.
  Var sampled_softmax_ce(Var hidden, const Parameter& table, std::span<const CandidateRow> rows,
                         double scale);

  // Accumulates d(loss)/d(param) into `grads` for every parameter the pass
  // touched. `loss` must be 1 x 1.
  void backward(Var loss, Gradients& grads);

 private:
  using Backward = std::function<void(Tape&, Gradients&)>;

  struct Node {
    Matrix value;
    const Matrix* ref = nullptr;  // parameter value, not copied
    const Parameter* param = nullptr;
    Matrix grad;
    Backward back;
  };

  Var push(Matrix value, Backward back);
  Node& node(Var v) { return nodes_.at(v.index); }
  Matrix& grad(Var v);
  bool has_grad(Var v) const { return !nodes_[v.index].grad.empty(); }
  static Matrix& sink(Gradients& grads, const Parameter& p);

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace omniseq
