#include "omniseq/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace omniseq {

Gradients::Gradients(std::span<const Parameter* const> params)
    : params_(params.begin(), params.end()) {
  grads_.reserve(params_.size());
  for (const Parameter* p : params_) grads_.emplace_back(p->value.rows(), p->value.cols());
}

Matrix* Gradients::find(const Parameter& p) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i] == &p) return &grads_[i];
  }
  return nullptr;
}

const Matrix& Gradients::at(const Parameter& p) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i] == &p) return grads_[i];
  }
  throw std::out_of_range("no gradient buffer for parameter " + p.name);
}

void Gradients::zero() {
  for (auto& g : grads_) g.fill(0.0);
}

Var Tape::push(Matrix value, Backward back) {
  if (consumed_) throw std::logic_error("tape already replayed; record a new forward pass");
  nodes_.push_back(Node{std::move(value), nullptr, nullptr, Matrix{}, std::move(back)});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Matrix& Tape::value(Var v) const {
  const Node& n = nodes_.at(v.index);
  return n.ref ? *n.ref : n.value;
}

Matrix& Tape::grad(Var v) {
  Node& n = nodes_[v.index];
  if (n.grad.empty()) {
    const Matrix& val = value(v);
    n.grad = Matrix(val.rows(), val.cols());
  }
  return n.grad;
}

Matrix& Tape::sink(Gradients& grads, const Parameter& p) {
  Matrix* g = grads.find(p);
  if (!g) throw std::logic_error("parameter " + p.name + " has no gradient buffer");
  return *g;
}

Var Tape::param(const Parameter& p) {
  Var v = push(Matrix{}, nullptr);
  nodes_[v.index].ref = &p.value;
  nodes_[v.index].param = &p;
  return v;
}

Var Tape::constant(Matrix m) { return push(std::move(m), nullptr); }

Var Tape::matmul(Var a, Var b) {
  Var out = push(omniseq::matmul(value(a), value(b)), nullptr);
  nodes_[out.index].back = [a, b, out](Tape& t, Gradients&) {
    const Matrix& g = t.nodes_[out.index].grad;
    const Matrix ga = omniseq::matmul_nt(g, t.value(b));
    const Matrix gb = omniseq::matmul_tn(t.value(a), g);
    auto da = t.grad(a).values();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += ga.values()[i];
    auto db = t.grad(b).values();
    for (std::size_t i = 0; i < db.size(); ++i) db[i] += gb.values()[i];
  };
  return out;
}

Var Tape::matmul_nt(Var a, Var b) {
  Var out = push(omniseq::matmul_nt(value(a), value(b)), nullptr);
  nodes_[out.index].back = [a, b, out](Tape& t, Gradients&) {
    const Matrix& g = t.nodes_[out.index].grad;
    const Matrix ga = omniseq::matmul(g, t.value(b));
    const Matrix gb = omniseq::matmul_tn(g, t.value(a));
    auto da = t.grad(a).values();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += ga.values()[i];
    auto db = t.grad(b).values();
    for (std::size_t i = 0; i < db.size(); ++i) db[i] += gb.values()[i];
  };
  return out;
}

Var Tape::transpose(Var a) {
  Var out = push(omniseq::transpose(value(a)), nullptr);
  nodes_[out.index].back = [a, out](Tape& t, Gradients&) {
    const Matrix& g = t.nodes_[out.index].grad;
    Matrix& da = t.grad(a);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) da(j, i) += g(i, j);
  };
  return out;
}

Var Tape::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  Matrix sum = value(a);
  auto s = sum.values();
  auto bv = value(b).values();
  for (std::size_t i = 0; i < s.size(); ++i) s[i] += bv[i];
  Var out = push(std::move(sum), nullptr);
  nodes_[out.index].back = [a, b, out](Tape& t, Gradients&) {
    const auto g = t.nodes_[out.index].grad.values();
    for (Var in : {a, b}) {
      auto d = t.grad(in).values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
  };
  return out;
}

Var Tape::add_row(Var x, Var row) {
  const Matrix& xv = value(x);
  const Matrix& rv = value(row);
  if (rv.rows() != 1 || rv.cols() != xv.cols()) throw DimensionError("add_row: bad row shape");
  Matrix res = xv;
  for (std::size_t r = 0; r < res.rows(); ++r) {
    auto dst = res.row(r);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += rv(0, c);
  }
  Var out = push(std::move(res), nullptr);
  nodes_[out.index].back = [x, row, out](Tape& t, Gradients&) {
    const Matrix& g = t.nodes_[out.index].grad;
    auto dx = t.grad(x).values();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g.values()[i];
    Matrix& dr = t.grad(row);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) dr(0, c) += g(r, c);
  };
  return out;
}

Var Tape::scale(Var x, double s) {
  Matrix res = value(x);
  for (double& v : res.values()) v *= s;
  Var out = push(std::move(res), nullptr);
  nodes_[out.index].back = [x, s, out](Tape& t, Gradients&) {
    const auto g = t.nodes_[out.index].grad.values();
    auto dx = t.grad(x).values();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += s * g[i];
  };
  return out;
}

Var Tape::relu(Var x) {
  Matrix res = value(x);
  for (double& v : res.values()) v = std::max(v, 0.0);
  Var out = push(std::move(res), nullptr);
  nodes_[out.index].back = [x, out](Tape& t, Gradients&) {
    const auto g = t.nodes_[out.index].grad.values();
    const auto in = t.value(x).values();
    auto dx = t.grad(x).values();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (in[i] > 0.0) dx[i] += g[i];
    }
  };
  return out;
}

Var Tape::hadamard(Var x, Matrix mask) {
  require_same_shape(value(x), mask, "hadamard");
  Matrix res = value(x);
  auto r = res.values();
  auto m = mask.values();
  for (std::size_t i = 0; i < r.size(); ++i) r[i] *= m[i];
  Var out = push(std::move(res), nullptr);
  nodes_[out.index].back = [x, mask = std::move(mask), out](Tape& t, Gradients&) {
    const auto g = t.nodes_[out.index].grad.values();
    auto dx = t.grad(x).values();
    auto m = mask.values();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += m[i] * g[i];
  };
  return out;
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double epsilon) {
  const Matrix& xv = value(x);
  const Matrix& gv = value(gain);
  const Matrix& bv = value(bias);
  if (gv.rows() != 1 || bv.rows() != 1) throw DimensionError("layer_norm: gain/bias must be rows");
  const std::size_t rows = xv.rows();
  const std::size_t cols = xv.cols();
  Matrix normalized(rows, cols);
  std::vector<double> inv_std(rows);
  const double n = static_cast<double>(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = xv.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= n;
    inv_std[r] = 1.0 / std::sqrt(var + epsilon);
    for (std::size_t c = 0; c < cols; ++c) normalized(r, c) = (in[c] - mean) * inv_std[r];
  }
  Matrix res = omniseq::layer_norm(xv, gv.row(0), bv.row(0), epsilon);
  Var out = push(std::move(res), nullptr);
  nodes_[out.index].back = [x, gain, bias, out, normalized = std::move(normalized),
                            inv_std = std::move(inv_std)](Tape& t, Gradients&) {
    const Matrix& g = t.nodes_[out.index].grad;
    const Matrix& gv = t.value(gain);
    Matrix& dx = t.grad(x);
    Matrix& dgain = t.grad(gain);
    Matrix& dbias = t.grad(bias);
    const std::size_t cols = g.cols();
    const double n = static_cast<double>(cols);
    std::vector<double> dxhat(cols);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double mean_dxhat = 0.0;
      double mean_dxhat_xhat = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        dgain(0, c) += g(r, c) * normalized(r, c);
        dbias(0, c) += g(r, c);
        dxhat[c] = g(r, c) * gv(0, c);
        mean_dxhat += dxhat[c];
        mean_dxhat_xhat += dxhat[c] * normalized(r, c);
      }
      mean_dxhat /= n;
      mean_dxhat_xhat /= n;
      for (std::size_t c = 0; c < cols; ++c) {
        dx(r, c) += inv_std[r] * (dxhat[c] - mean_dxhat - normalized(r, c) * mean_dxhat_xhat);
      }
    }
  };
  return out;
}

Var Tape::causal_softmax(Var scores) {
  const Matrix& s = value(scores);
  if (s.rows() != s.cols()) throw DimensionError("causal_softmax: scores must be square");
  Matrix probs(s.rows(), s.cols());
  for (std::size_t r = 0; r < s.rows(); ++r) {
    const auto p = omniseq::softmax(s.row(r).subspan(0, r + 1));
    std::copy(p.begin(), p.end(), probs.row(r).begin());
  }
  Var out = push(std::move(probs), nullptr);
  nodes_[out.index].back = [scores, out](Tape& t, Gradients&) {
    const Matrix& g = t.nodes_[out.index].grad;
    const Matrix& p = t.nodes_[out.index].value;
    Matrix& ds = t.grad(scores);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double inner = 0.0;
      for (std::size_t c = 0; c <= r; ++c) inner += g(r, c) * p(r, c);
      for (std::size_t c = 0; c <= r; ++c) ds(r, c) += p(r, c) * (g(r, c) - inner);
    }
  };
  return out;
}

Var Tape::softmax(Var x) {
  const Matrix& xv = value(x);
  const auto p = omniseq::softmax(xv.values());
  Matrix probs(xv.rows(), xv.cols());
  std::copy(p.begin(), p.end(), probs.values().begin());
  Var out = push(std::move(probs), nullptr);
  nodes_[out.index].back = [x, out](Tape& t, Gradients&) {
    const auto g = t.nodes_[out.index].grad.values();
    const auto p = t.nodes_[out.index].value.values();
    double inner = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) inner += g[i] * p[i];
    auto dx = t.grad(x).values();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += p[i] * (g[i] - inner);
  };
  return out;
}

Var Tape::row_sums(Var x) {
  const Matrix& xv = value(x);
  Matrix res(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double s = 0.0;
    for (double v : xv.row(r)) s += v;
    res(r, 0) = s;
  }
  Var out = push(std::move(res), nullptr);
  nodes_[out.index].back = [x, out](Tape& t, Gradients&) {
    const Matrix& g = t.nodes_[out.index].grad;
    Matrix& dx = t.grad(x);
    for (std::size_t r = 0; r < dx.rows(); ++r)
      for (double& v : dx.row(r)) v += g(r, 0);
  };
  return out;
}

Var Tape::mean_rows(Var x) {
  const Matrix& xv = value(x);
  if (xv.rows() == 0) throw DimensionError("mean_rows of an empty matrix");
  Matrix res(1, xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < xv.cols(); ++c) res(0, c) += xv(r, c);
  const double inv = 1.0 / static_cast<double>(xv.rows());
  for (double& v : res.values()) v *= inv;
  Var out = push(std::move(res), nullptr);
  nodes_[out.index].back = [x, inv, out](Tape& t, Gradients&) {
    const Matrix& g = t.nodes_[out.index].grad;
    Matrix& dx = t.grad(x);
    for (std::size_t r = 0; r < dx.rows(); ++r)
      for (std::size_t c = 0; c < dx.cols(); ++c) dx(r, c) += inv * g(0, c);
  };
  return out;
}

Var Tape::gather(const Parameter& table, std::span<const ItemId> rows) {
  const Matrix& tv = table.value;
  Matrix res(rows.size(), tv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= tv.rows()) {
      throw DimensionError("gather: row " + std::to_string(rows[i]) + " outside table " +
                           table.name);
    }
    auto src = tv.row(static_cast<std::size_t>(rows[i]));
    std::copy(src.begin(), src.end(), res.row(i).begin());
  }
  Var out = push(std::move(res), nullptr);
  nodes_[out.index].back = [&table, ids = std::vector<ItemId>(rows.begin(), rows.end()), out](
                               Tape& t, Gradients& grads) {
    const Matrix& g = t.nodes_[out.index].grad;
    Matrix& dt = sink(grads, table);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      auto dst = dt.row(static_cast<std::size_t>(ids[i]));
      auto src = g.row(i);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    }
  };
  return out;
}

Var Tape::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  const std::size_t cols = value(parts.front()).cols();
  std::size_t rows = 0;
  for (Var p : parts) {
    if (value(p).cols() != cols) throw DimensionError("concat_rows: column counts differ");
    rows += value(p).rows();
  }
  Matrix res(rows, cols);
  std::size_t r0 = 0;
  for (Var p : parts) {
    const Matrix& v = value(p);
    std::copy(v.values().begin(), v.values().end(), res.row(r0).begin());
    r0 += v.rows();
  }
  Var out = push(std::move(res), nullptr);
  nodes_[out.index].back = [ins = std::vector<Var>(parts.begin(), parts.end()), out](
                               Tape& t, Gradients&) {
    const Matrix& g = t.nodes_[out.index].grad;
    std::size_t offset = 0;
    for (Var p : ins) {
      auto d = t.grad(p).values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g.values()[offset + i];
      offset += d.size();
    }
  };
  return out;
}

Var Tape::slice_cols(Var x, std::size_t begin, std::size_t count) {
  const Matrix& xv = value(x);
  if (begin + count > xv.cols()) throw DimensionError("slice_cols out of range");
  Matrix res(xv.rows(), count);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) res(r, c) = xv(r, begin + c);
  Var out = push(std::move(res), nullptr);
  nodes_[out.index].back = [x, begin, out](Tape& t, Gradients&) {
    const Matrix& g = t.nodes_[out.index].grad;
    Matrix& dx = t.grad(x);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) dx(r, begin + c) += g(r, c);
  };
  return out;
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  const std::size_t rows = value(parts.front()).rows();
  std::size_t cols = 0;
  for (Var p : parts) {
    if (value(p).rows() != rows) throw DimensionError("concat_cols: row counts differ");
    cols += value(p).cols();
  }
  Matrix res(rows, cols);
  std::size_t c0 = 0;
  for (Var p : parts) {
    const Matrix& v = value(p);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) res(r, c0 + c) = v(r, c);
    c0 += v.cols();
  }
  Var out = push(std::move(res), nullptr);
  nodes_[out.index].back = [ins = std::vector<Var>(parts.begin(), parts.end()), out](
                               Tape& t, Gradients&) {
    const Matrix& g = t.nodes_[out.index].grad;
    std::size_t c0 = 0;
    for (Var p : ins) {
      Matrix& d = t.grad(p);
      for (std::size_t r = 0; r < d.rows(); ++r)
        for (std::size_t c = 0; c < d.cols(); ++c) d(r, c) += g(r, c0 + c);
      c0 += d.cols();
    }
  };
  return out;
}

Var Tape::sum(Var x) {
  double s = 0.0;
  for (double v : value(x).values()) s += v;
  Var out = push(Matrix(1, 1, s), nullptr);
  nodes_[out.index].back = [x, out](Tape& t, Gradients&) {
    const double g = t.nodes_[out.index].grad(0, 0);
    for (double& d : t.grad(x).values()) d += g;
  };
  return out;
}

Var Tape::element(Var x, std::size_t r, std::size_t c) {
  const Matrix& xv = value(x);
  if (r >= xv.rows() || c >= xv.cols()) throw DimensionError("element out of range");
  Var out = push(Matrix(1, 1, xv(r, c)), nullptr);
  nodes_[out.index].back = [x, r, c, out](Tape& t, Gradients&) {
    t.grad(x)(r, c) += t.nodes_[out.index].grad(0, 0);
  };
  return out;
}

Var Tape::sampled_softmax_ce(Var hidden, const Parameter& table,
                             std::span<const CandidateRow> rows, double scale) {
  const Matrix& h = value(hidden);
  const Matrix& e = table.value;
  if (h.cols() != e.cols()) throw DimensionError("sampled_softmax_ce: hidden/table widths differ");
  std::vector<std::vector<double>> probs;
  probs.reserve(rows.size());
  double total = 0.0;
  std::vector<double> logits;
  for (const auto& row : rows) {
    if (row.position >= h.rows()) throw DimensionError("sampled_softmax_ce: position out of range");
    if (row.candidates.empty()) throw DimensionError("sampled_softmax_ce: no candidates");
    logits.resize(row.candidates.size());
    for (std::size_t j = 0; j < row.candidates.size(); ++j) {
      logits[j] = dot(h.row(row.position), e.row(static_cast<std::size_t>(row.candidates[j])));
    }
    total += log_sum_exp(logits) - logits[0];
    probs.push_back(omniseq::softmax(logits));
  }
  Var out = push(Matrix(1, 1, scale * total), nullptr);
  nodes_[out.index].back = [hidden, &table, rows = std::vector<CandidateRow>(rows.begin(), rows.end()),
                            probs = std::move(probs), scale, out](Tape& t, Gradients& grads) {
    const double g = t.nodes_[out.index].grad(0, 0) * scale;
    const Matrix& h = t.value(hidden);
    const Matrix& e = table.value;
    Matrix& dh = t.grad(hidden);
    Matrix& de = sink(grads, table);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto& row = rows[k];
      auto hrow = h.row(row.position);
      auto dhrow = dh.row(row.position);
      for (std::size_t j = 0; j < row.candidates.size(); ++j) {
        const double dz = g * (probs[k][j] - (j == 0 ? 1.0 : 0.0));
        const auto id = static_cast<std::size_t>(row.candidates[j]);
        auto erow = e.row(id);
        auto derow = de.row(id);
        for (std::size_t c = 0; c < hrow.size(); ++c) {
          dhrow[c] += dz * erow[c];
          derow[c] += dz * hrow[c];
        }
      }
    }
  };
  return out;
}

void Tape::backward(Var loss, Gradients& grads) {
  if (nodes_.empty()) throw std::logic_error("backward called before any forward pass");
  if (consumed_) throw std::logic_error("backward already ran on this tape");
  if (loss.index >= nodes_.size()) throw std::logic_error("loss is not recorded on this tape");
  const Matrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) throw DimensionError("backward needs a scalar loss");
  consumed_ = true;
  grad(loss)(0, 0) = 1.0;
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.param) {
      Matrix& dst = sink(grads, *n.param);
      auto d = dst.values();
      auto g = n.grad.values();
      for (std::size_t k = 0; k < d.size(); ++k) d[k] += g[k];
    } else if (n.back) {
      n.back(*this, grads);
    }
  }
}

}  // namespace omniseq
