#include "maskcond/ops.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "maskcond/error.hpp"

namespace maskcond::ops {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw Error(Errc::ShapeMismatch, std::string(op) + ": " + detail);
}

void require_same(const Var& a, const Var& b, const char* op) {
  require(a.shape() == b.shape(), op, shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
  require(a.shape().size() == rank, op, "expected rank " + std::to_string(rank) + ", got " + shape_str(a.shape()));
}

// Parent grad buffer, or nullptr when that parent is not being differentiated.
Tensor* pgrad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

const Tensor& pval(Node& self, std::size_t i) { return self.parents[i]->value; }

template <typename F>
Var unary(const Var& a, F&& f, double (*df)(double x, double y)) {
  Tensor out(a.shape());
  const Tensor& av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  return make_node(std::move(out), {a}, [df](Node& self) {
    Tensor* ga = pgrad(self, 0);
    if (!ga) return;
    const Tensor& x = pval(self, 0);
    for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += self.grad[i] * df(x[i], self.value[i]);
  });
}

struct ImageDims {
  std::size_t b, c, h, w;
};

ImageDims image_dims(const Var& x, const char* op) {
  require_rank(x, 4, op);
  const auto& s = x.shape();
  return {s[0], s[1], s[2], s[3]};
}

void im2col(const double* img, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, std::size_t pad,
            std::size_t oh, std::size_t ow, double* cols) {
  const auto ih = static_cast<std::ptrdiff_t>(h);
  const auto iw = static_cast<std::ptrdiff_t>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = cols + ((c * k + ky) * k + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(pad);
          double* dst = row + oy * ow;
          if (iy < 0 || iy >= ih) {
            std::fill(dst, dst + ow, 0.0);
            continue;
          }
          const double* src = img + (c * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pad);
            dst[ox] = (ix < 0 || ix >= iw) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const double* cols, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, std::size_t pad,
            std::size_t oh, std::size_t ow, double* img) {
  const auto ih = static_cast<std::ptrdiff_t>(h);
  const auto iw = static_cast<std::ptrdiff_t>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = cols + ((c * k + ky) * k + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= ih) continue;
          const double* src = row + oy * ow;
          double* dst = img + (c * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < iw) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (Tensor* g = pgrad(self, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    if (Tensor* g = pgrad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (Tensor* g = pgrad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = pval(self, 0);
    const Tensor& bv = pval(self, 1);
    if (Tensor* g = pgrad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    }
    if (Tensor* g = pgrad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= factor;
  return make_node(std::move(out), {a}, [factor](Node& self) {
    if (Tensor* g = pgrad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * factor;
    }
  });
}

Var add_scalar(const Var& a, double offset) {
  Tensor out = a.value();
  for (auto& v : out.data()) v += offset;
  return make_node(std::move(out), {a}, [](Node& self) {
    if (Tensor* g = pgrad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

Var relu(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var silu(const Var& a) {
  return unary(
      a, [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Var exp(const Var& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var square(const Var& a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return make_node(Tensor({1}, {total}), {a}, [](Node& self) {
    if (Tensor* g = pgrad(self, 0)) {
      const double s = self.grad[0];
      for (auto& v : g->data()) v += s;
    }
  });
}

Var mean(const Var& a) {
  const auto n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_node(std::move(out), {a}, [](Node& self) {
    if (Tensor* g = pgrad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

Var mse(const Var& a, const Var& b) {
  require_same(a, b, "mse");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  double total = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    total += d * d;
  }
  const auto n = static_cast<double>(av.size());
  return make_node(Tensor({1}, {total / n}), {a, b}, [n](Node& self) {
    const Tensor& av = pval(self, 0);
    const Tensor& bv = pval(self, 1);
    const double s = 2.0 * self.grad[0] / n;
    Tensor* ga = pgrad(self, 0);
    Tensor* gb = pgrad(self, 1);
    for (std::size_t i = 0; i < av.size(); ++i) {
      const double d = s * (av[i] - bv[i]);
      if (ga) (*ga)[i] += d;
      if (gb) (*gb)[i] -= d;
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  require(b.shape()[0] == k, "matmul", shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor out({m, n});
  MapR(out.ptr(), m, n).noalias() = CMapR(a.value().ptr(), m, k) * CMapR(b.value().ptr(), k, n);
  return make_node(std::move(out), {a, b}, [m, k, n](Node& self) {
    CMapR g(self.grad.ptr(), m, n);
    if (Tensor* ga = pgrad(self, 0)) MapR(ga->ptr(), m, k).noalias() += g * CMapR(pval(self, 1).ptr(), k, n).transpose();
    if (Tensor* gb = pgrad(self, 1)) MapR(gb->ptr(), k, n).noalias() += CMapR(pval(self, 0).ptr(), m, k).transpose() * g;
  });
}

Var linear(const Var& x, const Var& w, const Var& bias) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const std::size_t batch = x.shape()[0], in = x.shape()[1], out_dim = w.shape()[1];
  require(w.shape()[0] == in, "linear", "input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  require(bias.shape() == Shape{out_dim}, "linear", "bias " + shape_str(bias.shape()));
  Tensor out({batch, out_dim});
  MapR o(out.ptr(), batch, out_dim);
  o.noalias() = CMapR(x.value().ptr(), batch, in) * CMapR(w.value().ptr(), in, out_dim);
  o.rowwise() += CVecMap(bias.value().ptr(), out_dim).transpose();
  return make_node(std::move(out), {x, w, bias}, [batch, in, out_dim](Node& self) {
    CMapR g(self.grad.ptr(), batch, out_dim);
    if (Tensor* gx = pgrad(self, 0))
      MapR(gx->ptr(), batch, in).noalias() += g * CMapR(pval(self, 1).ptr(), in, out_dim).transpose();
    if (Tensor* gw = pgrad(self, 1))
      MapR(gw->ptr(), in, out_dim).noalias() += CMapR(pval(self, 0).ptr(), batch, in).transpose() * g;
    if (Tensor* gb = pgrad(self, 2)) VecMap(gb->ptr(), out_dim) += g.colwise().sum().transpose();
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols", "no inputs");
  const std::size_t rows = parts[0].shape().at(0);
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    require(p.shape()[0] == rows, "concat_cols", "row count mismatch");
    widths.push_back(p.shape()[1]);
    total += p.shape()[1];
  }
  Tensor out({rows, total});
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    MapR(out.ptr(), rows, total).middleCols(offset, widths[i]) = CMapR(parts[i].value().ptr(), rows, widths[i]);
    offset += widths[i];
  }
  return make_node(std::move(out), parts, [rows, total, widths](Node& self) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (Tensor* g = pgrad(self, i))
        MapR(g->ptr(), rows, widths[i]) += CMapR(self.grad.ptr(), rows, total).middleCols(offset, widths[i]);
      offset += widths[i];
    }
  });
}

Var slice_cols(const Var& x, std::size_t start, std::size_t len) {
  require_rank(x, 2, "slice_cols");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  require(start + len <= cols, "slice_cols", "slice exceeds " + shape_str(x.shape()));
  Tensor out({rows, len});
  MapR(out.ptr(), rows, len) = CMapR(x.value().ptr(), rows, cols).middleCols(start, len);
  return make_node(std::move(out), {x}, [rows, cols, start, len](Node& self) {
    if (Tensor* g = pgrad(self, 0)) MapR(g->ptr(), rows, cols).middleCols(start, len) += CMapR(self.grad.ptr(), rows, len);
  });
}

Var gather_rows(const Var& table, std::span<const std::size_t> rows) {
  require_rank(table, 2, "gather_rows");
  const std::size_t n = table.shape()[0], d = table.shape()[1];
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Tensor out({idx.size(), d});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    if (idx[b] >= n) throw Error(Errc::IndexOutOfRange, "gather_rows: row " + std::to_string(idx[b]) + " of " + std::to_string(n));
    std::copy_n(table.value().ptr() + idx[b] * d, d, out.ptr() + b * d);
  }
  return make_node(std::move(out), {table}, [idx, d](Node& self) {
    Tensor* g = pgrad(self, 0);
    if (!g) return;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      for (std::size_t j = 0; j < d; ++j) (*g)[idx[b] * d + j] += self.grad[b * d + j];
    }
  });
}

Var scalar_affine(std::span<const double> values, const Var& w, const Var& bias) {
  require_rank(w, 1, "scalar_affine");
  require_same(w, bias, "scalar_affine");
  const std::size_t d = w.shape()[0];
  std::vector<double> v(values.begin(), values.end());
  Tensor out({v.size(), d});
  for (std::size_t b = 0; b < v.size(); ++b) {
    for (std::size_t j = 0; j < d; ++j) out[b * d + j] = v[b] * w.value()[j] + bias.value()[j];
  }
  return make_node(std::move(out), {w, bias}, [v, d](Node& self) {
    Tensor* gw = pgrad(self, 0);
    Tensor* gb = pgrad(self, 1);
    for (std::size_t b = 0; b < v.size(); ++b) {
      for (std::size_t j = 0; j < d; ++j) {
        const double g = self.grad[b * d + j];
        if (gw) (*gw)[j] += g * v[b];
        if (gb) (*gb)[j] += g;
      }
    }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean, Tensor& running_var,
               bool training, double momentum, double eps) {
  require_rank(x, 2, "batch_norm");
  const std::size_t batch = x.shape()[0], c = x.shape()[1];
  require(gamma.shape() == Shape{c} && beta.shape() == Shape{c}, "batch_norm", "affine parameters must be (C)");
  require(running_mean.shape() == Shape{c} && running_var.shape() == Shape{c}, "batch_norm",
          "running statistics must be (C)");
  require(batch > 0, "batch_norm", "empty batch");
  const Tensor& xv = x.value();
  Tensor xhat({batch, c});
  Tensor inv_std({c});
  for (std::size_t j = 0; j < c; ++j) {
    double mu, var;
    if (training) {
      mu = 0.0;
      for (std::size_t b = 0; b < batch; ++b) mu += xv[b * c + j];
      mu /= static_cast<double>(batch);
      var = 0.0;
      for (std::size_t b = 0; b < batch; ++b) var += (xv[b * c + j] - mu) * (xv[b * c + j] - mu);
      var /= static_cast<double>(batch);
      const double unbiased = batch > 1 ? var * static_cast<double>(batch) / static_cast<double>(batch - 1) : var;
      running_mean[j] = (1.0 - momentum) * running_mean[j] + momentum * mu;
      running_var[j] = (1.0 - momentum) * running_var[j] + momentum * unbiased;
    } else {
      mu = running_mean[j];
      var = running_var[j];
    }
    inv_std[j] = 1.0 / std::sqrt(var + eps);
    for (std::size_t b = 0; b < batch; ++b) xhat[b * c + j] = (xv[b * c + j] - mu) * inv_std[j];
  }
  Tensor out({batch, c});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < c; ++j) out[b * c + j] = gamma.value()[j] * xhat[b * c + j] + beta.value()[j];
  }
  return make_node(std::move(out), {x, gamma, beta}, [xhat, inv_std, batch, c, training](Node& self) {
    const Tensor& gam = pval(self, 1);
    Tensor* gx = pgrad(self, 0);
    Tensor* gg = pgrad(self, 1);
    Tensor* gb = pgrad(self, 2);
    const auto m = static_cast<double>(batch);
    for (std::size_t j = 0; j < c; ++j) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double dy = self.grad[b * c + j];
        sum_dy += dy;
        sum_dy_xhat += dy * xhat[b * c + j];
      }
      if (gg) (*gg)[j] += sum_dy_xhat;
      if (gb) (*gb)[j] += sum_dy;
      if (!gx) continue;
      for (std::size_t b = 0; b < batch; ++b) {
        const double dxhat = self.grad[b * c + j] * gam[j];
        if (training) {
          (*gx)[b * c + j] +=
              inv_std[j] * (dxhat - gam[j] * sum_dy / m - xhat[b * c + j] * gam[j] * sum_dy_xhat / m);
        } else {
          (*gx)[b * c + j] += inv_std[j] * dxhat;
        }
      }
    }
  });
}

Var conv2d(const Var& x, const Var& w, const Var& bias, std::size_t padding) {
  const auto [batch, cin, h, wd] = image_dims(x, "conv2d");
  require_rank(w, 4, "conv2d");
  const std::size_t cout = w.shape()[0], k = w.shape()[2];
  require(w.shape()[1] == cin && w.shape()[3] == k, "conv2d",
          "input " + shape_str(x.shape()) + " vs kernel " + shape_str(w.shape()));
  require(bias.shape() == Shape{cout}, "conv2d", "bias " + shape_str(bias.shape()));
  require(h + 2 * padding >= k && wd + 2 * padding >= k, "conv2d", "kernel larger than padded input");
  const std::size_t oh = h + 2 * padding - k + 1, ow = wd + 2 * padding - k + 1;
  const std::size_t patch = cin * k * k, npix = oh * ow;
  const bool direct = (k == 1 && padding == 0);

  Tensor out({batch, cout, oh, ow});
  Storage cols(direct ? 0 : patch * npix);
  CMapR wm(w.value().ptr(), cout, patch);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* img = x.value().ptr() + b * cin * h * wd;
    if (!direct) im2col(img, cin, h, wd, k, padding, oh, ow, cols.data());
    CMapR cm(direct ? img : cols.data(), patch, npix);
    MapR om(out.ptr() + b * cout * npix, cout, npix);
    om.noalias() = wm * cm;
    om.colwise() += CVecMap(bias.value().ptr(), cout);
  }
  return make_node(std::move(out), {x, w, bias}, [=](Node& self) {
    Tensor* gx = pgrad(self, 0);
    Tensor* gw = pgrad(self, 1);
    Tensor* gb = pgrad(self, 2);
    const Tensor& xv = pval(self, 0);
    CMapR wm(pval(self, 1).ptr(), cout, patch);
    Storage cols(direct ? 0 : patch * npix);
    Storage dcols(direct ? 0 : patch * npix);
    for (std::size_t b = 0; b < batch; ++b) {
      CMapR g(self.grad.ptr() + b * cout * npix, cout, npix);
      const double* img = xv.ptr() + b * cin * h * wd;
      if (gb) VecMap(gb->ptr(), cout) += g.rowwise().sum();
      if (gw) {
        if (!direct) im2col(img, cin, h, wd, k, padding, oh, ow, cols.data());
        MapR(gw->ptr(), cout, patch).noalias() += g * CMapR(direct ? img : cols.data(), patch, npix).transpose();
      }
      if (gx) {
        double* gimg = gx->ptr() + b * cin * h * wd;
        if (direct) {
          MapR(gimg, patch, npix).noalias() += wm.transpose() * g;
        } else {
          MapR(dcols.data(), patch, npix).noalias() = wm.transpose() * g;
          col2im(dcols.data(), cin, h, wd, k, padding, oh, ow, gimg);
        }
      }
    }
  });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, std::size_t groups, double eps) {
  const auto [batch, c, h, w] = image_dims(x, "group_norm");
  require(groups > 0 && c % groups == 0, "group_norm",
          std::to_string(c) + " channels not divisible into " + std::to_string(groups) + " groups");
  require(gamma.shape() == Shape{c} && beta.shape() == Shape{c}, "group_norm", "affine parameters must be (C)");
  const std::size_t cpg = c / groups, hw = h * w, m = cpg * hw;
  const Tensor& xv = x.value();
  Tensor xhat(x.shape());
  Tensor inv_std({batch * groups});
  Tensor out(x.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t base = (b * c + g * cpg) * hw;
      double mu = 0.0;
      for (std::size_t i = 0; i < m; ++i) mu += xv[base + i];
      mu /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) var += (xv[base + i] - mu) * (xv[base + i] - mu);
      var /= static_cast<double>(m);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[b * groups + g] = is;
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t ch = g * cpg + i / hw;
        xhat[base + i] = (xv[base + i] - mu) * is;
        out[base + i] = gamma.value()[ch] * xhat[base + i] + beta.value()[ch];
      }
    }
  }
  return make_node(std::move(out), {x, gamma, beta}, [=](Node& self) {
    const Tensor& gam = pval(self, 1);
    Tensor* gx = pgrad(self, 0);
    Tensor* gg = pgrad(self, 1);
    Tensor* gb = pgrad(self, 2);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t base = (b * c + g * cpg) * hw;
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const std::size_t ch = g * cpg + i / hw;
          const double dy = self.grad[base + i];
          if (gg) (*gg)[ch] += dy * xhat[base + i];
          if (gb) (*gb)[ch] += dy;
          const double dxh = dy * gam[ch];
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * xhat[base + i];
        }
        if (!gx) continue;
        mean_dxhat /= static_cast<double>(m);
        mean_dxhat_xhat /= static_cast<double>(m);
        const double is = inv_std[b * groups + g];
        for (std::size_t i = 0; i < m; ++i) {
          const std::size_t ch = g * cpg + i / hw;
          const double dxh = self.grad[base + i] * gam[ch];
          (*gx)[base + i] += is * (dxh - mean_dxhat - xhat[base + i] * mean_dxhat_xhat);
        }
      }
    }
  });
}

Var avg_pool2(const Var& x) {
  const auto [batch, c, h, w] = image_dims(x, "avg_pool2");
  require(h % 2 == 0 && w % 2 == 0, "avg_pool2", "spatial size must be even, got " + shape_str(x.shape()));
  const std::size_t oh = h / 2, ow = w / 2, planes = batch * c;
  Tensor out({batch, c, oh, ow});
  const Tensor& xv = x.value();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const std::size_t i = p * h * w + 2 * y * w + 2 * xx;
        out[(p * oh + y) * ow + xx] = 0.25 * (xv[i] + xv[i + 1] + xv[i + w] + xv[i + w + 1]);
      }
    }
  }
  return make_node(std::move(out), {x}, [=](Node& self) {
    Tensor* g = pgrad(self, 0);
    if (!g) return;
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const double d = 0.25 * self.grad[(p * oh + y) * ow + xx];
          const std::size_t i = p * h * w + 2 * y * w + 2 * xx;
          (*g)[i] += d;
          (*g)[i + 1] += d;
          (*g)[i + w] += d;
          (*g)[i + w + 1] += d;
        }
      }
    }
  });
}

Var upsample2(const Var& x) {
  const auto [batch, c, h, w] = image_dims(x, "upsample2");
  const std::size_t oh = 2 * h, ow = 2 * w, planes = batch * c;
  Tensor out({batch, c, oh, ow});
  const Tensor& xv = x.value();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) out[(p * oh + y) * ow + xx] = xv[(p * h + y / 2) * w + xx / 2];
    }
  }
  return make_node(std::move(out), {x}, [=](Node& self) {
    Tensor* g = pgrad(self, 0);
    if (!g) return;
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t xx = 0; xx < ow; ++xx) (*g)[(p * h + y / 2) * w + xx / 2] += self.grad[(p * oh + y) * ow + xx];
      }
    }
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_channels", "no inputs");
  const auto first = image_dims(parts[0], "concat_channels");
  std::vector<std::size_t> chans;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto d = image_dims(p, "concat_channels");
    require(d.b == first.b && d.h == first.h && d.w == first.w, "concat_channels",
            shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
    chans.push_back(d.c);
    total += d.c;
  }
  const std::size_t batch = first.b, hw = first.h * first.w;
  Tensor out({batch, total, first.h, first.w});
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      std::copy_n(parts[i].value().ptr() + b * chans[i] * hw, chans[i] * hw, out.ptr() + (b * total + offset) * hw);
      offset += chans[i];
    }
  }
  return make_node(std::move(out), parts, [=](Node& self) {
    for (std::size_t b = 0; b < batch; ++b) {
      std::size_t offset = 0;
      for (std::size_t i = 0; i < chans.size(); ++i) {
        if (Tensor* g = pgrad(self, i)) {
          const double* src = self.grad.ptr() + (b * total + offset) * hw;
          double* dst = g->ptr() + b * chans[i] * hw;
          for (std::size_t j = 0; j < chans[i] * hw; ++j) dst[j] += src[j];
        }
        offset += chans[i];
      }
    }
  });
}

Var broadcast_spatial(const Var& x, std::size_t height, std::size_t width) {
  require_rank(x, 2, "broadcast_spatial");
  const std::size_t batch = x.shape()[0], c = x.shape()[1], hw = height * width;
  Tensor out({batch, c, height, width});
  for (std::size_t p = 0; p < batch * c; ++p) std::fill_n(out.ptr() + p * hw, hw, x.value()[p]);
  return make_node(std::move(out), {x}, [=](Node& self) {
    Tensor* g = pgrad(self, 0);
    if (!g) return;
    for (std::size_t p = 0; p < batch * c; ++p) {
      double s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) s += self.grad[p * hw + i];
      (*g)[p] += s;
    }
  });
}

Var add_channelwise(const Var& x, const Var& v) {
  const auto [batch, c, h, w] = image_dims(x, "add_channelwise");
  require(v.shape() == Shape{batch, c}, "add_channelwise", shape_str(v.shape()) + " vs " + shape_str(x.shape()));
  const std::size_t hw = h * w;
  Tensor out = x.value();
  for (std::size_t p = 0; p < batch * c; ++p) {
    for (std::size_t i = 0; i < hw; ++i) out[p * hw + i] += v.value()[p];
  }
  return make_node(std::move(out), {x, v}, [=](Node& self) {
    Tensor* gx = pgrad(self, 0);
    Tensor* gv = pgrad(self, 1);
    for (std::size_t p = 0; p < batch * c; ++p) {
      double s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        s += self.grad[p * hw + i];
        if (gx) (*gx)[p * hw + i] += self.grad[p * hw + i];
      }
      if (gv) (*gv)[p] += s;
    }
  });
}

Var to_tokens(const Var& x) {
  const auto [batch, c, h, w] = image_dims(x, "to_tokens");
  const std::size_t hw = h * w;
  Tensor out({batch * hw, c});
  for (std::size_t b = 0; b < batch; ++b) {
    MapR(out.ptr() + b * hw * c, hw, c) = CMapR(x.value().ptr() + b * c * hw, c, hw).transpose();
  }
  return make_node(std::move(out), {x}, [=](Node& self) {
    Tensor* g = pgrad(self, 0);
    if (!g) return;
    for (std::size_t b = 0; b < batch; ++b) {
      MapR(g->ptr() + b * c * hw, c, hw) += CMapR(self.grad.ptr() + b * hw * c, hw, c).transpose();
    }
  });
}

Var from_tokens(const Var& x, std::size_t batch, std::size_t height, std::size_t width) {
  require_rank(x, 2, "from_tokens");
  const std::size_t hw = height * width, c = x.shape()[1];
  require(x.shape()[0] == batch * hw, "from_tokens", shape_str(x.shape()) + " is not batch*H*W rows");
  Tensor out({batch, c, height, width});
  for (std::size_t b = 0; b < batch; ++b) {
    MapR(out.ptr() + b * c * hw, c, hw) = CMapR(x.value().ptr() + b * hw * c, hw, c).transpose();
  }
  return make_node(std::move(out), {x}, [=](Node& self) {
    Tensor* g = pgrad(self, 0);
    if (!g) return;
    for (std::size_t b = 0; b < batch; ++b) {
      MapR(g->ptr() + b * hw * c, hw, c) += CMapR(self.grad.ptr() + b * c * hw, c, hw).transpose();
    }
  });
}

Var attention(const Var& q, const Var& k, const Var& v, std::size_t batch, std::size_t heads) {
  require_rank(q, 2, "attention");
  require_same(q, k, "attention");
  require_same(q, v, "attention");
  const std::size_t rows = q.shape()[0], c = q.shape()[1];
  require(batch > 0 && rows % batch == 0, "attention", "rows not divisible by batch");
  require(heads > 0 && c % heads == 0, "attention", "channels not divisible by heads");
  const std::size_t len = rows / batch, dh = c / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor out({rows, c});
  // Softmax probabilities per (batch, head), kept for the backward pass.
  Storage probs(batch * heads * len * len);
  CMapR qm(q.value().ptr(), rows, c), km(k.value().ptr(), rows, c), vm(v.value().ptr(), rows, c);
  MapR om(out.ptr(), rows, c);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t hd = 0; hd < heads; ++hd) {
      MapR p(probs.data() + (b * heads + hd) * len * len, len, len);
      p.noalias() = sc * qm.block(b * len, hd * dh, len, dh) * km.block(b * len, hd * dh, len, dh).transpose();
      for (std::size_t i = 0; i < len; ++i) {
        const double mx = p.row(i).maxCoeff();
        p.row(i) = (p.row(i).array() - mx).exp();
        p.row(i) /= p.row(i).sum();
      }
      om.block(b * len, hd * dh, len, dh).noalias() = p * vm.block(b * len, hd * dh, len, dh);
    }
  }
  return make_node(std::move(out), {q, k, v}, [=](Node& self) {
    Tensor* gq = pgrad(self, 0);
    Tensor* gk = pgrad(self, 1);
    Tensor* gv = pgrad(self, 2);
    CMapR qm(pval(self, 0).ptr(), rows, c), km(pval(self, 1).ptr(), rows, c), vm(pval(self, 2).ptr(), rows, c);
    CMapR go(self.grad.ptr(), rows, c);
    MatR dp(len, len), ds(len, len);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t hd = 0; hd < heads; ++hd) {
        CMapR p(probs.data() + (b * heads + hd) * len * len, len, len);
        auto gblock = go.block(b * len, hd * dh, len, dh);
        if (gv) MapR(gv->ptr(), rows, c).block(b * len, hd * dh, len, dh).noalias() += p.transpose() * gblock;
        dp.noalias() = gblock * vm.block(b * len, hd * dh, len, dh).transpose();
        for (std::size_t i = 0; i < len; ++i) {
          const double dot = p.row(i).dot(dp.row(i));
          ds.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
        }
        if (gq) MapR(gq->ptr(), rows, c).block(b * len, hd * dh, len, dh).noalias() += sc * ds * km.block(b * len, hd * dh, len, dh);
        if (gk)
          MapR(gk->ptr(), rows, c).block(b * len, hd * dh, len, dh).noalias() +=
              sc * ds.transpose() * qm.block(b * len, hd * dh, len, dh);
      }
    }
  });
}

}  // namespace maskcond::ops
