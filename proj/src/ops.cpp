#include "ttl/ops.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <utility>

namespace ttl {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConst = Eigen::Map<const RowMat>;

namespace {

using Storage = Tensor::Storage;
using StoragePtr = std::shared_ptr<Storage>;

std::span<const double> grad_of(const StoragePtr& s) {
    return s->grad;  // empty span when no gradient flowed to this output
}

void add_grad(const StoragePtr& s, std::size_t i, double v) { s->grad[i] += v; }

void ensure_grad(const StoragePtr& s) {
    if (s->requires_grad && s->grad.empty()) s->grad.assign(s->values.size(), 0.0);
}

// mark output, run the finite check, and record the closure if needed
template <typename Fn>
Tensor finish(Tensor out, bool any_rg, GradTape* tape, const char* op, Fn&& backward_fn) {
    check_finite(out, op);
    if (tape && any_rg) {
        out.set_requires_grad(true);
        tape->record(std::forward<Fn>(backward_fn), out);
    } else {
        out.set_requires_grad(any_rg);
    }
    return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, GradTape* tape) {
    const std::size_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
    if (k != k2)
        throw shape_error("matmul: inner dimensions " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()));
    Tensor out({m, n});
    MapConst A(a.data().data(), m, k), B(b.data().data(), k, n);
    MapMat(out.mutable_data().data(), m, n).noalias() = A * B;

    bool rg = a.requires_grad() || b.requires_grad();
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    return finish(std::move(out), rg, tape, "matmul", [sa, sb, so, m, k, n] {
        auto og = grad_of(so);
        if (og.empty()) return;
        MapConst G(og.data(), m, n);
        MapConst A(sa->values.data(), m, k), B(sb->values.data(), k, n);
        if (sa->requires_grad) {
            ensure_grad(sa);
            MapMat(sa->grad.data(), m, k).noalias() += G * B.transpose();
        }
        if (sb->requires_grad) {
            ensure_grad(sb);
            MapMat(sb->grad.data(), k, n).noalias() += A.transpose() * G;
        }
    });
}

Tensor transpose(const Tensor& a, GradTape* tape) {
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out({n, m});
    MapMat(out.mutable_data().data(), n, m) = MapConst(a.data().data(), m, n).transpose();
    auto sa = a.storage(), so = out.storage();
    return finish(std::move(out), a.requires_grad(), tape, "transpose", [sa, so, m, n] {
        auto og = grad_of(so);
        if (og.empty() || !sa->requires_grad) return;
        ensure_grad(sa);
        MapMat(sa->grad.data(), m, n) += MapConst(og.data(), n, m).transpose();
    });
}

Tensor add(const Tensor& a, const Tensor& b, GradTape* tape) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.at(i) + b.at(i);
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    return finish(std::move(out), a.requires_grad() || b.requires_grad(), tape, "add",
                  [sa, sb, so] {
                      auto og = grad_of(so);
                      if (og.empty()) return;
                      for (auto s : {sa, sb}) {
                          if (!s->requires_grad) continue;
                          ensure_grad(s);
                          for (std::size_t i = 0; i < og.size(); ++i) add_grad(s, i, og[i]);
                      }
                  });
}

Tensor sub(const Tensor& a, const Tensor& b, GradTape* tape) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.at(i) - b.at(i);
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    return finish(std::move(out), a.requires_grad() || b.requires_grad(), tape, "sub",
                  [sa, sb, so] {
                      auto og = grad_of(so);
                      if (og.empty()) return;
                      if (sa->requires_grad) {
                          ensure_grad(sa);
                          for (std::size_t i = 0; i < og.size(); ++i) add_grad(sa, i, og[i]);
                      }
                      if (sb->requires_grad) {
                          ensure_grad(sb);
                          for (std::size_t i = 0; i < og.size(); ++i) add_grad(sb, i, -og[i]);
                      }
                  });
}

Tensor mul(const Tensor& a, const Tensor& b, GradTape* tape) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.at(i) * b.at(i);
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    return finish(std::move(out), a.requires_grad() || b.requires_grad(), tape, "mul",
                  [sa, sb, so] {
                      auto og = grad_of(so);
                      if (og.empty()) return;
                      if (sa->requires_grad) {
                          ensure_grad(sa);
                          for (std::size_t i = 0; i < og.size(); ++i)
                              add_grad(sa, i, og[i] * sb->values[i]);
                      }
                      if (sb->requires_grad) {
                          ensure_grad(sb);
                          for (std::size_t i = 0; i < og.size(); ++i)
                              add_grad(sb, i, og[i] * sa->values[i]);
                      }
                  });
}

Tensor scale(const Tensor& a, double c, GradTape* tape) {
    Tensor out(a.shape());
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = c * a.at(i);
    auto sa = a.storage(), so = out.storage();
    return finish(std::move(out), a.requires_grad(), tape, "scale", [sa, so, c] {
        auto og = grad_of(so);
        if (og.empty() || !sa->requires_grad) return;
        ensure_grad(sa);
        for (std::size_t i = 0; i < og.size(); ++i) add_grad(sa, i, c * og[i]);
    });
}

Tensor add_scalar(const Tensor& a, double c, GradTape* tape) {
    Tensor out(a.shape());
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.at(i) + c;
    auto sa = a.storage(), so = out.storage();
    return finish(std::move(out), a.requires_grad(), tape, "add_scalar", [sa, so] {
        auto og = grad_of(so);
        if (og.empty() || !sa->requires_grad) return;
        ensure_grad(sa);
        for (std::size_t i = 0; i < og.size(); ++i) add_grad(sa, i, og[i]);
    });
}

Tensor add_rowwise(const Tensor& a, const Tensor& bias, GradTape* tape) {
    const std::size_t m = a.rows(), n = a.cols();
    if (bias.size() != n)
        throw shape_error("add_rowwise: bias " + shape_str(bias.shape()) + " vs cols " +
                          std::to_string(n));
    Tensor out(a.shape());
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) o[i * n + j] = a.at(i * n + j) + bias.at(j);
    auto sa = a.storage(), sb = bias.storage(), so = out.storage();
    return finish(std::move(out), a.requires_grad() || bias.requires_grad(), tape,
                  "add_rowwise", [sa, sb, so, m, n] {
                      auto og = grad_of(so);
                      if (og.empty()) return;
                      if (sa->requires_grad) {
                          ensure_grad(sa);
                          for (std::size_t i = 0; i < og.size(); ++i) add_grad(sa, i, og[i]);
                      }
                      if (sb->requires_grad) {
                          ensure_grad(sb);
                          for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j)
                                  add_grad(sb, j, og[i * n + j]);
                      }
                  });
}

Tensor scale_by(const Tensor& a, const Tensor& s, GradTape* tape) {
    if (s.size() != 1) throw shape_error("scale_by: scale must be a 1-element tensor");
    Tensor out(a.shape());
    const double c = s.at(0);
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = c * a.at(i);
    auto sa = a.storage(), ss = s.storage(), so = out.storage();
    return finish(std::move(out), a.requires_grad() || s.requires_grad(), tape, "scale_by",
                  [sa, ss, so] {
                      auto og = grad_of(so);
                      if (og.empty()) return;
                      const double c = ss->values[0];
                      if (sa->requires_grad) {
                          ensure_grad(sa);
                          for (std::size_t i = 0; i < og.size(); ++i)
                              add_grad(sa, i, c * og[i]);
                      }
                      if (ss->requires_grad) {
                          ensure_grad(ss);
                          double acc = 0.0;
                          for (std::size_t i = 0; i < og.size(); ++i)
                              acc += og[i] * sa->values[i];
                          add_grad(ss, 0, acc);
                      }
                  });
}

Tensor softmax(const Tensor& x, double temperature, GradTape* tape) {
    if (temperature <= 0.0)
        throw numeric_error("softmax: temperature must be positive");
    if (x.size() == 0) throw shape_error("softmax: empty input");
    const std::size_t c = x.shape().back();
    const std::size_t rows = x.size() / c;
    Tensor out(x.shape());
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < rows; ++i) {
        const double* row = x.data().data() + i * c;
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            double e = std::exp(temperature * (row[j] - mx));
            o[i * c + j] = e;
            z += e;
        }
        for (std::size_t j = 0; j < c; ++j) o[i * c + j] /= z;
    }
    auto sx = x.storage(), so = out.storage();
    return finish(std::move(out), x.requires_grad(), tape, "softmax",
                  [sx, so, rows, c, temperature] {
                      auto og = grad_of(so);
                      if (og.empty() || !sx->requires_grad) return;
                      ensure_grad(sx);
                      for (std::size_t i = 0; i < rows; ++i) {
                          const double* p = so->values.data() + i * c;
                          const double* g = og.data() + i * c;
                          double dot = 0.0;
                          for (std::size_t j = 0; j < c; ++j) dot += g[j] * p[j];
                          for (std::size_t j = 0; j < c; ++j)
                              add_grad(sx, i * c + j, temperature * p[j] * (g[j] - dot));
                      }
                  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, GradTape* tape,
                  double eps) {
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.size() / n;
    if (gain.size() != n || bias.size() != n)
        throw shape_error("layer_norm: affine size mismatch");
    Tensor out(x.shape());
    std::vector<double> inv_std(rows), mean_v(rows);
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < rows; ++i) {
        const double* row = x.data().data() + i * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += row[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(n);
        double is = 1.0 / std::sqrt(var + eps);
        mean_v[i] = mu;
        inv_std[i] = is;
        for (std::size_t j = 0; j < n; ++j)
            o[i * n + j] = (row[j] - mu) * is * gain.at(j) + bias.at(j);
    }
    bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
    auto sx = x.storage(), sg = gain.storage(), sb = bias.storage(), so = out.storage();
    return finish(std::move(out), rg, tape, "layer_norm",
                  [sx, sg, sb, so, rows, n, mean_v = std::move(mean_v),
                   inv_std = std::move(inv_std)] {
                      auto og = grad_of(so);
                      if (og.empty()) return;
                      for (std::size_t i = 0; i < rows; ++i) {
                          const double* row = sx->values.data() + i * n;
                          const double* g = og.data() + i * n;
                          const double mu = mean_v[i], is = inv_std[i];
                          if (sg->requires_grad) {
                              ensure_grad(sg);
                              for (std::size_t j = 0; j < n; ++j)
                                  add_grad(sg, j, g[j] * (row[j] - mu) * is);
                          }
                          if (sb->requires_grad) {
                              ensure_grad(sb);
                              for (std::size_t j = 0; j < n; ++j) add_grad(sb, j, g[j]);
                          }
                          if (sx->requires_grad) {
                              ensure_grad(sx);
                              double sum_dh = 0.0, sum_dh_xhat = 0.0;
                              for (std::size_t j = 0; j < n; ++j) {
                                  double dh = g[j] * sg->values[j];
                                  double xhat = (row[j] - mu) * is;
                                  sum_dh += dh;
                                  sum_dh_xhat += dh * xhat;
                              }
                              const double inv_n = 1.0 / static_cast<double>(n);
                              for (std::size_t j = 0; j < n; ++j) {
                                  double dh = g[j] * sg->values[j];
                                  double xhat = (row[j] - mu) * is;
                                  add_grad(sx, i * n + j,
                                           is * (dh - inv_n * sum_dh -
                                                 xhat * inv_n * sum_dh_xhat));
                              }
                          }
                      }
                  });
}

Tensor gelu(const Tensor& x, GradTape* tape) {
    Tensor out(x.shape());
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        double v = x.at(i);
        o[i] = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
    }
    auto sx = x.storage(), so = out.storage();
    return finish(std::move(out), x.requires_grad(), tape, "gelu", [sx, so] {
        auto og = grad_of(so);
        if (og.empty() || !sx->requires_grad) return;
        ensure_grad(sx);
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        for (std::size_t i = 0; i < og.size(); ++i) {
            double v = sx->values[i];
            double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
            double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            add_grad(sx, i, og[i] * (cdf + v * pdf));
        }
    });
}

Tensor log_op(const Tensor& x, GradTape* tape) {
    Tensor out(x.shape());
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        if (x.at(i) <= 0.0) throw numeric_error("log: non-positive input");
        o[i] = std::log(x.at(i));
    }
    auto sx = x.storage(), so = out.storage();
    return finish(std::move(out), x.requires_grad(), tape, "log", [sx, so] {
        auto og = grad_of(so);
        if (og.empty() || !sx->requires_grad) return;
        ensure_grad(sx);
        for (std::size_t i = 0; i < og.size(); ++i) add_grad(sx, i, og[i] / sx->values[i]);
    });
}

Tensor exp_op(const Tensor& x, GradTape* tape) {
    Tensor out(x.shape());
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::exp(x.at(i));
    auto sx = x.storage(), so = out.storage();
    return finish(std::move(out), x.requires_grad(), tape, "exp", [sx, so] {
        auto og = grad_of(so);
        if (og.empty() || !sx->requires_grad) return;
        ensure_grad(sx);
        for (std::size_t i = 0; i < og.size(); ++i)
            add_grad(sx, i, og[i] * so->values[i]);
    });
}

Tensor sqrt_op(const Tensor& x, GradTape* tape) {
    Tensor out(x.shape());
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        if (x.at(i) < 0.0) throw numeric_error("sqrt: negative input");
        o[i] = std::sqrt(x.at(i));
    }
    auto sx = x.storage(), so = out.storage();
    return finish(std::move(out), x.requires_grad(), tape, "sqrt", [sx, so] {
        auto og = grad_of(so);
        if (og.empty() || !sx->requires_grad) return;
        ensure_grad(sx);
        for (std::size_t i = 0; i < og.size(); ++i)
            add_grad(sx, i, og[i] * 0.5 / so->values[i]);
    });
}

Tensor reciprocal(const Tensor& x, GradTape* tape) {
    Tensor out(x.shape());
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = 1.0 / x.at(i);
    auto sx = x.storage(), so = out.storage();
    return finish(std::move(out), x.requires_grad(), tape, "reciprocal", [sx, so] {
        auto og = grad_of(so);
        if (og.empty() || !sx->requires_grad) return;
        ensure_grad(sx);
        for (std::size_t i = 0; i < og.size(); ++i) {
            double y = so->values[i];
            add_grad(sx, i, -og[i] * y * y);
        }
    });
}

Tensor sum(const Tensor& x, GradTape* tape) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    Tensor out = Tensor::scalar(acc);
    auto sx = x.storage(), so = out.storage();
    return finish(std::move(out), x.requires_grad(), tape, "sum", [sx, so] {
        auto og = grad_of(so);
        if (og.empty() || !sx->requires_grad) return;
        ensure_grad(sx);
        for (std::size_t i = 0; i < sx->values.size(); ++i) add_grad(sx, i, og[0]);
    });
}

Tensor mean(const Tensor& x, GradTape* tape) {
    if (x.size() == 0) throw shape_error("mean: empty input");
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    const double inv_n = 1.0 / static_cast<double>(x.size());
    Tensor out = Tensor::scalar(acc * inv_n);
    auto sx = x.storage(), so = out.storage();
    return finish(std::move(out), x.requires_grad(), tape, "mean", [sx, so, inv_n] {
        auto og = grad_of(so);
        if (og.empty() || !sx->requires_grad) return;
        ensure_grad(sx);
        for (std::size_t i = 0; i < sx->values.size(); ++i) add_grad(sx, i, og[0] * inv_n);
    });
}

Tensor reshape(const Tensor& x, std::vector<std::size_t> shape, GradTape* tape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    if (n != x.size())
        throw shape_error("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    Tensor out(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
    auto sx = x.storage(), so = out.storage();
    return finish(std::move(out), x.requires_grad(), tape, "reshape", [sx, so] {
        auto og = grad_of(so);
        if (og.empty() || !sx->requires_grad) return;
        ensure_grad(sx);
        for (std::size_t i = 0; i < og.size(); ++i) add_grad(sx, i, og[i]);
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts, GradTape* tape) {
    if (parts.empty()) throw shape_error("concat_rows: empty list");
    const std::size_t n = parts[0].cols();
    std::size_t total_rows = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p.cols() != n) throw shape_error("concat_rows: column mismatch");
        total_rows += p.rows();
        rg = rg || p.requires_grad();
    }
    Tensor out({total_rows, n});
    auto o = out.mutable_data();
    std::size_t off = 0;
    std::vector<StoragePtr> srcs;
    for (const auto& p : parts) {
        std::copy(p.data().begin(), p.data().end(), o.begin() + off);
        off += p.size();
        srcs.push_back(p.storage());
    }
    auto so = out.storage();
    return finish(std::move(out), rg, tape, "concat_rows", [srcs = std::move(srcs), so] {
        auto og = grad_of(so);
        if (og.empty()) return;
        std::size_t off = 0;
        for (const auto& s : srcs) {
            if (s->requires_grad) {
                ensure_grad(s);
                for (std::size_t i = 0; i < s->values.size(); ++i)
                    add_grad(s, i, og[off + i]);
            }
            off += s->values.size();
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts, GradTape* tape) {
    if (parts.empty()) throw shape_error("concat_cols: empty list");
    const std::size_t m = parts[0].rows();
    std::size_t total_cols = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p.rows() != m) throw shape_error("concat_cols: row mismatch");
        total_cols += p.cols();
        rg = rg || p.requires_grad();
    }
    Tensor out({m, total_cols});
    auto o = out.mutable_data();
    std::size_t col_off = 0;
    std::vector<StoragePtr> srcs;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        const std::size_t w = p.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j)
                o[i * total_cols + col_off + j] = p.at(i * w + j);
        col_off += w;
        srcs.push_back(p.storage());
        widths.push_back(w);
    }
    auto so = out.storage();
    return finish(std::move(out), rg, tape, "concat_cols",
                  [srcs = std::move(srcs), widths = std::move(widths), so, m, total_cols] {
                      auto og = grad_of(so);
                      if (og.empty()) return;
                      std::size_t col_off = 0;
                      for (std::size_t p = 0; p < srcs.size(); ++p) {
                          const std::size_t w = widths[p];
                          if (srcs[p]->requires_grad) {
                              ensure_grad(srcs[p]);
                              for (std::size_t i = 0; i < m; ++i)
                                  for (std::size_t j = 0; j < w; ++j)
                                      add_grad(srcs[p], i * w + j,
                                               og[i * total_cols + col_off + j]);
                          }
                          col_off += w;
                      }
                  });
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t len, GradTape* tape) {
    const std::size_t m = x.rows(), n = x.cols();
    if (start + len > m) throw shape_error("slice_rows: out of range");
    Tensor out({len, n});
    auto o = out.mutable_data();
    std::copy(x.data().begin() + start * n, x.data().begin() + (start + len) * n, o.begin());
    auto sx = x.storage(), so = out.storage();
    return finish(std::move(out), x.requires_grad(), tape, "slice_rows",
                  [sx, so, start, n] {
                      auto og = grad_of(so);
                      if (og.empty() || !sx->requires_grad) return;
                      ensure_grad(sx);
                      for (std::size_t i = 0; i < og.size(); ++i)
                          add_grad(sx, start * n + i, og[i]);
                  });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len, GradTape* tape) {
    const std::size_t m = x.rows(), n = x.cols();
    if (start + len > n) throw shape_error("slice_cols: out of range");
    Tensor out({m, len});
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < len; ++j) o[i * len + j] = x.at(i * n + start + j);
    auto sx = x.storage(), so = out.storage();
    return finish(std::move(out), x.requires_grad(), tape, "slice_cols",
                  [sx, so, m, n, start, len] {
                      auto og = grad_of(so);
                      if (og.empty() || !sx->requires_grad) return;
                      ensure_grad(sx);
                      for (std::size_t i = 0; i < m; ++i)
                          for (std::size_t j = 0; j < len; ++j)
                              add_grad(sx, i * n + start + j, og[i * len + j]);
                  });
}

Tensor extract_patches(const Tensor& image, std::size_t ps, GradTape* tape) {
    if (image.ndim() != 3) throw shape_error("extract_patches: image must be [C,H,W]");
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (ps == 0 || h % ps != 0 || w % ps != 0)
        throw shape_error("extract_patches: patch size must divide image dimensions");
    const std::size_t gh = h / ps, gw = w / ps;
    const std::size_t np = gh * gw, pd = c * ps * ps;
    Tensor out({np, pd});
    auto o = out.mutable_data();
    auto src_index = [c, h, w, ps, gw](std::size_t p, std::size_t col) {
        std::size_t ch = col / (ps * ps);
        std::size_t dy = (col / ps) % ps;
        std::size_t dx = col % ps;
        std::size_t py = p / gw, px = p % gw;
        (void)c;
        return ch * h * w + (py * ps + dy) * w + (px * ps + dx);
    };
    for (std::size_t p = 0; p < np; ++p)
        for (std::size_t col = 0; col < pd; ++col)
            o[p * pd + col] = image.at(src_index(p, col));
    auto si = image.storage(), so = out.storage();
    return finish(std::move(out), image.requires_grad(), tape, "extract_patches",
                  [si, so, np, pd, src_index] {
                      auto og = grad_of(so);
                      if (og.empty() || !si->requires_grad) return;
                      ensure_grad(si);
                      for (std::size_t p = 0; p < np; ++p)
                          for (std::size_t col = 0; col < pd; ++col)
                              add_grad(si, src_index(p, col), og[p * pd + col]);
                  });
}

Tensor l2_normalize(const Tensor& x, GradTape* tape) {
    double n2 = 0.0;
    for (double v : x.data()) n2 += v * v;
    const double norm = std::sqrt(n2);
    if (norm == 0.0) throw numeric_error("l2_normalize: zero-norm input");
    Tensor out(x.shape());
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x.at(i) / norm;
    auto sx = x.storage(), so = out.storage();
    return finish(std::move(out), x.requires_grad(), tape, "l2_normalize",
                  [sx, so, norm] {
                      auto og = grad_of(so);
                      if (og.empty() || !sx->requires_grad) return;
                      ensure_grad(sx);
                      double dot = 0.0;
                      for (std::size_t i = 0; i < og.size(); ++i)
                          dot += og[i] * so->values[i];
                      for (std::size_t i = 0; i < og.size(); ++i)
                          add_grad(sx, i, (og[i] - so->values[i] * dot) / norm);
                  });
}

}  // namespace ttl
