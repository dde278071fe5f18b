#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace oracle {

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += a.at({i, t}) * b.at({t, j});
      out.at({i, j}) = acc;
    }
  }
  return out;
}

double ssim(const Tensor& a, const Tensor& b, std::size_t window) {
  const std::size_t h = a.dim(0), w = a.dim(1), c = a.dim(2);
  const std::size_t win = std::min({window, h, w});
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y + win <= h; ++y) {
      for (std::size_t x = 0; x + win <= w; ++x) {
        std::vector<double> pa, pb;
        for (std::size_t dy = 0; dy < win; ++dy) {
          for (std::size_t dx = 0; dx < win; ++dx) {
            pa.push_back(a.at({y + dy, x + dx, ch}));
            pb.push_back(b.at({y + dy, x + dx, ch}));
          }
        }
        const double n = static_cast<double>(pa.size());
        const double ma = std::accumulate(pa.begin(), pa.end(), 0.0) / n;
        const double mb = std::accumulate(pb.begin(), pb.end(), 0.0) / n;
        // two-pass moments
        double va = 0, vb = 0, cov = 0;
        for (std::size_t i = 0; i < pa.size(); ++i) {
          va += (pa[i] - ma) * (pa[i] - ma);
          vb += (pb[i] - mb) * (pb[i] - mb);
          cov += (pa[i] - ma) * (pb[i] - mb);
        }
        va /= n;
        vb /= n;
        cov /= n;
        const double num = (2 * ma * mb + c1) * (2 * cov + c2);
        const double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += num / den;
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

Tensor dft_magnitude(const Tensor& image) {
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  Tensor out(image.shape());
  const double two_pi = 2.0 * std::acos(-1.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t u = 0; u < h; ++u) {
      for (std::size_t v = 0; v < w; ++v) {
        double re = 0, im = 0;
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            const double angle = -two_pi * (static_cast<double>(u * y) / static_cast<double>(h) +
                                            static_cast<double>(v * x) / static_cast<double>(w));
            const double val = image.at({y, x, ch});
            re += val * std::cos(angle);
            im += val * std::sin(angle);
          }
        }
        out.at({u, v, ch}) = std::hypot(re, im);
      }
    }
  }
  return out;
}

EigenDecomposition symmetric_eigen(const Tensor& sym) {
  const std::size_t n = sym.dim(0);
  std::vector<std::vector<double>> a(n, std::vector<double>(n)), v(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    v[i][i] = 1.0;
    for (std::size_t j = 0; j < n; ++j) a[i][j] = sym.at({i, j});
  }
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double cs = 1.0 / std::sqrt(t * t + 1.0), sn = t * cs;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = cs * akp - sn * akq;
          a[k][q] = sn * akp + cs * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = cs * apk - sn * aqk;
          a[q][k] = sn * apk + cs * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = cs * vkp - sn * vkq;
          v[k][q] = sn * vkp + cs * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a[i][i] > a[j][j]; });
  EigenDecomposition out;
  out.vectors = Tensor({n, n});
  for (std::size_t c = 0; c < n; ++c) {
    out.values.push_back(a[order[c]][order[c]]);
    for (std::size_t r = 0; r < n; ++r) out.vectors.at({r, c}) = v[r][order[c]];
  }
  return out;
}

Tensor centered_gram(const Tensor& rows) {
  const std::size_t n = rows.dim(0), d = rows.dim(1);
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += rows.at({i, j}) / static_cast<double>(n);
  Tensor g({d, d});
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = 0; b < d; ++b) {
      double acc = 0;
      for (std::size_t i = 0; i < n; ++i) acc += (rows.at({i, a}) - mean[a]) * (rows.at({i, b}) - mean[b]);
      g.at({a, b}) = acc;
    }
  }
  return g;
}

std::size_t lcs(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      t[i][j] = a[i - 1] == b[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
    }
  }
  return t[a.size()][b.size()];
}

std::size_t Logistic::predict(const std::vector<double>& x) const {
  std::size_t best = 0;
  double best_score = -1e300;
  for (std::size_t c = 0; c < weights.size(); ++c) {
    double s = weights[c].back();
    for (std::size_t j = 0; j < x.size(); ++j) s += weights[c][j] * x[j];
    if (s > best_score) {
      best_score = s;
      best = c;
    }
  }
  return best;
}

Logistic fit_logistic(const std::vector<std::vector<double>>& x, const std::vector<std::size_t>& y,
                      std::size_t classes, std::size_t epochs, double lr) {
  const std::size_t d = x.front().size();
  Logistic model;
  model.weights.assign(classes, std::vector<double>(d + 1, 0.0));
  std::vector<double> scores(classes);
  for (std::size_t e = 0; e < epochs; ++e) {
    std::vector<std::vector<double>> grad(classes, std::vector<double>(d + 1, 0.0));
    for (std::size_t i = 0; i < x.size(); ++i) {
      double peak = -1e300;
      for (std::size_t c = 0; c < classes; ++c) {
        double s = model.weights[c].back();
        for (std::size_t j = 0; j < d; ++j) s += model.weights[c][j] * x[i][j];
        scores[c] = s;
        peak = std::max(peak, s);
      }
      double z = 0;
      for (double& s : scores) z += (s = std::exp(s - peak));
      for (std::size_t c = 0; c < classes; ++c) {
        const double delta = scores[c] / z - (c == y[i] ? 1.0 : 0.0);
        for (std::size_t j = 0; j < d; ++j) grad[c][j] += delta * x[i][j];
        grad[c][d] += delta;
      }
    }
    const double step = lr / static_cast<double>(x.size());
    for (std::size_t c = 0; c < classes; ++c)
      for (std::size_t j = 0; j <= d; ++j) model.weights[c][j] -= step * grad[c][j];
  }
  return model;
}

}  // namespace oracle
