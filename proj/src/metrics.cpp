#include "mjplab/metrics.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <stdexcept>

namespace mjplab {

double MetricReport::at(const std::string& name) const {
  const auto it = entries.find(name);
  if (it == entries.end()) throw std::out_of_range("metric report has no entry " + name);
  return it->second;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["modality"] = modality == MetricModality::image ? "image" : "text";
  for (const auto& [name, value] : entries) j[name] = value;
  j["saturated"] = saturated;
  // LPIPS needs a pretrained perceptual network; reported as absent.
  if (modality == MetricModality::image) j["lpips"] = nullptr;
  return j;
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  r.modality = j.at("modality").get<std::string>() == "image" ? MetricModality::image : MetricModality::text;
  for (const auto& [key, value] : j.items()) {
    if (key == "modality" || key == "saturated" || value.is_null()) continue;
    r.entries[key] = value.get<double>();
  }
  for (const auto& s : j.at("saturated")) r.saturated.insert(s.get<std::string>());
  return r;
}

// ---------------------------------------------------------------------------
// Images

namespace {

void check_pair(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("image shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  if (a.rank() != 3) throw ShapeError("images must be [H, W, C], got " + shape_str(a.shape()));
}

Tensor clamp01(const Tensor& t) {
  Tensor out = t;
  for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

double mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("mse shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    total += d * d;
  }
  return a.size() ? total / static_cast<double>(a.size()) : 0.0;
}

double psnr_from_mse(double mse_value) {
  if (mse_value < 1e-10) return kPsnrCeiling;
  return 10.0 * std::log10(1.0 / mse_value);
}

double ssim(const Tensor& a, const Tensor& b, std::size_t window) {
  check_pair(a, b);
  const std::size_t h = a.shape()[0], w = a.shape()[1], c = a.shape()[2];
  const std::size_t win = std::min({window, h, w});
  if (win == 0) throw ShapeError("ssim on an empty image");
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const double n = static_cast<double>(win * win);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y + win <= h; ++y) {
      for (std::size_t x = 0; x + win <= w; ++x) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (std::size_t dy = 0; dy < win; ++dy) {
          for (std::size_t dx = 0; dx < win; ++dx) {
            const std::size_t idx = ((y + dy) * w + (x + dx)) * c + ch;
            const double va = a[idx], vb = b[idx];
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
          }
        }
        const double ma = sa / n, mb = sb / n;
        const double va = saa / n - ma * ma;
        const double vb = sbb / n - mb * mb;
        const double cov = sab / n - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

Tensor magnitude_spectrum(const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("spectrum needs [H, W, C], got " + shape_str(image.shape()));
  const std::size_t h = image.shape()[0], w = image.shape()[1], c = image.shape()[2];
  Tensor out(image.shape());
  std::vector<std::complex<double>> buffer(h * w);
  auto* data = reinterpret_cast<fftw_complex*>(buffer.data());
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), data, data, FFTW_FORWARD, FFTW_ESTIMATE);
  }
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h * w; ++i) buffer[i] = {image[i * c + ch], 0.0};
    fftw_execute(plan);
    for (std::size_t i = 0; i < h * w; ++i) out[i * c + ch] = std::abs(buffer[i]);
  }
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  return out;
}

double fft2d_dissimilarity(const Tensor& a, const Tensor& b) {
  check_pair(a, b);
  if (a == b) return 0.0;
  const Tensor sa = magnitude_spectrum(a);
  const Tensor sb = magnitude_spectrum(b);
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    dot += sa[i] * sb[i];
    na += sa[i] * sa[i];
    nb += sb[i] * sb[i];
  }
  if (na == 0.0 && nb == 0.0) return 0.0;
  if (na == 0.0 || nb == 0.0) return 1.0;
  return std::clamp(1.0 - dot / std::sqrt(na * nb), 0.0, 1.0);
}

MetricReport image_metrics(const Tensor& recovered, const Tensor& truth) {
  check_pair(recovered, truth);
  const Tensor r = clamp01(recovered);
  const Tensor t = clamp01(truth);
  MetricReport report;
  report.modality = MetricModality::image;
  const double m = mse(r, t);
  report.entries["mse"] = m;
  report.entries["psnr"] = psnr_from_mse(m);
  if (m < 1e-10) report.saturated.insert("psnr");
  report.entries["ssim"] = ssim(r, t);
  report.entries["fft2d_cos"] = fft2d_dissimilarity(r, t);
  return report;
}

// ---------------------------------------------------------------------------
// Text

namespace {

using NGramCounts = std::map<std::vector<std::size_t>, std::size_t>;

NGramCounts ngrams(std::span<const std::size_t> seq, std::size_t n) {
  NGramCounts counts;
  if (seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) ++counts[std::vector<std::size_t>(seq.begin() + static_cast<std::ptrdiff_t>(i), seq.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

std::size_t clipped_overlap(const NGramCounts& hyp, const NGramCounts& ref) {
  std::size_t overlap = 0;
  for (const auto& [gram, count] : hyp) {
    const auto it = ref.find(gram);
    if (it != ref.end()) overlap += std::min(count, it->second);
  }
  return overlap;
}

double f1(double overlap, double hyp_total, double ref_total) {
  if (overlap == 0.0 || hyp_total == 0.0 || ref_total == 0.0) return 0.0;
  const double p = overlap / hyp_total;
  const double r = overlap / ref_total;
  return 2.0 * p * r / (p + r);
}

void require_nonempty(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("text metrics need non-empty sequences");
}

}  // namespace

double token_accuracy(std::span<const std::size_t> recovered, std::span<const std::size_t> truth) {
  require_nonempty(recovered, truth);
  return static_cast<double>(clipped_overlap(ngrams(recovered, 1), ngrams(truth, 1))) /
         static_cast<double>(truth.size());
}

double rouge_n(std::span<const std::size_t> recovered, std::span<const std::size_t> truth, std::size_t n) {
  require_nonempty(recovered, truth);
  const NGramCounts hyp = ngrams(recovered, n);
  const NGramCounts ref = ngrams(truth, n);
  if (hyp.empty() && ref.empty()) return std::equal(recovered.begin(), recovered.end(), truth.begin(), truth.end()) ? 1.0 : 0.0;
  const double hyp_total = static_cast<double>(recovered.size() + 1 - std::min(recovered.size() + 1, n));
  const double ref_total = static_cast<double>(truth.size() + 1 - std::min(truth.size() + 1, n));
  return f1(static_cast<double>(clipped_overlap(hyp, ref)), hyp_total, ref_total);
}

double rouge_l(std::span<const std::size_t> recovered, std::span<const std::size_t> truth) {
  require_nonempty(recovered, truth);
  const std::size_t m = recovered.size(), n = truth.size();
  std::vector<std::size_t> prev(n + 1, 0), cur(n + 1, 0);
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j) {
      cur[j] = recovered[i - 1] == truth[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return f1(static_cast<double>(prev[n]), static_cast<double>(m), static_cast<double>(n));
}

double bleu(std::span<const std::size_t> recovered, std::span<const std::size_t> truth, std::size_t max_order,
            double epsilon) {
  require_nonempty(recovered, truth);
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_order; ++n) {
    const NGramCounts hyp = ngrams(recovered, n);
    const double total = recovered.size() >= n ? static_cast<double>(recovered.size() - n + 1) : 0.0;
    const double matched = static_cast<double>(clipped_overlap(hyp, ngrams(truth, n)));
    log_sum += std::log((matched + epsilon) / (total + epsilon));
  }
  const double hyp_len = static_cast<double>(recovered.size());
  const double ref_len = static_cast<double>(truth.size());
  const double brevity = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return std::clamp(brevity * std::exp(log_sum / static_cast<double>(max_order)), 0.0, 1.0);
}

MetricReport text_metrics(std::span<const std::size_t> recovered, std::span<const std::size_t> truth) {
  MetricReport report;
  report.modality = MetricModality::text;
  report.entries["token_ac"] = token_accuracy(recovered, truth);
  report.entries["rouge1"] = rouge_n(recovered, truth, 1);
  report.entries["rouge2"] = rouge_n(recovered, truth, 2);
  report.entries["rougeL"] = rouge_l(recovered, truth);
  report.entries["bleu"] = bleu(recovered, truth);
  return report;
}

MetricReport average_reports(std::span<const MetricReport> reports) {
  if (reports.empty()) throw std::invalid_argument("no reports to average");
  MetricReport out;
  out.modality = reports[0].modality;
  for (const auto& [name, value] : reports[0].entries) {
    double total = 0.0;
    for (const MetricReport& r : reports) total += r.at(name);
    out.entries[name] = total / static_cast<double>(reports.size());
  }
  for (const std::string& name : reports[0].saturated) {
    if (std::all_of(reports.begin(), reports.end(), [&](const MetricReport& r) { return r.saturated.count(name) > 0; })) {
      out.saturated.insert(name);
    }
  }
  return out;
}

}  // namespace mjplab
