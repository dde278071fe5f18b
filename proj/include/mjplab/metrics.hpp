#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mjplab/tensor.hpp"

namespace mjplab {

enum class MetricModality { image, text };

/// Named scalar scores for one reconstruction. Image reports carry
/// mse, psnr, ssim and fft2d_cos; text reports carry token_ac, rouge1,
/// rouge2, rougeL and bleu.
struct MetricReport {
  MetricModality modality = MetricModality::image;
  std::map<std::string, double> entries;
  std::set<std::string> saturated;  // metrics clipped at their ceiling

  double at(const std::string& name) const;
  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
};

constexpr double kPsnrCeiling = 100.0;

/// Images are [H, W, C] in [0, 1] (values outside are clamped). SSIM uses an
/// 8x8 uniform window (shrunk to fit small images), C1 = 0.01^2,
/// C2 = 0.03^2. fft2d_cos is 1 - cosine similarity of the 2-D magnitude
/// spectra, so 0 means identical spectra.
MetricReport image_metrics(const Tensor& recovered, const Tensor& truth);

double mse(const Tensor& a, const Tensor& b);
double psnr_from_mse(double mse_value);
double ssim(const Tensor& a, const Tensor& b, std::size_t window = 8);
double fft2d_dissimilarity(const Tensor& a, const Tensor& b);
/// |DFT| per channel of a [H, W, C] image, same layout.
Tensor magnitude_spectrum(const Tensor& image);

using TokenSeq = std::vector<std::size_t>;

/// token_ac is the multiset overlap divided by the truth length; rouge-n is
/// the clipped n-gram F1; rougeL the LCS F1; bleu the geometric mean of
/// 1..4-gram clipped precisions (epsilon-smoothed) times the brevity penalty.
MetricReport text_metrics(std::span<const std::size_t> recovered, std::span<const std::size_t> truth);

double token_accuracy(std::span<const std::size_t> recovered, std::span<const std::size_t> truth);
double rouge_n(std::span<const std::size_t> recovered, std::span<const std::size_t> truth, std::size_t n);
double rouge_l(std::span<const std::size_t> recovered, std::span<const std::size_t> truth);
double bleu(std::span<const std::size_t> recovered, std::span<const std::size_t> truth, std::size_t max_order = 4,
            double epsilon = 1e-9);

/// Mean of each entry across reports of one modality.
MetricReport average_reports(std::span<const MetricReport> reports);

}  // namespace mjplab
