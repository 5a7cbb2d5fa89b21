#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace apc {

// One encode of a clip set at a resolution and CRF, with averaged
// bitrate and PSNR.
struct RdPoint {
  std::string resolution;
  int crf = 0;
  double avg_bitrate = 0.0;  // kbps
  double psnr = 0.0;         // dB
  std::size_t line = 0;      // source row, 0 when not from a file
};

// Validated RD data grouped per resolution, each curve sorted by bitrate.
class RdTable {
 public:
  struct Curve {
    std::string resolution;
    std::vector<RdPoint> points;  // ascending bitrate
    double min_bitrate() const { return points.front().avg_bitrate; }
    double max_bitrate() const { return points.back().avg_bitrate; }
  };

  // Throws Ingest on fewer than two points per resolution, duplicate CRFs,
  // nonpositive bitrates, or bitrates that do not fall as CRF rises.
  explicit RdTable(std::span<const RdPoint> points);

  const std::vector<Curve>& curves() const { return curves_; }
  double min_bitrate() const;
  double max_bitrate() const;

  // PSNR interpolated linearly in log-bitrate; empty outside the curve.
  std::optional<double> psnr_at(std::size_t curve, double bitrate) const;

  struct Selection {
    std::size_t curve;
    int crf;
    double psnr;
  };
  // Best interpolated PSNR across resolutions at `bitrate`; the CRF is that
  // of the selected resolution's nearest point in log-bitrate. Throws
  // Coverage if no resolution spans the bitrate.
  Selection select(double bitrate) const;

 private:
  std::vector<Curve> curves_;
};

struct ScaleEntry {
  int level = 0;
  std::string resolution;
  int crf = 0;
  double target_bitrate = 0.0;
  double psnr = 0.0;
  std::optional<double> perceptual_value;

  friend bool operator==(const ScaleEntry&, const ScaleEntry&) = default;
};

struct ReferenceScale {
  std::vector<ScaleEntry> entries;  // level 1..N in order

  std::size_t size() const { return entries.size(); }
  // Levels must be 1..N in order with strictly increasing bitrate.
  void validate() const;
};

enum class Winner { A, B };

struct PairJudgment {
  int level_a = 0;
  int level_b = 0;
  Winner winner = Winner::A;
  std::string rater;
};

// Relative perceptual quality per level; values[0] belongs to level 1 and is
// pinned to zero by the fit.
struct PerceptualCurve {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
};

struct PairwiseFitOptions {
  double l2 = 1e-3;
  double tolerance = 1e-6;  // on the gradient max-norm
  std::size_t max_iterations = 10000;
};

struct PairwiseFit {
  PerceptualCurve curve;
  std::size_t iterations = 0;
  double gradient_norm = 0.0;
  bool converged = false;
};

// n-point log spacing over [lo, hi]; the endpoints are exact.
std::vector<double> log_spaced(double lo, double hi, std::size_t n);

ReferenceScale build_initial_scale(std::span<const RdPoint> rd, std::size_t n_levels);
ReferenceScale build_initial_scale(const RdTable& rd, std::size_t n_levels);

// Bradley-Terry values by gradient ascent on the L2-penalized
// log-likelihood of the judgments. Throws Identifiability if the comparison
// graph over levels 1..n_levels is disconnected.
PairwiseFit fit_pairwise(std::span<const PairJudgment> judgments, std::size_t n_levels,
                         const PairwiseFitOptions& options = {});
PerceptualCurve fit_pairwise_values(std::span<const PairJudgment> judgments,
                                    std::size_t n_levels,
                                    const PairwiseFitOptions& options = {});

// Mean squared difference between the standardized curve and a standardized
// straight line, i.e. 2 (1 - r). 0 for a perfectly linear increasing curve.
double linearity_nmse(const PerceptualCurve& curve);

// Pool-adjacent-violators fit, nondecreasing, equal weights.
std::vector<double> isotonic_increasing(std::span<const double> values);

// Fractional level positions (1-based) at which the monotone fit of `curve`
// takes N equally spaced values from its first to its last value.
std::vector<double> linear_positions(const PerceptualCurve& curve);

// Resamples `scale` so its steps are equally spaced in fitted perceptual
// value. Bitrates are interpolated in log space at the new positions. With
// `rd`, the recipe is re-selected on the RD hull; otherwise the nearest
// original level supplies resolution and CRF.
ReferenceScale resample_linear(const ReferenceScale& scale, const PerceptualCurve& curve,
                               const RdTable* rd = nullptr);

// File formats.
std::vector<RdPoint> read_rd_csv(const std::filesystem::path& path);
std::vector<PairJudgment> read_judgments_csv(const std::filesystem::path& path);
ReferenceScale read_scale_csv(const std::filesystem::path& path);
void write_scale_csv(const ReferenceScale& scale, const std::filesystem::path& path);
PerceptualCurve read_curve_csv(const std::filesystem::path& path);
void write_curve_csv(const PerceptualCurve& curve, const std::filesystem::path& path);

}  // namespace apc
