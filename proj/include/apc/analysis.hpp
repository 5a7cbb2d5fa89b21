#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "apc/psychometric.hpp"

namespace apc {

struct LevelCount {
  double level = 0.0;
  std::size_t n_shown = 0;
  std::size_t n_prefer_reference = 0;
};

// Response proportions of one rater for one standard variant.
struct ProportionData {
  std::vector<LevelCount> levels;

  void add(double level, Choice choice);
  void validate() const;
  std::size_t n_trials() const;
};

struct NlsOptions {
  double scale_min = 1.0;
  double scale_max = 50.0;
  std::size_t starts = 5;
  std::size_t max_iterations = 500;
  double initial_slope = 2.5;
};

struct NlsDiagnostics {
  bool converged = false;
  double residual_norm = 0.0;  // sqrt of the weighted sum of squares
  // midpoint, slope, lower, upper; NaN where not estimable
  std::array<double, 4> std_errors{};
  std::size_t iterations = 0;
  std::size_t converged_starts = 0;
  // Weighted sum of squares after each accepted step of the returned start.
  std::vector<double> objective_trace;
};

struct NlsFit {
  FourParamLogistic params;
  NlsDiagnostics diagnostics;
};

// Weighted least squares fit of a four-parameter logistic to response
// proportions, by damped Gauss-Newton from several midpoint seeds. The
// lowest-residual converged start wins; if no start converges the best one
// is returned with converged == false (a fit failure). Throws
// InsufficientData below four distinct shown levels.
NlsFit fit_logistic_nls(const ProportionData& data, const NlsOptions& options = {});

// Midpoint of a converged fit; NoEstimate otherwise.
double pse(const NlsFit& fit);

struct Verdict {
  bool include = true;
  std::string reason;
};

struct ApcScreenOptions {
  double min_range = 0.25;
  double scale_min = 1.0;
  double scale_max = 50.0;
};

Verdict screen_apc_fit(const NlsFit& fit, const ApcScreenOptions& options = {});

enum class RatingScale { Mos, DsMos };

inline constexpr const char* kHiddenReference = "hidden_ref";

struct RatingRecord {
  std::string rater;
  std::string clip;
  std::string variant;  // kHiddenReference for hidden-reference trials
  int rating = 0;       // 1..5
  RatingScale scale = RatingScale::Mos;
};

// Excludes a rater when one rating value makes up more than `max_share` of
// their responses.
Verdict screen_rater(std::span<const RatingRecord> records, double max_share = 0.95);

// 5 + (variant - hidden reference), clamped to [1, 5].
double dsmos_differential(double variant_rating, double hidden_ref_rating);

struct DifferentialScore {
  std::string rater;
  std::string clip;
  std::string variant;
  double score = 0.0;
};

// Pairs every DS-MOS rating with the same rater's hidden-reference rating of
// the same clip. Throws Pairing when the hidden reference is missing.
std::vector<DifferentialScore> dsmos_scores(std::span<const RatingRecord> records);

struct MeanCi {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double half_width = 0.0;
  std::size_t n = 0;
};

// Per-rater means first, then a t interval across raters.
MeanCi mos_aggregate(const std::map<std::string, std::vector<double>>& ratings_by_rater,
                     double confidence = 0.95);

// Mean of the paired differences over their sample standard deviation.
double repeated_measures_d(std::span<const double> x, std::span<const double> y);

struct EffectSizeReport {
  std::string label;
  double d = 0.0;
  double t = 0.0;
  double p = 0.0;
  double p_adjusted = 0.0;
  bool significant = false;
  std::size_t n = 0;
};

struct PairedComparison {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

std::vector<EffectSizeReport> paired_t_bonferroni(std::span<const PairedComparison> comparisons,
                                                  std::size_t family_size, double alpha = 0.05);

// Two-sided p-value of Student's t with `df` degrees of freedom.
double t_two_sided_p(double t, double df);
double t_quantile(double p, double df);

// ---- file-level helpers used by the CLI ----

struct ApcResponse {
  std::string rater;
  std::string variant;
  std::string clip;
  int level = 0;
  Choice choice = Choice::PreferReference;
};

std::vector<ApcResponse> read_apc_responses(const std::filesystem::path& path);

struct RaterFit {
  std::string rater;
  std::string variant;
  std::size_t n_trials = 0;
  std::optional<NlsFit> fit;  // empty when there was too little data
  Verdict verdict;
};

std::vector<RaterFit> fit_responses(std::span<const ApcResponse> responses,
                                    const NlsOptions& nls = {},
                                    const ApcScreenOptions& screen = {});
void write_fits_csv(std::span<const RaterFit> fits, const std::filesystem::path& path);

std::vector<RatingRecord> read_ratings_csv(const std::filesystem::path& path);

struct RatingSummary {
  RatingScale scale;
  std::string variant;
  MeanCi ci;
};

struct RatingsReport {
  std::map<std::string, Verdict> raters;
  std::vector<RatingSummary> summaries;
};

// Screens raters, converts DS-MOS to differential scores, and aggregates
// per scale and variant across included raters.
RatingsReport analyze_ratings(std::span<const RatingRecord> records);

// Per-rater scores from a `rater_id,score` file.
std::map<std::string, double> read_scores_csv(const std::filesystem::path& path);

// Matches two score files by rater id; raters present in only one are
// dropped.
PairedComparison match_scores(std::string label, const std::map<std::string, double>& a,
                              const std::map<std::string, double>& b);

}  // namespace apc
