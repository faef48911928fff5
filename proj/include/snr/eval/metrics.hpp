#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "snr/data/manifest.hpp"
#include "snr/model/network.hpp"

namespace snr::eval {

class MetricsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when AUC is requested for a sample set lacking one of the classes.
class UndefinedAucError : public MetricsError {
 public:
  using MetricsError::MetricsError;
};

inline constexpr double kDefaultThreshold = 0.5;

struct ScoredSample {
  int subject_id = 0;
  int view_index = 1;
  double score = 0.0;  // probability of the positive class
  int label = 0;
};

struct Confusion {
  long tp = 0, fp = 0, tn = 0, fn = 0;
  long total() const { return tp + fp + tn + fn; }
};

// Flags raised when a ratio has a zero denominator and was reported as 0.
inline constexpr const char* kPrecisionUndefined = "precision_undefined";
inline constexpr const char* kRecallUndefined = "recall_undefined";
inline constexpr const char* kF1Undefined = "f1_undefined";
inline constexpr const char* kAucUndefined = "auc_undefined";

struct PointMetrics {
  double threshold = kDefaultThreshold;
  Confusion confusion;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<std::string> flags;
};

// Predicts positive when score >= threshold.
PointMetrics confusion_and_point_metrics(const std::vector<ScoredSample>& samples,
                                         double threshold = kDefaultThreshold);

// Harmonic mean, 0 when both inputs are 0.
double f1_score(double precision, double recall);

using RocPoint = std::pair<double, double>;  // (fpr, tpr)

struct RocResult {
  std::vector<RocPoint> points;  // (0,0) ... (1,1), tied scores grouped
  double auc = 0.0;
};

// AUC through the rank formulation (ties count 1/2).
RocResult roc_auc(const std::vector<ScoredSample>& samples);

// Trapezoidal area under a piecewise-linear ROC.
double trapezoid_area(const std::vector<RocPoint>& points);

struct MetricsReport {
  double threshold = kDefaultThreshold;
  Confusion confusion;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> auc;  // nullopt for single-class sets
  std::vector<RocPoint> roc;
  long n_samples = 0;
  std::vector<std::string> flags;
};

MetricsReport compute_report(const std::vector<ScoredSample>& samples, double threshold = kDefaultThreshold);

// Reals are written with six decimals; an undefined AUC is null.
std::string report_to_json(const MetricsReport& report);

// subject_id,view_index,label,score with scores at full double precision.
std::string scores_to_csv(const std::vector<ScoredSample>& samples);

struct EvalSplitOptions {
  double threshold = kDefaultThreshold;
  int batch_size = 32;
  // Defaults to the report path with extension .scores.csv.
  std::optional<std::filesystem::path> scores_path;
};

// Scores every record once in eval mode, per image, and writes the report
// JSON to out_path plus the raw scores next to it.
MetricsReport evaluate_split(model::Network<float>& net, const std::vector<data::SampleRecord>& records,
                             const std::filesystem::path& out_path, const EvalSplitOptions& options = {});

std::vector<ScoredSample> score_records(model::Network<float>& net, const std::vector<data::SampleRecord>& records,
                                        int batch_size);

}  // namespace snr::eval
