#include "snr/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "snr/data/dataset.hpp"
#include "snr/train/trainer.hpp"

namespace snr::eval {

namespace {

void check_samples(const std::vector<ScoredSample>& samples) {
  if (samples.empty()) throw MetricsError("metrics need at least one scored sample");
  for (const ScoredSample& s : samples) {
    if (!std::isfinite(s.score) || s.score < 0.0 || s.score > 1.0)
      throw MetricsError(fmt::format("score {} for {}.{} is outside [0, 1]", s.score, s.subject_id, s.view_index));
    if (s.label != 0 && s.label != 1)
      throw MetricsError(fmt::format("label {} for {}.{} is not 0 or 1", s.label, s.subject_id, s.view_index));
  }
}

double ratio(long num, long den) { return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den); }

// Indices ordered by descending score.
std::vector<std::size_t> by_score_desc(const std::vector<ScoredSample>& samples) {
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return samples[a].score > samples[b].score; });
  return order;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

double f1_score(double precision, double recall) {
  const double s = precision + recall;
  return s == 0.0 ? 0.0 : 2.0 * precision * recall / s;
}

PointMetrics confusion_and_point_metrics(const std::vector<ScoredSample>& samples, double threshold) {
  check_samples(samples);
  PointMetrics m;
  m.threshold = threshold;
  Confusion& c = m.confusion;
  for (const ScoredSample& s : samples) {
    const bool predicted = s.score >= threshold;
    if (s.label == 1)
      ++(predicted ? c.tp : c.fn);
    else
      ++(predicted ? c.fp : c.tn);
  }
  m.accuracy = ratio(c.tp + c.tn, c.total());
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.recall = ratio(c.tp, c.tp + c.fn);
  m.f1 = f1_score(m.precision, m.recall);
  if (c.tp + c.fp == 0) m.flags.emplace_back(kPrecisionUndefined);
  if (c.tp + c.fn == 0) m.flags.emplace_back(kRecallUndefined);
  if (m.precision + m.recall == 0.0) m.flags.emplace_back(kF1Undefined);
  return m;
}

RocResult roc_auc(const std::vector<ScoredSample>& samples) {
  check_samples(samples);
  const long pos = std::count_if(samples.begin(), samples.end(), [](const ScoredSample& s) { return s.label == 1; });
  const long neg = static_cast<long>(samples.size()) - pos;
  if (pos == 0 || neg == 0) throw UndefinedAucError("AUC is undefined without both positive and negative samples");

  RocResult r;
  r.points.emplace_back(0.0, 0.0);
  const auto order = by_score_desc(samples);
  long tp = 0, fp = 0;
  // Rank sum of positives in ascending order; a tie group shares its mean rank.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    long group_pos = 0;
    while (j < order.size() && samples[order[j]].score == samples[order[i]].score) {
      group_pos += samples[order[j]].label;
      ++j;
    }
    const long n = static_cast<long>(samples.size());
    // descending positions i..j-1 are ascending ranks n-j+1 .. n-i
    const double mean_rank = (static_cast<double>(n - static_cast<long>(j) + 1) + static_cast<double>(n - static_cast<long>(i))) / 2.0;
    rank_sum += mean_rank * static_cast<double>(group_pos);
    tp += group_pos;
    fp += static_cast<long>(j - i) - group_pos;
    r.points.emplace_back(ratio(fp, neg), ratio(tp, pos));
    i = j;
  }
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  r.auc = (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
  return r;
}

double trapezoid_area(const std::vector<RocPoint>& points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i)
    area += (points[i].first - points[i - 1].first) * (points[i].second + points[i - 1].second) / 2.0;
  return area;
}

MetricsReport compute_report(const std::vector<ScoredSample>& samples, double threshold) {
  const PointMetrics m = confusion_and_point_metrics(samples, threshold);
  MetricsReport r;
  r.threshold = threshold;
  r.confusion = m.confusion;
  r.accuracy = m.accuracy;
  r.precision = m.precision;
  r.recall = m.recall;
  r.f1 = m.f1;
  r.n_samples = static_cast<long>(samples.size());
  r.flags = m.flags;
  try {
    const RocResult roc = roc_auc(samples);
    r.auc = roc.auc;
    r.roc = roc.points;
  } catch (const UndefinedAucError&) {
    r.flags.emplace_back(kAucUndefined);
  }
  return r;
}

std::string report_to_json(const MetricsReport& r) {
  const auto real = [](double v) { return fmt::format("{:.6f}", v); };
  std::string roc;
  for (std::size_t i = 0; i < r.roc.size(); ++i)
    roc += fmt::format("{}[{}, {}]", i == 0 ? "" : ", ", real(r.roc[i].first), real(r.roc[i].second));
  std::string flags;
  for (std::size_t i = 0; i < r.flags.size(); ++i) flags += fmt::format("{}\"{}\"", i == 0 ? "" : ", ", r.flags[i]);
  const Confusion& c = r.confusion;
  return fmt::format(
      "{{\n"
      "  \"threshold\": {},\n"
      "  \"confusion\": {{\"tp\": {}, \"fp\": {}, \"tn\": {}, \"fn\": {}}},\n"
      "  \"accuracy\": {},\n"
      "  \"precision\": {},\n"
      "  \"recall\": {},\n"
      "  \"f1\": {},\n"
      "  \"auc\": {},\n"
      "  \"roc\": [{}],\n"
      "  \"n_samples\": {},\n"
      "  \"flags\": [{}]\n"
      "}}\n",
      real(r.threshold), c.tp, c.fp, c.tn, c.fn, real(r.accuracy), real(r.precision), real(r.recall), real(r.f1),
      r.auc ? real(*r.auc) : "null", roc, r.n_samples, flags);
}

std::string scores_to_csv(const std::vector<ScoredSample>& samples) {
  std::string out = "subject_id,view_index,label,score\n";
  for (const ScoredSample& s : samples)
    out += fmt::format("{},{},{},{:.17g}\n", s.subject_id, s.view_index, s.label, s.score);
  return out;
}

std::vector<ScoredSample> score_records(model::Network<float>& net, const std::vector<data::SampleRecord>& records,
                                        int batch_size) {
  if (records.empty()) throw MetricsError("cannot evaluate an empty split");
  const auto examples = data::load_examples(records, static_cast<std::size_t>(net.config().input_size));
  const train::EvalResult scored = train::evaluate(net, examples, batch_size);
  std::vector<ScoredSample> out;
  out.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    out.push_back({examples[i].id.subject_id, examples[i].id.view_index, static_cast<double>(scored.probabilities[i]),
                   examples[i].label == data::Label::kAppendicitis ? 1 : 0});
  }
  return out;
}

MetricsReport evaluate_split(model::Network<float>& net, const std::vector<data::SampleRecord>& records,
                             const std::filesystem::path& out_path, const EvalSplitOptions& options) {
  const auto samples = score_records(net, records, options.batch_size);
  const MetricsReport report = compute_report(samples, options.threshold);
  std::filesystem::path scores = options.scores_path.value_or(out_path);
  if (!options.scores_path) scores.replace_extension(".scores.csv");
  write_text(out_path, report_to_json(report));
  write_text(scores, scores_to_csv(samples));
  return report;
}

}  // namespace snr::eval
