#pragma once

#include <string>
#include <vector>

#include "geometry.hpp"
#include "json.hpp"

namespace c3ca {

// Caption scoring operates on its own tokenization, independent of the
// model vocabulary: lowercase, punctuation stripped in place, split on
// whitespace.
std::vector<std::string> eval_tokenize(const std::string& text);

// Porter stemming algorithm (with the customary bli->ble / logi->log
// amendments). Input is expected lowercase; words of length <= 2 pass
// through unchanged.
std::string porter_stem(const std::string& word);

using TokenList = std::vector<std::string>;

// Geometric mean of clipped n-gram precisions (n = 1..4) times the brevity
// penalty against the closest reference length (ties to the shorter).
// Returns 0 if any precision is 0, including candidates shorter than four
// tokens.
double bleu4(const TokenList& candidate,
             const std::vector<TokenList>& references);

// Longest-common-subsequence F-measure (beta = 1.2), max over references.
double rouge_l(const TokenList& candidate,
               const std::vector<TokenList>& references);

// Unigram alignment in two greedy passes (exact surface forms, then Porter
// stems), recall-weighted harmonic mean 10PR/(R+9P) times the fragmentation
// penalty 1 - 0.5*(chunks/matches)^3; max over references.
double meteor_lite(const TokenList& candidate,
                   const std::vector<TokenList>& references);

struct CaptionItem {
  TokenList candidate;
  std::vector<TokenList> references;
};

// Consensus scores: per item, mean over n = 1..4 of 10x the average cosine
// similarity between TF-IDF n-gram vectors of the candidate and each
// reference. Document frequencies come from the reference sets of the whole
// corpus; idf = log(corpus size) - log(max(1, df)).
std::vector<double> cider(const std::vector<CaptionItem>& corpus);

// One record per annotated object: a ground-truth box with its reference
// captions plus the prediction assigned to it. Records may carry no
// predicted box (JSON null): they overlap nothing and sit outside NMS.
struct EvalRecord {
  bool has_predicted_box = true;
  Box3D predicted_box;
  std::string predicted_caption;
  Box3D gt_box;
  std::vector<std::string> references;
  double score = 0.0;
  std::string scene_id;    // optional annotation; empty when absent
  int64_t object_id = -1;  // optional annotation; -1 when absent
};

EvalRecord eval_record_from_json(const nlohmann::json& j);
nlohmann::json eval_record_to_json(const EvalRecord& record);
// One JSON object per non-empty line.
std::vector<EvalRecord> load_eval_records(const std::string& path);
void save_eval_records(const std::string& path,
                       const std::vector<EvalRecord>& records);

// Greedy suppression on predicted boxes: repeatedly keep the highest-score
// record (ties by input order) and drop the rest with IoU > threshold
// against it. Output preserves input order.
std::vector<EvalRecord> nms(const std::vector<EvalRecord>& records,
                            double iou_threshold);
// Keep flags for the same greedy suppression, aligned with the input.
std::vector<char> nms_keep_mask(const std::vector<EvalRecord>& records,
                                double iou_threshold);

// Per-record caption scores for one metric id: "cider", "bleu4", "rougel"
// or "meteor". CIDEr IDF statistics are computed across all records given.
std::vector<double> caption_scores(const std::vector<EvalRecord>& records,
                                   const std::string& metric);

// (1/N) * sum_i score_i * [IoU(predicted_i, gt_i) >= k].
double m_at_k_iou(const std::vector<EvalRecord>& records,
                  const std::vector<double>& scores, double k);
double m_at_k_iou(const std::vector<EvalRecord>& records,
                  const std::string& metric, double k);

struct MetricReport {
  std::vector<std::string> metrics;
  std::vector<double> thresholds;
  // values[i][j] = metrics[i] @ thresholds[j]
  std::vector<std::vector<double>> values;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

// Full protocol: suppress duplicate predictions, then score the surviving
// records against every metric/threshold pair. Suppressed records stay in
// the denominator with a zero indicator, so N is always the number of
// annotated objects.
MetricReport evaluate_records(const std::vector<EvalRecord>& records,
                              const std::vector<std::string>& metrics,
                              const std::vector<double>& thresholds,
                              double nms_threshold);

// Same protocol with precomputed keep flags, for callers that run the
// suppression in groups (e.g. per scene) before aggregating.
MetricReport evaluate_records_masked(const std::vector<EvalRecord>& records,
                                     const std::vector<char>& kept,
                                     const std::vector<std::string>& metrics,
                                     const std::vector<double>& thresholds);

}  // namespace c3ca
