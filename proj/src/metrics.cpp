#include "metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "common.hpp"
#include "pointcloud.hpp"

namespace c3ca {

namespace {

using nlohmann::json;

// Porter's algorithm, ported from the classic reference implementation.
// b holds the word; k is the index of its last live character; j marks the
// stem end set by the most recent ends() call.
struct Stemmer {
  std::string b;
  int k = 0;
  int j = 0;

  bool cons(int i) const {
    switch (b[static_cast<size_t>(i)]) {
      case 'a':
      case 'e':
      case 'i':
      case 'o':
      case 'u':
        return false;
      case 'y':
        return i == 0 ? true : !cons(i - 1);
      default:
        return true;
    }
  }

  // Number of consonant-vowel sequences in b[0..j].
  int m() const {
    int n = 0;
    int i = 0;
    while (true) {
      if (i > j) return n;
      if (!cons(i)) break;
      ++i;
    }
    ++i;
    while (true) {
      while (true) {
        if (i > j) return n;
        if (cons(i)) break;
        ++i;
      }
      ++i;
      ++n;
      while (true) {
        if (i > j) return n;
        if (!cons(i)) break;
        ++i;
      }
      ++i;
    }
  }

  bool vowelinstem() const {
    for (int i = 0; i <= j; ++i) {
      if (!cons(i)) return true;
    }
    return false;
  }

  bool doublec(int idx) const {
    if (idx < 1) return false;
    if (b[static_cast<size_t>(idx)] != b[static_cast<size_t>(idx - 1)]) {
      return false;
    }
    return cons(idx);
  }

  bool cvc(int idx) const {
    if (idx < 2 || !cons(idx) || cons(idx - 1) || !cons(idx - 2)) return false;
    char ch = b[static_cast<size_t>(idx)];
    return ch != 'w' && ch != 'x' && ch != 'y';
  }

  bool ends(const char* s) {
    int len = static_cast<int>(std::strlen(s));
    if (len > k + 1) return false;
    if (b.compare(static_cast<size_t>(k - len + 1), static_cast<size_t>(len),
                  s) != 0) {
      return false;
    }
    j = k - len;
    return true;
  }

  void setto(const char* s) {
    b.erase(static_cast<size_t>(j + 1));
    b.append(s);
    k = static_cast<int>(b.size()) - 1;
  }

  void r(const char* s) {
    if (m() > 0) setto(s);
  }

  void step1ab() {
    if (b[static_cast<size_t>(k)] == 's') {
      if (ends("sses")) {
        k -= 2;
      } else if (ends("ies")) {
        setto("i");
      } else if (b[static_cast<size_t>(k - 1)] != 's') {
        --k;
      }
    }
    if (ends("eed")) {
      if (m() > 0) --k;
    } else if ((ends("ed") || ends("ing")) && vowelinstem()) {
      k = j;
      if (ends("at")) {
        setto("ate");
      } else if (ends("bl")) {
        setto("ble");
      } else if (ends("iz")) {
        setto("ize");
      } else if (doublec(k)) {
        --k;
        char ch = b[static_cast<size_t>(k)];
        if (ch == 'l' || ch == 's' || ch == 'z') ++k;
      } else if (m() == 1 && cvc(k)) {
        setto("e");
      }
    }
  }

  void step1c() {
    if (ends("y") && vowelinstem()) b[static_cast<size_t>(k)] = 'i';
  }

  void step2() {
    if (k < 1) return;  // suffix rules below peek at b[k-1]
    switch (b[static_cast<size_t>(k - 1)]) {
      case 'a':
        if (ends("ational")) { r("ate"); break; }
        if (ends("tional")) { r("tion"); break; }
        break;
      case 'c':
        if (ends("enci")) { r("ence"); break; }
        if (ends("anci")) { r("ance"); break; }
        break;
      case 'e':
        if (ends("izer")) { r("ize"); break; }
        break;
      case 'l':
        if (ends("bli")) { r("ble"); break; }
        if (ends("alli")) { r("al"); break; }
        if (ends("entli")) { r("ent"); break; }
        if (ends("eli")) { r("e"); break; }
        if (ends("ousli")) { r("ous"); break; }
        break;
      case 'o':
        if (ends("ization")) { r("ize"); break; }
        if (ends("ation")) { r("ate"); break; }
        if (ends("ator")) { r("ate"); break; }
        break;
      case 's':
        if (ends("alism")) { r("al"); break; }
        if (ends("iveness")) { r("ive"); break; }
        if (ends("fulness")) { r("ful"); break; }
        if (ends("ousness")) { r("ous"); break; }
        break;
      case 't':
        if (ends("aliti")) { r("al"); break; }
        if (ends("iviti")) { r("ive"); break; }
        if (ends("biliti")) { r("ble"); break; }
        break;
      case 'g':
        if (ends("logi")) { r("log"); break; }
        break;
      default:
        break;
    }
  }

  void step3() {
    switch (b[static_cast<size_t>(k)]) {
      case 'e':
        if (ends("icate")) { r("ic"); break; }
        if (ends("ative")) { r(""); break; }
        if (ends("alize")) { r("al"); break; }
        break;
      case 'i':
        if (ends("iciti")) { r("ic"); break; }
        break;
      case 'l':
        if (ends("ical")) { r("ic"); break; }
        if (ends("ful")) { r(""); break; }
        break;
      case 's':
        if (ends("ness")) { r(""); break; }
        break;
      default:
        break;
    }
  }

  void step4() {
    if (k < 1) return;
    switch (b[static_cast<size_t>(k - 1)]) {
      case 'a':
        if (ends("al")) break;
        return;
      case 'c':
        if (ends("ance")) break;
        if (ends("ence")) break;
        return;
      case 'e':
        if (ends("er")) break;
        return;
      case 'i':
        if (ends("ic")) break;
        return;
      case 'l':
        if (ends("able")) break;
        if (ends("ible")) break;
        return;
      case 'n':
        if (ends("ant")) break;
        if (ends("ement")) break;
        if (ends("ment")) break;
        if (ends("ent")) break;
        return;
      case 'o':
        if (ends("ion") && j >= 0 &&
            (b[static_cast<size_t>(j)] == 's' ||
             b[static_cast<size_t>(j)] == 't')) {
          break;
        }
        if (ends("ou")) break;
        return;
      case 's':
        if (ends("ism")) break;
        return;
      case 't':
        if (ends("ate")) break;
        if (ends("iti")) break;
        return;
      case 'u':
        if (ends("ous")) break;
        return;
      case 'v':
        if (ends("ive")) break;
        return;
      case 'z':
        if (ends("ize")) break;
        return;
      default:
        return;
    }
    if (m() > 1) k = j;
  }

  void step5() {
    j = k;
    if (b[static_cast<size_t>(k)] == 'e') {
      int a = m();
      if (a > 1 || (a == 1 && !cvc(k - 1))) --k;
    }
    if (b[static_cast<size_t>(k)] == 'l' && doublec(k) && m() > 1) --k;
  }
};

std::map<std::string, int> ngram_counts(const TokenList& tokens, int n) {
  std::map<std::string, int> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (size_t i = 0; i + static_cast<size_t>(n) <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (int d = 1; d < n; ++d) {
      key.push_back('\x1f');
      key += tokens[i + static_cast<size_t>(d)];
    }
    ++counts[key];
  }
  return counts;
}

size_t lcs_length(const TokenList& a, const TokenList& b) {
  std::vector<size_t> prev(b.size() + 1, 0);
  std::vector<size_t> cur(b.size() + 1, 0);
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t jj = 1; jj <= b.size(); ++jj) {
      cur[jj] = a[i - 1] == b[jj - 1] ? prev[jj - 1] + 1
                                      : std::max(prev[jj], cur[jj - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string format_threshold(double k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", k);
  return buf;
}

void check_metric_name(const std::string& metric) {
  if (metric != "cider" && metric != "bleu4" && metric != "rougel" &&
      metric != "meteor") {
    fail_invalid("unknown metric: " + metric);
  }
}

}  // namespace

std::vector<std::string> eval_tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char raw : text) {
    unsigned char c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else if (std::ispunct(c)) {
      // stripped in place; "don't" -> "dont"
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::string porter_stem(const std::string& word) {
  if (word.size() <= 2) return word;
  Stemmer st;
  st.b = word;
  st.k = static_cast<int>(word.size()) - 1;
  st.step1ab();
  st.step1c();
  st.step2();
  st.step3();
  st.step4();
  st.step5();
  return st.b.substr(0, static_cast<size_t>(st.k + 1));
}

double bleu4(const TokenList& candidate,
             const std::vector<TokenList>& references) {
  if (references.empty()) fail_invalid("bleu4: need at least one reference");
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    auto cand_counts = ngram_counts(candidate, n);
    int64_t total = 0;
    for (const auto& [gram, count] : cand_counts) total += count;
    if (total == 0) return 0.0;
    std::map<std::string, int> max_ref;
    for (const auto& ref : references) {
      for (const auto& [gram, count] : ngram_counts(ref, n)) {
        auto& slot = max_ref[gram];
        slot = std::max(slot, count);
      }
    }
    int64_t clipped = 0;
    for (const auto& [gram, count] : cand_counts) {
      auto it = max_ref.find(gram);
      if (it != max_ref.end()) clipped += std::min(count, it->second);
    }
    if (clipped == 0) return 0.0;
    log_sum += std::log(static_cast<double>(clipped) /
                        static_cast<double>(total));
  }
  int64_t c = static_cast<int64_t>(candidate.size());
  auto gap = [c](int64_t len) { return len > c ? len - c : c - len; };
  int64_t r = static_cast<int64_t>(references[0].size());
  for (const auto& ref : references) {
    int64_t len = static_cast<int64_t>(ref.size());
    if (gap(len) < gap(r) || (gap(len) == gap(r) && len < r)) r = len;
  }
  double bp = c > r ? 1.0
                    : std::exp(1.0 - static_cast<double>(r) /
                                         static_cast<double>(c));
  return bp * std::exp(log_sum / 4.0);
}

double rouge_l(const TokenList& candidate,
               const std::vector<TokenList>& references) {
  if (references.empty()) fail_invalid("rouge_l: need at least one reference");
  if (candidate.empty()) return 0.0;
  const double beta2 = 1.2 * 1.2;
  double best = 0.0;
  for (const auto& ref : references) {
    if (ref.empty()) continue;
    double lcs = static_cast<double>(lcs_length(candidate, ref));
    double prec = lcs / static_cast<double>(candidate.size());
    double rec = lcs / static_cast<double>(ref.size());
    double denom = rec + beta2 * prec;
    if (denom > 0.0) {
      best = std::max(best, (1.0 + beta2) * rec * prec / denom);
    }
  }
  return best;
}

double meteor_lite(const TokenList& candidate,
                   const std::vector<TokenList>& references) {
  if (references.empty()) {
    fail_invalid("meteor_lite: need at least one reference");
  }
  if (candidate.empty()) return 0.0;
  std::vector<std::string> cand_stems;
  cand_stems.reserve(candidate.size());
  for (const auto& w : candidate) cand_stems.push_back(porter_stem(w));
  double best = 0.0;
  for (const auto& ref : references) {
    if (ref.empty()) continue;
    std::vector<int> match(candidate.size(), -1);
    std::vector<char> used(ref.size(), 0);
    for (size_t i = 0; i < candidate.size(); ++i) {
      for (size_t jr = 0; jr < ref.size(); ++jr) {
        if (!used[jr] && candidate[i] == ref[jr]) {
          match[i] = static_cast<int>(jr);
          used[jr] = 1;
          break;
        }
      }
    }
    std::vector<std::string> ref_stems;
    ref_stems.reserve(ref.size());
    for (const auto& w : ref) ref_stems.push_back(porter_stem(w));
    for (size_t i = 0; i < candidate.size(); ++i) {
      if (match[i] >= 0) continue;
      for (size_t jr = 0; jr < ref.size(); ++jr) {
        if (!used[jr] && cand_stems[i] == ref_stems[jr]) {
          match[i] = static_cast<int>(jr);
          used[jr] = 1;
          break;
        }
      }
    }
    int matched = 0;
    for (int v : match) {
      if (v >= 0) ++matched;
    }
    if (matched == 0) continue;
    double prec = static_cast<double>(matched) /
                  static_cast<double>(candidate.size());
    double rec =
        static_cast<double>(matched) / static_cast<double>(ref.size());
    double fmean = 10.0 * prec * rec / (rec + 9.0 * prec);
    int chunks = 0;
    int prev_c = -2;
    int prev_r = -2;
    for (size_t i = 0; i < candidate.size(); ++i) {
      if (match[i] < 0) continue;
      if (static_cast<int>(i) != prev_c + 1 || match[i] != prev_r + 1) {
        ++chunks;
      }
      prev_c = static_cast<int>(i);
      prev_r = match[i];
    }
    double frag = static_cast<double>(chunks) / static_cast<double>(matched);
    best = std::max(best, fmean * (1.0 - 0.5 * frag * frag * frag));
  }
  return best;
}

std::vector<double> cider(const std::vector<CaptionItem>& corpus) {
  size_t n_items = corpus.size();
  if (n_items == 0) fail_invalid("cider: empty corpus");
  for (const auto& item : corpus) {
    if (item.references.empty()) {
      fail_invalid("cider: item without references");
    }
  }
  std::vector<double> scores(n_items, 0.0);
  double log_n = std::log(static_cast<double>(n_items));
  for (int n = 1; n <= 4; ++n) {
    std::vector<std::map<std::string, int>> cand_counts(n_items);
    std::vector<std::vector<std::map<std::string, int>>> ref_counts(n_items);
    std::map<std::string, int64_t> df;
    for (size_t i = 0; i < n_items; ++i) {
      cand_counts[i] = ngram_counts(corpus[i].candidate, n);
      std::set<std::string> present;
      for (const auto& ref : corpus[i].references) {
        ref_counts[i].push_back(ngram_counts(ref, n));
        for (const auto& [gram, count] : ref_counts[i].back()) {
          present.insert(gram);
        }
      }
      for (const auto& gram : present) ++df[gram];
    }
    auto idf = [&](const std::string& gram) {
      auto it = df.find(gram);
      int64_t d = it == df.end() ? 0 : it->second;
      return log_n - std::log(static_cast<double>(std::max<int64_t>(1, d)));
    };
    auto norm = [&](const std::map<std::string, int>& counts) {
      double s = 0.0;
      for (const auto& [gram, count] : counts) {
        double v = count * idf(gram);
        s += v * v;
      }
      return std::sqrt(s);
    };
    for (size_t i = 0; i < n_items; ++i) {
      double cand_norm = norm(cand_counts[i]);
      double avg = 0.0;
      for (const auto& rc : ref_counts[i]) {
        double ref_norm = norm(rc);
        if (cand_norm == 0.0 || ref_norm == 0.0) continue;
        double dot = 0.0;
        for (const auto& [gram, count] : cand_counts[i]) {
          auto it = rc.find(gram);
          if (it != rc.end()) {
            double w = idf(gram);
            dot += (count * w) * (it->second * w);
          }
        }
        avg += dot / (cand_norm * ref_norm);
      }
      avg /= static_cast<double>(corpus[i].references.size());
      scores[i] += 10.0 * avg / 4.0;
    }
  }
  return scores;
}

EvalRecord eval_record_from_json(const json& j) {
  try {
    EvalRecord record;
    const json& pb = j.at("predicted_box");
    if (pb.is_null()) {
      record.has_predicted_box = false;
    } else {
      record.predicted_box = box_from_json(pb);
    }
    record.predicted_caption = j.at("predicted_caption").get<std::string>();
    record.gt_box = box_from_json(j.at("gt_box"));
    for (const auto& ref : j.at("references")) {
      record.references.push_back(ref.get<std::string>());
    }
    if (record.references.empty()) {
      fail_invalid("eval record needs at least one reference");
    }
    record.score = j.value("score", 0.0);
    if (!std::isfinite(record.score)) {
      fail_invalid("eval record score must be finite");
    }
    if (j.contains("scene_id")) {
      record.scene_id = j.at("scene_id").get<std::string>();
    }
    if (j.contains("object_id")) {
      record.object_id = j.at("object_id").get<int64_t>();
      if (record.object_id < 0) {
        fail_invalid("eval record object_id must be non-negative");
      }
    }
    return record;
  } catch (const json::exception& e) {
    fail_invalid(std::string("bad eval record: ") + e.what());
  }
}

json eval_record_to_json(const EvalRecord& record) {
  json j{{"predicted_box", record.has_predicted_box
                               ? box_to_json(record.predicted_box)
                               : json(nullptr)},
         {"predicted_caption", record.predicted_caption},
         {"gt_box", box_to_json(record.gt_box)},
         {"references", record.references},
         {"score", record.score}};
  if (!record.scene_id.empty()) j["scene_id"] = record.scene_id;
  if (record.object_id >= 0) j["object_id"] = record.object_id;
  return j;
}

std::vector<EvalRecord> load_eval_records(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::vector<EvalRecord> records;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail_invalid(path + ":" + std::to_string(lineno) +
                   ": bad record: " + e.what());
    }
    records.push_back(eval_record_from_json(j));
  }
  return records;
}

void save_eval_records(const std::string& path,
                       const std::vector<EvalRecord>& records) {
  std::string out;
  for (const auto& record : records) {
    out += eval_record_to_json(record).dump();
    out += '\n';
  }
  write_text_file_atomic(path, out);
}

std::vector<char> nms_keep_mask(const std::vector<EvalRecord>& records,
                                double iou_threshold) {
  if (!std::isfinite(iou_threshold) || iou_threshold < 0.0) {
    fail_invalid("nms: threshold must be finite and non-negative");
  }
  std::vector<size_t> order(records.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return records[a].score > records[b].score;
  });
  std::vector<char> alive(records.size(), 1);
  std::vector<char> kept(records.size(), 0);
  for (size_t oi = 0; oi < order.size(); ++oi) {
    size_t top = order[oi];
    if (!alive[top]) continue;
    kept[top] = 1;
    // Boxless records compete with nothing; they are kept unconditionally.
    if (!records[top].has_predicted_box) continue;
    for (size_t oj = oi + 1; oj < order.size(); ++oj) {
      size_t other = order[oj];
      if (alive[other] && records[other].has_predicted_box &&
          iou3d(records[top].predicted_box, records[other].predicted_box) >
              iou_threshold) {
        alive[other] = 0;
      }
    }
  }
  return kept;
}

std::vector<EvalRecord> nms(const std::vector<EvalRecord>& records,
                            double iou_threshold) {
  auto kept = nms_keep_mask(records, iou_threshold);
  std::vector<EvalRecord> out;
  for (size_t i = 0; i < records.size(); ++i) {
    if (kept[i]) out.push_back(records[i]);
  }
  return out;
}

std::vector<double> caption_scores(const std::vector<EvalRecord>& records,
                                   const std::string& metric) {
  check_metric_name(metric);
  if (records.empty()) fail_invalid("caption_scores: no records");
  std::vector<CaptionItem> items;
  items.reserve(records.size());
  for (const auto& record : records) {
    if (record.references.empty()) {
      fail_invalid("caption_scores: record without references");
    }
    CaptionItem item;
    item.candidate = eval_tokenize(record.predicted_caption);
    for (const auto& ref : record.references) {
      item.references.push_back(eval_tokenize(ref));
    }
    items.push_back(std::move(item));
  }
  if (metric == "cider") return cider(items);
  std::vector<double> scores;
  scores.reserve(items.size());
  for (const auto& item : items) {
    if (metric == "bleu4") {
      scores.push_back(bleu4(item.candidate, item.references));
    } else if (metric == "rougel") {
      scores.push_back(rouge_l(item.candidate, item.references));
    } else {
      scores.push_back(meteor_lite(item.candidate, item.references));
    }
  }
  return scores;
}

double m_at_k_iou(const std::vector<EvalRecord>& records,
                  const std::vector<double>& scores, double k) {
  if (records.empty()) fail_invalid("m_at_k_iou: no records");
  if (scores.size() != records.size()) {
    fail_invalid("m_at_k_iou: scores/records size mismatch");
  }
  if (!std::isfinite(k) || k < 0.0) {
    fail_invalid("m_at_k_iou: threshold must be finite and non-negative");
  }
  double sum = 0.0;
  for (size_t i = 0; i < records.size(); ++i) {
    double overlap = records[i].has_predicted_box
                         ? iou3d(records[i].predicted_box, records[i].gt_box)
                         : 0.0;
    if (overlap >= k) sum += scores[i];
  }
  return sum / static_cast<double>(records.size());
}

double m_at_k_iou(const std::vector<EvalRecord>& records,
                  const std::string& metric, double k) {
  return m_at_k_iou(records, caption_scores(records, metric), k);
}

json MetricReport::to_json() const {
  json by_metric = json::object();
  for (size_t i = 0; i < metrics.size(); ++i) {
    json row = json::object();
    for (size_t jt = 0; jt < thresholds.size(); ++jt) {
      row[format_threshold(thresholds[jt])] = values[i][jt];
    }
    by_metric[metrics[i]] = row;
  }
  return json{{"thresholds", thresholds}, {"metrics", by_metric}};
}

std::string MetricReport::to_table() const {
  size_t name_width = 6;
  for (const auto& name : metrics) name_width = std::max(name_width, name.size());
  std::string out = "metric";
  out.append(name_width - 6 + 2, ' ');
  for (double k : thresholds) {
    char col[32];
    std::snprintf(col, sizeof(col), "%10s", ("@" + format_threshold(k)).c_str());
    out += col;
  }
  out += '\n';
  for (size_t i = 0; i < metrics.size(); ++i) {
    out += metrics[i];
    out.append(name_width - metrics[i].size() + 2, ' ');
    for (size_t jt = 0; jt < thresholds.size(); ++jt) {
      char cell[32];
      std::snprintf(cell, sizeof(cell), "%10.6f", values[i][jt]);
      out += cell;
    }
    out += '\n';
  }
  return out;
}

MetricReport evaluate_records(const std::vector<EvalRecord>& records,
                              const std::vector<std::string>& metrics,
                              const std::vector<double>& thresholds,
                              double nms_threshold) {
  return evaluate_records_masked(records, nms_keep_mask(records, nms_threshold),
                                 metrics, thresholds);
}

MetricReport evaluate_records_masked(const std::vector<EvalRecord>& records,
                                     const std::vector<char>& kept,
                                     const std::vector<std::string>& metrics,
                                     const std::vector<double>& thresholds) {
  if (records.empty()) fail_invalid("evaluate_records: no records");
  if (kept.size() != records.size()) {
    fail_invalid("evaluate_records: keep mask size mismatch");
  }
  if (metrics.empty()) fail_invalid("evaluate_records: no metrics selected");
  if (thresholds.empty()) {
    fail_invalid("evaluate_records: no IoU thresholds");
  }
  for (const auto& metric : metrics) check_metric_name(metric);
  MetricReport report;
  report.metrics = metrics;
  report.thresholds = thresholds;
  for (const auto& metric : metrics) {
    auto scores = caption_scores(records, metric);
    std::vector<double> row;
    row.reserve(thresholds.size());
    for (double k : thresholds) {
      double sum = 0.0;
      for (size_t i = 0; i < records.size(); ++i) {
        double overlap =
            records[i].has_predicted_box
                ? iou3d(records[i].predicted_box, records[i].gt_box)
                : 0.0;
        if (kept[i] && overlap >= k) sum += scores[i];
      }
      row.push_back(sum / static_cast<double>(records.size()));
    }
    report.values.push_back(std::move(row));
  }
  return report;
}

}  // namespace c3ca
