#pragma once

// Accuracy, group accuracies, the unfairness score and the equal-opportunity
// family (EODD, EOPP1, EOPP2) over labeled predictions with demographic
// annotations, plus the single-line metrics report fed back to the designer.
//
// Multi-class data is binarized one-vs-rest. A (pair, class) term is defined
// only when both groups have at least one positive and one negative for that
// class; undefined terms are skipped, pairs with no defined class are
// skipped, and a score with nothing left is reported as absent (never 0).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "flnas/errors.hpp"
#include "flnas/json_util.hpp"
#include "flnas/static_analysis.hpp"

namespace flnas {

struct DemographicAttribute {
  std::string name;
  std::vector<std::string> groups;
  bool operator==(const DemographicAttribute&) const = default;
};

struct DemographicSchema {
  std::vector<DemographicAttribute> attributes;
  bool operator==(const DemographicSchema&) const = default;
};

// gender {male, female}; age {young, middle, old}.
inline DemographicSchema default_schema() {
  return DemographicSchema{{{"gender", {"male", "female"}}, {"age", {"young", "middle", "old"}}}};
}

// young: age < 30; middle: 30 <= age <= 65; old: age > 65.
inline std::string age_group(double age_years) {
  if (age_years < 30.0) return "young";
  if (age_years <= 65.0) return "middle";
  return "old";
}

struct EvalRecord {
  std::string sample_id;
  std::int64_t true_label = 0;
  std::int64_t pred_label = 0;
  std::map<std::string, std::string> memberships;  // attribute -> group
  bool operator==(const EvalRecord&) const = default;
};

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;
  std::int64_t fn = 0;
  std::int64_t positives() const noexcept { return tp + fn; }
  std::int64_t negatives() const noexcept { return fp + tn; }
  std::int64_t total() const noexcept { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

struct GroupStat {
  std::string attribute;
  std::string group;
  double accuracy = 0.0;    // 0 when count == 0
  std::int64_t count = 0;   // records in the group
  std::int64_t correct = 0;
  bool operator==(const GroupStat&) const = default;
};

struct PairRates {
  double tpr_diff = 0.0;
  double fpr_diff = 0.0;
  double tnr_diff = 0.0;
};

// Timings reported by an external trainer; kept apart from the static cost
// model so cost fields stay backend-independent.
struct MeasuredHardware {
  double latency_s_per_item = 0.0;
  std::int64_t peak_memory_bytes = 0;
  bool operator==(const MeasuredHardware&) const = default;
};

struct MetricsRecord {
  std::optional<double> train_loss;
  std::optional<double> valid_loss;
  double train_acc = 0.0;
  double valid_acc = 0.0;
  double test_acc = 0.0;
  double unfairness = 0.0;
  std::optional<double> eodd;
  std::optional<double> eopp1;
  std::optional<double> eopp2;
  std::vector<GroupStat> group_detail;
  CostReport cost;
  std::optional<MeasuredHardware> measured;

  bool operator==(const MetricsRecord&) const = default;
};

// ---------------------------------------------------------------------------
// Schema

inline DemographicSchema schema_from_json(const Json& doc) {
  detail::require_object(doc, "schema");
  const Json& attrs = detail::require(doc, "attributes", "");
  if (!attrs.is_array()) throw SchemaError("field 'attributes' must be an array");
  DemographicSchema schema;
  bool has_pair = false;
  std::set<std::string> names;
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    const std::string ctx = "attributes[" + std::to_string(i) + "]";
    detail::require_object(attrs[i], ctx);
    DemographicAttribute a;
    a.name = detail::get_string(attrs[i], "name", ctx);
    if (!names.insert(a.name).second) throw SchemaError("duplicate attribute '" + a.name + "'");
    const Json& groups = detail::require(attrs[i], "groups", ctx);
    if (!groups.is_array()) throw SchemaError("field '" + ctx + ".groups' must be an array");
    std::set<std::string> seen;
    for (const auto& g : groups) {
      if (!g.is_string()) throw SchemaError("group identifiers must be strings");
      if (!seen.insert(g.get<std::string>()).second)
        throw SchemaError("duplicate group '" + g.get<std::string>() + "' in attribute '" + a.name + "'");
      a.groups.push_back(g.get<std::string>());
    }
    has_pair = has_pair || a.groups.size() >= 2;
    schema.attributes.push_back(std::move(a));
  }
  if (!has_pair) throw SchemaError("schema needs at least one attribute with two or more groups");
  return schema;
}

inline DemographicSchema parse_schema(std::string_view text) { return schema_from_json(detail::parse_json_text(text)); }

inline OrderedJson schema_to_json(const DemographicSchema& s) {
  OrderedJson j;
  j["attributes"] = OrderedJson::array();
  for (const auto& a : s.attributes) j["attributes"].push_back({{"name", a.name}, {"groups", a.groups}});
  return j;
}

namespace detail {

inline void check_records(const std::vector<EvalRecord>& records, const DemographicSchema& schema) {
  for (const auto& r : records) {
    if (r.true_label < 0 || r.pred_label < 0)
      throw SchemaMismatch("record '" + r.sample_id + "' has a negative class label");
    for (const auto& attr : schema.attributes) {
      auto it = r.memberships.find(attr.name);
      if (it == r.memberships.end())
        throw SchemaMismatch("record '" + r.sample_id + "' lacks attribute '" + attr.name + "'");
      if (std::find(attr.groups.begin(), attr.groups.end(), it->second) == attr.groups.end())
        throw SchemaMismatch("record '" + r.sample_id + "' has unknown group '" + it->second + "' for attribute '" +
                             attr.name + "'");
    }
  }
}

inline ConfusionCounts one_vs_rest(const std::vector<const EvalRecord*>& slice, std::int64_t cls) {
  ConfusionCounts c;
  for (const auto* r : slice) {
    const bool actual = r->true_label == cls;
    const bool predicted = r->pred_label == cls;
    if (actual && predicted) ++c.tp;
    else if (actual) ++c.fn;
    else if (predicted) ++c.fp;
    else ++c.tn;
  }
  return c;
}

inline std::vector<const EvalRecord*> members(const std::vector<EvalRecord>& records, const std::string& attribute,
                                              const std::string& group) {
  std::vector<const EvalRecord*> out;
  for (const auto& r : records) {
    auto it = r.memberships.find(attribute);
    if (it != r.memberships.end() && it->second == group) out.push_back(&r);
  }
  return out;
}

inline std::set<std::int64_t> label_set(const std::vector<EvalRecord>& records) {
  std::set<std::int64_t> labels;
  for (const auto& r : records) {
    labels.insert(r.true_label);
    labels.insert(r.pred_label);
  }
  return labels;
}

inline double rate(std::int64_t num, std::int64_t den) { return static_cast<double>(num) / static_cast<double>(den); }

enum class OddsTerm { eodd, eopp1, eopp2 };

// Pair-averaged, class-macro-averaged gap. Absent when every term is undefined.
inline std::optional<double> equal_opportunity_score(const std::vector<EvalRecord>& records,
                                                     const DemographicSchema& schema, OddsTerm term);

}  // namespace detail

struct GroupPair {
  std::string attribute;
  std::string first;
  std::string second;
  bool operator==(const GroupPair&) const = default;
};

// All unordered pairs of groups within each attribute, in schema order.
inline std::vector<GroupPair> group_pairs(const DemographicSchema& schema) {
  std::vector<GroupPair> pairs;
  for (const auto& attr : schema.attributes)
    for (std::size_t a = 0; a < attr.groups.size(); ++a)
      for (std::size_t b = a + 1; b < attr.groups.size(); ++b)
        pairs.push_back(GroupPair{attr.name, attr.groups[a], attr.groups[b]});
  return pairs;
}

namespace detail {

inline std::optional<double> equal_opportunity_score(const std::vector<EvalRecord>& records,
                                                     const DemographicSchema& schema, OddsTerm term) {
  if (records.empty()) throw EmptyInput("no records");
  check_records(records, schema);
  const auto labels = label_set(records);

  double pair_sum = 0.0;
  std::size_t pair_count = 0;
  for (const auto& pair : group_pairs(schema)) {
    const auto first = members(records, pair.attribute, pair.first);
    const auto second = members(records, pair.attribute, pair.second);
    double class_sum = 0.0;
    std::size_t class_count = 0;
    for (auto cls : labels) {
      const auto c1 = one_vs_rest(first, cls);
      const auto c2 = one_vs_rest(second, cls);
      if (c1.positives() == 0 || c1.negatives() == 0 || c2.positives() == 0 || c2.negatives() == 0) continue;
      const double dtpr = std::fabs(rate(c1.tp, c1.positives()) - rate(c2.tp, c2.positives()));
      const double dfpr = std::fabs(rate(c1.fp, c1.negatives()) - rate(c2.fp, c2.negatives()));
      const double dtnr = std::fabs(rate(c1.tn, c1.negatives()) - rate(c2.tn, c2.negatives()));
      switch (term) {
        case OddsTerm::eodd: class_sum += std::max(dtpr, dfpr); break;
        case OddsTerm::eopp1: class_sum += dtpr; break;
        case OddsTerm::eopp2: class_sum += dtnr; break;
      }
      ++class_count;
    }
    if (class_count == 0) continue;
    pair_sum += class_sum / static_cast<double>(class_count);
    ++pair_count;
  }
  if (pair_count == 0) return std::nullopt;
  return pair_sum / static_cast<double>(pair_count);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Metrics

inline double overall_accuracy(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw EmptyInput("no records");
  std::int64_t correct = 0;
  for (const auto& r : records) correct += r.pred_label == r.true_label ? 1 : 0;
  return detail::rate(correct, static_cast<std::int64_t>(records.size()));
}

// One entry per schema group, in schema order. Empty groups have count 0.
inline std::vector<GroupStat> group_accuracies(const std::vector<EvalRecord>& records, const DemographicSchema& schema) {
  if (records.empty()) throw EmptyInput("no records");
  detail::check_records(records, schema);
  std::vector<GroupStat> out;
  for (const auto& attr : schema.attributes) {
    for (const auto& g : attr.groups) {
      GroupStat s{attr.name, g, 0.0, 0, 0};
      for (const auto* r : detail::members(records, attr.name, g)) {
        ++s.count;
        s.correct += r->pred_label == r->true_label ? 1 : 0;
      }
      if (s.count > 0) s.accuracy = detail::rate(s.correct, s.count);
      out.push_back(std::move(s));
    }
  }
  return out;
}

// Mean absolute deviation of nonempty-group accuracies from overall accuracy.
inline double unfairness(const std::vector<EvalRecord>& records, const DemographicSchema& schema) {
  const double overall = overall_accuracy(records);
  double sum = 0.0;
  std::size_t groups = 0;
  for (const auto& s : group_accuracies(records, schema)) {
    if (s.count == 0) continue;
    sum += std::fabs(s.accuracy - overall);
    ++groups;
  }
  if (groups == 0) throw EmptyInput("every demographic group is empty");
  return sum / static_cast<double>(groups);
}

// Rate gaps for one class (one-vs-rest) between two groups of one attribute.
inline PairRates pairwise_rates(const std::vector<EvalRecord>& records, const DemographicSchema& schema,
                                std::int64_t class_c, const std::string& attribute, const std::string& g1,
                                const std::string& g2) {
  detail::check_records(records, schema);
  auto attr = std::find_if(schema.attributes.begin(), schema.attributes.end(),
                           [&](const DemographicAttribute& a) { return a.name == attribute; });
  if (attr == schema.attributes.end()) throw SchemaMismatch("unknown attribute '" + attribute + "'");
  for (const auto* g : {&g1, &g2}) {
    if (std::find(attr->groups.begin(), attr->groups.end(), *g) == attr->groups.end())
      throw SchemaMismatch("unknown group '" + *g + "' for attribute '" + attribute + "'");
  }
  const auto c1 = detail::one_vs_rest(detail::members(records, attribute, g1), class_c);
  const auto c2 = detail::one_vs_rest(detail::members(records, attribute, g2), class_c);
  if (c1.positives() == 0 || c2.positives() == 0)
    throw UndefinedRate("true positive rate undefined: a group has no positives for class " + std::to_string(class_c));
  if (c1.negatives() == 0 || c2.negatives() == 0)
    throw UndefinedRate("false positive rate undefined: a group has no negatives for class " +
                        std::to_string(class_c));
  PairRates r;
  r.tpr_diff = std::fabs(detail::rate(c1.tp, c1.positives()) - detail::rate(c2.tp, c2.positives()));
  r.fpr_diff = std::fabs(detail::rate(c1.fp, c1.negatives()) - detail::rate(c2.fp, c2.negatives()));
  r.tnr_diff = std::fabs(detail::rate(c1.tn, c1.negatives()) - detail::rate(c2.tn, c2.negatives()));
  return r;
}

inline std::optional<double> eodd(const std::vector<EvalRecord>& records, const DemographicSchema& schema) {
  return detail::equal_opportunity_score(records, schema, detail::OddsTerm::eodd);
}

inline std::optional<double> eopp1(const std::vector<EvalRecord>& records, const DemographicSchema& schema) {
  return detail::equal_opportunity_score(records, schema, detail::OddsTerm::eopp1);
}

inline std::optional<double> eopp2(const std::vector<EvalRecord>& records, const DemographicSchema& schema) {
  return detail::equal_opportunity_score(records, schema, detail::OddsTerm::eopp2);
}

struct FairnessSummary {
  double accuracy = 0.0;
  double unfairness = 0.0;
  std::optional<double> eodd;
  std::optional<double> eopp1;
  std::optional<double> eopp2;
  std::vector<GroupStat> group_detail;
};

inline FairnessSummary summarize_fairness(const std::vector<EvalRecord>& records, const DemographicSchema& schema) {
  FairnessSummary s;
  s.accuracy = overall_accuracy(records);
  s.group_detail = group_accuracies(records, schema);
  s.unfairness = unfairness(records, schema);
  s.eodd = eodd(records, schema);
  s.eopp1 = eopp1(records, schema);
  s.eopp2 = eopp2(records, schema);
  return s;
}

// ---------------------------------------------------------------------------
// Predictions CSV: sample_id,true_label,pred_label,<attr>...

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    cells.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

inline std::int64_t parse_label(const std::string& cell, std::size_t line, std::string_view column) {
  std::int64_t v = 0;
  std::size_t used = 0;
  try {
    v = std::stoll(cell, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (cell.empty() || used != cell.size() || v < 0)
    throw ParseError(line, "column '" + std::string(column) + "' must be a nonnegative integer, got '" + cell + "'");
  return v;
}

}  // namespace detail

inline std::vector<EvalRecord> read_predictions_csv(std::istream& in, const DemographicSchema& schema) {
  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) return true;
    }
    return false;
  };

  if (!next()) throw ParseError(1, "empty predictions file");
  const auto header = detail::split_csv_line(line);
  static constexpr std::string_view kFixed[] = {"sample_id", "true_label", "pred_label"};
  for (std::size_t i = 0; i < 3; ++i) {
    if (header.size() <= i || header[i] != kFixed[i])
      throw ParseError(line_no, "header is missing column '" + std::string(kFixed[i]) + "' at position " +
                                    std::to_string(i + 1));
  }
  std::vector<std::string> attr_columns(header.begin() + 3, header.end());
  for (const auto& col : attr_columns) {
    const bool known = std::any_of(schema.attributes.begin(), schema.attributes.end(),
                                   [&](const DemographicAttribute& a) { return a.name == col; });
    if (!known) throw SchemaMismatch("column '" + col + "' is not a schema attribute");
  }
  for (const auto& attr : schema.attributes) {
    if (std::find(attr_columns.begin(), attr_columns.end(), attr.name) == attr_columns.end())
      throw SchemaMismatch("header is missing column '" + attr.name + "'");
  }

  std::vector<EvalRecord> records;
  while (next()) {
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw ParseError(line_no, "expected " + std::to_string(header.size()) + " cells, got " +
                                    std::to_string(cells.size()));
    EvalRecord r;
    r.sample_id = cells[0];
    r.true_label = detail::parse_label(cells[1], line_no, "true_label");
    r.pred_label = detail::parse_label(cells[2], line_no, "pred_label");
    for (std::size_t i = 0; i < attr_columns.size(); ++i) r.memberships[attr_columns[i]] = cells[3 + i];
    records.push_back(std::move(r));
  }
  detail::check_records(records, schema);
  return records;
}

inline std::vector<EvalRecord> parse_predictions_csv(std::string_view text, const DemographicSchema& schema) {
  std::istringstream in{std::string(text)};
  return read_predictions_csv(in, schema);
}

// ---------------------------------------------------------------------------
// Report

namespace detail {

template <typename... Args>
std::string format(const char* fmt, Args... args) {
  const int n = std::snprintf(nullptr, 0, fmt, args...);
  std::string out(static_cast<std::size_t>(n), '\0');
  std::snprintf(out.data(), out.size() + 1, fmt, args...);
  return out;
}

inline std::string fixed_or_undefined(const std::optional<double>& v, const char* fmt) {
  return v ? format(fmt, *v) : std::string("undefined");
}

}  // namespace detail

inline constexpr double kBytesPerMB = 1024.0 * 1024.0;

// "Unfairness Score: ... Fairness Detail: [...]" portion of the report.
inline std::string format_fairness_fields(double unfairness_score, const std::optional<double>& eodd_score,
                                          const std::optional<double>& eopp1_score,
                                          const std::optional<double>& eopp2_score,
                                          const std::vector<GroupStat>& group_detail) {
  std::string out = detail::format("Unfairness Score: %.4f", unfairness_score);
  out += ", EODD: " + detail::fixed_or_undefined(eodd_score, "%.4f");
  out += ", EOPP1: " + detail::fixed_or_undefined(eopp1_score, "%.4f");
  out += ", EOPP2: " + detail::fixed_or_undefined(eopp2_score, "%.4f");
  out += ", Fairness Detail: [";
  for (std::size_t i = 0; i < group_detail.size(); ++i) {
    const auto& g = group_detail[i];
    if (i) out += ", ";
    out += g.group + detail::format(": (%.2f%%, %lld)", g.accuracy * 100.0, static_cast<long long>(g.count));
  }
  out += "]";
  return out;
}

// Single line, field order and precision as fed back to the designer.
inline std::string format_metrics_report(const MetricsRecord& m) {
  std::string out;
  out += "Train Loss: " + detail::fixed_or_undefined(m.train_loss, "%.4f");
  out += detail::format(", Train Acc: %.2f%%", m.train_acc * 100.0);
  out += ", Valid Loss: " + detail::fixed_or_undefined(m.valid_loss, "%.4f");
  out += detail::format(", Valid Acc: %.2f%%", m.valid_acc * 100.0);
  out += ", " + format_fairness_fields(m.unfairness, m.eodd, m.eopp1, m.eopp2, m.group_detail);
  out += detail::format(", Latency: %.6f seconds per image", m.cost.latency_per_item_s());
  out += detail::format(", Throughput: %.2f images per second", m.cost.throughput_items_per_s);
  out += detail::format(", Peak GPU Memory Usage: %.2f MB", static_cast<double>(m.cost.peak_memory_bytes) / kBytesPerMB);
  return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline OrderedJson optional_number(const std::optional<double>& v) { return v ? OrderedJson(*v) : OrderedJson(nullptr); }

inline std::optional<double> read_optional_number(const Json& j, std::string_view key) {
  auto it = j.find(std::string(key));
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) throw SchemaError("field '" + std::string(key) + "' must be a number or null");
  return it->get<double>();
}

}  // namespace detail

inline OrderedJson metrics_to_json(const MetricsRecord& m) {
  OrderedJson j;
  j["train_loss"] = detail::optional_number(m.train_loss);
  j["valid_loss"] = detail::optional_number(m.valid_loss);
  j["train_acc"] = m.train_acc;
  j["valid_acc"] = m.valid_acc;
  j["test_acc"] = m.test_acc;
  j["unfairness"] = m.unfairness;
  j["eodd"] = detail::optional_number(m.eodd);
  j["eopp1"] = detail::optional_number(m.eopp1);
  j["eopp2"] = detail::optional_number(m.eopp2);
  j["group_detail"] = OrderedJson::array();
  for (const auto& g : m.group_detail) {
    OrderedJson gj;
    gj["attribute"] = g.attribute;
    gj["group"] = g.group;
    gj["accuracy"] = g.accuracy;
    gj["count"] = g.count;
    gj["correct"] = g.correct;
    j["group_detail"].push_back(gj);
  }
  j["cost"] = cost_report_to_json(m.cost);
  if (m.measured) {
    j["measured"] = {{"latency_s_per_item", m.measured->latency_s_per_item},
                     {"peak_memory_bytes", m.measured->peak_memory_bytes}};
  }
  return j;
}

inline MetricsRecord metrics_from_json(const Json& j) {
  detail::require_object(j, "metrics");
  MetricsRecord m;
  m.train_loss = detail::read_optional_number(j, "train_loss");
  m.valid_loss = detail::read_optional_number(j, "valid_loss");
  m.train_acc = detail::get_number(j, "train_acc", "metrics");
  m.valid_acc = detail::get_number(j, "valid_acc", "metrics");
  m.test_acc = detail::get_number(j, "test_acc", "metrics");
  m.unfairness = detail::get_number(j, "unfairness", "metrics");
  m.eodd = detail::read_optional_number(j, "eodd");
  m.eopp1 = detail::read_optional_number(j, "eopp1");
  m.eopp2 = detail::read_optional_number(j, "eopp2");
  const Json& groups = detail::require(j, "group_detail", "metrics");
  if (!groups.is_array()) throw SchemaError("field 'metrics.group_detail' must be an array");
  for (const auto& gj : groups) {
    GroupStat g;
    g.attribute = detail::get_string(gj, "attribute", "group_detail");
    g.group = detail::get_string(gj, "group", "group_detail");
    g.accuracy = detail::get_number(gj, "accuracy", "group_detail");
    g.count = detail::get_int(gj, "count", "group_detail");
    g.correct = detail::get_int(gj, "correct", "group_detail");
    m.group_detail.push_back(std::move(g));
  }
  m.cost = cost_report_from_json(detail::require(j, "cost", "metrics"));
  if (j.contains("measured") && !j["measured"].is_null()) {
    const Json& hw = j["measured"];
    m.measured = MeasuredHardware{detail::get_number(hw, "latency_s_per_item", "measured"),
                                  detail::get_int(hw, "peak_memory_bytes", "measured")};
  }
  return m;
}

}  // namespace flnas
