#pragma once

// Evaluators: simulated landscape, predictions file, external trainer.
// All of them take cost fields from static analysis and route accuracy and
// fairness through the fairness module.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "flnas/arch_ir.hpp"
#include "flnas/fairness.hpp"
#include "flnas/hash.hpp"
#include "flnas/io.hpp"
#include "flnas/json_util.hpp"
#include "flnas/static_analysis.hpp"
#include "flnas/subprocess.hpp"

namespace flnas {

enum class EvaluatorKind { simulated, predictions_file, external };

inline std::string_view to_string(EvaluatorKind k) {
  switch (k) {
    case EvaluatorKind::simulated: return "simulated";
    case EvaluatorKind::predictions_file: return "predictions_file";
    case EvaluatorKind::external: return "external";
  }
  return "?";
}

struct Split {
  double train = 0.70;
  double valid = 0.20;
  double test = 0.10;
};

struct DatasetSpec {
  std::string path;
  std::string schema_path;  // empty: default schema
  Split split;
};

struct TrainingSpec {
  int max_epochs = 50;
  int patience = 3;
};

struct EvaluatorSpec {
  EvaluatorKind kind = EvaluatorKind::simulated;
  std::uint64_t seed = 0;
  std::optional<DatasetSpec> dataset;
  std::optional<std::string> external_cmd;
  DeviceProfile device{"default", 1e12, 0.0, 4, std::nullopt};
  std::int64_t batch = 1;
  DemographicSchema schema = default_schema();
  TrainingSpec training;
  double timeout_s = 3600.0;
};

class ProtocolError : public Error {
 public:
  ProtocolError(std::size_t line, const std::string& message)
      : Error("trainer output line " + std::to_string(line) + ": " + message), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class TrainerFailure : public Error {
 public:
  TrainerFailure(int exit_code, std::string stderr_tail, const std::string& message)
      : Error(message), exit_code_(exit_code), stderr_tail_(std::move(stderr_tail)) {}
  int exit_code() const noexcept { return exit_code_; }
  const std::string& stderr_tail() const noexcept { return stderr_tail_; }

 private:
  int exit_code_;
  std::string stderr_tail_;
};

class Timeout : public Error {
 public:
  using Error::Error;
};

inline void check_spec(const EvaluatorSpec& spec) {
  if (spec.batch < 1) throw ConfigError("evaluator batch must be positive");
  if (!(spec.timeout_s > 0)) throw ConfigError("evaluator timeout_s must be positive");
  if (spec.training.max_epochs < 1 || spec.training.patience < 1)
    throw ConfigError("training max_epochs and patience must be positive");
  if (spec.dataset) {
    const auto& s = spec.dataset->split;
    if (s.train < 0 || s.valid < 0 || s.test < 0 || std::abs(s.train + s.valid + s.test - 1.0) > 1e-9)
      throw ConfigError("dataset split fractions must be non-negative and sum to 1");
  }
  if (spec.kind == EvaluatorKind::external && (!spec.external_cmd || spec.external_cmd->empty()))
    throw ConfigError("external evaluator requires external_cmd");
  if (spec.kind == EvaluatorKind::predictions_file && !spec.dataset)
    throw ConfigError("predictions_file evaluator requires dataset");
}

// Relative paths resolve against `base_dir`. The schema and device files are
// loaded here so evaluation itself does no config I/O.
inline EvaluatorSpec evaluator_spec_from_json(const Json& j, const std::filesystem::path& base_dir,
                                              const std::optional<DeviceProfile>& default_device = std::nullopt) {
  detail::require_object(j, "evaluator");
  detail::reject_unknown_keys(j, {"kind", "seed", "dataset", "external_cmd", "device", "batch", "training", "timeout_s"},
                              "evaluator");
  EvaluatorSpec spec;
  const auto kind = detail::get_string(j, "kind", "evaluator");
  if (kind == "simulated") spec.kind = EvaluatorKind::simulated;
  else if (kind == "predictions_file") spec.kind = EvaluatorKind::predictions_file;
  else if (kind == "external") spec.kind = EvaluatorKind::external;
  else throw SchemaError("unknown evaluator kind '" + kind + "'");

  if (j.contains("seed")) {
    const Json& s = j["seed"];
    if (!s.is_number_integer()) throw SchemaError("field 'evaluator.seed' must be an integer");
    spec.seed = s.is_number_unsigned() ? s.get<std::uint64_t>() : static_cast<std::uint64_t>(s.get<std::int64_t>());
  }
  if (j.contains("dataset")) {
    const Json& d = detail::require_object(j["dataset"], "evaluator.dataset");
    detail::reject_unknown_keys(d, {"path", "schema_path", "split"}, "evaluator.dataset");
    DatasetSpec ds;
    ds.path = resolve_path(base_dir, detail::get_string(d, "path", "evaluator.dataset")).string();
    if (d.contains("schema_path"))
      ds.schema_path = resolve_path(base_dir, detail::get_string(d, "schema_path", "evaluator.dataset")).string();
    if (d.contains("split")) {
      const Json& s = detail::require_object(d["split"], "evaluator.dataset.split");
      detail::reject_unknown_keys(s, {"train", "valid", "test"}, "evaluator.dataset.split");
      ds.split = {detail::get_number(s, "train", "split"), detail::get_number(s, "valid", "split"),
                  detail::get_number(s, "test", "split")};
    }
    if (!ds.schema_path.empty()) spec.schema = parse_schema(read_text_file(ds.schema_path));
    spec.dataset = std::move(ds);
  }
  if (j.contains("external_cmd")) spec.external_cmd = detail::get_string(j, "external_cmd", "evaluator");
  if (j.contains("device")) {
    const Json& d = j["device"];
    if (d.is_string()) spec.device = parse_device_profile(read_text_file(resolve_path(base_dir, d.get<std::string>())));
    else spec.device = device_profile_from_json(d);
  } else if (default_device) {
    spec.device = *default_device;
  }
  if (j.contains("batch")) spec.batch = detail::get_int_min(j, "batch", "evaluator", 1);
  if (j.contains("timeout_s")) spec.timeout_s = detail::get_number(j, "timeout_s", "evaluator");
  if (j.contains("training")) {
    const Json& t = detail::require_object(j["training"], "evaluator.training");
    detail::reject_unknown_keys(t, {"max_epochs", "patience"}, "evaluator.training");
    if (t.contains("max_epochs")) spec.training.max_epochs = static_cast<int>(detail::get_int_min(t, "max_epochs", "training", 1));
    if (t.contains("patience")) spec.training.patience = static_cast<int>(detail::get_int_min(t, "patience", "training", 1));
  }
  check_spec(spec);
  return spec;
}

namespace detail {

inline MetricsRecord with_fairness(MetricsRecord m, const FairnessSummary& s) {
  m.test_acc = s.accuracy;
  m.unfairness = s.unfairness;
  m.eodd = s.eodd;
  m.eopp1 = s.eopp1;
  m.eopp2 = s.eopp2;
  m.group_detail = s.group_detail;
  return m;
}

inline double unit_interval(std::uint64_t x) { return static_cast<double>(x >> 11) * 0x1.0p-53; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Simulated

inline constexpr double kLandscapeCenter = 3e5;
inline constexpr double kMaxGroupOffset = 0.15;
inline constexpr int kSimulatedPerGroup = 200;
inline constexpr int kSimulatedClasses = 8;

inline double simulated_base_accuracy(std::int64_t param_count) {
  const double d = std::log(static_cast<double>(std::max<std::int64_t>(param_count, 1))) - std::log(kLandscapeCenter);
  return 0.5 + 0.35 * std::exp(-d * d / 8.0);
}

inline std::uint64_t simulated_key(const Architecture& arch, std::uint64_t seed) {
  Architecture named = arch;
  if (named.name.empty()) named.name = "unnamed";
  return mix64(fnv1a64(serialize_architecture(named)) ^ mix64(seed));
}

// Offset in [-0.15, 0.15] for one group, keyed by the architecture hash.
inline double simulated_group_offset(std::uint64_t key, const std::string& attribute, const std::string& group) {
  const std::uint64_t x = mix64(key ^ fnv1a64(attribute + "/" + group));
  return -kMaxGroupOffset + 2.0 * kMaxGroupOffset * detail::unit_interval(x);
}

// The synthetic test set behind a simulated evaluation. Each group of each
// attribute gets 200 records whose accuracy follows that group's target;
// the remaining attributes are filled round-robin.
inline std::vector<EvalRecord> simulated_records(const Architecture& arch, const EvaluatorSpec& spec) {
  const std::uint64_t key = simulated_key(arch, spec.seed);
  const double base = simulated_base_accuracy(count_parameters(arch));
  const std::int64_t classes = std::max<std::int64_t>(2, std::min<std::int64_t>(arch.num_classes, kSimulatedClasses));
  std::vector<EvalRecord> records;
  for (std::size_t a = 0; a < spec.schema.attributes.size(); ++a) {
    const auto& attr = spec.schema.attributes[a];
    for (const auto& group : attr.groups) {
      const double target = std::clamp(base + simulated_group_offset(key, attr.name, group), 0.0, 1.0);
      const int correct = static_cast<int>(std::lround(target * kSimulatedPerGroup));
      const std::uint64_t stream = mix64(key ^ fnv1a64(attr.name + "#" + group));
      for (int k = 0; k < kSimulatedPerGroup; ++k) {
        const std::uint64_t r = mix64(stream + static_cast<std::uint64_t>(k));
        EvalRecord rec;
        rec.sample_id = attr.name + "-" + group + "-" + std::to_string(k);
        rec.true_label = static_cast<std::int64_t>(r % static_cast<std::uint64_t>(classes));
        const auto shift = 1 + static_cast<std::int64_t>((r >> 32) % static_cast<std::uint64_t>(classes - 1));
        rec.pred_label = k < correct ? rec.true_label : (rec.true_label + shift) % classes;
        for (std::size_t b = 0; b < spec.schema.attributes.size(); ++b) {
          const auto& other = spec.schema.attributes[b];
          rec.memberships[other.name] = b == a ? group : other.groups[static_cast<std::size_t>(k) % other.groups.size()];
        }
        records.push_back(std::move(rec));
      }
    }
  }
  return records;
}

inline MetricsRecord simulated_evaluate(const Architecture& arch, const EvaluatorSpec& spec) {
  MetricsRecord m;
  m.cost = analyze_cost(arch, spec.batch, spec.device);
  m = detail::with_fairness(std::move(m), summarize_fairness(simulated_records(arch, spec), spec.schema));
  // Training fits a little better than held-out data; losses are the
  // cross-entropy of a model that puts probability `acc` on the truth.
  m.valid_acc = m.test_acc;
  m.train_acc = m.valid_acc + 0.1 * (1.0 - m.valid_acc);
  m.valid_loss = -std::log(std::max(m.valid_acc, 1e-3));
  m.train_loss = -std::log(std::max(m.train_acc, 1e-3));
  return m;
}

// ---------------------------------------------------------------------------
// Predictions file

// The CSV is taken as the held-out split, so every accuracy field is its
// overall accuracy. Losses are unknown.
inline MetricsRecord predictions_evaluate(const Architecture& arch, const EvaluatorSpec& spec) {
  if (!spec.dataset) throw ConfigError("predictions_file evaluator requires dataset");
  std::ifstream in(spec.dataset->path);
  if (!in) throw IoError("cannot open predictions file '" + spec.dataset->path + "'");
  MetricsRecord m;
  m.cost = analyze_cost(arch, spec.batch, spec.device);
  m = detail::with_fairness(std::move(m), summarize_fairness(read_predictions_csv(in, spec.schema), spec.schema));
  m.train_acc = m.valid_acc = m.test_acc;
  return m;
}

// ---------------------------------------------------------------------------
// External trainer

inline OrderedJson trainer_request(const Architecture& arch, const EvaluatorSpec& spec) {
  OrderedJson req;
  req["architecture"] = architecture_to_json(arch);
  if (spec.dataset) {
    const auto& s = spec.dataset->split;
    req["dataset"] = {{"path", spec.dataset->path},
                      {"schema", schema_to_json(spec.schema)},
                      {"split", {s.train, s.valid, s.test}},
                      {"seed", spec.seed}};
  } else {
    req["dataset"] = nullptr;
  }
  req["training"] = {{"max_epochs", spec.training.max_epochs},
                     {"patience", spec.training.patience},
                     {"batch", spec.batch}};
  return req;
}

namespace detail {

inline std::optional<double> protocol_loss(const Json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end()) throw ProtocolError(line, std::string("missing '") + key + "'");
  if (it->is_null()) return std::nullopt;
  if (!it->is_number()) throw ProtocolError(line, std::string("'") + key + "' must be a number");
  return it->get<double>();
}

inline double protocol_fraction(const Json& j, const char* key, std::size_t line) {
  const auto v = protocol_loss(j, key, line);
  if (!v || *v < 0 || *v > 1) throw ProtocolError(line, std::string("'") + key + "' must be a number in [0, 1]");
  return *v;
}

inline EvalRecord protocol_prediction(const Json& p, std::size_t line) {
  if (!p.is_object()) throw ProtocolError(line, "prediction must be an object");
  EvalRecord r;
  const auto id = p.find("sample_id");
  if (id == p.end() || !(id->is_string() || id->is_number_integer()))
    throw ProtocolError(line, "prediction needs a string or integer sample_id");
  r.sample_id = id->is_string() ? id->get<std::string>() : std::to_string(id->get<std::int64_t>());
  for (const char* key : {"true_label", "pred_label"}) {
    const auto v = p.find(key);
    if (v == p.end() || !v->is_number_integer())
      throw ProtocolError(line, std::string("prediction '") + r.sample_id + "' needs integer " + key);
  }
  r.true_label = p["true_label"].get<std::int64_t>();
  r.pred_label = p["pred_label"].get<std::int64_t>();
  const auto groups = p.find("groups");
  if (groups == p.end() || !groups->is_object())
    throw ProtocolError(line, "prediction '" + r.sample_id + "' needs a groups object");
  for (auto it = groups->begin(); it != groups->end(); ++it) {
    if (!it.value().is_string()) throw ProtocolError(line, "group names must be strings");
    r.memberships[it.key()] = it.value().get<std::string>();
  }
  return r;
}

}  // namespace detail

inline MetricsRecord external_evaluate(const Architecture& arch, const EvaluatorSpec& spec) {
  if (!spec.external_cmd) throw ConfigError("external evaluator requires external_cmd");
  const auto deadline =
      Subprocess::Clock::now() + std::chrono::duration_cast<Subprocess::Clock::duration>(
                                     std::chrono::duration<double>(spec.timeout_s));
  auto child = Subprocess::spawn(*spec.external_cmd);
  child.write_and_close_stdin(trainer_request(arch, spec).dump() + "\n");

  std::size_t line_no = 0;
  std::optional<Json> result;
  std::size_t result_line = 0;
  bool timed_out = false;
  while (auto line = child.read_line(deadline, timed_out)) {
    ++line_no;
    if (line->find_first_not_of(" \t") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(*line);
    } catch (const Json::parse_error&) {
      child.kill();
      throw ProtocolError(line_no, "not a JSON record: " + line->substr(0, 80));
    }
    if (!j.is_object() || !j.contains("event") || !j["event"].is_string()) {
      child.kill();
      throw ProtocolError(line_no, "record lacks a string 'event'");
    }
    const auto event = j["event"].get<std::string>();
    if (event == "epoch") {
      if (!j.contains("epoch") || !j["epoch"].is_number_integer()) {
        child.kill();
        throw ProtocolError(line_no, "epoch record needs an integer 'epoch'");
      }
    } else if (event == "result") {
      result = std::move(j);
      result_line = line_no;
      break;
    } else if (event == "error") {
      const std::string msg = j.contains("message") && j["message"].is_string() ? j["message"].get<std::string>()
                                                                                 : std::string("unspecified");
      child.kill();
      throw TrainerFailure(-1, child.stderr_tail(), "trainer reported an error: " + msg);
    } else {
      child.kill();
      throw ProtocolError(line_no, "unknown event '" + event + "'");
    }
  }
  if (timed_out) {
    child.kill();
    throw Timeout("trainer did not finish within " + detail::format("%g", spec.timeout_s) + " s");
  }
  if (!result) {
    const int code = child.wait();
    if (code != 0)
      throw TrainerFailure(code, child.stderr_tail(),
                           "trainer exited with status " + std::to_string(code) + " before a result");
    throw ProtocolError(line_no + 1, "trainer exited without a result record");
  }
  const int code = child.wait();
  if (code != 0)
    throw TrainerFailure(code, child.stderr_tail(), "trainer exited with status " + std::to_string(code));

  const Json& r = *result;
  MetricsRecord m;
  m.cost = analyze_cost(arch, spec.batch, spec.device);
  m.train_loss = detail::protocol_loss(r, "train_loss", result_line);
  m.valid_loss = detail::protocol_loss(r, "valid_loss", result_line);
  m.train_acc = detail::protocol_fraction(r, "train_acc", result_line);
  m.valid_acc = detail::protocol_fraction(r, "valid_acc", result_line);
  if (!r.contains("predictions") || !r["predictions"].is_array() || r["predictions"].empty())
    throw ProtocolError(result_line, "result needs a non-empty 'predictions' array");
  std::vector<EvalRecord> records;
  for (const auto& p : r["predictions"]) records.push_back(detail::protocol_prediction(p, result_line));
  try {
    m = detail::with_fairness(std::move(m), summarize_fairness(records, spec.schema));
  } catch (const SchemaMismatch& e) {
    throw ProtocolError(result_line, e.what());
  }
  if (r.contains("hardware") && !r["hardware"].is_null()) {
    const Json& hw = r["hardware"];
    if (!hw.is_object() || !hw.contains("latency_s_per_item") || !hw["latency_s_per_item"].is_number() ||
        !hw.contains("peak_memory_bytes") || !hw["peak_memory_bytes"].is_number_integer())
      throw ProtocolError(result_line, "hardware needs latency_s_per_item and integer peak_memory_bytes");
    m.measured = MeasuredHardware{hw["latency_s_per_item"].get<double>(), hw["peak_memory_bytes"].get<std::int64_t>()};
  }
  return m;
}

// ---------------------------------------------------------------------------

inline MetricsRecord evaluate(const Architecture& arch, const EvaluatorSpec& spec) {
  switch (spec.kind) {
    case EvaluatorKind::simulated: return simulated_evaluate(arch, spec);
    case EvaluatorKind::predictions_file: return predictions_evaluate(arch, spec);
    case EvaluatorKind::external: return external_evaluate(arch, spec);
  }
  throw ConfigError("unknown evaluator kind");
}

}  // namespace flnas
