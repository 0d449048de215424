#pragma once

// The search loop: pick the incumbent, prompt, design, evaluate, archive,
// log. Plus the run log and the config file that drives it.

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flnas/arch_ir.hpp"
#include "flnas/evaluation.hpp"
#include "flnas/fairness.hpp"
#include "flnas/io.hpp"
#include "flnas/json_util.hpp"
#include "flnas/llm_designer.hpp"
#include "flnas/prompting.hpp"
#include "flnas/static_analysis.hpp"

namespace flnas {

// ---------------------------------------------------------------------------
// Archive

struct ArchiveEntry {
  std::string name;
  Architecture architecture;
  MetricsRecord metrics;
  int iteration = 0;
  bool operator==(const ArchiveEntry&) const = default;
};

class Archive {
 public:
  void insert(ArchiveEntry e) {
    if (index_.count(e.name)) throw Error("archive already holds '" + e.name + "'");
    if (!entries_.empty() && e.iteration <= entries_.back().iteration)
      throw Error("archive iterations must increase (" + std::to_string(e.iteration) + " after " +
                  std::to_string(entries_.back().iteration) + ")");
    index_[e.name] = entries_.size();
    entries_.push_back(std::move(e));
  }

  const std::vector<ArchiveEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const ArchiveEntry* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second];
  }

  bool contains_structure(const Architecture& a) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const ArchiveEntry& e) { return same_structure(e.architecture, a); });
  }

  // `base`, or `base-2`, `base-3`, ... whichever is free first.
  std::string unique_name(const std::string& base) const {
    if (!contains(base)) return base;
    for (int k = 2;; ++k) {
      auto candidate = base + "-" + std::to_string(k);
      if (!contains(candidate)) return candidate;
    }
  }

  bool operator==(const Archive& o) const { return entries_ == o.entries_; }

 private:
  std::vector<ArchiveEntry> entries_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Selection

enum class Direction { asc, desc };

struct PolicyKey {
  std::string field;
  Direction direction = Direction::asc;
};

struct SelectionPolicy {
  std::vector<PolicyKey> keys;
};

inline SelectionPolicy default_policy() {
  return {{{"unfairness", Direction::asc}, {"valid_acc", Direction::desc}, {"param_count", Direction::asc}}};
}

inline constexpr std::string_view kPolicyFields[] = {
    "unfairness", "eodd",  "eopp1",     "eopp2",           "valid_acc", "train_acc", "test_acc",  "valid_loss",
    "train_loss", "flops", "param_count", "peak_memory_bytes", "latency_s", "throughput_items_per_s"};

// nullopt for undefined metrics; those rank behind every defined value.
inline std::optional<double> metric_field(const MetricsRecord& m, std::string_view field) {
  if (field == "unfairness") return m.unfairness;
  if (field == "eodd") return m.eodd;
  if (field == "eopp1") return m.eopp1;
  if (field == "eopp2") return m.eopp2;
  if (field == "valid_acc") return m.valid_acc;
  if (field == "train_acc") return m.train_acc;
  if (field == "test_acc") return m.test_acc;
  if (field == "valid_loss") return m.valid_loss;
  if (field == "train_loss") return m.train_loss;
  if (field == "flops") return static_cast<double>(m.cost.flops);
  if (field == "param_count") return static_cast<double>(m.cost.param_count);
  if (field == "peak_memory_bytes") return static_cast<double>(m.cost.peak_memory_bytes);
  if (field == "latency_s") return m.cost.latency_s;
  if (field == "throughput_items_per_s") return m.cost.throughput_items_per_s;
  throw ConfigError("unknown selection field '" + std::string(field) + "'");
}

inline SelectionPolicy selection_policy_from_json(const Json& j) {
  detail::require_object(j, "selection_policy");
  detail::reject_unknown_keys(j, {"keys"}, "selection_policy");
  const Json& keys = detail::require(j, "keys", "selection_policy");
  if (!keys.is_array() || keys.empty()) throw ConfigError("selection_policy.keys must be a non-empty array");
  SelectionPolicy p;
  for (const auto& k : keys) {
    detail::require_object(k, "selection_policy.keys[]");
    detail::reject_unknown_keys(k, {"field", "direction"}, "selection_policy.keys[]");
    PolicyKey key;
    key.field = detail::get_string(k, "field", "selection_policy.keys[]");
    if (std::find(std::begin(kPolicyFields), std::end(kPolicyFields), key.field) == std::end(kPolicyFields))
      throw ConfigError("unknown selection field '" + key.field + "'");
    const auto dir = detail::get_string(k, "direction", "selection_policy.keys[]");
    if (dir == "asc") key.direction = Direction::asc;
    else if (dir == "desc") key.direction = Direction::desc;
    else throw ConfigError("selection direction must be 'asc' or 'desc', got '" + dir + "'");
    p.keys.push_back(std::move(key));
  }
  return p;
}

// Strict "a ranks before b": policy keys in order, then earliest iteration.
inline bool ranks_before(const ArchiveEntry& a, const ArchiveEntry& b, const SelectionPolicy& policy) {
  for (const auto& key : policy.keys) {
    const auto va = metric_field(a.metrics, key.field);
    const auto vb = metric_field(b.metrics, key.field);
    if (!va && !vb) continue;
    if (!vb) return true;
    if (!va) return false;
    if (*va == *vb) continue;
    return key.direction == Direction::asc ? *va < *vb : *va > *vb;
  }
  return a.iteration < b.iteration;
}

inline std::optional<ArchiveEntry> get_best_metrics(const Archive& archive,
                                                    const SelectionPolicy& policy = default_policy()) {
  const ArchiveEntry* best = nullptr;
  for (const auto& e : archive.entries())
    if (!best || ranks_before(e, *best, policy)) best = &e;
  if (!best) return std::nullopt;
  return *best;
}

// ---------------------------------------------------------------------------
// Run log: one JSON object per line, appended and fsynced per iteration.

struct LogRecord {
  int iteration = 0;
  bool ok = false;
  std::optional<ArchiveEntry> entry;  // present when ok
  std::string prompt_hash;
  int attempts = 0;
  std::string error;  // failed iterations only
  std::string timestamp;
};

inline std::string rfc3339_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  ::gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline OrderedJson log_record_to_json(const LogRecord& r) {
  OrderedJson j;
  j["iteration"] = r.iteration;
  if (r.ok && r.entry) {
    j["name"] = r.entry->name;
    j["architecture"] = architecture_to_json(r.entry->architecture);
    j["metrics"] = metrics_to_json(r.entry->metrics);
  } else {
    j["name"] = nullptr;
    j["architecture"] = nullptr;
    j["metrics"] = nullptr;
  }
  j["prompt_hash"] = r.prompt_hash;
  j["attempts"] = r.attempts;
  j["status"] = r.ok ? "ok" : "failed";
  if (!r.ok) j["error"] = r.error;
  j["timestamp"] = r.timestamp;
  return j;
}

inline LogRecord log_record_from_json(const Json& j) {
  detail::require_object(j, "log record");
  LogRecord r;
  r.iteration = static_cast<int>(detail::get_int_min(j, "iteration", "log", 1));
  r.prompt_hash = detail::get_string(j, "prompt_hash", "log");
  r.attempts = static_cast<int>(detail::get_int_min(j, "attempts", "log", 0));
  r.timestamp = detail::get_string(j, "timestamp", "log");
  const auto status = detail::get_string(j, "status", "log");
  if (status == "ok") {
    r.ok = true;
    ArchiveEntry e;
    e.name = detail::get_string(j, "name", "log");
    e.architecture = architecture_from_json(detail::require(j, "architecture", "log"));
    e.metrics = metrics_from_json(detail::require(j, "metrics", "log"));
    e.iteration = r.iteration;
    r.entry = std::move(e);
  } else if (status == "failed") {
    if (j.contains("error") && j["error"].is_string()) r.error = j["error"].get<std::string>();
  } else {
    throw SchemaError("log status must be 'ok' or 'failed', got '" + status + "'");
  }
  return r;
}

inline void append_log(const std::string& path, const LogRecord& r) {
  const std::string line = log_record_to_json(r).dump() + "\n";
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("cannot open run log '" + path + "': " + std::strerror(errno));
  std::string_view rest = line;
  while (!rest.empty()) {
    const auto n = ::write(fd, rest.data(), rest.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      const int err = errno;
      ::close(fd);
      throw IoError("cannot write run log '" + path + "': " + std::strerror(err));
    }
    rest.remove_prefix(static_cast<std::size_t>(n));
  }
  const bool synced = ::fsync(fd) == 0;
  ::close(fd);
  if (!synced) throw IoError("cannot sync run log '" + path + "'");
}

struct LoadedRun {
  Archive archive;
  std::vector<LogRecord> records;
  int last_iteration = 0;
  std::int64_t total_attempts = 0;  // LLM replies consumed so far
  int warnings = 0;                 // dropped torn trailing lines
  std::size_t valid_bytes = 0;      // length of the intact prefix
};

inline LoadedRun load_run_text(std::string_view text) {
  LoadedRun run;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    ++line_no;
    const auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      // Unterminated: the writer died mid-append.
      ++run.warnings;
      break;
    }
    const auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      run.valid_bytes = pos;
      continue;
    }
    LogRecord r;
    try {
      r = log_record_from_json(Json::parse(line));
    } catch (const Json::parse_error& e) {
      throw ParseError(line_no, std::string("corrupt run log line: ") + e.what());
    } catch (const Error& e) {
      throw ParseError(line_no, std::string("corrupt run log line: ") + e.what());
    }
    if (r.iteration <= run.last_iteration)
      throw ParseError(line_no, "run log iteration " + std::to_string(r.iteration) + " does not follow " +
                                    std::to_string(run.last_iteration));
    run.last_iteration = r.iteration;
    run.total_attempts += r.attempts;
    if (r.entry) {
      try {
        run.archive.insert(*r.entry);
      } catch (const Error& e) {
        throw ParseError(line_no, e.what());
      }
    }
    run.records.push_back(std::move(r));
    run.valid_bytes = pos;
  }
  return run;
}

inline LoadedRun load_run(const std::string& path) { return load_run_text(read_text_file(path)); }

// ---------------------------------------------------------------------------
// Config

enum class LlmBackendKind { http, mock };

struct SearchConfig {
  int iter_max = 10;
  PromptTemplate prompt_template;
  std::string arch_template;
  Choices choices;
  DeviceProfile env{"default", 1e12, 0.0, 4, std::nullopt};
  LlmConfig llm;
  LlmBackendKind llm_backend = LlmBackendKind::http;
  std::string mock_replies_path;
  EvaluatorSpec evaluator;
  std::string run_log_path = "flnas_run.jsonl";
  SelectionPolicy selection_policy = default_policy();
  bool fail_fast = false;
  std::size_t max_prompt_bytes = kDefaultMaxPromptBytes;
};

// Every path in the file is relative to the file's own directory.
inline SearchConfig search_config_from_json(const Json& j, const std::filesystem::path& base_dir) {
  detail::require_object(j, "config");
  detail::reject_unknown_keys(j,
                              {"iter_max", "template_path", "arch_format_path", "choices", "env", "llm", "llm_backend",
                               "mock_replies", "evaluator", "run_log_path", "selection_policy", "fail_fast",
                               "max_prompt_bytes"},
                              "config");
  SearchConfig c;
  if (j.contains("iter_max")) c.iter_max = static_cast<int>(detail::get_int_min(j, "iter_max", "config", 1));
  c.prompt_template =
      parse_prompt_template(read_text_file(resolve_path(base_dir, detail::get_string(j, "template_path", "config"))));
  c.arch_template = read_text_file(resolve_path(base_dir, detail::get_string(j, "arch_format_path", "config")));

  const Json& choices = detail::require(j, "choices", "config");
  c.choices = choices.is_string() ? parse_choices(read_text_file(resolve_path(base_dir, choices.get<std::string>())))
                                  : choices_from_json(choices);
  const Json& env = detail::require(j, "env", "config");
  c.env = env.is_string() ? parse_device_profile(read_text_file(resolve_path(base_dir, env.get<std::string>())))
                          : device_profile_from_json(env);

  if (j.contains("llm")) c.llm = llm_config_from_json(j["llm"]);
  if (j.contains("llm_backend")) {
    const auto kind = detail::get_string(j, "llm_backend", "config");
    if (kind == "http") c.llm_backend = LlmBackendKind::http;
    else if (kind == "mock") c.llm_backend = LlmBackendKind::mock;
    else throw ConfigError("llm_backend must be 'http' or 'mock', got '" + kind + "'");
  }
  if (j.contains("mock_replies"))
    c.mock_replies_path = resolve_path(base_dir, detail::get_string(j, "mock_replies", "config")).string();
  c.evaluator = evaluator_spec_from_json(detail::require(j, "evaluator", "config"), base_dir, c.env);
  if (j.contains("run_log_path"))
    c.run_log_path = resolve_path(base_dir, detail::get_string(j, "run_log_path", "config")).string();
  if (j.contains("selection_policy")) c.selection_policy = selection_policy_from_json(j["selection_policy"]);
  if (j.contains("fail_fast")) c.fail_fast = detail::get_bool(j, "fail_fast", "config");
  if (j.contains("max_prompt_bytes"))
    c.max_prompt_bytes = static_cast<std::size_t>(detail::get_int_min(j, "max_prompt_bytes", "config", 1));
  if (c.llm_backend == LlmBackendKind::mock && c.mock_replies_path.empty())
    throw ConfigError("llm_backend 'mock' requires mock_replies");
  return c;
}

inline SearchConfig load_search_config(const std::string& path) {
  const auto text = read_text_file(path);
  return search_config_from_json(detail::parse_json_text(text), std::filesystem::path(path).parent_path());
}

// ---------------------------------------------------------------------------
// Loop

struct SearchResult {
  std::optional<ArchiveEntry> best;
  Archive archive;
  int ok_iterations = 0;
  int failed_iterations = 0;
  std::int64_t attempts = 0;
};

struct SearchOptions {
  bool resume = false;
  // Called after each iteration's log line is durable.
  std::function<void(const LogRecord&)> on_iteration;
};

namespace detail {

// Counts replies actually delivered, so a resumed run knows how many
// scripted replies the earlier run used.
class CountingBackend final : public ChatBackend {
 public:
  explicit CountingBackend(ChatBackend& inner) : inner_(inner) {}
  std::string complete(const PromptBundle& b) override {
    auto reply = inner_.complete(b);
    ++count_;
    return reply;
  }
  int count() const noexcept { return count_; }

 private:
  ChatBackend& inner_;
  int count_ = 0;
};

}  // namespace detail

// Runs iterations until `cfg.iter_max` have been logged. Transport and API
// failures abort the run; design and evaluation failures are logged as
// failed iterations unless `cfg.fail_fast`.
inline SearchResult run_search(const SearchConfig& cfg, ChatBackend& backend, const SearchOptions& opts = {}) {
  if (cfg.iter_max < 1) throw ConfigError("iter_max must be >= 1");
  if (cfg.selection_policy.keys.empty()) throw ConfigError("selection policy needs at least one key");
  check_spec(cfg.evaluator);

  SearchResult result;
  int first = 1;
  namespace fs = std::filesystem;
  if (opts.resume && fs::exists(cfg.run_log_path)) {
    auto run = load_run(cfg.run_log_path);
    if (run.warnings) fs::resize_file(cfg.run_log_path, run.valid_bytes);
    result.archive = std::move(run.archive);
    result.attempts = run.total_attempts;
    for (const auto& r : run.records) (r.ok ? result.ok_iterations : result.failed_iterations)++;
    first = run.last_iteration + 1;
    if (auto* scripted = dynamic_cast<ScriptedBackend*>(&backend))
      scripted->skip(static_cast<std::size_t>(run.total_attempts));
  } else if (!opts.resume && fs::exists(cfg.run_log_path) && fs::file_size(cfg.run_log_path) > 0) {
    throw ConfigError("run log '" + cfg.run_log_path + "' already exists; resume it or choose another path");
  }
  if (const auto dir = fs::path(cfg.run_log_path).parent_path(); !dir.empty()) fs::create_directories(dir);

  // Runs inside a catch handler; fail-fast rethrows the active exception.
  auto log_failure = [&](LogRecord& rec, const detail::CountingBackend& counting, const Error& e) {
    rec.ok = false;
    rec.error = e.what();
    rec.attempts = counting.count();
    rec.timestamp = rfc3339_now();
    append_log(cfg.run_log_path, rec);
    ++result.failed_iterations;
    if (cfg.fail_fast) throw;
  };

  for (int i = first; i <= cfg.iter_max; ++i) {
    std::optional<Incumbent> incumbent;
    if (auto best = get_best_metrics(result.archive, cfg.selection_policy))
      incumbent = Incumbent{best->name, best->architecture, best->metrics};
    const auto bundle =
        generate_prompt(incumbent, cfg.prompt_template, cfg.arch_template, cfg.choices, cfg.env, i, cfg.max_prompt_bytes);

    LogRecord rec;
    rec.iteration = i;
    rec.prompt_hash = bundle.hash();
    detail::CountingBackend counting(backend);
    try {
      auto outcome = design_candidate(bundle, counting, cfg.llm, cfg.choices, [&](const Architecture& a) {
        return result.archive.contains_structure(a);
      });
      ArchiveEntry entry;
      entry.name = result.archive.unique_name(outcome.architecture.name.empty() ? "search-" + std::to_string(i)
                                                                                 : outcome.architecture.name);
      entry.architecture = std::move(outcome.architecture);
      entry.architecture.name = entry.name;
      entry.iteration = i;
      entry.metrics = evaluate(entry.architecture, cfg.evaluator);
      rec.ok = true;
      rec.entry = entry;
      rec.attempts = counting.count();
      rec.timestamp = rfc3339_now();
      append_log(cfg.run_log_path, rec);
      result.archive.insert(std::move(entry));
      ++result.ok_iterations;
    } catch (const ExhaustedRetries& e) {
      log_failure(rec, counting, e);
    } catch (const ProtocolError& e) {
      log_failure(rec, counting, e);
    } catch (const TrainerFailure& e) {
      log_failure(rec, counting, e);
    } catch (const Timeout& e) {
      log_failure(rec, counting, e);
    } catch (const SpawnError& e) {
      log_failure(rec, counting, e);
    }
    result.attempts += rec.attempts;
    if (opts.on_iteration) opts.on_iteration(rec);
  }
  result.best = get_best_metrics(result.archive, cfg.selection_policy);
  return result;
}

}  // namespace flnas
