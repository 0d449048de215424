#pragma once

// The flnas command line: search, analyze, fairness, validate, inspect.
// Exit codes: 0 success, 1 reported validation/metric failure, 2 usage or
// input error, 3 backend failure.

#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flnas/arch_ir.hpp"
#include "flnas/evaluation.hpp"
#include "flnas/fairness.hpp"
#include "flnas/io.hpp"
#include "flnas/llm_designer.hpp"
#include "flnas/search.hpp"
#include "flnas/static_analysis.hpp"

namespace flnas::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitBackend = 3;

namespace detail {

using flnas::detail::format;

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

inline OrderedJson entry_to_json(const ArchiveEntry& e) {
  OrderedJson j;
  j["name"] = e.name;
  j["iteration"] = e.iteration;
  j["architecture"] = architecture_to_json(e.architecture);
  j["metrics"] = metrics_to_json(e.metrics);
  return j;
}

// ---------------------------------------------------------------------------

struct SearchArgs {
  std::string config;
  std::optional<int> iters;
  std::string llm;
  std::string mock_replies;
  std::string out_path;
  bool resume = false;
  bool json = false;
};

inline int cmd_search(const SearchArgs& a, Streams io) {
  auto cfg = load_search_config(a.config);
  if (a.iters) cfg.iter_max = *a.iters;
  if (!a.out_path.empty()) cfg.run_log_path = a.out_path;
  if (!a.mock_replies.empty()) cfg.mock_replies_path = a.mock_replies;
  if (a.llm == "mock") cfg.llm_backend = LlmBackendKind::mock;
  else if (a.llm == "http") cfg.llm_backend = LlmBackendKind::http;

  std::unique_ptr<ChatBackend> backend;
  if (cfg.llm_backend == LlmBackendKind::mock) {
    if (cfg.mock_replies_path.empty()) throw ConfigError("the mock backend needs --mock-replies or mock_replies");
    backend = std::make_unique<ScriptedBackend>(ScriptedBackend::from_file(cfg.mock_replies_path));
  } else {
    backend = std::make_unique<HttpChatBackend>(cfg.llm);
  }

  SearchOptions opts;
  opts.resume = a.resume;
  if (!a.json) {
    opts.on_iteration = [&io](const LogRecord& r) {
      if (r.ok)
        io.out << format("iteration %d: %s (attempts %d) unfairness %.4f, valid acc %.2f%%, params %lld\n",
                         r.iteration, r.entry->name.c_str(), r.attempts, r.entry->metrics.unfairness,
                         r.entry->metrics.valid_acc * 100.0, static_cast<long long>(r.entry->metrics.cost.param_count));
      else
        io.out << format("iteration %d: failed after %d attempts: %s\n", r.iteration, r.attempts, r.error.c_str());
    };
  }
  const auto result = run_search(cfg, *backend, opts);

  if (a.json) {
    OrderedJson j;
    j["best"] = result.best ? entry_to_json(*result.best) : OrderedJson(nullptr);
    j["archive_size"] = result.archive.size();
    j["ok_iterations"] = result.ok_iterations;
    j["failed_iterations"] = result.failed_iterations;
    j["attempts"] = result.attempts;
    j["run_log"] = cfg.run_log_path;
    io.out << j.dump(2) << "\n";
  } else {
    io.out << "run log: " << cfg.run_log_path << "\n";
    if (result.best) io.out << "best: " << result.best->name << " | " << format_metrics_report(result.best->metrics) << "\n";
    else io.out << "best: none (no iteration produced a valid architecture)\n";
  }
  return result.best ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------

inline int cmd_analyze(const std::string& arch_path, const std::string& device_path, std::int64_t batch, bool json,
                       Streams io) {
  const auto arch = parse_architecture(read_text_file(arch_path));
  const auto device = parse_device_profile(read_text_file(device_path));
  try {
    (void)trace_shapes(arch);
  } catch (const ShapeError& e) {
    ValidationReport report;
    report.violations.push_back({e.layer_index(), "SHAPE_ERROR", e.detail()});
    if (json) io.out << validation_report_to_json(report).dump(2) << "\n";
    else io.out << "invalid architecture:\n" << render_violations(report.violations);
    return kExitFailure;
  }
  const auto cost = analyze_cost(arch, batch, device);
  if (json) {
    OrderedJson j;
    j["name"] = arch.name;
    j["device"] = device.name;
    j["cost"] = cost_report_to_json(cost);
    io.out << j.dump(2) << "\n";
    return kExitOk;
  }
  io.out << "architecture: " << (arch.name.empty() ? "(unnamed)" : arch.name) << "\n";
  io.out << "device: " << device.name << "\n";
  io.out << "batch: " << cost.batch << "\n";
  io.out << "param_count: " << cost.param_count << "\n";
  io.out << "flops: " << cost.flops << "\n";
  io.out << format("peak_memory_bytes: %lld (%.2f MB)\n", static_cast<long long>(cost.peak_memory_bytes),
                   static_cast<double>(cost.peak_memory_bytes) / kBytesPerMB);
  io.out << format("latency: %.6f s per batch, %.6f s per item\n", cost.latency_s, cost.latency_per_item_s());
  io.out << format("throughput: %.2f items per second\n", cost.throughput_items_per_s);
  if (device.memory_limit_bytes && cost.peak_memory_bytes > *device.memory_limit_bytes)
    io.out << "warning: peak memory exceeds the device limit\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline int cmd_fairness(const std::string& csv_path, const std::string& schema_path, bool json, Streams io) {
  const auto schema = parse_schema(read_text_file(schema_path));
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open '" + csv_path + "'");
  const auto records = read_predictions_csv(in, schema);
  const auto s = summarize_fairness(records, schema);
  const bool all_defined = s.eodd && s.eopp1 && s.eopp2;
  if (json) {
    OrderedJson j;
    j["records"] = records.size();
    j["accuracy"] = s.accuracy;
    j["unfairness"] = s.unfairness;
    j["eodd"] = flnas::detail::optional_number(s.eodd);
    j["eopp1"] = flnas::detail::optional_number(s.eopp1);
    j["eopp2"] = flnas::detail::optional_number(s.eopp2);
    j["group_detail"] = OrderedJson::array();
    for (const auto& g : s.group_detail)
      j["group_detail"].push_back(
          {{"attribute", g.attribute}, {"group", g.group}, {"accuracy", g.accuracy}, {"count", g.count}, {"correct", g.correct}});
    io.out << j.dump(2) << "\n";
  } else {
    io.out << format("Accuracy: %.2f%%, ", s.accuracy * 100.0)
           << format_fairness_fields(s.unfairness, s.eodd, s.eopp1, s.eopp2, s.group_detail) << "\n";
    if (!all_defined) io.err << "some scores are undefined: no class has positives and negatives in both groups\n";
  }
  return all_defined ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------

inline int cmd_validate(const std::string& arch_path, const std::string& choices_path, bool json, Streams io) {
  const auto arch = parse_architecture(read_text_file(arch_path));
  const auto choices = parse_choices(read_text_file(choices_path));
  const auto report = validate(arch, choices);
  if (json) {
    io.out << validation_report_to_json(report).dump(2) << "\n";
  } else if (report.valid) {
    io.out << "valid: " << arch.layers.size() << " layers, output " << report.per_layer_shapes.back().numel()
           << " values\n";
  } else {
    io.out << "invalid architecture:\n" << render_violations(report.violations);
  }
  return report.valid ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------

inline int cmd_inspect(const std::string& log_path, bool json, Streams io) {
  const auto run = load_run(log_path);
  const auto best = get_best_metrics(run.archive);
  if (json) {
    OrderedJson j;
    j["iterations"] = run.records.size();
    j["last_iteration"] = run.last_iteration;
    j["archive_size"] = run.archive.size();
    j["attempts"] = run.total_attempts;
    j["torn_lines_dropped"] = run.warnings;
    j["best"] = best ? entry_to_json(*best) : OrderedJson(nullptr);
    io.out << j.dump(2) << "\n";
  } else {
    for (const auto& r : run.records) {
      if (r.ok)
        io.out << format("%3d  %-24s attempts %d  unfairness %.4f  valid acc %.2f%%  params %lld\n", r.iteration,
                         r.entry->name.c_str(), r.attempts, r.entry->metrics.unfairness,
                         r.entry->metrics.valid_acc * 100.0, static_cast<long long>(r.entry->metrics.cost.param_count));
      else
        io.out << format("%3d  %-24s attempts %d  %s\n", r.iteration, "(failed)", r.attempts, r.error.c_str());
    }
    if (run.warnings) io.err << "warning: dropped a torn final line\n";
    if (best) io.out << "best: " << best->name << " | " << format_metrics_report(best->metrics) << "\n";
    else io.out << "best: none\n";
  }
  return kExitOk;
}

}  // namespace detail

// Parses and dispatches; never throws.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"LLM-guided, fairness-aware neural architecture search", "flnas"};
  app.require_subcommand(1);
  detail::Streams io{out, err};

  detail::SearchArgs search;
  auto* s = app.add_subcommand("search", "Run the search loop");
  s->add_option("--config", search.config, "Search config file")->required();
  s->add_option("--iters", search.iters, "Override iter_max")->check(CLI::PositiveNumber);
  s->add_option("--llm", search.llm, "LLM backend")->check(CLI::IsMember({"mock", "http"}));
  s->add_option("--mock-replies", search.mock_replies, "Scripted replies, one JSON string per line");
  s->add_option("--out", search.out_path, "Run log path");
  s->add_flag("--resume", search.resume, "Continue an interrupted run log");
  s->add_flag("--json", search.json, "JSON output");

  std::string arch_path, device_path, csv_path, schema_path, choices_path, log_path;
  std::int64_t batch = 1;
  bool json = false;
  auto* a = app.add_subcommand("analyze", "Static cost of one architecture");
  a->add_option("arch", arch_path, "Architecture document")->required();
  a->add_option("--device", device_path, "Device profile")->required();
  a->add_option("--batch", batch, "Batch size")->check(CLI::PositiveNumber);
  a->add_flag("--json", json, "JSON output");

  auto* f = app.add_subcommand("fairness", "Fairness scores from a predictions CSV");
  f->add_option("csv", csv_path, "Predictions CSV")->required();
  f->add_option("--schema", schema_path, "Demographic schema")->required();
  f->add_flag("--json", json, "JSON output");

  auto* v = app.add_subcommand("validate", "Check an architecture against the design space");
  v->add_option("arch", arch_path, "Architecture document")->required();
  v->add_option("--choices", choices_path, "Design-space choices")->required();
  v->add_flag("--json", json, "JSON output");

  auto* i = app.add_subcommand("inspect", "Summarize a run log");
  i->add_option("log", log_path, "Run log")->required();
  i->add_flag("--json", json, "JSON output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (s->parsed()) return detail::cmd_search(search, io);
    if (a->parsed()) return detail::cmd_analyze(arch_path, device_path, batch, json, io);
    if (f->parsed()) return detail::cmd_fairness(csv_path, schema_path, json, io);
    if (v->parsed()) return detail::cmd_validate(arch_path, choices_path, json, io);
    if (i->parsed()) return detail::cmd_inspect(log_path, json, io);
  } catch (const TransportError& e) {
    err << "error: " << e.what() << "\n";
    return kExitBackend;
  } catch (const ApiError& e) {
    err << "error: " << e.what() << "\n";
    return kExitBackend;
  } catch (const MalformedResponse& e) {
    err << "error: " << e.what() << "\n";
    return kExitBackend;
  } catch (const TrainerFailure& e) {
    err << "error: " << e.what() << "\n" << e.stderr_tail();
    return kExitBackend;
  } catch (const Timeout& e) {
    err << "error: " << e.what() << "\n";
    return kExitBackend;
  } catch (const SpawnError& e) {
    err << "error: " << e.what() << "\n";
    return kExitBackend;
  } catch (const ProtocolError& e) {
    err << "error: " << e.what() << "\n";
    return kExitBackend;
  } catch (const ExhaustedRetries& e) {
    err << "error: " << e.what() << "\n" << render_violations(e.last_violations());
    return kExitFailure;
  } catch (const Error& e) {
    // Unreadable, unparseable or mismatched input.
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace flnas::cli
