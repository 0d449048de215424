#pragma once

// Hardware-efficiency metrics computed from an Architecture alone.
// Latency is an analytic model driven by a declared DeviceProfile.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>

#include "flnas/arch_ir.hpp"
#include "flnas/json_util.hpp"

namespace flnas {

struct DeviceProfile {
  std::string name = "generic";
  double flops_per_second = 1e12;
  double per_layer_overhead_s = 0.0;
  std::int64_t bytes_per_scalar = 4;
  std::optional<std::int64_t> memory_limit_bytes;

  bool operator==(const DeviceProfile&) const = default;
};

struct CostReport {
  std::int64_t param_count = 0;
  std::int64_t flops = 0;  // one multiply-accumulate counts as 2
  std::int64_t peak_memory_bytes = 0;
  double latency_s = 0.0;  // for the whole batch
  double throughput_items_per_s = 0.0;
  std::int64_t batch = 1;

  double latency_per_item_s() const { return batch > 0 ? latency_s / static_cast<double>(batch) : 0.0; }
  bool operator==(const CostReport&) const = default;
};

struct LatencyEstimate {
  double latency_s = 0.0;
  double throughput_items_per_s = 0.0;
};

inline DeviceProfile device_profile_from_json(const Json& doc) {
  detail::require_object(doc, "device profile");
  detail::reject_unknown_keys(doc, {"name", "flops_per_second", "per_layer_overhead_s", "bytes_per_scalar",
                                    "memory_limit_bytes", "comment"},
                              "");
  DeviceProfile p;
  p.name = detail::get_string(doc, "name", "");
  if (!is_valid_name(p.name)) throw SchemaError("device profile name must match [A-Za-z0-9_-]{1,64}");
  p.flops_per_second = detail::get_number(doc, "flops_per_second", "");
  if (!(p.flops_per_second > 0)) throw SchemaError("flops_per_second must be > 0");
  p.per_layer_overhead_s = detail::get_number(doc, "per_layer_overhead_s", "");
  if (!(p.per_layer_overhead_s >= 0)) throw SchemaError("per_layer_overhead_s must be >= 0");
  p.bytes_per_scalar = detail::get_int(doc, "bytes_per_scalar", "");
  if (p.bytes_per_scalar != 2 && p.bytes_per_scalar != 4 && p.bytes_per_scalar != 8)
    throw SchemaError("bytes_per_scalar must be 2, 4 or 8");
  if (doc.contains("memory_limit_bytes") && !doc["memory_limit_bytes"].is_null())
    p.memory_limit_bytes = detail::get_int_min(doc, "memory_limit_bytes", "", 1);
  return p;
}

inline DeviceProfile parse_device_profile(std::string_view text) {
  return device_profile_from_json(detail::parse_json_text(text));
}

inline OrderedJson device_profile_to_json(const DeviceProfile& p) {
  OrderedJson j;
  j["name"] = p.name;
  j["flops_per_second"] = p.flops_per_second;
  j["per_layer_overhead_s"] = p.per_layer_overhead_s;
  j["bytes_per_scalar"] = p.bytes_per_scalar;
  if (p.memory_limit_bytes) j["memory_limit_bytes"] = *p.memory_limit_bytes;
  return j;
}

namespace detail {

inline std::int64_t layer_params(const LayerSpec& layer, const TensorShape& in) {
  return std::visit(
      [&](const auto& l) -> std::int64_t {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Conv2d>) {
          return l.kernel * l.kernel * in.channels * l.out_channels + (l.bias ? l.out_channels : 0);
        } else if constexpr (std::is_same_v<T, Dense>) {
          return in.channels * l.out_features + (l.bias ? l.out_features : 0);
        } else if constexpr (std::is_same_v<T, Norm>) {
          return l.kind == NormKind::none ? 0 : 2 * in.channels;
        } else {
          return 0;
        }
      },
      layer);
}

// Per-item FLOPs of one layer given its input and output shapes.
inline std::int64_t layer_flops(const LayerSpec& layer, const TensorShape& in, const TensorShape& out) {
  return std::visit(
      [&](const auto& l) -> std::int64_t {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Conv2d>) {
          return 2 * l.kernel * l.kernel * in.channels * l.out_channels * out.height * out.width;
        } else if constexpr (std::is_same_v<T, Dense>) {
          return 2 * in.channels * l.out_features;
        } else if constexpr (std::is_same_v<T, Pool> || std::is_same_v<T, GlobalPool>) {
          return in.numel();
        } else if constexpr (std::is_same_v<T, Norm>) {
          return 4 * in.numel();
        } else if constexpr (std::is_same_v<T, Activation>) {
          return in.numel();
        } else {
          return 0;
        }
      },
      layer);
}

}  // namespace detail

// Throws ShapeError when the architecture does not shape-check.
inline std::int64_t count_parameters(const Architecture& arch) {
  const auto shapes = infer_shapes(arch);
  std::int64_t total = 0;
  TensorShape in = arch.input;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    total += detail::layer_params(arch.layers[i], in);
    in = shapes[i];
  }
  return total;
}

inline std::int64_t count_flops(const Architecture& arch, std::int64_t batch) {
  if (batch < 1) throw Error("batch must be >= 1");
  const auto shapes = infer_shapes(arch);
  std::int64_t per_item = 0;
  TensorShape in = arch.input;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    per_item += detail::layer_flops(arch.layers[i], in, shapes[i]);
    in = shapes[i];
  }
  return per_item * batch;
}

// Weights resident plus the largest simultaneous input/output activation pair.
inline std::int64_t estimate_peak_memory(const Architecture& arch, std::int64_t batch, const DeviceProfile& profile) {
  if (batch < 1) throw Error("batch must be >= 1");
  const auto shapes = infer_shapes(arch);
  std::int64_t params = 0;
  std::int64_t peak_pair = 0;
  TensorShape in = arch.input;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    params += detail::layer_params(arch.layers[i], in);
    peak_pair = std::max(peak_pair, in.numel() + shapes[i].numel());
    in = shapes[i];
  }
  return params * profile.bytes_per_scalar + batch * profile.bytes_per_scalar * peak_pair;
}

inline LatencyEstimate latency_from_flops(std::int64_t flops, std::size_t layer_count, std::int64_t batch,
                                          const DeviceProfile& profile) {
  LatencyEstimate e;
  e.latency_s = static_cast<double>(flops) / profile.flops_per_second +
                static_cast<double>(layer_count) * profile.per_layer_overhead_s;
  e.throughput_items_per_s = e.latency_s > 0 ? static_cast<double>(batch) / e.latency_s : 0.0;
  return e;
}

inline LatencyEstimate estimate_latency(const Architecture& arch, std::int64_t batch, const DeviceProfile& profile) {
  return latency_from_flops(count_flops(arch, batch), arch.layers.size(), batch, profile);
}

inline CostReport analyze_cost(const Architecture& arch, std::int64_t batch, const DeviceProfile& profile) {
  CostReport r;
  r.batch = batch;
  r.param_count = count_parameters(arch);
  r.flops = count_flops(arch, batch);
  r.peak_memory_bytes = estimate_peak_memory(arch, batch, profile);
  const auto lat = latency_from_flops(r.flops, arch.layers.size(), batch, profile);
  r.latency_s = lat.latency_s;
  r.throughput_items_per_s = lat.throughput_items_per_s;
  return r;
}

inline OrderedJson cost_report_to_json(const CostReport& c) {
  OrderedJson j;
  j["param_count"] = c.param_count;
  j["flops"] = c.flops;
  j["peak_memory_bytes"] = c.peak_memory_bytes;
  j["latency_s"] = c.latency_s;
  j["throughput_items_per_s"] = c.throughput_items_per_s;
  j["batch"] = c.batch;
  return j;
}

inline CostReport cost_report_from_json(const Json& j) {
  detail::require_object(j, "cost");
  CostReport c;
  c.param_count = detail::get_int(j, "param_count", "cost");
  c.flops = detail::get_int(j, "flops", "cost");
  c.peak_memory_bytes = detail::get_int(j, "peak_memory_bytes", "cost");
  c.latency_s = detail::get_number(j, "latency_s", "cost");
  c.throughput_items_per_s = detail::get_number(j, "throughput_items_per_s", "cost");
  c.batch = j.contains("batch") ? detail::get_int(j, "batch", "cost") : 1;
  return c;
}

}  // namespace flnas
