#pragma once

// Sequential CNN architecture representation: parsing, canonical
// serialization, shape inference and validation against a search space.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "flnas/errors.hpp"
#include "flnas/json_util.hpp"

namespace flnas {

struct TensorShape {
  std::int64_t channels = 1;
  std::int64_t height = 1;
  std::int64_t width = 1;

  std::int64_t numel() const noexcept { return channels * height * width; }
  bool operator==(const TensorShape&) const = default;
};

enum class NormKind { batch, layer, group, none };
enum class ActKind { relu, gelu, sigmoid, tanh };
enum class PoolKind { max, avg };

struct Conv2d {
  std::int64_t out_channels = 1;
  std::int64_t kernel = 1;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  bool bias = true;
  bool operator==(const Conv2d&) const = default;
};

struct Norm {
  NormKind kind = NormKind::batch;
  std::optional<std::int64_t> groups;
  bool operator==(const Norm&) const = default;
};

struct Activation {
  ActKind kind = ActKind::relu;
  bool operator==(const Activation&) const = default;
};

struct Pool {
  PoolKind kind = PoolKind::max;
  std::int64_t size = 2;
  std::int64_t stride = 2;
  bool operator==(const Pool&) const = default;
};

// Global average pooling; the only supported kind.
struct GlobalPool {
  bool operator==(const GlobalPool&) const = default;
};

struct Dropout {
  double p = 0.0;
  bool operator==(const Dropout&) const = default;
};

struct Flatten {
  bool operator==(const Flatten&) const = default;
};

// in_features is inferred from the running shape.
struct Dense {
  std::int64_t out_features = 1;
  bool bias = true;
  bool operator==(const Dense&) const = default;
};

using LayerSpec = std::variant<Conv2d, Norm, Activation, Pool, GlobalPool, Dropout, Flatten, Dense>;

struct Architecture {
  std::string name;
  TensorShape input;
  std::int64_t num_classes = 1;
  std::vector<LayerSpec> layers;

  bool operator==(const Architecture&) const = default;
};

// Equality ignoring the name; used for duplicate detection.
inline bool same_structure(const Architecture& a, const Architecture& b) {
  return a.input == b.input && a.num_classes == b.num_classes && a.layers == b.layers;
}

struct IntRange {
  std::int64_t min = 0;
  std::int64_t max = 0;
  bool contains(std::int64_t v) const noexcept { return v >= min && v <= max; }
  bool operator==(const IntRange&) const = default;
};

// The search space an LLM proposal must stay within.
struct Choices {
  std::set<std::int64_t> kernel_sizes{1, 3, 5, 7};
  IntRange channel_range{8, 256};
  IntRange depth_range{1, 8};
  std::set<NormKind> allowed_norms{NormKind::batch, NormKind::layer, NormKind::group, NormKind::none};
  std::set<ActKind> allowed_activations{ActKind::relu, ActKind::gelu, ActKind::sigmoid, ActKind::tanh};
  bool allow_dropout = true;
  IntRange dense_width_range{8, 1024};

  bool operator==(const Choices&) const = default;
};

struct Violation {
  std::optional<std::size_t> layer_index;  // absent for architecture-level failures
  std::string code;
  std::string message;
  bool operator==(const Violation&) const = default;
};

struct ValidationReport {
  bool valid = false;
  std::vector<TensorShape> per_layer_shapes;
  std::vector<Violation> violations;
};

// ---------------------------------------------------------------------------
// Enum names

inline std::string_view to_string(NormKind k) {
  switch (k) {
    case NormKind::batch: return "batch";
    case NormKind::layer: return "layer";
    case NormKind::group: return "group";
    case NormKind::none: return "none";
  }
  return "none";
}

inline std::string_view to_string(ActKind k) {
  switch (k) {
    case ActKind::relu: return "relu";
    case ActKind::gelu: return "gelu";
    case ActKind::sigmoid: return "sigmoid";
    case ActKind::tanh: return "tanh";
  }
  return "relu";
}

inline std::string_view to_string(PoolKind k) { return k == PoolKind::max ? "max" : "avg"; }

inline NormKind parse_norm_kind(std::string_view s) {
  if (s == "batch") return NormKind::batch;
  if (s == "layer") return NormKind::layer;
  if (s == "group") return NormKind::group;
  if (s == "none") return NormKind::none;
  throw SchemaError("unknown norm kind '" + std::string(s) + "'");
}

inline ActKind parse_act_kind(std::string_view s) {
  if (s == "relu") return ActKind::relu;
  if (s == "gelu") return ActKind::gelu;
  if (s == "sigmoid") return ActKind::sigmoid;
  if (s == "tanh") return ActKind::tanh;
  throw SchemaError("unknown activation kind '" + std::string(s) + "'");
}

inline PoolKind parse_pool_kind(std::string_view s) {
  if (s == "max") return PoolKind::max;
  if (s == "avg") return PoolKind::avg;
  throw SchemaError("unknown pool kind '" + std::string(s) + "'");
}

inline std::string_view op_name(const LayerSpec& layer) {
  return std::visit(
      [](const auto& l) -> std::string_view {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Conv2d>) return "conv2d";
        else if constexpr (std::is_same_v<T, Norm>) return "norm";
        else if constexpr (std::is_same_v<T, Activation>) return "act";
        else if constexpr (std::is_same_v<T, Pool>) return "pool";
        else if constexpr (std::is_same_v<T, GlobalPool>) return "global_pool";
        else if constexpr (std::is_same_v<T, Dropout>) return "dropout";
        else if constexpr (std::is_same_v<T, Flatten>) return "flatten";
        else return "dense";
      },
      layer);
}

inline constexpr std::string_view kLayerOps[] = {"conv2d",  "norm",    "act",  "pool",
                                                 "global_pool", "dropout", "flatten", "dense"};

inline bool is_valid_name(std::string_view name) {
  if (name.empty() || name.size() > 64) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' ||
           c == '-';
  });
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

inline LayerSpec layer_from_json(const Json& j, std::size_t index) {
  const std::string ctx = "layers[" + std::to_string(index) + "]";
  require_object(j, ctx);
  const std::string op = get_string(j, "op", ctx);

  if (op == "conv2d") {
    reject_unknown_keys(j, {"op", "out_channels", "kernel", "stride", "padding", "bias"}, ctx);
    return Conv2d{get_int_min(j, "out_channels", ctx, 1), get_int_min(j, "kernel", ctx, 1),
                  get_int_min(j, "stride", ctx, 1), get_int_min(j, "padding", ctx, 0),
                  get_bool(j, "bias", ctx)};
  }
  if (op == "norm") {
    reject_unknown_keys(j, {"op", "kind", "groups"}, ctx);
    Norm n{parse_norm_kind(get_string(j, "kind", ctx)), std::nullopt};
    if (j.contains("groups")) n.groups = get_int_min(j, "groups", ctx, 1);
    if (n.kind == NormKind::group && !n.groups)
      throw SchemaError("field '" + ctx + ".groups' is required for group norm");
    return n;
  }
  if (op == "act") {
    reject_unknown_keys(j, {"op", "kind"}, ctx);
    return Activation{parse_act_kind(get_string(j, "kind", ctx))};
  }
  if (op == "pool") {
    reject_unknown_keys(j, {"op", "kind", "size", "stride"}, ctx);
    return Pool{parse_pool_kind(get_string(j, "kind", ctx)), get_int_min(j, "size", ctx, 1),
                get_int_min(j, "stride", ctx, 1)};
  }
  if (op == "global_pool") {
    reject_unknown_keys(j, {"op", "kind"}, ctx);
    const auto kind = get_string(j, "kind", ctx);
    if (kind != "avg") throw SchemaError("unknown global_pool kind '" + kind + "'");
    return GlobalPool{};
  }
  if (op == "dropout") {
    reject_unknown_keys(j, {"op", "p"}, ctx);
    const double p = get_number(j, "p", ctx);
    if (!(p >= 0.0 && p < 1.0)) throw SchemaError("field '" + ctx + ".p' must lie in [0, 1)");
    return Dropout{p};
  }
  if (op == "flatten") {
    reject_unknown_keys(j, {"op"}, ctx);
    return Flatten{};
  }
  if (op == "dense") {
    reject_unknown_keys(j, {"op", "out_features", "bias"}, ctx);
    return Dense{get_int_min(j, "out_features", ctx, 1), get_bool(j, "bias", ctx)};
  }
  throw SchemaError("unknown layer op '" + op + "' at " + ctx);
}

inline OrderedJson layer_to_json(const LayerSpec& layer) {
  OrderedJson j;
  j["op"] = op_name(layer);
  std::visit(
      [&j](const auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Conv2d>) {
          j["out_channels"] = l.out_channels;
          j["kernel"] = l.kernel;
          j["stride"] = l.stride;
          j["padding"] = l.padding;
          j["bias"] = l.bias;
        } else if constexpr (std::is_same_v<T, Norm>) {
          j["kind"] = to_string(l.kind);
          if (l.groups) j["groups"] = *l.groups;
        } else if constexpr (std::is_same_v<T, Activation>) {
          j["kind"] = to_string(l.kind);
        } else if constexpr (std::is_same_v<T, Pool>) {
          j["kind"] = to_string(l.kind);
          j["size"] = l.size;
          j["stride"] = l.stride;
        } else if constexpr (std::is_same_v<T, GlobalPool>) {
          j["kind"] = "avg";
        } else if constexpr (std::is_same_v<T, Dropout>) {
          j["p"] = l.p;
        } else if constexpr (std::is_same_v<T, Dense>) {
          j["out_features"] = l.out_features;
          j["bias"] = l.bias;
        }
      },
      layer);
  return j;
}

}  // namespace detail

// Structural parse of an already-decoded JSON value. A missing "name" leaves
// the name empty; callers that store the architecture assign one.
inline Architecture architecture_from_json(const Json& doc) {
  detail::require_object(doc, "architecture");
  detail::reject_unknown_keys(doc, {"name", "input", "num_classes", "layers"}, "");

  Architecture arch;
  if (doc.contains("name")) {
    arch.name = detail::get_string(doc, "name", "");
    if (!is_valid_name(arch.name))
      throw SchemaError("field 'name' must match [A-Za-z0-9_-]{1,64}, got '" + arch.name + "'");
  }

  const Json& input = detail::require_object(detail::require(doc, "input", ""), "input");
  detail::reject_unknown_keys(input, {"channels", "height", "width"}, "input");
  arch.input = TensorShape{detail::get_int_min(input, "channels", "input", 1),
                           detail::get_int_min(input, "height", "input", 1),
                           detail::get_int_min(input, "width", "input", 1)};
  arch.num_classes = detail::get_int_min(doc, "num_classes", "", 1);

  const Json& layers = detail::require(doc, "layers", "");
  if (!layers.is_array()) throw SchemaError("field 'layers' must be an array");
  if (layers.empty()) throw SchemaError("field 'layers' must not be empty");
  arch.layers.reserve(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) arch.layers.push_back(detail::layer_from_json(layers[i], i));
  return arch;
}

// Throws ParseError on malformed JSON and SchemaError on schema violations.
// Shape inference is not run here.
inline Architecture parse_architecture(std::string_view text) {
  return architecture_from_json(detail::parse_json_text(text));
}

inline OrderedJson architecture_to_json(const Architecture& arch) {
  if (!is_valid_name(arch.name))
    throw SchemaError("cannot serialize architecture with invalid name '" + arch.name + "'");
  if (arch.layers.empty()) throw SchemaError("cannot serialize architecture without layers");
  OrderedJson j;
  j["name"] = arch.name;
  j["input"] = {{"channels", arch.input.channels},
                {"height", arch.input.height},
                {"width", arch.input.width}};
  j["num_classes"] = arch.num_classes;
  j["layers"] = OrderedJson::array();
  for (const auto& layer : arch.layers) j["layers"].push_back(detail::layer_to_json(layer));
  return j;
}

// Canonical single-line form with fixed key order.
inline std::string serialize_architecture(const Architecture& arch) {
  return architecture_to_json(arch).dump();
}

// ---------------------------------------------------------------------------
// Shape inference

// Output shapes per layer plus whether each output is a flat feature vector.
struct ShapeTrace {
  std::vector<TensorShape> shapes;
  std::vector<bool> flat;
};

inline ShapeTrace trace_shapes(const Architecture& arch) {
  ShapeTrace trace;
  trace.shapes.reserve(arch.layers.size());
  trace.flat.reserve(arch.layers.size());

  TensorShape cur = arch.input;
  bool flat = false;

  auto window = [](std::int64_t in, std::int64_t kernel, std::int64_t stride, std::int64_t padding)
      -> std::int64_t {
    const std::int64_t span = in + 2 * padding - kernel;
    if (span < 0) return 0;
    return span / stride + 1;
  };

  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& layer = arch.layers[i];
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, Conv2d>) {
            if (flat) throw ShapeError(i, "conv2d cannot follow flatten");
            const auto h = window(cur.height, l.kernel, l.stride, l.padding);
            const auto w = window(cur.width, l.kernel, l.stride, l.padding);
            if (h < 1 || w < 1)
              throw ShapeError(i, "conv2d output spatial size falls below 1 (input " +
                                      std::to_string(cur.height) + "x" + std::to_string(cur.width) + ")");
            cur = TensorShape{l.out_channels, h, w};
          } else if constexpr (std::is_same_v<T, Pool>) {
            if (flat) throw ShapeError(i, "pool cannot follow flatten");
            const auto h = window(cur.height, l.size, l.stride, 0);
            const auto w = window(cur.width, l.size, l.stride, 0);
            if (h < 1 || w < 1)
              throw ShapeError(i, "pool output spatial size falls below 1 (input " +
                                      std::to_string(cur.height) + "x" + std::to_string(cur.width) + ")");
            cur = TensorShape{cur.channels, h, w};
          } else if constexpr (std::is_same_v<T, GlobalPool>) {
            if (flat) throw ShapeError(i, "global_pool cannot follow flatten");
            cur = TensorShape{cur.channels, 1, 1};
          } else if constexpr (std::is_same_v<T, Flatten>) {
            cur = TensorShape{cur.numel(), 1, 1};
            flat = true;
          } else if constexpr (std::is_same_v<T, Dense>) {
            if (!flat) throw ShapeError(i, "dense requires a flattened input");
            cur = TensorShape{l.out_features, 1, 1};
          } else if constexpr (std::is_same_v<T, Norm>) {
            if (l.kind == NormKind::group) {
              if (!l.groups || cur.channels % *l.groups != 0)
                throw ShapeError(i, "group norm groups (" + std::to_string(l.groups.value_or(0)) +
                                        ") must divide channels (" + std::to_string(cur.channels) + ")");
            }
          }
          // Activation and Dropout preserve shape.
        },
        layer);
    trace.shapes.push_back(cur);
    trace.flat.push_back(flat);
  }

  const std::size_t last = arch.layers.empty() ? 0 : arch.layers.size() - 1;
  if (arch.layers.empty()) throw ShapeError(0, "architecture has no layers");
  if (!flat || cur.channels != arch.num_classes)
    throw ShapeError(last, "final output must be a flat vector of length " + std::to_string(arch.num_classes) +
                               ", got (" + std::to_string(cur.channels) + "," + std::to_string(cur.height) +
                               "," + std::to_string(cur.width) + ")" + (flat ? "" : " unflattened"));
  return trace;
}

// Output shape after each layer; throws ShapeError at the first offending layer.
inline std::vector<TensorShape> infer_shapes(const Architecture& arch) { return trace_shapes(arch).shapes; }

// ---------------------------------------------------------------------------
// Choices and validation

inline Choices choices_from_json(const Json& doc) {
  detail::require_object(doc, "choices");
  detail::reject_unknown_keys(doc,
                              {"kernel_sizes", "channel_range", "depth_range", "allowed_norms",
                               "allowed_activations", "allow_dropout", "dense_width_range"},
                              "");
  auto range = [&](std::string_view key) {
    const Json& v = detail::require(doc, key, "");
    if (!v.is_array() || v.size() != 2) throw SchemaError("field '" + std::string(key) + "' must be [min, max]");
    IntRange r{detail::as_int(v[0], key), detail::as_int(v[1], key)};
    if (r.min > r.max) throw SchemaError("field '" + std::string(key) + "' has min > max");
    return r;
  };
  auto array = [&](std::string_view key) -> const Json& {
    const Json& v = detail::require(doc, key, "");
    if (!v.is_array()) throw SchemaError("field '" + std::string(key) + "' must be an array");
    return v;
  };

  Choices c;
  c.kernel_sizes.clear();
  for (const auto& k : array("kernel_sizes")) {
    const auto v = detail::as_int(k, "kernel_sizes");
    if (v < 1 || v % 2 == 0) throw SchemaError("kernel_sizes entries must be positive odd integers");
    c.kernel_sizes.insert(v);
  }
  if (c.kernel_sizes.empty()) throw SchemaError("kernel_sizes must not be empty");
  c.channel_range = range("channel_range");
  c.depth_range = range("depth_range");
  c.dense_width_range = range("dense_width_range");
  c.allowed_norms.clear();
  for (const auto& n : array("allowed_norms")) {
    if (!n.is_string()) throw SchemaError("allowed_norms entries must be strings");
    c.allowed_norms.insert(parse_norm_kind(n.get<std::string>()));
  }
  c.allowed_activations.clear();
  for (const auto& a : array("allowed_activations")) {
    if (!a.is_string()) throw SchemaError("allowed_activations entries must be strings");
    c.allowed_activations.insert(parse_act_kind(a.get<std::string>()));
  }
  c.allow_dropout = detail::get_bool(doc, "allow_dropout", "");
  return c;
}

inline Choices parse_choices(std::string_view text) { return choices_from_json(detail::parse_json_text(text)); }

inline OrderedJson choices_to_json(const Choices& c) {
  OrderedJson j;
  j["kernel_sizes"] = OrderedJson::array();
  for (auto k : c.kernel_sizes) j["kernel_sizes"].push_back(k);
  j["channel_range"] = {c.channel_range.min, c.channel_range.max};
  j["depth_range"] = {c.depth_range.min, c.depth_range.max};
  j["allowed_norms"] = OrderedJson::array();
  for (auto n : c.allowed_norms) j["allowed_norms"].push_back(to_string(n));
  j["allowed_activations"] = OrderedJson::array();
  for (auto a : c.allowed_activations) j["allowed_activations"].push_back(to_string(a));
  j["allow_dropout"] = c.allow_dropout;
  j["dense_width_range"] = {c.dense_width_range.min, c.dense_width_range.max};
  return j;
}

inline std::string serialize_choices(const Choices& c) { return choices_to_json(c).dump(); }

// Collects every violation instead of stopping at the first. The last dense
// layer is the classifier; its width is fixed by num_classes and exempt from
// dense_width_range.
inline ValidationReport validate(const Architecture& arch, const Choices& choices) {
  ValidationReport report;
  auto add = [&report](std::optional<std::size_t> idx, std::string code, std::string msg) {
    report.violations.push_back(Violation{idx, std::move(code), std::move(msg)});
  };

  try {
    report.per_layer_shapes = infer_shapes(arch);
  } catch (const ShapeError& e) {
    add(e.layer_index(), "SHAPE_ERROR", e.detail());
  }

  std::optional<std::size_t> classifier;
  for (std::size_t i = arch.layers.size(); i-- > 0;) {
    if (std::holds_alternative<Dense>(arch.layers[i])) {
      classifier = i;
      break;
    }
  }

  std::int64_t conv_count = 0;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& layer = arch.layers[i];
    if (const auto* c = std::get_if<Conv2d>(&layer)) {
      ++conv_count;
      if (!choices.kernel_sizes.count(c->kernel))
        add(i, "KERNEL_NOT_ALLOWED", "kernel " + std::to_string(c->kernel) + " is not an allowed kernel size");
      if (!choices.channel_range.contains(c->out_channels))
        add(i, "CHANNELS_OUT_OF_RANGE",
            "out_channels " + std::to_string(c->out_channels) + " outside [" +
                std::to_string(choices.channel_range.min) + ", " + std::to_string(choices.channel_range.max) + "]");
    } else if (const auto* n = std::get_if<Norm>(&layer)) {
      if (!choices.allowed_norms.count(n->kind))
        add(i, "NORM_NOT_ALLOWED", "norm kind '" + std::string(to_string(n->kind)) + "' is not allowed");
    } else if (const auto* a = std::get_if<Activation>(&layer)) {
      if (!choices.allowed_activations.count(a->kind))
        add(i, "ACTIVATION_NOT_ALLOWED", "activation '" + std::string(to_string(a->kind)) + "' is not allowed");
    } else if (std::holds_alternative<Dropout>(layer)) {
      if (!choices.allow_dropout) add(i, "DROPOUT_NOT_ALLOWED", "dropout is not allowed");
    } else if (const auto* d = std::get_if<Dense>(&layer)) {
      if (i != classifier && !choices.dense_width_range.contains(d->out_features))
        add(i, "DENSE_WIDTH_OUT_OF_RANGE",
            "out_features " + std::to_string(d->out_features) + " outside [" +
                std::to_string(choices.dense_width_range.min) + ", " +
                std::to_string(choices.dense_width_range.max) + "]");
    }
  }
  if (!choices.depth_range.contains(conv_count))
    add(std::nullopt, "DEPTH_OUT_OF_RANGE",
        "conv layer count " + std::to_string(conv_count) + " outside [" + std::to_string(choices.depth_range.min) +
            ", " + std::to_string(choices.depth_range.max) + "]");

  report.valid = report.violations.empty();
  if (!report.valid && !report.per_layer_shapes.empty()) {
    // keep shapes only for valid reports
    report.per_layer_shapes.clear();
  }
  return report;
}

inline OrderedJson validation_report_to_json(const ValidationReport& r) {
  OrderedJson j;
  j["valid"] = r.valid;
  if (r.valid) {
    j["per_layer_shapes"] = OrderedJson::array();
    for (const auto& s : r.per_layer_shapes) j["per_layer_shapes"].push_back({s.channels, s.height, s.width});
  }
  j["violations"] = OrderedJson::array();
  for (const auto& v : r.violations) {
    OrderedJson vj;
    vj["layer_index"] = v.layer_index ? OrderedJson(*v.layer_index) : OrderedJson(nullptr);
    vj["code"] = v.code;
    vj["message"] = v.message;
    j["violations"].push_back(vj);
  }
  return j;
}

// Human-readable violation list, one per line.
inline std::string render_violations(const std::vector<Violation>& violations) {
  std::string out;
  for (const auto& v : violations) {
    out += "- ";
    out += v.code;
    if (v.layer_index) out += " (layer " + std::to_string(*v.layer_index) + ")";
    out += ": " + v.message + "\n";
  }
  return out;
}

}  // namespace flnas
