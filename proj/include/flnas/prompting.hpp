#pragma once

// Three-part designer prompt: application framing (system message), then the
// task/format instruction and the constraint narrative (user message).
//
// Prompt wording lives in a template file with two sections:
//
//   [system]
//   ...text...
//   [user]
//   ...text with {template} {arch} {eval} {env} {choices}...
//
// "{{" and "}}" produce literal braces. Substituted values are never
// re-scanned, so JSON inside them is safe.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "flnas/arch_ir.hpp"
#include "flnas/errors.hpp"
#include "flnas/fairness.hpp"
#include "flnas/hash.hpp"
#include "flnas/static_analysis.hpp"

namespace flnas {

inline constexpr std::string_view kColdStartArch = "none yet — propose an initial design";
inline constexpr std::string_view kColdStartEval = "none yet";
inline constexpr std::size_t kDefaultMaxPromptBytes = 64 * 1024;

class PromptTooLarge : public Error {
 public:
  PromptTooLarge(std::size_t size, std::size_t limit)
      : Error("prompt is " + std::to_string(size) + " bytes, limit is " + std::to_string(limit)), size_(size) {}
  std::size_t size() const noexcept { return size_; }

 private:
  std::size_t size_;
};

struct PromptTemplate {
  std::string system;
  std::string user;
};

struct PromptBundle {
  std::string system_text;
  std::string user_text;
  int iteration = 1;
  std::optional<std::string> best_name;

  std::string hash() const { return hex64(fnv1a64(user_text, fnv1a64(system_text))); }
};

// Best-so-far entry handed to the generator; absent on the first iteration.
struct Incumbent {
  std::string name;
  Architecture architecture;
  MetricsRecord metrics;
};

namespace detail {

inline constexpr std::string_view kPlaceholders[] = {"template", "arch", "eval", "env", "choices"};

struct Piece {
  bool is_slot;
  std::string text;  // literal text or slot name
};

inline std::vector<Piece> tokenize_template(std::string_view text, std::string_view section) {
  std::vector<Piece> pieces;
  std::string literal;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '{' && i + 1 < text.size() && text[i + 1] == '{') {
      literal += '{';
      ++i;
    } else if (c == '}' && i + 1 < text.size() && text[i + 1] == '}') {
      literal += '}';
      ++i;
    } else if (c == '{') {
      const auto close = text.find('}', i);
      if (close == std::string_view::npos) throw TemplateError("unterminated placeholder in [" + std::string(section) + "]");
      const std::string name(text.substr(i + 1, close - i - 1));
      if (std::find(std::begin(kPlaceholders), std::end(kPlaceholders), name) == std::end(kPlaceholders))
        throw TemplateError("unknown placeholder {" + name + "} in [" + std::string(section) + "]");
      if (!literal.empty()) pieces.push_back({false, std::move(literal)});
      literal.clear();
      pieces.push_back({true, name});
      i = close;
    } else if (c == '}') {
      throw TemplateError("stray '}' in [" + std::string(section) + "]");
    } else {
      literal += c;
    }
  }
  if (!literal.empty()) pieces.push_back({false, std::move(literal)});
  return pieces;
}

inline std::string trim_newlines(std::string s) {
  while (!s.empty() && (s.front() == '\n' || s.front() == '\r')) s.erase(s.begin());
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

}  // namespace detail

// Throws TemplateError when a section is missing, a placeholder is unknown,
// or the user section lacks one of the five required slots.
inline PromptTemplate parse_prompt_template(std::string_view text) {
  const std::string_view sys_tag = "[system]\n";
  const std::string_view user_tag = "\n[user]\n";
  if (text.rfind(sys_tag, 0) != 0) throw TemplateError("prompt template must start with a [system] line");
  const auto user_at = text.find(user_tag);
  if (user_at == std::string_view::npos) throw TemplateError("prompt template has no [user] section");

  PromptTemplate t;
  t.system = detail::trim_newlines(std::string(text.substr(sys_tag.size(), user_at - sys_tag.size())));
  t.user = detail::trim_newlines(std::string(text.substr(user_at + user_tag.size())));
  if (t.system.empty()) throw TemplateError("[system] section is empty");

  for (const auto& p : detail::tokenize_template(t.system, "system"))
    if (p.is_slot) throw TemplateError("placeholders are not allowed in [system]");
  const auto pieces = detail::tokenize_template(t.user, "user");
  for (auto name : detail::kPlaceholders) {
    const bool found = std::any_of(pieces.begin(), pieces.end(), [&](const detail::Piece& p) { return p.is_slot && p.text == name; });
    if (!found) throw TemplateError("[user] section lacks placeholder {" + std::string(name) + "}");
  }
  return t;
}

inline std::string render_environment(const DeviceProfile& env) {
  std::string out = env.name;
  if (env.memory_limit_bytes)
    out += detail::format(" (memory limit %.2f MB)", static_cast<double>(*env.memory_limit_bytes) / kBytesPerMB);
  return out;
}

// Assemble the prompt for one iteration. `arch_template` is the format
// description (schema plus example) substituted for {template}.
inline PromptBundle generate_prompt(const std::optional<Incumbent>& best, const PromptTemplate& tmpl,
                                    std::string_view arch_template, const Choices& choices, const DeviceProfile& env,
                                    int iteration, std::size_t max_bytes = kDefaultMaxPromptBytes) {
  if (iteration < 1) throw Error("iteration must be >= 1");

  PromptBundle bundle;
  bundle.iteration = iteration;
  bundle.system_text = tmpl.system;

  std::string arch_text(kColdStartArch);
  std::string eval_text(kColdStartEval);
  if (best) {
    arch_text = serialize_architecture(best->architecture);
    eval_text = format_metrics_report(best->metrics);
    bundle.best_name = best->name;
  }
  const std::string env_text = render_environment(env);
  const std::string choices_text = serialize_choices(choices);

  for (const auto& p : detail::tokenize_template(tmpl.user, "user")) {
    if (!p.is_slot) bundle.user_text += p.text;
    else if (p.text == "template") bundle.user_text += arch_template;
    else if (p.text == "arch") bundle.user_text += arch_text;
    else if (p.text == "eval") bundle.user_text += eval_text;
    else if (p.text == "env") bundle.user_text += env_text;
    else bundle.user_text += choices_text;
  }

  const std::size_t size = bundle.system_text.size() + bundle.user_text.size();
  if (size > max_bytes) throw PromptTooLarge(size, max_bytes);
  return bundle;
}

}  // namespace flnas
