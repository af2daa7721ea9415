#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mageval {

// Placeholder token a template body must contain exactly once.
inline constexpr std::string_view kPlaceholder = "%s";

struct PromptTemplate {
  std::string id;
  std::string body;    // UTF-8 text containing kPlaceholder exactly once
  bool rule1 = false;  // carries the "observe the image carefully" rule
  bool rule2 = false;  // carries the "prioritize the image over prior knowledge" rule
};

struct RenderedPrompt {
  std::string template_id;
  std::string text;
  std::optional<std::string> warning;  // e.g. empty question
};

// The seven built-in templates: original (bare pass-through), magprompt,
// prompt2..prompt4 (alternative phrasings), rule1_only and rule2_only
// (single-rule ablations of magprompt, with the surviving rule renumbered).
const std::vector<PromptTemplate>& builtin_templates();

// Lookup by id; throws ConfigError on an unknown id.
const PromptTemplate& builtin_template(std::string_view id);

// Enforces the placeholder contract (exactly one occurrence); throws ConfigError.
void validate_template(const PromptTemplate& tpl);

// Substitutes the question verbatim for the placeholder. Never normalizes
// whitespace. An empty question renders with a warning attached.
RenderedPrompt render(const PromptTemplate& tpl, std::string_view question);

// Loads a user template body from a UTF-8 file (validated on load).
PromptTemplate load_template_file(std::string_view id, const std::filesystem::path& file,
                                  bool rule1 = false, bool rule2 = false);

// Loads a template manifest (JSON: id -> file + rule flags); file paths are
// resolved relative to the manifest's directory.
std::vector<PromptTemplate> load_template_manifest(const std::filesystem::path& manifest);

}  // namespace mageval
