#include "mageval/prompts.hpp"

#include <json.hpp>

#include "mageval/digest.hpp"
#include "mageval/errors.hpp"

namespace mageval {

namespace {

constexpr std::string_view kOriginalBody = "%s";

constexpr std::string_view kMagpromptBody =
    R"(You are tasked with answering a question based on the image with following rules:

1. Carefully observe the image and provide an answer based on the content of the image.
2. In cases where the image conflicts with your knowledge or common sense, prioritize the image.

Question: "%s"

Answer:)";

constexpr std::string_view kPrompt2Body =
    R"(Please answer the following question based on the content of the image:

1. Observe the image carefully.
2. Provide an answer based mainly on what you see in the image, even if it contradicts your prior knowledge or common sense.

Question: "%s"

Answer:)";

constexpr std::string_view kPrompt3Body =
    R"(You are given an image and need to answer a question using only the information from the image:

1. Look at the image carefully.
2. Base your answer on the image content, even if it goes against what you know or logical reasoning.

Question: "%s"

Answer:)";

constexpr std::string_view kPrompt4Body =
    R"(Answer the following question by referring exclusively to the image provided:

1. Examine the image thoroughly.
2. Formulate your answer from the image content, prioritizing it over your knowledge or common sense.

Question: "%s"

Answer:)";

constexpr std::string_view kRule1OnlyBody =
    R"(You are tasked with answering a question based on the image with following rules:

1. Carefully observe the image and provide an answer based on the content of the image.

Question: "%s"

Answer:)";

constexpr std::string_view kRule2OnlyBody =
    R"(You are tasked with answering a question based on the image with following rules:

1. In cases where the image conflicts with your knowledge or common sense, prioritize the image.

Question: "%s"

Answer:)";

size_t placeholder_count(std::string_view body) {
  size_t count = 0;
  for (size_t pos = body.find(kPlaceholder); pos != std::string_view::npos;
       pos = body.find(kPlaceholder, pos + kPlaceholder.size())) {
    ++count;
  }
  return count;
}

}  // namespace

const std::vector<PromptTemplate>& builtin_templates() {
  static const std::vector<PromptTemplate> templates = {
      {"original", std::string(kOriginalBody), false, false},
      {"magprompt", std::string(kMagpromptBody), true, true},
      {"prompt2", std::string(kPrompt2Body), true, true},
      {"prompt3", std::string(kPrompt3Body), true, true},
      {"prompt4", std::string(kPrompt4Body), true, true},
      {"rule1_only", std::string(kRule1OnlyBody), true, false},
      {"rule2_only", std::string(kRule2OnlyBody), false, true},
  };
  return templates;
}

const PromptTemplate& builtin_template(std::string_view id) {
  for (const auto& tpl : builtin_templates()) {
    if (tpl.id == id) return tpl;
  }
  throw ConfigError("unknown template id: \"" + std::string(id) + "\"");
}

void validate_template(const PromptTemplate& tpl) {
  const size_t n = placeholder_count(tpl.body);
  if (n != 1) {
    throw ConfigError("template \"" + tpl.id + "\" must contain the placeholder \"" +
                      std::string(kPlaceholder) + "\" exactly once, found " + std::to_string(n));
  }
}

RenderedPrompt render(const PromptTemplate& tpl, std::string_view question) {
  validate_template(tpl);
  RenderedPrompt out;
  out.template_id = tpl.id;
  const size_t pos = tpl.body.find(kPlaceholder);
  out.text.reserve(tpl.body.size() - kPlaceholder.size() + question.size());
  out.text.append(tpl.body, 0, pos);
  out.text.append(question);
  out.text.append(tpl.body, pos + kPlaceholder.size(), std::string::npos);
  if (question.empty()) out.warning = "empty question";
  return out;
}

PromptTemplate load_template_file(std::string_view id, const std::filesystem::path& file,
                                  bool rule1, bool rule2) {
  PromptTemplate tpl{std::string(id), read_file(file), rule1, rule2};
  validate_template(tpl);
  return tpl;
}

std::vector<PromptTemplate> load_template_manifest(const std::filesystem::path& manifest) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(manifest));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("template manifest " + manifest.string() + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("templates") || !doc["templates"].is_array()) {
    throw ValidationError("template manifest " + manifest.string() +
                          ": expected an object with a \"templates\" array");
  }
  const auto dir = manifest.parent_path();
  std::vector<PromptTemplate> out;
  for (const auto& entry : doc["templates"]) {
    if (!entry.contains("id") || !entry.contains("file")) {
      throw ValidationError("template manifest entry missing id or file");
    }
    out.push_back(load_template_file(entry["id"].get<std::string>(),
                                     dir / entry["file"].get<std::string>(),
                                     entry.value("rule1", false), entry.value("rule2", false)));
  }
  return out;
}

}  // namespace mageval
