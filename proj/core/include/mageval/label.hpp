#pragma once

#include <string>
#include <string_view>

namespace mageval {

// Gold annotation of a yes/no visual question.
enum class Label { yes, no };

// Normalized model answer. `unresolved` marks replies the rule set could not map.
enum class Answer { yes, no, unresolved };

std::string to_string(Label label);
std::string to_string(Answer answer);

Label parse_label(std::string_view text);    // throws ValidationError
Answer parse_answer(std::string_view text);  // throws ValidationError

}  // namespace mageval
