#include "mageval/label.hpp"

#include "mageval/errors.hpp"

namespace mageval {

std::string to_string(Label label) {
  return label == Label::yes ? "yes" : "no";
}

std::string to_string(Answer answer) {
  switch (answer) {
    case Answer::yes: return "yes";
    case Answer::no: return "no";
    default: return "unresolved";
  }
}

Label parse_label(std::string_view text) {
  if (text == "yes") return Label::yes;
  if (text == "no") return Label::no;
  throw ValidationError("invalid gold label: \"" + std::string(text) + "\" (expected yes or no)");
}

Answer parse_answer(std::string_view text) {
  if (text == "yes") return Answer::yes;
  if (text == "no") return Answer::no;
  if (text == "unresolved") return Answer::unresolved;
  throw ValidationError("invalid answer label: \"" + std::string(text) + "\"");
}

}  // namespace mageval
