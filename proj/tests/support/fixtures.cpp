#include "fixtures.hpp"

#include <cstdio>
#include <stdexcept>

#include "json.hpp"
#include "mageval/digest.hpp"
#include "mageval/prompts.hpp"

namespace mageval::testsup {
namespace {

using nlohmann::json;

const char* kAdjectives[10] = {"red",   "blue",  "green",   "small", "large",
                               "wooden", "metal", "striped", "round", "empty"};
const char* kNouns[10] = {"cup",    "chair",    "bicycle", "umbrella", "laptop",
                          "flower", "ladder",   "backpack", "guitar",  "kettle"};
const char* kSubtasks[5] = {"attribute", "counting", "object", "positional", "sentiment"};

const char* kYesReplies[3] = {"Yes.", "Yes, there is.", "Yes, it is."};
const char* kNoReplies[3] = {"No.", "No, there is not.", "No, it can't be seen."};

std::string pad3(int n) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%03d", n);
  return buf;
}

std::string hash_ref(const std::string& id) {
  return "sha256:" + sha256_hex("synthetic-image-" + id);
}

EvalItem make_item(std::string id, std::string question, Label gold, std::string dataset,
                   std::string split, std::string subtask = "", std::string mode = "") {
  EvalItem item;
  item.id = std::move(id);
  item.image_ref = hash_ref(item.id);
  item.question = std::move(question);
  item.gold = gold;
  item.dataset = std::move(dataset);
  item.split = std::move(split);
  item.subtask = std::move(subtask);
  item.mode = std::move(mode);
  return item;
}

std::vector<EvalItem> build_synthetic100() {
  std::vector<EvalItem> items;
  items.reserve(100);
  for (int i = 0; i < 50; ++i) {
    const std::string phrase =
        std::string(kAdjectives[i / 10]) + " " + kNouns[i % 10];
    items.push_back(make_item("syn-y-" + pad3(i + 1),
                              "Is there a " + phrase + " in the image?", Label::yes,
                              "synthetic", "balanced"));
  }
  for (int i = 0; i < 50; ++i) {
    const int k = i + 50;
    const std::string phrase =
        std::string(kAdjectives[k / 10]) + " " + kNouns[k % 10];
    items.push_back(make_item("syn-n-" + pad3(i + 1),
                              "Is there a " + phrase + " in the image?", Label::no,
                              "synthetic", "balanced"));
  }
  return items;
}

std::vector<EvalItem> build_synthetic40() {
  std::vector<EvalItem> items;
  items.reserve(40);
  for (int i = 0; i < 40; ++i) {
    const std::string phrase = std::string(kAdjectives[i % 10]) + " " +
                               kNouns[(3 * i + i / 10) % 10];
    items.push_back(make_item("s40-" + pad3(i + 1),
                              "Does the image show a " + phrase + "?",
                              i % 2 == 0 ? Label::yes : Label::no, "synthetic-sub", "dev",
                              kSubtasks[i % 5], i < 20 ? "neutral" : "misleading"));
  }
  return items;
}

// Wrong-answer budget per template over synthetic100, chosen so the runs
// tally {tp 40, fp 5, tn 45, fn 10}, {40, 4, 46, 10} and {40, 3, 47, 10}.
struct ErrorBudget {
  const char* template_id;
  int wrong_yes;  // gold-yes items answered "no" (first N by dataset order)
  int wrong_no;   // gold-no items answered "yes"
};
constexpr ErrorBudget kBudgets[] = {
    {"original", 10, 5}, {"rule2_only", 10, 4}, {"magprompt", 10, 3}};

void append_replay(std::vector<std::pair<std::string, std::string>>& replay,
                   const EvalItem& item, const PromptTemplate& tpl, bool answer_yes, int variant) {
  const std::string prompt = render(tpl, item.question).text;
  const std::string image_sha = item.image_ref.substr(std::string("sha256:").size());
  const std::string key = cache_key(kMockModel, prompt, image_sha, mock_decoding());
  replay.emplace_back(key, answer_yes ? kYesReplies[variant % 3] : kNoReplies[variant % 3]);
}

}  // namespace

FixtureSet build_fixture_set() {
  FixtureSet fx;
  fx.synthetic100 = build_synthetic100();
  fx.synthetic40 = build_synthetic40();

  for (const ErrorBudget& budget : kBudgets) {
    const PromptTemplate& tpl = builtin_template(budget.template_id);
    int yes_seen = 0, no_seen = 0;
    for (std::size_t i = 0; i < fx.synthetic100.size(); ++i) {
      const EvalItem& item = fx.synthetic100[i];
      bool answer_yes;
      if (item.gold == Label::yes) {
        answer_yes = yes_seen++ >= budget.wrong_yes;
      } else {
        answer_yes = no_seen++ < budget.wrong_no;
      }
      append_replay(fx.replay, item, tpl, answer_yes, static_cast<int>(i));
    }
  }
  const PromptTemplate& original = builtin_template("original");
  for (std::size_t i = 0; i < fx.synthetic40.size(); ++i) {
    const EvalItem& item = fx.synthetic40[i];
    append_replay(fx.replay, item, original, item.gold == Label::yes, static_cast<int>(i));
  }
  return fx;
}

void write_fixture_files(const std::filesystem::path& dir) {
  const FixtureSet fx = build_fixture_set();
  write_canonical(dir / "synthetic100.jsonl", fx.synthetic100);
  write_canonical(dir / "synthetic40.jsonl", fx.synthetic40);

  std::string replay_lines;
  for (const auto& [key, response] : fx.replay) {
    json j;
    j["key"] = key;
    j["response"] = response;
    replay_lines += j.dump();
    replay_lines += '\n';
  }
  write_file(dir / "replay_mock.jsonl", replay_lines);

  write_file(dir / "run_replay_original.conf",
             "# Replay evaluation over the bundled synthetic dataset.\n"
             "# Pass --output-dir (and optionally --cache-file) on the command line.\n"
             "dataset = synthetic100.jsonl\n"
             "template = original\n"
             "model = mock-vlm\n"
             "backend = replay\n"
             "replay_fixture = replay_mock.jsonl\n"
             "temperature = 0\n"
             "max_output_tokens = 16\n"
             "max_retries = 2\n");
}

}  // namespace mageval::testsup
