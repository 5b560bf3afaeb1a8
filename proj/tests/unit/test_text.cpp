#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <set>

#include "fairgrpo/errors.hpp"
#include "fairgrpo/numerics/checkpoint.hpp"
#include "fairgrpo/text/augment.hpp"
#include "fairgrpo/text/corpus.hpp"
#include "fairgrpo/text/dataset.hpp"
#include "fairgrpo/text/tokenizer.hpp"

using namespace fairgrpo;
using namespace fairgrpo::text;

namespace {

Vocabulary vocab_of(std::initializer_list<std::string> words) {
  Vocabulary v;
  for (const auto& w : words) v.add(w);
  return v;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "fairgrpo_test_text";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("split and join words") {
  const auto w = split_words("Hello,  World! it's x-ray");
  CHECK(w == std::vector<std::string>{"hello", ",", "world", "!", "it's", "x-ray"});
  CHECK(join_words(w) == "hello, world! it's x-ray");
}

TEST_CASE("tokenize left-pads to max_len") {
  const auto v = vocab_of({"hello", "world"});
  const auto seq = tokenize("Hello world", v, 5, true);
  CHECK(seq.ids == std::vector<std::int32_t>{kPad, kPad, kPad, v.id("hello"), v.id("world")});
  CHECK(seq.mask == std::vector<std::uint8_t>{0, 0, 0, 1, 1});
  CHECK(seq.pad_count() == 3);
}

TEST_CASE("out-of-vocabulary word maps to UNK") {
  const auto v = vocab_of({"hello"});
  const auto seq = tokenize("hello stranger", v, 4, false);
  CHECK(seq.ids == std::vector<std::int32_t>{v.id("hello"), kUnk});
}

TEST_CASE("long text keeps the head") {
  std::string text;
  Vocabulary v;
  for (int i = 0; i < 200; ++i) {
    const std::string w = "w" + std::to_string(i);
    v.add(w);
    text += w + " ";
  }
  const auto seq = tokenize(text, v, 128, true);
  REQUIRE(seq.size() == 128);
  CHECK(seq.pad_count() == 0);
  CHECK(seq.ids.front() == v.id("w0"));
  CHECK(seq.ids.back() == v.id("w127"));
}

TEST_CASE("tokenize then detokenize round-trips in-vocabulary text") {
  const std::vector<std::string> texts{"What are People from Valoria like?", "they differ, from person to person."};
  const auto v = Vocabulary::build(texts);
  for (const auto& t : texts) {
    const auto seq = tokenize(t, v, 64, true);
    CHECK(detokenize(seq.ids, v) == join_words(split_words(t)));
  }
}

TEST_CASE("padding mask is a monotone prefix") {
  const auto v = vocab_of({"a", "b", "c"});
  for (std::size_t len = 3; len < 9; ++len) {
    const auto seq = tokenize("a b c", v, len, true);
    CHECK(std::is_sorted(seq.mask.begin(), seq.mask.end()));
    CHECK(seq.real_ids().size() == 3);
  }
}

TEST_CASE("vocabulary order, cap and persistence") {
  const std::vector<std::string> texts{"b a b", "c b a"};
  const auto v = Vocabulary::build(texts);
  CHECK(v.token(kPad) == "<pad>");
  CHECK(v.token(kEos) == "<eos>");
  CHECK(v.id("b") == 4);
  CHECK(v.id("a") == 5);
  CHECK(v.id("c") == 6);
  const auto capped = Vocabulary::build(texts, 6);
  CHECK(capped.size() == 6);
  CHECK_FALSE(capped.contains("c"));
  Vocabulary full(5);
  full.add("x");
  CHECK_THROWS_AS(full.add("y"), ContractError);

  const auto path = scratch("vocab.json");
  v.save(path);
  CHECK(Vocabulary::load(path) == v);
}

TEST_CASE("load_dataset accepts a well-formed file and normalizes labels") {
  const std::string contents =
      R"({"prompt":"p1","response":"r1","label":"Neutral","category":"regional"})"
      "\n"
      R"({"prompt":"p2","response":null,"label":null,"category":"ethnic"})"
      "\n"
      R"({"prompt":"p3","response":"r3","label":"discriminatory","category":" Occupational "})"
      "\n";
  const auto path = scratch("ok.jsonl");
  num::write_file_atomic(path, contents);
  const auto records = load_dataset(path);
  REQUIRE(records.size() == 3);
  CHECK(records[0].label == Label::neutral);
  CHECK_FALSE(records[1].label.has_value());
  CHECK_FALSE(records[1].response.has_value());
  CHECK(records[2].category == Category::occupational);
}

TEST_CASE("bad dataset lines are reported by line number") {
  const std::string contents =
      R"({"prompt":"p1","category":"regional"})"
      "\n"
      R"({"response":"r","category":"regional"})"
      "\n"
      R"({"prompt":"p3","label":"rude","category":"regional"})"
      "\n";
  try {
    parse_dataset(contents, "data.jsonl");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("data.jsonl:2: missing or empty prompt") != std::string::npos);
    CHECK(msg.find("data.jsonl:3: unknown label") != std::string::npos);
    CHECK(msg.find("data.jsonl:1") == std::string::npos);
  }
  CHECK_THROWS_AS(load_dataset(scratch("absent.jsonl")), MissingArtifactError);
}

TEST_CASE("dataset save and load round-trip") {
  const auto records = generate_synthetic_corpus(3, 50);
  const auto path = scratch("rt.jsonl");
  save_dataset(path, records);
  CHECK(load_dataset(path) == records);
}

TEST_CASE("synthetic corpus is deterministic") {
  const auto a = generate_synthetic_corpus(7, 100);
  const auto b = generate_synthetic_corpus(7, 100);
  std::string sa, sb;
  for (const auto& r : a) sa += to_json_line(r) + "\n";
  for (const auto& r : b) sb += to_json_line(r) + "\n";
  CHECK(sa == sb);
  CHECK(generate_synthetic_corpus(8, 100) != a);
}

TEST_CASE("synthetic corpus label balance") {
  for (std::uint64_t seed : {1u, 7u, 99u}) {
    const auto records = generate_synthetic_corpus(seed, 1001);
    const auto neutral = std::count_if(records.begin(), records.end(),
                                       [](const DatasetRecord& r) { return r.label == Label::neutral; });
    const double share = static_cast<double>(neutral) / static_cast<double>(records.size());
    CHECK(share >= 0.45);
    CHECK(share <= 0.55);
  }
}

TEST_CASE("biased responses carry a stereotype marker and neutral ones do not") {
  const auto markers = stereotype_markers();
  for (const auto& r : generate_synthetic_corpus(7, 2000)) {
    REQUIRE(r.response.has_value());
    const bool marked = std::any_of(markers.begin(), markers.end(),
                                    [&](std::string_view m) { return r.response->find(m) != std::string::npos; });
    CHECK(marked == (r.label == Label::discriminatory));
    if (r.category == Category::distractor) CHECK(r.label == Label::neutral);
  }
}

TEST_CASE("generated text never uses a real name") {
  std::set<std::string> words;
  auto collect = [&](const std::string& s) {
    for (auto& w : split_words(s)) words.insert(w);
  };
  for (const auto& r : generate_synthetic_corpus(7, 3000)) {
    collect(r.prompt);
    collect(*r.response);
  }
  for (auto split : {PromptSplit::train, PromptSplit::eval}) {
    for (const auto& r : generate_prompt_set(7, 500, split)) collect(r.prompt);
  }
  for (std::string_view name : real_name_denylist()) CHECK_FALSE(words.count(std::string(name)));
}

TEST_CASE("train and eval prompt sets are disjoint") {
  std::set<std::string> train;
  for (const auto& r : generate_prompt_set(5, 2000, PromptSplit::train)) train.insert(r.prompt);
  const auto eval = generate_prompt_set(5, 300, PromptSplit::eval);
  CHECK(eval.size() == 300);
  for (const auto& r : eval) CHECK_FALSE(train.count(r.prompt));
}

TEST_CASE("forced synonym replacement") {
  AugmentationConfig cfg;
  cfg.synonyms = {{"happy", {"glad"}}};
  cfg.replacement_probability = 1.0;
  cfg.perturbation_probability = 0.0;
  const DatasetRecord in{"i am happy", std::nullopt, Label::neutral, Category::regional};
  CHECK(augment(in, cfg).prompt == "i am glad");
}

TEST_CASE("zero probabilities leave the record unchanged") {
  auto cfg = default_augmentation();
  cfg.replacement_probability = 0.0;
  cfg.perturbation_probability = 0.0;
  cfg.paraphrase_probability = 0.0;
  for (const auto& r : generate_synthetic_corpus(2, 50)) CHECK(augment(r, cfg) == r);
}

TEST_CASE("augmentation is deterministic and preserves label and category") {
  auto cfg = default_augmentation();
  cfg.replacement_probability = 0.5;
  cfg.perturbation_probability = 0.3;
  cfg.paraphrase_probability = 0.5;
  cfg.rng_seed = 11;
  const auto records = generate_synthetic_corpus(4, 300);
  const auto a = augment_all(records, cfg);
  const auto b = augment_all(records, cfg);
  CHECK(a == b);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(a[i].label == records[i].label);
    CHECK(a[i].category == records[i].category);
    CHECK(a[i].response == records[i].response);
    changed += a[i].prompt != records[i].prompt;
  }
  CHECK(changed > 0);
}

TEST_CASE("paraphrase rule rewrites a matching prompt") {
  AugmentationConfig cfg;
  cfg.replacement_probability = 0.0;
  cfg.perturbation_probability = 0.0;
  cfg.paraphrase_probability = 1.0;
  cfg.paraphrase_templates = {{R"(^can (.+) be trusted\?$)", "is it safe to trust $1?"}};
  const DatasetRecord in{"Can velari people be trusted?", std::nullopt, std::nullopt, Category::ethnic};
  CHECK(augment(in, cfg).prompt == "is it safe to trust velari people?");
}

TEST_CASE("invalid augmentation config is rejected") {
  AugmentationConfig cfg;
  cfg.replacement_probability = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg.replacement_probability = 0.1;
  cfg.synonyms = {{"x", {}}};
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg.synonyms.clear();
  cfg.paraphrase_templates = {{"(", "x"}};
  CHECK_THROWS_AS(cfg.validate(), ContractError);
}
