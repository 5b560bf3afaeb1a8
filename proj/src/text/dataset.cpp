#include "fairgrpo/text/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fairgrpo/errors.hpp"
#include "fairgrpo/numerics/checkpoint.hpp"

namespace fairgrpo::text {
namespace {

std::string normalize_key(std::string_view text) {
  std::size_t b = 0, e = text.size();
  while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
  std::string out(text.substr(b, e - b));
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::string_view to_string(Label label) {
  return label == Label::neutral ? "neutral" : "discriminatory";
}

std::string_view to_string(Category category) {
  switch (category) {
    case Category::regional:
      return "regional";
    case Category::ethnic:
      return "ethnic";
    case Category::occupational:
      return "occupational";
    case Category::distractor:
      return "distractor";
  }
  return "distractor";
}

std::optional<Label> parse_label(std::string_view text) {
  const std::string key = normalize_key(text);
  if (key == "neutral") return Label::neutral;
  if (key == "discriminatory") return Label::discriminatory;
  return std::nullopt;
}

std::optional<Category> parse_category(std::string_view text) {
  const std::string key = normalize_key(text);
  for (Category c : {Category::regional, Category::ethnic, Category::occupational, Category::distractor}) {
    if (key == to_string(c)) return c;
  }
  return std::nullopt;
}

std::string to_json_line(const DatasetRecord& record) {
  nlohmann::ordered_json j;
  j["prompt"] = record.prompt;
  j["response"] = record.response ? nlohmann::ordered_json(*record.response) : nlohmann::ordered_json();
  j["label"] = record.label ? nlohmann::ordered_json(std::string(to_string(*record.label)))
                            : nlohmann::ordered_json();
  j["category"] = std::string(to_string(record.category));
  return j.dump();
}

std::vector<DatasetRecord> parse_dataset(std::string_view contents, std::string_view source) {
  static const std::set<std::string> allowed{"prompt", "response", "label", "category"};
  std::vector<DatasetRecord> records;
  std::vector<std::string> problems;
  std::istringstream in{std::string(contents)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    const std::string where = std::string(source) + ":" + std::to_string(line_no) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      problems.push_back(where + "not valid JSON");
      continue;
    }
    if (!j.is_object()) {
      problems.push_back(where + "expected a JSON object");
      continue;
    }
    bool ok = true;
    for (const auto& [key, value] : j.items()) {
      if (!allowed.count(key)) {
        problems.push_back(where + "unknown key '" + key + "'");
        ok = false;
      }
    }
    DatasetRecord r;
    if (!j.contains("prompt") || !j["prompt"].is_string() || j["prompt"].get<std::string>().empty()) {
      problems.push_back(where + "missing or empty prompt");
      ok = false;
    } else {
      r.prompt = j["prompt"].get<std::string>();
    }
    if (j.contains("response") && !j["response"].is_null()) {
      if (!j["response"].is_string()) {
        problems.push_back(where + "response must be a string or null");
        ok = false;
      } else {
        r.response = j["response"].get<std::string>();
      }
    }
    if (j.contains("label") && !j["label"].is_null()) {
      const auto label = j["label"].is_string() ? parse_label(j["label"].get<std::string>()) : std::nullopt;
      if (!label) {
        problems.push_back(where + "unknown label " + j["label"].dump());
        ok = false;
      }
      r.label = label;
    }
    if (!j.contains("category") || !j["category"].is_string()) {
      problems.push_back(where + "missing category");
      ok = false;
    } else if (const auto cat = parse_category(j["category"].get<std::string>())) {
      r.category = *cat;
    } else {
      problems.push_back(where + "unknown category " + j["category"].dump());
      ok = false;
    }
    if (ok) records.push_back(std::move(r));
  }
  if (!problems.empty()) {
    std::string message = "dataset has " + std::to_string(problems.size()) + " bad line(s):";
    for (const auto& p : problems) message += "\n  " + p;
    throw DataError(message);
  }
  return records;
}

std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifactError("dataset not found: " + path.string());
  return parse_dataset(num::read_file(path), path.string());
}

void save_dataset(const std::filesystem::path& path, std::span<const DatasetRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += to_json_line(r);
    out.push_back('\n');
  }
  num::write_file_atomic(path, out);
}

}  // namespace fairgrpo::text
