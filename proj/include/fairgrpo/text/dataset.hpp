#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fairgrpo::text {

enum class Label { neutral, discriminatory };
enum class Category { regional, ethnic, occupational, distractor };

std::string_view to_string(Label label);
std::string_view to_string(Category category);
// Case- and surrounding-whitespace-insensitive.
std::optional<Label> parse_label(std::string_view text);
std::optional<Category> parse_category(std::string_view text);

// One prompt with an optional response. The label is present exactly when
// the record feeds classifier training.
struct DatasetRecord {
  std::string prompt;
  std::optional<std::string> response;
  std::optional<Label> label;
  Category category = Category::distractor;

  bool operator==(const DatasetRecord&) const = default;
};

// One JSON object per line, keys in the order prompt, response, label,
// category; absent optionals are written as null.
std::string to_json_line(const DatasetRecord& record);

// Parses newline-delimited JSON. Blank lines are skipped. Every bad line is
// collected and reported together in a DataError ("<source>:<line>: ...").
std::vector<DatasetRecord> parse_dataset(std::string_view contents, std::string_view source = "<memory>");
std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path);
void save_dataset(const std::filesystem::path& path, std::span<const DatasetRecord> records);

}  // namespace fairgrpo::text
