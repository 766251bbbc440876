#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace s4al {

std::string read_text(const std::filesystem::path& path);
// Writes to a sibling temporary file and renames it over `path`.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

// Line-delimited JSON; blank lines are skipped.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows);
void append_jsonl(const std::filesystem::path& path, const nlohmann::json& row);
void append_line(const std::filesystem::path& path, const std::string& line);

}  // namespace s4al
