#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "critic/types.hpp"

namespace critic::io {

// One JSON document per non-blank line.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

// Writes to a temp file in the same directory and renames into place.
void write_text_atomic(const std::filesystem::path& path, const std::string& content);

std::string to_jsonl(const std::vector<nlohmann::ordered_json>& records);

std::string read_text(const std::filesystem::path& path);

EvalTask task_from_json(const nlohmann::json& doc);
nlohmann::ordered_json to_json(const EvalTask& task);

CandidateResponse response_from_json(const nlohmann::json& doc);
nlohmann::ordered_json to_json(const CandidateResponse& response);

// Task file: {task_id, question, image_ref, reference_answer?, source?} per
// line. Rejects duplicate task ids.
std::vector<EvalTask> load_tasks(const std::filesystem::path& path);

}  // namespace critic::io
