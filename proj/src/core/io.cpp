#include "critic/io.hpp"

#include <atomic>
#include <fstream>
#include <set>
#include <sstream>

namespace critic::io {

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorCode::kParseError, path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_atomic(const std::filesystem::path& path, const std::string& content) {
  static std::atomic<unsigned> counter{0};
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  auto tmp = path;
  tmp += ".tmp" + std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIoError, "cannot write " + tmp.string());
    out << content;
    if (!out) fail(ErrorCode::kIoError, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::kIoError, "cannot publish " + path.string() + ": " + ec.message());
}

std::string to_jsonl(const std::vector<nlohmann::ordered_json>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.dump();
    out.push_back('\n');
  }
  return out;
}

EvalTask task_from_json(const nlohmann::json& doc) {
  EvalTask t;
  try {
    t.task_id = doc.at("task_id").get<std::string>();
    t.question = doc.at("question").get<std::string>();
    if (doc.contains("image_ref")) t.image.value = doc.at("image_ref").get<std::string>();
    else if (doc.contains("image")) t.image.value = doc.at("image").get<std::string>();
    if (doc.contains("reference_answer") && !doc.at("reference_answer").is_null()) {
      t.reference_answer = doc.at("reference_answer").get<std::string>();
    }
    t.source = doc.value("source", std::string{});
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::kParseError, std::string("malformed task record: ") + ex.what());
  }
  validate(t);
  return t;
}

nlohmann::ordered_json to_json(const EvalTask& task) {
  nlohmann::ordered_json j;
  j["task_id"] = task.task_id;
  j["question"] = task.question;
  j["image_ref"] = task.image.value;
  if (task.reference_answer) j["reference_answer"] = *task.reference_answer;
  if (!task.source.empty()) j["source"] = task.source;
  return j;
}

CandidateResponse response_from_json(const nlohmann::json& doc) {
  CandidateResponse r;
  try {
    r.response_id = doc.at("response_id").get<std::string>();
    r.task_id = doc.at("task_id").get<std::string>();
    r.producer_model = doc.value("producer_model", std::string{});
    r.text = doc.at("text").get<std::string>();
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::kParseError, std::string("malformed response record: ") + ex.what());
  }
  validate(r);
  return r;
}

nlohmann::ordered_json to_json(const CandidateResponse& response) {
  return {{"response_id", response.response_id},
          {"task_id", response.task_id},
          {"producer_model", response.producer_model},
          {"text", response.text}};
}

std::vector<EvalTask> load_tasks(const std::filesystem::path& path) {
  std::vector<EvalTask> out;
  std::set<std::string> seen;
  for (const auto& doc : read_jsonl(path)) {
    auto t = task_from_json(doc);
    if (!seen.insert(t.task_id).second) {
      fail(ErrorCode::kInvalidArgument, "duplicate task_id '" + t.task_id + "' in " + path.string());
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace critic::io
