// Command-line front end. Talks to the library only through critic.h.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "critic/critic.h"

namespace {

struct CliError {
  critic_status status;
};

void check(critic_status s) {
  if (s != CRITIC_OK) {
    std::cerr << "error [" << critic_status_name(s) << "]: " << critic_last_error() << "\n";
    throw CliError{s};
  }
}

std::string slurp(const std::string& path) {
  if (path == "-") {
    std::ostringstream buf;
    buf << std::cin.rdbuf();
    return buf.str();
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::cerr << "error: cannot open " << path << "\n";
    throw CliError{CRITIC_IO_ERROR};
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << "\n";
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    std::cerr << "error: cannot write " << path << "\n";
    throw CliError{CRITIC_IO_ERROR};
  }
  out << text;
}

// JSON Lines -> JSON array text, without parsing the records.
std::string jsonl_as_array(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '[') return text;
  std::string out = "[";
  std::istringstream in(text);
  std::string line;
  bool any = false;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (any) out += ",";
    out += line;
    any = true;
  }
  return out + "]";
}

struct OwnedString {
  char* p = nullptr;
  ~OwnedString() { critic_string_free(p); }
  std::string str() const { return p ? std::string(p) : std::string(); }
};

using PoolPtr = std::unique_ptr<critic_pool, decltype(&critic_pool_free)>;
using ClientPtr = std::unique_ptr<critic_client, decltype(&critic_client_free)>;

PoolPtr pairwise_pool(const std::string& path) {
  critic_pool* p = nullptr;
  check(path.empty() ? critic_pool_default_pairwise(&p) : critic_pool_load(path.c_str(), &p));
  return {p, critic_pool_free};
}

PoolPtr pointwise_pool(const std::string& path) {
  critic_pool* p = nullptr;
  check(path.empty() ? critic_pool_pointwise_presets(&p) : critic_pool_load(path.c_str(), &p));
  return {p, critic_pool_free};
}

ClientPtr open_client(const std::string& spec_path) {
  critic_client* c = nullptr;
  check(critic_client_open(slurp(spec_path).c_str(), &c));
  return {c, critic_client_free};
}

void print_stats(const char* label, const critic_client* c) {
  OwnedString s;
  check(critic_client_stats(c, &s.p));
  std::cerr << label << " " << s.str() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Judge prompts, verdict parsing, preference data and agreement metrics"};
  app.require_subcommand(1);
  app.set_version_flag("--version", critic_version());

  // templates export
  auto* templates = app.add_subcommand("templates", "Template pools");
  templates->require_subcommand(1);
  auto* tpl_export = templates->add_subcommand("export", "Write a shipped pool as JSON");
  std::string tpl_which = "pairwise", tpl_out;
  tpl_export->add_option("--pool", tpl_which, "pairwise | pointwise")->check(CLI::IsMember({"pairwise", "pointwise"}));
  tpl_export->add_option("--out", tpl_out, "Output file (default stdout)");

  // render
  auto* render = app.add_subcommand("render", "Render a judge prompt");
  render->require_subcommand(1);
  std::string r_templates, r_id, r_task, r_resp, r_resp_b;
  auto* render_point = render->add_subcommand("pointwise", "Render a pointwise prompt");
  auto* render_pair = render->add_subcommand("pairwise", "Render a pairwise prompt");
  for (auto* sc : {render_point, render_pair}) {
    sc->add_option("--templates", r_templates, "Template pool file (default: shipped pool)");
    sc->add_option("--template", r_id, "Template id")->required();
    sc->add_option("--task", r_task, "Task JSON file")->required();
  }
  render_point->add_option("--response", r_resp, "Response JSON file")->required();
  render_pair->add_option("--response-a", r_resp, "Slot A response JSON file")->required();
  render_pair->add_option("--response-b", r_resp_b, "Slot B response JSON file")->required();

  // parse
  auto* parse = app.add_subcommand("parse", "Parse a judge reply");
  parse->require_subcommand(1);
  std::string p_input = "-", p_lexicon;
  double p_min = 0, p_max = 100;
  auto* parse_point = parse->add_subcommand("pointwise", "Score from a pointwise reply");
  auto* parse_dual = parse->add_subcommand("dual", "Reference and candidate scores from the first line");
  auto* parse_pair = parse->add_subcommand("pairwise", "A / B / Tie verdict");
  for (auto* sc : {parse_point, parse_dual, parse_pair}) {
    sc->add_option("input", p_input, "Reply file, or - for stdin");
  }
  for (auto* sc : {parse_point, parse_dual}) {
    sc->add_option("--min", p_min, "Scale minimum");
    sc->add_option("--max", p_max, "Scale maximum");
  }
  parse_pair->add_option("--lexicon", p_lexicon, "Extra phrase lists JSON file");

  // hash
  auto* hash = app.add_subcommand("hash", "Cache key of a chat request");
  std::string h_endpoint, h_request = "-";
  hash->add_option("--endpoint", h_endpoint, "Endpoint URL")->required();
  hash->add_option("--request", h_request, "Request JSON file, or - for stdin");

  // report
  auto* report = app.add_subcommand("report", "Agreement report for an evaluator");
  std::string rep_scores, rep_battles, rep_json;
  int rep_perm = 100;
  std::uint64_t rep_seed = 0;
  report->add_option("--scores", rep_scores, "Scored-instances JSONL")->required();
  report->add_option("--battles", rep_battles, "Judged-battles JSONL");
  report->add_option("--permutations", rep_perm, "Elo permutations");
  report->add_option("--seed", rep_seed, "Elo shuffle seed");
  report->add_option("--json", rep_json, "Also write the JSON report here");

  // curate
  auto* curate = app.add_subcommand("curate", "Build judge-training datasets");
  curate->require_subcommand(1);
  std::string c_tasks, c_responses, c_pairs, c_judge, c_templates, c_out, c_reason;
  double c_threshold = 0.6;
  std::size_t c_count = 0;
  std::uint64_t c_seed = 0;
  bool c_labeled = false;
  auto* cur_point = curate->add_subcommand("pointwise", "Pointwise records from a judge");
  cur_point->add_option("--tasks", c_tasks, "Tasks JSONL")->required();
  cur_point->add_option("--responses", c_responses, "Responses JSONL")->required();
  auto* cur_pair = curate->add_subcommand("pairwise", "Pairwise records from score-gap filtered pairs");
  cur_pair->add_option("--threshold", c_threshold, "Mean score-gap threshold (strict)");
  cur_pair->add_flag("--labeled", c_labeled, "Use the labels already present in the input");
  auto* cur_ties = curate->add_subcommand("ties", "Pairwise records from sampled tie pairs");
  cur_ties->add_option("--count", c_count, "Number of tie pairs")->required();
  for (auto* sc : {cur_pair, cur_ties}) {
    sc->add_option("--pairs", c_pairs, "Scored-pairs JSONL")->required();
    sc->add_option("--seed", c_seed, "Template assignment and sampling seed");
    sc->add_option("--reason-prompt", c_reason, "Reason-generation prompt file");
  }
  for (auto* sc : {cur_point, cur_pair, cur_ties}) {
    sc->add_option("--judge", c_judge, "Judge backend spec JSON file")->required();
    sc->add_option("--templates", c_templates, "Template pool file (default: shipped pool)");
    sc->add_option("--out", c_out, "Output JSONL")->required();
  }

  // dpo
  auto* dpo = app.add_subcommand("dpo", "Iterative preference-pair generation");
  dpo->require_subcommand(1);
  std::string d_tasks, d_judge, d_config, d_templates, d_out, d_parent;
  std::vector<std::string> d_generators;
  int d_round = 1;
  auto* dpo_round = dpo->add_subcommand("round", "Run one round");
  auto* dpo_iter = dpo->add_subcommand("iterate", "Run all configured rounds");
  dpo_round->add_option("--generator", d_generators, "Generator backend spec JSON file")->required()->expected(1);
  dpo_round->add_option("--round", d_round, "Round index, from 1");
  dpo_round->add_option("--parent", d_parent, "Parent run id");
  dpo_iter->add_option("--generator", d_generators, "Generator spec per round, in order")->required();
  for (auto* sc : {dpo_round, dpo_iter}) {
    sc->add_option("--tasks", d_tasks, "Tasks JSONL")->required();
    sc->add_option("--judge", d_judge, "Judge backend spec JSON file")->required();
    sc->add_option("--config", d_config, "Loop config JSON file");
    sc->add_option("--templates", d_templates, "Pairwise template pool file");
    sc->add_option("--out-dir", d_out, "Output directory")->required();
  }

  // best-of-n
  auto* bon = app.add_subcommand("best-of-n", "Pick the highest-reward response");
  std::string b_task, b_responses, b_judge, b_templates;
  std::uint64_t b_seed = 0;
  bon->add_option("--task", b_task, "Task JSON file")->required();
  bon->add_option("--responses", b_responses, "Responses JSONL or JSON array")->required();
  bon->add_option("--judge", b_judge, "Judge backend spec JSON file")->required();
  bon->add_option("--templates", b_templates, "Pairwise template pool file");
  bon->add_option("--seed", b_seed, "Template assignment seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (tpl_export->parsed()) {
      auto pool = tpl_which == "pairwise" ? pairwise_pool("") : pointwise_pool("");
      OwnedString s;
      check(critic_pool_to_json(pool.get(), &s.p));
      spit(tpl_out, s.str());
    } else if (render_point->parsed()) {
      auto pool = pointwise_pool(r_templates);
      OwnedString s;
      check(critic_render_pointwise(pool.get(), r_id.c_str(), slurp(r_task).c_str(), slurp(r_resp).c_str(), &s.p));
      spit("", s.str());
    } else if (render_pair->parsed()) {
      auto pool = pairwise_pool(r_templates);
      OwnedString s;
      check(critic_render_pairwise(pool.get(), r_id.c_str(), slurp(r_task).c_str(), slurp(r_resp).c_str(),
                                   slurp(r_resp_b).c_str(), &s.p));
      spit("", s.str());
    } else if (parse_point->parsed() || parse_dual->parsed() || parse_pair->parsed()) {
      const auto raw = slurp(p_input);
      OwnedString reason;
      if (parse_point->parsed()) {
        double score = 0;
        check(critic_parse_pointwise(raw.c_str(), p_min, p_max, &score, &reason.p));
        std::cout << "score\t" << score << "\n";
      } else if (parse_dual->parsed()) {
        double ref = 0, cand = 0;
        check(critic_parse_dual_score(raw.c_str(), p_min, p_max, &ref, &cand, &reason.p));
        std::cout << "reference\t" << ref << "\ncandidate\t" << cand << "\n";
      } else {
        critic_verdict v{};
        const auto lexicon = p_lexicon.empty() ? std::string() : slurp(p_lexicon);
        check(critic_parse_pairwise(raw.c_str(), p_lexicon.empty() ? nullptr : lexicon.c_str(), &v, &reason.p));
        static const char* names[] = {"A", "B", "Tie"};
        std::cout << "verdict\t" << names[v] << "\n";
      }
      std::cout << "reason\t" << reason.str() << "\n";
    } else if (hash->parsed()) {
      OwnedString s;
      check(critic_request_hash(h_endpoint.c_str(), slurp(h_request).c_str(), &s.p));
      std::cout << s.str() << "\n";
    } else if (report->parsed()) {
      OwnedString doc, table;
      check(critic_agreement_report(rep_scores.c_str(), rep_battles.empty() ? nullptr : rep_battles.c_str(),
                                    rep_perm, rep_seed, &doc.p, &table.p));
      std::cout << table.str();
      if (!rep_json.empty()) spit(rep_json, doc.str());
    } else if (cur_point->parsed()) {
      auto pool = pointwise_pool(c_templates);
      auto judge = open_client(c_judge);
      OwnedString stats;
      check(critic_curate_pointwise(c_tasks.c_str(), c_responses.c_str(), pool.get(), judge.get(), c_out.c_str(),
                                    &stats.p));
      std::cout << stats.str() << "\n";
    } else if (cur_pair->parsed() || cur_ties->parsed()) {
      auto pool = pairwise_pool(c_templates);
      auto judge = open_client(c_judge);
      std::ostringstream selection;
      if (cur_ties->parsed()) {
        selection << "{\"tie_count\":" << c_count << ",\"tie_seed\":" << c_seed << "}";
      } else if (c_labeled) {
        selection << "{\"labeled\":true}";
      } else {
        selection.precision(17);
        selection << "{\"gap_threshold\":" << c_threshold << "}";
      }
      OwnedString labeled, stats;
      check(critic_select_pairs(c_pairs.c_str(), selection.str().c_str(), &labeled.p));
      const auto reason = c_reason.empty() ? std::string() : slurp(c_reason);
      check(critic_curate_pairwise(labeled.p, pool.get(), judge.get(), c_seed,
                                   c_reason.empty() ? nullptr : reason.c_str(), c_out.c_str(), &stats.p));
      std::cout << stats.str() << "\n";
    } else if (dpo_round->parsed() || dpo_iter->parsed()) {
      auto pool = pairwise_pool(d_templates);
      auto judge = open_client(d_judge);
      std::vector<ClientPtr> owned;
      std::vector<critic_client*> generators;
      for (const auto& g : d_generators) {
        owned.push_back(open_client(g));
        generators.push_back(owned.back().get());
      }
      const auto config = d_config.empty() ? std::string() : slurp(d_config);
      const char* config_ptr = d_config.empty() ? nullptr : config.c_str();
      OwnedString manifest;
      if (dpo_round->parsed()) {
        check(critic_run_round(d_tasks.c_str(), generators[0], judge.get(), pool.get(), config_ptr, d_round,
                               d_out.c_str(), d_parent.empty() ? nullptr : d_parent.c_str(), &manifest.p));
      } else {
        const auto s = critic_run_iterative(d_tasks.c_str(), generators.data(), generators.size(), judge.get(),
                                            pool.get(), config_ptr, d_out.c_str(), &manifest.p);
        if (s == CRITIC_HALT_BETWEEN_ROUNDS) std::cout << manifest.str() << "\n";
        check(s);
      }
      std::cout << manifest.str() << "\n";
      for (std::size_t i = 0; i < generators.size(); ++i) {
        print_stats(("generator[" + std::to_string(i) + "]").c_str(), generators[i]);
      }
      print_stats("judge", judge.get());
    } else if (bon->parsed()) {
      auto pool = pairwise_pool(b_templates);
      auto judge = open_client(b_judge);
      const std::string options = "{\"seed\":" + std::to_string(b_seed) + "}";
      OwnedString best;
      check(critic_best_of_n(slurp(b_task).c_str(), jsonl_as_array(slurp(b_responses)).c_str(), judge.get(),
                             pool.get(), options.c_str(), &best.p));
      std::cout << best.str() << "\n";
    }
  } catch (const CliError& e) {
    return static_cast<int>(e.status) == 0 ? 1 : static_cast<int>(e.status);
  }
  return 0;
}
