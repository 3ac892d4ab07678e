// SPDX-License-Identifier: Apache-2.0
//
// moelab command-line tool.
//
//   gen-corpus   seeded synthetic corpus, optional distribution shift
//   pretrain     teacher / moe-baseline / moe-tcd pre-training
//   finetune     full x adapter fine-tuning grid on a generated task
//   ood-eval     masked-LM log-likelihood of a checkpoint on a corpus
//   report       aggregate run directories into one CSV table
//
// Every command writes a run.json manifest into its output directory
// (command, seed, input hashes, outputs, timestamp). The data artifacts
// themselves are byte-reproducible from the same invocation; run.json is
// provenance and carries the only timestamp.
//
// Exit codes: 0 success, 1 empty result or I/O failure, 2 usage error,
// 3 configuration/compatibility/corruption error.
#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "moelab/checkpoint.hpp"
#include "moelab/corpus.hpp"
#include "moelab/errors.hpp"
#include "moelab/eval.hpp"
#include "moelab/finetune.hpp"
#include "moelab/pretrain.hpp"
#include "moelab/tasks.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace moelab;

namespace {

fs::path resolve(const fs::path& workdir, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q : workdir / q;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

std::string hash_hex(const std::string& bytes) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << hash_str(bytes);
  return os.str();
}

std::string file_hash(const fs::path& p) { return hash_hex(slurp(p)); }

std::string iso_utc_now() {
  const std::time_t t =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const fs::path& dir, json m) {
  m["created_utc"] = iso_utc_now();
  std::ofstream f(dir / "run.json", std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + (dir / "run.json").string());
  f << m.dump(2) << "\n";
}

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<std::uint64_t> seeds;
  std::istringstream is(csv);
  std::string item;
  while (std::getline(is, item, ',')) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad seed list entry '" + item + "' (want e.g. 0,1,2)");
    }
  }
  if (seeds.empty()) throw ConfigError("empty seed list");
  return seeds;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// gen-corpus

int cmd_gen_corpus(const fs::path& workdir, const std::string& out, std::uint64_t seed,
                   Index tokens, const std::string& shift_name) {
  const Shift shift = shift_from_string(shift_name);
  const fs::path dir = resolve(workdir, out);
  fs::create_directories(dir);
  const std::string text = generate_corpus(seed, tokens, shift);
  {
    std::ofstream f(dir / "corpus.txt", std::ios::binary | std::ios::trunc);
    if (!f) {
      std::cerr << "error: cannot write " << (dir / "corpus.txt").string() << "\n";
      return 1;
    }
    f << text;
  }
  json m;
  m["command"] = "gen-corpus";
  m["seed"] = seed;
  m["tokens"] = tokens;
  m["shift"] = shift_name;
  m["outputs"] = json::array({"corpus.txt"});
  if (shift != Shift::kNone) {
    const double chi = unigram_chi_squared(text, generate_corpus(seed, tokens, Shift::kNone));
    m["chi_squared_vs_base"] = chi;
    std::cout << "chi_squared_vs_base=" << format_double(chi) << "\n";
  }
  write_manifest(dir, m);
  std::cout << "wrote " << (dir / "corpus.txt").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// pretrain

int cmd_pretrain(const fs::path& workdir, const std::string& config_path,
                 const std::string& mode_name, const std::string& teacher, const std::string& out,
                 std::optional<std::uint64_t> seed, std::optional<Index> epochs,
                 const std::string& resume) {
  const bool needs_teacher = mode_name == "moe-tcd";
  if (needs_teacher && teacher.empty()) {
    std::cerr << "usage error: --mode moe-tcd requires --teacher-ckpt\n";
    return 2;
  }
  if (!needs_teacher && !teacher.empty()) {
    std::cerr << "usage error: --teacher-ckpt is only valid with --mode moe-tcd\n";
    return 2;
  }
  const PretrainMode mode = pretrain_mode_from_string(mode_name);

  const fs::path config_file = resolve(workdir, config_path);
  RunConfig cfg = load_run_config(config_file.string());
  if (seed) cfg.train.seed = *seed;
  if (epochs) cfg.train.epochs = *epochs;
  cfg.train.corpus = resolve(workdir, cfg.train.corpus).string();
  cfg.finalize();

  const fs::path out_dir = resolve(workdir, out);
  const std::string teacher_dir = teacher.empty() ? "" : resolve(workdir, teacher).string();
  const std::string resume_dir = resume.empty() ? "" : resolve(workdir, resume).string();
  const PretrainResult res = pretrain(cfg, mode, out_dir.string(), teacher_dir, resume_dir);

  json m;
  m["command"] = "pretrain";
  m["mode"] = mode_name;
  m["seed"] = cfg.train.seed;
  m["config_hash"] = hash_hex(write_run_config(cfg));
  m["inputs"]["config"] = file_hash(config_file);
  m["inputs"]["corpus"] = file_hash(cfg.train.corpus);
  if (!teacher_dir.empty())
    m["inputs"]["teacher_manifest"] = file_hash(fs::path(teacher_dir) / "manifest.json");
  m["outputs"] = json::array({"metrics.jsonl", "val.txt", "final"});
  m["steps"] = res.steps;
  m["final_val_log_likelihood"] = res.final_val_log_likelihood;
  write_manifest(out_dir, m);
  std::cout << "final_val_log_likelihood=" << format_double(res.final_val_log_likelihood) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// finetune

struct GridCell {
  std::string mode;
  double lr = 0.0;
  Index adapter_dim = 0;
};

// Desk-scale mapping of the reference grids: the published rates target
// ~1e8-parameter models and stall the toy models here, so both learning
// rate sets are scaled by 100 (full {1e-5,2e-5,5e-5} -> {1e-3,2e-3,5e-3},
// adapter {1e-4,2e-4,3e-4} -> {1e-2,2e-2,3e-2}); adapter widths keep the
// published ratios of the hidden size, {H/8, H/2, H}.
std::vector<GridCell> default_grid(Index hidden) {
  std::vector<GridCell> g;
  for (double lr : {1e-3, 2e-3, 5e-3}) g.push_back({"full", lr, 0});
  std::vector<Index> sizes{std::max<Index>(1, hidden / 8), std::max<Index>(1, hidden / 2), hidden};
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
  for (double lr : {1e-2, 2e-2, 3e-2})
    for (Index a : sizes) g.push_back({"adapter", lr, a});
  return g;
}

// One cell per line: "full <lr>" or "adapter <lr> <size>"; '#' comments.
std::vector<GridCell> parse_grid_file(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw ConfigError("finetune: cannot read grid file " + p.string());
  std::vector<GridCell> g;
  std::string line;
  while (std::getline(f, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream is(line);
    GridCell c;
    if (!(is >> c.mode)) continue;
    if (!(is >> c.lr)) throw ConfigError("grid line needs: mode lr [adapter_size]");
    if (c.mode == "adapter") {
      if (!(is >> c.adapter_dim) || c.adapter_dim < 1)
        throw ConfigError("adapter grid line needs a positive size");
    } else if (c.mode != "full") {
      throw ConfigError("grid mode must be full or adapter, got '" + c.mode + "'");
    }
    std::string extra;
    if (is >> extra) throw ConfigError("unexpected token in grid line: '" + extra + "'");
    g.push_back(c);
  }
  if (g.empty()) throw ConfigError("grid file has no cells");
  return g;
}

fs::path next_run_dir(const fs::path& root) {
  fs::create_directories(root);
  int next = 1;
  for (const auto& e : fs::directory_iterator(root)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("run-", 0) == 0)
      next = std::max(next, std::atoi(name.c_str() + 4) + 1);
  }
  char buf[16];
  std::snprintf(buf, sizeof buf, "run-%03d", next);
  const fs::path dir = root / buf;
  fs::create_directories(dir);
  return dir;
}

json result_record(const FinetuneResult& r) {
  json rec;
  rec["task"] = r.task;
  rec["mode"] = r.mode;
  rec["lr"] = r.lr;
  rec["adapter_dim"] = r.adapter_dim;
  rec["seed"] = r.seed;
  rec["dev_metric"] = r.dev_metric;
  rec["best_metric"] = r.best_metric;
  rec["best_epoch"] = r.best_epoch;
  rec["trainable_params"] = r.trainable_params;
  return rec;
}

int cmd_finetune(const fs::path& workdir, const std::string& ckpt, const std::string& task_name,
                 const std::string& grid_arg, const std::string& out, const std::string& seeds_csv,
                 Index n_train, Index n_dev, Index epochs, Index seq_len_flag,
                 std::uint64_t task_seed) {
  const fs::path ckpt_dir = resolve(workdir, ckpt);
  const Checkpoint cp = load_checkpoint(ckpt_dir.string());

  Index seq_len = seq_len_flag > 0 ? seq_len_flag : std::min<Index>(16, cp.model.cfg.max_seq_len);
  const Task task = make_task(task_name, cp.vocab, seq_len, task_seed, n_train, n_dev);

  const bool default_grid_used = grid_arg == "default";
  const std::vector<GridCell> grid = default_grid_used
                                         ? default_grid(cp.model.cfg.hidden_dim)
                                         : parse_grid_file(resolve(workdir, grid_arg));
  const std::vector<std::uint64_t> seeds = parse_seed_list(seeds_csv);

  const fs::path run_dir = next_run_dir(resolve(workdir, out));
  std::ofstream results(run_dir / "results.jsonl", std::ios::binary | std::ios::trunc);
  if (!results) throw std::runtime_error("cannot write " + (run_dir / "results.jsonl").string());

  json per_seed = json::array();
  std::vector<double> chosen;
  for (const std::uint64_t seed : seeds) {
    std::optional<FinetuneResult> best_full, best_adapter;
    for (const GridCell& cell : grid) {
      FinetuneHyper hyper;
      hyper.lr = cell.lr;
      hyper.adapter_dim = cell.adapter_dim;
      hyper.epochs = epochs;
      hyper.seed = seed;
      const FinetuneResult r = finetune(cp.model, task, hyper);
      results << result_record(r).dump() << "\n";
      auto& slot = cell.mode == "full" ? best_full : best_adapter;
      if (!slot || r.best_metric > slot->best_metric) slot = r;
    }
    const ModeChoice mc = best_of_modes(best_full, best_adapter);
    chosen.push_back(mc.best.best_metric);
    json row;
    row["seed"] = seed;
    row["mode"] = mc.best.mode;
    row["lr"] = mc.best.lr;
    row["adapter_dim"] = mc.best.adapter_dim;
    row["best_metric"] = mc.best.best_metric;
    row["best_epoch"] = mc.best.best_epoch;
    row["tie"] = mc.tie;
    row["adapter_missing"] = mc.adapter_missing;
    per_seed.push_back(row);
  }
  results.close();

  json choice;
  choice["task"] = task_name;
  choice["metric"] = task.regression ? "pearson" : "accuracy";
  choice["model_mode"] = cp.mode;
  choice["per_seed"] = per_seed;
  choice["median_best_metric"] = median(chosen);
  {
    std::ofstream f(run_dir / "choice.json", std::ios::binary | std::ios::trunc);
    f << choice.dump(2) << "\n";
  }

  json m;
  m["command"] = "finetune";
  m["task"] = task_name;
  m["model_mode"] = cp.mode;
  m["seed"] = task_seed;
  m["seeds"] = seeds;
  m["grid"] = default_grid_used ? std::string("default") : grid_arg;
  m["inputs"]["checkpoint_manifest"] = file_hash(ckpt_dir / "manifest.json");
  m["outputs"] = json::array({"results.jsonl", "choice.json"});
  m["median_best_metric"] = choice["median_best_metric"];
  write_manifest(run_dir, m);
  std::cout << "run_dir=" << run_dir.string() << "\n"
            << "median_best_metric=" << format_double(chosen.empty() ? 0.0 : median(chosen))
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// ood-eval

int cmd_ood_eval(const fs::path& workdir, const std::string& ckpt, const std::string& corpus,
                 const std::string& out) {
  const fs::path ckpt_dir = resolve(workdir, ckpt);
  const Checkpoint cp = load_checkpoint(ckpt_dir.string());
  const fs::path corpus_file = resolve(workdir, corpus);
  const double ll = ood_mlm_eval(cp.model, cp.vocab, slurp(corpus_file));

  const fs::path dir = resolve(workdir, out);
  fs::create_directories(dir);
  json rec;
  rec["checkpoint"] = ckpt;
  rec["corpus"] = corpus;
  rec["model_mode"] = cp.mode;
  rec["log_likelihood"] = ll;
  {
    std::ofstream f(dir / "ood.json", std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + (dir / "ood.json").string());
    f << rec.dump(2) << "\n";
  }
  json m;
  m["command"] = "ood-eval";
  m["model_mode"] = cp.mode;
  m["inputs"]["checkpoint_manifest"] = file_hash(ckpt_dir / "manifest.json");
  m["inputs"]["corpus"] = file_hash(corpus_file);
  m["outputs"] = json::array({"ood.json"});
  m["log_likelihood"] = ll;
  write_manifest(dir, m);
  std::cout << "ood_log_likelihood=" << format_double(ll) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// report

struct ReportRow {
  std::string run, command, model, epoch, val_ll, task, task_metric, ood_ll;
};

ReportRow make_row(const fs::path& manifest_path, const fs::path& root) {
  const json m = json::parse(slurp(manifest_path));
  const fs::path dir = manifest_path.parent_path();
  ReportRow row;
  row.run = dir.lexically_relative(root).generic_string();
  row.command = m.at("command").get<std::string>();
  if (row.command == "pretrain") {
    row.model = m.at("mode").get<std::string>();
    std::istringstream metrics(slurp(dir / "metrics.jsonl"));
    std::string line;
    while (std::getline(metrics, line)) {
      const json rec = json::parse(line);
      if (!rec.at("val_log_likelihood").is_null()) {
        row.epoch = std::to_string(rec.at("epoch").get<long long>() + 1);
        row.val_ll = format_double(rec.at("val_log_likelihood").get<double>());
      }
    }
  } else if (row.command == "finetune") {
    const json choice = json::parse(slurp(dir / "choice.json"));
    row.model = choice.at("model_mode").get<std::string>();
    row.task = choice.at("task").get<std::string>();
    row.task_metric = format_double(choice.at("median_best_metric").get<double>());
  } else if (row.command == "ood-eval") {
    const json rec = json::parse(slurp(dir / "ood.json"));
    row.model = rec.at("model_mode").get<std::string>();
    row.ood_ll = format_double(rec.at("log_likelihood").get<double>());
  }
  return row;
}

int cmd_report(const fs::path& workdir, const std::string& runs, const std::string& out) {
  const fs::path root = resolve(workdir, runs);
  if (!fs::is_directory(root)) {
    std::cerr << "error: runs directory not found: " << root.string() << "\n";
    return 1;
  }
  std::vector<fs::path> manifests;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() == "run.json") manifests.push_back(e.path());
  std::sort(manifests.begin(), manifests.end());
  if (manifests.empty()) {
    std::cerr << "error: no runs found under " << root.string() << "\n";
    return 1;
  }

  std::vector<ReportRow> rows;
  for (const auto& p : manifests) {
    try {
      rows.push_back(make_row(p, root));
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping " << p.parent_path().string() << ": " << e.what() << "\n";
    }
  }

  const fs::path out_file = resolve(workdir, out);
  if (out_file.has_parent_path()) fs::create_directories(out_file.parent_path());
  std::ofstream f(out_file, std::ios::binary | std::ios::trunc);
  if (!f) {
    std::cerr << "error: cannot write " << out_file.string() << "\n";
    return 1;
  }
  f << "run,command,model,epoch,val_log_likelihood,task,task_metric,ood_log_likelihood\n";
  for (const auto& r : rows)
    f << r.run << ',' << r.command << ',' << r.model << ',' << r.epoch << ',' << r.val_ll << ','
      << r.task << ',' << r.task_metric << ',' << r.ood_ll << "\n";
  std::cout << "wrote " << out_file.string() << " (" << rows.size() << " rows)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixture-of-experts language-model lab"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string workdir = ".";
  app.add_option("--workdir", workdir, "root for relative paths")->envname("MOELAB_WORKDIR");

  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic corpus");
  std::string gen_out, gen_shift = "none";
  std::uint64_t gen_seed = 0;
  Index gen_tokens = 10000;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "corpus seed");
  gen->add_option("--tokens", gen_tokens, "target token count");
  gen->add_option("--shift", gen_shift, "distribution shift")
      ->check(CLI::IsMember({"none", "ood1", "ood2"}));

  auto* pre = app.add_subcommand("pretrain", "run masked-LM pre-training");
  std::string pre_config, pre_mode, pre_teacher, pre_out, pre_resume;
  std::optional<std::uint64_t> pre_seed;
  std::optional<Index> pre_epochs;
  pre->add_option("--config", pre_config, "run configuration file")->required();
  pre->add_option("--mode", pre_mode, "training mode")
      ->required()
      ->check(CLI::IsMember({"teacher", "moe-baseline", "moe-tcd"}));
  pre->add_option("--teacher-ckpt", pre_teacher, "teacher checkpoint (moe-tcd only)");
  pre->add_option("--out", pre_out, "output directory")->required();
  pre->add_option("--seed", pre_seed, "overrides [train] seed");
  pre->add_option("--epochs", pre_epochs, "overrides [train] epochs");
  pre->add_option("--resume", pre_resume, "checkpoint directory to continue from");

  auto* fin = app.add_subcommand("finetune", "fine-tuning grid on a generated task");
  std::string fin_ckpt, fin_task, fin_grid = "default", fin_out, fin_seeds = "0,1,2";
  Index fin_train = 192, fin_dev = 96, fin_epochs = 10, fin_seq_len = 0;
  std::uint64_t fin_task_seed = 5;
  fin->add_option("--ckpt", fin_ckpt, "pre-trained checkpoint directory")->required();
  fin->add_option("--task", fin_task, "task name")
      ->required()
      ->check(CLI::IsMember({"presence", "parity", "count"}));
  fin->add_option("--grid", fin_grid, "'default' or a grid file (mode lr [adapter_size])");
  fin->add_option("--out", fin_out, "runs root; each invocation gets a fresh run-NNN")->required();
  fin->add_option("--seeds", fin_seeds, "comma-separated fine-tuning seeds");
  fin->add_option("--train-examples", fin_train, "training examples");
  fin->add_option("--dev-examples", fin_dev, "dev examples");
  fin->add_option("--epochs", fin_epochs, "max fine-tuning epochs");
  fin->add_option("--seq-len", fin_seq_len, "task sequence length (0: min(16, model max))");
  fin->add_option("--task-seed", fin_task_seed, "task-generation seed");

  auto* ood = app.add_subcommand("ood-eval", "masked-LM score of a checkpoint on a corpus");
  std::string ood_ckpt, ood_corpus, ood_out;
  ood->add_option("--ckpt", ood_ckpt, "checkpoint directory")->required();
  ood->add_option("--corpus", ood_corpus, "corpus text file")->required();
  ood->add_option("--out", ood_out, "output directory")->required();

  auto* rep = app.add_subcommand("report", "aggregate runs into a CSV");
  std::string rep_runs, rep_out;
  rep->add_option("--runs", rep_runs, "directory scanned recursively for run.json")->required();
  rep->add_option("--out", rep_out, "CSV output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const fs::path wd(workdir);
    if (gen->parsed()) return cmd_gen_corpus(wd, gen_out, gen_seed, gen_tokens, gen_shift);
    if (pre->parsed())
      return cmd_pretrain(wd, pre_config, pre_mode, pre_teacher, pre_out, pre_seed, pre_epochs,
                          pre_resume);
    if (fin->parsed())
      return cmd_finetune(wd, fin_ckpt, fin_task, fin_grid, fin_out, fin_seeds, fin_train,
                          fin_dev, fin_epochs, fin_seq_len, fin_task_seed);
    if (ood->parsed()) return cmd_ood_eval(wd, ood_ckpt, ood_corpus, ood_out);
    if (rep->parsed()) return cmd_report(wd, rep_runs, rep_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  } catch (const CompatibilityError& e) {
    std::cerr << "compatibility error: " << e.what() << "\n";
    return 3;
  } catch (const CorruptionError& e) {
    std::cerr << "corruption error: " << e.what() << "\n";
    return 3;
  } catch (const VocabError& e) {
    std::cerr << "vocabulary error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
