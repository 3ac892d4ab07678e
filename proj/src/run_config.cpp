// SPDX-License-Identifier: Apache-2.0
#include "moelab/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "moelab/errors.hpp"
#include "moelab/rng.hpp"

namespace moelab {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

Index parse_index(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    long long v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return static_cast<Index>(v);
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + value + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    unsigned long long v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return static_cast<std::uint64_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an unsigned integer, got '" + value +
                      "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + value + "'");
  }
}

Aggregate parse_aggregate(const std::string& value) {
  if (value == "mean") return Aggregate::kMean;
  if (value == "sum") return Aggregate::kSum;
  throw ConfigError("config: aggregate expects mean|sum, got '" + value + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> kSetters = {
      {"model.hidden_dim", [](RunConfig& c, auto& k, auto& v) { c.model.hidden_dim = parse_index(k, v); }},
      {"model.num_layers", [](RunConfig& c, auto& k, auto& v) { c.model.num_layers = parse_index(k, v); }},
      {"model.num_heads", [](RunConfig& c, auto& k, auto& v) { c.model.num_heads = parse_index(k, v); }},
      {"model.ffn_dim", [](RunConfig& c, auto& k, auto& v) { c.model.ffn_dim = parse_index(k, v); }},
      {"model.vocab_size", [](RunConfig& c, auto& k, auto& v) { c.model.vocab_size = parse_index(k, v); }},
      {"model.max_seq_len", [](RunConfig& c, auto& k, auto& v) { c.model.max_seq_len = parse_index(k, v); }},
      {"model.ln_eps", [](RunConfig& c, auto& k, auto& v) { c.model.ln_eps = parse_double(k, v); }},
      {"model.dropout", [](RunConfig& c, auto& k, auto& v) { c.model.dropout = parse_double(k, v); }},
      {"moe.num_experts", [](RunConfig& c, auto& k, auto& v) { c.moe.num_experts = parse_index(k, v); }},
      {"moe.top_k", [](RunConfig& c, auto& k, auto& v) { c.moe.top_k = parse_index(k, v); }},
      {"moe.lambda_b", [](RunConfig& c, auto& k, auto& v) { c.moe.lambda_b = parse_double(k, v); }},
      {"distill.lambda_t", [](RunConfig& c, auto& k, auto& v) { c.distill.lambda_t = parse_double(k, v); }},
      {"distill.lambda_i", [](RunConfig& c, auto& k, auto& v) { c.distill.lambda_i = parse_double(k, v); }},
      {"distill.lambda_a", [](RunConfig& c, auto& k, auto& v) { c.distill.lambda_a = parse_double(k, v); }},
      {"distill.sample_total", [](RunConfig& c, auto& k, auto& v) { c.distill.sample_total = parse_index(k, v); }},
      {"distill.num_groups", [](RunConfig& c, auto& k, auto& v) { c.distill.num_groups = parse_index(k, v); }},
      {"distill.group_size", [](RunConfig& c, auto& k, auto& v) { c.distill.group_size = parse_index(k, v); }},
      {"distill.aggregate", [](RunConfig& c, auto&, auto& v) { c.distill.aggregate = parse_aggregate(v); }},
      {"train.peak_lr", [](RunConfig& c, auto& k, auto& v) { c.train.peak_lr = parse_double(k, v); }},
      {"train.beta1", [](RunConfig& c, auto& k, auto& v) { c.train.beta1 = parse_double(k, v); }},
      {"train.beta2", [](RunConfig& c, auto& k, auto& v) { c.train.beta2 = parse_double(k, v); }},
      {"train.adam_eps", [](RunConfig& c, auto& k, auto& v) { c.train.adam_eps = parse_double(k, v); }},
      {"train.weight_decay", [](RunConfig& c, auto& k, auto& v) { c.train.weight_decay = parse_double(k, v); }},
      {"train.warmup_steps", [](RunConfig& c, auto& k, auto& v) { c.train.warmup_steps = parse_index(k, v); }},
      {"train.total_steps", [](RunConfig& c, auto& k, auto& v) { c.train.total_steps = parse_index(k, v); }},
      {"train.batch_size", [](RunConfig& c, auto& k, auto& v) { c.train.batch_size = parse_index(k, v); }},
      {"train.epochs", [](RunConfig& c, auto& k, auto& v) { c.train.epochs = parse_index(k, v); }},
      {"train.log_every", [](RunConfig& c, auto& k, auto& v) { c.train.log_every = parse_index(k, v); }},
      {"train.checkpoint_every", [](RunConfig& c, auto& k, auto& v) { c.train.checkpoint_every = parse_index(k, v); }},
      {"train.val_every", [](RunConfig& c, auto& k, auto& v) { c.train.val_every = parse_index(k, v); }},
      {"train.seed", [](RunConfig& c, auto& k, auto& v) { c.train.seed = parse_u64(k, v); }},
      {"train.corpus", [](RunConfig& c, auto&, auto& v) { c.train.corpus = v; }},
  };
  return kSetters;
}

}  // namespace

void TrainConfig::validate() const {
  if (peak_lr <= 0) throw ConfigError("train.peak_lr must be positive");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    throw ConfigError("train.beta1/beta2 must lie in [0, 1)");
  if (adam_eps <= 0) throw ConfigError("train.adam_eps must be positive");
  if (weight_decay < 0) throw ConfigError("train.weight_decay must be nonnegative");
  if (warmup_steps < 0) throw ConfigError("train.warmup_steps must be nonnegative");
  if (total_steps < 0) throw ConfigError("train.total_steps must be nonnegative");
  if (batch_size <= 0) throw ConfigError("train.batch_size must be positive");
  if (epochs <= 0) throw ConfigError("train.epochs must be positive");
  if (log_every <= 0) throw ConfigError("train.log_every must be positive");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be nonnegative");
  if (val_every < 2) throw ConfigError("train.val_every must be at least 2");
}

void RunConfig::finalize() {
  model.finalize();
  moe.validate();
  distill.validate();
  train.validate();
}

RunConfig parse_run_config(std::istream& is) {
  RunConfig cfg;
  std::string line, section;
  Index line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) + ": malformed section header");
      section = t.substr(1, t.size() - 2);
      if (section != "model" && section != "moe" && section != "distill" && section != "train")
        throw ConfigError("config: unknown section [" + section + "]");
      continue;
    }
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    if (section.empty())
      throw ConfigError("config line " + std::to_string(line_no) + ": key outside any section");
    const std::string key = section + "." + trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("config: unknown key '" + key + "'");
    it->second(cfg, key, value);
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot read '" + path + "'");
  return parse_run_config(f);
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw NumericError("format_double: conversion failed");
  return std::string(buf, ptr);
}

std::string write_run_config(const RunConfig& cfg) {
  std::ostringstream os;
  os << "[model]\n";
  os << "hidden_dim = " << cfg.model.hidden_dim << "\n";
  os << "num_layers = " << cfg.model.num_layers << "\n";
  os << "num_heads = " << cfg.model.num_heads << "\n";
  os << "ffn_dim = " << cfg.model.ffn_dim << "\n";
  os << "vocab_size = " << cfg.model.vocab_size << "\n";
  os << "max_seq_len = " << cfg.model.max_seq_len << "\n";
  os << "ln_eps = " << format_double(cfg.model.ln_eps) << "\n";
  os << "dropout = " << format_double(cfg.model.dropout) << "\n";
  os << "\n[moe]\n";
  os << "num_experts = " << cfg.moe.num_experts << "\n";
  os << "top_k = " << cfg.moe.top_k << "\n";
  os << "lambda_b = " << format_double(cfg.moe.lambda_b) << "\n";
  os << "\n[distill]\n";
  os << "lambda_t = " << format_double(cfg.distill.lambda_t) << "\n";
  os << "lambda_i = " << format_double(cfg.distill.lambda_i) << "\n";
  os << "lambda_a = " << format_double(cfg.distill.lambda_a) << "\n";
  os << "sample_total = " << cfg.distill.sample_total << "\n";
  os << "num_groups = " << cfg.distill.num_groups << "\n";
  os << "group_size = " << cfg.distill.group_size << "\n";
  os << "aggregate = " << (cfg.distill.aggregate == Aggregate::kMean ? "mean" : "sum") << "\n";
  os << "\n[train]\n";
  os << "peak_lr = " << format_double(cfg.train.peak_lr) << "\n";
  os << "beta1 = " << format_double(cfg.train.beta1) << "\n";
  os << "beta2 = " << format_double(cfg.train.beta2) << "\n";
  os << "adam_eps = " << format_double(cfg.train.adam_eps) << "\n";
  os << "weight_decay = " << format_double(cfg.train.weight_decay) << "\n";
  os << "warmup_steps = " << cfg.train.warmup_steps << "\n";
  os << "total_steps = " << cfg.train.total_steps << "\n";
  os << "batch_size = " << cfg.train.batch_size << "\n";
  os << "epochs = " << cfg.train.epochs << "\n";
  os << "log_every = " << cfg.train.log_every << "\n";
  os << "checkpoint_every = " << cfg.train.checkpoint_every << "\n";
  os << "val_every = " << cfg.train.val_every << "\n";
  os << "seed = " << cfg.train.seed << "\n";
  os << "corpus = " << cfg.train.corpus << "\n";
  return os.str();
}

std::uint64_t config_hash(const RunConfig& cfg) { return hash_str(write_run_config(cfg)); }

}  // namespace moelab
