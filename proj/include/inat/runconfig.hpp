#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "inat/model.hpp"
#include "inat/training.hpp"

namespace inat {

// `key = value` run configuration. One assignment per line, `#` starts a
// comment, unknown or duplicate keys are rejected. Missing keys keep their
// defaults; serialize() emits every key so files round-trip exactly.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string corpus_path;
  std::string eval_corpus_path;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const int64_t x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' needs an integer, got '" + v + "'");
  }
}

inline uint64_t parse_uint(const std::string& key, const std::string& v) {
  const int64_t x = parse_int(key, v);
  if (x < 0) throw ConfigError("config: key '" + key + "' must be non-negative, got '" + v + "'");
  return static_cast<uint64_t>(x);
}

inline double parse_float(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' needs a number, got '" + v + "'");
  }
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::map<std::string, bool> seen;
  size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const size_t eol = text.find('\n', pos);
    std::string line = text.substr(pos, eol == std::string::npos ? std::string::npos : eol - pos);
    pos = eol == std::string::npos ? text.size() + 1 : eol + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value', got '" +
                        line + "'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    if (seen[key]) throw ConfigError("config: duplicate key '" + key + "'");
    seen[key] = true;

    if (key == "model.variant") cfg.model.variant = variant_from_name(value);
    else if (key == "model.d") cfg.model.d = detail::parse_int(key, value);
    else if (key == "model.f") cfg.model.f = detail::parse_int(key, value);
    else if (key == "model.L") cfg.model.L = detail::parse_int(key, value);
    else if (key == "model.H") cfg.model.H = detail::parse_int(key, value);
    else if (key == "model.vocab") cfg.model.vocab = detail::parse_int(key, value);
    else if (key == "model.rope_base") cfg.model.rope.base = detail::parse_float(key, value);
    else if (key == "model.rotary_dim") cfg.model.rope.rotary_dim = detail::parse_int(key, value);
    else if (key == "model.ln_eps") cfg.model.ln_eps = detail::parse_float(key, value);
    else if (key == "model.width") cfg.model.width = width_from_name(value);
    else if (key == "train.lr_init") cfg.train.lr_init = detail::parse_float(key, value);
    else if (key == "train.beta1") cfg.train.beta1 = detail::parse_float(key, value);
    else if (key == "train.beta2") cfg.train.beta2 = detail::parse_float(key, value);
    else if (key == "train.adam_eps") cfg.train.adam_eps = detail::parse_float(key, value);
    else if (key == "train.weight_decay") cfg.train.weight_decay = detail::parse_float(key, value);
    else if (key == "train.lr_floor") cfg.train.lr_floor = detail::parse_float(key, value);
    else if (key == "train.steps") cfg.train.steps = detail::parse_int(key, value);
    else if (key == "train.grad_accumulation") cfg.train.grad_accumulation = detail::parse_int(key, value);
    else if (key == "train.batch_size") cfg.train.batch_size = detail::parse_int(key, value);
    else if (key == "train.context_length") cfg.train.context_length = detail::parse_int(key, value);
    else if (key == "train.checkpoint_every") cfg.train.checkpoint_every = detail::parse_int(key, value);
    else if (key == "train.seed") cfg.train.seed = detail::parse_uint(key, value);
    else if (key == "paths.corpus") cfg.corpus_path = value;
    else if (key == "paths.eval_corpus") cfg.eval_corpus_path = value;
    else throw ConfigError("config: unknown key '" + key + "'");
  }
  cfg.model.validate();
  return cfg;
}

inline std::string serialize_run_config(RunConfig cfg) {
  cfg.model.validate();  // resolve the rotary_dim=0 sentinel so output reparses to itself
  const auto fnum = [](double v) { return format_double(v); };
  std::string out;
  out += "model.variant = " + std::string(variant_name(cfg.model.variant)) + "\n";
  out += "model.d = " + std::to_string(cfg.model.d) + "\n";
  out += "model.f = " + std::to_string(cfg.model.f) + "\n";
  out += "model.L = " + std::to_string(cfg.model.L) + "\n";
  out += "model.H = " + std::to_string(cfg.model.H) + "\n";
  out += "model.vocab = " + std::to_string(cfg.model.vocab) + "\n";
  out += "model.rope_base = " + fnum(cfg.model.rope.base) + "\n";
  out += "model.rotary_dim = " + std::to_string(cfg.model.rope.rotary_dim) + "\n";
  out += "model.ln_eps = " + fnum(cfg.model.ln_eps) + "\n";
  out += "model.width = " + std::string(width_name(cfg.model.width)) + "\n";
  out += "train.lr_init = " + fnum(cfg.train.lr_init) + "\n";
  out += "train.beta1 = " + fnum(cfg.train.beta1) + "\n";
  out += "train.beta2 = " + fnum(cfg.train.beta2) + "\n";
  out += "train.adam_eps = " + fnum(cfg.train.adam_eps) + "\n";
  out += "train.weight_decay = " + fnum(cfg.train.weight_decay) + "\n";
  out += "train.lr_floor = " + fnum(cfg.train.lr_floor) + "\n";
  out += "train.steps = " + std::to_string(cfg.train.steps) + "\n";
  out += "train.grad_accumulation = " + std::to_string(cfg.train.grad_accumulation) + "\n";
  out += "train.batch_size = " + std::to_string(cfg.train.batch_size) + "\n";
  out += "train.context_length = " + std::to_string(cfg.train.context_length) + "\n";
  out += "train.checkpoint_every = " + std::to_string(cfg.train.checkpoint_every) + "\n";
  out += "train.seed = " + std::to_string(cfg.train.seed) + "\n";
  out += "paths.corpus = " + cfg.corpus_path + "\n";
  out += "paths.eval_corpus = " + cfg.eval_corpus_path + "\n";
  return out;
}

}  // namespace inat
