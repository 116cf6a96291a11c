#include "inat/cli.hpp"

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "inat/accounting.hpp"
#include "inat/checkpoint.hpp"
#include "inat/data_io.hpp"
#include "inat/model.hpp"
#include "inat/runconfig.hpp"
#include "inat/training.hpp"

namespace inat {
namespace {

namespace fs = std::filesystem;

std::vector<int64_t> parse_lengths(const std::string& csv) {
  std::vector<int64_t> out;
  size_t pos = 0;
  while (pos <= csv.size()) {
    const size_t comma = csv.find(',', pos);
    const std::string item = csv.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (item.empty()) throw ConfigError("--lengths: empty entry in '" + csv + "'");
    out.push_back(detail::parse_int("lengths", item));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (out.empty()) throw ConfigError("--lengths: no values given");
  return out;
}

MaskSpec parse_mask_flag(const std::string& text, int64_t T) {
  if (text == "dense") return MaskSpec::dense_causal(T);
  if (text == "inattention") return MaskSpec::inattention_inference(T);
  if (text.rfind("sliding:", 0) == 0)
    return MaskSpec::sliding(T, detail::parse_int("mask window", text.substr(8)));
  throw ConfigError("--mask: expected dense, sliding:<w> or inattention, got '" + text + "'");
}

RunConfig load_run_config(const std::string& path) { return parse_run_config(read_file(path)); }

void ensure_out_dir(const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());
}

template <typename Real>
void run_train(const RunConfig& cfg, const std::string& out_dir) {
  if (cfg.corpus_path.empty()) throw ConfigError("config: paths.corpus is required for training");
  ensure_out_dir(out_dir);
  const auto corpus = load_corpus(cfg.corpus_path);
  auto params = init_params<Real>(cfg.model, cfg.train.seed);
  CheckpointMeta meta{cfg.train.seed, 0, cfg.train.context_length, cfg.train.lr_init};
  const auto sink = [&](int64_t step, bool final) {
    meta.step = step;
    save_checkpoint(params, meta,
                    fs::path(out_dir) / (final ? "model.inat" : "ckpt-step-" + std::to_string(step) + ".inat"));
  };
  const auto curve = train(params, corpus, cfg.train, sink);
  write_file(fs::path(out_dir) / "loss.csv", loss_curve_csv(curve));
  std::cout << "trained " << curve.size() << " steps, final loss " << format_double(curve.back().loss)
            << "\n";
}

template <typename Real>
void run_finetune(const std::string& ckpt_path, const RunConfig& cfg, const std::string& out_dir,
                  std::optional<double> lr_override) {
  if (cfg.corpus_path.empty()) throw ConfigError("config: paths.corpus is required for finetuning");
  ensure_out_dir(out_dir);
  auto loaded = load_checkpoint<Real>(ckpt_path);
  const auto corpus = load_corpus(cfg.corpus_path);
  TrainConfig ft = cfg.train;
  // One order of magnitude below the pretrain rate unless explicitly overridden.
  ft.lr_init = lr_override ? *lr_override : loaded.meta.lr_init / 10.0;
  CheckpointMeta meta{ft.seed, loaded.meta.step, ft.context_length, ft.lr_init};
  auto& params = loaded.params;
  const auto sink = [&](int64_t step, bool final) {
    meta.step = loaded.meta.step + step;
    save_checkpoint(params, meta,
                    fs::path(out_dir) / (final ? "model.inat" : "ckpt-step-" + std::to_string(step) + ".inat"));
  };
  const auto curve = finetune(params, corpus, ft, loaded.meta.context_length, sink);
  write_file(fs::path(out_dir) / "loss.csv", loss_curve_csv(curve));
  std::cout << "finetuned " << curve.size() << " steps at lr " << format_double(ft.lr_init)
            << ", final loss " << format_double(curve.back().loss) << "\n";
}

template <typename Real>
void run_eval(const std::string& ckpt_path, const std::string& corpus_path,
              const std::vector<int64_t>& lengths) {
  auto loaded = load_checkpoint<Real>(ckpt_path);
  const auto corpus = load_corpus(corpus_path);
  auto report = eval_sweep(loaded.params, corpus, lengths);
  report.checkpoint_id = fs::path(ckpt_path).filename().string();
  std::cout << eval_report_csv(report);
}

template <typename Real>
void run_generate(const std::string& ckpt_path, const std::string& prompt_path, int64_t n,
                  const std::string& mode, double temperature, uint64_t seed) {
  auto loaded = load_checkpoint<Real>(ckpt_path);
  const auto prompt = tokenize(read_file(prompt_path));
  Sampler sampler = [&] {
    if (mode == "greedy") return Sampler::greedy();
    if (mode == "temp") return Sampler::temperature(temperature, seed);
    throw ConfigError("--mode: expected greedy or temp, got '" + mode + "'");
  }();
  const auto out = generate(loaded.params, prompt, n, sampler);
  std::cout << detokenize(out);
}

ElemWidth checkpoint_width(const std::string& ckpt_path) {
  const auto file = read_checkpoint_file(ckpt_path);
  return width_from_name(file.header.at("config").at("width").get<std::string>());
}

template <typename FnF32, typename FnF64>
void dispatch_width(ElemWidth w, FnF32&& f32, FnF64&& f64) {
  if (w == ElemWidth::F32) f32();
  else f64();
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"dense and InAttention transformer workbench"};
  app.require_subcommand(1);

  std::string config_path, out_dir, ckpt_path, corpus_path, lengths_csv, prompt_path;
  std::string mask_text, phase_text = "train", mode = "greedy";
  int64_t T = 0, L = 1, n_tokens = 0;
  int64_t budget_bytes = kDefaultMemBudget;
  double temperature = 1.0;
  std::optional<double> lr_override;
  uint64_t seed = 0;

  auto* c_train = app.add_subcommand("train", "pretrain a model from a run config");
  c_train->add_option("--config", config_path)->required();
  c_train->add_option("--out", out_dir)->required();

  auto* c_ft = app.add_subcommand("finetune", "context-extension finetune from a checkpoint");
  c_ft->add_option("--ckpt", ckpt_path)->required();
  c_ft->add_option("--config", config_path)->required();
  c_ft->add_option("--out", out_dir)->required();
  c_ft->add_option("--lr", [&lr_override](const std::vector<std::string>& v) {
    lr_override = std::stod(v[0]);
    return true;
  }, "override the pretrain-lr/10 default");

  auto* c_eval = app.add_subcommand("eval", "mean loss over a corpus at several context lengths");
  c_eval->add_option("--ckpt", ckpt_path)->required();
  c_eval->add_option("--corpus", corpus_path)->required();
  c_eval->add_option("--lengths", lengths_csv)->required();

  auto* c_gen = app.add_subcommand("generate", "sample bytes from a checkpoint");
  c_gen->add_option("--ckpt", ckpt_path)->required();
  c_gen->add_option("--prompt-file", prompt_path)->required();
  c_gen->add_option("--n", n_tokens)->required();
  c_gen->add_option("--mode", mode);
  c_gen->add_option("--temperature", temperature);
  c_gen->add_option("--seed", seed);

  auto* c_params = app.add_subcommand("params", "parameter count and per-block breakdown");
  c_params->add_option("--config", config_path)->required();

  auto* c_pairs = app.add_subcommand("count-pairs", "attention-pair count for a mask and phase");
  c_pairs->add_option("--mask", mask_text)->required();
  c_pairs->add_option("--T", T)->required();
  c_pairs->add_option("--L", L)->required();
  c_pairs->add_option("--phase", phase_text);

  auto* c_bench = app.add_subcommand("bench-mem", "prefill memory scaling report");
  c_bench->add_option("--config", config_path)->required();
  c_bench->add_option("--lengths", lengths_csv)->required();
  c_bench->add_option("--budget-bytes", budget_bytes);

  auto* c_inspect = app.add_subcommand("inspect-ckpt", "dump a checkpoint manifest");
  c_inspect->add_option("--ckpt", ckpt_path)->required();

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      std::cout << app.help();
      return 0;
    }
    std::cerr << e.what() << "\n";
    return 1;
  }

  try {
    if (c_train->parsed()) {
      const auto cfg = load_run_config(config_path);
      dispatch_width(cfg.model.width, [&] { run_train<float>(cfg, out_dir); },
                     [&] { run_train<double>(cfg, out_dir); });
    } else if (c_ft->parsed()) {
      const auto cfg = load_run_config(config_path);
      dispatch_width(checkpoint_width(ckpt_path),
                     [&] { run_finetune<float>(ckpt_path, cfg, out_dir, lr_override); },
                     [&] { run_finetune<double>(ckpt_path, cfg, out_dir, lr_override); });
    } else if (c_eval->parsed()) {
      const auto lengths = parse_lengths(lengths_csv);
      dispatch_width(checkpoint_width(ckpt_path),
                     [&] { run_eval<float>(ckpt_path, corpus_path, lengths); },
                     [&] { run_eval<double>(ckpt_path, corpus_path, lengths); });
    } else if (c_gen->parsed()) {
      dispatch_width(checkpoint_width(ckpt_path),
                     [&] { run_generate<float>(ckpt_path, prompt_path, n_tokens, mode, temperature, seed); },
                     [&] { run_generate<double>(ckpt_path, prompt_path, n_tokens, mode, temperature, seed); });
    } else if (c_params->parsed()) {
      const auto cfg = load_run_config(config_path);
      const auto b = param_breakdown(cfg.model);
      std::cout << "variant: " << variant_name(cfg.model.variant) << "\n"
                << "embedding: " << b.embedding << "\n"
                << "attention: " << b.attention << "\n"
                << "mlp: " << b.mlp << "\n"
                << "norms: " << b.norms << "\n"
                << "decoder: " << b.decoder << "\n"
                << "total: " << b.total() << "\n";
    } else if (c_pairs->parsed()) {
      const auto report = pair_count(parse_mask_flag(mask_text, T), L, phase_from_name(phase_text));
      std::cout << pair_count_text(report);
    } else if (c_bench->parsed()) {
      const auto cfg = load_run_config(config_path);
      const auto lengths = parse_lengths(lengths_csv);
      const auto rows = cfg.model.width == ElemWidth::F32
                            ? scaling_report<float>(cfg.model, lengths, budget_bytes)
                            : scaling_report<double>(cfg.model, lengths, budget_bytes);
      std::cout << scaling_csv(rows);
    } else if (c_inspect->parsed()) {
      std::cout << checkpoint_manifest_text(read_checkpoint_file(ckpt_path).header);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace inat
