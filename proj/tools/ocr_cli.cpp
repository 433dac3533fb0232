#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "ocr/checkpoint.hpp"
#include "ocr/evaluate.hpp"
#include "ocr/gradcheck_suites.hpp"
#include "ocr/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitPartial = 2;
constexpr int kExitRuntime = 3;

int cmd_synthgen(std::int64_t n, std::uint64_t seed, const std::string& out, const std::string& charset) {
  auto corpus = ocr::synth_corpus(n, seed, charset);
  ocr::save_corpus(out, corpus);
  std::cout << "wrote " << corpus.size() << " samples to " << out << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides) {
  ocr::TrainConfig config = ocr::parse_train_config(config_path);
  for (const auto& kv : overrides) ocr::apply_override(config, kv);
  auto result = ocr::train(config);
  std::cout << "trained " << result.steps << " steps, final train accuracy " << result.final_train_acc << "\n"
            << "checkpoint: " << result.final_checkpoint << "\n"
            << "metrics:    " << result.metrics_path << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& datasets_arg, const std::string& preset,
             const std::string& csv_path, bool filter_alnum, std::int64_t min_length, std::int64_t batch) {
  auto loaded = ocr::load_checkpoint<ocr::TrainScalar>(checkpoint);
  std::vector<ocr::EvalDatasetSpec> specs;
  std::stringstream ss(datasets_arg);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--datasets expects name=path pairs, got '" + item + "'");
    specs.push_back({item.substr(0, eq), item.substr(eq + 1)});
  }
  if (specs.empty()) throw std::invalid_argument("--datasets is empty");

  ocr::EvalProtocol protocol;
  protocol.case_mode = loaded.config.case_mode;
  bool by_name = false;
  if (preset == "auto") {
    by_name = true;
  } else if (!preset.empty()) {
    protocol = ocr::protocol_preset(preset);
    protocol.case_mode = loaded.config.case_mode;
  }
  if (filter_alnum) protocol.filter_non_alphanumeric = true;
  if (min_length > 0) protocol.min_length = min_length;

  ocr::EvalReport report = ocr::evaluate(loaded.model, specs, protocol, by_name, batch);
  report.checkpoint_id = checkpoint;
  std::cout << ocr::render_report_text(report);
  if (!csv_path.empty()) {
    std::ofstream f(csv_path);
    if (!f) throw std::runtime_error("cannot write CSV to " + csv_path);
    f << ocr::render_report_csv(report);
  }
  return report.partial ? kExitPartial : kExitOk;
}

int cmd_predict(const std::string& checkpoint, const std::string& image_path, const std::string& attention_csv,
                std::int64_t max_len) {
  auto loaded = ocr::load_checkpoint<ocr::TrainScalar>(checkpoint);
  ocr::Image8 img = ocr::read_pnm(image_path);
  ocr::RandomStream rng(0);
  ocr::WordSample sample{std::move(img), "-", "cli"};
  auto input = ocr::preprocess<ocr::TrainScalar>(sample, false, rng);
  std::vector<ocr::TrainScalar> data(input.data(), input.data() + input.size());
  auto batch = ocr::Tensor<ocr::TrainScalar>::from({1, 1, ocr::kInputH, ocr::kInputW}, std::move(data));
  auto result = loaded.model.predict(batch, max_len);
  std::cout << result.texts[0] << "\n";
  if (!attention_csv.empty()) {
    std::ofstream f(attention_csv);
    if (!f) throw std::runtime_error("cannot write attention CSV to " + attention_csv);
    const std::int64_t p = loaded.config.head.positions();
    for (std::int64_t s = 0; s < result.steps[0]; ++s) {
      for (std::int64_t i = 0; i < p; ++i) {
        if (i) f << ",";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.8g", static_cast<double>(result.attention[0][static_cast<std::size_t>(s * p + i)]));
        f << buf;
      }
      f << "\n";
    }
  }
  return kExitOk;
}

int cmd_gradcheck(const std::string& ops, std::uint64_t seed) {
  auto reports = ocr::gradsuite::run(ops, seed);
  bool all_pass = true;
  for (const auto& r : reports) {
    std::printf("%-16s max rel. error %.3e over %lld checks (tol %.0e) %s\n", r.op.c_str(), r.fd.max_rel_err,
                static_cast<long long>(r.fd.checks), r.tol, r.pass() ? "PASS" : "FAIL");
    all_pass = all_pass && r.pass();
  }
  return all_pass ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scene text recognition: TPS rectification + grouped-conv backbone + attention decoder"};
  app.require_subcommand(1);

  auto* synthgen = app.add_subcommand("synthgen", "generate a synthetic word-image corpus");
  std::int64_t sg_n = 32;
  std::uint64_t sg_seed = 7;
  std::string sg_out = "corpus";
  std::string sg_charset = "0123456789abcdefghijklmnopqrstuvwxyz";
  synthgen->add_option("--n", sg_n, "number of samples")->required();
  synthgen->add_option("--seed", sg_seed, "rng seed");
  synthgen->add_option("--out", sg_out, "output directory")->required();
  synthgen->add_option("--charset", sg_charset, "characters to draw from");

  auto* train = app.add_subcommand("train", "train a model from a config file");
  std::string tr_config;
  std::vector<std::string> tr_overrides;
  train->add_option("--config", tr_config, "key=value or JSON config file")->required();
  train->add_option("--override", tr_overrides, "config overrides (key=value)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on benchmark datasets");
  std::string ev_ckpt, ev_datasets, ev_preset, ev_csv;
  bool ev_filter = false;
  std::int64_t ev_minlen = 0, ev_batch = 48;
  eval->add_option("--checkpoint", ev_ckpt, "checkpoint path")->required();
  eval->add_option("--datasets", ev_datasets, "name=path[,name=path...]")->required();
  eval->add_option("--preset", ev_preset, "protocol preset name, or 'auto' to match by dataset name");
  eval->add_option("--csv", ev_csv, "also write the report as CSV");
  eval->add_flag("--filter-alnum", ev_filter, "drop non-alphanumeric ground truths");
  eval->add_option("--min-length", ev_minlen, "drop ground truths shorter than this");
  eval->add_option("--batch", ev_batch, "decode batch size");

  auto* predict = app.add_subcommand("predict", "transcribe one word crop (PGM/PPM)");
  std::string pr_ckpt, pr_image, pr_attn;
  std::int64_t pr_maxlen = 0;
  predict->add_option("--checkpoint", pr_ckpt, "checkpoint path")->required();
  predict->add_option("--image", pr_image, "input image (binary PGM/PPM)")->required();
  predict->add_option("--dump-attention", pr_attn, "write per-step attention weights as CSV");
  predict->add_option("--max-len", pr_maxlen, "decode step limit (default: model max_len)");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::string gc_ops = "all";
  std::uint64_t gc_seed = 1;
  gradcheck->add_option("--ops", gc_ops, "'all' or one op name (conv2d, gru_cell, bilinear_sample, softmax, "
                                         "log_softmax, nll_loss, tps_grid, attention, group_norm, max_pool, linear, "
                                         "model)");
  gradcheck->add_option("--seed", gc_seed, "rng seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synthgen) return cmd_synthgen(sg_n, sg_seed, sg_out, sg_charset);
    if (*train) return cmd_train(tr_config, tr_overrides);
    if (*eval) return cmd_eval(ev_ckpt, ev_datasets, ev_preset, ev_csv, ev_filter, ev_minlen, ev_batch);
    if (*predict) return cmd_predict(pr_ckpt, pr_image, pr_attn, pr_maxlen);
    if (*gradcheck) return cmd_gradcheck(gc_ops, gc_seed);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
