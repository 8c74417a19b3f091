// lmim: command-line entry point for corpus generation, pre-training,
// fine-tuning, evaluation, ablations and attention maps.
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.

#include "lmim/lmim.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using lmim::RunConfig;

namespace {

struct Command {
  std::string name;
  std::string description;
  std::string own_section;               // keys also reachable as --key
  std::vector<std::string> sections;     // all sections the command reads
};

const std::vector<Command>& commands() {
  static const std::vector<Command> cmds{
      {"gen-corpus", "render a labelled synthetic corpus", "corpus", {"general", "corpus"}},
      {"pretrain", "LMIM pre-training", "pretrain", {"general", "encoder", "decoder", "pretrain"}},
      {"finetune", "fine-tune the recognizer", "finetune", {"general", "corpus", "encoder", "recognizer", "finetune"}},
      {"evaluate", "score a recognizer on labelled corpora", "evaluate", {"general", "evaluate"}},
      {"ablate", "run the desk-scale ablation tables", "ablate", {"general", "ablate"}},
      {"attmap", "attention heatmaps for a query patch", "attmap", {"general", "attmap"}},
  };
  return cmds;
}

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = lmim::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw lmim::IoError(path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw lmim::IoError(path.string() + ": write failed");
}

class Provenance {
public:
  Provenance(std::string command, const RunConfig& cfg, std::vector<std::string> argv)
      : command_(std::move(command)), cfg_(cfg), argv_(std::move(argv)), started_(now_iso()) {}

  void write(const fs::path& out, const std::string& status, const nlohmann::json& extra = {}) const {
    nlohmann::json j{{"command", command_}, {"argv", argv_},          {"seed", cfg_.seed()},
                     {"config", cfg_.to_json()}, {"started", started_}, {"status", status}};
    if (status != "running") j["finished"] = now_iso();
    if (!extra.is_null()) j["result"] = extra;
    fs::create_directories(out);
    write_text(out / "run.json", j.dump(2) + "\n");
  }

private:
  std::string command_;
  const RunConfig& cfg_;
  std::vector<std::string> argv_;
  std::string started_;
};

std::vector<lmim::TextSample> load_corpus_checked(const std::string& key, const std::string& dir) {
  if (dir.empty()) throw lmim::ValidationError(key + " is required");
  if (!fs::is_directory(dir)) throw lmim::ValidationError(key + ": '" + dir + "' is not a directory");
  return lmim::load_corpus(dir);
}

// -- subcommands -------------------------------------------------------------

nlohmann::json cmd_gen_corpus(const RunConfig& cfg, const fs::path& out) {
  const std::string vocab_path = cfg.text("corpus.vocab");
  if (vocab_path.empty()) throw lmim::ValidationError("corpus.vocab is required");
  const auto vocab = lmim::read_vocab(vocab_path);
  const lmim::Charset cs = lmim::Charset::from_utf8(cfg.text("corpus.charset"));
  for (const auto& w : vocab) cs.validate(w);
  const long count = cfg.integer("corpus.count");
  if (count < 1) throw lmim::ValidationError("corpus.count must be >= 1");
  const auto level = lmim::parse_aug_level(cfg.text("corpus.augmentation"));
  const auto m = lmim::generate_corpus(vocab, static_cast<int>(count), lmim::AugmentationPolicy::make(level, cfg.seed()),
                                       cfg.seed(), out, cs);
  std::cout << "wrote " << m.count << " images to " << out.string() << "\n";
  return {{"images", m.count}};
}

nlohmann::json cmd_pretrain(const RunConfig& cfg, const fs::path& out) {
  const lmim::PretrainConfig pc = cfg.pretrain();
  const std::string resume = cfg.text("pretrain.resume");
  if (!resume.empty() && !fs::exists(resume)) throw lmim::ValidationError("pretrain.resume: '" + resume + "' does not exist");
  const auto samples = load_corpus_checked("pretrain.corpus", cfg.text("pretrain.corpus"));

  std::shared_ptr<const lmim::Encoder<float>> teacher;
  if (pc.target == lmim::TargetKind::teacher_feature) {
    std::optional<lmim::Checkpoint> resumed;
    if (!resume.empty()) resumed = lmim::load_checkpoint(resume);
    if (resumed && resumed->has("teacher.embed.weight")) {
      teacher = lmim::load_encoder<float>(*resumed, "teacher");
    } else {
      if (pc.teacher_checkpoint.empty()) std::cerr << "training a " << pc.teacher_steps << "-step MAE teacher\n";
      teacher = lmim::make_teacher<float>(samples, pc);
    }
  }
  lmim::Pretrainer<float> trainer(samples, pc, teacher);
  if (!resume.empty()) trainer.resume(lmim::load_checkpoint(resume));
  const int every = std::max(1, trainer.steps_per_epoch());
  const auto log = trainer.run(out, [&](const lmim::TrainLogRow& r) {
    if ((r.step + 1) % every == 0) std::cerr << "step " << r.step + 1 << "/" << trainer.total_steps() << "  " << lmim::format_log_row(r) << "\n";
  });
  lmim::save_checkpoint(trainer.checkpoint(), out / "pretrain.ckpt");
  nlohmann::json res{{"steps", trainer.step()}, {"checkpoint", (out / "pretrain.ckpt").string()}};
  if (!log.empty()) res["final_total"] = log.back().total;
  std::cout << "checkpoint " << (out / "pretrain.ckpt").string() << "\n";
  return res;
}

nlohmann::json cmd_finetune(const RunConfig& cfg, const fs::path& out) {
  const lmim::FinetuneConfig fc = cfg.finetune();
  const auto samples = load_corpus_checked("finetune.corpus", cfg.text("finetune.corpus"));
  lmim::Finetuner<float> ft(samples, fc);
  const auto log = ft.run(out, [](const lmim::FinetuneLogRow& r) {
    std::cerr << "epoch " << r.epoch << " loss " << r.loss << " token_acc " << r.token_acc << " word_acc " << r.word_acc << "\n";
  });
  std::cout << "checkpoint " << (out / "recognizer.ckpt").string() << "\n";
  return {{"epochs", log.size()}, {"final_loss", log.back().loss}, {"final_word_acc", log.back().word_acc},
          {"checkpoint", (out / "recognizer.ckpt").string()}};
}

nlohmann::json cmd_evaluate(const RunConfig& cfg, const fs::path& out) {
  const std::string ckpt = cfg.text("evaluate.checkpoint");
  if (ckpt.empty()) throw lmim::ValidationError("evaluate.checkpoint is required");
  if (!fs::exists(ckpt)) throw lmim::ValidationError("evaluate.checkpoint: '" + ckpt + "' does not exist");
  const auto dirs = split(cfg.text("evaluate.corpora"), ',');
  if (dirs.empty()) throw lmim::ValidationError("evaluate.corpora is required");
  const auto mode = lmim::parse_match_mode(cfg.text("evaluate.mode"));
  std::vector<fs::path> paths(dirs.begin(), dirs.end());
  const lmim::EvalReport rep = lmim::run_benchmark(fs::path(ckpt), paths, mode);
  const std::string csv = rep.to_csv();
  fs::create_directories(out);
  write_text(out / "eval.csv", csv);
  std::cout << csv;
  return rep.to_json();
}

nlohmann::json cmd_ablate(const RunConfig& cfg, const fs::path& out) {
  lmim::AblationSettings s = lmim::AblationSettings::preset(cfg.text("ablate.preset"));
  if (cfg.integer("ablate.train_count") > 0) s.train_count = static_cast<int>(cfg.integer("ablate.train_count"));
  if (cfg.integer("ablate.eval_per_subset") > 0) s.eval_per_subset = static_cast<int>(cfg.integer("ablate.eval_per_subset"));
  s.seed = cfg.seed();
  std::vector<lmim::AblationAxis> axes;
  if (cfg.text("ablate.axis") == "all") {
    axes = lmim::all_ablation_axes();
  } else {
    axes.push_back(lmim::parse_ablation_axis(cfg.text("ablate.axis")));
  }
  fs::create_directories(out);
  nlohmann::json res = nlohmann::json::object();
  for (auto axis : axes) {
    const auto table = lmim::run_ablation(axis, s, [](const std::string& msg) { std::cerr << msg << "\n"; });
    const std::string csv = table.to_csv();
    const fs::path file = out / ("ablation_" + lmim::to_string(axis) + ".csv");
    write_text(file, csv);
    std::cout << csv << "\n";
    res[lmim::to_string(axis)] = {{"rows", table.reports.size()}, {"csv", file.string()}};
  }
  return res;
}

nlohmann::json cmd_attmap(const RunConfig& cfg, const fs::path& out) {
  const auto specs = split(cfg.text("attmap.checkpoints"), ',');
  if (specs.empty()) throw lmim::ValidationError("attmap.checkpoints is required");
  const std::string image_path = cfg.text("attmap.image");
  if (image_path.empty()) throw lmim::ValidationError("attmap.image is required");
  const lmim::Image image = lmim::read_png(image_path);
  std::vector<std::pair<std::string, std::shared_ptr<lmim::Encoder<double>>>> encoders;
  for (const auto& spec : specs) {
    const auto eq = spec.find('=');
    const std::string name = eq == std::string::npos ? fs::path(spec).stem().string() : spec.substr(0, eq);
    const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
    if (!fs::exists(path)) throw lmim::ValidationError("attmap.checkpoints: '" + path + "' does not exist");
    encoders.emplace_back(name, lmim::load_encoder<double>(lmim::load_checkpoint(path)));
  }
  std::vector<std::pair<std::string, const lmim::Encoder<double>*>> refs;
  for (const auto& [n, e] : encoders) refs.emplace_back(n, e.get());
  fs::create_directories(out);
  const int row = static_cast<int>(cfg.integer("attmap.query_row"));
  const int col = static_cast<int>(cfg.integer("attmap.query_col"));
  const int block = static_cast<int>(cfg.integer("attmap.block"));
  std::cout << "# attention averaged over heads, [cls] key dropped\n";
  const auto maps = lmim::compare_methods<double>(refs, image, row, col, out / "attmap.png", &std::cout, block);
  nlohmann::json res = nlohmann::json::object();
  for (const auto& m : maps) {
    lmim::render_heatmap(m.map, image, out / ("attmap_" + m.name + ".png"));
    res[m.name] = {{"entropy", m.map.entropy()}};
  }
  return res;
}

using Handler = nlohmann::json (*)(const RunConfig&, const fs::path&);

Handler handler_for(const std::string& name) {
  static const std::map<std::string, Handler> h{{"gen-corpus", cmd_gen_corpus}, {"pretrain", cmd_pretrain},
                                                {"finetune", cmd_finetune},     {"evaluate", cmd_evaluate},
                                                {"ablate", cmd_ablate},         {"attmap", cmd_attmap}};
  return h.at(name);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lmim: linguistics-aware masked image modeling at desk scale"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  struct Bound {
    CLI::App* app = nullptr;
    const Command* cmd = nullptr;
    std::string config_path;
    std::map<std::string, std::string> values;  // full key -> raw override
    std::map<std::string, CLI::Option*> options;
  };
  std::vector<Bound> bound(commands().size());

  for (std::size_t i = 0; i < commands().size(); ++i) {
    const Command& c = commands()[i];
    Bound& b = bound[i];
    b.cmd = &c;
    b.app = app.add_subcommand(c.name, c.description);
    b.app->add_option("--config", b.config_path, "TOML-style config file")->check(CLI::ExistingFile);
    std::set<std::string> short_taken{"config", "help"};
    for (const auto& k : lmim::config_schema()) {
      if (std::find(c.sections.begin(), c.sections.end(), k.section) == c.sections.end()) continue;
      std::string names = "--" + k.full();
      const bool short_ok = (k.section == c.own_section || k.section == "general") && !short_taken.count(k.name);
      if (short_ok) {
        names += ",--" + k.name;
        short_taken.insert(k.name);
      }
      b.options[k.full()] = b.app->add_option(names, b.values[k.full()], k.help + " [default: " + k.default_value + "]");
    }
  }

  std::vector<std::string> args(argv, argv + argc);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (app.get_subcommands().empty()) std::cerr << "\n" << app.help();
    return 1;
  }

  const Bound* active = nullptr;
  for (const auto& b : bound)
    if (b.app->parsed()) active = &b;
  if (!active) {
    std::cerr << app.help();
    return 1;
  }

  RunConfig cfg;
  fs::path out;
  try {
    if (!active->config_path.empty()) cfg.load_file(active->config_path);
    for (const auto& [key, opt] : active->options)
      if (opt->count() > 0) cfg.set(key, active->values.at(key));
    out = cfg.text("general.out");
    if (out.empty()) throw lmim::ValidationError("general.out must not be empty");
  } catch (const lmim::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const lmim::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  Provenance prov(active->cmd->name, cfg, args);
  try {
    prov.write(out, "running");
    const nlohmann::json result = handler_for(active->cmd->name)(cfg, out);
    prov.write(out, "ok", result);
    return 0;
  } catch (const lmim::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    try {
      prov.write(out, "invalid", {{"error", e.what()}});
    } catch (...) {
    }
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    try {
      prov.write(out, "failed", {{"error", e.what()}});
    } catch (...) {
    }
    return 2;
  }
}
