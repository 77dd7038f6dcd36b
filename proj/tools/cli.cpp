#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "clp/analysis.hpp"
#include "clp/backdoor.hpp"
#include "clp/clp.hpp"
#include "clp/errors.hpp"
#include "clp/eval.hpp"
#include "clp/format.hpp"
#include "clp/model_io.hpp"
#include "clp/models.hpp"
#include "clp/trainer.hpp"

namespace clp::cli {

namespace fs = std::filesystem;

namespace {

struct DataOptions {
  std::string source = "synthetic";
  std::string dir;
  std::size_t classes = 10;
  std::size_t per_class = 500;
  std::size_t test_per_class = 100;
  std::size_t image_size = 16;
  std::uint64_t data_seed = 1;

  void add(CLI::App* app) {
    app->add_option("--dataset", source, "synthetic or cifar")
        ->check(CLI::IsMember({"synthetic", "cifar"}))
        ->capture_default_str();
    app->add_option("--data-dir", dir, "CIFAR-10 binary directory (--dataset cifar)");
    app->add_option("--classes", classes, "synthetic class count")->capture_default_str();
    app->add_option("--per-class", per_class, "synthetic training samples per class")->capture_default_str();
    app->add_option("--test-per-class", test_per_class, "synthetic test samples per class")->capture_default_str();
    app->add_option("--image-size", image_size, "synthetic image side")->capture_default_str();
    app->add_option("--data-seed", data_seed, "synthetic dataset seed")->capture_default_str();
  }

  void check() const {
    if (source == "cifar" && dir.empty()) throw ConfigError("--dataset cifar needs --data-dir");
    if (source == "synthetic" && !dir.empty()) throw ConfigError("--data-dir only applies to --dataset cifar");
  }

  Dataset load(Split split) const {
    check();
    if (source == "cifar") return load_cifar_binary(dir, split);
    // The test split uses the next seed so the two splits never share samples.
    return split == Split::Train
               ? make_synthetic_dataset(classes, per_class, image_size, data_seed, Split::Train)
               : make_synthetic_dataset(classes, test_per_class, image_size, data_seed + 1, Split::Test);
  }

  void record(std::vector<std::pair<std::string, std::string>>& m) const {
    m.emplace_back("dataset", source);
    if (source == "cifar") {
      m.emplace_back("data_dir", dir);
      return;
    }
    m.emplace_back("classes", std::to_string(classes));
    m.emplace_back("per_class", std::to_string(per_class));
    m.emplace_back("test_per_class", std::to_string(test_per_class));
    m.emplace_back("image_size", std::to_string(image_size));
    m.emplace_back("data_seed", std::to_string(data_seed));
  }
};

struct TriggerOptions {
  std::string trigger = "patch";
  std::string rule = "all-to-one";
  int target = 0;
  double rho = 0.1;
  float alpha = 0.1f;
  std::size_t patch_size = 3;
  std::uint64_t pattern_seed = 1234;
  std::uint64_t poison_seed = 0;
  CLI::Option* poison_seed_opt = nullptr;
  // One entry per subcommand the options were added to.
  std::vector<CLI::Option*> alpha_opts, patch_opts, target_opts;

  static bool given(const std::vector<CLI::Option*>& opts) {
    for (const auto* o : opts)
      if (o->count() > 0) return true;
    return false;
  }

  void add(CLI::App* app, bool with_rate) {
    app->add_option("--trigger", trigger, "patch or blended")
        ->check(CLI::IsMember({"patch", "blended"}))
        ->capture_default_str();
    app->add_option("--rule", rule, "all-to-one (a2o) or all-to-all (a2a)")
        ->transform(CLI::CheckedTransformer(std::map<std::string, std::string>{
            {"a2o", "all-to-one"}, {"a2a", "all-to-all"}, {"all-to-one", "all-to-one"},
            {"all-to-all", "all-to-all"}}))
        ->capture_default_str();
    target_opts.push_back(app->add_option("--target", target, "all-to-one target class")->capture_default_str());
    alpha_opts.push_back(app->add_option("--alpha", alpha, "blend ratio (blended trigger)")->capture_default_str());
    patch_opts.push_back(
        app->add_option("--patch-size", patch_size, "patch side (patch trigger)")->capture_default_str());
    app->add_option("--pattern-seed", pattern_seed, "blend pattern seed")->capture_default_str();
    if (with_rate) {
      app->add_option("--rho", rho, "poisoning rate")->capture_default_str();
      poison_seed_opt = app->add_option("--poison-seed", poison_seed, "poisoned-sample selection seed (default: --seed)");
    }
  }

  PoisonSpec spec(const Shape& image_shape) const {
    if (trigger == "patch" && given(alpha_opts)) throw ConfigError("--alpha only applies to --trigger blended");
    if (trigger == "blended" && given(patch_opts))
      throw ConfigError("--patch-size only applies to --trigger patch");
    if (rule == "all-to-all" && given(target_opts))
      throw ConfigError("--target only applies to --rule all-to-one");
    PoisonSpec s = trigger == "patch" ? make_patch_spec(image_shape, patch_size)
                                      : make_blended_spec(image_shape, alpha, pattern_seed);
    s.rule = rule == "all-to-one" ? TargetRule::AllToOne : TargetRule::AllToAll;
    s.target = target;
    s.rate = rho;
    s.seed = poison_seed;
    s.validate(image_shape);
    return s;
  }

  void record(std::vector<std::pair<std::string, std::string>>& m, bool with_rate) const {
    m.emplace_back("trigger", trigger);
    if (trigger == "patch") m.emplace_back("patch_size", std::to_string(patch_size));
    if (trigger == "blended") {
      m.emplace_back("alpha", to_shortest(alpha));
      m.emplace_back("pattern_seed", std::to_string(pattern_seed));
    }
    m.emplace_back("rule", rule);
    if (rule == "all-to-one") m.emplace_back("target", std::to_string(target));
    if (with_rate) {
      m.emplace_back("rho", to_shortest(rho));
      m.emplace_back("poison_seed", std::to_string(poison_seed));
    }
  }
};

using Manifest = std::vector<std::pair<std::string, std::string>>;

void write_manifest(const fs::path& path, const Manifest& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& [k, v] : m) out << k << '=' << v << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  return out;
}

std::string joined_args(const std::vector<std::string>& args) {
  std::string s = "clp";
  for (const auto& a : args) s += ' ' + a;
  return s;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<float> parse_u_values(const std::string& text) {
  std::vector<float> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stof(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError("bad u value '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("--u-values is empty");
  return out;
}

ModelGraph build_model(const std::string& arch, const Shape& input, std::size_t classes, std::uint64_t seed) {
  return arch == "resnet18" ? make_resnet18(input, classes, seed) : make_tinynet(input, classes, seed);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Prune backdoor channels of a CNN by per-channel spectral norm", "clp"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "clp 1.0");

  // init
  auto* init = app.add_subcommand("init", "write a freshly initialized model");
  std::string init_arch = "tinynet", init_out;
  std::vector<std::size_t> init_input;
  std::size_t init_classes = 10;
  std::uint64_t init_seed = 0;
  init->add_option("--arch", init_arch)->check(CLI::IsMember({"tinynet", "resnet18"}))->capture_default_str();
  init->add_option("--input", init_input, "C H W (default 3 16 16, or 3 32 32 for resnet18)")->expected(3);
  init->add_option("--classes", init_classes)->capture_default_str();
  init->add_option("--seed", init_seed)->capture_default_str();
  init->add_option("--out", init_out, "output CLPW file")->required();

  // attack
  auto* attack = app.add_subcommand("attack", "poison a training set and train a backdoored model");
  DataOptions attack_data;
  TriggerOptions attack_trigger;
  TrainConfig train_cfg;
  std::string attack_out, attack_clean_out, attack_schedule = "cosine", attack_arch = "tinynet";
  attack_data.add(attack);
  attack_trigger.add(attack, true);
  attack->add_option("--arch", attack_arch)->check(CLI::IsMember({"tinynet", "resnet18"}))->capture_default_str();
  attack->add_option("--epochs", train_cfg.epochs)->capture_default_str();
  attack->add_option("--batch-size", train_cfg.batch_size)->capture_default_str();
  attack->add_option("--lr", train_cfg.learning_rate)->capture_default_str();
  attack->add_option("--momentum", train_cfg.momentum)->capture_default_str();
  attack->add_option("--weight-decay", train_cfg.weight_decay)->capture_default_str();
  attack->add_option("--schedule", attack_schedule)->check(CLI::IsMember({"cosine", "constant"}))->capture_default_str();
  attack->add_option("--seed", train_cfg.seed, "initialization and shuffling seed")->capture_default_str();
  attack->add_option("--out", attack_out, "backdoored model (CLPW)")->required();
  attack->add_option("--clean-out", attack_clean_out, "also train a model on the unpoisoned data");
  bool attack_quiet = false;
  attack->add_flag("--quiet", attack_quiet, "no per-epoch lines");

  // prune
  auto* prune = app.add_subcommand("prune", "fuse batchnorm and prune high-Lipschitz channels (no data)");
  std::string prune_model, prune_out, prune_report;
  float prune_u = 3.0f;
  prune->add_option("--model", prune_model)->required()->check(CLI::ExistingFile);
  prune->add_option("--u", prune_u, "threshold multiplier")->capture_default_str();
  prune->add_option("--out", prune_out, "pruned model (CLPW)")->required();
  prune->add_option("--report", prune_report, "per-channel CSV report");

  // eval
  auto* eval = app.add_subcommand("eval", "clean accuracy and attack success rate on the test split");
  DataOptions eval_data;
  TriggerOptions eval_trigger;
  std::string eval_model, eval_log;
  eval_data.add(eval);
  eval_trigger.add(eval, false);
  eval->add_option("--model", eval_model)->required()->check(CLI::ExistingFile);
  eval->add_option("--log", eval_log, "append a row to this CSV run log");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "TAC, UCLC-TAC correlation and u sweeps");
  analyze->require_subcommand(1);
  DataOptions an_data;
  TriggerOptions an_trigger;
  std::string an_model, an_out, an_summary, an_u_values = "0.5,1,1.5,2,2.5,3,3.5,4,4.5,5,5.5,6";
  float an_u = 3.0f;
  auto* tac_cmd = analyze->add_subcommand("tac", "per-channel trigger activation change");
  auto* corr_cmd = analyze->add_subcommand("correlation", "joined UCLC/TAC table and per-layer Pearson r");
  auto* sweep_cmd = analyze->add_subcommand("sweep", "ACC/ASR over a range of u");
  for (auto* sub : {tac_cmd, corr_cmd, sweep_cmd}) {
    an_data.add(sub);
    an_trigger.add(sub, false);
    sub->add_option("--model", an_model)->required()->check(CLI::ExistingFile);
    sub->add_option("--out", an_out, "CSV output")->required();
  }
  corr_cmd->add_option("--u", an_u, "threshold multiplier for the pruned column")->capture_default_str();
  corr_cmd->add_option("--summary", an_summary, "per-layer r as CSV");
  sweep_cmd->add_option("--u-values", an_u_values, "comma-separated u values")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (init->parsed()) {
      Shape input = init_input.empty() ? Shape{3, init_arch == "resnet18" ? 32u : 16u, init_arch == "resnet18" ? 32u : 16u}
                                       : Shape(init_input.begin(), init_input.end());
      ModelGraph m = build_model(init_arch, input, init_classes, init_seed);
      save_model(m, init_out);
      out << "wrote " << init_arch << " with " << m.parameter_count() << " parameters to " << init_out << '\n';
      return kOk;
    }

    if (attack->parsed()) {
      train_cfg.schedule = attack_schedule == "cosine" ? Schedule::Cosine : Schedule::Constant;
      train_cfg.validate();
      if (attack_trigger.poison_seed_opt->count() == 0) attack_trigger.poison_seed = train_cfg.seed;
      const Dataset train_set = attack_data.load(Split::Train);
      const Dataset test_set = attack_data.load(Split::Test);
      const PoisonSpec spec = attack_trigger.spec(train_set.image_shape());
      const PoisonResult poisoned = poison_dataset(train_set, spec);
      const ModelGraph init_model = build_model(attack_arch, train_set.image_shape(), train_set.classes, train_cfg.seed);

      auto progress = [&](const char* tag) {
        return EpochCallback([&out, tag, attack_quiet](const EpochStats& s) {
          if (attack_quiet) return;
          out << tag << " epoch " << s.epoch + 1 << " loss " << to_shortest(s.mean_loss) << " train_acc "
              << to_shortest(s.train_accuracy) << " lr " << to_shortest(s.learning_rate) << std::endl;
        });
      };
      const auto t0 = std::chrono::steady_clock::now();
      const ModelGraph backdoored = train(init_model, poisoned.data, train_cfg, progress("backdoored"));
      save_model(backdoored, attack_out);
      const EvalReport report = evaluate(backdoored, test_set, spec);

      Manifest m{{"command", joined_args(args)}, {"arch", attack_arch}};
      attack_data.record(m);
      attack_trigger.record(m, true);
      m.emplace_back("epochs", std::to_string(train_cfg.epochs));
      m.emplace_back("batch_size", std::to_string(train_cfg.batch_size));
      m.emplace_back("lr", to_shortest(train_cfg.learning_rate));
      m.emplace_back("momentum", to_shortest(train_cfg.momentum));
      m.emplace_back("weight_decay", to_shortest(train_cfg.weight_decay));
      m.emplace_back("schedule", attack_schedule);
      m.emplace_back("seed", std::to_string(train_cfg.seed));
      m.emplace_back("poisoned_count", std::to_string(poisoned.poisoned.size()));
      m.emplace_back("model", attack_out);
      m.emplace_back("acc", to_shortest(report.acc));
      m.emplace_back("asr", to_shortest(report.asr));
      m.emplace_back("n_clean", std::to_string(report.n_clean));
      m.emplace_back("n_attack", std::to_string(report.n_attack));
      if (!attack_clean_out.empty()) {
        const ModelGraph clean = train(init_model, train_set, train_cfg, progress("clean"));
        save_model(clean, attack_clean_out);
        const EvalReport clean_report = evaluate(clean, test_set, spec);
        m.emplace_back("clean_model", attack_clean_out);
        m.emplace_back("clean_acc", to_shortest(clean_report.acc));
        m.emplace_back("clean_asr", to_shortest(clean_report.asr));
        out << "clean " << clean_report.to_json() << '\n';
      }
      m.emplace_back("train_seconds", to_shortest(seconds_since(t0)));
      write_manifest(attack_out + ".manifest", m);
      out << "backdoored " << report.to_json() << '\n';
      return kOk;
    }

    if (prune->parsed()) {
      const auto t0 = std::chrono::steady_clock::now();
      const ModelGraph model = load_model(prune_model);
      auto [pruned, idx] = clp_defend(model, prune_u);
      save_model(pruned, prune_out);
      if (!prune_report.empty()) {
        auto f = open_output(prune_report);
        write_prune_report(f, idx);
      }
      const double secs = seconds_since(t0);
      write_manifest(prune_out + ".manifest",
                     {{"command", joined_args(args)}, {"model", prune_model}, {"u", to_shortest(prune_u)},
                      {"pruned_count", std::to_string(idx.entries.size())},
                      {"channel_count", std::to_string(idx.stats.size())}, {"seconds", to_shortest(secs)}});
      for (const auto& t : idx.thresholds) {
        std::size_t n = 0;
        for (const auto& e : idx.entries) n += e.first == t.layer;
        if (n > 0) out << "layer " << t.layer << ": pruned " << n << " (cutoff " << to_shortest(t.cutoff) << ")\n";
      }
      out << "pruned " << idx.entries.size() << " of " << idx.stats.size() << " channels in " << secs << " s\n";
      return kOk;
    }

    if (eval->parsed()) {
      const ModelGraph model = load_model(eval_model);
      const Dataset test_set = eval_data.load(Split::Test);
      const EvalReport report = evaluate(model, test_set, eval_trigger.spec(test_set.image_shape()));
      out << report.to_json() << '\n';
      if (!eval_log.empty()) {
        const bool fresh = !fs::exists(eval_log) || fs::file_size(eval_log) == 0;
        std::ofstream log(eval_log, std::ios::app);
        if (!log) throw IoError("cannot open " + eval_log);
        if (fresh) log << "model,acc,asr,n_clean,n_attack\n";
        log << eval_model << ',' << to_shortest(report.acc) << ',' << to_shortest(report.asr) << ','
            << report.n_clean << ',' << report.n_attack << '\n';
      }
      return kOk;
    }

    // analyze
    const ModelGraph model = load_model(an_model);
    const Dataset test_set = an_data.load(Split::Test);
    const PoisonSpec spec = an_trigger.spec(test_set.image_shape());
    if (tac_cmd->parsed()) {
      auto tac = compute_tac(model, test_set, spec);
      auto f = open_output(an_out);
      write_tac_report(f, tac);
      out << "wrote " << tac.size() << " channels to " << an_out << '\n';
    } else if (corr_cmd->parsed()) {
      auto tac = compute_tac(model, test_set, spec);
      auto [pruned, idx] = clp_defend(model, an_u);
      auto rows = correlation_report(idx.stats, tac);
      {
        auto f = open_output(an_out);
        write_joined_report(f, idx, tac);
      }
      if (!an_summary.empty()) {
        auto f = open_output(an_summary);
        write_correlation_summary(f, rows);
      }
      for (const auto& r : rows)
        out << "layer " << r.layer << " channels " << r.channels << " r " << (r.r ? to_shortest(*r.r) : "NA") << '\n';
      if (auto frac = pruned_top_decile_fraction(idx, tac))
        out << "pruned channels in top TAC decile: " << to_shortest(*frac) << '\n';
    } else {
      auto points = sweep_u(model, test_set, spec, parse_u_values(an_u_values));
      auto f = open_output(an_out);
      write_sweep_report(f, points);
      for (const auto& p : points)
        out << "u " << to_shortest(p.u) << " acc " << to_shortest(p.acc) << " asr " << to_shortest(p.asr)
            << " pruned " << p.pruned_count << '\n';
    }
    return kOk;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  }
}

}  // namespace clp::cli
