#include "sgmcmc/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "sgmcmc/errors.hpp"

namespace sgmcmc::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

json tensor_json(const Tensor& t) {
  return json{{"shape", t.shape()}, {"values", std::vector<double>(t.data().begin(), t.data().end())}};
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory '" + dir.string() + "'");
}

json spec_json(const ModelSpec& spec) {
  json j{{"name", spec.name}};
  if (spec.name == "gaussian" || spec.name == "gaussian_mixture") j["prior_variance"] = spec.prior_variance;
  if (spec.name == "logistic_regression" || spec.name == "bayes_nn") j["d"] = spec.d;
  if (spec.name == "bayes_nn") {
    j["hidden"] = spec.hidden;
    j["classes"] = spec.classes;
  }
  return j;
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec spec;
  spec.name = j.at("name").get<std::string>();
  if (j.contains("prior_variance")) spec.prior_variance = j["prior_variance"].get<double>();
  if (j.contains("d")) spec.d = j["d"].get<std::size_t>();
  if (j.contains("hidden")) spec.hidden = j["hidden"].get<std::size_t>();
  if (j.contains("classes")) spec.classes = j["classes"].get<std::size_t>();
  return spec;
}

}  // namespace

// ---------------------------------------------------------------------------
// gen

void run_gen(const GenOptions& opts) {
  validate(opts.model);
  const std::size_t test_n = opts.test_n.value_or(is_classifier(opts.model) ? opts.n / 5 : 0);
  Rng rng(opts.seed);
  const SyntheticData data = gen_synth(opts.model, opts.n, test_n, rng);

  ensure_dir(opts.out);
  write_csv(opts.out / "train.csv", data.train);
  if (data.test) write_csv(opts.out / "test.csv", *data.test);

  json meta{{"model", spec_json(opts.model)}, {"seed", opts.seed}, {"n", opts.n}, {"test_n", test_n}};
  json truth = json::object();
  for (const auto& [name, t] : data.truth) truth[name] = tensor_json(t);
  meta["truth"] = truth;
  if (opts.model.name == "gaussian") {
    const auto post = gaussian_posterior(opts.model.prior_variance, data.train.at("x").data());
    meta["posterior"] = {{"mean", post.mean}, {"variance", post.variance}};
  }
  write_text(opts.out / "metadata.json", meta.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// run

StepsizeSpec parse_stepsize(const std::string& text) {
  auto parse_value = [&](std::string_view v) {
    double d = 0.0;
    auto s = std::string(v);
    std::size_t used = 0;
    try {
      d = std::stod(s, &used);
    } catch (const std::exception&) {
      throw ConfigError("bad stepsize '" + s + "'");
    }
    if (used != s.size()) throw ConfigError("bad stepsize '" + s + "'");
    return d;
  };
  if (text.find('=') == std::string::npos) return parse_value(text);
  StepsizeMap map;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("bad stepsize entry '" + item + "'");
    map.insert_or_assign(item.substr(0, eq), parse_value(std::string_view(item).substr(eq + 1)));
  }
  return map;
}

TestFunctionKind parse_test_function(const std::string& text) {
  if (text == "full-chain") return TestFunctionKind::full_chain;
  if (text == "running-mean") return TestFunctionKind::running_mean;
  if (text == "log-loss") return TestFunctionKind::log_loss;
  throw ConfigError("unknown test function '" + text + "' (full-chain, running-mean, log-loss)");
}

namespace {

std::string_view to_string(TestFunctionKind k) {
  switch (k) {
    case TestFunctionKind::full_chain: return "full-chain";
    case TestFunctionKind::running_mean: return "running-mean";
    case TestFunctionKind::log_loss: return "log-loss";
  }
  return "";
}

struct LoadedData {
  ModelSpec spec;
  json metadata;
  Dataset train;
  std::optional<Dataset> test;
};

LoadedData load_data(const fs::path& dir) {
  LoadedData d;
  d.metadata = read_json(dir / "metadata.json");
  try {
    d.spec = spec_from_json(d.metadata.at("model"));
  } catch (const json::exception& e) {
    throw IoError((dir / "metadata.json").string() + ": " + e.what());
  }
  d.train = read_csv(dir / "train.csv");
  if (fs::exists(dir / "test.csv")) d.test = read_csv(dir / "test.csv");
  return d;
}

/// Writes thinned rows as they are produced.
class ChainWriter {
 public:
  ChainWriter(const fs::path& path, const TensorMap& like) : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw IoError("cannot open '" + path.string() + "' for writing");
    out_ << "# columns <param>.<k>: k is the row-major flat index into the parameter\n";
    out_ << "iter";
    for (const auto& [name, t] : like) {
      for (std::size_t k = 0; k < t.size(); ++k) out_ << ',' << name << '.' << k;
    }
    out_ << '\n';
  }

  void write(std::size_t iter, const TensorMap& values) {
    out_ << iter;
    for (const auto& [name, t] : values) {
      for (double v : t.data()) out_ << ',' << format_double(v);
    }
    out_ << '\n';
    if (!out_) throw IoError("write failed for '" + path_.string() + "'");
  }

 private:
  std::ofstream out_;
  fs::path path_;
};

class DiagnosticsWriter {
 public:
  explicit DiagnosticsWriter(const fs::path& path) : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw IoError("cannot open '" + path.string() + "' for writing");
    out_ << "iter,log_loss\n";
  }
  void write(std::size_t iter, double loss) {
    out_ << iter << ',' << format_double(loss) << '\n';
    if (!out_) throw IoError("write failed for '" + path_.string() + "'");
  }

 private:
  std::ofstream out_;
  fs::path path_;
};

std::string suffixed(const std::string& stem, std::size_t chain, std::size_t chains) {
  return chains > 1 ? stem + "_" + std::to_string(chain + 1) + ".csv" : stem + ".csv";
}

/// One chain: burn-in, then a row every `thin` iterations starting at 0.
void run_one_chain(const RunOptions& opts, const LoadedData& data, const Model& model, const SamplerConfig& base,
                   std::size_t chain, std::vector<fs::path>& files) {
  SamplerConfig config = base;
  Rng root(opts.seed);
  if (opts.chains > 1) config.stream = root.spawn(chain + 1).stream();
  Rng init_rng = Rng(opts.seed, config.stream).spawn(0);
  TensorMap init = initial_params(data.spec, init_rng);

  Sampler sampler(model, data.train, std::move(init), config);
  sampler.init();
  const std::size_t burn_in = opts.burn_in.value_or(uses_control_variate(opts.algorithm) ? 0 : opts.iters);
  for (std::size_t i = 0; i < burn_in; ++i) sampler.step();

  const bool want_chain = opts.test_function != TestFunctionKind::log_loss;
  const bool want_loss = is_classifier(data.spec) && data.test.has_value();
  if (opts.test_function == TestFunctionKind::log_loss && !want_loss) {
    throw ConfigError("log-loss test function needs a classifier with a test split");
  }

  std::optional<ChainWriter> chain_out;
  std::optional<DiagnosticsWriter> diag_out;
  const bool mean_mode = opts.test_function == TestFunctionKind::running_mean;
  if (want_chain) {
    files.push_back(opts.out / suffixed(mean_mode ? "running_mean" : "chain", chain, opts.chains));
    chain_out.emplace(files.back(), sampler.state().params);
  }
  if (want_loss) {
    files.push_back(opts.out / suffixed("diagnostics", chain, opts.chains));
    diag_out.emplace(files.back());
  }

  // In running-mean mode the average covers every post-burn-in state, not
  // only the written rows.
  std::map<std::string, RunningMean, std::less<>> means;
  auto emit = [&](std::size_t iter) {
    const TensorMap& theta = sampler.state().params;
    if (mean_mode) {
      TensorMap values;
      for (const auto& [name, m] : means) values.emplace(name, m.mean());
      chain_out->write(iter, values);
    } else if (chain_out) {
      chain_out->write(iter, theta);
    }
    if (diag_out) diag_out->write(iter, test_log_loss(data.spec, theta, *data.test));
  };
  auto track = [&] {
    if (!mean_mode) return;
    for (const auto& [name, t] : sampler.state().params) means[name].update(t);
  };

  track();
  emit(0);
  for (std::size_t it = 1; it <= opts.iters; ++it) {
    sampler.step();
    track();
    if (it % opts.thin == 0) emit(it);
  }
}

}  // namespace

RunSummary run_sampler(const RunOptions& opts) {
  if (opts.thin < 1) throw ConfigError("thin must be at least 1");
  if (opts.chains < 1) throw ConfigError("chains must be at least 1");
  const LoadedData data = load_data(opts.data);
  const Model model = build_model(data.spec);

  SamplerConfig config;
  config.algorithm = opts.algorithm;
  config.stepsize = opts.stepsize;
  config.minibatch = opts.minibatch;
  config.n_iters = opts.iters;
  config.seed = opts.seed;
  config.friction = opts.friction;
  config.diffusion = opts.diffusion;
  config.trajectory = opts.trajectory;
  config.opt_stepsize = opts.opt_stepsize;
  config.opt_iters = opts.opt_iters;
  config.validate(model);
  const StepsizeMap eps = config.resolve_stepsize(model);
  const std::size_t burn_in = opts.burn_in.value_or(uses_control_variate(opts.algorithm) ? 0 : opts.iters);
  ensure_dir(opts.out);

  json manifest;
  manifest["data"] = fs::absolute(opts.data).lexically_normal().string();
  manifest["model"] = spec_json(data.spec);
  manifest["n_train"] = data.train.size();
  manifest["n_test"] = data.test ? data.test->size() : 0;
  manifest["algorithm"] = std::string(sgmcmc::to_string(opts.algorithm));
  json step_json = json::object();
  for (const auto& [name, e] : eps) step_json[name] = e;
  manifest["stepsize"] = step_json;
  manifest["minibatch"] = opts.minibatch;
  manifest["batch_size"] = resolve_minibatch_size(opts.minibatch, data.train.size());
  manifest["iters"] = opts.iters;
  manifest["burn_in"] = burn_in;
  manifest["seed"] = opts.seed;
  manifest["chains"] = opts.chains;
  if (uses_control_variate(opts.algorithm)) {
    manifest["opt_stepsize"] = *opts.opt_stepsize;
    manifest["opt_iters"] = opts.opt_iters.value_or(opts.iters);
  }
  if (uses_momentum(opts.algorithm)) {
    if (opts.algorithm == Algorithm::sghmc || opts.algorithm == Algorithm::sghmccv) {
      manifest["trajectory"] = opts.trajectory;
      manifest["friction"] = opts.friction;
    } else {
      manifest["diffusion"] = opts.diffusion;
    }
  }
  manifest["thin"] = opts.thin;
  manifest["test_function"] = std::string(to_string(opts.test_function));
  if (data.metadata.contains("posterior")) manifest["posterior"] = data.metadata["posterior"];

  RunOptions resolved = opts;
  resolved.burn_in = burn_in;

  RunSummary summary;
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::vector<fs::path>> files(opts.chains);
  std::vector<std::exception_ptr> failures(opts.chains);
  if (opts.chains == 1) {
    try {
      run_one_chain(resolved, data, model, config, 0, files[0]);
    } catch (...) {
      failures[0] = std::current_exception();
    }
  } else {
    std::vector<std::jthread> workers;
    for (std::size_t c = 0; c < opts.chains; ++c) {
      workers.emplace_back([&, c] {
        try {
          run_one_chain(resolved, data, model, config, c, files[c]);
        } catch (...) {
          failures[c] = std::current_exception();
        }
      });
    }
  }
  summary.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  for (auto& f : files) summary.files.insert(summary.files.end(), f.begin(), f.end());
  json outputs = json::array();
  for (const auto& f : summary.files) outputs.push_back(f.filename().string());
  manifest["outputs"] = outputs;
  manifest["wall_clock_seconds"] = summary.wall_clock_seconds;
  std::exception_ptr first;
  for (const auto& f : failures) {
    if (f && !first) first = f;
  }
  manifest["completed"] = !first;
  write_text(opts.out / "manifest.json", manifest.dump(2) + "\n");
  summary.files.push_back(opts.out / "manifest.json");
  if (first) std::rethrow_exception(first);
  return summary;
}

// ---------------------------------------------------------------------------
// kl

KlReport run_kl(const fs::path& chain, const fs::path& manifest_path) {
  const json manifest = read_json(manifest_path);
  const std::string model = manifest.contains("model") ? manifest["model"].value("name", "") : "";
  if (model != "gaussian" || !manifest.contains("posterior")) {
    throw UnsupportedForKL("KL needs a gaussian-model run, manifest is for '" + model + "'");
  }
  DiagGaussian truth;
  try {
    truth.mean = manifest["posterior"].at("mean").get<std::vector<double>>();
    truth.variance = manifest["posterior"].at("variance").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw IoError(manifest_path.string() + ": " + e.what());
  }

  std::ifstream in(chain);
  if (!in) throw IoError("cannot open '" + chain.string() + "'");
  std::string line;
  std::size_t line_no = 0;
  std::size_t column = 0;
  bool have_header = false;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!have_header) {
      auto it = std::find(fields.begin(), fields.end(), "theta.0");
      if (it == fields.end()) throw IoError(chain.string() + ":" + std::to_string(line_no) + ": no theta.0 column");
      column = static_cast<std::size_t>(it - fields.begin());
      have_header = true;
      continue;
    }
    if (column >= fields.size()) throw IoError(chain.string() + ":" + std::to_string(line_no) + ": short row");
    try {
      std::size_t used = 0;
      values.push_back(std::stod(fields[column], &used));
      if (used != fields[column].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw IoError(chain.string() + ":" + std::to_string(line_no) + ": cannot parse '" + fields[column] + "'");
    }
  }
  const std::size_t n = values.size();
  const DiagGaussian fit = moment_match(Tensor(Shape{n}, std::move(values)));
  KlReport report;
  report.kl = kl_diag_gaussian(fit, truth);
  report.wall_clock_seconds = manifest.value("wall_clock_seconds", 0.0);
  return report;
}

// ---------------------------------------------------------------------------
// entry point

namespace {

// `run --config FILE ...` becomes `run --key value ... ...`: the file's
// entries go first so later flags override them. Keys may sit at top level
// or under a [run] section.
std::vector<std::string> expand_config(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + std::min(argc, 1), argv + argc);
  if (args.empty() || args[0] != "run") return args;
  std::optional<std::string> path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      break;
    }
    if (args[i].starts_with("--config=")) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (!path) return args;
  std::vector<std::string> from_file;
  for (const CLI::ConfigItem& item : CLI::ConfigINI().from_file(*path)) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == "run")) continue;
    from_file.push_back("--" + item.name);
    from_file.insert(from_file.end(), item.inputs.begin(), item.inputs.end());
  }
  args.insert(args.begin() + 1, from_file.begin(), from_file.end());
  return args;
}

}  // namespace

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Stochastic gradient MCMC samplers"};
  app.require_subcommand(1);
  // Repeated flags keep the last value, so config-file entries placed first
  // lose to explicit flags.
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  GenOptions gen;
  std::string gen_model;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen_cmd->add_option("model", gen_model, "gaussian | gaussian_mixture | logistic_regression | bayes_nn")
      ->required();
  gen_cmd->add_option("--n", gen.n, "Training rows")->capture_default_str();
  gen_cmd->add_option("--test-n", gen.test_n, "Held-out rows (default 0, or n/5 for classifiers)");
  gen_cmd->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory")->capture_default_str();
  gen_cmd->add_option("--d", gen.model.d, "Input dimension (classifiers)")->capture_default_str();
  gen_cmd->add_option("--hidden", gen.model.hidden, "Hidden units (bayes_nn)")->capture_default_str();
  gen_cmd->add_option("--classes", gen.model.classes, "Classes (bayes_nn)")->capture_default_str();
  gen_cmd->add_option("--prior-variance", gen.model.prior_variance, "Prior variance (gaussian models)")
      ->capture_default_str();

  RunOptions run;
  std::string algorithm = "sgld";
  std::string stepsize = "1e-4";
  std::string test_function = "full-chain";
  std::optional<double> opt_stepsize;
  auto* run_cmd = app.add_subcommand("run", "Run a sampler on a generated dataset");
  std::string config_path;
  run_cmd->add_option("--config", config_path, "key = value file; command-line flags take precedence");
  run_cmd->add_option("--data", run.data, "Dataset directory written by gen")->required();
  run_cmd->add_option("--out", run.out, "Output directory")->capture_default_str();
  run_cmd->add_option("--algorithm", algorithm, "sgld | sghmc | sgnht | sgldcv | sghmccv | sgnhtcv")
      ->capture_default_str();
  run_cmd->add_option("--stepsize", stepsize, "Scalar, or name=value,... per parameter")->capture_default_str();
  run_cmd->add_option("--minibatch", run.minibatch, "Proportion (< 1) or row count (>= 1)")
      ->capture_default_str();
  run_cmd->add_option("--iters", run.iters, "Iterations kept after burn-in")->capture_default_str();
  run_cmd->add_option("--burn-in", run.burn_in, "Discarded iterations (default iters, 0 for cv)");
  run_cmd->add_option("--seed", run.seed, "Random seed")->capture_default_str();
  run_cmd->add_option("--opt-stepsize", opt_stepsize, "Mode-search stepsize (cv algorithms)");
  run_cmd->add_option("--opt-iters", run.opt_iters, "Mode-search iterations (default iters)");
  run_cmd->add_option("--trajectory", run.trajectory, "SGHMC inner steps")->capture_default_str();
  run_cmd->add_option("--friction", run.friction, "SGHMC friction")->capture_default_str();
  run_cmd->add_option("--diffusion", run.diffusion, "SGNHT diffusion")->capture_default_str();
  run_cmd->add_option("--thin", run.thin, "Write every k-th iteration")->capture_default_str();
  run_cmd->add_option("--test-function", test_function, "full-chain | running-mean | log-loss")
      ->capture_default_str();
  run_cmd->add_option("--chains", run.chains, "Independent chains run in parallel")->capture_default_str();

  std::string kl_chain;
  std::string kl_manifest;
  auto* kl_cmd = app.add_subcommand("kl", "KL divergence of a gaussian-model chain to its posterior");
  kl_cmd->add_option("--chain", kl_chain, "Chain CSV")->required();
  kl_cmd->add_option("--manifest", kl_manifest, "Run manifest")->required();

  try {
    std::vector<std::string> args = expand_config(argc, argv);
    std::vector<const char*> expanded{argc > 0 ? argv[0] : "sgmcmc"};
    for (const auto& a : args) expanded.push_back(a.c_str());
    app.parse(static_cast<int>(expanded.size()), expanded.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::FileError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (*gen_cmd) {
      gen.model.name = gen_model;
      run_gen(gen);
      out << "wrote " << gen.out.string() << "\n";
    } else if (*run_cmd) {
      run.algorithm = parse_algorithm(algorithm);
      run.stepsize = parse_stepsize(stepsize);
      run.test_function = parse_test_function(test_function);
      run.opt_stepsize = opt_stepsize;
      const RunSummary s = run_sampler(run);
      for (const auto& f : s.files) out << "wrote " << f.string() << "\n";
      out << "wall_clock_seconds " << s.wall_clock_seconds << "\n";
    } else if (*kl_cmd) {
      const KlReport r = run_kl(kl_chain, kl_manifest);
      out << "kl " << format_double(r.kl) << "\n";
      out << "wall_clock_seconds " << format_double(r.wall_clock_seconds) << "\n";
    }
  } catch (const NumericalDivergence& e) {
    err << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}

}  // namespace sgmcmc::cli
