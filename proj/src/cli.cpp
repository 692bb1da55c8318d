#include "crossrf/cli.hpp"

#include "crossrf/parallel.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fcntl.h>
#include <fstream>
#include <iostream>
#include <sys/file.h>
#include <unistd.h>

namespace crossrf::cli {

namespace fs = std::filesystem;

namespace {

// Advisory lock on <dir>/.crossrf.lock, released when the process exits.
class DirLock {
  public:
    explicit DirLock(const fs::path& dir) {
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw IOError("cannot create '" + dir.string() + "': " + ec.message());
        const auto path = dir / ".crossrf.lock";
        fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
        if (fd_ < 0) throw IOError("cannot open lock file '" + path.string() + "'");
        if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            ::close(fd_);
            throw IOError("output directory '" + dir.string() + "' is locked by another crossrf process");
        }
    }
    ~DirLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

  private:
    int fd_ = -1;
};

class Timer {
  public:
    [[nodiscard]] double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    }

  private:
    std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Non-deterministic run details live here so the artefacts themselves stay byte-stable.
void write_sidecar(const fs::path& dir, const std::string& command, double seconds, nlohmann::json extra = {}) {
    char host[256] = {};
    ::gethostname(host, sizeof host - 1);
    nlohmann::json j = {{"command", command},
                        {"finished_utc", utc_now()},
                        {"wall_seconds", seconds},
                        {"threads", worker_count()},
                        {"host", host}};
    if (!extra.is_null()) j.update(extra);
    std::ofstream out(dir / (command + ".run.json"), std::ios::trunc);
    if (!out) throw IOError("cannot write sidecar in '" + dir.string() + "'");
    out << j.dump(2) << '\n';
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IOError("cannot open '" + path.string() + "' for writing");
    out << j.dump(2) << '\n';
    if (!out) throw IOError("write failed for '" + path.string() + "'");
}

template <typename... Args>
void say(const char* fmt, Args... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, fmt, args...);
    std::cout << buf << '\n';
}

fs::path manifest_path(const ExperimentConfig& c) { return c.paths.data_dir / "manifest.json"; }

struct ScenarioData {
    DatasetSplits source;
    DatasetSplits target;
};

// Malformed data is reported as an I/O problem, not a config problem.
ScenarioData load_scenario(const ExperimentConfig& c) {
    const auto path = manifest_path(c);
    if (!fs::exists(path)) throw IOError("manifest '" + path.string() + "' not found (run `crossrf simulate` first)");
    try {
        const Manifest m = read_manifest(path);
        check_channels_known(c, &m);
        ScenarioData d;
        d.source = build_dataset(filter_channels(m, c.scenario.source_channels), c.dataset_options(Domain::Source));
        d.target = build_dataset(filter_channels(m, c.scenario.target_channels), c.dataset_options(Domain::Target));
        return d;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw IOError(std::string("data: ") + e.what());
    }
}

ModelBundle<float> load_compatible(const fs::path& path, const ExperimentConfig& c, int num_classes) {
    if (!fs::exists(path)) throw CheckpointError("checkpoint '" + path.string() + "' not found");
    auto b = load_checkpoint(path);
    if (b.config != c.model || b.num_classes != num_classes)
        throw CheckpointError("checkpoint '" + path.string() + "' does not match the configured model");
    return b;
}

fs::path source_ckpt(const CommandOptions& o, const ExperimentConfig& c) {
    return o.source_checkpoint.value_or(c.paths.output_dir / "source.ckpt");
}
fs::path target_ckpt(const CommandOptions& o, const ExperimentConfig& c) {
    return o.target_checkpoint.value_or(c.paths.output_dir / "target.ckpt");
}

}  // namespace

ExperimentConfig resolve_config(const CommandOptions& opts) {
    auto c = load_experiment_config(opts.config);
    if (opts.seed) c.apply_seed(*opts.seed);
    return c;
}

fs::path cmd_simulate(const CommandOptions& opts) {
    const Timer timer;
    auto c = resolve_config(opts);
    if (opts.out) c.paths.data_dir = *opts.out;
    check_channels_known(c);
    const DirLock lock(c.paths.data_dir);
    const auto m = synth_dataset(c.sim, c.paths.data_dir);
    std::cout << "wrote " << m.entries.size() << " captures to " << c.paths.data_dir.string() << '\n';
    write_sidecar(c.paths.data_dir, "simulate", timer.seconds());
    return manifest_path(c);
}

fs::path cmd_train_source(const CommandOptions& opts) {
    const Timer timer;
    auto c = resolve_config(opts);
    if (opts.out) c.paths.output_dir = *opts.out;
    const DirLock lock(c.paths.output_dir);
    const auto data = load_scenario(c);
    auto models = build_models<float>(c.model, data.source.train.num_classes(), c.seed);
    const auto log = train_source(models, data.source.train, data.source.val, c.train);
    const auto path = c.paths.output_dir / "source.ckpt";
    save_checkpoint(models, path);
    write_stage_log(log, c.paths.output_dir / "source_log.csv");
    say("source stage: best val accuracy %.2f%% at epoch %d", log.best_val_accuracy, log.best_epoch);
    write_sidecar(c.paths.output_dir, "train-source", timer.seconds());
    return path;
}

fs::path cmd_adapt(const CommandOptions& opts) {
    const Timer timer;
    auto c = resolve_config(opts);
    if (opts.out) c.paths.output_dir = *opts.out;
    const DirLock lock(c.paths.output_dir);
    const auto data = load_scenario(c);
    auto models = load_compatible(source_ckpt(opts, c), c, data.source.train.num_classes());
    // Only the windows cross this line; target labels stay behind.
    const auto log = adapt_target(models, data.source.train.unlabeled(), data.target.train.unlabeled(), c.train,
                                  &data.source.val);
    const auto path = c.paths.output_dir / "target.ckpt";
    save_checkpoint(models, path);
    write_stage_log(log, c.paths.output_dir / "adapt_log.csv");
    say("adaptation: %d epochs", static_cast<int>(log.epochs.size()));
    write_sidecar(c.paths.output_dir, "adapt", timer.seconds());
    return path;
}

ComparisonReport cmd_evaluate(const CommandOptions& opts) {
    const Timer timer;
    auto c = resolve_config(opts);
    if (opts.out) c.paths.output_dir = *opts.out;
    const DirLock lock(c.paths.output_dir);
    const auto data = load_scenario(c);
    const int k = data.source.train.num_classes();
    auto src = load_compatible(source_ckpt(opts, c), c, k);
    auto tgt = load_compatible(target_ckpt(opts, c), c, k);
    if (!tgt.adapted) throw CheckpointError("target checkpoint has not been through adaptation");

    auto stage = [&](EncoderParams<float>& enc, ClassifierParams<float>& cls, const WindowedDataset& test) {
        auto r = evaluate(enc, cls, c.model.encoder, test);
        return StageEval{std::move(r.predictions), std::move(r.labels)};
    };
    const auto report = comparison_report(c.scenario.name, stage(src.source_encoder, src.classifier, data.source.test),
                                          stage(src.source_encoder, src.classifier, data.target.test),
                                          stage(tgt.target_encoder, tgt.classifier, data.target.test), k);
    write_report(report, c.paths.output_dir);
    say("%s: source only %.2f%%, target before %.2f%%, target after %.2f%%", c.scenario.name.c_str(),
                report.accuracy[0], report.accuracy[1], report.accuracy[2]);
    write_sidecar(c.paths.output_dir, "evaluate", timer.seconds());
    return report;
}

SearchResult cmd_search(const CommandOptions& opts) {
    const Timer timer;
    auto c = resolve_config(opts);
    if (opts.out) c.paths.output_dir = *opts.out;
    if (opts.budget < 1) throw ConfigError("--budget must be >= 1");
    const DirLock lock(c.paths.output_dir);
    const auto data = load_scenario(c);
    const auto models = load_compatible(source_ckpt(opts, c), c, data.source.train.num_classes());
    const auto result = hyper_search(models, data.source.train.unlabeled(), data.target.train.unlabeled(),
                                     data.target.val, c.train, c.search, opts.budget, c.seed);
    write_trials(result, c.paths.output_dir / "trials.csv");
    const auto& best = result.trials[static_cast<std::size_t>(result.best)];
    write_json(c.paths.output_dir / "best_config.json",
               {{"trial", best.index}, {"val_accuracy", best.val_accuracy}, {"train", to_json(best.config)}});
    say("search: best trial %d with target val accuracy %.2f%%", best.index, best.val_accuracy);
    nlohmann::json trial_times = nlohmann::json::array();
    for (const auto& t : result.trials) trial_times.push_back(t.wall_seconds);
    write_sidecar(c.paths.output_dir, "search", timer.seconds(), {{"trial_wall_seconds", trial_times}});
    return result;
}

int exit_code_for_current_exception(std::string& message) {
    try {
        throw;
    } catch (const ConfigError& e) {
        message = std::string("config error: ") + e.what();
        return kConfigError;
    } catch (const CheckpointError& e) {
        message = std::string("checkpoint error: ") + e.what();
        return kCheckpointError;
    } catch (const NumericalError& e) {
        message = std::string("numerical error: ") + e.what();
        return kNumericalError;
    } catch (const IOError& e) {
        message = std::string("I/O error: ") + e.what();
        return kIOError;
    } catch (const CaptureFormatError& e) {
        message = std::string("I/O error: ") + e.what();
        return kIOError;
    } catch (const std::invalid_argument& e) {
        // Remaining validation failures come from config values reaching a module check.
        message = std::string("config error: ") + e.what();
        return kConfigError;
    } catch (const std::exception& e) {
        message = std::string("error: ") + e.what();
        return kUnexpected;
    }
}

int run(int argc, char** argv) {
    CLI::App app{"Cross-channel RF fingerprinting with adversarial domain adaptation"};
    app.require_subcommand(1);
    CommandOptions opts;
    std::string out, src_ckpt, tgt_ckpt;
    std::uint64_t seed = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opts.config, "experiment config (JSON)")->required();
        sub->add_option("--out", out, "output directory (data directory for simulate)");
        sub->add_option("--seed", seed, "override the config seed");
        sub->add_option("--budget", opts.budget, "number of search trials")->check(CLI::PositiveNumber);
    };
    auto* simulate = app.add_subcommand("simulate", "synthesize captures and a manifest");
    auto* train = app.add_subcommand("train-source", "train the source encoder and classifier");
    auto* adapt = app.add_subcommand("adapt", "adapt the target encoder on unlabeled target windows");
    auto* evaluate_cmd = app.add_subcommand("evaluate", "write the comparison report");
    auto* search = app.add_subcommand("search", "random search over adaptation hyperparameters");
    for (auto* sub : {simulate, train, adapt, evaluate_cmd, search}) add_common(sub);
    for (auto* sub : {adapt, evaluate_cmd, search})
        sub->add_option("--source-checkpoint", src_ckpt, "source checkpoint (default <out>/source.ckpt)");
    evaluate_cmd->add_option("--target-checkpoint", tgt_ckpt, "target checkpoint (default <out>/target.ckpt)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigError;
    }

    auto* active = app.get_subcommands().front();
    if (active->count("--out")) opts.out = out;
    if (active->count("--seed")) opts.seed = seed;
    if (!src_ckpt.empty()) opts.source_checkpoint = src_ckpt;
    if (!tgt_ckpt.empty()) opts.target_checkpoint = tgt_ckpt;

    try {
        if (active == simulate) {
            cmd_simulate(opts);
        } else if (active == train) {
            cmd_train_source(opts);
        } else if (active == adapt) {
            cmd_adapt(opts);
        } else if (active == evaluate_cmd) {
            cmd_evaluate(opts);
        } else {
            cmd_search(opts);
        }
    } catch (...) {
        std::string message;
        const int code = exit_code_for_current_exception(message);
        std::cerr << "crossrf " << active->get_name() << ": " << message << '\n';
        return code;
    }
    return kOk;
}

}  // namespace crossrf::cli
