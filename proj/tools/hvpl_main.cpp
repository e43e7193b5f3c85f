#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hvpl/ablate.hpp"
#include "hvpl/bench.hpp"
#include "hvpl/eval.hpp"
#include "hvpl/matio.hpp"
#include "hvpl/oracle_suites.hpp"
#include "hvpl/train.hpp"

namespace fs = std::filesystem;

namespace {

std::vector<int> parse_sizes(const std::string& csv) {
    std::vector<int> sizes;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        sizes.push_back(std::stoi(item));
    }
    if (sizes.empty()) throw hvpl::UsageError("bench-traversal: no sizes given");
    return sizes;
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
    hvpl::TrainConfig cfg = hvpl::TrainConfig::from_file(config_path);
    cfg.validate();
    hvpl::Trainer trainer(cfg, out_dir);
    hvpl::TrainHooks hooks;
    hooks.on_epoch = [](int task, int epoch, double loss) {
        std::cout << "task " << task << " epoch " << epoch << " loss " << loss << "\n";
    };
    trainer.run_sequence(&hooks);
    const hvpl::ForgettingReport f = trainer.forgetting();
    std::cout << "final ap " << trainer.history().back().ap;
    if (f.fap) std::cout << " fap " << *f.fap;
    std::cout << "\nmetrics written to " << (fs::path(out_dir) / "metrics.json").string() << "\n";
    return 0;
}

int cmd_eval(const std::string& state_dir, const std::string& dump_path) {
    auto trainer = hvpl::Trainer::load_state(state_dir);
    hvpl::EvalReport report = hvpl::evaluate_model(trainer->model(), trainer->tasks(),
                                                   trainer->trained_upto());
    std::cout << "after task " << report.after_task << ": ap " << report.ap << " ap50 "
              << report.ap50 << " ap75 " << report.ap75 << " ar1 " << report.ar1 << "\n";
    if (!dump_path.empty()) {
        std::ofstream os(dump_path, std::ios::trunc);
        const hvpl::InferenceBundle bundle = trainer->model().bundle(trainer->trained_upto());
        int index = 0;
        for (int t = 1; t <= trainer->trained_upto(); ++t) {
            for (const auto& entry : trainer->tasks().task(t).test) {
                const hvpl::FrameFeatures feats =
                    trainer->model().detector.render_features(entry.video, entry.spec);
                for (const auto& p :
                     hvpl::predict_video(trainer->model(), bundle, feats, index))
                    os << hvpl::prediction_to_json(p).dump() << "\n";
                ++index;
            }
        }
        std::cout << "predictions dumped to " << dump_path << "\n";
    }
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& out_dir) {
    hvpl::TrainConfig cfg = hvpl::TrainConfig::from_file(config_path);
    cfg.validate();
    hvpl::AblationReport report = hvpl::run_ablation(cfg, out_dir);
    std::cout << "variant      seed        fap          ap\n";
    for (const auto& r : report.runs) {
        std::cout << r.variant << (r.variant.size() < 7 ? "\t" : "") << "     " << r.seed << "   ";
        if (r.fap_defined)
            std::cout << r.fap;
        else
            std::cout << "n/a";
        std::cout << "   " << r.ap << "\n";
    }
    std::cout << "wins " << report.wins << "/" << report.seeds << " ordering "
              << (report.ordering_holds ? "holds" : "violated") << "\n";
    std::ofstream os(fs::path(out_dir) / "ablation.json", std::ios::trunc);
    os << report.to_json().dump(2) << "\n";
    return report.ordering_holds ? 0 : 1;
}

int cmd_bench(const std::string& sizes_csv, const std::string& out_csv) {
    const std::vector<int> sizes = parse_sizes(sizes_csv);
    const std::vector<hvpl::BenchRow> rows = hvpl::bench_traversal(sizes);
    hvpl::write_bench_csv(out_csv, rows);
    for (const auto& r : rows)
        std::cout << r.n_v << "," << static_cast<long long>(r.fast_ns) << ","
                  << static_cast<long long>(r.brute_ns) << "\n";
    std::cout << "csv written to " << out_csv << "\n";
    return 0;
}

int cmd_oracle_check() {
    const auto suites = hvpl::oracles::run_oracle_suites();
    bool all_pass = true;
    for (const auto& s : suites) {
        std::cout << (s.pass() ? "[PASS] " : "[FAIL] ") << s.name << " (" << (s.checks - s.failures)
                  << "/" << s.checks << ")";
        if (!s.pass() && !s.detail.empty()) std::cout << " - " << s.detail;
        std::cout << "\n";
        all_pass = all_pass && s.pass();
    }
    return all_pass ? 0 : 1;
}

int cmd_fmt_dump(const std::string& path) {
    std::cout << hvpl::describe_file(path);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continual video-instance-segmentation research harness"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "runs/out", state_dir, dump_path;
    std::string sizes_csv = "256,512,1024,2048", out_csv = "bench.csv", fmt_path;

    CLI::App* train = app.add_subcommand("train", "Train the full task sequence");
    train->add_option("--config", config_path, "JSON config file")->required();
    train->add_option("--out", out_dir, "run directory");

    CLI::App* evalc = app.add_subcommand("eval", "Evaluate a saved run");
    evalc->add_option("--state", state_dir, "run directory with saved state")->required();
    evalc->add_option("--dump", dump_path, "write per-video prediction JSON lines");

    CLI::App* ablate = app.add_subcommand("ablate", "Full vs disable_ogc comparison");
    ablate->add_option("--config", config_path, "JSON config file")->required();
    ablate->add_option("--out", out_dir, "output directory");

    CLI::App* bench = app.add_subcommand("bench-traversal", "Traversal scaling benchmark");
    bench->add_option("--sizes", sizes_csv, "comma-separated sequence lengths");
    bench->add_option("--out", out_csv, "CSV output path");

    app.add_subcommand("oracle-check", "Run every reference-oracle suite");

    CLI::App* fmt = app.add_subcommand("fmt-dump", "Print HVPL-MAT record headers");
    fmt->add_option("file", fmt_path, "file to inspect")->required();

    try {
        app.parse(argc, argv);
        if (train->parsed()) return cmd_train(config_path, out_dir);
        if (evalc->parsed()) return cmd_eval(state_dir, dump_path);
        if (ablate->parsed()) return cmd_ablate(config_path, out_dir);
        if (bench->parsed()) return cmd_bench(sizes_csv, out_csv);
        if (app.got_subcommand("oracle-check")) return cmd_oracle_check();
        if (fmt->parsed()) return cmd_fmt_dump(fmt_path);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const hvpl::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 2;
    } catch (const hvpl::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
