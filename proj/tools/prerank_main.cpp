// prerank: cascade pre-ranking laboratory CLI.
//
// Subcommands: simulate, build-samples, train, eval, ablate, gradcheck,
// profile-gradients. One JSON config file drives everything; the only CLI
// overrides are the seed and paths, so a run manifest stays complete.

#include "prerank/cascade_sim.hpp"
#include "prerank/config.hpp"
#include "prerank/gradcheck.hpp"
#include "prerank/log_io.hpp"
#include "prerank/losses.hpp"
#include "prerank/metrics.hpp"
#include "prerank/model.hpp"
#include "prerank/sampler.hpp"
#include "prerank/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace prerank;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed_override;
    std::string out_dir = "runs";
    bool verbose = false;
};

AppConfig resolve_config(const GlobalArgs& args) {
    AppConfig cfg;
    if (!args.config_path.empty()) cfg = load_config(args.config_path);
    if (args.seed_override) cfg.train.seed = *args.seed_override;
    cfg.validate();
    return cfg;
}

/// Creates out_dir/<name>-NNN using the first free index; never overwrites.
fs::path make_run_dir(const GlobalArgs& args, const std::string& name) {
    fs::create_directories(args.out_dir);
    for (int i = 1; i < 100000; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "-%03d", i);
        fs::path dir = fs::path(args.out_dir) / (name + buf);
        if (!fs::exists(dir)) {
            fs::create_directories(dir);
            return dir;
        }
    }
    throw std::runtime_error("make_run_dir: no free run directory index under " + args.out_dir);
}

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out << content;
    if (!out) throw std::runtime_error("I/O failure writing '" + path.string() + "'");
}

int cmd_simulate(const GlobalArgs& args) {
    const AppConfig cfg = resolve_config(args);
    const fs::path dir = make_run_dir(args, "simulate");

    const World world = generate_world(cfg.sim.n_users, cfg.sim.n_items, cfg.sim.d_true,
                                       cfg.train.seed, cfg.sim.popularity_exponent);
    const Dataset train_ds = generate_dataset(world, cfg.sim, cfg.train.n_train_requests,
                                              derive_seed(cfg.train.seed, Stream::train_data));
    const Dataset eval_ds = generate_dataset(world, cfg.sim, cfg.train.n_eval_requests,
                                             derive_seed(cfg.train.seed, Stream::eval_data));
    write_logs(train_ds, (dir / "train.jsonl").string());
    write_logs(eval_ds, (dir / "eval.jsonl").string());

    nlohmann::ordered_json manifest;
    manifest["seed"] = cfg.train.seed;
    manifest["code_version"] = kCodeVersion;
    manifest["train_fingerprint"] = dataset_fingerprint(train_ds);
    manifest["eval_fingerprint"] = dataset_fingerprint(eval_ds);
    manifest["config"] = config_to_json(cfg);
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");

    std::cout << "simulate: wrote " << train_ds.requests.size() << " train / "
              << eval_ds.requests.size() << " eval requests to " << dir.string() << "\n";
    return 0;
}

int cmd_build_samples(const GlobalArgs& args, const std::string& logs_path) {
    const AppConfig cfg = resolve_config(args);
    const Dataset ds = read_logs(logs_path);
    const fs::path dir = make_run_dir(args, "samples");

    Rng rng(derive_seed(cfg.train.seed, Stream::batch_sampling));
    std::ofstream out(dir / "batches.jsonl", std::ios::binary);
    if (!out) throw std::runtime_error("cannot open batches.jsonl");

    for (std::size_t start = 0; start < ds.requests.size();
         start += static_cast<std::size_t>(cfg.train.batch_size)) {
        const std::size_t end = std::min(ds.requests.size(),
                                         start + static_cast<std::size_t>(cfg.train.batch_size));
        std::vector<const RequestLog*> logs;
        for (std::size_t i = start; i < end; ++i) logs.push_back(&ds.requests[i]);
        ListwiseBatch batch = build_listwise_batch(logs, cfg.sampler, ds.catalog_size,
                                                   cfg.model.cross_score_weight, rng);
        sample_inbatch(batch, cfg.sampler.inbatch_rate, rng);

        for (const RequestSamples& req : batch.requests) {
            nlohmann::ordered_json j;
            j["user"] = req.user;
            j["n_rank"] = req.n_rank;
            auto& insts = j["instances"] = nlohmann::ordered_json::array();
            for (const SampledInstance& inst : req.instances) {
                nlohmann::ordered_json ij;
                ij["item"] = inst.item;
                ij["role"] = sample_role_name(inst.role);
                ij["exposed"] = inst.exposed;
                ij["click"] = static_cast<int>(inst.labels.click);
                ij["purchase"] = static_cast<int>(inst.labels.purchase);
                if (inst.r) ij["r"] = *inst.r;
                if (inst.r_c) ij["r_c"] = *inst.r_c;
                if (inst.r_click) ij["r_click"] = *inst.r_click;
                if (inst.r_purchase) ij["r_purchase"] = *inst.r_purchase;
                if (inst.prerank_order) ij["prerank_order"] = *inst.prerank_order;
                ij["cross_score"] = inst.cross_score;
                insts.push_back(std::move(ij));
            }
            out << j.dump() << '\n';
        }
    }
    std::cout << "build-samples: wrote batch stream for " << ds.requests.size() << " requests to "
              << dir.string() << "\n";
    return 0;
}

int cmd_train(const GlobalArgs& args, const std::string& variant_name_arg,
              const std::string& logs_path) {
    const AppConfig cfg = resolve_config(args);
    const Variant variant = variant_from_name(variant_name_arg);
    const Dataset ds = read_logs(logs_path);
    const fs::path dir = make_run_dir(args, "train");

    TrainResult result = train(variant, ds, cfg, cfg.train.seed);
    save_model(result.model, (dir / "model.bin").string());

    nlohmann::ordered_json manifest = manifest_to_json(result.manifest);
    manifest["epoch_losses"] = result.epoch_losses;
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");

    std::cout << "train: variant=" << variant_name(variant);
    for (std::size_t e = 0; e < result.epoch_losses.size(); ++e)
        std::cout << " epoch" << e << "=" << result.epoch_losses[e];
    std::cout << "\ncheckpoint: " << (dir / "model.bin").string() << "\n";
    return 0;
}

int cmd_eval(const GlobalArgs& args, const std::string& model_path, const std::string& logs_path,
             const std::vector<int>& k_override) {
    AppConfig cfg = resolve_config(args);
    if (!k_override.empty()) cfg.eval.hit_ks = k_override;
    const TowerModel model = load_model(model_path);
    const Dataset ds = read_logs(logs_path);
    const fs::path dir = make_run_dir(args, "eval");

    const MetricsReport report = evaluate(model, ds, cfg.eval, cfg.sim.n_to_ranking);
    write_text(dir / "metrics.json", metrics_to_json(report).dump(2) + "\n");
    write_text(dir / "metrics.txt", metrics_to_table(report));
    std::cout << metrics_to_table(report);
    std::cout << "eval: report written to " << dir.string() << "\n";
    return 0;
}

int cmd_ablate(const GlobalArgs& args, const std::vector<std::string>& variant_names,
               const std::vector<std::uint64_t>& seeds_arg) {
    const AppConfig cfg = resolve_config(args);
    std::vector<Variant> variants;
    if (variant_names.empty())
        variants = all_variants();
    else
        for (const std::string& name : variant_names) variants.push_back(variant_from_name(name));
    std::vector<std::uint64_t> seeds = seeds_arg;
    if (seeds.empty()) seeds = {1, 2, 3, 4, 5};

    const fs::path dir = make_run_dir(args, "ablate");
    const AblationReport report = run_ablation(variants, cfg, seeds);

    write_text(dir / "ablation.json", ablation_to_json(report).dump(2) + "\n");
    write_text(dir / "ablation.txt", ablation_to_table(report));
    for (const AblationRun& run : report.runs) {
        const std::string name = std::string(variant_name(run.variant)) + "-seed" +
                                 std::to_string(run.seed) + ".manifest.json";
        write_text(dir / name, manifest_to_json(run.manifest).dump(2) + "\n");
    }
    std::cout << ablation_to_table(report);

    bool any_error = false;
    for (const AblationRun& run : report.runs)
        if (!run.error.empty()) {
            any_error = true;
            std::cerr << "ablate: run " << variant_name(run.variant) << "/seed" << run.seed
                      << " failed: " << run.error << "\n";
        }
    std::cout << "ablate: report written to " << dir.string() << "\n";
    return any_error ? 1 : 0;
}

int cmd_gradcheck(int cases, bool inject_fault) {
    const auto results = run_gradcheck(cases, 20240901, inject_fault);
    bool all_passed = true;
    std::printf("%-22s %8s %8s %14s  %s\n", "loss", "cases", "coords", "max_rel_err", "status");
    for (const GradCheckResult& r : results) {
        all_passed = all_passed && r.passed;
        std::printf("%-22s %8d %8d %14.3e  %s\n", r.name.c_str(), r.cases, r.checked_coords,
                    r.max_rel_err, r.passed ? "PASS" : "FAIL");
    }
    return all_passed ? 0 : 1;
}

int cmd_profile_gradients(const GlobalArgs& args, double q, double c, double tau, double lo,
                          double hi, double step) {
    const GradientProfiles prof = gradient_profiles(lo, hi, step, q, c, tau);
    const fs::path dir = make_run_dir(args, "profile");

    std::ostringstream os;
    os << "# q=" << q << " c=" << c << " tau=" << tau << "\n";
    if (prof.crossing)
        os << "# crossing y* = " << *prof.crossing << "\n";
    else
        os << "# crossing: absent in range\n";
    os << "y\tf\tg\n";
    for (std::size_t i = 0; i < prof.y.size(); ++i) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%.6f\t%.10g\t%.10g\n", prof.y[i], prof.f[i], prof.g[i]);
        os << buf;
    }
    write_text(dir / "profile.tsv", os.str());

    if (prof.crossing)
        std::cout << "profile-gradients: crossing y* = " << *prof.crossing << "\n";
    else
        std::cout << "profile-gradients: no crossing in [" << lo << ", " << hi << "]\n";
    std::cout << "table written to " << (dir / "profile.tsv").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cascade pre-ranking laboratory"};
    app.require_subcommand(1);

    GlobalArgs args;
    app.add_option("--config", args.config_path, "JSON config file (defaults used when omitted)");
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "seed override");
    app.add_option("--out", args.out_dir, "output directory (default: runs)");
    app.add_flag("-v,--verbose", args.verbose, "verbose logging");

    auto* simulate = app.add_subcommand("simulate", "generate train/eval request logs");

    auto* build = app.add_subcommand("build-samples", "emit the multi-level sample stream");
    std::string build_logs;
    build->add_option("--logs", build_logs, "request log file")->required();

    auto* train_cmd = app.add_subcommand("train", "train one variant");
    std::string train_variant = "full";
    std::string train_logs;
    train_cmd->add_option("--variant", train_variant, "training variant");
    train_cmd->add_option("--logs", train_logs, "train log file")->required();

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_model, eval_logs;
    std::vector<int> eval_ks;
    eval_cmd->add_option("--model", eval_model, "model checkpoint")->required();
    eval_cmd->add_option("--logs", eval_logs, "eval log file")->required();
    eval_cmd->add_option("--k", eval_ks, "hit cutoffs override (comma separated)")
        ->delimiter(',');

    auto* ablate = app.add_subcommand("ablate", "run the (variant x seed) ablation grid");
    std::vector<std::string> ablate_variants;
    std::vector<std::uint64_t> ablate_seeds;
    ablate->add_option("--variant", ablate_variants, "variants (default: all)")->delimiter(',');
    ablate->add_option("--seeds", ablate_seeds, "seeds (default: 1..5)")->delimiter(',');

    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    int gradcheck_cases = 100;
    bool inject_fault = false;
    gradcheck_cmd->add_option("--cases", gradcheck_cases, "randomized cases per loss");
    gradcheck_cmd->add_flag("--inject-fault", inject_fault, "corrupt one gradient (test hook)")
        ->group("");  // hidden

    auto* profile = app.add_subcommand("profile-gradients", "descent-profile table f/g");
    double prof_q = 1.0, prof_c = 5.0, prof_tau = 0.1, prof_lo = -5.0, prof_hi = 5.0,
           prof_step = 0.01;
    profile->add_option("--q", prof_q, "offset parameter q");
    profile->add_option("--c", prof_c, "competition mass parameter c");
    profile->add_option("--tau", prof_tau, "temperature");
    profile->add_option("--lo", prof_lo, "range start");
    profile->add_option("--hi", prof_hi, "range end");
    profile->add_option("--step", prof_step, "sampling step");

    CLI11_PARSE(app, argc, argv);
    if (seed_opt->count() > 0) args.seed_override = seed_value;

    try {
        if (simulate->parsed()) return cmd_simulate(args);
        if (build->parsed()) return cmd_build_samples(args, build_logs);
        if (train_cmd->parsed()) return cmd_train(args, train_variant, train_logs);
        if (eval_cmd->parsed()) return cmd_eval(args, eval_model, eval_logs, eval_ks);
        if (ablate->parsed()) return cmd_ablate(args, ablate_variants, ablate_seeds);
        if (gradcheck_cmd->parsed()) return cmd_gradcheck(gradcheck_cases, inject_fault);
        if (profile->parsed())
            return cmd_profile_gradients(args, prof_q, prof_c, prof_tau, prof_lo, prof_hi,
                                         prof_step);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
