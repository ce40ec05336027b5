// Copyright 2026 The xmodal Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "xmodal/data.hpp"
#include "xmodal/eval.hpp"
#include "xmodal/io.hpp"
#include "xmodal/trainer.hpp"

namespace {

namespace fs = std::filesystem;
using namespace xmodal;
using nlohmann::json;

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

/// Configuration problem detected after parsing; reported like a CLI11 usage error.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void write_json(const fs::path& path, const json& j) { io::atomic_write(path, j.dump(2) + "\n"); }

json invocation(const std::string& sub, const std::map<std::string, std::string>& flags) {
    return {{"code_version", train::kCodeVersion}, {"subcommand", sub}, {"flags", flags}};
}

data::SplitRatios parse_ratios(const std::string& name) {
    if (name == "default") return {};
    if (name == "paper") return data::SplitRatios::paper();
    throw UsageError("--split must be 'default' or 'paper'");
}

// ---------------------------------------------------------------------------

struct GenArgs {
    int count = 150;
    int size = 64;
    std::uint64_t seed = 0;
    std::string out;
};

void gen_phantoms(const GenArgs& a) {
    if (a.count < 1) throw UsageError("--count must be >= 1");
    if (a.size < 32) throw UsageError("--size must be >= 32");
    std::vector<std::string> ids(std::size_t(a.count));
    eval::parallel_for(ids.size(), [&](std::size_t i) {
        ids[i] = data::phantom_case_id(i);
        data::write_case(fs::path(a.out) / ids[i], data::generate_phantom(data::phantom_seed(a.seed, i), a.size, ids[i]));
    });
    auto m = invocation("gen-phantoms", {{"count", std::to_string(a.count)},
                                         {"size", std::to_string(a.size)},
                                         {"seed", std::to_string(a.seed)}});
    m["generator_version"] = data::kPhantomVersion;
    m["cases"] = ids;
    write_json(fs::path(a.out) / "manifest.json", m);
    std::printf("wrote %d phantom cases to %s\n", a.count, a.out.c_str());
}

// ---------------------------------------------------------------------------

struct PreArgs {
    std::string data;
    std::string out;
    int size = 64;
};

void preprocess(const PreArgs& a) {
    if (fs::weakly_canonical(a.data) == fs::weakly_canonical(a.out))
        throw UsageError("--out must differ from --data: inputs are never modified");
    const auto ids = data::list_cases(a.data);
    if (ids.empty()) throw Error(ErrorCode::missing_input, "no cases under " + a.data);
    eval::parallel_for(ids.size(), [&](std::size_t i) {
        const auto pc = data::read_case(fs::path(a.data) / ids[i]);
        const fs::path dir = fs::path(a.out) / ids[i];
        data::write_preprocessed(dir, data::preprocess_case(pc, a.size));
        // Keep the raw case alongside so evaluation can regenerate its slices and masks.
        data::write_case(dir, pc);
    });
    auto m = invocation("preprocess", {{"data", a.data}, {"size", std::to_string(a.size)}});
    m["cases"] = ids;
    write_json(fs::path(a.out) / "manifest.json", m);
    std::printf("preprocessed %zu cases into %s\n", ids.size(), a.out.c_str());
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::map<std::string, std::string> flags;  // config keys given on the command line
    std::string config;
    std::string data;
    std::string out;
    std::string split = "default";
    std::uint64_t split_seed = 0;
    bool fresh = false;
};

train::TrainConfig resolve_config(const TrainArgs& a) {
    std::map<std::string, std::string> kv;
    try {
        if (!a.config.empty()) kv = train::parse_config_text(io::read_file(a.config));
        for (const auto& [k, v] : a.flags) kv[k] = v;
        return train::from_map(kv);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::invalid_argument) throw UsageError(e.what());
        throw;
    }
}

void train_cmd(const TrainArgs& a) {
    const auto cfg = resolve_config(a);
    const auto ids = data::list_cases(a.data);
    if (ids.empty()) throw Error(ErrorCode::missing_input, "no cases under " + a.data);
    const auto split = data::make_splits(ids, parse_ratios(a.split), a.split_seed);
    train::RunOptions opts;
    opts.resume = !a.fresh;
    opts.progress_every = 100;
    const auto out = train::train_run(cfg, split, a.data, a.out, opts);
    std::printf("%s: %lld steps, run directory %s\n", xmodal::to_string(cfg.variant),
                train::total_steps(cfg, split.train_ids.size()), out.c_str());
}

// ---------------------------------------------------------------------------

struct TranslateArgs {
    std::string run;
    std::string input;
    std::string out;
};

void translate_cmd(const TranslateArgs& a) {
    const auto info = eval::read_run(a.run);
    const auto state = train::load_checkpoint(fs::path(a.run) / "checkpoints" / "latest.ckpt", &info.config);
    const int size = info.config.image_size;
    const fs::path in(a.input);
    data::Image mri;
    if (fs::is_directory(in)) {
        mri = data::load_preprocessed(in, size).mri;
    } else {
        mri = data::preprocess_mri(data::read_grid(in), size);
    }
    const auto synth = eval::translate_case(state.bundle, mri);
    const fs::path out(a.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    data::write_grid(out, synth.values);
    const data::Grid* row[] = {&mri.values, &synth.values};
    fs::path pgm = out;
    io::atomic_write(pgm.replace_extension(".pgm"), train::encode_pgm({{row[0], row[1]}}));
    fs::path manifest = out;
    auto m = invocation("translate", {{"run", a.run}, {"input", a.input}});
    m["step"] = state.step;
    m["variant"] = xmodal::to_string(info.config.variant);
    write_json(manifest.replace_extension(".json"), m);
    std::printf("wrote %s\n", out.c_str());
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::vector<std::string> runs;
    std::string data;
    std::string out;
};

void write_report(const eval::EvalReport& r, const fs::path& out, const std::string& sub, const EvalArgs& a) {
    fs::create_directories(out);
    io::atomic_write(out / "metrics.csv", eval::metrics_csv(r));
    write_json(out / "report.json", eval::report_json(r));
    std::string runs;
    for (const auto& d : a.runs) runs += (runs.empty() ? "" : " ") + d;
    auto m = invocation(sub, {{"runs", runs}, {"data", a.data}});
    m["test_split_hash"] = r.test_hash;
    write_json(out / "manifest.json", m);
}

void evaluate_cmd(const EvalArgs& a) {
    const auto r = eval::compare_variants({fs::path(a.runs.front())}, a.data);
    write_report(r, a.out, "evaluate", a);
    const auto j = eval::report_json(r);
    for (const auto& [g, v] : j["groups"].items()) {
        const auto& agg = v["aggregates"];
        std::printf("%s: mind_consistency mean %.5f, dice_bones mean %.4f, grade median %.1f over %zu cases\n",
                    g.c_str(), agg["mind_consistency"]["mean"].get<double>(),
                    agg["dice_bones"]["mean"].get<double>(), agg["grade"]["median"].get<double>(), r.cases.size());
    }
}

void compare_cmd(const EvalArgs& a) {
    std::vector<fs::path> dirs(a.runs.begin(), a.runs.end());
    const auto r = eval::compare_variants(dirs, a.data);
    write_report(r, a.out, "compare", a);
    for (const auto& t : r.tests)
        std::printf("%-16s vs %-16s %-18s W=%-8g p=%-10.4g p_adj=%.4g%s\n", t.reference.c_str(), t.other.c_str(),
                    t.metric.c_str(), t.wilcoxon.statistic, t.wilcoxon.p_value, t.p_adjusted,
                    t.insufficient ? " (insufficient)" : "");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Unpaired MRI-to-CT translation with structure-constrained GANs"};
    app.require_subcommand(1);
    app.set_version_flag("--version", train::kCodeVersion);

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-phantoms", "Generate synthetic chest phantom cases");
    gen_cmd->add_option("--count", gen.count, "Number of cases")->capture_default_str();
    gen_cmd->add_option("--size", gen.size, "Raster size in pixels")->capture_default_str();
    gen_cmd->add_option("--seed", gen.seed, "Cohort seed")->capture_default_str();
    gen_cmd->add_option("--out", gen.out, "Output data directory")->required();

    PreArgs pre;
    auto* pre_cmd = app.add_subcommand("preprocess", "Write normalised MRI/CT pairs for every case");
    pre_cmd->add_option("--data", pre.data, "Input data directory")->required()->check(CLI::ExistingDirectory);
    pre_cmd->add_option("--out", pre.out, "Output data directory")->required();
    pre_cmd->add_option("--size", pre.size, "Target size")->capture_default_str();

    TrainArgs tr;
    auto* train_sub = app.add_subcommand("train", "Train one variant; resumes from the run's latest checkpoint");
    const train::TrainConfig defaults;
    const auto default_map = train::to_map(defaults);
    for (const auto& key : train::config_keys()) {
        std::string names = "--" + key;
        std::string dashed = key;
        std::replace(dashed.begin(), dashed.end(), '_', '-');
        if (dashed != key) names += ",--" + dashed;
        train_sub->add_option_function<std::string>(names, [&tr, key](const std::string& v) { tr.flags[key] = v; },
                                                    "Config key '" + key + "' (" + xmodal::to_string(defaults.variant) + " default: " + default_map.at(key) + ")");
    }
    train_sub->add_option("--config", tr.config, "key = value config file")->check(CLI::ExistingFile);
    train_sub->add_option("--data", tr.data, "Data directory")->required()->check(CLI::ExistingDirectory);
    train_sub->add_option("--out", tr.out, "Run directory")->required();
    train_sub->add_option("--split", tr.split, "Split ratios: default (120/30/21 of 171) or paper (80/20)")
        ->capture_default_str();
    train_sub->add_option("--split-seed", tr.split_seed, "Seed of the case shuffle")->capture_default_str();
    train_sub->add_flag("--fresh", tr.fresh, "Ignore existing checkpoints");

    TranslateArgs tl;
    auto* tl_cmd = app.add_subcommand("translate", "Synthesise a CT-like image from an MRI");
    tl_cmd->add_option("--run", tl.run, "Run directory")->required()->check(CLI::ExistingDirectory);
    tl_cmd->add_option("--input", tl.input, "Case directory or raw MRI .grd")->required()->check(CLI::ExistingPath);
    tl_cmd->add_option("--out", tl.out, "Output .grd (a .pgm preview and .json manifest are written beside it)")
        ->required();

    EvalArgs ev;
    std::string ev_run;
    auto* ev_cmd = app.add_subcommand("evaluate", "Score one run on its test split");
    ev_cmd->add_option("--run", ev_run, "Run directory")->required()->check(CLI::ExistingDirectory);
    ev_cmd->add_option("--data", ev.data, "Data directory")->required()->check(CLI::ExistingDirectory);
    ev_cmd->add_option("--out", ev.out, "Report directory")->required();

    EvalArgs cmp;
    auto* cmp_cmd = app.add_subcommand("compare", "Score runs and test each against ugatit_mind");
    cmp_cmd->add_option("--runs", cmp.runs, "Run directories")->required()->check(CLI::ExistingDirectory);
    cmp_cmd->add_option("--data", cmp.data, "Data directory")->required()->check(CLI::ExistingDirectory);
    cmp_cmd->add_option("--out", cmp.out, "Report directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsageError;
    }

    try {
        if (*gen_cmd) gen_phantoms(gen);
        else if (*pre_cmd) preprocess(pre);
        else if (*train_sub) train_cmd(tr);
        else if (*tl_cmd) translate_cmd(tl);
        else if (*ev_cmd) {
            ev.runs = {ev_run};
            evaluate_cmd(ev);
        } else if (*cmp_cmd) compare_cmd(cmp);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
    return 0;
}
