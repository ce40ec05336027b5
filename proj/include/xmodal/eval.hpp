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

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "xmodal/data.hpp"
#include "xmodal/io.hpp"
#include "xmodal/mind.hpp"
#include "xmodal/networks.hpp"
#include "xmodal/stats.hpp"
#include "xmodal/trainer.hpp"

namespace xmodal::eval {

namespace fs = std::filesystem;
using data::Image;
using data::Mask;
using train::Real;

/// Segmentation cut points on windowed CT. Palette centres: bone 0.35, soft -0.31, lung/air -1.
inline constexpr float kBoneThreshold = 0.1f;
inline constexpr float kBodyThreshold = -0.9f;

/// Detector cut points on per-bone local Dice.
inline constexpr double kMajorDice = 0.3;
inline constexpr double kMinorDice = 0.6;
inline constexpr int kBoxMargin = 3;

/// Slices per evaluation case: the stored slice plus this many regenerated ones.
inline constexpr int kSlicesPerCase = 6;

inline Image translate_case(const ModelBundle<Real>& bundle, const Image& mri) {
    require(mri.height() == bundle.spec.image_size && mri.width() == bundle.spec.image_size,
            ErrorCode::shape_mismatch, "translate_case: image does not match the model's image_size");
    NoGradGuard ng;
    auto x = Var<Real>::constant(Tensor<Real>(Shape{1, 1, mri.height(), mri.width()}, mri.values.values));
    auto y = generator_forward(bundle.g_mri2ct, x).image.value();
    Image out{data::Grid(mri.height(), mri.width()), data::Domain::ct_like, mri.provenance, data::HuWindow{}};
    for (std::size_t i = 0; i < y.size(); ++i) out.values.values[i] = std::clamp(y[i], -1.0f, 1.0f);
    return out;
}

inline double mind_consistency(const Image& input, const Image& output, const mind::MindConfig& cfg = {}) {
    require(input.values.same_shape(output.values), ErrorCode::shape_mismatch, "mind_consistency: shapes differ");
    const Shape s{1, 1, input.height(), input.width()};
    Tensor<double> a(s), b(s);
    std::copy(input.values.values.begin(), input.values.values.end(), a.vec().begin());
    std::copy(output.values.values.begin(), output.values.values.end(), b.vec().begin());
    return mind::mind_loss(a, b, cfg);
}

enum class Tissue { bone, body, lung };

inline Mask threshold_segment(const Image& ct, Tissue tissue) {
    const auto& g = ct.values;
    Mask m(g.height, g.width);
    if (tissue == Tissue::bone) {
        for (std::size_t i = 0; i < g.size(); ++i) m.bits[i] = g.values[i] >= kBoneThreshold;
        return m;
    }
    for (std::size_t i = 0; i < g.size(); ++i) m.bits[i] = g.values[i] >= kBodyThreshold;
    Mask body = data::fill_holes(m);
    if (tissue == Tissue::body) return body;
    Mask lung(g.height, g.width);
    for (std::size_t i = 0; i < g.size(); ++i) lung.bits[i] = body.bits[i] && g.values[i] < kBodyThreshold;
    return lung;
}

inline double dice(const Mask& a, const Mask& b) {
    require(a.same_shape(b), ErrorCode::shape_mismatch, "dice: mask shapes differ");
    std::size_t inter = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        na += a.bits[i];
        nb += b.bits[i];
        inter += a.bits[i] & b.bits[i];
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * double(inter) / double(na + nb);
}

inline int misalignment_grade(int major, int minor) {
    require(major >= 0 && minor >= 0, ErrorCode::invalid_argument, "misalignment counts must be nonnegative");
    if (major >= 10) return 1;
    if (major >= 5) return 2;
    if (major >= 3 || minor >= 15) return 3;
    if (major >= 1 || minor >= 10) return 4;
    return 5;
}

struct Misalignments {
    int major = 0;
    int minor = 0;
};

/// Per ground-truth bone component: Dice against the predicted bone mask inside the component's
/// bounding box grown by kBoxMargin pixels.
inline Misalignments detect_misalignments(const Mask& predicted_bone, const Mask& truth_bone) {
    require(predicted_bone.same_shape(truth_bone), ErrorCode::shape_mismatch, "detector: mask shapes differ");
    auto [labels, count] = data::label_components(truth_bone);
    const int h = truth_bone.height, w = truth_bone.width;
    std::vector<std::array<int, 4>> box(std::size_t(count) + 1, {h, w, -1, -1});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (int l = labels[std::size_t(y) * w + x]) {
                auto& b = box[l];
                b = {std::min(b[0], y), std::min(b[1], x), std::max(b[2], y), std::max(b[3], x)};
            }
    Misalignments m;
    for (int l = 1; l <= count; ++l) {
        const auto& b = box[l];
        std::size_t inter = 0, nt = 0, np = 0;
        for (int y = std::max(0, b[0] - kBoxMargin); y <= std::min(h - 1, b[2] + kBoxMargin); ++y)
            for (int x = std::max(0, b[1] - kBoxMargin); x <= std::min(w - 1, b[3] + kBoxMargin); ++x) {
                const bool t = labels[std::size_t(y) * w + x] == l;
                const bool p = predicted_bone.at(y, x);
                nt += t;
                np += p;
                inter += t && p;
            }
        const double d = 2.0 * double(inter) / double(nt + np);
        if (d < kMajorDice) ++m.major;
        else if (d < kMinorDice) ++m.minor;
    }
    return m;
}

struct CaseMetrics {
    std::string case_id;
    std::string variant;
    std::string run;
    std::string group;
    std::uint64_t seed = 0;
    double mind_consistency = 0;
    double dice_body = 0;
    double dice_bones = 0;
    double dice_lungs = 0;
    int major = 0;
    int minor = 0;
    int grade = 5;
};

namespace detail {

inline Mask resize_mask(const Mask& m, int size) {
    if (m.height == size && m.width == size) return m;
    Mask out(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            out.at(y, x) = m.at(std::min(m.height - 1, int((y + 0.5) * m.height / size)),
                                std::min(m.width - 1, int((x + 0.5) * m.width / size)));
    return out;
}

inline std::uint64_t slice_seed(std::uint64_t case_seed, int slice) {
    std::seed_seq seq{std::uint32_t(case_seed), std::uint32_t(case_seed >> 32), std::uint32_t(slice), 0x51ceu};
    std::mt19937_64 rng(seq);
    return rng();
}

} // namespace detail

/// Slices of an evaluation case: the stored phantom, then regenerated slices derived from its seed.
inline std::vector<data::PhantomCase> evaluation_slices(const data::PhantomCase& stored, int size) {
    std::vector<data::PhantomCase> out{stored};
    for (int s = 1; s < kSlicesPerCase; ++s)
        out.push_back(data::generate_phantom(detail::slice_seed(stored.seed, s), size, stored.case_id));
    return out;
}

inline CaseMetrics evaluate_case(const ModelBundle<Real>& bundle, const data::PhantomCase& stored) {
    const int size = bundle.spec.image_size;
    CaseMetrics m;
    m.case_id = stored.case_id;
    const auto slices = evaluation_slices(stored, size);
    for (const auto& pc : slices) {
        const auto pre = data::preprocess_case(pc, size);
        const Image synth = translate_case(bundle, pre.mri);
        m.mind_consistency += mind_consistency(pre.mri, synth);
        const Mask bones = detail::resize_mask(pc.bones, size);
        const Mask pred_bones = threshold_segment(synth, Tissue::bone);
        m.dice_body += dice(threshold_segment(synth, Tissue::body), detail::resize_mask(pc.body, size));
        m.dice_bones += dice(pred_bones, bones);
        m.dice_lungs += dice(threshold_segment(synth, Tissue::lung), detail::resize_mask(pc.lungs, size));
        const auto mis = detect_misalignments(pred_bones, bones);
        m.major += mis.major;
        m.minor += mis.minor;
    }
    const double n = double(slices.size());
    m.mind_consistency /= n;
    m.dice_body /= n;
    m.dice_bones /= n;
    m.dice_lungs /= n;
    m.grade = misalignment_grade(m.major, m.minor);
    return m;
}

/// Worker count from XMODAL_THREADS, else the machine's cores.
inline unsigned worker_threads() {
    unsigned n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("XMODAL_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) n = std::min<unsigned>(n, unsigned(v));
    }
    return n;
}

/// Runs f(i) for i in [0, count) on up to worker_threads() threads; first exception is rethrown.
template <class F>
void parallel_for(std::size_t count, F f) {
    const unsigned workers = std::min<std::size_t>(worker_threads(), std::max<std::size_t>(count, 1));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < workers; ++t)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next++) < count;) {
                try {
                    f(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

struct RunInfo {
    fs::path dir;
    train::TrainConfig config;
    std::vector<std::string> test_ids;
    std::string test_hash;
};

inline RunInfo read_run(const fs::path& dir) {
    require(fs::exists(dir / "manifest.json"), ErrorCode::missing_input, "run manifest missing in " + dir.string());
    require(fs::exists(dir / "checkpoints" / "latest.ckpt"), ErrorCode::missing_input,
            "checkpoint missing in " + dir.string());
    const auto m = nlohmann::json::parse(io::read_file(dir / "manifest.json"));
    std::map<std::string, std::string> kv;
    for (const auto& [k, v] : m.at("config").items()) kv[k] = v.get<std::string>();
    RunInfo r{dir, train::from_map(kv), m.at("split_ids").at("test").get<std::vector<std::string>>(),
              m.at("split").at("test_hash").get<std::string>()};
    return r;
}

inline const std::vector<std::string>& test_metrics() {
    static const std::vector<std::string> names{"grade", "dice_bones", "mind_consistency"};
    return names;
}

inline double metric_value(const CaseMetrics& m, const std::string& name) {
    if (name == "grade") return m.grade;
    if (name == "dice_bones") return m.dice_bones;
    if (name == "dice_body") return m.dice_body;
    if (name == "dice_lungs") return m.dice_lungs;
    if (name == "mind_consistency") return m.mind_consistency;
    if (name == "major") return m.major;
    if (name == "minor") return m.minor;
    throw Error(ErrorCode::invalid_argument, "unknown metric " + name);
}

struct TestResult {
    std::string reference;
    std::string other;
    std::string metric;
    stats::WilcoxonResult wilcoxon;
    double p_adjusted = 1;
    bool insufficient = false;
};

struct EvalReport {
    std::vector<CaseMetrics> cases;
    std::vector<std::string> groups;  // comparison labels in input order
    std::string reference;
    std::vector<TestResult> tests;
    std::string test_hash;
};

inline constexpr const char* kReferenceVariant = "ugatit_mind";

/// Evaluates every run on the shared test split and compares each group against the reference.
/// Runs are grouped by variant; when all runs share one variant each run is its own group.
inline EvalReport compare_variants(const std::vector<fs::path>& run_dirs, const fs::path& data_root) {
    require(!run_dirs.empty(), ErrorCode::invalid_argument, "compare: no runs given");
    std::vector<RunInfo> runs;
    for (const auto& d : run_dirs) runs.push_back(read_run(d));
    EvalReport report;
    const std::vector<std::string>& test_ids = runs.front().test_ids;
    report.test_hash = train::test_split_hash(test_ids);
    for (const auto& r : runs)
        require(r.test_hash == report.test_hash, ErrorCode::spec_mismatch,
                "test split of " + r.dir.string() + " differs from " + runs.front().dir.string());
    require(!test_ids.empty(), ErrorCode::invalid_argument, "compare: test split is empty");

    std::set<Variant> variants;
    for (const auto& r : runs) variants.insert(r.config.variant);
    std::vector<std::string> label(runs.size());
    for (std::size_t i = 0; i < runs.size(); ++i) {
        label[i] = to_string(runs[i].config.variant);
        if (variants.size() == 1 && runs.size() > 1) label[i] += "#" + std::to_string(i);
        if (std::find(report.groups.begin(), report.groups.end(), label[i]) == report.groups.end())
            report.groups.push_back(label[i]);
    }
    const bool has_ref = std::find(report.groups.begin(), report.groups.end(), kReferenceVariant) != report.groups.end();
    report.reference = has_ref ? kReferenceVariant : report.groups.front();

    std::vector<data::PhantomCase> cases(test_ids.size());
    parallel_for(test_ids.size(), [&](std::size_t i) { cases[i] = data::read_case(data_root / test_ids[i]); });

    report.cases.resize(runs.size() * cases.size());
    for (std::size_t r = 0; r < runs.size(); ++r) {
        const auto state = train::load_checkpoint(runs[r].dir / "checkpoints" / "latest.ckpt", &runs[r].config);
        parallel_for(cases.size(), [&](std::size_t c) {
            CaseMetrics m = evaluate_case(state.bundle, cases[c]);
            m.variant = to_string(runs[r].config.variant);
            m.run = runs[r].dir.filename().string();
            if (m.run.empty()) m.run = runs[r].dir.parent_path().filename().string();
            m.seed = runs[r].config.seed;
            m.group = label[r];
            report.cases[r * cases.size() + c] = std::move(m);
        });
    }

    // Per-case values of a group: means over that group's runs.
    auto group_values = [&](const std::string& g, const std::string& metric) {
        std::vector<double> sum(cases.size(), 0.0);
        int n = 0;
        for (std::size_t r = 0; r < runs.size(); ++r) {
            if (label[r] != g) continue;
            ++n;
            for (std::size_t c = 0; c < cases.size(); ++c)
                sum[c] += metric_value(report.cases[r * cases.size() + c], metric);
        }
        for (auto& v : sum) v /= n;
        return sum;
    };
    for (const auto& metric : test_metrics()) {
        std::vector<TestResult> family;
        for (const auto& g : report.groups) {
            if (g == report.reference) continue;
            TestResult t{report.reference, g, metric, {}, 1.0, false};
            const auto a = group_values(report.reference, metric), b = group_values(g, metric);
            const auto ranks = stats::signed_ranks(a, b);
            if (ranks.n() > 0 && ranks.n() < std::size_t(stats::kMinNonzero)) {
                t.insufficient = true;
                t.wilcoxon.n = ranks.n();
            } else {
                t.wilcoxon = stats::wilcoxon_signed_rank(a, b);
            }
            family.push_back(t);
        }
        std::vector<double> raw;
        for (const auto& t : family) raw.push_back(t.wilcoxon.p_value);
        const auto adj = stats::bonferroni_adjust(raw);
        for (std::size_t i = 0; i < family.size(); ++i) family[i].p_adjusted = adj[i];
        report.tests.insert(report.tests.end(), family.begin(), family.end());
    }
    return report;
}

inline std::string metrics_csv(const EvalReport& r) {
    std::string out = "case_id,variant,mind_consistency,dice_body,dice_bones,dice_lungs,major,minor,grade,run,seed\n";
    std::vector<const CaseMetrics*> rows;
    for (const auto& m : r.cases) rows.push_back(&m);
    std::stable_sort(rows.begin(), rows.end(), [](auto* a, auto* b) { return a->case_id < b->case_id; });
    char buf[256];
    for (const auto* m : rows) {
        std::snprintf(buf, sizeof buf, "%s,%s,%.9g,%.9g,%.9g,%.9g,%d,%d,%d,%s,%llu\n", m->case_id.c_str(),
                      m->variant.c_str(), m->mind_consistency, m->dice_body, m->dice_bones, m->dice_lungs, m->major,
                      m->minor, m->grade, m->run.c_str(), static_cast<unsigned long long>(m->seed));
        out += buf;
    }
    return out;
}

inline nlohmann::json report_json(const EvalReport& r) {
    nlohmann::json groups = nlohmann::json::object();
    for (const auto& g : r.groups) {
        nlohmann::json agg = nlohmann::json::object();
        std::set<std::string> run_names;
        for (const auto& metric : {"mind_consistency", "dice_body", "dice_bones", "dice_lungs", "major", "minor",
                                   "grade"}) {
            std::vector<double> v;
            for (const auto& m : r.cases)
                if (m.group == g) v.push_back(metric_value(m, metric));
            if (v.empty()) continue;
            const auto s = stats::summarize(v);
            agg[metric] = {{"median", s.median}, {"min", s.min}, {"max", s.max}, {"mean", s.mean}};
        }
        for (const auto& m : r.cases)
            if (m.group == g) run_names.insert(m.run);
        groups[g] = {{"aggregates", agg}, {"runs", std::vector<std::string>(run_names.begin(), run_names.end())}};
    }
    nlohmann::json tests = nlohmann::json::array();
    for (const auto& t : r.tests)
        tests.push_back({{"reference", t.reference},
                         {"other", t.other},
                         {"metric", t.metric},
                         {"n_nonzero", t.wilcoxon.n},
                         {"statistic", t.wilcoxon.statistic},
                         {"p_raw", t.wilcoxon.p_value},
                         {"p_adjusted", t.p_adjusted},
                         {"exact", t.wilcoxon.exact},
                         {"degenerate", t.wilcoxon.degenerate},
                         {"insufficient", t.insufficient}});
    return {{"reference", r.reference},
            {"test_split_hash", r.test_hash},
            {"rows", r.cases.size()},
            {"groups", groups},
            {"tests", tests},
            {"detector", {{"major_dice", kMajorDice}, {"minor_dice", kMinorDice}, {"box_margin", kBoxMargin},
                          {"slices_per_case", kSlicesPerCase}}},
            {"thresholds", {{"bone", kBoneThreshold}, {"body", kBodyThreshold}}}};
}

} // namespace xmodal::eval
