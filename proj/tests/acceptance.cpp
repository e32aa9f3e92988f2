// Acceptance suite: one PASS/FAIL line per criterion. Optional arguments select criteria by
// substring of their names. Exit status is nonzero when any selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "qcpipe/qcpipe.hpp"
#include "qcpipe/service/store.hpp"
#include "split_fixture.hpp"

using namespace qc;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---- published balanced accuracy ----

Outcome published_ba() {
    struct Row {
        const char* task;
        double sens, spec, ba;
    };
    const Row rows[] = {{"SR", 91.83, 95.69, 93.76},
                        {"gadolinium", 96.45, 97.82, 97.14},
                        {"tier3 vs 2-1", 79.88, 87.14, 83.51},
                        {"tier2 vs 1", 77.39, 65.92, 71.65}};
    bool ok = true;
    std::string detail;
    for (const auto& r : rows) {
        // a confusion matrix with exactly these rates
        ConfusionMatrix cm;
        cm.tp = std::lround(r.sens * 100);
        cm.fn = 10000 - cm.tp;
        cm.tn = std::lround(r.spec * 100);
        cm.fp = 10000 - cm.tn;
        const double ba = *classification_metrics(cm).ba * 100.0;
        ok = ok && std::abs(ba - r.ba) <= 0.01;
        detail += fmt("%s %.3f vs %.2f; ", r.task, ba, r.ba);
    }
    return {ok, detail};
}

// ---- shapes ----

Outcome shapes() {
    const auto s = cnn::propagate_shapes(cnn::conv5_fc3());
    const std::vector<cnn::Dims4> expect = {{8, 85, 104, 90}, {16, 43, 52, 45}, {32, 22, 26, 23}, {64, 11, 13, 12},
                                            {128, 6, 7, 6}};
    bool ok = s.size() >= 20;
    std::string detail;
    for (std::size_t b = 0; ok && b < 5; ++b) {
        const auto& d = s[4 * b + 3];
        ok = d == expect[b];
        detail += fmt("%zux%zux%zux%zu ", d[0], d[1], d[2], d[3]);
    }
    return {ok, detail};
}

// ---- gradient audit ----

Outcome gradients() {
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    std::size_t checked = 0;
    for (int trial = 0; trial < 4; ++trial) {
        const std::size_t in_ch = 1 + trial % 2;
        const std::size_t c1 = 2 + rng() % 2, c2 = 2 + rng() % 3, fc = 3 + rng() % 4;
        const double dropout = trial % 2 ? 0.3 : 0.0;
        cnn::Network<double> net(fixtures::toy_spec({in_ch, 8, 10, 9}, c1, c2, fc, dropout));
        net.initialize(rng());
        auto p = net.params();
        std::uniform_real_distribution<double> u(0.5, 1.5);
        for (const auto& seg : net.layout().params)
            if (seg.name.find("bn") == 0)
                for (std::size_t k = 0; k < seg.size; ++k) p[seg.offset + k] = u(rng) - (seg.name.find("beta") != std::string::npos);
        net.set_params(p);
        const auto input = fixtures::random_input(2 * in_ch * 8 * 10 * 9, rng());
        const auto r = fixtures::check_gradients(net, input, 2, {0, 1}, {0.8, 1.3}, rng());
        worst = std::max(worst, r.max_rel_error);
        checked += r.checked;
    }
    return {worst < 1e-4, fmt("max relative error %.2e over %zu parameters", worst, checked)};
}

// ---- phantom classification ----

const Shape3 phantom_shape{32, 40, 36};

struct PhantomSetup {
    LabeledDataset data;
    DatasetSplit split;
};

PhantomSetup phantom_setup(std::uint64_t data_seed, std::uint64_t split_seed) {
    PhantomSetup s;
    s.data = generate_labeled_dataset(500, phantom_shape, ClassMix{}, data_seed);
    // one scanner vendor per synthetic patient
    std::mt19937_64 rng(splitmix64(data_seed));
    std::map<std::string, std::string> vendor;
    std::vector<SplitItem> items;
    for (const auto& x : s.data.samples) {
        auto [it, fresh] = vendor.emplace(x.patient_id, "");
        if (fresh) it->second = synthetic_vendors()[rng() % synthetic_vendors().size()];
        items.push_back({x.image_id, x.patient_id, label_stratum(x.label, it->second)});
    }
    s.split = make_dataset_split(items, 100, 5, split_seed).split;
    return s;
}

cnn::TrainConfig phantom_config(int epochs, int patience, std::uint64_t seed) {
    cnn::TrainConfig cfg;  // Adam 1e-4, batch 2
    cfg.max_epochs = epochs;
    cfg.early_stop_patience = patience;
    cfg.seed = seed;
    return cfg;
}

Outcome classification() {
    const auto t0 = Clock::now();
    const auto setup = phantom_setup(7, 7);
    const std::pair<Task, double> tasks[] = {
        {Task::sr, 0.95}, {Task::gadolinium, 0.90}, {Task::t3_vs_t21, 0.80}, {Task::t2_vs_t1, 0.60}};
    bool ok = true;
    std::string detail;
    for (const auto& [task, threshold] : tasks) {
        const auto t1 = Clock::now();
        const auto data = cnn::build_task_dataset(setup.data, task);
        const auto model = cnn::train_fold(data, setup.split, 0, cnn::conv5_fc3(data.input), phantom_config(12, 5, 1));
        const auto report = cnn::evaluate_model(model, data, setup.split.test);
        const double ba = report.metrics.ba.value_or(0.0);
        ok = ok && ba >= threshold;
        detail += fmt("%s BA %.3f (>= %.2f, n=%ld, %d epochs, %.0fs); ", std::string(task_name(task)).c_str(), ba,
                      threshold, report.metrics.n, model.epochs_run, seconds_since(t1));
        std::fprintf(stderr, "  classification %s BA %.3f\n", std::string(task_name(task)).c_str(), ba);
    }
    const double total = seconds_since(t0);
    ok = ok && total < 30 * 60;
    return {ok, detail + fmt("total %.1f min (< 30)", total / 60)};
}

Outcome learning_curve_sr() {
    bool ok = true;
    std::string detail;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const auto setup = phantom_setup(100 + seed, seed);
        const auto data = cnn::build_task_dataset(setup.data, Task::sr);
        const std::size_t pool = data.samples.size() - setup.split.test.size();
        const auto pts = cnn::learning_curve(data, setup.split, {50, pool}, cnn::conv5_fc3(data.input),
                                             phantom_config(8, 4, seed), 1);
        const double small = pts[0].ba.mean, full = pts[1].ba.mean;
        ok = ok && full >= small - 0.05;
        detail += fmt("seed %llu: BA(%zu) %.3f, BA(%zu) %.3f; ", static_cast<unsigned long long>(seed), pts[0].actual_size,
                      small, pts[1].actual_size, full);
        std::fprintf(stderr, "  learning curve seed %llu: %.3f -> %.3f\n", static_cast<unsigned long long>(seed), small, full);
    }
    return {ok, detail};
}

// ---- split integrity ----

Outcome split_integrity() {
    std::size_t leaks = 0, off = 0;
    double worst = 0.0;
    for (std::uint64_t g = 0; g < 1000; ++g) {
        const auto items = fixtures::synthetic_catalog(200 + g % 300, g);
        const auto s = make_dataset_split(items, items.size() / 5, 5, g + 1);
        if (!find_split_leak(s.split, fixtures::patient_map(items)).empty()) ++leaks;
        if (!s.within_one()) ++off;
        worst = std::max(worst, s.max_deviation);
    }
    return {leaks == 0 && off == 0,
            fmt("1000 generations: %zu leaks, %zu outside +-1 (max deviation %.2f)", leaks, off, worst)};
}

// ---- kappa oracle ----

double brute_kappa(const std::vector<int>& a, const std::vector<int>& b, int k, bool quadratic) {
    // sum over all item pairs of the weighted disagreement, observed vs. permuted
    const double n = static_cast<double>(a.size());
    auto w = [&](int i, int j) {
        const double d = std::abs(i - j) / static_cast<double>(k - 1);
        return quadratic ? d * d : d;
    };
    double observed = 0.0, expected = 0.0;
    for (std::size_t s = 0; s < a.size(); ++s) {
        observed += w(a[s], b[s]);
        for (std::size_t t = 0; t < b.size(); ++t) expected += w(a[s], b[t]);
    }
    observed /= n;
    expected /= n * n;
    return expected == 0.0 ? 1.0 : 1.0 - observed / expected;
}

Outcome kappa_oracle() {
    std::mt19937_64 rng(99);
    double worst = 0.0;
    bool identical = true;
    for (int f = 0; f < 100; ++f) {
        const int k = 2 + f % 2;
        const std::size_t n = 10 + rng() % 200;
        std::uniform_int_distribution<int> cat(0, k - 1);
        std::vector<int> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = cat(rng);
            b[i] = rng() % 3 ? a[i] : cat(rng);
        }
        for (bool q : {false, true}) {
            const auto weighting = q ? KappaWeighting::quadratic : KappaWeighting::linear;
            worst = std::max(worst, std::abs(weighted_cohens_kappa(a, b, k, weighting) - brute_kappa(a, b, k, q)));
            identical = identical && weighted_cohens_kappa(a, a, k, weighting) == 1.0;
        }
    }
    return {worst <= 1e-12 && identical, fmt("max |diff| %.2e over 100 fixtures x 2 weightings; identical -> 1: %s", worst,
                                              identical ? "yes" : "no")};
}

// ---- consensus properties ----

Annotation random_annotation(std::mt19937_64& rng, const std::string& image, const std::string& rater, bool sr) {
    Annotation a;
    a.image_id = image;
    a.rater_id = rater;
    a.straight_reject = sr;
    if (!sr) {
        a.gadolinium = rng() % 2 == 0;
        a.grades = Grades{static_cast<int>(rng() % 3), static_cast<int>(rng() % 3), static_cast<int>(rng() % 3)};
    }
    return a;
}

Outcome consensus_properties() {
    std::mt19937_64 rng(5);
    std::size_t violations = 0, disagreements = 0, routed = 0;
    AnnotationStore store({}, {"r1", "r2"});
    std::vector<std::string> ids;
    for (int i = 0; i < 200; ++i) ids.push_back("s" + std::to_string(i));
    AnnotationStore routed_store(ids, {"r1", "r2"});
    for (int i = 0; i < 10000; ++i) {
        const std::string id = "img" + std::to_string(i);
        const bool sr_a = rng() % 4 == 0, sr_b = rng() % 4 == 0;
        const auto a = random_annotation(rng, id, "r1", sr_a), b = random_annotation(rng, id, "r2", sr_b);
        if (sr_a != sr_b) {
            ++disagreements;
            try {
                consensus_merge(a, b);
                ++violations;
            } catch (const error& e) {
                if (e.code() != errc::missing_adjudication) ++violations;
            }
            if (routed < ids.size()) {
                Annotation x = a, y = b;
                x.image_id = y.image_id = ids[routed];
                routed_store.submit_annotation(x);
                routed_store.submit_annotation(y);
                if (!routed_store.pending_adjudication(ids[routed])) ++violations;
                ++routed;
            }
            continue;
        }
        const auto ab = consensus_merge(a, b), ba = consensus_merge(b, a);
        if (!(ab == ba) || !ab.valid()) ++violations;
        if (!sr_a) {
            const Grades want{std::max(a.grades->motion, b.grades->motion), std::max(a.grades->contrast, b.grades->contrast),
                              std::max(a.grades->noise, b.grades->noise)};
            if (ab.grades != want || ab.tier != tier_from_grades(want)) ++violations;
            if (*ab.gadolinium != (*a.gadolinium || *b.gadolinium)) ++violations;
            // idempotent: merging the consensus with itself changes nothing
            Annotation c1{id, "r1", false, ab.gadolinium, ab.grades, ""}, c2 = c1;
            c2.rater_id = "r2";
            if (!(consensus_merge(c1, c2) == ab)) ++violations;
        } else if (!ab.straight_reject) {
            ++violations;
        }
        Annotation a2 = a;
        a2.rater_id = "r2";
        const auto aa = consensus_merge(a, a2);
        if (aa.grades != a.grades || aa.straight_reject != a.straight_reject) ++violations;
    }
    return {violations == 0 && routed > 0,
            fmt("10000 pairs, %zu SR disagreements (%zu checked through the store), %zu violations", disagreements, routed,
                violations)};
}

// ---- NIfTI round trip ----

Volume random_float_volume(Shape3 d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n(0.0f, 100.0f);
    Volume v(d, {0.9, 1.1, 1.3});
    for (auto& x : v.data) x = static_cast<double>(n(rng));
    return v;
}

Outcome nifti_round_trip() {
    const auto t0 = Clock::now();
    bool ok = true;
    std::size_t rejected = 0, attempted = 0;
    for (const Shape3 d : {Shape3{169, 208, 179}, Shape3{1, 1, 1}, Shape3{7, 3, 11}, Shape3{64, 1, 33}}) {
        const auto v = random_float_volume(d, d[0] * 31 + d[2]);
        const auto bytes = write_nifti(v);
        const auto r = read_nifti(bytes);
        bool spacing = true;  // pixdim is float32 on disk
        for (int a = 0; a < 3; ++a) spacing = spacing && r.spacing[a] == static_cast<double>(static_cast<float>(v.spacing[a]));
        ok = ok && r.dims == v.dims && r.data == v.data && spacing && write_nifti(r) == bytes;
    }
    const auto good = write_nifti(random_float_volume({9, 8, 7}, 3));
    std::mt19937_64 rng(4);
    for (int t = 0; t < 400; ++t) {
        Bytes bad = good;
        if (t % 2 == 0) bad[344 + rng() % 4] ^= static_cast<std::uint8_t>(1 + rng() % 255);
        else bad.resize(rng() % good.size());
        ++attempted;
        try {
            read_nifti(bad);
        } catch (const error& e) {
            if (e.code() == errc::bad_magic || e.code() == errc::truncated_payload) ++rejected;
        }
    }
    const double secs = seconds_since(t0);
    ok = ok && rejected == attempted && secs < 10.0;
    return {ok, fmt("bit-exact incl. 169x208x179; %zu/%zu corruptions rejected; %.1fs", rejected, attempted, secs)};
}

// ---- registration ----

Outcome registration() {
    const auto t0 = Clock::now();
    int within = 0;
    double sum = 0.0;
    for (int c = 0; c < 20; ++c) {
        PhantomSpec spec;
        spec.shape = {32, 32, 32};
        spec.seed = 1000 + static_cast<std::uint64_t>(c);
        const auto ref = generate_phantom(spec);
        std::mt19937_64 rng(splitmix64(77 + static_cast<std::uint64_t>(c)));
        std::uniform_real_distribution<double> rot(-10.0, 10.0), tr(-8.0, 8.0), sc(0.95, 1.05);
        AffineParams truth;
        for (int a = 0; a < 3; ++a) {
            truth.rotation[a] = rot(rng) * std::numbers::pi / 180.0;
            truth.translation[a] = tr(rng);
            truth.log_scale[a] = std::log(sc(rng));
        }
        const auto moving = warp(ref, AffineMatrix::from(truth).inverse());
        const auto r = register_affine(moving, ref);
        const double e = corner_displacement_error(r.params, truth, ref);
        within += e <= 2.0;
        sum += e;
    }
    const double secs = seconds_since(t0);
    return {within >= 18 && secs < 300,
            fmt("%d/20 within 2 voxels (mean error %.3f); %.1fs", within, sum / 20, secs)};
}

// ---- gadolinium keyword audit ----

Outcome gadolinium_audit() {
    // id, series, study, manual label: 1 yes, 0 no, -1 straight reject
    struct Row {
        const char* id;
        const char* series;
        const char* study;
        int manual;
    };
    const Row rows[] = {
        {"g01", "BRAIN T1W/FFEGADO", "", 1},      {"g02", "T1 EG 3D MPR GADO", "", 1},
        {"g03", "T1 EG 3D MPR", "IRM CRANIO INJ", 1}, {"g04", "SAG 3D BRAVO +C", "", 1},
        {"g05", "3D T1 EG MPRAGE", "", 1},        {"g06", "T1 EG 3D MPR", "", 0},
        {"g07", "SAG 3D BRAVO", "", 0},           {"g08", "T1 3D IV", "", 0},
        {"g09", "T1 EG 3D MPR", "IRM CRANIO", 0}, {"g10", "T1 DERIVED", "", 0},
        {"g11", "sag 3d bravo gado", "", 1},      {"g12", "T1 EG 3D MPR", "", -1},
        {"g13", "BRAIN T1W/FFEGADO", "", -1},     {"g14", "T1 EG 3D MPR", "", 0},
        {"g15", "T1 EG 3D MPR", "", 1},           {"g16", "3D T1 EG MPRAGE Gd", "", 1},
        {"g17", "SAG 3D BRAVO", "ANGIO IV", 1},   {"g18", "T1 EG 3D MPR", "", 0},
        {"g19", "Brain T1w/FFEGado", "", 0},      {"g20", "T1 EG 3D MPR", "", 0},
    };
    std::string csv =
        "image_id,patient_id,series_description,study_description,body_part_examined,n_slices,manufacturer,model_name,"
        "field_strength_tesla\n";
    std::vector<ConsensusLabel> labels;
    for (const auto& r : rows) {
        csv += std::string(r.id) + ",p" + r.id + "," + r.series + "," + r.study + ",HEAD,176,SIEMENS,Avanto,1.5\n";
        ConsensusLabel l;
        l.image_id = r.id;
        if (r.manual < 0) {
            l.straight_reject = true;
        } else {
            l.gadolinium = r.manual == 1;
            l.grades = Grades{0, 0, 0};
            l.tier = Tier::tier1;
        }
        labels.push_back(l);
    }
    const auto cat = parse_catalog(csv, CatalogFormat::csv);
    const auto a = audit_gadolinium_keywords(cat, labels, KeywordRules{});
    // hand count: yes/yes g01 g02 g03 g11 g17; yes/no g04 g05 g15 g16; no/yes g08 g10 g19; no/no g06 g07 g09 g14 g18 g20
    const bool ok = a.manual_yes_keyword_yes == 5 && a.manual_yes_keyword_no == 4 && a.manual_no_keyword_yes == 3 &&
                    a.manual_no_keyword_no == 6 && a.skipped_sr == 2;
    return {ok, fmt("[[%zu, %zu], [%zu, %zu]] skipped %zu (expected [[5, 4], [3, 6]] skipped 2)", a.manual_yes_keyword_yes,
                    a.manual_yes_keyword_no, a.manual_no_keyword_yes, a.manual_no_keyword_no, a.skipped_sr)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"published-ba-consistency", published_ba},
        {"shape-propagation", shapes},
        {"gradient-audit", gradients},
        {"phantom-classification", classification},
        {"learning-curve-sr", learning_curve_sr},
        {"split-integrity", split_integrity},
        {"kappa-oracle", kappa_oracle},
        {"consensus-properties", consensus_properties},
        {"nifti-round-trip", nifti_round_trip},
        {"registration-recovery", registration},
        {"gadolinium-audit", gadolinium_audit},
    };
    int failed = 0, run = 0;
    for (const auto& [name, fn] : criteria) {
        bool selected = argc == 1;
        for (int i = 1; i < argc; ++i) selected = selected || std::strstr(name, argv[i]);
        if (!selected) continue;
        ++run;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("%s %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), seconds_since(t0));
        std::fflush(stdout);
        failed += !o.pass;
    }
    std::printf("%d/%d criteria passed\n", run - failed, run);
    return failed == 0 ? 0 : 1;
}
