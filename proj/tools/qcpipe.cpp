// qcpipe: command-line front end. Every subcommand takes --config <json>, --seed and --out.
// Failures print {"error": <code>, "message": <text>} on stderr and exit nonzero.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qcpipe/qcpipe.hpp"
#include "qcpipe/service/server.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qc;

namespace {

struct Common {
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out;
    json config = json::object();
};

json load_json_file(const fs::path& p) {
    try {
        return json::parse(read_text_file(p));
    } catch (const json::parse_error& e) {
        fail(errc::invalid_argument, p.string() + ": " + e.what());
    }
}

template <class T>
T required(const json& cfg, const char* key) {
    if (!cfg.contains(key) || cfg.at(key).is_null()) fail(errc::invalid_argument, std::string("config needs '") + key + "'");
    return cfg.at(key).get<T>();
}

fs::path out_path(const Common& c) {
    if (c.out.empty()) fail(errc::invalid_argument, "--out is required");
    return c.out;
}

void print(const json& j) { std::cout << j.dump(2) << "\n"; }

// Paths in a config resolve relative to the config file.
fs::path config_relative(const Common& c, const std::string& p) {
    const fs::path path(p);
    if (path.is_absolute() || c.config_path.empty()) return path;
    return fs::path(c.config_path).parent_path() / path;
}

KeywordRules rules_from(const json& cfg) {
    return KeywordRules(cfg.value("t1w_patterns", KeywordRules::default_t1w()),
                        cfg.value("gadolinium_markers", std::vector<std::string>{"gado", "inj", "iv"}));
}

Catalog load_catalog(const Common& c, const fs::path& p) {
    const std::string fmt = c.config.value("format", p.extension() == ".jsonl" ? "jsonl" : "csv");
    if (fmt != "csv" && fmt != "jsonl") fail(errc::invalid_argument, "format must be csv or jsonl");
    return parse_catalog(read_text_file(p), fmt == "csv" ? CatalogFormat::csv : CatalogFormat::jsonl, p.string());
}

std::vector<Annotation> load_annotations(const fs::path& p) {
    std::vector<Annotation> out;
    std::istringstream in(read_text_file(p));
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto j = json::parse(line);
            if (j.contains("annotation")) j = j.at("annotation");  // store log records
            out.push_back(j.get<Annotation>());
        } catch (const json::exception& e) {
            fail(errc::malformed_row, p.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

// Latest annotation per image and rater, in image order of first appearance.
struct AnnotationTable {
    std::vector<std::string> images;
    std::set<std::string> raters;
    std::map<std::string, std::map<std::string, Annotation>> by_image;
};

AnnotationTable tabulate(const std::vector<Annotation>& anns) {
    AnnotationTable t;
    for (const auto& a : anns) {
        if (!a.valid()) fail(errc::validation_failed, "invalid annotation for '" + a.image_id + "' by '" + a.rater_id + "'");
        if (!t.by_image.count(a.image_id)) t.images.push_back(a.image_id);
        t.by_image[a.image_id][a.rater_id] = a;
        t.raters.insert(a.rater_id);
    }
    return t;
}

std::pair<std::string, std::string> two_raters(const AnnotationTable& t, const json& cfg) {
    if (cfg.contains("raters")) {
        const auto r = cfg.at("raters").get<std::vector<std::string>>();
        if (r.size() != 2 || r[0] == r[1]) fail(errc::invalid_argument, "raters must name two distinct ids");
        return {r[0], r[1]};
    }
    if (t.raters.size() != 2)
        fail(errc::invalid_argument, "expected exactly two raters, found " + std::to_string(t.raters.size()));
    return {*t.raters.begin(), *t.raters.rbegin()};
}

cnn::NetworkSpec network_from(const json& cfg, const cnn::Dims4& input) {
    if (cfg.contains("spec")) {
        auto spec = cfg.at("spec").get<cnn::NetworkSpec>();
        spec.input = input;
        cnn::validate_spec(spec);
        return spec;
    }
    const json net = cfg.value("network", json::object());
    auto spec = cnn::conv5_fc3(input, net.value("fc1_width", std::size_t{1300}),
                               net.value("channels", std::array<std::size_t, 5>{8, 16, 32, 64, 128}),
                               net.value("fc2_width", std::size_t{50}), net.value("dropout", 0.5));
    cnn::validate_spec(spec);
    return spec;
}

cnn::TrainConfig train_config_from(const json& cfg, std::uint64_t seed) {
    cnn::TrainConfig t = cfg.value("train", json::object()).get<cnn::TrainConfig>();
    if (!cfg.value("train", json::object()).contains("seed")) t.seed = seed;
    t.validate();
    return t;
}

struct TaskData {
    std::vector<DatasetEntry> entries;
    cnn::TaskDataset data;
    DatasetSplit split;
    json split_report;
};

// Loads a dataset directory and builds (or reads) the patient-level split.
TaskData load_task_data(const Common& c) {
    TaskData td;
    const auto dir = config_relative(c, required<std::string>(c.config, "data"));
    const auto ds = read_dataset_dir(dir, &td.entries);
    td.data = cnn::build_task_dataset(ds, parse_task(required<std::string>(c.config, "task")));
    if (td.data.samples.empty()) fail(errc::empty_fold, "no image carries a label for this task");
    if (c.config.contains("split")) {
        td.split = load_json_file(config_relative(c, c.config.at("split").get<std::string>())).get<DatasetSplit>();
    } else {
        const auto st = make_dataset_split(split_items(td.entries), c.config.value("n_test", std::size_t{100}),
                                           c.config.value("n_folds", 5), c.seed);
        td.split = st.split;
        json strata = json::object();
        for (const auto& [name, r] : st.strata)
            strata[name] = {{"total", r.total}, {"proportional", r.proportional}, {"in_test", r.in_test}};
        td.split_report = {{"max_deviation", st.max_deviation}, {"strata", strata}};
    }
    if (const auto leak = find_split_leak(td.split, patient_map_of(td.entries)); !leak.empty())
        fail(errc::invalid_argument, "split leaks: " + leak);
    return td;
}

// ---- subcommands ----

void cmd_select(const Common& c) {
    const auto cat = load_catalog(c, config_relative(c, required<std::string>(c.config, "catalog")));
    const auto rules = rules_from(c.config);
    const auto t1w = select_t1w(cat, rules);
    const auto kept = filter_min_slices(t1w, c.config.value("min_slices", 40));
    std::string lines;
    for (const auto& r : kept.records) lines += json(r).dump() + "\n";
    write_text_file(out_path(c), lines);
    json errors = json::array();
    for (const auto& e : cat.errors) errors.push_back({{"line", e.line}, {"message", e.message}});
    print({{"source", cat.source},
           {"rows", cat.row_count},
           {"parsed", cat.records.size()},
           {"t1w", t1w.records.size()},
           {"selected", kept.records.size()},
           {"row_errors", errors}});
}

void cmd_preprocess(const Common& c) {
    auto cfg = preprocess_config_from_json(c.config);
    if (c.config.contains("reference")) cfg.reference = read_nifti_file(config_relative(c, c.config.at("reference")));
    std::vector<fs::path> inputs;
    if (c.config.contains("inputs"))
        for (const auto& p : c.config.at("inputs").get<std::vector<std::string>>()) inputs.push_back(config_relative(c, p));
    if (c.config.contains("input_dir")) {
        for (const auto& e : fs::directory_iterator(config_relative(c, c.config.at("input_dir"))))
            if (e.path().extension() == ".nii") inputs.push_back(e.path());
        std::sort(inputs.begin(), inputs.end());
    }
    if (inputs.empty()) fail(errc::invalid_argument, "config needs 'inputs' or 'input_dir' with .nii files");
    const fs::path out = out_path(c);
    const bool slices = c.config.value("slices", true);
    fs::create_directories(out);
    json items = json::array();
    for (const auto& in : inputs) {
        const auto r = preprocess_pipeline_detailed(read_nifti_file(in), cfg);
        const std::string id = in.stem().string();
        write_nifti_file(out / (id + ".nii"), r.volume);
        if (slices) write_slice_pngs(out / "slices", id, export_central_slices(r.volume));
        json item{{"image_id", id}, {"dims", r.volume.dims}};
        if (r.registration)
            item["registration"] = {{"initial_mse", r.registration->initial_mse},
                                    {"final_mse", r.registration->final_mse},
                                    {"converged", r.registration->converged}};
        items.push_back(item);
    }
    print({{"processed", items.size()}, {"images", items}});
}

void cmd_synth(const Common& c) {
    const auto shape = c.config.value("shape", std::array<std::size_t, 3>{32, 40, 36});
    ClassMix mix;
    if (c.config.contains("mix")) {
        const auto& m = c.config.at("mix");
        mix.sr = m.value("sr", mix.sr);
        mix.tier1 = m.value("tier1", mix.tier1);
        mix.tier2 = m.value("tier2", mix.tier2);
        mix.tier3 = m.value("tier3", mix.tier3);
    }
    const auto ds = generate_labeled_dataset(c.config.value("n", std::size_t{100}), {shape[0], shape[1], shape[2]}, mix, c.seed);
    const fs::path out = out_path(c);
    const auto entries = write_synthetic_dataset(out, ds, c.seed);
    if (c.config.value("slices", true))
        for (const auto& s : ds.samples) write_slice_pngs(out / "slices", s.image_id, export_central_slices(s.volume));
    std::map<std::string, int> counts;
    for (const auto& e : entries) ++counts[e.label.straight_reject ? "sr" : std::string(tier_name(*e.label.tier))];
    print({{"images", ds.samples.size()}, {"patients", ds.patient_multiplicity.size()}, {"classes", counts}});
}

AnnotationServer* running_server = nullptr;

void cmd_serve(const Common& c) {
    std::vector<std::string> images;
    std::optional<fs::path> dataset;
    if (c.config.contains("images")) images = c.config.at("images").get<std::vector<std::string>>();
    if (c.config.contains("data")) {
        dataset = config_relative(c, c.config.at("data"));
        for (const auto& e : read_label_file(*dataset / "labels.jsonl")) images.push_back(e.label.image_id);
    }
    if (images.empty()) fail(errc::invalid_argument, "config needs 'images' or 'data'");
    AnnotationStore store(images, required<std::vector<std::string>>(c.config, "raters"), out_path(c));
    ServerOptions opt;
    if (c.config.contains("slice_dir")) opt.slice_dir = config_relative(c, c.config.at("slice_dir"));
    else if (dataset) opt.slice_dir = *dataset / "slices";
    if (c.config.contains("static_dir")) opt.static_dir = config_relative(c, c.config.at("static_dir"));
    if (dataset)
        opt.slice_source = [dir = *dataset](const std::string& id, const std::string& view) -> std::optional<std::string> {
            const auto p = dir / "images" / (id + ".nii");
            if (!fs::exists(p)) return std::nullopt;
            const auto t = export_central_slices(read_nifti_file(p));
            const auto& s = view == "axial" ? t.axial : view == "coronal" ? t.coronal : t.sagittal;
            const auto png = encode_png(s);
            return std::string(png.begin(), png.end());
        };
    AnnotationServer server(store, opt);
    running_server = &server;
    std::signal(SIGINT, [](int) { if (running_server) running_server->stop(); });
    std::signal(SIGTERM, [](int) { if (running_server) running_server->stop(); });
    const std::string host = c.config.value("host", "127.0.0.1");
    const int port = c.config.value("port", 8080);
    std::cerr << json{{"listening", host + ":" + std::to_string(port)}, {"images", images.size()}}.dump() << std::endl;
    server.run(host, port);
    running_server = nullptr;
}

void cmd_consensus(const Common& c) {
    const auto table = tabulate(load_annotations(config_relative(c, required<std::string>(c.config, "annotations"))));
    const auto [r1, r2] = two_raters(table, c.config);
    const auto resolutions = c.config.value("resolutions", std::map<std::string, bool>{});
    std::vector<ExportRow> rows;
    std::vector<std::string> incomplete;
    for (const auto& id : table.images) {
        const auto& by_rater = table.by_image.at(id);
        if (!by_rater.count(r1) || !by_rater.count(r2)) {
            incomplete.push_back(id);
            continue;
        }
        ExportRow row;
        row.image_id = id;
        std::optional<bool> res;
        if (auto it = resolutions.find(id); it != resolutions.end()) res = it->second;
        try {
            row.label = consensus_merge(by_rater.at(r1), by_rater.at(r2), res);
        } catch (const error& e) {
            if (e.code() != errc::missing_adjudication) throw;
            row.pending_adjudication = true;
        }
        rows.push_back(std::move(row));
    }
    write_text_file(out_path(c), export_jsonl(rows));
    std::size_t pending = 0;
    for (const auto& r : rows) pending += r.pending_adjudication;
    print({{"consensus", rows.size() - pending}, {"pending_adjudication", pending}, {"incomplete", incomplete}});
}

void cmd_kappa(const Common& c) {
    const auto table = tabulate(load_annotations(config_relative(c, required<std::string>(c.config, "annotations"))));
    const auto [r1, r2] = two_raters(table, c.config);
    const auto weighting = parse_weighting(c.config.value("weighting", "linear"));
    std::map<std::string, std::pair<std::vector<int>, std::vector<int>>> pairs;
    for (const auto& id : table.images) {
        const auto& by = table.by_image.at(id);
        if (!by.count(r1) || !by.count(r2)) continue;
        const auto &a = by.at(r1), &b = by.at(r2);
        auto add = [&](const char* name, int x, int y) {
            pairs[name].first.push_back(x);
            pairs[name].second.push_back(y);
        };
        add("straight_reject", a.straight_reject, b.straight_reject);
        if (a.straight_reject || b.straight_reject) continue;
        add("gadolinium", *a.gadolinium, *b.gadolinium);
        add("motion", a.grades->motion, b.grades->motion);
        add("contrast", a.grades->contrast, b.grades->contrast);
        add("noise", a.grades->noise, b.grades->noise);
    }
    json out{{"raters", {r1, r2}}, {"weighting", c.config.value("weighting", "linear")}};
    json kappas = json::object();
    for (const auto& [name, p] : pairs) {
        const int k = name == "straight_reject" || name == "gadolinium" ? 2 : 3;
        kappas[name] = {{"n", p.first.size()},
                        {"kappa", p.first.size() >= 2 ? json(weighted_cohens_kappa(p.first, p.second, k, weighting)) : json(nullptr)}};
    }
    out["kappa"] = kappas;
    write_text_file(out_path(c), out.dump(2) + "\n");
    print(out);
}

json fold_trace_json(const cnn::TrainedModel& m) {
    return {{"fold", m.fold_index}, {"best_epoch", m.best_epoch}, {"epochs_run", m.epochs_run},
            {"best_validation_loss", m.best_validation_loss}, {"trace", m.trace}, {"log", m.log}};
}

void cmd_train(const Common& c) {
    auto td = load_task_data(c);
    const auto spec = network_from(c.config, td.data.input);
    const auto cfg = train_config_from(c.config, c.seed);
    const fs::path out = out_path(c);
    fs::create_directories(out);
    write_text_file(out / "split.json", json(td.split).dump() + "\n");
    const auto cv = cnn::run_cross_validation(td.data, td.split, spec, cfg, c.config.value("max_folds", 0),
                                              [](const cnn::EpochRecord& e) {
                                                  std::cerr << json(e).dump() << std::endl;
                                              });
    json folds = json::array(), reports = json::array();
    for (std::size_t f = 0; f < cv.models.size(); ++f) {
        cnn::save_checkpoint(out / ("fold" + std::to_string(f) + ".ckpt"), cv.models[f]);
        folds.push_back(fold_trace_json(cv.models[f]));
        reports.push_back(report_to_json(cv.fold_reports[f]));
    }
    const std::string task(task_name(td.data.task));
    json report{{"task", task},
                {"images", td.data.samples.size()},
                {"test_images", cnn::detail::resolve(td.data, td.split.test).size()},
                {"folds", folds},
                {"test_reports", reports},
                {"aggregate", aggregate_to_json(cv.aggregate)},
                {"table", format_table({{task, cv.aggregate}})},
                {"split", td.split_report}};
    write_text_file(out / "report.json", report.dump(2) + "\n");
    std::cout << format_table({{task, cv.aggregate}});
}

void cmd_evaluate(const Common& c) {
    auto td = load_task_data(c);
    std::vector<std::string> ids = td.split.test;
    if (c.config.contains("ids")) ids = c.config.at("ids").get<std::vector<std::string>>();
    const auto models = required<std::vector<std::string>>(c.config, "models");
    if (models.empty()) fail(errc::invalid_argument, "models must not be empty");
    const auto samples = cnn::detail::resolve(td.data, ids);
    if (samples.empty()) fail(errc::empty_fold, "no labelled images to evaluate");
    std::vector<int> truth;
    for (const auto* s : samples) truth.push_back(s->label);

    std::vector<EvalReport> reports;
    std::vector<std::vector<int>> preds;
    json per_model = json::array();
    for (const auto& m : models) {
        const auto model = cnn::load_checkpoint(config_relative(c, m));
        if (model.spec.input != td.data.input) fail(errc::shape_mismatch, m + " expects a different input shape");
        const auto p = cnn::predict(model, samples);
        reports.push_back(evaluate_predictions(std::string(task_name(td.data.task)), p.labels, truth, p.prob1));
        preds.push_back(p.labels);
        json j = report_to_json(reports.back());
        j["model"] = m;
        per_model.push_back(j);
    }
    const auto agg = aggregate_reports(reports);
    json out{{"reports", per_model}, {"aggregate", aggregate_to_json(agg)}};
    if (preds.size() >= 2) {
        const auto mc = mcnemar_test(preds[0], preds[1], truth);
        out["mcnemar"] = {{"models", {models[0], models[1]}}, {"b", mc.b}, {"c", mc.c}, {"statistic", mc.statistic},
                          {"p_value", mc.p_value}, {"exact", mc.exact}};
    }
    write_text_file(out_path(c), out.dump(2) + "\n");
    std::cout << format_table({{std::string(task_name(td.data.task)), agg}});
}

void cmd_learning_curve(const Common& c) {
    auto td = load_task_data(c);
    const auto spec = network_from(c.config, td.data.input);
    const auto cfg = train_config_from(c.config, c.seed);
    const auto sizes = required<std::vector<std::size_t>>(c.config, "sizes");
    const auto pts = cnn::learning_curve(td.data, td.split, sizes, spec, cfg, c.config.value("max_folds", 0));
    json out = json::array();
    for (const auto& p : pts)
        out.push_back({{"size", p.size}, {"actual_size", p.actual_size}, {"ba_mean", p.ba.mean}, {"ba_std", p.ba.std},
                       {"fold_ba", p.fold_ba}});
    const json doc{{"task", task_name(td.data.task)}, {"points", out}};
    write_text_file(out_path(c), doc.dump(2) + "\n");
    print(doc);
}

void cmd_audit_gado(const Common& c) {
    const auto cat = load_catalog(c, config_relative(c, required<std::string>(c.config, "catalog")));
    std::vector<ConsensusLabel> labels;
    for (const auto& e : read_label_file(config_relative(c, required<std::string>(c.config, "labels"))))
        labels.push_back(e.label);
    const auto rules = rules_from(c.config);
    const auto out = audit_to_json(audit_gadolinium_keywords(cat, labels, rules), rules);
    write_text_file(out_path(c), out.dump(2) + "\n");
    print(out["table"]);
}

int report_error(const std::string& code, const std::string& message, int status) {
    std::cerr << json{{"error", code}, {"message", message}}.dump() << std::endl;
    return status;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MRI quality-control pipeline"};
    app.require_subcommand(1);
    Common common;
    using Handler = void (*)(const Common&);
    const std::vector<std::tuple<const char*, const char*, Handler>> commands{
        {"select", "filter a catalog to 3D T1w images with enough slices", cmd_select},
        {"preprocess", "resample, optionally register, rescale and crop NIfTI volumes", cmd_preprocess},
        {"synth", "generate a labelled phantom dataset", cmd_synth},
        {"serve-annotate", "run the annotation HTTP service", cmd_serve},
        {"consensus", "merge two raters' annotations", cmd_consensus},
        {"kappa", "weighted Cohen's kappa per characteristic", cmd_kappa},
        {"train", "cross-validate the classifier on one task", cmd_train},
        {"evaluate", "score checkpoints on held-out images", cmd_evaluate},
        {"learning-curve", "test BA against training-set size", cmd_learning_curve},
        {"audit-gado", "cross-tabulate gadolinium labels against description keywords", cmd_audit_gado},
    };
    std::map<CLI::App*, Handler> handlers;
    for (const auto& [name, help, fn] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", common.config_path, "JSON configuration file")->check(CLI::ExistingFile);
        sub->add_option("--seed", common.seed, "random seed");
        sub->add_option("--out", common.out, "output path");
        handlers[sub] = fn;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report_error("UsageError", e.what(), 2);
    }
    try {
        if (!common.config_path.empty()) common.config = load_json_file(common.config_path);
        if (!common.config.is_object()) fail(errc::invalid_argument, "config must be a JSON object");
        for (auto* sub : app.get_subcommands()) handlers.at(sub)(common);
    } catch (const error& e) {
        const std::string name(errc_name(e.code())), what = e.what();
        return report_error(name, what.rfind(name + ": ", 0) == 0 ? what.substr(name.size() + 2) : what, 1);
    } catch (const json::exception& e) {
        return report_error("InvalidArgument", e.what(), 1);
    } catch (const std::exception& e) {
        return report_error("IoFailure", e.what(), 1);
    }
    return 0;
}
