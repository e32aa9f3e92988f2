#pragma once

// On-disk layout of a labelled volume collection:
//   <dir>/images/<image_id>.nii
//   <dir>/labels.jsonl   one ConsensusLabel per line plus patient_id and manufacturer
//   <dir>/catalog.csv    ImageRecord columns, readable by parse_catalog

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qcpipe/catalog.hpp"
#include "qcpipe/eval/splitting.hpp"
#include "qcpipe/nifti.hpp"
#include "qcpipe/phantom.hpp"
#include "qcpipe/split.hpp"

namespace qc {

struct DatasetEntry {
    ConsensusLabel label;
    std::string patient_id;
    std::string manufacturer;
};

inline const std::vector<std::string>& synthetic_vendors() {
    static const std::vector<std::string> v{"SIEMENS", "GE MEDICAL SYSTEMS", "Philips Medical Systems"};
    return v;
}

/// "sr" or the tier name, joined with the manufacturer: the stratum used for test-set selection.
inline std::string label_stratum(const ConsensusLabel& l, const std::string& manufacturer) {
    const std::string cls = l.straight_reject ? "sr" : l.tier ? std::string(tier_name(*l.tier)) : "unlabelled";
    return cls + "|" + manufacturer;
}

inline std::string read_text_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) fail(errc::io_failure, "cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::filesystem::path& p, const std::string& text) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) fail(errc::io_failure, "cannot write " + p.string());
    out << text;
    if (!out) fail(errc::io_failure, "write failed for " + p.string());
}

namespace detail {

inline std::string csv_cell(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace detail

/// Writes a phantom dataset. Each synthetic patient gets one scanner vendor; gadolinium images
/// mention the injection in their series description two times out of three.
inline std::vector<DatasetEntry> write_synthetic_dataset(const std::filesystem::path& dir, const LabeledDataset& ds,
                                                         std::uint64_t seed) {
    std::filesystem::create_directories(dir / "images");
    std::map<std::string, std::string> vendor;
    std::mt19937_64 rng(splitmix64(seed ^ 0x76656e646f72ULL));
    std::vector<DatasetEntry> entries;
    std::string labels, catalog =
                            "image_id,patient_id,series_description,study_description,body_part_examined,n_slices,"
                            "manufacturer,model_name,field_strength_tesla\n";
    const auto& vendors = synthetic_vendors();
    const auto& t1w = KeywordRules::default_t1w();
    for (const auto& s : ds.samples) {
        auto [it, fresh] = vendor.emplace(s.patient_id, "");
        if (fresh) it->second = vendors[std::uniform_int_distribution<std::size_t>(0, vendors.size() - 1)(rng)];
        std::string series = t1w[std::uniform_int_distribution<std::size_t>(0, 2)(rng)];
        std::transform(series.begin(), series.end(), series.begin(), [](unsigned char c) { return std::toupper(c); });
        const bool mentions = std::bernoulli_distribution(2.0 / 3.0)(rng);
        if (s.artifacts.gadolinium && mentions) series += " GADO";
        const bool tesla3 = std::bernoulli_distribution(0.5)(rng);

        write_nifti_file(dir / "images" / (s.image_id + ".nii"), s.volume);
        nlohmann::json j = s.label;
        j["patient_id"] = s.patient_id;
        j["manufacturer"] = it->second;
        labels += j.dump() + "\n";
        catalog += s.image_id + "," + s.patient_id + "," + detail::csv_cell(series) + ",IRM CRANIO,BRAIN," +
                   std::to_string(s.volume.dims[2]) + "," + detail::csv_cell(it->second) + ",phantom," +
                   (tesla3 ? "3.0" : "1.5") + "\n";
        entries.push_back({s.label, s.patient_id, it->second});
    }
    write_text_file(dir / "labels.jsonl", labels);
    write_text_file(dir / "catalog.csv", catalog);
    return entries;
}

inline std::vector<DatasetEntry> read_label_file(const std::filesystem::path& p) {
    std::vector<DatasetEntry> out;
    std::istringstream in(read_text_file(p));
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            DatasetEntry e;
            e.label = j.get<ConsensusLabel>();
            e.patient_id = j.value("patient_id", e.label.image_id);
            e.manufacturer = j.value("manufacturer", std::string("unknown"));
            if (!e.label.valid()) fail(errc::validation_failed, "label violates the consensus invariant");
            out.push_back(std::move(e));
        } catch (const nlohmann::json::exception& e) {
            fail(errc::malformed_row, p.string() + ":" + std::to_string(n) + ": " + e.what());
        } catch (const error& e) {
            fail(e.code(), p.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

/// Loads labels and volumes written by write_synthetic_dataset (or any directory with that layout).
inline LabeledDataset read_dataset_dir(const std::filesystem::path& dir, std::vector<DatasetEntry>* entries = nullptr) {
    const auto labels = read_label_file(dir / "labels.jsonl");
    LabeledDataset ds;
    for (const auto& e : labels) {
        LabeledSample s;
        s.image_id = e.label.image_id;
        s.patient_id = e.patient_id;
        s.label = e.label;
        s.volume = read_nifti_file(dir / "images" / (e.label.image_id + ".nii"));
        ds.samples.push_back(std::move(s));
    }
    if (entries) *entries = labels;
    return ds;
}

inline std::vector<SplitItem> split_items(const std::vector<DatasetEntry>& entries) {
    std::vector<SplitItem> out;
    for (const auto& e : entries) out.push_back({e.label.image_id, e.patient_id, label_stratum(e.label, e.manufacturer)});
    return out;
}

inline std::map<std::string, std::string> patient_map_of(const std::vector<DatasetEntry>& entries) {
    std::map<std::string, std::string> out;
    for (const auto& e : entries) out[e.label.image_id] = e.patient_id;
    return out;
}

}  // namespace qc
