#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qcpipe/error.hpp"
#include "qcpipe/labels.hpp"

namespace qc {

struct VersionedAnnotation {
    int version = 0;
    Annotation annotation;
};

/// One line of the label export. Images awaiting SR adjudication carry no label.
struct ExportRow {
    std::string image_id;
    std::optional<ConsensusLabel> label;
    bool pending_adjudication = false;

    friend bool operator==(const ExportRow&, const ExportRow&) = default;
};

struct RaterProgress {
    std::size_t done = 0;
    std::size_t remaining = 0;
};

struct ProgressSummary {
    std::size_t images = 0;
    std::map<std::string, RaterProgress> raters;
    std::vector<std::string> adjudication_queue;
    std::size_t consensus = 0;
    std::map<std::string, std::size_t> distribution;  // "sr", "tier1", "tier2", "tier3"
};

inline nlohmann::json export_row_json(const ExportRow& r) {
    nlohmann::json j = r.label ? nlohmann::json(*r.label) : nlohmann::json{{"image_id", r.image_id}};
    j["pending_adjudication"] = r.pending_adjudication;
    return j;
}

inline std::string export_jsonl(const std::vector<ExportRow>& rows) {
    std::string out;
    for (const auto& r : rows) out += export_row_json(r).dump() + "\n";
    return out;
}

inline std::vector<ExportRow> parse_export(const std::string& text) {
    std::vector<ExportRow> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        ExportRow r;
        r.image_id = j.at("image_id").get<std::string>();
        r.pending_adjudication = j.value("pending_adjudication", false);
        if (!r.pending_adjudication) r.label = j.get<ConsensusLabel>();
        rows.push_back(std::move(r));
    }
    return rows;
}

inline nlohmann::json progress_json(const ProgressSummary& p) {
    nlohmann::json raters = nlohmann::json::object();
    for (const auto& [id, rp] : p.raters) raters[id] = {{"done", rp.done}, {"remaining", rp.remaining}};
    return {{"images", p.images},
            {"raters", raters},
            {"adjudication_queue", p.adjudication_queue},
            {"disagreement_queue_size", p.adjudication_queue.size()},
            {"consensus", p.consensus},
            {"distribution", p.distribution}};
}

/// Two-rater annotation store. Writers serialize on one mutex and publish an immutable snapshot;
/// readers only copy the snapshot pointer. With a log path, every mutation is appended to a
/// JSON-lines file that is replayed on construction.
class AnnotationStore {
public:
    AnnotationStore(std::vector<std::string> image_ids, std::vector<std::string> raters,
                    std::optional<std::filesystem::path> log_path = std::nullopt)
        : log_path_(std::move(log_path)) {
        auto s = std::make_shared<State>();
        s->images = std::move(image_ids);
        for (std::size_t i = 0; i < s->images.size(); ++i)
            if (!s->image_index.emplace(s->images[i], i).second)
                fail(errc::duplicate_image_id, "duplicate image id '" + s->images[i] + "'");
        s->raters = std::move(raters);
        if (s->raters.size() != 2) fail(errc::invalid_argument, "exactly two raters are required");
        if (s->raters[0] == s->raters[1]) fail(errc::invalid_argument, "rater ids must differ");
        state_ = std::move(s);
        if (log_path_ && std::filesystem::exists(*log_path_)) replay(*log_path_);
    }

    std::vector<std::string> images() const { return snapshot()->images; }
    std::vector<std::string> raters() const { return snapshot()->raters; }
    bool has_image(const std::string& id) const { return snapshot()->image_index.count(id) > 0; }

    /// Lowest-index image this rater has not annotated yet; empty when exhausted.
    std::optional<std::string> next_image(const std::string& rater) const {
        auto s = snapshot();
        s->check_rater(rater);
        for (const auto& id : s->images)
            if (!s->current(id, rater)) return id;
        return std::nullopt;
    }

    /// Stores `a` as the rater's current annotation and returns its version (1, 2, ...).
    int submit_annotation(const Annotation& a) {
        std::lock_guard lock(writer_);
        auto s = std::make_shared<State>(*snapshot());
        s->check_image(a.image_id);
        s->check_rater(a.rater_id);
        if (!a.valid()) fail(errc::validation_failed, validation_message(a));
        const int version = s->apply_annotation(a);
        append({{"type", "annotation"}, {"version", version}, {"annotation", a}});
        publish(std::move(s));
        return version;
    }

    std::vector<VersionedAnnotation> history(const std::string& image_id) const {
        auto s = snapshot();
        s->check_image(image_id);
        std::vector<VersionedAnnotation> out;
        for (const auto& r : s->raters)
            if (auto it = s->log.find({image_id, r}); it != s->log.end())
                out.insert(out.end(), it->second.begin(), it->second.end());
        return out;
    }

    std::optional<VersionedAnnotation> current(const std::string& image_id, const std::string& rater) const {
        auto s = snapshot();
        s->check_image(image_id);
        s->check_rater(rater);
        if (const auto* v = s->current(image_id, rater)) return *v;
        return std::nullopt;
    }

    /// Consensus for an image, or empty when it waits for SR adjudication. A given resolution is
    /// recorded before merging. Throws NotReady unless both raters have annotated the image.
    std::optional<ConsensusLabel> compute_consensus(const std::string& image_id,
                                                    std::optional<bool> sr_resolution = std::nullopt) {
        if (sr_resolution) return resolve_sr(image_id, *sr_resolution);
        return snapshot()->consensus(image_id);
    }

    std::optional<ConsensusLabel> consensus(const std::string& image_id) const { return snapshot()->consensus(image_id); }

    /// Records the adjudicated SR decision and returns the resulting consensus.
    ConsensusLabel resolve_sr(const std::string& image_id, bool straight_reject) {
        std::lock_guard lock(writer_);
        auto s = std::make_shared<State>(*snapshot());
        s->check_image(image_id);
        s->require_ready(image_id);
        s->resolutions[image_id] = straight_reject;
        s->resolution_seq[image_id] = ++s->seq;
        auto label = s->consensus(image_id);
        append({{"type", "resolution"}, {"image_id", image_id}, {"straight_reject", straight_reject}});
        publish(std::move(s));
        return *label;
    }

    bool pending_adjudication(const std::string& image_id) const {
        auto s = snapshot();
        s->check_image(image_id);
        return s->ready(image_id) && !s->consensus(image_id);
    }

    std::vector<std::string> adjudication_queue() const {
        auto s = snapshot();
        std::vector<std::string> out;
        for (const auto& id : s->images)
            if (s->ready(id) && !s->consensus(id)) out.push_back(id);
        return out;
    }

    /// One row per image annotated by both raters, in image order.
    std::vector<ExportRow> export_rows() const {
        auto s = snapshot();
        std::vector<ExportRow> out;
        for (const auto& id : s->images) {
            if (!s->ready(id)) continue;
            ExportRow r{id, s->consensus(id), false};
            r.pending_adjudication = !r.label;
            out.push_back(std::move(r));
        }
        return out;
    }

    std::string export_labels() const { return export_jsonl(export_rows()); }

    ProgressSummary progress() const {
        auto s = snapshot();
        ProgressSummary p;
        p.images = s->images.size();
        for (const auto& r : s->raters) {
            auto& rp = p.raters[r];
            for (const auto& id : s->images) (s->current(id, r) ? rp.done : rp.remaining)++;
        }
        for (const char* k : {"sr", "tier1", "tier2", "tier3"}) p.distribution[k] = 0;
        for (const auto& id : s->images) {
            if (!s->ready(id)) continue;
            auto c = s->consensus(id);
            if (!c) {
                p.adjudication_queue.push_back(id);
                continue;
            }
            ++p.consensus;
            ++p.distribution[c->straight_reject ? "sr" : std::string(tier_name(*c->tier))];
        }
        return p;
    }

    /// Rewrites the log with the current history, dropping superseded resolutions.
    void compact() {
        std::lock_guard lock(writer_);
        if (!log_path_) return;
        auto s = snapshot();
        const auto tmp = std::filesystem::path(log_path_->string() + ".tmp");
        {
            std::ofstream out(tmp, std::ios::trunc);
            if (!out) fail(errc::io_failure, "cannot write " + tmp.string());
            std::vector<std::pair<std::size_t, nlohmann::json>> records;
            for (const auto& [key, versions] : s->log)
                for (const auto& v : versions)
                    records.emplace_back(v.annotation_seq,
                                         nlohmann::json{{"type", "annotation"}, {"version", v.version}, {"annotation", v.annotation}});
            for (const auto& [id, sr] : s->resolutions)
                records.emplace_back(s->resolution_seq.at(id),
                                     nlohmann::json{{"type", "resolution"}, {"image_id", id}, {"straight_reject", sr}});
            std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
            for (const auto& [seq, j] : records) out << j.dump() << '\n';
            if (!out.flush()) fail(errc::io_failure, "cannot write " + tmp.string());
        }
        std::filesystem::rename(tmp, *log_path_);
    }

private:
    struct Entry : VersionedAnnotation {
        std::size_t annotation_seq = 0;
    };

    struct State {
        std::vector<std::string> images;
        std::map<std::string, std::size_t> image_index;
        std::vector<std::string> raters;
        std::map<std::pair<std::string, std::string>, std::vector<Entry>> log;  // (image, rater) -> versions
        std::map<std::string, bool> resolutions;
        std::map<std::string, std::size_t> resolution_seq;
        std::size_t seq = 0;

        void check_image(const std::string& id) const {
            if (!image_index.count(id)) fail(errc::unknown_image, "unknown image '" + id + "'");
        }
        void check_rater(const std::string& r) const {
            if (std::find(raters.begin(), raters.end(), r) == raters.end())
                fail(errc::unknown_rater, "unknown rater '" + r + "'");
        }
        const Entry* current(const std::string& image, const std::string& rater) const {
            auto it = log.find({image, rater});
            return it == log.end() || it->second.empty() ? nullptr : &it->second.back();
        }
        bool ready(const std::string& image) const { return current(image, raters[0]) && current(image, raters[1]); }
        void require_ready(const std::string& image) const {
            if (!ready(image)) fail(errc::not_ready, "image '" + image + "' does not have two annotations yet");
        }
        int apply_annotation(const Annotation& a) {
            auto& versions = log[{a.image_id, a.rater_id}];
            Entry e;
            e.version = static_cast<int>(versions.size()) + 1;
            e.annotation = a;
            e.annotation_seq = ++seq;
            versions.push_back(std::move(e));
            // A new annotation invalidates an earlier adjudication.
            resolutions.erase(a.image_id);
            resolution_seq.erase(a.image_id);
            return versions.back().version;
        }
        std::optional<ConsensusLabel> consensus(const std::string& image) const {
            check_image(image);
            require_ready(image);
            const auto& a = current(image, raters[0])->annotation;
            const auto& b = current(image, raters[1])->annotation;
            std::optional<bool> res;
            if (auto it = resolutions.find(image); it != resolutions.end()) res = it->second;
            if (a.straight_reject != b.straight_reject && !res) return std::nullopt;
            return consensus_merge(a, b, res);
        }
    };

    static std::string validation_message(const Annotation& a) {
        if (a.image_id.empty() || a.rater_id.empty()) return "annotation needs image_id and rater_id";
        if (a.straight_reject) return "a straight reject must not carry gadolinium or grades";
        if (!a.gadolinium || !a.grades) return "annotation needs gadolinium and grades unless it is a straight reject";
        return "grades must lie in {0, 1, 2}";
    }

    std::shared_ptr<const State> snapshot() const {
        std::lock_guard lock(snapshot_mutex_);
        return state_;
    }
    void publish(std::shared_ptr<State> s) {
        std::lock_guard lock(snapshot_mutex_);
        state_ = std::move(s);
    }

    void append(const nlohmann::json& record) {
        if (!log_path_) return;
        std::ofstream out(*log_path_, std::ios::app);
        out << record.dump() << '\n';
        if (!out.flush()) fail(errc::io_failure, "cannot append to " + log_path_->string());
    }

    void replay(const std::filesystem::path& p) {
        std::ifstream in(p);
        if (!in) fail(errc::io_failure, "cannot read " + p.string());
        auto s = std::make_shared<State>(*snapshot());
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            try {
                const auto j = nlohmann::json::parse(line);
                const auto type = j.at("type").get<std::string>();
                if (type == "annotation") {
                    const auto a = j.at("annotation").get<Annotation>();
                    s->check_image(a.image_id);
                    s->check_rater(a.rater_id);
                    s->apply_annotation(a);
                } else if (type == "resolution") {
                    const auto id = j.at("image_id").get<std::string>();
                    s->check_image(id);
                    s->resolutions[id] = j.at("straight_reject").get<bool>();
                    s->resolution_seq[id] = ++s->seq;
                } else {
                    fail(errc::malformed_row, "unknown record type '" + type + "'");
                }
            } catch (const nlohmann::json::exception& e) {
                fail(errc::malformed_row, p.string() + ":" + std::to_string(line_no) + ": " + e.what());
            }
        }
        publish(std::move(s));
    }

    std::optional<std::filesystem::path> log_path_;
    mutable std::mutex snapshot_mutex_;
    std::mutex writer_;
    std::shared_ptr<const State> state_;
};

}  // namespace qc
