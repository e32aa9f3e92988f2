#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "qcpipe/error.hpp"

namespace qc {

/// Three-level ordinal grades for motion, contrast and noise (0 = none, 2 = severe).
struct Grades {
    int motion = 0;
    int contrast = 0;
    int noise = 0;

    bool valid() const {
        auto ok = [](int g) { return g >= 0 && g <= 2; };
        return ok(motion) && ok(contrast) && ok(noise);
    }
    int worst() const { return std::max({motion, contrast, noise}); }

    friend bool operator==(const Grades&, const Grades&) = default;
};

/// Overall quality class. Ordered so that a larger value is worse.
enum class Tier { tier1 = 1, tier2 = 2, tier3 = 3 };

inline Tier tier_from_grades(const Grades& g) {
    switch (g.worst()) {
    case 0: return Tier::tier1;
    case 1: return Tier::tier2;
    default: return Tier::tier3;
    }
}

inline std::string_view tier_name(Tier t) {
    switch (t) {
    case Tier::tier1: return "tier1";
    case Tier::tier2: return "tier2";
    case Tier::tier3: return "tier3";
    }
    return "";
}

inline Tier parse_tier(std::string_view s) {
    if (s == "tier1") return Tier::tier1;
    if (s == "tier2") return Tier::tier2;
    if (s == "tier3") return Tier::tier3;
    fail(errc::invalid_argument, "unknown tier '" + std::string(s) + "'");
}

/// One rater's judgment of one image.
struct Annotation {
    std::string image_id;
    std::string rater_id;
    bool straight_reject = false;
    std::optional<bool> gadolinium;
    std::optional<Grades> grades;
    std::string timestamp;

    // A straight reject carries no further characteristics; everything else carries all of them.
    bool valid() const {
        if (image_id.empty() || rater_id.empty()) return false;
        if (straight_reject) return !gadolinium && !grades;
        return gadolinium.has_value() && grades.has_value() && grades->valid();
    }

    friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct ConsensusLabel {
    std::string image_id;
    bool straight_reject = false;
    bool sr_adjudicated = false;
    std::optional<bool> gadolinium;
    std::optional<Grades> grades;
    std::optional<Tier> tier;

    bool valid() const {
        if (straight_reject) return !gadolinium && !grades && !tier;
        return gadolinium && grades && grades->valid() && tier && *tier == tier_from_grades(*grades);
    }

    friend bool operator==(const ConsensusLabel&, const ConsensusLabel&) = default;
};

/// Merge two raters' annotations: SR disagreements need a manual resolution; otherwise
/// every grade takes the worse of the two values and the gadolinium flag is OR-ed.
inline ConsensusLabel consensus_merge(const Annotation& a, const Annotation& b,
                                      std::optional<bool> sr_resolution = std::nullopt) {
    if (a.image_id != b.image_id)
        fail(errc::id_mismatch, "annotations refer to '" + a.image_id + "' and '" + b.image_id + "'");
    if (a.rater_id == b.rater_id) fail(errc::id_mismatch, "both annotations are from rater '" + a.rater_id + "'");
    if (!a.valid() || !b.valid()) fail(errc::validation_failed, "invalid annotation for '" + a.image_id + "'");

    ConsensusLabel c;
    c.image_id = a.image_id;
    if (a.straight_reject != b.straight_reject) {
        if (!sr_resolution)
            fail(errc::missing_adjudication, "raters disagree on straight reject for '" + a.image_id + "'");
        c.straight_reject = *sr_resolution;
        c.sr_adjudicated = true;
    } else {
        c.straight_reject = a.straight_reject;
    }
    if (c.straight_reject) return c;

    // Adjudicated to non-SR: only one side carries characteristics.
    const Annotation* first = a.straight_reject ? &b : &a;
    const Annotation* second = b.straight_reject ? &a : &b;
    c.gadolinium = *first->gadolinium || *second->gadolinium;
    const Grades& ga = *first->grades;
    const Grades& gb = *second->grades;
    c.grades = Grades{std::max(ga.motion, gb.motion), std::max(ga.contrast, gb.contrast),
                      std::max(ga.noise, gb.noise)};
    c.tier = tier_from_grades(*c.grades);
    return c;
}

enum class Task { sr, gadolinium, t3_vs_t21, t2_vs_t1 };

inline std::string_view task_name(Task t) {
    switch (t) {
    case Task::sr: return "sr";
    case Task::gadolinium: return "gadolinium";
    case Task::t3_vs_t21: return "t3_vs_t21";
    case Task::t2_vs_t1: return "t2_vs_t1";
    }
    return "";
}

inline Task parse_task(std::string_view s) {
    if (s == "sr") return Task::sr;
    if (s == "gadolinium" || s == "gado") return Task::gadolinium;
    if (s == "t3_vs_t21") return Task::t3_vs_t21;
    if (s == "t2_vs_t1") return Task::t2_vs_t1;
    fail(errc::invalid_argument, "unknown task '" + std::string(s) + "'");
}

/// Binary target for a task (1 = positive class), or nullopt when the image is excluded from it.
inline std::optional<int> task_label(const ConsensusLabel& c, Task task) {
    switch (task) {
    case Task::sr: return c.straight_reject ? 1 : 0;
    case Task::gadolinium:
        if (c.straight_reject || !c.gadolinium) return std::nullopt;
        return *c.gadolinium ? 1 : 0;
    case Task::t3_vs_t21:
        if (c.straight_reject || !c.tier) return std::nullopt;
        return *c.tier == Tier::tier3 ? 1 : 0;
    case Task::t2_vs_t1:
        if (c.straight_reject || !c.tier || *c.tier == Tier::tier3) return std::nullopt;
        return *c.tier == Tier::tier2 ? 1 : 0;
    }
    return std::nullopt;
}

// JSON-lines serialization. Absent optionals are written as null.

inline void to_json(nlohmann::json& j, const Grades& g) {
    j = {{"motion", g.motion}, {"contrast", g.contrast}, {"noise", g.noise}};
}
inline void from_json(const nlohmann::json& j, Grades& g) {
    g.motion = j.at("motion").get<int>();
    g.contrast = j.at("contrast").get<int>();
    g.noise = j.at("noise").get<int>();
}

namespace detail {
template <class T>
nlohmann::json opt_json(const std::optional<T>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}
template <class T>
std::optional<T> opt_from(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<T>();
}
}  // namespace detail

inline void to_json(nlohmann::json& j, const Annotation& a) {
    j = {{"image_id", a.image_id},
         {"rater_id", a.rater_id},
         {"straight_reject", a.straight_reject},
         {"gadolinium", detail::opt_json(a.gadolinium)},
         {"grades", detail::opt_json(a.grades)},
         {"timestamp", a.timestamp}};
}
inline void from_json(const nlohmann::json& j, Annotation& a) {
    a.image_id = j.at("image_id").get<std::string>();
    a.rater_id = j.value("rater_id", std::string{});
    a.straight_reject = j.at("straight_reject").get<bool>();
    a.gadolinium = detail::opt_from<bool>(j, "gadolinium");
    a.grades = detail::opt_from<Grades>(j, "grades");
    a.timestamp = j.value("timestamp", std::string{});
}

inline void to_json(nlohmann::json& j, const ConsensusLabel& c) {
    j = {{"image_id", c.image_id},
         {"straight_reject", c.straight_reject},
         {"sr_adjudicated", c.sr_adjudicated},
         {"gadolinium", detail::opt_json(c.gadolinium)},
         {"grades", detail::opt_json(c.grades)},
         {"tier", c.tier ? nlohmann::json(std::string(tier_name(*c.tier))) : nlohmann::json(nullptr)}};
}
inline void from_json(const nlohmann::json& j, ConsensusLabel& c) {
    c.image_id = j.at("image_id").get<std::string>();
    c.straight_reject = j.at("straight_reject").get<bool>();
    c.sr_adjudicated = j.value("sr_adjudicated", false);
    c.gadolinium = detail::opt_from<bool>(j, "gadolinium");
    c.grades = detail::opt_from<Grades>(j, "grades");
    if (auto t = detail::opt_from<std::string>(j, "tier")) c.tier = parse_tier(*t);
    else c.tier.reset();
}

}  // namespace qc
