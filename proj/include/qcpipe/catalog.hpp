#pragma once

// Scanner-metadata catalog: parsing, T1w keyword selection, slice-count filter and the
// gadolinium keyword audit.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "qcpipe/error.hpp"
#include "qcpipe/labels.hpp"

namespace qc {

struct ImageRecord {
    std::string image_id;
    std::string patient_id;
    std::string series_description;
    std::string study_description;
    std::string body_part_examined;
    int n_slices = 1;
    std::string manufacturer;
    std::string model_name;
    std::optional<double> field_strength_tesla;  // 1.5 or 3.0; nullopt when unknown

    friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct RowError {
    std::size_t line = 0;
    std::string message;
};

struct Catalog {
    std::vector<ImageRecord> records;
    std::string source;
    std::size_t row_count = 0;
    std::vector<RowError> errors;

    const ImageRecord* find(std::string_view id) const {
        for (const auto& r : records)
            if (r.image_id == id) return &r;
        return nullptr;
    }
};

enum class CatalogFormat { csv, jsonl };

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

struct KeywordRules {
    std::vector<std::string> t1w_patterns;
    std::vector<std::string> gadolinium_markers;

    KeywordRules(std::vector<std::string> t1w = default_t1w(),
                 std::vector<std::string> gado = {"gado", "inj", "iv"}) {
        if (t1w.empty() || gado.empty()) fail(errc::invalid_argument, "keyword lists must be non-empty");
        for (auto& p : t1w) t1w_patterns.push_back(to_lower(p));
        for (auto& p : gado) gadolinium_markers.push_back(to_lower(p));
    }

    // Attribute values quoted as examples of 3D T1w brain acquisitions. Extend per site.
    static std::vector<std::string> default_t1w() {
        return {"t1 eg 3d mpr", "sag 3d bravo", "3d t1 eg mprage", "irm cranio", "brain t1w/ffegado"};
    }
};

inline bool contains_any(std::string_view haystack, const std::vector<std::string>& lowered_needles) {
    const std::string h = to_lower(haystack);
    return std::any_of(lowered_needles.begin(), lowered_needles.end(),
                       [&](const std::string& n) { return h.find(n) != std::string::npos; });
}

namespace detail {

// RFC 4180 style: comma separated, double-quoted fields with "" escapes, records may span lines.
inline std::vector<std::pair<std::size_t, std::vector<std::string>>> split_csv(std::string_view text) {
    std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false, any = false;
    std::size_t line = 1, row_line = 1;
    auto end_row = [&] {
        row.push_back(std::move(field));
        field.clear();
        if (!(row.size() == 1 && row[0].empty())) rows.emplace_back(row_line, std::move(row));
        row.clear();
        any = false;
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (!any) {
            row_line = line;
            any = true;
        }
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                if (c == '\n') ++line;
                field += c;
            }
            continue;
        }
        switch (c) {
        case '"': quoted = true; break;
        case ',':
            row.push_back(std::move(field));
            field.clear();
            break;
        case '\r': break;
        case '\n':
            end_row();
            ++line;
            break;
        default: field += c;
        }
    }
    if (any) end_row();
    return rows;
}

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return std::string(s.substr(b, e - b + 1));
}

inline int parse_slices(const std::string& s) {
    const std::string t = trim(s);
    int v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || p != t.data() + t.size()) throw std::invalid_argument("n_slices '" + s + "' is not an integer");
    if (v < 1) throw std::invalid_argument("n_slices must be >= 1");
    return v;
}

inline std::optional<double> parse_field_strength(const std::string& s) {
    const std::string t = to_lower(trim(s));
    if (t.empty() || t == "unknown" || t == "na" || t == "null") return std::nullopt;
    double v = 0.0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || p != t.data() + t.size())
        throw std::invalid_argument("field_strength_tesla '" + s + "' is not a number");
    if (std::abs(v - 1.5) < 1e-6) return 1.5;
    if (std::abs(v - 3.0) < 1e-6) return 3.0;
    throw std::invalid_argument("field_strength_tesla must be 1.5, 3.0 or unknown");
}

inline ImageRecord record_from_fields(const std::map<std::string, std::string>& f) {
    auto get = [&](const char* k) -> const std::string& {
        auto it = f.find(k);
        if (it == f.end()) throw std::invalid_argument(std::string("missing field ") + k);
        return it->second;
    };
    ImageRecord r;
    r.image_id = trim(get("image_id"));
    if (r.image_id.empty()) throw std::invalid_argument("empty image_id");
    r.patient_id = trim(get("patient_id"));
    r.series_description = get("series_description");
    r.study_description = get("study_description");
    r.body_part_examined = get("body_part_examined");
    r.n_slices = parse_slices(get("n_slices"));
    r.manufacturer = get("manufacturer");
    r.model_name = get("model_name");
    r.field_strength_tesla = parse_field_strength(get("field_strength_tesla"));
    return r;
}

inline std::string json_field_as_string(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_null()) return {};
    return v.dump();
}

}  // namespace detail

/// Parses a catalog. Rows that fail coercion are reported in `errors`; the call only throws
/// when no row parses at all, on duplicate ids, or when there are no data rows.
inline Catalog parse_catalog(std::string_view text, CatalogFormat format, std::string source = {}) {
    Catalog cat;
    cat.source = std::move(source);
    std::vector<std::pair<std::size_t, std::map<std::string, std::string>>> rows;

    if (format == CatalogFormat::csv) {
        auto table = detail::split_csv(text);
        if (table.empty()) fail(errc::empty_catalog, "no header row");
        const auto header = table.front().second;
        for (std::size_t r = 1; r < table.size(); ++r) {
            const auto& [line, cells] = table[r];
            std::map<std::string, std::string> m;
            if (cells.size() != header.size()) {
                cat.errors.push_back({line, "expected " + std::to_string(header.size()) + " fields, got " +
                                                std::to_string(cells.size())});
                ++cat.row_count;
                continue;
            }
            for (std::size_t c = 0; c < header.size(); ++c) m[detail::trim(header[c])] = cells[c];
            rows.emplace_back(line, std::move(m));
        }
    } else {
        std::istringstream in{std::string(text)};
        std::string l;
        std::size_t line = 0;
        while (std::getline(in, l)) {
            ++line;
            if (detail::trim(l).empty()) continue;
            std::map<std::string, std::string> m;
            try {
                const auto j = nlohmann::json::parse(l);
                if (!j.is_object()) throw std::invalid_argument("not a JSON object");
                for (auto it = j.begin(); it != j.end(); ++it) m[it.key()] = detail::json_field_as_string(it.value());
            } catch (const std::exception& e) {
                cat.errors.push_back({line, e.what()});
                ++cat.row_count;
                continue;
            }
            rows.emplace_back(line, std::move(m));
        }
    }

    std::set<std::string> seen;
    for (const auto& [line, fields] : rows) {
        ++cat.row_count;
        try {
            ImageRecord rec = detail::record_from_fields(fields);
            if (!seen.insert(rec.image_id).second)
                fail(errc::duplicate_image_id, "image_id '" + rec.image_id + "' at line " + std::to_string(line));
            cat.records.push_back(std::move(rec));
        } catch (const std::invalid_argument& e) {
            cat.errors.push_back({line, e.what()});
        }
    }
    if (cat.row_count == 0) fail(errc::empty_catalog, "catalog has no data rows");
    if (cat.records.empty()) fail(errc::malformed_row, "every row failed to parse");
    return cat;
}

namespace detail {
template <class Pred>
Catalog filtered(const Catalog& c, Pred keep) {
    Catalog out;
    out.source = c.source;
    for (const auto& r : c.records)
        if (keep(r)) out.records.push_back(r);
    out.row_count = out.records.size();
    return out;
}
}  // namespace detail

inline Catalog select_t1w(const Catalog& c, const KeywordRules& rules) {
    return detail::filtered(c, [&](const ImageRecord& r) {
        return contains_any(r.series_description, rules.t1w_patterns) ||
               contains_any(r.study_description, rules.t1w_patterns) ||
               contains_any(r.body_part_examined, rules.t1w_patterns);
    });
}

inline Catalog filter_min_slices(const Catalog& c, int min_slices = 40) {
    return detail::filtered(c, [&](const ImageRecord& r) { return r.n_slices >= min_slices; });
}

inline bool gadolinium_keyword_flag(const ImageRecord& r, const KeywordRules& rules) {
    return contains_any(r.series_description, rules.gadolinium_markers) ||
           contains_any(r.study_description, rules.gadolinium_markers);
}

struct GadoliniumAudit {
    // cell[manual][keyword], each index 1 = yes
    std::size_t manual_yes_keyword_yes = 0;
    std::size_t manual_yes_keyword_no = 0;
    std::size_t manual_no_keyword_yes = 0;
    std::size_t manual_no_keyword_no = 0;
    std::vector<std::pair<std::string, bool>> keyword_flags;  // per labeled non-SR image, input order
    std::size_t skipped_sr = 0;

    std::size_t total() const {
        return manual_yes_keyword_yes + manual_yes_keyword_no + manual_no_keyword_yes + manual_no_keyword_no;
    }
};

/// Cross-tabulates the manual gadolinium label against substring markers in the descriptions.
/// SR images carry no gadolinium label and are skipped.
inline GadoliniumAudit audit_gadolinium_keywords(const Catalog& c, const std::vector<ConsensusLabel>& labels,
                                                 const KeywordRules& rules) {
    GadoliniumAudit a;
    for (const auto& l : labels) {
        const ImageRecord* r = c.find(l.image_id);
        if (!r) fail(errc::unknown_image_id, "label for '" + l.image_id + "' has no catalog row");
        if (l.straight_reject || !l.gadolinium) {
            ++a.skipped_sr;
            continue;
        }
        const bool kw = gadolinium_keyword_flag(*r, rules);
        a.keyword_flags.emplace_back(l.image_id, kw);
        if (*l.gadolinium) (kw ? a.manual_yes_keyword_yes : a.manual_yes_keyword_no)++;
        else (kw ? a.manual_no_keyword_yes : a.manual_no_keyword_no)++;
    }
    return a;
}

inline nlohmann::json audit_to_json(const GadoliniumAudit& a, const KeywordRules& rules) {
    nlohmann::json flags = nlohmann::json::array();
    for (const auto& [id, f] : a.keyword_flags) flags.push_back({{"image_id", id}, {"keyword_flag", f}});
    return {{"table",
             {{"manual_yes", {{"keyword_yes", a.manual_yes_keyword_yes}, {"keyword_no", a.manual_yes_keyword_no}}},
              {"manual_no", {{"keyword_yes", a.manual_no_keyword_yes}, {"keyword_no", a.manual_no_keyword_no}}}}},
            {"n_labeled_non_sr", a.total()},
            {"n_skipped_sr", a.skipped_sr},
            {"markers", rules.gadolinium_markers},
            {"note", "markers match as case-insensitive substrings of series/study descriptions; "
                     "short markers such as 'iv' can also match unrelated words"},
            {"per_image", flags}};
}

inline void to_json(nlohmann::json& j, const ImageRecord& r) {
    j = {{"image_id", r.image_id},
         {"patient_id", r.patient_id},
         {"series_description", r.series_description},
         {"study_description", r.study_description},
         {"body_part_examined", r.body_part_examined},
         {"n_slices", r.n_slices},
         {"manufacturer", r.manufacturer},
         {"model_name", r.model_name},
         {"field_strength_tesla", r.field_strength_tesla ? nlohmann::json(*r.field_strength_tesla)
                                                         : nlohmann::json("unknown")}};
}

}  // namespace qc
