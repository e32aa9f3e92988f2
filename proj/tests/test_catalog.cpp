#include <gtest/gtest.h>

#include "qcpipe/catalog.hpp"

using namespace qc;

namespace {

const std::string header =
    "image_id,patient_id,series_description,study_description,body_part_examined,n_slices,manufacturer,model_name,"
    "field_strength_tesla\n";

std::string row(const std::string& id, const std::string& series, int slices = 176, const std::string& study = "IRM",
                const std::string& field = "1.5") {
    return id + ",p-" + id + "," + series + "," + study + ",HEAD," + std::to_string(slices) + ",SIEMENS,Aera," + field + "\n";
}

errc code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error raised";
    return errc::invalid_argument;
}

}  // namespace

TEST(ParseCatalog, TwoRows) {
    const auto c = parse_catalog(header + row("a", "T1") + row("b", "T2"), CatalogFormat::csv);
    ASSERT_EQ(c.records.size(), 2u);
    EXPECT_EQ(c.records[1].image_id, "b");
    EXPECT_EQ(c.records[0].field_strength_tesla, 1.5);
    EXPECT_TRUE(c.errors.empty());
}

TEST(ParseCatalog, QuotedFieldsAndUnknownFieldStrength) {
    const auto c = parse_catalog(header + "a,p1,\"T1, with comma\",\"say \"\"hi\"\"\",HEAD,40,GE,Signa,unknown\n",
                                 CatalogFormat::csv);
    EXPECT_EQ(c.records[0].series_description, "T1, with comma");
    EXPECT_EQ(c.records[0].study_description, "say \"hi\"");
    EXPECT_FALSE(c.records[0].field_strength_tesla);
}

TEST(ParseCatalog, Errors) {
    EXPECT_EQ(code_of([] { parse_catalog(header + row("a", "T1") + row("a", "T2"), CatalogFormat::csv); }),
              errc::duplicate_image_id);
    EXPECT_EQ(code_of([] { parse_catalog(header, CatalogFormat::csv); }), errc::empty_catalog);
    EXPECT_EQ(code_of([] { parse_catalog("", CatalogFormat::csv); }), errc::empty_catalog);
    EXPECT_EQ(code_of([] { parse_catalog(header + "x,p,s,s,b,abc,m,m,1.5\n", CatalogFormat::csv); }),
              errc::malformed_row);
}

TEST(ParseCatalog, MalformedRowIsReported) {
    const auto c = parse_catalog(header + row("a", "T1") + "b,p,s,s,b,abc,m,m,1.5\n" + row("c", "T1", 40, "IRM", "7"),
                                 CatalogFormat::csv);
    ASSERT_EQ(c.records.size(), 1u);
    ASSERT_EQ(c.errors.size(), 2u);
    EXPECT_EQ(c.errors[0].line, 3u);
    EXPECT_NE(c.errors[0].message.find("abc"), std::string::npos);
    EXPECT_EQ(c.row_count, 3u);
}

TEST(ParseCatalog, JsonLines) {
    const std::string text =
        R"({"image_id":"a","patient_id":"p","series_description":"T1","study_description":"","body_part_examined":"HEAD","n_slices":120,"manufacturer":"GE","model_name":"x","field_strength_tesla":3.0})"
        "\n\n"
        R"({"image_id":"b"})"
        "\nnot json\n";
    const auto c = parse_catalog(text, CatalogFormat::jsonl);
    ASSERT_EQ(c.records.size(), 1u);
    EXPECT_EQ(c.records[0].n_slices, 120);
    EXPECT_EQ(c.records[0].field_strength_tesla, 3.0);
    EXPECT_EQ(c.errors.size(), 2u);
}

TEST(SelectT1w, Patterns) {
    const KeywordRules rules;
    const auto c = parse_catalog(header + row("a", "3D T1 EG MPRAGE") + row("b", "T2 FLAIR") +
                                     row("c", "axial", 176, "IRM cranio") + row("d", "sag 3d BRAVO"),
                                 CatalogFormat::csv);
    const auto s = select_t1w(c, rules);
    std::vector<std::string> ids;
    for (const auto& r : s.records) ids.push_back(r.image_id);
    EXPECT_EQ(ids, (std::vector<std::string>{"a", "c", "d"}));
    const KeywordRules narrow({"mprage"});
    EXPECT_EQ(select_t1w(c, narrow).records.size(), 1u);
}

TEST(SelectT1w, CaseInsensitive) {
    const KeywordRules rules;
    const auto upper = parse_catalog(header + row("a", "T1 EG 3D MPR"), CatalogFormat::csv);
    const auto lower = parse_catalog(header + row("a", "t1 eg 3d mpr"), CatalogFormat::csv);
    EXPECT_EQ(select_t1w(upper, rules).records.size(), 1u);
    EXPECT_EQ(select_t1w(lower, rules).records.size(), 1u);
}

TEST(FilterMinSlices, Boundary) {
    const auto c = parse_catalog(header + row("a", "T1", 39) + row("b", "T1", 40) + row("c", "T1", 1), CatalogFormat::csv);
    const auto f = filter_min_slices(c);
    ASSERT_EQ(f.records.size(), 1u);
    EXPECT_EQ(f.records[0].image_id, "b");
    EXPECT_EQ(filter_min_slices(c, 1).records, c.records);
}

TEST(Filters, CommuteAndAreIdempotent) {
    const KeywordRules rules;
    std::string text = header;
    for (int i = 0; i < 30; ++i)
        text += row("i" + std::to_string(i), i % 3 ? "T1 EG 3D MPR" : "T2", 20 + 3 * i);
    const auto c = parse_catalog(text, CatalogFormat::csv);
    const auto ab = filter_min_slices(select_t1w(c, rules));
    const auto ba = select_t1w(filter_min_slices(c), rules);
    EXPECT_EQ(ab.records, ba.records);
    EXPECT_EQ(select_t1w(ab, rules).records, ab.records);
    EXPECT_EQ(filter_min_slices(ab).records, ab.records);
}

TEST(GadoliniumAudit, EmbeddedMarker) {
    const KeywordRules rules;
    const auto c = parse_catalog(header + row("a", "Brain T1W/FFEGADO") + row("b", "T1 3D SAG"), CatalogFormat::csv);
    EXPECT_TRUE(gadolinium_keyword_flag(c.records[0], rules));
    EXPECT_FALSE(gadolinium_keyword_flag(c.records[1], rules));
}

TEST(GadoliniumAudit, TenRowTable) {
    const KeywordRules rules;
    // id, series, manual gadolinium (-1 = SR)
    const std::vector<std::tuple<std::string, std::string, int>> fixture{
        {"r1", "T1 GADO", 1},       {"r2", "T1 3D", 1},        {"r3", "T1 INJ", 0},   {"r4", "T1 3D", 0},
        {"r5", "T1 post IV", 1},    {"r6", "Brain T1W/FFEGADO", 1}, {"r7", "MPRAGE", 0}, {"r8", "MPRAGE", -1},
        {"r9", "T1 GADO", -1},      {"r10", "sag 3d bravo", 0}};
    std::string text = header;
    std::vector<ConsensusLabel> labels;
    for (const auto& [id, series, g] : fixture) {
        text += row(id, series);
        if (g < 0) labels.push_back({id, true, false, {}, {}, {}});
        else labels.push_back({id, false, false, g == 1, Grades{}, Tier::tier1});
    }
    const auto a = audit_gadolinium_keywords(parse_catalog(text, CatalogFormat::csv), labels, rules);
    // Hand count: yes/yes r1 r5 r6; yes/no r2; no/yes r3; no/no r4 r7 r10; SR r8 r9.
    EXPECT_EQ(a.manual_yes_keyword_yes, 3u);
    EXPECT_EQ(a.manual_yes_keyword_no, 1u);
    EXPECT_EQ(a.manual_no_keyword_yes, 1u);
    EXPECT_EQ(a.manual_no_keyword_no, 3u);
    EXPECT_EQ(a.skipped_sr, 2u);
    EXPECT_EQ(a.total(), 8u);
    const auto j = audit_to_json(a, rules);
    EXPECT_EQ(j["table"]["manual_yes"]["keyword_yes"], 3);
    EXPECT_EQ(j["per_image"].size(), 8u);
}

TEST(GadoliniumAudit, UnknownImage) {
    const auto c = parse_catalog(header + row("a", "T1"), CatalogFormat::csv);
    std::vector<ConsensusLabel> labels{{"zz", false, false, true, Grades{}, Tier::tier1}};
    EXPECT_EQ(code_of([&] { audit_gadolinium_keywords(c, labels, KeywordRules{}); }), errc::unknown_image_id);
}
