#include <algorithm>
#include <random>

#include <nlohmann/json.hpp>

#include "doctest.h"

#include "cohort/demo.hpp"
#include "cohort/errors.hpp"
#include "cohort/query.hpp"
#include "fixtures.hpp"
#include "named_queries.hpp"
#include "oracle.hpp"
#include "random_restrictions.hpp"

using namespace cohort;
using namespace cohort::query;
using nlohmann::json;

namespace {

std::vector<PatientRecord> demo(std::size_t n, std::uint64_t seed) {
    ingest::DemoOptions o;
    o.patients = n;
    o.seed = seed;
    return ingest::generate_demo_cohort(o);
}

const std::vector<PatientRecord>& demo185() {
    static const auto cohort = demo(185, 42);
    return cohort;
}

const NestedIndex& demo185_index() {
    static const auto idx = build_index(demo185());
    return idx;
}

Restriction R(RestrictionBody b, std::string id = "") { return {std::move(id), std::move(b)}; }

std::map<std::string, std::uint32_t> report_counts(const FacetReport& r) {
    std::map<std::string, std::uint32_t> out;
    for (const auto& v : r.values) out[v.term] = v.count;
    return out;
}

}  // namespace

TEST_CASE("empty restriction set matches everyone") {
    const auto r = evaluate(demo185_index(), {});
    CHECK(r.patient_ids.size() == 185);
    CHECK(std::is_sorted(r.patient_ids.begin(), r.patient_ids.end()));
}

TEST_CASE("random restriction sets agree with the linear scan") {
    for (std::uint64_t seed : {11, 12}) {
        const auto cohort = demo(120, seed);
        const NestedIndex idx = build_index(cohort);
        randq::Generator gen(cohort, seed * 31);
        for (int round = 0; round < 40; ++round) {
            const auto rs = gen.restriction_set();
            const auto got = evaluate(idx, rs).patient_ids;
            CHECK_MESSAGE(got == oracle::evaluate(cohort, rs), restrictions_to_json(rs).dump());
            for (const char* field : {"dia_term", "sex", "lab_term_canon", "ep_kind", "med_atc"}) {
                const auto rep = facet_report(idx, rs, field);
                CHECK(report_counts(rep) == oracle::facet_counts(cohort, rs, field));
                CHECK(rep.total_remaining_patients == got.size());
            }
            const std::vector<double> edges{-10, 0, 1.5, 5, 20, 100, 1e6};
            const auto hist = numeric_interval_report(idx, rs, "lab_numval", edges);
            const auto expected = oracle::histogram(cohort, rs, "lab_numval", edges);
            for (std::size_t b = 0; b < hist.size(); ++b) CHECK(hist[b].count == expected[b]);
        }
    }
}

TEST_CASE("same-child rule: conjunction across two labs does not match") {
    auto p = fixture::patient("X");
    fixture::lab(p, "creatinin", 10, 2.0);
    fixture::lab(p, "urea", 10, 9.0);
    const NestedIndex idx = build_index({fixture::finish(p)});
    const ChildGroup g{ChildKind::lab,
                       {KeywordPredicate{"lab_term", {"creatinin"}}, RangePredicate{"lab_numval", 5.0, {}, false, true}}};
    CHECK(evaluate(idx, {R(g)}).patient_ids.empty());
    // The same two predicates as independent restrictions do match.
    CHECK(evaluate(idx, {R(KeywordPredicate{"lab_term", {"creatinin"}}),
                         R(RangePredicate{"lab_numval", 5.0, {}, false, true})})
              .patient_ids.size() == 1);
}

TEST_CASE("temporal windows are inclusive at both ends") {
    auto make = [](Day lab_day) {
        auto p = fixture::patient("T" + std::to_string(lab_day));
        fixture::endpoint(p, EndpointKind::failure, 1000);
        fixture::lab(p, "CRPHP (mg/l)", lab_day, 7.0);
        return fixture::finish(p);
    };
    std::vector<PatientRecord> cohort;
    for (Day d : {969, 970, 1000, 1001}) cohort.push_back(make(d));
    const NestedIndex idx = build_index(cohort);
    const TemporalChild t{{ChildKind::lab,
                           {KeywordPredicate{"lab_term_canon", {"crphp_mgl"}},
                            RangePredicate{"lab_numval", 6.0, {}, false, true}}},
                          {EndpointKind::failure, OrdinalRule::any, 1},
                          {-30, 0}};
    CHECK(evaluate(idx, {R(t)}).patient_ids == std::vector<std::string>{"T1000", "T970"});

    auto rel = [](Day rejection) {
        auto p = fixture::patient("E" + std::to_string(rejection));
        fixture::endpoint(p, EndpointKind::transplantation, 500);
        fixture::endpoint(p, EndpointKind::transplantation, 900);
        fixture::endpoint(p, EndpointKind::rejection, rejection);
        return fixture::finish(p);
    };
    std::vector<PatientRecord> rc;
    for (Day d : {499, 500, 503, 504, 902}) rc.push_back(rel(d));
    const NestedIndex ridx = build_index(rc);
    const EndpointRelation er{{EndpointKind::rejection, OrdinalRule::first, 1},
                              {EndpointKind::transplantation, OrdinalRule::first, 1},
                              {0, 3}};
    CHECK(evaluate(ridx, {R(er)}).patient_ids == std::vector<std::string>{"E500", "E503"});
    auto second = er;
    second.b.rule = OrdinalRule::nth;
    second.b.n = 2;
    CHECK(evaluate(ridx, {R(second)}).patient_ids == std::vector<std::string>{"E902"});
    second.b.n = 3;  // no such endpoint: no match, not an error
    CHECK(evaluate(ridx, {R(second)}).patient_ids.empty());
}

TEST_CASE("named temporal queries on the demo cohort equal the oracle") {
    const auto crp = restriction_from_json(json::parse(named::kCrpBeforeFailure));
    const auto rej = restriction_from_json(json::parse(named::kRejectionAfterFirstTransplant));
    for (const auto& r : {crp, rej}) {
        const auto got = evaluate(demo185_index(), {r}).patient_ids;
        CHECK(got == oracle::evaluate(demo185(), {r}));
        CHECK_FALSE(got.empty());
    }
}

TEST_CASE("restriction order does not matter and removal restores state") {
    const auto& idx = demo185_index();
    randq::Generator gen(demo185(), 99);
    for (int round = 0; round < 20; ++round) {
        auto rs = gen.restriction_set();
        const auto base = evaluate(idx, rs);
        auto perm = rs;
        std::reverse(perm.begin(), perm.end());
        CHECK(evaluate(idx, perm) == base);

        QueryState state;
        for (auto r : rs) state.add(r);
        const auto before_facets = facet_report(idx, state.restrictions(), "dia_term");
        const auto extra_id = state.add(gen.restriction());
        const auto narrowed = evaluate(idx, state.restrictions());
        CHECK(narrowed.patient_ids.size() <= base.patient_ids.size());
        CHECK(state.remove(extra_id));
        CHECK(evaluate(idx, state.restrictions()) == base);
        CHECK(facet_report(idx, state.restrictions(), "dia_term") == before_facets);
    }
}

TEST_CASE("QueryState ids") {
    QueryState s;
    CHECK(s.add(R(KeywordPredicate{"sex", {"F"}})) == "r1");
    CHECK(s.add(R(KeywordPredicate{"sex", {"M"}}, "mine")) == "mine");
    CHECK_THROWS_AS(s.add(R(KeywordPredicate{"sex", {"M"}}, "mine")), DuplicateError);
    CHECK(s.remove("r1"));
    CHECK_FALSE(s.remove("r1"));
    CHECK(s.restrictions().size() == 1);
}

TEST_CASE("unknown fields are schema errors") {
    CHECK_THROWS_AS(evaluate(demo185_index(), {R(KeywordPredicate{"nope", {"x"}})}), SchemaError);
    CHECK_THROWS_AS(evaluate(demo185_index(), {R(ChildGroup{ChildKind::lab, {KeywordPredicate{"dia_term", {"x"}}}})}),
                    SchemaError);
    CHECK_THROWS_AS(facet_report(demo185_index(), {}, "nope"), SchemaError);
}

TEST_CASE("facet report flags, ordering and menus") {
    std::vector<PatientRecord> cohort;
    auto add = [&](std::string id, std::vector<std::string> terms) {
        auto p = fixture::patient(std::move(id));
        Day d = 1;
        for (auto& t : terms) fixture::diagnosis(p, t, d++);
        cohort.push_back(fixture::finish(p));
    };
    add("P1", {"Chronische Glomerulonephritis", "Arterielle Hypertonie", "Renale Anämie"});
    add("P2", {"Chronische Glomerulonephritis", "Arterielle Hypertonie", "renale Anämie"});
    add("P3", {"Zystennieren", "Arterielle Hypertonie", "Anämie, renal"});
    add("P4", {"Zystennieren", "Diabetes mellitus Typ 2"});
    const NestedIndex idx = build_index(cohort);

    const auto all = facet_report(idx, {}, "dia_term");
    CHECK(all.total_remaining_patients == 4);
    for (const auto& v : all.values) CHECK_FALSE(v.common_to_all);
    // top: 3, then ties at 2 alphabetical, then 1s alphabetical
    REQUIRE(all.top.size() == 4);
    CHECK(all.top[0].term == "Arterielle Hypertonie");
    CHECK(all.top[1].term == "Chronische Glomerulonephritis");
    CHECK(all.top[2].term == "Zystennieren");
    CHECK(all.top[3].term == "Anämie, renal");
    CHECK(all.menu.empty());  // default mincount 5

    const auto gn = facet_report(idx, {R(KeywordPredicate{"dia_term", {"Chronische Glomerulonephritis"}})}, "dia_term");
    CHECK(gn.total_remaining_patients == 2);
    for (const auto& v : gn.values) {
        const bool expect = v.term == "Arterielle Hypertonie" || v.term == "Chronische Glomerulonephritis";
        CHECK(v.common_to_all == expect);
    }

    FacetOptions opts;
    opts.substring = "anäm";
    opts.mincount = 1;
    const auto sub = facet_report(idx, {}, "dia_term", opts);
    std::vector<std::string> names;
    for (const auto& v : sub.menu) names.push_back(v.term);
    CHECK(names == std::vector<std::string>{"Anämie, renal", "Renale Anämie", "renale Anämie"});

    opts.substring.reset();
    opts.mincount = 2;
    const auto mc = facet_report(idx, {}, "dia_term", opts);
    CHECK(mc.menu.size() == 3);
    CHECK(mc.values.size() == 7);

    auto shared = fixture::patient("S");
    fixture::diagnosis(shared, "Hypertonie", 1);
    const auto one = build_index({shared});
    CHECK(facet_report(one, {}, "dia_term").values.at(0).common_to_all);
}

TEST_CASE("interval reports") {
    const auto& idx = demo185_index();
    const auto all = numeric_interval_report(idx, {}, "height_cm", {0, 1000});
    std::uint32_t with_height = 0;
    for (const auto& p : demo185()) with_height += p.height_cm ? 1 : 0;
    CHECK(all.at(0).count == with_height);

    const auto split = numeric_interval_report(idx, {}, "height_cm", {0, 10, 1000});
    CHECK(split.at(0).count == 0);
    CHECK(split.at(1).count == with_height);

    CHECK_THROWS_AS(numeric_interval_report(idx, {}, "height_cm", {5}), InputError);
    CHECK_THROWS_AS(numeric_interval_report(idx, {}, "height_cm", {5, 5}), InputError);
    CHECK_THROWS_AS(numeric_interval_report(idx, {}, "height_cm", {5, 1}), InputError);
    CHECK_THROWS_AS(numeric_interval_report(idx, {}, "dia_term", {0, 1}), SchemaError);

    std::mt19937 rng(4);
    for (int round = 0; round < 30; ++round) {
        std::vector<double> edges;
        std::uniform_real_distribution<double> u(-5, 60);
        for (int i = 0; i < 5; ++i) edges.push_back(std::round(u(rng) * 4) / 4);
        std::sort(edges.begin(), edges.end());
        edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
        if (edges.size() < 2) continue;
        const auto got = numeric_interval_report(idx, {}, "lab_numval", edges);
        const auto want = oracle::histogram(demo185(), {}, "lab_numval", edges);
        for (std::size_t b = 0; b < got.size(); ++b) CHECK(got[b].count == want[b]);
    }
}

TEST_CASE("free text search matches documents and highlights tokens") {
    const auto& idx = demo185_index();
    const auto r = free_text_search(idx, {}, "röntgenbilder");
    CHECK_FALSE(r.result.patient_ids.empty());
    CHECK(r.result.patient_ids == oracle::evaluate(demo185(), {R(FreeText{"röntgenbilder"})}));
    for (const auto& m : r.documents) {
        REQUIRE_FALSE(m.highlights.empty());
        const auto ord = idx.find_patient(m.patient_id);
        REQUIRE(ord);
        for (auto d = idx.first_instance(ChildKind::document, *ord); d < idx.end_instance(ChildKind::document, *ord);
             ++d) {
            if (idx.doc_id(d) != m.doc_id) continue;
            const std::u32string body = text::decode_utf8(idx.doc_body(d));
            for (const auto& h : m.highlights) {
                CHECK(text::fold(text::encode_utf8(body.substr(h.begin, h.end - h.begin))) == "roentgenbilder");
            }
        }
    }

    const auto none = free_text_search(idx, {}, "zzzzunknown");
    CHECK(none.result.patient_ids.empty());
    CHECK(none.documents.empty());

    // Per-document oracle for a negated wildcard expression.
    const auto expr = parse_text_expr("anäm* AND NOT hypertonie");
    const auto res = free_text_search(idx, {}, "anäm* AND NOT hypertonie");
    std::set<std::string> matched_docs;
    for (const auto& m : res.documents) matched_docs.insert(m.doc_id);
    std::set<std::string> oracle_docs;
    for (const auto& p : demo185())
        for (const auto& d : p.documents)
            if (oracle::text_matches(expr, oracle::doc_tokens(d.body))) oracle_docs.insert(d.doc_id);
    CHECK(matched_docs == oracle_docs);
    CHECK_FALSE(oracle_docs.empty());
}

TEST_CASE("free text highlights skip negated leaves") {
    auto p = fixture::patient("H");
    fixture::document(p, "d1", "Renale Anämie. Röntgenbilder liegen vor.");
    const auto idx = build_index({fixture::finish(p)});
    const auto r = free_text_search(idx, {}, "anäm* AND NOT hypertonie");
    REQUIRE(r.documents.size() == 1);
    CHECK(r.documents[0].highlights == std::vector<Highlight>{{7, 13}});
    const auto phrase = free_text_search(idx, {}, "liegen AND röntgen*");
    CHECK(phrase.documents[0].highlights == std::vector<Highlight>{{15, 28}, {29, 35}});
}

TEST_CASE("free text syntax errors carry positions") {
    auto position_of = [](std::string_view e) -> std::size_t {
        try {
            parse_text_expr(e);
        } catch (const SyntaxError& err) {
            return err.position();
        }
        return 999;
    };
    CHECK(position_of("") == 0);
    CHECK(position_of("(a OR b") == 7);
    CHECK(position_of("a AND") == 5);
    CHECK(position_of("ä OR )") == 5);
    CHECK(position_of("a b)") == 3);
    CHECK(position_of("NOT") == 3);
    CHECK(position_of("--") == 0);
}

TEST_CASE("parser structure and wildcard matching") {
    const auto e = parse_text_expr("a b OR NOT c");
    CHECK(e.op == TextExpr::Op::or_);
    REQUIRE(e.children.size() == 2);
    CHECK(e.children[0].op == TextExpr::Op::and_);
    CHECK(e.children[1].op == TextExpr::Op::not_);
    CHECK(parse_text_expr("6mg/l").op == TextExpr::Op::phrase);
    CHECK(parse_text_expr("Anäm*").patterns == std::vector<std::string>{"anaem*"});

    CHECK(wildcard_match("anaem*", "anaemie"));
    CHECK(wildcard_match("*itis", "nephritis"));
    CHECK(wildcard_match("b?rads", "birads"));
    CHECK_FALSE(wildcard_match("b?rads", "brads"));
    CHECK(wildcard_match("*", ""));
    CHECK_FALSE(wildcard_match("a*b", "ac"));
    std::mt19937 rng(2);
    const std::string alphabet = "ab*?";
    for (int i = 0; i < 3000; ++i) {
        std::string pat;
        std::string tok;
        for (int k = 0, n = static_cast<int>(rng() % 6); k < n; ++k) pat += alphabet[rng() % 4];
        for (int k = 0, n = static_cast<int>(rng() % 6); k < n; ++k) tok += alphabet[rng() % 2];
        CHECK_MESSAGE(wildcard_match(pat, tok) == oracle::glob(pat, tok), pat << " / " << tok);
    }
}

TEST_CASE("extraction compared to the record") {
    auto p = fixture::patient("C");
    fixture::diagnosis(p, "Arterielle Hypertonie", 3, std::string("I10"));
    Annotation known;
    known.canonical_term = "arterielle hypertonie";
    known.surface = "Arterielle Hypertonie";
    Annotation unseen;
    unseen.canonical_term = "Gicht";
    unseen.code = "M10";
    Annotation negated = known;
    negated.negated = true;
    Annotation by_code;
    by_code.canonical_term = "Bluthochdruck";
    by_code.code = "I10";
    const auto out = compare_extraction_to_record(p, {known, unseen, negated, by_code});
    CHECK(out[0].status == AnnotationStatus::known);
    CHECK(out[1].status == AnnotationStatus::new_fact);
    CHECK(out[2].status == AnnotationStatus::contradiction);
    CHECK(out[3].status == AnnotationStatus::known);
    CHECK(to_string(AnnotationStatus::new_fact) == "new");
}

TEST_CASE("restriction JSON round-trips and reports field paths") {
    randq::Generator gen(demo185(), 5);
    for (int i = 0; i < 200; ++i) {
        auto r = gen.restriction();
        r.id = "id" + std::to_string(i);
        const json j = restriction_to_json(r);
        CHECK(restriction_from_json(j) == r);
        CHECK(restriction_from_json(json::parse(j.dump())) == r);
    }
    auto message_of = [](const char* text) -> std::string {
        try {
            restriction_from_json(json::parse(text));
        } catch (const InputError& e) {
            return e.what();
        }
        return "";
    };
    CHECK(message_of(R"({"type":"child_group","kind":"lab","predicates":[{"type":"keyword"}]})")
              .find("restriction.predicates[0].field") != std::string::npos);
    CHECK(message_of(R"({"type":"bogus"})").find("restriction.type") != std::string::npos);
    CHECK(message_of(R"({"type":"endpoint_relation","a":{"kind":"rejection","ordinal":0},"b":{"kind":"death"},"window":{}})")
              .find("restriction.a.ordinal") != std::string::npos);
    CHECK(message_of(R"({"type":"range","field":"age"})") != "");
    CHECK(message_of(R"({"type":"temporal_child","group":{"kind":"lab","predicates":[]},"anchor":{"kind":"failure"},"window":{"lower":3,"upper":1}})")
              .find("restriction.window") != std::string::npos);
}
