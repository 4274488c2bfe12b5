#include <filesystem>
#include <random>

#include "doctest.h"

#include "cohort/errors.hpp"
#include "cohort/extract.hpp"
#include "cohort/text.hpp"
#include "golden_runner.hpp"

using namespace cohort;
using namespace cohort::extract;

namespace {

const std::string kDictDir = std::string(COHORT_TEST_DATA) + "/dict";

PipelineConfig fixture_config() { return load_config(kDictDir); }

std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("cohort_extract_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::vector<Token> toks(std::string_view s) { return tokenize(text::decode_utf8(s)); }

}  // namespace

TEST_CASE("golden sentences annotate to the expected JSON") {
    const auto cases = golden::load(std::string(COHORT_GOLDEN_DIR) + "/extract_golden.json");
    REQUIRE(cases.size() >= 30);
    const Pipeline pipeline(fixture_config());
    for (const auto& m : golden::run(pipeline, cases)) {
        FAIL_CHECK(m.id << "\n  expected " << m.expected << "\n  actual   " << m.actual);
    }
}

TEST_CASE("reference examples for annotate") {
    PipelineConfig c = default_config();
    c.dictionaries.push_back({AnnotationType::diagnosis, Tier::system, {{"Hypertonie", {}, {}}}});
    const auto a = annotate("Kein Anhalt für Hypertonie.", c);
    REQUIRE(a.size() == 1);
    CHECK(a[0].negated);
    CHECK(a[0].negation_trigger == "Kein");
    CHECK(annotate("", c).empty());

    const auto b = annotate("BIRADS 4b links", default_config());
    REQUIRE(b.size() == 1);
    CHECK(b[0].annotation_type == AnnotationType::birads);
    CHECK(b[0].canonical_term == "4b");
}

TEST_CASE("negation scope") {
    const auto final_trigger = toks("Befund kein");
    CHECK(negation_scope(final_trigger, 1, ScopeDirection::forward, 6).empty());

    const auto conj = toks("kein X aber Y");
    const auto r = negation_scope(conj, 0, ScopeDirection::forward, 6);
    CHECK(r == TokenRange{1, 2});

    CHECK(negation_scope(conj, 0, ScopeDirection::forward, 0).empty());

    const auto back = toks("A B C ausgeschlossen");
    CHECK(negation_scope(back, 3, ScopeDirection::backward, 2) == TokenRange{1, 3});
    CHECK(negation_scope(back, 3, ScopeDirection::backward, 6) == TokenRange{0, 3});

    const auto sent = toks("Kein X. Y Z");
    CHECK(negation_scope(sent, 0, ScopeDirection::forward, 6) == TokenRange{1, 2});
}

TEST_CASE("sentence splitting respects abbreviations and decimals") {
    const auto t = toks("Dr. Meier, ca. 3.5 mg. Neuer Satz");
    // Dr Meier ca 3 5 mg | Neuer Satz
    REQUIRE(t.size() == 8);
    CHECK(t[5].sentence == 0);
    CHECK(t[6].sentence == 1);
}

TEST_CASE("user dictionary hot-add takes effect with the new version only") {
    const PipelineConfig old_config = fixture_config();
    const Pipeline old_pipeline(old_config);
    CHECK(old_pipeline.annotate("Nierenzyste links").empty());

    const PipelineConfig next = add_user_entry(old_config, AnnotationType::diagnosis, "Nierenzyste", std::string("N28.1"));
    CHECK(next.version == old_config.version + 1);
    const Pipeline new_pipeline(next);
    const auto hits = new_pipeline.annotate("Nierenzyste links");
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].provenance == AnnotationSource::user_dictionary);
    CHECK(hits[0].code == "N28.1");
    // Old config and old pipeline are untouched.
    CHECK(old_pipeline.annotate("Nierenzyste links").empty());
    CHECK(Pipeline(old_config).annotate("Nierenzyste links").empty());

    CHECK_THROWS_AS(add_user_entry(next, AnnotationType::diagnosis, "NIERENZYSTE"), DuplicateError);
    CHECK_THROWS_AS(add_user_entry(next, AnnotationType::diagnosis, "  "), InputError);

    // System wins a tie on the same span; a longer user entry still wins.
    auto tie = add_user_entry(old_config, AnnotationType::diagnosis, "Hypertonie");
    const auto t = Pipeline(tie).annotate("Hypertonie");
    REQUIRE(t.size() == 1);
    CHECK(t[0].provenance == AnnotationSource::system_dictionary);
    auto longer = add_user_entry(old_config, AnnotationType::diagnosis, "pulmonale Hypertonie");
    const auto l = Pipeline(longer).annotate("pulmonale Hypertonie");
    REQUIRE(l.size() == 1);
    CHECK(l[0].provenance == AnnotationSource::user_dictionary);
    CHECK(l[0].surface == "pulmonale Hypertonie");
}

TEST_CASE("user entries are persisted separately from the system tier") {
    const auto dir = scratch("user");
    std::filesystem::copy(kDictDir, dir, std::filesystem::copy_options::recursive);
    const auto system_before = load_dictionary_file(dir / "system" / "diagnosis.tsv");
    append_user_entry_file(dir, AnnotationType::diagnosis, {"Nierenzyste", std::string("N28.1"), {}});
    CHECK(load_dictionary_file(dir / "system" / "diagnosis.tsv") == system_before);
    const auto user = load_dictionary_file(dir / "user" / "diagnosis.tsv");
    REQUIRE(user.size() == 1);
    CHECK(user[0].term == "Nierenzyste");
    CHECK(Pipeline(load_config(dir)).annotate("Nierenzyste").size() == 1);
    std::filesystem::remove_all(dir);
}

TEST_CASE("rules files and compile errors") {
    const auto dir = scratch("rules");
    {
        std::ofstream out(dir / "rules.tsv");
        out << "# comment\nbirads\tbirads\t\\bRADS\\s*([0-6])\n";
    }
    const auto rules = load_rules(dir / "rules.tsv");
    REQUIRE(rules.size() == 1);
    CHECK(rules[0].annotation_type == AnnotationType::birads);
    PipelineConfig bad = default_config();
    bad.rules.push_back({"broken", AnnotationType::birads, "([", ""});
    CHECK_THROWS_AS(Pipeline{bad}, InputError);
    {
        std::ofstream out(dir / "short.tsv");
        out << "only\ttwo\n";
    }
    CHECK_THROWS_AS(load_rules(dir / "short.tsv"), InputError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("span validity, longest match and negation monotonicity on random texts") {
    std::mt19937 rng(5);
    const std::vector<std::string> words{"Anämie", "renale", "Hypertonie", "kein", "aber", "ohne", "Fieber", ".",
                                         ",", "Ödeme", "BIRADS", "4b", "ausgeschlossen", "Straße", "und", "\n"};
    PipelineConfig with = default_config();
    with.dictionaries.push_back({AnnotationType::diagnosis,
                                 Tier::system,
                                 {{"Anämie", {}, {}}, {"renale Anämie", {}, {}}, {"Hypertonie", {}, {}},
                                  {"Fieber", {}, {}}, {"Ödeme", {}, {}}, {"Straße und Fieber", {}, {}}}});
    PipelineConfig without = with;
    without.negation_triggers.clear();
    const Pipeline pw(with);
    const Pipeline pn(without);
    for (int i = 0; i < 2000; ++i) {
        std::string s;
        for (int k = 0, n = static_cast<int>(rng() % 14); k < n; ++k) {
            s += words[rng() % words.size()];
            s += (rng() % 4 == 0) ? "  " : " ";
        }
        const auto u = text::decode_utf8(s);
        const auto anns = pw.annotate(s);
        CHECK(pw.annotate(s) == anns);
        for (const auto& a : anns) {
            REQUIRE(a.begin < a.end);
            REQUIRE(a.end <= u.size());
            CHECK(a.surface == text::encode_utf8(u.substr(a.begin, a.end - a.begin)));
            CHECK(a.negated == a.negation_trigger.has_value());
            if (a.annotation_type == AnnotationType::diagnosis && a.canonical_term == "Anämie") {
                // "renale" directly before in the same sentence would have made the longer match.
                const auto t = tokenize(u);
                for (std::size_t j = 1; j < t.size(); ++j) {
                    if (t[j].begin == a.begin) {
                        CHECK_FALSE((t[j - 1].norm == U"renale" && t[j - 1].sentence == t[j].sentence &&
                                     !std::any_of(anns.begin(), anns.end(), [&](const Annotation& o) {
                                         return o.begin <= t[j - 1].begin && o.end > t[j - 1].begin;
                                     })));
                    }
                }
            }
        }
        for (const auto& a : pn.annotate(s)) CHECK_FALSE(a.negated);
    }
}

TEST_CASE("feedback log is append-only and round-trips") {
    const auto dir = scratch("feedback");
    FeedbackLog log(dir / "feedback.jsonl");
    CHECK(log.read_all().empty());
    const auto e1 = log.record("a1", Verdict::incorrect, "doc-1");
    CHECK(log.read_all().size() == 1);
    log.record("a1", Verdict::incorrect, "doc-1");
    const auto all = log.read_all();
    REQUIRE(all.size() == 2);
    CHECK(all[0] == e1);
    CHECK(feedback_from_json(to_json(e1)) == e1);
    CHECK(e1.timestamp.size() == 20);
    CHECK(e1.timestamp.back() == 'Z');
    std::filesystem::remove_all(dir);
}
