#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cohort/datamodel.hpp"
#include "cohort/index.hpp"

namespace cohort::query {

// Matches when the field holds any of `terms` (exact raw values).
struct KeywordPredicate {
    std::string field;
    std::vector<std::string> terms;

    bool operator==(const KeywordPredicate&) const = default;
};

struct RangePredicate {
    std::string field;
    std::optional<double> lower;
    std::optional<double> upper;
    bool lower_inclusive = true;
    bool upper_inclusive = true;

    bool contains(double v) const {
        if (lower && (lower_inclusive ? v < *lower : v <= *lower)) {
            return false;
        }
        if (upper && (upper_inclusive ? v > *upper : v >= *upper)) {
            return false;
        }
        return true;
    }

    bool operator==(const RangePredicate&) const = default;
};

using Predicate = std::variant<KeywordPredicate, RangePredicate>;

// All predicates must hold on one child instance of `kind`.
struct ChildGroup {
    ChildKind kind = ChildKind::diagnosis;
    std::vector<Predicate> predicates;

    bool operator==(const ChildGroup&) const = default;
};

enum class OrdinalRule : std::uint8_t { first, any, nth };

struct EndpointSelector {
    EndpointKind kind = EndpointKind::transplantation;
    OrdinalRule rule = OrdinalRule::any;
    int n = 1;  // used by nth

    bool selects(const EndpointEvent& e) const {
        if (e.kind != kind) {
            return false;
        }
        switch (rule) {
            case OrdinalRule::first: return e.ordinal == 1;
            case OrdinalRule::any: return true;
            case OrdinalRule::nth: return e.ordinal == n;
        }
        return false;
    }

    bool operator==(const EndpointSelector&) const = default;
};

// Inclusive whole-day interval; an absent bound is unbounded.
struct DayWindow {
    std::optional<int> lower;
    std::optional<int> upper;

    bool contains(long long d) const {
        return (!lower || d >= *lower) && (!upper || d <= *upper);
    }

    bool operator==(const DayWindow&) const = default;
};

// day(child) - day(anchor endpoint) within window.
struct TemporalChild {
    ChildGroup group;
    EndpointSelector anchor;
    DayWindow window;

    bool operator==(const TemporalChild&) const = default;
};

// day(a) - day(b) within window.
struct EndpointRelation {
    EndpointSelector a;
    EndpointSelector b;
    DayWindow window;

    bool operator==(const EndpointRelation&) const = default;
};

struct FreeText {
    std::string expr;
    std::string field = "doc_body";

    bool operator==(const FreeText&) const = default;
};

using RestrictionBody =
    std::variant<KeywordPredicate, RangePredicate, ChildGroup, TemporalChild, EndpointRelation, FreeText>;

struct Restriction {
    std::string id;
    RestrictionBody body;

    bool operator==(const Restriction&) const = default;
};

// Caller-owned set of restrictions, removable by id in any order.
class QueryState {
public:
    // Assigns an id ("r1", "r2", ...) when the restriction has none.
    // Throws DuplicateError when the id is taken.
    const std::string& add(Restriction r);
    bool remove(std::string_view id);
    void clear() { restrictions_.clear(); }
    const std::vector<Restriction>& restrictions() const { return restrictions_; }

private:
    std::vector<Restriction> restrictions_;
    std::uint64_t next_id_ = 1;
};

// Bitset over patient ordinals.
class PatientSet {
public:
    PatientSet() = default;
    PatientSet(std::size_t size, bool full);

    std::size_t size() const { return size_; }
    bool test(std::uint32_t p) const { return (words_[p / 64] >> (p % 64)) & 1U; }
    void set(std::uint32_t p) { words_[p / 64] |= std::uint64_t{1} << (p % 64); }
    void intersect(const PatientSet& other);
    std::size_t count() const;
    std::vector<std::uint32_t> members() const;

    bool operator==(const PatientSet&) const = default;

private:
    std::size_t size_ = 0;
    std::vector<std::uint64_t> words_;
};

struct ResultSet {
    std::vector<std::string> patient_ids;  // sorted, unique
    std::optional<std::string> name;
    std::optional<std::string> created_at;

    bool operator==(const ResultSet&) const = default;
};

// Throws SchemaError for unknown fields or fields used at the wrong level,
// SyntaxError for unparsable free-text expressions.
PatientSet evaluate_set(const NestedIndex& index, const std::vector<Restriction>& restrictions);
ResultSet evaluate(const NestedIndex& index, const std::vector<Restriction>& restrictions);
ResultSet to_result_set(const NestedIndex& index, const PatientSet& set);

struct FacetValue {
    std::string term;
    std::uint32_t count = 0;
    bool common_to_all = false;

    bool operator==(const FacetValue&) const = default;
};

struct FacetOptions {
    std::size_t top_k = 4;
    std::uint32_t mincount = 5;
    std::optional<std::string> substring;
};

struct FacetReport {
    std::string field;
    std::uint32_t total_remaining_patients = 0;
    // Every value with count >= 1 in dictionary order (the full list the
    // client filters locally). The substring, when given, applies here too.
    std::vector<FacetValue> values;
    // Most frequent values, ties alphabetical.
    std::vector<FacetValue> top;
    // Dictionary-ordered values with count >= mincount.
    std::vector<FacetValue> menu;
    std::size_t shown_top_k = 0;
    std::uint32_t mincount = 0;

    bool operator==(const FacetReport&) const = default;
};

FacetReport facet_report(const NestedIndex& index, const std::vector<Restriction>& restrictions,
                         std::string_view field, const FacetOptions& options = {});
// Same, for an already evaluated result set.
FacetReport facet_report_for_set(const NestedIndex& index, const PatientSet& matched, std::string_view field,
                         const FacetOptions& options = {});

struct IntervalCount {
    double lower = 0;
    double upper = 0;  // exclusive
    std::uint32_t count = 0;

    bool operator==(const IntervalCount&) const = default;
};

// Half-open buckets [e_i, e_{i+1}); edges must be strictly increasing and
// at least two. Counts are unique patients in the current result set.
std::vector<IntervalCount> numeric_interval_report(const NestedIndex& index,
                                                   const std::vector<Restriction>& restrictions,
                                                   std::string_view field, const std::vector<double>& edges);

struct NumericSummary {
    std::string field;
    std::uint32_t patients = 0;  // patients with any value
    std::optional<double> min;
    std::optional<double> max;

    bool operator==(const NumericSummary&) const = default;
};

NumericSummary numeric_summary(const NestedIndex& index, const PatientSet& matched, std::string_view field);

// Free-text expression tree.
struct TextExpr {
    enum class Op : std::uint8_t { term, phrase, and_, or_, not_ };
    Op op = Op::term;
    // term: one folded pattern; phrase: consecutive patterns.
    std::vector<std::string> patterns;
    std::vector<TextExpr> children;
    std::size_t position = 0;  // code point offset in the source expression
};

// Grammar: or := and ("OR" and)*; and := not ("AND"? not)*;
// not := "NOT" atom | atom; atom := TOKEN | "(" or ")".
// Throws SyntaxError with the code point position of the problem.
TextExpr parse_text_expr(std::string_view expr);

// Glob match of a folded token against a pattern with '*' and '?'.
bool wildcard_match(std::string_view pattern, std::string_view token);

struct Highlight {
    std::size_t begin = 0;  // code points
    std::size_t end = 0;

    bool operator==(const Highlight&) const = default;
};

struct DocumentMatch {
    std::string doc_id;
    std::string patient_id;
    std::vector<Highlight> highlights;

    bool operator==(const DocumentMatch&) const = default;
};

struct FreeTextResult {
    ResultSet result;
    // Matched documents of matching patients, in patient then block order.
    std::vector<DocumentMatch> documents;

    bool operator==(const FreeTextResult&) const = default;
};

FreeTextResult free_text_search(const NestedIndex& index, const std::vector<Restriction>& restrictions,
                                std::string_view expr, std::string_view field = "doc_body");

enum class AnnotationStatus : std::uint8_t { known, new_fact, contradiction };
std::string_view to_string(AnnotationStatus s);

struct ComparedAnnotation {
    Annotation annotation;
    AnnotationStatus status = AnnotationStatus::new_fact;

    bool operator==(const ComparedAnnotation&) const = default;
};

std::vector<ComparedAnnotation> compare_extraction_to_record(const PatientRecord& patient,
                                                             const std::vector<Annotation>& annotations);

// Wire form {id, type, ...}. Throws InputError naming the offending field.
Restriction restriction_from_json(const nlohmann::json& j);
nlohmann::json restriction_to_json(const Restriction& r);
std::vector<Restriction> restrictions_from_json(const nlohmann::json& j);
nlohmann::json restrictions_to_json(const std::vector<Restriction>& rs);

}  // namespace cohort::query
