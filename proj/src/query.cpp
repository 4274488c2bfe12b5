#include "cohort/query.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>

#include "cohort/errors.hpp"
#include "cohort/ingest.hpp"
#include "cohort/text.hpp"

namespace cohort::query {

namespace {

using json = nlohmann::json;

const IndexedField& require_field(const NestedIndex& index, std::string_view name) { return index.field(name); }

void require_keyword(const IndexedField& f) {
    if (f.schema.value_kind != ValueKind::keyword) {
        throw SchemaError("field '" + f.schema.name + "' is not a keyword field");
    }
}

void require_numeric(const IndexedField& f) {
    if (f.schema.value_kind != ValueKind::numeric && f.schema.value_kind != ValueKind::date_day) {
        throw SchemaError("field '" + f.schema.name + "' is not numeric");
    }
}

std::vector<std::uint32_t> term_ids(const TermDictionary& dict, const std::vector<std::string>& terms) {
    std::vector<std::uint32_t> ids;
    for (const auto& t : terms) {
        if (auto id = dict.find(t)) {
            ids.push_back(*id);
        }
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

bool has_any(std::span<const std::uint32_t> values, const std::vector<std::uint32_t>& ids) {
    for (auto v : values) {
        if (std::binary_search(ids.begin(), ids.end(), v)) {
            return true;
        }
    }
    return false;
}

// Conjunction of predicates over the instances of one child kind.
class ChildMatcher {
public:
    ChildMatcher(const NestedIndex& index, const ChildGroup& group) : index_(index), kind_(group.kind) {
        for (const auto& pred : group.predicates) {
            std::visit([&](const auto& p) { add(p); }, pred);
        }
    }

    bool matches(std::uint32_t inst) const {
        for (const auto& k : keywords_) {
            if (!has_any(k.dict->values_of(inst), k.ids)) {
                return false;
            }
        }
        for (const auto& r : ranges_) {
            auto v = r.column->get(inst);
            if (!v || !r.pred.contains(*v)) {
                return false;
            }
        }
        return true;
    }

    // Calls fn(instance) for matching instances in ascending order.
    template <typename Fn>
    void for_each_match(Fn&& fn) const {
        if (!keywords_.empty()) {
            // Drive from the postings of the first keyword predicate.
            std::vector<std::uint32_t> candidates;
            for (auto id : keywords_.front().ids) {
                for (Slot s : keywords_.front().dict->postings[id]) {
                    candidates.push_back(index_.slot_instance(s));
                }
            }
            std::sort(candidates.begin(), candidates.end());
            candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
            for (auto inst : candidates) {
                if (matches(inst)) {
                    fn(inst);
                }
            }
            return;
        }
        const auto n = static_cast<std::uint32_t>(index_.instance_count(kind_));
        for (std::uint32_t inst = 0; inst < n; ++inst) {
            if (matches(inst)) {
                fn(inst);
            }
        }
    }

private:
    struct Keyword {
        const TermDictionary* dict;
        std::vector<std::uint32_t> ids;
    };
    struct Range {
        const NumericColumn* column;
        RangePredicate pred;
    };

    const IndexedField& child_field(const std::string& name) const {
        const auto& f = require_field(index_, name);
        if (f.schema.level != FieldLevel::child || f.schema.kind != kind_) {
            throw SchemaError("field '" + name + "' does not belong to child kind '" +
                              std::string(to_string(kind_)) + "'");
        }
        return f;
    }

    void add(const KeywordPredicate& p) {
        const auto& f = child_field(p.field);
        require_keyword(f);
        keywords_.push_back({&f.keywords, term_ids(f.keywords, p.terms)});
    }

    void add(const RangePredicate& p) {
        const auto& f = child_field(p.field);
        require_numeric(f);
        ranges_.push_back({&f.numeric, p});
    }

    const NestedIndex& index_;
    ChildKind kind_;
    std::vector<Keyword> keywords_;
    std::vector<Range> ranges_;
};

// Per-endpoint-instance kind and ordinal, read from the index fields.
struct EndpointTable {
    std::vector<EndpointKind> kinds;
    std::vector<int> ordinals;

    explicit EndpointTable(const NestedIndex& index) {
        const auto& kf = require_field(index, "ep_kind");
        const auto& of = require_field(index, "ep_ordinal");
        const auto n = static_cast<std::uint32_t>(index.instance_count(ChildKind::endpoint));
        std::vector<EndpointKind> by_term;
        for (const auto& t : kf.keywords.terms) {
            by_term.push_back(parse_endpoint_kind(t));
        }
        kinds.resize(n);
        ordinals.resize(n);
        for (std::uint32_t i = 0; i < n; ++i) {
            auto vals = kf.keywords.values_of(i);
            kinds[i] = vals.empty() ? EndpointKind::basic_disease : by_term[vals.front()];
            ordinals[i] = static_cast<int>(of.numeric.get(i).value_or(0));
        }
    }

    std::vector<Day> select(const NestedIndex& index, std::uint32_t patient, const EndpointSelector& sel) const {
        std::vector<Day> days;
        for (auto i = index.first_instance(ChildKind::endpoint, patient),
                  e = index.end_instance(ChildKind::endpoint, patient);
             i < e; ++i) {
            if (sel.selects(EndpointEvent{kinds[i], 0, ordinals[i]})) {
                if (auto d = index.instance_day(ChildKind::endpoint, i)) {
                    days.push_back(*d);
                }
            }
        }
        return days;
    }
};

// Free-text evaluation over document instances.
class TextEvaluator {
public:
    using Positions = std::map<std::uint32_t, std::vector<std::uint32_t>>;

    TextEvaluator(const NestedIndex& index, std::string_view field) : index_(index) {
        const auto& f = require_field(index, field);
        if (f.schema.value_kind != ValueKind::fulltext) {
            throw SchemaError("field '" + std::string(field) + "' is not a full-text field");
        }
        text_ = &f.text;
        kind_ = f.schema.kind;
        universe_ = index.instance_count(kind_);
    }

    std::vector<std::uint8_t> eval(const TextExpr& e) {
        switch (e.op) {
            case TextExpr::Op::term:
            case TextExpr::Op::phrase: {
                std::vector<std::uint8_t> out(universe_, 0);
                for (const auto& [doc, _] : leaf_positions(e)) {
                    out[doc] = 1;
                }
                return out;
            }
            case TextExpr::Op::and_: {
                auto out = eval(e.children.front());
                for (std::size_t i = 1; i < e.children.size(); ++i) {
                    auto other = eval(e.children[i]);
                    for (std::size_t d = 0; d < universe_; ++d) {
                        out[d] &= other[d];
                    }
                }
                return out;
            }
            case TextExpr::Op::or_: {
                auto out = eval(e.children.front());
                for (std::size_t i = 1; i < e.children.size(); ++i) {
                    auto other = eval(e.children[i]);
                    for (std::size_t d = 0; d < universe_; ++d) {
                        out[d] |= other[d];
                    }
                }
                return out;
            }
            case TextExpr::Op::not_: {
                auto out = eval(e.children.front());
                for (auto& v : out) {
                    v ^= 1;
                }
                return out;
            }
        }
        return {};
    }

    // Token positions of positive (non-negated) leaves in one document.
    std::vector<std::uint32_t> highlight_positions(const TextExpr& e, std::uint32_t doc, bool negated = false) {
        std::vector<std::uint32_t> out;
        collect_highlights(e, doc, negated, out);
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    ChildKind kind() const { return kind_; }

private:
    void collect_highlights(const TextExpr& e, std::uint32_t doc, bool negated, std::vector<std::uint32_t>& out) {
        if (e.op == TextExpr::Op::term || e.op == TextExpr::Op::phrase) {
            if (negated) {
                return;
            }
            const auto& pos = leaf_positions(e);
            auto it = pos.find(doc);
            if (it != pos.end()) {
                for (auto p : it->second) {
                    for (std::size_t k = 0; k < e.patterns.size(); ++k) {
                        out.push_back(p + static_cast<std::uint32_t>(k));
                    }
                }
            }
            return;
        }
        for (const auto& c : e.children) {
            collect_highlights(c, doc, negated != (e.op == TextExpr::Op::not_), out);
        }
    }

    // Expanded postings of one pattern: doc -> sorted positions.
    Positions pattern_positions(const std::string& pattern) {
        Positions out;
        const auto wild = pattern.find_first_of("*?");
        if (wild == std::string::npos) {
            if (auto id = text_->find(pattern)) {
                for (const auto& p : text_->postings[*id]) {
                    out[p.instance] = p.positions;
                }
            }
            return out;
        }
        const std::string prefix = pattern.substr(0, wild);
        auto it = std::lower_bound(text_->terms.begin(), text_->terms.end(), prefix);
        for (; it != text_->terms.end() && it->compare(0, prefix.size(), prefix) == 0; ++it) {
            if (!wildcard_match(pattern, *it)) {
                continue;
            }
            for (const auto& p : text_->postings[static_cast<std::size_t>(it - text_->terms.begin())]) {
                auto& v = out[p.instance];
                v.insert(v.end(), p.positions.begin(), p.positions.end());
            }
        }
        for (auto& [_, v] : out) {
            std::sort(v.begin(), v.end());
            v.erase(std::unique(v.begin(), v.end()), v.end());
        }
        return out;
    }

    // doc -> start positions of the leaf's matches.
    const Positions& leaf_positions(const TextExpr& e) {
        auto cached = cache_.find(&e);
        if (cached != cache_.end()) {
            return cached->second;
        }
        Positions result;
        if (e.patterns.size() == 1) {
            result = pattern_positions(e.patterns.front());
        } else {
            std::vector<Positions> parts;
            for (const auto& p : e.patterns) {
                parts.push_back(pattern_positions(p));
            }
            for (const auto& [doc, starts] : parts.front()) {
                std::vector<std::uint32_t> hits;
                for (auto s : starts) {
                    bool ok = true;
                    for (std::size_t k = 1; k < parts.size() && ok; ++k) {
                        auto it = parts[k].find(doc);
                        ok = it != parts[k].end() &&
                             std::binary_search(it->second.begin(), it->second.end(),
                                                s + static_cast<std::uint32_t>(k));
                    }
                    if (ok) {
                        hits.push_back(s);
                    }
                }
                if (!hits.empty()) {
                    result[doc] = std::move(hits);
                }
            }
        }
        return cache_.emplace(&e, std::move(result)).first->second;
    }

    const NestedIndex& index_;
    const FullTextField* text_ = nullptr;
    ChildKind kind_ = ChildKind::document;
    std::size_t universe_ = 0;
    std::map<const TextExpr*, Positions> cache_;
};

PatientSet patients_of_docs(const NestedIndex& index, ChildKind kind, const std::vector<std::uint8_t>& docs) {
    PatientSet out(index.patient_count(), false);
    for (std::uint32_t d = 0; d < docs.size(); ++d) {
        if (docs[d] != 0) {
            out.set(index.instance_patient(kind, d));
        }
    }
    return out;
}

struct RestrictionEvaluator {
    const NestedIndex& index;
    std::optional<EndpointTable> endpoints;

    const EndpointTable& endpoint_table() {
        if (!endpoints) {
            endpoints.emplace(index);
        }
        return *endpoints;
    }

    PatientSet operator()(const KeywordPredicate& p) {
        const auto& f = require_field(index, p.field);
        require_keyword(f);
        PatientSet out(index.patient_count(), false);
        for (auto id : term_ids(f.keywords, p.terms)) {
            for (Slot s : f.keywords.postings[id]) {
                out.set(index.slot_patient(s));
            }
        }
        return out;
    }

    PatientSet operator()(const RangePredicate& p) {
        const auto& f = require_field(index, p.field);
        require_numeric(f);
        if (f.schema.level == FieldLevel::child) {
            return (*this)(ChildGroup{f.schema.kind, {p}});
        }
        PatientSet out(index.patient_count(), false);
        for (std::uint32_t i = 0; i < index.patient_count(); ++i) {
            auto v = f.numeric.get(i);
            if (v && p.contains(*v)) {
                out.set(i);
            }
        }
        return out;
    }

    PatientSet operator()(const ChildGroup& g) {
        ChildMatcher matcher(index, g);
        PatientSet out(index.patient_count(), false);
        matcher.for_each_match([&](std::uint32_t inst) { out.set(index.instance_patient(g.kind, inst)); });
        return out;
    }

    PatientSet operator()(const TemporalChild& t) {
        ChildMatcher matcher(index, t.group);
        const auto& eps = endpoint_table();
        PatientSet out(index.patient_count(), false);
        std::uint32_t cached_patient = std::numeric_limits<std::uint32_t>::max();
        std::vector<Day> anchors;
        matcher.for_each_match([&](std::uint32_t inst) {
            const std::uint32_t p = index.instance_patient(t.group.kind, inst);
            if (out.test(p)) {
                return;
            }
            const auto day = index.instance_day(t.group.kind, inst);
            if (!day) {
                return;
            }
            if (p != cached_patient) {
                cached_patient = p;
                anchors = eps.select(index, p, t.anchor);
            }
            for (Day a : anchors) {
                if (t.window.contains(static_cast<long long>(*day) - a)) {
                    out.set(p);
                    return;
                }
            }
        });
        return out;
    }

    PatientSet operator()(const EndpointRelation& r) {
        const auto& eps = endpoint_table();
        PatientSet out(index.patient_count(), false);
        for (std::uint32_t p = 0; p < index.patient_count(); ++p) {
            const auto as = eps.select(index, p, r.a);
            if (as.empty()) {
                continue;
            }
            const auto bs = eps.select(index, p, r.b);
            bool hit = false;
            for (Day a : as) {
                for (Day b : bs) {
                    if (r.window.contains(static_cast<long long>(a) - b)) {
                        hit = true;
                        break;
                    }
                }
                if (hit) {
                    break;
                }
            }
            if (hit) {
                out.set(p);
            }
        }
        return out;
    }

    PatientSet operator()(const FreeText& f) {
        const TextExpr expr = parse_text_expr(f.expr);
        TextEvaluator ev(index, f.field);
        return patients_of_docs(index, ev.kind(), ev.eval(expr));
    }
};

bool contains_normalized(const std::string& normalized, const std::optional<std::string>& substring) {
    if (!substring) {
        return true;
    }
    return normalized.find(normalize_term(*substring)) != std::string::npos;
}

// ---- JSON ----

[[noreturn]] void bad(const std::string& where, const std::string& what) {
    throw InputError(where + ": " + what);
}

const json& member(const json& j, const char* key, const std::string& where) {
    if (!j.is_object()) {
        bad(where, "expected an object");
    }
    auto it = j.find(key);
    if (it == j.end()) {
        bad(where + "." + key, "missing");
    }
    return *it;
}

std::string get_string(const json& j, const char* key, const std::string& where) {
    const auto& v = member(j, key, where);
    if (!v.is_string()) {
        bad(where + "." + key, "expected a string");
    }
    return v.get<std::string>();
}

std::optional<double> get_opt_number(const json& j, const char* key, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) {
        return std::nullopt;
    }
    if (!it->is_number()) {
        bad(where + "." + key, "expected a number");
    }
    return it->get<double>();
}

std::optional<int> get_opt_int(const json& j, const char* key, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) {
        return std::nullopt;
    }
    if (!it->is_number_integer()) {
        bad(where + "." + key, "expected an integer");
    }
    return it->get<int>();
}

bool get_bool(const json& j, const char* key, bool fallback, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) {
        return fallback;
    }
    if (!it->is_boolean()) {
        bad(where + "." + key, "expected a boolean");
    }
    return it->get<bool>();
}

KeywordPredicate keyword_from_json(const json& j, const std::string& where) {
    KeywordPredicate p;
    p.field = get_string(j, "field", where);
    if (auto it = j.find("terms"); it != j.end()) {
        if (!it->is_array() || it->empty()) {
            bad(where + ".terms", "expected a non-empty array of strings");
        }
        for (const auto& t : *it) {
            if (!t.is_string()) {
                bad(where + ".terms", "expected a non-empty array of strings");
            }
            p.terms.push_back(t.get<std::string>());
        }
    } else {
        p.terms.push_back(get_string(j, "term", where));
    }
    return p;
}

RangePredicate range_from_json(const json& j, const std::string& where) {
    RangePredicate p;
    p.field = get_string(j, "field", where);
    p.lower = get_opt_number(j, "lower", where);
    p.upper = get_opt_number(j, "upper", where);
    p.lower_inclusive = get_bool(j, "lower_inclusive", true, where);
    p.upper_inclusive = get_bool(j, "upper_inclusive", true, where);
    if (!p.lower && !p.upper) {
        bad(where, "range needs lower or upper");
    }
    return p;
}

ChildGroup group_from_json(const json& j, const std::string& where) {
    ChildGroup g;
    try {
        g.kind = parse_child_kind(get_string(j, "kind", where));
    } catch (const SchemaError& e) {
        bad(where + ".kind", e.what());
    }
    const auto& preds = member(j, "predicates", where);
    if (!preds.is_array()) {
        bad(where + ".predicates", "expected an array");
    }
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const std::string w = where + ".predicates[" + std::to_string(i) + "]";
        const std::string type = get_string(preds[i], "type", w);
        if (type == "keyword") {
            g.predicates.emplace_back(keyword_from_json(preds[i], w));
        } else if (type == "range") {
            g.predicates.emplace_back(range_from_json(preds[i], w));
        } else {
            bad(w + ".type", "expected 'keyword' or 'range'");
        }
    }
    return g;
}

EndpointSelector selector_from_json(const json& j, const std::string& where) {
    EndpointSelector s;
    try {
        s.kind = parse_endpoint_kind(get_string(j, "kind", where));
    } catch (const InputError& e) {
        bad(where + ".kind", e.what());
    }
    auto it = j.find("ordinal");
    if (it == j.end() || it->is_null()) {
        s.rule = OrdinalRule::any;
    } else if (it->is_string() && *it == "first") {
        s.rule = OrdinalRule::first;
    } else if (it->is_string() && *it == "any") {
        s.rule = OrdinalRule::any;
    } else if (it->is_number_integer() && it->get<long long>() >= 1 &&
               it->get<long long>() <= std::numeric_limits<int>::max()) {
        s.rule = OrdinalRule::nth;
        s.n = it->get<int>();
    } else {
        bad(where + ".ordinal", "expected \"first\", \"any\" or an integer >= 1");
    }
    return s;
}

DayWindow window_from_json(const json& j, const std::string& where) {
    DayWindow w;
    if (!j.is_object()) {
        bad(where, "expected an object");
    }
    w.lower = get_opt_int(j, "lower", where);
    w.upper = get_opt_int(j, "upper", where);
    if (w.lower && w.upper && *w.lower > *w.upper) {
        bad(where, "lower exceeds upper");
    }
    return w;
}

json predicate_to_json(const KeywordPredicate& p) {
    return {{"type", "keyword"}, {"field", p.field}, {"terms", p.terms}};
}

json predicate_to_json(const RangePredicate& p) {
    json j{{"type", "range"},
           {"field", p.field},
           {"lower_inclusive", p.lower_inclusive},
           {"upper_inclusive", p.upper_inclusive}};
    if (p.lower) {
        j["lower"] = *p.lower;
    }
    if (p.upper) {
        j["upper"] = *p.upper;
    }
    return j;
}

json group_to_json(const ChildGroup& g) {
    json preds = json::array();
    for (const auto& p : g.predicates) {
        preds.push_back(std::visit([](const auto& x) { return predicate_to_json(x); }, p));
    }
    return {{"kind", std::string(to_string(g.kind))}, {"predicates", preds}};
}

json selector_to_json(const EndpointSelector& s) {
    json j{{"kind", std::string(to_string(s.kind))}};
    switch (s.rule) {
        case OrdinalRule::first: j["ordinal"] = "first"; break;
        case OrdinalRule::any: j["ordinal"] = "any"; break;
        case OrdinalRule::nth: j["ordinal"] = s.n; break;
    }
    return j;
}

json window_to_json(const DayWindow& w) {
    json j = json::object();
    if (w.lower) {
        j["lower"] = *w.lower;
    }
    if (w.upper) {
        j["upper"] = *w.upper;
    }
    return j;
}

}  // namespace

const std::string& QueryState::add(Restriction r) {
    if (r.id.empty()) {
        do {
            r.id = "r" + std::to_string(next_id_++);
        } while (std::any_of(restrictions_.begin(), restrictions_.end(),
                             [&](const Restriction& x) { return x.id == r.id; }));
    } else if (std::any_of(restrictions_.begin(), restrictions_.end(),
                           [&](const Restriction& x) { return x.id == r.id; })) {
        throw DuplicateError("restriction id '" + r.id + "' already in use");
    }
    restrictions_.push_back(std::move(r));
    return restrictions_.back().id;
}

bool QueryState::remove(std::string_view id) {
    auto it = std::find_if(restrictions_.begin(), restrictions_.end(),
                           [&](const Restriction& r) { return r.id == id; });
    if (it == restrictions_.end()) {
        return false;
    }
    restrictions_.erase(it);
    return true;
}

PatientSet::PatientSet(std::size_t size, bool full) : size_(size), words_((size + 63) / 64, 0) {
    if (full) {
        for (std::size_t i = 0; i < size; ++i) {
            words_[i / 64] |= std::uint64_t{1} << (i % 64);
        }
    }
}

void PatientSet::intersect(const PatientSet& other) {
    for (std::size_t i = 0; i < words_.size(); ++i) {
        words_[i] &= other.words_[i];
    }
}

std::size_t PatientSet::count() const {
    std::size_t n = 0;
    for (auto w : words_) {
        n += static_cast<std::size_t>(std::popcount(w));
    }
    return n;
}

std::vector<std::uint32_t> PatientSet::members() const {
    std::vector<std::uint32_t> out;
    for (std::size_t w = 0; w < words_.size(); ++w) {
        std::uint64_t bits = words_[w];
        while (bits != 0) {
            const int b = std::countr_zero(bits);
            out.push_back(static_cast<std::uint32_t>(w * 64 + static_cast<std::size_t>(b)));
            bits &= bits - 1;
        }
    }
    return out;
}

PatientSet evaluate_set(const NestedIndex& index, const std::vector<Restriction>& restrictions) {
    PatientSet result(index.patient_count(), true);
    RestrictionEvaluator ev{index, std::nullopt};
    for (const auto& r : restrictions) {
        result.intersect(std::visit(ev, r.body));
    }
    return result;
}

ResultSet to_result_set(const NestedIndex& index, const PatientSet& set) {
    ResultSet rs;
    for (auto p : set.members()) {
        rs.patient_ids.push_back(index.patient_id(p));
    }
    std::sort(rs.patient_ids.begin(), rs.patient_ids.end());
    return rs;
}

ResultSet evaluate(const NestedIndex& index, const std::vector<Restriction>& restrictions) {
    return to_result_set(index, evaluate_set(index, restrictions));
}

FacetReport facet_report(const NestedIndex& index, const std::vector<Restriction>& restrictions,
                         std::string_view field, const FacetOptions& options) {
    // Validate the field before paying for evaluation.
    index.field(field);
    return facet_report_for_set(index, evaluate_set(index, restrictions), field, options);
}

FacetReport facet_report_for_set(const NestedIndex& index, const PatientSet& matched, std::string_view field,
                         const FacetOptions& options) {
    const auto& f = index.field(field);
    if (f.schema.value_kind != ValueKind::keyword || !f.schema.facetable) {
        throw SchemaError("field '" + std::string(field) + "' is not a facetable keyword field");
    }
    const auto& dict = f.keywords;
    std::vector<std::uint32_t> counts(dict.terms.size(), 0);
    std::vector<std::uint32_t> stamp(dict.terms.size(), std::numeric_limits<std::uint32_t>::max());
    const auto members = matched.members();
    for (auto p : members) {
        auto visit = [&](std::uint32_t inst) {
            for (auto id : dict.values_of(inst)) {
                if (stamp[id] != p) {
                    stamp[id] = p;
                    ++counts[id];
                }
            }
        };
        if (f.schema.level == FieldLevel::patient) {
            visit(p);
        } else {
            for (auto i = index.first_instance(f.schema.kind, p), e = index.end_instance(f.schema.kind, p); i < e;
                 ++i) {
                visit(i);
            }
        }
    }

    FacetReport report;
    report.field = std::string(field);
    report.total_remaining_patients = static_cast<std::uint32_t>(members.size());
    report.shown_top_k = options.top_k;
    report.mincount = options.mincount;
    std::vector<std::uint32_t> listed;
    for (std::uint32_t id = 0; id < dict.terms.size(); ++id) {
        if (counts[id] == 0 || !contains_normalized(dict.normalized[id], options.substring)) {
            continue;
        }
        listed.push_back(id);
        FacetValue v{dict.terms[id], counts[id], counts[id] == report.total_remaining_patients};
        if (v.count >= options.mincount) {
            report.menu.push_back(v);
        }
        report.values.push_back(std::move(v));
    }
    std::stable_sort(listed.begin(), listed.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return counts[a] > counts[b]; });
    for (std::size_t i = 0; i < listed.size() && i < options.top_k; ++i) {
        const auto id = listed[i];
        report.top.push_back({dict.terms[id], counts[id], counts[id] == report.total_remaining_patients});
    }
    return report;
}

std::vector<IntervalCount> numeric_interval_report(const NestedIndex& index,
                                                   const std::vector<Restriction>& restrictions,
                                                   std::string_view field, const std::vector<double>& edges) {
    const auto& f = index.field(field);
    require_numeric(f);
    if (edges.size() < 2) {
        throw InputError("bucket edges: need at least two");
    }
    for (std::size_t i = 0; i < edges.size(); ++i) {
        if (!std::isfinite(edges[i]) || (i > 0 && !(edges[i - 1] < edges[i]))) {
            throw InputError("bucket edges: must be finite and strictly increasing");
        }
    }
    const std::size_t nb = edges.size() - 1;
    std::vector<IntervalCount> out(nb);
    for (std::size_t b = 0; b < nb; ++b) {
        out[b].lower = edges[b];
        out[b].upper = edges[b + 1];
    }
    std::vector<std::uint32_t> stamp(nb, std::numeric_limits<std::uint32_t>::max());
    for (auto p : evaluate_set(index, restrictions).members()) {
        auto visit = [&](std::uint32_t inst) {
            auto v = f.numeric.get(inst);
            if (!v || *v < edges.front() || *v >= edges.back()) {
                return;
            }
            const auto b = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), *v) - edges.begin()) - 1;
            if (stamp[b] != p) {
                stamp[b] = p;
                ++out[b].count;
            }
        };
        if (f.schema.level == FieldLevel::patient) {
            visit(p);
        } else {
            for (auto i = index.first_instance(f.schema.kind, p), e = index.end_instance(f.schema.kind, p); i < e;
                 ++i) {
                visit(i);
            }
        }
    }
    return out;
}

NumericSummary numeric_summary(const NestedIndex& index, const PatientSet& matched, std::string_view field) {
    const auto& f = index.field(field);
    require_numeric(f);
    NumericSummary s;
    s.field = std::string(field);
    for (auto p : matched.members()) {
        bool any = false;
        auto visit = [&](std::uint32_t inst) {
            if (auto v = f.numeric.get(inst)) {
                any = true;
                s.min = s.min ? std::min(*s.min, *v) : *v;
                s.max = s.max ? std::max(*s.max, *v) : *v;
            }
        };
        if (f.schema.level == FieldLevel::patient) {
            visit(p);
        } else {
            for (auto i = index.first_instance(f.schema.kind, p), e = index.end_instance(f.schema.kind, p); i < e;
                 ++i) {
                visit(i);
            }
        }
        s.patients += any ? 1 : 0;
    }
    return s;
}

// ---- free-text grammar ----

namespace {

struct Lexeme {
    enum class Kind : std::uint8_t { word, lparen, rparen, end };
    Kind kind = Kind::end;
    std::u32string text;
    std::size_t position = 0;
};

std::vector<Lexeme> lex(std::u32string_view s) {
    std::vector<Lexeme> out;
    std::size_t i = 0;
    while (i < s.size()) {
        if (text::is_space(s[i])) {
            ++i;
        } else if (s[i] == U'(') {
            out.push_back({Lexeme::Kind::lparen, U"(", i});
            ++i;
        } else if (s[i] == U')') {
            out.push_back({Lexeme::Kind::rparen, U")", i});
            ++i;
        } else {
            const std::size_t begin = i;
            while (i < s.size() && !text::is_space(s[i]) && s[i] != U'(' && s[i] != U')') {
                ++i;
            }
            out.push_back({Lexeme::Kind::word, std::u32string(s.substr(begin, i - begin)), begin});
        }
    }
    out.push_back({Lexeme::Kind::end, U"", s.size()});
    return out;
}

class Parser {
public:
    explicit Parser(std::vector<Lexeme> lexemes) : lx_(std::move(lexemes)) {}

    TextExpr parse() {
        if (peek().kind == Lexeme::Kind::end) {
            throw SyntaxError("empty expression", peek().position);
        }
        TextExpr e = parse_or();
        if (peek().kind != Lexeme::Kind::end) {
            throw SyntaxError("unexpected '" + text::encode_utf8(peek().text) + "'", peek().position);
        }
        return e;
    }

private:
    const Lexeme& peek() const { return lx_[pos_]; }
    bool is_op(std::u32string_view op) const { return peek().kind == Lexeme::Kind::word && peek().text == op; }

    bool starts_atom() const {
        const auto& l = peek();
        if (l.kind == Lexeme::Kind::lparen) {
            return true;
        }
        return l.kind == Lexeme::Kind::word && l.text != U"AND" && l.text != U"OR";
    }

    TextExpr combine(TextExpr::Op op, std::vector<TextExpr> parts) {
        if (parts.size() == 1) {
            return std::move(parts.front());
        }
        TextExpr e;
        e.op = op;
        e.position = parts.front().position;
        e.children = std::move(parts);
        return e;
    }

    TextExpr parse_or() {
        std::vector<TextExpr> parts;
        parts.push_back(parse_and());
        while (is_op(U"OR")) {
            ++pos_;
            parts.push_back(parse_and());
        }
        return combine(TextExpr::Op::or_, std::move(parts));
    }

    TextExpr parse_and() {
        std::vector<TextExpr> parts;
        parts.push_back(parse_not());
        while (true) {
            if (is_op(U"AND")) {
                ++pos_;
                parts.push_back(parse_not());
            } else if (starts_atom()) {
                parts.push_back(parse_not());
            } else {
                break;
            }
        }
        return combine(TextExpr::Op::and_, std::move(parts));
    }

    TextExpr parse_not() {
        if (is_op(U"NOT")) {
            const std::size_t at = peek().position;
            ++pos_;
            TextExpr e;
            e.op = TextExpr::Op::not_;
            e.position = at;
            e.children.push_back(parse_atom());
            return e;
        }
        return parse_atom();
    }

    TextExpr parse_atom() {
        const Lexeme& l = peek();
        if (l.kind == Lexeme::Kind::lparen) {
            ++pos_;
            TextExpr e = parse_or();
            if (peek().kind != Lexeme::Kind::rparen) {
                throw SyntaxError("expected ')'", peek().position);
            }
            ++pos_;
            return e;
        }
        if (l.kind != Lexeme::Kind::word || l.text == U"AND" || l.text == U"OR" || l.text == U"NOT") {
            throw SyntaxError(l.kind == Lexeme::Kind::end ? "unexpected end of expression" : "expected a term",
                              l.position);
        }
        ++pos_;
        return term(l);
    }

    static TextExpr term(const Lexeme& l) {
        TextExpr e;
        e.position = l.position;
        std::u32string current;
        auto flush = [&] {
            if (!current.empty()) {
                e.patterns.push_back(text::encode_utf8(current));
                current.clear();
            }
        };
        for (char32_t c : l.text) {
            if (c == U'*' || c == U'?') {
                current.push_back(c);
            } else if (text::is_word_char(c)) {
                text::fold_char(c, current);
            } else {
                flush();
            }
        }
        flush();
        if (e.patterns.empty()) {
            throw SyntaxError("term has no letters or digits", l.position);
        }
        e.op = e.patterns.size() == 1 ? TextExpr::Op::term : TextExpr::Op::phrase;
        return e;
    }

    std::vector<Lexeme> lx_;
    std::size_t pos_ = 0;
};

}  // namespace

TextExpr parse_text_expr(std::string_view expr) { return Parser(lex(text::decode_utf8(expr))).parse(); }

bool wildcard_match(std::string_view pattern, std::string_view token) {
    // Iterative glob over code points with single-star backtracking.
    const std::u32string p = text::decode_utf8(pattern);
    const std::u32string t = text::decode_utf8(token);
    std::size_t pi = 0;
    std::size_t ti = 0;
    std::size_t star = std::u32string::npos;
    std::size_t mark = 0;
    while (ti < t.size()) {
        if (pi < p.size() && (p[pi] == U'?' || p[pi] == t[ti])) {
            ++pi;
            ++ti;
        } else if (pi < p.size() && p[pi] == U'*') {
            star = pi++;
            mark = ti;
        } else if (star != std::u32string::npos) {
            pi = star + 1;
            ti = ++mark;
        } else {
            return false;
        }
    }
    while (pi < p.size() && p[pi] == U'*') {
        ++pi;
    }
    return pi == p.size();
}

FreeTextResult free_text_search(const NestedIndex& index, const std::vector<Restriction>& restrictions,
                                std::string_view expr, std::string_view field) {
    const TextExpr parsed = parse_text_expr(expr);
    TextEvaluator ev(index, field);
    const auto docs = ev.eval(parsed);
    PatientSet matched = evaluate_set(index, restrictions);
    matched.intersect(patients_of_docs(index, ev.kind(), docs));

    FreeTextResult out;
    out.result = to_result_set(index, matched);
    for (auto p : matched.members()) {
        for (auto d = index.first_instance(ev.kind(), p), e = index.end_instance(ev.kind(), p); d < e; ++d) {
            if (docs[d] == 0) {
                continue;
            }
            DocumentMatch m;
            m.doc_id = index.doc_id(d);
            m.patient_id = index.patient_id(p);
            const auto positions = ev.highlight_positions(parsed, d);
            if (!positions.empty()) {
                const auto tokens = tokenize_fulltext(index.doc_body(d));
                for (auto pos : positions) {
                    if (pos < tokens.size()) {
                        m.highlights.push_back({tokens[pos].begin, tokens[pos].end});
                    }
                }
            }
            out.documents.push_back(std::move(m));
        }
    }
    return out;
}

std::string_view to_string(AnnotationStatus s) {
    switch (s) {
        case AnnotationStatus::known: return "known";
        case AnnotationStatus::new_fact: return "new";
        case AnnotationStatus::contradiction: return "contradiction";
    }
    return "new";
}

std::vector<ComparedAnnotation> compare_extraction_to_record(const PatientRecord& patient,
                                                             const std::vector<Annotation>& annotations) {
    std::vector<ComparedAnnotation> out;
    for (const auto& a : annotations) {
        const std::string term = normalize_term(a.canonical_term.empty() ? a.surface : a.canonical_term);
        const std::string surface = normalize_term(a.surface);
        auto term_eq = [&](std::string_view candidate) {
            const std::string n = normalize_term(candidate);
            return !n.empty() && (n == term || n == surface);
        };
        auto code_eq = [&](const std::optional<std::string>& candidate) {
            return a.code && candidate && *a.code == *candidate;
        };
        bool match = false;
        switch (a.annotation_type) {
            case AnnotationType::diagnosis:
            case AnnotationType::disorder:
                for (const auto& d : patient.diagnoses) {
                    match = match || code_eq(d.icd10) || term_eq(d.term);
                }
                break;
            case AnnotationType::procedure:
                for (const auto& d : patient.diagnoses) {
                    match = match || code_eq(d.therapy_code) || (d.therapy_term && term_eq(*d.therapy_term));
                }
                break;
            case AnnotationType::medication:
            case AnnotationType::drug:
                for (const auto& m : patient.medications) {
                    match = match || code_eq(m.atc_code) || term_eq(m.term);
                }
                break;
            case AnnotationType::lab_value:
                for (const auto& l : patient.labs) {
                    match = match || term_eq(l.term) || l.term_canon == canonical_key(a.canonical_term);
                }
                break;
            case AnnotationType::examination:
            case AnnotationType::exam_method:
                for (const auto& e : patient.examinations) {
                    const auto label = ingest::parse_method_label(a.canonical_term);
                    match = match || term_eq(to_string(e.method)) || (label != ExamMethod::other && label == e.method);
                }
                break;
            case AnnotationType::birads:
                for (const auto& e : patient.examinations) {
                    match = match || (e.birads && e.birads->to_string() == a.canonical_term);
                }
                break;
        }
        AnnotationStatus status = AnnotationStatus::new_fact;
        if (match) {
            status = a.negated ? AnnotationStatus::contradiction : AnnotationStatus::known;
        }
        out.push_back({a, status});
    }
    return out;
}

Restriction restriction_from_json(const json& j) {
    const std::string where = "restriction";
    if (!j.is_object()) {
        bad(where, "expected an object");
    }
    Restriction r;
    if (auto it = j.find("id"); it != j.end() && !it->is_null()) {
        if (!it->is_string()) {
            bad(where + ".id", "expected a string");
        }
        r.id = it->get<std::string>();
    }
    const std::string type = get_string(j, "type", where);
    if (type == "keyword") {
        r.body = keyword_from_json(j, where);
    } else if (type == "range") {
        r.body = range_from_json(j, where);
    } else if (type == "child_group") {
        r.body = group_from_json(j, where);
    } else if (type == "temporal_child") {
        TemporalChild t;
        t.group = group_from_json(member(j, "group", where), where + ".group");
        t.anchor = selector_from_json(member(j, "anchor", where), where + ".anchor");
        t.window = window_from_json(member(j, "window", where), where + ".window");
        r.body = std::move(t);
    } else if (type == "endpoint_relation") {
        EndpointRelation e;
        e.a = selector_from_json(member(j, "a", where), where + ".a");
        e.b = selector_from_json(member(j, "b", where), where + ".b");
        e.window = window_from_json(member(j, "window", where), where + ".window");
        r.body = e;
    } else if (type == "fulltext") {
        FreeText f;
        f.expr = get_string(j, "expr", where);
        if (j.contains("field")) {
            f.field = get_string(j, "field", where);
        }
        r.body = std::move(f);
    } else {
        bad(where + ".type", "unknown restriction type '" + type + "'");
    }
    return r;
}

json restriction_to_json(const Restriction& r) {
    json j = std::visit(
        [](const auto& b) -> json {
            using T = std::decay_t<decltype(b)>;
            if constexpr (std::is_same_v<T, KeywordPredicate> || std::is_same_v<T, RangePredicate>) {
                return predicate_to_json(b);
            } else if constexpr (std::is_same_v<T, ChildGroup>) {
                json g = group_to_json(b);
                g["type"] = "child_group";
                return g;
            } else if constexpr (std::is_same_v<T, TemporalChild>) {
                return {{"type", "temporal_child"},
                        {"group", group_to_json(b.group)},
                        {"anchor", selector_to_json(b.anchor)},
                        {"window", window_to_json(b.window)}};
            } else if constexpr (std::is_same_v<T, EndpointRelation>) {
                return {{"type", "endpoint_relation"},
                        {"a", selector_to_json(b.a)},
                        {"b", selector_to_json(b.b)},
                        {"window", window_to_json(b.window)}};
            } else {
                return {{"type", "fulltext"}, {"expr", b.expr}, {"field", b.field}};
            }
        },
        r.body);
    if (!r.id.empty()) {
        j["id"] = r.id;
    }
    return j;
}

std::vector<Restriction> restrictions_from_json(const json& j) {
    if (!j.is_array()) {
        throw InputError("restrictions: expected an array");
    }
    std::vector<Restriction> out;
    for (const auto& r : j) {
        out.push_back(restriction_from_json(r));
    }
    return out;
}

json restrictions_to_json(const std::vector<Restriction>& rs) {
    json out = json::array();
    for (const auto& r : rs) {
        out.push_back(restriction_to_json(r));
    }
    return out;
}

}  // namespace cohort::query
