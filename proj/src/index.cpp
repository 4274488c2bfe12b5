#include "cohort/index.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "cohort/errors.hpp"
#include "cohort/record_json.hpp"
#include "cohort/text.hpp"

namespace cohort {

namespace {

constexpr std::array<std::string_view, kChildKindCount> kChildKindNames{
    "diagnosis", "lab", "medication", "examination", "endpoint", "document"};
constexpr std::array<std::string_view, kChildKindCount> kDayFields{
    "dia_days", "lab_days", "med_days", "exam_days", "ep_days", "doc_days"};

using KeywordFn = std::function<void(const PatientRecord&, std::size_t, std::vector<std::string>&)>;
using NumberFn = std::function<std::optional<double>(const PatientRecord&, std::size_t)>;
using TextFn = std::function<const std::string*(const PatientRecord&, std::size_t)>;

struct Extractor {
    FieldSchema schema;
    KeywordFn keywords;
    NumberFn number;
    TextFn text;
};

void push_opt(std::vector<std::string>& out, const std::optional<std::string>& v) {
    if (v && !v->empty()) {
        out.push_back(*v);
    }
}

void push(std::vector<std::string>& out, std::string_view v) {
    if (!v.empty()) {
        out.emplace_back(v);
    }
}

FieldSchema patient_field(std::string name, ValueKind vk, bool facet) {
    return {std::move(name), FieldLevel::patient, ChildKind::diagnosis, vk, facet};
}

FieldSchema child_field(std::string name, ChildKind kind, ValueKind vk, bool facet) {
    return {std::move(name), FieldLevel::child, kind, vk, facet};
}

std::optional<double> civil_day(const std::optional<CivilDate>& d) {
    if (!d) {
        return std::nullopt;
    }
    return static_cast<double>(days_since_epoch(*d));
}

const std::vector<Extractor>& extractors() {
    static const std::vector<Extractor> table = [] {
        using VK = ValueKind;
        using CK = ChildKind;
        std::vector<Extractor> t;
        auto kw = [&t](FieldSchema s, KeywordFn f) { t.push_back({std::move(s), std::move(f), {}, {}}); };
        auto num = [&t](FieldSchema s, NumberFn f) { t.push_back({std::move(s), {}, std::move(f), {}}); };

        // Patient level; the child index argument is unused.
        kw(patient_field("patient_id", VK::keyword, false),
           [](const PatientRecord& p, std::size_t, auto& out) { push(out, p.patient_id); });
        kw(patient_field("sex", VK::keyword, true),
           [](const PatientRecord& p, std::size_t, auto& out) { push(out, to_string(p.sex)); });
        kw(patient_field("deceased", VK::keyword, true), [](const PatientRecord& p, std::size_t, auto& out) {
            push(out, p.deceased ? "true" : "false");
        });
        kw(patient_field("blood_group", VK::keyword, true),
           [](const PatientRecord& p, std::size_t, auto& out) { push(out, to_string(p.blood_group)); });
        num(patient_field("age", VK::numeric, true), [](const PatientRecord& p, std::size_t) {
            auto a = age_at_last_contact(p);
            return a ? std::optional<double>(*a) : std::nullopt;
        });
        num(patient_field("height_cm", VK::numeric, true),
            [](const PatientRecord& p, std::size_t) { return p.height_cm; });
        num(patient_field("birth_date", VK::date_day, false),
            [](const PatientRecord& p, std::size_t) { return civil_day(p.birth_date); });
        num(patient_field("last_contact", VK::date_day, false),
            [](const PatientRecord& p, std::size_t) { return civil_day(p.last_contact); });

        kw(child_field("dia_term", CK::diagnosis, VK::keyword, true),
           [](const PatientRecord& p, std::size_t i, auto& out) { push(out, p.diagnoses[i].term); });
        kw(child_field("dia_icd10", CK::diagnosis, VK::keyword, true),
           [](const PatientRecord& p, std::size_t i, auto& out) { push_opt(out, p.diagnoses[i].icd10); });
        kw(child_field("dia_therapy_term", CK::diagnosis, VK::keyword, true),
           [](const PatientRecord& p, std::size_t i, auto& out) { push_opt(out, p.diagnoses[i].therapy_term); });
        kw(child_field("dia_therapy_code", CK::diagnosis, VK::keyword, true),
           [](const PatientRecord& p, std::size_t i, auto& out) { push_opt(out, p.diagnoses[i].therapy_code); });
        kw(child_field("dia_provenance", CK::diagnosis, VK::keyword, true),
           [](const PatientRecord& p, std::size_t i, auto& out) {
               push(out, to_string(p.diagnoses[i].provenance));
           });
        num(child_field("dia_days", CK::diagnosis, VK::date_day, false),
            [](const PatientRecord& p, std::size_t i) { return std::optional<double>(p.diagnoses[i].day); });

        kw(child_field("lab_term", CK::lab, VK::keyword, true),
           [](const PatientRecord& p, std::size_t i, auto& out) { push(out, p.labs[i].term); });
        kw(child_field("lab_term_canon", CK::lab, VK::keyword, true),
           [](const PatientRecord& p, std::size_t i, auto& out) { push(out, p.labs[i].term_canon); });
        kw(child_field("lab_textval", CK::lab, VK::keyword, true),
           [](const PatientRecord& p, std::size_t i, auto& out) { push_opt(out, p.labs[i].text_value); });
        kw(child_field("lab_class", CK::lab, VK::keyword, true),
           [](const PatientRecord& p, std::size_t i, auto& out) {
               if (p.labs[i].classification) {
                   push(out, to_string(*p.labs[i].classification));
               }
           });
        kw(child_field("lab_provenance", CK::lab, VK::keyword, true),
           [](const PatientRecord& p, std::size_t i, auto& out) { push(out, to_string(p.labs[i].provenance)); });
        num(child_field("lab_numval", CK::lab, VK::numeric, true),
            [](const PatientRecord& p, std::size_t i) { return p.labs[i].numeric_value; });
        num(child_field("lab_days", CK::lab, VK::date_day, false),
            [](const PatientRecord& p, std::size_t i) { return std::optional<double>(p.labs[i].day); });

        kw(child_field("med_term", CK::medication, VK::keyword, true),
           [](const PatientRecord& p, std::size_t i, auto& out) { push(out, p.medications[i].term); });
        kw(child_field("med_atc", CK::medication, VK::keyword, true),
           [](const PatientRecord& p, std::size_t i, auto& out) { push_opt(out, p.medications[i].atc_code); });
        kw(child_field("med_provenance", CK::medication, VK::keyword, true),
           [](const PatientRecord& p, std::size_t i, auto& out) {
               push(out, to_string(p.medications[i].provenance));
           });
        num(child_field("med_days", CK::medication, VK::date_day, false),
            [](const PatientRecord& p, std::size_t i) { return std::optional<double>(p.medications[i].day); });

        kw(child_field("exam_method", CK::examination, VK::keyword, true),
           [](const PatientRecord& p, std::size_t i, auto& out) { push(out, to_string(p.examinations[i].method)); });
        kw(child_field("exam_physician", CK::examination, VK::keyword, true),
           [](const PatientRecord& p, std::size_t i, auto& out) { push_opt(out, p.examinations[i].physician); });
        kw(child_field("exam_birads", CK::examination, VK::keyword, true),
           [](const PatientRecord& p, std::size_t i, auto& out) {
               if (p.examinations[i].birads) {
                   push(out, p.examinations[i].birads->to_string());
               }
           });
        num(child_field("exam_days", CK::examination, VK::date_day, false),
            [](const PatientRecord& p, std::size_t i) { return std::optional<double>(p.examinations[i].day); });

        kw(child_field("ep_kind", CK::endpoint, VK::keyword, true),
           [](const PatientRecord& p, std::size_t i, auto& out) { push(out, to_string(p.endpoints[i].kind)); });
        num(child_field("ep_ordinal", CK::endpoint, VK::numeric, false),
            [](const PatientRecord& p, std::size_t i) { return std::optional<double>(p.endpoints[i].ordinal); });
        num(child_field("ep_days", CK::endpoint, VK::date_day, false),
            [](const PatientRecord& p, std::size_t i) { return std::optional<double>(p.endpoints[i].day); });

        kw(child_field("doc_id", CK::document, VK::keyword, false),
           [](const PatientRecord& p, std::size_t i, auto& out) { push(out, p.documents[i].doc_id); });
        kw(child_field("doc_type", CK::document, VK::keyword, true),
           [](const PatientRecord& p, std::size_t i, auto& out) { push(out, to_string(p.documents[i].doc_type)); });
        // Affirmed (non-negated) annotation terms.
        kw(child_field("doc_ann_term", CK::document, VK::keyword, true),
           [](const PatientRecord& p, std::size_t i, auto& out) {
               for (const auto& a : p.documents[i].annotations) {
                   if (!a.negated) {
                       push(out, a.canonical_term);
                   }
               }
           });
        num(child_field("doc_days", CK::document, VK::date_day, false), [](const PatientRecord& p, std::size_t i) {
            const auto& d = p.documents[i].day;
            return d ? std::optional<double>(*d) : std::nullopt;
        });
        t.push_back({child_field("doc_body", CK::document, VK::fulltext, false), {}, {},
                     [](const PatientRecord& p, std::size_t i) { return &p.documents[i].body; }});
        return t;
    }();
    return table;
}

const Extractor* find_extractor(std::string_view name) {
    for (const auto& e : extractors()) {
        if (e.schema.name == name) {
            return &e;
        }
    }
    return nullptr;
}

template <typename T>
std::vector<std::uint32_t> order_by_day(const std::vector<T>& items) {
    std::vector<std::uint32_t> order(items.size());
    std::iota(order.begin(), order.end(), 0U);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return items[a].day < items[b].day; });
    return order;
}

// Child order within a block: (day, id), matching sort_children.
std::vector<std::uint32_t> child_order(const PatientRecord& p, ChildKind kind) {
    switch (kind) {
        case ChildKind::diagnosis: return order_by_day(p.diagnoses);
        case ChildKind::lab: return order_by_day(p.labs);
        case ChildKind::medication: return order_by_day(p.medications);
        case ChildKind::examination: return order_by_day(p.examinations);
        case ChildKind::endpoint: {
            std::vector<std::uint32_t> order(p.endpoints.size());
            std::iota(order.begin(), order.end(), 0U);
            std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
                return std::tie(p.endpoints[a].day, p.endpoints[a].kind) <
                       std::tie(p.endpoints[b].day, p.endpoints[b].kind);
            });
            return order;
        }
        case ChildKind::document: {
            std::vector<std::uint32_t> order(p.documents.size());
            std::iota(order.begin(), order.end(), 0U);
            std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
                const Day da = p.documents[a].day.value_or(std::numeric_limits<Day>::max());
                const Day db = p.documents[b].day.value_or(std::numeric_limits<Day>::max());
                return std::tie(da, p.documents[a].doc_id) < std::tie(db, p.documents[b].doc_id);
            });
            return order;
        }
    }
    return {};
}

// Collects (instance, slot, raw values) in ascending slot order, then sorts
// the dictionary and remaps ids.
class TermDictionaryBuilder {
public:
    explicit TermDictionaryBuilder(std::size_t instances) { dict_.value_offsets.reserve(instances + 1); dict_.value_offsets.push_back(0); }

    void add_instance(Slot slot, std::uint32_t patient, std::vector<std::string>& values) {
        std::sort(values.begin(), values.end());
        values.erase(std::unique(values.begin(), values.end()), values.end());
        for (auto& v : values) {
            auto [it, inserted] = ids_.try_emplace(v, static_cast<std::uint32_t>(raw_terms_.size()));
            if (inserted) {
                raw_terms_.push_back(v);
                postings_.emplace_back();
                counts_.push_back(0);
                last_patient_.push_back(std::numeric_limits<std::uint32_t>::max());
            }
            const std::uint32_t id = it->second;
            postings_[id].push_back(slot);
            if (last_patient_[id] != patient) {
                last_patient_[id] = patient;
                ++counts_[id];
            }
            dict_.value_ids.push_back(id);
        }
        dict_.value_offsets.push_back(static_cast<std::uint32_t>(dict_.value_ids.size()));
    }

    TermDictionary finish() {
        const std::size_t n = raw_terms_.size();
        std::vector<std::string> norms(n);
        for (std::size_t i = 0; i < n; ++i) {
            norms[i] = normalize_term(raw_terms_[i]);
        }
        std::vector<std::uint32_t> order(n);
        std::iota(order.begin(), order.end(), 0U);
        std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
            return std::tie(norms[a], raw_terms_[a]) < std::tie(norms[b], raw_terms_[b]);
        });
        std::vector<std::uint32_t> remap(n);
        for (std::uint32_t k = 0; k < n; ++k) {
            remap[order[k]] = k;
        }
        dict_.terms.resize(n);
        dict_.normalized.resize(n);
        dict_.postings.resize(n);
        dict_.parent_counts.resize(n);
        for (std::uint32_t k = 0; k < n; ++k) {
            dict_.terms[k] = std::move(raw_terms_[order[k]]);
            dict_.normalized[k] = std::move(norms[order[k]]);
            dict_.postings[k] = std::move(postings_[order[k]]);
            dict_.parent_counts[k] = counts_[order[k]];
        }
        for (auto& id : dict_.value_ids) {
            id = remap[id];
        }
        // Keep each instance's ids ascending after the remap.
        for (std::size_t i = 0; i + 1 < dict_.value_offsets.size(); ++i) {
            std::sort(dict_.value_ids.begin() + dict_.value_offsets[i],
                      dict_.value_ids.begin() + dict_.value_offsets[i + 1]);
        }
        return std::move(dict_);
    }

private:
    TermDictionary dict_;
    std::unordered_map<std::string, std::uint32_t> ids_;
    std::vector<std::string> raw_terms_;
    std::vector<std::vector<Slot>> postings_;
    std::vector<std::uint32_t> counts_;
    std::vector<std::uint32_t> last_patient_;
};

class FullTextBuilder {
public:
    void add_document(std::uint32_t instance, std::string_view body) {
        std::map<std::string, std::vector<std::uint32_t>> positions;
        for (auto& tok : tokenize_fulltext(body)) {
            positions[std::move(tok.token)].push_back(tok.position);
        }
        for (auto& [term, pos] : positions) {
            auto [it, inserted] = ids_.try_emplace(term, static_cast<std::uint32_t>(terms_.size()));
            if (inserted) {
                terms_.push_back(term);
                postings_.emplace_back();
            }
            postings_[it->second].push_back({instance, std::move(pos)});
        }
    }

    FullTextField finish() {
        std::vector<std::uint32_t> order(terms_.size());
        std::iota(order.begin(), order.end(), 0U);
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return terms_[a] < terms_[b]; });
        FullTextField f;
        f.terms.reserve(order.size());
        f.postings.reserve(order.size());
        for (auto id : order) {
            f.terms.push_back(std::move(terms_[id]));
            f.postings.push_back(std::move(postings_[id]));
        }
        return f;
    }

private:
    std::unordered_map<std::string, std::uint32_t> ids_;
    std::vector<std::string> terms_;
    std::vector<std::vector<TextPosting>> postings_;
};

}  // namespace

std::string_view to_string(ChildKind kind) { return kChildKindNames[static_cast<std::size_t>(kind)]; }

ChildKind parse_child_kind(std::string_view s) {
    for (std::size_t i = 0; i < kChildKindCount; ++i) {
        if (kChildKindNames[i] == s) {
            return static_cast<ChildKind>(i);
        }
    }
    throw SchemaError("unknown child kind '" + std::string(s) + "'");
}

std::string_view to_string(ValueKind kind) {
    switch (kind) {
        case ValueKind::keyword: return "keyword";
        case ValueKind::numeric: return "numeric";
        case ValueKind::date_day: return "date_day";
        case ValueKind::fulltext: return "fulltext";
    }
    return "keyword";
}

std::vector<FieldSchema> default_schema() {
    std::vector<FieldSchema> schema;
    for (const auto& e : extractors()) {
        schema.push_back(e.schema);
    }
    return schema;
}

std::string_view day_field(ChildKind kind) { return kDayFields[static_cast<std::size_t>(kind)]; }

std::optional<std::uint32_t> TermDictionary::find(std::string_view raw) const {
    const std::string norm = normalize_term(raw);
    std::size_t lo = 0;
    std::size_t hi = terms.size();
    while (lo < hi) {
        const std::size_t mid = (lo + hi) / 2;
        if (std::tie(normalized[mid], terms[mid]) < std::tie(norm, raw)) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    if (lo < terms.size() && terms[lo] == raw) {
        return static_cast<std::uint32_t>(lo);
    }
    return std::nullopt;
}

std::optional<std::uint32_t> FullTextField::find(std::string_view term) const {
    auto it = std::lower_bound(terms.begin(), terms.end(), term);
    if (it != terms.end() && *it == term) {
        return static_cast<std::uint32_t>(it - terms.begin());
    }
    return std::nullopt;
}

std::optional<std::uint32_t> NestedIndex::find_patient(std::string_view id) const {
    for (std::uint32_t p = 0; p < patient_ids_.size(); ++p) {
        if (patient_ids_[p] == id) {
            return p;
        }
    }
    return std::nullopt;
}

std::optional<Day> NestedIndex::instance_day(ChildKind kind, std::uint32_t instance) const {
    const auto& k = kind_data(kind);
    if (k.has_day[instance] == 0) {
        return std::nullopt;
    }
    return k.days[instance];
}

const IndexedField* NestedIndex::find_field(std::string_view name) const {
    auto it = std::lower_bound(fields_.begin(), fields_.end(), name,
                               [](const IndexedField& f, std::string_view n) { return f.schema.name < n; });
    if (it != fields_.end() && it->schema.name == name) {
        return &*it;
    }
    return nullptr;
}

const IndexedField& NestedIndex::field(std::string_view name) const {
    if (const auto* f = find_field(name)) {
        return *f;
    }
    throw SchemaError("unknown field '" + std::string(name) + "'");
}

NestedIndex build_index(const std::vector<PatientRecord>& snapshot, const std::vector<FieldSchema>& schema,
                        BuildLog* log) {
    NestedIndex idx;
    {
        std::set<std::string_view> seen;
        for (const auto& p : snapshot) {
            if (!seen.insert(p.patient_id).second) {
                throw DuplicateError("duplicate patient_id '" + p.patient_id + "'");
            }
        }
    }

    // Resolve the schema against the known extractors.
    std::vector<const Extractor*> active;
    {
        std::set<std::string> names;
        for (const auto& s : schema) {
            const Extractor* e = find_extractor(s.name);
            if (e == nullptr || e->schema.level != s.level || e->schema.value_kind != s.value_kind ||
                (s.level == FieldLevel::child && e->schema.kind != s.kind)) {
                if (log != nullptr) {
                    log->skipped.push_back(s.name);
                }
                continue;
            }
            if (!names.insert(s.name).second) {
                continue;
            }
            active.push_back(e);
            FieldSchema declared = e->schema;
            declared.facetable = s.facetable;
            idx.schema_.push_back(declared);
        }
    }

    // Block layout.
    const std::size_t np = snapshot.size();
    idx.patient_ids_.reserve(np);
    idx.parent_slots_.reserve(np);
    std::array<std::vector<std::vector<std::uint32_t>>, kChildKindCount> orders;
    for (auto& k : idx.kinds_) {
        k.offsets.assign(1, 0);
    }
    Slot next = 0;
    for (std::uint32_t p = 0; p < np; ++p) {
        const auto& rec = snapshot[p];
        idx.patient_ids_.push_back(rec.patient_id);
        for (std::size_t k = 0; k < kChildKindCount; ++k) {
            const auto kind = static_cast<ChildKind>(k);
            auto order = child_order(rec, kind);
            auto& kd = idx.kinds_[k];
            for (auto ri : order) {
                kd.slots.push_back(next);
                kd.record_index.push_back(ri);
                idx.slot_patient_.push_back(p);
                idx.slot_instance_.push_back(static_cast<std::uint32_t>(kd.slots.size() - 1));
                std::optional<Day> day;
                switch (kind) {
                    case ChildKind::diagnosis: day = rec.diagnoses[ri].day; break;
                    case ChildKind::lab: day = rec.labs[ri].day; break;
                    case ChildKind::medication: day = rec.medications[ri].day; break;
                    case ChildKind::examination: day = rec.examinations[ri].day; break;
                    case ChildKind::endpoint: day = rec.endpoints[ri].day; break;
                    case ChildKind::document: day = rec.documents[ri].day; break;
                }
                kd.days.push_back(day.value_or(0));
                kd.has_day.push_back(day ? 1 : 0);
                ++next;
            }
            kd.offsets.push_back(static_cast<std::uint32_t>(kd.slots.size()));
            orders[k].push_back(std::move(order));
        }
        idx.parent_slots_.push_back(next);
        idx.slot_patient_.push_back(p);
        idx.slot_instance_.push_back(p);
        ++next;
    }
    idx.parent_bits_.assign((next + 63) / 64, 0);
    for (auto s : idx.parent_slots_) {
        idx.parent_bits_[s / 64] |= std::uint64_t{1} << (s % 64);
    }

    // Stored document fields.
    {
        const auto& kd = idx.kinds_[static_cast<std::size_t>(ChildKind::document)];
        for (std::size_t i = 0; i < kd.slots.size(); ++i) {
            const auto& doc = snapshot[idx.slot_patient_[kd.slots[i]]].documents[kd.record_index[i]];
            idx.doc_ids_.push_back(doc.doc_id);
            idx.doc_bodies_.push_back(doc.body);
        }
    }

    // Field data.
    std::vector<std::string> values;
    for (std::size_t f = 0; f < active.size(); ++f) {
        const Extractor& e = *active[f];
        IndexedField field;
        field.schema = idx.schema_[f];
        const bool child = e.schema.level == FieldLevel::child;
        const std::size_t kind_index = static_cast<std::size_t>(e.schema.kind);
        const std::size_t instances = child ? idx.kinds_[kind_index].slots.size() : np;

        // Visits (instance, slot, patient, record index) in ascending slot order.
        auto for_each_instance = [&](auto&& fn) {
            if (!child) {
                for (std::uint32_t p = 0; p < np; ++p) {
                    fn(p, idx.parent_slots_[p], p, 0U);
                }
                return;
            }
            const auto& kd = idx.kinds_[kind_index];
            for (std::uint32_t i = 0; i < kd.slots.size(); ++i) {
                fn(i, kd.slots[i], idx.slot_patient_[kd.slots[i]], kd.record_index[i]);
            }
        };

        switch (e.schema.value_kind) {
            case ValueKind::keyword: {
                TermDictionaryBuilder builder(instances);
                for_each_instance([&](std::uint32_t, Slot slot, std::uint32_t p, std::uint32_t ri) {
                    values.clear();
                    e.keywords(snapshot[p], ri, values);
                    builder.add_instance(slot, p, values);
                });
                field.keywords = builder.finish();
                break;
            }
            case ValueKind::numeric:
            case ValueKind::date_day: {
                field.numeric.values.assign(instances, 0.0);
                field.numeric.present.assign(instances, 0);
                for_each_instance([&](std::uint32_t i, Slot, std::uint32_t p, std::uint32_t ri) {
                    if (auto v = e.number(snapshot[p], ri)) {
                        field.numeric.values[i] = *v;
                        field.numeric.present[i] = 1;
                    }
                });
                break;
            }
            case ValueKind::fulltext: {
                FullTextBuilder builder;
                for_each_instance([&](std::uint32_t i, Slot, std::uint32_t p, std::uint32_t ri) {
                    if (const std::string* body = e.text(snapshot[p], ri)) {
                        builder.add_document(i, *body);
                    }
                });
                field.text = builder.finish();
                break;
            }
        }
        idx.fields_.push_back(std::move(field));
    }
    std::sort(idx.fields_.begin(), idx.fields_.end(),
              [](const IndexedField& a, const IndexedField& b) { return a.schema.name < b.schema.name; });
    return idx;
}

std::vector<TermCount> term_lookup(const NestedIndex& index, std::string_view field, std::string_view substring) {
    const auto& f = index.field(field);
    if (f.schema.value_kind != ValueKind::keyword || !f.schema.facetable) {
        throw SchemaError("field '" + std::string(field) + "' is not a facetable keyword field");
    }
    const std::string needle = normalize_term(substring);
    std::vector<TermCount> out;
    const auto& d = f.keywords;
    for (std::size_t i = 0; i < d.terms.size(); ++i) {
        if (d.normalized[i].find(needle) != std::string::npos) {
            out.push_back({d.terms[i], d.parent_counts[i]});
        }
    }
    return out;
}

std::vector<FullTextToken> tokenize_fulltext(std::string_view body) {
    const std::u32string chars = text::decode_utf8(body);
    std::vector<FullTextToken> out;
    std::size_t i = 0;
    std::u32string folded;
    while (i < chars.size()) {
        if (!text::is_word_char(chars[i])) {
            ++i;
            continue;
        }
        const std::size_t begin = i;
        folded.clear();
        while (i < chars.size() && text::is_word_char(chars[i])) {
            text::fold_char(chars[i], folded);
            ++i;
        }
        out.push_back({text::encode_utf8(folded), static_cast<std::uint32_t>(out.size()), begin, i});
    }
    return out;
}

Snapshot make_snapshot(std::vector<PatientRecord> patients, const std::vector<FieldSchema>& schema) {
    Snapshot s;
    s.index = build_index(patients, schema);
    s.patients = std::move(patients);
    return s;
}

// Snapshot file layout (all integers little-endian):
//   magic "COHORTSN" | u32 version | u64 payload size | u64 FNV-1a of payload | payload
// The payload holds the patient records as canonical JSON lines followed by
// every index array in declaration order. See docs/snapshot-format.md.
struct IndexCodec {
    static constexpr char kMagic[8] = {'C', 'O', 'H', 'O', 'R', 'T', 'S', 'N'};
    static constexpr std::uint32_t kVersion = 1;

    class Writer {
    public:
        void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
        void u32(std::uint32_t v) {
            for (int i = 0; i < 4; ++i) {
                u8(static_cast<std::uint8_t>(v >> (8 * i)));
            }
        }
        void u64(std::uint64_t v) {
            for (int i = 0; i < 8; ++i) {
                u8(static_cast<std::uint8_t>(v >> (8 * i)));
            }
        }
        void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
        void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
        void str(std::string_view s) {
            u64(s.size());
            out_.append(s);
        }
        void size(std::size_t n) { u64(n); }
        template <typename T, typename Fn>
        void vec(const std::vector<T>& v, Fn&& each) {
            size(v.size());
            for (const auto& x : v) {
                each(x);
            }
        }
        void u32s(const std::vector<std::uint32_t>& v) { vec(v, [this](auto x) { u32(x); }); }
        void strs(const std::vector<std::string>& v) { vec(v, [this](const auto& x) { str(x); }); }
        std::string take() { return std::move(out_); }

    private:
        std::string out_;
    };

    class Reader {
    public:
        explicit Reader(std::string_view in) : in_(in) {}
        std::uint8_t u8() {
            need(1);
            return static_cast<std::uint8_t>(in_[pos_++]);
        }
        std::uint32_t u32() {
            std::uint32_t v = 0;
            for (int i = 0; i < 4; ++i) {
                v |= static_cast<std::uint32_t>(u8()) << (8 * i);
            }
            return v;
        }
        std::uint64_t u64() {
            std::uint64_t v = 0;
            for (int i = 0; i < 8; ++i) {
                v |= static_cast<std::uint64_t>(u8()) << (8 * i);
            }
            return v;
        }
        std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
        double f64() { return std::bit_cast<double>(u64()); }
        std::size_t size() {
            const std::uint64_t n = u64();
            // Every element occupies at least one byte.
            if (n > in_.size() - pos_) {
                throw InputError("snapshot corrupt: implausible length");
            }
            return static_cast<std::size_t>(n);
        }
        std::string str() {
            const std::size_t n = size();
            need(n);
            std::string s(in_.substr(pos_, n));
            pos_ += n;
            return s;
        }
        template <typename T, typename Fn>
        void vec(std::vector<T>& v, Fn&& each) {
            const std::size_t n = size();
            v.clear();
            v.reserve(n);
            for (std::size_t i = 0; i < n; ++i) {
                v.push_back(each());
            }
        }
        void u32s(std::vector<std::uint32_t>& v) { vec(v, [this] { return u32(); }); }
        void strs(std::vector<std::string>& v) { vec(v, [this] { return str(); }); }
        bool done() const { return pos_ == in_.size(); }

    private:
        void need(std::size_t n) const {
            if (in_.size() - pos_ < n) {
                throw InputError("snapshot truncated");
            }
        }
        std::string_view in_;
        std::size_t pos_ = 0;
    };

    static std::uint64_t fnv1a(std::string_view bytes) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : bytes) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    static void put_schema(Writer& w, const FieldSchema& s) {
        w.str(s.name);
        w.u8(static_cast<std::uint8_t>(s.level));
        w.u8(static_cast<std::uint8_t>(s.kind));
        w.u8(static_cast<std::uint8_t>(s.value_kind));
        w.u8(s.facetable ? 1 : 0);
    }

    static FieldSchema get_schema(Reader& r) {
        FieldSchema s;
        s.name = r.str();
        const auto level = r.u8();
        const auto kind = r.u8();
        const auto vk = r.u8();
        if (level > 1 || kind >= kChildKindCount || vk > 3) {
            throw InputError("snapshot corrupt: bad schema entry");
        }
        s.level = static_cast<FieldLevel>(level);
        s.kind = static_cast<ChildKind>(kind);
        s.value_kind = static_cast<ValueKind>(vk);
        s.facetable = r.u8() != 0;
        return s;
    }

    static std::string encode(const Snapshot& snap) {
        Writer w;
        w.vec(snap.patients, [&](const PatientRecord& p) { w.str(to_json_line(p)); });
        const NestedIndex& x = snap.index;
        w.vec(x.schema_, [&](const FieldSchema& s) { put_schema(w, s); });
        w.strs(x.patient_ids_);
        w.u32s(x.parent_slots_);
        w.vec(x.parent_bits_, [&](std::uint64_t v) { w.u64(v); });
        w.u32s(x.slot_patient_);
        w.u32s(x.slot_instance_);
        for (const auto& k : x.kinds_) {
            w.u32s(k.offsets);
            w.u32s(k.slots);
            w.u32s(k.record_index);
            w.vec(k.days, [&](Day d) { w.i32(d); });
            w.vec(k.has_day, [&](std::uint8_t v) { w.u8(v); });
        }
        w.vec(x.fields_, [&](const IndexedField& f) {
            put_schema(w, f.schema);
            const auto& d = f.keywords;
            w.strs(d.terms);
            w.strs(d.normalized);
            w.vec(d.postings, [&](const std::vector<Slot>& p) { w.u32s(p); });
            w.u32s(d.parent_counts);
            w.u32s(d.value_offsets);
            w.u32s(d.value_ids);
            w.vec(f.numeric.values, [&](double v) { w.f64(v); });
            w.vec(f.numeric.present, [&](std::uint8_t v) { w.u8(v); });
            w.strs(f.text.terms);
            w.vec(f.text.postings, [&](const std::vector<TextPosting>& ps) {
                w.vec(ps, [&](const TextPosting& p) {
                    w.u32(p.instance);
                    w.u32s(p.positions);
                });
            });
        });
        w.strs(x.doc_ids_);
        w.strs(x.doc_bodies_);
        std::string payload = w.take();

        Writer header;
        for (char c : kMagic) {
            header.u8(static_cast<std::uint8_t>(c));
        }
        header.u32(kVersion);
        header.u64(payload.size());
        header.u64(fnv1a(payload));
        return header.take() + payload;
    }

    static Snapshot decode(std::string_view bytes) {
        if (bytes.size() < 28 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
            throw InputError("not a snapshot file");
        }
        Reader h(bytes.substr(8, 20));
        const std::uint32_t version = h.u32();
        if (version != kVersion) {
            throw InputError("unsupported snapshot version " + std::to_string(version));
        }
        const std::uint64_t size = h.u64();
        const std::uint64_t checksum = h.u64();
        const std::string_view payload = bytes.substr(28);
        if (payload.size() != size || fnv1a(payload) != checksum) {
            throw InputError("snapshot checksum mismatch");
        }
        Reader r(payload);
        Snapshot snap;
        r.vec(snap.patients, [&] { return patient_from_json_line(r.str()); });
        NestedIndex& x = snap.index;
        r.vec(x.schema_, [&] { return get_schema(r); });
        r.strs(x.patient_ids_);
        r.u32s(x.parent_slots_);
        r.vec(x.parent_bits_, [&] { return r.u64(); });
        r.u32s(x.slot_patient_);
        r.u32s(x.slot_instance_);
        for (auto& k : x.kinds_) {
            r.u32s(k.offsets);
            r.u32s(k.slots);
            r.u32s(k.record_index);
            r.vec(k.days, [&] { return r.i32(); });
            r.vec(k.has_day, [&] { return r.u8(); });
        }
        r.vec(x.fields_, [&] {
            IndexedField f;
            f.schema = get_schema(r);
            auto& d = f.keywords;
            r.strs(d.terms);
            r.strs(d.normalized);
            r.vec(d.postings, [&] {
                std::vector<Slot> p;
                r.u32s(p);
                return p;
            });
            r.u32s(d.parent_counts);
            r.u32s(d.value_offsets);
            r.u32s(d.value_ids);
            r.vec(f.numeric.values, [&] { return r.f64(); });
            r.vec(f.numeric.present, [&] { return r.u8(); });
            r.strs(f.text.terms);
            r.vec(f.text.postings, [&] {
                std::vector<TextPosting> ps;
                r.vec(ps, [&] {
                    TextPosting p;
                    p.instance = r.u32();
                    r.u32s(p.positions);
                    return p;
                });
                return ps;
            });
            return f;
        });
        r.strs(x.doc_ids_);
        r.strs(x.doc_bodies_);
        if (!r.done()) {
            throw InputError("snapshot has trailing bytes");
        }
        if (x.patient_ids_.size() != snap.patients.size()) {
            throw InputError("snapshot corrupt: patient count mismatch");
        }
        return snap;
    }
};

std::string serialize_snapshot(const Snapshot& snapshot) { return IndexCodec::encode(snapshot); }

Snapshot deserialize_snapshot(std::string_view bytes) { return IndexCodec::decode(bytes); }

void save_snapshot(const std::filesystem::path& path, const Snapshot& snapshot) {
    const std::string bytes = serialize_snapshot(snapshot);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw InputError("cannot write snapshot " + path.string());
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw InputError("cannot write snapshot " + path.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

Snapshot load_snapshot(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot open snapshot " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return deserialize_snapshot(buf.str());
}

}  // namespace cohort
