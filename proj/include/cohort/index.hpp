#pragma once

// Immutable nested-document index. Each patient occupies one contiguous block
// of slots: its children grouped by kind (diagnoses, labs, medications,
// examinations, endpoints, documents), each group in (day, id) order,
// followed by the patient's own slot.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cohort/datamodel.hpp"

namespace cohort {

enum class ChildKind : std::uint8_t { diagnosis, lab, medication, examination, endpoint, document };
inline constexpr std::size_t kChildKindCount = 6;
inline constexpr ChildKind kAllChildKinds[] = {ChildKind::diagnosis,   ChildKind::lab,
                                               ChildKind::medication,  ChildKind::examination,
                                               ChildKind::endpoint,    ChildKind::document};

std::string_view to_string(ChildKind kind);
ChildKind parse_child_kind(std::string_view s);

enum class FieldLevel : std::uint8_t { patient, child };
enum class ValueKind : std::uint8_t { keyword, numeric, date_day, fulltext };

std::string_view to_string(ValueKind kind);

struct FieldSchema {
    std::string name;
    FieldLevel level = FieldLevel::patient;
    ChildKind kind = ChildKind::diagnosis;  // meaningful for child fields only
    ValueKind value_kind = ValueKind::keyword;
    bool facetable = false;

    bool operator==(const FieldSchema&) const = default;
};

// Every field the builder can populate from a PatientRecord.
std::vector<FieldSchema> default_schema();

// Name of the date_day field holding a child kind's day ("lab_days", ...).
std::string_view day_field(ChildKind kind);

using Slot = std::uint32_t;

// Keyword field. Terms are keyed by raw value and ordered by
// (normalize_term(raw), raw), so spelling variants stay distinct but sort
// next to each other.
struct TermDictionary {
    std::vector<std::string> terms;
    std::vector<std::string> normalized;
    std::vector<std::vector<Slot>> postings;     // ascending slots
    std::vector<std::uint32_t> parent_counts;    // unique patients per term
    // Term ids per instance (patient ordinal or child ordinal), CSR layout.
    std::vector<std::uint32_t> value_offsets;
    std::vector<std::uint32_t> value_ids;

    std::optional<std::uint32_t> find(std::string_view raw) const;
    std::span<const std::uint32_t> values_of(std::uint32_t instance) const {
        return {value_ids.data() + value_offsets[instance],
                value_ids.data() + value_offsets[instance + 1]};
    }

    bool operator==(const TermDictionary&) const = default;
};

// Dense per-instance numeric column; absent values have present == 0.
struct NumericColumn {
    std::vector<double> values;
    std::vector<std::uint8_t> present;

    std::optional<double> get(std::uint32_t instance) const {
        if (present[instance] == 0) {
            return std::nullopt;
        }
        return values[instance];
    }

    bool operator==(const NumericColumn&) const = default;
};

struct TextPosting {
    std::uint32_t instance = 0;  // document ordinal
    std::vector<std::uint32_t> positions;

    bool operator==(const TextPosting&) const = default;
};

// Full-text field: bytewise sorted terms with positional postings.
struct FullTextField {
    std::vector<std::string> terms;
    std::vector<std::vector<TextPosting>> postings;

    std::optional<std::uint32_t> find(std::string_view term) const;

    bool operator==(const FullTextField&) const = default;
};

struct IndexedField {
    FieldSchema schema;
    TermDictionary keywords;  // value_kind == keyword
    NumericColumn numeric;    // numeric / date_day
    FullTextField text;       // fulltext

    bool operator==(const IndexedField&) const = default;
};

struct BuildLog {
    std::vector<std::string> skipped;
};

class NestedIndex {
public:
    NestedIndex() = default;

    std::size_t patient_count() const { return patient_ids_.size(); }
    std::size_t slot_count() const { return slot_patient_.size(); }
    std::size_t child_count() const { return slot_count() - patient_count(); }

    const std::string& patient_id(std::uint32_t patient) const { return patient_ids_[patient]; }
    const std::vector<std::string>& patient_ids() const { return patient_ids_; }
    std::optional<std::uint32_t> find_patient(std::string_view id) const;

    Slot parent_slot(std::uint32_t patient) const { return parent_slots_[patient]; }
    // First slot of the patient's block (equals parent_slot when childless).
    Slot block_begin(std::uint32_t patient) const {
        return patient == 0 ? 0 : parent_slots_[patient - 1] + 1;
    }
    bool is_parent(Slot slot) const { return (parent_bits_[slot / 64] >> (slot % 64)) & 1U; }
    std::uint32_t slot_patient(Slot slot) const { return slot_patient_[slot]; }
    // Ordinal of the slot within its level (patient ordinal or child ordinal).
    std::uint32_t slot_instance(Slot slot) const { return slot_instance_[slot]; }

    // Children of one kind form a contiguous ordinal range per patient.
    std::size_t instance_count(ChildKind kind) const { return kind_data(kind).slots.size(); }
    std::uint32_t first_instance(ChildKind kind, std::uint32_t patient) const {
        return kind_data(kind).offsets[patient];
    }
    std::uint32_t end_instance(ChildKind kind, std::uint32_t patient) const {
        return kind_data(kind).offsets[patient + 1];
    }
    Slot instance_slot(ChildKind kind, std::uint32_t instance) const {
        return kind_data(kind).slots[instance];
    }
    std::uint32_t instance_patient(ChildKind kind, std::uint32_t instance) const {
        return slot_patient_[kind_data(kind).slots[instance]];
    }
    // Position of the child in the source record's list.
    std::uint32_t instance_record_index(ChildKind kind, std::uint32_t instance) const {
        return kind_data(kind).record_index[instance];
    }
    std::optional<Day> instance_day(ChildKind kind, std::uint32_t instance) const;

    const std::vector<FieldSchema>& schema() const { return schema_; }
    const IndexedField* find_field(std::string_view name) const;
    // Throws SchemaError for unknown names.
    const IndexedField& field(std::string_view name) const;

    // Stored document fields, by document ordinal.
    const std::string& doc_id(std::uint32_t instance) const { return doc_ids_[instance]; }
    const std::string& doc_body(std::uint32_t instance) const { return doc_bodies_[instance]; }

    bool operator==(const NestedIndex&) const = default;

    friend NestedIndex build_index(const std::vector<PatientRecord>&, const std::vector<FieldSchema>&,
                                   BuildLog*);
    friend struct IndexCodec;

private:
    struct KindData {
        std::vector<std::uint32_t> offsets;  // size patient_count + 1
        std::vector<Slot> slots;
        std::vector<std::uint32_t> record_index;
        std::vector<Day> days;
        std::vector<std::uint8_t> has_day;

        bool operator==(const KindData&) const = default;
    };

    const KindData& kind_data(ChildKind kind) const { return kinds_[static_cast<std::size_t>(kind)]; }

    std::vector<FieldSchema> schema_;
    std::vector<std::string> patient_ids_;
    std::vector<Slot> parent_slots_;
    std::vector<std::uint64_t> parent_bits_;
    std::vector<std::uint32_t> slot_patient_;
    std::vector<std::uint32_t> slot_instance_;
    KindData kinds_[kChildKindCount];
    std::vector<IndexedField> fields_;  // sorted by name
    std::vector<std::string> doc_ids_;
    std::vector<std::string> doc_bodies_;
};

// Throws DuplicateError naming a repeated patient_id. Schema entries whose
// names the builder does not know are skipped and reported in `log`.
NestedIndex build_index(const std::vector<PatientRecord>& snapshot,
                        const std::vector<FieldSchema>& schema = default_schema(),
                        BuildLog* log = nullptr);

struct TermCount {
    std::string term;
    std::uint32_t count = 0;

    bool operator==(const TermCount&) const = default;
};

// Terms of a facetable keyword field whose normalized form contains
// normalize_term(substring), with unrestricted patient counts, in
// dictionary (alphabetical) order.
std::vector<TermCount> term_lookup(const NestedIndex& index, std::string_view field,
                                   std::string_view substring);

struct FullTextToken {
    std::string token;
    std::uint32_t position = 0;
    // Code point offsets of the token in the source text.
    std::size_t begin = 0;
    std::size_t end = 0;

    bool operator==(const FullTextToken&) const = default;
};

// Folded word tokens split on anything that is not a letter or digit.
std::vector<FullTextToken> tokenize_fulltext(std::string_view body);

// Patients plus their index: the unit the CLI writes and the server loads.
struct Snapshot {
    std::vector<PatientRecord> patients;
    NestedIndex index;

    bool operator==(const Snapshot&) const = default;
};

Snapshot make_snapshot(std::vector<PatientRecord> patients,
                       const std::vector<FieldSchema>& schema = default_schema());

// Single-file binary format, little-endian, documented in docs/snapshot-format.md.
void save_snapshot(const std::filesystem::path& path, const Snapshot& snapshot);
Snapshot load_snapshot(const std::filesystem::path& path);
std::string serialize_snapshot(const Snapshot& snapshot);
Snapshot deserialize_snapshot(std::string_view bytes);

}  // namespace cohort
