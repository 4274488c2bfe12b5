#pragma once

// Record hierarchy shared by every module: a patient is the root document,
// events are its children, annotations and scalar fields sit below them.
// Time is whole days since 1900-01-01 (day 0).

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cohort {

using Day = std::int32_t;

struct CivilDate {
    int year = 1900;
    int month = 1;
    int day = 1;

    auto operator<=>(const CivilDate&) const = default;
};

// Proleptic Gregorian day count with 1900-01-01 = 0. Throws RangeError for
// dates outside 1900..2100 or invalid month/day combinations.
Day days_since_epoch(const CivilDate& date);
CivilDate date_from_days(Day day);

// Parses YYYY-MM-DD (a trailing time part is accepted and discarded) or the
// German DD.MM.YYYY form. Throws InputError on malformed text.
CivilDate parse_date(std::string_view text);
std::string format_date(const CivilDate& date);
std::string format_day(Day day);

// Lowercases, folds umlauts and ß, collapses whitespace runs to one space
// and trims surrounding whitespace/punctuation. Idempotent.
std::string normalize_term(std::string_view raw);

// Identifier form used for lab and code keys: normalize_term with
// punctuation removed and whitespace replaced by '_'
// ("KreatininHP (mg/dl)" -> "kreatininhp_mgdl").
std::string canonical_key(std::string_view raw);

enum class Sex : std::uint8_t { female, male, unknown };
enum class BloodGroup : std::uint8_t { a, b, ab, zero, unknown };
enum class Provenance : std::uint8_t { database, extraction };
enum class LabClass : std::uint8_t { low, normal, high, unclassified };
enum class EndpointKind : std::uint8_t {
    basic_disease,
    first_dialysis,
    transplantation,
    rejection,
    failure,
    death
};
enum class ExamMethod : std::uint8_t { sonography, mammography, mrt, ct, xray, other };
enum class DocType : std::uint8_t { finding, visit, clinical_report, progress_report, evaluation };
enum class AnnotationType : std::uint8_t {
    diagnosis,
    disorder,
    examination,
    procedure,
    medication,
    drug,
    lab_value,
    birads,
    exam_method
};
enum class AnnotationSource : std::uint8_t { system_dictionary, user_dictionary, rule };

std::string_view to_string(Sex v);
std::string_view to_string(BloodGroup v);
std::string_view to_string(Provenance v);
std::string_view to_string(LabClass v);
std::string_view to_string(EndpointKind v);
std::string_view to_string(ExamMethod v);
std::string_view to_string(DocType v);
std::string_view to_string(AnnotationType v);
std::string_view to_string(AnnotationSource v);

// Inverse of to_string; throw InputError on unknown names.
Sex parse_sex(std::string_view s);
BloodGroup parse_blood_group(std::string_view s);
Provenance parse_provenance(std::string_view s);
LabClass parse_lab_class(std::string_view s);
EndpointKind parse_endpoint_kind(std::string_view s);
ExamMethod parse_exam_method(std::string_view s);
DocType parse_doc_type(std::string_view s);
AnnotationType parse_annotation_type(std::string_view s);
AnnotationSource parse_annotation_source(std::string_view s);

inline constexpr EndpointKind kAllEndpointKinds[] = {
    EndpointKind::basic_disease, EndpointKind::first_dialysis, EndpointKind::transplantation,
    EndpointKind::rejection,     EndpointKind::failure,        EndpointKind::death};
inline constexpr AnnotationType kAllAnnotationTypes[] = {
    AnnotationType::diagnosis,  AnnotationType::disorder, AnnotationType::examination,
    AnnotationType::procedure,  AnnotationType::medication, AnnotationType::drug,
    AnnotationType::lab_value,  AnnotationType::birads,  AnnotationType::exam_method};

// BIRADS category 0..6 with optional suffix a..c ("4b").
struct BiradsClass {
    int category = 0;
    std::optional<char> suffix;

    std::string to_string() const;
    static BiradsClass parse(std::string_view s);
    bool operator==(const BiradsClass&) const = default;
};

struct Annotation {
    AnnotationType annotation_type = AnnotationType::diagnosis;
    // Offsets are Unicode scalar value indices into the source text.
    std::size_t begin = 0;
    std::size_t end = 0;
    std::string surface;
    std::string canonical_term;
    std::optional<std::string> code;
    bool negated = false;
    std::optional<std::string> negation_trigger;
    AnnotationSource provenance = AnnotationSource::system_dictionary;
    double confidence = 1.0;

    bool operator==(const Annotation&) const = default;
};

struct DiagnosisEvent {
    std::string term;
    std::optional<std::string> icd10;
    std::optional<std::string> therapy_term;
    std::optional<std::string> therapy_code;
    Day day = 0;
    Provenance provenance = Provenance::database;

    bool operator==(const DiagnosisEvent&) const = default;
};

struct LabEvent {
    std::string term;
    std::string term_canon;
    Day day = 0;
    std::optional<double> numeric_value;
    std::optional<std::string> text_value;
    std::optional<LabClass> classification;
    Provenance provenance = Provenance::database;

    bool operator==(const LabEvent&) const = default;
};

struct MedicationEvent {
    std::string term;
    std::optional<std::string> atc_code;
    Day day = 0;
    Provenance provenance = Provenance::database;

    bool operator==(const MedicationEvent&) const = default;
};

struct ExaminationEvent {
    ExamMethod method = ExamMethod::other;
    Day day = 0;
    std::optional<std::string> physician;
    std::optional<std::string> finding_text_ref;
    std::optional<std::string> evaluation_text_ref;
    std::optional<BiradsClass> birads;

    bool operator==(const ExaminationEvent&) const = default;
};

struct EndpointEvent {
    EndpointKind kind = EndpointKind::basic_disease;
    Day day = 0;
    int ordinal = 1;

    bool operator==(const EndpointEvent&) const = default;
};

struct TextDocument {
    std::string doc_id;
    DocType doc_type = DocType::finding;
    std::optional<Day> day;
    std::string body;
    std::vector<Annotation> annotations;

    bool operator==(const TextDocument&) const = default;
};

struct PatientRecord {
    std::string patient_id;
    Sex sex = Sex::unknown;
    // Optional: CSV exports may lack it; never invented.
    std::optional<CivilDate> birth_date;
    bool deceased = false;
    BloodGroup blood_group = BloodGroup::unknown;
    std::optional<double> height_cm;
    std::optional<CivilDate> last_contact;
    std::vector<DiagnosisEvent> diagnoses;
    std::vector<LabEvent> labs;
    std::vector<MedicationEvent> medications;
    std::vector<ExaminationEvent> examinations;
    std::vector<EndpointEvent> endpoints;
    std::vector<TextDocument> documents;

    bool operator==(const PatientRecord&) const = default;
};

// Sorts endpoints by (day, kind) and numbers each kind 1, 2, ... in day order.
void assign_endpoint_ordinals(std::vector<EndpointEvent>& endpoints);
bool endpoint_ordinals_consistent(const std::vector<EndpointEvent>& endpoints);

// Completed years between birth date and last contact, when both are known.
std::optional<int> age_at_last_contact(const PatientRecord& patient);

// Checks the record invariants; throws InputError naming the first violation.
void validate(const PatientRecord& patient);

// Orders every child list by (day, id). Events without an id keep their
// relative input order among equal days.
void sort_children(PatientRecord& patient);

}  // namespace cohort
