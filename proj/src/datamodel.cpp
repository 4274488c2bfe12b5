#include "cohort/datamodel.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <limits>
#include <tuple>
#include <regex>

#include "cohort/errors.hpp"
#include "cohort/text.hpp"

namespace cohort {

namespace {

namespace chr = std::chrono;

constexpr chr::sys_days kEpoch = chr::year{1900} / chr::January / 1;

int parse_int(std::string_view s, std::string_view what) {
    int value = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) {
        throw InputError("invalid " + std::string(what) + " '" + std::string(s) + "'");
    }
    return value;
}

bool is_trim_punct(char32_t c) {
    switch (c) {
        case '.': case ',': case ';': case ':': case '!': case '?': case '-': case '_':
        case '"': case '\'': case '`': case '*': case '/': case '\\':
        case U'„': case U'“': case U'”': case U'‚': case U'‘': case U'’': case U'«':
        case U'»': case U'–': case U'—':
            return true;
        default:
            return false;
    }
}

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::array<std::string_view, N>& names,
                std::string_view what) {
    for (std::size_t i = 0; i < N; ++i) {
        if (names[i] == s) {
            return static_cast<Enum>(i);
        }
    }
    throw InputError("unknown " + std::string(what) + " '" + std::string(s) + "'");
}

constexpr std::array<std::string_view, 3> kSexNames{"F", "M", "unknown"};
constexpr std::array<std::string_view, 5> kBloodNames{"A", "B", "AB", "0", "unknown"};
constexpr std::array<std::string_view, 2> kProvenanceNames{"database", "extraction"};
constexpr std::array<std::string_view, 4> kLabClassNames{"low", "normal", "high",
                                                         "unclassified"};
constexpr std::array<std::string_view, 6> kEndpointNames{
    "basic_disease", "first_dialysis", "transplantation", "rejection", "failure", "death"};
constexpr std::array<std::string_view, 6> kExamNames{"sonography", "mammography", "mrt",
                                                     "ct",         "xray",        "other"};
constexpr std::array<std::string_view, 5> kDocTypeNames{
    "finding", "visit", "clinical_report", "progress_report", "evaluation"};
constexpr std::array<std::string_view, 9> kAnnotationTypeNames{
    "diagnosis", "disorder", "examination", "procedure",  "medication",
    "drug",      "lab_value", "birads",     "exam_method"};
constexpr std::array<std::string_view, 3> kSourceNames{"system_dictionary", "user_dictionary",
                                                       "rule"};

}  // namespace

Day days_since_epoch(const CivilDate& date) {
    if (date.year < 1900 || date.year > 2100) {
        throw RangeError("date " + format_date(date) + " outside 1900..2100");
    }
    const chr::year_month_day ymd{chr::year{date.year},
                                  chr::month{static_cast<unsigned>(date.month)},
                                  chr::day{static_cast<unsigned>(date.day)}};
    if (!ymd.ok()) {
        throw RangeError("invalid calendar date " + format_date(date));
    }
    return static_cast<Day>((chr::sys_days{ymd} - kEpoch).count());
}

CivilDate date_from_days(Day day) {
    const chr::year_month_day ymd{kEpoch + chr::days{day}};
    return CivilDate{static_cast<int>(ymd.year()), static_cast<int>(unsigned(ymd.month())),
                     static_cast<int>(unsigned(ymd.day()))};
}

CivilDate parse_date(std::string_view text) {
    // Sub-day precision is discarded.
    if (text.size() >= 10 && text[4] == '-' && text[7] == '-' &&
        (text.size() == 10 || text[10] == 'T' || text[10] == ' ')) {
        CivilDate d{parse_int(text.substr(0, 4), "year"), parse_int(text.substr(5, 2), "month"),
                    parse_int(text.substr(8, 2), "day")};
        days_since_epoch(d);
        return d;
    }
    if (text.size() >= 10 && text[2] == '.' && text[5] == '.' &&
        (text.size() == 10 || text[10] == ' ')) {
        CivilDate d{parse_int(text.substr(6, 4), "year"), parse_int(text.substr(3, 2), "month"),
                    parse_int(text.substr(0, 2), "day")};
        days_since_epoch(d);
        return d;
    }
    throw InputError("unparseable date '" + std::string(text) + "'");
}

std::string format_date(const CivilDate& date) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", date.year, date.month, date.day);
    return buf;
}

std::string format_day(Day day) { return format_date(date_from_days(day)); }

std::string normalize_term(std::string_view raw) {
    const std::u32string folded = text::fold(text::decode_utf8(raw));
    std::u32string collapsed;
    collapsed.reserve(folded.size());
    bool pending_space = false;
    for (char32_t c : folded) {
        if (text::is_space(c)) {
            pending_space = true;
            continue;
        }
        if (pending_space && !collapsed.empty()) {
            collapsed.push_back(' ');
        }
        pending_space = false;
        collapsed.push_back(c);
    }
    std::size_t b = 0;
    std::size_t e = collapsed.size();
    auto trimmable = [](char32_t c) { return c == ' ' || is_trim_punct(c); };
    while (b < e && trimmable(collapsed[b])) {
        ++b;
    }
    while (e > b && trimmable(collapsed[e - 1])) {
        --e;
    }
    return text::encode_utf8(std::u32string_view(collapsed).substr(b, e - b));
}

std::string canonical_key(std::string_view raw) {
    const std::u32string folded = text::fold(text::decode_utf8(raw));
    std::u32string out;
    bool pending_sep = false;
    for (char32_t c : folded) {
        if (text::is_space(c)) {
            pending_sep = true;
        } else if (text::is_word_char(c)) {
            if (pending_sep && !out.empty()) {
                out.push_back('_');
            }
            pending_sep = false;
            out.push_back(c);
        }
    }
    return text::encode_utf8(out);
}

std::string_view to_string(Sex v) { return kSexNames[static_cast<std::size_t>(v)]; }
std::string_view to_string(BloodGroup v) { return kBloodNames[static_cast<std::size_t>(v)]; }
std::string_view to_string(Provenance v) {
    return kProvenanceNames[static_cast<std::size_t>(v)];
}
std::string_view to_string(LabClass v) { return kLabClassNames[static_cast<std::size_t>(v)]; }
std::string_view to_string(EndpointKind v) {
    return kEndpointNames[static_cast<std::size_t>(v)];
}
std::string_view to_string(ExamMethod v) { return kExamNames[static_cast<std::size_t>(v)]; }
std::string_view to_string(DocType v) { return kDocTypeNames[static_cast<std::size_t>(v)]; }
std::string_view to_string(AnnotationType v) {
    return kAnnotationTypeNames[static_cast<std::size_t>(v)];
}
std::string_view to_string(AnnotationSource v) {
    return kSourceNames[static_cast<std::size_t>(v)];
}

Sex parse_sex(std::string_view s) { return parse_enum<Sex>(s, kSexNames, "sex"); }
BloodGroup parse_blood_group(std::string_view s) {
    return parse_enum<BloodGroup>(s, kBloodNames, "blood group");
}
Provenance parse_provenance(std::string_view s) {
    return parse_enum<Provenance>(s, kProvenanceNames, "provenance");
}
LabClass parse_lab_class(std::string_view s) {
    return parse_enum<LabClass>(s, kLabClassNames, "lab classification");
}
EndpointKind parse_endpoint_kind(std::string_view s) {
    return parse_enum<EndpointKind>(s, kEndpointNames, "endpoint kind");
}
ExamMethod parse_exam_method(std::string_view s) {
    return parse_enum<ExamMethod>(s, kExamNames, "examination method");
}
DocType parse_doc_type(std::string_view s) {
    return parse_enum<DocType>(s, kDocTypeNames, "document type");
}
AnnotationType parse_annotation_type(std::string_view s) {
    return parse_enum<AnnotationType>(s, kAnnotationTypeNames, "annotation type");
}
AnnotationSource parse_annotation_source(std::string_view s) {
    return parse_enum<AnnotationSource>(s, kSourceNames, "annotation provenance");
}

std::string BiradsClass::to_string() const {
    std::string s = std::to_string(category);
    if (suffix) {
        s.push_back(*suffix);
    }
    return s;
}

BiradsClass BiradsClass::parse(std::string_view s) {
    if (s.empty() || s.size() > 2 || s[0] < '0' || s[0] > '6') {
        throw InputError("invalid BIRADS class '" + std::string(s) + "'");
    }
    BiradsClass b;
    b.category = s[0] - '0';
    if (s.size() == 2) {
        const char suffix = static_cast<char>(std::tolower(static_cast<unsigned char>(s[1])));
        if (suffix < 'a' || suffix > 'c') {
            throw InputError("invalid BIRADS suffix '" + std::string(s) + "'");
        }
        b.suffix = suffix;
    }
    return b;
}

void assign_endpoint_ordinals(std::vector<EndpointEvent>& endpoints) {
    std::stable_sort(endpoints.begin(), endpoints.end(),
                     [](const EndpointEvent& a, const EndpointEvent& b) {
                         return std::tie(a.day, a.kind) < std::tie(b.day, b.kind);
                     });
    std::array<int, std::size(kAllEndpointKinds)> next{};
    for (auto& e : endpoints) {
        e.ordinal = ++next[static_cast<std::size_t>(e.kind)];
    }
}

bool endpoint_ordinals_consistent(const std::vector<EndpointEvent>& endpoints) {
    auto copy = endpoints;
    assign_endpoint_ordinals(copy);
    auto sorted = endpoints;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const EndpointEvent& a, const EndpointEvent& b) {
                         return std::tie(a.day, a.kind, a.ordinal) <
                                std::tie(b.day, b.kind, b.ordinal);
                     });
    return copy == sorted;
}

std::optional<int> age_at_last_contact(const PatientRecord& patient) {
    if (!patient.birth_date || !patient.last_contact) {
        return std::nullopt;
    }
    const auto& b = *patient.birth_date;
    const auto& l = *patient.last_contact;
    int age = l.year - b.year;
    if (std::tie(l.month, l.day) < std::tie(b.month, b.day)) {
        --age;
    }
    return age;
}

void validate(const PatientRecord& p) {
    auto fail = [&](const std::string& what) {
        throw InputError("patient '" + p.patient_id + "': " + what);
    };
    if (p.patient_id.empty()) {
        throw InputError("patient_id must be non-empty");
    }
    if (p.height_cm && *p.height_cm < 0) {
        fail("height_cm must be non-negative");
    }
    static const std::regex icd_pattern(R"([A-Z][0-9]{2}(\.[0-9]+)?)");
    for (const auto& d : p.diagnoses) {
        if (d.term.empty()) {
            fail("diagnosis term must be non-empty");
        }
        if (d.icd10 && !std::regex_match(*d.icd10, icd_pattern)) {
            fail("malformed ICD-10 code '" + *d.icd10 + "'");
        }
    }
    for (const auto& l : p.labs) {
        if (l.numeric_value.has_value() == l.text_value.has_value()) {
            fail("lab '" + l.term + "' needs exactly one of numeric_value/text_value");
        }
        if (l.term_canon != canonical_key(l.term)) {
            fail("lab '" + l.term + "' has non-canonical term_canon '" + l.term_canon + "'");
        }
    }
    for (const auto& e : p.examinations) {
        if (e.birads && (e.birads->category < 0 || e.birads->category > 6)) {
            fail("BIRADS category out of range");
        }
    }
    if (!endpoint_ordinals_consistent(p.endpoints)) {
        fail("endpoint ordinals are not consecutive in day order");
    }
    for (const auto& d : p.documents) {
        if (d.doc_id.empty()) {
            fail("document without doc_id");
        }
        if (d.body.empty()) {
            fail("document '" + d.doc_id + "' has an empty body");
        }
    }
}

void sort_children(PatientRecord& p) {
    auto by_day = [](const auto& a, const auto& b) { return a.day < b.day; };
    std::stable_sort(p.diagnoses.begin(), p.diagnoses.end(), by_day);
    std::stable_sort(p.labs.begin(), p.labs.end(), by_day);
    std::stable_sort(p.medications.begin(), p.medications.end(), by_day);
    std::stable_sort(p.examinations.begin(), p.examinations.end(), by_day);
    assign_endpoint_ordinals(p.endpoints);
    std::sort(p.documents.begin(), p.documents.end(),
              [](const TextDocument& a, const TextDocument& b) {
                  // Undated documents sort after dated ones.
                  const Day da = a.day.value_or(std::numeric_limits<Day>::max());
                  const Day db = b.day.value_or(std::numeric_limits<Day>::max());
                  return std::tie(da, a.doc_id) < std::tie(db, b.doc_id);
              });
}

}  // namespace cohort
