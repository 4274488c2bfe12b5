#include "cohort/record_json.hpp"

#include "cohort/errors.hpp"

namespace cohort {

using nlohmann::json;

namespace {

template <typename T>
void put(json& j, const char* key, const std::optional<T>& v) {
    if (v) {
        j[key] = *v;
    }
}

template <typename T>
void get(const json& j, const char* key, std::optional<T>& out) {
    if (auto it = j.find(key); it != j.end() && !it->is_null()) {
        out = it->get<T>();
    } else {
        out.reset();
    }
}

const json& require(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) {
        throw InputError(std::string("missing field '") + key + "'");
    }
    return *it;
}

std::string str(const json& j, const char* key) { return require(j, key).get<std::string>(); }

Day day_value(const json& v) {
    if (v.is_string()) {
        return days_since_epoch(parse_date(v.get<std::string>()));
    }
    return v.get<Day>();
}

Day day_field(const json& j) { return day_value(require(j, "day")); }

std::optional<CivilDate> date_field(const json& j, const char* key) {
    if (auto it = j.find(key); it != j.end() && !it->is_null()) {
        return parse_date(it->get<std::string>());
    }
    return std::nullopt;
}

}  // namespace

void to_json(json& j, const BiradsClass& v) { j = v.to_string(); }
void from_json(const json& j, BiradsClass& v) { v = BiradsClass::parse(j.get<std::string>()); }

void to_json(json& j, const Annotation& v) {
    j = json{{"annotation_type", to_string(v.annotation_type)},
             {"begin", v.begin},
             {"end", v.end},
             {"surface", v.surface},
             {"canonical_term", v.canonical_term},
             {"negated", v.negated},
             {"provenance", to_string(v.provenance)},
             {"confidence", v.confidence}};
    put(j, "code", v.code);
    put(j, "negation_trigger", v.negation_trigger);
}

void from_json(const json& j, Annotation& v) {
    v.annotation_type = parse_annotation_type(str(j, "annotation_type"));
    v.begin = require(j, "begin").get<std::size_t>();
    v.end = require(j, "end").get<std::size_t>();
    v.surface = str(j, "surface");
    v.canonical_term = str(j, "canonical_term");
    get(j, "code", v.code);
    v.negated = j.value("negated", false);
    get(j, "negation_trigger", v.negation_trigger);
    v.provenance = parse_annotation_source(str(j, "provenance"));
    v.confidence = j.value("confidence", 1.0);
}

void to_json(json& j, const DiagnosisEvent& v) {
    j = json{{"term", v.term}, {"day", v.day}, {"provenance", to_string(v.provenance)}};
    put(j, "icd10", v.icd10);
    put(j, "therapy_term", v.therapy_term);
    put(j, "therapy_code", v.therapy_code);
}

void from_json(const json& j, DiagnosisEvent& v) {
    v.term = str(j, "term");
    get(j, "icd10", v.icd10);
    get(j, "therapy_term", v.therapy_term);
    get(j, "therapy_code", v.therapy_code);
    v.day = day_field(j);
    v.provenance = parse_provenance(j.value("provenance", "database"));
}

void to_json(json& j, const LabEvent& v) {
    j = json{{"term", v.term},
             {"term_canon", v.term_canon},
             {"day", v.day},
             {"provenance", to_string(v.provenance)}};
    put(j, "numeric_value", v.numeric_value);
    put(j, "text_value", v.text_value);
    if (v.classification) {
        j["classification"] = to_string(*v.classification);
    }
}

void from_json(const json& j, LabEvent& v) {
    v.term = str(j, "term");
    v.term_canon = j.contains("term_canon") ? str(j, "term_canon") : canonical_key(v.term);
    v.day = day_field(j);
    get(j, "numeric_value", v.numeric_value);
    get(j, "text_value", v.text_value);
    if (auto it = j.find("classification"); it != j.end() && !it->is_null()) {
        v.classification = parse_lab_class(it->get<std::string>());
    } else {
        v.classification.reset();
    }
    v.provenance = parse_provenance(j.value("provenance", "database"));
}

void to_json(json& j, const MedicationEvent& v) {
    j = json{{"term", v.term}, {"day", v.day}, {"provenance", to_string(v.provenance)}};
    put(j, "atc_code", v.atc_code);
}

void from_json(const json& j, MedicationEvent& v) {
    v.term = str(j, "term");
    get(j, "atc_code", v.atc_code);
    v.day = day_field(j);
    v.provenance = parse_provenance(j.value("provenance", "database"));
}

void to_json(json& j, const ExaminationEvent& v) {
    j = json{{"method", to_string(v.method)}, {"day", v.day}};
    put(j, "physician", v.physician);
    put(j, "finding_text_ref", v.finding_text_ref);
    put(j, "evaluation_text_ref", v.evaluation_text_ref);
    put(j, "birads", v.birads);
}

void from_json(const json& j, ExaminationEvent& v) {
    v.method = parse_exam_method(str(j, "method"));
    v.day = day_field(j);
    get(j, "physician", v.physician);
    get(j, "finding_text_ref", v.finding_text_ref);
    get(j, "evaluation_text_ref", v.evaluation_text_ref);
    get(j, "birads", v.birads);
}

void to_json(json& j, const EndpointEvent& v) {
    j = json{{"kind", to_string(v.kind)}, {"day", v.day}, {"ordinal", v.ordinal}};
}

void from_json(const json& j, EndpointEvent& v) {
    v.kind = parse_endpoint_kind(str(j, "kind"));
    v.day = day_field(j);
    v.ordinal = j.value("ordinal", 0);
}

void to_json(json& j, const TextDocument& v) {
    j = json{{"doc_id", v.doc_id},
             {"doc_type", to_string(v.doc_type)},
             {"body", v.body},
             {"annotations", v.annotations}};
    put(j, "day", v.day);
}

void from_json(const json& j, TextDocument& v) {
    v.doc_id = str(j, "doc_id");
    v.doc_type = parse_doc_type(j.value("doc_type", "finding"));
    if (auto it = j.find("day"); it != j.end() && !it->is_null()) {
        v.day = day_value(*it);
    } else {
        v.day.reset();
    }
    v.body = j.value("body", "");
    v.annotations = j.value("annotations", std::vector<Annotation>{});
}

void to_json(json& j, const PatientRecord& v) {
    j = json{{"patient_id", v.patient_id},
             {"sex", to_string(v.sex)},
             {"deceased", v.deceased},
             {"blood_group", to_string(v.blood_group)},
             {"diagnoses", v.diagnoses},
             {"labs", v.labs},
             {"medications", v.medications},
             {"examinations", v.examinations},
             {"endpoints", v.endpoints},
             {"documents", v.documents}};
    if (v.birth_date) {
        j["birth_date"] = format_date(*v.birth_date);
    }
    if (v.last_contact) {
        j["last_contact"] = format_date(*v.last_contact);
    }
    put(j, "height_cm", v.height_cm);
}

void from_json(const json& j, PatientRecord& v) {
    v.patient_id = str(j, "patient_id");
    v.sex = parse_sex(j.value("sex", "unknown"));
    v.birth_date = date_field(j, "birth_date");
    v.deceased = j.value("deceased", false);
    v.blood_group = parse_blood_group(j.value("blood_group", "unknown"));
    get(j, "height_cm", v.height_cm);
    v.last_contact = date_field(j, "last_contact");
    v.diagnoses = j.value("diagnoses", std::vector<DiagnosisEvent>{});
    v.labs = j.value("labs", std::vector<LabEvent>{});
    v.medications = j.value("medications", std::vector<MedicationEvent>{});
    v.examinations = j.value("examinations", std::vector<ExaminationEvent>{});
    v.endpoints = j.value("endpoints", std::vector<EndpointEvent>{});
    v.documents = j.value("documents", std::vector<TextDocument>{});
    const bool missing_ordinals = std::any_of(v.endpoints.begin(), v.endpoints.end(),
                                              [](const auto& e) { return e.ordinal <= 0; });
    if (missing_ordinals) {
        assign_endpoint_ordinals(v.endpoints);
    }
}

std::string to_json_line(const PatientRecord& patient) {
    return json(patient).dump(-1, ' ', false, json::error_handler_t::replace);
}

PatientRecord patient_from_json_line(std::string_view line) {
    try {
        auto patient = json::parse(line).get<PatientRecord>();
        validate(patient);
        return patient;
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed patient record: ") + e.what());
    }
}

}  // namespace cohort
