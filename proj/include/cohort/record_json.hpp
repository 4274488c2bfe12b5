#pragma once

// JSON mapping of the record hierarchy. Field names follow the C++ members;
// calendar dates are ISO-8601 strings, event days are integers (an ISO date
// string is accepted on input). Absent optionals are omitted on output.

#include <nlohmann/json.hpp>

#include "cohort/datamodel.hpp"

namespace cohort {

void to_json(nlohmann::json& j, const BiradsClass& v);
void from_json(const nlohmann::json& j, BiradsClass& v);
void to_json(nlohmann::json& j, const Annotation& v);
void from_json(const nlohmann::json& j, Annotation& v);
void to_json(nlohmann::json& j, const DiagnosisEvent& v);
void from_json(const nlohmann::json& j, DiagnosisEvent& v);
void to_json(nlohmann::json& j, const LabEvent& v);
void from_json(const nlohmann::json& j, LabEvent& v);
void to_json(nlohmann::json& j, const MedicationEvent& v);
void from_json(const nlohmann::json& j, MedicationEvent& v);
void to_json(nlohmann::json& j, const ExaminationEvent& v);
void from_json(const nlohmann::json& j, ExaminationEvent& v);
void to_json(nlohmann::json& j, const EndpointEvent& v);
void from_json(const nlohmann::json& j, EndpointEvent& v);
void to_json(nlohmann::json& j, const TextDocument& v);
void from_json(const nlohmann::json& j, TextDocument& v);
void to_json(nlohmann::json& j, const PatientRecord& v);
// Fills missing lab term_canon and endpoint ordinals. Does not validate
// (document stubs may still be waiting for their letter bodies).
void from_json(const nlohmann::json& j, PatientRecord& v);

// One compact JSON object per line (no trailing newline).
std::string to_json_line(const PatientRecord& patient);
// Parses and validates; throws InputError.
PatientRecord patient_from_json_line(std::string_view line);

}  // namespace cohort
