#pragma once

// Small hand-built records for tests.

#include <string>

#include "cohort/datamodel.hpp"

namespace fixture {

using namespace cohort;

inline PatientRecord patient(std::string id) {
    PatientRecord p;
    p.patient_id = std::move(id);
    return p;
}

inline void diagnosis(PatientRecord& p, std::string term, Day day, std::optional<std::string> icd = {}) {
    p.diagnoses.push_back({std::move(term), std::move(icd), {}, {}, day, Provenance::database});
}

inline void lab(PatientRecord& p, std::string term, Day day, double value) {
    const std::string canon = canonical_key(term);
    p.labs.push_back({std::move(term), canon, day, value, {}, {}, Provenance::database});
}

inline void endpoint(PatientRecord& p, EndpointKind kind, Day day) {
    p.endpoints.push_back({kind, day, 0});
    assign_endpoint_ordinals(p.endpoints);
}

inline void document(PatientRecord& p, std::string id, std::string body, std::optional<Day> day = {}) {
    p.documents.push_back({std::move(id), DocType::finding, day, std::move(body), {}});
}

inline PatientRecord finish(PatientRecord p) {
    sort_children(p);
    return p;
}

// Rejection at day 1000 after a transplant at 900; AST sits at 14 U/l and
// jumps to 48 three days before the rejection.
inline PatientRecord rejection_scenario(std::string id = "R") {
    auto p = patient(std::move(id));
    endpoint(p, EndpointKind::transplantation, 900);
    endpoint(p, EndpointKind::rejection, 1000);
    for (Day d : {975, 980, 985, 990, 994}) lab(p, "ASTHP (U/l)", d, 14.0);
    lab(p, "ASTHP (U/l)", 997, 48.0);
    lab(p, "ASTHP (U/l)", 1003, 20.0);
    diagnosis(p, "Akute Abstoßung", 1000);
    return finish(p);
}

}  // namespace fixture
