#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "cohort/datamodel.hpp"

namespace cohort::ingest {

// Synthetic nephrology-style cohort. Output depends only on the options:
// the engine is mt19937_64 and all value mapping is integer or exactly
// rounded arithmetic, so the same seed gives the same cohort everywhere.
struct DemoOptions {
    std::size_t patients = 185;
    std::uint64_t seed = 42;
    // Cohort-wide totals. When absent a per-patient default is used.
    std::optional<std::size_t> total_diagnoses;
    std::optional<std::size_t> total_labs;
    std::optional<std::size_t> total_medications;
    std::optional<std::size_t> total_examinations;
    std::size_t distinct_diagnosis_terms = 214;
    bool with_documents = true;
};

// 185 patients with 6300 diagnoses, 830,000 lab values, 25,000 medications
// and 12,000 examinations.
DemoOptions reference_scale_options();

std::vector<PatientRecord> generate_demo_cohort(const DemoOptions& options);

// The diagnosis vocabulary used by the generator (first entries are the
// hand-written clinical terms, including spelling variants).
std::vector<std::string> demo_diagnosis_terms(std::size_t count);

}  // namespace cohort::ingest
