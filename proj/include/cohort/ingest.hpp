#pragma once

// Source parsing and the two-tier document store: patient master data in one
// tier, findings (examinations and their texts) in the other. Patients are
// assembled from both tiers so a later update never drops an earlier finding.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cohort/datamodel.hpp"

namespace cohort::extract {
class Pipeline;
}

namespace cohort::ingest {

struct IngestIssue {
    std::string source;
    std::size_t line = 0;
    std::string reason;

    bool operator==(const IngestIssue&) const = default;
};

using ErrorReport = std::vector<IngestIssue>;

// JSON-lines error report {source, line, reason}.
void write_error_report(const std::filesystem::path& path, const ErrorReport& report);
ErrorReport read_error_report(const std::filesystem::path& path);

struct CsvConfig {
    char delimiter = ';';
    std::string patient_id_col = "patient_id";
    std::string date_col = "date";
    std::string finding_col = "finding";
    std::string evaluation_col = "evaluation";
    std::string method_col = "method";
    std::optional<std::string> sex_col;
    std::optional<std::string> birth_date_col;
    std::optional<std::string> physician_col;
};

// `key = value` lines; '#' and ';' start comments; [sections] are ignored.
CsvConfig load_csv_config(const std::filesystem::path& path);

// Maps free-text method labels ("Mammographie", "MRT", "Sono", ...) to ExamMethod.
ExamMethod parse_method_label(std::string_view label);

struct ExamLine {
    std::size_t line = 0;
    std::string patient_id;
    std::string exam_id;
    ExaminationEvent examination;
    std::vector<TextDocument> documents;
};

struct ExamCsvResult {
    // Patient metadata deduplicated by patient_id, in first-appearance order.
    std::vector<PatientRecord> patients;
    // Accepted lines in file order.
    std::vector<ExamLine> lines;
};

ExamCsvResult parse_examinations_csv(const std::filesystem::path& path, const CsvConfig& config,
                                     ErrorReport& errors);

// Records that fail to parse or validate are reported and skipped.
std::vector<PatientRecord> parse_patients_jsonl(const std::filesystem::path& path,
                                                ErrorReport& errors);

struct StoredFinding {
    std::string patient_id;
    TextDocument document;

    bool operator==(const StoredFinding&) const = default;
};

struct StoredExamination {
    std::string patient_id;
    ExaminationEvent examination;

    bool operator==(const StoredExamination&) const = default;
};

class FindingStore {
public:
    // Inserts or replaces by doc_id and marks the owner dirty.
    void upsert_finding(TextDocument finding, const std::string& patient_id);
    void upsert_examination(const std::string& exam_id, ExaminationEvent exam,
                            const std::string& patient_id);

    const std::map<std::string, StoredFinding>& findings() const { return findings_; }
    const std::map<std::string, StoredExamination>& examinations() const { return examinations_; }
    const std::set<std::string>& dirty_patients() const { return dirty_; }
    void clear_dirty() { dirty_.clear(); }
    std::size_t size() const { return findings_.size(); }

    std::vector<const StoredFinding*> findings_of(const std::string& patient_id) const;

    bool operator==(const FindingStore& other) const {
        return findings_ == other.findings_ && examinations_ == other.examinations_;
    }

private:
    std::map<std::string, StoredFinding> findings_;
    std::map<std::string, StoredExamination> examinations_;
    std::set<std::string> dirty_;
};

// Both tiers. Patient metadata records hold structured children; documents
// and CSV examinations live in the finding store.
struct DocumentStore {
    std::map<std::string, PatientRecord> patients;
    FindingStore findings;

    bool operator==(const DocumentStore&) const = default;

    // Deterministic layout: patients.jsonl, findings.jsonl, examinations.jsonl,
    // all sorted by key.
    void save(const std::filesystem::path& dir) const;
    static DocumentStore load(const std::filesystem::path& dir);
};

struct AssembleResult {
    std::vector<PatientRecord> patients;  // sorted by patient_id
    // doc_ids / exam ids whose patient_id is unknown.
    std::vector<std::string> pending;
};

// Every patient receives all findings currently in the store, children
// ordered by (day, id).
AssembleResult assemble_patients(const FindingStore& store,
                                 const std::map<std::string, PatientRecord>& patients);

enum class IngestMode : std::uint8_t { rebuild, update };

struct IngestManifest {
    std::vector<std::filesystem::path> patients_paths;
    std::vector<std::filesystem::path> examinations_csvs;
    std::optional<std::filesystem::path> csv_config;
    std::vector<std::filesystem::path> letters_dirs;
    IngestMode mode = IngestMode::rebuild;
    std::optional<std::filesystem::path> store_dir;
    std::optional<std::filesystem::path> dict_dir;
    std::optional<std::filesystem::path> rules;
};

// JSON manifest; list-valued fields also accept a single string. Relative
// paths resolve against the manifest's directory.
IngestManifest load_manifest(const std::filesystem::path& path);

struct IngestResult {
    DocumentStore store;
    AssembleResult assembled;
    ErrorReport errors;
};

// Applies the manifest's sources to `base` (empty for rebuild). Documents
// without annotations are annotated when a pipeline is given.
IngestResult ingest(const IngestManifest& manifest, DocumentStore base = {},
                    const extract::Pipeline* pipeline = nullptr);

// Runs the manifest end to end: loads the store for update mode, ingests,
// and saves the store (plus errors.jsonl) when store_dir is set.
IngestResult run_manifest(const IngestManifest& manifest, const extract::Pipeline* pipeline = nullptr);

}  // namespace cohort::ingest
