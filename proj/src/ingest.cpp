#include "cohort/ingest.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "cohort/errors.hpp"
#include "cohort/extract.hpp"
#include "cohort/record_json.hpp"
#include "cohort/text.hpp"

namespace cohort::ingest {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) {
        ++b;
    }
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) {
        --e;
    }
    return std::string(s.substr(b, e - b));
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error("cannot write " + tmp.string());
        }
        out << content;
    }
    fs::rename(tmp, path);
}

std::uint32_t fnv1a(std::string_view data) {
    std::uint32_t h = 2166136261u;
    for (unsigned char c : data) {
        h ^= c;
        h *= 16777619u;
    }
    return h;
}

std::string hex8(std::uint32_t v) {
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", v);
    return buf;
}

struct CsvRecord {
    std::size_t line = 0;
    std::vector<std::string> fields;
};

// RFC 4180 style: quoted fields may contain delimiters, doubled quotes and
// newlines. `line` is the physical line on which the record starts.
std::vector<CsvRecord> read_csv(const std::string& data, char delim) {
    std::vector<CsvRecord> records;
    std::size_t line = 1;
    std::size_t i = 0;
    const std::size_t n = data.size();
    if (n >= 3 && data.compare(0, 3, "\xEF\xBB\xBF") == 0) {
        i = 3;
    }
    while (i < n) {
        CsvRecord rec;
        rec.line = line;
        std::string field;
        bool in_quotes = false;
        bool done = false;
        while (i < n && !done) {
            const char c = data[i];
            if (in_quotes) {
                if (c == '"') {
                    if (i + 1 < n && data[i + 1] == '"') {
                        field.push_back('"');
                        i += 2;
                        continue;
                    }
                    in_quotes = false;
                } else {
                    if (c == '\n') {
                        ++line;
                    }
                    field.push_back(c);
                }
                ++i;
                continue;
            }
            if (c == '"' && field.empty()) {
                in_quotes = true;
            } else if (c == delim) {
                rec.fields.push_back(std::move(field));
                field.clear();
            } else if (c == '\n') {
                ++line;
                done = true;
            } else if (c != '\r') {
                field.push_back(c);
            }
            ++i;
        }
        rec.fields.push_back(std::move(field));
        const bool blank = rec.fields.size() == 1 && rec.fields[0].empty();
        if (!blank) {
            records.push_back(std::move(rec));
        }
    }
    return records;
}

Sex parse_sex_label(std::string_view raw) {
    const std::string s = normalize_term(raw);
    if (s == "f" || s == "w" || s == "weiblich" || s == "female") {
        return Sex::female;
    }
    if (s == "m" || s == "maennlich" || s == "male") {
        return Sex::male;
    }
    return Sex::unknown;
}

std::vector<fs::path> path_list(const json& j, const char* single, const char* plural,
                                const fs::path& base) {
    std::vector<fs::path> out;
    for (const char* key : {single, plural}) {
        auto it = j.find(key);
        if (it == j.end() || it->is_null()) {
            continue;
        }
        auto add = [&](const json& v) { out.push_back(base / fs::path(v.get<std::string>())); };
        if (it->is_array()) {
            for (const auto& v : *it) {
                add(v);
            }
        } else {
            add(*it);
        }
    }
    return out;
}

std::optional<fs::path> optional_path(const json& j, const char* key, const fs::path& base) {
    if (auto it = j.find(key); it != j.end() && !it->is_null()) {
        return base / fs::path(it->get<std::string>());
    }
    return std::nullopt;
}

void validate_metadata(const PatientRecord& p) {
    PatientRecord copy = p;
    copy.documents.clear();
    validate(copy);
}

struct LetterOwner {
    std::string patient_id;
    DocType doc_type = DocType::clinical_report;
    std::optional<Day> day;
};

std::optional<BiradsClass> birads_from(const TextDocument& doc) {
    std::optional<BiradsClass> found;
    for (const auto& a : doc.annotations) {
        if (a.annotation_type == AnnotationType::birads && !a.negated) {
            try {
                found = BiradsClass::parse(a.canonical_term);
            } catch (const InputError&) {
            }
        }
    }
    return found;
}

}  // namespace

void write_error_report(const fs::path& path, const ErrorReport& report) {
    std::string out;
    for (const auto& e : report) {
        out += json{{"source", e.source}, {"line", e.line}, {"reason", e.reason}}.dump();
        out += '\n';
    }
    write_file(path, out);
}

ErrorReport read_error_report(const fs::path& path) {
    ErrorReport report;
    std::istringstream in(read_file(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        auto j = json::parse(line);
        report.push_back({j.at("source").get<std::string>(), j.at("line").get<std::size_t>(),
                          j.at("reason").get<std::string>()});
    }
    return report;
}

CsvConfig load_csv_config(const fs::path& path) {
    CsvConfig config;
    std::istringstream in(read_file(path));
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';' || line[0] == '[') {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw InputError(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') &&
            value.back() == value.front()) {
            value = value.substr(1, value.size() - 2);
        }
        if (key == "delimiter") {
            if (value == "\\t" || value == "tab") {
                config.delimiter = '\t';
            } else if (value.size() == 1) {
                config.delimiter = value[0];
            } else {
                throw InputError("delimiter must be a single character");
            }
        } else if (key == "patient_id_col") {
            config.patient_id_col = value;
        } else if (key == "date_col") {
            config.date_col = value;
        } else if (key == "finding_col") {
            config.finding_col = value;
        } else if (key == "evaluation_col") {
            config.evaluation_col = value;
        } else if (key == "method_col") {
            config.method_col = value;
        } else if (key == "sex_col") {
            config.sex_col = value;
        } else if (key == "birth_date_col") {
            config.birth_date_col = value;
        } else if (key == "physician_col") {
            config.physician_col = value;
        } else {
            throw InputError(path.string() + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
        }
    }
    return config;
}

ExamMethod parse_method_label(std::string_view label) {
    const std::string s = normalize_term(label);
    auto starts = [&](std::string_view prefix) { return s.rfind(prefix, 0) == 0; };
    if (starts("sono") || s == "us" || starts("ultraschall")) {
        return ExamMethod::sonography;
    }
    if (starts("mammo") || s == "mg") {
        return ExamMethod::mammography;
    }
    if (s == "mrt" || s == "mri" || starts("mr ") || s == "mr" || starts("kernspin")) {
        return ExamMethod::mrt;
    }
    if (s == "ct" || starts("computertomo")) {
        return ExamMethod::ct;
    }
    if (starts("roentgen") || s == "xray" || s == "x-ray" || s == "rx") {
        return ExamMethod::xray;
    }
    return ExamMethod::other;
}

ExamCsvResult parse_examinations_csv(const fs::path& path, const CsvConfig& config,
                                     ErrorReport& errors) {
    ExamCsvResult result;
    const auto records = read_csv(read_file(path), config.delimiter);
    const std::string source = path.filename().string();
    if (records.empty()) {
        errors.push_back({source, 1, "missing header row"});
        return result;
    }
    const auto& header = records.front().fields;
    auto column = [&](const std::string& name) -> std::optional<std::size_t> {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (trim(header[i]) == name) {
                return i;
            }
        }
        return std::nullopt;
    };
    auto required = [&](const std::string& name) {
        auto c = column(name);
        if (!c) {
            throw InputError(source + ": header lacks configured column '" + name + "'");
        }
        return *c;
    };
    const std::size_t pid_col = required(config.patient_id_col);
    const std::size_t date_col = required(config.date_col);
    const std::size_t finding_col = required(config.finding_col);
    const std::size_t eval_col = required(config.evaluation_col);
    const std::size_t method_col = required(config.method_col);
    const auto sex_col = config.sex_col ? std::optional(required(*config.sex_col)) : std::nullopt;
    const auto birth_col =
        config.birth_date_col ? std::optional(required(*config.birth_date_col)) : std::nullopt;
    const auto phys_col =
        config.physician_col ? std::optional(required(*config.physician_col)) : std::nullopt;

    std::unordered_map<std::string, std::size_t> patient_slot;
    for (std::size_t r = 1; r < records.size(); ++r) {
        const auto& rec = records[r];
        if (rec.fields.size() != header.size()) {
            errors.push_back({source, rec.line,
                              "expected " + std::to_string(header.size()) + " columns, got " +
                                  std::to_string(rec.fields.size())});
            continue;
        }
        const std::string pid = trim(rec.fields[pid_col]);
        if (pid.empty()) {
            errors.push_back({source, rec.line, "empty patient id"});
            continue;
        }
        Day day = 0;
        try {
            day = days_since_epoch(parse_date(trim(rec.fields[date_col])));
        } catch (const InputError& e) {
            errors.push_back({source, rec.line, e.what()});
            continue;
        }
        std::optional<CivilDate> birth;
        if (birth_col && !trim(rec.fields[*birth_col]).empty()) {
            try {
                birth = parse_date(trim(rec.fields[*birth_col]));
            } catch (const InputError& e) {
                errors.push_back({source, rec.line, e.what()});
                continue;
            }
        }
        const std::string finding = trim(rec.fields[finding_col]);
        const std::string evaluation = trim(rec.fields[eval_col]);
        if (finding.empty() && evaluation.empty()) {
            errors.push_back({source, rec.line, "line carries neither finding nor evaluation text"});
            continue;
        }
        const std::string method_label = trim(rec.fields[method_col]);

        ExamLine line;
        line.line = rec.line;
        line.patient_id = pid;
        line.exam_id = pid + "_" + format_day(day) + "_" +
                       hex8(fnv1a(method_label + '\x1f' + finding + '\x1f' + evaluation));
        line.examination.method = parse_method_label(method_label);
        line.examination.day = day;
        if (phys_col && !trim(rec.fields[*phys_col]).empty()) {
            line.examination.physician = trim(rec.fields[*phys_col]);
        }
        if (!finding.empty()) {
            line.examination.finding_text_ref = line.exam_id + "_f";
            line.documents.push_back(TextDocument{line.exam_id + "_f", DocType::finding, day, finding, {}});
        }
        if (!evaluation.empty()) {
            line.examination.evaluation_text_ref = line.exam_id + "_e";
            line.documents.push_back(
                TextDocument{line.exam_id + "_e", DocType::evaluation, day, evaluation, {}});
        }

        auto [it, inserted] = patient_slot.try_emplace(pid, result.patients.size());
        if (inserted) {
            PatientRecord p;
            p.patient_id = pid;
            result.patients.push_back(std::move(p));
        }
        PatientRecord& meta = result.patients[it->second];
        if (sex_col && meta.sex == Sex::unknown) {
            meta.sex = parse_sex_label(rec.fields[*sex_col]);
        }
        if (birth && !meta.birth_date) {
            meta.birth_date = birth;
        }
        result.lines.push_back(std::move(line));
    }
    return result;
}

std::vector<PatientRecord> parse_patients_jsonl(const fs::path& path, ErrorReport& errors) {
    std::vector<PatientRecord> out;
    std::istringstream in(read_file(path));
    std::string line;
    std::size_t line_no = 0;
    const std::string source = path.filename().string();
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        try {
            auto patient = json::parse(line).get<PatientRecord>();
            validate_metadata(patient);
            for (const auto& d : patient.documents) {
                if (d.doc_id.empty()) {
                    throw InputError("document without doc_id");
                }
            }
            out.push_back(std::move(patient));
        } catch (const json::exception& e) {
            errors.push_back({source, line_no, std::string("malformed record: ") + e.what()});
        } catch (const InputError& e) {
            errors.push_back({source, line_no, e.what()});
        }
    }
    return out;
}

void FindingStore::upsert_finding(TextDocument finding, const std::string& patient_id) {
    if (finding.doc_id.empty()) {
        throw InputError("finding without doc_id");
    }
    std::string id = finding.doc_id;
    findings_.insert_or_assign(std::move(id), StoredFinding{patient_id, std::move(finding)});
    dirty_.insert(patient_id);
}

void FindingStore::upsert_examination(const std::string& exam_id, ExaminationEvent exam,
                                      const std::string& patient_id) {
    examinations_.insert_or_assign(exam_id, StoredExamination{patient_id, std::move(exam)});
    dirty_.insert(patient_id);
}

std::vector<const StoredFinding*> FindingStore::findings_of(const std::string& patient_id) const {
    std::vector<const StoredFinding*> out;
    for (const auto& [id, f] : findings_) {
        if (f.patient_id == patient_id) {
            out.push_back(&f);
        }
    }
    return out;
}

void DocumentStore::save(const fs::path& dir) const {
    std::string patients_out;
    for (const auto& [id, p] : patients) {
        patients_out += to_json_line(p);
        patients_out += '\n';
    }
    std::string findings_out;
    for (const auto& [id, f] : findings.findings()) {
        findings_out += json{{"doc_id", id}, {"patient_id", f.patient_id}, {"document", f.document}}
                            .dump(-1, ' ', false, json::error_handler_t::replace);
        findings_out += '\n';
    }
    std::string exams_out;
    for (const auto& [id, e] : findings.examinations()) {
        exams_out += json{{"exam_id", id}, {"patient_id", e.patient_id}, {"examination", e.examination}}
                         .dump();
        exams_out += '\n';
    }
    write_file(dir / "patients.jsonl", patients_out);
    write_file(dir / "findings.jsonl", findings_out);
    write_file(dir / "examinations.jsonl", exams_out);
}

DocumentStore DocumentStore::load(const fs::path& dir) {
    if (!fs::exists(dir / "patients.jsonl")) {
        throw InputError("no document store in " + dir.string());
    }
    DocumentStore store;
    auto each_line = [](const fs::path& path, auto&& fn) {
        if (!fs::exists(path)) {
            return;
        }
        std::istringstream in(read_file(path));
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty()) {
                fn(json::parse(line));
            }
        }
    };
    each_line(dir / "patients.jsonl", [&](const json& j) {
        auto p = j.get<PatientRecord>();
        std::string id = p.patient_id;
        store.patients.emplace(std::move(id), std::move(p));
    });
    each_line(dir / "findings.jsonl", [&](const json& j) {
        store.findings.upsert_finding(j.at("document").get<TextDocument>(),
                                      j.at("patient_id").get<std::string>());
    });
    each_line(dir / "examinations.jsonl", [&](const json& j) {
        store.findings.upsert_examination(j.at("exam_id").get<std::string>(),
                                          j.at("examination").get<ExaminationEvent>(),
                                          j.at("patient_id").get<std::string>());
    });
    store.findings.clear_dirty();
    return store;
}

AssembleResult assemble_patients(const FindingStore& store,
                                 const std::map<std::string, PatientRecord>& patients) {
    AssembleResult result;
    std::unordered_map<std::string, std::vector<const TextDocument*>> docs_by_patient;
    std::unordered_map<std::string, std::vector<const ExaminationEvent*>> exams_by_patient;
    for (const auto& [id, f] : store.findings()) {
        if (patients.count(f.patient_id) == 0) {
            result.pending.push_back(id);
        } else {
            docs_by_patient[f.patient_id].push_back(&f.document);
        }
    }
    for (const auto& [id, e] : store.examinations()) {
        if (patients.count(e.patient_id) == 0) {
            result.pending.push_back(id);
        } else {
            exams_by_patient[e.patient_id].push_back(&e.examination);
        }
    }
    std::sort(result.pending.begin(), result.pending.end());
    result.patients.reserve(patients.size());
    for (const auto& [id, meta] : patients) {
        PatientRecord p = meta;
        if (auto it = docs_by_patient.find(id); it != docs_by_patient.end()) {
            for (const auto* d : it->second) {
                p.documents.push_back(*d);
            }
        }
        if (auto it = exams_by_patient.find(id); it != exams_by_patient.end()) {
            for (const auto* e : it->second) {
                p.examinations.push_back(*e);
            }
        }
        sort_children(p);
        result.patients.push_back(std::move(p));
    }
    return result;
}

IngestManifest load_manifest(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw InputError("malformed manifest " + path.string() + ": " + e.what());
    }
    const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
    IngestManifest m;
    m.patients_paths = path_list(j, "patients_path", "patients_paths", base);
    m.examinations_csvs = path_list(j, "examinations_csv", "examinations_csvs", base);
    m.letters_dirs = path_list(j, "letters_dir", "letters_dirs", base);
    m.csv_config = optional_path(j, "csv_config", base);
    m.store_dir = optional_path(j, "store_dir", base);
    m.dict_dir = optional_path(j, "dict_dir", base);
    m.rules = optional_path(j, "rules", base);
    const std::string mode = j.value("mode", "rebuild");
    if (mode == "rebuild") {
        m.mode = IngestMode::rebuild;
    } else if (mode == "update") {
        m.mode = IngestMode::update;
    } else {
        throw InputError("manifest mode must be 'rebuild' or 'update'");
    }
    if (m.patients_paths.empty() && m.examinations_csvs.empty() && m.letters_dirs.empty()) {
        throw InputError("manifest names no source");
    }
    if (m.mode == IngestMode::update && !m.store_dir) {
        throw InputError("update mode needs store_dir");
    }
    return m;
}

IngestResult ingest(const IngestManifest& manifest, DocumentStore base,
                    const extract::Pipeline* pipeline) {
    IngestResult result;
    result.store = std::move(base);
    DocumentStore& store = result.store;

    // Document stubs (no body) waiting for a letter file.
    std::map<std::string, std::pair<std::string, TextDocument>> stubs;

    for (const auto& path : manifest.patients_paths) {
        for (auto& p : parse_patients_jsonl(path, result.errors)) {
            for (auto& d : p.documents) {
                if (d.body.empty()) {
                    stubs.insert_or_assign(d.doc_id, std::pair{p.patient_id, std::move(d)});
                } else {
                    store.findings.upsert_finding(std::move(d), p.patient_id);
                }
            }
            p.documents.clear();
            std::string id = p.patient_id;
            store.patients.insert_or_assign(std::move(id), std::move(p));
        }
    }

    if (!manifest.examinations_csvs.empty()) {
        const CsvConfig config = manifest.csv_config ? load_csv_config(*manifest.csv_config) : CsvConfig{};
        for (const auto& path : manifest.examinations_csvs) {
            auto parsed = parse_examinations_csv(path, config, result.errors);
            for (auto& meta : parsed.patients) {
                auto [it, inserted] = store.patients.try_emplace(meta.patient_id, meta);
                if (!inserted) {
                    if (it->second.sex == Sex::unknown) {
                        it->second.sex = meta.sex;
                    }
                    if (!it->second.birth_date) {
                        it->second.birth_date = meta.birth_date;
                    }
                }
            }
            for (auto& line : parsed.lines) {
                for (auto& d : line.documents) {
                    store.findings.upsert_finding(std::move(d), line.patient_id);
                }
                store.findings.upsert_examination(line.exam_id, std::move(line.examination),
                                                  line.patient_id);
            }
        }
    }

    for (const auto& dir : manifest.letters_dirs) {
        std::map<std::string, LetterOwner> index;
        const fs::path index_path = dir / "letters.tsv";
        if (fs::exists(index_path)) {
            std::istringstream in(read_file(index_path));
            std::string raw;
            std::size_t line_no = 0;
            while (std::getline(in, raw)) {
                ++line_no;
                if (!raw.empty() && raw.back() == '\r') {
                    raw.pop_back();
                }
                if (raw.empty() || raw[0] == '#') {
                    continue;
                }
                std::vector<std::string> cols;
                std::stringstream ss(raw);
                std::string col;
                while (std::getline(ss, col, '\t')) {
                    cols.push_back(col);
                }
                try {
                    if (cols.size() < 2) {
                        throw InputError("expected doc_id<TAB>patient_id[<TAB>doc_type<TAB>date]");
                    }
                    LetterOwner owner{cols[1], DocType::clinical_report, std::nullopt};
                    if (cols.size() > 2 && !cols[2].empty()) {
                        owner.doc_type = parse_doc_type(cols[2]);
                    }
                    if (cols.size() > 3 && !cols[3].empty()) {
                        owner.day = days_since_epoch(parse_date(cols[3]));
                    }
                    index.insert_or_assign(cols[0], owner);
                } catch (const InputError& e) {
                    result.errors.push_back({"letters.tsv", line_no, e.what()});
                }
            }
        }
        std::vector<fs::path> letters;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.is_regular_file() && entry.path().extension() == ".txt") {
                letters.push_back(entry.path());
            }
        }
        std::sort(letters.begin(), letters.end());
        for (const auto& path : letters) {
            const std::string doc_id = path.stem().string();
            std::string body = read_file(path);
            if (trim(body).empty()) {
                result.errors.push_back({path.filename().string(), 0, "empty letter"});
                continue;
            }
            if (auto it = stubs.find(doc_id); it != stubs.end()) {
                TextDocument doc = it->second.second;
                doc.body = std::move(body);
                store.findings.upsert_finding(std::move(doc), it->second.first);
                stubs.erase(it);
            } else if (auto ix = index.find(doc_id); ix != index.end()) {
                store.findings.upsert_finding(
                    TextDocument{doc_id, ix->second.doc_type, ix->second.day, std::move(body), {}},
                    ix->second.patient_id);
            } else {
                result.errors.push_back({path.filename().string(), 0, "letter has no owning patient"});
            }
        }
    }
    for (const auto& [doc_id, stub] : stubs) {
        result.errors.push_back({"patients", 0, "document '" + doc_id + "' has no body and no letter file"});
    }

    if (pipeline != nullptr) {
        std::vector<std::pair<std::string, TextDocument>> updated;
        for (const auto& [id, f] : store.findings.findings()) {
            if (f.document.annotations.empty()) {
                TextDocument doc = f.document;
                doc.annotations = pipeline->annotate(doc.body);
                if (!doc.annotations.empty()) {
                    updated.emplace_back(f.patient_id, std::move(doc));
                }
            }
        }
        for (auto& [pid, doc] : updated) {
            store.findings.upsert_finding(std::move(doc), pid);
        }
    }

    // Examinations without a structured BIRADS value take it from their texts,
    // preferring the evaluation over the finding.
    std::vector<std::pair<std::string, StoredExamination>> birads_updates;
    for (const auto& [id, e] : store.findings.examinations()) {
        if (e.examination.birads) {
            continue;
        }
        std::optional<BiradsClass> found;
        for (const auto& ref : {e.examination.evaluation_text_ref, e.examination.finding_text_ref}) {
            if (found || !ref) {
                continue;
            }
            if (auto it = store.findings.findings().find(*ref); it != store.findings.findings().end()) {
                found = birads_from(it->second.document);
            }
        }
        if (found) {
            StoredExamination updated = e;
            updated.examination.birads = found;
            birads_updates.emplace_back(id, std::move(updated));
        }
    }
    for (auto& [id, e] : birads_updates) {
        store.findings.upsert_examination(id, std::move(e.examination), e.patient_id);
    }

    result.assembled = assemble_patients(store.findings, store.patients);
    for (const auto& id : result.assembled.pending) {
        result.errors.push_back({"store", 0, "finding '" + id + "' references an unknown patient"});
    }
    return result;
}

IngestResult run_manifest(const IngestManifest& manifest, const extract::Pipeline* pipeline) {
    DocumentStore base;
    if (manifest.mode == IngestMode::update) {
        base = DocumentStore::load(*manifest.store_dir);
    }
    IngestResult result = ingest(manifest, std::move(base), pipeline);
    if (manifest.store_dir) {
        result.store.save(*manifest.store_dir);
        write_error_report(*manifest.store_dir / "errors.jsonl", result.errors);
    }
    return result;
}

}  // namespace cohort::ingest
