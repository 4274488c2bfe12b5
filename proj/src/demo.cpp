#include "cohort/demo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>
#include <string>

namespace cohort::ingest {

namespace {

class DemoRng {
public:
    explicit DemoRng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    // Uniform in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) { return next() % n; }
    int range(int lo, int hi) { return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1))); }
    double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    bool chance(double p) { return unit() < p; }
    // Skewed towards small indices (cube of a uniform).
    std::size_t skewed(std::size_t n) {
        const double u = unit();
        return std::min(n - 1, static_cast<std::size_t>(static_cast<double>(n) * u * u * u));
    }

private:
    std::mt19937_64 engine_;
};

struct NamedDiagnosis {
    const char* term;
    const char* icd10;
};

constexpr NamedDiagnosis kClinicalDiagnoses[] = {
    {"Arterielle Hypertonie", "I10"},
    {"Chronische Glomerulonephritis", "N03.9"},
    {"Renale Anämie", "D63.8"},
    {"Hyperparathyreoidismus", "N25.8"},
    {"Diabetes mellitus Typ 2", "E11.9"},
    {"renale Anämie", "D63.8"},
    {"Hyperkaliämie", "E87.5"},
    {"Zystennieren", "Q61.3"},
    {"Koronare Herzkrankheit", "I25.9"},
    {"IgA-Nephropathie", "N02.8"},
    {"Anämie, renal", "D63.8"},
    {"Hypertensive Nephropathie", "I12.9"},
    {"Diabetische Nephropathie", "E11.2"},
    {"Fokal segmentale Glomerulosklerose", "N04.1"},
    {"Harnwegsinfekt", "N39.0"},
    {"CMV-Infektion", "B25.9"},
    {"Hyperlipidämie", "E78.5"},
    {"Osteoporose", "M81.9"},
    {"Vorhofflimmern", "I48.9"},
    {"Herzinsuffizienz", "I50.9"},
    {"Gicht", "M10.9"},
    {"Hepatitis C", "B18.2"},
    {"Akute Abstoßungsreaktion", "T86.1"},
    {"Hypothyreose", "E03.9"},
    {"Lupusnephritis", "M32.1"},
    {"Hypertonie", "I10"},
    {"Nierenzellkarzinom", "C64"},
    {"Polyneuropathie", "G62.9"},
};

constexpr const char* kAdjectives[] = {
    "Akute",        "Chronische",  "Rezidivierende", "Sekundäre",     "Primäre",
    "Idiopathische", "Hereditäre", "Toxische",       "Entzündliche",  "Degenerative",
    "Obstruktive",  "Ischämische", "Postoperative",  "Medikamentöse", "Infektiöse",
    "Autoimmune",   "Kongenitale", "Fokale",         "Diffuse",       "Latente",
    "Subakute",     "Progressive", "Benigne",        "Maligne",       "Asymptomatische",
    "Symptomatische", "Unklare",   "Persistierende", "Transiente",    "Partielle",
    "Komplette",    "Leichte",     "Mittelgradige",  "Schwere",       "Beidseitige",
    "Linksseitige", "Rechtsseitige", "Nosokomiale",  "Virale",        "Bakterielle",
    "Allergische",  "Hypertensive", "Diabetische",   "Vaskuläre",     "Interstitielle",
    "Tubuläre",     "Glomeruläre", "Metabolische",   "Reaktive",      "Atypische",
    "Nodöse",       "Polypöse",    "Zystische",      "Fibrotische",   "Hämorrhagische",
    "Nekrotisierende", "Granulomatöse", "Sklerosierende", "Proliferative", "Membranöse"};

constexpr const char* kNouns[] = {
    "Nephritis",     "Zystitis",       "Hepatopathie",   "Kardiomyopathie", "Neuropathie",
    "Arthropathie",  "Dermatitis",     "Pneumonie",      "Gastritis",       "Kolitis",
    "Pankreatitis",  "Myopathie",      "Vaskulitis",     "Thrombose",       "Embolie",
    "Stenose",       "Insuffizienz",   "Hyperplasie",    "Atrophie",        "Dysplasie",
    "Anämie",        "Leukopenie",     "Thrombopenie",   "Hypokaliämie",    "Hyponatriämie",
    "Azidose",       "Alkalose",       "Ödembildung",    "Ergussbildung",   "Infektion",
    "Sepsis",        "Perikarditis",   "Endokarditis",   "Myokarditis",     "Pleuritis",
    "Peritonitis",   "Osteopathie",    "Enzephalopathie", "Retinopathie",   "Angiopathie",
    "Lymphadenopathie", "Splenomegalie", "Hepatomegalie", "Nephrolithiasis", "Cholelithiasis",
    "Urethritis",    "Prostatitis",    "Pyelonephritis", "Glomerulonephritis", "Nephrosklerose",
    "Tubulopathie",  "Zirrhose",       "Fibrose",        "Sklerose",        "Ulzeration",
    "Blutung",       "Hypertrophie",   "Obstruktion",    "Fistel",          "Abszessbildung"};

struct TherapyInfo {
    const char* term;
    const char* code;
};

constexpr TherapyInfo kTherapies[] = {
    {"Hämodialyse", "8-854"},          {"Peritonealdialyse", "8-857"},
    {"Nierentransplantation", "5-555"}, {"Immunsuppression", "8-547"},
    {"Plasmapherese", "8-820"},         {"Antihypertensive Therapie", "8-980"},
    {"Erythropoetin-Gabe", "8-800"},    {"Parathyreoidektomie", "5-067"},
    {"Shuntanlage", "5-392"},           {"Nierenbiopsie", "1-463"},
    {"Antibiotische Therapie", "8-987"}, {"Steroidstoßtherapie", "8-542"}};

struct LabInfo {
    const char* term;
    double low;
    double high;
    double typical;
};

constexpr LabInfo kLabs[] = {
    {"KreatininHP (mg/dl)", 0.5, 1.2, 2.1}, {"CRPHP (mg/l)", 0.0, 5.0, 4.0},
    {"ASTHP (U/l)", 10.0, 35.0, 24.0},      {"ALTHP (U/l)", 10.0, 35.0, 26.0},
    {"HarnstoffHP (mg/dl)", 10.0, 50.0, 60.0}, {"KaliumHP (mmol/l)", 3.5, 5.0, 4.4},
    {"NatriumHP (mmol/l)", 135.0, 145.0, 139.0}, {"HämoglobinHP (g/dl)", 12.0, 16.0, 11.8},
    {"LeukozytenHP (/nl)", 4.0, 10.0, 7.5}, {"TacrolimusHP (ng/ml)", 5.0, 15.0, 8.0},
    {"GlukoseHP (mg/dl)", 70.0, 110.0, 105.0}, {"PhosphatHP (mmol/l)", 0.8, 1.5, 1.4},
};

struct MedInfo {
    const char* term;
    const char* atc;
};

constexpr MedInfo kMedications[] = {
    {"Tacrolimus", "L04AD02"},   {"Mycophenolat-Mofetil", "L04AA06"}, {"Prednisolon", "H02AB06"},
    {"Ciclosporin", "L04AD01"},  {"Ramipril", "C09AA05"},            {"Amlodipin", "C08CA01"},
    {"Epoetin alfa", "B03XA01"}, {"Furosemid", "C03CA01"},           {"Metoprolol", "C07AB02"},
    {"Simvastatin", "C10AA01"},  {"Allopurinol", "M04AA01"},         {"Calcitriol", "A11CC04"},
    {"Sevelamer", "V03AE02"},    {"Valganciclovir", "J05AB14"},      {"Cotrimoxazol", "J01EE01"},
    {"Pantoprazol", "A02BC02"},  {"Everolimus", "L04AA18"},          {"Azathioprin", "L04AX01"},
    {"Basiliximab", "L04AC02"},  {"Insulin glargin", "A10AE04"}};

constexpr const char* kPhysicians[] = {"Dr. Weber", "Dr. Schmidt", "Dr. Yilmaz", "Dr. Novak",
                                       "Dr. Fischer"};

double round1(double v) { return std::round(v * 10.0) / 10.0; }

std::vector<std::size_t> distribute(DemoRng& rng, std::size_t total, std::size_t n) {
    std::vector<std::size_t> counts(n, 0);
    if (n == 0) {
        return counts;
    }
    std::vector<std::uint64_t> weights(n);
    std::uint64_t sum = 0;
    for (auto& w : weights) {
        w = 1 + rng.below(100);
        sum += w;
    }
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        counts[i] = static_cast<std::size_t>((static_cast<unsigned __int128>(total) * weights[i]) / sum);
        assigned += counts[i];
    }
    for (std::size_t i = 0; assigned < total; i = (i + 1) % n) {
        ++counts[i];
        ++assigned;
    }
    return counts;
}

std::string pad_id(std::size_t i) {
    std::string s = std::to_string(i + 1);
    return "P" + std::string(s.size() < 5 ? 5 - s.size() : 0, '0') + s;
}

// Day picked near an endpoint with some probability so temporal queries
// have matches even for small cohorts.
Day event_day(DemoRng& rng, Day first, Day last, const std::vector<EndpointEvent>& endpoints) {
    if (!endpoints.empty() && rng.chance(0.3)) {
        const auto& e = endpoints[rng.below(endpoints.size())];
        return std::clamp(e.day + rng.range(-60, 30), first, last);
    }
    return first + static_cast<Day>(rng.below(static_cast<std::uint64_t>(last - first + 1)));
}

std::string make_document(DemoRng& rng, const PatientRecord& p, DocType type) {
    std::string body;
    auto sentence = [&](std::string s) {
        if (!body.empty()) {
            body += ' ';
        }
        body += s;
    };
    switch (type) {
        case DocType::clinical_report:
            sentence("Wir berichten über den stationären Aufenthalt des Patienten.");
            break;
        case DocType::finding:
            sentence("Befund:");
            break;
        case DocType::progress_report:
            sentence("Verlauf:");
            break;
        default:
            sentence("Vorstellung in der Ambulanz.");
            break;
    }
    for (int i = 0, n = rng.range(1, 3); i < n && !p.diagnoses.empty(); ++i) {
        const auto& d = p.diagnoses[rng.below(p.diagnoses.size())];
        sentence("Bekannte " + d.term + ".");
    }
    if (rng.chance(0.5)) {
        sentence("Kein Anhalt für Hypertonie.");
    }
    if (rng.chance(0.3)) {
        sentence("Röntgenbilder liegen vor.");
    }
    if (rng.chance(0.3)) {
        sentence("Eine Dialyse wurde vom Patienten abgelehnt.");
    }
    if (rng.chance(0.25)) {
        sentence("Keine Zeichen einer Abstoßung, aber CRP erhöht.");
    }
    if (rng.chance(0.2)) {
        static constexpr const char* kBirads[] = {"BIRADS 2", "BI-RADS 3", "BIRADS 4b", "BI-RADS: 1",
                                                  "RADS IV"};
        sentence(std::string("Beurteilung ") + kBirads[rng.below(std::size(kBirads))] + ".");
    }
    if (!p.medications.empty() && rng.chance(0.5)) {
        sentence("Medikation mit " + p.medications[rng.below(p.medications.size())].term + ".");
    }
    sentence("Weitere Kontrollen empfohlen.");
    return body;
}

}  // namespace

DemoOptions reference_scale_options() {
    DemoOptions o;
    o.patients = 185;
    o.total_diagnoses = 6300;
    o.total_labs = 830000;
    o.total_medications = 25000;
    o.total_examinations = 12000;
    return o;
}

std::vector<std::string> demo_diagnosis_terms(std::size_t count) {
    std::vector<std::string> terms;
    std::set<std::string> seen;
    for (const auto& d : kClinicalDiagnoses) {
        if (terms.size() == count) {
            return terms;
        }
        terms.emplace_back(d.term);
        seen.insert(d.term);
    }
    for (std::size_t round = 0; terms.size() < count; ++round) {
        for (std::size_t a = 0; a < std::size(kAdjectives) && terms.size() < count; ++a) {
            for (std::size_t n = 0; n < std::size(kNouns) && terms.size() < count; ++n) {
                std::string t = std::string(kAdjectives[(a + n) % std::size(kAdjectives)]) + " " +
                                kNouns[n];
                if (round > 0) {
                    t += " Typ " + std::to_string(round + 1);
                }
                if (seen.insert(t).second) {
                    terms.push_back(std::move(t));
                }
            }
        }
    }
    return terms;
}

std::vector<PatientRecord> generate_demo_cohort(const DemoOptions& options) {
    DemoRng rng(options.seed);
    const std::size_t n = options.patients;
    const auto terms = demo_diagnosis_terms(std::max<std::size_t>(options.distinct_diagnosis_terms, 1));
    auto icd_for = [&](std::size_t idx) -> std::optional<std::string> {
        if (idx < std::size(kClinicalDiagnoses)) {
            return std::string(kClinicalDiagnoses[idx].icd10);
        }
        if (idx % 7 == 0) {
            return std::nullopt;
        }
        const char letter = static_cast<char>('A' + (idx * 7) % 26);
        char buf[16];
        std::snprintf(buf, sizeof buf, "%c%02zu.%zu", letter, (idx * 13) % 100, idx % 10);
        return std::string(buf);
    };

    auto totals_or = [&](const std::optional<std::size_t>& total, std::size_t per_patient) {
        return distribute(rng, total.value_or(per_patient * n), n);
    };
    const auto dia_counts = totals_or(options.total_diagnoses, 12);
    const auto lab_counts = totals_or(options.total_labs, 80);
    const auto med_counts = totals_or(options.total_medications, 8);
    const auto exam_counts = totals_or(options.total_examinations, 3);

    std::vector<PatientRecord> cohort;
    cohort.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        PatientRecord p;
        p.patient_id = pad_id(i);
        p.sex = rng.chance(0.05) ? Sex::unknown : (rng.chance(0.5) ? Sex::female : Sex::male);
        const Day birth = days_since_epoch({1930, 1, 1}) + static_cast<Day>(rng.below(60 * 365));
        p.birth_date = date_from_days(birth);
        p.blood_group = static_cast<BloodGroup>(rng.below(5));
        if (rng.chance(0.9)) {
            p.height_cm = static_cast<double>(rng.range(150, 200));
        }

        // Endpoints.
        std::vector<EndpointEvent> eps;
        Day d = birth + 20 * 365 + static_cast<Day>(rng.below(30 * 365));
        eps.push_back({EndpointKind::basic_disease, d, 0});
        d += rng.range(200, 3000);
        eps.push_back({EndpointKind::first_dialysis, d, 0});
        const double u = rng.unit();
        const int transplants = u < 0.15 ? 0 : u < 0.70 ? 1 : u < 0.92 ? 2 : 3;
        for (int t = 0; t < transplants; ++t) {
            d += rng.range(100, 1500);
            const Day tx = d;
            eps.push_back({EndpointKind::transplantation, tx, 0});
            if (rng.chance(0.45)) {
                const Day rej = rng.chance(0.35) ? tx + rng.range(0, 5) : tx + rng.range(6, 400);
                eps.push_back({EndpointKind::rejection, rej, 0});
            }
            if (t + 1 < transplants || rng.chance(0.35)) {
                d = tx + rng.range(100, 3000);
                eps.push_back({EndpointKind::failure, d, 0});
            } else {
                d = tx + rng.range(100, 2000);
            }
        }
        if (rng.chance(0.2)) {
            d += rng.range(30, 1500);
            eps.push_back({EndpointKind::death, d, 0});
            p.deceased = true;
        }
        assign_endpoint_ordinals(eps);
        const Day first_day = eps.front().day;
        const Day last_day = std::max(d, first_day) + rng.range(0, 200);
        p.last_contact = date_from_days(last_day);
        p.endpoints = eps;

        // Diagnoses; the basic disease is dated on its endpoint.
        for (std::size_t k = 0; k < dia_counts[i]; ++k) {
            const std::size_t idx = rng.skewed(terms.size());
            DiagnosisEvent dia;
            dia.term = terms[idx];
            dia.icd10 = icd_for(idx);
            dia.day = k == 0 ? first_day : event_day(rng, first_day, last_day, eps);
            if (rng.chance(0.3)) {
                const auto& th = kTherapies[rng.skewed(std::size(kTherapies))];
                dia.therapy_term = th.term;
                if (rng.chance(0.8)) {
                    dia.therapy_code = th.code;
                }
            }
            dia.provenance = rng.chance(0.1) ? Provenance::extraction : Provenance::database;
            p.diagnoses.push_back(std::move(dia));
        }

        p.labs.reserve(lab_counts[i]);
        for (std::size_t k = 0; k < lab_counts[i]; ++k) {
            LabEvent lab;
            if (rng.chance(0.02)) {
                lab.term = "CMV-PCR";
                lab.text_value = rng.chance(0.8) ? "negativ" : "positiv";
                lab.classification = LabClass::unclassified;
            } else {
                const auto& info = kLabs[rng.skewed(std::size(kLabs))];
                lab.term = info.term;
                double v = info.typical * (0.4 + 1.2 * rng.unit());
                if (rng.chance(0.05)) {
                    v *= 3.0;
                }
                v = round1(v);
                lab.numeric_value = v;
                lab.classification = v < info.low ? LabClass::low : v > info.high ? LabClass::high : LabClass::normal;
            }
            lab.term_canon = canonical_key(lab.term);
            lab.day = event_day(rng, first_day, last_day, eps);
            lab.provenance = rng.chance(0.05) ? Provenance::extraction : Provenance::database;
            p.labs.push_back(std::move(lab));
        }

        for (std::size_t k = 0; k < med_counts[i]; ++k) {
            const auto& info = kMedications[rng.skewed(std::size(kMedications))];
            MedicationEvent med;
            med.term = info.term;
            if (rng.chance(0.9)) {
                med.atc_code = info.atc;
            }
            med.day = event_day(rng, first_day, last_day, eps);
            med.provenance = rng.chance(0.05) ? Provenance::extraction : Provenance::database;
            p.medications.push_back(std::move(med));
        }

        for (std::size_t k = 0; k < exam_counts[i]; ++k) {
            ExaminationEvent ex;
            ex.method = static_cast<ExamMethod>(rng.below(6));
            ex.day = event_day(rng, first_day, last_day, eps);
            if (rng.chance(0.7)) {
                ex.physician = kPhysicians[rng.below(std::size(kPhysicians))];
            }
            if ((ex.method == ExamMethod::mammography || ex.method == ExamMethod::sonography) &&
                rng.chance(0.6)) {
                BiradsClass b;
                b.category = static_cast<int>(rng.below(7));
                if (b.category == 4 && rng.chance(0.5)) {
                    b.suffix = static_cast<char>('a' + rng.below(3));
                }
                ex.birads = b;
            }
            p.examinations.push_back(std::move(ex));
        }

        if (options.with_documents) {
            const int docs = rng.range(1, 3);
            for (int k = 0; k < docs; ++k) {
                TextDocument doc;
                doc.doc_id = p.patient_id + "_d" + std::to_string(k + 1);
                doc.doc_type = static_cast<DocType>(rng.below(5));
                if (rng.chance(0.9)) {
                    doc.day = event_day(rng, first_day, last_day, eps);
                }
                doc.body = make_document(rng, p, doc.doc_type);
                p.documents.push_back(std::move(doc));
            }
        }
        sort_children(p);
        cohort.push_back(std::move(p));
    }
    return cohort;
}

}  // namespace cohort::ingest
