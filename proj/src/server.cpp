#include "cohort/server.hpp"

#include <algorithm>
#include <ctime>
#include <fstream>
#include <random>
#include <sstream>

#include <httplib.h>

#include "cohort/errors.hpp"
#include "cohort/record_json.hpp"

namespace cohort::server {

using json = nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& field, const std::string& what) {
    throw InputError(field + ": " + what);
}

std::string iso_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::optional<std::string> opt_string(const json& body, const char* key) {
    auto it = body.find(key);
    if (it == body.end() || it->is_null()) {
        return std::nullopt;
    }
    if (!it->is_string()) {
        bad(key, "expected a string");
    }
    return it->get<std::string>();
}

std::string req_string(const json& body, const char* key) {
    auto v = opt_string(body, key);
    if (!v) {
        bad(key, "missing");
    }
    return *v;
}

std::size_t opt_size(const json& body, const char* key, std::size_t fallback) {
    auto it = body.find(key);
    if (it == body.end() || it->is_null()) {
        return fallback;
    }
    if (!it->is_number_integer() || it->get<long long>() < 0) {
        bad(key, "expected a non-negative integer");
    }
    return it->get<std::size_t>();
}

std::optional<std::string> param(const Params& params, const char* key) {
    auto it = params.find(key);
    if (it == params.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::size_t param_size(const Params& params, const char* key, std::size_t fallback) {
    auto v = param(params, key);
    if (!v) {
        return fallback;
    }
    std::size_t pos = 0;
    long long n = 0;
    try {
        n = std::stoll(*v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != v->size() || v->empty() || n < 0) {
        bad(key, "expected a non-negative integer");
    }
    return static_cast<std::size_t>(n);
}

json param_json(const Params& params, const char* key) {
    auto v = param(params, key);
    if (!v || v->empty()) {
        return json::object();
    }
    try {
        return json::parse(*v);
    } catch (const json::parse_error&) {
        bad(key, "malformed JSON");
    }
}

std::optional<std::vector<query::Restriction>> opt_restrictions(const json& body) {
    auto it = body.find("restrictions");
    if (it == body.end() || it->is_null()) {
        return std::nullopt;
    }
    return parse_restrictions(*it);
}

std::optional<Day> first_endpoint_day(const PatientRecord& p, EndpointKind kind) {
    for (const auto& e : p.endpoints) {
        if (e.kind == kind) {
            return e.day;
        }
    }
    return std::nullopt;
}

const PatientRecord& find_record(const Snapshot& s, const std::string& id) {
    const auto ordinal = s.index.find_patient(id);
    if (!ordinal) {
        throw NotFoundError("unknown patient '" + id + "'");
    }
    return s.patients[*ordinal];
}

Response error_response(int status, const std::string& message) {
    json body{{"error", message}};
    // Input errors are phrased "<field path>: <problem>".
    if (status == 400) {
        const auto colon = message.find(": ");
        if (colon != std::string::npos && message.find(' ') >= colon) {
            body["field"] = message.substr(0, colon);
        }
    }
    return {status, std::move(body)};
}

}  // namespace

// ---- blocks and profiles ----

const std::vector<FacetBlock>& facet_blocks() {
    static const std::vector<FacetBlock> blocks{
        {"Stammdaten", {"sex", "blood_group", "deceased"}, {"age", "height_cm"}},
        {"Diagnosen", {"dia_term", "dia_icd10", "dia_therapy_term", "dia_therapy_code"}, {}},
        {"Laborwerte", {"lab_term_canon", "lab_term", "lab_class", "lab_textval"}, {"lab_numval"}},
        {"Medikation", {"med_term", "med_atc"}, {}},
        {"Untersuchungen", {"exam_method", "exam_birads", "exam_physician"}, {}},
        {"Endpunkte", {"ep_kind"}, {}},
        {"Befunde", {"doc_type", "doc_ann_term"}, {}},
    };
    return blocks;
}

const FacetBlock* find_block(std::string_view name) {
    for (const auto& b : facet_blocks()) {
        if (b.name == name) {
            return &b;
        }
    }
    return nullptr;
}

PatientProfile make_profile(const PatientRecord& p) {
    PatientProfile out;
    out.patient_id = p.patient_id;
    out.sex = p.sex;
    out.age = age_at_last_contact(p);
    out.deceased = p.deceased;
    out.basic_disease_day = first_endpoint_day(p, EndpointKind::basic_disease);
    out.first_dialysis_day = first_endpoint_day(p, EndpointKind::first_dialysis);
    if (out.basic_disease_day) {
        for (const auto& d : p.diagnoses) {
            if (d.day == *out.basic_disease_day &&
                std::find(out.basic_diseases.begin(), out.basic_diseases.end(), d.term) == out.basic_diseases.end()) {
                out.basic_diseases.push_back(d.term);
            }
        }
    }
    for (const auto& e : p.endpoints) {
        out.transplant_count += e.kind == EndpointKind::transplantation ? 1 : 0;
        out.failure_count += e.kind == EndpointKind::failure ? 1 : 0;
    }
    return out;
}

json to_json(const PatientProfile& p) {
    auto opt = [](const auto& v) { return v ? json(*v) : json(nullptr); };
    return {{"patient_id", p.patient_id},
            {"sex", std::string(cohort::to_string(p.sex))},
            {"age", opt(p.age)},
            {"deceased", p.deceased},
            {"basic_disease_day", opt(p.basic_disease_day)},
            {"basic_diseases", p.basic_diseases},
            {"first_dialysis_day", opt(p.first_dialysis_day)},
            {"transplant_count", p.transplant_count},
            {"failure_count", p.failure_count}};
}

json to_json(const query::FacetReport& r) {
    auto values = [](const std::vector<query::FacetValue>& vs) {
        json a = json::array();
        for (const auto& v : vs) {
            a.push_back({{"term", v.term}, {"count", v.count}, {"common_to_all", v.common_to_all}});
        }
        return a;
    };
    return {{"field", r.field},
            {"total_remaining_patients", r.total_remaining_patients},
            {"values", values(r.values)},
            {"top", values(r.top)},
            {"menu", values(r.menu)},
            {"shown_top_k", r.shown_top_k},
            {"mincount", r.mincount}};
}

json to_json(const query::NumericSummary& s) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return {{"field", s.field}, {"patients", s.patients}, {"min", opt(s.min)}, {"max", opt(s.max)}};
}

json to_json(const std::vector<query::IntervalCount>& buckets) {
    json a = json::array();
    for (const auto& b : buckets) {
        a.push_back({{"lower", b.lower}, {"upper", b.upper}, {"count", b.count}});
    }
    return a;
}

json to_json(const query::FreeTextResult& r) {
    json docs = json::array();
    for (const auto& d : r.documents) {
        json hs = json::array();
        for (const auto& h : d.highlights) {
            hs.push_back({{"begin", h.begin}, {"end", h.end}});
        }
        docs.push_back({{"doc_id", d.doc_id}, {"patient_id", d.patient_id}, {"highlights", hs}});
    }
    return {{"total", r.result.patient_ids.size()}, {"patient_ids", r.result.patient_ids}, {"documents", docs}};
}

json to_json(const std::vector<query::ComparedAnnotation>& compared) {
    json a = json::array();
    for (const auto& c : compared) {
        a.push_back({{"annotation", extract::annotations_to_json({c.annotation})[0]},
                     {"status", std::string(query::to_string(c.status))}});
    }
    return a;
}

// ---- request parsing ----

std::vector<query::Restriction> parse_restrictions(const json& j) {
    if (!j.is_array()) {
        bad("restrictions", "expected an array");
    }
    std::vector<query::Restriction> out;
    for (std::size_t i = 0; i < j.size(); ++i) {
        try {
            out.push_back(query::restriction_from_json(j[i]));
        } catch (const InputError& e) {
            std::string msg = e.what();
            const std::string prefix = "restriction";
            if (msg.rfind(prefix, 0) == 0) {
                msg = "restrictions[" + std::to_string(i) + "]" + msg.substr(prefix.size());
            }
            throw InputError(msg);
        }
    }
    return out;
}

timeline::Filters filters_from_json(const json& j) {
    timeline::Filters f;
    if (j.is_null()) {
        return f;
    }
    if (!j.is_object()) {
        bad("filters", "expected an object");
    }
    if (auto it = j.find("episode_range"); it != j.end() && !it->is_null()) {
        if (!it->is_number_integer()) {
            bad("filters.episode_range", "expected an integer");
        }
        f.episode_range = it->get<int>();
        if (*f.episode_range < 0) {
            throw RangeError("filters.episode_range: must be >= 0");
        }
    }
    if (auto it = j.find("focus_range"); it != j.end() && !it->is_null()) {
        if (!it->is_boolean()) {
            bad("filters.focus_range", "expected a boolean");
        }
        f.focus_range = it->get<bool>();
    }
    if (auto it = j.find("significance"); it != j.end() && !it->is_null()) {
        if (!it->is_object()) {
            bad("filters.significance", "expected an object");
        }
        timeline::SignificanceParams s;
        if (auto w = it->find("window_days"); w != it->end()) {
            if (!w->is_number_integer() || w->get<int>() <= 0) {
                bad("filters.significance.window_days", "expected a positive integer");
            }
            s.window_days = w->get<int>();
        }
        if (auto t = it->find("threshold_pct"); t != it->end()) {
            if (!t->is_number() || t->get<double>() < 0) {
                bad("filters.significance.threshold_pct", "expected a non-negative number");
            }
            s.threshold_pct = t->get<double>();
        }
        f.significance = s;
    }
    return f;
}

timeline::FocusState focus_from_json(const PatientRecord& patient, const json& j) {
    if (j.is_null()) {
        return {};
    }
    if (!j.is_object()) {
        bad("focus", "expected an object");
    }
    auto int_member = [&](const char* key, int fallback) {
        auto it = j.find(key);
        if (it == j.end() || it->is_null()) {
            return fallback;
        }
        if (!it->is_number_integer() || it->get<int>() < 0) {
            bad(std::string("focus.") + key, "expected a non-negative integer");
        }
        return it->get<int>();
    };
    const int before = int_member("before", 0);
    const int after = int_member("after", 0);
    timeline::FocusState f;
    if (auto it = j.find("align"); it != j.end() && !it->is_null()) {
        if (!it->is_string()) {
            bad("focus.align", "expected an endpoint kind");
        }
        EndpointKind kind{};
        try {
            kind = parse_endpoint_kind(it->get<std::string>());
        } catch (const InputError& e) {
            bad("focus.align", e.what());
        }
        f = timeline::align_to_endpoints(patient, kind, before, after);
    } else if (auto d = j.find("day"); d != j.end() && !d->is_null()) {
        if (!d->is_number_integer()) {
            bad("focus.day", "expected an integer day");
        }
        f = timeline::align_to_day(d->get<Day>(), before, after);
    } else {
        f.before = before;
        f.after = after;
        if (auto pts = j.find("points"); pts != j.end() && !pts->is_null()) {
            if (!pts->is_array()) {
                bad("focus.points", "expected an array");
            }
            for (std::size_t i = 0; i < pts->size(); ++i) {
                const auto& p = (*pts)[i];
                const std::string where = "focus.points[" + std::to_string(i) + "]";
                if (!p.is_object() || !p.contains("day") || !p["day"].is_number_integer()) {
                    bad(where + ".day", "expected an integer day");
                }
                const auto layer = p.value("layer", json(0));
                if (!layer.is_number_integer() || layer.get<int>() < 0) {
                    bad(where + ".layer", "expected a non-negative integer");
                }
                f.focus_points.push_back({layer.get<int>(), p["day"].get<Day>()});
            }
        }
    }
    return f;
}

// ---- service ----

Service::Service(ServiceOptions options, std::shared_ptr<const Snapshot> snapshot)
    : options_(std::move(options)),
      snapshot_(std::move(snapshot)),
      feedback_(options_.data_dir / "feedback.jsonl") {
    std::filesystem::create_directories(options_.data_dir);
    if (!snapshot_) {
        snapshot_ = std::make_shared<const Snapshot>();
    }
    pipeline_ = std::make_shared<const extract::Pipeline>(
        options_.dict_dir ? extract::load_config(*options_.dict_dir, options_.rules_path)
                          : extract::default_config());
    const auto path = options_.data_dir / "resultsets.json";
    if (std::filesystem::exists(path)) {
        std::ifstream in(path);
        json j;
        try {
            in >> j;
        } catch (const json::parse_error& e) {
            throw InputError(path.string() + ": " + e.what());
        }
        for (const auto& r : j.value("resultsets", json::array())) {
            resultsets_.push_back({r.at("name").get<std::string>(), r.at("patient_ids").get<std::vector<std::string>>(),
                                   r.value("restrictions", json::array()), r.value("created_at", std::string())});
        }
    }
}

std::shared_ptr<const Snapshot> Service::snapshot() const {
    std::lock_guard lock(snapshot_mutex_);
    return snapshot_;
}

std::shared_ptr<const extract::Pipeline> Service::pipeline() const {
    std::lock_guard lock(snapshot_mutex_);
    return pipeline_;
}

void Service::swap_snapshot(std::shared_ptr<const Snapshot> next) {
    std::lock_guard lock(snapshot_mutex_);
    snapshot_ = std::move(next);
}

void Service::swap_pipeline(std::shared_ptr<const extract::Pipeline> next) {
    std::lock_guard lock(snapshot_mutex_);
    pipeline_ = std::move(next);
}

std::size_t Service::session_count() const {
    std::lock_guard lock(session_mutex_);
    return sessions_.size();
}

std::string Service::new_session_id() {
    static thread_local std::mt19937_64 rng{std::random_device{}()};
    std::ostringstream out;
    out << std::hex << rng() << '-' << ++session_counter_;
    return out.str();
}

void Service::purge_expired_locked() {
    const auto now = std::chrono::steady_clock::now();
    for (auto it = sessions_.begin(); it != sessions_.end();) {
        if (now - it->second.last_used > options_.session_ttl) {
            it = sessions_.erase(it);
        } else {
            ++it;
        }
    }
}

Service::Evaluated Service::resolve(const std::optional<std::string>& session_id,
                                    const std::optional<std::vector<query::Restriction>>& restrictions,
                                    bool create) {
    const auto snap = snapshot();
    Evaluated out;
    out.snapshot = snap;
    {
        std::lock_guard lock(session_mutex_);
        purge_expired_locked();
        if (session_id) {
            auto it = sessions_.find(*session_id);
            if (it == sessions_.end()) {
                throw NotFoundError("unknown or expired session '" + *session_id + "'");
            }
            out.session_id = *session_id;
            const Session& s = it->second;
            out.restrictions = s.restrictions;
            out.open_blocks = s.open_blocks;
            if (!restrictions && s.evaluated_on == snap) {
                out.matched = s.matched;
                it->second.last_used = std::chrono::steady_clock::now();
                return out;
            }
        }
    }
    if (restrictions) {
        out.restrictions = *restrictions;
    }
    // Evaluation runs outside the lock; it also validates ids and fields.
    query::QueryState state;
    for (std::size_t i = 0; i < out.restrictions.size(); ++i) {
        try {
            state.add(out.restrictions[i]);
        } catch (const DuplicateError& e) {
            bad("restrictions[" + std::to_string(i) + "].id", e.what());
        }
    }
    out.restrictions = state.restrictions();
    out.matched = query::evaluate_set(snap->index, out.restrictions);
    if (!session_id && !create) {
        return out;
    }
    std::lock_guard lock(session_mutex_);
    if (out.session_id.empty()) {
        out.session_id = new_session_id();
    }
    Session& s = sessions_[out.session_id];
    s.restrictions = out.restrictions;
    s.evaluated_on = snap;
    s.matched = out.matched;
    s.last_used = std::chrono::steady_clock::now();
    out.open_blocks = s.open_blocks;
    return out;
}

json Service::block_report(const FacetBlock& block, const NestedIndex& index, const query::PatientSet& matched,
                           const query::FacetOptions& options) const {
    json facets = json::array();
    for (const auto& f : block.keyword_fields) {
        if (index.find_field(f) != nullptr) {
            facets.push_back(to_json(query::facet_report_for_set(index, matched, f, options)));
        }
    }
    json numeric = json::array();
    for (const auto& f : block.numeric_fields) {
        if (index.find_field(f) != nullptr) {
            numeric.push_back(to_json(query::numeric_summary(index, matched, f)));
        }
    }
    return {{"block", block.name}, {"total", matched.count()}, {"facets", facets}, {"numeric", numeric}};
}

Response Service::search(const json& body) {
    if (!body.is_object()) {
        bad("body", "expected an object");
    }
    const auto offset = opt_size(body, "offset", 0);
    const auto limit = opt_size(body, "limit", options_.page_limit_default);
    if (limit > options_.page_limit_max) {
        bad("limit", "at most " + std::to_string(options_.page_limit_max));
    }
    std::optional<std::set<std::string>> open;
    if (auto it = body.find("open_blocks"); it != body.end() && !it->is_null()) {
        if (!it->is_array()) {
            bad("open_blocks", "expected an array of block names");
        }
        open.emplace();
        for (const auto& b : *it) {
            if (!b.is_string() || find_block(b.get<std::string>()) == nullptr) {
                throw NotFoundError("unknown facet block " + b.dump());
            }
            open->insert(b.get<std::string>());
        }
    }
    // Restrictions default to "none" so an empty body lists everybody.
    auto restrictions = opt_restrictions(body);
    const auto session_id = opt_string(body, "session_id");
    if (!restrictions && !session_id) {
        restrictions.emplace();
    }
    auto ev = resolve(session_id, restrictions, true);
    if (open) {
        std::lock_guard lock(session_mutex_);
        sessions_[ev.session_id].open_blocks = *open;
        ev.open_blocks = *open;
    }

    const auto result = query::to_result_set(ev.snapshot->index, ev.matched);
    json profiles = json::array();
    for (std::size_t i = offset; i < result.patient_ids.size() && i < offset + limit; ++i) {
        profiles.push_back(to_json(make_profile(find_record(*ev.snapshot, result.patient_ids[i]))));
    }
    query::FacetOptions fo;
    fo.top_k = options_.top_k_default;
    fo.mincount = options_.mincount_default;
    json blocks = json::object();
    for (const auto& name : ev.open_blocks) {
        blocks[name] = block_report(*find_block(name), ev.snapshot->index, ev.matched, fo);
    }
    return {200,
            {{"session_id", ev.session_id},
             {"restrictions", query::restrictions_to_json(ev.restrictions)},
             {"total", result.patient_ids.size()},
             {"offset", offset},
             {"limit", limit},
             {"patient_ids", result.patient_ids},
             {"patient_profiles", profiles},
             {"blocks", blocks}}};
}

Response Service::facets(const Params& params) {
    const auto name = param(params, "block");
    if (!name) {
        bad("block", "missing");
    }
    const FacetBlock* block = find_block(*name);
    if (block == nullptr) {
        throw NotFoundError("unknown facet block '" + *name + "'");
    }
    query::FacetOptions fo;
    fo.top_k = param_size(params, "top_k", options_.top_k_default);
    fo.mincount = static_cast<std::uint32_t>(param_size(params, "mincount", options_.mincount_default));
    fo.substring = param(params, "substring");
    if (fo.substring && fo.substring->empty()) {
        fo.substring.reset();
    }
    const auto session_id = param(params, "session_id");
    std::optional<std::vector<query::Restriction>> restrictions;
    if (param(params, "restrictions")) {
        restrictions = parse_restrictions(param_json(params, "restrictions"));
    } else if (!session_id) {
        restrictions.emplace();
    }
    const auto ev = resolve(session_id, restrictions, false);
    if (!ev.session_id.empty()) {
        std::lock_guard lock(session_mutex_);
        if (auto it = sessions_.find(ev.session_id); it != sessions_.end()) {
            it->second.open_blocks.insert(block->name);
        }
    }
    json out = block_report(*block, ev.snapshot->index, ev.matched, fo);
    if (!ev.session_id.empty()) {
        out["session_id"] = ev.session_id;
    }
    return {200, std::move(out)};
}

Response Service::intervals(const json& body) {
    const std::string field = req_string(body, "field");
    auto it = body.find("edges");
    if (it == body.end() || !it->is_array()) {
        bad("edges", "expected an array of numbers");
    }
    std::vector<double> edges;
    for (const auto& e : *it) {
        if (!e.is_number()) {
            bad("edges", "expected an array of numbers");
        }
        edges.push_back(e.get<double>());
    }
    const auto ev = resolve(opt_string(body, "session_id"), opt_restrictions(body), false);
    return {200,
            {{"field", field},
             {"buckets", to_json(query::numeric_interval_report(ev.snapshot->index, ev.restrictions, field, edges))}}};
}

Response Service::fulltext(const json& body) {
    const std::string expr = req_string(body, "expr");
    const std::string field = opt_string(body, "field").value_or("doc_body");
    const auto ev = resolve(opt_string(body, "session_id"), opt_restrictions(body), false);
    return {200, to_json(query::free_text_search(ev.snapshot->index, ev.restrictions, expr, field))};
}

Response Service::patient(const std::string& patient_id) {
    const auto snap = snapshot();
    const auto& p = find_record(*snap, patient_id);
    return {200, {{"profile", to_json(make_profile(p))}, {"record", json(p)}}};
}

Response Service::annotate(const json& body) {
    if (!body.is_object()) {
        bad("body", "expected an object");
    }
    auto it = body.find("text");
    if (it == body.end() || !it->is_string()) {
        bad("text", "expected a string");
    }
    const auto pipe = pipeline();
    const auto annotations = pipe->annotate(it->get<std::string>());
    json out{{"annotations", extract::annotations_to_json(annotations)}, {"pipeline_version", pipe->version()}};
    if (const auto id = opt_string(body, "patient_id")) {
        const auto snap = snapshot();
        out["comparison"] = to_json(query::compare_extraction_to_record(find_record(*snap, *id), annotations));
    }
    return {200, std::move(out)};
}

Response Service::add_dictionary_entry(const json& body) {
    const std::string type_name = req_string(body, "type");
    AnnotationType type{};
    try {
        type = parse_annotation_type(type_name);
    } catch (const InputError&) {
        bad("type", "unknown annotation type '" + type_name + "'");
    }
    const std::string term = req_string(body, "term");
    const auto code = opt_string(body, "code");
    const auto definition = opt_string(body, "definition");

    std::lock_guard writer(writer_mutex_);
    const auto current = pipeline();
    // Validates and bumps the version before anything touches the disk.
    auto next = extract::add_user_entry(current->config(), type, term, code, definition);
    auto compiled = std::make_shared<const extract::Pipeline>(std::move(next));
    if (options_.dict_dir) {
        extract::append_user_entry_file(*options_.dict_dir, type, {term, code, definition});
    }
    swap_pipeline(compiled);
    return {201, {{"type", type_name}, {"term", term}, {"pipeline_version", compiled->version()}}};
}

Response Service::feedback(const json& body) {
    const std::string annotation_id = req_string(body, "annotation_id");
    const std::string verdict = opt_string(body, "verdict").value_or("incorrect");
    if (verdict != "incorrect") {
        bad("verdict", "only 'incorrect' is accepted");
    }
    const auto entry = feedback_.record(annotation_id, extract::Verdict::incorrect,
                                        opt_string(body, "doc_ref").value_or(""));
    return {202, extract::to_json(entry)};
}

Response Service::timeline(const json& body) {
    if (!body.is_object()) {
        bad("body", "expected an object");
    }
    const auto snap = snapshot();
    const auto& p = find_record(*snap, req_string(body, "patient_id"));
    auto it = body.find("selected_types");
    if (it == body.end() || !it->is_array()) {
        bad("selected_types", "expected an array of strings");
    }
    std::vector<std::string> types;
    for (const auto& t : *it) {
        if (!t.is_string()) {
            bad("selected_types", "expected an array of strings");
        }
        types.push_back(t.get<std::string>());
    }
    const auto focus = focus_from_json(p, body.value("focus", json()));
    const auto filters = filters_from_json(body.value("filters", json()));
    const bool baselines = body.value("baselines", false);
    return {200, timeline::to_json(timeline::build_timeline(p, types, focus, filters, baselines))};
}

Response Service::timeline_types(const Params& params) {
    const auto id = param(params, "patient_id");
    if (!id) {
        bad("patient_id", "missing");
    }
    const auto snap = snapshot();
    const auto& p = find_record(*snap, *id);
    timeline::Tab tab = timeline::Tab::diagnoses;
    if (auto t = param(params, "tab")) {
        try {
            tab = timeline::parse_tab(*t);
        } catch (const InputError&) {
            bad("tab", "expected 'diagnoses' or 'labs'");
        }
    }
    const auto filters = filters_from_json(param_json(params, "filters"));
    const bool has_focus = param(params, "focus").has_value();
    const auto focus = focus_from_json(p, param_json(params, "focus"));
    auto substring = param(params, "substring");
    if (substring && substring->empty()) {
        substring.reset();
    }
    return {200, timeline::to_json(timeline::filter_event_types(p, tab, filters, has_focus ? &focus : nullptr,
                                                                substring))};
}

void Service::persist_resultsets_locked() const {
    json arr = json::array();
    for (const auto& r : resultsets_) {
        arr.push_back({{"name", r.name},
                       {"patient_ids", r.patient_ids},
                       {"restrictions", r.restrictions},
                       {"created_at", r.created_at}});
    }
    const auto path = options_.data_dir / "resultsets.json";
    const auto tmp = options_.data_dir / "resultsets.json.tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << json{{"resultsets", arr}}.dump(1) << '\n';
        if (!out) {
            throw Error("cannot write " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

Response Service::save_resultset(const json& body) {
    const std::string name = req_string(body, "name");
    if (name.find_first_not_of(" \t") == std::string::npos) {
        bad("name", "must not be empty");
    }
    auto restrictions = opt_restrictions(body);
    const auto session_id = opt_string(body, "session_id");
    if (!restrictions && !session_id) {
        restrictions.emplace();
    }
    const auto ev = resolve(session_id, restrictions, false);
    SavedResultSet saved{name, query::to_result_set(ev.snapshot->index, ev.matched).patient_ids,
                         query::restrictions_to_json(ev.restrictions), iso_now()};
    std::lock_guard lock(resultset_mutex_);
    for (const auto& r : resultsets_) {
        if (r.name == name) {
            throw DuplicateError("result set '" + name + "' already exists");
        }
    }
    resultsets_.push_back(saved);
    persist_resultsets_locked();
    return {201,
            {{"name", saved.name},
             {"total", saved.patient_ids.size()},
             {"patient_ids", saved.patient_ids},
             {"restrictions", saved.restrictions},
             {"created_at", saved.created_at}}};
}

Response Service::list_resultsets() {
    std::lock_guard lock(resultset_mutex_);
    json arr = json::array();
    for (const auto& r : resultsets_) {
        arr.push_back({{"name", r.name},
                       {"total", r.patient_ids.size()},
                       {"patient_ids", r.patient_ids},
                       {"restrictions", r.restrictions},
                       {"created_at", r.created_at}});
    }
    return {200, {{"resultsets", arr}}};
}

Response Service::reload(const json& body) {
    std::lock_guard writer(writer_mutex_);
    auto path = options_.snapshot_path;
    if (const auto p = opt_string(body, "snapshot")) {
        path = *p;
    }
    if (path) {
        swap_snapshot(std::make_shared<const Snapshot>(load_snapshot(*path)));
    }
    if (options_.dict_dir) {
        auto config = extract::load_config(*options_.dict_dir, options_.rules_path);
        config.version = pipeline()->version() + 1;
        swap_pipeline(std::make_shared<const extract::Pipeline>(std::move(config)));
    }
    return {200, {{"patients", snapshot()->index.patient_count()}, {"pipeline_version", pipeline()->version()}}};
}

Response Service::blocks() {
    json arr = json::array();
    for (const auto& b : facet_blocks()) {
        arr.push_back({{"name", b.name}, {"keyword_fields", b.keyword_fields}, {"numeric_fields", b.numeric_fields}});
    }
    return {200, {{"blocks", arr}}};
}

Response Service::handle(std::string_view method, std::string_view path, const Params& params,
                         std::string_view body) {
    try {
        auto parsed = [&]() -> json {
            if (body.find_first_not_of(" \t\r\n") == std::string_view::npos) {
                return json::object();
            }
            try {
                return json::parse(body);
            } catch (const json::parse_error& e) {
                throw InputError(std::string("body: malformed JSON (") + e.what() + ")");
            }
        };
        const bool get = method == "GET";
        const bool post = method == "POST";
        if (post && path == "/api/search") return search(parsed());
        if (get && path == "/api/facets") return facets(params);
        if (get && path == "/api/blocks") return blocks();
        if (post && path == "/api/intervals") return intervals(parsed());
        if (post && path == "/api/fulltext") return fulltext(parsed());
        if (post && path == "/api/annotate") return annotate(parsed());
        if (post && path == "/api/dictionary") return add_dictionary_entry(parsed());
        if (post && path == "/api/feedback") return feedback(parsed());
        if (post && path == "/api/timeline") return timeline(parsed());
        if (get && path == "/api/timeline/types") return timeline_types(params);
        if (post && path == "/api/resultsets") return save_resultset(parsed());
        if (get && path == "/api/resultsets") return list_resultsets();
        if (post && path == "/api/admin/reload") return reload(parsed());
        constexpr std::string_view patients = "/api/patients/";
        if (get && path.substr(0, patients.size()) == patients && path.size() > patients.size()) {
            return patient(std::string(path.substr(patients.size())));
        }
        return error_response(404, "no route for " + std::string(method) + " " + std::string(path));
    } catch (const NotFoundError& e) {
        return error_response(404, e.what());
    } catch (const DuplicateError& e) {
        return error_response(409, e.what());
    } catch (const InputError& e) {
        return error_response(400, e.what());
    } catch (const json::exception& e) {
        return error_response(400, std::string("body: ") + e.what());
    } catch (const std::exception& e) {
        return error_response(500, e.what());
    }
}

// ---- HTTP adapter ----

std::unique_ptr<httplib::Server> make_http_server(Service& service, const std::optional<std::filesystem::path>& web_root) {
    auto http = std::make_unique<httplib::Server>();
    const std::string origin = service.options().cors_origin;
    http->set_default_headers({{"Access-Control-Allow-Origin", origin},
                               {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                               {"Access-Control-Allow-Headers", "Content-Type"}});
    auto dispatch = [&service](const httplib::Request& req, httplib::Response& res) {
        Params params(req.params.begin(), req.params.end());
        const auto r = service.handle(req.method, req.path, params, req.body);
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json; charset=utf-8");
    };
    http->Get(R"(/api/.*)", dispatch);
    http->Post(R"(/api/.*)", dispatch);
    http->Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    if (web_root) {
        http->set_mount_point("/", web_root->string());
    }
    return http;
}

}  // namespace cohort::server
