#pragma once

// Workbench HTTP/JSON service. `Service` holds the state and answers
// requests as (status, JSON) pairs without any transport; the httplib
// adapter in make_http_server only moves bytes.

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cohort/extract.hpp"
#include "cohort/index.hpp"
#include "cohort/query.hpp"
#include "cohort/timeline.hpp"

namespace httplib {
class Server;
}

namespace cohort::server {

struct Response {
    int status = 200;
    nlohmann::json body;
};

using Params = std::multimap<std::string, std::string>;

struct ServiceOptions {
    std::filesystem::path data_dir = "cohort-data";
    std::optional<std::filesystem::path> snapshot_path;  // reloaded by /api/admin/reload
    std::optional<std::filesystem::path> dict_dir;
    std::optional<std::filesystem::path> rules_path;
    std::uint32_t mincount_default = 5;
    std::size_t top_k_default = 4;
    std::size_t page_limit_default = 20;
    std::size_t page_limit_max = 1000;
    std::chrono::seconds session_ttl{3600};
    std::string cors_origin = "*";
};

// A named group of facets the client opens and closes as a unit.
struct FacetBlock {
    std::string name;
    std::vector<std::string> keyword_fields;
    std::vector<std::string> numeric_fields;
};

const std::vector<FacetBlock>& facet_blocks();
const FacetBlock* find_block(std::string_view name);

struct PatientProfile {
    std::string patient_id;
    Sex sex = Sex::unknown;
    std::optional<int> age;
    bool deceased = false;
    std::optional<Day> basic_disease_day;
    // Diagnoses recorded on the basic disease day.
    std::vector<std::string> basic_diseases;
    std::optional<Day> first_dialysis_day;
    int transplant_count = 0;
    int failure_count = 0;

    bool operator==(const PatientProfile&) const = default;
};

PatientProfile make_profile(const PatientRecord& patient);

nlohmann::json to_json(const PatientProfile& p);
nlohmann::json to_json(const query::FacetReport& r);
nlohmann::json to_json(const query::NumericSummary& s);
nlohmann::json to_json(const std::vector<query::IntervalCount>& buckets);
nlohmann::json to_json(const query::FreeTextResult& r);
nlohmann::json to_json(const std::vector<query::ComparedAnnotation>& compared);

// Parses {"episode_range": int|null, "focus_range": bool,
// "significance": {"window_days", "threshold_pct"}|null}.
timeline::Filters filters_from_json(const nlohmann::json& j);
// One of {"points": [{"layer", "day"}]}, {"align": "<endpoint kind>"} or
// {"day": int}, each with optional "before"/"after".
timeline::FocusState focus_from_json(const PatientRecord& patient, const nlohmann::json& j);

// Restrictions from a JSON array; error messages name "restrictions[i]...".
std::vector<query::Restriction> parse_restrictions(const nlohmann::json& j);

struct SavedResultSet {
    std::string name;
    std::vector<std::string> patient_ids;
    nlohmann::json restrictions;
    std::string created_at;

    bool operator==(const SavedResultSet&) const = default;
};

class Service {
public:
    Service(ServiceOptions options, std::shared_ptr<const Snapshot> snapshot);

    const ServiceOptions& options() const { return options_; }
    std::shared_ptr<const Snapshot> snapshot() const;
    std::shared_ptr<const extract::Pipeline> pipeline() const;
    // In-flight requests keep the snapshot they started with.
    void swap_snapshot(std::shared_ptr<const Snapshot> next);
    void swap_pipeline(std::shared_ptr<const extract::Pipeline> next);

    Response search(const nlohmann::json& body);
    Response facets(const Params& params);
    Response intervals(const nlohmann::json& body);
    Response fulltext(const nlohmann::json& body);
    Response patient(const std::string& patient_id);
    Response annotate(const nlohmann::json& body);
    Response add_dictionary_entry(const nlohmann::json& body);
    Response feedback(const nlohmann::json& body);
    Response timeline(const nlohmann::json& body);
    Response timeline_types(const Params& params);
    Response save_resultset(const nlohmann::json& body);
    Response list_resultsets();
    Response reload(const nlohmann::json& body);
    Response blocks();

    // Routes a request by method and path. The body is raw text; malformed
    // JSON and library errors become 4xx/5xx responses with {"error", "field"?}.
    Response handle(std::string_view method, std::string_view path, const Params& params,
                    std::string_view body);

    std::size_t session_count() const;

private:
    struct Session {
        std::vector<query::Restriction> restrictions;
        std::set<std::string> open_blocks;
        std::chrono::steady_clock::time_point last_used;
        std::shared_ptr<const Snapshot> evaluated_on;
        query::PatientSet matched;
    };
    struct Evaluated {
        std::string session_id;
        std::vector<query::Restriction> restrictions;
        std::set<std::string> open_blocks;
        std::shared_ptr<const Snapshot> snapshot;
        query::PatientSet matched;
    };

    // Session named in `session_id` (404 when unknown) or a fresh one when
    // absent. Explicit restrictions replace the session's.
    Evaluated resolve(const std::optional<std::string>& session_id,
                      const std::optional<std::vector<query::Restriction>>& restrictions,
                      bool create);
    nlohmann::json block_report(const FacetBlock& block, const NestedIndex& index,
                                const query::PatientSet& matched, const query::FacetOptions& options) const;
    void purge_expired_locked();
    void persist_resultsets_locked() const;
    std::string new_session_id();

    ServiceOptions options_;
    mutable std::mutex snapshot_mutex_;
    std::shared_ptr<const Snapshot> snapshot_;
    std::shared_ptr<const extract::Pipeline> pipeline_;
    std::mutex writer_mutex_;  // dictionary edits, reloads
    mutable std::mutex session_mutex_;
    std::map<std::string, Session> sessions_;
    std::uint64_t session_counter_ = 0;
    mutable std::mutex resultset_mutex_;
    std::vector<SavedResultSet> resultsets_;
    extract::FeedbackLog feedback_;
};

// Registers every /api route plus CORS handling on a new httplib server.
// Static files under `web_root` are served when given.
std::unique_ptr<httplib::Server> make_http_server(Service& service,
                                                  const std::optional<std::filesystem::path>& web_root = {});

}  // namespace cohort::server
