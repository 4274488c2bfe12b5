// Operator entry point: snapshots, batch annotation, queries, demo cohorts and the server.
// Exit codes: 0 success, 1 input error, 2 internal error.

#include <algorithm>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cohort/demo.hpp"
#include "cohort/errors.hpp"
#include "cohort/extract.hpp"
#include "cohort/index.hpp"
#include "cohort/ingest.hpp"
#include "cohort/query.hpp"
#include "cohort/record_json.hpp"
#include "cohort/server.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cohort;

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << bytes;
    if (!out) {
        throw InputError("cannot write " + path.string());
    }
}

std::unique_ptr<extract::Pipeline> make_pipeline(const std::optional<fs::path>& dict_dir,
                                                 const std::optional<fs::path>& rules) {
    if (!dict_dir && !rules) {
        return nullptr;
    }
    auto config = dict_dir ? extract::load_config(*dict_dir, rules) : extract::default_config();
    if (!dict_dir && rules) {
        config.rules = extract::load_rules(*rules);
    }
    return std::make_unique<extract::Pipeline>(std::move(config));
}

// Inline JSON, "-" for stdin, or a file path.
json restrictions_argument(const std::string& arg) {
    std::string text;
    if (arg == "-") {
        std::ostringstream ss;
        ss << std::cin.rdbuf();
        text = ss.str();
    } else if (const auto first = arg.find_first_not_of(" \t\r\n");
               first != std::string::npos && (arg[first] == '[' || arg[first] == '{')) {
        text = arg;
    } else {
        text = read_file(arg);
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw InputError(std::string("restrictions: malformed JSON (") + e.what() + ")");
    }
    // A single restriction object is accepted as a one-element list.
    if (j.is_object() && j.contains("restrictions")) {
        j = j["restrictions"];
    } else if (j.is_object()) {
        j = json::array({j});
    }
    return j;
}

// ---- subcommands ----

struct IndexArgs {
    fs::path manifest;
    fs::path out;
    std::optional<fs::path> dict_dir;
    std::optional<fs::path> rules;
    std::optional<fs::path> errors;
};

int run_index(const IndexArgs& a) {
    auto manifest = ingest::load_manifest(a.manifest);
    const auto pipeline = make_pipeline(a.dict_dir ? a.dict_dir : manifest.dict_dir, a.rules ? a.rules : manifest.rules);
    const auto result = ingest::run_manifest(manifest, pipeline.get());
    const auto snapshot = make_snapshot(result.assembled.patients);
    save_snapshot(a.out, snapshot);
    const fs::path errors = a.errors.value_or(fs::path(a.out.string() + ".errors.jsonl"));
    ingest::write_error_report(errors, result.errors);
    std::cerr << "indexed " << snapshot.index.patient_count() << " patients, " << snapshot.index.child_count()
              << " child records; " << result.errors.size() << " issues in " << errors.string() << "\n";
    return 0;
}

struct AnnotateArgs {
    fs::path in;
    fs::path out;
    std::optional<fs::path> dict_dir;
    std::optional<fs::path> rules;
    unsigned jobs = 0;
};

int run_annotate(const AnnotateArgs& a) {
    if (!fs::is_directory(a.in)) {
        throw InputError("--in: not a directory: " + a.in.string());
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(a.in)) {
        if (e.is_regular_file()) {
            files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end(), [](const fs::path& x, const fs::path& y) { return x.filename() < y.filename(); });
    auto pipeline = make_pipeline(a.dict_dir, a.rules);
    if (!pipeline) {
        pipeline = std::make_unique<extract::Pipeline>(extract::default_config());
    }

    // Workers pull file indices; lines are written in file-name order.
    std::vector<std::string> lines(files.size());
    std::atomic<std::size_t> next{0};
    const unsigned jobs = std::max(1U, a.jobs != 0 ? a.jobs : std::thread::hardware_concurrency());
    std::vector<std::future<void>> workers;
    for (unsigned w = 0; w < std::min<std::size_t>(jobs, std::max<std::size_t>(files.size(), 1)); ++w) {
        workers.push_back(std::async(std::launch::async, [&] {
            for (std::size_t i = next++; i < files.size(); i = next++) {
                const auto text = read_file(files[i]);
                lines[i] = json{{"file", files[i].filename().string()},
                                {"pipeline_version", pipeline->version()},
                                {"annotations", extract::annotations_to_json(pipeline->annotate(text))}}
                               .dump();
            }
        }));
    }
    for (auto& w : workers) {
        w.get();
    }
    std::string out;
    for (const auto& l : lines) {
        out += l;
        out += '\n';
    }
    write_file(a.out, out);
    std::cerr << "annotated " << files.size() << " files\n";
    return 0;
}

struct QueryArgs {
    fs::path snapshot;
    std::string restrictions = "[]";
    bool as_json = false;
};

int run_query(const QueryArgs& a) {
    const auto restrictions = server::parse_restrictions(restrictions_argument(a.restrictions));
    const auto snapshot = load_snapshot(a.snapshot);
    const auto result = query::evaluate(snapshot.index, restrictions);
    if (a.as_json) {
        std::cout << json{{"total", result.patient_ids.size()}, {"patient_ids", result.patient_ids}}.dump() << "\n";
    } else {
        for (const auto& id : result.patient_ids) {
            std::cout << id << "\n";
        }
    }
    return 0;
}

struct DemoArgs {
    std::size_t patients = 185;
    std::uint64_t seed = 42;
    fs::path out = "demo.snapshot";
    std::optional<fs::path> jsonl;
    bool reference_scale = false;
    std::optional<std::size_t> labs;
    std::optional<std::size_t> diagnoses;
    std::size_t diagnosis_terms = 214;
    std::optional<fs::path> dict_dir;
    std::optional<fs::path> rules;
};

int run_demo(const DemoArgs& a) {
    ingest::DemoOptions o = a.reference_scale ? ingest::reference_scale_options() : ingest::DemoOptions{};
    o.patients = a.patients;
    o.seed = a.seed;
    if (a.labs) o.total_labs = *a.labs;
    if (a.diagnoses) o.total_diagnoses = *a.diagnoses;
    o.distinct_diagnosis_terms = a.diagnosis_terms;
    auto patients = ingest::generate_demo_cohort(o);
    if (const auto pipeline = make_pipeline(a.dict_dir, a.rules)) {
        for (auto& p : patients) {
            for (auto& d : p.documents) {
                d.annotations = pipeline->annotate(d.body);
            }
        }
    }
    if (a.jsonl) {
        std::string lines;
        for (const auto& p : patients) {
            lines += to_json_line(p);
            lines += '\n';
        }
        write_file(*a.jsonl, lines);
    }
    const auto snapshot = make_snapshot(std::move(patients));
    save_snapshot(a.out, snapshot);
    std::cerr << "wrote " << snapshot.index.patient_count() << " patients to " << a.out.string() << "\n";
    return 0;
}

struct ServeArgs {
    std::string host = "127.0.0.1";
    int port = 8080;
    fs::path data_dir = "cohort-data";
    std::optional<fs::path> snapshot;
    std::optional<fs::path> dict_dir;
    std::optional<fs::path> rules;
    std::optional<fs::path> web_root;
    std::uint32_t mincount_default = 5;
    long session_ttl = 3600;
    std::string cors_origin = "*";
};

httplib::Server* g_http = nullptr;

int run_serve(const ServeArgs& a) {
    server::ServiceOptions o;
    o.data_dir = a.data_dir;
    o.snapshot_path = a.snapshot;
    o.dict_dir = a.dict_dir;
    o.rules_path = a.rules;
    o.mincount_default = a.mincount_default;
    o.session_ttl = std::chrono::seconds(a.session_ttl);
    o.cors_origin = a.cors_origin;
    auto snapshot = a.snapshot ? std::make_shared<const Snapshot>(load_snapshot(*a.snapshot))
                               : std::make_shared<const Snapshot>();
    server::Service service(o, std::move(snapshot));
    auto http = server::make_http_server(service, a.web_root);
    g_http = http.get();
    std::signal(SIGINT, [](int) { g_http->stop(); });
    std::signal(SIGTERM, [](int) { g_http->stop(); });
    const int port = a.port == 0 ? http->bind_to_any_port(a.host) : (http->bind_to_port(a.host, a.port) ? a.port : -1);
    if (port < 0) {
        throw InputError("cannot bind " + a.host + ":" + std::to_string(a.port));
    }
    std::cerr << "serving " << service.snapshot()->index.patient_count() << " patients on http://" << a.host << ":"
              << port << std::endl;
    http->listen_after_bind();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Clinical cohort search: indexing, annotation, queries and the workbench service."};
    app.require_subcommand(1);

    IndexArgs index_args;
    auto* index = app.add_subcommand("index", "Ingest the sources named in a manifest and write a snapshot.");
    index->add_option("--manifest", index_args.manifest, "Ingestion manifest (JSON)")->required();
    index->add_option("--out", index_args.out, "Snapshot file to write")->required();
    index->add_option("--dict-dir", index_args.dict_dir, "Dictionary directory; annotates documents")->envname("COHORT_DICT_DIR");
    index->add_option("--rules", index_args.rules, "Rules file (name, type, regex, canonical)")->envname("COHORT_RULES");
    index->add_option("--errors", index_args.errors, "Error report path (default <out>.errors.jsonl)");

    AnnotateArgs annotate_args;
    auto* annotate = app.add_subcommand("annotate", "Annotate every file in a directory into JSON lines.");
    annotate->add_option("--in", annotate_args.in, "Directory of plain-text files")->required();
    annotate->add_option("--out", annotate_args.out, "JSON-lines output, one line per file by name")->required();
    annotate->add_option("--dict-dir", annotate_args.dict_dir, "Dictionary directory")->envname("COHORT_DICT_DIR");
    annotate->add_option("--rules", annotate_args.rules, "Rules file")->envname("COHORT_RULES");
    annotate->add_option("--jobs", annotate_args.jobs, "Worker threads (default: hardware)");

    QueryArgs query_args;
    auto* query = app.add_subcommand("query", "Evaluate restrictions and print matching patient ids, one per line.");
    query->add_option("--snapshot", query_args.snapshot, "Snapshot file")->required()->envname("COHORT_SNAPSHOT");
    query->add_option("--restrictions", query_args.restrictions,
                      "Restriction JSON: inline, a file path, or - for stdin (default [])");
    query->add_flag("--json", query_args.as_json, "Print {total, patient_ids} instead");

    DemoArgs demo_args;
    auto* demo = app.add_subcommand("demo", "Generate a synthetic cohort snapshot (reproducible by seed).");
    demo->add_option("--patients", demo_args.patients, "Number of patients")->capture_default_str();
    demo->add_option("--seed", demo_args.seed, "Random seed")->capture_default_str();
    demo->add_option("--out,--snapshot", demo_args.out, "Snapshot file to write")->capture_default_str();
    demo->add_option("--jsonl", demo_args.jsonl, "Also write the patient records as JSON lines");
    demo->add_flag("--reference-scale", demo_args.reference_scale,
                   "Use the reference volumes (6300 diagnoses, 830k labs, 25k medications, 12k examinations)");
    demo->add_option("--labs", demo_args.labs, "Total lab values across the cohort");
    demo->add_option("--diagnoses", demo_args.diagnoses, "Total diagnoses across the cohort");
    demo->add_option("--diagnosis-terms", demo_args.diagnosis_terms, "Distinct diagnosis terms")->capture_default_str();
    demo->add_option("--dict-dir", demo_args.dict_dir, "Annotate the generated documents with these dictionaries");
    demo->add_option("--rules", demo_args.rules, "Rules file for annotation");

    ServeArgs serve_args;
    auto* serve = app.add_subcommand("serve", "Run the workbench HTTP/JSON service.");
    serve->add_option("--host", serve_args.host, "Bind address")->envname("COHORT_HOST")->capture_default_str();
    serve->add_option("--port", serve_args.port, "Port (0 picks a free one)")->envname("COHORT_PORT")->capture_default_str();
    serve->add_option("--data-dir", serve_args.data_dir, "Saved result sets and the feedback log")
        ->envname("COHORT_DATA_DIR")
        ->capture_default_str();
    serve->add_option("--snapshot", serve_args.snapshot, "Snapshot to serve; reloaded by /api/admin/reload")
        ->envname("COHORT_SNAPSHOT");
    serve->add_option("--dict-dir", serve_args.dict_dir, "Dictionary directory; user entries are appended here")
        ->envname("COHORT_DICT_DIR");
    serve->add_option("--rules", serve_args.rules, "Rules file")->envname("COHORT_RULES");
    serve->add_option("--mincount-default", serve_args.mincount_default, "Default facet menu mincount")
        ->envname("COHORT_MINCOUNT_DEFAULT")
        ->capture_default_str();
    serve->add_option("--session-ttl", serve_args.session_ttl, "Idle session lifetime in seconds")
        ->envname("COHORT_SESSION_TTL")
        ->capture_default_str();
    serve->add_option("--cors-origin", serve_args.cors_origin, "Access-Control-Allow-Origin value")
        ->envname("COHORT_CORS_ORIGIN")
        ->capture_default_str();
    serve->add_option("--web-root", serve_args.web_root, "Static web client directory")->envname("COHORT_WEB_ROOT");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*index) return run_index(index_args);
        if (*annotate) return run_annotate(annotate_args);
        if (*query) return run_query(query_args);
        if (*demo) return run_demo(demo_args);
        if (*serve) return run_serve(serve_args);
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
