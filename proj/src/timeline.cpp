#include "cohort/timeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <tuple>

#include "cohort/errors.hpp"

namespace cohort::timeline {

namespace {

using json = nlohmann::json;

std::vector<Day> transplant_days(const PatientRecord& p) {
    std::vector<Day> days;
    for (const auto& e : p.endpoints) {
        if (e.kind == EndpointKind::transplantation) {
            days.push_back(e.day);
        }
    }
    std::sort(days.begin(), days.end());
    return days;
}

// Numeric lab series per type, sorted by day, for repeated baseline queries.
class LabSeries {
public:
    explicit LabSeries(const PatientRecord& p) {
        for (const auto& l : p.labs) {
            if (l.numeric_value) {
                by_type_[l.term].emplace_back(l.day, *l.numeric_value);
            }
        }
        for (auto& [_, s] : by_type_) {
            std::stable_sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        }
    }

    std::optional<double> deviation(const Event& e, int window) const {
        if (e.kind != EventKind::lab || !e.value) {
            return std::nullopt;
        }
        auto it = by_type_.find(e.type);
        if (it == by_type_.end()) {
            return std::nullopt;
        }
        auto base = baseline(it->second, e.day, window);
        if (!base) {
            return std::nullopt;
        }
        return deviation_pct(*e.value, *base);
    }

    const std::vector<std::pair<Day, double>>* series(const std::string& type) const {
        auto it = by_type_.find(type);
        return it == by_type_.end() ? nullptr : &it->second;
    }

private:
    std::map<std::string, std::vector<std::pair<Day, double>>> by_type_;
};

bool in_episode(const std::vector<Episode>& episodes, Day d) {
    return std::any_of(episodes.begin(), episodes.end(), [d](const Episode& e) { return e.contains(d); });
}

bool in_focus_range(const FocusState& focus, const Event& e) {
    auto f = focus.focus_for(e.layer);
    if (!f) {
        return false;
    }
    const long long x = static_cast<long long>(e.day) - *f;
    return x >= -static_cast<long long>(focus.before) && x <= focus.after;
}

bool significant(const LabSeries& labs, const Event& e, const SignificanceParams& sig) {
    auto dev = labs.deviation(e, sig.window_days);
    return dev && std::abs(*dev) >= sig.threshold_pct;
}

bool passes(const LabSeries& labs, const Event& e, const std::vector<Episode>& episodes, const FocusState* focus,
            const Filters& filters, bool check_focus) {
    if (filters.episode_range && !in_episode(episodes, e.day)) {
        return false;
    }
    if (check_focus && filters.focus_range && (focus == nullptr || !in_focus_range(*focus, e))) {
        return false;
    }
    if (filters.significance && e.kind == EventKind::lab && !significant(labs, e, *filters.significance)) {
        return false;
    }
    return true;
}

void accumulate_hints(const FocusState& focus, const Event& e, Hints& h) {
    auto f = focus.focus_for(e.layer);
    if (!f) {
        return;
    }
    const long long x = static_cast<long long>(e.day) - *f;
    if (x < -static_cast<long long>(focus.before)) {
        const int d = static_cast<int>(-x);
        h.before = h.before ? std::min(*h.before, d) : d;
    } else if (x > focus.after) {
        const int d = static_cast<int>(x);
        h.after = h.after ? std::min(*h.after, d) : d;
    }
}

void validate_focus(const FocusState& focus) {
    if (focus.before < 0 || focus.after < 0) {
        throw RangeError("focus range bounds must be >= 0");
    }
}

void validate_filters(const Filters& f) {
    if (f.episode_range && *f.episode_range < 0) {
        throw RangeError("episode range must be >= 0");
    }
    if (f.significance && (f.significance->window_days < 1 || !(f.significance->threshold_pct > 0))) {
        throw RangeError("significance needs window_days >= 1 and threshold_pct > 0");
    }
}

std::string sort_key(std::string_view type) { return normalize_term(type); }

}  // namespace

std::vector<Episode> compute_episodes(const PatientRecord& patient, int r) {
    if (r < 0) {
        throw RangeError("episode range must be >= 0");
    }
    const auto tx = transplant_days(patient);
    std::vector<Episode> out;
    for (std::size_t i = 0; i < tx.size(); ++i) {
        std::optional<Day> end;
        for (const auto& e : patient.endpoints) {
            if ((e.kind == EndpointKind::failure || e.kind == EndpointKind::death) && e.day >= tx[i] &&
                (i + 1 == tx.size() || e.day < tx[i + 1])) {
                end = end ? std::min(*end, e.day) : e.day;
            }
        }
        Episode ep;
        ep.ordinal = static_cast<int>(i + 1);
        ep.transplant_day = tx[i];
        ep.start_day = tx[i] - r;
        ep.end_day = end.value_or(tx[i]) + r;
        out.push_back(ep);
    }
    return out;
}

int layer_of(const PatientRecord& patient, Day day) {
    const auto tx = transplant_days(patient);
    if (tx.empty()) {
        return 0;
    }
    const auto n = std::upper_bound(tx.begin(), tx.end(), day) - tx.begin();
    return std::max<int>(1, static_cast<int>(n));
}

std::vector<int> patient_layers(const PatientRecord& patient) {
    const auto n = transplant_days(patient).size();
    if (n == 0) {
        return {0};
    }
    std::vector<int> layers;
    for (std::size_t i = 1; i <= n; ++i) {
        layers.push_back(static_cast<int>(i));
    }
    return layers;
}

std::optional<Day> FocusState::focus_for(int layer) const {
    std::optional<Day> global;
    for (const auto& p : focus_points) {
        if (p.layer == layer && layer != 0) {
            return p.day;
        }
        if (p.layer == 0 && !global) {
            global = p.day;
        }
    }
    return global;
}

FocusState align_to_endpoints(const PatientRecord& patient, EndpointKind kind, int before, int after) {
    FocusState f;
    f.before = before;
    f.after = after;
    std::vector<Day> days;
    for (const auto& e : patient.endpoints) {
        if (e.kind == kind) {
            days.push_back(e.day);
        }
    }
    std::sort(days.begin(), days.end());
    std::set<int> used;
    for (Day d : days) {
        const int layer = layer_of(patient, d);
        if (used.insert(layer).second) {
            f.focus_points.push_back({layer, d});
        }
    }
    return f;
}

FocusState align_to_day(Day day, int before, int after) { return FocusState{{{0, day}}, before, after}; }

Tab parse_tab(std::string_view s) {
    if (s == "diagnoses") {
        return Tab::diagnoses;
    }
    if (s == "labs") {
        return Tab::labs;
    }
    throw InputError("unknown tab '" + std::string(s) + "' (expected diagnoses or labs)");
}

std::string_view to_string(Tab t) { return t == Tab::diagnoses ? "diagnoses" : "labs"; }

std::string_view to_string(EventKind k) {
    switch (k) {
        case EventKind::diagnosis: return "diagnosis";
        case EventKind::endpoint: return "endpoint";
        case EventKind::lab: return "lab";
    }
    return "diagnosis";
}

std::vector<Event> collect_events(const PatientRecord& patient, Tab tab) {
    std::vector<Event> out;
    if (tab == Tab::diagnoses) {
        for (const auto& d : patient.diagnoses) {
            out.push_back({EventKind::diagnosis, d.term, d.day, std::nullopt, std::nullopt, layer_of(patient, d.day)});
        }
    } else {
        for (const auto& l : patient.labs) {
            out.push_back({EventKind::lab, l.term, l.day, l.numeric_value, l.text_value, layer_of(patient, l.day)});
        }
    }
    return out;
}

std::optional<double> baseline(const std::vector<std::pair<Day, double>>& series, Day at_day, int window_days) {
    const long long lo = static_cast<long long>(at_day) - window_days;
    auto first = std::lower_bound(series.begin(), series.end(), lo,
                                  [](const auto& p, long long d) { return p.first < d; });
    double sum = 0;
    std::size_t n = 0;
    for (auto it = first; it != series.end() && it->first < at_day; ++it) {
        sum += it->second;
        ++n;
    }
    if (n == 0) {
        return std::nullopt;
    }
    return sum / static_cast<double>(n);
}

std::optional<double> deviation_pct(double value, double base) {
    if (base == 0) {
        return std::nullopt;
    }
    return (value - base) / std::abs(base) * 100.0;
}

std::optional<double> lab_deviation(const PatientRecord& patient, const Event& event, int window_days) {
    return LabSeries(patient).deviation(event, window_days);
}

Hints nearest_event_hints(const FocusState& focus, const std::vector<Event>& candidates) {
    validate_focus(focus);
    Hints h;
    for (const auto& e : candidates) {
        accumulate_hints(focus, e, h);
    }
    return h;
}

bool passes_filters(const PatientRecord& patient, const Event& event, const std::vector<Episode>& episodes,
                    const FocusState* focus, const Filters& filters) {
    validate_filters(filters);
    return passes(LabSeries(patient), event, episodes, focus, filters, true);
}

TypeList filter_event_types(const PatientRecord& patient, Tab tab, const Filters& filters, const FocusState* focus,
                            const std::optional<std::string>& term_substring) {
    validate_filters(filters);
    if (focus != nullptr) {
        validate_focus(*focus);
    }
    if (filters.focus_range && focus == nullptr) {
        throw InputError("focus range filter requires a focus");
    }
    Filters effective = filters;
    if (tab == Tab::diagnoses) {
        effective.significance.reset();
    }
    const LabSeries labs(patient);
    const auto episodes = effective.episode_range ? compute_episodes(patient, *effective.episode_range)
                                                  : std::vector<Episode>{};
    const std::string needle = term_substring ? normalize_term(*term_substring) : std::string();

    std::map<std::pair<std::string, std::string>, TypeSummary> types;
    TypeList list;
    for (const auto& e : collect_events(patient, tab)) {
        if (!needle.empty() && normalize_term(e.type).find(needle) == std::string::npos) {
            continue;
        }
        if (!passes(labs, e, episodes, focus, effective, false)) {
            continue;
        }
        const auto key = std::make_pair(sort_key(e.type), e.type);
        if (focus != nullptr) {
            accumulate_hints(*focus, e, types[key].hints);
            accumulate_hints(*focus, e, list.hints);
        }
        auto& t = types[key];
        t.type = e.type;
        t.kind = e.kind;
        if (effective.focus_range && !in_focus_range(*focus, e)) {
            continue;
        }
        ++t.count;
        if (effective.significance && e.kind == EventKind::lab) {
            const double dev = *labs.deviation(e, effective.significance->window_days);
            if (!t.max_deviation || std::abs(dev) > std::abs(t.max_deviation->deviation_pct)) {
                t.max_deviation = MaxDeviation{dev, e.day, *e.value};
            }
        }
    }
    for (auto& [_, t] : types) {
        if (t.count > 0) {
            list.types.push_back(std::move(t));
        }
    }
    return list;
}

TimelineSeries build_timeline(const PatientRecord& patient, const std::vector<std::string>& selected_types,
                              const FocusState& focus, const Filters& filters, bool include_baselines) {
    if (selected_types.empty()) {
        throw InputError("selected_types must not be empty");
    }
    validate_focus(focus);
    validate_filters(filters);
    const LabSeries labs(patient);
    const auto episodes =
        filters.episode_range ? compute_episodes(patient, *filters.episode_range) : std::vector<Episode>{};
    const int window = filters.significance ? filters.significance->window_days : kDefaultBaselineWindow;

    std::vector<Event> events = collect_events(patient, Tab::diagnoses);
    for (const auto& e : patient.endpoints) {
        events.push_back({EventKind::endpoint, std::string(to_string(e.kind)), e.day, std::nullopt,
                          std::string(to_string(e.kind)) + " #" + std::to_string(e.ordinal),
                          layer_of(patient, e.day)});
    }
    {
        auto lab_events = collect_events(patient, Tab::labs);
        events.insert(events.end(), lab_events.begin(), lab_events.end());
    }

    TimelineSeries out;
    for (int layer : patient_layers(patient)) {
        auto fday = focus.focus_for(layer);
        if (!fday) {
            continue;
        }
        Layer l;
        l.ordinal = layer;
        l.focus_day = *fday;
        for (const auto& type : selected_types) {
            Series s;
            s.type = type;
            bool kind_set = false;
            std::vector<std::pair<const Event*, int>> hits;
            for (const auto& e : events) {
                if (e.type != type) {
                    continue;
                }
                if (!kind_set) {
                    s.kind = e.kind;
                    kind_set = true;
                }
                if (e.layer != layer || !passes(labs, e, episodes, &focus, filters, true)) {
                    continue;
                }
                hits.emplace_back(&e, static_cast<int>(e.day - *fday));
            }
            std::stable_sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
            if (include_baselines && s.kind == EventKind::lab) {
                s.baseline.emplace();
            }
            for (const auto& [e, x] : hits) {
                s.points.push_back({x, e->value, e->label});
                if (e->kind != EventKind::lab || !e->value) {
                    continue;
                }
                if (s.baseline) {
                    if (const auto* series = labs.series(e->type)) {
                        if (auto b = baseline(*series, e->day, window)) {
                            s.baseline->push_back({x, *b});
                        }
                    }
                }
                if (filters.significance) {
                    if (auto dev = labs.deviation(*e, window);
                        dev && std::abs(*dev) >= filters.significance->threshold_pct) {
                        s.flags.push_back({x, *e->value, *dev});
                    }
                }
            }
            l.series.push_back(std::move(s));
        }
        out.layers.push_back(std::move(l));
    }
    return out;
}

json to_json(const Hints& h) {
    json j = json::object();
    j["before"] = h.before ? json(*h.before) : json(nullptr);
    j["after"] = h.after ? json(*h.after) : json(nullptr);
    return j;
}

json to_json(const TimelineSeries& series) {
    json layers = json::array();
    for (const auto& l : series.layers) {
        json ss = json::array();
        for (const auto& s : l.series) {
            json points = json::array();
            for (const auto& p : s.points) {
                json pj{{"x", p.x}};
                if (p.y) {
                    pj["y"] = *p.y;
                }
                if (p.label) {
                    pj["label"] = *p.label;
                }
                points.push_back(std::move(pj));
            }
            json flags = json::array();
            for (const auto& f : s.flags) {
                flags.push_back({{"x", f.x}, {"y", f.y}, {"deviation_pct", f.deviation_pct}});
            }
            json sj{{"type", s.type}, {"kind", std::string(to_string(s.kind))}, {"points", points}, {"flags", flags}};
            if (s.baseline) {
                json b = json::array();
                for (const auto& xy : *s.baseline) {
                    b.push_back({{"x", xy.x}, {"y", xy.y}});
                }
                sj["baseline"] = std::move(b);
            }
            ss.push_back(std::move(sj));
        }
        layers.push_back({{"ordinal", l.ordinal}, {"focus_day", l.focus_day}, {"series", ss}});
    }
    return {{"layers", layers}};
}

json to_json(const TypeList& list) {
    json types = json::array();
    for (const auto& t : list.types) {
        json tj{{"type", t.type},
                {"kind", std::string(to_string(t.kind))},
                {"count", t.count},
                {"hints", to_json(t.hints)}};
        if (t.max_deviation) {
            tj["max_deviation"] = {{"deviation_pct", t.max_deviation->deviation_pct},
                                   {"day", t.max_deviation->day},
                                   {"value", t.max_deviation->value}};
        }
        types.push_back(std::move(tj));
    }
    return {{"types", types}, {"hints", to_json(list.hints)}};
}

json to_json(const std::vector<Episode>& episodes) {
    json out = json::array();
    for (const auto& e : episodes) {
        out.push_back({{"ordinal", e.ordinal},
                       {"transplant_day", e.transplant_day},
                       {"start_day", e.start_day},
                       {"end_day", e.end_day}});
    }
    return out;
}

}  // namespace cohort::timeline
