#pragma once

// Per-patient event timelines: transplantation episodes (F1), a focus range
// around per-layer focus points (F2) and lab significance against a trailing
// moving average (F3). Each filter is a predicate on a single event, so the
// filters commute.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cohort/datamodel.hpp"

namespace cohort::timeline {

inline constexpr int kDefaultEpisodeRange = 30;
inline constexpr int kDefaultBaselineWindow = 30;
inline constexpr double kDefaultThresholdPct = 50.0;

struct Episode {
    int ordinal = 1;  // transplantation number
    Day transplant_day = 0;
    Day start_day = 0;
    Day end_day = 0;

    bool contains(Day d) const { return d >= start_day && d <= end_day; }
    bool operator==(const Episode&) const = default;
};

// One episode per transplantation: [tx - r, end + r] where end is the first
// failure or death on or after the transplant and before the next one,
// otherwise the transplant day itself. Throws RangeError for r < 0.
std::vector<Episode> compute_episodes(const PatientRecord& patient, int r);

// Layer of a day: the number of transplantations on or before it (at least
// 1) for transplanted patients, otherwise 0.
int layer_of(const PatientRecord& patient, Day day);
std::vector<int> patient_layers(const PatientRecord& patient);

struct FocusPoint {
    int layer = 0;  // 0 applies to every layer
    Day day = 0;

    bool operator==(const FocusPoint&) const = default;
};

struct FocusState {
    std::vector<FocusPoint> focus_points;
    int before = 0;
    int after = 0;

    // Focus day governing a layer, if any.
    std::optional<Day> focus_for(int layer) const;
    bool operator==(const FocusState&) const = default;
};

// One focus point per layer at each endpoint of `kind` (earliest per layer).
FocusState align_to_endpoints(const PatientRecord& patient, EndpointKind kind, int before = 0, int after = 0);
// A single global focus point.
FocusState align_to_day(Day day, int before = 0, int after = 0);

struct SignificanceParams {
    int window_days = kDefaultBaselineWindow;
    double threshold_pct = kDefaultThresholdPct;

    bool operator==(const SignificanceParams&) const = default;
};

// Each filter is active when set.
struct Filters {
    std::optional<int> episode_range;               // F1
    bool focus_range = false;                        // F2, uses the FocusState range
    std::optional<SignificanceParams> significance;  // F3, labs only

    bool operator==(const Filters&) const = default;
};

enum class Tab : std::uint8_t { diagnoses, labs };
Tab parse_tab(std::string_view s);
std::string_view to_string(Tab t);

enum class EventKind : std::uint8_t { diagnosis, endpoint, lab };
std::string_view to_string(EventKind k);

struct Event {
    EventKind kind = EventKind::diagnosis;
    std::string type;  // diagnosis term, endpoint kind name or lab term
    Day day = 0;
    std::optional<double> value;
    std::optional<std::string> label;
    int layer = 0;

    bool operator==(const Event&) const = default;
};

// Diagnosis events or lab values. Endpoints are not listed as types but can be
// drawn by selecting their kind name in build_timeline.
std::vector<Event> collect_events(const PatientRecord& patient, Tab tab);

// Mean of values with day in [at_day - window_days, at_day); series sorted by day.
std::optional<double> baseline(const std::vector<std::pair<Day, double>>& series, Day at_day, int window_days);

// (value - base) / |base| * 100; absent when base is 0.
std::optional<double> deviation_pct(double value, double base);

// Deviation of a lab event against its own type's numeric series.
std::optional<double> lab_deviation(const PatientRecord& patient, const Event& event, int window_days);

struct Hints {
    std::optional<int> before;  // distance to the nearest event earlier than -before
    std::optional<int> after;   // distance to the nearest event later than +after

    bool operator==(const Hints&) const = default;
};

// Nearest events outside the current focus range on each side, measured from
// the focus of each event's layer and minimized across layers. With a zero
// range this is the nearest event strictly before / after the focus.
Hints nearest_event_hints(const FocusState& focus, const std::vector<Event>& candidates);

struct MaxDeviation {
    double deviation_pct = 0;
    Day day = 0;
    double value = 0;

    bool operator==(const MaxDeviation&) const = default;
};

struct TypeSummary {
    std::string type;
    EventKind kind = EventKind::diagnosis;
    std::size_t count = 0;
    Hints hints;
    std::optional<MaxDeviation> max_deviation;  // labs with F3 active

    bool operator==(const TypeSummary&) const = default;
};

struct TypeList {
    std::vector<TypeSummary> types;  // sorted by (normalized type, type)
    Hints hints;                     // across all listed types

    bool operator==(const TypeList&) const = default;
};

// Whether one event passes every active filter.
bool passes_filters(const PatientRecord& patient, const Event& event, const std::vector<Episode>& episodes,
                    const FocusState* focus, const Filters& filters);

// F3 is ignored on the diagnoses tab. Hints consider events that pass every
// active filter except F2. `focus` is required when F2 is active.
TypeList filter_event_types(const PatientRecord& patient, Tab tab, const Filters& filters,
                            const FocusState* focus = nullptr,
                            const std::optional<std::string>& term_substring = std::nullopt);

struct Point {
    int x = 0;
    std::optional<double> y;
    std::optional<std::string> label;

    bool operator==(const Point&) const = default;
};

struct XY {
    int x = 0;
    double y = 0;

    bool operator==(const XY&) const = default;
};

struct Flag {
    int x = 0;
    double y = 0;
    double deviation_pct = 0;

    bool operator==(const Flag&) const = default;
};

struct Series {
    std::string type;
    EventKind kind = EventKind::diagnosis;
    std::vector<Point> points;
    std::optional<std::vector<XY>> baseline;
    std::vector<Flag> flags;

    bool operator==(const Series&) const = default;
};

struct Layer {
    int ordinal = 0;
    Day focus_day = 0;
    std::vector<Series> series;  // one per selected type, possibly empty

    bool operator==(const Layer&) const = default;
};

struct TimelineSeries {
    std::vector<Layer> layers;  // ascending ordinal, first at the bottom

    bool operator==(const TimelineSeries&) const = default;
};

// Throws InputError when selected_types is empty. Layers without a focus
// point are omitted. Flags are reported when F3 is active; baselines use the
// F3 window (or the default window) when requested.
TimelineSeries build_timeline(const PatientRecord& patient, const std::vector<std::string>& selected_types,
                              const FocusState& focus, const Filters& filters, bool include_baselines);

nlohmann::json to_json(const TimelineSeries& series);
nlohmann::json to_json(const TypeList& list);
nlohmann::json to_json(const Hints& hints);
nlohmann::json to_json(const std::vector<Episode>& episodes);

}  // namespace cohort::timeline
