#include <algorithm>
#include <array>
#include <random>

#include <nlohmann/json.hpp>

#include "doctest.h"

#include "cohort/demo.hpp"
#include "cohort/errors.hpp"
#include "cohort/timeline.hpp"
#include "fixtures.hpp"
#include "timeline_oracle.hpp"

using namespace cohort;
using namespace cohort::timeline;

namespace {

PatientRecord with_endpoints(std::vector<std::pair<EndpointKind, Day>> eps) {
    auto p = fixture::patient("T");
    for (auto [k, d] : eps) fixture::endpoint(p, k, d);
    return fixture::finish(p);
}

PatientRecord rejection_fixture() { return fixture::rejection_scenario(); }

tloracle::Focus oracle_focus(const FocusState& f) {
    tloracle::Focus out;
    for (const auto& p : f.focus_points) out.emplace(p.layer, p.day);
    return out;
}

}  // namespace

TEST_CASE("episodes follow the transplant and its terminating event") {
    using K = EndpointKind;
    auto e1 = compute_episodes(with_endpoints({{K::transplantation, 100}, {K::failure, 400}}), 30);
    REQUIRE(e1.size() == 1);
    CHECK(e1[0].start_day == 70);
    CHECK(e1[0].end_day == 430);

    auto e2 = compute_episodes(with_endpoints({{K::transplantation, 100}}), 30);
    REQUIRE(e2.size() == 1);
    CHECK(e2[0].start_day == 70);
    CHECK(e2[0].end_day == 130);

    auto e3 = compute_episodes(with_endpoints({{K::transplantation, 100}, {K::failure, 400}, {K::transplantation, 500}}), 0);
    REQUIRE(e3.size() == 2);
    CHECK(std::pair(e3[0].start_day, e3[0].end_day) == std::pair<Day, Day>(100, 400));
    CHECK(std::pair(e3[1].start_day, e3[1].end_day) == std::pair<Day, Day>(500, 500));
    CHECK(e3[1].ordinal == 2);

    auto death = compute_episodes(with_endpoints({{K::transplantation, 100}, {K::death, 150}, {K::failure, 120}}), 5);
    CHECK(death[0].end_day == 125);

    CHECK(compute_episodes(with_endpoints({{K::failure, 3}}), 10).empty());
    CHECK_THROWS_AS(compute_episodes(with_endpoints({}), -1), RangeError);
}

TEST_CASE("nearest event hints") {
    const auto focus = align_to_day(100);
    auto ev = [](Day d) { return Event{EventKind::diagnosis, "x", d, {}, {}, 0}; };
    CHECK(nearest_event_hints(focus, {ev(93), ev(102), ev(80), ev(110)}) == Hints{7, 2});
    CHECK(nearest_event_hints(focus, {}) == Hints{});
    CHECK(nearest_event_hints(focus, {ev(100)}) == Hints{});
    // With a range the hints look beyond it.
    const auto wide = align_to_day(100, 10, 5);
    CHECK(nearest_event_hints(wide, {ev(93), ev(102), ev(80), ev(110)}) == Hints{20, 10});
    CHECK_THROWS_AS(nearest_event_hints(align_to_day(0, -1, 0), {}), RangeError);
}

TEST_CASE("baseline and deviation") {
    const Day d = 500;
    CHECK(baseline({{d - 3, 10}, {d - 2, 10}, {d - 1, 10}}, d, 5) == 10.0);
    CHECK_FALSE(baseline({{d - 9, 10}}, d, 5).has_value());
    CHECK_FALSE(baseline({}, d, 5).has_value());
    CHECK(baseline({{d - 2, 8}, {d - 1, 12}}, d, 3) == 10.0);
    // The value at the day itself and exactly window+1 before are excluded.
    CHECK(baseline({{d - 4, 100}, {d - 3, 8}, {d, 1000}}, d, 3) == 8.0);
    CHECK(deviation_pct(40, 10) == 300.0);
    CHECK(deviation_pct(10, 10) == 0.0);
    CHECK(deviation_pct(5, 10) == -50.0);
    CHECK_FALSE(deviation_pct(5, 0).has_value());
    CHECK(*deviation_pct(48, 14.0) == doctest::Approx(242.857).epsilon(1e-4));
}

TEST_CASE("significance scenario: 48 against a baseline of 14 three days before rejection") {
    const auto p = rejection_fixture();
    const auto focus = align_to_endpoints(p, EndpointKind::rejection);
    Filters f;
    f.significance = SignificanceParams{30, 200};
    const auto tl = build_timeline(p, {"ASTHP (U/l)"}, focus, f, true);
    REQUIRE(tl.layers.size() == 1);
    const auto& s = tl.layers[0].series.at(0);
    REQUIRE(s.flags.size() == 1);
    CHECK(s.flags[0].x == -3);
    CHECK(s.flags[0].y == 48.0);
    CHECK(std::abs(s.flags[0].deviation_pct - 242.9) <= 0.5);
    // F3 removes the unremarkable points.
    CHECK(s.points.size() == 1);

    const auto types = filter_event_types(p, Tab::labs, f, &focus);
    REQUIRE(types.types.size() == 1);
    REQUIRE(types.types[0].max_deviation);
    CHECK(types.types[0].max_deviation->day == 997);
    CHECK(types.types[0].count == 1);
}

TEST_CASE("alignment: events on the focus day sit at x = 0 and realignment shifts x") {
    const auto p = rejection_fixture();
    Filters none;
    const auto at_tx = build_timeline(p, {"ASTHP (U/l)", "transplantation"}, align_to_endpoints(p, EndpointKind::transplantation), none, false);
    CHECK(at_tx.layers[0].series[1].points.at(0).x == 0);
    CHECK(at_tx.layers[0].series[1].points.at(0).label == "transplantation #1");

    const auto a = build_timeline(p, {"ASTHP (U/l)"}, align_to_day(100), none, false);
    const auto b = build_timeline(p, {"ASTHP (U/l)"}, align_to_day(103), none, false);
    const auto& pa = a.layers[0].series[0].points;
    const auto& pb = b.layers[0].series[0].points;
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pb[i].x == pa[i].x - 3);

    CHECK_THROWS_AS(build_timeline(p, {}, align_to_day(0), none, false), InputError);
    const auto empty = build_timeline(p, {"Nothing"}, align_to_day(0), none, false);
    CHECK(empty.layers[0].series.at(0).points.empty());
}

TEST_CASE("F1 with r = 0 and no events on transplant days gives no types") {
    auto p = fixture::patient("E");
    fixture::endpoint(p, EndpointKind::transplantation, 100);
    fixture::diagnosis(p, "Hypertonie", 50);
    fixture::diagnosis(p, "Anämie", 101);
    p = fixture::finish(p);
    Filters f;
    f.episode_range = 0;
    CHECK(filter_event_types(p, Tab::diagnoses, f).types.empty());
    Filters off;
    CHECK(filter_event_types(p, Tab::diagnoses, off).types.size() == 2);
    CHECK(filter_event_types(p, Tab::diagnoses, off, nullptr, std::string("anäm")).types.size() == 1);
}

TEST_CASE("F2 without a focus is an input error") {
    Filters f;
    f.focus_range = true;
    CHECK_THROWS_AS(filter_event_types(rejection_fixture(), Tab::labs, f), InputError);
}

TEST_CASE("filters agree with the exhaustive oracle on random patients") {
    ingest::DemoOptions o;
    o.patients = 110;
    o.seed = 17;
    const auto cohort = ingest::generate_demo_cohort(o);
    std::mt19937 rng(23);
    auto coin = [&] { return rng() % 2 == 0; };
    std::size_t non_trivial = 0;
    for (const auto& p : cohort) {
        tloracle::Params q;
        Filters f;
        if (coin()) f.episode_range = q.r = static_cast<int>(rng() % 120);
        FocusState focus;
        if (coin()) {
            const auto k = kAllEndpointKinds[rng() % 6];
            focus = align_to_endpoints(p, k, static_cast<int>(rng() % 200), static_cast<int>(rng() % 200));
        } else {
            focus = align_to_day(static_cast<Day>(38000 + rng() % 6000), static_cast<int>(rng() % 400),
                                 static_cast<int>(rng() % 400));
        }
        if (coin()) {
            f.focus_range = true;
            q.range = std::pair(focus.before, focus.after);
        }
        if (coin()) {
            f.significance = SignificanceParams{1 + static_cast<int>(rng() % 90), 5.0 + rng() % 80};
            q.sig = std::pair(f.significance->window_days, f.significance->threshold_pct);
        }
        const auto ofocus = oracle_focus(focus);
        for (Tab tab : {Tab::diagnoses, Tab::labs}) {
            const auto got = filter_event_types(p, tab, f, &focus);
            const auto want = tloracle::counts(p, tab == Tab::labs, q, ofocus);
            std::map<std::string, std::size_t> got_counts;
            for (const auto& t : got.types) got_counts[t.type] = t.count;
            CHECK(got_counts == want);
            non_trivial += want.empty() ? 0 : 1;

            // Hints: events passing F1 and F3, beyond the focus range.
            std::optional<int> hb;
            std::optional<int> ha;
            for (const auto& e : tloracle::events(p, tab == Tab::labs)) {
                if (!tloracle::f1(p, e, q) || !tloracle::f3(p, e, q)) continue;
                auto fd = tloracle::focus_of(ofocus, tloracle::layer(p, e.day));
                if (!fd) continue;
                const int x = e.day - *fd;
                if (x < -focus.before) hb = std::min(hb.value_or(1 << 30), -x);
                if (x > focus.after) ha = std::min(ha.value_or(1 << 30), x);
            }
            CHECK(got.hints == Hints{hb, ha});
        }
    }
    CHECK(non_trivial > 50);
}

TEST_CASE("filter application order does not matter") {
    ingest::DemoOptions o;
    o.patients = 30;
    o.seed = 4;
    const auto cohort = ingest::generate_demo_cohort(o);
    for (const auto& p : cohort) {
        const auto focus = align_to_endpoints(p, EndpointKind::transplantation, 60, 90);
        std::array<Filters, 3> single;
        single[0].episode_range = 20;
        single[1].focus_range = true;
        single[2].significance = SignificanceParams{30, 25};
        Filters all;
        all.episode_range = 20;
        all.focus_range = true;
        all.significance = SignificanceParams{30, 25};
        const auto episodes = compute_episodes(p, 20);

        const auto events = collect_events(p, Tab::labs);
        std::vector<std::size_t> combined;
        for (std::size_t i = 0; i < events.size(); ++i)
            if (passes_filters(p, events[i], episodes, &focus, all)) combined.push_back(i);

        std::array<int, 3> order{0, 1, 2};
        do {
            std::vector<std::size_t> alive(events.size());
            for (std::size_t i = 0; i < alive.size(); ++i) alive[i] = i;
            std::vector<std::size_t> after_first;
            for (int step = 0; step < 3; ++step) {
                std::vector<std::size_t> next;
                for (auto i : alive)
                    if (passes_filters(p, events[i], episodes, &focus, single[order[step]])) next.push_back(i);
                CHECK(next.size() <= alive.size());
                alive = std::move(next);
            }
            CHECK(alive == combined);
        } while (std::next_permutation(order.begin(), order.end()));
    }
}

TEST_CASE("realignment keeps pairwise day differences") {
    ingest::DemoOptions o;
    o.patients = 40;
    o.seed = 8;
    const auto cohort = ingest::generate_demo_cohort(o);
    std::mt19937 rng(3);
    for (const auto& p : cohort) {
        if (p.labs.empty()) continue;
        const std::string type = p.labs[rng() % p.labs.size()].term;
        const Day a = static_cast<Day>(38000 + rng() % 5000);
        const Day b = static_cast<Day>(38000 + rng() % 5000);
        Filters f;
        const auto ta = build_timeline(p, {type}, align_to_day(a), f, false);
        const auto tb = build_timeline(p, {type}, align_to_day(b), f, false);
        REQUIRE(ta.layers.size() == tb.layers.size());
        for (std::size_t l = 0; l < ta.layers.size(); ++l) {
            const auto& xa = ta.layers[l].series[0].points;
            const auto& xb = tb.layers[l].series[0].points;
            REQUIRE(xa.size() == xb.size());
            for (std::size_t i = 0; i < xa.size(); ++i) {
                CHECK(xa[i].x - xb[i].x == b - a);
                if (i > 0) CHECK(xa[i].x - xa[i - 1].x == xb[i].x - xb[i - 1].x);
            }
        }
    }
}

TEST_CASE("layers follow transplantation count") {
    auto p = with_endpoints({{EndpointKind::transplantation, 100}, {EndpointKind::transplantation, 500}});
    CHECK(layer_of(p, 50) == 1);
    CHECK(layer_of(p, 100) == 1);
    CHECK(layer_of(p, 499) == 1);
    CHECK(layer_of(p, 500) == 2);
    CHECK(patient_layers(p) == std::vector<int>{1, 2});
    CHECK(layer_of(with_endpoints({}), 5) == 0);

    const auto f = align_to_endpoints(p, EndpointKind::transplantation);
    CHECK(f.focus_for(1) == 100);
    CHECK(f.focus_for(2) == 500);
    FocusState mixed{{{0, 7}, {2, 9}}, 0, 0};
    CHECK(mixed.focus_for(1) == 7);
    CHECK(mixed.focus_for(2) == 9);
}

TEST_CASE("timeline JSON shape") {
    const auto p = rejection_fixture();
    Filters f;
    f.significance = SignificanceParams{30, 200};
    const auto j = to_json(build_timeline(p, {"ASTHP (U/l)", "Akute Abstoßung"}, align_to_endpoints(p, EndpointKind::rejection), f, true));
    const auto& layer = j.at("layers").at(0);
    CHECK(layer.at("ordinal") == 1);
    CHECK(layer.at("focus_day") == 1000);
    CHECK(layer.at("series").at(0).at("kind") == "lab");
    CHECK(layer.at("series").at(0).contains("baseline"));
    CHECK(layer.at("series").at(1).at("kind") == "diagnosis");
    CHECK_FALSE(layer.at("series").at(1).contains("baseline"));
    CHECK(layer.at("series").at(1).at("points").at(0).at("x") == 0);
    CHECK(to_json(Hints{3, std::nullopt}).at("after").is_null());
}
