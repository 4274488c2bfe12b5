#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cohort/extract.hpp"

namespace golden {

struct Mismatch {
    std::string id;
    std::string expected;
    std::string actual;
};

inline nlohmann::json load(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return nlohmann::json::parse(ss.str());
}

// Compares the canonical dump of each pipeline result with the golden entry.
inline std::vector<Mismatch> run(const cohort::extract::Pipeline& pipeline, const nlohmann::json& cases) {
    std::vector<Mismatch> out;
    for (const auto& c : cases) {
        const std::string actual = cohort::extract::annotations_to_json(pipeline.annotate(c.at("text").get<std::string>())).dump();
        const std::string expected = c.at("annotations").dump();
        if (actual != expected) {
            out.push_back({c.at("id").get<std::string>(), expected, actual});
        }
    }
    return out;
}

}  // namespace golden
