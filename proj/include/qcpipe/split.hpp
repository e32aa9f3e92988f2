#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace qc {

/// Image-id partition into a held-out test set and per-fold train/validation lists.
struct DatasetSplit {
    std::vector<std::vector<std::string>> train;
    std::vector<std::vector<std::string>> validation;
    std::vector<std::string> test;
    int n_folds = 0;

    friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

/// Returns a description of the first patient or image leak found, or an empty string.
inline std::string find_split_leak(const DatasetSplit& split,
                                   const std::map<std::string, std::string>& patient_of) {
    auto patients = [&](const std::vector<std::string>& ids) {
        std::set<std::string> out;
        for (const auto& id : ids) {
            auto it = patient_of.find(id);
            out.insert(it == patient_of.end() ? "<unknown:" + id + ">" : it->second);
        }
        return out;
    };
    auto overlap = [](const std::set<std::string>& a, const std::set<std::string>& b) -> std::string {
        for (const auto& p : a)
            if (b.count(p)) return p;
        return {};
    };

    const auto test_patients = patients(split.test);
    for (std::size_t f = 0; f < split.train.size(); ++f) {
        const auto tr = patients(split.train[f]);
        const auto va = f < split.validation.size() ? patients(split.validation[f]) : std::set<std::string>{};
        if (auto p = overlap(tr, test_patients); !p.empty())
            return "fold " + std::to_string(f) + ": patient " + p + " in train and test";
        if (auto p = overlap(va, test_patients); !p.empty())
            return "fold " + std::to_string(f) + ": patient " + p + " in validation and test";
        if (auto p = overlap(tr, va); !p.empty())
            return "fold " + std::to_string(f) + ": patient " + p + " in train and validation";
    }
    return {};
}

inline void to_json(nlohmann::json& j, const DatasetSplit& s) {
    j = {{"n_folds", s.n_folds}, {"train", s.train}, {"validation", s.validation}, {"test", s.test}};
}
inline void from_json(const nlohmann::json& j, DatasetSplit& s) {
    s.n_folds = j.at("n_folds").get<int>();
    s.train = j.at("train").get<std::vector<std::vector<std::string>>>();
    s.validation = j.at("validation").get<std::vector<std::vector<std::string>>>();
    s.test = j.at("test").get<std::vector<std::string>>();
}

}  // namespace qc
