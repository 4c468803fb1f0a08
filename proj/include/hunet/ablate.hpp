#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hunet/manifest.hpp"

namespace hunet {

struct AblationRow {
    std::string components;
    double iou = 0.0;
    double dice = 0.0;
    std::optional<double> assd;
    std::int64_t params = 0;
};

// Trains the dc / dc-rc / dc-rc-ap variants with identical seeds and budgets
// on the same split, evaluating each on the test ids.
std::vector<AblationRow> run_ablation(const std::vector<SamplePair>& samples, const Manifest& manifest,
                                      const std::function<void(const std::string&)>& log = {});

// CSV table: components,iou,dice,assd (assd blank when undefined everywhere).
std::string ablation_table_csv(const std::vector<AblationRow>& rows);

}  // namespace hunet
