#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "hazeforge/physloss.hpp"

namespace hazeforge {

// Every tunable reachable from a config file, addressed as <section>.<field>
// with sections dcp, bccr, fusion, loss and train.
struct RunSettings {
    PriorConfigs priors;
    LossConfig loss;
    TrainConfig train;

    void validate() const;
};

// Applies `dotted.key=value` lines; '#' starts a comment, blank lines are ignored.
// Unknown keys, malformed lines and unparsable values throw ConfigError naming the line.
void apply_config_text(std::string_view text, RunSettings& settings);
void apply_config_file(const std::filesystem::path& path, RunSettings& settings);

// Sorted list of accepted keys.
std::vector<std::string> config_keys();

}  // namespace hazeforge
