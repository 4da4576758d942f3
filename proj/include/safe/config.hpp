// Copyright 2026 The safe-cf Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "safe/greybox.hpp"
#include "safe/trainer.hpp"

namespace safe {

/// Everything a CLI run can be configured with. Built-in defaults come from
/// the member initialisers; a JSON config file overrides them, and command
/// line flags override the file.
struct RunConfig {
  TrainingConfig training;
  GreyBoxTrainConfig greybox_training;
  ConvClassifierConfig greybox_arch;
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> val_data;
  std::optional<std::filesystem::path> output_dir;
};

/// Applies the keys of `j` on top of `base`. Unknown keys (at any nesting
/// level) raise ConfigError naming the key.
RunConfig apply_config_json(const nlohmann::json& j, RunConfig base = {});

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

/// Full key set with current values; round-trips through apply_config_json.
nlohmann::json to_json(const RunConfig& config);

}  // namespace safe
