// Copyright 2026 The medpose Authors. All Rights Reserved.
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

#include <ostream>
#include <string>
#include <vector>

#include "medpose/trainer.hpp"

namespace medpose {

/// Runs one subcommand (train, eval, predict, synth, report) and returns the
/// process exit code. Failures print a single-line error JSON to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// {"error":{"code":..,"kind":..,"message":..,"subject":..}}
std::string error_json(int code, const std::string& kind, const std::string& message,
                       const std::string& subject);

struct NamedHistory {
  std::string name;
  TrainHistory history;
};

/// Epoch-vs-MRE line chart, one polyline per run. Uses the "val" split when a
/// run has one, else "train".
std::string render_convergence_svg(const std::vector<NamedHistory>& runs);

}  // namespace medpose
