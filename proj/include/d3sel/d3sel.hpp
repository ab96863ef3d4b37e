// Copyright 2026 The D3Select Authors.
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

#ifndef D3SEL_D3SEL_HPP
#define D3SEL_D3SEL_HPP

#include "d3sel/core.hpp"
#include "d3sel/coverage.hpp"
#include "d3sel/distance.hpp"
#include "d3sel/io.hpp"
#include "d3sel/pipeline.hpp"
#include "d3sel/report.hpp"
#include "d3sel/scoring.hpp"
#include "d3sel/selection.hpp"

#endif  // D3SEL_D3SEL_HPP
