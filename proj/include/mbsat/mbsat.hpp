// SPDX-License-Identifier: Apache-2.0
//
// mbsat - joint precoding optimization for multibeam satellite forward links
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#pragma once

#include "mbsat/numerics.hpp"
#include "mbsat/scenario.hpp"
#include "mbsat/constraints.hpp"
#include "mbsat/objectives.hpp"
#include "mbsat/dualsolver.hpp"
#include "mbsat/powergrad.hpp"
#include "mbsat/precoders.hpp"
#include "mbsat/harness.hpp"
