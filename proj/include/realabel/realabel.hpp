/* Copyright 2026 The realabel Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include "realabel/error.hpp"
#include "realabel/log.hpp"
#include "realabel/parallel.hpp"
#include "realabel/text.hpp"
#include "realabel/ids.hpp"
#include "realabel/manifest.hpp"
#include "realabel/hierarchy.hpp"
#include "realabel/predictions.hpp"
#include "realabel/labels.hpp"
#include "realabel/proposals.hpp"
#include "realabel/tasking.hpp"
#include "realabel/annotation.hpp"
#include "realabel/aggregation.hpp"
#include "realabel/metrics.hpp"
#include "realabel/analysis.hpp"
#include "realabel/trainfix.hpp"
