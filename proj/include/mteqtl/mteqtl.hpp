/*
 * Copyright 2026 The mteqtl authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "mteqtl/common.hpp"
#include "mteqtl/em.hpp"
#include "mteqtl/inference.hpp"
#include "mteqtl/io.hpp"
#include "mteqtl/model.hpp"
#include "mteqtl/normal.hpp"
#include "mteqtl/philox.hpp"
#include "mteqtl/simulate.hpp"
#include "mteqtl/zmatrix.hpp"
#include "mteqtl/zstats.hpp"
