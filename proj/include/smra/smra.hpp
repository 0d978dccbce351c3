// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header.

#pragma once

#include "smra/acceptance.hpp"
#include "smra/autograd.hpp"
#include "smra/cli.hpp"
#include "smra/commands.hpp"
#include "smra/config.hpp"
#include "smra/data.hpp"
#include "smra/dit.hpp"
#include "smra/eval.hpp"
#include "smra/flowmatch.hpp"
#include "smra/lora.hpp"
#include "smra/metrics.hpp"
#include "smra/mora.hpp"
#include "smra/numerics.hpp"
#include "smra/param_store.hpp"
#include "smra/pipeline.hpp"
#include "smra/stns.hpp"
#include "smra/sura.hpp"
#include "smra/tensor.hpp"
#include "smra/toyvae.hpp"
