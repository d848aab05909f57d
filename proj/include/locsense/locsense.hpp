// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "locsense/bounds.hpp"
#include "locsense/channel.hpp"
#include "locsense/config.hpp"
#include "locsense/core.hpp"
#include "locsense/csv.hpp"
#include "locsense/estimation.hpp"
#include "locsense/geometry.hpp"
#include "locsense/harness.hpp"
#include "locsense/positioning.hpp"
#include "locsense/resolution.hpp"
#include "locsense/signal.hpp"
