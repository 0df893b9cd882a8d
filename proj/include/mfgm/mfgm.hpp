#pragma once

#include "mfgm/charfun.hpp"
#include "mfgm/errors.hpp"
#include "mfgm/hjb.hpp"
#include "mfgm/io.hpp"
#include "mfgm/mc.hpp"
#include "mfgm/model.hpp"
#include "mfgm/moments.hpp"
#include "mfgm/recover.hpp"
#include "mfgm/scenario_io.hpp"
