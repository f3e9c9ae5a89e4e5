#pragma once

#include "hierplan/core.hpp"
#include "hierplan/spatial.hpp"
#include "hierplan/demand.hpp"
#include "hierplan/travel.hpp"
#include "hierplan/sim.hpp"
#include "hierplan/dispatch.hpp"
#include "hierplan/waittime.hpp"
#include "hierplan/forest.hpp"
#include "hierplan/surrogate.hpp"
#include "hierplan/highlevel.hpp"
#include "hierplan/lowlevel.hpp"
#include "hierplan/policy.hpp"
#include "hierplan/io.hpp"
#include "hierplan/config.hpp"
#include "hierplan/harness.hpp"
