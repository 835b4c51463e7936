#pragma once

#include "caccsim/core.hpp"
#include "caccsim/longitudinal.hpp"
#include "caccsim/lateral.hpp"
#include "caccsim/snapshot.hpp"
#include "caccsim/clustering.hpp"
#include "caccsim/engine.hpp"
#include "caccsim/metrics.hpp"
#include "caccsim/io.hpp"
#include "caccsim/cli.hpp"
