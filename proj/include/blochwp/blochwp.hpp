#pragma once

#include "assembly.hpp"
#include "bands.hpp"
#include "core.hpp"
#include "corrector.hpp"
#include "envelope.hpp"
#include "flow.hpp"
#include "grid.hpp"
#include "lattice.hpp"
#include "potential.hpp"
#include "reference.hpp"
