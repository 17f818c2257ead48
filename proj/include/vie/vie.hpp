#pragma once

#include "vie/errors.hpp"
#include "vie/mesh.hpp"
#include "vie/path.hpp"
#include "vie/kernel.hpp"
#include "vie/volterra.hpp"
#include "vie/solver.hpp"
#include "vie/conditions.hpp"
#include "vie/convex_set.hpp"
#include "vie/set_field.hpp"
#include "vie/funnel.hpp"
#include "vie/periodic.hpp"
