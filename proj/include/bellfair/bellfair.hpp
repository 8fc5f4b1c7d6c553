#pragma once

// Core simulation and analysis. io.hpp (config, serialization) is separate
// because it needs nlohmann/json and OpenSSL.
#include "angle.hpp"
#include "engine.hpp"
#include "errors.hpp"
#include "models.hpp"
#include "protocol.hpp"
#include "random.hpp"
#include "stats.hpp"
#include "version.hpp"
