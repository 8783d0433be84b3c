#pragma once

#include "dshadow/error.hpp"
#include "dshadow/random.hpp"
#include "dshadow/image.hpp"
#include "dshadow/face.hpp"
#include "dshadow/stream.hpp"
#include "dshadow/identity.hpp"
#include "dshadow/scoring.hpp"
#include "dshadow/analytics.hpp"
#include "dshadow/records.hpp"
#include "dshadow/agent.hpp"
#include "dshadow/pipeline.hpp"
#include "dshadow/profile.hpp"
#include "dshadow/numerics/check.hpp"
