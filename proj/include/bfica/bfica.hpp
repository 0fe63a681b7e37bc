#pragma once

#include "bfica/basis.hpp"
#include "bfica/cleanse.hpp"
#include "bfica/error.hpp"
#include "bfica/fica.hpp"
#include "bfica/format.hpp"
#include "bfica/fpca.hpp"
#include "bfica/io_json.hpp"
#include "bfica/linalg.hpp"
#include "bfica/parallel.hpp"
#include "bfica/pipeline.hpp"
#include "bfica/service.hpp"
#include "bfica/shrinkage.hpp"
#include "bfica/signal.hpp"
#include "bfica/synth.hpp"
#include "bfica/tuning.hpp"
