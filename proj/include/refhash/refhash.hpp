#pragma once

#include "refhash/binhash.hpp"
#include "refhash/common.hpp"
#include "refhash/confusion.hpp"
#include "refhash/disk_synth.hpp"
#include "refhash/filterbank.hpp"
#include "refhash/jointboost.hpp"
#include "refhash/layout.hpp"
#include "refhash/manifest.hpp"
#include "refhash/model_file.hpp"
#include "refhash/pipeline.hpp"
#include "refhash/png_io.hpp"
#include "refhash/texton.hpp"
