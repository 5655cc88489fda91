#pragma once

#include "ptab/checkpoint.hpp"
#include "ptab/config.hpp"
#include "ptab/csv.hpp"
#include "ptab/encoder.hpp"
#include "ptab/error.hpp"
#include "ptab/eval.hpp"
#include "ptab/gradcheck.hpp"
#include "ptab/interpret.hpp"
#include "ptab/metrics.hpp"
#include "ptab/pretokenize.hpp"
#include "ptab/rng.hpp"
#include "ptab/synthetic.hpp"
#include "ptab/table.hpp"
#include "ptab/textualizer.hpp"
#include "ptab/tokenizer.hpp"
#include "ptab/training.hpp"
