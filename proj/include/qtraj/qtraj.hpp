#pragma once

#include "qtraj/error.hpp"
#include "qtraj/rng.hpp"
#include "qtraj/parallel.hpp"
#include "qtraj/hilbert.hpp"
#include "qtraj/sme.hpp"
#include "qtraj/models.hpp"
#include "qtraj/feedback.hpp"
#include "qtraj/analysis.hpp"
#include "qtraj/config.hpp"
#include "qtraj/cli.hpp"
