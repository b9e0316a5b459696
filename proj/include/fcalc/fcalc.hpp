#pragma once

// Umbrella header: the whole library in one include.

#include "fcalc/ast.hpp"
#include "fcalc/check.hpp"
#include "fcalc/core_text.hpp"
#include "fcalc/driver.hpp"
#include "fcalc/eval.hpp"
#include "fcalc/infer.hpp"
#include "fcalc/jaql.hpp"
#include "fcalc/json_io.hpp"
#include "fcalc/parser.hpp"
#include "fcalc/pattern.hpp"
#include "fcalc/printer.hpp"
#include "fcalc/types.hpp"
#include "fcalc/value.hpp"
