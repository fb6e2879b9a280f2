#pragma once

#include <doctest.h>

#include "../common/gradcheck.hpp"
