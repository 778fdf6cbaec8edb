#pragma once

#include <gtest/gtest.h>

#include <functional>

#include "uq/common/error.hpp"

namespace uq::testing {

/// Runs fn and returns the code of the uq::Error it throws.
inline ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an uq::Error";
  return ErrorCode::kIo;
}

}  // namespace uq::testing
