/*
 * Copyright 2026 The medbalance Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef MEDBALANCE_ERROR_HPP
#define MEDBALANCE_ERROR_HPP

#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace medbalance {

enum class ErrorKind { validation, numerical };

// Carries a machine-readable kind plus the offending context, so callers
// (the CLI in particular) can map failures to exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string where, const std::string& message,
        std::map<std::string, std::string> context = {})
      : std::runtime_error(where + ": " + message),
        kind_(kind),
        where_(std::move(where)),
        detail_(message),
        context_(std::move(context)) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }
  [[nodiscard]] const std::string& where() const noexcept { return where_; }
  [[nodiscard]] const std::string& detail() const noexcept { return detail_; }
  [[nodiscard]] const std::map<std::string, std::string>& context() const noexcept {
    return context_;
  }

 private:
  ErrorKind kind_;
  std::string where_;
  std::string detail_;
  std::map<std::string, std::string> context_;
};

[[noreturn]] inline void fail_validation(const std::string& where, const std::string& message,
                                         std::map<std::string, std::string> context = {}) {
  throw Error(ErrorKind::validation, where, message, std::move(context));
}

[[noreturn]] inline void fail_numerical(const std::string& where, const std::string& message,
                                        std::map<std::string, std::string> context = {}) {
  throw Error(ErrorKind::numerical, where, message, std::move(context));
}

inline void require(bool ok, const std::string& where, const std::string& message) {
  if (!ok) fail_validation(where, message);
}

template <class T>
std::string to_text(const T& value) {
  std::ostringstream os;
  os << value;
  return os.str();
}

}  // namespace medbalance

#endif  // MEDBALANCE_ERROR_HPP
