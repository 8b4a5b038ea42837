/* Copyright 2026 The realabel Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace realabel {

// Every module reports contract violations through this one exception type.
// `kind` is a short machine-readable tag that the CLI copies into its error
// object; `what()` carries the human-readable message.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

// Parse failure inside a file, tagged with its location.
class ParseError : public Error {
 public:
  ParseError(std::string_view path, std::size_t line, const std::string& message)
      : Error("parse", std::string(path) + ":" + std::to_string(line) + ": " + message),
        path_(path),
        line_(line) {}

  const std::string& path() const noexcept { return path_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string path_;
  std::size_t line_;
};

inline void require(bool condition, std::string_view kind, const std::string& message) {
  if (!condition) throw Error(std::string(kind), message);
}

}  // namespace realabel
