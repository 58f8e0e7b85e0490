#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace draftwise {

/// Base class for every error the engine raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// graph_store

class DuplicateRecord : public Error {
 public:
  explicit DuplicateRecord(std::string record_id)
      : Error("duplicate record_id: " + record_id), record_id_(std::move(record_id)) {}
  const std::string& record_id() const noexcept { return record_id_; }

 private:
  std::string record_id_;
};

class DanglingItem : public Error {
 public:
  explicit DanglingItem(std::string item_id)
      : Error("record references item without metadata: " + item_id),
        item_id_(std::move(item_id)) {}
  const std::string& item_id() const noexcept { return item_id_; }

 private:
  std::string item_id_;
};

class UnknownUser : public Error {
 public:
  explicit UnknownUser(const std::string& user_id) : Error("unknown user: " + user_id) {}
};

// prompt_builder

class MissingBinding : public Error {
 public:
  explicit MissingBinding(std::string placeholder)
      : Error("missing binding for placeholder " + placeholder),
        placeholder_(std::move(placeholder)) {}
  const std::string& placeholder() const noexcept { return placeholder_; }

 private:
  std::string placeholder_;
};

class TemplateError : public Error {
 public:
  using Error::Error;
};

// llm_client

/// Retries exhausted. `last_status` is 0 when no HTTP response was received.
class TransportError : public Error {
 public:
  TransportError(int last_status, const std::string& what)
      : Error(what), last_status_(last_status) {}
  int last_status() const noexcept { return last_status_; }

 private:
  int last_status_;
};

/// Non-retryable provider response; the body is kept verbatim.
class ProviderError : public Error {
 public:
  ProviderError(int status, std::string body)
      : Error("provider returned HTTP " + std::to_string(status)),
        status_(status),
        body_(std::move(body)) {}
  int status() const noexcept { return status_; }
  const std::string& body() const noexcept { return body_; }

 private:
  int status_;
  std::string body_;
};

class ScriptExhausted : public Error {
 public:
  using Error::Error;
};

class CriticUnavailable : public Error {
 public:
  using Error::Error;
};

class EmbeddingEndpointUnavailable : public Error {
 public:
  using Error::Error;
};

// metrics

class AllSamplesUnparseable : public Error {
 public:
  using Error::Error;
};

class MissingReference : public Error {
 public:
  explicit MissingReference(const std::string& query_id)
      : Error("no reference for query " + query_id) {}
};

// dataset

class SchemaError : public Error {
 public:
  SchemaError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class InsufficientUsers : public Error {
 public:
  InsufficientUsers(std::size_t eligible, std::size_t required)
      : Error("only " + std::to_string(eligible) + " eligible users, need " +
              std::to_string(required)),
        eligible_(eligible) {}
  std::size_t eligible() const noexcept { return eligible_; }

 private:
  std::size_t eligible_;
};

}  // namespace draftwise
