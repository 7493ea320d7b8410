#pragma once

// Thin RAII layer over the sqlite3 C API. Private to the library.

#include <sqlite3.h>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "ipscope/error.hpp"

namespace ipscope::sql {

class Stmt {
 public:
  Stmt(sqlite3* db, std::string_view sql);
  Stmt(const Stmt&) = delete;
  Stmt& operator=(const Stmt&) = delete;
  ~Stmt();

  Stmt& bind(int idx, std::string_view v);
  Stmt& bind(int idx, std::int64_t v);
  Stmt& bind_null(int idx);
  Stmt& bind_opt(int idx, const std::optional<std::string>& v) { return v ? bind(idx, *v) : bind_null(idx); }

  /// True while a row is available.
  bool step();
  /// Runs to completion.
  void exec();

  std::string text(int col) const;
  std::optional<std::string> opt_text(int col) const;
  std::int64_t integer(int col) const;
  bool is_null(int col) const;

 private:
  sqlite3* db_;
  sqlite3_stmt* stmt_ = nullptr;
};

class Db {
 public:
  /// Opens (creating) `path`; ":memory:" works. Throws StoreUnavailable.
  explicit Db(const std::string& path);
  Db(const Db&) = delete;
  Db& operator=(const Db&) = delete;
  ~Db();

  void exec(std::string_view sql);
  Stmt prepare(std::string_view sql) { return Stmt(db_, sql); }
  std::int64_t changes() const { return sqlite3_changes(db_); }
  std::int64_t last_rowid() const { return sqlite3_last_insert_rowid(db_); }
  sqlite3* raw() noexcept { return db_; }

 private:
  sqlite3* db_ = nullptr;
};

/// Commits on `commit()`, rolls back otherwise.
class Transaction {
 public:
  explicit Transaction(Db& db) : db_(db) { db_.exec("BEGIN IMMEDIATE"); }
  ~Transaction() {
    if (!done_) {
      try {
        db_.exec("ROLLBACK");
      } catch (...) {
      }
    }
  }
  void commit() {
    db_.exec("COMMIT");
    done_ = true;
  }

 private:
  Db& db_;
  bool done_ = false;
};

}  // namespace ipscope::sql
