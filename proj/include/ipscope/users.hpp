#pragma once

#include <chrono>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ipscope/auth.hpp"
#include "ipscope/clock.hpp"

namespace ipscope::sql {
class Db;
}

namespace ipscope::users {

enum class Role { admin, analyst };
std::string_view to_string(Role r) noexcept;
std::optional<Role> role_from_string(std::string_view s) noexcept;

enum class Scope { analyze, scan, admin };
using Scopes = std::set<Scope>;
std::string_view to_string(Scope s) noexcept;
std::optional<Scope> scope_from_string(std::string_view s) noexcept;
/// Everything a role may hold: analysts get analyze, admins everything.
Scopes role_scopes(Role r);

struct User {
  std::string id;
  std::string username;
  std::string password_hash;
  Role role = Role::analyst;
  std::optional<std::string> totp_secret;
  Timestamp created_at{};
};

struct IssuedToken {
  /// `<token_id>.<secret>`; only ever returned here.
  std::string token;
  std::string token_id;
  std::string user_id;
  std::optional<Timestamp> expires_at;
  Scopes scopes;
};

struct Principal {
  User user;
  Scopes scopes;
  std::string token_id;
};

struct TotpEnrollment {
  std::string secret;  ///< base32
  std::string otpauth_uri;
};

/// Users, API tokens and 2FA state in SQLite. Safe for concurrent use.
class UserStore {
 public:
  UserStore(const std::string& path, const Clock& clock = system_clock(), auth::ScryptParams kdf = {});
  ~UserStore();

  /// Usernames are lowercased. Throws Conflict when taken, InvalidArgument for
  /// an empty password or a malformed name.
  User add_user(std::string_view username, std::string_view password, Role role);
  std::optional<User> find(std::string_view username) const;
  std::optional<User> find_by_id(std::string_view id) const;
  std::vector<User> list() const;

  /// Password plus, when enrolled, a current TOTP code. nullopt on any
  /// failure; the cause is never revealed.
  std::optional<IssuedToken> login(std::string_view username, std::string_view password,
                                   const std::optional<std::string>& totp_code,
                                   std::chrono::seconds session_ttl = std::chrono::hours(1));

  /// Scopes beyond the user's role are dropped. Throws InvalidArgument for an
  /// unknown user.
  IssuedToken create_token(std::string_view user_id, const Scopes& scopes,
                           std::optional<Timestamp> expires_at = std::nullopt);

  std::optional<Principal> authenticate(std::string_view bearer) const;
  bool revoke_token(std::string_view token_id);

  /// Starts (or restarts) enrollment; the secret only takes effect after
  /// verify_totp accepts a code.
  TotpEnrollment enroll_totp(std::string_view user_id);
  bool verify_totp(std::string_view user_id, std::string_view code);

 private:
  std::unique_ptr<sql::Db> db_;
  const Clock* clock_;
  auth::ScryptParams kdf_;
  std::string dummy_hash_;
  mutable std::mutex mu_;
};

}  // namespace ipscope::users
