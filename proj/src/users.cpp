#include "ipscope/users.hpp"

#include <algorithm>
#include <cctype>

#include "ipscope/error.hpp"
#include "ipscope/model.hpp"
#include "sqlite_db.hpp"

namespace ipscope::users {

namespace {

constexpr const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS users (
  id TEXT PRIMARY KEY,
  username TEXT NOT NULL UNIQUE,
  password_hash TEXT NOT NULL,
  role TEXT NOT NULL,
  totp_secret TEXT,
  totp_pending TEXT,
  created_at_ms INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS api_tokens (
  token_id TEXT PRIMARY KEY,
  user_id TEXT NOT NULL REFERENCES users(id),
  secret_hash TEXT NOT NULL,
  expires_at_ms INTEGER,
  scopes TEXT NOT NULL,
  created_at_ms INTEGER NOT NULL
);
)sql";

constexpr const char* kUserColumns = "id, username, password_hash, role, totp_secret, created_at_ms";

User read_user(const sql::Stmt& s) {
  User u;
  u.id = s.text(0);
  u.username = s.text(1);
  u.password_hash = s.text(2);
  u.role = role_from_string(s.text(3)).value_or(Role::analyst);
  u.totp_secret = s.opt_text(4);
  u.created_at = from_unix_millis(s.integer(5));
  return u;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool valid_username(std::string_view s) {
  if (s.empty() || s.size() > 64) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::islower(static_cast<unsigned char>(c)) || std::isdigit(static_cast<unsigned char>(c)) || c == '.' ||
           c == '_' || c == '-' || c == '@';
  });
}

std::string scopes_text(const Scopes& scopes) {
  json arr = json::array();
  for (auto s : scopes) arr.push_back(to_string(s));
  return arr.dump();
}

Scopes parse_scopes(const std::string& text) {
  Scopes out;
  for (const auto& v : json::parse(text)) {
    if (auto s = scope_from_string(v.get<std::string>())) out.insert(*s);
  }
  return out;
}

}  // namespace

std::string_view to_string(Role r) noexcept { return r == Role::admin ? "admin" : "analyst"; }

std::optional<Role> role_from_string(std::string_view s) noexcept {
  if (s == "admin") return Role::admin;
  if (s == "analyst") return Role::analyst;
  return std::nullopt;
}

std::string_view to_string(Scope s) noexcept {
  switch (s) {
    case Scope::analyze: return "analyze";
    case Scope::scan: return "scan";
    case Scope::admin: return "admin";
  }
  return "analyze";
}

std::optional<Scope> scope_from_string(std::string_view s) noexcept {
  if (s == "analyze") return Scope::analyze;
  if (s == "scan") return Scope::scan;
  if (s == "admin") return Scope::admin;
  return std::nullopt;
}

Scopes role_scopes(Role r) {
  if (r == Role::admin) return {Scope::analyze, Scope::scan, Scope::admin};
  return {Scope::analyze};
}

UserStore::UserStore(const std::string& path, const Clock& clock, auth::ScryptParams kdf)
    : db_(std::make_unique<sql::Db>(path)), clock_(&clock), kdf_(kdf) {
  db_->exec(kSchema);
  // Hashed once so unknown users cost the same KDF work as known ones.
  dummy_hash_ = auth::hash_password(auth::random_token(8), kdf_);
}

UserStore::~UserStore() = default;

User UserStore::add_user(std::string_view username, std::string_view password, Role role) {
  const std::string name = lower(username);
  if (!valid_username(name)) throw InvalidArgument("username must be 1-64 chars of [a-z0-9._@-]");
  if (password.empty()) throw InvalidArgument("password must not be empty");
  User u;
  u.id = "u_" + auth::random_token(8);
  u.username = name;
  u.password_hash = auth::hash_password(password, kdf_);
  u.role = role;
  u.created_at = clock_->now();
  std::lock_guard lock(mu_);
  {
    auto s = db_->prepare("SELECT 1 FROM users WHERE username = ?1");
    s.bind(1, name);
    if (s.step()) throw Conflict("user already exists: " + name);
  }
  db_->prepare("INSERT INTO users (id, username, password_hash, role, created_at_ms) VALUES (?1, ?2, ?3, ?4, ?5)")
      .bind(1, u.id)
      .bind(2, u.username)
      .bind(3, u.password_hash)
      .bind(4, to_string(role))
      .bind(5, to_unix_millis(u.created_at))
      .exec();
  return u;
}

std::optional<User> UserStore::find(std::string_view username) const {
  std::lock_guard lock(mu_);
  auto s = db_->prepare(std::string("SELECT ") + kUserColumns + " FROM users WHERE username = ?1");
  s.bind(1, lower(username));
  if (!s.step()) return std::nullopt;
  return read_user(s);
}

std::optional<User> UserStore::find_by_id(std::string_view id) const {
  std::lock_guard lock(mu_);
  auto s = db_->prepare(std::string("SELECT ") + kUserColumns + " FROM users WHERE id = ?1");
  s.bind(1, id);
  if (!s.step()) return std::nullopt;
  return read_user(s);
}

std::vector<User> UserStore::list() const {
  std::lock_guard lock(mu_);
  auto s = db_->prepare(std::string("SELECT ") + kUserColumns + " FROM users ORDER BY username");
  std::vector<User> out;
  while (s.step()) out.push_back(read_user(s));
  return out;
}

std::optional<IssuedToken> UserStore::login(std::string_view username, std::string_view password,
                                            const std::optional<std::string>& totp_code,
                                            std::chrono::seconds session_ttl) {
  const auto user = find(username);
  const bool password_ok = auth::verify_password(password, user ? user->password_hash : dummy_hash_);
  if (!user || !password_ok) return std::nullopt;
  if (user->totp_secret) {
    const auto key = auth::base32_decode(*user->totp_secret);
    if (!totp_code || !key || !auth::totp_verify(*key, *totp_code, clock_->now())) return std::nullopt;
  }
  return create_token(user->id, role_scopes(user->role), clock_->now() + session_ttl);
}

IssuedToken UserStore::create_token(std::string_view user_id, const Scopes& scopes,
                                    std::optional<Timestamp> expires_at) {
  const auto user = find_by_id(user_id);
  if (!user) throw InvalidArgument("unknown user");
  const auto allowed = role_scopes(user->role);
  IssuedToken t;
  std::set_intersection(scopes.begin(), scopes.end(), allowed.begin(), allowed.end(),
                        std::inserter(t.scopes, t.scopes.begin()));
  t.token_id = "t_" + auth::random_token(8);
  const std::string secret = auth::random_token(24);
  t.token = t.token_id + "." + secret;
  t.user_id = user->id;
  t.expires_at = expires_at;
  std::lock_guard lock(mu_);
  auto s = db_->prepare(
      "INSERT INTO api_tokens (token_id, user_id, secret_hash, expires_at_ms, scopes, created_at_ms) "
      "VALUES (?1, ?2, ?3, ?4, ?5, ?6)");
  s.bind(1, t.token_id).bind(2, t.user_id).bind(3, auth::hex(auth::sha256(secret)));
  if (expires_at) {
    s.bind(4, to_unix_millis(*expires_at));
  } else {
    s.bind_null(4);
  }
  s.bind(5, scopes_text(t.scopes)).bind(6, to_unix_millis(clock_->now())).exec();
  return t;
}

std::optional<Principal> UserStore::authenticate(std::string_view bearer) const {
  const auto dot = bearer.find('.');
  if (dot == std::string_view::npos) return std::nullopt;
  const auto token_id = bearer.substr(0, dot);
  const auto secret = bearer.substr(dot + 1);
  std::string user_id;
  Scopes scopes;
  {
    std::lock_guard lock(mu_);
    auto s = db_->prepare("SELECT user_id, secret_hash, expires_at_ms, scopes FROM api_tokens WHERE token_id = ?1");
    s.bind(1, token_id);
    if (!s.step()) return std::nullopt;
    if (!auth::equal_ct(auth::hex(auth::sha256(secret)), s.text(1))) return std::nullopt;
    if (!s.is_null(2) && to_unix_millis(clock_->now()) > s.integer(2)) return std::nullopt;
    user_id = s.text(0);
    scopes = parse_scopes(s.text(3));
  }
  auto user = find_by_id(user_id);
  if (!user) return std::nullopt;
  return Principal{std::move(*user), std::move(scopes), std::string(token_id)};
}

bool UserStore::revoke_token(std::string_view token_id) {
  std::lock_guard lock(mu_);
  db_->prepare("DELETE FROM api_tokens WHERE token_id = ?1").bind(1, token_id).exec();
  return db_->changes() > 0;
}

TotpEnrollment UserStore::enroll_totp(std::string_view user_id) {
  const auto user = find_by_id(user_id);
  if (!user) throw InvalidArgument("unknown user");
  TotpEnrollment e;
  e.secret = auth::base32_encode(auth::random_bytes(20));
  e.otpauth_uri = auth::otpauth_uri(e.secret, user->username);
  std::lock_guard lock(mu_);
  db_->prepare("UPDATE users SET totp_pending = ?1 WHERE id = ?2").bind(1, e.secret).bind(2, user_id).exec();
  return e;
}

bool UserStore::verify_totp(std::string_view user_id, std::string_view code) {
  std::lock_guard lock(mu_);
  auto s = db_->prepare("SELECT totp_pending FROM users WHERE id = ?1");
  s.bind(1, user_id);
  if (!s.step() || s.is_null(0)) return false;
  const auto key = auth::base32_decode(s.text(0));
  if (!key || !auth::totp_verify(*key, code, clock_->now())) return false;
  db_->prepare("UPDATE users SET totp_secret = totp_pending, totp_pending = NULL WHERE id = ?1")
      .bind(1, user_id)
      .exec();
  return true;
}

}  // namespace ipscope::users
