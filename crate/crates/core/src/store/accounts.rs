use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use rusqlite::{params, OptionalExtension};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{decode, fmt_ts, parse_ts, Actor, AuditAction, Result, Store, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Authority,
    Admin,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Authority => "authority",
            Self::Admin => "admin",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "authority" => Ok(Self::Authority),
            "admin" => Ok(Self::Admin),
            other => Err(format!("unknown role {other:?} (expected authority or admin)")),
        }
    }
}

/// Public view of an account. The password digest never leaves the store
/// except through [`Store::credentials`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Account {
    pub id: i64,
    pub username: String,
    pub role: Role,
}

fn account_row(r: &rusqlite::Row<'_>) -> rusqlite::Result<Account> {
    let role: String = r.get(2)?;
    Ok(Account {
        id: r.get(0)?,
        username: r.get(1)?,
        role: decode(role.parse().ok(), &role, "role")?,
    })
}

impl Store {
    pub fn create_account(
        &self,
        actor: Actor,
        username: &str,
        password_digest: &str,
        role: Role,
        at: DateTime<Utc>,
    ) -> Result<Account> {
        if username.trim().is_empty() || username.len() > 128 {
            return Err(StoreError::invalid(
                "account",
                "username must be 1..=128 characters",
            ));
        }
        self.atomic(|| {
            let taken: Option<i64> = self
                .conn()
                .query_row("SELECT id FROM accounts WHERE username = ?1", [username], |r| {
                    r.get(0)
                })
                .optional()?;
            if taken.is_some() {
                return Err(StoreError::invalid(
                    "account",
                    format!("username {username:?} already exists"),
                ));
            }
            self.conn().execute(
                "INSERT INTO accounts (username, password_digest, role) VALUES (?1, ?2, ?3)",
                params![username, password_digest, role.as_str()],
            )?;
            let id = self.conn().last_insert_rowid();
            self.append_audit(
                actor,
                AuditAction::AccountCreated,
                &format!("account:{id}"),
                at,
                json!({"username": username, "role": role}),
            )?;
            Ok(Account {
                id,
                username: username.to_string(),
                role,
            })
        })
    }

    pub fn get_account(&self, id: i64) -> Result<Account> {
        self.conn()
            .query_row(
                "SELECT id, username, role FROM accounts WHERE id = ?1",
                [id],
                account_row,
            )
            .optional()?
            .ok_or_else(|| StoreError::not_found("account", id))
    }

    /// Account and stored password digest for `username`.
    pub fn credentials(&self, username: &str) -> Result<Option<(Account, String)>> {
        Ok(self
            .conn()
            .query_row(
                "SELECT id, username, role, password_digest FROM accounts WHERE username = ?1",
                [username],
                |r| Ok((account_row(r)?, r.get(3)?)),
            )
            .optional()?)
    }

    /// Records a session and the login that issued it.
    pub fn insert_session(
        &self,
        token_digest: &str,
        account_id: i64,
        issued_at: DateTime<Utc>,
        expires_at: DateTime<Utc>,
    ) -> Result<()> {
        self.atomic(|| {
            self.conn().execute(
                "INSERT INTO sessions (token_digest, account_id, issued_at, expires_at) VALUES (?1, ?2, ?3, ?4)",
                params![token_digest, account_id, fmt_ts(issued_at), fmt_ts(expires_at)],
            )?;
            self.append_audit(
                Actor::Account(account_id),
                AuditAction::Login,
                &format!("account:{account_id}"),
                issued_at,
                json!({"expires_at": fmt_ts(expires_at)}),
            )?;
            Ok(())
        })
    }

    /// The account owning an unexpired session.
    pub fn session_account(&self, token_digest: &str, now: DateTime<Utc>) -> Result<Option<Account>> {
        let row: Option<(i64, String)> = self
            .conn()
            .query_row(
                "SELECT account_id, expires_at FROM sessions WHERE token_digest = ?1",
                [token_digest],
                |r| Ok((r.get(0)?, r.get(1)?)),
            )
            .optional()?;
        match row {
            Some((account_id, expires_at)) if now < parse_ts(&expires_at)? => {
                Ok(Some(self.get_account(account_id)?))
            }
            _ => Ok(None),
        }
    }
}
