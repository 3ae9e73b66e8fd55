//! Versioned schema scripts. Index `i` upgrades `user_version` from `i` to `i + 1`.

pub(super) const MIGRATIONS: &[&str] = &[
    // 1: initial layout
    r#"
CREATE TABLE segments (
    id                 INTEGER PRIMARY KEY AUTOINCREMENT,
    geometry           TEXT    NOT NULL,
    contractor_name    TEXT    NOT NULL,
    contractor_contact TEXT    NOT NULL,
    construction_date  TEXT    NOT NULL,
    budget             REAL    NOT NULL CHECK (budget >= 0),
    warranty_end       TEXT    NOT NULL,
    category           TEXT,
    health             TEXT    NOT NULL CHECK (health IN ('green','yellow','orange','red')),
    length_m           REAL    NOT NULL,
    created_by         TEXT    NOT NULL,
    version            INTEGER NOT NULL DEFAULT 1
);

CREATE TABLE potholes (
    id              INTEGER PRIMARY KEY AUTOINCREMENT,
    lat             REAL    NOT NULL,
    lon             REAL    NOT NULL,
    severity        TEXT    NOT NULL CHECK (severity IN ('minor','moderate','severe')),
    status          TEXT    NOT NULL CHECK (status IN ('active','repaired')),
    first_seen      TEXT    NOT NULL,
    last_seen       TEXT    NOT NULL,
    detection_count INTEGER NOT NULL CHECK (detection_count >= 1),
    thumbnail       TEXT,
    segment_id      INTEGER REFERENCES segments(id) ON DELETE SET NULL,
    version         INTEGER NOT NULL DEFAULT 1
);
CREATE INDEX potholes_by_segment ON potholes(segment_id);
CREATE INDEX potholes_by_position ON potholes(lat, lon);

CREATE TABLE accounts (
    id              INTEGER PRIMARY KEY AUTOINCREMENT,
    username        TEXT NOT NULL UNIQUE,
    password_digest TEXT NOT NULL,
    role            TEXT NOT NULL CHECK (role IN ('authority','admin'))
);

CREATE TABLE sessions (
    token_digest TEXT    PRIMARY KEY,
    account_id   INTEGER NOT NULL REFERENCES accounts(id) ON DELETE CASCADE,
    issued_at    TEXT    NOT NULL,
    expires_at   TEXT    NOT NULL
);

CREATE TABLE alert_events (
    id              INTEGER PRIMARY KEY AUTOINCREMENT,
    segment_id      INTEGER NOT NULL,
    transition      TEXT    NOT NULL,
    health          TEXT    NOT NULL,
    recipients      TEXT    NOT NULL,
    message         TEXT    NOT NULL,
    created_at      TEXT    NOT NULL,
    delivery_status TEXT    NOT NULL CHECK (delivery_status IN ('pending','sent','failed')),
    idempotency_key TEXT    NOT NULL,
    attempts        INTEGER NOT NULL DEFAULT 0,
    last_error      TEXT
);
CREATE INDEX alerts_by_key ON alert_events(idempotency_key);
CREATE INDEX alerts_by_segment ON alert_events(segment_id, id);

CREATE TABLE ingest_batches (
    id                INTEGER PRIMARY KEY AUTOINCREMENT,
    uploaded_at       TEXT NOT NULL,
    detections_digest TEXT NOT NULL,
    gps_digest        TEXT NOT NULL,
    stats             TEXT NOT NULL
);

CREATE TABLE audit_log (
    id      INTEGER PRIMARY KEY AUTOINCREMENT,
    actor   TEXT NOT NULL,
    action  TEXT NOT NULL,
    subject TEXT NOT NULL,
    at      TEXT NOT NULL,
    detail  TEXT NOT NULL
);

CREATE TRIGGER audit_log_no_update BEFORE UPDATE ON audit_log
BEGIN SELECT RAISE(ABORT, 'audit log is append-only'); END;
CREATE TRIGGER audit_log_no_delete BEFORE DELETE ON audit_log
BEGIN SELECT RAISE(ABORT, 'audit log is append-only'); END;
"#,
];
