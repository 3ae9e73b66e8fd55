//! Repair and strict parsing of dashcam overlay timestamps recovered by OCR.
//!
//! The OCR stage hands us one string per frame. Overlays render as
//! `DD-MM-YYYY HH:MM:SS` (or with `/` date separators), and recognition
//! regularly confuses a handful of glyphs. [`repair_ocr_text`] undoes the
//! known confusions token by token and [`parse_timestamp`] then accepts only
//! the canonical layout.

use std::fmt;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimestampError {
    #[error("timestamp does not match DD-MM-YYYY HH:MM:SS: {0:?}")]
    MalformedTimestamp(String),
    #[error("timestamp fields do not form a valid date/time: {0:?}")]
    InvalidDate(String),
}

/// Characters OCR is known to emit in place of the true separators.
///
/// Only confusions observed in practice belong here; the table is meant to be
/// extended from deployment configuration rather than guessed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MisreadTable {
    /// Stand-ins for `:` inside the `HH:MM:SS` token.
    pub time_separator: Vec<char>,
    /// Stand-ins for `-` (or `/`) at positions 3 and 6 of the date token.
    pub date_separator: Vec<char>,
}

impl Default for MisreadTable {
    fn default() -> Self {
        Self {
            time_separator: vec!['.'],
            date_separator: vec!['1'],
        }
    }
}

impl MisreadTable {
    fn is_time_sep(&self, c: char) -> bool {
        c == ':' || self.time_separator.contains(&c)
    }

    fn is_date_sep(&self, c: char) -> bool {
        c == '-' || c == '/' || self.date_separator.contains(&c)
    }
}

/// A frame's overlay time, in the dashcam's local clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameTimestamp {
    pub year: i32,
    pub month: u32,
    pub day: u32,
    pub hour: u32,
    pub minute: u32,
    pub second: u32,
}

impl FrameTimestamp {
    pub fn new(
        day: u32,
        month: u32,
        year: i32,
        hour: u32,
        minute: u32,
        second: u32,
    ) -> Result<Self, TimestampError> {
        let ts = Self {
            year,
            month,
            day,
            hour,
            minute,
            second,
        };
        if ts.to_naive().is_none() || !(1..=9999).contains(&year) {
            return Err(TimestampError::InvalidDate(ts.to_string()));
        }
        Ok(ts)
    }

    pub fn to_naive(&self) -> Option<NaiveDateTime> {
        NaiveDate::from_ymd_opt(self.year, self.month, self.day)?.and_hms_opt(
            self.hour,
            self.minute,
            self.second,
        )
    }
}

impl fmt::Display for FrameTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:02}-{:02}-{:04} {:02}:{:02}:{:02}",
            self.day, self.month, self.year, self.hour, self.minute, self.second
        )
    }
}

/// Repairs OCR text with the default misread table.
pub fn repair_ocr_text(raw: &str) -> String {
    repair_ocr_text_with(raw, &MisreadTable::default())
}

/// Repairs OCR text into a candidate `DD-MM-YYYY HH:MM:SS` string.
///
/// Works per whitespace token: time tokens get their separators restored and
/// any fractional seconds truncated, 10-character date tokens get positions 3
/// and 6 rewritten to `-`, and a standalone fractional token trailing a time
/// token is dropped. Anything unrecognized passes through untouched.
pub fn repair_ocr_text_with(raw: &str, table: &MisreadTable) -> String {
    let mut out: Vec<String> = Vec::new();
    let mut last_was_time = false;
    let tokens: Vec<&str> = raw.split_whitespace().collect();

    for (i, tok) in tokens.iter().enumerate() {
        let is_last = i + 1 == tokens.len();
        if is_last && last_was_time && is_fraction_token(tok) {
            break;
        }
        if let Some(t) = repair_time_token(tok, table) {
            out.push(t);
            last_was_time = true;
            continue;
        }
        last_was_time = false;
        if let Some(d) = repair_date_token(tok, table) {
            out.push(d);
        } else {
            out.push((*tok).to_string());
        }
    }
    out.join(" ")
}

fn is_fraction_token(tok: &str) -> bool {
    let mut chars = tok.chars();
    matches!(chars.next(), Some('.' | ',')) && tok.len() > 1 && chars.all(|c| c.is_ascii_digit())
}

/// `HH?MM?SS` with an optional `?fff` tail, where `?` is `:` or a known misread.
fn repair_time_token(tok: &str, table: &MisreadTable) -> Option<String> {
    let chars: Vec<char> = tok.chars().collect();
    if chars.len() < 8 {
        return None;
    }
    let digit_at = |i: usize| chars[i].is_ascii_digit();
    if !(digit_at(0) && digit_at(1) && digit_at(3) && digit_at(4) && digit_at(6) && digit_at(7)) {
        return None;
    }
    if !(table.is_time_sep(chars[2]) && table.is_time_sep(chars[5])) {
        return None;
    }
    if chars.len() > 8 {
        let sep = chars[8];
        let frac = &chars[9..];
        let sep_ok = sep == '.' || sep == ',' || table.is_time_sep(sep);
        if !sep_ok || frac.is_empty() || frac.len() > 9 || !frac.iter().all(char::is_ascii_digit) {
            return None;
        }
    }
    Some(format!(
        "{}{}:{}{}:{}{}",
        chars[0], chars[1], chars[3], chars[4], chars[6], chars[7]
    ))
}

/// `DD?MM?YYYY` where `?` is `-`, `/` or a known misread. Exactly ten
/// characters; shorter or longer runs are left for the parser to reject.
fn repair_date_token(tok: &str, table: &MisreadTable) -> Option<String> {
    let chars: Vec<char> = tok.chars().collect();
    if chars.len() != 10 {
        return None;
    }
    let digits_ok = chars
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != 2 && *i != 5)
        .all(|(_, c)| c.is_ascii_digit());
    if !digits_ok || !table.is_date_sep(chars[2]) || !table.is_date_sep(chars[5]) {
        return None;
    }
    let mut fixed = chars;
    fixed[2] = '-';
    fixed[5] = '-';
    Some(fixed.into_iter().collect())
}

/// Strictly parses `DD-MM-YYYY HH:MM:SS`.
pub fn parse_timestamp(normalized: &str) -> Result<FrameTimestamp, TimestampError> {
    let malformed = || TimestampError::MalformedTimestamp(normalized.to_string());
    let b = normalized.as_bytes();
    if b.len() != 19 {
        return Err(malformed());
    }
    for (i, &c) in b.iter().enumerate() {
        let ok = match i {
            2 | 5 => c == b'-',
            10 => c == b' ',
            13 | 16 => c == b':',
            _ => c.is_ascii_digit(),
        };
        if !ok {
            return Err(malformed());
        }
    }
    let num =
        |r: std::ops::Range<usize>| -> u32 { b[r].iter().fold(0, |acc, d| acc * 10 + u32::from(d - b'0')) };
    FrameTimestamp::new(
        num(0..2),
        num(3..5),
        num(6..10) as i32,
        num(11..13),
        num(14..16),
        num(17..19),
    )
    .map_err(|_| TimestampError::InvalidDate(normalized.to_string()))
}

/// Repair followed by strict parse.
pub fn normalize_timestamp(raw: &str, table: &MisreadTable) -> Result<FrameTimestamp, TimestampError> {
    parse_timestamp(&repair_ocr_text_with(raw, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_on_canonical() {
        assert_eq!(repair_ocr_text("13-08-2025 18:45:09"), "13-08-2025 18:45:09");
    }

    #[test]
    fn dotted_time_is_repaired() {
        assert_eq!(repair_ocr_text("13-08-2025 18.45.09"), "13-08-2025 18:45:09");
        assert_eq!(repair_ocr_text("13-08-2025 18.45:09"), "13-08-2025 18:45:09");
    }

    #[test]
    fn slash_misread_as_one_is_repaired() {
        assert_eq!(repair_ocr_text("1310812025 18:45:09"), "13-08-2025 18:45:09");
        assert_eq!(repair_ocr_text("13/08/2025 18:45:09"), "13-08-2025 18:45:09");
        assert_eq!(repair_ocr_text("13/0812025 18:45:09"), "13-08-2025 18:45:09");
    }

    #[test]
    fn fractional_seconds_truncate() {
        let plain = parse_timestamp(&repair_ocr_text("13-08-2025 18:45:09")).unwrap();
        for raw in [
            "13-08-2025 18:45:09.500",
            "13-08-2025 18:45:09.999",
            "13-08-2025 18.45.09.5",
            "13-08-2025 18:45:09 .500",
            "13-08-2025 18:45:09,25",
        ] {
            let repaired = repair_ocr_text(raw);
            assert_eq!(repaired, "13-08-2025 18:45:09", "{raw}");
            assert_eq!(parse_timestamp(&repaired).unwrap(), plain);
        }
    }

    #[test]
    fn whitespace_collapses() {
        assert_eq!(
            repair_ocr_text("  13-08-2025 \t  18:45:09 \n"),
            "13-08-2025 18:45:09"
        );
    }

    #[test]
    fn short_digit_runs_are_not_guessed() {
        assert_eq!(repair_ocr_text("131082025 18:45:09"), "131082025 18:45:09");
        assert!(matches!(
            parse_timestamp(&repair_ocr_text("131082025 18:45:09")),
            Err(TimestampError::MalformedTimestamp(_))
        ));
    }

    #[test]
    fn field_mapping() {
        let t = parse_timestamp("13-08-2025 18:45:09").unwrap();
        assert_eq!(
            (t.day, t.month, t.year, t.hour, t.minute, t.second),
            (13, 8, 2025, 18, 45, 9)
        );
    }

    #[test]
    fn invalid_calendar_dates() {
        for s in [
            "32-01-2025 10:00:00",
            "01-13-2025 10:00:00",
            "29-02-2025 10:00:00",
            "31-04-2025 10:00:00",
            "01-01-2025 24:00:00",
            "01-01-2025 10:60:00",
            "99-99-9999 00:00:00",
            "01-01-0000 00:00:00",
        ] {
            assert!(
                matches!(parse_timestamp(s), Err(TimestampError::InvalidDate(_))),
                "{s}"
            );
        }
        assert!(parse_timestamp("29-02-2024 10:00:00").is_ok());
        assert!(parse_timestamp("29-02-2000 10:00:00").is_ok());
        assert!(parse_timestamp("29-02-1900 10:00:00").is_err());
    }

    #[test]
    fn malformed_patterns() {
        for s in [
            "",
            "13-08-25 18:45:09",
            "13-08-2025T18:45:09",
            "13-08-2025 18:45",
            "garbage",
        ] {
            assert!(
                matches!(
                    parse_timestamp(&repair_ocr_text(s)),
                    Err(TimestampError::MalformedTimestamp(_))
                ),
                "{s}"
            );
        }
    }

    #[test]
    fn extended_table_is_honoured() {
        let table = MisreadTable {
            time_separator: vec!['.', ';'],
            date_separator: vec!['1', '7'],
        };
        assert_eq!(
            repair_ocr_text_with("1370872025 18;45;09", &table),
            "13-08-2025 18:45:09"
        );
        // default table leaves the unknown glyphs alone
        assert_eq!(repair_ocr_text("1370872025 18;45;09"), "1370872025 18;45;09");
    }

    fn valid_ts() -> impl Strategy<Value = FrameTimestamp> {
        (1i32..=9999, 1u32..=12, 1u32..=31, 0u32..24, 0u32..60, 0u32..60)
            .prop_filter_map("valid calendar date", |(y, mo, d, h, mi, s)| {
                FrameTimestamp::new(d, mo, y, h, mi, s).ok()
            })
    }

    proptest! {
        #[test]
        fn repair_is_idempotent(s in "[0-9:./ ,\\-a-z]{0,30}") {
            let once = repair_ocr_text(&s);
            prop_assert_eq!(repair_ocr_text(&once), once);
        }

        #[test]
        fn render_parse_round_trip(t in valid_ts()) {
            prop_assert_eq!(parse_timestamp(&t.to_string()).unwrap(), t);
        }

        #[test]
        fn single_misread_is_recovered(t in valid_ts(), pos in 0usize..19) {
            let canonical = t.to_string();
            let mut chars: Vec<char> = canonical.chars().collect();
            match chars[pos] {
                ':' => chars[pos] = '.',
                '-' => chars[pos] = '1',
                _ => return Ok(()),
            }
            let corrupt: String = chars.into_iter().collect();
            prop_assert_eq!(parse_timestamp(&repair_ocr_text(&corrupt)).unwrap(), t);
        }
    }
}
