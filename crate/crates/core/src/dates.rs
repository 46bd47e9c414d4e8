//! Conversion between 1900-system serial day numbers and ISO-8601 dates.
//!
//! Serial 1 is 1900-01-01. The 1900 system counts a 29 February 1900 that
//! never existed, so serial 60 has no calendar date and every serial from 61
//! on is one day ahead of a plain day count. Serial 60 is rejected with
//! [`DateError::PhantomDate`] instead of being mapped to a fake date.

use chrono::{Datelike, NaiveDate};
use thiserror::Error;

/// Serial of 9999-12-31, the last representable day.
pub const MAX_SERIAL: i64 = 2_958_465;
/// The serial that would be the non-existent 1900-02-29.
pub const PHANTOM_SERIAL: i64 = 60;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DateError {
    #[error("serial {0} is outside the 1900 date system")]
    OutOfRange(i64),
    #[error("serial 60 denotes 1900-02-29, which is not a calendar date")]
    PhantomDate,
    #[error("`{0}` is not an ISO-8601 date (YYYY-MM-DD)")]
    InvalidDate(String),
}

fn epoch_before_phantom() -> NaiveDate {
    NaiveDate::from_ymd_opt(1899, 12, 31).expect("valid")
}

fn epoch_after_phantom() -> NaiveDate {
    NaiveDate::from_ymd_opt(1899, 12, 30).expect("valid")
}

fn first_after_phantom() -> NaiveDate {
    NaiveDate::from_ymd_opt(1900, 3, 1).expect("valid")
}

pub fn serial_to_date(serial: i64) -> Result<NaiveDate, DateError> {
    if serial == PHANTOM_SERIAL {
        return Err(DateError::PhantomDate);
    }
    if !(1..=MAX_SERIAL).contains(&serial) {
        return Err(DateError::OutOfRange(serial));
    }
    let epoch = if serial < PHANTOM_SERIAL {
        epoch_before_phantom()
    } else {
        epoch_after_phantom()
    };
    Ok(epoch + chrono::Duration::days(serial))
}

pub fn date_to_serial(date: NaiveDate) -> Result<i64, DateError> {
    let epoch = if date < first_after_phantom() {
        epoch_before_phantom()
    } else {
        epoch_after_phantom()
    };
    let serial = (date - epoch).num_days();
    if !(1..=MAX_SERIAL).contains(&serial) {
        return Err(DateError::OutOfRange(serial));
    }
    Ok(serial)
}

/// `61 -> "1900-03-01"`.
pub fn serial_to_iso(serial: i64) -> Result<String, DateError> {
    serial_to_date(serial).map(|d| d.format("%Y-%m-%d").to_string())
}

/// Inverse of [`serial_to_iso`]; accepts strict `YYYY-MM-DD`.
pub fn iso_to_serial(text: &str) -> Result<i64, DateError> {
    let t = text.trim();
    let well_formed = t.len() == 10
        && t.bytes().enumerate().all(|(i, b)| match i {
            4 | 7 => b == b'-',
            _ => b.is_ascii_digit(),
        });
    if !well_formed {
        return Err(DateError::InvalidDate(text.to_string()));
    }
    let date = NaiveDate::parse_from_str(t, "%Y-%m-%d")
        .map_err(|_| DateError::InvalidDate(text.to_string()))?;
    date_to_serial(date)
}

/// `DATE(year, month, day)` with spreadsheet normalisation: years below 1900
/// are offsets from 1900, and months/days outside their range roll over.
pub(crate) fn date_serial_from_parts(year: f64, month: f64, day: f64) -> Option<i64> {
    let (mut year, month, day) = (year.trunc() as i64, month.trunc() as i64, day.trunc() as i64);
    if !(0..=9999).contains(&year) {
        return None;
    }
    if year < 1900 {
        year += 1900;
    }
    let months = year.checked_mul(12)?.checked_add(month.checked_sub(1)?)?;
    let (y, m) = (months.div_euclid(12), months.rem_euclid(12) + 1);
    let first = NaiveDate::from_ymd_opt(i32::try_from(y).ok()?, m as u32, 1)?;
    let date = first.checked_add_signed(chrono::Duration::try_days(day.checked_sub(1)?)?)?;
    date_to_serial(date).ok()
}

pub(crate) fn serial_parts(serial: f64) -> Option<(i32, u32, u32)> {
    let d = serial_to_date(serial.trunc() as i64).ok()?;
    Some((d.year(), d.month(), d.day()))
}
