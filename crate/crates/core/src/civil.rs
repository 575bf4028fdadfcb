//! Proleptic Gregorian date arithmetic on epoch milliseconds.

pub const MS_PER_MINUTE: i64 = 60_000;
pub const MS_PER_DAY: i64 = 86_400_000;

/// Days since 1970-01-01 for a civil date (Howard Hinnant's algorithm).
pub fn days_from_civil(year: i64, month: u32, day: u32) -> i64 {
    let y = if month <= 2 { year - 1 } else { year };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let m = month as i64;
    let doy = (153 * (if m > 2 { m - 3 } else { m + 9 }) + 2) / 5 + day as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

/// Inverse of [`days_from_civil`].
pub fn civil_from_days(days: i64) -> (i64, u32, u32) {
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let month = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    let year = yoe + era * 400 + if month <= 2 { 1 } else { 0 };
    (year, month, day)
}

/// Epoch milliseconds of local midnight on a date in a fixed-offset zone.
pub fn local_midnight_ms(year: i64, month: u32, day: u32, utc_offset_minutes: i64) -> i64 {
    days_from_civil(year, month, day) * MS_PER_DAY - utc_offset_minutes * MS_PER_MINUTE
}

/// Splits epoch milliseconds into a UTC date and minute of day.
pub fn utc_parts(ms: i64) -> ((i64, u32, u32), u32) {
    let days = ms.div_euclid(MS_PER_DAY);
    let minute = (ms.rem_euclid(MS_PER_DAY) / MS_PER_MINUTE) as u32;
    (civil_from_days(days), minute)
}
