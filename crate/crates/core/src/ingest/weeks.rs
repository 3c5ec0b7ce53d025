//! Calendar windows and assembly of user-week examples.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::features::{extract_event_window, extract_flow_window, FeatureSpec};
use super::schema::{EventRecord, FlowRecord};
use crate::error::{Error, Result};

/// Weekday windows per example (Monday to Friday).
pub const WEEK_LEN: usize = 5;

const DAY: i64 = 86_400;

/// Window boundaries: days start at UTC midnight shifted by
/// `day_offset_seconds`, and each day is split into `24 / window_hours`
/// windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calendar {
    pub window_hours: u32,
    pub day_offset_seconds: i64,
}

impl Default for Calendar {
    fn default() -> Self {
        Self {
            window_hours: 24,
            day_offset_seconds: 0,
        }
    }
}

impl Calendar {
    pub fn validate(&self) -> Result<()> {
        if self.window_hours == 0 || 24 % self.window_hours != 0 {
            return Err(Error::config("window_hours", "must divide 24 (3, 6, 12 or 24)"));
        }
        Ok(())
    }

    pub fn windows_per_day(&self) -> usize {
        (24 / self.window_hours) as usize
    }

    /// Local day number since the epoch.
    pub fn day(&self, ts: i64) -> i64 {
        (ts + self.day_offset_seconds).div_euclid(DAY)
    }

    /// Sub-day window index in `0..windows_per_day()`.
    pub fn window_of_day(&self, ts: i64) -> usize {
        ((ts + self.day_offset_seconds).rem_euclid(DAY) / (i64::from(self.window_hours) * 3600)) as usize
    }
}

/// 0 = Monday ... 6 = Sunday. Day 0 (1970-01-01) was a Thursday.
pub fn weekday(day: i64) -> usize {
    (day + 3).rem_euclid(7) as usize
}

/// Week number counting Monday-started weeks since the epoch.
pub fn week_index(day: i64) -> i64 {
    (day + 3).div_euclid(7)
}

/// First day (a Monday) of a week.
pub fn week_start_day(week: i64) -> i64 {
    week * 7 - 3
}

/// Per-user per-day raw feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DayVector {
    pub user_id: String,
    pub day: i64,
    pub values: Vec<f64>,
}

/// Groups flows per (user, day) and extracts one vector per day; sub-day
/// windows are concatenated in time order.
pub fn flow_day_vectors(records: &[FlowRecord], spec: &FeatureSpec, cal: &Calendar) -> Vec<DayVector> {
    let wpd = cal.windows_per_day();
    let mut groups: BTreeMap<(&str, i64), Vec<Vec<FlowRecord>>> = BTreeMap::new();
    for r in records {
        let slot = groups
            .entry((r.user_id(), cal.day(r.timestamp)))
            .or_insert_with(|| vec![Vec::new(); wpd]);
        slot[cal.window_of_day(r.timestamp)].push(r.clone());
    }
    groups
        .into_iter()
        .map(|((user, day), windows)| DayVector {
            user_id: user.to_string(),
            day,
            values: windows.iter().flat_map(|w| extract_flow_window(w, spec)).collect(),
        })
        .collect()
}

pub fn event_day_vectors(records: &[EventRecord], spec: &FeatureSpec, cal: &Calendar) -> Vec<DayVector> {
    let wpd = cal.windows_per_day();
    let mut groups: BTreeMap<(&str, i64), Vec<Vec<EventRecord>>> = BTreeMap::new();
    for r in records {
        let slot = groups
            .entry((r.user_id.as_str(), cal.day(r.timestamp)))
            .or_insert_with(|| vec![Vec::new(); wpd]);
        slot[cal.window_of_day(r.timestamp)].push(r.clone());
    }
    groups
        .into_iter()
        .map(|((user, day), windows)| DayVector {
            user_id: user.to_string(),
            day,
            values: windows
                .iter()
                .flat_map(|w| extract_event_window(w, spec, cal.day_offset_seconds))
                .collect(),
        })
        .collect()
}

/// One training example: five weekday vectors for one user in one week.
///
/// Carries no label; ground truth lives in [`crate::ingest::LabelTable`] and
/// is only read by evaluation code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserWeek {
    pub user_id: String,
    pub week_index: i64,
    x_seq: Vec<Vec<f64>>,
}

impl UserWeek {
    pub fn new(user_id: impl Into<String>, week_index: i64, x_seq: Vec<Vec<f64>>) -> Result<Self> {
        if x_seq.len() != WEEK_LEN {
            return Err(Error::invalid(format!(
                "a user-week needs {WEEK_LEN} windows, got {}",
                x_seq.len()
            )));
        }
        let d = x_seq[0].len();
        if x_seq.iter().any(|v| v.len() != d) {
            return Err(Error::invalid("user-week windows differ in dimension"));
        }
        Ok(Self {
            user_id: user_id.into(),
            week_index,
            x_seq,
        })
    }

    pub fn x_seq(&self) -> &[Vec<f64>] {
        &self.x_seq
    }

    pub fn dim(&self) -> usize {
        self.x_seq[0].len()
    }

    /// The five windows concatenated into one vector.
    pub fn flattened(&self) -> Vec<f64> {
        self.x_seq.concat()
    }

    pub fn key(&self) -> (String, i64) {
        (self.user_id.clone(), self.week_index)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeekAssembly {
    pub weeks: Vec<UserWeek>,
    /// Weeks with fewer than five weekday windows present.
    pub dropped_weeks: usize,
    /// Weekend day vectors ignored.
    pub weekend_days: usize,
}

/// Groups Monday-Friday vectors into user-weeks; weekends are ignored and
/// incomplete weeks are dropped and counted. Output is sorted by
/// (user_id, week_index).
pub fn build_user_weeks(days: &[DayVector]) -> WeekAssembly {
    let mut per_week: BTreeMap<(String, i64), [Option<&Vec<f64>>; WEEK_LEN]> = BTreeMap::new();
    let mut weekend_days = 0;
    for dv in days {
        let wd = weekday(dv.day);
        if wd >= WEEK_LEN {
            weekend_days += 1;
            continue;
        }
        per_week
            .entry((dv.user_id.clone(), week_index(dv.day)))
            .or_insert([None; WEEK_LEN])[wd] = Some(&dv.values);
    }
    let mut weeks = Vec::new();
    let mut dropped_weeks = 0;
    for ((user, week), slots) in per_week {
        if slots.iter().all(Option::is_some) {
            let x_seq = slots.iter().map(|s| s.unwrap().clone()).collect();
            weeks.push(UserWeek {
                user_id: user,
                week_index: week,
                x_seq,
            });
        } else {
            dropped_weeks += 1;
        }
    }
    WeekAssembly {
        weeks,
        dropped_weeks,
        weekend_days,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // 2024-01-01 is a Monday.
    const MONDAY: i64 = 19_723;

    fn dv(user: &str, day: i64) -> DayVector {
        DayVector {
            user_id: user.into(),
            day,
            values: vec![day as f64, 1.0],
        }
    }

    #[test]
    fn calendar_arithmetic() {
        assert_eq!(weekday(MONDAY), 0);
        assert_eq!(weekday(MONDAY + 5), 5);
        assert_eq!(week_index(MONDAY + 6), week_index(MONDAY));
        assert_eq!(week_index(MONDAY + 7), week_index(MONDAY) + 1);
        assert_eq!(week_start_day(week_index(MONDAY + 3)), MONDAY);
        let cal = Calendar {
            window_hours: 6,
            day_offset_seconds: 0,
        };
        assert_eq!(cal.window_of_day(MONDAY * DAY + 13 * 3600), 2);
        assert_eq!(weekday(0), 3);
    }

    #[test]
    fn full_week_is_one_example() {
        let days: Vec<_> = (0..5).map(|i| dv("a", MONDAY + i)).collect();
        let asm = build_user_weeks(&days);
        assert_eq!(asm.weeks.len(), 1);
        assert_eq!(asm.weeks[0].x_seq().len(), 5);
        assert_eq!(asm.weeks[0].x_seq()[2][0], (MONDAY + 2) as f64);
        assert_eq!(asm.dropped_weeks, 0);
    }

    #[test]
    fn weekend_only_yields_nothing() {
        let asm = build_user_weeks(&[dv("a", MONDAY + 5), dv("a", MONDAY + 6)]);
        assert!(asm.weeks.is_empty());
        assert_eq!(asm.dropped_weeks, 0);
        assert_eq!(asm.weekend_days, 2);
    }

    #[test]
    fn missing_wednesday_drops_week() {
        let days: Vec<_> = [0, 1, 3, 4].iter().map(|i| dv("a", MONDAY + i)).collect();
        let asm = build_user_weeks(&days);
        assert!(asm.weeks.is_empty());
        assert_eq!(asm.dropped_weeks, 1);
    }

    #[test]
    fn sub_day_windows_concatenate() {
        let spec = FeatureSpec {
            count_features: vec![super::super::features::CountFeature::Flows],
            bitmap_features: vec![],
            topk_features: vec![],
            directional: false,
        };
        let cal = Calendar {
            window_hours: 12,
            day_offset_seconds: 0,
        };
        let mk = |ts| FlowRecord {
            timestamp: ts,
            src_id: "u".into(),
            dst_id: "h".into(),
            direction: super::super::schema::Direction::Out,
            bytes: 1,
            packets: 1,
            src_port: 1,
            dst_port: 80,
            protocol: super::super::schema::Protocol::Tcp,
            tcp_flags: 0,
        };
        let base = MONDAY * DAY;
        let v = flow_day_vectors(&[mk(base + 3600), mk(base + 13 * 3600), mk(base + 14 * 3600)], &spec, &cal);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].values, vec![1.0, 2.0]);
    }

    #[test]
    fn user_week_rejects_bad_length() {
        assert!(UserWeek::new("u", 0, vec![vec![0.0]; 4]).is_err());
        assert!(UserWeek::new("u", 0, vec![vec![0.0], vec![0.0, 1.0], vec![0.0], vec![0.0], vec![0.0]]).is_err());
    }
}
