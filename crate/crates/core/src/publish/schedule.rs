//! Timed publication: local slot times in a campaign timezone.

use chrono::{DateTime, Days, NaiveTime, TimeZone, Utc};
use chrono_tz::Tz;

#[derive(Debug, Clone, PartialEq)]
pub struct PublishSchedule {
    slots: Vec<NaiveTime>,
    tz: Tz,
    immediate: bool,
}

impl PublishSchedule {
    /// `slots` must be strictly increasing; config validation guarantees it.
    pub fn new(slots: Vec<NaiveTime>, tz: Tz, immediate: bool) -> Self {
        debug_assert!(slots.windows(2).all(|w| w[0] < w[1]));
        Self { slots, tz, immediate }
    }

    pub fn immediate() -> Self {
        Self { slots: Vec::new(), tz: Tz::UTC, immediate: true }
    }

    pub fn is_immediate(&self) -> bool {
        self.immediate
    }

    pub fn slots(&self) -> &[NaiveTime] {
        &self.slots
    }

    pub fn timezone(&self) -> Tz {
        self.tz
    }

    /// Slot instants on the local days from `from` to `to` days relative to `at`'s local date.
    /// Slot times that do not exist locally (DST gaps) are skipped.
    fn instants(&self, at: DateTime<Utc>, from: i64, to: i64) -> Vec<DateTime<Utc>> {
        let today = at.with_timezone(&self.tz).date_naive();
        let mut out = Vec::new();
        for offset in from..=to {
            let day = if offset < 0 {
                today.checked_sub_days(Days::new(offset.unsigned_abs()))
            } else {
                today.checked_add_days(Days::new(offset as u64))
            };
            let Some(day) = day else { continue };
            for slot in &self.slots {
                if let Some(local) = self.tz.from_local_datetime(&day.and_time(*slot)).earliest() {
                    out.push(local.with_timezone(&Utc));
                }
            }
        }
        out
    }

    /// Most recent slot instant at or before `now`.
    pub fn latest_slot_at_or_before(&self, now: DateTime<Utc>) -> Option<DateTime<Utc>> {
        self.instants(now, -2, 0).into_iter().filter(|t| *t <= now).max()
    }

    /// First slot instant strictly after `t`.
    pub fn next_slot_after(&self, t: DateTime<Utc>) -> Option<DateTime<Utc>> {
        self.instants(t, 0, 2).into_iter().filter(|s| *s > t).min()
    }

    /// Whether something queued at `queued_at` may be published at `now`.
    pub fn is_due(&self, queued_at: DateTime<Utc>, now: DateTime<Utc>) -> bool {
        self.immediate || self.latest_slot_at_or_before(now).is_some_and(|slot| slot >= queued_at)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hm(h: u32, m: u32) -> NaiveTime {
        NaiveTime::from_hms_opt(h, m, 0).unwrap()
    }

    fn utc(s: &str) -> DateTime<Utc> {
        s.parse().unwrap()
    }

    fn three_daily_slots(tz: Tz) -> PublishSchedule {
        PublishSchedule::new(vec![hm(9, 0), hm(12, 0), hm(17, 0)], tz, false)
    }

    #[test]
    fn due_only_after_a_slot_passes() {
        let s = three_daily_slots(Tz::UTC);
        let queued = utc("2024-03-01T10:00:00Z");
        assert!(!s.is_due(queued, utc("2024-03-01T11:59:59Z")));
        assert!(s.is_due(queued, utc("2024-03-01T12:00:00Z")));
        assert!(s.is_due(queued, utc("2024-03-02T08:00:00Z")));
    }

    #[test]
    fn before_first_slot_uses_previous_day() {
        let s = three_daily_slots(Tz::UTC);
        assert_eq!(s.latest_slot_at_or_before(utc("2024-03-02T08:00:00Z")), Some(utc("2024-03-01T17:00:00Z")));
        assert_eq!(s.next_slot_after(utc("2024-03-01T17:00:00Z")), Some(utc("2024-03-02T09:00:00Z")));
    }

    #[test]
    fn slots_follow_local_time() {
        let s = three_daily_slots(chrono_tz::Europe::Rome);
        // 09:00 in Rome is 08:00 UTC in winter.
        assert_eq!(s.next_slot_after(utc("2024-01-10T00:00:00Z")), Some(utc("2024-01-10T08:00:00Z")));
        // and 07:00 UTC in summer.
        assert_eq!(s.next_slot_after(utc("2024-07-10T00:00:00Z")), Some(utc("2024-07-10T07:00:00Z")));
    }

    #[test]
    fn nonexistent_local_slot_is_skipped() {
        let s = PublishSchedule::new(vec![hm(2, 30)], chrono_tz::Europe::Rome, false);
        // 2024-03-31 02:30 does not exist in Rome.
        assert_eq!(s.next_slot_after(utc("2024-03-30T12:00:00Z")), Some(utc("2024-04-01T00:30:00Z")));
    }

    #[test]
    fn immediate_mode_is_always_due() {
        let s = PublishSchedule::immediate();
        let t = utc("2024-03-01T10:00:00Z");
        assert!(s.is_due(t, t));
    }
}
