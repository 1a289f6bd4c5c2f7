//! Equal-length time slots.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SlotIndex(pub usize);

/// Maps UTC timestamps to slot ordinals and slots to local calendar time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotClock {
    /// UTC unix seconds at the start of slot 0.
    pub epoch: i64,
    pub interval_min: u32,
    pub utc_offset_min: i32,
}

impl SlotClock {
    pub fn new(epoch: i64, interval_min: u32, utc_offset_min: i32) -> Result<Self> {
        if interval_min == 0 {
            return Err(Error::config("slot interval must be positive"));
        }
        Ok(Self { epoch, interval_min, utc_offset_min })
    }

    /// Clock whose epoch is local midnight of the day containing `first_ts`.
    pub fn starting_at_local_midnight(first_ts: i64, interval_min: u32, utc_offset_min: i32) -> Result<Self> {
        Self::new(local_midnight_utc(first_ts, utc_offset_min), interval_min, utc_offset_min)
    }

    pub fn interval_secs(&self) -> i64 {
        i64::from(self.interval_min) * 60
    }

    pub fn bin(&self, ts: i64) -> Result<SlotIndex> {
        bin_time(ts, self.interval_min, self.epoch)
    }

    pub fn slot_start(&self, k: SlotIndex) -> i64 {
        self.epoch + k.0 as i64 * self.interval_secs()
    }

    pub fn slots_per_day(&self) -> usize {
        (1440 / self.interval_min.max(1)) as usize
    }

    /// Day of week of the slot start in local time, Monday = 0.
    pub fn day_of_week(&self, k: SlotIndex) -> usize {
        day_of_week(self.slot_start(k) + i64::from(self.utc_offset_min) * 60)
    }

    /// Minutes since local midnight at the slot start.
    pub fn minute_of_day(&self, k: SlotIndex) -> u32 {
        let local = self.slot_start(k) + i64::from(self.utc_offset_min) * 60;
        (local.rem_euclid(SECONDS_PER_DAY) / 60) as u32
    }
}

/// `floor((ts - epoch) / interval)`; slots are left-closed, right-open.
pub fn bin_time(ts: i64, interval_min: u32, epoch: i64) -> Result<SlotIndex> {
    if ts < epoch {
        return Err(Error::BeforeEpoch { ts, epoch });
    }
    if interval_min == 0 {
        return Err(Error::config("slot interval must be positive"));
    }
    Ok(SlotIndex(((ts - epoch) / (i64::from(interval_min) * 60)) as usize))
}

/// Monday = 0 for a local-time unix second count. 1970-01-01 was a Thursday.
pub fn day_of_week(local_secs: i64) -> usize {
    (local_secs.div_euclid(SECONDS_PER_DAY) + 3).rem_euclid(7) as usize
}

pub fn local_midnight_utc(ts: i64, utc_offset_min: i32) -> i64 {
    let offset = i64::from(utc_offset_min) * 60;
    (ts + offset).div_euclid(SECONDS_PER_DAY) * SECONDS_PER_DAY - offset
}
