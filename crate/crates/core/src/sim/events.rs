use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::config::{LaneIndex, VehicleClass};

/// A lane change started at `time` with the front bumper at `pos`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Departure {
    pub time: f64,
    pub pos: f64,
    pub veh_id: u64,
    pub class: VehicleClass,
    pub from_lane: LaneIndex,
    pub to_lane: LaneIndex,
    /// Final departure of this vehicle from the incident lane upstream of
    /// the incident zone.
    pub last: bool,
}

/// A vehicle placed on the road at `x = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub time: f64,
    pub veh_id: u64,
    pub class: VehicleClass,
    pub lane: LaneIndex,
    pub desired_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub time: f64,
    pub line_pos: f64,
    pub veh_id: u64,
    pub class: VehicleClass,
    pub lane: LaneIndex,
}

/// A vehicle that entered the road and crossed the end of the travel-time
/// measurement span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trip {
    pub veh_id: u64,
    pub class: VehicleClass,
    pub desired_speed: f64,
    pub entry_time: f64,
    pub exit_time: f64,
    pub entry_lane: LaneIndex,
    pub exit_lane: LaneIndex,
}

impl Trip {
    pub fn travel_time(&self) -> f64 {
        self.exit_time - self.entry_time
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Advisory {
    pub time: f64,
    pub pos: f64,
    pub veh_id: u64,
    pub lane: LaneIndex,
    pub probability: f64,
}

/// Everything a run reports.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    pub entries: Vec<Entry>,
    pub departures: Vec<Departure>,
    pub crossings: Vec<Crossing>,
    pub trips: Vec<Trip>,
    pub advisories: Vec<Advisory>,
    /// Blockage start and end times, if the incident happened.
    pub incident: Option<(f64, f64)>,
    /// Simulation time at which the log was closed.
    pub end_time: f64,
    /// The run reached its configured end.
    pub completed: bool,
    /// Largest latent input queue observed.
    pub max_latent_queue: usize,
    pub final_latent_queue: usize,
}

impl EventLog {
    /// Flags, for every vehicle, its final departure from `incident_lane` at
    /// a position before `upstream_of`.
    pub fn mark_last_departures(&mut self, incident_lane: LaneIndex, upstream_of: f64) {
        let mut last: BTreeMap<u64, usize> = BTreeMap::new();
        for (i, dep) in self.departures.iter_mut().enumerate() {
            dep.last = false;
            if dep.from_lane == incident_lane && dep.pos < upstream_of {
                last.insert(dep.veh_id, i);
            }
        }
        for i in last.into_values() {
            self.departures[i].last = true;
        }
    }

    pub fn last_departures(&self) -> impl Iterator<Item = &Departure> {
        self.departures.iter().filter(|d| d.last)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dep(time: f64, pos: f64, veh_id: u64, from_lane: LaneIndex) -> Departure {
        Departure { time, pos, veh_id, class: VehicleClass::Car, from_lane, to_lane: from_lane + 1, last: false }
    }

    #[test]
    fn last_departure_per_vehicle() {
        let mut log = EventLog {
            departures: alloc::vec![
                dep(10.0, 100.0, 1, 0),
                dep(20.0, 300.0, 1, 0),
                dep(25.0, 400.0, 1, 1),
                dep(30.0, 6000.0, 2, 0),
                dep(31.0, 200.0, 3, 0),
            ],
            ..Default::default()
        };
        log.mark_last_departures(0, 5852.16);
        let flags: Vec<bool> = log.departures.iter().map(|d| d.last).collect();
        assert_eq!(flags, [false, true, false, false, true]);
        assert_eq!(log.last_departures().count(), 2);
    }
}
