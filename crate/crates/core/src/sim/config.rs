use core::fmt;
use core::str::FromStr;

use crate::FT;

/// Lane index, 0 = rightmost.
pub type LaneIndex = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VehicleClass {
    Car,
    /// Car carrying the lane-change advisory.
    SeCar,
    Hgv,
    Bus,
}

impl VehicleClass {
    pub const ALL: [VehicleClass; 4] = [VehicleClass::Car, VehicleClass::SeCar, VehicleClass::Hgv, VehicleClass::Bus];

    pub fn as_str(self) -> &'static str {
        match self {
            VehicleClass::Car => "car",
            VehicleClass::SeCar => "se_car",
            VehicleClass::Hgv => "hgv",
            VehicleClass::Bus => "bus",
        }
    }

    /// Vehicle length (m).
    pub fn length(self) -> f64 {
        match self {
            VehicleClass::Car | VehicleClass::SeCar => 4.75,
            VehicleClass::Hgv => 15.0,
            VehicleClass::Bus => 12.2,
        }
    }

    /// Fraction of `accel_max` the class can use.
    pub fn accel_factor(self) -> f64 {
        match self {
            VehicleClass::Car | VehicleClass::SeCar => 1.0,
            VehicleClass::Hgv => 0.6,
            VehicleClass::Bus => 0.7,
        }
    }
}

impl fmt::Display for VehicleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VehicleClass {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VehicleClass::ALL.into_iter().find(|c| c.as_str() == s).ok_or(())
    }
}

/// Freeway segment geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadConfig {
    /// Segment length (m).
    pub length: f64,
    pub lanes: usize,
    /// Travel time is measured from 0 to this position (m).
    pub measurement_span: f64,
    pub incident_lane: LaneIndex,
    /// Blocked stretch `[start, end]` (m).
    pub incident_zone: (f64, f64),
    /// Position of the discharge counting line (m).
    pub discharge_line: f64,
}

impl Default for RoadConfig {
    fn default() -> Self {
        RoadConfig {
            length: 21_054.0 * FT,
            lanes: 4,
            measurement_span: 21_000.0 * FT,
            incident_lane: 0,
            incident_zone: (19_000.0 * FT, 19_200.0 * FT),
            discharge_line: 19_400.0 * FT,
        }
    }
}

impl RoadConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        let (a, b) = self.incident_zone;
        if self.lanes < 2 {
            return Err("road needs at least two lanes");
        }
        if self.incident_lane + 1 >= self.lanes {
            return Err("incident lane needs a lane to its left");
        }
        if !(0.0 <= a && a < b && b <= self.length) {
            return Err("incident zone must lie within the road");
        }
        if !(self.measurement_span > 0.0 && self.measurement_span <= self.length) {
            return Err("measurement span must lie within the road");
        }
        if !(b < self.discharge_line && self.discharge_line <= self.length) {
            return Err("discharge line must be downstream of the incident zone");
        }
        Ok(())
    }

    /// Upstream end of the blockage, the point advised vehicles aim to clear.
    pub fn incident_point(&self) -> f64 {
        self.incident_zone.0
    }
}

/// Driving behaviour parameters shared by all vehicles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorParams {
    /// Standstill clear distance (m).
    pub standstill: f64,
    /// Desired time headway (s).
    pub headway_time: f64,
    /// Following variation (m); kept for reference, not used by the
    /// car-following law.
    pub following_variation: f64,
    pub max_decel_own: f64,
    pub max_decel_trail: f64,
    pub accepted_decel_own: f64,
    pub accepted_decel_trail: f64,
    /// Headway multiplier while a lane change is in progress.
    pub safety_reduction: f64,
    pub coop_brake_decel: f64,
    pub accel_max: f64,
}

impl Default for BehaviorParams {
    fn default() -> Self {
        BehaviorParams {
            standstill: 4.92 * FT,
            headway_time: 0.9,
            following_variation: 13.12 * FT,
            max_decel_own: 15.0 * FT,
            max_decel_trail: 12.0 * FT,
            accepted_decel_own: 4.0 * FT,
            accepted_decel_trail: 3.28 * FT,
            safety_reduction: 0.25,
            coop_brake_decel: 23.0 * FT,
            accel_max: 1.5,
        }
    }
}

impl BehaviorParams {
    pub fn validate(&self) -> Result<(), &'static str> {
        let all = [
            self.standstill,
            self.headway_time,
            self.following_variation,
            self.max_decel_own,
            self.max_decel_trail,
            self.accepted_decel_own,
            self.accepted_decel_trail,
            self.safety_reduction,
            self.coop_brake_decel,
            self.accel_max,
        ];
        if all.iter().any(|v| !(*v > 0.0)) {
            return Err("behaviour parameters must be positive");
        }
        if self.accepted_decel_own > self.max_decel_own || self.accepted_decel_trail > self.max_decel_trail {
            return Err("accepted decelerations must not exceed the maximum ones");
        }
        Ok(())
    }

    /// Copy with `accel_max` scaled for a vehicle class.
    pub fn for_class(&self, class: VehicleClass) -> BehaviorParams {
        BehaviorParams { accel_max: self.accel_max * class.accel_factor(), ..*self }
    }
}

/// One simulation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Input flow (veh/h).
    pub q_i: f64,
    /// Share of advisory-equipped cars.
    pub r: f64,
    /// Incident duration (s).
    pub gamma_i: f64,
    /// Advisory threshold.
    pub p_l: f64,
    pub seed: u64,
    pub dt: f64,
    pub t_end: f64,
    pub t_seed_period: f64,
    pub incident_start: f64,
    /// Advisory disabled; equipped cars drive like plain cars.
    pub baseline_mode: bool,
    /// How far upstream of the blockage unadvised drivers start forcing their
    /// way out of the blocked lane (m).
    pub avoidance_distance: f64,
    /// Record a state snapshot every this many ticks; 0 disables snapshots.
    pub state_decimation: u32,
    /// Check conservation, speed and acceleration bounds every tick.
    pub check_invariants: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            q_i: 6400.0,
            r: 0.4,
            gamma_i: 1800.0,
            p_l: 0.9,
            seed: 42,
            dt: 0.1,
            t_end: 9000.0,
            t_seed_period: 1800.0,
            incident_start: 3600.0,
            baseline_mode: false,
            avoidance_distance: 300.0,
            state_decimation: 10,
            check_invariants: false,
        }
    }
}

impl SimConfig {
    /// Shortened scenario for quick runs: 4500 s with the incident at
    /// 1800-2700 s.
    pub fn small() -> Self {
        SimConfig { t_end: 4500.0, incident_start: 1800.0, gamma_i: 900.0, t_seed_period: 900.0, ..Default::default() }
    }

    pub fn incident_end(&self) -> f64 {
        self.incident_start + self.gamma_i
    }

    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.dt > 0.0) {
            return Err("dt must be positive");
        }
        if !(self.q_i >= 0.0) || !self.q_i.is_finite() {
            return Err("q_i must be a non-negative flow");
        }
        if !(0.0..=0.85).contains(&self.r) {
            return Err("r must lie in [0, 0.85]");
        }
        if !(self.p_l > 0.0 && self.p_l <= 1.0) {
            return Err("p_l must lie in (0, 1]");
        }
        if !(self.gamma_i >= 0.0) || !(self.incident_start >= 0.0) {
            return Err("incident timing must be non-negative");
        }
        if self.incident_end() > self.t_end {
            return Err("incident must end before t_end");
        }
        if !(self.t_seed_period >= 0.0 && self.t_seed_period < self.t_end) {
            return Err("seeding period must be shorter than the run");
        }
        if !(self.avoidance_distance >= 0.0) {
            return Err("avoidance distance must be non-negative");
        }
        Ok(())
    }

    /// Class shares (SE car, car, HGV, bus).
    pub fn composition(&self) -> [(VehicleClass, f64); 4] {
        [
            (VehicleClass::SeCar, self.r),
            (VehicleClass::Car, 0.85 - self.r),
            (VehicleClass::Hgv, 0.13),
            (VehicleClass::Bus, 0.02),
        ]
    }
}
