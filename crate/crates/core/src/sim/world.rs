use alloc::collections::VecDeque;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::config::{BehaviorParams, LaneIndex, RoadConfig, SimConfig, VehicleClass};
use super::driving::{car_following_accel, idm_accel, Follower, GapCheck, Leader, Urgency};
use super::events::{Advisory, Crossing, Departure, Entry, EventLog, Trip};
use super::sentinel::{self, Advice, Assessment, Observed, LANE_CHANGE_TIME};
use crate::prob::{BaseCaseTable, ProbError};

/// Desired speeds are drawn uniformly from this range (m/s).
pub const DESIRED_SPEED_RANGE: (f64, f64) = (29.95, 35.76);
/// Hard speed ceiling checked by the invariant pass (m/s).
pub const MAX_SPEED: f64 = 36.5;
/// Speed gain that makes a discretionary change worthwhile (m/s).
pub const DISCRETIONARY_GAIN: f64 = 2.0;
/// Ticks between two discretionary lane choices of the same driver.
pub const DISCRETIONARY_PERIOD: u64 = 5;
/// Minimum time between two changes of the same vehicle (s).
pub const CHANGE_COOLDOWN: f64 = 10.0;
/// Waiting time after which target-lane followers start yielding (s).
pub const COOP_WAIT: f64 = 5.0;
/// Leaders further away than this do not limit the achievable speed (m).
pub const LOOKAHEAD: f64 = 100.0;
/// Speeds below this count as stationary (m/s).
pub const STOPPED_SPEED: f64 = 0.1;

const BLOCKAGE_ID: u64 = 0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("a probability table is required unless the advisory is disabled")]
    MissingTable,
    #[error("integrity violation at t = {time:.1} s (vehicle {veh_id}): {reason}")]
    IntegrityViolation { time: f64, veh_id: u64, reason: &'static str },
    #[error("advisory evaluation failed: {0}")]
    Prob(#[from] ProbError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LcState {
    None,
    InProgress { target: LaneIndex, remaining: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: u64,
    pub class: VehicleClass,
    pub lane: LaneIndex,
    /// Front bumper (m).
    pub pos: f64,
    pub speed: f64,
    pub accel: f64,
    pub desired_speed: f64,
    pub length: f64,
    pub lc_state: LcState,
    pub entered_at: f64,
    pub advisory_fired: bool,
    entry_lane: LaneIndex,
    params: BehaviorParams,
    /// Time a mandatory change into the next lane to the left was requested.
    mandatory_since: Option<f64>,
    last_change: f64,
    prev_pos: f64,
    blockage: bool,
    /// Was inside the incident zone, or too close to stop, when the blockage
    /// appeared and simply drives on through it.
    passes_blockage: bool,
}

impl VehicleState {
    pub fn rear(&self) -> f64 {
        self.pos - self.length
    }

    pub fn is_blockage(&self) -> bool {
        self.blockage
    }

    pub fn changing_to(&self) -> Option<LaneIndex> {
        match self.lc_state {
            LcState::None => None,
            LcState::InProgress { target, .. } => Some(target),
        }
    }

    pub fn mandatory_since(&self) -> Option<f64> {
        self.mandatory_since
    }
}

/// Lane membership entry; ordered by (pos, id).
#[derive(Debug, Clone, Copy)]
struct Slot {
    pos: f64,
    id: u64,
    idx: usize,
}

impl Slot {
    fn before(&self, pos: f64, id: u64) -> bool {
        self.pos < pos || (self.pos == pos && self.id <= id)
    }
}

#[derive(Debug, Clone, Copy)]
struct Arrival {
    class: VehicleClass,
    desired_speed: f64,
}

/// The simulated road at one instant.
pub struct World<'t> {
    cfg: SimConfig,
    road: RoadConfig,
    behavior: BehaviorParams,
    table: Option<&'t BaseCaseTable>,
    tick: u64,
    incident_ticks: (u64, u64),
    end_tick: u64,
    vehicles: Vec<VehicleState>,
    /// Vehicle indices per lane sorted by (pos, id); changers appear in both
    /// lanes.
    lanes: Vec<Vec<Slot>>,
    /// Vehicle indices by descending position, refreshed with `lanes`.
    order: Vec<usize>,
    /// Index of the blockage in `vehicles`, refreshed with `lanes`.
    blockage: Option<usize>,
    latent: VecDeque<Arrival>,
    next_arrival: f64,
    interarrival: Option<Exp<f64>>,
    rng: ChaCha8Rng,
    blockage_active: bool,
    arrived: u64,
    exited: u64,
    next_id: u64,
    position_clamps: u64,
    log: EventLog,
    assessments: Vec<(u64, Assessment)>,
}

impl<'t> World<'t> {
    pub fn new(
        cfg: SimConfig,
        road: RoadConfig,
        behavior: BehaviorParams,
        table: Option<&'t BaseCaseTable>,
    ) -> Result<Self, SimError> {
        cfg.validate().map_err(SimError::InvalidConfig)?;
        road.validate().map_err(SimError::InvalidConfig)?;
        behavior.validate().map_err(SimError::InvalidConfig)?;
        if table.is_none() && !cfg.baseline_mode && cfg.r > 0.0 {
            return Err(SimError::MissingTable);
        }
        let ticks = |t: f64| libm::round(t / cfg.dt) as u64;
        let interarrival = if cfg.q_i > 0.0 { Some(Exp::new(cfg.q_i / 3600.0).expect("positive rate")) } else { None };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let next_arrival = interarrival.as_ref().map_or(f64::INFINITY, |e| e.sample(&mut rng));
        let mut world = World {
            cfg,
            road,
            behavior,
            table,
            tick: 0,
            incident_ticks: (ticks(cfg.incident_start), ticks(cfg.incident_end())),
            end_tick: ticks(cfg.t_end),
            vehicles: Vec::new(),
            lanes: (0..road.lanes).map(|_| Vec::new()).collect(),
            order: Vec::new(),
            blockage: None,
            latent: VecDeque::new(),
            next_arrival,
            interarrival,
            rng,
            blockage_active: false,
            arrived: 0,
            exited: 0,
            next_id: BLOCKAGE_ID + 1,
            position_clamps: 0,
            log: EventLog::default(),
            assessments: Vec::new(),
        };
        world.apply_incident();
        world.rebuild_lanes();
        Ok(world)
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.cfg.dt
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn road(&self) -> &RoadConfig {
        &self.road
    }

    pub fn vehicles(&self) -> &[VehicleState] {
        &self.vehicles
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn blockage_active(&self) -> bool {
        self.blockage_active
    }

    /// Advisory evaluations made during the last tick.
    pub fn assessments(&self) -> &[(u64, Assessment)] {
        &self.assessments
    }

    pub fn arrived(&self) -> u64 {
        self.arrived
    }

    pub fn exited(&self) -> u64 {
        self.exited
    }

    pub fn latent_len(&self) -> usize {
        self.latent.len()
    }

    pub fn on_road(&self) -> usize {
        self.vehicles.iter().filter(|v| !v.blockage).count()
    }

    /// Ticks in which a vehicle had to be held back behind its leader beyond
    /// what its commanded braking achieved.
    pub fn position_clamps(&self) -> u64 {
        self.position_clamps
    }

    pub fn is_finished(&self) -> bool {
        self.tick >= self.end_tick
    }

    /// Places a vehicle directly, bypassing the arrival process. Intended for
    /// tests and scripted scenarios.
    pub fn spawn(&mut self, class: VehicleClass, lane: LaneIndex, pos: f64, speed: f64, desired_speed: f64) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.arrived += 1;
        let t = self.time();
        self.vehicles.push(self.make_vehicle(id, class, lane, pos, speed, desired_speed, t));
        self.rebuild_lanes();
        id
    }

    fn make_vehicle(
        &self,
        id: u64,
        class: VehicleClass,
        lane: LaneIndex,
        pos: f64,
        speed: f64,
        desired_speed: f64,
        t: f64,
    ) -> VehicleState {
        VehicleState {
            id,
            class,
            lane,
            pos,
            speed,
            accel: 0.0,
            desired_speed,
            length: class.length(),
            lc_state: LcState::None,
            entered_at: t,
            advisory_fired: false,
            entry_lane: lane,
            params: self.behavior.for_class(class),
            mandatory_since: None,
            last_change: f64::NEG_INFINITY,
            prev_pos: pos,
            blockage: false,
            passes_blockage: false,
        }
    }

    /// Runs to `t_end`, calling `observe` every `state_decimation` ticks.
    pub fn run<F: FnMut(&World<'t>)>(mut self, mut observe: F) -> Result<EventLog, SimError> {
        let every = u64::from(self.cfg.state_decimation);
        if every > 0 {
            observe(&self);
        }
        while !self.is_finished() {
            self.step()?;
            if every > 0 && self.tick.is_multiple_of(every) {
                observe(&self);
            }
        }
        Ok(self.finish())
    }

    /// Closes the log: end time, queue statistics and last-departure flags.
    pub fn finish(mut self) -> EventLog {
        self.log.end_time = self.time();
        self.log.completed = self.is_finished();
        self.log.final_latent_queue = self.latent.len();
        self.log.mark_last_departures(self.road.incident_lane, self.road.incident_zone.1);
        self.log
    }

    pub fn step(&mut self) -> Result<(), SimError> {
        let t = self.time();
        self.assessments.clear();
        if self.blockage_active && !self.cfg.baseline_mode {
            self.run_sentinel(t)?;
        }
        if self.blockage_active {
            self.raise_avoidance_intents(t);
        }
        self.initiate_mandatory(t);
        self.initiate_discretionary(t);
        let leaders = self.leaders();
        let accels = self.accelerations(t, &leaders);
        self.integrate(&accels, &leaders);
        self.progress_lane_changes(t);
        self.tick += 1;
        let t1 = self.time();
        self.inject(t1);
        self.record_exits(t, t1);
        // The blockage state always matches the current clock.
        self.apply_incident();
        self.rebuild_lanes();
        self.check(t1)
    }

    fn apply_incident(&mut self) -> bool {
        let (start, end) = self.incident_ticks;
        if end <= start {
            return false;
        }
        if self.tick == start && !self.blockage_active {
            let (zs, ze) = self.road.incident_zone;
            let lane = self.road.incident_lane;
            for v in &mut self.vehicles {
                let in_lane = v.lane == lane || v.changing_to() == Some(lane);
                // Vehicles that can no longer stop short of the zone slip
                // through before it closes.
                let stop = v.speed * v.speed / (2.0 * v.params.max_decel_own) + v.params.standstill;
                if in_lane && v.pos + stop > zs && v.rear() < ze {
                    v.passes_blockage = true;
                }
            }
            let mut b = self.make_vehicle(BLOCKAGE_ID, VehicleClass::Bus, lane, ze, 0.0, 0.0, self.time());
            b.length = ze - zs;
            b.blockage = true;
            self.vehicles.push(b);
            self.blockage_active = true;
            self.log.incident = Some((self.cfg.incident_start, self.cfg.incident_end()));
            return true;
        }
        if self.tick == end && self.blockage_active {
            self.vehicles.retain(|v| !v.blockage);
            for v in &mut self.vehicles {
                v.passes_blockage = false;
                v.mandatory_since = None;
            }
            self.blockage_active = false;
            return true;
        }
        false
    }

    fn rebuild_lanes(&mut self) {
        for l in &mut self.lanes {
            l.clear();
        }
        for (idx, v) in self.vehicles.iter().enumerate() {
            let slot = Slot { pos: v.pos, id: v.id, idx };
            self.lanes[v.lane].push(slot);
            if let Some(target) = v.changing_to() {
                self.lanes[target].push(slot);
            }
        }
        for l in &mut self.lanes {
            l.sort_unstable_by(|a, b| a.pos.total_cmp(&b.pos).then(a.id.cmp(&b.id)));
        }
        let mut all: Vec<Slot> =
            self.vehicles.iter().enumerate().map(|(idx, v)| Slot { pos: v.pos, id: v.id, idx }).collect();
        all.sort_unstable_by(|a, b| b.pos.total_cmp(&a.pos).then(b.id.cmp(&a.id)));
        self.order.clear();
        self.order.extend(all.iter().map(|s| s.idx));
        self.blockage = self.vehicles.iter().position(|v| v.blockage);
    }

    fn ignores(&self, me: usize, other: usize) -> bool {
        other == me || (self.vehicles[other].blockage && self.vehicles[me].passes_blockage)
    }

    /// Index into `lanes[lane]` of the first vehicle ordered after `me`.
    fn split(&self, lane: LaneIndex, me: usize) -> usize {
        let (pos, id) = (self.vehicles[me].pos, self.vehicles[me].id);
        self.lanes[lane].partition_point(|s| s.before(pos, id))
    }

    fn leader_in(&self, lane: LaneIndex, me: usize) -> Option<usize> {
        let s = self.split(lane, me);
        let found = self.lanes[lane][s..].iter().map(|s| s.idx).find(|&j| !self.ignores(me, j));
        // Vehicles slipping through the zone sort ahead of the blockage's
        // front but not of its rear.
        match (found, self.blockage) {
            (Some(j), Some(b)) if j != b && self.blocks(lane, me, b) && self.vehicles[b].rear() < self.vehicles[j].rear() => {
                Some(b)
            }
            _ => found,
        }
    }

    fn blocks(&self, lane: LaneIndex, me: usize, b: usize) -> bool {
        let (v, bv) = (&self.vehicles[me], &self.vehicles[b]);
        lane == bv.lane && !v.passes_blockage && v.pos < bv.pos
    }

    fn follower_in(&self, lane: LaneIndex, me: usize) -> Option<usize> {
        let s = self.split(lane, me);
        self.lanes[lane][..s].iter().rev().map(|s| s.idx).find(|&j| !self.ignores(me, j))
    }

    fn leader_view(&self, me: usize, leader: usize) -> Leader {
        let l = &self.vehicles[leader];
        Leader { gap: l.rear() - self.vehicles[me].pos, speed: l.speed }
    }

    fn gap_check(&self, me: usize, target: LaneIndex) -> GapCheck {
        let v = &self.vehicles[me];
        let lead = self.leader_in(target, me).map(|l| self.leader_view(me, l));
        let lag = self.follower_in(target, me).map(|f| {
            let fv = &self.vehicles[f];
            Follower { gap: v.rear() - fv.pos, speed: fv.speed, desired_speed: fv.desired_speed, params: fv.params }
        });
        GapCheck::assess(v.speed, v.length, &v.params, v.desired_speed, lead, lag)
    }

    fn achievable_speed(&self, me: usize, lane: LaneIndex) -> f64 {
        let v = &self.vehicles[me];
        match self.leader_in(lane, me) {
            Some(l) if self.vehicles[l].rear() - v.pos <= LOOKAHEAD => v.desired_speed.min(self.vehicles[l].speed),
            _ => v.desired_speed,
        }
    }

    fn upstream_of_incident(&self, v: &VehicleState) -> bool {
        v.lane == self.road.incident_lane && v.pos < self.road.incident_zone.0 && !v.blockage
    }

    fn run_sentinel(&mut self, t: f64) -> Result<(), SimError> {
        let table = self.table.ok_or(SimError::MissingTable)?;
        let target = self.road.incident_lane + 1;
        let observed: Vec<Observed> = self.lanes[target]
            .iter()
            .map(|s| &self.vehicles[s.idx])
            .map(|v| Observed { pos: v.pos, length: v.length, speed: v.speed })
            .collect();
        for i in 0..self.vehicles.len() {
            let v = &self.vehicles[i];
            let eligible = v.class == VehicleClass::SeCar
                && self.upstream_of_incident(v)
                && v.lc_state == LcState::None
                && !v.advisory_fired;
            if !eligible {
                continue;
            }
            let snap = sentinel::perceive(v.pos, &observed);
            let a = sentinel::assess(table, v.speed, self.road.incident_zone.0 - v.pos, &snap)?;
            self.assessments.push((v.id, a));
            if sentinel::advise(a.p, self.cfg.p_l) == Advice::ChangeLeft {
                let v = &mut self.vehicles[i];
                v.advisory_fired = true;
                v.mandatory_since.get_or_insert(t);
                self.log.advisories.push(Advisory {
                    time: t,
                    pos: v.pos,
                    veh_id: v.id,
                    lane: v.lane,
                    probability: a.p,
                });
            }
        }
        Ok(())
    }

    /// Unadvised drivers react to the blockage late: close to it, or once the
    /// vehicle ahead has stopped.
    fn raise_avoidance_intents(&mut self, t: f64) {
        let zs = self.road.incident_zone.0;
        for i in 0..self.vehicles.len() {
            let v = &self.vehicles[i];
            if !self.upstream_of_incident(v) || v.lc_state != LcState::None || v.mandatory_since.is_some() {
                continue;
            }
            let near = zs - v.pos <= self.cfg.avoidance_distance;
            let stopped_ahead = self.leader_in(v.lane, i).is_some_and(|l| {
                let lv = &self.vehicles[l];
                lv.speed < STOPPED_SPEED && lv.rear() - v.pos <= LOOKAHEAD
            });
            if near || stopped_ahead {
                self.vehicles[i].mandatory_since = Some(t);
            }
        }
    }

    fn start_change(&mut self, i: usize, target: LaneIndex, t: f64) {
        let s = self.split(target, i);
        let v = &self.vehicles[i];
        self.lanes[target].insert(s, Slot { pos: v.pos, id: v.id, idx: i });
        let v = &mut self.vehicles[i];
        v.lc_state = LcState::InProgress { target, remaining: LANE_CHANGE_TIME };
        v.last_change = t;
        v.mandatory_since = None;
        self.log.departures.push(Departure {
            time: t,
            pos: v.pos,
            veh_id: v.id,
            class: v.class,
            from_lane: v.lane,
            to_lane: target,
            last: false,
        });
    }

    fn initiate_mandatory(&mut self, t: f64) {
        let order: Vec<usize> = self
            .order
            .iter()
            .copied()
            .filter(|&i| {
                let v = &self.vehicles[i];
                v.mandatory_since.is_some() && v.lc_state == LcState::None && v.lane + 1 < self.road.lanes
            })
            .collect();
        for i in order {
            let target = self.vehicles[i].lane + 1;
            if self.gap_check(i, target).accepts(Urgency::Mandatory, &self.vehicles[i].params) {
                self.start_change(i, target, t);
            }
        }
    }

    fn target_allowed(&self, v: &VehicleState, target: LaneIndex) -> bool {
        if !self.blockage_active || target != self.road.incident_lane || v.pos >= self.road.incident_zone.1 {
            return true;
        }
        let near = self.road.incident_zone.0 - v.pos <= self.cfg.avoidance_distance;
        let advised = v.advisory_fired && !self.cfg.baseline_mode;
        !(near || advised)
    }

    fn initiate_discretionary(&mut self, t: f64) {
        for k in 0..self.order.len() {
            let i = self.order[k];
            let v = &self.vehicles[i];
            // Drivers reconsider their lane every few ticks, not every tick.
            if v.blockage
                || !(v.id + self.tick).is_multiple_of(DISCRETIONARY_PERIOD)
                || v.lc_state != LcState::None
                || v.mandatory_since.is_some()
                || t - v.last_change < CHANGE_COOLDOWN
            {
                continue;
            }
            let lane = v.lane;
            let current = self.achievable_speed(i, lane);
            if current >= v.desired_speed {
                continue;
            }
            let mut best: Option<(LaneIndex, f64)> = None;
            let candidates = [lane.checked_add(1).filter(|&l| l < self.road.lanes), lane.checked_sub(1)];
            for target in candidates.into_iter().flatten() {
                if !self.target_allowed(v, target) {
                    continue;
                }
                let speed = self.achievable_speed(i, target);
                if speed >= current + DISCRETIONARY_GAIN && best.is_none_or(|(_, s)| speed > s) {
                    best = Some((target, speed));
                }
            }
            if let Some((target, _)) = best {
                if self.gap_check(i, target).accepts(Urgency::Discretionary, &v.params) {
                    self.start_change(i, target, t);
                }
            }
        }
    }

    /// Relevant leaders of every vehicle: own lane, and target lane while
    /// changing.
    fn leaders(&self) -> Vec<[Option<usize>; 2]> {
        (0..self.vehicles.len())
            .map(|i| {
                let v = &self.vehicles[i];
                if v.blockage {
                    return [None, None];
                }
                [self.leader_in(v.lane, i), v.changing_to().and_then(|t| self.leader_in(t, i))]
            })
            .collect()
    }

    fn accelerations(&self, t: f64, leaders: &[[Option<usize>; 2]]) -> Vec<f64> {
        let mut accels: Vec<f64> = self
            .vehicles
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if v.blockage {
                    return 0.0;
                }
                match v.lc_state {
                    LcState::None => {
                        let own = car_following_accel(
                            v.speed,
                            leaders[i][0].map(|l| self.leader_view(i, l)),
                            &v.params,
                            v.desired_speed,
                        );
                        own.min(self.synchronizing_accel(i).unwrap_or(f64::INFINITY))
                    }
                    LcState::InProgress { .. } => {
                        let p = BehaviorParams { headway_time: v.params.headway_time * v.params.safety_reduction, ..v.params };
                        leaders[i]
                            .iter()
                            .map(|l| car_following_accel(v.speed, l.map(|l| self.leader_view(i, l)), &p, v.desired_speed))
                            .fold(f64::INFINITY, f64::min)
                    }
                }
            })
            .collect();

        // Followers in the target lane open a gap for long-waiting changers.
        for (i, v) in self.vehicles.iter().enumerate() {
            let waited = v.mandatory_since.is_some_and(|s| t - s > COOP_WAIT);
            if !waited || v.lc_state != LcState::None || v.lane + 1 >= self.road.lanes {
                continue;
            }
            let Some(f) = self.follower_in(v.lane + 1, i) else { continue };
            let fv = &self.vehicles[f];
            let gap = v.rear() - fv.pos;
            if fv.blockage || gap <= 0.0 {
                continue;
            }
            let a = idm_accel(fv.speed, Some(Leader { gap, speed: v.speed }), &fv.params, fv.desired_speed);
            let limit = fv.params.coop_brake_decel.min(fv.params.max_decel_own);
            if a >= -limit {
                accels[f] = accels[f].min(a);
            }
        }
        accels
    }

    /// A vehicle that must change lanes matches the speed of the next vehicle
    /// ahead in the target lane so that a gap can open beside it.
    fn synchronizing_accel(&self, i: usize) -> Option<f64> {
        let v = &self.vehicles[i];
        if v.mandatory_since.is_none() || v.lane + 1 >= self.road.lanes {
            return None;
        }
        let ghost = self.leader_view(i, self.leader_in(v.lane + 1, i)?);
        if ghost.gap <= 0.0 {
            return None;
        }
        let p = BehaviorParams { headway_time: v.params.headway_time * v.params.safety_reduction, ..v.params };
        Some(car_following_accel(v.speed, Some(ghost), &p, v.desired_speed))
    }

    fn integrate(&mut self, accels: &[f64], leaders: &[[Option<usize>; 2]]) {
        let dt = self.cfg.dt;
        for k in 0..self.order.len() {
            let i = self.order[k];
            if self.vehicles[i].blockage {
                continue;
            }
            let limit = leaders[i].iter().flatten().map(|&l| self.vehicles[l].rear()).fold(f64::INFINITY, f64::min);
            let v = &mut self.vehicles[i];
            v.prev_pos = v.pos;
            v.accel = accels[i];
            let mut speed = (v.speed + accels[i] * dt).clamp(0.0, MAX_SPEED);
            let mut pos = v.pos + speed * dt;
            if pos > limit {
                pos = limit.max(v.pos);
                speed = (pos - v.pos) / dt;
                self.position_clamps += 1;
            }
            v.speed = speed;
            v.pos = pos;
        }
    }

    fn progress_lane_changes(&mut self, t: f64) {
        let dt = self.cfg.dt;
        for v in &mut self.vehicles {
            if let LcState::InProgress { target, remaining } = v.lc_state {
                let remaining = remaining - dt;
                if remaining <= 1e-9 {
                    v.lane = target;
                    v.lc_state = LcState::None;
                    v.last_change = t + dt;
                } else {
                    v.lc_state = LcState::InProgress { target, remaining };
                }
            }
        }
    }

    fn draw_arrival(&mut self) -> Arrival {
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        let mut class = VehicleClass::Bus;
        for (c, share) in self.cfg.composition() {
            acc += share;
            if u < acc {
                class = c;
                break;
            }
        }
        let (lo, hi) = DESIRED_SPEED_RANGE;
        let desired_speed = self.rng.random_range(lo..hi);
        Arrival { class, desired_speed }
    }

    fn inject(&mut self, t1: f64) {
        if let Some(exp) = self.interarrival {
            while self.next_arrival <= t1 {
                let a = self.draw_arrival();
                self.latent.push_back(a);
                self.arrived += 1;
                self.next_arrival += exp.sample(&mut self.rng);
            }
        }
        if self.latent.is_empty() {
            return;
        }

        // Clear space ahead of x = 0 in every lane and the speed of the
        // vehicle bounding it.
        let mut room: Vec<(f64, f64)> = alloc::vec![(f64::INFINITY, 0.0); self.road.lanes];
        for v in &self.vehicles {
            let lanes = [Some(v.lane), v.changing_to()];
            for l in lanes.into_iter().flatten() {
                if v.rear() < room[l].0 {
                    room[l] = (v.rear(), v.speed);
                }
            }
        }

        let p = self.behavior;
        while let Some(&arrival) = self.latent.front() {
            let mut best: Option<LaneIndex> = None;
            for (l, &(gap, _)) in room.iter().enumerate() {
                if gap >= p.standstill && best.is_none_or(|b| gap > room[b].0) {
                    best = Some(l);
                }
            }
            let Some(lane) = best else { break };
            let (gap, leader_speed) = room[lane];
            let speed = if gap.is_infinite() {
                arrival.desired_speed
            } else {
                safe_speed(gap - p.standstill, leader_speed, p.max_decel_own, p.headway_time).min(arrival.desired_speed)
            };
            self.latent.pop_front();
            let id = self.next_id;
            self.next_id += 1;
            let v = self.make_vehicle(id, arrival.class, lane, 0.0, speed, arrival.desired_speed, t1);
            room[lane] = (-v.length, speed);
            self.log.entries.push(Entry { time: t1, veh_id: id, class: v.class, lane, desired_speed: v.desired_speed });
            self.vehicles.push(v);
        }
        self.log.max_latent_queue = self.log.max_latent_queue.max(self.latent.len());
    }

    fn record_exits(&mut self, t: f64, t1: f64) {
        let dt = t1 - t;
        let span = self.road.measurement_span;
        let line = self.road.discharge_line;
        for v in &self.vehicles {
            if v.blockage || v.pos <= v.prev_pos {
                continue;
            }
            let at = |x: f64| t + dt * (x - v.prev_pos) / (v.pos - v.prev_pos);
            if v.prev_pos < line && line <= v.pos {
                self.log.crossings.push(Crossing { time: at(line), line_pos: line, veh_id: v.id, class: v.class, lane: v.lane });
            }
            if v.prev_pos < span && span <= v.pos {
                self.log.trips.push(Trip {
                    veh_id: v.id,
                    class: v.class,
                    desired_speed: v.desired_speed,
                    entry_time: v.entered_at,
                    exit_time: at(span),
                    entry_lane: v.entry_lane,
                    exit_lane: v.lane,
                });
            }
        }
        let before = self.vehicles.len();
        let end = self.road.length;
        self.vehicles.retain(|v| v.blockage || v.pos < end);
        self.exited += (before - self.vehicles.len()) as u64;
    }

    fn violation(&self, t: f64, veh_id: u64, reason: &'static str) -> Result<(), SimError> {
        Err(SimError::IntegrityViolation { time: t, veh_id, reason })
    }

    fn check(&self, t: f64) -> Result<(), SimError> {
        for list in &self.lanes {
            for w in list.windows(2) {
                let (f, l) = (&self.vehicles[w[0].idx], &self.vehicles[w[1].idx]);
                if (f.passes_blockage && l.blockage) || (l.passes_blockage && f.blockage) {
                    continue;
                }
                if l.rear() < f.pos - 1e-9 {
                    return self.violation(t, f.id, "vehicles overlap");
                }
            }
        }
        if let Some(b) = self.blockage {
            for (i, v) in self.vehicles.iter().enumerate() {
                let lane = self.vehicles[b].lane;
                let in_lane = v.lane == lane || v.changing_to() == Some(lane);
                if i != b && in_lane && self.blocks(lane, i, b) && v.pos > self.vehicles[b].rear() + 1e-9 {
                    return self.violation(t, v.id, "vehicle inside the blockage");
                }
            }
        }
        if !self.cfg.check_invariants {
            return Ok(());
        }
        if self.arrived != self.exited + self.on_road() as u64 + self.latent.len() as u64 {
            return self.violation(t, 0, "vehicle count not conserved");
        }
        for v in &self.vehicles {
            if !(0.0..=self.road.length).contains(&v.pos) && !v.blockage {
                return self.violation(t, v.id, "position outside the road");
            }
            if !(0.0..=MAX_SPEED).contains(&v.speed) {
                return self.violation(t, v.id, "speed out of bounds");
            }
            if v.accel < -v.params.max_decel_own - 1e-9 || v.accel > v.params.accel_max + 1e-9 {
                return self.violation(t, v.id, "acceleration out of bounds");
            }
        }
        Ok(())
    }
}

/// Gipps safe speed: the fastest speed from which a driver reacting after
/// `tau` can still stop behind a leader that brakes at the same rate `b`.
pub fn safe_speed(clear: f64, leader_speed: f64, b: f64, tau: f64) -> f64 {
    let bt = b * tau;
    (-bt + libm::sqrt(bt * bt + leader_speed * leader_speed + 2.0 * b * clear.max(0.0))).max(0.0)
}

/// Runs one simulation to completion.
pub fn simulate<F: FnMut(&World<'_>)>(
    cfg: SimConfig,
    road: RoadConfig,
    behavior: BehaviorParams,
    table: Option<&BaseCaseTable>,
    observe: F,
) -> Result<EventLog, SimError> {
    World::new(cfg, road, behavior, table)?.run(observe)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> SimConfig {
        SimConfig { q_i: 0.0, baseline_mode: true, state_decimation: 0, check_invariants: true, ..SimConfig::default() }
    }

    fn world(cfg: SimConfig) -> World<'static> {
        World::new(cfg, RoadConfig::default(), BehaviorParams::default(), None).unwrap()
    }

    #[test]
    fn empty_world_stays_empty() {
        let mut w = world(quiet());
        for _ in 0..1000 {
            w.step().unwrap();
        }
        assert!(w.vehicles().is_empty());
        assert!((w.time() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn free_vehicle_crosses_span_at_desired_speed() {
        let mut w = world(quiet());
        let v0 = 31.29;
        w.spawn(VehicleClass::Car, 2, 0.0, v0, v0);
        while w.log().trips.is_empty() {
            w.step().unwrap();
        }
        let trip = w.log().trips[0];
        let expected = RoadConfig::default().measurement_span / v0;
        assert!((trip.travel_time() - expected).abs() <= 0.1, "{}", trip.travel_time());
    }

    #[test]
    fn blockage_schedule() {
        let mut w = world(SimConfig { gamma_i: 1800.0, ..quiet() });
        while w.time() < 3599.85 {
            w.step().unwrap();
        }
        assert!((w.time() - 3599.9).abs() < 1e-6);
        assert!(!w.blockage_active());
        w.step().unwrap();
        assert!(w.blockage_active());
        let b = w.vehicles().iter().find(|v| v.is_blockage()).unwrap().clone();
        assert!((b.length - 60.96).abs() < 1e-9);
        while w.time() < 5399.85 {
            w.step().unwrap();
            let now = w.vehicles().iter().find(|v| v.is_blockage()).unwrap();
            assert_eq!(now.pos, b.pos);
        }
        w.step().unwrap();
        assert!(!w.blockage_active());
        assert!(w.vehicles().iter().all(|v| !v.is_blockage()));
    }

    #[test]
    fn blockage_is_never_driven_through() {
        let mut w = world(SimConfig { incident_start: 0.0, gamma_i: 600.0, ..quiet() });
        let (zs, ze) = RoadConfig::default().incident_zone;
        w.spawn(VehicleClass::Car, 1, 5000.0, 25.0, 25.0);
        w.spawn(VehicleClass::Hgv, 0, 5000.0, 25.0, 25.0);
        w.spawn(VehicleClass::Car, 1, 4990.0, 25.0, 25.0);
        for _ in 0..1000 {
            w.step().unwrap();
            for v in w.vehicles().iter().filter(|v| !v.is_blockage()) {
                if v.lane == 0 || v.changing_to() == Some(0) {
                    assert!(v.pos <= zs || v.rear() >= ze, "vehicle {} at {}", v.id, v.pos);
                }
            }
        }
        assert_eq!(w.exited(), 3);
    }

    #[test]
    fn poisson_injection_count() {
        let cfg = SimConfig { q_i: 7200.0, ..quiet() };
        let mut w = world(SimConfig { gamma_i: 0.0, ..cfg });
        while w.time() < 3600.0 - 1e-6 {
            w.step().unwrap();
        }
        let n = w.arrived() as f64;
        assert!((n - 7200.0).abs() <= 3.0 * 7200f64.sqrt(), "{n}");
        assert_eq!(w.arrived(), w.exited() + w.on_road() as u64 + w.latent_len() as u64);
    }

    #[test]
    fn class_shares_follow_composition() {
        let mut w = world(SimConfig { q_i: 8000.0, r: 0.7, gamma_i: 0.0, ..quiet() });
        let draws: Vec<VehicleClass> = (0..20_000).map(|_| w.draw_arrival().class).collect();
        let share = |c| draws.iter().filter(|&&d| d == c).count() as f64 / draws.len() as f64;
        for (c, expected) in w.config().composition() {
            assert!((share(c) - expected).abs() < 0.015, "{c}: {}", share(c));
        }
    }

    #[test]
    fn missing_table_is_an_error() {
        let cfg = SimConfig { baseline_mode: false, ..quiet() };
        let err = World::new(cfg, RoadConfig::default(), BehaviorParams::default(), None).err();
        assert_eq!(err, Some(SimError::MissingTable));
    }
}
