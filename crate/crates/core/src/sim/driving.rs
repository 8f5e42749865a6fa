//! Longitudinal control and gap acceptance.

use libm::sqrt;

use super::config::BehaviorParams;
use crate::prob::{critical_gap, CRITICAL_GAP_STANDSTILL, CRITICAL_GAP_TIME};

/// Clear gap to a leader and the leader's speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    pub gap: f64,
    pub speed: f64,
}

/// Unclamped car-following acceleration.
///
/// Intelligent-driver law with the standstill distance as jam gap, the
/// headway time as desired time gap and the accepted own deceleration as
/// comfortable braking.
pub fn idm_accel(speed: f64, leader: Option<Leader>, p: &BehaviorParams, desired_speed: f64) -> f64 {
    let r = speed / desired_speed.max(0.1);
    let free = 1.0 - (r * r) * (r * r);
    let Some(l) = leader else {
        return p.accel_max * free;
    };
    if l.gap <= 0.0 {
        return -p.max_decel_own;
    }
    let dv = speed - l.speed;
    let dynamic = speed * p.headway_time + speed * dv / (2.0 * sqrt(p.accel_max * p.accepted_decel_own));
    let s_star = p.standstill + dynamic.max(0.0);
    let ratio = s_star / l.gap;
    p.accel_max * (free - ratio * ratio)
}

/// Car-following acceleration clamped to `[-max_decel_own, accel_max]`.
///
/// A vehicle with a stopped leader no further than the standstill distance
/// ahead brakes to a halt.
pub fn car_following_accel(speed: f64, leader: Option<Leader>, p: &BehaviorParams, desired_speed: f64) -> f64 {
    if let Some(l) = leader {
        if l.speed <= 0.0 && l.gap <= p.standstill {
            return if speed > 0.0 { -p.max_decel_own } else { 0.0 };
        }
    }
    idm_accel(speed, leader, p, desired_speed).clamp(-p.max_decel_own, p.accel_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Urgency {
    Discretionary,
    Mandatory,
}

/// Everything gap acceptance needs about a candidate slot in the target
/// lane. Missing neighbours are infinite gaps with zero required braking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapCheck {
    pub ego_speed: f64,
    /// Clear gap from the ego front to the target-lane leader's rear.
    pub lead_gap: f64,
    /// Clear gap from the ego rear to the target-lane follower's front.
    pub lag_gap: f64,
    /// Clear gap between target-lane leader and follower.
    pub total_gap: f64,
    pub own_required_decel: f64,
    pub follower_required_decel: f64,
}

impl GapCheck {
    pub fn empty_lane(ego_speed: f64) -> Self {
        GapCheck {
            ego_speed,
            lead_gap: f64::INFINITY,
            lag_gap: f64::INFINITY,
            total_gap: f64::INFINITY,
            own_required_decel: 0.0,
            follower_required_decel: 0.0,
        }
    }

    /// Builds the check from the target-lane neighbours of an ego vehicle.
    pub fn assess(
        ego_speed: f64,
        ego_length: f64,
        ego_params: &BehaviorParams,
        ego_desired: f64,
        lead: Option<Leader>,
        lag: Option<Follower>,
    ) -> Self {
        let mut check = GapCheck::empty_lane(ego_speed);
        if let Some(l) = lead {
            check.lead_gap = l.gap;
            check.own_required_decel = (-idm_accel(ego_speed, Some(l), ego_params, ego_desired)).max(0.0);
        }
        if let Some(f) = lag {
            check.lag_gap = f.gap;
            let as_leader = Leader { gap: f.gap, speed: ego_speed };
            check.follower_required_decel = (-idm_accel(f.speed, Some(as_leader), &f.params, f.desired_speed)).max(0.0);
        }
        check.total_gap = check.lead_gap + ego_length + check.lag_gap;
        check
    }

    /// Gipps-style acceptance. All bounds are closed.
    pub fn accepts(&self, urgency: Urgency, p: &BehaviorParams) -> bool {
        let (own_limit, trail_limit) = match urgency {
            Urgency::Discretionary => (p.accepted_decel_own, p.accepted_decel_trail),
            Urgency::Mandatory => (p.max_decel_own, p.max_decel_trail),
        };
        let min_lead = p.standstill + p.safety_reduction * p.headway_time * self.ego_speed;
        self.lag_gap >= 0.0
            && self.total_gap >= critical_gap(self.ego_speed, CRITICAL_GAP_TIME, CRITICAL_GAP_STANDSTILL)
            && self.lead_gap >= min_lead
            && self.follower_required_decel <= trail_limit
            && self.own_required_decel <= own_limit
    }
}

/// Target-lane follower as seen by a vehicle that wants to cut in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Follower {
    pub gap: f64,
    pub speed: f64,
    pub desired_speed: f64,
    pub params: BehaviorParams,
}

#[cfg(test)]
mod tests {
    use super::*;
    use libm::pow;

    fn p() -> BehaviorParams {
        BehaviorParams::default()
    }

    #[test]
    fn free_road_equilibrium() {
        let a = car_following_accel(31.0, None, &p(), 31.0);
        assert!(a.abs() < 0.01);
        assert!((car_following_accel(0.0, None, &p(), 31.0) - p().accel_max).abs() < 1e-12);
    }

    #[test]
    fn standstill_equilibrium() {
        let l = Leader { gap: p().standstill, speed: 0.0 };
        assert_eq!(car_following_accel(0.0, Some(l), &p(), 30.0), 0.0);
        assert_eq!(car_following_accel(2.0, Some(l), &p(), 30.0), -p().max_decel_own);
    }

    #[test]
    fn desired_gap_closed_form() {
        let v0 = 33.0;
        let gap = p().standstill + 0.9 * 30.0;
        let a = car_following_accel(30.0, Some(Leader { gap, speed: 30.0 }), &p(), v0);
        let expected = p().accel_max * (1.0 - pow(30.0 / v0, 4.0) - 1.0);
        assert!((a - expected).abs() < 1e-12);
    }

    #[test]
    fn clamped_to_limits() {
        let a = car_following_accel(30.0, Some(Leader { gap: 2.0, speed: 0.0 }), &p(), 33.0);
        assert_eq!(a, -p().max_decel_own);
        let a = car_following_accel(30.0, Some(Leader { gap: -1.0, speed: 30.0 }), &p(), 33.0);
        assert_eq!(a, -p().max_decel_own);
    }

    #[test]
    fn empty_target_lane_accepts() {
        let check = GapCheck::assess(30.0, 4.75, &p(), 33.0, None, None);
        assert!(check.accepts(Urgency::Discretionary, &p()));
        assert!(check.accepts(Urgency::Mandatory, &p()));
    }

    #[test]
    fn closing_follower_rejects() {
        let f = Follower { gap: 1.0, speed: 30.0, desired_speed: 33.0, params: p() };
        let check = GapCheck::assess(20.0, 4.75, &p(), 33.0, None, Some(f));
        assert!(!check.accepts(Urgency::Discretionary, &p()));
        assert!(!check.accepts(Urgency::Mandatory, &p()));
    }

    #[test]
    fn boundary_case_is_accepted() {
        let bp = p();
        let v = 20.0;
        let crit = critical_gap(v, 1.6, 1.0);
        let lead = bp.standstill + bp.safety_reduction * bp.headway_time * v;
        let check = GapCheck {
            ego_speed: v,
            lead_gap: lead,
            lag_gap: crit - lead - 4.75,
            total_gap: crit,
            own_required_decel: bp.accepted_decel_own,
            follower_required_decel: bp.accepted_decel_trail,
        };
        assert!(check.lag_gap > 0.0);
        assert!(check.accepts(Urgency::Discretionary, &bp));
        let tighter = GapCheck { total_gap: crit - 1e-9, ..check };
        assert!(!tighter.accepts(Urgency::Discretionary, &bp));
        let harder = GapCheck { follower_required_decel: bp.accepted_decel_trail + 1e-9, ..check };
        assert!(!harder.accepts(Urgency::Discretionary, &bp));
        assert!(harder.accepts(Urgency::Mandatory, &bp));
        let at_max = GapCheck { own_required_decel: bp.max_decel_own, follower_required_decel: bp.max_decel_trail, ..check };
        assert!(at_max.accepts(Urgency::Mandatory, &bp));
    }

    #[test]
    fn short_lead_gap_rejects() {
        let leader = Leader { gap: 1.0, speed: 30.0 };
        let check = GapCheck::assess(30.0, 4.75, &p(), 33.0, Some(leader), None);
        assert!(!check.accepts(Urgency::Mandatory, &p()));
    }
}
