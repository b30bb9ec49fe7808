//! Scripted straight-lane kinematics for an ego vehicle and one target.
//!
//! Each phase holds constant accelerations until its trigger fires. Inside a
//! phase the motion is integrated in closed form, splitting at the instants a
//! vehicle comes to rest, a lateral maneuver completes, a trigger fires or the
//! target reaches the camera plane.

use serde::{Deserialize, Serialize};

const KMH: f64 = 1.0 / 3.6;
const TIME_EPS: f64 = 1e-12;

/// Condition that ends a phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Until {
    /// Seconds after the phase started.
    Duration(f64),
    /// Longitudinal gap at or below this many meters.
    DistanceBelow(f64),
    /// Ego and target speeds are equal.
    SpeedsMatch,
    /// The phase's lateral limit has been reached.
    LateralReached,
    Any(Vec<Until>),
    Never,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub until: Until,
    /// m/s^2
    pub ego_accel: f64,
    /// m/s^2
    pub target_accel: f64,
    /// Rate of change of the target's lateral offset relative to ego, m/s.
    pub lateral_rate: f64,
    /// Lateral motion stops once the offset reaches this value.
    pub lateral_limit: Option<f64>,
}

impl Phase {
    pub fn hold(until: Until) -> Self {
        Self { until, ego_accel: 0.0, target_accel: 0.0, lateral_rate: 0.0, lateral_limit: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub id: u32,
    /// Initial ego speed, km/h.
    pub v_ego0: f64,
    /// Initial target speed, km/h.
    pub v_target0: f64,
    /// Initial longitudinal gap, meters.
    pub y0: f64,
    /// Initial lateral offset of the target relative to ego, meters.
    #[serde(default)]
    pub lateral0: f64,
    pub phases: Vec<Phase>,
}

impl ScenarioScript {
    /// Both vehicles at constant speed with the given closing rate in m/s.
    pub fn constant_closing(id: u32, y0: f64, closing_rate: f64) -> Self {
        // Ego must outrun the closing rate, or the target would need a
        // negative speed, which the integrator clamps to zero.
        let base = f64::max(60.0, closing_rate / KMH);
        Self {
            id,
            v_ego0: base,
            v_target0: base - closing_rate / KMH,
            y0,
            lateral0: 0.0,
            phases: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicSample {
    pub t: f64,
    /// Longitudinal gap, meters.
    pub y: f64,
    /// `v_ego - v_target`, m/s. Positive when approaching.
    pub closing_rate: f64,
    pub lateral_x: f64,
    pub v_ego: f64,
    pub v_target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub fps: f64,
    pub samples: Vec<KinematicSample>,
    /// Time the gap reached zero, if it did within the horizon.
    pub contact_time: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct State {
    t: f64,
    y: f64,
    v_ego: f64,
    v_target: f64,
    lateral: f64,
}

impl State {
    fn sample(&self) -> KinematicSample {
        KinematicSample {
            t: self.t,
            y: self.y,
            closing_rate: self.v_ego - self.v_target,
            lateral_x: self.lateral,
            v_ego: self.v_ego,
            v_target: self.v_target,
        }
    }
}

struct Integrator<'a> {
    phases: &'a [Phase],
    phase: usize,
    elapsed: f64,
    state: State,
    idle: Phase,
}

enum Step {
    Continue,
    Contact,
}

impl<'a> Integrator<'a> {
    fn current(&self) -> &Phase {
        self.phases.get(self.phase).unwrap_or(&self.idle)
    }

    fn effective_accels(&self) -> (f64, f64) {
        let p = self.current();
        let a_e = if self.state.v_ego <= 0.0 && p.ego_accel < 0.0 { 0.0 } else { p.ego_accel };
        let a_t = if self.state.v_target <= 0.0 && p.target_accel < 0.0 { 0.0 } else { p.target_accel };
        (a_e, a_t)
    }

    fn lateral_active(&self) -> bool {
        let p = self.current();
        match p.lateral_limit {
            _ if p.lateral_rate == 0.0 => false,
            Some(limit) => (limit - self.state.lateral) * p.lateral_rate > 0.0,
            None => true,
        }
    }

    fn advance_to(&mut self, t_end: f64) -> Step {
        let mut guard = 0usize;
        while self.state.t < t_end {
            guard += 1;
            assert!(guard < 100_000, "kinematic integration failed to progress");
            let (a_e, a_t) = self.effective_accels();
            let s = self.state;
            let mut dt = t_end - s.t;

            if a_e < 0.0 && s.v_ego > 0.0 {
                dt = dt.min(s.v_ego / -a_e);
            }
            if a_t < 0.0 && s.v_target > 0.0 {
                dt = dt.min(s.v_target / -a_t);
            }
            let lateral_active = self.lateral_active();
            let p = self.current().clone();
            if lateral_active {
                if let Some(limit) = p.lateral_limit {
                    dt = dt.min((limit - s.lateral) / p.lateral_rate);
                }
            }
            let rel_v = s.v_target - s.v_ego;
            let rel_a = a_t - a_e;
            let trigger = trigger_time(&p.until, &s, self.elapsed, rel_v, rel_a, lateral_active, &p);
            let contact = earliest_root(0.5 * rel_a, rel_v, s.y, dt);

            let mut hit = false;
            if let Some(tc) = contact {
                if tc <= dt {
                    dt = tc;
                    hit = true;
                }
            }
            let mut fired = false;
            if let Some(tt) = trigger {
                if tt < dt || (!hit && tt <= dt) {
                    dt = tt;
                    fired = true;
                    hit = false;
                }
            }

            let st = &mut self.state;
            st.y += rel_v * dt + 0.5 * rel_a * dt * dt;
            st.v_ego = (st.v_ego + a_e * dt).max(0.0);
            st.v_target = (st.v_target + a_t * dt).max(0.0);
            if lateral_active {
                st.lateral += p.lateral_rate * dt;
                if let Some(limit) = p.lateral_limit {
                    if (limit - st.lateral) * p.lateral_rate <= TIME_EPS {
                        st.lateral = limit;
                    }
                }
            }
            st.t += dt;
            self.elapsed += dt;

            if hit {
                st.y = 0.0;
                return Step::Contact;
            }
            if fired {
                self.phase += 1;
                self.elapsed = 0.0;
            }
        }
        self.state.t = t_end;
        Step::Continue
    }
}

/// Earliest time in `[0, limit]` at which `until` holds, assuming the current
/// accelerations stay in effect.
fn trigger_time(
    until: &Until,
    s: &State,
    elapsed: f64,
    rel_v: f64,
    rel_a: f64,
    lateral_active: bool,
    phase: &Phase,
) -> Option<f64> {
    match until {
        Until::Never => None,
        Until::Duration(d) => Some((d - elapsed).max(0.0)),
        Until::DistanceBelow(d) => {
            if s.y <= *d {
                Some(0.0)
            } else {
                earliest_root(0.5 * rel_a, rel_v, s.y - d, f64::INFINITY)
            }
        }
        Until::SpeedsMatch => {
            // closing rate c(t) = -rel_v - rel_a t
            let c = -rel_v;
            if c.abs() <= 1e-12 {
                Some(0.0)
            } else if rel_a != 0.0 {
                let root = c / rel_a;
                (root >= 0.0).then_some(root)
            } else {
                None
            }
        }
        Until::LateralReached => {
            if phase.lateral_limit.is_none() {
                None
            } else if !lateral_active {
                Some(0.0)
            } else {
                let limit = phase.lateral_limit.unwrap_or(s.lateral);
                Some((limit - s.lateral) / phase.lateral_rate)
            }
        }
        Until::Any(conds) => conds
            .iter()
            .filter_map(|u| trigger_time(u, s, elapsed, rel_v, rel_a, lateral_active, phase))
            .min_by(|a, b| a.total_cmp(b)),
    }
}

/// Smallest `t` in `(0, limit]` with `a t^2 + b t + c = 0`, for `c > 0`.
fn earliest_root(a: f64, b: f64, c: f64, limit: f64) -> Option<f64> {
    if c <= 0.0 {
        return Some(0.0);
    }
    let mut best: Option<f64> = None;
    let mut consider = |t: f64| {
        if t.is_finite() && t > 0.0 && t <= limit && best.map_or(true, |b| t < b) {
            best = Some(t);
        }
    };
    if a.abs() < 1e-15 {
        if b != 0.0 {
            consider(-c / b);
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            let q = -0.5 * (b + b.signum() * sq);
            if q != 0.0 {
                consider(q / a);
                consider(c / q);
            } else {
                consider((-b + sq) / (2.0 * a));
                consider((-b - sq) / (2.0 * a));
            }
        }
    }
    best
}

/// Samples the script at `fps` over `[0, horizon]`. Stops early when the
/// target reaches the camera plane; every emitted sample has `y > 0`.
pub fn run_script(script: &ScenarioScript, fps: f64, horizon: f64) -> Trajectory {
    let mut integ = Integrator {
        phases: &script.phases,
        phase: 0,
        elapsed: 0.0,
        state: State {
            t: 0.0,
            y: script.y0,
            v_ego: script.v_ego0 * KMH,
            v_target: script.v_target0 * KMH,
            lateral: script.lateral0,
        },
        idle: Phase::hold(Until::Never),
    };
    let mut samples = Vec::new();
    let mut contact_time = None;
    if script.y0 > 0.0 {
        samples.push(integ.state.sample());
        let mut k = 1u64;
        loop {
            let t = k as f64 / fps;
            if t > horizon + 1e-9 {
                break;
            }
            match integ.advance_to(t) {
                Step::Contact => {
                    contact_time = Some(integ.state.t);
                    break;
                }
                Step::Continue => {
                    if integ.state.y <= 0.0 {
                        contact_time = Some(t);
                        break;
                    }
                    samples.push(integ.state.sample());
                }
            }
            k += 1;
        }
    }
    Trajectory { fps, samples, contact_time }
}
