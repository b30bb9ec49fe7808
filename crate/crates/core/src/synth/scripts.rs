//! The six scenario families used to render synthetic collision clips, expanded
//! into concrete scripts by enumerating every listed speed and every value of
//! each parameter range.
//!
//! Ranges `(a, b, s)` are half-open like Python's `range`: `a, a+s, ...` below `b`.

use super::kinematics::{Phase, ScenarioScript, Until};

/// Lateral offset at which a vehicle is fully in the adjacent lane, meters.
pub const LANE_WIDTH: f64 = 3.5;

/// Gap at which lane changes and braking maneuvers give up, meters.
const ABORT_GAP: f64 = 5.0;

/// Script id layout: `family * 10_000 + variant`.
pub const FAMILY_STRIDE: u32 = 10_000;

pub const FAMILIES: [u32; 6] = [1, 2, 3, 4, 5, 6];

pub fn param_range(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step - 1e-9).ceil().max(0.0) as usize;
    (0..n).map(|i| start + i as f64 * step).collect()
}

fn brake_to_match(v_ego: f64, y0: f64) -> (f64, f64, Vec<Phase>) {
    let phases = vec![
        Phase { target_accel: -3.0, ..Phase::hold(Until::Duration(3.0)) },
        Phase { ego_accel: -4.0, target_accel: -3.0, ..Phase::hold(Until::SpeedsMatch) },
        Phase { ego_accel: -3.0, target_accel: -3.0, ..Phase::hold(Until::Never) },
    ];
    (v_ego, y0, phases)
}

/// All concrete scripts of one family, in a fixed enumeration order.
pub fn family_scripts(family: u32) -> Vec<ScenarioScript> {
    let mut out = Vec::new();
    let mut push = |v_ego: f64, v_target: f64, y0: f64, lateral0: f64, phases: Vec<Phase>| {
        let id = family * FAMILY_STRIDE + out.len() as u32;
        out.push(ScenarioScript { id, v_ego0: v_ego, v_target0: v_target, y0, lateral0, phases });
    };
    match family {
        // Target brakes; after 3 s ego brakes until speeds match.
        1 => {
            for v in [40.0, 60.0, 80.0] {
                let (v, y0, phases) = brake_to_match(v, 50.0);
                push(v, v, y0, 0.0, phases);
            }
        }
        // Ego overtakes a slower target with a lane change.
        2 => {
            for v in [40.0, 60.0, 80.0] {
                for d in param_range(10.0, 50.0, 5.0) {
                    push(
                        v,
                        v - 20.0,
                        65.0,
                        0.0,
                        vec![
                            Phase::hold(Until::DistanceBelow(d)),
                            Phase {
                                lateral_rate: 2.0,
                                lateral_limit: Some(LANE_WIDTH),
                                ..Phase::hold(Until::Never)
                            },
                        ],
                    );
                }
            }
        }
        // Ego accelerates; a slow target cuts in while ego brakes.
        3 => {
            for v_ego in [60.0, 80.0] {
                for v_target in [20.0, 40.0] {
                    for a in param_range(0.5, 3.0, 0.5) {
                        for d in param_range(10.0, 50.0, 5.0) {
                            push(
                                v_ego,
                                v_target,
                                65.0,
                                LANE_WIDTH,
                                vec![
                                    Phase { ego_accel: a, ..Phase::hold(Until::DistanceBelow(d)) },
                                    Phase {
                                        ego_accel: -4.0,
                                        lateral_rate: -2.0,
                                        lateral_limit: Some(0.0),
                                        ..Phase::hold(Until::SpeedsMatch)
                                    },
                                    Phase::hold(Until::Never),
                                ],
                            );
                        }
                    }
                }
            }
        }
        4 => {
            for v in [60.0, 80.0] {
                let (v, y0, phases) = brake_to_match(v, 65.0);
                push(v, 60.0, y0, 0.0, phases);
            }
        }
        // Target accelerates away; ego changes lanes at a given gap.
        5 => {
            for v_ego in [40.0, 60.0] {
                for v_target in [20.0, 30.0] {
                    for a in param_range(0.5, 3.0, 0.5) {
                        for d in param_range(20.0, 60.0, 4.0) {
                            for lat in param_range(0.5, 1.5, 0.2) {
                                push(
                                    v_ego,
                                    v_target,
                                    65.0,
                                    0.0,
                                    vec![
                                        Phase { target_accel: a, ..Phase::hold(Until::DistanceBelow(d)) },
                                        Phase {
                                            target_accel: a,
                                            lateral_rate: lat,
                                            lateral_limit: Some(LANE_WIDTH),
                                            ..Phase::hold(Until::Any(vec![
                                                Until::LateralReached,
                                                Until::DistanceBelow(ABORT_GAP),
                                            ]))
                                        },
                                        Phase { target_accel: a, ..Phase::hold(Until::Never) },
                                    ],
                                );
                            }
                        }
                    }
                }
            }
        }
        // Target accelerates from well below ego speed; ego brakes at a given gap.
        6 => {
            for v_ego in [40.0, 60.0, 80.0] {
                for a in param_range(0.5, 3.0, 0.5) {
                    for d in param_range(10.0, 50.0, 4.0) {
                        for brake in param_range(1.0, 4.0, 0.5) {
                            push(
                                v_ego,
                                v_ego - 30.0,
                                65.0,
                                0.0,
                                vec![
                                    Phase { target_accel: a, ..Phase::hold(Until::DistanceBelow(d)) },
                                    Phase {
                                        ego_accel: -brake,
                                        target_accel: a,
                                        ..Phase::hold(Until::Any(vec![
                                            Until::SpeedsMatch,
                                            Until::DistanceBelow(ABORT_GAP),
                                        ]))
                                    },
                                    Phase { ego_accel: a, target_accel: a, ..Phase::hold(Until::Never) },
                                ],
                            );
                        }
                    }
                }
            }
        }
        _ => {}
    }
    out
}

/// Scripts of the selected families, concatenated in the given order.
pub fn expand_families(families: &[u32]) -> Vec<ScenarioScript> {
    families.iter().flat_map(|&f| family_scripts(f)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::kinematics::run_script;

    #[test]
    fn ranges_are_half_open() {
        assert_eq!(param_range(10.0, 50.0, 5.0).len(), 8);
        assert_eq!(param_range(0.5, 3.0, 0.5), vec![0.5, 1.0, 1.5, 2.0, 2.5]);
        assert_eq!(param_range(20.0, 60.0, 4.0).len(), 10);
        assert_eq!(param_range(0.5, 1.5, 0.2).len(), 5);
        assert_eq!(param_range(1.0, 4.0, 0.5).len(), 6);
    }

    #[test]
    fn family_sizes() {
        let sizes: Vec<usize> = FAMILIES.iter().map(|&f| family_scripts(f).len()).collect();
        assert_eq!(sizes, vec![3, 24, 160, 2, 1000, 900]);
        assert!(family_scripts(7).is_empty());
    }

    #[test]
    fn ids_are_unique_and_family_tagged() {
        let all = expand_families(&FAMILIES);
        let mut ids: Vec<u32> = all.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), all.len());
        assert!(all.iter().all(|s| (1..=6).contains(&(s.id / FAMILY_STRIDE))));
    }

    #[test]
    fn every_script_integrates_with_positive_gaps() {
        for s in expand_families(&FAMILIES).iter().step_by(7) {
            let tr = run_script(s, 10.0, 20.0);
            assert!(!tr.samples.is_empty());
            assert!(tr.samples.iter().all(|k| k.y > 0.0 && k.v_ego >= 0.0 && k.v_target >= 0.0));
        }
    }
}
