//! Maps task primitives onto the native discrete action set.
//!
//! Camera geometry lives here too: a strict nadir pinhole over flat ground
//! at `z_ground`, image-up aligned with the UAV heading.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::image::PixelPoint;
use crate::planner::WaypointPlan;
use crate::scene::{normalize_angle, CameraModel, Pose};

/// High-level command issued after verification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaskPrimitive {
    Stop { target: PixelPoint },
    Move,
    Ascend,
    Descend,
}

/// The simulator's native action set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LowLevelAction {
    MoveForward,
    TurnLeft,
    TurnRight,
    Ascend,
    Descend,
    Stop,
}

impl LowLevelAction {
    pub const ALL: [LowLevelAction; 6] = [
        LowLevelAction::MoveForward,
        LowLevelAction::TurnLeft,
        LowLevelAction::TurnRight,
        LowLevelAction::Ascend,
        LowLevelAction::Descend,
        LowLevelAction::Stop,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutorParams {
    pub forward_step: f64,
    pub turn_step: f64,
    pub vstep: f64,
    pub delta_z: f64,
    pub goal_tolerance: f64,
    /// Tolerance used when approaching a confirmed target.
    pub stop_tolerance: f64,
}

impl Default for ExecutorParams {
    fn default() -> Self {
        Self {
            forward_step: 5.0,
            turn_step: PI / 12.0,
            vstep: 2.0,
            delta_z: 10.0,
            goal_tolerance: 2.0,
            stop_tolerance: 0.5,
        }
    }
}

impl ExecutorParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("forward_step", self.forward_step),
            ("turn_step", self.turn_step),
            ("vstep", self.vstep),
            ("delta_z", self.delta_z),
            ("goal_tolerance", self.goal_tolerance),
            ("stop_tolerance", self.stop_tolerance),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        if self.turn_step > PI {
            return Err(Error::param("turn_step", "must not exceed π"));
        }
        let ratio = self.delta_z / self.vstep;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::param(
                "delta_z",
                "must be a whole multiple of vstep so altitude changes are exact",
            ));
        }
        Ok(())
    }

    fn vertical_steps(&self) -> usize {
        (self.delta_z / self.vstep).round() as usize
    }
}

fn height(pose: &Pose, camera: &CameraModel) -> Result<f64> {
    let h = pose.z - camera.z_ground;
    if h > 0.0 {
        Ok(h)
    } else {
        Err(Error::NonPositiveAltitude {
            z: pose.z,
            z_ground: camera.z_ground,
        })
    }
}

/// Ground point imaged at `pixel`.
pub fn unproject(pixel: PixelPoint, pose: &Pose, camera: &CameraModel) -> Result<Point2> {
    let h = height(pose, camera)?;
    let f = camera.focal();
    let (cx, cy) = camera.principal();
    let right = (pixel.u - cx) * h / f;
    let forward = (cy - pixel.v) * h / f;
    let (s, c) = pose.theta.sin_cos();
    Ok(Point2::new(
        pose.x + right * c + forward * s,
        pose.y - right * s + forward * c,
    ))
}

/// Pixel at which a ground point is imaged. Points outside the frame map to
/// out-of-range pixels; callers filter.
pub fn project_world(world: Point2, pose: &Pose, camera: &CameraModel) -> Result<PixelPoint> {
    let h = height(pose, camera)?;
    let f = camera.focal();
    let (cx, cy) = camera.principal();
    let (dx, dy) = (world.x - pose.x, world.y - pose.y);
    let (s, c) = pose.theta.sin_cos();
    let right = dx * c - dy * s;
    let forward = dx * s + dy * c;
    Ok(PixelPoint::new(cx + right * f / h, cy - forward * f / h))
}

pub fn in_frame(p: PixelPoint, camera: &CameraModel) -> bool {
    p.u >= 0.0 && p.v >= 0.0 && p.u <= camera.width as f64 && p.v <= camera.height as f64
}

/// Pose after one action, without any environment clamping.
pub fn apply_action(pose: &Pose, action: LowLevelAction, params: &ExecutorParams) -> Pose {
    let mut p = *pose;
    match action {
        LowLevelAction::MoveForward => {
            let (s, c) = p.theta.sin_cos();
            p.x += params.forward_step * s;
            p.y += params.forward_step * c;
        }
        LowLevelAction::TurnLeft => p.theta = normalize_angle(p.theta - params.turn_step),
        LowLevelAction::TurnRight => p.theta = normalize_angle(p.theta + params.turn_step),
        LowLevelAction::Ascend => p.z += params.vstep,
        LowLevelAction::Descend => p.z -= params.vstep,
        LowLevelAction::Stop => {}
    }
    p
}

/// Angle wrapped into `(-π, π]`.
fn wrap_pi(a: f64) -> f64 {
    let w = normalize_angle(a);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

struct Walker<'a> {
    params: &'a ExecutorParams,
    pose: Pose,
    actions: Vec<LowLevelAction>,
}

impl Walker<'_> {
    fn push(&mut self, a: LowLevelAction) {
        self.pose = apply_action(&self.pose, a, self.params);
        self.actions.push(a);
    }

    fn turn(&mut self, k: i64) {
        let a = if k > 0 {
            LowLevelAction::TurnRight
        } else {
            LowLevelAction::TurnLeft
        };
        for _ in 0..k.unsigned_abs() {
            self.push(a);
        }
    }

    /// Horizontal position after turning `k` steps then moving forward.
    fn probe(&self, from: Point2, theta: f64, k: i64) -> (Point2, f64) {
        let heading = theta + k as f64 * self.params.turn_step;
        let (s, c) = heading.sin_cos();
        (
            Point2::new(
                from.x + self.params.forward_step * s,
                from.y + self.params.forward_step * c,
            ),
            heading,
        )
    }
}

/// Reachable relative turn counts, right-first on ties in magnitude.
fn turn_options(params: &ExecutorParams) -> Vec<i64> {
    let kmax = (PI / params.turn_step + 1e-9).floor() as i64;
    let mut ks = vec![0];
    for k in 1..=kmax {
        ks.push(k);
        ks.push(-k);
    }
    ks
}

/// Flies toward `target` at altitude `target_z` and stops refining once
/// within `params.goal_tolerance`.
pub fn goto(pose: &Pose, target: Point2, target_z: f64, params: &ExecutorParams) -> (Vec<LowLevelAction>, Pose) {
    goto_within(pose, target, target_z, params, params.goal_tolerance)
}

/// Altitude first, then heading-quantized horizontal flight. Every forward
/// move (or forward pair) strictly reduces the distance to the target, and
/// refinement ends once within `tolerance` or when no one- or two-step
/// manoeuvre gets closer.
pub fn goto_within(
    pose: &Pose,
    target: Point2,
    target_z: f64,
    params: &ExecutorParams,
    tolerance: f64,
) -> (Vec<LowLevelAction>, Pose) {
    let mut w = Walker {
        params,
        pose: *pose,
        actions: Vec::new(),
    };
    let dz = target_z - pose.z;
    if dz.abs() > 1e-9 {
        let n = (dz.abs() / params.vstep - 1e-9).ceil() as usize;
        let a = if dz > 0.0 {
            LowLevelAction::Ascend
        } else {
            LowLevelAction::Descend
        };
        for _ in 0..n {
            w.push(a);
        }
    }

    let options = turn_options(params);
    let d0 = w.pose.position().distance(&target);
    let cap = 4 * (d0 / params.forward_step).ceil() as usize + 64;
    for _ in 0..cap {
        let here = w.pose.position();
        let d = here.distance(&target);
        if d <= tolerance {
            break;
        }
        let theta = w.pose.theta;
        let delta = wrap_pi((target.x - here.x).atan2(target.y - here.y) - theta);
        // hold the current heading while it stays close to the bearing
        let preferred = if delta.abs() < 0.75 * params.turn_step {
            0
        } else {
            (delta / params.turn_step).round() as i64
        };
        if w.probe(here, theta, preferred).0.distance(&target) < d - 1e-9 {
            w.turn(preferred);
            w.push(LowLevelAction::MoveForward);
            continue;
        }

        let mut best: Option<(f64, i64)> = None;
        for &k in &options {
            let dist = w.probe(here, theta, k).0.distance(&target);
            if best.is_none_or(|(bd, _)| dist < bd - 1e-12) {
                best = Some((dist, k));
            }
        }
        if let Some((bd, k)) = best {
            if bd < d - 1e-9 {
                w.turn(k);
                w.push(LowLevelAction::MoveForward);
                continue;
            }
        }

        let mut best_pair: Option<(f64, i64, i64)> = None;
        for &k1 in &options {
            let (mid, heading) = w.probe(here, theta, k1);
            for &k2 in &options {
                let dist = w.probe(mid, heading, k2).0.distance(&target);
                let cost = k1.abs() + k2.abs();
                let better = match best_pair {
                    None => true,
                    Some((bd, b1, b2)) => dist < bd - 1e-12 || (dist <= bd + 1e-12 && cost < b1.abs() + b2.abs()),
                };
                if better {
                    best_pair = Some((dist, k1, k2));
                }
            }
        }
        match best_pair {
            Some((bd, k1, k2)) if bd < d - 1e-2 => {
                w.turn(k1);
                w.push(LowLevelAction::MoveForward);
                w.turn(k2);
                w.push(LowLevelAction::MoveForward);
            }
            _ => break,
        }
    }
    (w.actions, w.pose)
}

/// Turns toward the reachable heading closest to `theta`.
pub fn face(pose: &Pose, theta: f64, params: &ExecutorParams) -> (Vec<LowLevelAction>, Pose) {
    let mut w = Walker {
        params,
        pose: *pose,
        actions: Vec::new(),
    };
    let k = (wrap_pi(theta - pose.theta) / params.turn_step).round() as i64;
    w.turn(k);
    (w.actions, w.pose)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub actions: Vec<LowLevelAction>,
    pub pose: Pose,
    /// Plan cursor after execution.
    pub cursor: usize,
}

/// Translates one task primitive into native actions from `pose`.
pub fn execute(
    pose: &Pose,
    cursor: usize,
    primitive: &TaskPrimitive,
    plan: &WaypointPlan,
    camera: &CameraModel,
    params: &ExecutorParams,
) -> Result<Execution> {
    match *primitive {
        TaskPrimitive::Stop { target } => {
            let goal = unproject(target, pose, camera)?;
            let (mut actions, end) = goto_within(pose, goal, pose.z, params, params.stop_tolerance);
            actions.push(LowLevelAction::Stop);
            Ok(Execution {
                actions,
                pose: end,
                cursor,
            })
        }
        TaskPrimitive::Move => {
            let wp = plan.waypoints.get(cursor).ok_or(Error::PlanExhausted)?;
            let (mut actions, mid) = goto(pose, wp.position(), wp.z, params);
            let (turns, end) = face(&mid, wp.theta, params);
            actions.extend(turns);
            Ok(Execution {
                actions,
                pose: end,
                cursor: cursor + 1,
            })
        }
        TaskPrimitive::Ascend | TaskPrimitive::Descend => {
            let a = if *primitive == TaskPrimitive::Ascend {
                LowLevelAction::Ascend
            } else {
                LowLevelAction::Descend
            };
            let actions = vec![a; params.vertical_steps()];
            let end = actions.iter().fold(*pose, |p, &a| apply_action(&p, a, params));
            Ok(Execution {
                actions,
                pose: end,
                cursor,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::WaypointPlan;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn camera() -> CameraModel {
        CameraModel::new(256, 256, 0.0, 2.0).unwrap()
    }

    fn plan_with(points: &[(f64, f64)], z: f64) -> WaypointPlan {
        WaypointPlan {
            waypoints: points.iter().map(|&(x, y)| Pose::new(x, y, z, 0.0)).collect(),
            covered_fraction: 1.0,
            steps: Vec::new(),
        }
    }

    #[test]
    fn principal_point_is_nadir() {
        let cam = camera();
        let (cx, cy) = cam.principal();
        let pose = Pose::new(12.5, -3.0, 47.0, 1.1);
        assert_eq!(
            unproject(PixelPoint::new(cx, cy), &pose, &cam).unwrap(),
            Point2::new(12.5, -3.0)
        );
        assert_eq!(
            project_world(Point2::new(12.5, -3.0), &pose, &cam).unwrap(),
            PixelPoint::new(cx, cy)
        );
    }

    #[test]
    fn unit_altitude_pinhole() {
        let cam = CameraModel::new(256, 256, 10.0, 2.0).unwrap();
        let (cx, cy) = cam.principal();
        let f = cam.focal();
        let pose = Pose::new(3.0, 4.0, 11.0, 0.0);
        let p = unproject(PixelPoint::new(cx + f * 2.5, cy), &pose, &cam).unwrap();
        assert!((p.x - 5.5).abs() < 1e-12 && (p.y - 4.0).abs() < 1e-12);
        // image-up is the heading: facing east, up maps to +x
        let east = Pose::new(0.0, 0.0, 11.0, PI / 2.0);
        let p = unproject(PixelPoint::new(cx, cy - f), &east, &cam).unwrap();
        assert!((p.x - 1.0).abs() < 1e-12 && p.y.abs() < 1e-12);
    }

    #[test]
    fn projection_rejects_ground_level() {
        let cam = camera();
        let pose = Pose::new(0.0, 0.0, 0.0, 0.0);
        assert!(unproject(PixelPoint::new(1.0, 1.0), &pose, &cam).is_err());
        assert!(project_world(Point2::new(1.0, 1.0), &pose, &cam).is_err());
    }

    #[test]
    fn round_trips() {
        let cam = camera();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let pose = Pose::new(
                rng.gen_range(-500.0..500.0),
                rng.gen_range(-500.0..500.0),
                rng.gen_range(5.0..200.0),
                rng.gen_range(0.0..2.0 * PI),
            );
            let px = PixelPoint::new(rng.gen_range(0.0..256.0), rng.gen_range(0.0..256.0));
            let back = project_world(unproject(px, &pose, &cam).unwrap(), &pose, &cam).unwrap();
            assert!(back.distance(&px) < 1e-6);
            let w = Point2::new(rng.gen_range(-800.0..800.0), rng.gen_range(-800.0..800.0));
            let again = unproject(project_world(w, &pose, &cam).unwrap(), &pose, &cam).unwrap();
            assert!(again.distance(&w) < 1e-9);
        }
    }

    #[test]
    fn footprint_edge_maps_to_image_edge() {
        let cam = camera();
        let pose = Pose::new(0.0, 0.0, 50.0, 0.0);
        // side = 100 m, so the east edge is 50 m away
        let edge = project_world(Point2::new(50.0, 0.0), &pose, &cam).unwrap();
        assert!((edge.u - 256.0).abs() < 1e-9);
        assert!(in_frame(edge, &cam));
        let beyond = project_world(Point2::new(50.5, 0.0), &pose, &cam).unwrap();
        assert!(!in_frame(beyond, &cam));
        let north = project_world(Point2::new(0.0, 50.0), &pose, &cam).unwrap();
        assert!(north.v.abs() < 1e-9);
    }

    #[test]
    fn goto_same_point_is_empty() {
        let p = Pose::new(3.0, 4.0, 50.0, 0.3);
        let (actions, end) = goto(&p, p.position(), p.z, &ExecutorParams::default());
        assert!(actions.is_empty());
        assert_eq!(end, p);
    }

    #[test]
    fn goto_due_north() {
        let p = Pose::new(0.0, 0.0, 50.0, 0.0);
        let (actions, end) = goto(&p, Point2::new(0.0, 15.0), 50.0, &ExecutorParams::default());
        assert_eq!(actions, vec![LowLevelAction::MoveForward; 3]);
        assert!((end.y - 15.0).abs() < 1e-9);
    }

    #[test]
    fn goto_turns_the_short_way() {
        let params = ExecutorParams::default();
        let p = Pose::new(0.0, 0.0, 50.0, 0.0);
        let (actions, _) = goto(&p, Point2::new(-20.0, 0.0), 50.0, &params);
        assert_eq!(&actions[..6], &[LowLevelAction::TurnLeft; 6]);
        // straight behind: turn right on the tie
        let (actions, _) = goto(&p, Point2::new(0.0, -20.0), 50.0, &params);
        assert_eq!(actions[0], LowLevelAction::TurnRight);
    }

    #[test]
    fn goto_random_targets_within_bound() {
        let params = ExecutorParams::default();
        let bound = params.goal_tolerance.max(params.forward_step / 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let p = Pose::new(
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(20.0..80.0),
                rng.gen_range(0.0..2.0 * PI),
            );
            let t = Point2::new(rng.gen_range(-300.0..300.0), rng.gen_range(-300.0..300.0));
            let tz = rng.gen_range(20.0..80.0);
            let (actions, end) = goto(&p, t, tz, &params);
            assert!(end.position().distance(&t) <= bound, "{p:?} -> {t:?}: {end:?}");
            // replaying the actions reproduces the final pose
            let replay = actions.iter().fold(p, |q, &a| apply_action(&q, a, &params));
            assert_eq!(replay, end);
            assert!(actions.iter().all(|a| LowLevelAction::ALL.contains(a)));
            assert!(!actions.contains(&LowLevelAction::Stop));
        }
    }

    #[test]
    fn fine_approach_beats_goal_tolerance() {
        let params = ExecutorParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let p = Pose::new(0.0, 0.0, 50.0, rng.gen_range(0.0..2.0 * PI));
            let t = Point2::new(rng.gen_range(-60.0..60.0), rng.gen_range(-60.0..60.0));
            let (_, end) = goto_within(&p, t, 50.0, &params, params.stop_tolerance);
            assert!(end.position().distance(&t) < 1.0);
        }
    }

    #[test]
    fn vertical_primitives_change_altitude_exactly() {
        let params = ExecutorParams::default();
        let cam = camera();
        let plan = plan_with(&[], 50.0);
        let p = Pose::new(1.0, 2.0, 50.0, 0.5);
        let up = execute(&p, 0, &TaskPrimitive::Ascend, &plan, &cam, &params).unwrap();
        assert_eq!(up.actions, vec![LowLevelAction::Ascend; 5]);
        assert_eq!(up.pose, Pose::new(1.0, 2.0, 60.0, 0.5));
        let down = execute(&p, 0, &TaskPrimitive::Descend, &plan, &cam, &params).unwrap();
        assert_eq!(down.pose.z, 40.0);
        assert_eq!(down.cursor, 0);
    }

    #[test]
    fn stop_at_principal_point_stays_put() {
        let params = ExecutorParams::default();
        let cam = camera();
        let plan = plan_with(&[], 50.0);
        let p = Pose::new(1.0, 2.0, 50.0, 0.5);
        let (cx, cy) = cam.principal();
        let out = execute(
            &p,
            0,
            &TaskPrimitive::Stop {
                target: PixelPoint::new(cx, cy),
            },
            &plan,
            &cam,
            &params,
        )
        .unwrap();
        assert_eq!(out.actions, vec![LowLevelAction::Stop]);
        assert_eq!(out.pose, p);
    }

    #[test]
    fn move_advances_cursor() {
        let params = ExecutorParams::default();
        let cam = camera();
        let plan = plan_with(&[(40.0, -30.0), (100.0, 0.0)], 50.0);
        let p = Pose::new(0.0, 0.0, 50.0, 0.0);
        let out = execute(&p, 0, &TaskPrimitive::Move, &plan, &cam, &params).unwrap();
        assert_eq!(out.cursor, 1);
        assert!(out.pose.position().distance(&Point2::new(40.0, -30.0)) <= 2.5);
        assert!(out.pose.theta.abs() < 1e-9 || (out.pose.theta - 2.0 * PI).abs() < 1e-9);
        let err = execute(&p, 2, &TaskPrimitive::Move, &plan, &cam, &params).unwrap_err();
        assert!(matches!(err, Error::PlanExhausted));
    }

    #[test]
    fn params_validation() {
        assert!(ExecutorParams::default().validate().is_ok());
        let bad = ExecutorParams {
            vstep: 3.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ExecutorParams {
            forward_step: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
