//! Goal extraction from a predicted region and RRT planning on the ground
//! plane.

mod camera;
mod geometry;

pub use camera::CameraModel;
pub use geometry::Rect;

use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ProbMap;
use crate::rng::rng;

/// Obstacle footprints (uninflated) and the planning workspace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundScene {
    pub obstacles: Vec<Rect>,
    pub bounds: Rect,
    pub start: (f64, f64),
}

impl GroundScene {
    pub fn new(obstacles: Vec<Rect>) -> Self {
        GroundScene {
            obstacles,
            bounds: Rect::new(-8.0, 8.0, 0.0, 30.0),
            start: (0.0, 0.0),
        }
    }

    pub fn is_free(&self, x: f64, y: f64, inflation: f64) -> bool {
        self.bounds.contains(x, y)
            && !self
                .obstacles
                .iter()
                .any(|o| o.inflate(inflation).contains(x, y))
    }

    /// Checks points along the segment every `resolution` metres.
    pub fn segment_free(&self, a: (f64, f64), b: (f64, f64), inflation: f64, resolution: f64) -> bool {
        let len = (b.0 - a.0).hypot(b.1 - a.1);
        let n = ((len / resolution).ceil() as usize).max(1);
        (0..=n).all(|i| {
            let t = i as f64 / n as f64;
            self.is_free(a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1), inflation)
        })
    }

    /// Loads either a bare scene document or any JSON object carrying one
    /// under a `ground_scene` key (such as a sample metadata file).
    pub fn load(path: &Path) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let v = v.get("ground_scene").cloned().unwrap_or(v);
        Ok(serde_json::from_value(v)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RrtParams {
    pub step: f64,
    pub goal_bias: f64,
    pub goal_tolerance: f64,
    pub max_iterations: usize,
    pub collision_resolution: f64,
    pub inflation: f64,
    pub seed: u64,
}

impl Default for RrtParams {
    fn default() -> Self {
        RrtParams {
            step: 0.5,
            goal_bias: 0.1,
            goal_tolerance: 0.5,
            max_iterations: 5000,
            collision_resolution: 0.1,
            inflation: 0.3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<(f64, f64)>,
    /// Sampling iterations the planner used.
    pub iterations: usize,
}

impl Trajectory {
    pub fn length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1))
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x_m,y_m\n");
        for (x, y) in &self.waypoints {
            s.push_str(&format!("{x:.6},{y:.6}\n"));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        if lines.next() != Some("x_m,y_m") {
            return Err(Error::Format(format!("{}: missing `x_m,y_m` header", path.display())));
        }
        let mut waypoints = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (x, y) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("bad trajectory line `{line}`")))?;
            let p = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad number `{s}`")))
            };
            waypoints.push((p(x)?, p(y)?));
        }
        Ok(Trajectory {
            waypoints,
            iterations: 0,
        })
    }
}

/// Goal selected from a predicted region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub row: usize,
    pub col: usize,
    pub world: (f64, f64),
}

/// Thresholds the map, takes the rounded centroid of the region pixels that
/// lie below the horizon, snaps it to the nearest region pixel if it falls
/// outside the region, and projects that pixel onto the ground.
pub fn mask_to_goal(prob: &ProbMap, cam: &CameraModel, threshold: f32) -> Result<Goal> {
    let region = prob.threshold(threshold);
    if region.count() == 0 {
        return Err(Error::NoRegion);
    }
    let w = region.width;
    let below: Vec<usize> = (0..region.data.len())
        .filter(|&i| region.data[i] && (i / w) as f64 + 0.5 > cam.cy)
        .collect();
    if below.is_empty() {
        let lowest = (0..region.data.len()).filter(|&i| region.data[i]).map(|i| i / w).max();
        return Err(Error::Horizon {
            v: lowest.unwrap_or(0) as f64 + 0.5,
            cy: cam.cy,
        });
    }
    let n = below.len() as f64;
    let mean_r = below.iter().map(|&i| (i / w) as f64).sum::<f64>() / n;
    let mean_c = below.iter().map(|&i| (i % w) as f64).sum::<f64>() / n;
    let (r0, c0) = (mean_r.round() as usize, mean_c.round() as usize);
    let centre = r0 * w + c0;
    let pick = if below.binary_search(&centre).is_ok() {
        centre
    } else {
        // `below` is in ascending index order, so the first minimum wins ties.
        let d2 = |i: usize| {
            let (r, c) = ((i / w) as f64, (i % w) as f64);
            (r - r0 as f64).powi(2) + (c - c0 as f64).powi(2)
        };
        let mut best = below[0];
        for &i in &below[1..] {
            if d2(i) < d2(best) {
                best = i;
            }
        }
        best
    };
    let (row, col) = (pick / w, pick % w);
    Ok(Goal {
        row,
        col,
        world: cam.pixel_center_to_ground(row, col)?,
    })
}

/// Seeded RRT from `start` to within `goal_tolerance` of `goal`.
pub fn rrt_plan(
    scene: &GroundScene,
    start: (f64, f64),
    goal: (f64, f64),
    params: &RrtParams,
) -> Result<Trajectory> {
    let inf = params.inflation;
    if !scene.is_free(start.0, start.1, inf) {
        return Err(Error::Contract(format!("start {start:?} is outside free space")));
    }
    if !scene.is_free(goal.0, goal.1, inf) {
        return Err(Error::Contract(format!("goal {goal:?} is outside free space")));
    }
    let dist = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).hypot(a.1 - b.1);
    if dist(start, goal) <= params.goal_tolerance {
        return Ok(Trajectory {
            waypoints: vec![start],
            iterations: 0,
        });
    }

    let mut r = rng(params.seed);
    let b = scene.bounds;
    let mut nodes = vec![start];
    let mut parent = vec![usize::MAX];
    for it in 1..=params.max_iterations {
        let sample = if r.gen::<f64>() < params.goal_bias {
            goal
        } else {
            (r.gen_range(b.x_min..b.x_max), r.gen_range(b.y_min..b.y_max))
        };
        let mut near = 0;
        let mut best = f64::INFINITY;
        for (i, &p) in nodes.iter().enumerate() {
            let d = dist(p, sample);
            if d < best {
                best = d;
                near = i;
            }
        }
        if best == 0.0 {
            continue;
        }
        let from = nodes[near];
        let k = (params.step / best).min(1.0);
        let new = (from.0 + k * (sample.0 - from.0), from.1 + k * (sample.1 - from.1));
        if !scene.segment_free(from, new, inf, params.collision_resolution) {
            continue;
        }
        nodes.push(new);
        parent.push(near);
        if dist(new, goal) <= params.goal_tolerance {
            let mut path = vec![];
            let mut i = nodes.len() - 1;
            while i != usize::MAX {
                path.push(nodes[i]);
                i = parent[i];
            }
            path.reverse();
            return Ok(Trajectory {
                waypoints: path,
                iterations: it,
            });
        }
    }
    Err(Error::PlanningFailure {
        iterations: params.max_iterations,
        tree_size: nodes.len(),
    })
}

/// Outcome of [`validate_path`]; `passed` is the conjunction of all checks.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathReport {
    pub passed: bool,
    /// Index of the first segment longer than the step bound.
    pub step_violation: Option<usize>,
    /// Index of the first segment that leaves free space.
    pub collision: Option<usize>,
    pub terminal_distance: f64,
    pub terminal_ok: bool,
}

/// Re-checks a trajectory against the scene without trusting the planner.
pub fn validate_path(
    traj: &Trajectory,
    scene: &GroundScene,
    goal: (f64, f64),
    params: &RrtParams,
) -> PathReport {
    let Some(&last) = traj.waypoints.last() else {
        return PathReport {
            passed: false,
            step_violation: None,
            collision: None,
            terminal_distance: f64::INFINITY,
            terminal_ok: false,
        };
    };
    let mut step_violation = None;
    let mut collision = None;
    let first_free = scene.is_free(traj.waypoints[0].0, traj.waypoints[0].1, params.inflation);
    if !first_free {
        collision = Some(0);
    }
    for (i, w) in traj.waypoints.windows(2).enumerate() {
        let len = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
        if step_violation.is_none() && len > params.step + 1e-6 {
            step_violation = Some(i);
        }
        if collision.is_none()
            && !scene.segment_free(w[0], w[1], params.inflation, params.collision_resolution)
        {
            collision = Some(i);
        }
    }
    let terminal_distance = (last.0 - goal.0).hypot(last.1 - goal.1);
    let terminal_ok = terminal_distance <= params.goal_tolerance + 1e-6;
    PathReport {
        passed: step_violation.is_none() && collision.is_none() && terminal_ok,
        step_violation,
        collision,
        terminal_distance,
        terminal_ok,
    }
}
