//! Ground-truth navigable regions.

use super::render::LabelMap;
use super::{Action, Direction, SceneSpec, Side, SLOT_SPACING};
use crate::image::Mask;
use crate::planner::{CameraModel, Rect};

/// Closest distance ahead at which regions start.
const NEAR_Y: f64 = 2.5;
/// Length of lane kept clear behind a lead vehicle.
const LEAD_GAP: f64 = 2.0 * SLOT_SPACING;
/// Half-width of the ego-lane patch.
const EGO_HALF: f64 = 1.4;
const MAINTAIN_FAR: f64 = 20.0;
const TURN_FAR: f64 = 6.5;
const PARK_HALF_LENGTH: f64 = 2.5;

/// World rectangle that `action` refers to, or `None` if the scene cannot
/// host it (e.g. a lane change towards a missing lane).
pub fn region_for(
    scene: &SceneSpec,
    action: Action,
    referent: Option<usize>,
    direction: Option<Direction>,
) -> Option<Rect> {
    let obj = referent.map(|i| &scene.objects[i]);
    let ahead = scene
        .objects
        .iter()
        .filter(|o| o.side == Side::Center)
        .map(|o| o.footprint.y_min)
        .fold(f64::INFINITY, f64::min);
    let r = match action {
        Action::Park => {
            let o = obj?;
            let fp = o.footprint;
            let (x0, x1) = match o.side {
                Side::Left => (scene.road_x_min() + 0.3, scene.road_x_min() + 2.1),
                Side::Right => (scene.road_x_max() - 2.1, scene.road_x_max() - 0.3),
                Side::Center => return None,
            };
            // a parking space spanning the referent's slot
            let centre = SLOT_SPACING * o.slot as f64;
            let y0 = (fp.y_min - 0.5).min(centre - PARK_HALF_LENGTH).max(NEAR_Y);
            Rect::new(x0, x1, y0, (fp.y_max + 0.5).max(centre + PARK_HALF_LENGTH))
        }
        Action::Follow => {
            let fp = obj.filter(|o| o.side == Side::Center)?.footprint;
            Rect::new(-EGO_HALF, EGO_HALF, (fp.y_min - LEAD_GAP).max(NEAR_Y), fp.y_min - 0.5)
        }
        Action::Turn => match direction? {
            Direction::Left => Rect::new(scene.road_x_min() + 0.2, -0.3, NEAR_Y, TURN_FAR),
            Direction::Right => Rect::new(0.3, scene.road_x_max() - 0.2, NEAR_Y, TURN_FAR),
        },
        Action::Maintain => Rect::new(-EGO_HALF, EGO_HALF, 8.0, (ahead - 0.6).min(MAINTAIN_FAR)),
        Action::Speed => {
            let fp = obj?.footprint;
            Rect::new(-EGO_HALF, EGO_HALF, (fp.y_min - LEAD_GAP).max(NEAR_Y), fp.y_min - 1.0)
        }
        Action::LaneChange => {
            let (x0, x1) = scene.adjacent_lane(direction?)?;
            Rect::new(x0 + 0.3, x1 - 0.3, 4.0, 10.0)
        }
    };
    (r.y_max > r.y_min && r.x_max > r.x_min).then_some(r)
}

/// Road pixels whose centre ray hits the ground inside `region`.
pub fn synthesize_mask(map: &LabelMap, cam: &CameraModel, region: &Rect) -> Mask {
    let mut mask = Mask::new(map.width, map.height);
    for row in 0..map.height {
        for col in 0..map.width {
            if !map.labels[row * map.width + col].is_road() {
                continue;
            }
            if let Ok((x, y)) = cam.pixel_center_to_ground(row, col) {
                if region.contains(x, y) {
                    mask.set(row, col, true);
                }
            }
        }
    }
    mask
}
