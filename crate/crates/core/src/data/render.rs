//! Rasterizing scenes through the shared camera.

use super::SceneSpec;
use crate::image::RgbImage;
use crate::planner::CameraModel;

const SKY: [u8; 3] = [170, 200, 230];
const ROAD: [u8; 3] = [100, 100, 100];
const MARKING: [u8; 3] = [200, 200, 200];
const OFFROAD: [u8; 3] = [120, 95, 60];

const MARKING_HALF_WIDTH: f64 = 0.075;
const DASH_PERIOD: f64 = 6.0;
const DASH_LENGTH: f64 = 3.0;

/// What each pixel shows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Label {
    Sky,
    Offroad,
    Road,
    Marking,
    Object(usize),
}

impl Label {
    pub fn is_road(self) -> bool {
        matches!(self, Label::Road | Label::Marking)
    }
}

/// Per-pixel labels, row-major.
#[derive(Clone, Debug)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<Label>,
}

impl LabelMap {
    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Image-space box of an object's near face: (u0, u1, v0, v1).
pub fn object_box(cam: &CameraModel, scene: &SceneSpec, index: usize) -> (f64, f64, f64, f64) {
    let o = &scene.objects[index];
    let y = o.footprint.y_min;
    let (u0, v1) = cam.ground_to_pixel(o.footprint.x_min, y).unwrap();
    let (u1, _) = cam.ground_to_pixel(o.footprint.x_max, y).unwrap();
    let (_, v0) = cam.project(o.footprint.x_min, y, o.class.dims().2).unwrap();
    (u0, u1, v0, v1)
}

fn ground_label(scene: &SceneSpec, x: f64, y: f64) -> Label {
    let (lo, hi) = (scene.road_x_min(), scene.road_x_max());
    if x < lo || x > hi {
        return Label::Offroad;
    }
    if (x - lo).abs() <= MARKING_HALF_WIDTH || (x - hi).abs() <= MARKING_HALF_WIDTH {
        return Label::Marking;
    }
    let dashed = y.rem_euclid(DASH_PERIOD) < DASH_LENGTH;
    let on_boundary = (1..scene.lanes)
        .map(|k| lo + k as f64 * super::LANE_WIDTH)
        .any(|b| (x - b).abs() <= MARKING_HALF_WIDTH);
    if dashed && on_boundary {
        Label::Marking
    } else {
        Label::Road
    }
}

/// Labels every pixel by casting its centre ray; objects are painted far to
/// near over the ground.
pub fn label_scene(scene: &SceneSpec, cam: &CameraModel, width: usize, height: usize) -> LabelMap {
    let mut labels = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            labels.push(match cam.pixel_center_to_ground(row, col) {
                Ok((x, y)) => ground_label(scene, x, y),
                Err(_) => Label::Sky,
            });
        }
    }
    let mut order: Vec<usize> = (0..scene.objects.len()).collect();
    order.sort_by(|&a, &b| {
        let (ya, yb) = (scene.objects[a].footprint.y_min, scene.objects[b].footprint.y_min);
        yb.total_cmp(&ya).then(a.cmp(&b))
    });
    for i in order {
        let (u0, u1, v0, v1) = object_box(cam, scene, i);
        for row in 0..height {
            let v = row as f64 + 0.5;
            if v < v0 || v >= v1 {
                continue;
            }
            for col in 0..width {
                let u = col as f64 + 0.5;
                if u >= u0 && u < u1 {
                    labels[row * width + col] = Label::Object(i);
                }
            }
        }
    }
    LabelMap {
        width,
        height,
        labels,
    }
}

pub fn colorize(scene: &SceneSpec, map: &LabelMap) -> RgbImage {
    let mut img = RgbImage::new(map.width, map.height);
    for (p, &l) in map.labels.iter().enumerate() {
        let rgb = match l {
            Label::Sky => SKY,
            Label::Offroad => OFFROAD,
            Label::Road => ROAD,
            Label::Marking => MARKING,
            Label::Object(i) => scene.objects[i].color.rgb(),
        };
        img.data[p * 3..p * 3 + 3].copy_from_slice(&rgb);
    }
    img
}

pub fn render_scene(scene: &SceneSpec, cam: &CameraModel, width: usize, height: usize) -> RgbImage {
    colorize(scene, &label_scene(scene, cam, width, height))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Color, ObjectClass, SceneObject, Side};

    fn scene(objects: Vec<SceneObject>) -> SceneSpec {
        SceneSpec {
            seed: 0,
            lanes: 3,
            extra_lane_left: false,
            objects,
        }
    }

    fn obj(slot: u8) -> SceneObject {
        SceneObject::place(ObjectClass::Car, Color::Red, Side::Center, slot, &scene(vec![]))
    }

    #[test]
    fn empty_scene_has_no_object_colors() {
        let cam = CameraModel::synthetic(64);
        let img = render_scene(&scene(vec![]), &cam, 64, 64);
        for p in img.data.chunks(3) {
            assert!(Color::ALL.iter().all(|c| c.rgb() != p));
        }
        assert!(img.data.chunks(3).any(|p| p == ROAD));
        assert!(img.data.chunks(3).any(|p| p == SKY));
    }

    #[test]
    fn nearer_objects_cover_more_pixels() {
        let cam = CameraModel::synthetic(64);
        let near = label_scene(&scene(vec![obj(1)]), &cam, 64, 64).count(Label::Object(0));
        let far = label_scene(&scene(vec![obj(4)]), &cam, 64, 64).count(Label::Object(0));
        assert!(near > far && far > 0, "{near} vs {far}");
    }

    #[test]
    fn rendered_box_matches_analytic_corners() {
        let cam = CameraModel::synthetic(64);
        let s = scene(vec![obj(2)]);
        let map = label_scene(&s, &cam, 64, 64);
        let o = &s.objects[0];
        let (h, y) = (o.class.dims().2, o.footprint.y_min);
        // analytic pinhole projection of the near-face corners
        let u0 = 32.0 + 32.0 * o.footprint.x_min / y;
        let u1 = 32.0 + 32.0 * o.footprint.x_max / y;
        let v_bottom = 4.0 + 32.0 * 3.0 / y;
        let v_top = 4.0 + 32.0 * (3.0 - h) / y;
        let px: Vec<(usize, usize)> = (0..64 * 64)
            .filter(|&i| map.labels[i] == Label::Object(0))
            .map(|i| (i / 64, i % 64))
            .collect();
        let rmin = px.iter().map(|p| p.0).min().unwrap() as f64;
        let rmax = px.iter().map(|p| p.0).max().unwrap() as f64 + 1.0;
        let cmin = px.iter().map(|p| p.1).min().unwrap() as f64;
        let cmax = px.iter().map(|p| p.1).max().unwrap() as f64 + 1.0;
        assert!((cmin - u0).abs() <= 1.0 && (cmax - u1).abs() <= 1.0);
        assert!((rmin - v_top).abs() <= 1.0 && (rmax - v_bottom).abs() <= 1.0);
    }

    #[test]
    fn near_objects_paint_over_far_ones() {
        let cam = CameraModel::synthetic(64);
        let truck = SceneObject::place(ObjectClass::Truck, Color::Blue, Side::Center, 1, &scene(vec![]));
        let s = scene(vec![truck, obj(3)]);
        let map = label_scene(&s, &cam, 64, 64);
        // the far box sits entirely behind the near one
        assert_eq!(map.count(Label::Object(1)), 0);
    }
}
