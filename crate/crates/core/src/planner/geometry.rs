use serde::{Deserialize, Serialize};

/// Axis-aligned rectangle on the ground plane, in metres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Rect {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    pub fn centered(cx: f64, cy: f64, width: f64, length: f64) -> Self {
        Rect::new(cx - width / 2.0, cx + width / 2.0, cy - length / 2.0, cy + length / 2.0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn inflate(&self, by: f64) -> Rect {
        Rect::new(self.x_min - by, self.x_max + by, self.y_min - by, self.y_max + by)
    }

    /// True when the interiors overlap.
    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x_min < other.x_max
            && other.x_min < self.x_max
            && self.y_min < other.y_max
            && other.y_min < self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn length(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    /// Euclidean distance from a point to the rectangle (0 inside).
    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        let dx = (self.x_min - x).max(0.0).max(x - self.x_max);
        let dy = (self.y_min - y).max(0.0).max(y - self.y_max);
        dx.hypot(dy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centred_rect_extents() {
        let r = Rect::centered(1.0, 10.0, 2.0, 4.0);
        assert_eq!(r, Rect::new(0.0, 2.0, 8.0, 12.0));
        assert_eq!((r.width(), r.length(), r.center()), (2.0, 4.0, (1.0, 10.0)));
    }

    #[test]
    fn touching_edges_do_not_overlap() {
        let a = Rect::new(0.0, 1.0, 0.0, 1.0);
        assert!(!a.overlaps(&Rect::new(1.0, 2.0, 0.0, 1.0)));
        assert!(a.overlaps(&Rect::new(0.5, 2.0, 0.5, 2.0)));
        assert!(a.inflate(0.1).overlaps(&Rect::new(1.0, 2.0, 0.0, 1.0)));
        assert!(a.contains(1.0, 1.0) && !a.contains(1.0, 1.01));
    }

    #[test]
    fn distance_to_edges_and_corners() {
        let r = Rect::new(0.0, 2.0, 0.0, 2.0);
        assert_eq!(r.distance_to(1.0, 1.0), 0.0);
        assert_eq!(r.distance_to(-3.0, 1.0), 3.0);
        assert_eq!(r.distance_to(5.0, 6.0), 5.0);
    }
}
