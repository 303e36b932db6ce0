//! Axis-aligned bounding boxes in (x_min, y_min, x_max, y_max) order.

/// A 4-vector; used for box coordinates, posterior means and diagonal variances.
pub type Vec4 = [f64; 4];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox(pub Vec4);

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        BBox([x_min, y_min, x_max, y_max])
    }

    /// Builds a box from MOTChallenge (left, top, width, height).
    pub fn from_ltwh(left: f64, top: f64, width: f64, height: f64) -> Self {
        BBox([left, top, left + width, top + height])
    }

    pub fn x_min(&self) -> f64 {
        self.0[0]
    }

    pub fn y_min(&self) -> f64 {
        self.0[1]
    }

    pub fn x_max(&self) -> f64 {
        self.0[2]
    }

    pub fn y_max(&self) -> f64 {
        self.0[3]
    }

    pub fn width(&self) -> f64 {
        self.0[2] - self.0[0]
    }

    pub fn height(&self) -> f64 {
        self.0[3] - self.0[1]
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|v| v.is_finite()) && self.width() > 0.0 && self.height() > 0.0
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }
}

impl From<Vec4> for BBox {
    fn from(v: Vec4) -> Self {
        BBox(v)
    }
}

/// Intersection over union; 0 for disjoint or degenerate boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x_max().min(b.x_max()) - a.x_min().max(b.x_min());
    let ih = a.y_max().min(b.y_max()) - a.y_min().max(b.y_min());
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}
