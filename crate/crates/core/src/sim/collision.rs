use super::vehicle::Vehicle;

/// Oriented rectangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Footprint {
    pub cx: f64,
    pub cy: f64,
    pub half_length: f64,
    pub half_width: f64,
    pub theta: f64,
}

impl Footprint {
    pub fn of(v: &Vehicle) -> Self {
        Self { cx: v.x, cy: v.y, half_length: 0.5 * v.length, half_width: 0.5 * v.width, theta: v.theta }
    }

    fn axes(&self) -> [(f64, f64); 2] {
        let (s, c) = self.theta.sin_cos();
        [(c, s), (-s, c)]
    }

    fn radius(&self, axis: (f64, f64)) -> f64 {
        let [u, w] = self.axes();
        self.half_length * (u.0 * axis.0 + u.1 * axis.1).abs() + self.half_width * (w.0 * axis.0 + w.1 * axis.1).abs()
    }

    /// Half-diagonal; no point of the rectangle is further from the centre.
    pub fn bound(&self) -> f64 {
        self.half_length.hypot(self.half_width)
    }
}

/// Separating-axis test on closed rectangles: touching counts as overlap.
pub fn footprints_overlap(a: &Footprint, b: &Footprint) -> bool {
    let d = (b.cx - a.cx, b.cy - a.cy);
    a.axes().into_iter().chain(b.axes()).all(|axis| {
        let dist = (d.0 * axis.0 + d.1 * axis.1).abs();
        dist <= a.radius(axis) + b.radius(axis)
    })
}

/// All overlapping pairs `(id_a, id_b)` with `id_a < id_b`, sorted.
pub fn detect_collisions(vehicles: &[Vehicle]) -> Vec<(u32, u32)> {
    let mut order: Vec<(f64, Footprint, u32)> = vehicles.iter().map(|v| (v.x, Footprint::of(v), v.id)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
    let mut pairs = Vec::new();
    for i in 0..order.len() {
        for j in i + 1..order.len() {
            let (fa, fb) = (&order[i].1, &order[j].1);
            if order[j].0 - order[i].0 > fa.bound() + fb.bound() {
                break;
            }
            if footprints_overlap(fa, fb) {
                let (a, b) = (order[i].2, order[j].2);
                pairs.push((a.min(b), a.max(b)));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}
