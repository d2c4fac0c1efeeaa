use crate::frames::Box3D;

type P2 = [f64; 2];

fn cross(o: P2, a: P2, b: P2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area; positive for counter-clockwise polygons.
pub fn polygon_area(poly: &[P2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for k in 0..poly.len() {
        let (a, b) = (poly[k], poly[(k + 1) % poly.len()]);
        s += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * s
}

/// Clips `subject` against a convex counter-clockwise `clip` polygon.
pub fn clip_convex(subject: &[P2], clip: &[P2]) -> Vec<P2> {
    let mut out = subject.to_vec();
    for e in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let input = std::mem::take(&mut out);
        clip_edge(&input, clip[e], clip[(e + 1) % clip.len()], |q| out.push(q));
    }
    out
}

fn clip_edge(input: &[P2], c0: P2, c1: P2, mut emit: impl FnMut(P2)) {
    let Some(&last) = input.last() else { return };
    let mut prev = last;
    let mut prev_side = cross(c0, c1, prev);
    for &cur in input {
        let side = cross(c0, c1, cur);
        if side >= 0.0 {
            if prev_side < 0.0 {
                emit(intersect(prev, cur, prev_side, side));
            }
            emit(cur);
        } else if prev_side >= 0.0 {
            emit(intersect(prev, cur, prev_side, side));
        }
        prev = cur;
        prev_side = side;
    }
}

/// Intersection area of two convex quadrilaterals without allocating; each
/// clip edge adds at most one vertex, so eight slots suffice.
fn quad_intersection_area(a: &[P2; 4], b: &[P2; 4]) -> f64 {
    let mut buf = [[0.0; 2]; 8];
    let mut tmp = [[0.0; 2]; 8];
    buf[..4].copy_from_slice(a);
    let mut n = 4;
    for e in 0..4 {
        let mut m = 0;
        clip_edge(&buf[..n], b[e], b[(e + 1) % 4], |q| {
            tmp[m] = q;
            m += 1;
        });
        std::mem::swap(&mut buf, &mut tmp);
        n = m;
        if n == 0 {
            return 0.0;
        }
    }
    polygon_area(&buf[..n])
}

fn intersect(a: P2, b: P2, sa: f64, sb: f64) -> P2 {
    let t = sa / (sa - sb);
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

/// Ground-plane footprint with everything IoU needs precomputed.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Footprint {
    corners: [P2; 4],
    area: f64,
    lo: P2,
    hi: P2,
}

impl Footprint {
    pub(crate) fn of(b: &Box3D) -> Self {
        let corners = b.bev_corners();
        let (mut lo, mut hi) = (corners[0], corners[0]);
        for q in &corners[1..] {
            lo = [lo[0].min(q[0]), lo[1].min(q[1])];
            hi = [hi[0].max(q[0]), hi[1].max(q[1])];
        }
        Footprint {
            corners,
            lo,
            hi,
            area: b.bev_area(),
        }
    }

    /// Axis-aligned bounds (min corner, max corner).
    pub(crate) fn bounds(&self) -> (P2, P2) {
        (self.lo, self.hi)
    }

    pub(crate) fn iou(&self, other: &Footprint) -> f64 {
        if !(self.area > 0.0 && other.area > 0.0) {
            return 0.0;
        }
        // cheap reject on bounding boxes
        if self.lo[0] > other.hi[0] || other.lo[0] > self.hi[0] || self.lo[1] > other.hi[1] || other.lo[1] > self.hi[1] {
            return 0.0;
        }
        let inter = quad_intersection_area(&self.corners, &other.corners).max(0.0);
        let union = self.area + other.area - inter;
        if union <= 0.0 {
            return 0.0;
        }
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Rotated IoU of two boxes' footprints on the ground plane. Degenerate
/// footprints give 0.
pub fn bev_iou(a: &Box3D, b: &Box3D) -> f64 {
    Footprint::of(a).iou(&Footprint::of(b))
}
