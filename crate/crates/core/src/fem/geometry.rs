/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

pub fn polygon_area(p: &[[f64; 2]]) -> f64 {
    let n = p.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (p[i], p[(i + 1) % n]);
        s += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * s
}

fn clip_edge(poly: &[[f64; 2]], inside: impl Fn([f64; 2]) -> f64) -> Vec<[f64; 2]> {
    // `inside` is a signed distance, nonnegative on the kept side
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let (da, db) = (inside(a), inside(b));
        if da >= 0.0 {
            out.push(a);
        }
        if (da >= 0.0) != (db >= 0.0) {
            let t = da / (da - db);
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

/// Area of a counter-clockwise triangle inside a rectangle
/// (Sutherland–Hodgman clipping).
pub fn triangle_rect_overlap(tri: [[f64; 2]; 3], r: Rect) -> f64 {
    let mut poly = tri.to_vec();
    for f in [
        &(|p: [f64; 2]| p[0] - r.x0) as &dyn Fn([f64; 2]) -> f64,
        &|p: [f64; 2]| r.x1 - p[0],
        &|p: [f64; 2]| p[1] - r.y0,
        &|p: [f64; 2]| r.y1 - p[1],
    ] {
        poly = clip_edge(&poly, f);
        if poly.is_empty() {
            return 0.0;
        }
    }
    polygon_area(&poly).max(0.0)
}

/// Centroids of the nine congruent sub-triangles of `tri`.
pub fn subtriangle_centroids(tri: [[f64; 2]; 3]) -> [[f64; 2]; 9] {
    let at = |w: [f64; 3]| {
        [
            (w[0] * tri[0][0] + w[1] * tri[1][0] + w[2] * tri[2][0]) / 3.0,
            (w[0] * tri[0][1] + w[1] * tri[1][1] + w[2] * tri[2][1]) / 3.0,
        ]
    };
    let mut out = [[0.0; 2]; 9];
    let mut n = 0;
    // upward sub-triangles: lattice points with a + b + c = 2
    for a in 0..3 {
        for b in 0..3 - a {
            let c = 2 - a - b;
            out[n] = at([a as f64 + 1.0 / 3.0, b as f64 + 1.0 / 3.0, c as f64 + 1.0 / 3.0]);
            n += 1;
        }
    }
    // downward ones: a + b + c = 1
    for a in 0..2 {
        for b in 0..2 - a {
            let c = 1 - a - b;
            out[n] = at([a as f64 + 2.0 / 3.0, b as f64 + 2.0 / 3.0, c as f64 + 2.0 / 3.0]);
            n += 1;
        }
    }
    out
}
