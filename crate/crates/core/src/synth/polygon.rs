//! Convex polygon clipping and plane homographies for crop geometry.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

pub(crate) type Pt = [f64; 2];

/// Sutherland-Hodgman clip of `poly` to the axis-aligned rectangle.
pub(crate) fn clip_to_rect(poly: &[Pt], x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Pt> {
    // Each edge: inside test and intersection with the boundary line.
    let edges: [(usize, f64, bool); 4] = [(0, x0, true), (0, x1, false), (1, y0, true), (1, y1, false)];
    let mut out = poly.to_vec();
    for (axis, bound, keep_above) in edges {
        let inside = |p: &Pt| if keep_above { p[axis] >= bound } else { p[axis] <= bound };
        let input = std::mem::take(&mut out);
        for (i, cur) in input.iter().enumerate() {
            let prev = &input[(i + input.len() - 1) % input.len()];
            let cross = |a: &Pt, b: &Pt| -> Pt {
                let t = (bound - a[axis]) / (b[axis] - a[axis]);
                let mut p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                p[axis] = bound;
                p
            };
            match (inside(prev), inside(cur)) {
                (true, true) => out.push(*cur),
                (true, false) => out.push(cross(prev, cur)),
                (false, true) => {
                    out.push(cross(prev, cur));
                    out.push(*cur);
                }
                (false, false) => {}
            }
        }
        if out.is_empty() {
            break;
        }
    }
    out
}

/// Shoelace area (absolute).
pub(crate) fn area(poly: &[Pt]) -> f64 {
    let n = poly.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    0.5 * twice.abs()
}

/// `(x_min, y_min, x_max, y_max)` of a non-empty point set.
pub(crate) fn bounds(poly: &[Pt]) -> [f64; 4] {
    poly.iter().fold(
        [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
        |b, p| [b[0].min(p[0]), b[1].min(p[1]), b[2].max(p[0]), b[3].max(p[1])],
    )
}

/// Homography taking the unit square corners `(0,0), (1,0), (1,1), (0,1)` to `quad`.
pub(crate) fn square_to_quad(quad: &[Pt; 4]) -> Option<Matrix3<f64>> {
    let src = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut rhs = SVector::<f64, 8>::zeros();
    for (i, (s, d)) in src.iter().zip(quad).enumerate() {
        let (x, y, u, v) = (s[0], s[1], d[0], d[1]);
        a.set_row(2 * i, &SMatrix::<f64, 1, 8>::from_row_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]));
        a.set_row(2 * i + 1, &SMatrix::<f64, 1, 8>::from_row_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]));
        rhs[2 * i] = u;
        rhs[2 * i + 1] = v;
    }
    let h = a.lu().solve(&rhs)?;
    Some(Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0))
}

pub(crate) fn apply(h: &Matrix3<f64>, p: Pt) -> Pt {
    let q = h * Vector3::new(p[0], p[1], 1.0);
    [q.x / q.z, q.y / q.z]
}
