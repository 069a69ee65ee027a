use nalgebra::Point2;
use rayon::prelude::*;

use super::boxes::OverlapBox;
use super::camera::{CameraFrame, RelativePose};
use super::warp::{warp_unchecked, Warp};
use crate::error::{invalid_input, Result};

/// Depth-consistency settings for ground-truth overlap.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct OverlapParams {
    /// Accept a warped pixel when `|z_warped - z_target| <= depth_tol * z_target`.
    pub depth_tol: f64,
    /// Fewer accepted pixels (both directions together) means no overlap.
    pub min_overlap_pixels: usize,
}

impl Default for OverlapParams {
    fn default() -> Self {
        Self {
            depth_tol: 0.005,
            min_overlap_pixels: 32,
        }
    }
}

/// Ground-truth co-visible boxes plus the settings that produced them.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GtOverlap {
    /// `(box in A, box in B)`, or `None` when the views do not overlap.
    pub boxes: Option<(OverlapBox, OverlapBox)>,
    pub accepted_a_to_b: usize,
    pub accepted_b_to_a: usize,
    pub params: OverlapParams,
}

#[derive(Debug, Clone, Copy)]
struct Extent {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Extent {
    const EMPTY: Extent = Extent {
        x0: f64::INFINITY,
        y0: f64::INFINITY,
        x1: f64::NEG_INFINITY,
        y1: f64::NEG_INFINITY,
    };

    fn add(&mut self, x0: f64, y0: f64, x1: f64, y1: f64) {
        self.x0 = self.x0.min(x0);
        self.y0 = self.y0.min(y0);
        self.x1 = self.x1.max(x1);
        self.y1 = self.y1.max(y1);
    }

    fn merge(mut self, o: Extent) -> Extent {
        self.add(o.x0, o.y0, o.x1, o.y1);
        self
    }

    fn to_box(self) -> Option<OverlapBox> {
        OverlapBox::new(self.x0, self.y0, self.x1, self.y1).ok()
    }
}

#[derive(Debug, Clone, Copy)]
struct Pass {
    count: usize,
    source: Extent,
    target: Extent,
}

impl Pass {
    const EMPTY: Pass = Pass {
        count: 0,
        source: Extent::EMPTY,
        target: Extent::EMPTY,
    };

    fn merge(self, o: Pass) -> Pass {
        Pass {
            count: self.count + o.count,
            source: self.source.merge(o.source),
            target: self.target.merge(o.target),
        }
    }
}

/// Warps every valid source pixel into the target and keeps those whose depth
/// agrees with the target's depth at the nearest pixel.
fn one_way(src: &CameraFrame, dst: &CameraFrame, pose: &RelativePose, tol: f64) -> Pass {
    let (w, h) = (src.intrinsics.width, src.intrinsics.height);
    let (tw, th) = (dst.intrinsics.width as f64, dst.intrinsics.height as f64);
    (0..h)
        .into_par_iter()
        .map(|y| {
            let mut acc = Pass::EMPTY;
            for x in 0..w {
                let Some(d) = src.depth.get(x, y) else {
                    continue;
                };
                let p = Point2::new(x as f64 + 0.5, y as f64 + 0.5);
                let Warp::Visible { pixel: q, depth: z } =
                    warp_unchecked(p, d, &src.intrinsics, &dst.intrinsics, pose)
                else {
                    continue;
                };
                let Some(zt) = dst.depth.get(q.x as usize, q.y as usize) else {
                    continue;
                };
                if (z - zt).abs() > tol * zt {
                    continue;
                }
                acc.count += 1;
                acc.source.add(x as f64, y as f64, x as f64 + 1.0, y as f64 + 1.0);
                acc.target.add(
                    (q.x - 0.5).max(0.0),
                    (q.y - 0.5).max(0.0),
                    (q.x + 0.5).min(tw),
                    (q.y + 0.5).min(th),
                );
            }
            acc
        })
        .reduce(|| Pass::EMPTY, Pass::merge)
}

/// Co-visible bounding boxes in both views from depth and relative pose.
///
/// Both directions are warped with a depth-consistency check; each box is the
/// union of accepted source cells in its own view and the footprints of
/// accepted pixels warped into it.
pub fn compute_overlap_gt(
    a: &CameraFrame,
    b: &CameraFrame,
    pose: &RelativePose,
    params: OverlapParams,
) -> Result<GtOverlap> {
    if !(params.depth_tol.is_finite() && params.depth_tol >= 0.0) {
        return Err(invalid_input(format!("bad depth tolerance {}", params.depth_tol)));
    }
    a.intrinsics.validate()?;
    b.intrinsics.validate()?;
    if a.depth.valid_count() == 0 || b.depth.valid_count() == 0 {
        return Err(invalid_input("depth map has no valid pixels"));
    }
    let ab = one_way(a, b, pose, params.depth_tol);
    let ba = one_way(b, a, &pose.inverse(), params.depth_tol);
    let total = ab.count + ba.count;
    let boxes = if total < params.min_overlap_pixels.max(1) {
        None
    } else {
        let box_a = ab.source.merge(ba.target).to_box();
        let box_b = ab.target.merge(ba.source).to_box();
        box_a.zip(box_b)
    };
    Ok(GtOverlap {
        boxes,
        accepted_a_to_b: ab.count,
        accepted_b_to_a: ba.count,
        params,
    })
}
