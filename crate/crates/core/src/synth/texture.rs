//! Seeded multi-octave value noise, evaluated at continuous coordinates.

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RGB values at one lattice point; the channels share one hash chain.
fn lattice(seed: u64, octave: u32, x: i64, y: i64) -> [f64; 3] {
    let h = mix(seed ^ mix((x as u64) ^ mix((y as u64) ^ ((octave as u64) << 32))));
    [1u64, 2, 3].map(|c| (mix(h.wrapping_add(c)) >> 11) as f64 / (1u64 << 53) as f64)
}

fn smooth(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// RGB value noise over the plane.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Texture {
    pub seed: u64,
    /// Lattice spacing of the coarsest octave, in canvas units.
    pub base_cell: f64,
    pub octaves: u32,
    /// Amplitude ratio between successive octaves.
    pub persistence: f64,
}

impl Texture {
    /// Color in `[0, 1]^3` at canvas point `(x, y)`.
    pub fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let mut total = [0.0; 3];
        let mut norm = 0.0;
        let mut amp = 1.0;
        let mut cell = self.base_cell;
        for o in 0..self.octaves {
            let (u, v) = (x / cell, y / cell);
            let (ix, iy) = (u.floor(), v.floor());
            let (fx, fy) = (smooth(u - ix), smooth(v - iy));
            let (ix, iy) = (ix as i64, iy as i64);
            let c00 = lattice(self.seed, o, ix, iy);
            let c10 = lattice(self.seed, o, ix + 1, iy);
            let c01 = lattice(self.seed, o, ix, iy + 1);
            let c11 = lattice(self.seed, o, ix + 1, iy + 1);
            for c in 0..3 {
                let top = c00[c] + (c10[c] - c00[c]) * fx;
                let bottom = c01[c] + (c11[c] - c01[c]) * fx;
                total[c] += amp * (top + (bottom - top) * fy);
            }
            norm += amp;
            amp *= self.persistence;
            cell *= 0.5;
        }
        total.map(|t| t / norm)
    }
}
