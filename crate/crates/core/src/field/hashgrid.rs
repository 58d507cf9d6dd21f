//! Multiresolution hash encoding with trilinear interpolation.

use rand::Rng;

use super::Real;

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    /// Position scaled into the unit cube, clamped, plus whether clamping happened.
    pub fn normalize(&self, x: [f64; 3]) -> ([f64; 3], bool) {
        let mut u = [0.0; 3];
        let mut clamped = false;
        for a in 0..3 {
            let t = (x[a] - self.min[a]) / (self.max[a] - self.min[a]);
            let c = t.clamp(0.0, 1.0);
            clamped |= c != t;
            u[a] = c;
        }
        (u, clamped)
    }
}

/// One table entry touched by an encoding, with its interpolation weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner<R> {
    /// Row in the concatenated table (level offset included).
    pub row: u32,
    pub weight: R,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashGrid<R> {
    pub n_levels: usize,
    pub features: usize,
    pub resolutions: Vec<u32>,
    /// First row of each level, plus the total row count at the end.
    pub offsets: Vec<u32>,
    pub hashed: Vec<bool>,
    /// Row-major `rows x features`.
    pub table: Vec<R>,
    pub aabb: Aabb,
}

impl<R: Real> HashGrid<R> {
    pub fn new(
        n_levels: usize,
        features: usize,
        table_log2: u32,
        base_resolution: u32,
        max_resolution: u32,
        aabb: Aabb,
    ) -> Self {
        let cap = 1u64 << table_log2;
        let growth = if n_levels > 1 {
            ((max_resolution as f64).ln() - (base_resolution as f64).ln()) / (n_levels - 1) as f64
        } else {
            0.0
        };
        let mut resolutions = Vec::with_capacity(n_levels);
        let mut offsets = vec![0u32];
        let mut hashed = Vec::with_capacity(n_levels);
        for l in 0..n_levels {
            let res = ((base_resolution as f64) * (growth * l as f64).exp() + 1e-9).floor().max(1.0) as u32;
            let dense = (res as u64 + 1).pow(3);
            let rows = dense.min(cap);
            resolutions.push(res);
            hashed.push(dense > cap);
            offsets.push(offsets[l] + rows as u32);
        }
        let rows = *offsets.last().unwrap() as usize;
        Self {
            n_levels,
            features,
            resolutions,
            offsets,
            hashed,
            table: vec![R::zero(); rows * features],
            aabb,
        }
    }

    pub fn init_uniform(&mut self, rng: &mut impl Rng, range: f64) {
        for v in &mut self.table {
            *v = R::from_f64(rng.gen_range(-range..range));
        }
    }

    pub fn output_dim(&self) -> usize {
        self.n_levels * self.features
    }

    pub fn rows(&self) -> usize {
        *self.offsets.last().unwrap() as usize
    }

    fn vertex_row(&self, level: usize, v: [u32; 3]) -> u32 {
        let base = self.offsets[level];
        let size = self.offsets[level + 1] - base;
        let idx = if self.hashed[level] {
            // hashed levels hold exactly 2^k rows
            (v[0].wrapping_mul(PRIMES[0]) ^ v[1].wrapping_mul(PRIMES[1]) ^ v[2].wrapping_mul(PRIMES[2])) & (size - 1)
        } else {
            let side = self.resolutions[level] + 1;
            v[0] + side * (v[1] + side * v[2])
        };
        base + idx
    }

    /// Cell and fractional position of `u` (unit cube) at `level`.
    fn locate(&self, level: usize, u: [f64; 3]) -> ([u32; 3], [f64; 3]) {
        let res = self.resolutions[level];
        let mut cell = [0u32; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            // u is in [0, 1], so truncation is floor
            let p = u[a] * res as f64;
            let c = (p as u32).min(res - 1);
            cell[a] = c;
            frac[a] = p - c as f64;
        }
        (cell, frac)
    }

    /// Append the 8 weighted corners per level for `x`, scaled by `weight`.
    /// Returns whether `x` was clamped into the box.
    pub fn footprint(&self, x: [f64; 3], weight: R, out: &mut Vec<Corner<R>>) -> bool {
        let (u, clamped) = self.aabb.normalize(x);
        for level in 0..self.n_levels {
            let (cell, frac) = self.locate(level, u);
            let base = self.offsets[level];
            let hashed = self.hashed[level];
            // per-axis index terms of the low and high vertex
            let (ix, iy, iz, mask) = if hashed {
                let h = |a: usize| [cell[a].wrapping_mul(PRIMES[a]), (cell[a] + 1).wrapping_mul(PRIMES[a])];
                (h(0), h(1), h(2), self.offsets[level + 1] - base - 1)
            } else {
                let side = self.resolutions[level] + 1;
                let d = |a: usize, stride: u32| [cell[a] * stride, (cell[a] + 1) * stride];
                (d(0, 1), d(1, side), d(2, side * side), 0)
            };
            let wx = [1.0 - frac[0], frac[0]];
            let wy = [1.0 - frac[1], frac[1]];
            let wz = [1.0 - frac[2], frac[2]];
            let mut corners = [Corner { row: 0, weight }; 8];
            for (corner, c) in corners.iter_mut().enumerate() {
                let (bx, by, bz) = (corner & 1, corner >> 1 & 1, corner >> 2 & 1);
                let idx = if hashed {
                    (ix[bx] ^ iy[by] ^ iz[bz]) & mask
                } else {
                    ix[bx] + iy[by] + iz[bz]
                };
                c.row = base + idx;
                c.weight = weight * R::from_f64(wx[bx] * wy[by] * wz[bz]);
            }
            out.extend_from_slice(&corners);
        }
        clamped
    }

    /// Accumulate a footprint (8 corners per level, levels in order) into `h`.
    pub fn gather(&self, corners: &[Corner<R>], h: &mut [R]) {
        let f = self.features;
        for (k, level_corners) in corners.chunks_exact(8).enumerate() {
            let out = &mut h[(k % self.n_levels) * f..][..f];
            for c in level_corners {
                let row = &self.table[c.row as usize * f..][..f];
                for j in 0..f {
                    out[j] += c.weight * row[j];
                }
            }
        }
    }

    /// Scatter `dh` through a footprint into a gradient table.
    pub fn scatter(&self, corners: &[Corner<R>], dh: &[R], grad: &mut [R]) {
        let f = self.features;
        for (k, level_corners) in corners.chunks_exact(8).enumerate() {
            let d = &dh[(k % self.n_levels) * f..][..f];
            for c in level_corners {
                let row = &mut grad[c.row as usize * f..][..f];
                for j in 0..f {
                    row[j] += c.weight * d[j];
                }
            }
        }
    }

    pub fn encode(&self, x: [f64; 3]) -> (Vec<R>, bool) {
        let mut corners = Vec::with_capacity(8 * self.n_levels);
        let clamped = self.footprint(x, R::one(), &mut corners);
        let mut h = vec![R::zero(); self.output_dim()];
        self.gather(&corners, &mut h);
        (h, clamped)
    }

    /// Analytic `d encode / d x`, one `[d/dx, d/dy, d/dz]` per output entry.
    pub fn encode_jacobian(&self, x: [f64; 3]) -> Vec<[f64; 3]> {
        let (u, _) = self.aabb.normalize(x);
        let f = self.features;
        let mut jac = vec![[0.0; 3]; self.output_dim()];
        for level in 0..self.n_levels {
            let res = self.resolutions[level] as f64;
            let (cell, frac) = self.locate(level, u);
            for corner in 0..8u32 {
                let mut v = cell;
                let mut dw = [1.0; 3];
                for a in 0..3 {
                    let bit = corner >> a & 1 == 1;
                    if bit {
                        v[a] += 1;
                    }
                    for (b, d) in dw.iter_mut().enumerate() {
                        let factor = if a == b {
                            let span = self.aabb.max[a] - self.aabb.min[a];
                            if bit { res / span } else { -res / span }
                        } else if bit {
                            frac[a]
                        } else {
                            1.0 - frac[a]
                        };
                        *d *= factor;
                    }
                }
                let row = self.vertex_row(level, v) as usize * f;
                for j in 0..f {
                    let t = self.table[row + j].as_f64();
                    for a in 0..3 {
                        jac[level * f + j][a] += dw[a] * t;
                    }
                }
            }
        }
        jac
    }

    /// Table row of grid vertex `v` at `level`, for tests and inspection.
    pub fn row_of(&self, level: usize, v: [u32; 3]) -> usize {
        self.vertex_row(level, v) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid() -> HashGrid<f64> {
        let aabb = Aabb {
            min: [-1.0; 3],
            max: [1.0; 3],
        };
        let mut g = HashGrid::new(4, 2, 10, 2, 32, aabb);
        g.init_uniform(&mut ChaCha8Rng::seed_from_u64(3), 1.0);
        g
    }

    #[test]
    fn resolutions_grow_geometrically_and_coarse_levels_are_dense() {
        let g = grid();
        assert_eq!(g.resolutions, vec![2, 5, 12, 32]);
        assert_eq!(g.hashed, vec![false, false, true, true]);
        assert_eq!(g.offsets[1], 27);
    }

    #[test]
    fn vertex_returns_its_table_entry() {
        let g = grid();
        let level = 1;
        let res = g.resolutions[level] as f64;
        let v = [2u32, 4, 1];
        let x = [
            -1.0 + 2.0 * v[0] as f64 / res,
            -1.0 + 2.0 * v[1] as f64 / res,
            -1.0 + 2.0 * v[2] as f64 / res,
        ];
        let (h, clamped) = g.encode(x);
        assert!(!clamped);
        let row = g.row_of(level, v) * 2;
        for j in 0..2 {
            assert!((h[level * 2 + j] - g.table[row + j]).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_centre_averages_the_corners() {
        let g = grid();
        let level = 0;
        // level 0 has 2 cells per axis; centre of cell (1, 0, 1)
        let x = [0.5, -0.5, 0.5];
        let (h, _) = g.encode(x);
        for j in 0..2 {
            let mut sum = 0.0;
            for dz in 0..2 {
                for dy in 0..2 {
                    for dx in 0..2 {
                        sum += g.table[g.row_of(level, [1 + dx, dy, 1 + dz]) * 2 + j];
                    }
                }
            }
            assert!((h[j] - sum / 8.0).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let g = grid();
        let x = [0.13, -0.41, 0.77];
        let jac = g.encode_jacobian(x);
        let cell = 2.0 / *g.resolutions.last().unwrap() as f64;
        let step = 1e-4 * cell;
        for a in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[a] += step;
            xm[a] -= step;
            let (hp, _) = g.encode(xp);
            let (hm, _) = g.encode(xm);
            for k in 0..hp.len() {
                let fd = (hp[k] - hm[k]) / (2.0 * step);
                let an = jac[k][a];
                assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-3), "entry {k} axis {a}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn out_of_box_points_are_clamped_and_flagged() {
        let g = grid();
        let (h_out, clamped) = g.encode([3.0, 0.0, 0.0]);
        let (h_edge, edge_flag) = g.encode([1.0, 0.0, 0.0]);
        assert!(clamped && !edge_flag);
        assert_eq!(h_out, h_edge);
    }
}
