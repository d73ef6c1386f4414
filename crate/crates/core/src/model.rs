//! Discretized model spaces: the k-torus with a quasimetric, Lebesgue measure
//! and a finest grid of 2^(J k) cells.
//!
//! Cells are indexed in Z-order (bit-interleaved coordinates, axis 0 in the
//! lowest bit of each group), so every dyadic cube owns a contiguous index
//! range. Exact geometry is done in half-cell units: the integer `u` stands for
//! the coordinate `u / 2^(J+1)`, which places every cell center and every cube
//! midpoint on the integer lattice.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::region::Region;

/// Largest supported dimension.
pub const MAX_DIM: usize = 4;
/// Width of a cell index in bits.
pub const INDEX_BITS: u32 = 30;

/// Exact measure of a region, as a fraction of the whole torus.
pub type Measure = Ratio<u64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    /// Max over axes of the torus distance.
    TorusSup,
    /// Square of the torus distance, one-dimensional only.
    TorusSquared,
}

impl fmt::Display for SpaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpaceKind::TorusSup => "torus_sup",
            SpaceKind::TorusSquared => "torus_squared",
        })
    }
}

impl FromStr for SpaceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "torus_sup" | "sup" | "torussup" => Ok(SpaceKind::TorusSup),
            "torus_squared" | "squared" | "torussquared" => Ok(SpaceKind::TorusSquared),
            other => Err(Error::InvalidModel(format!("unknown space kind `{other}`"))),
        }
    }
}

/// A lattice point in half-cell units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridPoint {
    pub(crate) units: [u64; MAX_DIM],
}

impl GridPoint {
    pub fn units(&self) -> &[u64; MAX_DIM] {
        &self.units
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpaceModel {
    kind: SpaceKind,
    dim: usize,
    depth: u32,
    quasi_constant: f64,
    doubling_constant: f64,
    level_scale: f64,
}

impl SpaceModel {
    /// Builds the model and fills in its constants.
    pub fn new(kind: SpaceKind, dim: usize, depth: u32) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidModel(format!(
                "dimension {dim} outside 1..={MAX_DIM}"
            )));
        }
        if depth == 0 {
            return Err(Error::InvalidModel("depth must be at least 1".into()));
        }
        if kind == SpaceKind::TorusSquared && dim != 1 {
            return Err(Error::InvalidModel(
                "the squared torus distance is only defined for k = 1".into(),
            ));
        }
        let needed = depth.saturating_mul(dim as u32);
        if needed > INDEX_BITS {
            return Err(Error::DepthTooLarge {
                depth,
                dim,
                needed,
                limit: INDEX_BITS,
            });
        }
        let (quasi_constant, doubling_constant, level_scale) = match kind {
            SpaceKind::TorusSup => (1.0, (1u64 << dim) as f64, 0.5),
            SpaceKind::TorusSquared => (2.0, 2.0, 0.25),
        };
        Ok(Self {
            kind,
            dim,
            depth,
            quasi_constant,
            doubling_constant,
            level_scale,
        })
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Quasitriangle constant K_X.
    pub fn k_x(&self) -> f64 {
        self.quasi_constant
    }

    /// Doubling constant C_d.
    pub fn c_d(&self) -> f64 {
        self.doubling_constant
    }

    /// Level scale factor q.
    pub fn q(&self) -> f64 {
        self.level_scale
    }

    /// q^n.
    pub fn q_pow(&self, n: i64) -> f64 {
        self.level_scale.powi(n as i32)
    }

    /// Number of cells along one axis.
    pub fn side_cells(&self) -> u64 {
        1u64 << self.depth
    }

    pub fn cell_count(&self) -> usize {
        1usize << (self.depth as usize * self.dim)
    }

    pub fn cell_measure(&self) -> Measure {
        Ratio::new(1, self.cell_count() as u64)
    }

    /// Exact measure of `count` cells.
    pub fn measure_of(&self, count: usize) -> Measure {
        Ratio::new(count as u64, self.cell_count() as u64)
    }

    /// Z-order index of the cell with the given coordinates.
    pub fn cell_index(&self, coords: &[u32]) -> u32 {
        interleave(coords, self.dim, self.depth)
    }

    /// Coordinates of a cell.
    pub fn cell_coords(&self, index: u32) -> [u32; MAX_DIM] {
        deinterleave(index, self.dim, self.depth)
    }

    /// Center of a cell.
    pub fn cell_center(&self, index: u32) -> GridPoint {
        let c = self.cell_coords(index);
        let mut units = [0u64; MAX_DIM];
        for a in 0..self.dim {
            units[a] = 2 * c[a] as u64 + 1;
        }
        GridPoint { units }
    }

    /// Real coordinates of a lattice point.
    pub fn point_coords(&self, p: &GridPoint) -> Vec<f64> {
        let scale = (2.0f64).powi(-(self.depth as i32) - 1);
        p.units[..self.dim].iter().map(|&u| u as f64 * scale).collect()
    }

    /// Circle length in half-cell units.
    pub(crate) fn circle_units(&self) -> u64 {
        2u64 << self.depth
    }

    /// Torus distance between two coordinates along one axis, in half-cell units.
    pub(crate) fn axis_gap(&self, a: u64, b: u64) -> u64 {
        let l = self.circle_units();
        let d = a.abs_diff(b) % l;
        d.min(l - d)
    }

    /// Value of d for a largest axis gap of `units` half-cells.
    pub fn metric(&self, units: u64) -> f64 {
        let t = units as f64 * (2.0f64).powi(-(self.depth as i32) - 1);
        match self.kind {
            SpaceKind::TorusSup => t,
            SpaceKind::TorusSquared => t * t,
        }
    }

    /// Diameter of one finest cell in d, the slack carried by discretized checks.
    pub fn cell_diameter(&self) -> f64 {
        self.metric(2)
    }

    /// Upper bound on the axis gap (half-cell units) of any point at distance < `radius`.
    pub(crate) fn reach_units(&self, radius: f64) -> u64 {
        if !(radius > 0.0) {
            return 0;
        }
        let t = match self.kind {
            SpaceKind::TorusSup => radius,
            SpaceKind::TorusSquared => radius.sqrt(),
        };
        let u = t * (2u64 << self.depth) as f64;
        if u >= self.circle_units() as f64 {
            self.circle_units()
        } else {
            u.ceil() as u64 + 1
        }
    }

    /// d between two lattice points.
    pub fn point_distance(&self, x: &GridPoint, y: &GridPoint) -> f64 {
        let gap = (0..self.dim)
            .map(|a| self.axis_gap(x.units[a], y.units[a]))
            .max()
            .unwrap_or(0);
        self.metric(gap)
    }

    /// d between two points of the torus with coordinates in [0, 1).
    pub fn quasidistance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        for p in [x, y] {
            if p.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: p.len(),
                });
            }
            if let Some(&bad) = p.iter().find(|v| !(0.0..1.0).contains(*v)) {
                return Err(Error::CoordinateOutOfRange(bad));
            }
        }
        let t = x
            .iter()
            .zip(y)
            .map(|(a, b)| {
                let d = (a - b).abs();
                d.min(1.0 - d)
            })
            .fold(0.0, f64::max);
        Ok(match self.kind {
            SpaceKind::TorusSup => t,
            SpaceKind::TorusSquared => t * t,
        })
    }

    /// Cells whose centers lie at distance < `radius` from `center` (open ball).
    pub fn ball(&self, center: &GridPoint, radius: f64) -> Region {
        let per_axis: Vec<Vec<u32>> = (0..self.dim)
            .map(|a| {
                self.axis_cells_where(center.units[a], radius, |gap| self.metric(gap) < radius)
            })
            .collect();
        self.product_region(&per_axis)
    }

    /// Cell coordinates along one axis near `anchor` whose gap satisfies `keep`.
    fn axis_cells_where(&self, anchor: u64, radius: f64, keep: impl Fn(u64) -> bool) -> Vec<u32> {
        let n = self.side_cells();
        let reach = self.reach_units(radius);
        let mut out = Vec::new();
        if reach >= self.circle_units() / 2 {
            for x in 0..n {
                if keep(self.axis_gap(2 * x + 1, anchor)) {
                    out.push(x as u32);
                }
            }
            return out;
        }
        let lo = anchor as i64 - reach as i64 - 1;
        let hi = anchor as i64 + reach as i64 + 1;
        let first = lo.div_euclid(2);
        let last = hi.div_euclid(2);
        for x in first..=last {
            let x = x.rem_euclid(n as i64) as u64;
            if keep(self.axis_gap(2 * x + 1, anchor)) {
                out.push(x as u32);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Region of all cells whose coordinate along each axis lies in the given list.
    pub(crate) fn product_region(&self, per_axis: &[Vec<u32>]) -> Region {
        if per_axis.iter().any(|v| v.is_empty()) {
            return Region::new();
        }
        let total: usize = per_axis.iter().map(Vec::len).product();
        let mut cells = Vec::with_capacity(total);
        let mut idx = vec![0usize; self.dim];
        let mut coords = [0u32; MAX_DIM];
        loop {
            for a in 0..self.dim {
                coords[a] = per_axis[a][idx[a]];
            }
            cells.push(self.cell_index(&coords[..self.dim]));
            let mut a = 0;
            loop {
                if a == self.dim {
                    return Region::from_cells(cells);
                }
                idx[a] += 1;
                if idx[a] < per_axis[a].len() {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
        }
    }

    /// Checks the quasitriangle inequality, symmetry and identity of
    /// indiscernibles on cell centers. Exhaustive when the number of triples
    /// is at most 2^24, otherwise `samples` random triples.
    pub fn check_quasitriangle(&self, samples: usize, seed: u64) -> TriangleCheck {
        let n = self.cell_count() as u64;
        let exhaustive = n <= 256;
        let mut check = TriangleCheck {
            exhaustive,
            triples: 0,
            violations: 0,
            worst_ratio: 0.0,
        };
        let centers: Vec<GridPoint> = if exhaustive {
            (0..n as u32).map(|i| self.cell_center(i)).collect()
        } else {
            Vec::new()
        };
        let test = |x: &GridPoint, y: &GridPoint, z: &GridPoint, check: &mut TriangleCheck| {
            let dxy = self.point_distance(x, y);
            let dxz = self.point_distance(x, z);
            let dzy = self.point_distance(z, y);
            check.triples += 1;
            let mut bad = dxy > self.k_x() * (dxz + dzy);
            bad |= dxy != self.point_distance(y, x);
            bad |= (dxy == 0.0) != (x == y);
            if bad {
                check.violations += 1;
            }
            if dxz + dzy > 0.0 {
                check.worst_ratio = check.worst_ratio.max(dxy / (dxz + dzy));
            }
        };
        if exhaustive {
            for x in &centers {
                for y in &centers {
                    for z in &centers {
                        test(x, y, z, &mut check);
                    }
                }
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..samples {
                let x = self.cell_center(rng.gen_range(0..n) as u32);
                let y = self.cell_center(rng.gen_range(0..n) as u32);
                let z = self.cell_center(rng.gen_range(0..n) as u32);
                test(&x, &y, &z, &mut check);
            }
        }
        check
    }

    /// Checks |B(x, 2r)| <= C_d |B(x, r + delta)| for r in {2^-J, ..., 1/2},
    /// delta the one-cell diameter, balls measured by counting cell centers.
    /// Every center is scanned when the grid has at most 1024 cells; beyond
    /// that the count at one center is used, which translation invariance of
    /// the torus makes exact for all centers.
    pub fn check_doubling(&self) -> DoublingCheck {
        let n = self.cell_count();
        let brute = n <= 1024;
        let radii: Vec<f64> = (1..=self.depth).map(|j| (0.5f64).powi(j as i32)).collect();
        let delta = self.cell_diameter();
        let mut check = DoublingCheck {
            centers: if brute { n } else { 1 },
            radii: radii.len(),
            violations: 0,
            worst_ratio: 0.0,
        };
        let count = |x: &GridPoint, r: f64| -> usize {
            if brute {
                (0..n as u32)
                    .filter(|&c| self.point_distance(x, &self.cell_center(c)) < r)
                    .count()
            } else {
                self.ball(x, r).len()
            }
        };
        for c in 0..check.centers as u32 {
            let x = self.cell_center(c);
            for &r in &radii {
                let big = count(&x, 2.0 * r);
                let small = count(&x, r + delta);
                let ratio = big as f64 / small as f64;
                check.worst_ratio = check.worst_ratio.max(ratio);
                if big as f64 > self.c_d() * small as f64 {
                    check.violations += 1;
                }
            }
        }
        check
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TriangleCheck {
    pub exhaustive: bool,
    pub triples: u64,
    pub violations: u64,
    /// Largest observed d(x,y) / (d(x,z) + d(z,y)); must not exceed K_X.
    pub worst_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DoublingCheck {
    pub centers: usize,
    pub radii: usize,
    pub violations: usize,
    pub worst_ratio: f64,
}

fn interleave(coords: &[u32], dim: usize, depth: u32) -> u32 {
    if dim == 1 {
        return coords[0];
    }
    let mut out = 0u32;
    for b in 0..depth {
        for (a, &c) in coords.iter().enumerate().take(dim) {
            out |= ((c >> b) & 1) << (b as usize * dim + a);
        }
    }
    out
}

fn deinterleave(index: u32, dim: usize, depth: u32) -> [u32; MAX_DIM] {
    let mut c = [0u32; MAX_DIM];
    if dim == 1 {
        c[0] = index;
        return c;
    }
    for b in 0..depth {
        for (a, ca) in c.iter_mut().enumerate().take(dim) {
            *ca |= ((index >> (b as usize * dim + a)) & 1) << b;
        }
    }
    c
}

/// Z-order code of `coords` using `bits` bits per axis.
pub(crate) fn morton(coords: &[u32], dim: usize, bits: u32) -> u32 {
    interleave(coords, dim, bits)
}
