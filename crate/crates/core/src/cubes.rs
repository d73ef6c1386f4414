//! Dyadic cubes on the torus, the level-scaled neighbourhoods (diamonds) and
//! boundary layers, and an exhaustive verifier of the cube-system axioms.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{morton, GridPoint, Measure, SpaceKind, SpaceModel, MAX_DIM};
use crate::region::Region;

/// Half-open box of side 2^-level: the product of [c_i 2^-n, (c_i + 1) 2^-n).
///
/// Ordering is lexicographic in (level, coords).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cube {
    level: u32,
    coords: [u32; MAX_DIM],
    dim: u8,
}

impl Cube {
    pub fn new(level: u32, coords: &[u32]) -> Result<Self> {
        if coords.is_empty() || coords.len() > MAX_DIM {
            return Err(Error::InvalidCube(format!(
                "{} coordinates, expected 1..={MAX_DIM}",
                coords.len()
            )));
        }
        if level > 30 {
            return Err(Error::InvalidCube(format!("level {level} too deep")));
        }
        let mut c = [0u32; MAX_DIM];
        for (a, &x) in coords.iter().enumerate() {
            if (x as u64) >= (1u64 << level) {
                return Err(Error::InvalidCube(format!(
                    "coordinate {x} outside [0, 2^{level})"
                )));
            }
            c[a] = x;
        }
        Ok(Self {
            level,
            coords: c,
            dim: coords.len() as u8,
        })
    }

    /// The whole torus, the unique cube of level 0.
    pub fn root(dim: usize) -> Self {
        Self {
            level: 0,
            coords: [0; MAX_DIM],
            dim: dim as u8,
        }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn coords(&self) -> &[u32] {
        &self.coords[..self.dim as usize]
    }

    pub fn parent(&self) -> Option<Cube> {
        self.ancestor(self.level.checked_sub(1)?)
    }

    /// The cube of level `level` containing this one.
    pub fn ancestor(&self, level: u32) -> Option<Cube> {
        if level > self.level {
            return None;
        }
        let shift = self.level - level;
        let mut out = *self;
        out.level = level;
        for c in out.coords.iter_mut().take(self.dim()) {
            *c >>= shift;
        }
        Some(out)
    }

    /// Children in Z-order: bit `a` of the child number selects the upper half along axis `a`.
    pub fn children(&self) -> impl Iterator<Item = Cube> + '_ {
        let dim = self.dim();
        (0..1u32 << dim).map(move |e| {
            let mut child = *self;
            child.level += 1;
            for a in 0..dim {
                child.coords[a] = 2 * self.coords[a] + ((e >> a) & 1);
            }
            child
        })
    }

    /// Whether `other` lies inside this cube (non-strict).
    pub fn contains(&self, other: &Cube) -> bool {
        other.ancestor(self.level) == Some(*self)
    }

    pub fn strictly_contains(&self, other: &Cube) -> bool {
        other.level > self.level && self.contains(other)
    }

    /// Translation by `m` cubes of the same level along `axis`, with wrap.
    pub fn translate(&self, axis: usize, m: u64) -> Cube {
        let mut out = *self;
        let n = 1u64 << self.level;
        out.coords[axis] = ((self.coords[axis] as u64 + m % n) % n) as u32;
        out
    }

    /// Position in the lexicographic order of its level.
    pub fn rank(&self) -> usize {
        self.coords()
            .iter()
            .fold(0usize, |acc, &c| (acc << self.level) | c as usize)
    }

    fn code(&self) -> u32 {
        morton(self.coords(), self.dim(), self.level)
    }
}

impl fmt::Debug for Cube {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Cube {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}(", self.level)?;
        for (i, c) in self.coords().iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str(")")
    }
}

#[derive(Serialize, Deserialize)]
struct CubeRepr {
    level: u32,
    coords: Vec<u32>,
}

impl Serialize for Cube {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CubeRepr {
            level: self.level,
            coords: self.coords().to_vec(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Cube {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = CubeRepr::deserialize(d)?;
        Cube::new(r.level, &r.coords).map_err(serde::de::Error::custom)
    }
}

/// Constants of the cube system: ball sandwich radii, boundary-layer
/// constant and exponent, and the number of children per cube.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CubeConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub eta: f64,
    pub children: usize,
}

/// The dyadic cubes of a model space, levels 0 through J.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DyadicSystem {
    model: SpaceModel,
    constants: CubeConstants,
}

/// Builds the canonical cube system of a model.
pub fn build_system(model: SpaceModel) -> DyadicSystem {
    DyadicSystem::new(model)
}

impl DyadicSystem {
    pub fn new(model: SpaceModel) -> Self {
        let k = model.dim();
        let constants = match model.kind() {
            SpaceKind::TorusSup => CubeConstants {
                c1: 0.5,
                c2: 1.0,
                c3: 2.0 * k as f64,
                eta: 1.0,
                children: 1 << k,
            },
            // sides 2^-n against q^n = 4^-n: the square root of d is the sup case
            SpaceKind::TorusSquared => CubeConstants {
                c1: 0.25,
                c2: 1.0,
                c3: 2.0,
                eta: 0.5,
                children: 2,
            },
        };
        Self { model, constants }
    }

    pub fn model(&self) -> &SpaceModel {
        &self.model
    }

    pub fn constants(&self) -> &CubeConstants {
        &self.constants
    }

    pub fn depth(&self) -> u32 {
        self.model.depth()
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Rejects cubes of the wrong dimension or deeper than the grid.
    pub fn check_cube(&self, c: &Cube) -> Result<()> {
        if c.dim() != self.dim() || c.level > self.depth() {
            return Err(Error::InvalidCube(format!(
                "{c} does not belong to a depth-{} system in dimension {}",
                self.depth(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// All cubes of one level in lexicographic order.
    pub fn cubes_at(&self, level: u32) -> impl Iterator<Item = Cube> + '_ {
        let dim = self.dim();
        let per_axis = 1u64 << level;
        let total = per_axis.pow(dim as u32);
        (0..total).map(move |mut i| {
            let mut coords = [0u32; MAX_DIM];
            for a in (0..dim).rev() {
                coords[a] = (i % per_axis) as u32;
                i /= per_axis;
            }
            Cube {
                level,
                coords,
                dim: dim as u8,
            }
        })
    }

    /// Contiguous range of cell indices covered by a cube.
    pub fn cell_range(&self, c: &Cube) -> Range<u32> {
        let shift = (self.depth() - c.level) as usize * self.dim();
        let code = c.code() as u64;
        (code << shift) as u32..((code + 1) << shift) as u32
    }

    pub fn cells(&self, c: &Cube) -> Region {
        Region::from_range(self.cell_range(c))
    }

    /// Number of finest cells in a cube.
    pub fn cell_count_of(&self, c: &Cube) -> usize {
        1usize << ((self.depth() - c.level) as usize * self.dim())
    }

    pub fn measure(&self, c: &Cube) -> Measure {
        self.model.measure_of(self.cell_count_of(c))
    }

    /// The level-`level` cube containing a cell.
    pub fn cube_of_cell(&self, cell: u32, level: u32) -> Cube {
        let xs = self.model.cell_coords(cell);
        let mut coords = [0u32; MAX_DIM];
        for a in 0..self.dim() {
            coords[a] = xs[a] >> (self.depth() - level);
        }
        Cube {
            level,
            coords,
            dim: self.dim() as u8,
        }
    }

    /// Midpoint m_A of a cube.
    pub fn center(&self, c: &Cube) -> GridPoint {
        let s = 1u64 << (self.depth() - c.level);
        let mut units = [0u64; MAX_DIM];
        for a in 0..self.dim() {
            units[a] = 2 * c.coords[a] as u64 * s + s;
        }
        GridPoint { units }
    }

    /// Axis-`a` extent of a cube in half-cell units, or None when it spans the circle.
    fn interval(&self, c: &Cube, a: usize) -> Option<(u64, u64)> {
        if c.level == 0 {
            return None;
        }
        let s = 2u64 << (self.depth() - c.level);
        let lo = c.coords[a] as u64 * s;
        Some((lo, lo + s))
    }

    /// Axis gap between a coordinate and a cube's extent, half-cell units.
    fn gap_to(&self, c: &Cube, a: usize, p: u64) -> u64 {
        match self.interval(c, a) {
            None => 0,
            Some((lo, hi)) if lo <= p && p < hi => 0,
            Some((lo, hi)) => self.model.axis_gap(p, lo).min(self.model.axis_gap(p, hi)),
        }
    }

    /// d(A, y) for a lattice point y.
    pub fn set_distance(&self, c: &Cube, y: &GridPoint) -> f64 {
        let gap = (0..self.dim())
            .map(|a| self.gap_to(c, a, y.units[a]))
            .max()
            .unwrap_or(0);
        self.model.metric(gap)
    }

    /// Axis coordinates of cells near a cube whose gap passes `keep`.
    fn axis_cells_near(&self, c: &Cube, a: usize, radius: f64) -> Vec<u32> {
        let n = self.model.side_cells() as i64;
        let keep = |x: i64| self.model.metric(self.gap_to(c, a, 2 * x as u64 + 1)) < radius;
        let Some((lo, hi)) = self.interval(c, a) else {
            return (0..n).filter(|&x| keep(x)).map(|x| x as u32).collect();
        };
        let reach = self.model.reach_units(radius) as i64;
        let first = (lo as i64 - reach - 1).div_euclid(2);
        let last = (hi as i64 + reach + 1).div_euclid(2);
        let mut out: Vec<u32> = if last - first + 1 >= n {
            (0..n).filter(|&x| keep(x)).map(|x| x as u32).collect()
        } else {
            (first..=last)
                .map(|x| x.rem_euclid(n))
                .filter(|&x| keep(x))
                .map(|x| x as u32)
                .collect()
        };
        out.sort_unstable();
        out.dedup();
        out
    }

    /// r◇A: cells whose center lies at set distance < r q^(lev A) from A.
    pub fn diamond(&self, c: &Cube, r: f64) -> Region {
        let radius = r * self.model.q_pow(c.level as i64);
        let per_axis: Vec<Vec<u32>> = (0..self.dim())
            .map(|a| self.axis_cells_near(c, a, radius))
            .collect();
        self.model.product_region(&per_axis)
    }

    /// Open ball around a lattice point.
    pub fn ball(&self, center: &GridPoint, radius: f64) -> Region {
        self.model.ball(center, radius)
    }

    /// Cells of a cube enumerated from coordinates, independent of the index-range formula.
    pub fn cells_by_coords(&self, c: &Cube) -> Region {
        let s = 1u32 << (self.depth() - c.level);
        let per_axis: Vec<Vec<u32>> = (0..self.dim())
            .map(|a| (c.coords[a] * s..(c.coords[a] + 1) * s).collect())
            .collect();
        self.model.product_region(&per_axis)
    }

    /// Per-cell exit distance (half-cell units) from a cube to its complement,
    /// or None for the level-0 cube, whose complement is empty.
    fn exit_units(&self, c: &Cube) -> Option<Vec<(u32, u64)>> {
        if c.level == 0 {
            return None;
        }
        let s = 1u32 << (self.depth() - c.level);
        let per_axis: Vec<Vec<(u32, u64)>> = (0..self.dim())
            .map(|a| {
                let (lo, hi) = self.interval(c, a).expect("level >= 1");
                (c.coords[a] * s..(c.coords[a] + 1) * s)
                    .map(|x| {
                        let p = 2 * x as u64 + 1;
                        (x, (p - lo).min(hi - p))
                    })
                    .collect()
            })
            .collect();
        let mut out = Vec::with_capacity(self.cell_count_of(c));
        let mut idx = vec![0usize; self.dim()];
        let mut coords = [0u32; MAX_DIM];
        loop {
            let mut e = u64::MAX;
            for a in 0..self.dim() {
                let (x, ea) = per_axis[a][idx[a]];
                coords[a] = x;
                e = e.min(ea);
            }
            out.push((self.model.cell_index(&coords[..self.dim()]), e));
            let mut a = 0;
            loop {
                if a == self.dim() {
                    out.sort_unstable();
                    return Some(out);
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

    /// ∂_t A: cells of A whose center x has d(x, X \ A) <= t q^(lev A).
    pub fn boundary_layer(&self, c: &Cube, t: f64) -> Region {
        let bound = t * self.model.q_pow(c.level as i64);
        match self.exit_units(c) {
            None => Region::new(),
            Some(cells) => cells
                .into_iter()
                .filter(|&(_, e)| self.model.metric(e) <= bound)
                .map(|(cell, _)| cell)
                .collect(),
        }
    }

    /// Checks r◇A ⊂ B(m_A, K_X (C_2 + r) q^(lev A)) cell by cell.
    pub fn diamond_in_ball(&self, c: &Cube, r: f64) -> InclusionCheck {
        let diamond = self.diamond(c, r);
        let radius =
            self.model.k_x() * (self.constants.c2 + r) * self.model.q_pow(c.level as i64);
        let ball = self.ball(&self.center(c), radius);
        InclusionCheck {
            holds: diamond.is_subset(&ball),
            witness: diamond.first_outside(&ball),
        }
    }

    /// If r1◇A1 and r2◇A2 meet, checks r2◇A2 ⊂ r◇A1 with
    /// r = 2 K_X^3 (C_2 + r2) q^(lev A2 - lev A1) + K_X r1.
    /// The arguments are swapped when A2 is coarser than A1.
    pub fn diamond_intersection_bound(
        &self,
        a1: &Cube,
        a2: &Cube,
        r1: f64,
        r2: f64,
    ) -> DiamondIntersection {
        if a2.level < a1.level {
            return self.diamond_intersection_bound(a2, a1, r2, r1);
        }
        let k = self.model.k_x();
        let d1 = self.diamond(a1, r1);
        let d2 = self.diamond(a2, r2);
        let r = 2.0 * k.powi(3) * (self.constants.c2 + r2)
            * self.model.q_pow(a2.level as i64 - a1.level as i64)
            + k * r1;
        let intersects = d1.intersects(&d2);
        let inclusion_verified = intersects && d2.is_subset(&self.diamond(a1, r));
        DiamondIntersection {
            intersects,
            r,
            inclusion_verified,
        }
    }

    /// Exhaustive check of the eight cube-system properties at the model depth.
    pub fn verify_axioms(&self) -> AxiomReport {
        AxiomVerifier::new(self).run()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InclusionCheck {
    pub holds: bool,
    pub witness: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiamondIntersection {
    pub intersects: bool,
    pub r: f64,
    /// Only evaluated when the diamonds intersect; false otherwise.
    pub inclusion_verified: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyCheck {
    pub property: String,
    pub checked: u64,
    pub violations: u64,
    pub witness: Option<String>,
}

impl PropertyCheck {
    fn new(property: &str) -> Self {
        Self {
            property: property.to_string(),
            checked: 0,
            violations: 0,
            witness: None,
        }
    }

    fn record(&mut self, ok: bool, witness: impl FnOnce() -> String) {
        self.checked += 1;
        if !ok {
            self.violations += 1;
            if self.witness.is_none() {
                self.witness = Some(witness());
            }
        }
    }
}

/// Constants observed during verification.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObservedConstants {
    /// Largest C_1 for which every inner ball stays inside its cube.
    pub c1_max: f64,
    /// Largest d(m_A, x)/q^n over cells x of A; any C_2 above it works.
    pub c2_min: f64,
    /// Largest |∂_t A| / (t^η |A|) with the one-cell slack removed.
    pub boundary_ratio: f64,
    pub max_children: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AxiomReport {
    pub kind: SpaceKind,
    pub dim: usize,
    pub depth: u32,
    pub constants: CubeConstants,
    pub cube_count: u64,
    pub properties: Vec<PropertyCheck>,
    pub observed: ObservedConstants,
    pub ok: bool,
}

struct AxiomVerifier<'a> {
    sys: &'a DyadicSystem,
    /// owner[n][cell] = rank of the level-n cube holding the cell, built from coordinates.
    owner: Vec<Vec<u32>>,
}

impl<'a> AxiomVerifier<'a> {
    fn new(sys: &'a DyadicSystem) -> Self {
        Self {
            sys,
            owner: Vec::new(),
        }
    }

    fn run(mut self) -> AxiomReport {
        let sys = self.sys;
        let model = sys.model();
        let depth = sys.depth();
        let cells = model.cell_count();
        let consts = sys.constants().clone();

        let mut partition = PropertyCheck::new("partition");
        for n in 0..=depth {
            let mut owner = vec![u32::MAX; cells];
            for c in sys.cubes_at(n) {
                let by_coords = sys.cells_by_coords(&c);
                partition.record(by_coords == sys.cells(&c), || {
                    format!("{c}: index range disagrees with coordinates")
                });
                let rank = c.rank() as u32;
                for &x in by_coords.cells() {
                    let free = owner[x as usize] == u32::MAX;
                    partition.record(free, || format!("cell {x} covered twice at level {n}"));
                    owner[x as usize] = rank;
                }
            }
            let uncovered = owner.iter().position(|&o| o == u32::MAX);
            partition.record(uncovered.is_none(), || {
                format!("cell {} uncovered at level {n}", uncovered.unwrap_or(0))
            });
            self.owner.push(owner);
        }

        let mut nested = PropertyCheck::new("nested");
        let mut ancestor = PropertyCheck::new("unique_ancestor");
        let mut sandwich = PropertyCheck::new("ball_sandwich");
        let mut boundary = PropertyCheck::new("boundary_layer");
        let mut children = PropertyCheck::new("child_count");
        let mut cover = PropertyCheck::new("children_cover");
        let mut observed = ObservedConstants {
            c1_max: f64::INFINITY,
            c2_min: 0.0,
            boundary_ratio: 0.0,
            max_children: 0,
        };
        let mut cube_count = 0u64;

        for n in 0..=depth {
            let qn = model.q_pow(n as i64);
            for c in sys.cubes_at(n) {
                cube_count += 1;
                let own = sys.cells_by_coords(&c);
                let count = own.len();

                for k in 0..n {
                    let anc = c.ancestor(k).expect("k < n");
                    let rank = anc.rank() as u32;
                    let ok = own
                        .cells()
                        .iter()
                        .all(|&x| self.owner[k as usize][x as usize] == rank);
                    ancestor.record(ok, || format!("{c} not inside a single level-{k} cube"));
                    if k + 1 == n {
                        nested.record(ok, || format!("{c} not inside its parent {anc}"));
                    }
                }

                let center = sys.center(&c);
                let rank = c.rank() as u32;
                let inner = sys.ball(&center, consts.c1 * qn);
                let inside = inner
                    .cells()
                    .iter()
                    .all(|&x| self.owner[n as usize][x as usize] == rank);
                sandwich.record(inside, || format!("B(m_A, C1 q^n) leaves {c}"));
                let mut far = 0.0f64;
                for &x in own.cells() {
                    far = far.max(model.point_distance(&center, &model.cell_center(x)));
                }
                sandwich.record(far < consts.c2 * qn, || format!("{c} leaves B(m_A, C2 q^n)"));
                observed.c2_min = observed.c2_min.max(far / qn);
                let window = sys.ball(&center, 2.0 * consts.c2 * qn);
                let nearest_out = window
                    .cells()
                    .iter()
                    .filter(|&&x| self.owner[n as usize][x as usize] != rank)
                    .map(|&x| model.point_distance(&center, &model.cell_center(x)))
                    .fold(f64::INFINITY, f64::min);
                observed.c1_max = observed.c1_max.min(nearest_out / qn);

                if let Some(exits) = sys.exit_units(&c) {
                    let slack = 1.0;
                    for j in 0..=(depth - n) {
                        let t = (0.5f64).powi(j as i32);
                        let bound = t * qn;
                        let layer = exits
                            .iter()
                            .filter(|&&(_, e)| model.metric(e) <= bound)
                            .count();
                        let allowed = consts.c3 * t.powf(consts.eta) * count as f64;
                        boundary.record((layer as f64) < allowed + slack, || {
                            format!("|∂_t {c}| = {layer} cells at t = {t}")
                        });
                        let ratio = (layer as f64 - slack).max(0.0)
                            / (t.powf(consts.eta) * count as f64);
                        observed.boundary_ratio = observed.boundary_ratio.max(ratio);
                    }
                }

                if n < depth {
                    let mut kids: Vec<u32> = own
                        .cells()
                        .iter()
                        .map(|&x| self.owner[n as usize + 1][x as usize])
                        .collect();
                    kids.sort_unstable();
                    kids.dedup();
                    observed.max_children = observed.max_children.max(kids.len());
                    children.record(kids.len() <= consts.children, || {
                        format!("{c} has {} children", kids.len())
                    });
                    for child in c.children() {
                        let contained = sys
                            .cells_by_coords(&child)
                            .cells()
                            .iter()
                            .all(|&x| self.owner[n as usize][x as usize] == rank);
                        cover.record(
                            contained && kids.binary_search(&(child.rank() as u32)).is_ok(),
                            || format!("child {child} of {c} misplaced"),
                        );
                    }
                }
            }
        }

        let mut countable = PropertyCheck::new("countable");
        countable.record(true, String::new);

        let properties = vec![
            partition, nested, ancestor, sandwich, boundary, countable, children, cover,
        ];
        let ok = properties.iter().all(|p| p.violations == 0);
        AxiomReport {
            kind: model.kind(),
            dim: model.dim(),
            depth,
            constants: consts,
            cube_count,
            properties,
            observed,
            ok,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys(kind: SpaceKind, dim: usize, depth: u32) -> DyadicSystem {
        DyadicSystem::new(SpaceModel::new(kind, dim, depth).unwrap())
    }

    #[test]
    fn cube_basics() {
        let c = Cube::new(3, &[5]).unwrap();
        assert_eq!(c.parent(), Some(Cube::new(2, &[2]).unwrap()));
        assert_eq!(c.ancestor(0), Some(Cube::root(1)));
        assert!(Cube::root(1).strictly_contains(&c));
        assert!(!c.strictly_contains(&c));
        assert!(Cube::new(2, &[4]).is_err());
        let kids: Vec<Cube> = Cube::new(1, &[1, 0]).unwrap().children().collect();
        assert_eq!(kids.len(), 4);
        assert_eq!(kids[1].coords(), &[3, 0]);
        assert_eq!(kids[2].coords(), &[2, 1]);
    }

    #[test]
    fn cube_json_round_trip() {
        let c = Cube::new(4, &[3, 9]).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(s, r#"{"level":4,"coords":[3,9]}"#);
        assert_eq!(serde_json::from_str::<Cube>(&s).unwrap(), c);
        assert!(serde_json::from_str::<Cube>(r#"{"level":1,"coords":[2]}"#).is_err());
    }

    #[test]
    fn cube_measure_and_ranges() {
        let s = sys(SpaceKind::TorusSup, 2, 4);
        let c = Cube::new(2, &[1, 3]).unwrap();
        assert_eq!(s.measure(&c), Measure::new(1, 16));
        assert_eq!(s.cells(&c), s.cells_by_coords(&c));
        let ranks: Vec<usize> = s.cubes_at(2).map(|c| c.rank()).collect();
        assert_eq!(ranks, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn diamond_example_interval() {
        let s = sys(SpaceKind::TorusSup, 1, 10);
        let a = Cube::new(3, &[0]).unwrap();
        let d = s.diamond(&a, 1.0);
        assert_eq!(d.measure(s.model()), Measure::new(3, 8));
        let expect: Region = (896..1024).chain(0..256).collect();
        assert_eq!(d, expect);
    }

    #[test]
    fn tiny_diamond_is_the_cube() {
        let s = sys(SpaceKind::TorusSup, 2, 6);
        let a = Cube::new(3, &[2, 7]).unwrap();
        let d = s.diamond(&a, (0.5f64).powi(6));
        assert_eq!(d, s.cells(&a));
    }

    #[test]
    fn diamond_matches_brute_force() {
        for s in [
            sys(SpaceKind::TorusSup, 1, 7),
            sys(SpaceKind::TorusSup, 2, 4),
            sys(SpaceKind::TorusSquared, 1, 7),
        ] {
            let m = s.model();
            for n in 0..=s.depth() {
                for c in s.cubes_at(n).step_by(3) {
                    for r in [0.1, 0.7, 1.0, 2.5, 9.0] {
                        let radius = r * m.q_pow(n as i64);
                        let brute: Region = (0..m.cell_count() as u32)
                            .filter(|&x| s.set_distance(&c, &m.cell_center(x)) < radius)
                            .collect();
                        assert_eq!(s.diamond(&c, r), brute, "{c} r={r}");
                    }
                }
            }
        }
    }

    #[test]
    fn boundary_layer_examples() {
        let s = sys(SpaceKind::TorusSup, 1, 10);
        let a = Cube::new(1, &[0]).unwrap();
        let layer = s.boundary_layer(&a, 0.25);
        assert_eq!(layer.measure(s.model()), Measure::new(1, 4));
        let b = Cube::new(4, &[9]).unwrap();
        assert_eq!(s.boundary_layer(&b, 1.0), s.cells(&b));
        assert!(s.boundary_layer(&Cube::root(1), 1.0).is_empty());

        let s2 = sys(SpaceKind::TorusSup, 2, 6);
        for c in s2.cubes_at(3) {
            let layer = s2.boundary_layer(&c, 0.125);
            assert!(layer.len() * 2 <= s2.cell_count_of(&c));
        }
    }

    #[test]
    fn lemma_diamond_in_ball_holds() {
        for s in [sys(SpaceKind::TorusSup, 1, 8), sys(SpaceKind::TorusSquared, 1, 8)] {
            for n in 0..=8 {
                for c in s.cubes_at(n).step_by(7) {
                    for r in [0.01, 0.5, 1.0, 3.0] {
                        assert!(s.diamond_in_ball(&c, r).holds, "{c} r={r}");
                    }
                }
            }
        }
    }

    #[test]
    fn intersection_bound_cases() {
        let s = sys(SpaceKind::TorusSup, 1, 8);
        let a = Cube::new(3, &[1]).unwrap();
        let same = s.diamond_intersection_bound(&a, &a, 1.0, 1.0);
        assert!(same.intersects && same.inclusion_verified);
        let far = Cube::new(5, &[20]).unwrap();
        let apart = s.diamond_intersection_bound(&Cube::new(5, &[2]).unwrap(), &far, 0.1, 0.1);
        assert!(!apart.intersects);
    }

    #[test]
    fn axioms_hold_on_small_systems() {
        for (kind, dim, depth) in [
            (SpaceKind::TorusSup, 1, 6),
            (SpaceKind::TorusSup, 2, 4),
            (SpaceKind::TorusSquared, 1, 6),
        ] {
            let s = sys(kind, dim, depth);
            let report = s.verify_axioms();
            assert!(report.ok, "{report:#?}");
            assert_eq!(report.properties.len(), 8);
            assert_eq!(report.observed.max_children, s.constants().children);
            assert!(report.observed.c1_max >= s.constants().c1);
            assert!(report.observed.c2_min < s.constants().c2);
        }
        let s = sys(SpaceKind::TorusSup, 1, 6);
        assert_eq!(s.verify_axioms().cube_count, 127);
    }
}
