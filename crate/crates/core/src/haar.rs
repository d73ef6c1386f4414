//! Cell functions, the ±1 Haar-like system and exact conditional expectations.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::cubes::{Cube, DyadicSystem};
use crate::error::{Error, Result};
use crate::region::Region;
use crate::scalar::Scalar;

/// A function on the torus that is constant on finest cells.
///
/// Every cell carries measure 1/len, so integrals and norms need no model.
#[derive(Clone, Debug, PartialEq)]
pub struct CellFunction<S> {
    values: Vec<S>,
}

impl<S: Scalar> CellFunction<S> {
    pub fn zeros(cells: usize) -> Self {
        Self {
            values: vec![S::zero(); cells],
        }
    }

    pub fn from_values(values: Vec<S>) -> Self {
        Self { values }
    }

    /// Indicator of a region.
    pub fn indicator(cells: usize, region: &Region) -> Self {
        let mut f = Self::zeros(cells);
        for &c in region.cells() {
            f.values[c as usize] = S::one();
        }
        f
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_len(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(())
    }

    /// self += a * other
    pub fn axpy(&mut self, a: S, other: &Self) -> Result<()> {
        self.check_len(other)?;
        for (x, &y) in self.values.iter_mut().zip(&other.values) {
            *x = *x + a * y;
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(S::one(), other)?;
        Ok(out)
    }

    pub fn scale(&self, a: S) -> Self {
        Self {
            values: self.values.iter().map(|&v| a * v).collect(),
        }
    }

    pub fn abs(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| v.abs()).collect(),
        }
    }

    /// ∫ f over the torus.
    pub fn integral(&self) -> S {
        let sum = self.values.iter().fold(S::zero(), |acc, &v| acc + v);
        sum / S::from_count(self.len())
    }

    /// Measure-weighted inner product ∫ f g.
    pub fn inner(&self, other: &Self) -> Result<S> {
        self.check_len(other)?;
        let sum = self
            .values
            .iter()
            .zip(&other.values)
            .fold(S::zero(), |acc, (&a, &b)| acc + a * b);
        Ok(sum / S::from_count(self.len()))
    }

    pub fn norm_inf(&self) -> S {
        self.values
            .iter()
            .map(|v| v.abs())
            .fold(S::zero(), |m, v| if v > m { v } else { m })
    }

    /// Cells where the function is nonzero.
    pub fn support(&self) -> Region {
        Region::from_cells(
            self.values
                .iter()
                .enumerate()
                .filter(|(_, v)| !v.is_zero())
                .map(|(i, _)| i as u32)
                .collect(),
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["cell", "value"])?;
        for (i, v) in self.values.iter().enumerate() {
            w.write_record([i.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a (cell, value) CSV; cells must be listed as 0, 1, 2, ... in order.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut values = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let cell: usize = rec
                .get(0)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::InvalidParameter(format!("bad cell at row {i}")))?;
            if cell != i {
                return Err(Error::InvalidParameter(format!(
                    "cell {cell} listed at row {i}"
                )));
            }
            let value: S = rec
                .get(1)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::InvalidParameter(format!("bad value at row {i}")))?;
            values.push(value);
        }
        Ok(Self { values })
    }
}

impl<S: Scalar + Float> CellFunction<S> {
    /// (Σ |v|^p · cell measure)^(1/p).
    pub fn norm_p(&self, p: S) -> S {
        let n = S::from_count(self.len());
        let sum = self
            .values
            .iter()
            .fold(S::zero(), |acc, &v| acc + v.abs().powf(p));
        (sum / n).powf(p.recip())
    }
}

/// How the children of a cube are split into the + and - halves.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignScheme {
    /// +1 on children in the lower half along axis lev mod k, -1 on the rest.
    #[default]
    FirstHalf,
}

/// One ±1 mean-zero function per cube of level below the model depth.
///
/// Functions are evaluated lazily from the cube geometry.
#[derive(Clone, Debug)]
pub struct HaarSystem {
    system: DyadicSystem,
    scheme: SignScheme,
}

/// Builds the Haar system of a cube system.
pub fn make_haar(system: &DyadicSystem, scheme: SignScheme) -> HaarSystem {
    HaarSystem {
        system: system.clone(),
        scheme,
    }
}

impl HaarSystem {
    pub fn system(&self) -> &DyadicSystem {
        &self.system
    }

    pub fn scheme(&self) -> SignScheme {
        self.scheme
    }

    pub fn cell_count(&self) -> usize {
        self.system.model().cell_count()
    }

    /// ‖h_Q‖_∞ |P| / ∫|h_P| for same-level pairs, which is 1; the certified
    /// constant allows |P| + |Q| = 2|P| in the denominator.
    pub fn c_h(&self) -> f64 {
        2.0
    }

    pub fn check(&self, cube: &Cube) -> Result<()> {
        if cube.dim() != self.system.dim() || cube.level() >= self.system.depth() {
            return Err(Error::OutsideSystem(cube.to_string()));
        }
        Ok(())
    }

    /// The axis whose halves carry the two signs of h_A.
    pub fn split_axis(&self, cube: &Cube) -> usize {
        cube.level() as usize % self.system.dim()
    }

    /// Sign of h_A at a cell: +1, -1, or 0 outside A.
    pub fn sign(&self, cube: &Cube, cell: u32) -> i8 {
        if !self.system.cell_range(cube).contains(&cell) {
            return 0;
        }
        let a = self.split_axis(cube);
        let x = self.system.model().cell_coords(cell)[a];
        let bit = (x >> (self.system.depth() - cube.level() - 1)) & 1;
        match self.scheme {
            SignScheme::FirstHalf => {
                if bit == 0 {
                    1
                } else {
                    -1
                }
            }
        }
    }

    /// Cells and signs of h_A, in increasing cell order.
    pub fn signed_cells(&self, cube: &Cube) -> Result<Vec<(u32, i8)>> {
        self.check(cube)?;
        Ok(self
            .system
            .cell_range(cube)
            .map(|c| (c, self.sign(cube, c)))
            .collect())
    }

    pub fn function<S: Scalar>(&self, cube: &Cube) -> Result<CellFunction<S>> {
        let mut f = CellFunction::zeros(self.cell_count());
        for (c, s) in self.signed_cells(cube)? {
            f.values[c as usize] = if s > 0 { S::one() } else { -S::one() };
        }
        Ok(f)
    }

    /// ⟨f, h_P⟩ normalized so that ⟨h_P, h_P⟩ = 1, for each listed cube.
    pub fn analyze<S: Scalar>(
        &self,
        f: &CellFunction<S>,
        cubes: &[Cube],
    ) -> Result<BTreeMap<Cube, S>> {
        let mut out = BTreeMap::new();
        for cube in cubes {
            let cells = self.signed_cells(cube)?;
            let sum = cells.iter().fold(S::zero(), |acc, &(c, s)| {
                let v = f.values[c as usize];
                if s > 0 {
                    acc + v
                } else {
                    acc - v
                }
            });
            out.insert(*cube, sum / S::from_count(cells.len()));
        }
        Ok(out)
    }

    /// Σ c_P h_P.
    pub fn synthesize<S: Scalar>(&self, coeffs: &BTreeMap<Cube, S>) -> Result<CellFunction<S>> {
        let mut f = CellFunction::zeros(self.cell_count());
        for (cube, &c) in coeffs {
            for (cell, s) in self.signed_cells(cube)? {
                let v = &mut f.values[cell as usize];
                *v = if s > 0 { *v + c } else { *v - c };
            }
        }
        Ok(f)
    }
}

/// A finite σ-algebra on the cells, given by its atoms.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SigmaAlgebra {
    /// Atom index of every cell.
    labels: Vec<u32>,
    atoms: Vec<Region>,
    /// Atom of cells lying in none of the generating sets, if nonempty.
    remainder: Option<usize>,
}

impl SigmaAlgebra {
    /// The trivial σ-algebra {∅, X}.
    pub fn trivial(cells: usize) -> Self {
        Self::generated_by(&[], cells)
    }

    /// σ-algebra generated by finitely many cell sets, by partition refinement.
    pub fn generated_by(sets: &[Region], cells: usize) -> Self {
        let mut r = Refiner::new(cells);
        for set in sets {
            r.split(set);
        }
        r.snapshot()
    }

    fn from_labels(labels: Vec<u32>) -> Self {
        let count = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
        let mut atoms = vec![Vec::new(); count];
        for (cell, &l) in labels.iter().enumerate() {
            atoms[l as usize].push(cell as u32);
        }
        Self {
            labels,
            atoms: atoms.into_iter().map(Region::from_cells).collect(),
            remainder: None,
        }
    }

    /// σ-algebra whose atoms are the given disjoint sets plus the remainder.
    pub fn from_partition(atoms: &[Region], cells: usize) -> Result<Self> {
        let mut labels = vec![u32::MAX; cells];
        for (i, a) in atoms.iter().enumerate() {
            if a.is_empty() {
                return Err(Error::EmptyAtom);
            }
            for &c in a.cells() {
                if labels[c as usize] != u32::MAX {
                    return Err(Error::InvalidParameter(format!(
                        "atoms overlap at cell {c}"
                    )));
                }
                labels[c as usize] = i as u32;
            }
        }
        let rest = atoms.len() as u32;
        let mut has_rest = false;
        for l in labels.iter_mut().filter(|l| **l == u32::MAX) {
            *l = rest;
            has_rest = true;
        }
        let mut alg = Self::from_labels(labels);
        if has_rest {
            alg.remainder = Some(rest as usize);
        }
        Ok(alg)
    }

    /// σ(𝒬_n): atoms are the level-n cubes.
    pub fn of_level(system: &DyadicSystem, level: u32) -> Self {
        let shift = (system.depth() - level) as usize * system.dim();
        let labels = (0..system.model().cell_count() as u32)
            .map(|c| c >> shift)
            .collect();
        Self::from_labels(labels)
    }

    pub fn atoms(&self) -> &[Region] {
        &self.atoms
    }

    pub fn remainder(&self) -> Option<&Region> {
        self.remainder.map(|i| &self.atoms[i])
    }

    pub fn atom_of(&self, cell: u32) -> &Region {
        &self.atoms[self.labels[cell as usize] as usize]
    }

    pub fn is_atom(&self, region: &Region) -> bool {
        match region.cells().first() {
            Some(&c) => self.atom_of(c) == region,
            None => false,
        }
    }

    /// Whether every atom of `self` lies inside one atom of `coarser`.
    pub fn refines(&self, coarser: &SigmaAlgebra) -> bool {
        self.labels.len() == coarser.labels.len()
            && self.atoms.iter().all(|a| {
                let l = coarser.labels[a.cells()[0] as usize];
                a.cells().iter().all(|&c| coarser.labels[c as usize] == l)
            })
    }

    /// E(f | this σ-algebra): the average of f over each atom.
    pub fn expectation<S: Scalar>(&self, f: &CellFunction<S>) -> Result<CellFunction<S>> {
        if f.len() != self.labels.len() {
            return Err(Error::DimensionMismatch {
                expected: self.labels.len(),
                got: f.len(),
            });
        }
        let mut out = CellFunction::zeros(f.len());
        for atom in &self.atoms {
            if atom.is_empty() {
                return Err(Error::EmptyAtom);
            }
            let sum = atom
                .cells()
                .iter()
                .fold(S::zero(), |acc, &c| acc + f.values[c as usize]);
            let avg = sum / S::from_count(atom.len());
            for &c in atom.cells() {
                out.values[c as usize] = avg;
            }
        }
        Ok(out)
    }
}

/// Incremental partition refinement: each generator splits the classes it
/// meets into an inside part (fresh label) and an outside part (old label).
struct Refiner {
    labels: Vec<u32>,
    next: u32,
    covered: Vec<bool>,
}

impl Refiner {
    fn new(cells: usize) -> Self {
        Self {
            labels: vec![0; cells],
            next: 1,
            covered: vec![false; cells],
        }
    }

    fn split(&mut self, set: &Region) {
        let mut fresh: HashMap<u32, u32> = HashMap::new();
        for &c in set.cells() {
            let old = self.labels[c as usize];
            let next = &mut self.next;
            let l = *fresh.entry(old).or_insert_with(|| {
                *next += 1;
                *next - 1
            });
            self.labels[c as usize] = l;
            self.covered[c as usize] = true;
        }
    }

    fn snapshot(&self) -> SigmaAlgebra {
        let mut compact: HashMap<u32, u32> = HashMap::new();
        let labels: Vec<u32> = self
            .labels
            .iter()
            .map(|&l| {
                let n = compact.len() as u32;
                *compact.entry(l).or_insert(n)
            })
            .collect();
        let mut alg = SigmaAlgebra::from_labels(labels);
        alg.remainder = self
            .covered
            .iter()
            .position(|&c| !c)
            .map(|c| alg.labels[c] as usize);
        alg
    }
}

/// Increasing sequence of σ-algebras.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Filtration {
    levels: Vec<SigmaAlgebra>,
}

impl Filtration {
    /// Rejects sequences in which some level fails to refine its predecessor.
    pub fn new(levels: Vec<SigmaAlgebra>) -> Result<Self> {
        for (n, w) in levels.windows(2).enumerate() {
            if !w[1].refines(&w[0]) {
                return Err(Error::InvalidParameter(format!(
                    "level {} does not refine level {n}",
                    n + 1
                )));
            }
        }
        Ok(Self { levels })
    }

    /// ℱ_n generated by the sets of level ≤ n, for n in 0..levels.
    pub fn generated_by_levels(sets: &[(u32, Region)], levels: u32, cells: usize) -> Self {
        let mut sorted: Vec<&(u32, Region)> = sets.iter().collect();
        sorted.sort_by_key(|(l, _)| *l);
        let mut r = Refiner::new(cells);
        let mut next = sorted.iter().peekable();
        let mut out = Vec::with_capacity(levels as usize);
        for n in 0..levels {
            while let Some((_, region)) = next.next_if(|(l, _)| *l <= n) {
                r.split(region);
            }
            out.push(r.snapshot());
        }
        Self { levels: out }
    }

    /// σ(𝒬_0) ⊂ σ(𝒬_1) ⊂ ... ⊂ σ(𝒬_J).
    pub fn dyadic(system: &DyadicSystem) -> Self {
        Self {
            levels: (0..=system.depth())
                .map(|n| SigmaAlgebra::of_level(system, n))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, n: u32) -> Result<&SigmaAlgebra> {
        self.levels.get(n as usize).ok_or(Error::MissingLevel(n))
    }

    pub fn conditional_expectation<S: Scalar>(
        &self,
        f: &CellFunction<S>,
        n: u32,
    ) -> Result<CellFunction<S>> {
        self.level(n)?.expectation(f)
    }
}
