//! Finite unions of finest cells with exact set algebra.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::model::{Measure, SpaceModel};

/// A set of finest cells, stored as a strictly increasing index list.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Region {
    cells: Vec<u32>,
}

impl Region {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a region from arbitrary (unsorted, repeated) cell indices.
    pub fn from_cells(mut cells: Vec<u32>) -> Self {
        cells.sort_unstable();
        cells.dedup();
        Self { cells }
    }

    /// Half-open range of cell indices.
    pub fn from_range(range: std::ops::Range<u32>) -> Self {
        Self {
            cells: range.collect(),
        }
    }

    pub fn cells(&self) -> &[u32] {
        &self.cells
    }

    pub fn into_cells(self) -> Vec<u32> {
        self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, cell: u32) -> bool {
        self.cells.binary_search(&cell).is_ok()
    }

    pub fn measure(&self, model: &SpaceModel) -> Measure {
        model.measure_of(self.len())
    }

    fn bounds(&self) -> Option<(u32, u32)> {
        Some((*self.cells.first()?, *self.cells.last()?))
    }

    pub fn union(&self, other: &Region) -> Region {
        let (a, b) = (&self.cells, &other.cells);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Region { cells: out }
    }

    pub fn intersection(&self, other: &Region) -> Region {
        let mut out = Vec::new();
        self.merge_walk(other, |c, in_a, in_b| {
            if in_a && in_b {
                out.push(c);
            }
            true
        });
        Region { cells: out }
    }

    pub fn difference(&self, other: &Region) -> Region {
        let mut out = Vec::new();
        self.merge_walk(other, |c, in_a, in_b| {
            if in_a && !in_b {
                out.push(c);
            }
            true
        });
        Region { cells: out }
    }

    pub fn intersects(&self, other: &Region) -> bool {
        match (self.bounds(), other.bounds()) {
            (Some((a0, a1)), Some((b0, b1))) if a0 <= b1 && b0 <= a1 => {}
            _ => return false,
        }
        let mut hit = false;
        self.merge_walk(other, |_, in_a, in_b| {
            hit = in_a && in_b;
            !hit
        });
        hit
    }

    pub fn is_subset(&self, other: &Region) -> bool {
        if self.len() > other.len() {
            return false;
        }
        let mut ok = true;
        self.merge_walk(other, |_, in_a, in_b| {
            ok = !in_a || in_b;
            ok
        });
        ok
    }

    /// First cell of `self` missing from `other`.
    pub fn first_outside(&self, other: &Region) -> Option<u32> {
        self.cells.iter().copied().find(|c| !other.contains(*c))
    }

    /// Union of many regions.
    pub fn union_all<'a>(regions: impl IntoIterator<Item = &'a Region>) -> Region {
        let mut cells: Vec<u32> = regions
            .into_iter()
            .flat_map(|r| r.cells.iter().copied())
            .collect();
        cells.sort_unstable();
        cells.dedup();
        Region { cells }
    }

    /// Walks the sorted merge of both cell lists; `f` returns false to stop.
    fn merge_walk(&self, other: &Region, mut f: impl FnMut(u32, bool, bool) -> bool) {
        let (a, b) = (&self.cells, &other.cells);
        let (mut i, mut j) = (0, 0);
        loop {
            let step = match (a.get(i), b.get(j)) {
                (None, None) => return,
                (Some(&x), None) => {
                    i += 1;
                    (x, true, false)
                }
                (None, Some(&y)) => {
                    j += 1;
                    (y, false, true)
                }
                (Some(&x), Some(&y)) => match x.cmp(&y) {
                    Ordering::Less => {
                        i += 1;
                        (x, true, false)
                    }
                    Ordering::Greater => {
                        j += 1;
                        (y, false, true)
                    }
                    Ordering::Equal => {
                        i += 1;
                        j += 1;
                        (x, true, true)
                    }
                },
            };
            if !f(step.0, step.1, step.2) {
                return;
            }
        }
    }
}

impl FromIterator<u32> for Region {
    fn from_iter<T: IntoIterator<Item = u32>>(iter: T) -> Self {
        Region::from_cells(iter.into_iter().collect())
    }
}

/// True when two regions are disjoint or one contains the other.
pub fn comparable(a: &Region, b: &Region) -> bool {
    !a.intersects(b) || a.is_subset(b) || b.is_subset(a)
}

/// Finds a pair of members that overlap without one containing the other.
///
/// Members are visited by decreasing size while each cell remembers the
/// smallest member seen so far that covers it. A member is comparable with
/// everything before it exactly when all of its cells share the same
/// remembered owner (or none), so one pass over all cells decides nestedness.
pub fn nested_violation(regions: &[Region], cell_count: usize) -> Option<(usize, usize)> {
    const NONE: u32 = u32::MAX;
    let mut order: Vec<usize> = (0..regions.len()).collect();
    order.sort_by(|&x, &y| regions[y].len().cmp(&regions[x].len()).then(x.cmp(&y)));
    let mut owner = vec![NONE; cell_count];
    for &idx in &order {
        let r = &regions[idx];
        let Some(&first) = r.cells.first() else {
            continue;
        };
        let o = owner[first as usize];
        for &c in &r.cells {
            let oc = owner[c as usize];
            if oc != o {
                let other = if oc != NONE { oc } else { o };
                return Some((other as usize, idx));
            }
        }
        if o != NONE && regions[o as usize].len() == r.len() && regions[o as usize] != *r {
            return Some((o as usize, idx));
        }
        for &c in &r.cells {
            owner[c as usize] = idx as u32;
        }
    }
    None
}

/// Pairwise nestedness test, quadratic; used where the exhaustive pair scan is wanted.
pub fn nested_violation_pairwise(regions: &[Region]) -> Option<(usize, usize)> {
    for i in 0..regions.len() {
        for j in i + 1..regions.len() {
            if !comparable(&regions[i], &regions[j]) {
                return Some((i, j));
            }
        }
    }
    None
}
