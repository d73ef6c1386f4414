//! Shift relations between same-level cubes, their separated decomposition
//! into classes, and the nested pair supports θ used for domination.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Rational64;
use serde::Serialize;

use crate::adapt::{AdaptInput, AdaptedGrid};
use crate::cubes::{Cube, DyadicSystem};
use crate::error::{Error, Result};
use crate::haar::{Filtration, HaarSystem};
use crate::region::{nested_violation, Region};

/// A level-preserving relation τ, split into bijective parts τ_1..τ_M.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShiftRelation {
    pairs: Vec<(Cube, Cube)>,
    /// The m of Q ⊂ m◇P.
    m_param: f64,
    /// Pair indices of each τ_k.
    partition: Vec<Vec<usize>>,
}

impl ShiftRelation {
    /// General relation; parts are filled greedily so that each is injective
    /// in both coordinates.
    pub fn from_pairs(pairs: Vec<(Cube, Cube)>, m_param: f64) -> Result<Self> {
        for (p, q) in &pairs {
            if p.level() != q.level() || p.dim() != q.dim() {
                return Err(Error::InvalidParameter(format!("pair ({p}, {q}) changes level")));
            }
        }
        let mut partition: Vec<Vec<usize>> = Vec::new();
        let mut used: Vec<(BTreeSet<Cube>, BTreeSet<Cube>)> = Vec::new();
        for (i, (p, q)) in pairs.iter().enumerate() {
            let slot = used
                .iter()
                .position(|(dom, img)| !dom.contains(p) && !img.contains(q));
            let slot = match slot {
                Some(s) => s,
                None => {
                    used.push((BTreeSet::new(), BTreeSet::new()));
                    partition.push(Vec::new());
                    used.len() - 1
                }
            };
            used[slot].0.insert(*p);
            used[slot].1.insert(*q);
            partition[slot].push(i);
        }
        Ok(Self {
            pairs,
            m_param,
            partition,
        })
    }

    pub fn pairs(&self) -> &[(Cube, Cube)] {
        &self.pairs
    }

    pub fn m_param(&self) -> f64 {
        self.m_param
    }

    pub fn partition(&self) -> &[Vec<usize>] {
        &self.partition
    }

    /// Checks Q ⊂ m◇P cell by cell; returns the first failing pair index.
    pub fn check_p1(&self, sys: &DyadicSystem) -> Option<usize> {
        self.pairs
            .iter()
            .position(|(p, q)| !sys.cells(q).is_subset(&sys.diamond(p, self.m_param)))
    }

    /// Each part is a bijection between its domain and image, and the parts
    /// partition the pairs.
    pub fn check_p2(&self) -> bool {
        let mut seen = vec![0u8; self.pairs.len()];
        for part in &self.partition {
            let dom: BTreeSet<Cube> = part.iter().map(|&i| self.pairs[i].0).collect();
            let img: BTreeSet<Cube> = part.iter().map(|&i| self.pairs[i].1).collect();
            if dom.len() != part.len() || img.len() != part.len() {
                return false;
            }
            for &i in part {
                seen[i] += 1;
            }
        }
        seen.iter().all(|&s| s == 1)
    }
}

/// P ↦ P + m along one axis (with wrap) at every level in `levels`.
///
/// Certified with parameter m + 1: the far edge of the shifted cube sits at
/// set distance exactly m sides and diamonds are open.
pub fn make_axis_shift(
    sys: &DyadicSystem,
    m: u64,
    axis: usize,
    levels: std::ops::Range<u32>,
) -> Result<ShiftRelation> {
    if axis >= sys.dim() {
        return Err(Error::InvalidParameter(format!("axis {axis} >= dimension {}", sys.dim())));
    }
    if levels.end > sys.depth() + 1 {
        return Err(Error::DepthInsufficient(format!(
            "levels up to {} in a depth-{} system",
            levels.end - 1,
            sys.depth()
        )));
    }
    let pairs: Vec<(Cube, Cube)> = levels
        .flat_map(|n| sys.cubes_at(n))
        .map(|p| (p, p.translate(axis, m)))
        .collect();
    let n = pairs.len();
    Ok(ShiftRelation {
        pairs,
        m_param: (m + 1) as f64,
        partition: vec![(0..n).collect()],
    })
}

/// One class H_{k,j,i}: pairs of τ_k with color j and level ≡ i (mod ℓ).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShiftClass {
    pub k: usize,
    pub j: usize,
    pub i: u32,
    pub pairs: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShiftDecomposition {
    pub c_r: f64,
    pub ell: u32,
    /// M_k for each part τ_k.
    pub colors: Vec<usize>,
    /// Color of every pair.
    pub color_of: Vec<usize>,
    /// Nonempty classes in (k, j, i) order.
    pub classes: Vec<ShiftClass>,
}

/// Greedy coloring of each level's conflict graph in lexicographic order of
/// P, where two pairs conflict when C_R◇P ∪ C_R◇Q of one meets that of the other.
pub fn decompose(sys: &DyadicSystem, tau: &ShiftRelation, c_r: f64, ell: u32) -> Result<ShiftDecomposition> {
    if ell == 0 {
        return Err(Error::InvalidParameter("ell must be positive".into()));
    }
    let cells = sys.model().cell_count();
    let mut color_of = vec![usize::MAX; tau.pairs.len()];
    let mut colors = Vec::with_capacity(tau.partition.len());
    for part in &tau.partition {
        let mut by_level: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for &i in part {
            by_level.entry(tau.pairs[i].0.level()).or_default().push(i);
        }
        let mut used = 0usize;
        for group in by_level.values_mut() {
            group.sort_by_key(|&i| tau.pairs[i].0);
            let mut cell_colors: Vec<Vec<u32>> = vec![Vec::new(); cells];
            for &i in group.iter() {
                let (p, q) = &tau.pairs[i];
                let u = sys.diamond(p, c_r).union(&sys.diamond(q, c_r));
                let mut taken: BTreeSet<u32> = BTreeSet::new();
                for &c in u.cells() {
                    taken.extend(cell_colors[c as usize].iter().copied());
                }
                let color = (0..).find(|c| !taken.contains(c)).expect("finite");
                for &c in u.cells() {
                    cell_colors[c as usize].push(color);
                }
                color_of[i] = color as usize;
                used = used.max(color as usize + 1);
            }
        }
        colors.push(used);
    }
    let mut classes = Vec::new();
    for (k, part) in tau.partition.iter().enumerate() {
        let mut buckets: BTreeMap<(usize, u32), Vec<usize>> = BTreeMap::new();
        for &i in part {
            let key = (color_of[i], tau.pairs[i].0.level() % ell);
            buckets.entry(key).or_default().push(i);
        }
        for ((j, i), mut pairs) in buckets {
            pairs.sort_by_key(|&x| tau.pairs[x].0);
            classes.push(ShiftClass { k, j, i, pairs });
        }
    }
    Ok(ShiftDecomposition {
        c_r,
        ell,
        colors,
        color_of,
        classes,
    })
}

/// Checks the cross-pair separation of every class exactly; returns a
/// witnessing pair of pair indices.
pub fn check_class_separation(sys: &DyadicSystem, tau: &ShiftRelation, dec: &ShiftDecomposition) -> Option<(usize, usize)> {
    for class in &dec.classes {
        let mut by_level: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for &i in &class.pairs {
            by_level.entry(tau.pairs[i].0.level()).or_default().push(i);
        }
        for group in by_level.values() {
            let us: Vec<Region> = group
                .iter()
                .map(|&i| {
                    let (p, q) = &tau.pairs[i];
                    sys.diamond(p, dec.c_r).union(&sys.diamond(q, dec.c_r))
                })
                .collect();
            for a in 0..group.len() {
                for b in a + 1..group.len() {
                    if us[a].intersects(&us[b]) {
                        return Some((group[a], group[b]));
                    }
                }
            }
        }
    }
    None
}

/// Cubes of a class: first and second coordinates of its pairs.
pub fn class_members(tau: &ShiftRelation, class: &ShiftClass) -> BTreeSet<Cube> {
    class
        .pairs
        .iter()
        .flat_map(|&i| [tau.pairs[i].0, tau.pairs[i].1])
        .collect()
}

/// ψ(A) = pairs (P, Q) of the class with P ⊊ A or Q ⊊ A, for A in the class members.
pub fn class_psi(tau: &ShiftRelation, class: &ShiftClass) -> BTreeMap<Cube, Vec<usize>> {
    let members = class_members(tau, class);
    let mut psi: BTreeMap<Cube, BTreeSet<usize>> = members.iter().map(|&a| (a, BTreeSet::new())).collect();
    for &i in &class.pairs {
        let (p, q) = tau.pairs[i];
        for c in [p, q] {
            for l in 0..c.level() {
                let anc = c.ancestor(l).expect("l < level");
                if let Some(set) = psi.get_mut(&anc) {
                    set.insert(i);
                }
            }
        }
    }
    psi.into_iter().map(|(a, s)| (a, s.into_iter().collect())).collect()
}

/// Smallest admissible radius factor over β-constraints and their pieces.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BetaPolicy {
    /// From 4 K^3 (1 + C_2/C_R) q^ℓ ≤ 1 with μ = ℓ.
    pub beta1: f64,
    /// From c_1 (1 + m) q^ℓ ≤ C_R / (2 K), localizing φ.
    pub beta2: f64,
    /// From θ(P) ⊂ c_3◇P ∪ c_3◇Q with c_3 = 2 K C_R.
    pub beta3: f64,
    pub beta: f64,
    pub c1: f64,
    pub c3: f64,
}

pub fn beta_policy(sys: &DyadicSystem, c_r: f64) -> BetaPolicy {
    let k = sys.model().k_x();
    let c2 = sys.constants().c2;
    let k3 = k.powi(3);
    let c1 = 2.0 * k3 * (c2 + 1.0);
    let c3 = 2.0 * k * c_r;
    let beta1 = 1.0 / (4.0 * k3 * (1.0 + c2 / c_r));
    let beta2 = c_r / (2.0 * k * c1);
    let beta3 = k * c_r / (2.0 * k3 * (c2 + 2.0 * k3 * (c2 + c3) + k));
    BetaPolicy {
        beta1,
        beta2,
        beta3,
        beta: beta1.min(beta2).min(beta3),
        c1,
        c3,
    }
}

/// Smallest ℓ ≥ 1 with (1 + m) q^ℓ ≤ β.
pub fn choose_ell(sys: &DyadicSystem, m_param: f64, beta: f64) -> u32 {
    let mut ell = 1;
    while (1.0 + m_param) * sys.model().q_pow(ell as i64) > beta {
        ell += 1;
    }
    ell
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalizationReport {
    pub c1: f64,
    /// Largest d(A, x) / ((1+m) q^ℓ q^lev A) over cells x of P ∪ Q, (P,Q) ∈ ψ(A).
    pub c1_star: f64,
    pub checked: usize,
    pub violations: usize,
    pub witness: Option<String>,
    pub ok: bool,
}

/// Checks P ∪ Q ⊂ (c_1 (1+m) q^ℓ)◇A for every class member A and pair in ψ(A),
/// with c_1 = 2 K^3 (C_2 + 1).
pub fn check_localization(sys: &DyadicSystem, tau: &ShiftRelation, dec: &ShiftDecomposition) -> LocalizationReport {
    let c1 = beta_policy(sys, dec.c_r).c1;
    check_localization_at(sys, tau, dec, c1)
}

/// Localization check with an arbitrary constant in place of c_1.
pub fn check_localization_at(
    sys: &DyadicSystem,
    tau: &ShiftRelation,
    dec: &ShiftDecomposition,
    c1: f64,
) -> LocalizationReport {
    let model = sys.model();
    let scale = (1.0 + tau.m_param) * model.q_pow(dec.ell as i64);
    let mut report = LocalizationReport {
        c1,
        c1_star: 0.0,
        checked: 0,
        violations: 0,
        witness: None,
        ok: true,
    };
    for class in &dec.classes {
        for (a, pairs) in class_psi(tau, class) {
            if pairs.is_empty() {
                continue;
            }
            let diamond = sys.diamond(&a, c1 * scale);
            let qa = model.q_pow(a.level() as i64);
            for i in pairs {
                let (p, q) = tau.pairs[i];
                report.checked += 1;
                let support = sys.cells(&p).union(&sys.cells(&q));
                let far = support
                    .cells()
                    .iter()
                    .map(|&x| sys.set_distance(&a, &model.cell_center(x)))
                    .fold(0.0, f64::max);
                report.c1_star = report.c1_star.max(far / (qa * scale));
                if let Some(x) = support.first_outside(&diamond) {
                    report.violations += 1;
                    if report.witness.is_none() {
                        report.witness = Some(format!("cell {x} of ({p}, {q}) outside the diamond of {a}"));
                    }
                }
            }
        }
    }
    report.ok = report.violations == 0;
    report
}

/// The adapted-grid input of a class: 𝒜 = proj_1 ∪ proj_2, φ(A) = the cubes of
/// ψ(A), μ = ℓ, and each pair exempt from same-level separation.
pub fn class_adapt_input(tau: &ShiftRelation, dec: &ShiftDecomposition, class: &ShiftClass) -> AdaptInput {
    let psi = class_psi(tau, class);
    let phi: BTreeMap<Cube, Vec<Cube>> = psi
        .iter()
        .filter(|(_, ps)| !ps.is_empty())
        .map(|(a, ps)| {
            let cubes: BTreeSet<Cube> = ps.iter().flat_map(|&i| [tau.pairs[i].0, tau.pairs[i].1]).collect();
            (*a, cubes.into_iter().collect())
        })
        .collect();
    AdaptInput::new(class_members(tau, class).into_iter().collect(), phi, dec.c_r, dec.ell)
        .with_separation_exempt(class.pairs.iter().map(|&i| tau.pairs[i]))
}

/// θ on the cubes of one class, with certified constants.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThetaSupports {
    pub theta: BTreeMap<Cube, Region>,
    pub c3: f64,
    /// Smallest c with θ(P) ⊂ c◇P ∪ c◇Q for all pairs (strict inclusion above it).
    pub c3_star: f64,
    pub c4: f64,
    /// Largest |θ(P)| / (|P| + |Q|).
    pub c4_star: f64,
    pub nested: bool,
    pub covers_pairs: bool,
    pub inclusion_ok: bool,
    pub measure_ok: bool,
}

impl ThetaSupports {
    pub fn ok(&self) -> bool {
        self.nested && self.covers_pairs && self.inclusion_ok && self.measure_ok
    }

    pub fn get(&self, a: &Cube) -> Option<&Region> {
        self.theta.get(a)
    }

    /// θ(A) = A: drops the partner from each support. Used as a fault.
    pub fn plain_cubes(sys: &DyadicSystem, tau: &ShiftRelation, class: &ShiftClass, c_r: f64) -> Self {
        let theta = class_members(tau, class).into_iter().map(|a| (a, sys.cells(&a))).collect();
        let c3 = beta_policy(sys, c_r).c3;
        Self {
            theta,
            c3,
            c3_star: f64::NAN,
            c4: theta_measure_constant(sys, c3),
            c4_star: f64::NAN,
            nested: true,
            covers_pairs: false,
            inclusion_ok: false,
            measure_ok: false,
        }
    }
}

/// c_4 = C_d (K (C_2 + c_3) / C_1)^(log2 C_d).
pub fn theta_measure_constant(sys: &DyadicSystem, c3: f64) -> f64 {
    let m = sys.model();
    let c = sys.constants();
    m.c_d() * (m.k_x() * (c.c2 + c3) / c.c1).powf(m.c_d().log2())
}

/// θ(P) = θ(Q) = σ(P) ∪ σ(Q) ∪ ⋃{θ(R) : lev R > lev P, θ(R) meets σ(P) ∪ σ(Q)},
/// from the finest class level up.
pub fn build_theta(
    sys: &DyadicSystem,
    tau: &ShiftRelation,
    class: &ShiftClass,
    grid: &AdaptedGrid,
) -> Result<ThetaSupports> {
    let members = class_members(tau, class);
    let domain: BTreeSet<Cube> = grid.entries().map(|(c, _)| *c).collect();
    if domain != members {
        return Err(Error::Mismatch(format!(
            "grid has {} cubes, class has {}",
            domain.len(),
            members.len()
        )));
    }
    let mut owner: BTreeMap<Cube, usize> = BTreeMap::new();
    for &i in &class.pairs {
        let (p, q) = tau.pairs[i];
        for c in [p, q] {
            if *owner.entry(c).or_insert(i) != i {
                return Err(Error::Mismatch(format!("{c} appears in two pairs of the class")));
            }
        }
    }
    let mut by_level: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for &i in &class.pairs {
        by_level.entry(tau.pairs[i].0.level()).or_default().push(i);
    }
    let cells = sys.model().cell_count();
    let mut index: Vec<Vec<u32>> = vec![Vec::new(); cells];
    let mut built: Vec<Region> = Vec::new();
    let mut theta: BTreeMap<Cube, Region> = BTreeMap::new();
    let mut per_pair: Vec<(usize, Region)> = Vec::new();
    for group in by_level.values().rev() {
        let mut level_regions = Vec::with_capacity(group.len());
        for &i in group {
            let (p, q) = tau.pairs[i];
            let base = grid.sigma(&p).expect("member").union(grid.sigma(&q).expect("member"));
            let mut ids: Vec<u32> = base
                .cells()
                .iter()
                .flat_map(|&c| index[c as usize].iter().copied())
                .collect();
            ids.sort_unstable();
            ids.dedup();
            let region = Region::union_all(std::iter::once(&base).chain(ids.iter().map(|&x| &built[x as usize])));
            level_regions.push((i, region));
        }
        for (i, region) in level_regions {
            let id = built.len() as u32;
            for &c in region.cells() {
                index[c as usize].push(id);
            }
            built.push(region.clone());
            let (p, q) = tau.pairs[i];
            theta.insert(p, region.clone());
            theta.insert(q, region.clone());
            per_pair.push((i, region));
        }
    }

    let c3 = beta_policy(sys, grid.c_r).c3;
    let c4 = theta_measure_constant(sys, c3);
    let model = sys.model();
    let mut c3_star = 0.0f64;
    let mut c4_star = 0.0f64;
    let mut covers_pairs = true;
    let mut inclusion_ok = true;
    for (i, region) in &per_pair {
        let (p, q) = tau.pairs[*i];
        let pq = sys.cells(&p).union(&sys.cells(&q));
        covers_pairs &= pq.is_subset(region);
        let qn = model.q_pow(p.level() as i64);
        for &x in region.cells() {
            let y = model.cell_center(x);
            let d = sys.set_distance(&p, &y).min(sys.set_distance(&q, &y));
            c3_star = c3_star.max(d / qn);
        }
        let allowed = sys.diamond(&p, c3).union(&sys.diamond(&q, c3));
        inclusion_ok &= region.is_subset(&allowed);
        c4_star = c4_star.max(region.len() as f64 / pq.len() as f64);
    }
    let nested = nested_violation(&built, cells).is_none();
    Ok(ThetaSupports {
        theta,
        c3,
        c3_star,
        c4,
        c4_star,
        nested,
        covers_pairs,
        inclusion_ok,
        measure_ok: c4_star <= c4,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DominationReport {
    pub c5: f64,
    /// max over pairs and cells x ∈ Q of |h_Q(x)| / E(|h_P| | ℱ_lev P)(x); infinite
    /// when the expectation vanishes somewhere on Q.
    pub c5_star: f64,
    pub cells_checked: usize,
    pub witness: Option<String>,
    pub ok: bool,
}

/// Pointwise |h_Q| ≤ c E(|h_P| | ℱ_lev P) for the pairs of one class, with ℱ_n
/// generated by θ(A), lev A ≤ n. Expectations are exact rationals.
pub fn domination_check(
    sys: &DyadicSystem,
    tau: &ShiftRelation,
    class: &ShiftClass,
    theta: &ThetaSupports,
    haar: &HaarSystem,
) -> Result<DominationReport> {
    let c5 = haar.c_h() * theta.c4 * 2.0;
    let cells = sys.model().cell_count();
    let gens: Vec<(u32, Region)> = theta.theta.iter().map(|(a, r)| (a.level(), r.clone())).collect();
    let top = class.pairs.iter().map(|&i| tau.pairs[i].0.level()).max().unwrap_or(0);
    let filtration = Filtration::generated_by_levels(&gens, top + 1, cells);

    let mut worst = Rational64::from_integer(0);
    let mut infinite = false;
    let mut witness = None;
    let mut checked = 0usize;
    for &i in &class.pairs {
        let (p, q) = tau.pairs[i];
        let n = p.level();
        let alg = filtration.level(n)?;
        let tp = theta.get(&p).ok_or_else(|| Error::Mismatch(format!("no theta for {p}")))?;
        if !alg.is_atom(tp) {
            return Err(Error::NotAnAtom(p.to_string()));
        }
        let hp: BTreeMap<u32, i8> = haar.signed_cells(&p)?.into_iter().collect();
        for (x, s) in haar.signed_cells(&q)? {
            checked += 1;
            let hq = Rational64::from_integer(s.abs() as i64);
            let atom = alg.atom_of(x);
            let mass = atom.cells().iter().filter(|c| hp.get(c).is_some_and(|v| *v != 0)).count();
            let e = Rational64::new(mass as i64, atom.len() as i64);
            if e == Rational64::from_integer(0) {
                if !infinite {
                    witness = Some(format!("E(|h_{p}|) vanishes at cell {x} of {q}"));
                }
                infinite = true;
            } else if hq / e > worst {
                worst = hq / e;
                if !infinite {
                    witness = Some(format!("cell {x} of {q}"));
                }
            }
        }
    }
    let c5_star = if infinite {
        f64::INFINITY
    } else {
        *worst.numer() as f64 / *worst.denom() as f64
    };
    Ok(DominationReport {
        c5,
        c5_star,
        cells_checked: checked,
        witness,
        ok: c5_star <= c5,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapt::{build_adapted_grid, check_hypotheses, verify_adapted_grid};
    use crate::haar::{make_haar, SignScheme};
    use crate::model::{SpaceKind, SpaceModel};

    fn sys(depth: u32) -> DyadicSystem {
        DyadicSystem::new(SpaceModel::new(SpaceKind::TorusSup, 1, depth).unwrap())
    }

    fn cube(level: u32, x: u32) -> Cube {
        Cube::new(level, &[x]).unwrap()
    }

    #[test]
    fn axis_shift_examples() {
        let s = sys(10);
        let t = make_axis_shift(&s, 3, 0, 2..3).unwrap();
        assert!(t.pairs().contains(&(cube(2, 0), cube(2, 3))));
        assert_eq!(t.m_param(), 4.0);
        let id = make_axis_shift(&s, 0, 0, 0..10).unwrap();
        assert!(id.pairs().iter().all(|(p, q)| p == q));
        assert!(make_axis_shift(&s, 1, 1, 0..3).is_err());
    }

    #[test]
    fn p1_needs_m_plus_one() {
        let s = sys(10);
        let t = make_axis_shift(&s, 5, 0, 0..11).unwrap();
        assert_eq!(t.check_p1(&s), None);
        assert!(t.check_p2());
        // cell centres of Q stay half a cell inside distance m, so only m - 1 fails
        let centred = ShiftRelation::from_pairs(t.pairs().to_vec(), 5.0).unwrap();
        assert_eq!(centred.check_p1(&s), None);
        let tight = ShiftRelation::from_pairs(t.pairs().to_vec(), 4.0).unwrap();
        assert!(tight.check_p1(&s).is_some());
    }

    #[test]
    fn general_relations_split_into_bijections() {
        let pairs = vec![
            (cube(3, 0), cube(3, 1)),
            (cube(3, 0), cube(3, 2)),
            (cube(3, 4), cube(3, 1)),
            (cube(3, 5), cube(3, 5)),
        ];
        let t = ShiftRelation::from_pairs(pairs, 3.0).unwrap();
        assert_eq!(t.partition().len(), 2);
        assert!(t.check_p2());
        assert!(ShiftRelation::from_pairs(vec![(cube(2, 0), cube(3, 0))], 1.0).is_err());
    }

    /// Chromatic number of a small graph by exhaustive search.
    fn chromatic(adj: &[Vec<bool>]) -> usize {
        fn fits(adj: &[Vec<bool>], colors: &mut Vec<usize>, k: usize) -> bool {
            let v = colors.len();
            if v == adj.len() {
                return true;
            }
            for c in 0..k {
                if (0..v).all(|u| !adj[u][v] || colors[u] != c) {
                    colors.push(c);
                    if fits(adj, colors, k) {
                        return true;
                    }
                    colors.pop();
                }
            }
            false
        }
        (1..=adj.len()).find(|&k| fits(adj, &mut Vec::new(), k)).unwrap_or(0)
    }

    #[test]
    fn greedy_colors_against_brute_force() {
        let s = sys(6);
        for c_r in [0.3, 0.45, 1.0] {
            let t = make_axis_shift(&s, 0, 0, 0..6).unwrap();
            let dec = decompose(&s, &t, c_r, 1).unwrap();
            assert_eq!(check_class_separation(&s, &t, &dec), None);
            let mut best = 0;
            for n in 0..6 {
                let group: Vec<usize> = (0..t.pairs().len()).filter(|&i| t.pairs()[i].0.level() == n).collect();
                if group.len() > 10 {
                    continue;
                }
                let us: Vec<Region> = group.iter().map(|&i| s.diamond(&t.pairs()[i].0, c_r)).collect();
                let adj: Vec<Vec<bool>> = (0..group.len())
                    .map(|a| (0..group.len()).map(|b| a != b && us[a].intersects(&us[b])).collect())
                    .collect();
                best = best.max(chromatic(&adj));
                let used: BTreeSet<usize> = group.iter().map(|&i| dec.color_of[i]).collect();
                assert!(used.len() >= chromatic(&adj));
            }
            assert!(dec.colors[0] >= best);
        }
    }

    #[test]
    fn single_pair_class_has_empty_psi() {
        let s = sys(8);
        let t = ShiftRelation::from_pairs(vec![(cube(4, 2), cube(4, 3))], 2.0).unwrap();
        let dec = decompose(&s, &t, 4.0, 5).unwrap();
        assert_eq!(dec.classes.len(), 1);
        let psi = class_psi(&t, &dec.classes[0]);
        assert!(psi.values().all(|v| v.is_empty()));
        assert!(check_localization(&s, &t, &dec).ok);
    }

    #[test]
    fn color_count_is_depth_independent() {
        // at depth 6 the finest level has 32 cubes, too few for the full wrap pattern
        let counts: Vec<usize> = (7..=12)
            .map(|d| {
                let s = sys(d);
                let t = make_axis_shift(&s, 4, 0, 0..d).unwrap();
                decompose(&s, &t, 4.0, 1).unwrap().colors[0]
            })
            .collect();
        assert!(counts.windows(2).all(|w| w[0] == w[1]), "{counts:?}");
    }

    #[test]
    fn beta_and_ell_policy() {
        let s = sys(14);
        let b = beta_policy(&s, 4.0);
        assert_eq!((b.beta1, b.beta2, b.beta3, b.beta), (0.2, 0.5, 0.1, 0.1));
        assert_eq!(b.c1, 4.0);
        let ells: Vec<u32> = [1u64, 2, 8, 512].iter().map(|&m| choose_ell(&s, (m + 1) as f64, b.beta)).collect();
        assert_eq!(ells, vec![5, 6, 7, 13]);
    }

    fn pipeline(m: u64, depth: u32) -> (DyadicSystem, ShiftRelation, ShiftDecomposition) {
        let s = sys(depth);
        let t = make_axis_shift(&s, m, 0, 0..depth).unwrap();
        let ell = choose_ell(&s, t.m_param(), beta_policy(&s, 4.0).beta);
        let dec = decompose(&s, &t, 4.0, ell).unwrap();
        (s, t, dec)
    }

    #[test]
    fn localization_holds_and_faults_show() {
        let (s, t, dec) = pipeline(2, 12);
        assert_eq!(dec.ell, 6);
        let r = check_localization(&s, &t, &dec);
        assert!(r.ok && r.checked > 0, "{r:?}");
        assert!(r.c1_star <= r.c1);
        let shrunk = check_localization_at(&s, &t, &dec, r.c1_star / 2.0);
        assert!(!shrunk.ok && shrunk.witness.is_some());
    }

    #[test]
    fn theta_and_domination_end_to_end() {
        let (s, t, dec) = pipeline(1, 10);
        let haar = make_haar(&s, SignScheme::FirstHalf);
        for class in dec.classes.iter().take(12) {
            let input = class_adapt_input(&t, &dec, class);
            let h = check_hypotheses(&s, &input);
            assert!(h.ok, "{h:?}");
            let grid = build_adapted_grid(&s, &input).unwrap();
            assert!(verify_adapted_grid(&s, &input, &grid).ok);
            let theta = build_theta(&s, &t, class, &grid).unwrap();
            assert!(theta.ok(), "{theta:?}");
            let d = domination_check(&s, &t, class, &theta, &haar).unwrap();
            assert!(d.ok && d.c5_star >= 2.0, "{d:?}");
            let plain = ThetaSupports::plain_cubes(&s, &t, class, 4.0);
            let bad = domination_check(&s, &t, class, &plain, &haar).unwrap();
            assert!(!bad.ok && bad.c5_star.is_infinite() && bad.witness.is_some());
        }
    }

    #[test]
    fn single_pair_theta_is_union_of_sigmas() {
        let s = sys(10);
        let t = ShiftRelation::from_pairs(vec![(cube(5, 3), cube(5, 4))], 2.0).unwrap();
        let dec = decompose(&s, &t, 4.0, 5).unwrap();
        let class = &dec.classes[0];
        let grid = build_adapted_grid(&s, &class_adapt_input(&t, &dec, class)).unwrap();
        let theta = build_theta(&s, &t, class, &grid).unwrap();
        let expect = grid.sigma(&cube(5, 3)).unwrap().union(grid.sigma(&cube(5, 4)).unwrap());
        assert_eq!(theta.get(&cube(5, 3)), Some(&expect));
        assert_eq!(theta.get(&cube(5, 4)), Some(&expect));
    }

    #[test]
    fn identity_shift_dominates() {
        let (s, t, dec) = pipeline(0, 8);
        let haar = make_haar(&s, SignScheme::FirstHalf);
        let class = &dec.classes[0];
        let grid = build_adapted_grid(&s, &class_adapt_input(&t, &dec, class)).unwrap();
        let theta = build_theta(&s, &t, class, &grid).unwrap();
        let d = domination_check(&s, &t, class, &theta, &haar).unwrap();
        assert!(d.ok, "{d:?}");
    }
}
