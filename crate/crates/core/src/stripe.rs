//! Stripe families, stripe functions and the nested carriers used to
//! compare stripe operators.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::cubes::{Cube, DyadicSystem};
use crate::error::{Error, Result};
use crate::haar::{CellFunction, HaarSystem, SigmaAlgebra};
use crate::model::Measure;
use crate::region::{nested_violation, Region};
use crate::scalar::Scalar;

/// For each cube A with lev A + λ ≤ J, M collections of level-(lev A + λ)
/// subcubes of A. Stripe numbers are 1-based in the public API.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StripeFamily {
    lambda: u32,
    m_count: usize,
    stripes: BTreeMap<Cube, Vec<Vec<Cube>>>,
    /// Certified constants of the family.
    pub k1: f64,
    pub k2: f64,
    pub eps: f64,
}

/// Slabs along axis 0: stripe m of A holds the level-(lev A + λ) subcubes whose
/// axis-0 offset inside A is m - 1.
pub fn make_classical_stripes(sys: &DyadicSystem, lambda: u32) -> Result<StripeFamily> {
    if lambda == 0 {
        return Err(Error::InvalidParameter("lambda must be at least 1".into()));
    }
    if lambda > sys.depth() {
        return Err(Error::DepthInsufficient(format!(
            "lambda = {lambda} exceeds depth {}",
            sys.depth()
        )));
    }
    let m_count = 1usize << lambda;
    let mut stripes = BTreeMap::new();
    for n in 0..=sys.depth() - lambda {
        for a in sys.cubes_at(n) {
            let mut lists = vec![Vec::new(); m_count];
            for r in subcubes(&a, lambda) {
                let offset = r.coords()[0] - (a.coords()[0] << lambda);
                lists[offset as usize].push(r);
            }
            stripes.insert(a, lists);
        }
    }
    Ok(StripeFamily {
        lambda,
        m_count,
        stripes,
        k1: 1.0,
        k2: 1.0,
        eps: 1.0,
    })
}

/// All subcubes of `a` that are `depth` levels finer, in lexicographic order.
fn subcubes(a: &Cube, depth: u32) -> Vec<Cube> {
    let mut out = vec![*a];
    for _ in 0..depth {
        out = out.iter().flat_map(|c| c.children().collect::<Vec<_>>()).collect();
    }
    out.sort();
    out
}

impl StripeFamily {
    pub fn lambda(&self) -> u32 {
        self.lambda
    }

    /// M, the number of stripes per cube.
    pub fn m_count(&self) -> usize {
        self.m_count
    }

    pub fn cubes(&self) -> impl Iterator<Item = &Cube> {
        self.stripes.keys()
    }

    /// Mutable stripe lists, for fault injection.
    pub fn stripes_mut(&mut self) -> &mut BTreeMap<Cube, Vec<Vec<Cube>>> {
        &mut self.stripes
    }

    fn check_m(&self, m: usize) -> Result<()> {
        if m == 0 || m > self.m_count {
            return Err(Error::InvalidParameter(format!("stripe {m} outside 1..={}", self.m_count)));
        }
        Ok(())
    }

    /// S^(m)(A), the cubes of stripe m.
    pub fn stripe(&self, a: &Cube, m: usize) -> Result<&[Cube]> {
        self.check_m(m)?;
        let lists = self
            .stripes
            .get(a)
            .ok_or_else(|| Error::OutsideFamily(a.to_string()))?;
        Ok(&lists[m - 1])
    }

    /// S^(m)(A)*, the union of stripe m.
    pub fn star(&self, sys: &DyadicSystem, a: &Cube, m: usize) -> Result<Region> {
        let cubes = self.stripe(a, m)?;
        Ok(Region::union_all(cubes.iter().map(|r| sys.cells(r)).collect::<Vec<_>>().iter()))
    }

    /// |S^(m)(A)*| in cells.
    fn star_cells(&self, sys: &DyadicSystem, a: &Cube, m: usize) -> usize {
        self.stripes[a][m - 1].iter().map(|r| sys.cell_count_of(r)).sum()
    }

    /// E_j^(m)(A): level-(lev A + j) cubes meeting S^(m)(A)*.
    pub fn e_cubes(&self, a: &Cube, m: usize, j: u32) -> Result<BTreeSet<Cube>> {
        Ok(self
            .stripe(a, m)?
            .iter()
            .filter_map(|r| r.ancestor(a.level() + j))
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StripeReport {
    pub cubes: usize,
    pub s1_violations: usize,
    pub s1_witness: Option<String>,
    /// Largest |S^(m)*| / |S^(n)*|.
    pub k1_star: f64,
    pub s3_violations: usize,
    pub s3_witness: Option<String>,
    /// Worst decay exponent of |E_j^(m)(A)*| / |A| against q^j.
    pub eps_star: f64,
    /// Smallest K_2 working with eps_star.
    pub k2_star: f64,
    pub ok: bool,
}

/// Exhaustive check of the four stripe conditions; reports the smallest
/// constants that work.
pub fn verify_s1_s4(sys: &DyadicSystem, family: &StripeFamily) -> StripeReport {
    let mut s1 = 0usize;
    let mut s1_witness = None;
    let mut k1_star = 0.0f64;
    let lambda = family.lambda;
    let log_q = sys.model().q().log2();
    let mut ratios: Vec<(u32, f64)> = Vec::new();
    for (a, lists) in &family.stripes {
        let own = sys.cells(a);
        let mut seen: Vec<Region> = Vec::new();
        for (m, list) in lists.iter().enumerate() {
            let bad = list.iter().find(|r| r.level() != a.level() + lambda || !a.contains(r));
            if let Some(r) = bad {
                s1 += 1;
                s1_witness.get_or_insert_with(|| format!("stripe {} of {a} holds {r}", m + 1));
            }
            seen.push(Region::union_all(list.iter().map(|r| sys.cells(r)).collect::<Vec<_>>().iter()));
        }
        let total: usize = seen.iter().map(Region::len).sum();
        let union = Region::union_all(seen.iter());
        if total != union.len() || union != own {
            s1 += 1;
            s1_witness.get_or_insert_with(|| format!("stripes of {a} do not partition it"));
        }
        let sizes: Vec<usize> = seen.iter().map(Region::len).collect();
        let (lo, hi) = (sizes.iter().min().copied().unwrap_or(0), sizes.iter().max().copied().unwrap_or(0));
        k1_star = k1_star.max(if lo == 0 { f64::INFINITY } else { hi as f64 / lo as f64 });

        for m in 1..=family.m_count {
            for j in 0..lambda {
                let e: usize = family.stripes[a][m - 1]
                    .iter()
                    .filter_map(|r| r.ancestor(a.level() + j))
                    .collect::<BTreeSet<_>>()
                    .iter()
                    .map(|c| sys.cell_count_of(c))
                    .sum();
                ratios.push((j, e as f64 / own.len() as f64));
            }
        }
    }

    let mut s3 = 0usize;
    let mut s3_witness = None;
    let cells = sys.model().cell_count();
    for m in 1..=family.m_count {
        let (cubes, regions): (Vec<&Cube>, Vec<Region>) = family
            .stripes
            .iter()
            .map(|(a, lists)| (a, Region::union_all(lists[m - 1].iter().map(|r| sys.cells(r)).collect::<Vec<_>>().iter())))
            .unzip();
        if let Some((x, y)) = nested_violation(&regions, cells) {
            s3 += 1;
            s3_witness.get_or_insert_with(|| format!("stripe {m} of {} and of {} overlap", cubes[x], cubes[y]));
        }
    }

    let eps_star = ratios
        .iter()
        .filter(|(j, _)| *j > 0)
        .map(|&(j, r)| if r > 0.0 { r.log2() / (j as f64 * log_q) } else { f64::INFINITY })
        .fold(f64::INFINITY, f64::min);
    let eps_fit = if eps_star.is_finite() { eps_star } else { family.eps };
    let k2_star = ratios
        .iter()
        .map(|&(j, r)| r / sys.model().q().powf(j as f64 * eps_fit))
        .fold(0.0, f64::max);

    let ok = s1 == 0
        && s3 == 0
        && k1_star <= family.k1
        && (lambda == 1 || eps_star >= family.eps)
        && k2_star <= family.k2;
    StripeReport {
        cubes: family.stripes.len(),
        s1_violations: s1,
        s1_witness,
        k1_star,
        s3_violations: s3,
        s3_witness,
        eps_star,
        k2_star,
        ok,
    }
}

/// K_3 = (1 + K_1) K_1^2 K_2 / (1 - q^ε), uniform in the gap k.
pub fn k3_constant(sys: &DyadicSystem, family: &StripeFamily) -> f64 {
    let q_eps = sys.model().q().powf(family.eps);
    (1.0 + family.k1) * family.k1 * family.k1 * family.k2 / (1.0 - q_eps)
}

/// Smallest k ≥ 1 with K_3 q^(k ε) ≤ 1 / (4 C_g^2).
pub fn gap_for(sys: &DyadicSystem, family: &StripeFamily, c_g: f64) -> u32 {
    let k3 = k3_constant(sys, family);
    let target = 1.0 / (4.0 * c_g * c_g);
    let mut k = 1;
    while k3 * sys.model().q().powf(k as f64 * family.eps) > target {
        k += 1;
    }
    k
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OverlapBound {
    pub lhs: Measure,
    pub rhs: f64,
    pub k3: f64,
    pub holds: bool,
}

/// |S^(m)(A)* ∩ ⋃_{B ∈ ℰ^(m)(A)} (S^(m)(B)* ∪ S^(n)(B)*)| against K_3 q^(kε) |S^(m)(A)*|,
/// where ℰ^(m)(A) collects E_{dk}^(m)(A) for 1 ≤ dk ≤ λ - 1.
pub fn overlap_bound(
    sys: &DyadicSystem,
    family: &StripeFamily,
    a: &Cube,
    m: usize,
    n: usize,
    k_gap: u32,
) -> Result<OverlapBound> {
    if k_gap == 0 {
        return Err(Error::InvalidParameter("gap must be at least 1".into()));
    }
    family.check_m(n)?;
    let lambda = family.lambda;
    let sm = family.star(sys, a, m)?;
    let mut covered: Vec<Region> = Vec::new();
    let mut d = 1;
    while d * k_gap < lambda {
        for b in family.e_cubes(a, m, d * k_gap)? {
            if !family.stripes.contains_key(&b) {
                return Err(Error::DepthInsufficient(format!("{b} has no stripes")));
            }
            covered.push(family.star(sys, &b, m)?);
            covered.push(family.star(sys, &b, n)?);
        }
        d += 1;
    }
    let hit = sm.intersection(&Region::union_all(covered.iter()));
    let k3 = k3_constant(sys, family);
    let rhs = k3 * sys.model().q().powf(k_gap as f64 * family.eps) * sm.len() as f64;
    Ok(OverlapBound {
        lhs: hit.measure(sys.model()),
        rhs: rhs * sys.model().cell_measure().to_f64(),
        k3,
        holds: hit.len() as f64 <= rhs,
    })
}

trait ToF64 {
    fn to_f64(&self) -> f64;
}

impl ToF64 for Measure {
    fn to_f64(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}

/// g^(m)_A = Σ_{R ∈ S^(m)(A)} ε_R h_R, with ε_R = +1 unless flipped.
#[derive(Clone, Debug)]
pub struct StripeFunctions {
    family: StripeFamily,
    haar: HaarSystem,
    signs: BTreeMap<Cube, i8>,
    /// Certified constant of the comparability condition between stripes.
    pub c_g: f64,
}

pub fn make_stripe_functions(family: &StripeFamily, haar: &HaarSystem) -> StripeFunctions {
    StripeFunctions {
        family: family.clone(),
        haar: haar.clone(),
        signs: BTreeMap::new(),
        c_g: 1.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StripeFunctionReport {
    pub g1_violations: usize,
    pub g2_violations: usize,
    /// Smallest C_g with ‖g^(m)‖_∞ ≤ C_g |S^(n)*|^-1 ∫|g^(n)|, m ≠ n.
    pub c_g_star: f64,
    /// Smallest C_S satisfying both hypotheses on Σ_n S^(n) h_Q and h_Q.
    pub c_s_star: f64,
    pub ok: bool,
}

impl StripeFunctions {
    pub fn family(&self) -> &StripeFamily {
        &self.family
    }

    pub fn haar(&self) -> &HaarSystem {
        &self.haar
    }

    /// Flips the sign of h_R inside every stripe function containing R.
    pub fn with_signs(mut self, signs: BTreeMap<Cube, i8>) -> Self {
        self.signs = signs;
        self
    }

    /// Cubes whose stripe functions exist: lev A + λ < J.
    pub fn domain(&self) -> impl Iterator<Item = &Cube> {
        let depth = self.haar.system().depth();
        let lambda = self.family.lambda;
        self.family.cubes().filter(move |a| a.level() + lambda < depth)
    }

    /// Signed cells of g^(m)_A, sorted by cell.
    pub fn signed_cells(&self, a: &Cube, m: usize) -> Result<Vec<(u32, i8)>> {
        if a.level() + self.family.lambda >= self.haar.system().depth() {
            return Err(Error::OutsideSystem(format!("{a} with lambda = {}", self.family.lambda)));
        }
        let mut out = Vec::new();
        for r in self.family.stripe(a, m)? {
            let flip = self.signs.get(r).copied().unwrap_or(1);
            out.extend(self.haar.signed_cells(r)?.into_iter().map(|(c, s)| (c, s * flip)));
        }
        out.sort_unstable();
        Ok(out)
    }

    pub fn function<S: Scalar>(&self, a: &Cube, m: usize) -> Result<CellFunction<S>> {
        let mut f = CellFunction::zeros(self.haar.cell_count());
        for (c, s) in self.signed_cells(a, m)? {
            f.values_mut()[c as usize] = if s > 0 { S::one() } else { -S::one() };
        }
        Ok(f)
    }

    /// Checks support, martingale-difference structure and the comparability
    /// constants exactly.
    pub fn verify(&self) -> Result<StripeFunctionReport> {
        let sys = self.haar.system();
        let lambda = self.family.lambda;
        let big_m = self.family.m_count;
        let mut g1 = 0usize;
        let mut g2 = 0usize;
        let mut c_g_star = 0.0f64;
        let mut c_s_star = 0.0f64;
        let mut by_level: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for a in self.domain().copied().collect::<Vec<_>>() {
            let mut sup_norm = vec![0i64; big_m + 1];
            let mut l1 = vec![0usize; big_m + 1];
            let mut stars = vec![0usize; big_m + 1];
            let mut total = vec![0i64; sys.model().cell_count()];
            for m in 1..=big_m {
                let star = self.family.star(sys, &a, m)?;
                stars[m] = star.len();
                let cells = self.signed_cells(&a, m)?;
                if cells.iter().any(|(c, _)| !star.contains(*c)) {
                    g1 += 1;
                }
                // mean zero on every level-(lev A + λ) cube
                let mut sums: BTreeMap<u32, i64> = BTreeMap::new();
                for &(c, s) in &cells {
                    *sums.entry(c >> ((sys.depth() - a.level() - lambda) as usize * sys.dim())).or_default() += s as i64;
                    total[c as usize] += s as i64;
                }
                if sums.values().any(|&v| v != 0) {
                    g2 += 1;
                }
                sup_norm[m] = cells.iter().map(|&(_, s)| (s as i64).abs()).max().unwrap_or(0);
                l1[m] = cells.iter().filter(|&&(_, s)| s != 0).count();
                by_level.entry(a.level()).or_default().extend(cells.iter().map(|&(c, _)| c));
            }
            for m in 1..=big_m {
                for n in 1..=big_m {
                    if m == n {
                        continue;
                    }
                    let ratio = if l1[n] == 0 {
                        f64::INFINITY
                    } else {
                        sup_norm[m] as f64 * stars[n] as f64 / l1[n] as f64
                    };
                    c_g_star = c_g_star.max(ratio);
                }
            }
            let count_a = sys.cell_count_of(&a) as f64;
            let h_l1 = count_a;
            let sum_sup = total.iter().map(|v| v.abs()).max().unwrap_or(0) as f64;
            let upper = sum_sup * count_a / h_l1;
            let lower_denominator: f64 = (1..=big_m).map(|n| l1[n] as f64 / count_a).sum();
            let lower = if lower_denominator > 0.0 { 1.0 / lower_denominator } else { f64::INFINITY };
            c_s_star = c_s_star.max(upper).max(lower);
        }
        for cells in by_level.values_mut() {
            let n = cells.len();
            cells.sort_unstable();
            cells.dedup();
            if cells.len() != n {
                g2 += 1;
            }
        }
        Ok(StripeFunctionReport {
            g1_violations: g1,
            g2_violations: g2,
            c_g_star,
            c_s_star,
            ok: g1 == 0 && g2 == 0 && c_g_star <= self.c_g,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelSetBound {
    /// |{|g^(n)| ≥ ‖g^(m)‖_∞ / (2 C_g)}|
    pub level_set: Measure,
    /// |S^(n)(A)*| / (2 C_g^2)
    pub bound: f64,
    pub holds: bool,
}

pub fn stripe_function_lowerbound(
    functions: &StripeFunctions,
    a: &Cube,
    m: usize,
    n: usize,
) -> Result<LevelSetBound> {
    let sys = functions.haar.system();
    let gm = functions.signed_cells(a, m)?;
    let gn = functions.signed_cells(a, n)?;
    let sup = gm.iter().map(|&(_, s)| (s as f64).abs()).fold(0.0, f64::max);
    let threshold = sup / (2.0 * functions.c_g);
    let count = gn.iter().filter(|&&(_, s)| (s as f64).abs() >= threshold).count();
    let star = functions.family.star_cells(sys, a, n);
    let bound_cells = star as f64 / (2.0 * functions.c_g * functions.c_g);
    Ok(LevelSetBound {
        level_set: sys.model().measure_of(count),
        bound: bound_cells / sys.model().cell_count() as f64,
        holds: count as f64 >= bound_cells,
    })
}

/// S^(m) f = Σ c_A g^(m)_A.
pub fn apply_stripe_operator<S: Scalar>(
    functions: &StripeFunctions,
    m: usize,
    coeffs: &BTreeMap<Cube, S>,
) -> Result<CellFunction<S>> {
    let mut out = CellFunction::zeros(functions.haar.cell_count());
    for (a, &c) in coeffs {
        for (cell, s) in functions.signed_cells(a, m)? {
            let v = &mut out.values_mut()[cell as usize];
            *v = if s > 0 { *v + c } else { *v - c };
        }
    }
    Ok(out)
}

/// Carriers A(Q) for one class 𝒞_ν^(δ) and a pair of stripes (m, n).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StripeCarriers {
    pub m: usize,
    pub n: usize,
    pub nu: u32,
    pub delta: u32,
    pub k_gap: u32,
    pub carriers: BTreeMap<Cube, Region>,
    pub nested: bool,
    /// min over Q of |A(Q) ∩ S^(n)(Q)*| / |S^(n)(Q)*|.
    pub worst_coverage: f64,
    /// 1 - 1/(4 C_g^2)
    pub coverage_bound: f64,
    pub coverage_ok: bool,
    /// max over Q of |S^(m)(Q)*| / |A(Q)|.
    pub max_stripe_ratio: f64,
    /// Levels where some carrier lives; ℱ_j and 𝒢_j are kept only there.
    pub levels: Vec<u32>,
    #[serde(skip)]
    pub f_filtration: Vec<SigmaAlgebra>,
    #[serde(skip)]
    pub g_filtration: Vec<SigmaAlgebra>,
}

/// Whether a level belongs to 𝒞_ν^(δ): level = (2j + δ)λ + i with i mod k = ν.
fn class_block(level: u32, lambda: u32, k_gap: u32, nu: u32, delta: u32) -> Option<u32> {
    let block = level / lambda;
    let i = level % lambda;
    (block % 2 == delta && i % k_gap == nu).then_some(block / 2)
}

/// Builds A(Q) = (S^(m)(Q)* ∪ S^(n)(Q)*) minus the carriers of finer cubes in
/// the same block, from the finest level of each block up.
pub fn build_stripe_carriers(
    sys: &DyadicSystem,
    functions: &StripeFunctions,
    m: usize,
    n: usize,
    nu: u32,
    delta: u32,
) -> Result<StripeCarriers> {
    let family = &functions.family;
    family.check_m(m)?;
    family.check_m(n)?;
    let lambda = family.lambda;
    if sys.depth() < lambda + 1 {
        return Err(Error::DepthInsufficient(format!(
            "depth {} leaves fewer than two levels for lambda = {lambda}",
            sys.depth()
        )));
    }
    let k_gap = gap_for(sys, family, functions.c_g);
    if nu >= k_gap || delta > 1 {
        return Err(Error::InvalidParameter(format!("nu = {nu}, delta = {delta} with gap {k_gap}")));
    }
    let top = sys.depth() - lambda;
    let mut blocks: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for level in 0..=top {
        if let Some(j) = class_block(level, lambda, k_gap, nu, delta) {
            blocks.entry(j).or_default().push(level);
        }
    }
    let cells = sys.model().cell_count();
    let mut carriers = BTreeMap::new();
    for levels in blocks.values() {
        let mut mask = vec![false; cells];
        for &level in levels.iter().rev() {
            let mut fresh = Vec::new();
            for q in sys.cubes_at(level) {
                let both = family.star(sys, &q, m)?.union(&family.star(sys, &q, n)?);
                let carrier: Region = both.cells().iter().copied().filter(|&c| !mask[c as usize]).collect();
                fresh.push((q, carrier));
            }
            for (q, carrier) in fresh {
                for &c in carrier.cells() {
                    mask[c as usize] = true;
                }
                carriers.insert(q, carrier);
            }
        }
    }

    let regions: Vec<Region> = carriers.values().filter(|r| !r.is_empty()).cloned().collect();
    let nested = nested_violation(&regions, cells).is_none();
    let c_g = functions.c_g;
    let coverage_bound = 1.0 - 1.0 / (4.0 * c_g * c_g);
    let mut worst_coverage = f64::INFINITY;
    let mut max_stripe_ratio = 0.0f64;
    for (q, carrier) in &carriers {
        let sn = family.star(sys, q, n)?;
        let inside = carrier.intersection(&sn).len();
        worst_coverage = worst_coverage.min(inside as f64 / sn.len() as f64);
        let sm = family.star_cells(sys, q, m);
        max_stripe_ratio = max_stripe_ratio.max(if carrier.is_empty() {
            f64::INFINITY
        } else {
            sm as f64 / carrier.len() as f64
        });
    }

    let levels: Vec<u32> = carriers.keys().map(Cube::level).collect::<BTreeSet<_>>().into_iter().collect();
    let mut f_filtration = Vec::with_capacity(levels.len());
    let mut g_filtration = Vec::with_capacity(levels.len());
    for &j in &levels {
        let f_gens: Vec<Region> = carriers
            .iter()
            .filter(|(q, r)| q.level() <= j && !r.is_empty())
            .map(|(_, r)| r.clone())
            .collect();
        f_filtration.push(SigmaAlgebra::generated_by(&f_gens, cells));
        let g_gens: Vec<Region> = family
            .cubes()
            .filter(|q| q.level() <= j)
            .map(|q| family.star(sys, q, m))
            .collect::<Result<_>>()?;
        g_filtration.push(SigmaAlgebra::generated_by(&g_gens, cells));
    }

    Ok(StripeCarriers {
        m,
        n,
        nu,
        delta,
        k_gap,
        carriers,
        nested,
        worst_coverage,
        coverage_bound,
        coverage_ok: worst_coverage >= coverage_bound,
        max_stripe_ratio,
        levels,
        f_filtration,
        g_filtration,
    })
}

impl StripeCarriers {
    /// Largest ‖g^(m)_Q‖_∞ / E(|g^(n)_Q| | ℱ_lev Q) over cells of A(Q), for Q in the
    /// functions' domain; the comparison constant is 8 C_g^3 (1 + K_1).
    pub fn domination_constant(&self, functions: &StripeFunctions) -> Result<f64> {
        let mut worst = 0.0f64;
        for (q, carrier) in &self.carriers {
            if carrier.is_empty() || q.level() + functions.family.lambda >= functions.haar.system().depth() {
                continue;
            }
            let idx = self.levels.binary_search(&q.level()).expect("carrier level");
            let alg = &self.f_filtration[idx];
            let gm = functions.signed_cells(q, self.m)?;
            let sup = gm.iter().map(|&(_, s)| (s as f64).abs()).fold(0.0, f64::max);
            let gn: BTreeMap<u32, i8> = functions.signed_cells(q, self.n)?.into_iter().collect();
            for &x in carrier.cells() {
                let atom = alg.atom_of(x);
                let mass = atom.cells().iter().filter(|c| gn.get(c).is_some_and(|s| *s != 0)).count();
                let e = mass as f64 / atom.len() as f64;
                worst = worst.max(if e == 0.0 { f64::INFINITY } else { sup / e });
            }
        }
        Ok(worst)
    }
}
