//! Adapted grids: the enlargement σ(A) ⊇ A of a separated finite cube family
//! into a nested collection, with hypothesis checks, an independent verifier
//! and a generator of random admissible inputs.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cubes::{Cube, DyadicSystem};
use crate::error::{Error, Result};
use crate::region::Region;

/// A finite cube family 𝒜 with successor map φ and the constants C_R, μ.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdaptInput {
    /// Sorted, without repeats.
    pub family: Vec<Cube>,
    pub phi: BTreeMap<Cube, Vec<Cube>>,
    pub c_r: f64,
    pub mu: u32,
    /// Same-level pairs allowed to violate the separation condition. Used
    /// when 𝒜 holds both coordinates of a shift, whose partners sit close.
    pub separation_exempt: BTreeSet<(Cube, Cube)>,
}

impl AdaptInput {
    pub fn new(family: Vec<Cube>, phi: BTreeMap<Cube, Vec<Cube>>, c_r: f64, mu: u32) -> Self {
        let family: BTreeSet<Cube> = family.into_iter().collect();
        Self {
            family: family.into_iter().collect(),
            phi,
            c_r,
            mu,
            separation_exempt: BTreeSet::new(),
        }
    }

    /// Marks pairs as exempt from separation (stored in both orders).
    pub fn with_separation_exempt(mut self, pairs: impl IntoIterator<Item = (Cube, Cube)>) -> Self {
        for (a, b) in pairs {
            self.separation_exempt.insert((a, b));
            self.separation_exempt.insert((b, a));
        }
        self
    }

    /// α = 2 K_X^3 (C_2 + C_R) + C_R/2.
    pub fn alpha(&self, sys: &DyadicSystem) -> f64 {
        let k = sys.model().k_x();
        2.0 * k.powi(3) * (sys.constants().c2 + self.c_r) + self.c_r / 2.0
    }

    pub fn phi_of(&self, a: &Cube) -> &[Cube] {
        self.phi.get(a).map(Vec::as_slice).unwrap_or(&[])
    }

    fn exempt(&self, a: &Cube, b: &Cube) -> bool {
        self.separation_exempt.contains(&(*a, *b))
    }
}

/// C_d (K_X (C_2 + C_R) / C_1)^(log2 C_d).
pub fn measure_bound(sys: &DyadicSystem, c_r: f64) -> f64 {
    let m = sys.model();
    let c = sys.constants();
    m.c_d() * (m.k_x() * (c.c2 + c_r) / c.c1).powf(m.c_d().log2())
}

/// Smallest μ with 4 K_X^3 (1 + C_2/C_R) q^μ ≤ 1.
pub fn minimal_mu(sys: &DyadicSystem, c_r: f64) -> u32 {
    let lhs = constraint_factor(sys, c_r);
    let mut mu = 0;
    while lhs * sys.model().q_pow(mu as i64) > 1.0 {
        mu += 1;
    }
    mu
}

fn constraint_factor(sys: &DyadicSystem, c_r: f64) -> f64 {
    4.0 * sys.model().k_x().powi(3) * (1.0 + sys.constants().c2 / c_r)
}

/// 𝒜^(α): cubes of the level of some A ∈ 𝒜 that meet α◇A.
pub fn alpha_expansion(sys: &DyadicSystem, family: &[Cube], alpha: f64) -> Result<BTreeSet<Cube>> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} must be positive")));
    }
    let mut out = BTreeSet::new();
    for a in family {
        sys.check_cube(a)?;
        out.insert(*a);
        for &cell in sys.diamond(a, alpha).cells() {
            out.insert(sys.cube_of_cell(cell, a.level()));
        }
    }
    Ok(out)
}

/// π(C): the smallest strict superset of C in a nested collection, or None for X.
pub fn nested_predecessor(collection: &[Region], c: &Region) -> Result<Option<Region>> {
    if !collection.contains(c) {
        return Err(Error::NotAMember);
    }
    Ok(collection
        .iter()
        .filter(|r| r.len() > c.len() && c.is_subset(r))
        .min_by_key(|r| r.len())
        .cloned())
}

/// Nearest strict ancestor of `a` inside a cube set.
fn cube_predecessor(set: &BTreeSet<Cube>, a: &Cube) -> Option<Cube> {
    (0..a.level())
        .rev()
        .filter_map(|l| a.ancestor(l))
        .find(|anc| set.contains(anc))
}

/// Which form of the small-successor condition to check.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessorRule {
    /// lev A ≥ μ + lev pred(A) for every A ∈ 𝒜^(α), pred taken in 𝒜^(α).
    #[default]
    Literal,
    /// lev A ≥ μ + lev Ã for A ∈ 𝒜 and every Ã ∈ 𝒜^(α) with A ⊊ Ã.
    StrictAncestor,
    /// Both of the above.
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub condition: String,
    pub detail: String,
}

const MAX_LISTED: usize = 64;

fn push(list: &mut Vec<Violation>, count: &mut usize, condition: &str, detail: impl FnOnce() -> String) {
    *count += 1;
    if list.len() < MAX_LISTED {
        list.push(Violation {
            condition: condition.to_string(),
            detail: detail(),
        });
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub ok: bool,
    pub alpha: f64,
    /// 4 K_X^3 (1 + C_2/C_R) q^μ, which must not exceed 1.
    pub constraint_value: f64,
    pub violation_count: usize,
    /// First violations, capped.
    pub violations: Vec<Violation>,
}

pub fn check_hypotheses(sys: &DyadicSystem, input: &AdaptInput) -> HypothesisReport {
    check_hypotheses_with(sys, input, SuccessorRule::Literal)
}

pub fn check_hypotheses_with(
    sys: &DyadicSystem,
    input: &AdaptInput,
    rule: SuccessorRule,
) -> HypothesisReport {
    let mut v = Vec::new();
    let mut count = 0usize;
    let alpha = input.alpha(sys);
    let constraint_value = constraint_factor(sys, input.c_r) * sys.model().q_pow(input.mu as i64);

    if !(input.c_r > 0.0) {
        push(&mut v, &mut count, "constants", || format!("C_R = {} is not positive", input.c_r));
    }
    if constraint_value > 1.0 {
        push(&mut v, &mut count, "constants", || {
            format!("4 K^3 (1 + C_2/C_R) q^mu = {constraint_value} > 1")
        });
    }
    let members: BTreeSet<Cube> = input.family.iter().copied().collect();
    for a in &input.family {
        if sys.check_cube(a).is_err() {
            push(&mut v, &mut count, "domain", || format!("{a} is not a cube of the system"));
        }
    }
    if count > 0 {
        return HypothesisReport {
            ok: false,
            alpha,
            constraint_value,
            violation_count: count,
            violations: v,
        };
    }

    // separation, one cell-owner list per level
    let cells = sys.model().cell_count();
    let mut by_level: BTreeMap<u32, Vec<Cube>> = BTreeMap::new();
    for a in &input.family {
        by_level.entry(a.level()).or_default().push(*a);
    }
    for group in by_level.values() {
        let mut owners: Vec<Vec<u32>> = vec![Vec::new(); cells];
        for (i, a) in group.iter().enumerate() {
            let mut hit: BTreeSet<u32> = BTreeSet::new();
            let d = sys.diamond(a, input.c_r);
            for &c in d.cells() {
                for &o in &owners[c as usize] {
                    if !input.exempt(&group[o as usize], a) {
                        hit.insert(o);
                    }
                }
            }
            for o in hit {
                push(&mut v, &mut count, "separation", || {
                    format!("C_R-diamonds of {} and {a} intersect", group[o as usize])
                });
            }
            for &c in d.cells() {
                owners[c as usize].push(i as u32);
            }
        }
    }

    match alpha_expansion(sys, &input.family, alpha) {
        Ok(expanded) => {
            if matches!(rule, SuccessorRule::Literal | SuccessorRule::Both) {
                for a in &expanded {
                    if let Some(p) = cube_predecessor(&expanded, a) {
                        if a.level() < input.mu + p.level() {
                            push(&mut v, &mut count, "small_successor", || {
                                format!("{a} has predecessor {p} only {} levels up", a.level() - p.level())
                            });
                        }
                    }
                }
            }
            if matches!(rule, SuccessorRule::StrictAncestor | SuccessorRule::Both) {
                for a in &input.family {
                    for l in 0..a.level() {
                        let anc = a.ancestor(l).expect("l < level");
                        if expanded.contains(&anc) && a.level() < input.mu + l {
                            push(&mut v, &mut count, "small_successor_strict", || {
                                format!("{a} lies in {anc} of A^(alpha)")
                            });
                        }
                    }
                }
            }
        }
        Err(e) => push(&mut v, &mut count, "constants", || e.to_string()),
    }

    let k = sys.model().k_x();
    for (a, qs) in &input.phi {
        if !members.contains(a) {
            push(&mut v, &mut count, "phi_domain", || format!("phi defined at non-member {a}"));
            continue;
        }
        let reach = sys.diamond(a, input.c_r / (2.0 * k));
        for q in qs {
            if !members.contains(q) {
                push(&mut v, &mut count, "phi_domain", || format!("phi({a}) contains non-member {q}"));
                continue;
            }
            if q.level() <= a.level() {
                push(&mut v, &mut count, "phi_level", || format!("{q} in phi({a}) is not finer"));
            }
            if !sys.cells(q).is_subset(&reach) {
                push(&mut v, &mut count, "phi_localization", || {
                    format!("{q} in phi({a}) leaves (C_R/2K)◇{a}")
                });
            }
        }
    }

    HypothesisReport {
        ok: count == 0,
        alpha,
        constraint_value,
        violation_count: count,
        violations: v,
    }
}

/// How previously built regions meeting the seed set are found.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildMode {
    /// Cell-to-region coverage index.
    #[default]
    Indexed,
    /// Test every previously built region.
    FullScan,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SigmaEntry {
    pub cube: Cube,
    pub region: Region,
}

/// σ: 𝒜 → ℬ. ℬ members inherit the level of their preimage.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdaptedGrid {
    pub c_r: f64,
    sigma: BTreeMap<Cube, Region>,
}

impl AdaptedGrid {
    pub fn sigma(&self, a: &Cube) -> Option<&Region> {
        self.sigma.get(a)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Cube, &Region)> {
        self.sigma.iter()
    }

    /// Mutable access for fault injection in tests and fault suites.
    pub fn sigma_mut(&mut self) -> &mut BTreeMap<Cube, Region> {
        &mut self.sigma
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// JSON layout: entries of {cube: {level, coords}, region: [cells]}.
    pub fn to_json(&self) -> Result<String> {
        let entries: Vec<SigmaEntry> = self
            .sigma
            .iter()
            .map(|(c, r)| SigmaEntry {
                cube: *c,
                region: r.clone(),
            })
            .collect();
        Ok(serde_json::to_string(&entries)?)
    }
}

pub fn build_adapted_grid(sys: &DyadicSystem, input: &AdaptInput) -> Result<AdaptedGrid> {
    build_adapted_grid_with(sys, input, BuildMode::Indexed)
}

/// σ(A) = S ∪ ⋃{B built at finer levels : B ∩ S ≠ ∅} with S = A ∪ σ(φ(A))*,
/// processing occupied levels from the finest up.
pub fn build_adapted_grid_with(
    sys: &DyadicSystem,
    input: &AdaptInput,
    mode: BuildMode,
) -> Result<AdaptedGrid> {
    let members: BTreeSet<Cube> = input.family.iter().copied().collect();
    for (a, qs) in &input.phi {
        for q in std::iter::once(a).chain(qs) {
            if !members.contains(q) {
                return Err(Error::OutsideFamily(q.to_string()));
            }
        }
    }
    let report = check_hypotheses(sys, input);
    if !report.ok {
        let first = report
            .violations
            .first()
            .map(|v| format!("{}: {}", v.condition, v.detail))
            .unwrap_or_default();
        return Err(Error::HypothesesFailed(format!(
            "{} violation(s), first {first}",
            report.violation_count
        )));
    }

    let mut by_level: BTreeMap<u32, Vec<Cube>> = BTreeMap::new();
    for a in &input.family {
        by_level.entry(a.level()).or_default().push(*a);
    }
    let mut sigma: BTreeMap<Cube, Region> = BTreeMap::new();
    let mut built: Vec<Region> = Vec::new();
    let mut index: Vec<Vec<u32>> = vec![Vec::new(); sys.model().cell_count()];

    for (_, group) in by_level.iter().rev() {
        let level_regions: Vec<Region> = group
            .par_iter()
            .map(|a| {
                let seeds: Vec<&Region> = input
                    .phi_of(a)
                    .iter()
                    .map(|q| &sigma[q])
                    .collect();
                let seed = Region::union_all(std::iter::once(&sys.cells(a)).chain(seeds));
                let hits: Vec<u32> = match mode {
                    BuildMode::Indexed => {
                        let mut ids: Vec<u32> = seed
                            .cells()
                            .iter()
                            .flat_map(|&c| index[c as usize].iter().copied())
                            .collect();
                        ids.sort_unstable();
                        ids.dedup();
                        ids
                    }
                    BuildMode::FullScan => (0..built.len() as u32)
                        .filter(|&i| built[i as usize].intersects(&seed))
                        .collect(),
                };
                Region::union_all(
                    std::iter::once(&seed).chain(hits.iter().map(|&i| &built[i as usize])),
                )
            })
            .collect();
        for (a, region) in group.iter().zip(level_regions) {
            let id = built.len() as u32;
            for &c in region.cells() {
                index[c as usize].push(id);
            }
            built.push(region.clone());
            sigma.insert(*a, region);
        }
    }
    Ok(AdaptedGrid {
        c_r: input.c_r,
        sigma,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridReport {
    pub ok: bool,
    pub cubes: usize,
    pub measure_bound: f64,
    pub max_measure_ratio: f64,
    pub violation_count: usize,
    pub violations: Vec<Violation>,
}

/// Re-checks a grid from scratch: sandwich inclusions, measure bound,
/// pairwise nestedness and bijectivity of σ.
pub fn verify_adapted_grid(sys: &DyadicSystem, input: &AdaptInput, grid: &AdaptedGrid) -> GridReport {
    let mut v = Vec::new();
    let mut count = 0usize;
    let bound = measure_bound(sys, input.c_r);
    let mut max_ratio = 0.0f64;

    let domain: BTreeSet<Cube> = grid.sigma.keys().copied().collect();
    let family: BTreeSet<Cube> = input.family.iter().copied().collect();
    if domain != family {
        push(&mut v, &mut count, "bijectivity", || {
            format!("sigma defined on {} cubes, family has {}", domain.len(), family.len())
        });
    }
    let distinct: BTreeSet<&Region> = grid.sigma.values().collect();
    if distinct.len() != grid.sigma.len() {
        push(&mut v, &mut count, "bijectivity", || {
            format!("{} cubes share {} regions", grid.sigma.len(), distinct.len())
        });
    }

    let checks: Vec<Vec<Violation>> = grid
        .sigma
        .par_iter()
        .map(|(a, s)| {
            let mut local = Vec::new();
            let own = sys.cells_by_coords(a);
            if !own.is_subset(s) {
                local.push(Violation {
                    condition: "sandwich_lower".into(),
                    detail: format!("{a} not inside sigma({a})"),
                });
            }
            for q in input.phi_of(a) {
                match grid.sigma.get(q) {
                    Some(sq) if sq.is_subset(s) => {}
                    _ => local.push(Violation {
                        condition: "sandwich_lower".into(),
                        detail: format!("sigma({q}) not inside sigma({a})"),
                    }),
                }
            }
            if let Some(x) = s.first_outside(&sys.diamond(a, input.c_r)) {
                local.push(Violation {
                    condition: "sandwich_upper".into(),
                    detail: format!("cell {x} of sigma({a}) outside C_R◇{a}"),
                });
            }
            if s.len() as f64 > bound * own.len() as f64 {
                local.push(Violation {
                    condition: "measure".into(),
                    detail: format!("|sigma({a})| = {} |A|", s.len() as f64 / own.len() as f64),
                });
            }
            local
        })
        .collect();
    for (a, s) in &grid.sigma {
        max_ratio = max_ratio.max(s.len() as f64 / sys.cell_count_of(a) as f64);
    }
    for violation in checks.into_iter().flatten() {
        push(&mut v, &mut count, &violation.condition, || violation.detail.clone());
    }

    let entries: Vec<(&Cube, &Region)> = grid.sigma.iter().collect();
    let pairs: Vec<(usize, usize)> = (0..entries.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let entries = &entries;
            (i + 1..entries.len()).filter_map(move |j| {
                let (a, ra) = entries[i];
                let (b, rb) = entries[j];
                if a.level() == b.level() && input.exempt(a, b) {
                    return None;
                }
                if crate::region::comparable(ra, rb) {
                    None
                } else {
                    Some((i, j))
                }
            })
        })
        .collect();
    for (i, j) in pairs {
        push(&mut v, &mut count, "nestedness", || {
            format!("sigma({}) and sigma({}) overlap without containment", entries[i].0, entries[j].0)
        });
    }

    GridReport {
        ok: count == 0,
        cubes: grid.sigma.len(),
        measure_bound: bound,
        max_measure_ratio: max_ratio,
        violation_count: count,
        violations: v,
    }
}

/// Parameters of the random admissible-instance generator.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneratorParams {
    pub c_r: f64,
    pub mu: u32,
    /// Cap on members per occupied level.
    pub max_per_level: usize,
    /// Probability that an eligible finer member joins φ(A).
    pub phi_probability: f64,
    pub seed: u64,
}

impl GeneratorParams {
    pub fn new(sys: &DyadicSystem, c_r: f64, seed: u64) -> Self {
        Self {
            c_r,
            mu: minimal_mu(sys, c_r),
            max_per_level: 12,
            phi_probability: 0.5,
            seed,
        }
    }
}

/// Random input satisfying every hypothesis: occupied levels at least μ
/// apart, greedy C_R-separation within each level (finest first), and φ(A)
/// drawn from finer members inside (C_R/2K_X)◇A.
pub fn random_instance(sys: &DyadicSystem, params: &GeneratorParams) -> AdaptInput {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let depth = sys.depth();
    let mu = params.mu.max(1);
    let mut levels = Vec::new();
    let mut level = rng.gen_range(0..=mu.min(depth));
    while level <= depth {
        levels.push(level);
        level += mu + rng.gen_range(0..=1);
    }

    let cells = sys.model().cell_count();
    let mut family: Vec<Cube> = Vec::new();
    for &n in levels.iter().rev() {
        let mut candidates: Vec<Cube> = sys.cubes_at(n).collect();
        candidates.shuffle(&mut rng);
        let want = rng.gen_range(1..=params.max_per_level.max(1));
        let mut taken = vec![false; cells];
        let mut chosen = 0;
        for c in candidates {
            if chosen == want {
                break;
            }
            let d = sys.diamond(&c, params.c_r);
            if d.cells().iter().any(|&x| taken[x as usize]) {
                continue;
            }
            for &x in d.cells() {
                taken[x as usize] = true;
            }
            family.push(c);
            chosen += 1;
        }
    }
    family.sort();

    let k = sys.model().k_x();
    let mut phi = BTreeMap::new();
    for a in &family {
        let reach = sys.diamond(a, params.c_r / (2.0 * k));
        let chosen: Vec<Cube> = family
            .iter()
            .filter(|q| q.level() > a.level() && sys.cells(q).is_subset(&reach))
            .filter(|_| rng.gen_bool(params.phi_probability))
            .copied()
            .collect();
        if !chosen.is_empty() {
            phi.insert(*a, chosen);
        }
    }
    AdaptInput::new(family, phi, params.c_r, params.mu)
}
