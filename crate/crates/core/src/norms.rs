//! L^p operator norms of Haar multipliers: exact at p = 2, witnessed lower
//! bounds otherwise.
//!
//! Every function in the span of a finite set of Haar functions is constant on
//! the pieces cut out by the child ranges of the cubes involved, so operators
//! are evaluated on those pieces instead of on cells.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cubes::{Cube, DyadicSystem};
use crate::error::{Error, Result};
use crate::haar::{make_haar, HaarSystem, SignScheme};
use crate::shift::{beta_policy, choose_ell, decompose, make_axis_shift, ShiftRelation};
use crate::stripe::{make_classical_stripes, make_stripe_functions, StripeFunctions};

/// Child ranges of one cube, in piece indices, with their Haar sign.
#[derive(Clone, Debug)]
struct Halves {
    ranges: Vec<(usize, usize, f64)>,
    measure: f64,
}

/// A linear map h_P ↦ Σ a_{P,R} h_R on a finite set of Haar functions.
#[derive(Clone, Debug)]
pub struct OperatorHandle {
    descriptor: String,
    domain: Vec<Cube>,
    image: Vec<Cube>,
    terms: Vec<Vec<(usize, f64)>>,
    weights: Vec<f64>,
    dom: Vec<Halves>,
    img: Vec<Halves>,
}

impl OperatorHandle {
    /// `map` lists each domain cube with its image terms. Domain cubes must be
    /// distinct and every cube must carry a Haar function.
    pub fn new(haar: &HaarSystem, descriptor: impl Into<String>, map: Vec<(Cube, Vec<(Cube, f64)>)>) -> Result<Self> {
        let sys = haar.system();
        let mut domain = Vec::with_capacity(map.len());
        let mut image_index: BTreeMap<Cube, usize> = BTreeMap::new();
        let mut terms = Vec::with_capacity(map.len());
        for (p, list) in map {
            haar.check(&p)?;
            domain.push(p);
            let mut row = Vec::with_capacity(list.len());
            for (r, a) in list {
                haar.check(&r)?;
                let next = image_index.len();
                row.push((*image_index.entry(r).or_insert(next), a));
            }
            terms.push(row);
        }
        if domain.iter().collect::<BTreeSet<_>>().len() != domain.len() {
            return Err(Error::InvalidParameter("repeated domain cube".into()));
        }
        let mut image = vec![Cube::root(sys.dim()); image_index.len()];
        for (r, i) in image_index {
            image[i] = r;
        }

        let cells = sys.model().cell_count() as u32;
        let children = 1u32 << sys.dim();
        let mut cuts: Vec<u32> = vec![0, cells];
        for c in domain.iter().chain(image.iter()) {
            let range = sys.cell_range(c);
            let step = (range.end - range.start) / children;
            cuts.extend((0..=children).map(|e| range.start + e * step));
        }
        cuts.sort_unstable();
        cuts.dedup();
        let weights = cuts.windows(2).map(|w| (w[1] - w[0]) as f64 / cells as f64).collect();
        let piece = |cell: u32| cuts.binary_search(&cell).expect("cut");
        let halves = |c: &Cube| {
            let range = sys.cell_range(c);
            let step = (range.end - range.start) / children;
            let axis = haar.split_axis(c);
            let ranges = (0..children)
                .map(|e| {
                    let lo = range.start + e * step;
                    let sign = if (e >> axis) & 1 == 0 { 1.0 } else { -1.0 };
                    (piece(lo), piece(lo + step), sign)
                })
                .collect();
            Halves {
                ranges,
                measure: (range.end - range.start) as f64 / cells as f64,
            }
        };
        let dom = domain.iter().map(halves).collect();
        let img = image.iter().map(halves).collect();
        Ok(Self {
            descriptor: descriptor.into(),
            domain,
            image,
            terms,
            weights,
            dom,
            img,
        })
    }

    /// T h_P = h_Q for the pairs of `tau` listed in `pairs`.
    pub fn shift(haar: &HaarSystem, descriptor: impl Into<String>, tau: &ShiftRelation, pairs: &[usize]) -> Result<Self> {
        let map = pairs
            .iter()
            .map(|&i| {
                let (p, q) = tau.pairs()[i];
                (p, vec![(q, 1.0)])
            })
            .collect();
        Self::new(haar, descriptor, map)
    }

    /// S^(m) h_A = g^(m)_A on every cube where stripe functions exist.
    pub fn stripe(functions: &StripeFunctions, descriptor: impl Into<String>, m: usize) -> Result<Self> {
        let family = functions.family();
        let mut map = Vec::new();
        for a in functions.domain() {
            let list: Vec<(Cube, f64)> = family.stripe(a, m)?.iter().map(|r| (*r, 1.0)).collect();
            map.push((*a, list));
        }
        // sign flips are carried by the functions; read them back per cube
        for (a, list) in &mut map {
            let cells: BTreeMap<u32, i8> = functions.signed_cells(a, m)?.into_iter().collect();
            for (r, coef) in list.iter_mut() {
                let first = functions.haar().signed_cells(r)?[0];
                *coef = (cells[&first.0] * first.1) as f64;
            }
        }
        Self::new(functions.haar(), descriptor, map)
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    pub fn domain(&self) -> &[Cube] {
        &self.domain
    }

    pub fn pieces(&self) -> usize {
        self.weights.len()
    }

    fn synth(&self, halves: &[Halves], coeffs: &[f64]) -> Vec<f64> {
        let mut diff = vec![0.0; self.weights.len() + 1];
        for (h, &c) in halves.iter().zip(coeffs) {
            if c == 0.0 {
                continue;
            }
            for &(lo, hi, s) in &h.ranges {
                diff[lo] += s * c;
                diff[hi] -= s * c;
            }
        }
        let mut acc = 0.0;
        diff.truncate(self.weights.len());
        for v in diff.iter_mut() {
            acc += *v;
            *v = acc;
        }
        diff
    }

    /// ∫ x h for each cube, unnormalized.
    fn pair(&self, halves: &[Halves], x: &[f64]) -> Vec<f64> {
        let mut prefix = Vec::with_capacity(x.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for (v, w) in x.iter().zip(&self.weights) {
            acc += v * w;
            prefix.push(acc);
        }
        halves
            .iter()
            .map(|h| h.ranges.iter().map(|&(lo, hi, s)| s * (prefix[hi] - prefix[lo])).sum())
            .collect()
    }

    fn forward(&self, c: &[f64]) -> Vec<f64> {
        let mut b = vec![0.0; self.image.len()];
        for (row, &cp) in self.terms.iter().zip(c) {
            for &(r, a) in row {
                b[r] += a * cp;
            }
        }
        b
    }

    fn backward(&self, b: &[f64]) -> Vec<f64> {
        self.terms
            .iter()
            .map(|row| row.iter().map(|&(r, a)| a * b[r]).sum())
            .collect()
    }

    fn norm(&self, values: &[f64], p: f64) -> f64 {
        let s: f64 = values.iter().zip(&self.weights).map(|(v, w)| v.abs().powf(p) * w).sum();
        s.powf(1.0 / p)
    }

    /// ‖T f‖_p / ‖f‖_p for f = Σ c_P h_P, evaluated on pieces.
    pub fn ratio(&self, coeffs: &[f64], p: f64) -> f64 {
        let f = self.synth(&self.dom, coeffs);
        let tf = self.synth(&self.img, &self.forward(coeffs));
        self.norm(&tf, p) / self.norm(&f, p)
    }

    /// Σ_P |P|^(-1/p) ‖T h_P‖_p, an upper bound for the norm on the span.
    pub fn crude_upper_bound(&self, p: f64) -> f64 {
        let mut total = 0.0;
        for (row, h) in self.terms.iter().zip(&self.dom) {
            let mut values: BTreeMap<usize, f64> = BTreeMap::new();
            let mut bounds = BTreeSet::new();
            for &(r, a) in row {
                for &(lo, hi, s) in &self.img[r].ranges {
                    *values.entry(lo).or_default() += s * a;
                    *values.entry(hi).or_default() -= s * a;
                    bounds.insert(lo);
                    bounds.insert(hi);
                }
            }
            let bounds: Vec<usize> = bounds.into_iter().collect();
            let mut acc = 0.0;
            let mut sum = 0.0;
            for w in bounds.windows(2) {
                acc += values[&w[0]];
                let mass: f64 = self.weights[w[0]..w[1]].iter().sum();
                sum += acc.abs().powf(p) * mass;
            }
            total += sum.powf(1.0 / p) * h.measure.powf(-1.0 / p);
        }
        total
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Exact2,
    LowerBound,
}

impl NormKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NormKind::Exact2 => "exact2",
            NormKind::LowerBound => "lower_bound",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormEstimate {
    pub descriptor: String,
    pub p: f64,
    pub value: f64,
    pub kind: NormKind,
    pub restarts: usize,
    pub iterations: usize,
    pub residual: f64,
    pub seed: u64,
    pub upper_bound: f64,
    /// Type and cotype of scalar L^p, min(2, p) and max(2, p).
    pub type_exponent: f64,
    pub cotype_exponent: f64,
    /// Coefficients of the maximizing f over the domain cubes.
    #[serde(skip)]
    pub witness: Vec<(Cube, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormOptions {
    /// Random restarts besides the deterministic start.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for NormOptions {
    fn default() -> Self {
        Self { restarts: 4, seed: 0 }
    }
}

const EXACT_TOL: f64 = 1e-10;
const EXACT_CAP: usize = 100_000;
const LOWER_TOL: f64 = 1e-7;
const LOWER_CAP: usize = 500;

/// Seed of one restart: the first eight bytes of SHA-256 over the descriptor,
/// p, restart index and base seed.
pub fn restart_seed(descriptor: &str, p: f64, restart: usize, seed: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(descriptor.as_bytes());
    h.update(p.to_le_bytes());
    h.update((restart as u64).to_le_bytes());
    h.update(seed.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest length"))
}

fn start_vector(op: &OperatorHandle, p: f64, restart: usize, seed: u64) -> Vec<f64> {
    if restart == 0 {
        return vec![1.0; op.domain.len()];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(&op.descriptor, p, restart, seed));
    (0..op.domain.len()).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn estimate(op: &OperatorHandle, p: f64, kind: NormKind, opts: NormOptions) -> NormEstimate {
    NormEstimate {
        descriptor: op.descriptor.clone(),
        p,
        value: 0.0,
        kind,
        restarts: opts.restarts,
        iterations: 0,
        residual: 0.0,
        seed: opts.seed,
        upper_bound: op.crude_upper_bound(p),
        type_exponent: p.min(2.0),
        cotype_exponent: p.max(2.0),
        witness: Vec::new(),
    }
}

/// Largest singular value of h-coefficients ↦ image coefficients under the
/// weights |P| and |R|, by power iteration on the normal operator.
pub fn opnorm_exact_2(op: &OperatorHandle, opts: NormOptions) -> Result<NormEstimate> {
    let mut best = estimate(op, 2.0, NormKind::Exact2, opts);
    if op.domain.is_empty() {
        return Ok(best);
    }
    let sd: Vec<f64> = op.dom.iter().map(|h| h.measure.sqrt()).collect();
    let wi: Vec<f64> = op.img.iter().map(|h| h.measure).collect();
    let apply = |d: &[f64]| -> Vec<f64> {
        let c: Vec<f64> = d.iter().zip(&sd).map(|(x, s)| x / s).collect();
        let b: Vec<f64> = op.forward(&c).iter().zip(&wi).map(|(x, w)| x * w).collect();
        op.backward(&b).iter().zip(&sd).map(|(x, s)| x / s).collect()
    };
    let unit = |v: &mut Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
        n
    };
    let mut best_converged = true;
    for restart in 0..=opts.restarts {
        let mut d = start_vector(op, 2.0, restart, opts.seed);
        if unit(&mut d) == 0.0 {
            continue;
        }
        let mut lambda = 0.0;
        let mut converged = false;
        let mut iterations = 0;
        let mut residual = f64::INFINITY;
        while iterations < EXACT_CAP {
            iterations += 1;
            let mut next = apply(&d);
            let rayleigh: f64 = next.iter().zip(&d).map(|(a, b)| a * b).sum();
            residual = next.iter().zip(&d).map(|(a, b)| (a - rayleigh * b).powi(2)).sum::<f64>().sqrt();
            if unit(&mut next) == 0.0 {
                converged = true;
                lambda = 0.0;
                residual = 0.0;
                break;
            }
            let done = (rayleigh - lambda).abs() <= EXACT_TOL * rayleigh.abs();
            lambda = rayleigh;
            d = next;
            if done {
                converged = true;
                break;
            }
        }
        let value = lambda.max(0.0).sqrt();
        if value > best.value || best.witness.is_empty() {
            best.value = value;
            best.iterations = iterations;
            best.residual = if lambda > 0.0 { residual / lambda } else { residual };
            best.witness = op.domain.iter().zip(d.iter().zip(&sd)).map(|(c, (x, s))| (*c, x / s)).collect();
            best_converged = converged;
        }
    }
    if !best_converged {
        return Err(Error::NonConvergence {
            iterations: best.iterations,
            residual: best.residual,
        });
    }
    Ok(best)
}

fn signed_power(x: f64, e: f64) -> f64 {
    x.signum() * x.abs().powf(e)
}

/// Nonlinear power method for sup ‖T f‖_p / ‖f‖_p over the span of the domain.
/// The value is attained by the returned witness.
pub fn opnorm_lower_p(op: &OperatorHandle, p: f64, opts: NormOptions) -> Result<NormEstimate> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!("p = {p} outside (1, ∞)")));
    }
    let mut best = estimate(op, p, NormKind::LowerBound, opts);
    if op.domain.is_empty() {
        return Ok(best);
    }
    let q = p / (p - 1.0);
    let dom_measure: Vec<f64> = op.dom.iter().map(|h| h.measure).collect();
    // divides a pairing ∫ x h_P by |P|, giving Haar coefficients
    let coefficients = |paired: Vec<f64>| -> Vec<f64> { paired.iter().zip(&dom_measure).map(|(x, m)| x / m).collect() };
    for restart in 0..=opts.restarts {
        let mut c = start_vector(op, p, restart, opts.seed);
        let mut value = op.ratio(&c, p);
        if !value.is_finite() {
            continue;
        }
        let mut step = 1.0f64;
        let mut iterations = 0;
        let mut residual = f64::INFINITY;
        // previous raw gradient, its preconditioned form and search direction
        let mut previous: Option<(Vec<f64>, Vec<f64>, Vec<f64>)> = None;
        while iterations < LOWER_CAP && value > 0.0 {
            iterations += 1;
            let f = op.synth(&op.dom, &c);
            let tf = op.synth(&op.img, &op.forward(&c));
            let z: Vec<f64> = tf.iter().map(|&y| signed_power(y, p - 1.0)).collect();
            let pair_a = op.backward(&op.pair(&op.img, &z));
            let pair_b = op.pair(&op.dom, &f.iter().map(|&y| signed_power(y, p - 1.0)).collect::<Vec<_>>());

            // dual-map step
            let u = op.synth(&op.dom, &coefficients(pair_a.clone()));
            let x: Vec<f64> = u.iter().map(|&y| signed_power(y, q - 1.0)).collect();
            let mut next = coefficients(op.pair(&op.dom, &x));
            let mut next_value = op.ratio(&next, p);
            let mut dual_won = true;

            // conjugate ascent on log(‖Tf‖_p / ‖f‖_p), preconditioned by |P|^-1
            let a = op.norm(&tf, p).powf(p);
            let b = op.norm(&f, p).powf(p);
            let raw: Vec<f64> = pair_a.iter().zip(&pair_b).map(|(ga, gb)| ga / a - gb / b).collect();
            let pre = coefficients(raw.clone());
            // scale-free stationarity: ‖c‖ ‖∇ log ratio‖ in the |P|-weighted metric
            let c_norm: f64 = c.iter().zip(&dom_measure).map(|(v, m)| v * v * m).sum::<f64>().sqrt();
            let g_norm: f64 = pre.iter().zip(&raw).map(|(z, r)| z * r).sum::<f64>().sqrt();
            residual = c_norm * g_norm;
            if residual <= LOWER_TOL {
                break;
            }
            let mut dir = pre.clone();
            if let Some((raw_prev, pre_prev, dir_prev)) = &previous {
                let num: f64 = pre.iter().zip(raw.iter().zip(raw_prev)).map(|(z, (r, rp))| z * (r - rp)).sum();
                let den: f64 = pre_prev.iter().zip(raw_prev).map(|(z, r)| z * r).sum();
                let beta = if den > 0.0 { (num / den).max(0.0) } else { 0.0 };
                dir.iter_mut().zip(dir_prev).for_each(|(d, dp)| *d += beta * dp);
                if dir.iter().zip(&raw).map(|(d, r)| d * r).sum::<f64>() <= 0.0 {
                    dir = pre.clone();
                }
            }
            let scale = (c.iter().map(|v| v * v).sum::<f64>() / dir.iter().map(|v| v * v).sum::<f64>()).sqrt();
            if scale.is_finite() {
                if let Some((t, v, trial)) = line_search(op, p, &c, &dir, scale, step, value) {
                    step = t;
                    if v > next_value || !next_value.is_finite() {
                        next = trial;
                        next_value = v;
                        dual_won = false;
                    }
                }
            }
            previous = if dual_won { None } else { Some((raw, pre, dir)) };
            if !(next_value > value) {
                break;
            }
            let norm = op.norm(&op.synth(&op.dom, &next), p);
            c = next.iter().map(|v| v / norm).collect();
            value = next_value;
        }
        if value > best.value {
            best.value = value;
            best.iterations = iterations;
            best.residual = residual;
            best.witness = op.domain.iter().copied().zip(c.iter().copied()).collect();
        }
    }
    Ok(best)
}

/// Maximizes the ratio along c + t·scale·dir: halves t until it improves on
/// `value`, then doubles while that keeps improving. Returns (t, value, point).
fn line_search(
    op: &OperatorHandle,
    p: f64,
    c: &[f64],
    dir: &[f64],
    scale: f64,
    start: f64,
    value: f64,
) -> Option<(f64, f64, Vec<f64>)> {
    let point = |t: f64| -> Vec<f64> { c.iter().zip(dir).map(|(cv, dv)| cv + t * scale * dv).collect() };
    let mut t = start;
    let mut found = None;
    for _ in 0..60 {
        let trial = point(t);
        let v = op.ratio(&trial, p);
        if v > value {
            found = Some((t, v, trial));
            break;
        }
        t *= 0.5;
    }
    let (mut t, mut v, mut trial) = found?;
    for _ in 0..30 {
        let wider = point(2.0 * t);
        let w = op.ratio(&wider, p);
        if w <= v {
            break;
        }
        t *= 2.0;
        v = w;
        trial = wider;
    }
    Some((t, v, trial))
}

/// Exact at p = 2, witnessed lower bound otherwise.
pub fn opnorm(op: &OperatorHandle, p: f64, opts: NormOptions) -> Result<NormEstimate> {
    if p == 2.0 {
        opnorm_exact_2(op, opts)
    } else {
        opnorm_lower_p(op, p, opts)
    }
}

/// ‖T f‖_p / ‖f‖_p recomputed on cells through Haar synthesis.
pub fn witness_ratio(haar: &HaarSystem, op: &OperatorHandle, witness: &[(Cube, f64)], p: f64) -> Result<f64> {
    let coeffs: BTreeMap<Cube, f64> = witness.iter().copied().collect();
    let index: BTreeMap<Cube, usize> = op.domain.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let mut image: BTreeMap<Cube, f64> = BTreeMap::new();
    for (cube, c) in &coeffs {
        let i = *index.get(cube).ok_or_else(|| Error::OutsideFamily(cube.to_string()))?;
        for &(r, a) in &op.terms[i] {
            *image.entry(op.image[r]).or_default() += a * c;
        }
    }
    let f = haar.synthesize(&coeffs)?;
    let tf = haar.synthesize(&image)?;
    Ok(tf.norm_p(p) / f.norm_p(p))
}

/// One row of a shift sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShiftNormRow {
    pub m: u64,
    pub ell: u32,
    pub classes: usize,
    pub full: NormEstimate,
    pub per_class: Vec<ClassNorm>,
}

/// Norm of T restricted to one class H_{k,j,i}.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassNorm {
    pub k: usize,
    pub j: usize,
    pub i: u32,
    /// Indices into the shift's pairs.
    #[serde(skip)]
    pub pairs: Vec<usize>,
    pub estimate: NormEstimate,
}

impl ShiftNormRow {
    pub fn class_max(&self) -> Option<f64> {
        self.per_class.iter().map(|c| c.estimate.value).reduce(f64::max)
    }
}

/// Axis shifts by each m on levels 0..J-1, with the class decomposition at the
/// ℓ of the β policy.
pub fn shift_norm_curve(
    sys: &DyadicSystem,
    m_list: &[u64],
    p: f64,
    c_r: f64,
    per_class: bool,
    opts: NormOptions,
) -> Result<Vec<ShiftNormRow>> {
    let haar = make_haar(sys, SignScheme::FirstHalf);
    let beta = beta_policy(sys, c_r).beta;
    m_list
        .par_iter()
        .map(|&m| {
            let tau = make_axis_shift(sys, m, 0, 0..sys.depth())?;
            let ell = choose_ell(sys, tau.m_param(), beta);
            if ell >= sys.depth() {
                return Err(Error::DepthInsufficient(format!(
                    "m = {m} needs ell = {ell} in a depth-{} system",
                    sys.depth()
                )));
            }
            let all: Vec<usize> = (0..tau.pairs().len()).collect();
            let full_op = OperatorHandle::shift(&haar, format!("shift m={m} full"), &tau, &all)?;
            let full = opnorm(&full_op, p, opts)?;
            let dec = decompose(sys, &tau, c_r, ell)?;
            let per_class = if per_class {
                dec.classes
                    .par_iter()
                    .map(|class| {
                        let op = OperatorHandle::shift(
                            &haar,
                            format!("shift m={m} class=({},{},{})", class.k, class.j, class.i),
                            &tau,
                            &class.pairs,
                        )?;
                        Ok(ClassNorm {
                            k: class.k,
                            j: class.j,
                            i: class.i,
                            pairs: class.pairs.clone(),
                            estimate: opnorm(&op, p, opts)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            Ok(ShiftNormRow {
                m,
                ell,
                classes: dec.classes.len(),
                full,
                per_class,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StripeNormRow {
    pub lambda: u32,
    pub m_count: usize,
    pub norm: NormEstimate,
    /// M^(-1/max(2,p)), the decay allowed by cotype.
    pub upper_envelope: f64,
    /// M^(-1/min(2,p)), the decay forced by type.
    pub lower_envelope: f64,
}

/// Norm of the first classical stripe operator for each λ.
pub fn stripe_norm_curve(sys: &DyadicSystem, lambdas: &[u32], p: f64, opts: NormOptions) -> Result<Vec<StripeNormRow>> {
    let haar = make_haar(sys, SignScheme::FirstHalf);
    for &lambda in lambdas {
        if lambda == 0 {
            return Err(Error::InvalidParameter("lambda must be at least 1".into()));
        }
        if lambda + 1 > sys.depth() {
            return Err(Error::DepthInsufficient(format!("lambda = {lambda} at depth {}", sys.depth())));
        }
    }
    lambdas
        .par_iter()
        .map(|&lambda| {
            let family = make_classical_stripes(sys, lambda)?;
            let functions = make_stripe_functions(&family, &haar);
            let op = OperatorHandle::stripe(&functions, format!("stripe lambda={lambda} m=1"), 1)?;
            let m_count = family.m_count();
            let mf = m_count as f64;
            Ok(StripeNormRow {
                lambda,
                m_count,
                norm: opnorm(&op, p, opts)?,
                upper_envelope: mf.powf(-1.0 / p.max(2.0)),
                lower_envelope: mf.powf(-1.0 / p.min(2.0)),
            })
        })
        .collect()
}

/// max over random f and stripes m, n of ‖S^(m) f‖_p / ‖S^(n) f‖_p, with
/// Gaussian coefficients on every cube carrying stripe functions.
pub fn stripe_ratio_statistic(functions: &StripeFunctions, p: f64, samples: usize, seed: u64) -> Result<f64> {
    let m_count = functions.family().m_count();
    let ops: Vec<OperatorHandle> = (1..=m_count)
        .map(|m| OperatorHandle::stripe(functions, format!("stripe m={m}"), m))
        .collect::<Result<_>>()?;
    let n = ops[0].domain.len();
    let worst = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(restart_seed("stripe ratio", p, s, seed));
            let c: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norms: Vec<f64> = ops
                .iter()
                .map(|op| op.norm(&op.synth(&op.img, &op.forward(&c)), p))
                .collect();
            let hi = norms.iter().copied().fold(0.0, f64::max);
            let lo = norms.iter().copied().fold(f64::INFINITY, f64::min);
            hi / lo
        })
        .reduce(|| 1.0, f64::max);
    Ok(worst)
}

/// One CSV line of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormCsvRow {
    pub operator: String,
    pub p: f64,
    pub param: String,
    pub norm: f64,
    pub kind: String,
    pub witness_file: String,
}

pub fn write_norms_csv(path: &Path, rows: &[NormCsvRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{SpaceKind, SpaceModel};
    use rand::Rng;

    fn sys(depth: u32) -> DyadicSystem {
        DyadicSystem::new(SpaceModel::new(SpaceKind::TorusSup, 1, depth).unwrap())
    }

    fn all_cubes(s: &DyadicSystem) -> Vec<Cube> {
        (0..s.depth()).flat_map(|n| s.cubes_at(n)).collect()
    }

    #[test]
    fn pieces_match_cells() {
        let s = DyadicSystem::new(SpaceModel::new(SpaceKind::TorusSup, 2, 4).unwrap());
        let haar = make_haar(&s, SignScheme::FirstHalf);
        let cubes = all_cubes(&s);
        let map = cubes.iter().map(|c| (*c, vec![(*c, 1.0)])).collect();
        let op = OperatorHandle::new(&haar, "identity", map).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let coeffs: Vec<f64> = cubes.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        let piecewise = op.synth(&op.dom, &coeffs);
        let dense = haar
            .synthesize(&cubes.iter().copied().zip(coeffs.iter().copied()).collect())
            .unwrap();
        assert_eq!(op.pieces(), s.model().cell_count());
        for (a, b) in piecewise.iter().zip(dense.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let back: Vec<f64> = op.pair(&op.dom, &piecewise).iter().zip(&op.dom).map(|(x, h)| x / h.measure).collect();
        for (a, b) in back.iter().zip(&coeffs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_two_examples() {
        let s = sys(12);
        let haar = make_haar(&s, SignScheme::FirstHalf);
        for m in [0, 1, 5, 100] {
            let tau = make_axis_shift(&s, m, 0, 0..12).unwrap();
            let all: Vec<usize> = (0..tau.pairs().len()).collect();
            let op = OperatorHandle::shift(&haar, format!("m={m}"), &tau, &all).unwrap();
            let e = opnorm_exact_2(&op, NormOptions::default()).unwrap();
            assert!((e.value - 1.0).abs() < 1e-9, "m={m}: {}", e.value);
            assert_eq!(e.kind, NormKind::Exact2);
        }
        let s = sys(8);
        let haar = make_haar(&s, SignScheme::FirstHalf);
        for lambda in 1..=5 {
            let g = make_stripe_functions(&make_classical_stripes(&s, lambda).unwrap(), &haar);
            let op = OperatorHandle::stripe(&g, "stripe", 2).unwrap();
            let e = opnorm_exact_2(&op, NormOptions::default()).unwrap();
            assert!((e.value - 0.5f64.powf(lambda as f64 / 2.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn scalar_multiple() {
        let s = sys(6);
        let haar = make_haar(&s, SignScheme::FirstHalf);
        let map = all_cubes(&s).into_iter().map(|c| (c, vec![(c, 2.0)])).collect();
        let op = OperatorHandle::new(&haar, "2I", map).unwrap();
        for p in [1.5, 2.0, 3.0, 7.0] {
            let e = opnorm_lower_p(&op, p, NormOptions::default()).unwrap();
            assert!((e.value - 2.0).abs() < 1e-6, "p={p}: {}", e.value);
        }
        assert!(opnorm_lower_p(&op, 1.0, NormOptions::default()).is_err());
        assert!(opnorm_lower_p(&op, f64::INFINITY, NormOptions::default()).is_err());
    }

    #[test]
    fn nonlinear_method_agrees_at_two() {
        let s = sys(9);
        let haar = make_haar(&s, SignScheme::FirstHalf);
        // a non-isometric multiplier: h_P ↦ h_P + h_{P+1} at one level
        let map = s.cubes_at(5).map(|c| (c, vec![(c, 1.0), (c.translate(0, 1), 0.5)])).collect();
        let op = OperatorHandle::new(&haar, "mix", map).unwrap();
        let exact = opnorm_exact_2(&op, NormOptions::default()).unwrap();
        let lower = opnorm_lower_p(&op, 2.0, NormOptions::default()).unwrap();
        assert!((exact.value - 1.5).abs() < 1e-9, "{}", exact.value);
        assert!((exact.value - lower.value).abs() < 1e-6);
    }

    #[test]
    fn witnesses_reproduce() {
        let s = sys(8);
        let haar = make_haar(&s, SignScheme::FirstHalf);
        let tau = make_axis_shift(&s, 3, 0, 0..8).unwrap();
        let all: Vec<usize> = (0..tau.pairs().len()).collect();
        let op = OperatorHandle::shift(&haar, "m=3", &tau, &all).unwrap();
        for p in [1.5, 2.0, 4.0] {
            let e = opnorm(&op, p, NormOptions::default()).unwrap();
            let r = witness_ratio(&haar, &op, &e.witness, p).unwrap();
            assert!((r - e.value).abs() <= 1e-12 * e.value, "p={p}: {r} vs {}", e.value);
            assert!(e.value <= e.upper_bound);
        }
    }

    #[test]
    fn restarts_never_lower_the_value() {
        let s = sys(7);
        let haar = make_haar(&s, SignScheme::FirstHalf);
        let tau = make_axis_shift(&s, 5, 0, 0..7).unwrap();
        let all: Vec<usize> = (0..tau.pairs().len()).collect();
        let op = OperatorHandle::shift(&haar, "m=5", &tau, &all).unwrap();
        let mut last = 0.0;
        for restarts in 0..4 {
            let e = opnorm_lower_p(&op, 4.0, NormOptions { restarts, seed: 9 }).unwrap();
            assert!(e.value >= last);
            last = e.value;
        }
    }

    #[test]
    fn stripe_beats_random_search() {
        let s = sys(6);
        let haar = make_haar(&s, SignScheme::FirstHalf);
        let g = make_stripe_functions(&make_classical_stripes(&s, 3).unwrap(), &haar);
        let op = OperatorHandle::stripe(&g, "stripe", 1).unwrap();
        let e = opnorm_lower_p(&op, 4.0, NormOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = op.domain().len();
        let mut random_max = 0.0f64;
        for _ in 0..20_000 {
            let c: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            random_max = random_max.max(op.ratio(&c, 4.0));
        }
        assert!(random_max <= e.value * (1.0 + 1e-6), "{random_max} > {}", e.value);
        assert!(e.value <= e.upper_bound);
    }

    #[test]
    fn curves() {
        let s = sys(8);
        let rows = shift_norm_curve(&s, &[0, 1, 4], 2.0, 4.0, true, NormOptions::default()).unwrap();
        for row in &rows {
            assert!((row.full.value - 1.0).abs() < 1e-9);
            assert!(row.per_class.iter().all(|c| (c.estimate.value - 1.0).abs() < 1e-9));
        }
        assert!(shift_norm_curve(&s, &[512], 2.0, 4.0, false, NormOptions::default()).is_err());
        let rows = stripe_norm_curve(&s, &[1, 2, 3], 2.0, NormOptions::default()).unwrap();
        for row in &rows {
            assert!((row.norm.value - row.upper_envelope).abs() < 1e-9);
        }
        assert!(stripe_norm_curve(&s, &[0], 2.0, NormOptions::default()).is_err());
        assert!(stripe_norm_curve(&s, &[8], 2.0, NormOptions::default()).is_err());
    }

    #[test]
    fn ratio_statistic_is_one_at_two() {
        let s = sys(8);
        let haar = make_haar(&s, SignScheme::FirstHalf);
        let g = make_stripe_functions(&make_classical_stripes(&s, 2).unwrap(), &haar);
        let r = stripe_ratio_statistic(&g, 2.0, 50, 1).unwrap();
        assert!((r - 1.0).abs() < 1e-9, "{r}");
    }
}
