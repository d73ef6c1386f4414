//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a subset.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use dyadic_core::adapt::{build_adapted_grid, measure_bound, random_instance, verify_adapted_grid, GeneratorParams};
use dyadic_core::haar::{make_haar, CellFunction, SignScheme};
use dyadic_core::norms::{
    opnorm_exact_2, opnorm_lower_p, shift_norm_curve, stripe_norm_curve, stripe_ratio_statistic, witness_ratio,
    NormEstimate, NormOptions, OperatorHandle,
};
use dyadic_core::shift::{
    beta_policy, build_theta, choose_ell, class_adapt_input, decompose, domination_check, make_axis_shift,
};
use dyadic_core::stripe::{
    build_stripe_carriers, gap_for, make_classical_stripes, make_stripe_functions, overlap_bound, verify_s1_s4,
};
use dyadic_core::{Cube, DyadicSystem, SpaceKind, SpaceModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_240_601;

const AXIOM_BUDGET: Duration = Duration::from_secs(60);
const LEMMA_INSTANCES: usize = 500;
const ADAPT_INSTANCES: u64 = 200;
const ADAPT_C_R: f64 = 4.0;
const ADAPT_MEASURE_BOUND_K1: f64 = 20.0;
const ADAPT_BUDGET: Duration = Duration::from_secs(180);
/// c5_star ≤ 4 C_h.
const DOMINATION_FACTOR: f64 = 4.0;
const ISOMETRY_TOL: f64 = 1e-9;
const CLASS_RATIO_BOUND: f64 = 3.0;
const GROWTH_FACTOR: f64 = 4.0;
const SHIFT_BUDGET: Duration = Duration::from_secs(600);
const STRIPE_TWO_TOL: f64 = 1e-9;
const ENVELOPE_SLACK: f64 = 2.0;
const RATIO_STATISTIC_BOUND: f64 = 10.0;
const RATIO_SAMPLES: usize = 1000;
const WITNESS_TOL: f64 = 1e-12;
const CROSS_TOL: f64 = 1e-6;

type Criterion = (u32, &'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn sup(dim: usize, depth: u32) -> DyadicSystem {
    DyadicSystem::new(SpaceModel::new(SpaceKind::TorusSup, dim, depth).unwrap())
}

fn models() -> Vec<(&'static str, DyadicSystem)> {
    vec![
        ("sup k=1 J=12", sup(1, 12)),
        ("sup k=2 J=6", sup(2, 6)),
        ("squared k=1 J=10", DyadicSystem::new(SpaceModel::new(SpaceKind::TorusSquared, 1, 10).unwrap())),
    ]
}

fn random_cube(sys: &DyadicSystem, level: u32, rng: &mut ChaCha8Rng) -> Cube {
    let side = 1u32 << level;
    let coords: Vec<u32> = (0..sys.dim()).map(|_| rng.gen_range(0..side)).collect();
    Cube::new(level, &coords).unwrap()
}

fn cube_axioms() -> Outcome {
    let start = Instant::now();
    let mut notes = Vec::new();
    let mut pass = true;
    for (name, sys) in models() {
        let report = sys.verify_axioms();
        let violations: u64 = report.properties.iter().map(|p| p.violations).sum();
        let checked = report.properties.len();
        pass &= report.ok && violations == 0 && checked == 8;
        notes.push(format!("{name}: {checked} properties, {violations} violations"));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < AXIOM_BUDGET;
    outcome(pass, format!("{}; {:.1}s of {}s", notes.join(", "), elapsed.as_secs_f64(), AXIOM_BUDGET.as_secs()))
}

fn diamond_lemmas() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, sys) in models() {
        let mut ball_failures = 0;
        for _ in 0..LEMMA_INSTANCES {
            let a = random_cube(&sys, rng.gen_range(0..=sys.depth()), &mut rng);
            let r = rng.gen_range(0.25..8.0);
            if !sys.diamond_in_ball(&a, r).holds {
                ball_failures += 1;
            }
        }
        let mut meeting = 0;
        let mut inclusion_failures = 0;
        for _ in 0..LEMMA_INSTANCES {
            let a1 = random_cube(&sys, rng.gen_range(0..=sys.depth()), &mut rng);
            let (r1, r2) = (rng.gen_range(0.25..8.0), rng.gen_range(0.25..8.0));
            // A2 through a random cell of r1◇A1 so that the diamonds meet
            let d1 = sys.diamond(&a1, r1);
            let cell = d1.cells()[rng.gen_range(0..d1.len())];
            let a2 = sys.cube_of_cell(cell, rng.gen_range(a1.level()..=sys.depth()));
            let check = sys.diamond_intersection_bound(&a1, &a2, r1, r2);
            if check.intersects {
                meeting += 1;
                if !check.inclusion_verified {
                    inclusion_failures += 1;
                }
            }
        }
        pass &= ball_failures == 0 && inclusion_failures == 0 && meeting == LEMMA_INSTANCES;
        notes.push(format!(
            "{name}: ball {ball_failures}/{LEMMA_INSTANCES} failures, intersection {inclusion_failures}/{meeting} failures"
        ));
    }
    outcome(pass, notes.join(", "))
}

fn adapted_grids() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, sys, bound) in [
        ("k=1 J=12", sup(1, 12), Some(ADAPT_MEASURE_BOUND_K1)),
        ("k=2 J=6", sup(2, 6), None),
    ] {
        let mut failed = 0;
        let mut nondeterministic = 0;
        let mut worst = 0.0f64;
        for i in 0..ADAPT_INSTANCES {
            let params = GeneratorParams::new(&sys, ADAPT_C_R, SEED + i);
            let input = random_instance(&sys, &params);
            let grid = match build_adapted_grid(&sys, &input) {
                Ok(g) => g,
                Err(_) => {
                    failed += 1;
                    continue;
                }
            };
            let report = verify_adapted_grid(&sys, &input, &grid);
            worst = worst.max(report.max_measure_ratio);
            if !report.ok {
                failed += 1;
            }
            let again = build_adapted_grid(&sys, &random_instance(&sys, &params)).unwrap();
            if again.to_json().unwrap() != grid.to_json().unwrap() {
                nondeterministic += 1;
            }
        }
        let bound = bound.unwrap_or_else(|| measure_bound(&sys, ADAPT_C_R));
        pass &= failed == 0 && nondeterministic == 0 && worst <= bound;
        notes.push(format!(
            "{name}: {failed} failed, {nondeterministic} nondeterministic, max measure ratio {worst:.3} (bound {bound})"
        ));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < ADAPT_BUDGET;
    outcome(pass, format!("{}; {:.1}s of {}s", notes.join(", "), elapsed.as_secs_f64(), ADAPT_BUDGET.as_secs()))
}

fn domination() -> Outcome {
    let sys = sup(1, 12);
    let haar = make_haar(&sys, SignScheme::FirstHalf);
    let beta = beta_policy(&sys, ADAPT_C_R).beta;
    let limit = DOMINATION_FACTOR * haar.c_h();
    let mut pass = true;
    let mut notes = Vec::new();
    for m in [1u64, 2, 8] {
        let tau = make_axis_shift(&sys, m, 0, 0..sys.depth()).unwrap();
        let ell = choose_ell(&sys, tau.m_param(), beta);
        let dec = decompose(&sys, &tau, ADAPT_C_R, ell).unwrap();
        let mut worst = 0.0f64;
        let mut cells = 0usize;
        let mut failures = 0usize;
        for class in &dec.classes {
            let input = class_adapt_input(&tau, &dec, class);
            let report = build_adapted_grid(&sys, &input)
                .and_then(|grid| build_theta(&sys, &tau, class, &grid))
                .and_then(|theta| domination_check(&sys, &tau, class, &theta, &haar));
            match report {
                Ok(r) => {
                    worst = worst.max(r.c5_star);
                    cells += r.cells_checked;
                    failures += usize::from(!r.ok);
                }
                Err(_) => failures += 1,
            }
        }
        pass &= failures == 0 && worst <= limit;
        notes.push(format!(
            "m={m} ell={ell}: {} classes, {cells} cells, c5_star {worst:.3}",
            dec.classes.len()
        ));
    }
    outcome(pass, format!("{}; limit {limit}", notes.join(", ")))
}

fn shift_norms() -> Outcome {
    let start = Instant::now();
    let sys = sup(1, 14);
    let haar = make_haar(&sys, SignScheme::FirstHalf);
    let opts = NormOptions { restarts: 4, seed: SEED };

    let mut worst_two = 0.0f64;
    for m in 0..=512u64 {
        let tau = make_axis_shift(&sys, m, 0, 0..sys.depth()).unwrap();
        let all: Vec<usize> = (0..tau.pairs().len()).collect();
        let op = OperatorHandle::shift(&haar, format!("shift m={m} full"), &tau, &all).unwrap();
        let e = opnorm_exact_2(&op, opts).unwrap();
        worst_two = worst_two.max((e.value - 1.0).abs());
    }

    let ms: Vec<u64> = (0..10).map(|i| 1u64 << i).collect();
    let rows = shift_norm_curve(&sys, &ms, 4.0, ADAPT_C_R, true, opts).unwrap();
    let base_class = rows[0].class_max().unwrap();
    let class_ratio = rows.iter().map(|r| r.class_max().unwrap()).fold(0.0, f64::max) / base_class;
    let base_full = rows[0].full.value;
    let mut growth_ok = true;
    let mut curve = Vec::new();
    for row in &rows {
        let envelope = base_full * GROWTH_FACTOR * (2.0 + row.m as f64).log2();
        growth_ok &= row.full.value <= envelope;
        curve.push(format!("{}:{:.3}", row.m, row.full.value));
    }
    let elapsed = start.elapsed();
    let pass = worst_two <= ISOMETRY_TOL && class_ratio <= CLASS_RATIO_BOUND && growth_ok && elapsed < SHIFT_BUDGET;
    outcome(
        pass,
        format!(
            "p=2 max |N-1| {worst_two:.1e} over m=0..512; p=4 class ratio {class_ratio:.3} (bound {CLASS_RATIO_BOUND}); \
             p=4 full N(m) [{}] within N(1)*{GROWTH_FACTOR}*log2(2+m): {growth_ok}; {:.1}s of {}s",
            curve.join(" "),
            elapsed.as_secs_f64(),
            SHIFT_BUDGET.as_secs()
        ),
    )
}

fn stripes() -> Outcome {
    let sys = sup(1, 10);
    let haar = make_haar(&sys, SignScheme::FirstHalf);
    let mut pass = true;
    let mut notes = Vec::new();

    let mut constants_ok = true;
    let mut overlap_checks = 0usize;
    let mut overlap_failures = 0usize;
    let mut carrier_checks = 0usize;
    let mut carrier_failures = 0usize;
    for lambda in 1..=5u32 {
        let family = make_classical_stripes(&sys, lambda).unwrap();
        let report = verify_s1_s4(&sys, &family);
        constants_ok &= report.ok
            && family.m_count() == 1 << lambda
            && report.k1_star == 1.0
            && report.k2_star == 1.0
            && (lambda == 1 || report.eps_star == 1.0);
        let functions = make_stripe_functions(&family, &haar);
        let k_gap = gap_for(&sys, &family, functions.c_g);
        let m_count = family.m_count();
        for a in family.cubes().filter(|a| a.level() + 2 * lambda <= sys.depth() + 1) {
            for k in (1..lambda).chain([k_gap]) {
                for m in 1..=m_count {
                    for n in 1..=m_count {
                        overlap_checks += 1;
                        if !overlap_bound(&sys, &family, a, m, n, k).unwrap().holds {
                            overlap_failures += 1;
                        }
                    }
                }
            }
        }
        for (m, n) in [(1, m_count), (m_count, 1), (1, 1), (m_count / 2 + 1, m_count.min(2))] {
            for delta in 0..2 {
                for nu in 0..k_gap {
                    let c = build_stripe_carriers(&sys, &functions, m, n, nu, delta).unwrap();
                    carrier_checks += 1;
                    if !(c.nested && c.coverage_ok) {
                        carrier_failures += 1;
                    }
                }
            }
        }
    }
    pass &= constants_ok && overlap_failures == 0 && carrier_failures == 0;
    notes.push(format!(
        "K1=K2=eps=1, M=2^lambda: {constants_ok}; overlap {overlap_failures}/{overlap_checks} failures; \
         carriers {carrier_failures}/{carrier_checks} failures"
    ));

    let opts = NormOptions { restarts: 4, seed: SEED };
    let lambdas: Vec<u32> = (1..=5).collect();
    let two = stripe_norm_curve(&sys, &lambdas, 2.0, opts).unwrap();
    let two_err = two
        .iter()
        .map(|r| (r.norm.value - 0.5f64.powf(r.lambda as f64 / 2.0)).abs())
        .fold(0.0, f64::max);
    pass &= two_err <= STRIPE_TWO_TOL;
    notes.push(format!("p=2 max error {two_err:.1e}"));

    let four = stripe_norm_curve(&sys, &lambdas, 4.0, opts).unwrap();
    let m1 = four[0].m_count as f64;
    let c_low = four[0].norm.value / m1.powf(-0.5);
    let c_high = four[0].norm.value / m1.powf(-0.25);
    let mut envelope_ok = true;
    let mut curve = Vec::new();
    for r in &four {
        let m = r.m_count as f64;
        envelope_ok &= c_low * m.powf(-0.5) / ENVELOPE_SLACK <= r.norm.value
            && r.norm.value <= ENVELOPE_SLACK * c_high * m.powf(-0.25);
        curve.push(format!("{}:{:.4}", r.lambda, r.norm.value));
    }
    pass &= envelope_ok;
    notes.push(format!("p=4 [{}] in envelope: {envelope_ok}", curve.join(" ")));

    let mut worst_ratio = 0.0f64;
    for lambda in 1..=5u32 {
        let functions = make_stripe_functions(&make_classical_stripes(&sys, lambda).unwrap(), &haar);
        for p in [1.5, 2.0, 3.0] {
            worst_ratio = worst_ratio.max(stripe_ratio_statistic(&functions, p, RATIO_SAMPLES, SEED).unwrap());
        }
    }
    pass &= worst_ratio <= RATIO_STATISTIC_BOUND;
    notes.push(format!("ratio statistic {worst_ratio:.3} (bound {RATIO_STATISTIC_BOUND})"));
    outcome(pass, notes.join("; "))
}

fn estimator_soundness() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let sys = sup(1, 10);
    let haar = make_haar(&sys, SignScheme::FirstHalf);
    let opts = NormOptions { restarts: 4, seed: SEED };
    let mut ops = Vec::new();
    for m in [1u64, 8, 64] {
        let tau = make_axis_shift(&sys, m, 0, 0..sys.depth()).unwrap();
        let all: Vec<usize> = (0..tau.pairs().len()).collect();
        ops.push(OperatorHandle::shift(&haar, format!("shift m={m}"), &tau, &all).unwrap());
    }
    for lambda in 1..=5 {
        let functions = make_stripe_functions(&make_classical_stripes(&sys, lambda).unwrap(), &haar);
        ops.push(OperatorHandle::stripe(&functions, format!("stripe lambda={lambda}"), 1).unwrap());
    }

    let mut worst_witness = 0.0f64;
    let mut worst_cross = 0.0f64;
    let mut bounded = true;
    let mut count = 0;
    for (i, op) in ops.iter().enumerate() {
        for p in [1.5, 3.0, 4.0] {
            let e = opnorm_lower_p(op, p, opts).unwrap();
            bounded &= e.value <= e.upper_bound;
            worst_witness = worst_witness.max(reproduce(&haar, op, &e, &dir.path().join(format!("w{i}_{p}.csv"))));
            count += 1;
        }
        let exact = opnorm_exact_2(op, opts).unwrap();
        let nonlinear = opnorm_lower_p(op, 2.0, opts).unwrap();
        worst_cross = worst_cross.max((exact.value - nonlinear.value).abs());
        worst_witness = worst_witness.max(reproduce(&haar, op, &nonlinear, &dir.path().join(format!("w{i}_2.csv"))));
        count += 1;
    }
    let pass = worst_witness <= WITNESS_TOL && worst_cross <= CROSS_TOL && bounded;
    outcome(
        pass,
        format!(
            "{count} lower bounds, max relative witness error {worst_witness:.1e}; \
             p=2 max |nonlinear - exact| {worst_cross:.1e}; below crude upper bound: {bounded}"
        ),
    )
}

/// Dumps the witness as a cell function, reads it back, re-expands it in the
/// Haar basis and recomputes the ratio; returns the relative error.
fn reproduce(haar: &dyadic_core::haar::HaarSystem, op: &OperatorHandle, e: &NormEstimate, path: &std::path::Path) -> f64 {
    let f = haar.synthesize::<f64>(&e.witness.iter().copied().collect()).unwrap();
    f.write_csv(path).unwrap();
    let back = CellFunction::<f64>::read_csv(path).unwrap();
    let coeffs: BTreeMap<Cube, f64> = haar.analyze(&back, op.domain()).unwrap();
    let witness: Vec<(Cube, f64)> = coeffs.into_iter().collect();
    let r = witness_ratio(haar, op, &witness, e.p).unwrap();
    (r - e.value).abs() / e.value
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [Criterion; 7] = [
        (1, "cube axioms", cube_axioms),
        (2, "diamond lemmas", diamond_lemmas),
        (3, "adapted grids", adapted_grids),
        (4, "domination", domination),
        (5, "shift norms", shift_norms),
        (6, "stripes", stripes),
        (7, "norm estimator soundness", estimator_soundness),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        failed += usize::from(!o.pass);
        println!(
            "criterion {n} ({name}): {} [{:.1}s] {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
