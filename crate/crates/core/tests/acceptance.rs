//! Acceptance criteria, one line per criterion. Runs without the libtest
//! harness so the summary lines are always shown.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use alterstrip::blayer::{dirichlet_energy, line_mean, BoundaryLayerField, HalfStripDomain};
use alterstrip::corrector::{leading_constant_fit, log_spaced, ExpansionOptions, ExpansionState};
use alterstrip::fiber::{band_remainder_check, band_table, bottom, converged_bottom, eigs, resolvent_bounds, FiberCell};
use alterstrip::geometry::{build_mesh_with, make_cell, MeshParams};
use alterstrip::homogenized::{cell_resolvent_gap, strip_resolvent_gap, tau_grid, ModeCutoff, PowerOptions};
use alterstrip::series::extract_g;
use alterstrip::validate::{validate, CheckParams, Suite};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Case = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn fiber(eps: f64, eta: f64, mesh: MeshParams) -> FiberCell {
    let spec = make_cell(eps, eta).unwrap();
    FiberCell::new(spec, build_mesh_with(&spec, &mesh).unwrap()).unwrap()
}

fn standard_mesh() -> MeshParams {
    MeshParams::new(0.1, 8).with_transverse(0.02)
}

fn lambda2(eps: f64, eta: f64) -> f64 {
    let mut st = ExpansionState::new(eta, ExpansionOptions::default()).unwrap();
    st.advance_to(2).unwrap();
    st.lambda(eps)
}

fn boundary_layer_identities() -> Outcome {
    let mut notes = Vec::new();
    let mut energy_ok = true;
    let mut mean_ok = true;
    let mut sup_ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for eta in [0.1, PI / 6.0, FRAC_PI_4, 1.3] {
        let l = eta.sin().ln().abs();
        let e = dirichlet_energy(&HalfStripDomain::new(10.0), eta).unwrap();
        let rel = (e.value - PI * l).abs() / (PI * l);
        energy_ok &= rel <= 0.01;
        for xi2 in [0.01, 0.1, 1.0] {
            mean_ok &= line_mean(xi2, eta, 1e-12).unwrap().abs() <= 1e-8;
        }
        let field = BoundaryLayerField::new(eta).unwrap();
        let mut worst = 0.0f64;
        for _ in 0..10_000 {
            let x = rng.random_range(-FRAC_PI_2..FRAC_PI_2);
            let y = rng.random_range(0.0..10.0);
            worst = worst.max(field.value(x, y).unwrap().abs());
        }
        if worst > l {
            sup_ok = false;
            notes.push(format!("sup|X|={worst:.4}>|ln sin {eta:.4}|={l:.4}"));
        }
    }
    let detail =
        format!("energy within 1%: {energy_ok}, line means <= 1e-8: {mean_ok}, sup|X| <= |ln sin eta|: {sup_ok} {}", notes.join(" "));
    outcome(energy_ok && mean_ok && sup_ok, detail)
}

fn recurrence_exactness() -> Outcome {
    let mut worst = 0.0f64;
    for eta in [0.2, 0.6, FRAC_PI_4, 1.3] {
        let l = f64::ln(f64::sin(eta));
        let mut st = ExpansionState::new(eta, ExpansionOptions::default()).unwrap();
        let m1 = st.next_mu().unwrap();
        let m2 = st.next_mu().unwrap();
        worst = worst.max((m1 - 2.0 / PI * l).abs()).max((m2 - 3.0 / (PI * PI) * l * l).abs());
        let g1 = extract_g(1, &[]).unwrap();
        let g2 = extract_g(2, &[m1]).unwrap();
        worst = worst.max(g1.g_d.abs()).max(g1.g_n.abs()).max((g2.g_d - PI * m1 * m1 / 8.0).abs());
    }
    outcome(worst <= 1e-12, format!("worst deviation {worst:.2e} (tol 1e-12)"))
}

fn bottom_expansion() -> Outcome {
    let eta = FRAC_PI_4;
    let l3 = eta.sin().ln().abs().powi(3) + 1.0;
    let base = MeshParams::new(0.1, 8).with_transverse(0.01);
    let mut pass = true;
    let mut parts = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for eps in [0.2, 0.1, 0.05] {
        let spec = make_cell(eps, eta).unwrap();
        let r = converged_bottom(&spec, &base, 3, FRAC_1_SQRT_2).unwrap();
        let tol = 5.0 * eps.powi(3) * l3;
        let err = (r.extrapolated - lambda2(eps, eta)).abs();
        let changes: Vec<f64> = r.levels.windows(2).map(|w| (w[0].lambda1 - w[1].lambda1).abs()).collect();
        let converged = changes.iter().all(|&c| c < 0.1 * tol);
        let scaled = err / eps.powi(3);
        let unc = r.uncertainty / eps.powi(3);
        let no_growth = prev.is_none_or(|(s, u)| scaled <= s + u + unc);
        pass &= err <= tol && converged && no_growth;
        parts.push(format!("eps={eps}: err/eps^3={scaled:.4} (+-{unc:.3}) tol/eps^3={:.3} mesh ok {converged}", tol / eps.powi(3)));
        prev = Some((scaled, unc));
    }
    outcome(pass, parts.join("; "))
}

fn band_asymptotics() -> Outcome {
    let c = fiber(0.05, FRAC_PI_4, standard_mesh());
    let t = band_table(&c, &[-0.4, -0.2, 0.0, 0.2, 0.4], 3).unwrap();
    let rep = band_remainder_check(&t, 0.5, 0.0);
    let ok = rep.rows.len() == 15 && rep.rows.iter().all(|r| r.within_bound && r.bracket && r.lower_bound.unwrap_or(true));
    outcome(ok, format!("{} rows, smallest bound-to-remainder ratio {:.2}", rep.rows.len(), rep.margin()))
}

fn infimum_at_zero() -> Outcome {
    let c = fiber(0.1, FRAC_PI_4, standard_mesh());
    let b = bottom(&c, 11, &[-0.5, 0.5, -0.9, 0.9], 1e-8).unwrap();
    let gap = b.subgrid.iter().map(|&(_, l)| l - b.lambda1).fold(f64::INFINITY, f64::min);
    outcome(b.infimum_at_zero, format!("lambda1(0)={:.8}, min over grid of lambda1(tau)-lambda1(0) = {gap:.3e}", b.lambda1))
}

fn fiber_resolvent_gap() -> Outcome {
    let mut pass = true;
    let mut worst_ratio = 0.0f64;
    let mut lemma = 0.0f64;
    for eps in [0.1, 0.05] {
        for eta in [PI / 6.0, FRAC_PI_4] {
            let c = fiber(eps, eta, standard_mesh());
            for tau in [0.0, 0.4] {
                let g = cell_resolvent_gap(&c, tau, 0.5, &PowerOptions::default()).unwrap();
                let r = resolvent_bounds(&c, tau, 0.5, 20, 7).unwrap();
                pass &= g.holds && r.holds;
                worst_ratio = worst_ratio.max(g.norm_estimate / g.bound);
                lemma = r.worst.iter().cloned().fold(lemma, f64::max);
            }
        }
    }
    outcome(pass, format!("worst gap/bound {worst_ratio:.4}, worst discrete lemma ratio {lemma:.4}"))
}

fn strip_resolvent_gap_check() -> Outcome {
    let probes = ModeCutoff { m_max: 2, n_max: 6 };
    let opts = PowerOptions::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for eps in [0.1, 0.05] {
        let r = strip_resolvent_gap(&fiber(eps, FRAC_PI_4, standard_mesh()), &tau_grid(33), probes, &opts).unwrap();
        pass &= r.holds;
        parts.push(format!("eps={eps}: {:.4} <= {:.4}", r.sup_norm_estimate, r.bound));
    }
    let floor: Vec<f64> = [0.1, 0.05]
        .iter()
        .map(|&h| {
            let c = fiber(0.1, FRAC_PI_2, MeshParams::new(h, 0).with_transverse(h / 5.0));
            strip_resolvent_gap(&c, &tau_grid(5), probes, &opts).unwrap().sup_norm_estimate
        })
        .collect();
    let consistency = (floor[0] - floor[1]).abs();
    let ok = floor[1] <= 10.0 * consistency;
    pass &= ok;
    parts.push(format!("eta=pi/2: {:.3e} <= 10 x {consistency:.3e}", floor[1]));
    outcome(pass, parts.join("; "))
}

fn oracle_equivalence() -> Outcome {
    let eps = 0.1;
    let mut parts = Vec::new();
    let mut pass = true;
    for tau in [0.0, 0.5] {
        let mut exact: Vec<f64> =
            (-3i32..=3).flat_map(|m| (1..=6).map(move |n| ((2 * m) as f64 + tau).powi(2) / (eps * eps) + (n * n) as f64)).collect();
        exact.sort_by(f64::total_cmp);
        let rel = |t: f64| {
            let c = fiber(eps, FRAC_PI_2, MeshParams::new(0.2, 0).with_transverse(t));
            let e = eigs(&c.assemble(tau).unwrap(), 4).unwrap();
            e.values.iter().zip(&exact).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max)
        };
        let (moderate, fine) = (rel(0.01), rel(0.0025));
        pass &= moderate <= 1e-3 && fine <= 1e-5;
        parts.push(format!("tau={tau}: {moderate:.2e} then {fine:.2e}"));
    }
    outcome(pass, parts.join("; "))
}

fn leading_constants() -> Outcome {
    let etas = log_spaced(1e-4, 1e-2, 8);
    let k1 = leading_constant_fit(1, &etas).unwrap();
    let k2 = leading_constant_fit(2, &etas).unwrap();
    let (d1, d2) = ((k1 - 2.0 / PI).abs(), (k2 - 3.0 / (PI * PI)).abs());
    outcome(d1 <= 1e-3 && d2 <= 1e-3, format!("K1 off by {d1:.2e}, K2 off by {d2:.2e}"))
}

fn determinism() -> Outcome {
    let p = CheckParams {
        mesh: MeshParams::new(0.4, 3).with_transverse(0.1),
        tau_points: 5,
        probes: ModeCutoff { m_max: 1, n_max: 3 },
        seed: 42,
        ..Default::default()
    };
    let a = serde_json::to_vec(&validate(Suite::All, &p).unwrap()).unwrap();
    let b = serde_json::to_vec(&validate(Suite::All, &p).unwrap()).unwrap();
    outcome(a == b, format!("{} byte reports identical: {}", a.len(), a == b))
}

fn x1_energy_decays() -> Outcome {
    let e: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&eps| {
            let c = fiber(eps, FRAC_PI_4, standard_mesh());
            let b = bottom(&c, 0, &[], 0.0).unwrap();
            c.x1_energy(&b.eigenvector)
        })
        .collect();
    outcome(e[0] > e[1] && e[1] > e[2], format!("{:.4e} > {:.4e} > {:.4e}", e[0], e[1], e[2]))
}

fn cell_gap_shrinks() -> Outcome {
    let g: Vec<f64> = [0.1, 0.05]
        .iter()
        .map(|&eps| cell_resolvent_gap(&fiber(eps, FRAC_PI_4, standard_mesh()), 0.0, 0.5, &PowerOptions::default()).unwrap().norm_estimate)
        .collect();
    outcome(g[1] < g[0], format!("{:.4e} -> {:.4e}", g[0], g[1]))
}

fn main() -> ExitCode {
    let list = std::env::args().any(|a| a == "--list");
    let cases: [Case; 12] = [
        ("criterion 1 boundary layer identities", boundary_layer_identities),
        ("criterion 2 recurrence exactness", recurrence_exactness),
        ("criterion 3 bottom of spectrum expansion", bottom_expansion),
        ("criterion 4 band asymptotics", band_asymptotics),
        ("criterion 5 infimum at tau = 0", infimum_at_zero),
        ("criterion 6 fiber resolvent gap", fiber_resolvent_gap),
        ("criterion 7 strip resolvent gap", strip_resolvent_gap_check),
        ("criterion 8 oracle equivalence", oracle_equivalence),
        ("criterion 9 leading constants", leading_constants),
        ("criterion 10 determinism", determinism),
        ("property x1 energy decays with eps", x1_energy_decays),
        ("property cell gap shrinks with eps", cell_gap_shrinks),
    ];
    if list {
        for (name, _) in &cases {
            println!("{name}: test");
        }
        return ExitCode::SUCCESS;
    }
    let mut failed = 0;
    for (name, f) in cases {
        let t0 = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| outcome(false, "panicked"));
        let dt: Duration = t0.elapsed();
        println!("{} {name} ({:.1}s): {}", if r.pass { "PASS" } else { "FAIL" }, dt.as_secs_f64(), r.detail);
        failed += usize::from(!r.pass);
    }
    println!("acceptance: {} of {} passed", cases.len() - failed, cases.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
