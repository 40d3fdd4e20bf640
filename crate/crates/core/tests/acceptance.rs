//! Acceptance suite. Each criterion prints one PASS/FAIL line; the test
//! fails if any criterion fails.
//!
//! Run with `cargo test -p dmresponse --test acceptance -- --nocapture`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::*;
use dmresponse::linalg::{
    congruence_transform, sym_eigendecompose, Congruence, Matrix, SymmetricMatrix,
};
use dmresponse::mixed::{reduced_precision_pipeline, round_binary16, Precision};
use dmresponse::models::{chain_hamiltonian, chain_tridiagonal, gapped_random, random_symmetric};
use dmresponse::oracles::tridiagonal_response_oracle;
use dmresponse::response::{
    dm_perturbation_forward, dm_perturbation_replay, forward_expansion_with, observable_position_derivative,
    orthogonal_hamiltonian_derivative, susceptibility_backward, susceptibility_forward, z_position_derivative,
    PerpTerm,
};
use dmresponse::scf::{
    scf_dm_response, scf_ground_state, scf_susceptibility, BilinearKernel, DiagonalHubbard, ScfConfig,
    SelfConsistencyKernel,
};
use dmresponse::sp2::sp2_ground_state;
use dmresponse::sparse::{SparseMatrix, ThresholdedAlgebra};
use dmresponse::thermal::{
    loewner_directional_derivative, Fermi, LoewnerMatrix, SpectralFunction, ThermalState, DEGENERACY_REL,
};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn duality_systems() -> Vec<System> {
    (0..20).map(|s| gapped_system(50, 0.5, 100 + s)).collect()
}

fn criterion_1_duality() -> Outcome {
    let systems = duality_systems();
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for s in &systems {
        let d1 = dm_perturbation_forward(&s.h0, &s.h1, s.n_occ).map_err(|e| e.to_string())?.d1;
        let chi = susceptibility_forward(&s.h0, &s.a, s.n_occ).map_err(|e| e.to_string())?.chi;
        let direct = s.a.trace_product(&d1);
        let dual = chi.trace_product(&s.h1);
        worst = worst.max((direct - dual).abs() / direct.abs().max(1e-12));
    }
    let secs = t0.elapsed().as_secs_f64();
    check(
        worst <= 1e-10 && secs < 10.0,
        format!("max relative |Tr[A D1] - Tr[chi H1]| = {worst:.2e} (<= 1e-10), {secs:.2} s (< 10 s)"),
    )
}

fn criterion_2_forward_backward() -> Outcome {
    let mut worst = 0.0f64;
    for s in &duality_systems() {
        let fwd = susceptibility_forward(&s.h0, &s.a, s.n_occ).map_err(|e| e.to_string())?.chi;
        let bwd = susceptibility_backward(&s.h0, &s.a, s.n_occ).map_err(|e| e.to_string())?.chi;
        worst = worst.max(fwd.distance(&bwd) / fwd.frobenius_norm().max(1.0));
    }
    check(
        worst <= 1e-9,
        format!("max ||chi_fwd - chi_bwd||_F / max(1, ||chi||_F) = {worst:.2e} (<= 1e-9)"),
    )
}

fn fd_sp2(s: &System, h: f64) -> Result<SymmetricMatrix, String> {
    let plus = sp2_ground_state(&s.h0.lincomb(1.0, &s.h1, h).unwrap(), s.n_occ, None).map_err(|e| e.to_string())?.0;
    let minus = sp2_ground_state(&s.h0.lincomb(1.0, &s.h1, -h).unwrap(), s.n_occ, None).map_err(|e| e.to_string())?.0;
    Ok(plus.lincomb(0.5 / h, &minus, -0.5 / h).unwrap())
}

fn criterion_3_oracles() -> Outcome {
    let mut worst_exact = 0.0f64;
    let mut worst_fd = 0.0f64;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in &duality_systems() {
        let d1 = dm_perturbation_forward(&s.h0, &s.h1, s.n_occ).map_err(|e| e.to_string())?.d1;
        let exact = projector_derivative(&s.h0, &s.h1, s.n_occ);
        worst_exact = worst_exact.max(d1.distance(&exact));
        worst_fd = worst_fd.max(d1.distance(&fd_sp2(s, 1e-5)?));
        let errs: Vec<f64> = [4e-3, 2e-3, 1e-3]
            .iter()
            .map(|&h| fd_sp2(s, h).map(|fd| fd.distance(&exact)))
            .collect::<Result<_, _>>()?;
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            lo = lo.min(order);
            hi = hi.max(order);
        }
    }
    check(
        worst_exact <= 1e-7 && worst_fd <= 1e-5 && lo >= 1.8 && hi <= 2.2,
        format!(
            "||D1 - exact||_F <= {worst_exact:.2e} (1e-7), ||D1 - FD(1e-5)||_F <= {worst_fd:.2e} (1e-5), \
             FD order in [{lo:.3}, {hi:.3}] ([1.8, 2.2])"
        ),
    )
}

/// Lower-eigenvector projector of a 2x2 symmetric matrix in closed form.
fn projector_2x2(a: f64, b: f64, c: f64) -> SymmetricMatrix {
    let r = (((a - c) / 2.0).powi(2) + b * b).sqrt();
    let m = (a + c) / 2.0;
    SymmetricMatrix::from_rows(&[
        vec![0.5 - (a - m) / (2.0 * r), -b / (2.0 * r)],
        vec![-b / (2.0 * r), 0.5 - (c - m) / (2.0 * r)],
    ])
    .unwrap()
}

fn criterion_4_sp2() -> Outcome {
    let mut cases: Vec<(SymmetricMatrix, usize)> = duality_systems().into_iter().map(|s| (s.h0, s.n_occ)).collect();
    cases.push((chain_hamiltonian(40, 1.0), 20));
    cases.push((gapped_random(30, 7, 0.5, 2.0, &mut rng(9)).unwrap(), 7));
    let (mut idem, mut tr, mut dist) = (0.0f64, 0.0f64, 0.0f64);
    for (h, k) in &cases {
        let (d, _) = sp2_ground_state(h, *k, None).map_err(|e| e.to_string())?;
        idem = idem.max(d.square().distance(&d));
        tr = tr.max((d.trace() - *k as f64).abs());
        dist = dist.max(d.distance(&projector(h, *k)));
    }
    let mut closed = 0.0f64;
    for (a, b, c) in [(-1.0, 0.0, 1.0), (0.0, 1.0, 0.0), (0.3, -0.7, -0.2), (2.0, 0.5, 1.0), (0.5, -1.0, -0.5)] {
        let h = SymmetricMatrix::from_rows(&[vec![a, b], vec![b, c]]).unwrap();
        let (d, _) = sp2_ground_state(&h, 1, None).map_err(|e| e.to_string())?;
        closed = closed.max(d.distance(&projector_2x2(a, b, c)));
    }
    check(
        idem <= 1e-7 && tr <= 1e-8 && dist <= 1e-7 && closed <= 1e-12,
        format!(
            "{} systems: ||D^2-D||_F <= {idem:.2e}, |Tr D - n| <= {tr:.2e}, ||D - theta||_F <= {dist:.2e}; \
             2x2 closed forms <= {closed:.2e}",
            cases.len()
        ),
    )
}

fn criterion_5_scf() -> Outcome {
    let cfg = ScfConfig::default();
    let mut worst_dual = 0.0f64;
    let mut worst_fd = 0.0f64;
    let mut runs = 0;
    for seed in 0..3u64 {
        let mut r = rng(500 + seed);
        let n = 16;
        let n_occ = 7;
        let h = gapped_random(n, n_occ, 1.0, 2.0, &mut r).unwrap();
        let a = random_symmetric(n, &mut r);
        let h1 = random_symmetric(n, &mut r);
        let kernels: Vec<Box<dyn SelfConsistencyKernel>> = vec![
            Box::new(DiagonalHubbard { u: 0.1 }),
            Box::new(BilinearKernel::random(n, 0.3, &mut r)),
        ];
        for g in &kernels {
            let e = |x: dmresponse::Error| format!("{}: {x}", g.name());
            let state = scf_ground_state(&h, None, g.as_ref(), n_occ, &cfg).map_err(e)?;
            let d1 = scf_dm_response(&state, g.as_ref(), &h1, &cfg).map_err(e)?.matrix;
            let chi = scf_susceptibility(&state, g.as_ref(), &a, &cfg).map_err(e)?.matrix;
            let direct = a.trace_product(&d1);
            worst_dual = worst_dual.max((direct - chi.trace_product(&h1)).abs() / direct.abs().max(1e-12));
            let step = 1e-4;
            let plus = scf_ground_state(&h.lincomb(1.0, &h1, step).unwrap(), None, g.as_ref(), n_occ, &cfg).map_err(e)?.d;
            let minus = scf_ground_state(&h.lincomb(1.0, &h1, -step).unwrap(), None, g.as_ref(), n_occ, &cfg).map_err(e)?.d;
            let fd = plus.lincomb(0.5 / step, &minus, -0.5 / step).unwrap();
            worst_fd = worst_fd.max(d1.distance(&fd));
            runs += 1;
        }
    }
    check(
        worst_dual <= 1e-9 && worst_fd <= 1e-5,
        format!("{runs} runs (hubbard U=0.1, bilinear): duality {worst_dual:.2e} (<= 1e-9), ||D1 - FD||_F {worst_fd:.2e} (<= 1e-5)"),
    )
}

fn sci(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.1e}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Starts above `floor`, never increases except within `floor`, ends below the start.
fn monotone_to_floor(xs: &[f64], floor: f64) -> bool {
    xs[0] > floor && xs.windows(2).all(|w| w[1] <= w[0] || w[1] <= floor) && xs[xs.len() - 1] < xs[0]
}

fn criterion_6_thermal() -> Outcome {
    // trace neutrality of the canonical susceptibility
    let mut worst_trace = 0.0f64;
    for seed in 0..10u64 {
        let s = gapped_system(30, 0.5, 600 + seed);
        for beta in [2.0, 10.0, 50.0, 300.0] {
            let st = ThermalState::new(&s.h0, beta, s.n_occ as f64).map_err(|e| e.to_string())?;
            let (chi, _) = st.canonical_derivative(&s.a).map_err(|e| e.to_string())?;
            worst_trace = worst_trace.max(chi.trace().abs() / chi.frobenius_norm());
        }
    }

    // convergence to the zero-temperature values along beta * gap = 40 .. 400,
    // with the gap measured on each system; deviations may settle at a
    // round-off floor relative to the value compared
    const FLOOR_REL: f64 = 1e-12;
    let mut sweeps_ok = true;
    let mut shown = String::new();
    for seed in 0..5u64 {
        let s = gapped_system(30, 0.5, 700 + seed);
        let (values, _) = eigen(&s.h0);
        let gap = values[s.n_occ] - values[s.n_occ - 1];
        let d0 = projector(&s.h0, s.n_occ);
        let d1 = projector_derivative(&s.h0, &s.h1, s.n_occ);
        let (a0, a1) = (s.a.trace_product(&d0), s.a.trace_product(&d1));
        let mut e0 = Vec::new();
        let mut e1 = Vec::new();
        for x in [40.0, 100.0, 200.0, 400.0] {
            let st = ThermalState::new(&s.h0, x / gap, s.n_occ as f64).map_err(|e| e.to_string())?;
            let (d1t, _) = st.canonical_derivative(&s.h1).map_err(|e| e.to_string())?;
            e0.push((s.a.trace_product(&st.d) - a0).abs());
            e1.push((s.a.trace_product(&d1t) - a1).abs());
        }
        sweeps_ok &= monotone_to_floor(&e0, FLOOR_REL * a0.abs().max(1.0))
            && monotone_to_floor(&e1, FLOOR_REL * a1.abs().max(1.0));
        shown.push_str(&format!(" s{seed}: |da0| {} |da1| {};", sci(&e0), sci(&e1)));
    }

    // Hadamard trace identity Tr[(L o X) Y] = Tr[X (L o Y)]
    let mut worst_h = 0.0f64;
    let mut r = rng(650);
    for _ in 0..100 {
        let n = 12;
        let h = random_symmetric(n, &mut r);
        let eig = sym_eigendecompose(&h).map_err(|e| e.to_string())?;
        let f = Fermi {
            beta_t: r.gen_range(0.5..50.0),
            mu: r.gen_range(-0.5..0.5),
        };
        let l = LoewnerMatrix::new(&eig.values, &f, DEGENERACY_REL);
        let x = random_symmetric(n, &mut r).into_matrix();
        let y = random_symmetric(n, &mut r).into_matrix();
        let lhs = (l.hadamard(&x) * &y).trace();
        let rhs = (&x * l.hadamard(&y)).trace();
        worst_h = worst_h.max(rel(lhs, rhs));
    }
    check(
        worst_trace <= 1e-10 && sweeps_ok && worst_h <= 1e-12,
        format!(
            "|Tr chi|/||chi||_F <= {worst_trace:.2e} (1e-10); beta sweep monotone: {sweeps_ok} \
             ({shown}); Hadamard identity {worst_h:.2e} (1e-12)"
        ),
    )
}

fn binary16_samples() -> Vec<f64> {
    let mut r = rng(777);
    let mut xs = Vec::with_capacity(1_000_100);
    for k in 0..1_000_000u32 {
        let x = match k % 4 {
            // random magnitudes across the whole binary16 range
            0 => {
                let e: i32 = r.gen_range(-30..16);
                let m: f64 = r.gen_range(1.0..2.0);
                m * 2f64.powi(e)
            }
            // exact midpoints between neighbouring binary16 values
            1 => {
                let h: u16 = r.gen_range(0..0x7bff);
                0.5 * (decode_binary16(h) + decode_binary16(h + 1))
            }
            // one f64 ulp either side of a midpoint
            2 => {
                let h: u16 = r.gen_range(0..0x7bff);
                let mid = 0.5 * (decode_binary16(h) + decode_binary16(h + 1));
                if r.gen::<bool>() {
                    f64::from_bits(mid.to_bits() + 1)
                } else {
                    f64::from_bits(mid.to_bits() - 1)
                }
            }
            _ => r.gen_range(-65504.0..=65504.0),
        };
        xs.push(if r.gen::<bool>() { -x } else { x });
    }
    let smallest = 2f64.powi(-24);
    xs.extend([
        0.0,
        -0.0,
        smallest,
        smallest / 2.0,
        smallest * 0.75,
        smallest * 1.5,
        smallest * 2.5,
        2f64.powi(-14),
        2f64.powi(-14) - smallest / 2.0,
        2f64.powi(-14) * (1.0 - 2f64.powi(-12)),
        1.0,
        1.0 + 2f64.powi(-11),
        1.0 + 3.0 * 2f64.powi(-11),
        1.0 + 2f64.powi(-11) + 2f64.powi(-40),
        2048.0,
        2049.0,
        2051.0,
        65504.0,
        -65504.0,
        65503.0,
        f64::MIN_POSITIVE,
        1e-300,
        std::f64::consts::PI,
        65504.0000001,
        65519.0,
        65520.0,
        1e10,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NAN,
    ]);
    xs
}

fn criterion_7_mixed_precision() -> Outcome {
    let mut worst_dual = 0.0f64;
    let mut worst_direct = 0.0f64;
    let mut per_step = true;
    for seed in 0..10u64 {
        let mut r = rng(800 + seed);
        let n = 64;
        // spectral width 4, gap 0.4 of it
        let h0 = gapped_random(n, n / 2, 1.6, 2.0, &mut r).unwrap();
        let a = random_symmetric(n, &mut r);
        let h1 = random_symmetric(n, &mut r);
        let fwd = susceptibility_forward(&h0, &a, n / 2).map_err(|e| e.to_string())?;
        let reference = fwd.chi.trace_product(&h1);
        let run = reduced_precision_pipeline(&h0, &a, n / 2, Precision::Split16).map_err(|e| e.to_string())?;
        worst_dual = worst_dual.max((run.response.trace_product(&h1) - reference).abs() / reference.abs());
        per_step &= run.multiplications == 5 * run.trace.m_steps;
        let direct = reduced_precision_pipeline(&h0, &h1, n / 2, Precision::Split16).map_err(|e| e.to_string())?;
        let exact = a.trace_product(&dm_perturbation_replay(&h0, &h1, &fwd.trace).map_err(|e| e.to_string())?);
        worst_direct = worst_direct.max((a.trace_product(&direct.response) - exact).abs() / exact.abs());
    }
    let samples = binary16_samples();
    let mut mismatches = 0usize;
    for &x in &samples {
        let ours = round_binary16(x).ok().map(f64::to_bits);
        let oracle = encode_binary16(x).map(|h| decode_binary16(h).to_bits());
        if ours != oracle {
            mismatches += 1;
        }
    }
    println!("    measured: split16 direct-route relative error up to {worst_direct:.2e} (not asserted)");
    check(
        worst_dual <= 0.05 && per_step && mismatches == 0,
        format!(
            "split16 chi route within {:.3}% (<= 5%), 5 multiplications per step: {per_step}, \
             binary16 mismatches {mismatches}/{}",
            100.0 * worst_dual,
            samples.len()
        ),
    )
}

fn criterion_8_sparse_scaling() -> Outcome {
    let tau = 1e-6;
    let gap = 1.0;
    let sizes = [500usize, 1000, 2000, 4000];
    let t_all = Instant::now();
    let mut walls = Vec::new();
    let mut worst = 0.0f64;
    for &n in &sizes {
        let (d, e) = chain_tridiagonal(n, gap);
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, d[i]));
            if i + 1 < n {
                t.push((i, i + 1, e[i]));
                t.push((i + 1, i, e[i]));
            }
        }
        let h0 = SparseMatrix::from_triplets(n, &t).unwrap();
        let w = 8;
        let offset = n / 2 - w / 2;
        let mut r = rng(900);
        let aw = random_symmetric(w, &mut r);
        let hw = random_symmetric(w, &mut r);
        let embed = |m: &SymmetricMatrix| {
            let mut t = Vec::new();
            for i in 0..w {
                for j in 0..w {
                    t.push((offset + i, offset + j, m.get(i, j)));
                }
            }
            SparseMatrix::from_triplets(n, &t).unwrap()
        };
        let (a, h1) = (embed(&aw), embed(&hw));
        let mut best = f64::INFINITY;
        let mut values = (0.0, 0.0);
        for _ in 0..2 {
            let t0 = Instant::now();
            let (d0, resp, _) =
                forward_expansion_with(&mut ThresholdedAlgebra::new(tau), &h0, &[&a], n / 2, None).map_err(|e| e.to_string())?;
            best = best.min(t0.elapsed().as_secs_f64());
            values = (a.trace_product(&d0), resp[0].trace_product(&h1));
        }
        walls.push(best);
        let oracle = tridiagonal_response_oracle(&d, &e, n / 2, offset, &aw, &hw).map_err(|e| e.to_string())?;
        worst = worst.max((values.0 - oracle.a0).abs()).max((values.1 - oracle.a1).abs());
        if n == 500 {
            // also against the dense recursion
            let dense_h = chain_hamiltonian(n, gap);
            let fwd = susceptibility_forward(&dense_h, &a.to_dense(), n / 2).map_err(|e| e.to_string())?;
            worst = worst
                .max((values.0 - a.to_dense().trace_product(&fwd.d0)).abs())
                .max((values.1 - fwd.chi.trace_product(&h1.to_dense())).abs());
        }
    }
    let ratios: Vec<f64> = walls.windows(2).map(|w| w[1] / w[0]).collect();
    let total = t_all.elapsed().as_secs_f64();
    let max_ratio = ratios.iter().cloned().fold(0.0, f64::max);
    check(
        worst <= 1e-4 && max_ratio < 3.0 && total < 300.0,
        format!(
            "abs error <= {worst:.2e} (1e-4), times {walls:.3?} s, ratios {ratios:.2?} (< 3), total {total:.1} s (< 300)"
        ),
    )
}

struct Polynomial(Vec<f64>);

impl SpectralFunction for Polynomial {
    fn value(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
    fn derivative(&self, x: f64) -> f64 {
        self.0
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, c)| acc * x + k as f64 * c)
    }
}

/// `sum_k c_k sum_{j<k} H^j E H^{k-1-j}`.
fn polynomial_directional_derivative(c: &[f64], h: &Matrix, e: &Matrix) -> Matrix {
    let n = h.nrows();
    let mut powers = vec![Matrix::identity(n, n)];
    for k in 1..c.len() {
        powers.push(&powers[k - 1] * h);
    }
    let mut out = Matrix::zeros(n, n);
    for (k, ck) in c.iter().enumerate().skip(1) {
        for j in 0..k {
            out += &powers[j] * e * &powers[k - 1 - j] * *ck;
        }
    }
    out
}

fn criterion_9_polynomial_identity() -> Outcome {
    let mut r = rng(990);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = r.gen_range(4..12);
        let degree = r.gen_range(0..=6);
        let c: Vec<f64> = (0..=degree).map(|_| r.gen_range(-1.0..1.0)).collect();
        let h = random_symmetric(n, &mut r).scaled(1.0 / n as f64);
        let a = random_symmetric(n, &mut r);
        let h1 = random_symmetric(n, &mut r);
        // gradient of Tr[A p(H)] with respect to H
        let eig = sym_eigendecompose(&h).map_err(|e| e.to_string())?;
        let grad = loewner_directional_derivative(&eig, &a, &Polynomial(c.clone()), DEGENERACY_REL).map_err(|e| e.to_string())?;
        let lhs = grad.trace_product(&h1);
        let dir = polynomial_directional_derivative(&c, h.as_matrix(), h1.as_matrix());
        let rhs = (a.as_matrix() * dir).trace();
        worst = worst.max(rel(lhs, rhs));
    }
    check(worst <= 1e-9, format!("50 trials, max relative deviation {worst:.2e} (<= 1e-9)"))
}

/// Three orbitals at 0, R, 2R with exponentially decaying hopping and overlap.
struct ThreeAtomChain {
    onsite: [f64; 3],
}

impl ThreeAtomChain {
    fn at(&self, r: f64) -> [SymmetricMatrix; 6] {
        let pair = |i: usize, j: usize| (i as f64 - j as f64).abs();
        let decay = |i: usize, j: usize| (-(pair(i, j) * r - 1.0)).exp();
        let h = SymmetricMatrix::from_fn(3, |i, j| if i == j { self.onsite[i] } else { -decay(i, j) });
        let h_r = SymmetricMatrix::from_fn(3, |i, j| if i == j { 0.0 } else { pair(i, j) * decay(i, j) });
        let s = SymmetricMatrix::from_fn(3, |i, j| if i == j { 1.0 } else { 0.3 * decay(i, j) });
        let s_r = SymmetricMatrix::from_fn(3, |i, j| if i == j { 0.0 } else { -0.3 * pair(i, j) * decay(i, j) });
        // position operator
        let a = SymmetricMatrix::from_diagonal(&[0.0, r, 2.0 * r]);
        let a_r = SymmetricMatrix::from_diagonal(&[0.0, 1.0, 2.0]);
        [h, h_r, s, s_r, a, a_r]
    }

    /// `Tr[A(R) D(R)]` with Löwdin orthogonalization and eigenvector projector.
    fn observable(&self, r: f64) -> f64 {
        let [h, _, s, _, a, _] = self.at(r);
        let z = lowdin(&s);
        let h_perp = SymmetricMatrix::symmetrize(z.as_matrix() * h.as_matrix() * z.as_matrix());
        let d = SymmetricMatrix::symmetrize(z.as_matrix() * projector(&h_perp, 1).as_matrix() * z.as_matrix());
        a.trace_product(&d)
    }
}

fn criterion_10_nonorthogonal() -> Outcome {
    let chain = ThreeAtomChain { onsite: [-0.4, 0.1, 0.5] };
    let mut worst = 0.0f64;
    let mut gauge = 0.0f64;
    for r0 in [0.9, 1.1, 1.4] {
        let [h, h_r, s, s_r, a, a_r] = chain.at(r0);
        let z = dmresponse::linalg::inverse_sqrt_factor(&s).map_err(|e| e.to_string())?;
        let s_inv = SymmetricMatrix::symmetrize(z.as_matrix() * z.as_matrix());
        let h_perp = congruence_transform(&h, &z, Congruence::ToOrthogonal).map_err(|e| e.to_string())?;
        let a_perp = congruence_transform(&a, &z, Congruence::ToOrthogonal).map_err(|e| e.to_string())?;
        let z_r = z_position_derivative(&s_inv, &s_r, &z).map_err(|e| e.to_string())?;
        let h_r_perp = orthogonal_hamiltonian_derivative(&h, &h_r, &z, &z_r).map_err(|e| e.to_string())?;
        let fwd = susceptibility_forward(&h_perp, &a_perp, 1).map_err(|e| e.to_string())?;
        let d = congruence_transform(&fwd.d0, &z, Congruence::DensityFromOrthogonal).map_err(|e| e.to_string())?;
        let d1_perp = dm_perturbation_replay(&h_perp, &h_r_perp, &fwd.trace).map_err(|e| e.to_string())?;

        let step = 1e-5;
        let fd = (chain.observable(r0 + step) - chain.observable(r0 - step)) / (2.0 * step);
        let dual = observable_position_derivative(
            &a,
            &a_r,
            &d,
            PerpTerm::Dual {
                chi_perp: &fwd.chi,
                h_tau_perp: &h_r_perp,
            },
            &s_inv,
            &s_r,
        )
        .map_err(|e| e.to_string())?;
        let direct =
            observable_position_derivative(&a, &a_r, &d, PerpTerm::Direct(a_perp.trace_product(&d1_perp)), &s_inv, &s_r)
                .map_err(|e| e.to_string())?;
        worst = worst.max((dual - fd).abs()).max((direct - fd).abs());

        // the Z derivative itself is gauge dependent; measured only
        let zl = |x: f64| lowdin(&chain.at(x)[2]).into_matrix();
        let z_fd = (zl(r0 + step) - zl(r0 - step)) / (2.0 * step);
        gauge = gauge.max((&z_r - z_fd).norm());
    }

    let mut inv = 0.0f64;
    for seed in 0..10u64 {
        let mut r = rng(1000 + seed);
        let n = 20;
        let b = random_symmetric(n, &mut r);
        let s = SymmetricMatrix::symmetrize(b.as_matrix() * b.as_matrix() / n as f64 + Matrix::identity(n, n));
        let h = random_symmetric(n, &mut r);
        let a = random_symmetric(n, &mut r);
        let z = dmresponse::linalg::inverse_sqrt_factor(&s).map_err(|e| e.to_string())?;
        let h_perp = congruence_transform(&h, &z, Congruence::ToOrthogonal).map_err(|e| e.to_string())?;
        let (d_perp, _) = sp2_ground_state(&h_perp, n / 2, None).map_err(|e| e.to_string())?;
        let d = congruence_transform(&d_perp, &z, Congruence::DensityFromOrthogonal).map_err(|e| e.to_string())?;
        let a_perp = congruence_transform(&a, &z, Congruence::ToOrthogonal).map_err(|e| e.to_string())?;
        inv = inv.max(rel(a.trace_product(&d), a_perp.trace_product(&d_perp)));
    }
    println!("    measured: ||Z_R - dZ_lowdin/dR||_F up to {gauge:.2e} (gauge difference, not asserted)");
    check(
        worst <= 1e-6 && inv <= 1e-10,
        format!("|da/dR - FD| <= {worst:.2e} (1e-6), representation invariance {inv:.2e} (1e-10)"),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 10] = [
        ("1 duality identity", criterion_1_duality),
        ("2 forward/backward susceptibility", criterion_2_forward_backward),
        ("3 oracle agreement", criterion_3_oracles),
        ("4 SP2 correctness", criterion_4_sp2),
        ("5 self-consistent duality", criterion_5_scf),
        ("6 finite temperature", criterion_6_thermal),
        ("7 mixed precision", criterion_7_mixed_precision),
        ("8 sparse scaling", criterion_8_sparse_scaling),
        ("9 polynomial identity", criterion_9_polynomial_identity),
        ("10 non-orthogonal consistency", criterion_10_nonorthogonal),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                println!("FAIL criterion {name}: {detail}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
