use proptest::prelude::*;

use robust_contract::grid::uniform_axis;
use robust_contract::hamiltonians::GameCoeffs;
use robust_contract::{presets, Derivatives, GridSpec, Hamiltonians, Interval, ModelSpec};

/// No effort rule, drift coupled to the volatility control, σ symmetric
/// about the middle of N so level sets have two points.
fn coupled(a_hi: f64) -> ModelSpec {
    ModelSpec::new("coupled", Interval::new(0.0, a_hi).unwrap(), Interval::new(0.0, 1.0).unwrap())
        .with_drift(|_, x, a, n| a * (n - 0.3) + 0.1 * x)
        .with_vol(|_, _, n| 0.5 + (n - 0.5) * (n - 0.5))
        .with_cost(|_, _, a| 0.5 * a * a)
        .with_discount(|_, _, a, n| 0.2 * a * n)
        .with_growth(robust_contract::model::GrowthParams::quadratic(0.2))
}

fn quadratic() -> ModelSpec {
    presets::quadratic_bounded(2.0, Interval::new(0.5, 1.0).unwrap(), 3.0, 5.0, 1.0)
}

fn ham(model: &ModelSpec, na: usize, nn: usize, nz: usize, ng: usize) -> Hamiltonians {
    let a = uniform_axis(model.effort_set.lo, model.effort_set.hi, na);
    let n = uniform_axis(model.nature_set.lo, model.nature_set.hi, nn);
    Hamiltonians::with_grids(model, a, n, nz, ng)
}

fn f(m: &ModelSpec, t: f64, x: f64, y: f64, z: f64, a: f64, n: f64) -> f64 {
    -m.k(t, x, a, n) * y - m.c(t, x, a) + m.b(t, x, a, n) * z
}

fn sig2(m: &ModelSpec, t: f64, x: f64, n: f64) -> f64 {
    let s = m.sigma(t, x, n);
    s * s
}

/// The documented tie rule, written out independently: values within 1e-12
/// of the best tie, then lower rank, then lexicographically smaller key.
/// Returns the index of the winner.
fn pick(entries: &[(f64, u8, [f64; 3])], maximize: bool) -> usize {
    let best = entries
        .iter()
        .map(|e| e.0)
        .fold(if maximize { f64::NEG_INFINITY } else { f64::INFINITY }, |b, v| if maximize { b.max(v) } else { b.min(v) });
    let mut ties: Vec<usize> = (0..entries.len()).filter(|&i| (entries[i].0 - best).abs() <= 1e-12).collect();
    ties.sort_by(|&i, &j| {
        let (a, b) = (&entries[i], &entries[j]);
        a.1.cmp(&b.1).then(a.2.partial_cmp(&b.2).unwrap())
    });
    ties[0]
}

fn key(v: f64) -> [f64; 3] {
    [v, 0.0, 0.0]
}

/// `(value, argmax)` of `F(., n)` over the a-grid.
fn best_a(m: &ModelSpec, h: &Hamiltonians, t: f64, x: f64, y: f64, z: f64, n: f64) -> (f64, f64) {
    let e: Vec<_> = h.a_grid().iter().map(|&a| (f(m, t, x, y, z, a, n), 1, key(a))).collect();
    let i = pick(&e, true);
    (e[i].0, e[i].2[0])
}

/// Exhaustive `max_a min_{n ∈ level} F` and `min_{n ∈ level} max_a F`.
fn brute_f_star(m: &ModelSpec, h: &Hamiltonians, t: f64, x: f64, y: f64, z: f64, level: &[f64]) -> (f64, f64) {
    let outer: Vec<_> = h
        .a_grid()
        .iter()
        .map(|&a| {
            let inner: Vec<_> = level.iter().map(|&n| (f(m, t, x, y, z, a, n), 0, key(n))).collect();
            (inner[pick(&inner, false)].0, 1, key(a))
        })
        .collect();
    let maxmin = outer[pick(&outer, true)].0;
    let maxes: Vec<_> = level.iter().map(|&n| (best_a(m, h, t, x, y, z, n).0, 0, key(n))).collect();
    let minmax = maxes[pick(&maxes, false)].0;
    (maxmin, minmax)
}

fn brute_h(m: &ModelSpec, h: &Hamiltonians, t: f64, x: f64, y: f64, z: f64, gamma: f64) -> f64 {
    let e: Vec<_> = h
        .n_grid()
        .iter()
        .map(|&n| (0.5 * sig2(m, t, x, n) * gamma + best_a(m, h, t, x, y, z, n).0, 0, key(n)))
        .collect();
    e[pick(&e, false)].0
}

/// Exhaustive `G` for singleton level sets: every σ(n)² is distinct, so
/// `α*` at node n is the argmax of `F(., n)`. The central derivatives are
/// injected on both axes and rank ahead of grid points.
fn brute_g(m: &ModelSpec, h: &Hamiltonians, t: f64, x: f64, y: f64, d: &Derivatives, radius: f64) -> f64 {
    let axis = |nodes: usize, c: f64| {
        let mut v: Vec<(f64, u8)> = uniform_axis(-radius, radius, nodes).into_iter().map(|z| (z, 1)).collect();
        v.push((c.clamp(-radius, radius), 0));
        v
    };
    let mut outer = Vec::new();
    for (z, zr) in axis(h.z_nodes(), d.p) {
        for (gamma, gr) in axis(h.gamma_nodes(), d.q) {
            let hv = brute_h(m, h, t, x, y, z, gamma);
            let inner: Vec<_> = h
                .n_grid()
                .iter()
                .map(|&n| {
                    let a = best_a(m, h, t, x, y, z, n).1;
                    let c = GameCoeffs::new(m.b(t, x, a, n), sig2(m, t, x, n), z, gamma, hv);
                    (c.apply(d), 0, key(n))
                })
                .collect();
            let j = pick(&inner, false);
            outer.push((inner[j].0, zr + gr, [z, gamma, inner[j].2[0]]));
        }
    }
    outer[pick(&outer, true)].0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn isaacs_gap_is_nonnegative(
        x in -3.0..3.0f64, y in -2.0..2.0f64, z in -4.0..4.0f64, node in 0usize..7,
    ) {
        let m = coupled(2.0);
        let h = ham(&m, 7, 7, 5, 5);
        let s = sig2(&m, 0.3, x, h.n_grid()[node]);
        let gap = h.check_isaacs(0.3, x, y, z, s).unwrap();
        prop_assert!(gap >= -1e-12);
        let level = h.level_set(0.3, x, s, None);
        let (maxmin, minmax) = brute_f_star(&m, &h, 0.3, x, y, z, &level);
        prop_assert!(minmax - maxmin >= -1e-12);
    }

    #[test]
    fn brute_force_f_star_and_h(
        na in 2usize..=7, nn in 2usize..=7,
        x in -3.0..3.0f64, y in -2.0..2.0f64, z in -4.0..4.0f64, gamma in -5.0..5.0f64, node in 0usize..7,
    ) {
        let m = coupled(1.5);
        let h = ham(&m, na, nn, 3, 3);
        let n = h.n_grid()[node % nn];
        let s = sig2(&m, 0.1, x, n);
        let level = h.level_set(0.1, x, s, None);
        let got = h.eval_f_star(0.1, x, y, z, s).unwrap();
        let (maxmin, minmax) = brute_f_star(&m, &h, 0.1, x, y, z, &level);
        prop_assert_eq!(got.value.to_bits(), maxmin.to_bits());
        prop_assert_eq!(got.isaacs_gap.to_bits(), (minmax - maxmin).max(0.0).to_bits());
        prop_assert!(level.contains(&got.arg_n) && h.a_grid().contains(&got.arg_a));
        let hv = h.eval_h(0.1, x, y, z, gamma);
        prop_assert_eq!(hv.value.to_bits(), brute_h(&m, &h, 0.1, x, y, z, gamma).to_bits());
    }

    #[test]
    fn brute_force_g(
        na in 2usize..=7, nn in 2usize..=7, nz in 2usize..=7, ng in 2usize..=7,
        x in -3.0..3.0f64, y in -2.0..2.0f64,
        p in -2.0..2.0f64, pt in -1.5..-0.1f64, q in -2.0..2.0f64, qt in -1.0..0.0f64, r in -1.0..1.0f64,
        radius in 0.5..4.0f64,
    ) {
        // σ strictly increasing in n: singleton level sets.
        let m = ModelSpec::new("mono", Interval::new(0.0, 1.0).unwrap(), Interval::new(0.2, 1.0).unwrap())
            .with_drift(|_, _, a, n| a * n)
            .with_vol(|_, _, n| n)
            .with_cost(|_, _, a| 0.5 * a * a);
        let h = ham(&m, na, nn, nz, ng).with_level_tol(Some(0.0));
        let d = Derivatives { p, p_tilde: pt, q, q_tilde: qt, r };
        let got = h.eval_G(0.2, x, y, &d, radius).unwrap();
        prop_assert_eq!(got.value.to_bits(), brute_g(&m, &h, 0.2, x, y, &d, radius).to_bits());
    }

    #[test]
    fn h_is_concave_in_gamma(
        t in 0.0..1.0f64, x in -4.0..4.0f64, y in -3.0..3.0f64, z in -3.0..3.0f64, g0 in -6.0..0.0f64, step in 0.01..1.0f64,
    ) {
        let m = quadratic();
        let h = Hamiltonians::new(&m, &GridSpec::principal(1.0, 4, 5, 5, 3.0, 3.0).with_controls(11, 9, 5, 5));
        let vals: Vec<f64> = (0..12).map(|i| h.eval_h(t, x, y, z, g0 + step * i as f64).value).collect();
        for w in vals.windows(3) {
            prop_assert!(w[0] - 2.0 * w[1] + w[2] <= 1e-10, "{:?}", w);
        }
    }

    #[test]
    fn risk_neutral_identity(
        x in -3.0..3.0f64, y in -3.0..3.0f64, p in -3.0..3.0f64, q in -3.0..3.0f64,
    ) {
        let m = presets::risk_neutral(1.0, Interval::new(0.5, 1.0).unwrap(), 3.0);
        let h = Hamiltonians::new(&m, &GridSpec::principal(1.0, 4, 5, 5, 3.0, 3.0).with_controls(11, 5, 11, 11));
        let d = Derivatives { p, p_tilde: -1.0, q, q_tilde: 0.0, r: 0.0 };
        let radius = p.abs().max(q.abs()).max(1e-3);
        let g = h.eval_G(0.5, x, y, &d, radius).unwrap().value;
        let hv = h.eval_h(0.5, x, y, p, q).value;
        prop_assert!((g - hv).abs() <= 1e-9, "G {} H {}", g, hv);
    }

    #[test]
    fn doubling_certified_radius_keeps_g(
        x in -2.0..2.0f64, y in -2.0..2.0f64,
        p in -1.5..1.5f64, pt in -1.5..-0.2f64, q in -1.0..1.0f64, qt in -1.0..-0.1f64,
    ) {
        let m = quadratic();
        let grid = GridSpec::principal(1.0, 4, 5, 5, 3.0, 3.0).with_controls(11, 5, 21, 21);
        let h = Hamiltonians::new(&m, &grid);
        let d = Derivatives { p, p_tilde: pt, q, q_tilde: qt, r: 0.0 };
        let r = h.compute_radius(0.0, x, y, &d).unwrap();
        let g1 = h.eval_G(0.0, x, y, &d, r).unwrap().value;
        let g2 = h.eval_G(0.0, x, y, &d, 2.0 * r).unwrap().value;
        // The wider box is twice as coarse; the concave objective moves by
        // at most its curvature times the squared spacing.
        let spacing = 4.0 * r / (grid.z_nodes - 1) as f64;
        let curvature = pt.abs() + qt.abs() + 1.0;
        prop_assert!((g1 - g2).abs() <= curvature * spacing * spacing, "{} {} r={}", g1, g2, r);
    }
}

fn rn_quadratic_probes() -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    for &x in &[-4.0, -1.0, 0.0, 2.0, 4.0] {
        for &y in &[-3.0, 0.0, 3.0] {
            for &z in &[-8.0, -2.0, -0.5, 0.0, 0.5, 2.0, 8.0] {
                out.push((x, y, z));
            }
        }
    }
    out
}

/// `C` of the growth envelope for the quadratic preset, fit on a fixed
/// calibration sweep.
fn calibrated_constant(h: &Hamiltonians, m: &ModelSpec) -> f64 {
    let p = m.growth.generator_exponent();
    let mut c: f64 = 0.0;
    for (x, y, z) in rn_quadratic_probes() {
        let s = sig2(m, 0.0, x, m.nature_set.lo);
        let v = h.eval_f_star(0.0, x, y, z, s).unwrap().value;
        c = c.max(v.abs() / (1.0 + x.abs() + y.abs() + z.abs().powf(p)));
    }
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn growth_certificate(
        t in 0.0..1.0f64, x in -5.0..5.0f64, y in -5.0..5.0f64, z in -20.0..20.0f64, node in 0usize..9,
    ) {
        let m = quadratic();
        let h = Hamiltonians::new(&m, &GridSpec::principal(1.0, 4, 5, 5, 3.0, 3.0).with_controls(11, 9, 5, 5));
        let c = calibrated_constant(&h, &m);
        prop_assert!(c > 0.0);
        let s = sig2(&m, t, x, h.n_grid()[node]);
        let v = h.eval_f_star(t, x, y, z, s).unwrap().value;
        let p = m.growth.generator_exponent();
        prop_assert!(v.abs() <= c * (1.0 + x.abs() + y.abs() + z.abs().powf(p)) + 1e-12);
        let (_, ok) = h.optimal_effort(t, x, y, z, s).unwrap();
        prop_assert!(ok);
    }
}
