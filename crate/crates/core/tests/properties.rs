use proptest::prelude::*;

use stripe_core::detect::{algorithm_no_update, DetectorConfig};
use stripe_core::grid::{deriv_m, CompactDeriv};
use stripe_core::oracle::tau_sweep;
use stripe_core::qpat::{add_noise, forward, make_phantom, Illumination, PhantomSpec, Shape, Target};
use stripe_core::solver::{functional_j, solve_smoother, SmootherOperator, SmootherProblem};
use stripe_core::stripes::{dilate, rasterize};
use stripe_core::symtensor::{binomial, frobenius_inner, optimal_direction_m2, unit};
use stripe_core::{Closure, DerivOp, Grid, Mask, Polarization, ScalarField, Stripe, StripeSet, SymTensor};

fn tensor(order: usize) -> impl Strategy<Value = SymTensor> {
    prop::collection::vec(-3.0f64..3.0, order + 1).prop_map(|c| SymTensor::new(c).unwrap())
}

fn field(nx: usize, ny: usize, h: f64) -> impl Strategy<Value = ScalarField> {
    prop::collection::vec(-1.0f64..1.0, nx * ny)
        .prop_map(move |d| ScalarField::new(Grid::new(nx, ny, h).unwrap(), d).unwrap())
}

fn rotate(v: [f64; 2], phi: f64) -> [f64; 2] {
    let (s, c) = phi.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

fn sum_of_powers(terms: &[([f64; 2], f64)], order: usize) -> SymTensor {
    let mut t = SymTensor::zeros(order);
    for &(v, c) in terms {
        t.axpy(c, &SymTensor::outer_power(v, order)).unwrap();
    }
    t
}

proptest! {
    #[test]
    fn polarization_is_symmetric_and_bounded(
        m in 1usize..=3,
        theta in 0.0f64..std::f64::consts::TAU,
        kappa in 0.01f64..0.49,
        seed in prop::collection::vec(-3.0f64..3.0, 8),
    ) {
        let p = Polarization::new(unit(theta), kappa, m).unwrap();
        let a = SymTensor::new(seed[..=m].to_vec()).unwrap();
        let b = SymTensor::new(seed[4..=4 + m].to_vec()).unwrap();
        let ab = p.bilinear(&a, &b).unwrap();
        let ba = p.bilinear(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12 * a.norm() * b.norm() + 1e-300);

        let q = p.quadratic_form(&a).unwrap();
        let n2 = a.norm_sq();
        prop_assert!(q >= n2 * (1.0 - 1e-9));
        prop_assert!(q <= n2 / kappa * (1.0 + 1e-9));
    }

    #[test]
    fn polarization_is_its_spectral_sum(
        m in 1usize..=3,
        theta in 0.0f64..std::f64::consts::TAU,
        kappa in 0.01f64..0.99,
        e in tensor(3),
    ) {
        let e = SymTensor::new(e.comps()[..=m].to_vec()).unwrap();
        let p = Polarization::new(unit(theta), kappa, m).unwrap();
        let mut sum = SymTensor::zeros(m);
        for h in 1..=m + 1 {
            let eh = p.basis().element(h);
            let mu = if h <= m { 1.0 } else { 1.0 / kappa };
            sum.axpy(mu * frobenius_inner(&e, eh).unwrap(), eh).unwrap();
        }
        let mut diff = p.apply(&e).unwrap();
        diff.axpy(-1.0, &sum).unwrap();
        prop_assert!(diff.norm() <= 1e-12 * (1.0 + e.norm() / kappa));
    }

    #[test]
    fn quadratic_form_is_rotation_covariant(
        m in 1usize..=3,
        theta in 0.0f64..std::f64::consts::TAU,
        phi in 0.0f64..std::f64::consts::TAU,
        kappa in 0.01f64..0.99,
        raw in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, -1.0f64..1.0), 4),
    ) {
        let terms: Vec<([f64; 2], f64)> = raw.iter().map(|&(x, y, c)| ([x, y], c)).collect();
        let rotated: Vec<([f64; 2], f64)> = terms.iter().map(|&(v, c)| (rotate(v, phi), c)).collect();
        let e = sum_of_powers(&terms, m);
        let re = sum_of_powers(&rotated, m);
        let q = Polarization::new(unit(theta), kappa, m).unwrap().quadratic_form(&e).unwrap();
        let rq = Polarization::new(rotate(unit(theta), phi), kappa, m).unwrap().quadratic_form(&re).unwrap();
        prop_assert!((q - rq).abs() <= 1e-10 * (1.0 + q.abs()));
    }

    #[test]
    fn order_two_sweep_peaks_at_the_optimal_direction(
        a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0,
        kappa in 0.01f64..0.5,
    ) {
        let h = SymTensor::matrix(a, b, c);
        let disc = ((a - c) * (a - c) + 4.0 * b * b).sqrt();
        let (l1, l2) = ((a + c) / 2.0 - disc / 2.0, (a + c) / 2.0 + disc / 2.0);
        prop_assume!((l1.abs() - l2.abs()).abs() > 0.05);
        let (value, tau) = optimal_direction_m2(&h, kappa).unwrap();
        let (angle, best) = tau_sweep(&h, kappa, 3600).unwrap();
        prop_assert!((best - value).abs() <= 1e-6 * value.abs().max(1e-12));
        let predicted = tau[1].atan2(tau[0]).rem_euclid(std::f64::consts::PI);
        let gap = (angle - predicted).abs();
        let gap = gap.min(std::f64::consts::PI - gap);
        prop_assert!(gap <= 0.1f64.to_radians());
    }

    #[test]
    fn sweep_never_exceeds_the_upper_bound(m in 1usize..=3, kappa in 0.01f64..0.99, e in tensor(3)) {
        let e = SymTensor::new(e.comps()[..=m].to_vec()).unwrap();
        let (_, best) = tau_sweep(&e, kappa, 360).unwrap();
        prop_assert!(best <= e.norm_sq() / kappa * (1.0 + 1e-10));
    }
}

// Polynomial `Σ c_{pq} x^p y^q` with `p + q ≤ deg`, with its mixed partials.
#[derive(Debug)]
struct Poly {
    deg: usize,
    c: Vec<f64>,
}

impl Poly {
    fn coeff(&self, p: usize, q: usize) -> f64 {
        self.c[p * (self.deg + 1) + q]
    }

    fn value(&self, x: f64, y: f64) -> f64 {
        self.partial(0, 0, x, y)
    }

    fn partial(&self, dx: usize, dy: usize, x: f64, y: f64) -> f64 {
        let fall = |n: usize, k: usize| (0..k).map(|t| (n - t) as f64).product::<f64>();
        let mut s = 0.0;
        for p in dx..=self.deg {
            for q in dy..=self.deg - p {
                s += self.coeff(p, q) * fall(p, dx) * fall(q, dy) * x.powi((p - dx) as i32) * y.powi((q - dy) as i32);
            }
        }
        s
    }
}

fn poly(deg: usize) -> impl Strategy<Value = Poly> {
    prop::collection::vec(-1.0f64..1.0, (deg + 1) * (deg + 1)).prop_map(move |c| Poly { deg, c })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn derivatives_are_exact_on_low_degree_polynomials(m in 1usize..=3, extra in 0usize..=1, seed in poly(4)) {
        let deg = m + extra;
        let p = Poly { deg, c: seed.c[..(deg + 1) * (deg + 1)].to_vec() };
        let g = Grid::new(16, 14, 0.1).unwrap();
        let u = ScalarField::from_fn(g, |x, y| p.value(x, y));
        let t = deriv_m(&u, m).unwrap();
        let half = m.div_ceil(2).max(1);
        for j in half..g.ny - half {
            for i in half..g.nx - half {
                let [x, y] = g.center(i, j);
                let at = t.at(i, j);
                for (k, &got) in at.comps().iter().enumerate() {
                    let want = p.partial(m - k, k, x, y);
                    prop_assert!((got - want).abs() <= 1e-7 * (1.0 + want.abs()), "m={m} deg={deg} comp {k}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn derivatives_annihilate_lower_degree_polynomials(m in 1usize..=3, seed in poly(2)) {
        let deg = m - 1;
        let p = Poly { deg, c: seed.c[..(deg + 1) * (deg + 1)].to_vec() };
        let g = Grid::pixels(16);
        let u = ScalarField::from_fn(g, |x, y| p.value(x / 16.0, y / 16.0));
        let t = deriv_m(&u, m).unwrap();
        let half = m.div_ceil(2);
        for j in half..g.ny - half {
            for i in half..g.nx - half {
                prop_assert!(t.at(i, j).norm() <= 1e-10);
            }
        }
    }

    #[test]
    fn central_adjoint_identity(
        m in 1usize..=3,
        n in 14usize..=64,
        clamped in any::<bool>(),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = Grid::new(n, n - 1, 0.3).unwrap();
        let closure = if clamped { Closure::Clamped } else { Closure::OneSided };
        let op = DerivOp::new(g, m, closure).unwrap();
        let u = ScalarField::new(g, (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let traw: Vec<f64> = (0..g.len() * (m + 1)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = stripe_core::TensorField::from_raw(g, m, traw).unwrap();
        let lhs = op.apply(&u).unwrap().dot(&t).unwrap();
        let rhs = u.dot(&op.adjoint(&t).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()) * (g.len() as f64).sqrt());
    }

    #[test]
    fn compact_adjoint_identity(m in 1usize..=3, n in 13usize..=48, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = Grid::new(n, n + 3, 1.0).unwrap();
        let op = CompactDeriv::new(g, m).unwrap();
        let u: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t: Vec<f64> = (0..op.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut du = vec![0.0; op.len()];
        op.apply_into(&u, &mut du);
        let mut dt = vec![0.0; g.len()];
        op.adjoint_into(&t, &mut dt);
        let mult = op.multiplicities();
        let lhs: f64 = du.iter().zip(&t).zip(&mult).map(|((a, b), w)| a * b * w).sum();
        let rhs: f64 = u.iter().zip(&dt).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()) * (g.len() as f64).sqrt());
    }
}

fn coefficient(n: usize, kappa: f64, stripes: &[([f64; 2], f64)]) -> ScalarField {
    let g = Grid::pixels(n);
    let set =
        StripeSet::from_stripes(g, stripes.iter().map(|&(c, th)| Stripe::new(c, unit(th), 1.5).unwrap())).unwrap();
    set.coefficient_field(kappa)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn smoother_operator_is_symmetric_and_coercive(
        m in 1usize..=3,
        alpha in 0.01f64..2.0,
        kappa in 0.05f64..1.0,
        stripes in prop::collection::vec(([6.0f64..10.0, 6.0f64..10.0], 0.0f64..3.2), 0..4),
        u1 in field(16, 16, 1.0),
        u2 in field(16, 16, 1.0),
    ) {
        let v = coefficient(16, kappa, &stripes);
        let mut a = SmootherOperator::new(&v, alpha, m).unwrap();
        let mut a1 = vec![0.0; 256];
        let mut a2 = vec![0.0; 256];
        a.apply(u1.data(), &mut a1);
        a.apply(u2.data(), &mut a2);
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
        let (l, r) = (dot(&a1, u2.data()), dot(u1.data(), &a2));
        prop_assert!((l - r).abs() <= 1e-12 * (1.0 + l.abs()) * 16.0);

        let quad = dot(&a1, u1.data());
        let mass = dot(u1.data(), u1.data());
        prop_assert!(quad >= mass * (1.0 - 1e-12));
        let d = a.deriv();
        let unit_energy = d.weighted_energy(&u1, &vec![1.0; d.len()]).unwrap();
        prop_assert!(quad - mass >= alpha * kappa * unit_energy * (1.0 - 1e-9));
    }

    #[test]
    fn smoother_lowers_the_energy_and_the_norm(
        m in 1usize..=2,
        alpha in 0.05f64..2.0,
        kappa in 0.05f64..1.0,
        stripes in prop::collection::vec(([6.0f64..14.0, 6.0f64..14.0], 0.0f64..3.2), 0..3),
        f in field(20, 20, 1.0),
    ) {
        let v = coefficient(20, kappa, &stripes);
        let p = SmootherProblem::new(f.clone(), alpha, m).with_coefficient(v.clone()).with_tolerance(1e-12, 20_000);
        let u = solve_smoother(&p).unwrap();
        let ju = functional_j(&u, &v, &f, alpha, m).unwrap();
        let jf = functional_j(&f, &v, &f, alpha, m).unwrap();
        prop_assert!(ju <= jf * (1.0 + 1e-12));
        prop_assert!(u.norm_l2() <= f.norm_l2() * (1.0 + 1e-9));
    }

    #[test]
    fn dilation_is_extensive_increasing_and_idempotent_at_zero(
        cells in prop::collection::vec((0usize..24, 0usize..20), 1..12),
        r1 in 0.0f64..3.0,
        dr in 0.0f64..2.0,
        h in prop::sample::select(vec![0.5, 1.0, 2.0]),
    ) {
        let g = Grid::new(24, 20, h).unwrap();
        let mut m = Mask::new(&g, false);
        for (i, j) in cells {
            m.set(i, j, true);
        }
        let a = dilate(&m, r1 * h, h).unwrap();
        let b = dilate(&m, (r1 + dr) * h, h).unwrap();
        prop_assert!(m.is_subset_of(&a));
        prop_assert!(a.is_subset_of(&b));
        prop_assert_eq!(dilate(&m, 0.0, h).unwrap(), m);
    }

    #[test]
    fn stripe_set_mask_is_the_union_of_footprints(
        stripes in prop::collection::vec(([7.0f64..23.0, 7.0f64..23.0], 0.0f64..3.2, 0.5f64..2.0), 1..8),
    ) {
        let g = Grid::new(30, 30, 1.0).unwrap();
        let mut set = StripeSet::new(g);
        let mut union = Mask::new(&g, false);
        for (c, th, eps) in stripes {
            let s = Stripe::new(c, unit(th), eps).unwrap();
            union.union_with(&rasterize(&s, &g).unwrap()).unwrap();
            set.insert(s).unwrap();
            prop_assert_eq!(set.mask(), &union);
        }
    }
}

// Piecewise-constant test images: a few disks of random height.
fn disks(n: usize) -> impl Strategy<Value = ScalarField> {
    prop::collection::vec((5.0f64..(n as f64 - 5.0), 5.0f64..(n as f64 - 5.0), 3.0f64..9.0, 0.05f64..1.0), 1..4)
        .prop_map(move |ds| {
            ScalarField::from_fn(Grid::pixels(n), |x, y| {
                ds.iter().filter(|d| (x - d.0).hypot(y - d.1) <= d.2).map(|d| d.3).sum()
            })
        })
}

fn small_cfg(m: usize) -> DetectorConfig {
    DetectorConfig { delta0: 4.0, ..DetectorConfig::table1(1, m, 1.0).unwrap() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn detection_respects_threshold_spacing_and_is_deterministic(m in 1usize..=3, f in disks(40)) {
        let cfg = small_cfg(m);
        let r = algorithm_no_update(&f, &cfg).unwrap();
        let n = r.stripes().len();
        prop_assert!(r.indicator_trace[..n].iter().all(|&v| v >= r.threshold_used));
        prop_assert!(r.indicator_trace.windows(2).all(|w| w[1] <= w[0]));
        for (k, a) in r.stripes().iter().enumerate() {
            for b in &r.stripes()[..k] {
                let d = (a.center[0] - b.center[0]).hypot(a.center[1] - b.center[1]);
                prop_assert!(d >= cfg.rho0);
            }
        }
        let again = algorithm_no_update(&f, &cfg).unwrap();
        prop_assert_eq!(again.stripes(), r.stripes());
        prop_assert_eq!(&again.indicator_trace, &r.indicator_trace);
        prop_assert_eq!(again.u_final.data(), r.u_final.data());
    }

    #[test]
    fn scaling_data_and_beta_together_keeps_the_segments(
        m in 1usize..=2,
        f in disks(40),
        k in prop::sample::select(vec![-2i32, -1, 1, 2, 3]),
    ) {
        let c = 2f64.powi(k);
        let cfg = small_cfg(m);
        let scaled_cfg = DetectorConfig { beta: cfg.beta * c * c, ..cfg.clone() };
        let a = algorithm_no_update(&f, &cfg).unwrap();
        let b = algorithm_no_update(&f.map(|v| v * c), &scaled_cfg).unwrap();
        prop_assert_eq!(a.stripes(), b.stripes());
        for (x, y) in a.indicator_trace.iter().zip(&b.indicator_trace) {
            prop_assert!((y - c * c * x).abs() <= 1e-12 * y.abs());
        }
    }

    #[test]
    fn forward_model_invariants(
        mu_disk in 0.0f64..0.2,
        d_disk in 0.3f64..4.0,
        lit in prop::collection::vec(0.0f64..2.0, 4),
        seed in any::<u64>(),
    ) {
        let spec = PhantomSpec {
            nx: 32,
            ny: 32,
            h: 0.5,
            mu0: 0.02,
            d0: 1.0,
            gamma: 0.7,
            illumination: Illumination { left: lit[0], right: lit[1], bottom: lit[2], top: lit[3] },
            shapes: vec![
                Shape::Disk { target: Target::Mu, center: [6.0, 7.0], radius: 3.0, value: mu_disk },
                Shape::Disk { target: Target::D, center: [10.0, 9.0], radius: 3.5, value: d_disk },
            ],
        };
        let p = make_phantom(&spec).unwrap();
        let q = forward(&p, &spec.illumination).unwrap();
        let gmax = lit.iter().cloned().fold(0.0, f64::max);
        for k in 0..q.fluence.data().len() {
            let (u, e, mu) = (q.fluence.data()[k], q.energy.data()[k], p.mu.data()[k]);
            prop_assert_eq!(e, spec.gamma * mu * u);
            prop_assert!(u >= -1e-9 && u <= gmax + 1e-9);
        }
        let a = add_noise(&q, 2.0, seed).unwrap();
        let b = add_noise(&q, 2.0, seed).unwrap();
        prop_assert_eq!(a.observed().data(), b.observed().data());
    }
}

#[test]
fn binomial_multiplicities_match_expanded_frobenius_norms() {
    for m in 1..=3 {
        let t = SymTensor::new((0..=m).map(|k| k as f64 + 0.5).collect()).unwrap();
        let full: f64 = t.expand().iter().map(|x| x * x).sum();
        let compressed: f64 = t.comps().iter().enumerate().map(|(k, x)| binomial(m, k) * x * x).sum();
        assert!((full - compressed).abs() < 1e-12);
        assert!((t.norm_sq() - full).abs() < 1e-12);
    }
}
