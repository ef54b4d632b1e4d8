use bayes_pde::candidates::CandidateSet;
use bayes_pde::data::{Domain, MeasurementDataset};
use bayes_pde::io;
use bayes_pde::library::{self, DerivativeLibrary, LibraryMeta};
use bayes_pde::net::{self, Architecture, Scaling, WeightVector};
use bayes_pde::pde;
use bayes_pde::regression::{self, Method};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn gamma_stays_in_range(z in matrix(8, 5, 0.0, 10.0)) {
        let g = library::uncertainty_weights(z.view());
        for v in g.iter() {
            prop_assert!(*v >= library::GAMMA_FLOOR && *v <= 5.0 + 1e-12);
        }
    }

    #[test]
    fn gamma_monotone_in_non_max_entries(z in matrix(6, 3, 0.1, 1.0), row in 0usize..6, col in 0usize..3) {
        let mut z = z;
        // Keep a strict column maximum away from the bumped row.
        let top = if row == 0 { 1 } else { 0 };
        z[[top, col]] = 5.0;
        let before = library::uncertainty_weights(z.view());
        z[[row, col]] += 0.5;
        let after = library::uncertainty_weights(z.view());
        for r in 0..6 {
            if r == row {
                prop_assert!(after[r] > before[r]);
            } else {
                prop_assert!((after[r] - before[r]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn blr_mean_is_linear_in_targets(x in matrix(25, 3, -2.0, 2.0), y in prop::collection::vec(-1.0f64..1.0, 25), k in 0.01f64..100.0) {
        let y = Array1::from(y);
        let g = Array1::ones(25);
        let a = regression::blr_fit(x.view(), y.view(), g.view()).unwrap();
        let b = regression::blr_fit(x.view(), (&y * k).view(), g.view()).unwrap();
        for (u, v) in a.mean.iter().zip(&b.mean) {
            prop_assert!((u * k - v).abs() <= 1e-9 * (u * k).abs().max(1e-3), "{} vs {}", u * k, v);
        }
    }

    #[test]
    fn stols_recovers_exact_sparse_models(x in matrix(60, 11, -1.0, 1.0), a in 0.2f64..2.0, b in -2.0f64..-0.2) {
        let cands = CandidateSet::default();
        let y = &x.column(2) * a + &x.column(5) * b;
        let found = regression::stols(x.view(), y.view(), &cands, 0.05).unwrap();
        prop_assert_eq!(found.active_set.clone(), vec!["u_xx".to_string(), "u*u_x".to_string()]);
        prop_assert!((found.coefficient("u_xx").unwrap() - a).abs() < 1e-9);
        prop_assert!((found.coefficient("u*u_x").unwrap() - b).abs() < 1e-9);
    }

    #[test]
    fn coefficient_error_is_a_metric(
        a in prop::collection::vec(-5.0f64..5.0, 11),
        b in prop::collection::vec(-5.0f64..5.0, 11),
        c in prop::collection::vec(-5.0f64..5.0, 11),
    ) {
        let d = |u: &[f64], v: &[f64]| pde::coeff_error(u, v).unwrap();
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-12);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
    }

    #[test]
    fn uniform_variances_give_equal_gamma(x in matrix(40, 11, -1.0, 1.0), y in prop::collection::vec(-1.0f64..1.0, 40)) {
        // Identical variances everywhere: STBLR rows all weigh the same.
        let lib = DerivativeLibrary::from_parts(
            x.clone(),
            Array2::from_elem((40, 11), 0.3),
            Array1::from(y.clone()),
            Array2::zeros((40, 2)),
            CandidateSet::default(),
            LibraryMeta::default(),
        ).unwrap();
        prop_assert!(lib.gamma.iter().all(|g| (g - 11.0).abs() < 1e-12));
    }

    #[test]
    fn weights_round_trip_through_binary_file(vals in prop::collection::vec(-1e3f64..1e3, 2 * 25)) {
        let arch = Architecture::new(2, 3, true).unwrap();
        let ws = vec![
            WeightVector::new(arch, vals[..25].to_vec()).unwrap(),
            WeightVector::new(arch, vals[25..].to_vec()).unwrap(),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        io::write_weights(&path, &ws).unwrap();
        prop_assert_eq!(io::read_weights(&path).unwrap(), ws);
    }

    #[test]
    fn physical_jets_match_scaled_network(
        vals in prop::collection::vec(-1.0f64..1.0, 25),
        t in 0.0f64..10.0,
        x in -8.0f64..8.0,
    ) {
        let arch = Architecture::new(2, 3, true).unwrap();
        let w = WeightVector::new(arch, vals).unwrap();
        let data = MeasurementDataset::from_points(
            &[(0.0, -8.0), (10.0, 8.0), (5.0, 1.0)],
            vec![0.3, -1.2, 2.5],
            Domain::new(0.0, 10.0, -8.0, 8.0).unwrap(),
        ).unwrap();
        let s = Scaling::fit(&data);
        let pts = Array2::from_shape_vec((1, 2), vec![t, x]).unwrap();
        let mut jets = net::jet_batch(&w, s.inputs(pts.view()).view(), 1).unwrap();
        s.jets_to_physical(&mut jets);
        let phys = |tt: f64, xx: f64| {
            let (a, b) = s.input(tt, xx);
            s.output(net::forward(&w, a, b).unwrap())
        };
        let h = 1e-5;
        let fx = (phys(t, x + h) - phys(t, x - h)) / (2.0 * h);
        let ft = (phys(t + h, x) - phys(t - h, x)) / (2.0 * h);
        prop_assert!((jets.x_derivs[0][0] - phys(t, x)).abs() < 1e-12);
        prop_assert!((jets.x_derivs[1][0] - fx).abs() < 1e-7 * fx.abs().max(1.0));
        prop_assert!((jets.f_t[0] - ft).abs() < 1e-7 * ft.abs().max(1.0));
    }
}

#[test]
fn stblr_and_stols_agree_on_clean_sparse_data() {
    // Clean sparse data: both methods must settle on the same support.
    let cands = CandidateSet::default();
    let x = Array2::from_shape_fn((200, 11), |(i, j)| ((i * 31 + j * 17) % 97) as f64 / 48.5 - 1.0);
    let y = &x.column(2) * 0.7 - &x.column(5) * 1.3;
    let lib = DerivativeLibrary::from_parts(
        x.clone(),
        Array2::from_elem((200, 11), 1.0),
        y.clone(),
        Array2::zeros((200, 2)),
        cands.clone(),
        LibraryMeta::default(),
    )
    .unwrap();
    let a = regression::discover(&lib, Method::Stblr, 0.05).unwrap();
    let b = regression::discover(&lib, Method::Stols, 0.05).unwrap();
    assert_eq!(a.active_set, b.active_set);
    assert!((a.coefficient("u_xx").unwrap() - 0.7).abs() < 1e-6);
}
