use dispersion_unmix::diagnostics::{analyze_a, condition_sweep};
use dispersion_unmix::exec::Execution;
use dispersion_unmix::fit::{make_tolerance_box, Tolerances};
use dispersion_unmix::fixtures::{load_fixture_params, FIXTURE_NAMES};
use dispersion_unmix::spectral::WavenumberGrid;
use dispersion_unmix::synth::PerturbSpec;
use dispersion_unmix::unmix::{Endmember, EndmemberLibrary};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn library() -> EndmemberLibrary {
    let entries = FIXTURE_NAMES
        .iter()
        .map(|n| {
            let p = load_fixture_params(n).unwrap();
            Endmember {
                name: n.to_string(),
                bounds: make_tolerance_box(&p, &Tolerances::default()),
                params: p,
            }
        })
        .collect();
    EndmemberLibrary::new(WavenumberGrid::range(200.0, 1394.0, 6.0).unwrap(), entries).unwrap()
}

#[test]
fn identity_sweep_is_constant() {
    let reports = condition_sweep(
        &library(),
        &PerturbSpec::default(),
        4,
        1,
        Execution::default(),
    )
    .unwrap();
    assert!(reports.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn perturbed_sweep_keeps_full_rank() {
    let spec = PerturbSpec {
        omega0_shift: (-10.0, 10.0),
        gamma_scale: (0.9, 1.1),
        rho_scale: (0.8, 1.2),
        eps_scale: (0.98, 1.02),
        seed: 0,
    };
    let reports = condition_sweep(&library(), &spec, 20, 3, Execution::default()).unwrap();
    assert!(reports
        .iter()
        .all(|r| r.rank == 3 && r.condition_number.is_finite()));
    assert!(reports.windows(2).any(|w| w[0] != w[1]));
    let seq = condition_sweep(&library(), &spec, 20, 3, Execution::Sequential).unwrap();
    assert_eq!(reports, seq);
}

proptest! {
    #[test]
    fn rank_invariant_under_permutation_and_sign(
        entries in proptest::collection::vec(-1.0f64..1.0, 24),
        perm_seed in 0usize..24,
        flips in proptest::collection::vec(any::<bool>(), 3),
        dup in any::<bool>(),
    ) {
        let mut a = DMatrix::from_row_slice(8, 3, &entries);
        if dup {
            let c = a.column(0).clone_owned();
            a.set_column(2, &c);
        }
        let base = analyze_a(&a, None).unwrap();
        let mut b = a.clone();
        for r in 0..8 {
            b.set_row(r, &a.row((r + perm_seed) % 8));
        }
        for (c, f) in flips.iter().enumerate() {
            if *f {
                let neg = -b.column(c).clone_owned();
                b.set_column(c, &neg);
            }
        }
        let moved = analyze_a(&b, None).unwrap();
        prop_assert_eq!(base.rank, moved.rank);
        prop_assert!(base.reconstruction_error < 1e-10);
        let scale = base.singular_values[0].powi(2);
        for (s, e) in base.singular_values.iter().zip(&base.eig_normal) {
            prop_assert!((s * s - e).abs() <= 1e-12 * scale, "{} vs {}", s * s, e);
        }
        let transposed = analyze_a(&a.transpose(), None).unwrap();
        prop_assert_eq!(transposed.rank, base.rank);
        prop_assert!(transposed.reconstruction_error < 1e-10);
        for (s, t) in base.singular_values.iter().zip(&transposed.singular_values) {
            prop_assert!((s - t).abs() <= 1e-12 * base.singular_values[0]);
        }
        prop_assert!(base.singular_values.windows(2).all(|w| w[0] >= w[1]));
        if base.rank == 3 {
            prop_assert!(base.condition_number >= 1.0);
        }
    }
}
