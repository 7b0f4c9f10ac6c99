use dispersion_unmix::fit::{make_tolerance_box, Tolerances};
use dispersion_unmix::fixtures::{load_fixture_params, FIXTURE_NAMES};
use dispersion_unmix::optim::SimplexVector;
use dispersion_unmix::spectral::{ParamBox, WavenumberGrid};
use dispersion_unmix::synth::{sample_in_box, synth_mixture, GroundTruth, NoiseSpec, PerturbSpec};
use dispersion_unmix::unmix::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn library(tolerance: bool) -> EndmemberLibrary {
    let g = WavenumberGrid::range(200.0, 1400.0, 8.0).unwrap();
    let entries = FIXTURE_NAMES
        .iter()
        .map(|n| {
            let p = load_fixture_params(n).unwrap();
            Endmember {
                name: n.to_string(),
                bounds: if tolerance {
                    make_tolerance_box(&p, &Tolerances::default())
                } else {
                    ParamBox::point(&p)
                },
                params: p,
            }
        })
        .collect();
    EndmemberLibrary::new(g, entries).unwrap()
}

fn mixed(a: &DMatrix<f64>, x: &[f64], grid: &WavenumberGrid) -> MixedSpectrum {
    let b = a * DVector::from_column_slice(x);
    MixedSpectrum::new(grid.clone(), b.iter().copied().collect()).unwrap()
}

#[test]
fn columns_are_rendered_endmembers() {
    let lib = library(false);
    let a = build_a(&lib);
    assert_eq!(a.shape(), (lib.grid().len(), 3));
    assert!(a.iter().all(|v| *v > 0.0 && *v <= 1.0));
}

#[test]
fn pure_pixel_recovered() {
    let lib = library(false);
    let a = build_a(&lib);
    for j in 0..3 {
        let e = SimplexVector::vertex(3, j);
        let x = fcls(&a, &mixed(&a, e.values(), lib.grid())).unwrap();
        for (u, v) in x.values().iter().zip(e.values()) {
            assert!((u - v).abs() < 1e-4);
        }
    }
}

#[test]
fn exact_mixture_recovered() {
    let lib = library(false);
    let a = build_a(&lib);
    let truth = [0.2, 0.3, 0.5];
    let x = fcls(&a, &mixed(&a, &truth, lib.grid())).unwrap();
    for (u, v) in x.values().iter().zip(truth) {
        assert!((u - v).abs() < 1e-3, "{:?}", x.values());
    }
}

#[test]
fn abs_at_library_optimum() {
    let lib = library(true);
    let a = build_a(&lib);
    let truth = [0.2, 0.3, 0.5];
    let config = UnmixConfig {
        outer_iters: 20,
        ..UnmixConfig::default()
    };
    let r = analysis_by_synthesis(&lib, &mixed(&a, &truth, lib.grid()), &config).unwrap();
    let mse: f64 = r
        .abundances
        .values()
        .iter()
        .zip(truth)
        .map(|(u, v)| (u - v).powi(2))
        .sum::<f64>()
        / 3.0;
    assert!(mse < 1e-4);
    for (e, p) in lib.entries().iter().zip(&r.refined) {
        assert!(e.bounds.contains(p));
    }
}

#[test]
fn abs_invariants_on_perturbed_mixture() {
    let lib = library(true);
    let spec = PerturbSpec {
        rho_scale: (0.97, 1.03),
        seed: 4,
        ..PerturbSpec::default()
    };
    let x = SimplexVector::new(vec![0.5, 0.25, 0.25]).unwrap();
    let (b, _) = synth_mixture(&lib, &x, &spec, &NoiseSpec::default()).unwrap();
    let config = UnmixConfig {
        outer_iters: 30,
        ..UnmixConfig::default()
    };
    let r = analysis_by_synthesis(&lib, &b, &config).unwrap();
    assert_eq!(r.loss_trace.len(), 31);
    let best = r.loss_trace.iter().cloned().fold(f64::INFINITY, f64::min);
    // The returned iterate is the best one seen.
    let a = build_a_from(&r.refined, lib.grid());
    let resid: f64 = (&a * DVector::from_column_slice(r.abundances.values()))
        .iter()
        .zip(b.values())
        .map(|(m, v)| (m - v).powi(2))
        .sum();
    let pen: f64 = r
        .abundances
        .values()
        .iter()
        .map(|v| (v + config.p_epsilon).powf(config.p))
        .sum();
    assert!((resid + config.lambda_p * pen - best).abs() <= 1e-12 * best.max(1.0));
    assert!((r.residual_rms - (resid / b.values().len() as f64).sqrt()).abs() < 1e-15);
    let base = unmix(&lib, &b, Method::Fcls, &config).unwrap();
    assert!(r.residual_rms < base.residual_rms);
    for (e, p) in lib.entries().iter().zip(&r.refined) {
        assert!(e.bounds.contains(p));
    }
    let s: f64 = r.abundances.values().iter().sum();
    assert!((s - 1.0).abs() < 1e-12);
}

#[test]
fn unmixing_is_deterministic() {
    let lib = library(true);
    let a = build_a(&lib);
    let b = mixed(&a, &[0.6, 0.1, 0.3], lib.grid());
    let config = UnmixConfig {
        outer_iters: 5,
        ..UnmixConfig::default()
    };
    assert_eq!(
        analysis_by_synthesis(&lib, &b, &config).unwrap(),
        analysis_by_synthesis(&lib, &b, &config).unwrap()
    );
    let pixels = vec![b.clone(), mixed(&a, &[0.1, 0.1, 0.8], lib.grid())];
    let seq: Vec<_> = unmix_batch(
        &lib,
        &pixels,
        Method::Abs,
        &config,
        dispersion_unmix::exec::Execution::Sequential,
    )
    .into_iter()
    .map(Result::unwrap)
    .collect();
    let par: Vec<_> = unmix_batch(
        &lib,
        &pixels,
        Method::Abs,
        &config,
        dispersion_unmix::exec::Execution::Parallel,
    )
    .into_iter()
    .map(Result::unwrap)
    .collect();
    assert_eq!(seq, par);
}

#[test]
fn sparsity_penalty_reduces_support() {
    let lib = library(false);
    let a = build_a(&lib);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (mut plain, mut sparse) = (0, 0);
    let solver = XSolverConfig::default();
    for _ in 0..50 {
        let clean = &a * DVector::from_column_slice(&[1.0, 0.0, 0.0]);
        let b: Vec<f64> = clean
            .iter()
            .map(|v| v + rng.random_range(-0.01..0.01))
            .collect();
        let b = MixedSpectrum::new(lib.grid().clone(), b).unwrap();
        let count = |x: SimplexVector| x.values().iter().filter(|v| **v > 0.01).count();
        plain += count(solve_abundances(&a, &b, 0.95, 0.0, 1e-8, &solver).unwrap());
        sparse += count(solve_abundances(&a, &b, 0.95, 1e-2, 1e-8, &solver).unwrap());
    }
    assert!(sparse <= plain, "{sparse} > {plain}");
}

#[test]
fn ground_truth_params_stay_in_boxes() {
    let lib = library(true);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for e in lib.entries() {
        let p = sample_in_box(&e.bounds, &mut rng);
        assert!(e.bounds.contains(&p));
    }
    let truth = GroundTruth {
        abundances: SimplexVector::uniform(3),
        params: lib.params(),
        perturb_seed: 0,
        noise: NoiseSpec::default(),
    };
    let b = truth.replay(lib.grid()).unwrap();
    assert!(b.values().iter().all(|v| v.is_finite()));
}

#[test]
fn invalid_unmix_config() {
    let lib = library(false);
    let b = MixedSpectrum::new(lib.grid().clone(), vec![0.5; lib.grid().len()]).unwrap();
    for config in [
        UnmixConfig {
            p: 0.0,
            ..UnmixConfig::default()
        },
        UnmixConfig {
            p: 1.5,
            ..UnmixConfig::default()
        },
        UnmixConfig {
            lambda_p: -1.0,
            ..UnmixConfig::default()
        },
        UnmixConfig {
            outer_iters: 0,
            ..UnmixConfig::default()
        },
    ] {
        assert!(analysis_by_synthesis(&lib, &b, &config).is_err());
    }
}
