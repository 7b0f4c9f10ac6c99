//! Sequential vs rayon execution of the batch entry points.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dispersion_unmix::diagnostics::condition_sweep;
use dispersion_unmix::exec::Execution;
use dispersion_unmix::fit::{fit_endmember, make_tolerance_box, FitConfig, Tolerances};
use dispersion_unmix::fixtures::{load_fixture_params, FIXTURE_NAMES};
use dispersion_unmix::optim::AdamConfig;
use dispersion_unmix::spectral::{render, WavenumberGrid};
use dispersion_unmix::synth::{synth_batch, AbundanceSampling, NoiseSpec, PerturbSpec};
use dispersion_unmix::unmix::{unmix_batch, Endmember, EndmemberLibrary, Method, UnmixConfig};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

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
    EndmemberLibrary::new(WavenumberGrid::range(200.0, 1400.0, 8.0).unwrap(), entries).unwrap()
}

fn perturbation() -> PerturbSpec {
    PerturbSpec {
        omega0_shift: (-5.0, 5.0),
        gamma_scale: (0.95, 1.05),
        rho_scale: (0.95, 1.05),
        ..PerturbSpec::default()
    }
}

fn bench_unmix(c: &mut Criterion) {
    let lib = library();
    let pixels: Vec<_> = synth_batch(
        &lib,
        16,
        AbundanceSampling::default(),
        &perturbation(),
        &NoiseSpec::default(),
        1,
        Execution::Sequential,
    )
    .unwrap()
    .into_iter()
    .map(|(b, _)| b)
    .collect();
    let config = UnmixConfig {
        outer_iters: 10,
        ..UnmixConfig::default()
    };
    let mut group = c.benchmark_group("unmix_batch_abs");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| unmix_batch(&lib, &pixels, Method::Abs, &config, mode))
        });
    }
    group.finish();
}

fn bench_fit(c: &mut Criterion) {
    let grid = WavenumberGrid::range(200.0, 1400.0, 10.0).unwrap();
    let target = render(&load_fixture_params("hematite").unwrap(), &grid);
    let mut group = c.benchmark_group("fit_restarts");
    group.sample_size(10);
    for (name, mode) in MODES {
        let config = FitConfig {
            k_init: 10,
            restarts: 4,
            optimizer: AdamConfig {
                steps: 200,
                ..FitConfig::default().optimizer
            },
            refit: AdamConfig {
                steps: 100,
                ..FitConfig::default().refit
            },
            execution: mode,
            ..FitConfig::default()
        };
        group.bench_function(name, |b| b.iter(|| fit_endmember(&target, &config)));
    }
    group.finish();
}

fn bench_synth(c: &mut Criterion) {
    let lib = library();
    let noise = NoiseSpec {
        sigma_radiance: 1e-3,
        ..NoiseSpec::default()
    };
    let mut group = c.benchmark_group("synth_batch");
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| {
                synth_batch(
                    &lib,
                    256,
                    AbundanceSampling::default(),
                    &perturbation(),
                    &noise,
                    3,
                    mode,
                )
            })
        });
    }
    group.finish();
}

fn bench_sweep(c: &mut Criterion) {
    let lib = library();
    let mut group = c.benchmark_group("condition_sweep");
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| condition_sweep(&lib, &perturbation(), 64, 5, mode))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_unmix, bench_fit, bench_synth, bench_sweep);
criterion_main!(benches);
