use dispersion_unmix::spectral::{Spectrum, WavenumberGrid};
use dispersion_unmix::synth::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn adjacent_samples_uncorrelated() {
    let g = WavenumberGrid::range(600.0, 700.0, 10.0).unwrap();
    let clean = Spectrum::new(g.clone(), vec![0.5; g.len()]).unwrap();
    let draws = 10_000;
    let noise = |seed| NoiseSpec {
        sigma_radiance: 0.01,
        seed,
        ..NoiseSpec::default()
    };
    let std = noise_std(&g, &noise(0));
    let samples: Vec<Vec<f64>> = (0..draws)
        .map(|s| {
            emissivity_noise(&clean, &noise(s))
                .unwrap()
                .values()
                .iter()
                .map(|v| v - 0.5)
                .collect()
        })
        .collect();
    for i in 0..g.len() - 1 {
        let cov: f64 = samples.iter().map(|d| d[i] * d[i + 1]).sum::<f64>() / draws as f64;
        // Standard error of the product mean for independent zero-mean normals.
        let se = std[i] * std[i + 1] / (draws as f64).sqrt();
        assert!(cov.abs() < 3.0 * se, "band {i}: cov {cov:e}, se {se:e}");
    }
}

#[test]
fn noise_grows_away_from_peak() {
    let g = WavenumberGrid::range(200.0, 1400.0, 10.0).unwrap();
    let std = noise_std(
        &g,
        &NoiseSpec {
            sigma_radiance: 1.0,
            ..NoiseSpec::default()
        },
    );
    let peak = std
        .iter()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |b, (i, v)| if *v < b.1 { (i, *v) } else { b },
        )
        .0;
    assert!(std[..peak].windows(2).all(|w| w[0] > w[1]));
    assert!(std[peak..].windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn kmeans_finds_separated_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let centres = [vec![0.2, 0.3, 0.4], vec![0.8, 0.7, 0.9]];
    let mut points = Vec::new();
    for c in &centres {
        for _ in 0..40 {
            points.push(
                c.iter()
                    .map(|v| v + rng.random_range(-0.02..0.02))
                    .collect::<Vec<f64>>(),
            );
        }
    }
    let result = kmeans(&points, 2, 1).unwrap();
    for (k, c) in centres.iter().enumerate() {
        let members: Vec<&Vec<f64>> = points[k * 40..(k + 1) * 40].iter().collect();
        let mean: Vec<f64> = (0..3)
            .map(|d| members.iter().map(|p| p[d]).sum::<f64>() / 40.0)
            .collect();
        let centroid = result
            .centroids
            .iter()
            .min_by(|a, b| {
                let da: f64 = a.iter().zip(c).map(|(x, y)| (x - y).powi(2)).sum();
                let db: f64 = b.iter().zip(c).map(|(x, y)| (x - y).powi(2)).sum();
                da.total_cmp(&db)
            })
            .unwrap();
        for (u, v) in centroid.iter().zip(&mean) {
            assert!((u - v).abs() < 1e-6);
        }
    }
}

#[test]
fn kmeans_objective_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..10 {
        let points: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..4).map(|_| rng.random::<f64>()).collect())
            .collect();
        let r = kmeans(&points, 5, seed).unwrap();
        assert!(
            r.wcss.windows(2).all(|w| w[1] <= w[0] + 1e-12),
            "{:?}",
            r.wcss
        );
        assert!(r.iterations <= KMEANS_MAX_ITERS);
    }
}

#[test]
fn kmeans_deterministic() {
    let g = WavenumberGrid::range(200.0, 260.0, 10.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spectra: Vec<Spectrum> = (0..30)
        .map(|_| {
            Spectrum::new(
                g.clone(),
                (0..g.len()).map(|_| rng.random_range(0.2..0.9)).collect(),
            )
            .unwrap()
        })
        .collect();
    assert_eq!(
        kmeans_exemplars(&spectra, 5, 3).unwrap(),
        kmeans_exemplars(&spectra, 5, 3).unwrap()
    );
}
