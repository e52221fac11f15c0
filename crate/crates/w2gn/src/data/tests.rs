use super::*;
use ndarray::array;

#[test]
fn standard_gaussian_mean_obeys_lln() {
    let dist = ToyDistribution::StandardGaussian { dim: 2 };
    let x = sample(&dist, 100_000, 7).unwrap();
    let bound = 3.0 / (100_000f64).sqrt() * (2f64).sqrt();
    for j in 0..2 {
        let mean = x.column(j).sum() / 100_000.0;
        assert!(mean.abs() < bound, "coordinate {j} mean {mean}");
    }
}

#[test]
fn ring_components_are_balanced() {
    let dist = ToyDistribution::GaussianRing { k: 8, radius: 4.0, sigma: Some(0.2) };
    let means = dist.component_means().unwrap();
    let n = 80_000usize;
    let x = sample(&dist, n, 8).unwrap();
    let mut counts = vec![0usize; 8];
    for row in x.rows() {
        let nearest = means
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                let da = (row[0] - a[0]).powi(2) + (row[1] - a[1]).powi(2);
                let db = (row[0] - b[0]).powi(2) + (row[1] - b[1]).powi(2);
                da.partial_cmp(&db).unwrap()
            })
            .unwrap()
            .0;
        counts[nearest] += 1;
    }
    let p = 1.0 / 8.0;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    for &c in &counts {
        assert!((c as f64 - n as f64 * p).abs() < 4.0 * sd, "counts {counts:?}");
    }
}

#[test]
fn grid_means_form_a_lattice() {
    let dist = ToyDistribution::GaussianGrid { k: 5, spacing: 2.0, sigma: Some(0.1) };
    let means = dist.component_means().unwrap();
    assert_eq!(means.len(), 25);
    assert_eq!(means[0], [-4.0, -4.0]);
    assert_eq!(means[24], [4.0, 4.0]);
}

#[test]
fn swiss_roll_is_deterministic_in_seed() {
    let dist = ToyDistribution::SwissRoll { noise_sigma: 0.05 };
    let a = sample(&dist, 3, 42).unwrap();
    let b = sample(&dist, 3, 42).unwrap();
    assert_eq!(a, b);
    // points live on the spiral envelope: radius <= 4.5*pi/10 + slack
    for row in a.rows() {
        let r = (row[0] * row[0] + row[1] * row[1]).sqrt();
        assert!(r < 4.5 * std::f64::consts::PI / 10.0 + 1.0);
    }
}

#[test]
fn correlated_gaussian_matches_requested_moments() {
    let dist = ToyDistribution::Gaussian {
        mean: vec![1.0, -2.0],
        cov: vec![vec![2.0, 0.8], vec![0.8, 1.0]],
    };
    let n = 100_000usize;
    let x = sample(&dist, n, 9).unwrap();
    let m0 = x.column(0).sum() / n as f64;
    let m1 = x.column(1).sum() / n as f64;
    assert!((m0 - 1.0).abs() < 0.02 && (m1 + 2.0).abs() < 0.02);
    let cov01 = x
        .rows()
        .into_iter()
        .map(|r| (r[0] - m0) * (r[1] - m1))
        .sum::<f64>()
        / (n - 1) as f64;
    assert!((cov01 - 0.8).abs() < 0.03, "cov01 {cov01}");
}

#[test]
fn invalid_parameters_are_rejected() {
    assert!(Sampler::new(ToyDistribution::GaussianRing { k: 0, radius: 4.0, sigma: None }, 0)
        .is_err());
    assert!(Sampler::new(
        ToyDistribution::Gaussian { mean: vec![0.0], cov: vec![vec![-1.0]] },
        0
    )
    .is_err());
    assert!(Sampler::new(ToyDistribution::SwissRoll { noise_sigma: -0.1 }, 0).is_err());
}

#[test]
fn palette_round_trips_through_png() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("two.png");
    let src = PixelPalette {
        pixels: array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
        width: 2,
        height: 1,
    };
    save_palette(&src, &path).unwrap();
    let loaded = load_palette(&path).unwrap();
    assert_eq!(loaded.width, 2);
    assert_eq!(loaded.height, 1);
    assert_eq!(loaded.pixels, src.pixels);

    // save -> load -> save is byte-identical
    let path2 = dir.path().join("two2.png");
    save_palette(&loaded, &path2).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
}

#[test]
fn palette_maps_clamp_and_preserve_shape() {
    let pal = PixelPalette {
        pixels: array![[0.2, 0.4, 0.9], [0.0, 1.0, 0.5]],
        width: 1,
        height: 2,
    };
    let id = apply_palette_map(|b| b.to_owned(), &pal);
    assert_eq!(id.pixels, pal.pixels);

    let gray = apply_palette_map(|b| Array2::from_elem(b.raw_dim(), 0.5), &pal);
    assert!(gray.pixels.iter().all(|&v| v == 0.5));

    let hot = apply_palette_map(|b| b * 10.0, &pal);
    assert!(hot.pixels.iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn palette_sampling_is_with_replacement() {
    let pal = PixelPalette { pixels: array![[0.25, 0.5, 0.75]], width: 1, height: 1 };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = pal.sample(16, &mut rng);
    assert_eq!(batch.nrows(), 16);
    assert!(batch.rows().into_iter().all(|r| r[0] == 0.25 && r[1] == 0.5 && r[2] == 0.75));
}

#[test]
fn scatter_single_point_body() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.csv");
    export_scatter(&array![[1.0, 2.0]].view(), &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "x,y\n1,2\n");
}

#[test]
fn scatter_round_trips_to_last_digit() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pts.csv");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let batch = Array2::from_shape_fn((64, 2), |_| {
        rng.sample::<f64, _>(StandardNormal) * 10f64.powi(rng.gen_range(-8..8))
    });
    export_scatter(&batch.view(), &path).unwrap();
    let parsed = parse_scatter(&path).unwrap();
    assert_eq!(parsed, batch);
}

#[test]
fn scatter_parser_reports_bad_lines() {
    assert_eq!(parse_scatter_str("x,y\n1,2\n3,oops\n"), Err(3));
    assert_eq!(parse_scatter_str("wrong header\n"), Err(1));
    assert_eq!(parse_scatter_str("x,y\n1,inf\n"), Err(2));
    assert_eq!(parse_scatter_str("x,y\n").unwrap().nrows(), 0);
}

#[test]
fn distribution_toml_round_trip() {
    let dist = ToyDistribution::GaussianRing { k: 8, radius: 4.0, sigma: None };
    let text = toml::to_string(&dist).unwrap();
    let back: ToyDistribution = toml::from_str(&text).unwrap();
    assert_eq!(back, dist);
    let err = toml::from_str::<ToyDistribution>("kind = \"gaussian-ring\"\nk = 8\nradius = 4.0\nbogus = 1\n");
    assert!(err.is_err());
}
