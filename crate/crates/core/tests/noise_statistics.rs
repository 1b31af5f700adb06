use flowpde_core::noise::{sample_macroscopic_noise, Mollifier, NoiseKind, NoiseModel, Profile};
use flowpde_core::LatticeSpec;

const NU: f64 = 0.5;

/// ∫_{−1}^{1} raw(u)^p du by the trapezoidal rule on a fine grid.
fn raw_moment(p: Profile, power: i32) -> f64 {
    let m = 200_000;
    let h = 2.0 / m as f64;
    (0..=m).map(|i| {
        let w = if i == 0 || i == m { 0.5 } else { 1.0 };
        w * p.raw(-1.0 + i as f64 * h).powi(power)
    })
    .sum::<f64>()
        * h
}

/// ∫ m_r(x)² dx for the unit-mass profile of half-width r.
fn l2_squared(p: Profile, r: f64) -> f64 {
    let i1 = raw_moment(p, 1);
    raw_moment(p, 2) / (i1 * i1 * r)
}

/// Values at grid points farther apart than the noise correlation length,
/// so they are independent across points and samples.
fn separated_values(profile: Profile, samples: u64) -> (Vec<f64>, Vec<(f64, f64)>) {
    let model = NoiseModel::new(NoiseKind::MollifiedWhite(Mollifier { time: profile, space: profile }), NU, 5).unwrap();
    let spec = LatticeSpec::new(1, 256, 0.02, 0.0, 1.9, 0.5).unwrap();
    let (sx, st) = (8, 19);
    let mut single = Vec::new();
    let mut pairs = Vec::new();
    for s in 0..samples {
        let f = sample_macroscopic_noise(&model, &spec, s).unwrap();
        for j in (0..f.n_slices()).step_by(st) {
            let row = f.slice(j);
            for x in (0..row.len()).step_by(2 * sx) {
                single.push(row[x]);
                pairs.push((row[x], row[(x + sx) % row.len()]));
            }
        }
    }
    (single, pairs)
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn mollified_white_noise_second_moments() {
    for profile in [Profile::CosPower(4), Profile::Bump] {
        let r = 0.5 / 2f64.sqrt();
        let expected = l2_squared(profile, r * NU) * l2_squared(profile, r * NU.powf(2.0));
        let (single, pairs) = separated_values(profile, 80);

        let (mean, se) = mean_se(&single);
        assert!(mean.abs() <= 4.0 * se, "{profile:?}: mean {mean} se {se}");

        let squares: Vec<f64> = single.iter().map(|v| v * v).collect();
        let (var, var_se) = mean_se(&squares);
        let rel = (var / expected - 1.0).abs();
        assert!(rel <= 0.03 + 4.0 * var_se / expected, "{profile:?}: {var} vs {expected} (se {var_se})");

        let products: Vec<f64> = pairs.iter().map(|(a, b)| a * b).collect();
        let (cov, cov_se) = mean_se(&products);
        assert!(cov.abs() <= 4.0 * cov_se, "{profile:?}: covariance beyond support {cov} se {cov_se}");
    }
}

#[test]
fn samples_are_reproducible_and_distinct() {
    let model = NoiseModel::new(NoiseKind::MollifiedWhite(Mollifier { time: Profile::Bump, space: Profile::Bump }), NU, 9).unwrap();
    let spec = LatticeSpec::new(1, 256, 0.02, 0.0, 0.2, 0.5).unwrap();
    let a = sample_macroscopic_noise(&model, &spec, 3).unwrap();
    let b = sample_macroscopic_noise(&model, &spec, 3).unwrap();
    let c = sample_macroscopic_noise(&model, &spec, 4).unwrap();
    assert_eq!(a.data, b.data);
    assert_ne!(a.data, c.data);
}
