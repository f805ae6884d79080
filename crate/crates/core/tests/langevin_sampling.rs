use drb_core::langevin::{
    ula_chain, ula_sample, SamplerBudget, Sequential, SmoothedTarget, Workspace,
};
use drb_core::{rng, CostOracle, DiscreteMeasure, Domain, PotentialVector};

fn dirac_target(nus: &[DiscreteMeasure], tau: f64, sigma: f64) -> SmoothedTarget<'_> {
    let psi: Vec<PotentialVector> = nus.iter().map(PotentialVector::zeros).collect();
    SmoothedTarget::new(
        Domain::ball(1, 1.0).unwrap(),
        sigma,
        tau,
        1.0,
        vec![1.0 / nus.len() as f64; nus.len()],
        nus,
        &psi,
        &CostOracle::SquaredEuclidean,
    )
    .unwrap()
}

/// CDF of `exp(−V_σ)` on a fine trapezoid grid over `[−4, 4]`.
fn quadrature_cdf(target: &SmoothedTarget<'_>) -> (Vec<f64>, Vec<f64>) {
    let h = 1e-4;
    let xs: Vec<f64> = (0..=80_000).map(|i| -4.0 + i as f64 * h).collect();
    let dens: Vec<f64> = xs.iter().map(|x| (-target.v_sigma(&[*x])).exp()).collect();
    let mut cdf = vec![0.0; xs.len()];
    for i in 1..xs.len() {
        cdf[i] = cdf[i - 1] + 0.5 * h * (dens[i] + dens[i - 1]);
    }
    let total = *cdf.last().unwrap();
    cdf.iter_mut().for_each(|c| *c /= total);
    (xs, cdf)
}

#[test]
fn near_uniform_target_passes_kolmogorov_smirnov() {
    let nus = vec![DiscreteMeasure::dirac(&[0.0]).unwrap()];
    let target = dirac_target(&nus, 10.0, 0.25);
    let budget = SamplerBudget::manual(&target, 1e-3, 5_000, 4.0, None, false).unwrap();
    let n = 10_000;
    let draw = ula_sample(&target, &budget, n, 2024, 0, &Sequential).unwrap();
    let mut xs: Vec<f64> = draw.points.iter().map(|x| x[0]).collect();
    xs.sort_by(f64::total_cmp);
    let (grid, cdf) = quadrature_cdf(&target);
    let mut d = 0.0f64;
    for (i, x) in xs.iter().enumerate() {
        let k = grid.partition_point(|g| g <= x).min(grid.len() - 1);
        let f = cdf[k];
        d = d
            .max((f - i as f64 / n as f64).abs())
            .max((f - (i + 1) as f64 / n as f64).abs());
    }
    // 99.9% Kolmogorov quantile is 1.95/√n
    assert!(d < 1.95 / (n as f64).sqrt(), "KS statistic {d}");
}

#[test]
fn certified_step_never_diverges() {
    let nus = vec![
        DiscreteMeasure::uniform(drb_core::PointCloud::new(&[vec![-0.9], vec![0.4]]).unwrap())
            .unwrap(),
        DiscreteMeasure::dirac(&[0.7]).unwrap(),
    ];
    let target = dirac_target(&nus, 0.5, 0.25);
    let tv = drb_core::langevin::smoothing_tv_bound(0.25, 1.0, 0.5, 1);
    let (budget, _) = SamplerBudget::certified(&target, tv + 0.5, 4.0, None).unwrap();
    let mut x = vec![3.0];
    let mut r = rng::stream(1, rng::PURPOSE_LANGEVIN, 0, 0);
    let mut ws = Workspace::new(1);
    ula_chain(&target, &mut x, budget.step, 1_000_000, &mut r, &mut ws);
    assert!(x[0].is_finite());
}

#[test]
fn chains_with_different_seeds_are_uncorrelated() {
    let nus = vec![DiscreteMeasure::dirac(&[0.2]).unwrap()];
    let target = dirac_target(&nus, 1.0, 0.25);
    let budget = SamplerBudget::manual(&target, 2e-3, 500, 4.0, None, false).unwrap();
    let n = 10_000;
    let a = ula_sample(&target, &budget, n, 1, 0, &Sequential).unwrap();
    let b = ula_sample(&target, &budget, n, 2, 0, &Sequential).unwrap();
    let xa: Vec<f64> = a.points.iter().map(|x| x[0]).collect();
    let xb: Vec<f64> = b.points.iter().map(|x| x[0]).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(&xa), mean(&xb));
    let cov: f64 = xa
        .iter()
        .zip(&xb)
        .map(|(p, q)| (p - ma) * (q - mb))
        .sum::<f64>()
        / n as f64;
    let sa = (xa.iter().map(|p| (p - ma).powi(2)).sum::<f64>() / n as f64).sqrt();
    let sb = (xb.iter().map(|q| (q - mb).powi(2)).sum::<f64>() / n as f64).sqrt();
    let corr = cov / (sa * sb);
    assert!(corr.abs() < 3.0 / (n as f64).sqrt(), "correlation {corr}");
}
