mod common;

use betacoal::rates::{
    centering_constant, jump_distribution, limit_jump_law, merger_rate, total_rate, total_rate_closed_form,
    write_rate_row_csv, AlphaModel, LimitJumpSampler, RateTable,
};
use betacoal::rng::{SeedRoot, Stream};
use rand::Rng;

fn model(alpha: f64) -> AlphaModel {
    AlphaModel::new(alpha).unwrap()
}

#[test]
fn merger_rates_match_quadrature() {
    let md = model(1.5);
    assert!((merger_rate(3, 2, &md).unwrap() - 0.75).abs() < 1e-12);
    assert!((merger_rate(3, 3, &md).unwrap() - 0.25).abs() < 1e-12);
    assert!((common::merger_rate_quadrature(3, 2, 1.5) - 0.75).abs() < 1e-12);
    assert!((common::merger_rate_quadrature(3, 3, 1.5) - 0.25).abs() < 1e-12);
    for alpha in [1.01, 1.3, 1.7, 1.99] {
        for (m, k) in [(2, 2), (5, 2), (5, 5), (20, 7), (40, 39)] {
            let e = merger_rate(m, k, &model(alpha)).unwrap();
            let q = common::merger_rate_quadrature(m, k, alpha);
            assert!((e / q - 1.0).abs() < 1e-10, "α={alpha} m={m} k={k}: {e} vs {q}");
        }
    }
}

#[test]
fn merger_rate_domain() {
    let md = model(1.5);
    assert!(merger_rate(3, 1, &md).is_err());
    assert!(merger_rate(3, 4, &md).is_err());
    assert!(AlphaModel::new(1.0).is_err());
    assert!(AlphaModel::new(2.0).is_err());
    assert!(AlphaModel::new(f64::NAN).is_err());
}

#[test]
fn total_rate_examples() {
    let md = model(1.5);
    assert!((total_rate(2, &md).unwrap() - 1.0).abs() < 1e-12);
    assert!((total_rate(3, &md).unwrap() - 2.5).abs() < 1e-12);
    let m = 200usize;
    let approx = (m as f64).powf(1.5) / md.alpha_gamma_alpha();
    assert!((total_rate(m, &md).unwrap() / approx - 1.0).abs() < 0.05);
    for m in [2usize, 10, 100, 1000] {
        let a = total_rate(m, &md).unwrap();
        assert!((a / total_rate_closed_form(m, &md) - 1.0).abs() < 1e-10, "m={m}");
    }
}

#[test]
fn jump_distribution_examples() {
    let md = model(1.5);
    assert_eq!(jump_distribution(2, &md).unwrap(), vec![1.0]);
    let p3 = jump_distribution(3, &md).unwrap();
    assert!((p3[0] - 0.9).abs() < 1e-12 && (p3[1] - 0.1).abs() < 1e-12);
    let p = jump_distribution(10_000, &md).unwrap();
    assert!((p[0] / limit_jump_law(1, &md) - 1.0).abs() < 0.01);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
}

#[test]
fn limit_law_mass_and_mean() {
    let md = model(1.5);
    // (α/Γ(2-α)) Γ(2-α)/Γ(3) = α/2
    assert!((limit_jump_law(1, &md) - 0.75).abs() < 1e-12);
    // Ratio recurrence P(j+1)/P(j) = (j+1-α)/(j+2), independent of any gamma function.
    let mut p = 0.75f64;
    let (mut mass, mut mean) = (0.0f64, 0.0f64);
    for j in 1..=100_000_000u64 {
        if j <= 1_000_000 {
            mass += p;
        }
        mean += j as f64 * p;
        if j == 1_000 {
            assert!((p / limit_jump_law(j, &md) - 1.0).abs() < 1e-10);
        }
        p *= (j as f64 + 1.0 - 1.5) / (j as f64 + 2.0);
    }
    assert!((mass - 1.0).abs() < 1e-3, "{mass}");
    assert!((mean - 2.0).abs() < 1e-2, "{mean}");
}

#[test]
fn centering_constant_examples() {
    let md = model(1.5);
    assert!((centering_constant(1, &md) - 0.664_670).abs() < 1e-6);
    assert!((centering_constant(3, &md) - 0.083_083_8).abs() < 1e-7);
    let mut rng = SeedRoot(3).stream(0, Stream::Auxiliary);
    for _ in 0..5 {
        let a: f64 = rng.random_range(1.01..1.99);
        let md = model(a);
        let simplified = a * (a - 1.0) * libm::tgamma(a);
        assert!((centering_constant(1, &md) / simplified - 1.0).abs() < 1e-12);
    }
}

#[test]
fn rate_table_sampling_matches_law() {
    let md = model(1.5);
    let table = RateTable::new(&md, 5_000).unwrap();
    let mut rng = SeedRoot(11).stream(0, Stream::Jumps);
    for m in [3usize, 50, 3_000] {
        let p = jump_distribution(m, &md).unwrap();
        let reps = 200_000;
        let mut counts = [0usize; 4];
        for _ in 0..reps {
            let d = table.sample_jump(m, &mut rng);
            assert!((1..m).contains(&d));
            if d <= counts.len() {
                counts[d - 1] += 1;
            }
        }
        for (d, &c) in counts.iter().enumerate().take(m - 1) {
            let f = c as f64 / reps as f64;
            let se = (p[d] * (1.0 - p[d]) / reps as f64).sqrt();
            assert!((f - p[d]).abs() < 4.0 * se + 1e-12, "m={m} d={} {f} vs {}", d + 1, p[d]);
        }
    }
}

#[test]
fn limit_sampler_matches_law() {
    let md = model(1.5);
    let sampler = LimitJumpSampler::new(&md);
    let mut rng = SeedRoot(12).stream(0, Stream::Jumps);
    let reps = 400_000;
    let mut counts = [0usize; 5];
    let mut big = 0usize;
    for _ in 0..reps {
        let v = sampler.sample(&mut rng);
        if v <= 5 {
            counts[v as usize - 1] += 1;
        }
        if v > 1_000 {
            big += 1;
        }
    }
    for (j, &c) in counts.iter().enumerate() {
        let p = limit_jump_law(j as u64 + 1, &md);
        let se = (p * (1.0 - p) / reps as f64).sqrt();
        assert!((c as f64 / reps as f64 - p).abs() < 4.0 * se);
    }
    let tail = betacoal::rates::limit_jump_tail(1_001, &md);
    let se = (tail / reps as f64).sqrt();
    assert!((big as f64 / reps as f64 - tail).abs() < 4.0 * se);
}

#[test]
fn rate_row_csv() {
    let md = model(1.5);
    let mut buf = Vec::new();
    write_rate_row_csv(3, &md, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("m,k,lambda_mk"));
    let vals: Vec<f64> = lines.map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(vals.len(), 2);
    assert!((vals[0] - 0.75).abs() < 1e-12 && (vals[1] - 0.25).abs() < 1e-12);
}
