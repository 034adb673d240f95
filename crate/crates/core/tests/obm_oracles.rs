use std::f64::consts::PI;

use proptest::prelude::*;
use rand::Rng;

use geocond::obm::{
    self, rasterize_channel, sample_triangular, ChannelSpec, ObmParams, TriangularDist,
};
use geocond::{par, seed};

/// Every pixel against every centerline point, written from the curve
/// definition alone.
fn dense_scan(spec: &ChannelSpec, h: usize, w: usize) -> Vec<(usize, usize)> {
    let diag = ((h * h + w * w) as f64).sqrt();
    let th = spec.orientation * PI / 180.0;
    let n = (2.0 * diag / 0.1).ceil() as usize;
    let pts: Vec<(f64, f64)> = (0..=n)
        .map(|k| {
            let t = -diag + 0.1 * k as f64;
            let s = spec.amplitude * (2.0 * PI * t / spec.wavelength + spec.phase).sin();
            (
                spec.anchor.0 - t * th.sin() + s * th.cos(),
                spec.anchor.1 + t * th.cos() + s * th.sin(),
            )
        })
        .collect();
    let lim = (spec.width / 2.0).powi(2);
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            if pts
                .iter()
                .any(|&(pr, pc)| (y - pr).powi(2) + (x - pc).powi(2) <= lim)
            {
                out.push((r, c));
            }
        }
    }
    out
}

#[test]
fn rasterizer_matches_dense_scan() {
    let params = ObmParams::for_size(32);
    let mut rng = seed::stream(404, 0);
    for i in 0..60 {
        let mut spec = params.sample_channel(&mut rng);
        spec.width = rng.random_range(1.0..6.0);
        let expect = dense_scan(&spec, 32, 32);
        assert_eq!(
            rasterize_channel(&spec, 32, 32),
            expect,
            "spec {i}: {spec:?}"
        );
    }
}

fn ks_statistic(dist: &TriangularDist, draws: usize, stream: u64) -> (f64, f64, f64, f64) {
    let mut rng = seed::stream(stream, 0);
    let mut xs: Vec<f64> = (0..draws)
        .map(|_| sample_triangular(dist, rng.random::<f64>()))
        .collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    // Analytic CDF written out here rather than taken from the library.
    let (a, c, b) = (dist.min, dist.mode, dist.max);
    let cdf = |x: f64| {
        if x <= a {
            0.0
        } else if x <= c {
            (x - a).powi(2) / ((b - a) * (c - a))
        } else if x < b {
            1.0 - (b - x).powi(2) / ((b - a) * (b - c))
        } else {
            1.0
        }
    };
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d
            .max((f - i as f64 / n).abs())
            .max(((i + 1) as f64 / n - f).abs());
    }
    (xs.iter().sum::<f64>() / n, d, xs[0], xs[xs.len() - 1])
}

#[test]
fn triangular_sampler_fits_its_distribution() {
    for (i, dist) in [
        TriangularDist {
            min: 10.0,
            mode: 20.0,
            max: 30.0,
        },
        TriangularDist {
            min: -60.0,
            mode: 0.0,
            max: 60.0,
        },
        TriangularDist {
            min: 0.0,
            mode: 1.0,
            max: 4.0,
        },
    ]
    .iter()
    .enumerate()
    {
        let (mean, ks, lo, hi) = ks_statistic(dist, 100_000, 50 + i as u64);
        assert!(ks < 0.01, "{dist:?}: KS {ks}");
        let (a, c, b) = (dist.min, dist.mode, dist.max);
        let sd = ((a * a + b * b + c * c - a * b - a * c - b * c) / 18.0).sqrt();
        let se = sd / (100_000f64).sqrt();
        assert!(
            (mean - (a + b + c) / 3.0).abs() < 4.0 * se,
            "{dist:?}: mean {mean}"
        );
        assert!(lo >= dist.min && hi <= dist.max);
    }
}

#[test]
fn proportion_envelope_at_128() {
    let params = ObmParams::for_size(128);
    let images = obm::generate_dataset(&params, 1000, 2024).unwrap();
    for (i, img) in images.iter().enumerate() {
        let p = img.count_ones() as f64 / (128.0 * 128.0);
        assert!((0.15..=0.35).contains(&p), "image {i}: {p}");
    }
}

#[test]
fn dataset_independent_of_worker_count() {
    let params = ObmParams::for_size(32);
    let one = par::with_workers(1, || obm::generate_dataset(&params, 40, 9).unwrap());
    let three = par::with_workers(3, || obm::generate_dataset(&params, 40, 9).unwrap());
    assert_eq!(one, three);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn stopping_rule_never_overshoots(s in 0u64..1_000_000, target in 0.1f64..0.4) {
        let params = ObmParams { target_proportion: target, ..ObmParams::for_size(32) };
        let g = obm::generate_image_detailed(&params, &mut seed::stream(s, 0)).unwrap();
        prop_assert!(!g.proportions.is_empty());
        prop_assert!(g.proportions.windows(2).all(|w| w[0] <= w[1]));
        let last = *g.proportions.last().unwrap();
        if let Some(rej) = g.rejected {
            prop_assert!((rej - target).abs() > (last - target).abs());
        }
        if g.proportions.len() >= 2 {
            let before = g.proportions[g.proportions.len() - 2];
            prop_assert!((last - target).abs() <= (before - target).abs());
        }
    }

    #[test]
    fn sampler_stays_in_support(min in -100.0f64..100.0, a in 0.0f64..1.0, span in 0.0f64..50.0, u in 0.0f64..=1.0) {
        let d = TriangularDist { min, mode: min + a * span, max: min + span };
        let x = sample_triangular(&d, u);
        prop_assert!(x >= d.min && x <= d.max);
    }
}
