use rand::Rng;

use geocond::domain::{Measurement, MeasurementSet};
use geocond::inpaint::expand_mask;
use geocond::seed;

/// Per pixel: the nearest measurement within the radius, earliest listed on
/// ties, and its weight `1/√(d² + 1)`.
fn exhaustive(ms: &MeasurementSet, radius: usize, h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut weights = vec![0.0; h * w];
    let mut targets = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut best: Option<(i64, usize)> = None;
            for (k, m) in ms.iter().enumerate() {
                let d2 = (r as i64 - m.row as i64).pow(2) + (c as i64 - m.col as i64).pow(2);
                if d2 > (radius * radius) as i64 {
                    continue;
                }
                if best.is_none_or(|(b, _)| d2 < b) {
                    best = Some((d2, k));
                }
            }
            if let Some((d2, k)) = best {
                weights[r * w + c] = 1.0 / ((d2 + 1) as f64).sqrt();
                targets[r * w + c] = if ms.as_slice()[k].rock == 1 {
                    1.0
                } else {
                    -1.0
                };
            }
        }
    }
    (weights, targets)
}

#[test]
fn overlap_matches_exhaustive_oracle_on_random_sets() {
    let mut rng = seed::stream(77, 0);
    for trial in 0..50 {
        let (h, w) = (rng.random_range(8..40), rng.random_range(8..40));
        let m = rng.random_range(1..40);
        let radius = rng.random_range(0..11);
        let ms =
            MeasurementSet::new((0..m).map(|_| {
                Measurement::new(rng.random_range(0..h), rng.random_range(0..w), 0).unwrap()
            }))
            .unwrap();
        // Re-label with random rocks now that positions are unique.
        let ms = MeasurementSet::new(
            ms.iter()
                .map(|x| Measurement::new(x.row, x.col, rng.random_range(0..2)).unwrap()),
        )
        .unwrap();
        let mask = expand_mask(&ms, radius, (h, w)).unwrap();
        let (weights, targets) = exhaustive(&ms, radius, h, w);
        assert_eq!(mask.weights(), &weights[..], "trial {trial}");
        assert_eq!(mask.targets(), &targets[..], "trial {trial}");
    }
}

#[test]
fn weights_at_small_offsets() {
    let ms = MeasurementSet::new([Measurement::new(10, 10, 1).unwrap()]).unwrap();
    let mask = expand_mask(&ms, 4, (21, 21)).unwrap();
    assert_eq!(mask.weight(10, 10), 1.0);
    assert!((mask.weight(11, 10) - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    assert!((mask.weight(11, 11) - 1.0 / 3f64.sqrt()).abs() < 1e-12);
    assert_eq!(mask.weight(15, 10), 0.0);
    assert_eq!(mask.weight(14, 14), 0.0);
}

#[test]
fn radius_zero_is_the_hard_mask() {
    let mut rng = seed::stream(78, 0);
    let ms = MeasurementSet::new(
        (0..30).map(|i| Measurement::new(i, rng.random_range(0..32), (i % 2) as u8).unwrap()),
    )
    .unwrap();
    let mask = expand_mask(&ms, 0, (32, 32)).unwrap();
    assert_eq!(mask.support(), 30);
    for m in ms.iter() {
        assert_eq!(mask.weight(m.row, m.col), 1.0);
        assert_eq!(
            mask.target(m.row, m.col),
            if m.rock == 1 { 1.0 } else { -1.0 }
        );
    }
}
