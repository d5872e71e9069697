use crate::error::{Error, Result};

/// Sample Pearson correlation of two equal-length lists.
pub fn pearson_corr(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::contract(format!("lengths differ: {} and {}", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::contract("correlation needs at least two points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::contract("correlation is undefined for a constant list"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Mean and population standard deviation of per-run scores.
pub fn aggregate_runs(scores: &[f64]) -> Result<(f64, f64)> {
    if scores.is_empty() {
        return Err(Error::contract("no runs to aggregate"));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn exact_linear_relations() {
        let xs = [0.5, 1.0, 2.0, 4.5, -3.0];
        let up: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let down: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson_corr(&xs, &up).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson_corr(&xs, &down).unwrap() + 1.0).abs() < 1e-12);
        assert!(pearson_corr(&xs, &[1.0; 5]).is_err());
        assert!(pearson_corr(&xs, &xs[..3]).is_err());
        assert!(pearson_corr(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_runs(&[5.0]).unwrap(), (5.0, 0.0));
        assert_eq!(aggregate_runs(&[1.0, 3.0]).unwrap(), (2.0, 1.0));
        assert!(aggregate_runs(&[]).is_err());
    }

    proptest! {
        #[test]
        fn aggregate_is_order_invariant(mut v in prop::collection::vec(-1e3..1e3f64, 1..20)) {
            let (m, s) = aggregate_runs(&v).unwrap();
            v.reverse();
            let (m2, s2) = aggregate_runs(&v).unwrap();
            prop_assert!((m - m2).abs() < 1e-9 && (s - s2).abs() < 1e-9 && s >= 0.0);
        }

        #[test]
        fn correlation_is_bounded(xs in prop::collection::vec(-10.0..10.0f64, 3..20), seed in 0u64..1000) {
            let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x * ((i as u64 * 7 + seed) % 5) as f64).collect();
            if let Ok(r) = pearson_corr(&xs, &ys) {
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}
