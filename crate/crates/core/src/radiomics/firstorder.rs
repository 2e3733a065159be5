use crate::volgrid::percentile;

pub const FIRST_ORDER_NAMES: [&str; 18] = [
    "Energy",
    "Entropy",
    "Minimum",
    "10Percentile",
    "90Percentile",
    "Maximum",
    "Mean",
    "Median",
    "InterquartileRange",
    "Range",
    "MeanAbsoluteDeviation",
    "RobustMeanAbsoluteDeviation",
    "RootMeanSquared",
    "StandardDeviation",
    "Skewness",
    "Kurtosis",
    "Variance",
    "Uniformity",
];

/// First-order statistics of the roi. `values` are the preprocessed
/// intensities and `levels` their gray levels (entropy and uniformity use
/// the level histogram). Moments are population moments; skewness and
/// kurtosis of a constant roi are 0.
pub fn first_order(values: &[f64], levels: &[u32]) -> [f64; 18] {
    assert!(!values.is_empty() && values.len() == levels.len(), "first-order needs a nonempty roi");
    let n = values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mean = values.iter().sum::<f64>() / n;
    let central = |k: i32| values.iter().map(|x| (x - mean).powi(k)).sum::<f64>() / n;
    let (m2, m3, m4) = (central(2), central(3), central(4));
    let p10 = percentile(&sorted, 10.0);
    let p90 = percentile(&sorted, 90.0);
    let robust: Vec<f64> = values.iter().copied().filter(|&x| x >= p10 && x <= p90).collect();
    let robust_mean = robust.iter().sum::<f64>() / robust.len() as f64;

    let ng = *levels.iter().max().unwrap() as usize;
    let mut hist = vec![0usize; ng + 1];
    for &l in levels {
        hist[l as usize] += 1;
    }
    let probs = hist.iter().filter(|&&c| c > 0).map(|&c| c as f64 / n);
    let (entropy, uniformity) = probs.fold((0.0, 0.0), |(e, u), p| (e - p * p.log2(), u + p * p));

    let energy: f64 = values.iter().map(|x| x * x).sum();
    [
        energy,
        entropy,
        sorted[0],
        p10,
        p90,
        sorted[sorted.len() - 1],
        mean,
        percentile(&sorted, 50.0),
        percentile(&sorted, 75.0) - percentile(&sorted, 25.0),
        sorted[sorted.len() - 1] - sorted[0],
        values.iter().map(|x| (x - mean).abs()).sum::<f64>() / n,
        robust.iter().map(|x| (x - robust_mean).abs()).sum::<f64>() / robust.len() as f64,
        (energy / n).sqrt(),
        m2.sqrt(),
        if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 },
        if m2 > 0.0 { m4 / (m2 * m2) } else { 0.0 },
        m2,
        uniformity,
    ]
}
