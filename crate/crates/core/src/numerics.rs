//! Fixed-order reductions used everywhere a float sum feeds a result that
//! must be bit-reproducible across platforms.

/// Pairwise summation with a fixed split tree determined only by length.
///
/// The tree shape depends only on `xs.len()`, so identical inputs in
/// identical order always produce the identical bit pattern, and rounding
/// error grows as O(log n) rather than O(n).
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        3 => (xs[0] + xs[1]) + xs[2],
        4 => (xs[0] + xs[1]) + (xs[2] + xs[3]),
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Dot product reduced by pairwise summation.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let products: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    pairwise_sum(&products)
}

/// Mean of a non-empty slice via pairwise summation.
pub fn mean(xs: &[f64]) -> f64 {
    debug_assert!(!xs.is_empty());
    pairwise_sum(xs) / xs.len() as f64
}
