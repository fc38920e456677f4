//! Flat parameter vectors and the handful of dense-vector operations the
//! controller and the aggregation rules are built from.

/// All model weights and biases, flattened to one `f64` vector of length `r`.
/// This is the single currency exchanged between clients, server and attacker.
pub type ParamVec = Vec<f64>;

pub fn zeros(r: usize) -> ParamVec {
    vec![0.0; r]
}

pub fn add(a: &[f64], b: &[f64]) -> ParamVec {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> ParamVec {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale(a: &[f64], c: f64) -> ParamVec {
    a.iter().map(|x| x * c).collect()
}

/// `dst += c * src`
pub fn axpy(dst: &mut [f64], c: f64, src: &[f64]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Euclidean distance squared; the workhorse of the distance-based rules.
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_ops() {
        let a = vec![1.0, 2.0];
        let b = vec![0.5, -1.0];
        assert_eq!(add(&a, &b), vec![1.5, 1.0]);
        assert_eq!(sub(&a, &b), vec![0.5, 3.0]);
        assert_eq!(scale(&a, 2.0), vec![2.0, 4.0]);
        assert_eq!(dot(&a, &b), -1.5);
        assert_eq!(norm2(&[3.0, 4.0]), 5.0);
        assert_eq!(norm_inf(&[-3.0, 2.0]), 3.0);
        assert_eq!(dist2(&a, &b), 0.25 + 9.0);
        assert!(all_finite(&a));
        assert!(!all_finite(&[f64::NAN]));
    }
}
