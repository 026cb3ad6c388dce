use super::Scalar;

/// Probabilities are clamped to [BCE_EPS, 1 - BCE_EPS] before the log.
pub const BCE_EPS: f64 = 1e-7;

/// Binary cross-entropy of probability `q` against label `y`, with dL/dq.
pub fn bce_loss<T: Scalar>(q: T, y: T) -> (T, T) {
    let eps = T::cast(BCE_EPS);
    let q = q.max(eps).min(T::one() - eps);
    let one = T::one();
    let loss = -(y * q.ln() + (one - y) * (one - q).ln());
    let grad = -(y / q) + (one - y) / (one - q);
    (loss, grad)
}

/// Huber loss with unit threshold on e = delta - target, with dL/d(delta).
pub fn huber_loss<T: Scalar>(delta: T, target: T) -> (T, T) {
    let e = delta - target;
    let half = T::cast(0.5);
    if e.abs() < T::one() {
        (half * e * e, e)
    } else {
        (e.abs() - half, e.signum())
    }
}
