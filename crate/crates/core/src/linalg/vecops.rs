//! Small slice helpers. All functions assume equal lengths.

use crate::Scalar;

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[inline]
pub fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

#[inline]
pub fn norm1<T: Scalar>(a: &[T]) -> T {
    a.iter().map(|v| v.abs()).sum()
}

#[inline]
pub fn norm_inf<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

pub fn sub<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

pub fn add<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

pub fn scale<T: Scalar>(a: &[T], s: T) -> Vec<T> {
    a.iter().map(|&x| x * s).collect()
}

/// `y += a * x`
#[inline]
pub fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn add_assign<T: Scalar>(y: &mut [T], x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += xi;
    }
}

pub fn is_finite<T: Scalar>(a: &[T]) -> bool {
    a.iter().all(|v| v.is_finite())
}

pub fn is_zero<T: Scalar>(a: &[T]) -> bool {
    a.iter().all(|v| *v == T::zero())
}

/// `‖a − b‖₁ / ‖b‖₁`, or the absolute L1 distance when `b` is zero.
pub fn rel_l1<T: Scalar>(a: &[T], b: &[T]) -> T {
    let num: T = a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum();
    let den = norm1(b);
    if den > T::zero() {
        num / den
    } else {
        num
    }
}

/// `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞)`, zero when both vanish.
pub fn rel_inf<T: Scalar>(a: &[T], b: &[T]) -> T {
    let num = a
        .iter()
        .zip(b)
        .fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()));
    let den = norm_inf(a).max(norm_inf(b));
    if den > T::zero() {
        num / den
    } else {
        num
    }
}

pub fn zeros<T: Scalar>(n: usize) -> Vec<T> {
    vec![T::zero(); n]
}

pub fn basis<T: Scalar>(n: usize, i: usize) -> Vec<T> {
    let mut e = zeros(n);
    e[i] = T::one();
    e
}
