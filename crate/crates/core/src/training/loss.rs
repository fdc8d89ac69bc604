use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Stable `-[b log σ(ℓ) + (1-b) log(1-σ(ℓ))]`.
#[inline]
pub(crate) fn bce_term<T: Scalar>(l: T, b: u8) -> T {
    let bt = if b == 1 { T::one() } else { T::zero() };
    l.max(T::zero()) - l * bt + (-l.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(l: T) -> T {
    if l >= T::zero() {
        T::one() / (T::one() + (-l).exp())
    } else {
        let e = l.exp();
        e / (T::one() + e)
    }
}

/// Sum of active BCE terms and their gradients scaled by `1/normalizer`.
pub(crate) fn bce_scaled<T: Scalar>(logits: &[T], bits: &[u8], mask: &[bool], normalizer: T) -> (T, Vec<T>) {
    let mut loss = T::zero();
    let grad = logits
        .iter()
        .zip(bits)
        .zip(mask)
        .map(|((&l, &b), &m)| {
            if !m {
                return T::zero();
            }
            loss += bce_term(l, b);
            (sigmoid(l) - T::lit(b as f64)) / normalizer
        })
        .collect();
    (loss / normalizer, grad)
}

/// Mean binary cross-entropy over the outputs selected by `mask`, with its
/// gradient with respect to every logit (zero where masked).
pub fn bce_loss<T: Scalar>(logits: &[T], bits: &[u8], mask: &[bool]) -> Result<(T, Vec<T>)> {
    if logits.len() != bits.len() || logits.len() != mask.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} logits, {} bits, {} mask entries",
            logits.len(),
            bits.len(),
            mask.len()
        )));
    }
    let active = mask.iter().filter(|&&m| m).count();
    if active == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(bce_scaled(logits, bits, mask, T::lit(active as f64)))
}
