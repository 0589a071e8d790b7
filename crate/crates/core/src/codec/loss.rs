use alloc::format;

use crate::alignment::TokenMatrix;
use crate::{Error, Result};

/// `bits / n + lambda * mse`, with `n` the element count of `x`.
pub fn rd_loss(bits_estimate: f64, x: &TokenMatrix, x_hat: &TokenMatrix, lambda: f64) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", x.shape(), x_hat.shape())));
    }
    let n = x.data().len() as f64;
    let sse: f64 = x.data().iter().zip(x_hat.data()).map(|(&a, &b)| {
        let d = a as f64 - b as f64;
        d * d
    }).sum();
    Ok(rd_loss_from_parts(bits_estimate / n, sse / n, lambda))
}

pub fn rd_loss_from_parts(bpfp: f64, mse: f64, lambda: f64) -> f64 {
    bpfp + lambda * mse
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::TokenOrigin;
    use crate::tensor::ArchTag;
    use alloc::vec;

    fn m(rows: usize, cols: usize, v: alloc::vec::Vec<f32>) -> TokenMatrix {
        TokenMatrix::new(rows, cols, v, TokenOrigin::NativeTokens, ArchTag::VitLike).unwrap()
    }

    #[test]
    fn arithmetic() {
        assert!((rd_loss_from_parts(0.5, 2.0, 0.01) - 0.52).abs() < 1e-15);
        // 4 elements, 2 bits, squared errors 4+4+0+0
        let x = m(2, 2, vec![0.0; 4]);
        let xh = m(2, 2, vec![2.0, -2.0, 0.0, 0.0]);
        assert!((rd_loss(2.0, &x, &xh, 0.01).unwrap() - 0.52).abs() < 1e-15);
    }

    #[test]
    fn zero_distortion_or_lambda() {
        let x = m(2, 2, vec![0.1, 0.2, 0.3, 0.4]);
        let xh = m(2, 2, vec![0.5; 4]);
        assert_eq!(rd_loss(6.0, &x, &x, 0.7).unwrap(), 1.5);
        assert_eq!(rd_loss(6.0, &x, &xh, 0.0).unwrap(), 1.5);
    }

    #[test]
    fn shape_mismatch() {
        let x = m(2, 2, vec![0.0; 4]);
        let y = m(1, 4, vec![0.0; 4]);
        assert!(rd_loss(0.0, &x, &y, 1.0).is_err());
    }
}
