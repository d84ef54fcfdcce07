use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{invalid_arg, Error, Result};
use crate::modem::Constellation;

/// Largest `K^J` the exhaustive search accepts by default.
pub const DEFAULT_ML_CAP: f64 = 1e7;

/// Exhaustive `argmin ‖y - Hx‖²` over `𝒜^J`. Candidates are visited in
/// lexicographic index order and the first minimum wins.
pub fn ml_detect(
    y: &[Complex64],
    h: &DMatrix<Complex64>,
    c: &Constellation,
    cap: f64,
) -> Result<Vec<usize>> {
    let (rows, j) = h.shape();
    if y.len() != rows {
        return Err(invalid_arg(format!(
            "observation length {} does not match {rows} rows",
            y.len()
        )));
    }
    let k = c.order();
    let required = (k as f64).powi(j as i32);
    if required > cap {
        return Err(Error::SearchSpaceTooLarge { required, cap });
    }
    let pts = c.points();
    let mut idx = vec![0usize; j];
    let mut best = idx.clone();
    let mut best_d = f64::INFINITY;
    let mut resid = vec![Complex64::default(); rows];
    loop {
        resid.copy_from_slice(y);
        for (col, &i) in idx.iter().enumerate() {
            let a = pts[i];
            for (r, &hv) in resid.iter_mut().zip(h.column(col).iter()) {
                *r -= hv * a;
            }
        }
        let d: f64 = resid.iter().map(|v| v.norm_sqr()).sum();
        if d < best_d {
            best_d = d;
            best.copy_from_slice(&idx);
        }
        // odometer, last symbol fastest
        let mut pos = j;
        loop {
            if pos == 0 {
                return Ok(best);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < k {
                break;
            }
            idx[pos] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_channel_is_nearest_neighbour() {
        let c = Constellation::qpsk();
        let h = DMatrix::<Complex64>::identity(1, 1);
        let y = [c.point(2) + Complex64::new(0.05, -0.02)];
        assert_eq!(ml_detect(&y, &h, &c, DEFAULT_ML_CAP).unwrap(), vec![2]);
    }

    #[test]
    fn cap_and_shape_errors() {
        let c = Constellation::qpsk();
        let h = DMatrix::<Complex64>::identity(20, 20);
        let y = vec![Complex64::default(); 20];
        assert!(matches!(
            ml_detect(&y, &h, &c, DEFAULT_ML_CAP),
            Err(Error::SearchSpaceTooLarge { .. })
        ));
        assert!(ml_detect(&y[..3], &h, &c, DEFAULT_ML_CAP).is_err());
    }

    #[test]
    fn ties_keep_first_candidate() {
        // a zero channel makes every candidate equally good
        let c = Constellation::bpsk();
        let h = DMatrix::<Complex64>::zeros(2, 3);
        let y = vec![Complex64::default(); 2];
        assert_eq!(
            ml_detect(&y, &h, &c, DEFAULT_ML_CAP).unwrap(),
            vec![0, 0, 0]
        );
    }
}
