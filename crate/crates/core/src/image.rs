//! Square dyadic images on the domain [-1,1]^2.

use ndarray::Array2;

use crate::error::{LactError, Result};

/// Real-valued square picture whose side is a power of two `2^J`, `J >= 2`.
/// Pixel `(r, c)` is centered at `(-1 + (r+0.5)h, -1 + (c+0.5)h)` with
/// `h = 2/side`; the first index is the row.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array2<f64>,
}

impl Image {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (rows, cols) = data.dim();
        if rows != cols {
            return Err(LactError::invalid(format!(
                "image must be square, got {rows}x{cols}"
            )));
        }
        if rows < 4 || !rows.is_power_of_two() {
            return Err(LactError::invalid(format!(
                "image side must be a power of two >= 4, got {rows}"
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(LactError::invalid("image contains non-finite pixels"));
        }
        Ok(Image { data })
    }

    pub fn zeros(side: usize) -> Result<Self> {
        Image::new(Array2::zeros((side, side)))
    }

    pub fn side(&self) -> usize {
        self.data.nrows()
    }

    /// Dyadic level `J` with `side = 2^J`.
    pub fn levels(&self) -> u8 {
        self.side().trailing_zeros() as u8
    }

    /// Pixel width on [-1,1].
    pub fn pixel_size(&self) -> f64 {
        2.0 / self.side() as f64
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// 2x block-average downsampling, `2s -> s`.
    pub fn downsample2(&self) -> Result<Image> {
        let s = self.side();
        if s < 8 {
            return Err(LactError::invalid("image too small to downsample"));
        }
        let half = s / 2;
        let mut out = Array2::zeros((half, half));
        for r in 0..half {
            for c in 0..half {
                out[[r, c]] = 0.25
                    * (self.data[[2 * r, 2 * c]]
                        + self.data[[2 * r, 2 * c + 1]]
                        + self.data[[2 * r + 1, 2 * c]]
                        + self.data[[2 * r + 1, 2 * c + 1]]);
            }
        }
        Image::new(out)
    }
}

/// Relative l2 distance `|a - b| / |a|` between two same-shape arrays.
pub fn rel_l2(reference: &Array2<f64>, other: &Array2<f64>) -> f64 {
    let num: f64 = reference
        .iter()
        .zip(other.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let den: f64 = reference.iter().map(|a| a * a).sum();
    (num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_square_and_non_dyadic() {
        assert!(Image::new(Array2::zeros((8, 4))).is_err());
        assert!(Image::new(Array2::zeros((6, 6))).is_err());
        assert!(Image::new(Array2::zeros((2, 2))).is_err());
        assert!(Image::new(Array2::zeros((8, 8))).is_ok());
    }

    #[test]
    fn rejects_non_finite() {
        let mut a = Array2::zeros((8, 8));
        a[[3, 3]] = f64::NAN;
        assert!(Image::new(a).is_err());
    }

    #[test]
    fn downsample_averages_blocks() {
        let mut a = Array2::zeros((8, 8));
        a[[0, 0]] = 4.0;
        let img = Image::new(a).unwrap();
        let d = img.downsample2().unwrap();
        assert_eq!(d.side(), 4);
        assert_eq!(d.data()[[0, 0]], 1.0);
    }
}
