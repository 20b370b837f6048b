/// Fixed 3x3 stencil, indexed `[dy + 1][dx + 1]` where `dy` runs along rows
/// (height) and `dx` along columns (width). Applied as a cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel3(pub [[f64; 3]; 3]);

impl Kernel3 {
    /// Discrete Laplacian: neighbour average minus centre, scaled by 16.
    pub const LAPLACIAN: Kernel3 = Kernel3([[1.0, 2.0, 1.0], [2.0, -12.0, 2.0], [1.0, 2.0, 1.0]]);
    /// Sobel derivative along the width axis (x).
    pub const SOBEL_X: Kernel3 = Kernel3([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]);
    /// Sobel derivative along the height axis (y); the transpose of `SOBEL_X`.
    pub const SOBEL_Y: Kernel3 = Kernel3([[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]]);
    /// Normalized binomial blur.
    pub const BLUR: Kernel3 = Kernel3([
        [1.0 / 16.0, 2.0 / 16.0, 1.0 / 16.0],
        [2.0 / 16.0, 4.0 / 16.0, 2.0 / 16.0],
        [1.0 / 16.0, 2.0 / 16.0, 1.0 / 16.0],
    ]);
    pub const IDENTITY: Kernel3 = Kernel3([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]]);

    /// Unsharp mask `img + amount * (img - blur(img))` folded into one stencil.
    pub fn unsharp(amount: f64) -> Kernel3 {
        let mut k = [[0.0; 3]; 3];
        for (i, row) in k.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = Self::IDENTITY.0[i][j] * (1.0 + amount) - amount * Self::BLUR.0[i][j];
            }
        }
        Kernel3(k)
    }

    pub fn transpose(&self) -> Kernel3 {
        let k = &self.0;
        Kernel3([
            [k[0][0], k[1][0], k[2][0]],
            [k[0][1], k[1][1], k[2][1]],
            [k[0][2], k[1][2], k[2][2]],
        ])
    }

    /// The kernel turned by 180 degrees.
    pub fn flipped(&self) -> Kernel3 {
        let k = &self.0;
        Kernel3([
            [k[2][2], k[2][1], k[2][0]],
            [k[1][2], k[1][1], k[1][0]],
            [k[0][2], k[0][1], k[0][0]],
        ])
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().flatten().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sobel_y_is_transpose_of_sobel_x() {
        assert_eq!(Kernel3::SOBEL_X.transpose(), Kernel3::SOBEL_Y);
    }

    #[test]
    fn zero_sum_kernels() {
        assert_eq!(Kernel3::LAPLACIAN.sum(), 0.0);
        assert_eq!(Kernel3::SOBEL_X.sum(), 0.0);
        assert!((Kernel3::BLUR.sum() - 1.0).abs() < 1e-15);
        assert!((Kernel3::unsharp(0.7).sum() - 1.0).abs() < 1e-15);
    }
}
