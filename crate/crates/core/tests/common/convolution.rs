//! Exact Fourier-space evaluation of `B~_n(u, v) = -P_n(u x curl v)`.
//!
//! Every basis function is expanded into complex exponentials and the
//! triple products are integrated analytically, so nothing here touches the
//! quadrature grid used by the library.

use std::f64::consts::PI;

use lans_core::{Basis, Parity, SpectralField};
use num_complex::Complex64;

/// `(coefficient, sign)` pairs with `trig(theta) = sum c e^{i s theta}`.
fn exponentials(parity: Parity, derivative: bool) -> [(Complex64, i32); 2] {
    let half = Complex64::new(0.5, 0.0);
    let half_i = Complex64::new(0.0, 0.5);
    match (parity, derivative) {
        // cos
        (Parity::Cos, false) => [(half, 1), (half, -1)],
        // sin = (e^{i t} - e^{-i t}) / 2i
        (Parity::Sin, false) => [(-half_i, 1), (half_i, -1)],
        // d/dt cos = -sin
        (Parity::Cos, true) => [(half_i, 1), (-half_i, -1)],
        // d/dt sin = cos
        (Parity::Sin, true) => [(half, 1), (half, -1)],
    }
}

/// Tensor `t[j][a][b]` with `B~(u, v)_j = sum_ab u_a v_b t[j][a][b]`.
pub struct ConvolutionOracle {
    n: usize,
    t: Vec<f64>,
}

impl ConvolutionOracle {
    pub fn new(basis: &Basis) -> Self {
        let n = basis.len();
        let l = basis.length();
        let c = 2f64.sqrt() / l;
        let modes = basis.modes();
        let mut t = vec![0.0; n * n * n];
        for (j, mj) in modes.iter().enumerate() {
            let pj = mj.wave.polarization();
            for (a, ma) in modes.iter().enumerate() {
                let pa = ma.wave.polarization();
                // -(u x curl v) . e_j = omega (u_1 e_j2 - u_2 e_j1)
                let cross = pa[0] * pj[1] - pa[1] * pj[0];
                if cross == 0.0 {
                    continue;
                }
                for (b, mb) in modes.iter().enumerate() {
                    let wb = 2.0 * PI / l * mb.wave.norm();
                    let mut integral = Complex64::new(0.0, 0.0);
                    for (ca, sa) in exponentials(ma.parity, false) {
                        for (cb, sb) in exponentials(mb.parity, true) {
                            for (cj, sj) in exponentials(mj.parity, false) {
                                let k1 = sa * ma.wave.k1 + sb * mb.wave.k1 + sj * mj.wave.k1;
                                let k2 = sa * ma.wave.k2 + sb * mb.wave.k2 + sj * mj.wave.k2;
                                if k1 == 0 && k2 == 0 {
                                    integral += ca * cb * cj * l * l;
                                }
                            }
                        }
                    }
                    // curl of c trig(theta) p is c (2 pi |k| / L) trig'(theta)
                    t[(j * n + a) * n + b] = c * c * c * wb * cross * integral.re;
                }
            }
        }
        Self { n, t }
    }

    pub fn b_tilde(&self, u: &SpectralField, v: &SpectralField) -> Vec<f64> {
        let (u, v) = (u.coeffs(), v.coeffs());
        (0..self.n)
            .map(|j| {
                let mut s = 0.0;
                for a in 0..self.n {
                    if u[a] == 0.0 {
                        continue;
                    }
                    let row = &self.t[(j * self.n + a) * self.n..][..self.n];
                    s += u[a] * row.iter().zip(v).map(|(t, vb)| t * vb).sum::<f64>();
                }
                s
            })
            .collect()
    }
}
