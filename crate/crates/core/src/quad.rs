//! Composite Gauss-Legendre quadrature on graded meshes.
//!
//! Every singular integral in this crate reduces, after a power
//! substitution, to a smooth (or mildly kinked) integrand on a finite
//! interval. The adaptive driver doubles the panel count until two
//! successive refinements agree to the requested relative tolerance,
//! capped at [`MAX_PANELS`].

use crate::error::{Error, Result};

/// Panel cap for adaptive refinement.
pub const MAX_PANELS: usize = 1 << 16;

// 8-point Gauss-Legendre rule on [-1, 1].
const GL_X: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329_0,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL_W: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362_0,
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Where a graded mesh concentrates its panels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grading {
    Uniform,
    /// Panels crowd toward the lower endpoint, `x = a + (b-a) (i/n)^q`.
    TowardLower(u32),
    /// Panels crowd toward the upper endpoint.
    TowardUpper(u32),
    /// Half the panels crowd toward each endpoint.
    BothEnds(u32),
}

fn mesh(a: f64, b: f64, n: usize, grading: Grading) -> Vec<f64> {
    let len = b - a;
    let mut pts = Vec::with_capacity(n + 1);
    match grading {
        Grading::Uniform => {
            for i in 0..=n {
                pts.push(a + len * i as f64 / n as f64);
            }
        }
        Grading::TowardLower(q) => {
            for i in 0..=n {
                pts.push(a + len * (i as f64 / n as f64).powi(q as i32));
            }
        }
        Grading::TowardUpper(q) => {
            for i in 0..=n {
                pts.push(b - len * (1.0 - i as f64 / n as f64).powi(q as i32));
            }
        }
        Grading::BothEnds(q) => {
            let half = n.div_ceil(2);
            let mid = a + 0.5 * len;
            for i in 0..half {
                pts.push(a + 0.5 * len * (i as f64 / half as f64).powi(q as i32));
            }
            let rest = n - half;
            for i in 0..=rest {
                pts.push(b - (b - mid) * (1.0 - i as f64 / rest as f64).powi(q as i32));
            }
        }
    }
    pts
}

fn panel<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut acc = 0.0;
    for (&x, &w) in GL_X.iter().zip(GL_W.iter()) {
        acc += w * f(c + h * x);
    }
    acc * h
}

fn composite<F: FnMut(f64) -> f64>(f: &mut F, pts: &[f64]) -> f64 {
    let mut acc = 0.0;
    for w in pts.windows(2) {
        acc += panel(f, w[0], w[1]);
    }
    acc
}

/// Integrate `f` over `[a, b]` on a graded mesh, doubling the panel count
/// until two refinements agree to relative tolerance `tol`.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    grading: Grading,
    start_panels: usize,
    tol: f64,
) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let mut n = start_panels.max(2);
    let mut prev = composite(&mut f, &mesh(a, b, n, grading));
    loop {
        n *= 2;
        let cur = composite(&mut f, &mesh(a, b, n, grading));
        let scale = cur.abs().max(1e-300);
        let residual = (cur - prev).abs() / scale;
        if residual <= tol {
            return Ok(cur);
        }
        if n >= MAX_PANELS {
            return Err(Error::Quadrature { residual, tol });
        }
        prev = cur;
    }
}

/// Integrate `v^alpha * g(v)` over `(0, len]` for `alpha` in `(-1, 0)`.
///
/// The substitution `w = v^(1+alpha)` absorbs the singular factor exactly:
/// the integral becomes `1/(1+alpha) * int g(w^(1/(1+alpha))) dw` over
/// `(0, len^(1+alpha)]`, which is integrated on a mildly graded mesh.
pub fn integrate_power_singular<G: FnMut(f64) -> f64>(
    alpha: f64,
    len: f64,
    mut g: G,
    grading: Grading,
    start_panels: usize,
    tol: f64,
) -> Result<f64> {
    debug_assert!(alpha > -1.0 && alpha < 0.0);
    if len <= 0.0 {
        return Ok(0.0);
    }
    let beta = 1.0 + alpha;
    let upper = len.powf(beta);
    let inv_beta = 1.0 / beta;
    let val = integrate(
        |w| g(w.powf(inv_beta)),
        0.0,
        upper,
        grading,
        start_panels,
        tol,
    )?;
    Ok(val * inv_beta)
}
