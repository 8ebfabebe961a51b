//! Small numerical helpers shared across modules: adaptive Simpson
//! quadrature (with an oscillation-aware panel cap for Fourier integrands)
//! and numerical rank thresholds.

use crate::Scalar;

/// Adaptive Simpson integration of `f` over `[a, b]` to relative tolerance
/// `rel_tol`.
///
/// The interval is first cut into panels no wider than `max_panel` so that
/// oscillatory integrands (e.g. `kernel(t) * cos(omega t)`) are resolved even
/// when the first coarse estimates happen to cancel. Each panel is then
/// refined recursively with the classic `|S2 - S1| <= 15 tol` control and a
/// Richardson correction on acceptance.
pub fn integrate<T: Scalar>(f: &dyn Fn(T) -> T, a: T, b: T, rel_tol: T, max_panel: T) -> T {
    assert!(b >= a, "integration bounds must be ordered");
    assert!(max_panel > T::zero(), "panel width must be positive");
    if a == b {
        return T::zero();
    }
    let span = b - a;
    let n_panels = (span / max_panel).ceil().to_usize().unwrap_or(1).max(1);
    let width = span / T::from_usize(n_panels).unwrap();

    // Pilot pass fixes the absolute tolerance scale. Summing |panel| rather
    // than the signed total keeps the scale honest when the integral itself
    // cancels to zero (pure oscillation), which would otherwise drive the
    // target tolerance below what floating point can ever satisfy.
    let mut mass = T::zero();
    for i in 0..n_panels {
        let x0 = a + width * T::from_usize(i).unwrap();
        let x1 = if i + 1 == n_panels { b } else { x0 + width };
        mass += simpson(f, x0, x1).abs();
    }
    let scale = mass.max(T::lit(1e-300));
    // Below eps * scale the |S2 - S1| control is roundoff, not truncation.
    let floor = T::default_epsilon() * scale;
    let abs_tol = (rel_tol * scale).max(floor);

    let mut total = T::zero();
    let per_panel = (abs_tol / T::from_usize(n_panels).unwrap()).max(floor);
    for i in 0..n_panels {
        let x0 = a + width * T::from_usize(i).unwrap();
        let x1 = if i + 1 == n_panels { b } else { x0 + width };
        let fa = f(x0);
        let fb = f(x1);
        let m = (x0 + x1) * T::lit(0.5);
        let fm = f(m);
        let s = simpson_eval(x0, x1, fa, fm, fb);
        total += adapt(f, x0, x1, fa, fm, fb, s, per_panel, floor, 30);
    }
    total
}

fn simpson<T: Scalar>(f: &dyn Fn(T) -> T, a: T, b: T) -> T {
    let m = (a + b) * T::lit(0.5);
    simpson_eval(a, b, f(a), f(m), f(b))
}

fn simpson_eval<T: Scalar>(a: T, b: T, fa: T, fm: T, fb: T) -> T {
    (b - a) / T::lit(6.0) * (fa + T::lit(4.0) * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adapt<T: Scalar>(
    f: &dyn Fn(T) -> T,
    a: T,
    b: T,
    fa: T,
    fm: T,
    fb: T,
    s: T,
    tol: T,
    floor: T,
    depth: u32,
) -> T {
    let m = (a + b) * T::lit(0.5);
    let lm = (a + m) * T::lit(0.5);
    let rm = (m + b) * T::lit(0.5);
    let flm = f(lm);
    let frm = f(rm);
    let s_left = simpson_eval(a, m, fa, flm, fm);
    let s_right = simpson_eval(m, b, fm, frm, fb);
    let s2 = s_left + s_right;
    if depth == 0 || (s2 - s).abs() <= T::lit(15.0) * tol {
        return s2 + (s2 - s) / T::lit(15.0);
    }
    let half = (tol * T::lit(0.5)).max(floor);
    adapt(f, a, m, fa, flm, fm, s_left, half, floor, depth - 1)
        + adapt(f, m, b, fm, frm, fb, s_right, half, floor, depth - 1)
}

/// Numerical rank of a singular-value list with the conventional threshold
/// `max(rows, cols) * eps * sigma_max`.
pub fn rank_from_singular_values<T: Scalar>(sv: &[T], rows: usize, cols: usize) -> usize {
    let sigma_max = sv.iter().copied().fold(T::zero(), |a, b| a.max(b));
    if sigma_max <= T::zero() {
        return 0;
    }
    let thresh = T::from_usize(rows.max(cols)).unwrap() * T::default_epsilon() * sigma_max;
    sv.iter().filter(|&&s| s > thresh).count()
}
