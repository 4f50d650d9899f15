//! Bernstein-basis splines in 3D.
//!
//! A spline is `l` concatenated Bézier segments of degree `p`. Its control
//! points are packed into one vector with three consecutive entries (x, y, z)
//! per point, segment after segment: the entry for segment `s`, point `m` and
//! axis `a` sits at `3 * (s * (p + 1) + m) + a`.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{invalid, Result};
use crate::linalg::{binomial, falling_factorial, LinearRows};

const TIME_EPS: f64 = 1e-9;

/// `C(p, m) (1 - t/T)^(p - m) (t/T)^m` on `[0, T]`.
pub fn bernstein(degree: usize, index: usize, duration: f64, t: f64) -> Result<f64> {
    if index > degree {
        return Err(invalid(format!("index {index} exceeds degree {degree}")));
    }
    if !(duration > 0.0) || t < -TIME_EPS || t > duration + TIME_EPS {
        return Err(invalid(format!("t = {t} outside [0, {duration}]")));
    }
    let s = (t / duration).clamp(0.0, 1.0);
    Ok(binomial(degree, index) * (1.0 - s).powi((degree - index) as i32) * s.powi(index as i32))
}

/// Control points of the `order`-th derivative (hodograph) of one segment.
pub fn derivative_control_points(
    points: &[Vector3<f64>],
    duration: f64,
    order: usize,
) -> Result<Vec<Vector3<f64>>> {
    if points.is_empty() {
        return Err(invalid("segment has no control points"));
    }
    let degree = points.len() - 1;
    if order > degree {
        return Err(invalid(format!(
            "derivative order {order} exceeds degree {degree}"
        )));
    }
    let mut current = points.to_vec();
    for _ in 0..order {
        let q = current.len() - 1;
        let scale = q as f64 / duration;
        current = current.windows(2).map(|w| (w[1] - w[0]) * scale).collect();
    }
    Ok(current)
}

/// De Casteljau evaluation of one segment at local time `t`.
pub fn de_casteljau(points: &[Vector3<f64>], duration: f64, t: f64) -> Vector3<f64> {
    let s = (t / duration).clamp(0.0, 1.0);
    let mut work = points.to_vec();
    let n = work.len();
    for level in 1..n {
        for i in 0..n - level {
            work[i] = work[i] * (1.0 - s) + work[i + 1] * s;
        }
    }
    work[0]
}

/// Maps one axis of the Bernstein control points to power-basis
/// coefficients in local time (seconds): `coeffs = M * points`.
pub fn power_transform(degree: usize, duration: f64) -> DMatrix<f64> {
    DMatrix::from_fn(degree + 1, degree + 1, |j, m| {
        if j < m {
            0.0
        } else {
            let sign = if (j - m) % 2 == 0 { 1.0 } else { -1.0 };
            binomial(degree, m) * binomial(degree - m, j - m) * sign / duration.powi(j as i32)
        }
    })
}

/// Weights over the `p + 1` control points (one axis) giving the
/// `order`-th derivative at local time `t`, computed in the power basis.
pub fn derivative_weights(degree: usize, duration: f64, order: usize, t: f64) -> DVector<f64> {
    let transform = power_transform(degree, duration);
    derivative_weights_with(&transform, order, t)
}

fn derivative_weights_with(transform: &DMatrix<f64>, order: usize, t: f64) -> DVector<f64> {
    let n = transform.nrows();
    let monomials = DVector::from_fn(n, |j, _| {
        if j < order {
            0.0
        } else {
            falling_factorial(j, order) * t.powi((j - order) as i32)
        }
    });
    transform.tr_mul(&monomials)
}

/// `(p+1) x (p+1)` matrix `G` with `P^T G P = int_0^T |d^c S / dt^c|^2 dt` per axis.
pub fn energy_gram(degree: usize, duration: f64, order: usize) -> Result<DMatrix<f64>> {
    if order > degree {
        return Err(invalid(format!(
            "derivative order {order} exceeds degree {degree}"
        )));
    }
    let q = degree - order;
    // Hodograph map: Q = D P, with D the scaled order-th forward difference.
    let scale = falling_factorial(degree, order) / duration.powi(order as i32);
    let diff = DMatrix::from_fn(q + 1, degree + 1, |m, col| {
        if col < m || col > m + order {
            0.0
        } else {
            let i = col - m;
            let sign = if (order - i) % 2 == 0 { 1.0 } else { -1.0 };
            sign * binomial(order, i) * scale
        }
    });
    let product = DMatrix::from_fn(q + 1, q + 1, |m, n| {
        duration * binomial(q, m) * binomial(q, n) / ((2 * q + 1) as f64 * binomial(2 * q, m + n))
    });
    Ok(diff.transpose() * product * diff)
}

fn check_layout(segments: usize, degree: usize, durations: &[f64]) -> Result<()> {
    if segments == 0 {
        return Err(invalid("spline needs at least one segment"));
    }
    if durations.len() != segments {
        return Err(invalid(format!(
            "{} durations for {} segments",
            durations.len(),
            segments
        )));
    }
    if durations.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(invalid("segment durations must be positive"));
    }
    if degree == 0 {
        return Err(invalid("degree must be at least 1"));
    }
    Ok(())
}

#[inline]
pub fn var_index(degree: usize, segment: usize, point: usize, axis: usize) -> usize {
    3 * (segment * (degree + 1) + point) + axis
}

/// `l` concatenated degree-`p` Bézier segments.
#[derive(Debug, Clone, PartialEq)]
pub struct BezierSpline {
    degree: usize,
    durations: Vec<f64>,
    points: DVector<f64>,
}

impl BezierSpline {
    pub fn new(degree: usize, durations: Vec<f64>, points: DVector<f64>) -> Result<Self> {
        check_layout(durations.len(), degree, &durations)?;
        let expected = 3 * durations.len() * (degree + 1);
        if points.len() != expected {
            return Err(invalid(format!(
                "expected {expected} control point entries, got {}",
                points.len()
            )));
        }
        Ok(Self {
            degree,
            durations,
            points,
        })
    }

    /// Every control point at `value`.
    pub fn constant(degree: usize, durations: Vec<f64>, value: Vector3<f64>) -> Result<Self> {
        let n = durations.len() * (degree + 1);
        let points = DVector::from_fn(3 * n, |i, _| value[i % 3]);
        Self::new(degree, durations, points)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn segments(&self) -> usize {
        self.durations.len()
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn duration(&self) -> f64 {
        self.durations.iter().sum()
    }

    pub fn points(&self) -> &DVector<f64> {
        &self.points
    }

    pub fn segment_points(&self, segment: usize) -> Vec<Vector3<f64>> {
        (0..=self.degree)
            .map(|m| {
                let i = var_index(self.degree, segment, m, 0);
                Vector3::new(self.points[i], self.points[i + 1], self.points[i + 2])
            })
            .collect()
    }

    /// Segment containing `t` and the local time within it. Times exactly on
    /// an interior junction belong to the left segment.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        locate(&self.durations, t)
    }

    /// `order`-th derivative at `t`, clamped to the spline's time span.
    pub fn eval(&self, t: f64, order: usize) -> Vector3<f64> {
        let (segment, local) = self.locate(t);
        if order > self.degree {
            return Vector3::zeros();
        }
        let duration = self.durations[segment];
        let points = self.segment_points(segment);
        let hodograph = derivative_control_points(&points, duration, order)
            .expect("order checked against degree");
        de_casteljau(&hodograph, duration, local)
    }
}

fn locate(durations: &[f64], t: f64) -> (usize, f64) {
    let mut start = 0.0;
    for (s, d) in durations.iter().enumerate() {
        if t <= start + d + TIME_EPS || s + 1 == durations.len() {
            return (s, (t - start).clamp(0.0, *d));
        }
        start += d;
    }
    unreachable!("durations are never empty")
}

/// Precomputed sampling matrices and energy Grams for one spline layout.
#[derive(Debug, Clone)]
pub struct SplineBasis {
    pub segments: usize,
    pub degree: usize,
    pub durations: Vec<f64>,
    pub step: f64,
    pub horizon: usize,
    /// `samples[c]` maps control points to the `c`-th derivative at
    /// `t = 0, h, ..., (K-1) h`; `3K x 3l(p+1)`, rows sample-major.
    pub samples: Vec<DMatrix<f64>>,
    /// Bernstein to power basis, one per segment.
    pub power_transforms: Vec<DMatrix<f64>>,
    /// `energy_grams[s][c]`, one axis.
    pub energy_grams: Vec<Vec<DMatrix<f64>>>,
}

impl SplineBasis {
    pub fn num_vars(&self) -> usize {
        3 * self.segments * (self.degree + 1)
    }

    pub fn max_deriv(&self) -> usize {
        self.samples.len() - 1
    }

    /// The three rows of `samples[order]` belonging to sample `k`.
    pub fn sample_rows(&self, order: usize, k: usize) -> DMatrix<f64> {
        self.samples[order].rows(3 * k, 3).into_owned()
    }
}

pub fn build_basis(
    segments: usize,
    degree: usize,
    durations: &[f64],
    step: f64,
    horizon: usize,
    max_deriv: usize,
) -> Result<SplineBasis> {
    check_layout(segments, degree, durations)?;
    if !(step > 0.0) || horizon < 2 {
        return Err(invalid("step must be positive and horizon >= 2"));
    }
    let total: f64 = durations.iter().sum();
    let span = (horizon - 1) as f64 * step;
    if (total - span).abs() > TIME_EPS {
        return Err(invalid(format!(
            "segment durations sum to {total}, horizon spans {span}"
        )));
    }

    let power_transforms: Vec<DMatrix<f64>> = durations
        .iter()
        .map(|d| power_transform(degree, *d))
        .collect();
    let n = 3 * segments * (degree + 1);
    let mut samples = Vec::with_capacity(max_deriv + 1);
    for order in 0..=max_deriv {
        let mut phi = DMatrix::zeros(3 * horizon, n);
        for k in 0..horizon {
            let (segment, local) = locate(durations, k as f64 * step);
            let w = derivative_weights_with(&power_transforms[segment], order, local);
            for m in 0..=degree {
                for axis in 0..3 {
                    phi[(3 * k + axis, var_index(degree, segment, m, axis))] = w[m];
                }
            }
        }
        samples.push(phi);
    }

    let energy_grams = durations
        .iter()
        .map(|d| {
            (0..=max_deriv.min(degree))
                .map(|c| energy_gram(degree, *d, c))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SplineBasis {
        segments,
        degree,
        durations: durations.to_vec(),
        step,
        horizon,
        samples,
        power_transforms,
        energy_grams,
    })
}

/// Junction rows: for every interior junction and derivative order up to
/// `order`, the left segment's end equals the right segment's start.
pub fn continuity_constraints(
    segments: usize,
    degree: usize,
    durations: &[f64],
    order: usize,
) -> Result<LinearRows> {
    check_layout(segments, degree, durations)?;
    if order > degree {
        return Err(invalid(format!(
            "continuity order {order} exceeds degree {degree}"
        )));
    }
    let n = 3 * segments * (degree + 1);
    let rows = 3 * (segments - 1) * (order + 1);
    let mut a = DMatrix::zeros(rows, n);
    let mut r = 0;
    for s in 0..segments - 1 {
        for c in 0..=order {
            let left = derivative_weights(degree, durations[s], c, durations[s]);
            let right = derivative_weights(degree, durations[s + 1], c, 0.0);
            for axis in 0..3 {
                for m in 0..=degree {
                    a[(r, var_index(degree, s, m, axis))] += left[m];
                    a[(r, var_index(degree, s + 1, m, axis))] -= right[m];
                }
                r += 1;
            }
        }
    }
    Ok(LinearRows::new(a, DVector::zeros(rows)))
}

/// Pins the spline value and leading derivatives at `t = 0`:
/// `derivatives[c]` is the required `c`-th derivative.
pub fn initial_condition_constraints(
    segments: usize,
    degree: usize,
    durations: &[f64],
    derivatives: &[Vector3<f64>],
) -> Result<LinearRows> {
    check_layout(segments, degree, durations)?;
    if derivatives.len() > degree + 1 {
        return Err(invalid(format!(
            "cannot pin {} derivatives of a degree-{degree} curve",
            derivatives.len()
        )));
    }
    let n = 3 * segments * (degree + 1);
    let rows = 3 * derivatives.len();
    let mut a = DMatrix::zeros(rows, n);
    let mut b = DVector::zeros(rows);
    for (c, value) in derivatives.iter().enumerate() {
        let w = derivative_weights(degree, durations[0], c, 0.0);
        for axis in 0..3 {
            for m in 0..=degree {
                a[(3 * c + axis, var_index(degree, 0, m, axis))] = w[m];
            }
            b[3 * c + axis] = value[axis];
        }
    }
    Ok(LinearRows::new(a, b))
}

/// `lo <= d^c u / dt^c <= hi` at every horizon sample from `first_sample` on,
/// as rows of `A z <= b`.
pub fn limit_constraints(
    basis: &SplineBasis,
    order: usize,
    lo: Vector3<f64>,
    hi: Vector3<f64>,
    first_sample: usize,
) -> Result<LinearRows> {
    if order > basis.max_deriv() {
        return Err(invalid(format!(
            "basis has no sampling matrix for order {order}"
        )));
    }
    if (0..3).any(|i| !(lo[i] < hi[i])) {
        return Err(invalid("limit bounds must satisfy lo < hi"));
    }
    let n = basis.num_vars();
    let samples = basis.horizon.saturating_sub(first_sample);
    let mut a = DMatrix::zeros(6 * samples, n);
    let mut b = DVector::zeros(6 * samples);
    let phi = &basis.samples[order];
    for (i, k) in (first_sample..basis.horizon).enumerate() {
        for axis in 0..3 {
            let src = phi.row(3 * k + axis);
            let upper = 6 * i + axis;
            let lower = 6 * i + 3 + axis;
            a.row_mut(upper).copy_from(&src);
            b[upper] = hi[axis];
            a.row_mut(lower).copy_from(&(-src));
            b[lower] = -lo[axis];
        }
    }
    Ok(LinearRows::new(a, b))
}
