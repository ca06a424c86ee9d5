//! Rotation-group mathematics: matrix and axis-angle representations,
//! angle scaling about a fixed axis, and the isotropic Gaussian on SO(3).
//!
//! The isotropic Gaussian with concentration `eps` has density, with respect
//! to the normalized Haar measure, depending only on the rotation angle `w`
//! of `mean^T * r`:
//!
//! ```text
//! K(w) = sum_{l>=0} (2l+1) exp(-l(l+1) eps) sin((l+1/2) w) / sin(w/2)
//! ```
//!
//! Under Haar measure the angle itself has density `(1 - cos w) / pi`, so the
//! marginal angle density is `f(w) = (1 - cos w) / pi * K(w)`. Sampling draws
//! the angle by inverse CDF over a tabulated `f` and the axis uniformly on the
//! sphere, and applies the noise on the right of the mean.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Tolerance used to accept a matrix as a rotation.
pub const ROTATION_TOL: f64 = 1e-9;

/// A proper orthogonal 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

/// Unit axis and angle in `[0, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle {
    axis: Vec3,
    angle: f64,
}

impl AxisAngle {
    /// Normalizes `axis`; a negative angle flips the axis, angles beyond `pi`
    /// wrap around.
    pub fn new(axis: Vec3, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n.is_finite() && n > 0.0) || !angle.is_finite() {
            return Err(Error::Domain(
                "axis-angle needs a finite nonzero axis".into(),
            ));
        }
        let mut axis = axis / n;
        let mut angle = angle.rem_euclid(2.0 * PI);
        if angle > PI {
            angle = 2.0 * PI - angle;
            axis = -axis;
        }
        Ok(Self { axis, angle })
    }

    pub fn axis(&self) -> Vec3 {
        self.axis
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }
}

fn hat(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Accepts `m` if it is orthogonal with unit determinant within [`ROTATION_TOL`].
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let r = Self(m);
        if r.is_valid(ROTATION_TOL) {
            Ok(r)
        } else {
            Err(Error::Domain(format!("matrix is not a rotation: {m}")))
        }
    }

    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_row_slice(v))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let m = &self.0;
        if !m.iter().all(|x| x.is_finite()) {
            return false;
        }
        let gram = m.transpose() * m - Matrix3::identity();
        gram.iter().all(|x| x.abs() <= tol) && (m.determinant() - 1.0).abs() <= tol
    }

    /// `self * other`.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    pub fn inverse(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let m = &self.0;
        let c = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        let s = vee_skew(m).norm();
        s.atan2(c)
    }

    /// Inverse Rodrigues. The identity maps to angle 0 about `+z`.
    pub fn to_axis_angle(&self) -> AxisAngle {
        let m = &self.0;
        let c = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        let v = vee_skew(m);
        let s = v.norm();
        let angle = s.atan2(c);
        if angle < 1e-12 {
            return AxisAngle {
                axis: Vec3::z(),
                angle: 0.0,
            };
        }
        if c > -0.9 {
            return AxisAngle { axis: v / s, angle };
        }
        // Near pi the skew part vanishes; recover the axis from the symmetric
        // part (R + R^T)/2 - c I = (1 - c) n n^T.
        let b = (m + m.transpose()) * 0.5 - Matrix3::identity() * c;
        let j = (0..3)
            .max_by(|&a, &b2| b[(a, a)].total_cmp(&b[(b2, b2)]))
            .unwrap_or(0);
        let nj = (b[(j, j)] / (1.0 - c)).max(0.0).sqrt();
        let mut axis = Vec3::zeros();
        for k in 0..3 {
            axis[k] = if k == j {
                nj
            } else {
                b[(k, j)] / ((1.0 - c) * nj)
            };
        }
        axis /= axis.norm();
        if s > 1e-15 && axis.dot(&v) < 0.0 {
            axis = -axis;
        }
        AxisAngle { axis, angle }
    }

    /// Rodrigues formula.
    pub fn from_axis_angle(a: &AxisAngle) -> Rotation {
        let k = hat(&a.axis);
        let (s, c) = a.angle.sin_cos();
        Rotation(Matrix3::identity() + k * s + k * k * (1.0 - c))
    }

    /// Rotation vector (axis scaled by angle).
    pub fn log(&self) -> Vec3 {
        let aa = self.to_axis_angle();
        aa.axis * aa.angle
    }

    pub fn exp(v: &Vec3) -> Rotation {
        let angle = v.norm();
        if angle < 1e-300 {
            return Rotation::identity();
        }
        let k = hat(&(v / angle));
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::identity() + k * s + k * k * (1.0 - c))
    }

    /// Nearest rotation in Frobenius norm (polar decomposition). Non-finite
    /// input maps to the identity.
    pub fn nearest(m: &Matrix3<f64>) -> Rotation {
        if !m.iter().all(|x| x.is_finite()) {
            return Rotation::identity();
        }
        let svd = m.svd(true, true);
        let (Some(u), Some(vt)) = (svd.u, svd.v_t) else {
            return Rotation::identity();
        };
        let d = (u * vt).determinant().signum();
        let d = if d == 0.0 { 1.0 } else { d };
        Rotation(u * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * vt)
    }

    /// Haar-uniform rotation from a uniform unit quaternion.
    pub fn random_uniform<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        let [w, x, y, z] = q.map(|c| c / n);
        Rotation(Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        ))
    }
}

fn vee_skew(m: &Matrix3<f64>) -> Vec3 {
    Vec3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    ) * 0.5
}

/// Same axis as `r`, angle multiplied by `scale`.
pub fn scale_rot(scale: f64, r: &Rotation) -> Rotation {
    let aa = r.to_axis_angle();
    Rotation::from_axis_angle(&AxisAngle {
        axis: aa.axis,
        angle: aa.angle * scale,
    })
}

/// Angle of `a^T b`, in `[0, pi]`.
pub fn geodesic_distance(a: &Rotation, b: &Rotation) -> f64 {
    a.inverse().compose(b).angle()
}

/// Series truncation used when none is given: more terms for concentrated
/// distributions.
pub fn default_series_terms(eps: f64) -> usize {
    if eps < 0.1 {
        2000
    } else {
        100
    }
}

/// Beyond this `l` every remaining term is below `exp(-60)` in weight.
fn effective_terms(eps: f64, terms: usize) -> usize {
    let cut = ((60.0 / eps).sqrt().ceil() as usize).saturating_add(1);
    terms.min(cut)
}

/// Haar-relative density `K(w)` by the truncated character series.
fn kernel_series(omega: f64, eps: f64, terms: usize) -> f64 {
    let terms = effective_terms(eps, terms);
    if omega == 0.0 {
        return (0..=terms)
            .map(|l| {
                let a = (2 * l + 1) as f64;
                a * a * (-((l * (l + 1)) as f64) * eps).exp()
            })
            .sum();
    }
    let half = (omega / 2.0).sin();
    let two_cos = 2.0 * omega.cos();
    let mut sum = 0.0;
    // sin((l + 1/2) w) by the three-term recurrence, restarted periodically.
    let mut prev = (-0.5 * omega).sin();
    let mut cur = (0.5 * omega).sin();
    for l in 0..=terms {
        if l > 0 {
            if l % 256 == 0 {
                prev = ((l as f64 - 0.5) * omega).sin();
                cur = ((l as f64 + 0.5) * omega).sin();
            } else {
                let next = two_cos * cur - prev;
                prev = cur;
                cur = next;
            }
        }
        let w = (2 * l + 1) as f64 * (-((l * (l + 1)) as f64) * eps).exp();
        sum += w * cur;
    }
    sum / half
}

/// Marginal angle density of the isotropic Gaussian on SO(3), truncated
/// after `terms` series terms.
pub fn igso3_density(omega: f64, eps: f64, terms: usize) -> Result<f64> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Domain(format!(
            "igso3 concentration must be positive, got {eps}"
        )));
    }
    if !(0.0..=PI).contains(&omega) {
        return Err(Error::Domain(format!("angle {omega} outside [0, pi]")));
    }
    if terms == 0 {
        return Err(Error::Domain("need at least one series term".into()));
    }
    let haar = 2.0 * (omega / 2.0).sin().powi(2) / PI;
    Ok((haar * kernel_series(omega, eps, terms)).max(0.0))
}

/// Natural log of the Haar-relative density `K(w)`.
///
/// For `eps < 1` this uses the image-sum form obtained by Poisson summation of
/// the character series,
/// `K(w) = e^{eps/4} sqrt(pi) / (2 eps^{3/2} sin(w/2)) * sum_j (-1)^j (w + 2 pi j) exp(-(w + 2 pi j)^2 / (4 eps))`,
/// evaluated in log space so far tails do not underflow. Larger `eps` sums
/// the (then rapidly converging) series directly.
pub fn igso3_log_kernel(omega: f64, eps: f64) -> f64 {
    let omega = omega.clamp(0.0, PI);
    if eps >= 1.0 {
        return kernel_series(omega, eps, 100).max(f64::MIN_POSITIVE).ln();
    }
    let w = omega.max(1e-6);
    // signed log-sum-exp over images j = -2..=1
    let mut terms = [(0.0f64, 0.0f64); 4];
    for (slot, j) in terms.iter_mut().zip(-2i32..=1) {
        let shifted = w + 2.0 * PI * j as f64;
        let a = if j % 2 == 0 { shifted } else { -shifted };
        *slot = (a.signum(), a.abs().ln() - shifted * shifted / (4.0 * eps));
    }
    let peak = terms.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = terms.iter().map(|(sg, lg)| sg * (lg - peak).exp()).sum();
    let log_sum = peak + s.max(f64::MIN_POSITIVE).ln();
    eps / 4.0 + 0.5 * PI.ln() - 1.5 * eps.ln() - (2.0 * (w / 2.0).sin()).ln() + log_sum
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IgSo3Params {
    pub mean: Rotation,
    pub epsilon: f64,
    pub series_terms: usize,
    pub grid_size: usize,
}

impl IgSo3Params {
    pub const DEFAULT_GRID: usize = 8192;

    pub fn new(mean: Rotation, epsilon: f64) -> Result<Self> {
        let p = Self {
            mean,
            epsilon,
            series_terms: default_series_terms(epsilon),
            grid_size: Self::DEFAULT_GRID,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Domain(format!(
                "igso3 epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.series_terms < 1 || self.grid_size < 64 {
            return Err(Error::Domain(
                "igso3 needs series_terms >= 1 and grid_size >= 64".into(),
            ));
        }
        Ok(())
    }
}

/// Tabulated angle CDF on a uniform grid over `[0, pi]`.
#[derive(Debug)]
pub struct AngleTable {
    omega: Vec<f64>,
    cdf: Vec<f64>,
}

impl AngleTable {
    pub fn new(eps: f64, terms: usize, grid: usize) -> Result<Self> {
        let step = PI / (grid - 1) as f64;
        let omega: Vec<f64> = (0..grid).map(|i| i as f64 * step).collect();
        let pdf = omega
            .iter()
            .map(|&w| igso3_density(w.min(PI), eps, terms))
            .collect::<Result<Vec<_>>>()?;
        let mut cdf = Vec::with_capacity(grid);
        cdf.push(0.0);
        for i in 1..grid {
            cdf.push(cdf[i - 1] + 0.5 * (pdf[i] + pdf[i - 1]) * step);
        }
        let total = cdf[grid - 1];
        if !(total > 0.0) {
            return Err(Error::Domain(format!(
                "degenerate igso3 table for eps={eps}"
            )));
        }
        cdf.iter_mut().for_each(|c| *c /= total);
        Ok(Self { omega, cdf })
    }

    /// Tabulated CDF by linear interpolation.
    pub fn cdf(&self, omega: f64) -> f64 {
        let step = self.omega[1];
        let x = (omega.clamp(0.0, PI) / step).min((self.omega.len() - 1) as f64);
        let i = (x.floor() as usize).min(self.omega.len() - 2);
        let frac = x - i as f64;
        self.cdf[i] + frac * (self.cdf[i + 1] - self.cdf[i])
    }

    /// Inverse CDF for `u` in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let i = self
            .cdf
            .partition_point(|&c| c <= u)
            .clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        self.omega[i - 1] + frac.clamp(0.0, 1.0) * (self.omega[i] - self.omega[i - 1])
    }
}

type TableKey = (u64, usize, usize);

fn table_cache() -> &'static Mutex<HashMap<TableKey, Arc<AngleTable>>> {
    static CACHE: OnceLock<Mutex<HashMap<TableKey, Arc<AngleTable>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Shared, lazily built angle table for the given parameters.
pub fn angle_table(eps: f64, terms: usize, grid: usize) -> Result<Arc<AngleTable>> {
    let key = (eps.to_bits(), effective_terms(eps, terms), grid);
    if let Some(t) = table_cache()
        .lock()
        .expect("table cache poisoned")
        .get(&key)
    {
        return Ok(t.clone());
    }
    let table = Arc::new(AngleTable::new(eps, terms, grid)?);
    let mut cache = table_cache().lock().expect("table cache poisoned");
    Ok(cache.entry(key).or_insert(table).clone())
}

pub fn uniform_axis<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Below this concentration the angle is drawn from the small-angle limit
/// `|N(0, 2 eps I_3)|`: the series would need more terms than its budget and
/// the angle scale falls under the table's grid spacing.
pub const SMALL_EPS: f64 = 1e-4;

fn draw_angle<R: Rng + ?Sized>(eps: f64, terms: usize, grid: usize, rng: &mut R) -> Result<f64> {
    if eps < SMALL_EPS {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        return Ok(((2.0 * eps).sqrt() * v.norm()).min(PI));
    }
    Ok(angle_table(eps, terms, grid)?.quantile(rng.random()))
}

/// Draw from the isotropic Gaussian: `mean * exp(axis * angle)`.
pub fn sample_igso3<R: Rng + ?Sized>(p: &IgSo3Params, rng: &mut R) -> Result<Rotation> {
    p.validate()?;
    let angle = draw_angle(p.epsilon, p.series_terms, p.grid_size, rng)?;
    let axis = uniform_axis(rng);
    let noise = Rotation::from_axis_angle(&AxisAngle { axis, angle });
    Ok(p.mean.compose(&noise))
}

/// Angle-only draw, used for histogram checks.
pub fn sample_igso3_angle<R: Rng + ?Sized>(eps: f64, rng: &mut R) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Domain(format!(
            "igso3 epsilon must be positive, got {eps}"
        )));
    }
    draw_angle(
        eps,
        default_series_terms(eps),
        IgSo3Params::DEFAULT_GRID,
        rng,
    )
}

impl Distribution<Rotation> for IgSo3Params {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Rotation {
        sample_igso3(self, rng).expect("validated igso3 parameters")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rot_z(angle: f64) -> Rotation {
        Rotation::from_axis_angle(&AxisAngle::new(Vec3::z(), angle).unwrap())
    }

    fn max_diff(a: &Rotation, b: &Rotation) -> f64 {
        (a.matrix() - b.matrix()).abs().max()
    }

    #[test]
    fn identity_has_zero_angle() {
        assert_eq!(Rotation::identity().to_axis_angle().angle(), 0.0);
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = rot_z(PI / 2.0);
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((r.matrix() - expected).abs().max() < 1e-15);
        let aa = r.to_axis_angle();
        assert_abs_diff_eq!(aa.angle(), PI / 2.0, epsilon = 1e-12);
        assert!((aa.axis() - Vec3::z()).norm() < 1e-12);
    }

    #[test]
    fn half_turn_about_x() {
        let r = Rotation::from_matrix(Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0))
            .unwrap();
        let aa = r.to_axis_angle();
        assert_abs_diff_eq!(aa.angle(), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(aa.axis().x.abs(), 1.0, epsilon = 1e-12);
        assert!(max_diff(&Rotation::from_axis_angle(&aa), &r) < 1e-12);
    }

    #[test]
    fn shared_axis_closure() {
        let q = rot_z(PI / 4.0);
        assert!(max_diff(&q.compose(&q), &rot_z(PI / 2.0)) < 1e-12);
        assert!(
            max_diff(
                &Rotation::from_axis_angle(&AxisAngle::new(Vec3::x(), 0.0).unwrap()),
                &Rotation::identity()
            ) == 0.0
        );
    }

    #[test]
    fn scale_rot_cases() {
        let r = rot_z(PI / 2.0);
        assert!(max_diff(&scale_rot(1.0, &r), &r) < 1e-12);
        assert!(max_diff(&scale_rot(0.0, &r), &Rotation::identity()) < 1e-15);
        assert!(max_diff(&scale_rot(0.5, &r), &rot_z(PI / 4.0)) < 1e-12);
    }

    #[test]
    fn geodesic_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Rotation::random_uniform(&mut rng);
        assert!(geodesic_distance(&a, &a) < 1e-7);
        assert_abs_diff_eq!(
            geodesic_distance(&Rotation::identity(), &rot_z(PI)),
            PI,
            epsilon = 1e-12
        );
        for _ in 0..100 {
            let (a, b, c) = (
                Rotation::random_uniform(&mut rng),
                Rotation::random_uniform(&mut rng),
                Rotation::random_uniform(&mut rng),
            );
            let d = geodesic_distance(&a, &b);
            assert_abs_diff_eq!(
                geodesic_distance(&c.compose(&a), &c.compose(&b)),
                d,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn round_trip_random_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let r = Rotation::random_uniform(&mut rng);
            assert!(r.is_valid(1e-9));
            let back = Rotation::from_axis_angle(&r.to_axis_angle());
            assert!(max_diff(&back, &r) < 1e-9);
            assert!(max_diff(&Rotation::exp(&r.log()), &r) < 1e-9);
        }
    }

    #[test]
    fn nearest_rotation_projects() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = Rotation::random_uniform(&mut rng);
        let noisy =
            r.matrix() + Matrix3::from_fn(|_, _| 0.01 * rng.sample::<f64, _>(StandardNormal));
        let p = Rotation::nearest(&noisy);
        assert!(p.is_valid(1e-9));
        assert!(geodesic_distance(&p, &r) < 0.05);
        assert!(Rotation::nearest(&Matrix3::zeros()).is_valid(1e-9));
        assert!(Rotation::nearest(&(-Matrix3::identity())).is_valid(1e-9));
        assert_eq!(
            Rotation::nearest(&Matrix3::from_element(f64::NAN)),
            Rotation::identity()
        );
    }

    #[test]
    fn density_vanishes_at_zero_and_rejects_bad_eps() {
        assert_eq!(igso3_density(0.0, 0.3, 100).unwrap(), 0.0);
        assert!(igso3_density(1.0, 0.0, 100).is_err());
        assert!(igso3_density(1.0, -1.0, 100).is_err());
    }

    #[test]
    fn large_eps_is_haar() {
        for &w in &[0.1, 1.0, 2.0, 3.0] {
            let haar = (1.0 - f64::cos(w)) / PI;
            assert_abs_diff_eq!(igso3_density(w, 40.0, 100).unwrap(), haar, epsilon = 1e-12);
        }
    }

    fn simpson(f: impl Fn(f64) -> f64, n: usize) -> f64 {
        let h = PI / n as f64;
        let mut s = f(0.0) + f(PI);
        for i in 1..n {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn density_normalizes() {
        for &eps in &[0.001, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0] {
            let z = simpson(
                |w| igso3_density(w, eps, default_series_terms(eps)).unwrap(),
                20_000,
            );
            assert!((z - 1.0).abs() < 1e-3, "eps={eps}: integral {z}");
        }
    }

    #[test]
    fn image_sum_matches_series() {
        for &eps in &[0.002, 0.05, 0.3, 0.9, 1.5] {
            for &w in &[1e-3, 0.05, 0.4, 1.0, 2.0, 3.1] {
                let series = kernel_series(w, eps, 4000);
                // below this the series is cancellation noise
                if series < 1e-8 * kernel_series(0.0, eps, 4000) {
                    continue;
                }
                let closed = igso3_log_kernel(w, eps).exp();
                assert!(
                    (closed / series - 1.0).abs() < 1e-6,
                    "eps={eps} w={w}: {closed} vs {series}"
                );
            }
        }
    }

    #[test]
    fn concentrated_samples_stay_at_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mean = Rotation::random_uniform(&mut rng);
        let p = IgSo3Params::new(mean, 1e-8).unwrap();
        let near = (0..2000)
            .filter(|_| geodesic_distance(&sample_igso3(&p, &mut rng).unwrap(), &mean) < 1e-2)
            .count();
        assert_eq!(near, 2000);
    }
}
