//! Fixed featurizations of distances and angles: the damped sine-Bessel
//! radial basis per edge and the spherical Bessel x spherical-harmonic
//! basis per triplet, both cut off smoothly by a polynomial envelope.
//!
//! Frequencies are frozen: the radial basis uses the roots of j_0 (n*pi),
//! the spherical basis the roots of j_l. Root and normalizer tables are
//! computed once per [`BasisConfig`] and are immutable afterwards.

use crate::error::{Error, Result};

/// Hyperparameters of the basis featurization.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisConfig {
    pub num_radial: usize,
    pub num_spherical: usize,
    /// Interaction cutoff, Angstrom.
    pub cutoff: f64,
    /// Exponent of the cutoff envelope polynomial.
    pub envelope_exponent: u32,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self { num_radial: 6, num_spherical: 7, cutoff: 5.0, envelope_exponent: 6 }
    }
}

impl BasisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_radial < 1 {
            return Err(Error::Input("num_radial must be >= 1".into()));
        }
        if self.num_spherical < 1 {
            return Err(Error::Input("num_spherical must be >= 1".into()));
        }
        if !(self.cutoff > 0.0) {
            return Err(Error::Input(format!("cutoff must be positive, got {}", self.cutoff)));
        }
        if self.envelope_exponent < 1 {
            return Err(Error::Input("envelope_exponent must be >= 1".into()));
        }
        Ok(())
    }

    /// Length of the per-triplet feature vector.
    pub fn sbf_dim(&self) -> usize {
        self.num_spherical * self.num_radial
    }
}

/// Smooth cutoff envelope u(t) with t = d / cutoff.
///
/// u(t) = 1 - (p+1)(p+2)/2 t^p + p(p+2) t^(p+1) - p(p+1)/2 t^(p+2) for
/// t < 1 and 0 beyond; u and u' are continuous at t = 1.
pub fn envelope(t: f64, p: u32) -> f64 {
    if t >= 1.0 {
        return 0.0;
    }
    let (c0, c1, c2) = envelope_coefficients(p);
    let tp = t.powi(p as i32);
    1.0 + tp * (c0 + t * (c1 + t * c2))
}

/// Coefficients (of t^p, t^(p+1), t^(p+2)) of the envelope polynomial.
pub fn envelope_coefficients(p: u32) -> (f64, f64, f64) {
    let p = p as f64;
    (-(p + 1.0) * (p + 2.0) / 2.0, p * (p + 2.0), -p * (p + 1.0) / 2.0)
}

/// Radial basis of a distance: component n (1-based) is
/// sqrt(2/c) * sin(n pi d / c) / d * u(d/c). Zero for d >= c.
pub fn radial_basis(d: f64, cfg: &BasisConfig) -> Result<Vec<f64>> {
    if !(d > 0.0) {
        return Err(Error::DegenerateGeometry(format!("radial basis needs d > 0, got {d}")));
    }
    let c = cfg.cutoff;
    if d >= c {
        return Ok(vec![0.0; cfg.num_radial]);
    }
    let env = envelope(d / c, cfg.envelope_exponent);
    let scale = (2.0 / c).sqrt();
    Ok((1..=cfg.num_radial)
        .map(|n| scale * (n as f64 * std::f64::consts::PI * d / c).sin() / d * env)
        .collect())
}

/// Spherical Bessel function of the first kind j_l(z).
///
/// Upward recurrence from j_0 and j_1 above the turning point (z > l,
/// where it is stable); power series below it, where the recurrence
/// would amplify rounding error like the irregular solution y_l.
pub fn spherical_bessel_j(l: usize, z: f64) -> f64 {
    assert!(z > 0.0, "spherical_bessel_j needs z > 0");
    let j0 = z.sin() / z;
    if l == 0 {
        return j0;
    }
    let j1 = z.sin() / (z * z) - z.cos() / z;
    if l == 1 {
        return j1;
    }
    if z < l as f64 + 1.5 {
        return bessel_series(l, z);
    }
    let mut prev = j0;
    let mut cur = j1;
    for m in 1..l {
        let next = (2.0 * m as f64 + 1.0) / z * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// j_l(z) = z^l / (2l+1)!! * sum_k (-z^2/2)^k / (k! (2l+3)(2l+5)...(2l+1+2k))
fn bessel_series(l: usize, z: f64) -> f64 {
    let mut lead = 1.0;
    for m in 0..l {
        lead *= z / (2 * m + 3) as f64;
    }
    // lead = z^l / (2l+1)!!; the m product keeps intermediates bounded
    let half_z2 = 0.5 * z * z;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= -half_z2 / (k as f64 * (2 * l + 1 + 2 * k) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1.0) {
            break;
        }
    }
    lead * sum
}

/// First `count` positive roots of j_l, strictly increasing.
///
/// Roots of j_l interlace those of j_{l-1}; each is isolated by bisection
/// down to a bracket width of 1e-13.
pub fn bessel_roots(l: usize, count: usize) -> Vec<f64> {
    assert!(count >= 1);
    // j_0 = sin z / z: roots at n*pi, still located by bisection so every
    // row goes through the same code path.
    let mut roots: Vec<f64> = (1..=count + l)
        .map(|n| {
            let guess = n as f64 * std::f64::consts::PI;
            bisect(|z| spherical_bessel_j(0, z), guess - 1.0, guess + 1.0)
        })
        .collect();
    for m in 1..=l {
        let want = count + l - m;
        let mut next = Vec::with_capacity(want);
        for w in roots.windows(2).take(want) {
            next.push(bisect(|z| spherical_bessel_j(m, z), w[0], w[1]));
        }
        roots = next;
    }
    roots.truncate(count);
    roots
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    let fb = f(b);
    assert!(
        fa.signum() != fb.signum(),
        "bisection bracket [{a}, {b}] does not straddle a sign change"
    );
    while b - a > 1e-13 {
        let mid = 0.5 * (a + b);
        let fm = f(mid);
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Legendre polynomial P_l(x) by the three-term recurrence.
pub fn legendre(l: usize, x: f64) -> f64 {
    match l {
        0 => 1.0,
        1 => x,
        _ => {
            let mut prev = 1.0;
            let mut cur = x;
            for m in 1..l {
                let next = ((2 * m + 1) as f64 * x * cur - m as f64 * prev) / (m + 1) as f64;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// Order-zero real spherical harmonic of the polar angle, evaluated from
/// its cosine: sqrt((2l+1)/(4 pi)) * P_l(cos alpha).
pub fn spherical_harmonic_y0(l: usize, cos_alpha: f64) -> f64 {
    sh_norm(l) * legendre(l, cos_alpha)
}

/// Normalization constant of the order-zero spherical harmonic.
pub fn sh_norm(l: usize) -> f64 {
    ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI)).sqrt()
}

/// Precomputed root and normalizer tables for one [`BasisConfig`].
///
/// `roots[l][n-1]` is the n-th positive root z_{l,n} of j_l;
/// `radial_norms[l][n-1]` scales the radial factor j_l(z_{l,n} d/c) to unit
/// L2 norm on the ball of radius c (the angular factor carries its own
/// normalization).
#[derive(Debug, Clone)]
pub struct BasisTables {
    pub config: BasisConfig,
    pub roots: Vec<Vec<f64>>,
    pub radial_norms: Vec<Vec<f64>>,
}

impl BasisTables {
    pub fn new(config: &BasisConfig) -> Result<Self> {
        config.validate()?;
        let c = config.cutoff;
        let mut roots = Vec::with_capacity(config.num_spherical);
        let mut radial_norms = Vec::with_capacity(config.num_spherical);
        for l in 0..config.num_spherical {
            let row = bessel_roots(l, config.num_radial);
            // ∫_0^c j_l(z r/c)^2 r^2 dr = c^3/2 * j_{l+1}(z)^2 at a root z
            let norms: Vec<f64> = row
                .iter()
                .map(|&z| (2.0 / (c * c * c)).sqrt() / spherical_bessel_j(l + 1, z).abs())
                .collect();
            roots.push(row);
            radial_norms.push(norms);
        }
        Ok(Self { config: config.clone(), roots, radial_norms })
    }

    /// Spherical basis features of one (distance, angle) pair, laid out
    /// row-major by l: entry (l, n) sits at index l * num_radial + (n-1).
    ///
    /// Entry (l, n) = N_{l,n} j_l(z_{l,n} d/c) Y_l(alpha) u(d/c); the
    /// whole vector is zero for d >= c.
    pub fn spherical_basis(&self, d: f64, alpha: f64) -> Result<Vec<f64>> {
        if !(d > 0.0) {
            return Err(Error::DegenerateGeometry(format!(
                "spherical basis needs d > 0, got {d}"
            )));
        }
        let cfg = &self.config;
        let c = cfg.cutoff;
        if d >= c {
            return Ok(vec![0.0; cfg.sbf_dim()]);
        }
        let env = envelope(d / c, cfg.envelope_exponent);
        let cos_alpha = alpha.cos();
        let mut out = Vec::with_capacity(cfg.sbf_dim());
        for l in 0..cfg.num_spherical {
            let angular = spherical_harmonic_y0(l, cos_alpha);
            for n in 0..cfg.num_radial {
                let z = self.roots[l][n];
                let value = self.radial_norms[l][n]
                    * spherical_bessel_j(l, z * d / c)
                    * angular
                    * env;
                out.push(value);
            }
        }
        Ok(out)
    }

    /// Radial basis of a distance under this table's configuration.
    pub fn radial_basis(&self, d: f64) -> Result<Vec<f64>> {
        radial_basis(d, &self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    // Independent j_l oracle: Poisson's integral representation
    //   j_l(z) = z^l / (2^(l+1) l!) * ∫_0^pi cos(z cos t) sin(t)^(2l+1) dt
    // evaluated with composite Simpson quadrature. Shares nothing with the
    // recurrence implementation.
    fn bessel_oracle(l: usize, z: f64) -> f64 {
        let n = 50_000; // even
        let h = PI / n as f64;
        let f = |t: f64| (z * t.cos()).cos() * t.sin().powi(2 * l as i32 + 1);
        let mut sum = f(0.0) + f(PI);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * f(i as f64 * h);
        }
        let integral = sum * h / 3.0;
        let mut fact = 1.0;
        for k in 2..=l {
            fact *= k as f64;
        }
        z.powi(l as i32) / (2f64.powi(l as i32 + 1) * fact) * integral
    }

    // Explicit Legendre polynomials, hard-coded coefficients.
    fn legendre_oracle(l: usize, x: f64) -> f64 {
        match l {
            0 => 1.0,
            1 => x,
            2 => (3.0 * x * x - 1.0) / 2.0,
            3 => (5.0 * x.powi(3) - 3.0 * x) / 2.0,
            4 => (35.0 * x.powi(4) - 30.0 * x * x + 3.0) / 8.0,
            5 => (63.0 * x.powi(5) - 70.0 * x.powi(3) + 15.0 * x) / 8.0,
            6 => (231.0 * x.powi(6) - 315.0 * x.powi(4) + 105.0 * x * x - 5.0) / 16.0,
            _ => panic!("legendre_oracle only covers l <= 6"),
        }
    }

    #[test]
    fn envelope_boundary_values() {
        assert_eq!(envelope(0.0, 6), 1.0);
        assert_eq!(envelope(1.0, 6), 0.0);
        assert_eq!(envelope(1.7, 6), 0.0);
        // slope from the left at t = 1 vanishes
        let h = 1e-4;
        let slope = (envelope(1.0, 6) - envelope(1.0 - h, 6)) / h;
        assert!(slope.abs() < 1e-6, "slope {slope}");
    }

    #[test]
    fn envelope_matches_direct_polynomial() {
        // p = 6: 1 - 28 t^6 + 48 t^7 - 21 t^8
        let t: f64 = 0.5;
        let direct = 1.0 - 28.0 * t.powi(6) + 48.0 * t.powi(7) - 21.0 * t.powi(8);
        assert!((envelope(t, 6) - direct).abs() < 1e-15);
        assert!((direct - 0.855_468_75).abs() < 1e-15);
        for &t in &[0.1f64, 0.3, 0.77, 0.999] {
            let d = 1.0 - 28.0 * t.powi(6) + 48.0 * t.powi(7) - 21.0 * t.powi(8);
            assert!((envelope(t, 6) - d).abs() < 1e-14);
        }
    }

    #[test]
    fn radial_zero_at_cutoff() {
        let cfg = BasisConfig::default();
        let v = radial_basis(cfg.cutoff, &cfg).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
        let v = radial_basis(cfg.cutoff + 1.0, &cfg).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn radial_small_distance_limit() {
        let cfg = BasisConfig::default();
        let c = cfg.cutoff;
        let v = radial_basis(1e-6, &cfg).unwrap();
        for (i, &x) in v.iter().enumerate() {
            let n = (i + 1) as f64;
            let limit = (2.0 / c).sqrt() * n * PI / c;
            assert!(
                (x - limit).abs() / limit < 1e-9,
                "component {i}: {x} vs limit {limit}"
            );
        }
    }

    #[test]
    fn radial_scalar_oracle() {
        let cfg = BasisConfig::default();
        let d = 2.5;
        let v = radial_basis(d, &cfg).unwrap();
        let expect = 0.4f64.sqrt() * (PI / 2.0).sin() / 2.5 * envelope(0.5, 6);
        assert!((v[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn radial_rejects_nonpositive_distance() {
        let cfg = BasisConfig::default();
        assert!(radial_basis(0.0, &cfg).is_err());
        assert!(radial_basis(-1.0, &cfg).is_err());
    }

    #[test]
    fn j0_roots_are_n_pi() {
        let roots = bessel_roots(0, 8);
        for (i, &z) in roots.iter().enumerate() {
            assert!((z - (i + 1) as f64 * PI).abs() < 1e-12, "root {i}: {z}");
        }
    }

    #[test]
    fn j1_first_root() {
        let z = bessel_roots(1, 1)[0];
        assert!((z - 4.493409457909064).abs() < 1e-10, "{z}");
    }

    #[test]
    fn roots_are_small_in_magnitude_and_interlace() {
        let count = 6;
        let table: Vec<Vec<f64>> = (0..8).map(|l| bessel_roots(l, count)).collect();
        for l in 0..8 {
            for n in 0..count {
                let z = table[l][n];
                assert!(
                    spherical_bessel_j(l, z).abs() < 1e-12,
                    "j_{l}({z}) = {}",
                    spherical_bessel_j(l, z)
                );
                assert!(bessel_oracle(l, z).abs() < 1e-10);
                if n + 1 < count {
                    assert!(z < table[l][n + 1]);
                }
                if l + 1 < 8 {
                    assert!(z < table[l + 1][n], "z_{{{l},{n}}} < z_{{{},{n}}}", l + 1);
                    if n + 1 < count {
                        assert!(table[l + 1][n] < table[l][n + 1]);
                    }
                }
            }
        }
    }

    #[test]
    fn bessel_recurrence_matches_integral_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..40 {
            let l = rng.gen_range(0..8);
            let z = rng.gen_range(3.0..40.0);
            let got = spherical_bessel_j(l, z);
            let want = bessel_oracle(l, z);
            assert!((got - want).abs() < 1e-11, "j_{l}({z}): {got} vs {want}");
        }
    }

    #[test]
    fn bessel_small_argument_accuracy() {
        // below the turning point the naive upward recurrence is unstable;
        // check relative accuracy there against the integral oracle
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..60 {
            let l = rng.gen_range(2..8);
            let z = rng.gen_range(0.01..l as f64 + 1.4);
            let got = spherical_bessel_j(l, z);
            let want = bessel_oracle(l, z);
            assert!(
                (got - want).abs() <= 1e-11 * want.abs().max(1e-30),
                "j_{l}({z}): {got} vs {want}"
            );
        }
    }

    #[test]
    fn spherical_zero_at_cutoff() {
        let t = BasisTables::new(&BasisConfig::default()).unwrap();
        for &alpha in &[0.0, 1.0, PI] {
            let v = t.spherical_basis(5.0, alpha).unwrap();
            assert!(v.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn spherical_l0_row_constant_in_angle() {
        let t = BasisTables::new(&BasisConfig::default()).unwrap();
        let a = t.spherical_basis(2.0, 0.3).unwrap();
        let b = t.spherical_basis(2.0, 2.9).unwrap();
        for n in 0..6 {
            assert_eq!(a[n], b[n], "l=0 entries must not depend on the angle");
        }
        assert!(a[6] != b[6], "l=1 entries must depend on the angle");
    }

    #[test]
    fn spherical_matches_independent_oracle() {
        let cfg = BasisConfig::default();
        let t = BasisTables::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..12 {
            let d = rng.gen_range(0.3..4.9);
            let alpha = rng.gen_range(0.0..PI);
            let got = t.spherical_basis(d, alpha).unwrap();
            let env = envelope(d / cfg.cutoff, cfg.envelope_exponent);
            for l in 0..cfg.num_spherical {
                for n in 0..cfg.num_radial {
                    let z = t.roots[l][n];
                    let want = t.radial_norms[l][n]
                        * bessel_oracle(l, z * d / cfg.cutoff)
                        * sh_norm(l)
                        * legendre_oracle(l, alpha.cos())
                        * env;
                    let idx = l * cfg.num_radial + n;
                    assert!(
                        (got[idx] - want).abs() < 1e-10,
                        "entry (l={l}, n={n}) at d={d}, alpha={alpha}: {} vs {want}",
                        got[idx]
                    );
                }
            }
        }
    }

    #[test]
    fn bases_vanish_smoothly_at_cutoff() {
        let cfg = BasisConfig::default();
        let t = BasisTables::new(&cfg).unwrap();
        let c = cfg.cutoff;
        let h = 1e-4;
        let rbf_in = radial_basis(c - h, &cfg).unwrap();
        let sbf_in = t.spherical_basis(c - h, 1.0).unwrap();
        for &v in rbf_in.iter().chain(&sbf_in) {
            assert!(v.abs() < 1e-6, "value {v} at c - h");
            assert!((v / h).abs() < 1e-6, "slope {}", v / h);
        }
    }

    #[test]
    fn radial_modes_nearly_orthogonal_without_envelope() {
        // ∫_0^c e_n e_m d^2 dd with the bare sine modes is delta_nm
        let cfg = BasisConfig::default();
        let c = cfg.cutoff;
        let bare = |n: usize, d: f64| (2.0 / c).sqrt() * ((n + 1) as f64 * PI * d / c).sin() / d;
        let steps = 20_000;
        let h = c / steps as f64;
        let mut gram = [[0.0f64; 6]; 6];
        for (n, row) in gram.iter_mut().enumerate() {
            for (m, entry) in row.iter_mut().enumerate() {
                let f = |d: f64| if d == 0.0 { 0.0 } else { bare(n, d) * bare(m, d) * d * d };
                let mut sum = f(1e-12) + f(c);
                for i in 1..steps {
                    let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                    sum += w * f(i as f64 * h);
                }
                *entry = sum * h / 3.0;
            }
        }
        for n in 0..6 {
            for m in 0..6 {
                if n == m {
                    assert!((gram[n][n] - 1.0).abs() < 1e-6);
                } else {
                    assert!(
                        (gram[n][m] / gram[n][n]).abs() < 1e-6,
                        "off-diagonal ({n},{m}) = {}",
                        gram[n][m]
                    );
                }
            }
        }
    }

    #[test]
    fn spherical_modes_have_unit_norm_on_ball() {
        // ∫ |N j_l(z r/c) Y_l|^2 dV = ∫_0^c N^2 j_l^2 r^2 dr (solid angle
        // integral of |Y_l|^2 is 1)
        let cfg = BasisConfig::default();
        let t = BasisTables::new(&cfg).unwrap();
        let c = cfg.cutoff;
        for &(l, n) in &[(0usize, 0usize), (1, 0), (3, 2), (6, 5)] {
            let z = t.roots[l][n];
            let nf = t.radial_norms[l][n];
            let steps = 40_000;
            let h = c / steps as f64;
            let f = |r: f64| {
                if r == 0.0 {
                    0.0
                } else {
                    let j = spherical_bessel_j(l, z * r / c);
                    nf * nf * j * j * r * r
                }
            };
            let mut sum = f(0.0) + f(c);
            for i in 1..steps {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                sum += w * f(i as f64 * h);
            }
            let norm = sum * h / 3.0;
            assert!((norm - 1.0).abs() < 1e-8, "mode (l={l}, n={n}) norm {norm}");
        }
    }

    #[test]
    fn legendre_recurrence_matches_explicit() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let l = rng.gen_range(0..7);
            let x = rng.gen_range(-1.0..1.0);
            assert!((legendre(l, x) - legendre_oracle(l, x)).abs() < 1e-13);
        }
    }

    #[test]
    fn config_validation() {
        assert!(BasisConfig::default().validate().is_ok());
        let bad = BasisConfig { num_radial: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = BasisConfig { cutoff: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
