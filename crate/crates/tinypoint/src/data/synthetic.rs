//! Synthetic point-cloud classes sampled from parametric surfaces.
//!
//! Each cloud is produced by: uniform sampling on the primitive surface,
//! Gaussian jitter, a random rotation about z, then unit-sphere
//! normalization. Every cloud draws from its own RNG stream keyed by
//! `(seed, split, class, index)`, so clouds are independent of how many
//! others are generated.

use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{normalize_unit_sphere, Dataset, PointCloud};
use crate::error::{Error, Result};
use crate::stream;

/// Parametric surface classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Primitive {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Tetrahedron,
    Ellipsoid,
    Disk,
}

impl Primitive {
    pub const ALL: [Primitive; 8] = [
        Primitive::Sphere,
        Primitive::Cube,
        Primitive::Cylinder,
        Primitive::Cone,
        Primitive::Torus,
        Primitive::Tetrahedron,
        Primitive::Ellipsoid,
        Primitive::Disk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Sphere => "sphere",
            Primitive::Cube => "cube",
            Primitive::Cylinder => "cylinder",
            Primitive::Cone => "cone",
            Primitive::Torus => "torus",
            Primitive::Tetrahedron => "tetrahedron",
            Primitive::Ellipsoid => "ellipsoid",
            Primitive::Disk => "disk",
        }
    }

    /// One point uniform on the surface (area-weighted across parts).
    pub fn surface_point(self, rng: &mut ChaCha8Rng) -> [f32; 3] {
        match self {
            Primitive::Sphere => sphere_point(rng),
            Primitive::Cube => cube_point(rng),
            Primitive::Cylinder => cylinder_point(rng),
            Primitive::Cone => cone_point(rng),
            Primitive::Torus => torus_point(rng),
            Primitive::Tetrahedron => tetrahedron_point(rng),
            Primitive::Ellipsoid => ellipsoid_point(rng),
            Primitive::Disk => disk_point(rng),
        }
    }
}

impl FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Primitive::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown primitive '{s}', expected one of: {}",
                    Primitive::ALL.map(|p| p.name()).join(", ")
                ))
            })
    }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> [f32; 3] {
    loop {
        let v: [f32; 3] = [
            rng.sample(rand_distr::StandardNormal),
            rng.sample(rand_distr::StandardNormal),
            rng.sample(rand_distr::StandardNormal),
        ];
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if n > 1e-6 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn sphere_point(rng: &mut ChaCha8Rng) -> [f32; 3] {
    unit_vector(rng)
}

/// Cube surface with half-edge 1: pick one of six equal faces, uniform on it.
fn cube_point(rng: &mut ChaCha8Rng) -> [f32; 3] {
    let face = rng.random_range(0..6u8);
    let u = rng.random_range(-1.0f32..1.0);
    let v = rng.random_range(-1.0f32..1.0);
    let s = if face % 2 == 0 { 1.0 } else { -1.0 };
    match face / 2 {
        0 => [s, u, v],
        1 => [u, s, v],
        _ => [u, v, s],
    }
}

/// Closed cylinder, radius 0.5, z in [-1, 1]; lateral wall and both caps are
/// chosen by surface area.
fn cylinder_point(rng: &mut ChaCha8Rng) -> [f32; 3] {
    const R: f32 = 0.5;
    let lateral = 2.0 * std::f32::consts::PI * R * 2.0;
    let cap = std::f32::consts::PI * R * R;
    let pick = rng.random_range(0.0..lateral + 2.0 * cap);
    if pick < lateral {
        let theta = rng.random_range(0.0..std::f32::consts::TAU);
        let z = rng.random_range(-1.0f32..1.0);
        [R * theta.cos(), R * theta.sin(), z]
    } else {
        let z = if pick < lateral + cap { 1.0 } else { -1.0 };
        let r = R * rng.random_range(0.0f32..1.0).sqrt();
        let theta = rng.random_range(0.0..std::f32::consts::TAU);
        [r * theta.cos(), r * theta.sin(), z]
    }
}

/// Cone with base disk (radius 1, z = 0) and apex at (0, 0, 1.5), parts
/// chosen by surface area. Uniform on the lateral sheet means the radial
/// fraction from the apex is sqrt-distributed.
fn cone_point(rng: &mut ChaCha8Rng) -> [f32; 3] {
    const R: f32 = 1.0;
    const H: f32 = 1.5;
    let slant = (R * R + H * H).sqrt();
    let lateral = std::f32::consts::PI * R * slant;
    let base = std::f32::consts::PI * R * R;
    let pick = rng.random_range(0.0..lateral + base);
    let theta = rng.random_range(0.0..std::f32::consts::TAU);
    if pick < lateral {
        let s = rng.random_range(0.0f32..1.0).sqrt();
        [R * s * theta.cos(), R * s * theta.sin(), H * (1.0 - s)]
    } else {
        let r = R * rng.random_range(0.0f32..1.0).sqrt();
        [r * theta.cos(), r * theta.sin(), 0.0]
    }
}

/// Torus, major radius 1, minor 0.35. The tube angle is drawn by rejection
/// with acceptance proportional to R + r cos(phi), the surface-area density.
fn torus_point(rng: &mut ChaCha8Rng) -> [f32; 3] {
    const MAJOR: f32 = 1.0;
    const MINOR: f32 = 0.35;
    let theta = rng.random_range(0.0..std::f32::consts::TAU);
    let phi = loop {
        let phi = rng.random_range(0.0..std::f32::consts::TAU);
        let accept = (MAJOR + MINOR * phi.cos()) / (MAJOR + MINOR);
        if rng.random_range(0.0f32..1.0) < accept {
            break phi;
        }
    };
    let ring = MAJOR + MINOR * phi.cos();
    [ring * theta.cos(), ring * theta.sin(), MINOR * phi.sin()]
}

/// Regular tetrahedron inscribed in the unit sphere; four equal faces.
fn tetrahedron_point(rng: &mut ChaCha8Rng) -> [f32; 3] {
    const S: f32 = 0.577_350_26; // 1/sqrt(3)
    const V: [[f32; 3]; 4] = [
        [S, S, S],
        [S, -S, -S],
        [-S, S, -S],
        [-S, -S, S],
    ];
    const FACES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    let f = FACES[rng.random_range(0..4usize)];
    let (r1, r2): (f32, f32) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
    let sq = r1.sqrt();
    let (a, b, c) = (1.0 - sq, sq * (1.0 - r2), sq * r2);
    let mut p = [0.0f32; 3];
    for d in 0..3 {
        p[d] = a * V[f[0]][d] + b * V[f[1]][d] + c * V[f[2]][d];
    }
    p
}

/// Ellipsoid with semi-axes (1, 0.6, 0.35), sampled by rejection from the
/// sphere parameterization with acceptance proportional to the local area
/// element |(bc x, ac y, ab z)|.
fn ellipsoid_point(rng: &mut ChaCha8Rng) -> [f32; 3] {
    const A: f32 = 1.0;
    const B: f32 = 0.6;
    const C: f32 = 0.35;
    let m_max = A * B; // largest of {bc, ac, ab} given a >= b >= c
    loop {
        let u = unit_vector(rng);
        let m = ((B * C * u[0]).powi(2) + (A * C * u[1]).powi(2) + (A * B * u[2]).powi(2)).sqrt();
        if rng.random_range(0.0f32..1.0) < m / m_max {
            return [A * u[0], B * u[1], C * u[2]];
        }
    }
}

/// Flat disk of radius 1 in the z = 0 plane.
fn disk_point(rng: &mut ChaCha8Rng) -> [f32; 3] {
    let r = rng.random_range(0.0f32..1.0).sqrt();
    let theta = rng.random_range(0.0..std::f32::consts::TAU);
    [r * theta.cos(), r * theta.sin(), 0.0]
}

/// Generation recipe for a synthetic dataset.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub classes: Vec<Primitive>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub points_per_cloud: usize,
    /// Std-dev of the Gaussian jitter added to each coordinate before
    /// rotation and normalization.
    pub noise_sigma: f32,
}

impl SyntheticSpec {
    /// Recipe using the first `num_classes` primitives in canonical order —
    /// the default dataset the training harness runs on.
    pub fn default_classes(
        num_classes: usize,
        train_per_class: usize,
        test_per_class: usize,
        points_per_cloud: usize,
        noise_sigma: f32,
    ) -> Result<Self> {
        if num_classes == 0 || num_classes > Primitive::ALL.len() {
            return Err(Error::Config(format!(
                "num_classes must be in 1..={}, got {num_classes}",
                Primitive::ALL.len()
            )));
        }
        let spec = SyntheticSpec {
            classes: Primitive::ALL[..num_classes].to_vec(),
            train_per_class,
            test_per_class,
            points_per_cloud,
            noise_sigma,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("no classes requested".to_string()));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.classes {
            if !seen.insert(c) {
                return Err(Error::Config(format!(
                    "duplicate class '{}'",
                    c.name()
                )));
            }
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::Config(
                "train_per_class and test_per_class must be positive".to_string(),
            ));
        }
        if self.points_per_cloud < 2 {
            return Err(Error::Config(
                "points_per_cloud must be at least 2".to_string(),
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise_sigma must be finite and non-negative, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Pull a sampled sphere cloud's empirical centroid to (numerically) zero
/// while keeping every point on the unit sphere: alternately subtract the
/// mean and re-project to unit norm. Converges quadratically, so a handful
/// of rounds reaches f32 noise. Needed because unit-sphere normalization
/// re-centers on the empirical centroid, and sphere clouds must still sit on
/// the surface afterwards.
fn recenter_on_sphere(points: &mut [[f32; 3]]) {
    let n = points.len() as f64;
    let mut work: Vec<[f64; 3]> = points
        .iter()
        .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
        .collect();
    for _ in 0..24 {
        let mut c = [0.0f64; 3];
        for p in work.iter() {
            for d in 0..3 {
                c[d] += p[d];
            }
        }
        for v in c.iter_mut() {
            *v /= n;
        }
        if c.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-12 {
            break;
        }
        for p in work.iter_mut() {
            for d in 0..3 {
                p[d] -= c[d];
            }
            let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            for d in 0..3 {
                p[d] /= norm;
            }
        }
    }
    for (p, w) in points.iter_mut().zip(&work) {
        for d in 0..3 {
            p[d] = w[d] as f32;
        }
    }
}

fn generate_cloud(
    primitive: Primitive,
    label: usize,
    spec: &SyntheticSpec,
    rng: &mut ChaCha8Rng,
) -> Result<PointCloud> {
    let mut points = Vec::with_capacity(spec.points_per_cloud);
    for _ in 0..spec.points_per_cloud {
        points.push(primitive.surface_point(rng));
    }
    if primitive == Primitive::Sphere {
        recenter_on_sphere(&mut points);
    }
    if spec.noise_sigma > 0.0 {
        for p in points.iter_mut() {
            for d in 0..3 {
                let n: f32 = rng.sample(rand_distr::StandardNormal);
                p[d] += spec.noise_sigma * n;
            }
        }
    }
    // One upright rotation per cloud.
    let theta = rng.random_range(0.0..std::f32::consts::TAU);
    let (s, c) = theta.sin_cos();
    for p in points.iter_mut() {
        let (x, y) = (p[0], p[1]);
        p[0] = c * x - s * y;
        p[1] = s * x + c * y;
    }
    normalize_unit_sphere(&mut points)?;
    Ok(PointCloud { label, points })
}

/// Generate a full dataset. Each cloud has its own stream keyed by
/// `(seed, split, class, index)`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut splits: [Vec<PointCloud>; 2] = [Vec::new(), Vec::new()];
    for (si, (split_name, count)) in [
        ("train", spec.train_per_class),
        ("test", spec.test_per_class),
    ]
    .into_iter()
    .enumerate()
    {
        for (label, &prim) in spec.classes.iter().enumerate() {
            for index in 0..count {
                let mut rng = stream::rng(
                    seed,
                    &[stream::hash_str(split_name), label as u64, index as u64],
                );
                splits[si].push(generate_cloud(prim, label, spec, &mut rng)?);
            }
        }
    }
    let [train, test] = splits;
    let ds = Dataset {
        name: format!("synthetic-{}c", spec.classes.len()),
        class_names: spec.classes.iter().map(|p| p.name().to_string()).collect(),
        points_per_cloud: spec.points_per_cloud,
        train,
        test,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(classes: Vec<Primitive>) -> SyntheticSpec {
        SyntheticSpec {
            classes,
            train_per_class: 3,
            test_per_class: 2,
            points_per_cloud: 64,
            noise_sigma: 0.0,
        }
    }

    #[test]
    fn sphere_cloud_points_stay_on_unit_sphere() {
        // With zero jitter the pipeline (rotate about z + normalize) keeps
        // sphere samples at norm 1.
        let ds = generate_synthetic(&spec(vec![Primitive::Sphere]), 11).unwrap();
        for c in ds.train.iter().chain(ds.test.iter()) {
            for p in &c.points {
                let n = p.iter().map(|v| v * v).sum::<f32>().sqrt();
                assert!((n - 1.0).abs() < 1e-6, "norm {n}");
            }
        }
    }

    #[test]
    fn cube_sampler_points_lie_on_cube_surface() {
        let mut rng = crate::stream::rng(3, &[0]);
        for _ in 0..2000 {
            let p = Primitive::Cube.surface_point(&mut rng);
            let m = p.iter().fold(0.0f32, |a, v| a.max(v.abs()));
            assert!((m - 1.0).abs() < 1e-6, "max coord {m}");
            assert!(p.iter().all(|v| v.abs() <= 1.0 + 1e-6));
        }
    }

    #[test]
    fn torus_sampler_points_lie_on_torus_surface() {
        // Implicit surface: (sqrt(x^2+y^2) - R)^2 + z^2 = r^2.
        let mut rng = crate::stream::rng(4, &[0]);
        for _ in 0..2000 {
            let p = Primitive::Torus.surface_point(&mut rng);
            let ring = (p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0;
            let d = (ring * ring + p[2] * p[2]).sqrt();
            assert!((d - 0.35).abs() < 1e-5, "tube distance {d}");
        }
    }

    #[test]
    fn ellipsoid_sampler_satisfies_implicit_equation() {
        let mut rng = crate::stream::rng(5, &[0]);
        for _ in 0..2000 {
            let p = Primitive::Ellipsoid.surface_point(&mut rng);
            let v = (p[0] / 1.0).powi(2) + (p[1] / 0.6).powi(2) + (p[2] / 0.35).powi(2);
            assert!((v - 1.0).abs() < 1e-5, "implicit value {v}");
        }
    }

    #[test]
    fn cone_sampler_points_on_base_or_lateral_sheet() {
        let mut rng = crate::stream::rng(6, &[0]);
        let (mut base, mut lateral) = (0usize, 0usize);
        for _ in 0..2000 {
            let p = Primitive::Cone.surface_point(&mut rng);
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            if p[2].abs() < 1e-6 {
                assert!(r <= 1.0 + 1e-5);
                base += 1;
            } else {
                // Lateral sheet: r/R + z/H == 1.
                let t = r / 1.0 + p[2] / 1.5;
                assert!((t - 1.0).abs() < 1e-5, "lateral residual {t}");
                lateral += 1;
            }
        }
        assert!(base > 200 && lateral > 800, "base {base} lateral {lateral}");
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let s = spec(vec![Primitive::Sphere, Primitive::Torus]);
        let a = generate_synthetic(&s, 42).unwrap();
        let b = generate_synthetic(&s, 42).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        let c = generate_synthetic(&s, 43).unwrap();
        assert_ne!(a.train[0].points, c.train[0].points);
    }

    #[test]
    fn test_split_is_independent_of_train_count() {
        // Streams are keyed per (split, class, index), so growing the train
        // split must not perturb test clouds.
        let mut s1 = spec(vec![Primitive::Cube]);
        let mut s2 = spec(vec![Primitive::Cube]);
        s1.train_per_class = 3;
        s2.train_per_class = 7;
        let a = generate_synthetic(&s1, 9).unwrap();
        let b = generate_synthetic(&s2, 9).unwrap();
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn jitter_changes_points_but_keeps_normalization() {
        let mut s = spec(vec![Primitive::Sphere]);
        s.noise_sigma = 0.02;
        let ds = generate_synthetic(&s, 1).unwrap();
        let max_norm = ds.train[0]
            .points
            .iter()
            .map(|p| p.iter().map(|v| v * v).sum::<f32>().sqrt())
            .fold(0.0f32, f32::max);
        assert!((max_norm - 1.0).abs() < 1e-5);
        // Not all points exactly on the sphere anymore.
        let off = ds.train[0]
            .points
            .iter()
            .map(|p| (p.iter().map(|v| v * v).sum::<f32>().sqrt() - 1.0).abs())
            .fold(0.0f32, f32::max);
        assert!(off > 1e-4, "jitter had no effect");
    }

    #[test]
    fn spec_validation_rejects_bad_inputs() {
        let mut s = spec(vec![]);
        assert!(s.validate().is_err());
        s = spec(vec![Primitive::Cube, Primitive::Cube]);
        assert!(s.validate().is_err());
        s = spec(vec![Primitive::Cube]);
        s.points_per_cloud = 1;
        assert!(s.validate().is_err());
        s = spec(vec![Primitive::Cube]);
        s.noise_sigma = -0.1;
        assert!(s.validate().is_err());
    }

    #[test]
    fn primitive_names_roundtrip() {
        for p in Primitive::ALL {
            assert_eq!(p.name().parse::<Primitive>().unwrap(), p);
        }
        assert!("pyramid".parse::<Primitive>().is_err());
    }
}
