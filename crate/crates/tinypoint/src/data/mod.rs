//! Point-cloud datasets: synthetic generation, OFF mesh ingestion, a binary
//! on-disk format, normalization, and deterministic batching.

pub mod mesh;
pub mod pcds;
pub mod synthetic;

pub use synthetic::{generate_synthetic, Primitive, SyntheticSpec};

use crate::error::{Error, Result};
use crate::stream;

/// One labeled cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub label: usize,
    pub points: Vec<[f32; 3]>,
}

/// A dataset with fixed train/test splits. All clouds share one point count.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub class_names: Vec<String>,
    pub points_per_cloud: usize,
    pub train: Vec<PointCloud>,
    pub test: Vec<PointCloud>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Structural checks shared by every producer (generator, ingestion,
    /// file reader): non-empty splits, consistent point counts, labels in
    /// range, finite coordinates.
    pub fn validate(&self) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(Error::Contract("dataset has no classes".to_string()));
        }
        if self.points_per_cloud == 0 {
            return Err(Error::Contract(
                "dataset points_per_cloud must be positive".to_string(),
            ));
        }
        for (split, clouds) in [("train", &self.train), ("test", &self.test)] {
            if clouds.is_empty() {
                return Err(Error::Contract(format!(
                    "dataset {split} split is empty"
                )));
            }
            for (i, c) in clouds.iter().enumerate() {
                if c.points.len() != self.points_per_cloud {
                    return Err(Error::Contract(format!(
                        "{split} cloud {i} has {} points, dataset declares {}",
                        c.points.len(),
                        self.points_per_cloud
                    )));
                }
                if c.label >= self.class_names.len() {
                    return Err(Error::Contract(format!(
                        "{split} cloud {i} label {} out of range for {} classes",
                        c.label,
                        self.class_names.len()
                    )));
                }
                for p in &c.points {
                    if !p.iter().all(|v| v.is_finite()) {
                        return Err(Error::Contract(format!(
                            "{split} cloud {i} contains a non-finite coordinate"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Center on the centroid and scale so the farthest point sits on the unit
/// sphere. Internally double precision with one final rounding per
/// coordinate, which keeps re-normalization a near-exact no-op. Fails if
/// every point is identical (zero spread).
pub fn normalize_unit_sphere(points: &mut [[f32; 3]]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Geometry(
            "cannot normalize an empty point set".to_string(),
        ));
    }
    let n = points.len() as f64;
    let mut centroid = [0.0f64; 3];
    for p in points.iter() {
        for d in 0..3 {
            centroid[d] += p[d] as f64;
        }
    }
    for c in centroid.iter_mut() {
        *c /= n;
    }
    let mut max_sq = 0.0f64;
    for p in points.iter() {
        let mut sq = 0.0;
        for d in 0..3 {
            let v = p[d] as f64 - centroid[d];
            sq += v * v;
        }
        if sq > max_sq {
            max_sq = sq;
        }
    }
    if max_sq == 0.0 {
        return Err(Error::Geometry(
            "cannot normalize a degenerate cloud (all points identical)".to_string(),
        ));
    }
    let inv = 1.0 / max_sq.sqrt();
    for p in points.iter_mut() {
        for d in 0..3 {
            p[d] = ((p[d] as f64 - centroid[d]) * inv) as f32;
        }
    }
    Ok(())
}

/// Mini-batch in the layout the model consumes: xyz is row-major
/// `[batch * n_points, 3]`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub xyz: Vec<f32>,
    pub labels: Vec<usize>,
    pub batch: usize,
    pub n_points: usize,
}

/// Split a cloud list into batches. With `shuffle`, the order is a
/// Fisher-Yates permutation on the stream `(seed, "shuffle", epoch)`, so one
/// (seed, epoch) pair always yields one order. The final batch may be short.
pub fn batches(
    clouds: &[PointCloud],
    batch_size: usize,
    shuffle: bool,
    seed: u64,
    epoch: u32,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".to_string()));
    }
    if clouds.is_empty() {
        return Err(Error::Contract("cannot batch an empty split".to_string()));
    }
    let n_points = clouds[0].points.len();
    let mut order: Vec<usize> = (0..clouds.len()).collect();
    if shuffle {
        let mut rng = stream::rng(seed, &[stream::hash_str("shuffle"), epoch as u64]);
        // Fisher-Yates, explicit so the consumption pattern is frozen.
        for i in (1..order.len()).rev() {
            let j = rand::Rng::random_range(&mut rng, 0..=i);
            order.swap(i, j);
        }
    }
    let mut out = Vec::with_capacity(order.len().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        let mut xyz = Vec::with_capacity(chunk.len() * n_points * 3);
        let mut labels = Vec::with_capacity(chunk.len());
        for &ci in chunk {
            let c = &clouds[ci];
            if c.points.len() != n_points {
                return Err(Error::Contract(format!(
                    "cloud {ci} has {} points, expected {n_points}",
                    c.points.len()
                )));
            }
            for p in &c.points {
                xyz.extend_from_slice(p);
            }
            labels.push(c.label);
        }
        out.push(Batch {
            xyz,
            labels,
            batch: chunk.len(),
            n_points,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_two_point_example() {
        let mut pts = [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        normalize_unit_sphere(&mut pts).unwrap();
        assert_eq!(pts, [[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    }

    #[test]
    fn normalize_centers_and_unit_max_norm() {
        let mut pts = vec![
            [1.0f32, 2.0, 3.0],
            [4.0, -1.0, 0.5],
            [-2.0, 0.0, 1.0],
            [0.3, 0.3, 0.3],
        ];
        normalize_unit_sphere(&mut pts).unwrap();
        let centroid: [f32; 3] = (0..3)
            .map(|d| pts.iter().map(|p| p[d]).sum::<f32>() / pts.len() as f32)
            .collect::<Vec<_>>()
            .try_into()
            .unwrap();
        for c in centroid {
            assert!(c.abs() < 1e-6, "centroid {c}");
        }
        let max_norm = pts
            .iter()
            .map(|p| p.iter().map(|v| v * v).sum::<f32>().sqrt())
            .fold(0.0f32, f32::max);
        assert!((max_norm - 1.0).abs() < 1e-5, "max norm {max_norm}");
    }

    #[test]
    fn normalize_is_idempotent() {
        let mut pts = vec![
            [0.2f32, -1.0, 3.0],
            [2.0, 0.5, -0.7],
            [-1.5, 2.0, 0.0],
        ];
        normalize_unit_sphere(&mut pts).unwrap();
        let once = pts.clone();
        normalize_unit_sphere(&mut pts).unwrap();
        for (a, b) in once.iter().zip(&pts) {
            for d in 0..3 {
                assert!((a[d] - b[d]).abs() < 1e-7, "{:?} vs {:?}", a, b);
            }
        }
    }

    #[test]
    fn normalize_degenerate_cloud_is_geometry_error() {
        let mut pts = vec![[1.0f32, 1.0, 1.0]; 5];
        assert!(matches!(
            normalize_unit_sphere(&mut pts).unwrap_err(),
            Error::Geometry(_)
        ));
    }

    fn tiny_clouds(n: usize) -> Vec<PointCloud> {
        (0..n)
            .map(|i| PointCloud {
                label: i % 3,
                points: vec![[i as f32, 0.0, 0.0]; 4],
            })
            .collect()
    }

    #[test]
    fn batches_cover_everything_once_and_partial_tail() {
        let clouds = tiny_clouds(10);
        let bs = batches(&clouds, 4, true, 9, 0).unwrap();
        assert_eq!(bs.len(), 3);
        assert_eq!(bs[0].batch, 4);
        assert_eq!(bs[2].batch, 2);
        let mut seen: Vec<f32> = bs
            .iter()
            .flat_map(|b| b.xyz.chunks(12).map(|c| c[0]).collect::<Vec<_>>())
            .collect();
        seen.sort_by(f32::total_cmp);
        assert_eq!(seen, (0..10).map(|i| i as f32).collect::<Vec<_>>());
    }

    #[test]
    fn batches_same_epoch_same_order_different_epoch_differs() {
        let clouds = tiny_clouds(64);
        let a = batches(&clouds, 16, true, 9, 3).unwrap();
        let b = batches(&clouds, 16, true, 9, 3).unwrap();
        let c = batches(&clouds, 16, true, 9, 4).unwrap();
        assert_eq!(a[0].xyz, b[0].xyz);
        assert_ne!(
            a.iter().flat_map(|x| x.xyz.clone()).collect::<Vec<_>>(),
            c.iter().flat_map(|x| x.xyz.clone()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn batches_unshuffled_preserves_order() {
        let clouds = tiny_clouds(6);
        let bs = batches(&clouds, 4, false, 0, 0).unwrap();
        assert_eq!(bs[0].xyz[0], 0.0);
        assert_eq!(bs[0].xyz[12], 1.0);
        assert_eq!(bs[1].xyz[0], 4.0);
        assert_eq!(bs[0].labels, vec![0, 1, 2, 0]);
    }

    #[test]
    fn batch_layout_is_row_major_points_by_xyz() {
        let clouds = vec![PointCloud {
            label: 1,
            points: vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]],
        }];
        let bs = batches(&clouds, 1, false, 0, 0).unwrap();
        assert_eq!(bs[0].xyz, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(bs[0].n_points, 2);
    }
}
