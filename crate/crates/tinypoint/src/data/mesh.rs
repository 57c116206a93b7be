//! OFF triangle meshes: parsing, area-weighted surface sampling, and
//! ingestion of a class-per-directory mesh tree into a [`Dataset`].

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{normalize_unit_sphere, Dataset, PointCloud};
use crate::error::{Error, Result};
use crate::stream;

/// Indexed triangle mesh. Faces with more than three vertices are fan
/// triangulated at parse time.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f32; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

/// Parse OFF text. Accepts both header styles ("OFF" alone, or counts on the
/// same line), comments (`#`) and blank lines. Errors carry 1-based line
/// numbers.
pub fn parse_off(text: &str) -> Result<TriMesh> {
    let err = |line: usize, message: String| Error::Parse { line, message };

    // Iterator over (1-based line number, significant content).
    let mut lines = text.lines().enumerate().filter_map(|(i, raw)| {
        let cleaned = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let trimmed = cleaned.trim();
        if trimmed.is_empty() {
            None
        } else {
            Some((i + 1, trimmed))
        }
    });

    let (hline, header) = lines
        .next()
        .ok_or_else(|| err(1, "empty OFF document".to_string()))?;
    let counts_str;
    let counts_line;
    if header == "OFF" {
        let (cl, cs) = lines
            .next()
            .ok_or_else(|| err(hline, "missing counts line after OFF header".to_string()))?;
        counts_str = cs.to_string();
        counts_line = cl;
    } else if let Some(rest) = header.strip_prefix("OFF") {
        // Counts share the header line.
        counts_str = rest.trim().to_string();
        counts_line = hline;
    } else {
        return Err(err(
            hline,
            format!("expected OFF header, found '{header}'"),
        ));
    }

    let counts: Vec<&str> = counts_str.split_whitespace().collect();
    if counts.len() < 2 {
        return Err(err(
            counts_line,
            format!("expected vertex/face counts, found '{counts_str}'"),
        ));
    }
    let nv: usize = counts[0]
        .parse()
        .map_err(|_| err(counts_line, format!("bad vertex count '{}'", counts[0])))?;
    let nf: usize = counts[1]
        .parse()
        .map_err(|_| err(counts_line, format!("bad face count '{}'", counts[1])))?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| err(counts_line, format!("expected {nv} vertices, file ended early")))?;
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(err(ln, format!("vertex needs 3 coordinates, found '{l}'")));
        }
        let mut v = [0.0f32; 3];
        for d in 0..3 {
            v[d] = fields[d]
                .parse()
                .map_err(|_| err(ln, format!("bad coordinate '{}'", fields[d])))?;
            if !v[d].is_finite() {
                return Err(err(ln, format!("non-finite coordinate '{}'", fields[d])));
            }
        }
        vertices.push(v);
    }

    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| err(counts_line, format!("expected {nf} faces, file ended early")))?;
        let fields: Vec<&str> = l.split_whitespace().collect();
        let k: usize = fields[0]
            .parse()
            .map_err(|_| err(ln, format!("bad face vertex count '{}'", fields[0])))?;
        if k < 3 {
            return Err(err(ln, format!("face with {k} vertices")));
        }
        if fields.len() < 1 + k {
            return Err(err(
                ln,
                format!("face declares {k} vertices but lists {}", fields.len() - 1),
            ));
        }
        let mut idx = Vec::with_capacity(k);
        for f in &fields[1..1 + k] {
            let i: usize = f
                .parse()
                .map_err(|_| err(ln, format!("bad vertex index '{f}'")))?;
            if i >= vertices.len() {
                return Err(err(
                    ln,
                    format!("vertex index {i} out of range for {} vertices", vertices.len()),
                ));
            }
            idx.push(i);
        }
        // Fan triangulation around the first vertex.
        for t in 1..k - 1 {
            triangles.push([idx[0], idx[t], idx[t + 1]]);
        }
    }

    if triangles.is_empty() {
        return Err(err(counts_line, "mesh has no faces".to_string()));
    }
    Ok(TriMesh {
        vertices,
        triangles,
    })
}

fn triangle_area(a: [f32; 3], b: [f32; 3], c: [f32; 3]) -> f64 {
    let u = [
        (b[0] - a[0]) as f64,
        (b[1] - a[1]) as f64,
        (b[2] - a[2]) as f64,
    ];
    let v = [
        (c[0] - a[0]) as f64,
        (c[1] - a[1]) as f64,
        (c[2] - a[2]) as f64,
    ];
    let cx = u[1] * v[2] - u[2] * v[1];
    let cy = u[2] * v[0] - u[0] * v[2];
    let cz = u[0] * v[1] - u[1] * v[0];
    0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
}

/// Sample `n` points uniformly over the mesh surface: triangles are chosen in
/// proportion to area, positions by the square-root barycentric map.
pub fn sample_mesh(mesh: &TriMesh, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<[f32; 3]>> {
    if n == 0 {
        return Err(Error::Contract("cannot sample zero points".to_string()));
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0f64;
    for t in &mesh.triangles {
        total += triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::Geometry(
            "mesh has zero total surface area".to_string(),
        ));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let pick = rng.random_range(0.0..total);
        let ti = cumulative.partition_point(|&c| c <= pick).min(mesh.triangles.len() - 1);
        let t = mesh.triangles[ti];
        let (a, b, c) = (
            mesh.vertices[t[0]],
            mesh.vertices[t[1]],
            mesh.vertices[t[2]],
        );
        let (r1, r2): (f32, f32) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let sq = r1.sqrt();
        let (wa, wb, wc) = (1.0 - sq, sq * (1.0 - r2), sq * r2);
        out.push([
            wa * a[0] + wb * b[0] + wc * c[0],
            wa * a[1] + wb * b[1] + wc * c[1],
            wa * a[2] + wb * b[2] + wc * c[2],
        ]);
    }
    Ok(out)
}

/// Ingest `root/<class>/<train|test>/*.off` into a dataset: each mesh is
/// surface-sampled to `points_per_cloud` points and unit-sphere normalized.
/// Class names are the sorted subdirectory names; each file draws from a
/// stream keyed by `(seed, split, class, file-stem)` so ingestion order
/// never matters.
pub fn ingest_off_tree(root: &Path, points_per_cloud: usize, seed: u64) -> Result<Dataset> {
    let read_dir = |p: &Path| -> Result<Vec<std::path::PathBuf>> {
        let mut entries = Vec::new();
        for e in std::fs::read_dir(p).map_err(|e| Error::io(p, e))? {
            entries.push(e.map_err(|e| Error::io(p, e))?.path());
        }
        entries.sort();
        Ok(entries)
    };

    let mut class_dirs: Vec<std::path::PathBuf> = read_dir(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(Error::Contract(format!(
            "no class directories under {}",
            root.display()
        )));
    }

    let mut class_names = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let class = dir
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Contract(format!("unreadable class name {}", dir.display())))?
            .to_string();
        for (split_name, sink) in [("train", &mut train), ("test", &mut test)] {
            let split_dir = dir.join(split_name);
            if !split_dir.is_dir() {
                return Err(Error::Contract(format!(
                    "missing split directory {}",
                    split_dir.display()
                )));
            }
            for file in read_dir(&split_dir)? {
                if file.extension().and_then(|e| e.to_str()) != Some("off") {
                    continue;
                }
                let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
                let mesh = parse_off(&text)?;
                let stem = file
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default();
                let mut rng = stream::rng(
                    seed,
                    &[
                        stream::hash_str(split_name),
                        label as u64,
                        stream::hash_str(stem),
                    ],
                );
                let mut points = sample_mesh(&mesh, points_per_cloud, &mut rng)?;
                normalize_unit_sphere(&mut points)?;
                sink.push(PointCloud { label, points });
            }
        }
        class_names.push(class);
    }

    let ds = Dataset {
        name: root
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or("off-ingest")
            .to_string(),
        class_names,
        points_per_cloud,
        train,
        test,
    };
    ds.validate()?;
    Ok(ds)
}
