//! Width-sliceable point-cloud classifier.
//!
//! The backbone is a multi-scale-grouping set-abstraction network: each stage
//! samples centroids by farthest point sampling, groups neighbors per radius
//! scale by ball query, runs a shared MLP on centroid-relative coordinates
//! plus inherited features, and max-pools per group; a final group-all stage
//! produces the global feature consumed by a fully-connected classifier head.
//!
//! Every shared-MLP and hidden head layer stores weights at *full* width and
//! is evaluated through leading slices `W[0..in_w, 0..out_w]`, so one
//! parameter set serves a whole family of widths. Layers whose input is a
//! concatenation (coordinates + per-scale features) keep one weight tensor
//! per input segment; slicing each segment's leading rows is then exactly
//! equivalent to slicing rows of the concatenated matrix, without ever
//! materializing the concatenation.
//!
//! Normalization layers keep an independent statistics/affine set per width
//! option (stats pooled across widths would be biased), stored *at* that
//! option's width.

pub mod config;
pub mod cost;
pub mod geom;

use std::cell::RefCell;
use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::stream;
use crate::tensor::Tensor;

pub use config::{load_model_config, save_model_config};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f32 = 0.1;

/// Exact rational width multiplier (e.g. 1/8).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scale {
    pub num: u32,
    pub den: u32,
}

impl Scale {
    pub const ONE: Scale = Scale { num: 1, den: 1 };

    pub fn validate(&self) -> Result<()> {
        if self.num == 0 || self.den == 0 || self.num > self.den {
            return Err(Error::Config(format!(
                "width scale must be a rational in (0, 1], got {}/{}",
                self.num, self.den
            )));
        }
        Ok(())
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl std::fmt::Display for Scale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse width scale '{s}', expected N or N/D"));
        let scale = match s.split_once('/') {
            Some((n, d)) => Scale {
                num: n.trim().parse().map_err(|_| bad())?,
                den: d.trim().parse().map_err(|_| bad())?,
            },
            None => Scale {
                num: s.trim().parse().map_err(|_| bad())?,
                den: 1,
            },
        };
        scale.validate()?;
        Ok(scale)
    }
}

/// Scale a full channel width: at least 1, rounded half away from zero.
pub fn scaled_width(full: usize, scale: f64) -> usize {
    ((full as f64 * scale).round() as usize).max(1)
}

/// The ladder of selectable output widths for one layer: `r` entries from
/// the tiny width up to full, evenly spaced with floor rounding, endpoints
/// exact.
pub fn width_options(full: usize, tiny_scale: f64, r: usize) -> Vec<usize> {
    let tiny = scaled_width(full, tiny_scale).min(full);
    (0..r)
        .map(|j| tiny + (j * (full - tiny)) / (r - 1).max(1))
        .collect()
}

/// One radius scale inside a grouping stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSpec {
    pub radius: f32,
    pub nsample: usize,
    pub mlp: Vec<usize>,
}

/// One grouping stage: `npoint` centroids, one shared-MLP chain per radius.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSpec {
    pub npoint: usize,
    pub scales: Vec<ScaleSpec>,
}

/// Full architecture description. Channel widths are those of the largest
/// (full) network; the tiny network is its `tiny_scale` leading slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SupernetSpec {
    pub name: String,
    pub num_classes: usize,
    pub stages: Vec<StageSpec>,
    /// Channel chain of the final group-all stage.
    pub global_mlp: Vec<usize>,
    /// Hidden widths of the classifier head.
    pub head_hidden: Vec<usize>,
    pub dropout: f64,
    pub tiny_scale: Scale,
    /// Number of selectable widths per layer (>= 2).
    pub width_options: usize,
}

impl SupernetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.stages.is_empty() {
            return Err(Error::Config("need at least one grouping stage".to_string()));
        }
        for (si, st) in self.stages.iter().enumerate() {
            if st.npoint == 0 {
                return Err(Error::Config(format!("stage {si}: npoint must be positive")));
            }
            if si > 0 && st.npoint > self.stages[si - 1].npoint {
                return Err(Error::Config(format!(
                    "stage {si}: npoint {} exceeds previous stage's {}",
                    st.npoint,
                    self.stages[si - 1].npoint
                )));
            }
            if st.scales.is_empty() {
                return Err(Error::Config(format!("stage {si}: needs at least one scale")));
            }
            for (mi, sc) in st.scales.iter().enumerate() {
                if !(sc.radius > 0.0 && sc.radius.is_finite()) {
                    return Err(Error::Config(format!(
                        "stage {si} scale {mi}: radius must be positive, got {}",
                        sc.radius
                    )));
                }
                if sc.nsample == 0 {
                    return Err(Error::Config(format!(
                        "stage {si} scale {mi}: nsample must be positive"
                    )));
                }
                if sc.mlp.is_empty() || sc.mlp.iter().any(|&c| c == 0) {
                    return Err(Error::Config(format!(
                        "stage {si} scale {mi}: mlp must be non-empty positive widths"
                    )));
                }
            }
        }
        if self.global_mlp.is_empty() || self.global_mlp.iter().any(|&c| c == 0) {
            return Err(Error::Config(
                "global mlp must be non-empty positive widths".to_string(),
            ));
        }
        if self.head_hidden.iter().any(|&c| c == 0) {
            return Err(Error::Config("head widths must be positive".to_string()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        self.tiny_scale.validate()?;
        if self.width_options == 0 {
            return Err(Error::Config(
                "width_options must be at least 1".to_string(),
            ));
        }
        Ok(())
    }

    /// Width options for one layer's output channel count.
    pub fn options_for(&self, full: usize) -> Vec<usize> {
        width_options(full, self.tiny_scale.as_f64(), self.width_options)
    }

    /// Smallest input point count the first stage can group.
    pub fn min_points(&self) -> usize {
        self.stages[0].npoint
    }
}

/// Kind of a parameterized or pooling layer, for cost accounting and
/// reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    SharedMlpConv,
    Linear,
    Pool,
}

/// Flattened description of one layer of the network, in canonical order.
/// `segments` lists full input-segment widths with their scalability (the
/// 3-wide coordinate segment is pinned; feature segments scale).
#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub segments: Vec<(usize, bool)>,
    pub full_out: usize,
    pub scalable_out: bool,
    pub has_norm: bool,
    /// Shared-MLP applications per cloud (grouping rows) or pool group size.
    pub rows_per_cloud: usize,
    /// For pools: members reduced per output row.
    pub group: usize,
}

impl LayerSpec {
    pub fn full_in(&self) -> usize {
        self.segments.iter().map(|(w, _)| w).sum()
    }

    pub fn scalable_in(&self) -> bool {
        self.segments.iter().any(|&(_, s)| s)
    }
}

/// Enumerate every layer in canonical order. The sub-list with
/// `scalable_out == true` defines the order of [`Selection`] entries.
pub fn enumerate_layers(spec: &SupernetSpec) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    // Output widths of the previous stage's scales (full), xyz excluded.
    let mut carried: Vec<usize> = Vec::new();
    for (si, st) in spec.stages.iter().enumerate() {
        let mut next_carried = Vec::with_capacity(st.scales.len());
        for (mi, sc) in st.scales.iter().enumerate() {
            let rows = st.npoint * sc.nsample;
            let mut in_segments: Vec<(usize, bool)> = vec![(3, false)];
            in_segments.extend(carried.iter().map(|&w| (w, true)));
            for (ci, &out) in sc.mlp.iter().enumerate() {
                layers.push(LayerSpec {
                    name: format!("sa{si}.s{mi}.conv{ci}"),
                    kind: LayerKind::SharedMlpConv,
                    segments: in_segments.clone(),
                    full_out: out,
                    scalable_out: true,
                    has_norm: true,
                    rows_per_cloud: rows,
                    group: 1,
                });
                in_segments = vec![(out, true)];
            }
            layers.push(LayerSpec {
                name: format!("sa{si}.s{mi}.pool"),
                kind: LayerKind::Pool,
                segments: vec![(*sc.mlp.last().unwrap(), true)],
                full_out: *sc.mlp.last().unwrap(),
                scalable_out: false,
                has_norm: false,
                rows_per_cloud: st.npoint,
                group: sc.nsample,
            });
            next_carried.push(*sc.mlp.last().unwrap());
        }
        carried = next_carried;
    }

    let global_rows = spec.stages.last().unwrap().npoint;
    let mut in_segments: Vec<(usize, bool)> = vec![(3, false)];
    in_segments.extend(carried.iter().map(|&w| (w, true)));
    for (ci, &out) in spec.global_mlp.iter().enumerate() {
        layers.push(LayerSpec {
            name: format!("global.conv{ci}"),
            kind: LayerKind::SharedMlpConv,
            segments: in_segments.clone(),
            full_out: out,
            scalable_out: true,
            has_norm: true,
            rows_per_cloud: global_rows,
            group: 1,
        });
        in_segments = vec![(out, true)];
    }
    layers.push(LayerSpec {
        name: "global.pool".to_string(),
        kind: LayerKind::Pool,
        segments: vec![(*spec.global_mlp.last().unwrap(), true)],
        full_out: *spec.global_mlp.last().unwrap(),
        scalable_out: false,
        has_norm: false,
        rows_per_cloud: 1,
        group: global_rows,
    });

    for (hi, &out) in spec.head_hidden.iter().enumerate() {
        layers.push(LayerSpec {
            name: format!("head.fc{hi}"),
            kind: LayerKind::Linear,
            segments: in_segments.clone(),
            full_out: out,
            scalable_out: true,
            has_norm: true,
            rows_per_cloud: 1,
            group: 1,
        });
        in_segments = vec![(out, true)];
    }
    layers.push(LayerSpec {
        name: "head.out".to_string(),
        kind: LayerKind::Linear,
        segments: in_segments,
        full_out: spec.num_classes,
        scalable_out: false,
        has_norm: false,
        rows_per_cloud: 1,
        group: 1,
    });
    layers
}

/// One width choice per scalable layer, as indices into that layer's width
/// options, in canonical layer order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub options: Vec<usize>,
}

impl Selection {
    /// Chosen widths rendered like `4-8|16`, stable across runs.
    pub fn describe(&self, net: &Supernet) -> String {
        net.convs()
            .iter()
            .map(|c| c.options[self.options[c.sel_index]].to_string())
            .collect::<Vec<_>>()
            .join("-")
    }
}

/// Per-width-option normalization parameters and running statistics, stored
/// at that option's width.
struct BnOption {
    gamma: Tensor<f32>,
    beta: Tensor<f32>,
    running_mean: RefCell<Vec<f32>>,
    running_var: RefCell<Vec<f32>>,
}

/// One parameterized layer (shared-MLP conv or head linear): per-segment
/// full-width weights, full-width bias, per-option normalization.
struct ConvParams {
    name: String,
    /// `[seg_full_in, full_out]` per input segment.
    seg_weights: Vec<Tensor<f32>>,
    bias: Tensor<f32>,
    /// Empty for the final classifier layer (no normalization there).
    bn: Vec<BnOption>,
    /// Output width options; `options[0]` is tiny, last is full.
    options: Vec<usize>,
    /// Position in the selection vector.
    sel_index: usize,
    relu: bool,
}

/// Normalization/dropout behavior of a forward pass.
///
/// `TrainAux` is for auxiliary co-trained branches (the sampled augmented
/// model, the full-width peer in mutual training): batch statistics and
/// dropout as in training, but running statistics stay untouched — only the
/// deliverable model's passes maintain the statistics used at evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    TrainAux,
    Eval,
}

impl Phase {
    fn training(self) -> bool {
        self != Phase::Eval
    }

    fn updates_stats(self) -> bool {
        self == Phase::Train
    }
}

/// Output of a classification forward pass.
pub struct ForwardOutput {
    pub logits: Tensor<f32>,
    /// Pooled global feature (input of the head), used by hint distillation.
    pub global_feature: Tensor<f32>,
}

/// The sliceable network: full-width parameters plus the bookkeeping to run
/// any width selection.
pub struct Supernet {
    pub spec: SupernetSpec,
    /// All conv/linear layers except `head.out`, canonical order.
    layers: Vec<ConvParams>,
    head_out: ConvParams,
    layer_specs: Vec<LayerSpec>,
}

impl Supernet {
    /// Initialize parameters from per-tensor streams of `init_seed`:
    /// weights are He-normal over full fan-in, biases zero, norm affine
    /// identity.
    pub fn new(spec: SupernetSpec, init_seed: u64) -> Result<Self> {
        spec.validate()?;
        let layer_specs = enumerate_layers(&spec);
        let mut layers = Vec::new();
        let mut head_out = None;
        let mut sel_index = 0usize;
        for ls in &layer_specs {
            if ls.kind == LayerKind::Pool {
                continue;
            }
            let fan_in: usize = ls.full_in();
            let std = (2.0 / fan_in as f64).sqrt();
            let seg_weights: Vec<Tensor<f32>> = ls
                .segments
                .iter()
                .enumerate()
                .map(|(gi, &(w, _))| {
                    let mut rng =
                        stream::rng(init_seed, &[stream::hash_str(&format!("{}.w{gi}", ls.name))]);
                    Tensor::randn(&[w, ls.full_out], std, &mut rng)
                })
                .collect();
            let bias = Tensor::leaf(&[ls.full_out], vec![0.0; ls.full_out])?;
            let options = spec.options_for(ls.full_out);
            let bn = if ls.has_norm {
                options
                    .iter()
                    .map(|&w| BnOption {
                        gamma: Tensor::leaf(&[w], vec![1.0; w]).expect("bn gamma"),
                        beta: Tensor::leaf(&[w], vec![0.0; w]).expect("bn beta"),
                        running_mean: RefCell::new(vec![0.0; w]),
                        running_var: RefCell::new(vec![1.0; w]),
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let conv = ConvParams {
                name: ls.name.clone(),
                seg_weights,
                bias,
                bn,
                options,
                sel_index: if ls.scalable_out { sel_index } else { usize::MAX },
                relu: ls.has_norm,
            };
            if ls.scalable_out {
                sel_index += 1;
                layers.push(conv);
            } else {
                head_out = Some(conv);
            }
        }
        Ok(Supernet {
            spec,
            layers,
            head_out: head_out.expect("spec always ends with head.out"),
            layer_specs,
        })
    }

    fn convs(&self) -> &[ConvParams] {
        &self.layers
    }

    /// Layer descriptions in canonical order.
    pub fn layer_specs(&self) -> &[LayerSpec] {
        &self.layer_specs
    }

    /// Number of entries a [`Selection`] must carry.
    pub fn selection_len(&self) -> usize {
        self.layers.len()
    }

    /// All-tiny selection (option 0 everywhere).
    pub fn tiny_selection(&self) -> Selection {
        Selection {
            options: vec![0; self.layers.len()],
        }
    }

    /// Full-width selection (last option everywhere).
    pub fn full_selection(&self) -> Selection {
        Selection {
            options: vec![self.spec.width_options - 1; self.layers.len()],
        }
    }

    fn check_selection(&self, sel: &Selection) -> Result<()> {
        if sel.options.len() != self.layers.len() {
            return Err(Error::Contract(format!(
                "selection has {} entries, network has {} scalable layers",
                sel.options.len(),
                self.layers.len()
            )));
        }
        for (i, &o) in sel.options.iter().enumerate() {
            if o >= self.spec.width_options {
                return Err(Error::Contract(format!(
                    "selection entry {i} is option {o}, only {} options exist",
                    self.spec.width_options
                )));
            }
        }
        Ok(())
    }

    /// Batch-norm over rows with the chosen width option; updates running
    /// stats in training phase.
    fn batch_norm(
        &self,
        x: Tensor<f32>,
        bn: &BnOption,
        phase: Phase,
    ) -> Result<Tensor<f32>> {
        match phase {
            Phase::Train | Phase::TrainAux => {
                let mu = x.mean_over_axis(0)?;
                let d = x.sub(&mu)?;
                let var = d.mul(&d)?.mean_over_axis(0)?;
                let inv_std = var.add_scalar(BN_EPS).powf(-0.5)?;
                let out = d.mul(&inv_std)?.mul(&bn.gamma)?.add(&bn.beta)?;
                if phase.updates_stats() {
                    // Running statistics track batch moments out-of-graph.
                    let mut rm = bn.running_mean.borrow_mut();
                    let mut rv = bn.running_var.borrow_mut();
                    for ((r, &m), (rvj, &v)) in rm
                        .iter_mut()
                        .zip(mu.data())
                        .zip(rv.iter_mut().zip(var.data()))
                    {
                        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
                        *rvj = (1.0 - BN_MOMENTUM) * *rvj + BN_MOMENTUM * v;
                    }
                }
                Ok(out)
            }
            Phase::Eval => {
                let rm = bn.running_mean.borrow();
                let rv = bn.running_var.borrow();
                let mean = Tensor::new(&[rm.len()], rm.clone())?;
                let inv: Vec<f32> = rv
                    .iter()
                    .map(|&v| 1.0 / (v + BN_EPS as f32).sqrt())
                    .collect();
                let inv = Tensor::new(&[rv.len()], inv)?;
                x.sub(&mean)?.mul(&inv)?.mul(&bn.gamma)?.add(&bn.beta)
            }
        }
    }

    /// Apply one conv/linear layer to pre-sliced input segments.
    fn apply_conv(
        &self,
        conv: &ConvParams,
        segments: &[Tensor<f32>],
        out_w: usize,
        phase: Phase,
    ) -> Result<Tensor<f32>> {
        if segments.len() != conv.seg_weights.len() {
            return Err(Error::Contract(format!(
                "layer {}: {} input segments, expected {}",
                conv.name,
                segments.len(),
                conv.seg_weights.len()
            )));
        }
        let mut acc: Option<Tensor<f32>> = None;
        for (x, w_full) in segments.iter().zip(&conv.seg_weights) {
            let in_w = x.shape()[1];
            let w = w_full.slice_block(in_w, out_w)?;
            let term = x.matmul(&w)?;
            acc = Some(match acc {
                Some(a) => a.add(&term)?,
                None => term,
            });
        }
        let mut out = acc
            .ok_or_else(|| Error::Contract(format!("layer {}: no input segments", conv.name)))?;
        let b = if out_w == self.bias_len(conv) {
            conv.bias.clone()
        } else {
            conv.bias.slice_prefix(out_w)?
        };
        out = out.add(&b)?;
        if !conv.bn.is_empty() {
            let opt_idx = conv
                .options
                .iter()
                .position(|&w| w == out_w)
                .ok_or_else(|| {
                    Error::Contract(format!(
                        "layer {}: width {out_w} is not an option of {:?}",
                        conv.name, conv.options
                    ))
                })?;
            out = self.batch_norm(out, &conv.bn[opt_idx], phase)?;
        }
        if conv.relu {
            out = out.relu();
        }
        Ok(out)
    }

    fn bias_len(&self, conv: &ConvParams) -> usize {
        conv.bias.shape()[0]
    }

    /// Classify a batch under a width selection.
    ///
    /// `dropout_rng` must be provided in the training phase when the spec has
    /// dropout; evaluation ignores it.
    pub fn forward(
        &self,
        batch: &Batch,
        sel: &Selection,
        phase: Phase,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOutput> {
        self.check_selection(sel)?;
        if batch.batch == 0 {
            return Err(Error::Contract("empty batch".to_string()));
        }
        if batch.xyz.len() != batch.batch * batch.n_points * 3 {
            return Err(Error::Contract(format!(
                "batch buffer has {} floats, expected {}",
                batch.xyz.len(),
                batch.batch * batch.n_points * 3
            )));
        }
        if batch.n_points < self.spec.min_points() {
            return Err(Error::Contract(format!(
                "batch has {} points per cloud, first stage needs {}",
                batch.n_points,
                self.spec.min_points()
            )));
        }
        if phase.training() && self.spec.dropout > 0.0 && dropout_rng.is_none() {
            return Err(Error::Contract(
                "training forward with dropout requires an RNG".to_string(),
            ));
        }

        let b = batch.batch;
        let mut n_cur = batch.n_points;
        let mut xyz_raw: Vec<f32> = batch.xyz.clone();
        let mut feats: Vec<Tensor<f32>> = Vec::new();
        let mut li = 0usize; // index into self.layers

        for st in &self.spec.stages {
            let xyz_t = Tensor::new(&[b * n_cur, 3], xyz_raw.clone())?;
            let m = st.npoint;
            // Centroids per sample.
            let mut new_xyz = Vec::with_capacity(b * m * 3);
            let mut centroids_local: Vec<Vec<usize>> = Vec::with_capacity(b);
            for s in 0..b {
                let cloud = &xyz_raw[s * n_cur * 3..(s + 1) * n_cur * 3];
                let picks = geom::fps(cloud, n_cur, m, 0)?;
                for &p in &picks {
                    new_xyz.extend_from_slice(&cloud[p * 3..p * 3 + 3]);
                }
                centroids_local.push(picks);
            }

            let mut new_feats = Vec::with_capacity(st.scales.len());
            for sc in &st.scales {
                let k = sc.nsample;
                let mut member_rows = Vec::with_capacity(b * m * k);
                let mut center_rows = Vec::with_capacity(b * m * k);
                for s in 0..b {
                    let cloud = &xyz_raw[s * n_cur * 3..(s + 1) * n_cur * 3];
                    let members =
                        geom::ball_query(cloud, n_cur, &centroids_local[s], sc.radius, k)?;
                    for (gi, &mi) in members.iter().enumerate() {
                        member_rows.push(s * n_cur + mi);
                        center_rows.push(s * n_cur + centroids_local[s][gi / k]);
                    }
                }
                let grouped = xyz_t.gather_rows(&member_rows)?;
                let centers = xyz_t.gather_rows(&center_rows)?;
                let rel = grouped.sub(&centers)?;
                let mut segments = vec![rel];
                for f in &feats {
                    segments.push(f.gather_rows(&member_rows)?);
                }
                // Shared MLP chain, then per-group max pooling.
                let mut x = {
                    let conv = &self.layers[li];
                    let out_w = conv.options[sel.options[conv.sel_index]];
                    let y = self.apply_conv(conv, &segments, out_w, phase)?;
                    li += 1;
                    y
                };
                for _ in 1..sc.mlp.len() {
                    let conv = &self.layers[li];
                    let out_w = conv.options[sel.options[conv.sel_index]];
                    x = self.apply_conv(conv, std::slice::from_ref(&x), out_w, phase)?;
                    li += 1;
                }
                let w = x.shape()[1];
                let pooled = x.reshape(&[b * m, k, w])?.max_over_axis(1)?;
                new_feats.push(pooled);
            }
            xyz_raw = new_xyz;
            n_cur = m;
            feats = new_feats;
        }

        // Group-all stage over the remaining points.
        let xyz_t = Tensor::new(&[b * n_cur, 3], xyz_raw.clone())?;
        let mut segments = vec![xyz_t];
        segments.extend(feats.iter().cloned());
        let mut x = {
            let conv = &self.layers[li];
            let out_w = conv.options[sel.options[conv.sel_index]];
            let y = self.apply_conv(conv, &segments, out_w, phase)?;
            li += 1;
            y
        };
        for _ in 1..self.spec.global_mlp.len() {
            let conv = &self.layers[li];
            let out_w = conv.options[sel.options[conv.sel_index]];
            x = self.apply_conv(conv, std::slice::from_ref(&x), out_w, phase)?;
            li += 1;
        }
        let w = x.shape()[1];
        let global_feature = x.reshape(&[b, n_cur, w])?.max_over_axis(1)?;

        // Classifier head.
        let mut h = global_feature.clone();
        for _ in 0..self.spec.head_hidden.len() {
            let conv = &self.layers[li];
            let out_w = conv.options[sel.options[conv.sel_index]];
            h = self.apply_conv(conv, std::slice::from_ref(&h), out_w, phase)?;
            li += 1;
            if self.spec.dropout > 0.0 && phase.training() {
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    h = h.dropout(self.spec.dropout, true, rng)?;
                }
            }
        }
        debug_assert_eq!(li, self.layers.len());
        let logits = self.apply_conv(
            &self.head_out,
            std::slice::from_ref(&h),
            self.spec.num_classes,
            phase,
        )?;
        Ok(ForwardOutput {
            logits,
            global_feature,
        })
    }

    /// Copy the selected slices out into a standalone fixed-width network.
    /// The result's layers are at exactly the selected widths, carrying the
    /// selected option's normalization statistics.
    pub fn extract_subnet(&self, sel: &Selection) -> Result<Supernet> {
        self.check_selection(sel)?;
        let widths: Vec<usize> = self
            .layers
            .iter()
            .map(|c| c.options[sel.options[c.sel_index]])
            .collect();
        let mut wi = 0usize;
        let mut take = |n: usize| -> Vec<usize> {
            let v = widths[wi..wi + n].to_vec();
            wi += n;
            v
        };
        let spec = SupernetSpec {
            name: format!("{}-extract", self.spec.name),
            num_classes: self.spec.num_classes,
            stages: self
                .spec
                .stages
                .iter()
                .map(|st| StageSpec {
                    npoint: st.npoint,
                    scales: st
                        .scales
                        .iter()
                        .map(|sc| ScaleSpec {
                            radius: sc.radius,
                            nsample: sc.nsample,
                            mlp: take(sc.mlp.len()),
                        })
                        .collect(),
                })
                .collect(),
            global_mlp: take(self.spec.global_mlp.len()),
            head_hidden: take(self.spec.head_hidden.len()),
            dropout: self.spec.dropout,
            tiny_scale: Scale::ONE,
            // A fixed-width network has exactly one width per layer, hence a
            // single normalization set.
            width_options: 1,
        };
        let mut out = Supernet::new(spec, 0)?;
        for (dst, src) in out.layers.iter_mut().chain([&mut out.head_out]).zip(
            self.layers.iter().chain([&self.head_out]),
        ) {
            let out_w = if src.sel_index == usize::MAX {
                self.spec.num_classes
            } else {
                src.options[sel.options[src.sel_index]]
            };
            for (dw, sw) in dst.seg_weights.iter_mut().zip(&src.seg_weights) {
                let in_w = dw.shape()[0];
                *dw = sw.slice_block(in_w, out_w)?.to_leaf();
            }
            dst.bias = src.bias.slice_prefix(out_w)?.to_leaf();
            if !dst.bn.is_empty() {
                let opt_idx = src
                    .options
                    .iter()
                    .position(|&w| w == out_w)
                    .expect("selected width is an option");
                let sbn = &src.bn[opt_idx];
                for dbn in dst.bn.iter_mut() {
                    dbn.gamma = sbn.gamma.to_leaf();
                    dbn.beta = sbn.beta.to_leaf();
                    *dbn.running_mean.borrow_mut() = sbn.running_mean.borrow().clone();
                    *dbn.running_var.borrow_mut() = sbn.running_var.borrow().clone();
                }
            }
        }
        Ok(out)
    }

    /// Mutable references to every trainable parameter, canonical order.
    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<f32>)> {
        let mut out = Vec::new();
        for conv in self.layers.iter_mut().chain([&mut self.head_out]) {
            for (gi, w) in conv.seg_weights.iter_mut().enumerate() {
                out.push((format!("{}.w{gi}", conv.name), w));
            }
            out.push((format!("{}.b", conv.name), &mut conv.bias));
            for (oi, bn) in conv.bn.iter_mut().enumerate() {
                out.push((format!("{}.bn{oi}.gamma", conv.name), &mut bn.gamma));
                out.push((format!("{}.bn{oi}.beta", conv.name), &mut bn.beta));
            }
        }
        out
    }

    /// Total trainable parameter count (running stats excluded).
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for conv in self.layers.iter().chain([&self.head_out]) {
            for w in &conv.seg_weights {
                n += w.numel();
            }
            n += conv.bias.numel();
            for bn in &conv.bn {
                n += bn.gamma.numel() + bn.beta.numel();
            }
        }
        n
    }

    /// Every persistent tensor (trainable parameters plus running
    /// statistics), for checkpointing.
    pub fn state_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let mut out = Vec::new();
        for conv in self.layers.iter().chain([&self.head_out]) {
            for (gi, w) in conv.seg_weights.iter().enumerate() {
                out.push((
                    format!("{}.w{gi}", conv.name),
                    w.shape().to_vec(),
                    w.data().to_vec(),
                ));
            }
            out.push((
                format!("{}.b", conv.name),
                conv.bias.shape().to_vec(),
                conv.bias.data().to_vec(),
            ));
            for (oi, bn) in conv.bn.iter().enumerate() {
                out.push((
                    format!("{}.bn{oi}.gamma", conv.name),
                    bn.gamma.shape().to_vec(),
                    bn.gamma.data().to_vec(),
                ));
                out.push((
                    format!("{}.bn{oi}.beta", conv.name),
                    bn.beta.shape().to_vec(),
                    bn.beta.data().to_vec(),
                ));
                let rm = bn.running_mean.borrow();
                out.push((
                    format!("{}.bn{oi}.running_mean", conv.name),
                    vec![rm.len()],
                    rm.clone(),
                ));
                let rv = bn.running_var.borrow();
                out.push((
                    format!("{}.bn{oi}.running_var", conv.name),
                    vec![rv.len()],
                    rv.clone(),
                ));
            }
        }
        out
    }

    /// Restore from [`Supernet::state_tensors`] output. Strict: every tensor
    /// must be present with its exact shape, and no extras may remain.
    pub fn load_state(&mut self, entries: &[(String, Vec<usize>, Vec<f32>)]) -> Result<()> {
        let mut map: HashMap<&str, (&Vec<usize>, &Vec<f32>)> = entries
            .iter()
            .map(|(n, s, d)| (n.as_str(), (s, d)))
            .collect();
        let mut restore = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
            let (s, d) = map.remove(name).ok_or_else(|| {
                Error::Contract(format!("checkpoint is missing tensor '{name}'"))
            })?;
            if s.as_slice() != shape {
                return Err(Error::Contract(format!(
                    "checkpoint tensor '{name}' has shape {s:?}, expected {shape:?}"
                )));
            }
            Ok(d.clone())
        };
        for conv in self.layers.iter_mut().chain([&mut self.head_out]) {
            for (gi, w) in conv.seg_weights.iter_mut().enumerate() {
                let data = restore(&format!("{}.w{gi}", conv.name), w.shape())?;
                *w = Tensor::leaf(w.shape(), data)?;
            }
            let data = restore(&format!("{}.b", conv.name), conv.bias.shape())?;
            conv.bias = Tensor::leaf(conv.bias.shape(), data)?;
            for (oi, bn) in conv.bn.iter_mut().enumerate() {
                let g = restore(&format!("{}.bn{oi}.gamma", conv.name), bn.gamma.shape())?;
                bn.gamma = Tensor::leaf(bn.gamma.shape(), g)?;
                let bta = restore(&format!("{}.bn{oi}.beta", conv.name), bn.beta.shape())?;
                bn.beta = Tensor::leaf(bn.beta.shape(), bta)?;
                let rm_len = bn.running_mean.borrow().len();
                *bn.running_mean.borrow_mut() =
                    restore(&format!("{}.bn{oi}.running_mean", conv.name), &[rm_len])?;
                let rv_len = bn.running_var.borrow().len();
                *bn.running_var.borrow_mut() =
                    restore(&format!("{}.bn{oi}.running_var", conv.name), &[rv_len])?;
            }
        }
        let ignorable: Vec<&str> = map
            .keys()
            .filter(|k| !k.starts_with("meta.") && !k.starts_with("hint."))
            .copied()
            .collect();
        if !ignorable.is_empty() {
            return Err(Error::Contract(format!(
                "checkpoint carries unknown tensors: {}",
                ignorable.join(", ")
            )));
        }
        Ok(())
    }
}
