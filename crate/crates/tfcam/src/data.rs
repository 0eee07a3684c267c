//! Cohorts: synthetic generation, wide-CSV ingestion, normalization,
//! and stratified splitting.
//!
//! The wide CSV schema is one row per patient:
//! `patient_id,outcome,<feature>@t0,...,<feature>@t{T-1},...` with each
//! feature's time columns contiguous and every feature sharing the
//! same number of intervals.
//!
//! ```
//! use tfcam::data::{generate_cohort, split, default_policies,
//!                   GeneratorSpec, Preprocessor, SplitSpec};
//!
//! let spec = GeneratorSpec { n_patients: 100, prevalence: 0.2, seed: 7,
//!                            ..Default::default() };
//! let cohort = generate_cohort(&spec).unwrap();
//! assert_eq!(cohort.n_positive(), 20); // exact stratum count
//!
//! let (train, val, test) = split(&cohort, &SplitSpec::default()).unwrap();
//! assert_eq!(train.n_patients() + val.n_patients() + test.n_patients(), 100);
//!
//! // normalization statistics come from the training split only
//! let pre = Preprocessor::fit(&train, default_policies(&spec.features)).unwrap();
//! let test_norm = pre.apply(&test);
//! assert_eq!(test_norm.x.shape(), test.x.shape());
//! ```

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureGroup {
    Demographic,
    Comorbidity,
    Claims,
    Clinical,
}

/// How one feature is synthesized for progressors vs non-progressors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    /// Stable level per patient, small per-interval jitter.
    Continuous {
        mean_neg: f64,
        mean_pos: f64,
        sd: f64,
        #[serde(default)]
        non_negative: bool,
    },
    /// 0/1 flag drawn once per patient, constant over the window.
    Binary { p_neg: f64, p_pos: f64 },
    /// Linear-in-time level with noise (declining labs such as eGFR).
    Trajectory {
        base_neg: f64,
        slope_neg: f64,
        base_pos: f64,
        slope_pos: f64,
        sd: f64,
    },
    /// Sticky 0→1 indicator whose onset probability rises over the
    /// window for progressors (stage indicators).
    RisingFlag {
        p_neg: f64,
        p_pos_early: f64,
        p_pos_late: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub group: FeatureGroup,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n_patients: usize,
    pub prevalence: f64,
    pub n_timesteps: usize,
    pub seed: u64,
    /// Scales every progressor/non-progressor mean gap; 1.0 keeps the
    /// anchor values below.
    pub signal_strength: f64,
    pub features: Vec<FeatureDef>,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            n_patients: 1422,
            prevalence: 0.06,
            n_timesteps: 8,
            seed: 0,
            signal_strength: 1.0,
            features: default_schema(),
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "prevalence must lie in (0,1), got {}",
                self.prevalence
            )));
        }
        if self.features.is_empty() {
            return Err(Error::InvalidArgument("feature schema is empty".into()));
        }
        if self.n_patients == 0 || self.n_timesteps == 0 {
            return Err(Error::InvalidArgument(
                "n_patients and n_timesteps must be positive".into(),
            ));
        }
        let names: BTreeSet<&str> = self.features.iter().map(|f| f.name.as_str()).collect();
        if names.len() != self.features.len() {
            return Err(Error::InvalidArgument("duplicate feature names".into()));
        }
        Ok(())
    }
}

fn cont(name: &str, group: FeatureGroup, mean_neg: f64, mean_pos: f64, sd: f64) -> FeatureDef {
    FeatureDef {
        name: name.into(),
        group,
        kind: FeatureKind::Continuous {
            mean_neg,
            mean_pos,
            sd,
            non_negative: false,
        },
    }
}

fn claims(name: &str, mean_neg: f64, mean_pos: f64, sd: f64) -> FeatureDef {
    FeatureDef {
        name: name.into(),
        group: FeatureGroup::Claims,
        kind: FeatureKind::Continuous {
            mean_neg,
            mean_pos,
            sd,
            non_negative: true,
        },
    }
}

fn flag(name: &str, group: FeatureGroup, p_neg: f64, p_pos: f64) -> FeatureDef {
    FeatureDef {
        name: name.into(),
        group,
        kind: FeatureKind::Binary { p_neg, p_pos },
    }
}

/// Compact 20-feature schema: 4 demographic, 6 comorbidity, 4 claims,
/// 6 clinical. Group means anchor the two outcome strata.
pub fn default_schema() -> Vec<FeatureDef> {
    use FeatureGroup::*;
    vec![
        cont("age", Demographic, 72.04, 69.13, 11.8),
        flag("female", Demographic, 0.540, 0.465),
        flag("race_aa", Demographic, 0.045, 0.140),
        cont("bmi", Demographic, 26.40, 28.40, 6.0),
        flag("diabetes", Comorbidity, 0.590, 0.733),
        flag("hypertension", Comorbidity, 0.990, 0.990),
        flag("anemia", Comorbidity, 0.620, 0.640),
        flag("mi", Comorbidity, 0.324, 0.517),
        flag("sh", Comorbidity, 0.180, 0.326),
        flag("chf", Comorbidity, 0.090, 0.070),
        claims("n_claims_o", 22.07, 27.78, 19.1),
        claims("n_claims_p", 87.43, 105.37, 68.0),
        claims("net_exp_p", 11640.0, 15512.0, 12748.0),
        claims("net_exp_i", 29440.0, 33909.0, 32541.0),
        FeatureDef {
            name: "egfr".into(),
            group: Clinical,
            kind: FeatureKind::Trajectory {
                base_neg: 23.0,
                slope_neg: -0.06,
                base_pos: 24.0,
                slope_pos: -1.9,
                sd: 2.0,
            },
        },
        cont("hemoglobin", Clinical, 14.25, 12.15, 1.8),
        cont("bicarbonate", Clinical, 25.3, 22.9, 4.2),
        cont("intact_pth", Clinical, 62.72, 78.66, 37.3),
        FeatureDef {
            name: "s4".into(),
            group: Clinical,
            kind: FeatureKind::RisingFlag {
                p_neg: 0.03,
                p_pos_early: 0.04,
                p_pos_late: 0.45,
            },
        },
        FeatureDef {
            name: "s5".into(),
            group: Clinical,
            kind: FeatureKind::RisingFlag {
                p_neg: 0.02,
                p_pos_early: 0.02,
                p_pos_late: 0.40,
            },
        },
    ]
}

/// Per-patient feature matrices with binary outcomes and metadata.
#[derive(Debug, Clone)]
pub struct CohortDataset {
    /// [N,T,F]
    pub x: Tensor,
    /// labels ∈ {0,1}
    pub y: Vec<f64>,
    pub feature_names: Vec<String>,
    pub time_labels: Vec<String>,
    pub patient_ids: Vec<String>,
}

impl CohortDataset {
    pub fn n_patients(&self) -> usize {
        self.y.len()
    }
    pub fn n_timesteps(&self) -> usize {
        self.x.shape()[1]
    }
    pub fn n_features(&self) -> usize {
        self.x.shape()[2]
    }

    pub fn prevalence(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.y.len() as f64
    }

    pub fn n_positive(&self) -> usize {
        self.y.iter().filter(|&&v| v == 1.0).count()
    }

    pub fn labels_tensor(&self) -> Tensor {
        Tensor::vector(&self.y)
    }

    /// Fresh dataset containing the selected patients, in order.
    pub fn subset(&self, indices: &[usize]) -> CohortDataset {
        let (t, f) = (self.n_timesteps(), self.n_features());
        let mut data = Vec::with_capacity(indices.len() * t * f);
        for &i in indices {
            data.extend_from_slice(&self.x.data()[i * t * f..(i + 1) * t * f]);
        }
        CohortDataset {
            x: Tensor::new(vec![indices.len(), t, f], data).unwrap(),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
            time_labels: self.time_labels.clone(),
            patient_ids: indices.iter().map(|&i| self.patient_ids[i].clone()).collect(),
        }
    }

    pub fn patient_index(&self, id: &str) -> Option<usize> {
        self.patient_ids.iter().position(|p| p == id)
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        let (t, f) = (self.n_timesteps(), self.n_features());
        let mut header = String::from("patient_id,outcome");
        for name in &self.feature_names {
            for ti in 0..t {
                header.push_str(&format!(",{name}@t{ti}"));
            }
        }
        writeln!(w, "{header}")?;
        for (pi, id) in self.patient_ids.iter().enumerate() {
            let mut row = format!("{},{}", id, self.y[pi] as i64);
            for fi in 0..f {
                for ti in 0..t {
                    row.push_str(&format!(",{}", self.x.at3(pi, ti, fi)));
                }
            }
            writeln!(w, "{row}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        write_atomic(path, &buf)
    }
}

/// Writes via a sibling temp file and rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into())
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Deterministic synthetic cohort with an exact stratum count:
/// round(n · prevalence) progressors, shuffled into place.
pub fn generate_cohort(spec: &GeneratorSpec) -> Result<CohortDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, t, f) = (spec.n_patients, spec.n_timesteps, spec.features.len());
    let n_pos = ((n as f64) * spec.prevalence).round().max(1.0) as usize;

    let mut labels = vec![0.0; n];
    for l in labels.iter_mut().take(n_pos) {
        *l = 1.0;
    }
    labels.shuffle(&mut rng);

    let s = spec.signal_strength;
    let blend = |neg: f64, pos: f64| neg + s * (pos - neg);
    let std_normal = Normal::new(0.0, 1.0).unwrap();

    let mut x = Tensor::zeros(&[n, t, f]);
    for pi in 0..n {
        let positive = labels[pi] == 1.0;
        for (fi, feat) in spec.features.iter().enumerate() {
            match &feat.kind {
                FeatureKind::Continuous {
                    mean_neg,
                    mean_pos,
                    sd,
                    non_negative,
                } => {
                    let mean = if positive {
                        blend(*mean_neg, *mean_pos)
                    } else {
                        *mean_neg
                    };
                    let base = mean + sd * std_normal.sample(&mut rng);
                    for ti in 0..t {
                        let mut v = base + 0.1 * sd * std_normal.sample(&mut rng);
                        if *non_negative {
                            v = v.max(0.0);
                        }
                        x.set3(pi, ti, fi, v);
                    }
                }
                FeatureKind::Binary { p_neg, p_pos } => {
                    let p = if positive { blend(*p_neg, *p_pos) } else { *p_neg };
                    let v = if rng.gen::<f64>() < p.clamp(0.0, 1.0) {
                        1.0
                    } else {
                        0.0
                    };
                    for ti in 0..t {
                        x.set3(pi, ti, fi, v);
                    }
                }
                FeatureKind::Trajectory {
                    base_neg,
                    slope_neg,
                    base_pos,
                    slope_pos,
                    sd,
                } => {
                    let (base, slope) = if positive {
                        (blend(*base_neg, *base_pos), blend(*slope_neg, *slope_pos))
                    } else {
                        (*base_neg, *slope_neg)
                    };
                    let offset = sd * std_normal.sample(&mut rng);
                    for ti in 0..t {
                        let v = base + offset + slope * ti as f64
                            + 0.3 * sd * std_normal.sample(&mut rng);
                        x.set3(pi, ti, fi, v);
                    }
                }
                FeatureKind::RisingFlag {
                    p_neg,
                    p_pos_early,
                    p_pos_late,
                } => {
                    let mut on = false;
                    for ti in 0..t {
                        let frac = if t > 1 { ti as f64 / (t - 1) as f64 } else { 1.0 };
                        let p = if positive {
                            let late = blend(*p_neg, *p_pos_late);
                            let early = blend(*p_neg, *p_pos_early);
                            early + frac * (late - early)
                        } else {
                            *p_neg
                        };
                        if !on && rng.gen::<f64>() < p.clamp(0.0, 1.0) {
                            on = true;
                        }
                        x.set3(pi, ti, fi, if on { 1.0 } else { 0.0 });
                    }
                }
            }
        }
    }

    Ok(CohortDataset {
        x,
        y: labels,
        feature_names: spec.features.iter().map(|f| f.name.clone()).collect(),
        time_labels: (0..t).map(|ti| format!("t{ti}")).collect(),
        patient_ids: (0..n).map(|pi| format!("p{pi:05}")).collect(),
    })
}

/// Fill policy for missing CSV cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImputePolicy {
    /// Previous interval's value; falls back to the feature mean when
    /// no earlier interval exists.
    CarryForward,
    /// Mean of the feature's observed entries.
    Mean,
}

pub fn load_csv(path: &Path, policy: ImputePolicy) -> Result<CohortDataset> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text, policy)
}

pub fn parse_csv(text: &str, policy: ImputePolicy) -> Result<CohortDataset> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Schema("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "patient_id" || cols[1] != "outcome" {
        return Err(Error::Schema(
            "header must start with patient_id,outcome".into(),
        ));
    }

    // parse `<feature>@t<k>` groups: contiguous 0..T-1 per feature
    let mut feature_names: Vec<String> = Vec::new();
    let mut t_len: Option<usize> = None;
    let mut i = 2;
    while i < cols.len() {
        let (name, k) = split_time_column(cols[i])?;
        if k != 0 {
            return Err(Error::Schema(format!(
                "feature '{name}' must start at t0, found t{k} first"
            )));
        }
        let mut t = 1;
        while i + t < cols.len() {
            match split_time_column(cols[i + t]) {
                Ok((n2, k2)) if n2 == name => {
                    if k2 != t {
                        return Err(Error::Schema(format!(
                            "feature '{name}' has a gap: expected t{t}, found t{k2}"
                        )));
                    }
                    t += 1;
                }
                _ => break,
            }
        }
        match t_len {
            None => t_len = Some(t),
            Some(prev) if prev != t => {
                return Err(Error::Schema(format!(
                    "feature '{name}' has {t} intervals, expected {prev}"
                )))
            }
            _ => {}
        }
        if feature_names.iter().any(|f| f == &name) {
            return Err(Error::Schema(format!("duplicate feature '{name}'")));
        }
        feature_names.push(name);
        i += t;
    }
    let t_len = t_len.ok_or_else(|| Error::Schema("no feature columns".into()))?;
    let f_len = feature_names.len();

    let mut patient_ids = Vec::new();
    let mut y = Vec::new();
    // cells[patient][feature][time] with None = missing
    let mut cells: Vec<Vec<Vec<Option<f64>>>> = Vec::new();
    for (row_idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row_no = row_idx + 2; // 1-based, after header
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Data {
                row: row_no,
                column: "<row>".into(),
                message: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        patient_ids.push(fields[0].to_string());
        let label: f64 = fields[1].parse().map_err(|_| Error::Data {
            row: row_no,
            column: "outcome".into(),
            message: format!("non-numeric outcome '{}'", fields[1]),
        })?;
        if label != 0.0 && label != 1.0 {
            return Err(Error::Data {
                row: row_no,
                column: "outcome".into(),
                message: format!("outcome must be 0 or 1, got {label}"),
            });
        }
        y.push(label);
        let mut patient = vec![vec![None; t_len]; f_len];
        for (ci, field) in fields[2..].iter().enumerate() {
            let (fi, ti) = (ci / t_len, ci % t_len);
            if field.is_empty() {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::Data {
                row: row_no,
                column: cols[ci + 2].to_string(),
                message: format!("non-numeric cell '{field}'"),
            })?;
            patient[fi][ti] = Some(v);
        }
        cells.push(patient);
    }

    // per-feature means over observed entries, for fallback fills
    let mut means = vec![0.0; f_len];
    for (fi, mean) in means.iter_mut().enumerate() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for patient in &cells {
            for v in patient[fi].iter().flatten() {
                sum += v;
                count += 1;
            }
        }
        *mean = if count > 0 { sum / count as f64 } else { 0.0 };
    }

    let n = y.len();
    let mut x = Tensor::zeros(&[n, t_len, f_len]);
    for (pi, patient) in cells.iter().enumerate() {
        for fi in 0..f_len {
            let mut prev: Option<f64> = None;
            for ti in 0..t_len {
                let v = match (patient[fi][ti], policy) {
                    (Some(v), _) => v,
                    (None, ImputePolicy::CarryForward) => prev.unwrap_or(means[fi]),
                    (None, ImputePolicy::Mean) => means[fi],
                };
                prev = Some(v);
                x.set3(pi, ti, fi, v);
            }
        }
    }

    Ok(CohortDataset {
        x,
        y,
        feature_names,
        time_labels: (0..t_len).map(|ti| format!("t{ti}")).collect(),
        patient_ids,
    })
}

fn split_time_column(col: &str) -> Result<(String, usize)> {
    let (name, rest) = col
        .rsplit_once("@t")
        .ok_or_else(|| Error::Schema(format!("column '{col}' is not of the form feature@t<k>")))?;
    let k: usize = rest
        .parse()
        .map_err(|_| Error::Schema(format!("column '{col}' has a non-numeric time index")))?;
    Ok((name.to_string(), k))
}

/// Per-feature normalization policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPolicy {
    Zscore,
    Log1pZscore,
    None,
}

/// Policies keyed off the generator schema: claims are log-compressed,
/// other continuous features z-scored, flags untouched.
pub fn default_policies(features: &[FeatureDef]) -> Vec<NormPolicy> {
    features
        .iter()
        .map(|f| match &f.kind {
            FeatureKind::Binary { .. } | FeatureKind::RisingFlag { .. } => NormPolicy::None,
            FeatureKind::Continuous { .. } if f.group == FeatureGroup::Claims => {
                NormPolicy::Log1pZscore
            }
            _ => NormPolicy::Zscore,
        })
        .collect()
}

/// Fitted normalization statistics. Fit on the training split only;
/// apply to every split; keeps what it needs to invert.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Preprocessor {
    pub policies: Vec<NormPolicy>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Feature names whose variance was clamped to 1.
    pub clamped: Vec<String>,
}

impl Preprocessor {
    pub fn fit(train: &CohortDataset, policies: Vec<NormPolicy>) -> Result<Self> {
        let f_len = train.n_features();
        if policies.len() != f_len {
            return Err(Error::InvalidArgument(format!(
                "{} policies for {} features",
                policies.len(),
                f_len
            )));
        }
        let (n, t) = (train.n_patients(), train.n_timesteps());
        let mut mean = vec![0.0; f_len];
        let mut std = vec![1.0; f_len];
        let mut clamped = Vec::new();
        for fi in 0..f_len {
            if policies[fi] == NormPolicy::None {
                mean[fi] = 0.0;
                std[fi] = 1.0;
                continue;
            }
            let mut vals = Vec::with_capacity(n * t);
            for pi in 0..n {
                for ti in 0..t {
                    let mut v = train.x.at3(pi, ti, fi);
                    if policies[fi] == NormPolicy::Log1pZscore {
                        v = v.max(-0.999).ln_1p();
                    }
                    vals.push(v);
                }
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
            mean[fi] = m;
            if var.sqrt() < 1e-12 {
                std[fi] = 1.0;
                clamped.push(train.feature_names[fi].clone());
            } else {
                std[fi] = var.sqrt();
            }
        }
        Ok(Preprocessor {
            policies,
            mean,
            std,
            clamped,
        })
    }

    pub fn apply(&self, ds: &CohortDataset) -> CohortDataset {
        let mut out = ds.clone();
        let (n, t, f) = (ds.n_patients(), ds.n_timesteps(), ds.n_features());
        for pi in 0..n {
            for ti in 0..t {
                for fi in 0..f {
                    let raw = ds.x.at3(pi, ti, fi);
                    let v = match self.policies[fi] {
                        NormPolicy::None => raw,
                        NormPolicy::Zscore => (raw - self.mean[fi]) / self.std[fi],
                        NormPolicy::Log1pZscore => {
                            (raw.max(-0.999).ln_1p() - self.mean[fi]) / self.std[fi]
                        }
                    };
                    out.x.set3(pi, ti, fi, v);
                }
            }
        }
        out
    }

    pub fn invert(&self, ds: &CohortDataset) -> CohortDataset {
        let mut out = ds.clone();
        let (n, t, f) = (ds.n_patients(), ds.n_timesteps(), ds.n_features());
        for pi in 0..n {
            for ti in 0..t {
                for fi in 0..f {
                    let v = ds.x.at3(pi, ti, fi);
                    let raw = match self.policies[fi] {
                        NormPolicy::None => v,
                        NormPolicy::Zscore => v * self.std[fi] + self.mean[fi],
                        NormPolicy::Log1pZscore => {
                            (v * self.std[fi] + self.mean[fi]).exp_m1()
                        }
                    };
                    out.x.set3(pi, ti, fi, raw);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.7,
            val: 0.15,
            test: 0.15,
            stratified: true,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        if self.train <= 0.0 || self.val < 0.0 || self.test < 0.0 {
            return Err(Error::InvalidArgument("negative split fraction".into()));
        }
        Ok(())
    }
}

/// Largest-remainder allocation of `n` items over the three fractions.
fn allocate(n: usize, fracs: [f64; 3]) -> [usize; 3] {
    let ideal: Vec<f64> = fracs.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|v| v.floor() as usize).collect();
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - ideal[a].floor();
        let rb = ideal[b] - ideal[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in &order {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    [counts[0], counts[1], counts[2]]
}

/// Disjoint, exhaustive train/val/test split. Stratified mode splits
/// each outcome class separately and requires every nonempty split to
/// keep at least one positive.
pub fn split(
    ds: &CohortDataset,
    spec: &SplitSpec,
) -> Result<(CohortDataset, CohortDataset, CohortDataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let fracs = [spec.train, spec.val, spec.test];
    let mut buckets: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];

    if spec.stratified {
        for class in [1.0, 0.0] {
            let mut idx: Vec<usize> = (0..ds.n_patients()).filter(|&i| ds.y[i] == class).collect();
            idx.shuffle(&mut rng);
            let counts = allocate(idx.len(), fracs);
            if class == 1.0 {
                for (bi, &c) in counts.iter().enumerate() {
                    if c == 0 && fracs[bi] > 0.0 {
                        return Err(Error::InvalidArgument(format!(
                            "stratified split leaves no positive patients in split {bi} \
                             ({} positives total)",
                            idx.len()
                        )));
                    }
                }
            }
            let mut start = 0;
            for (bi, &c) in counts.iter().enumerate() {
                buckets[bi].extend_from_slice(&idx[start..start + c]);
                start += c;
            }
        }
        for b in &mut buckets {
            b.sort_unstable();
        }
    } else {
        let mut idx: Vec<usize> = (0..ds.n_patients()).collect();
        idx.shuffle(&mut rng);
        let counts = allocate(idx.len(), fracs);
        let mut start = 0;
        for (bi, &c) in counts.iter().enumerate() {
            let mut part = idx[start..start + c].to_vec();
            part.sort_unstable();
            buckets[bi] = part;
            start += c;
        }
    }

    Ok((
        ds.subset(&buckets[0]),
        ds.subset(&buckets[1]),
        ds.subset(&buckets[2]),
    ))
}
