//! Three explainability levels over forward-pass artifacts: temporal
//! attention profiles, feature importance rankings, and cross-temporal
//! chained influence, plus the influence hierarchy graph and its
//! DOT/JSON exports.
//!
//! All functions here are pure: they read the contribution matrix
//! C[B,T,F] and the aggregated attention A[B,T,T] (source-major:
//! A[b,t,t'] is the weight of query position t' on source position t)
//! and never touch model state.
//!
//! ```
//! use tfcam::explain::{build_influence_hierarchy, chained_influence,
//!                      InfluenceQuery, InfluenceRoot, Scope};
//! use tfcam::tensor::Tensor;
//!
//! // one patient, T=3, F=2
//! let c = Tensor::new(vec![1, 3, 2], vec![0.5, -0.2, 0.1, 0.3, 2.0, -1.0]).unwrap();
//! let a = Tensor::new(vec![1, 3, 3],
//!                     vec![1.0, 0.4, 0.2, 0.0, 0.6, 0.3, 0.0, 0.0, 0.5]).unwrap();
//!
//! // I(t=1, i=1; t'=2, j=0) = C[1,1] · A[1,2] · C[2,0]
//! let i = chained_influence(&c, &a, 0, 1, 1, 2, 0).unwrap();
//! assert!((i - 0.3 * 0.3 * 2.0).abs() < 1e-12);
//!
//! let query = InfluenceQuery {
//!     root: InfluenceRoot::Prediction,
//!     depth: 2,
//!     fan_out: 1,
//!     scope: Scope::Cohort,
//! };
//! let names = vec!["a".to_string(), "b".to_string()];
//! let graph = build_influence_hierarchy(&query, &c, &a, &names).unwrap();
//! assert_eq!(graph.nodes[1].id, "a@t2"); // strongest final-step contributor
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean over the layer and head axes: [B,L,H,T,T] → [B,T,T].
pub fn aggregate_attention(per_layer_head: &Tensor) -> Result<Tensor> {
    let s = per_layer_head.shape();
    if s.len() != 5 {
        return Err(Error::shape("aggregate_attention", s, &[0, 0, 0, 0, 0]));
    }
    let (b, l, h, t) = (s[0], s[1], s[2], s[3]);
    if s[4] != t {
        return Err(Error::shape("aggregate_attention", s, &[b, l, h, t, t]));
    }
    if l == 0 || h == 0 {
        return Err(Error::InvalidArgument(
            "aggregate_attention: empty layer or head axis".into(),
        ));
    }
    let mut out = Tensor::zeros(&[b, t, t]);
    let scale = 1.0 / (l * h) as f64;
    let data = per_layer_head.data();
    let out_data = out.data_mut();
    for bi in 0..b {
        for li in 0..l {
            for hi in 0..h {
                let base = ((bi * l + li) * h + hi) * t * t;
                let out_base = bi * t * t;
                for k in 0..t * t {
                    out_data[out_base + k] += scale * data[base + k];
                }
            }
        }
    }
    Ok(out)
}

fn check_influence_indices(
    c: &Tensor,
    a: &Tensor,
    t: usize,
    i: usize,
    t_later: usize,
    j: usize,
) -> Result<()> {
    let (tt, f) = (c.shape()[1], c.shape()[2]);
    if a.shape() != [c.shape()[0], tt, tt] {
        return Err(Error::shape("chained_influence A", a.shape(), &[c.shape()[0], tt, tt]));
    }
    if t >= t_later {
        return Err(Error::InvalidArgument(format!(
            "chained influence requires t < t', got t={t}, t'={t_later}"
        )));
    }
    if t_later >= tt || i >= f || j >= f {
        return Err(Error::InvalidArgument(format!(
            "influence indices (t={t},i={i},t'={t_later},j={j}) out of range for T={tt}, F={f}"
        )));
    }
    Ok(())
}

/// I(t,i;t',j) = C[b,t,i] · A[b,t,t'] · C[b,t',j] for one patient.
pub fn chained_influence(
    c: &Tensor,
    a: &Tensor,
    patient: usize,
    t: usize,
    i: usize,
    t_later: usize,
    j: usize,
) -> Result<f64> {
    check_influence_indices(c, a, t, i, t_later, j)?;
    if patient >= c.shape()[0] {
        return Err(Error::InvalidArgument(format!(
            "patient index {patient} out of range"
        )));
    }
    Ok(c.at3(patient, t, i) * a.at3(patient, t, t_later) * c.at3(patient, t_later, j))
}

/// Mean of the per-patient products over the whole batch.
pub fn cohort_influence(
    c: &Tensor,
    a: &Tensor,
    t: usize,
    i: usize,
    t_later: usize,
    j: usize,
) -> Result<f64> {
    check_influence_indices(c, a, t, i, t_later, j)?;
    let b = c.shape()[0];
    let mut sum = 0.0;
    for bi in 0..b {
        sum += c.at3(bi, t, i) * a.at3(bi, t, t_later) * c.at3(bi, t_later, j);
    }
    Ok(sum / b as f64)
}

/// Stratified mean temporal attention curves. A crossing index t means
/// the positive and negative mean curves swap order between t and t+1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemporalProfile {
    pub mean_alpha_all: Vec<f64>,
    pub mean_alpha_positive: Option<Vec<f64>>,
    pub mean_alpha_negative: Option<Vec<f64>>,
    pub n_all: usize,
    pub n_positive: usize,
    pub n_negative: usize,
    pub crossings: Vec<usize>,
    pub warnings: Vec<String>,
}

fn mean_rows(alpha: &Tensor, rows: &[usize]) -> Vec<f64> {
    let t = alpha.shape()[1];
    let mut m = vec![0.0; t];
    for &r in rows {
        for (ti, v) in m.iter_mut().enumerate() {
            *v += alpha.at2(r, ti);
        }
    }
    m.iter_mut().for_each(|v| *v /= rows.len() as f64);
    m
}

/// Builds the temporal profile from α[B,T] and the outcome labels.
pub fn temporal_profile(alpha: &Tensor, labels: &[f64]) -> Result<TemporalProfile> {
    if alpha.rank() != 2 || alpha.shape()[0] != labels.len() || labels.is_empty() {
        return Err(Error::InvalidArgument(
            "temporal_profile: alpha must be [B,T] with one label per row".into(),
        ));
    }
    let all: Vec<usize> = (0..labels.len()).collect();
    let pos: Vec<usize> = all.iter().copied().filter(|&i| labels[i] == 1.0).collect();
    let neg: Vec<usize> = all.iter().copied().filter(|&i| labels[i] == 0.0).collect();

    let mut warnings = Vec::new();
    let mean_alpha_positive = if pos.is_empty() {
        warnings.push("no positive patients; positive stratum omitted".to_string());
        None
    } else {
        Some(mean_rows(alpha, &pos))
    };
    let mean_alpha_negative = if neg.is_empty() {
        warnings.push("no negative patients; negative stratum omitted".to_string());
        None
    } else {
        Some(mean_rows(alpha, &neg))
    };

    // sign changes of (pos − neg), skipping exact ties
    let mut crossings = Vec::new();
    if let (Some(p), Some(n)) = (&mean_alpha_positive, &mean_alpha_negative) {
        let mut last_sign = 0.0;
        for ti in 0..p.len() {
            let sign = (p[ti] - n[ti]).signum();
            if sign != 0.0 {
                if last_sign != 0.0 && sign != last_sign {
                    crossings.push(ti - 1);
                }
                last_sign = sign;
            }
        }
    }

    Ok(TemporalProfile {
        mean_alpha_all: mean_rows(alpha, &all),
        mean_alpha_positive,
        mean_alpha_negative,
        n_all: all.len(),
        n_positive: pos.len(),
        n_negative: neg.len(),
        crossings,
        warnings,
    })
}

/// Ranked feature importance: mean |C[b,t,i]| over patients and time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureImportance {
    /// (feature name, score ≥ 0), descending; ties lexicographic.
    pub scores: Vec<(String, f64)>,
    pub aggregation: String,
}

pub fn feature_importance(c: &Tensor, feature_names: &[String]) -> Result<FeatureImportance> {
    let s = c.shape();
    if s.len() != 3 || s[2] != feature_names.len() {
        return Err(Error::InvalidArgument(format!(
            "feature_importance: C shape {s:?} does not match {} feature names",
            feature_names.len()
        )));
    }
    let (b, t) = (s[0], s[1]);
    if b == 0 {
        return Err(Error::InvalidArgument("feature_importance: empty cohort".into()));
    }
    let mut scores: Vec<(String, f64)> = feature_names
        .iter()
        .enumerate()
        .map(|(fi, name)| {
            let mut sum = 0.0;
            for bi in 0..b {
                for ti in 0..t {
                    sum += c.at3(bi, ti, fi).abs();
                }
            }
            (name.clone(), sum / (b * t) as f64)
        })
        .collect();
    scores.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    Ok(FeatureImportance {
        scores,
        aggregation: "mean absolute contribution over patients and time".into(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InfluenceRoot {
    Prediction,
    Feature { time: usize, feature: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scope {
    Cohort,
    Patient { id: String },
}

/// A hierarchy trace request. `scope` is carried as metadata: for
/// patient scope the caller passes C and A already restricted to that
/// patient's row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceQuery {
    pub root: InfluenceRoot,
    pub depth: usize,
    pub fan_out: usize,
    pub scope: Scope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    /// "prediction" or "<feature>@t<k>".
    pub id: String,
    pub time: Option<usize>,
    pub feature: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    /// Earlier node; edges always point forward in time.
    pub source: String,
    pub target: String,
    /// Signed influence (or signed contribution for prediction-root
    /// edges); sign is preserved, ranking used |weight|.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    pub query: InfluenceQuery,
    /// True when the requested depth ran out of history before
    /// completing.
    pub truncated: bool,
}

fn node_id(time: usize, feature: &str) -> String {
    format!("{feature}@t{time}")
}

/// Mean signed C[·,t,i] over the batch.
fn mean_contribution(c: &Tensor, t: usize, i: usize) -> f64 {
    let b = c.shape()[0];
    (0..b).map(|bi| c.at3(bi, t, i)).sum::<f64>() / b as f64
}

/// Top-k candidates by |score|, ties broken lexicographically by name.
/// Input: (feature index, signed score); output retains signed score.
fn top_k(mut candidates: Vec<(usize, f64)>, k: usize, names: &[String]) -> Vec<(usize, f64)> {
    candidates.sort_by(|a, b| {
        b.1.abs()
            .partial_cmp(&a.1.abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| names[a.0].cmp(&names[b.0]))
    });
    candidates.truncate(k);
    candidates
}

/// Traces the influence hierarchy backward in time from the query
/// root. Expansion is breadth-first, one time step per level: a node
/// (t',j) gains the top-k features i at t'−1 ranked by the absolute
/// batch-mean of I(t'−1,i;t',j). Nodes reached twice are shared, not
/// duplicated, so the graph is a DAG bounded by 1 + k + k² + … + k^d
/// nodes.
pub fn build_influence_hierarchy(
    query: &InfluenceQuery,
    c: &Tensor,
    a: &Tensor,
    feature_names: &[String],
) -> Result<InfluenceGraph> {
    let s = c.shape();
    if s.len() != 3 || s[2] != feature_names.len() {
        return Err(Error::InvalidArgument(format!(
            "hierarchy: C shape {s:?} does not match {} feature names",
            feature_names.len()
        )));
    }
    let (t_len, f_len) = (s[1], s[2]);
    if a.shape() != [s[0], t_len, t_len] {
        return Err(Error::shape("hierarchy A", a.shape(), &[s[0], t_len, t_len]));
    }
    if query.depth == 0 || query.fan_out == 0 {
        return Err(Error::InvalidArgument(
            "depth and fan_out must be ≥ 1".into(),
        ));
    }
    if query.depth > t_len - 1 {
        return Err(Error::InvalidArgument(format!(
            "depth {} exceeds T−1 = {}",
            query.depth,
            t_len - 1
        )));
    }

    let mut nodes: Vec<GraphNode> = Vec::new();
    let mut edges: Vec<GraphEdge> = Vec::new();
    let mut seen: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();
    let push_node = |nodes: &mut Vec<GraphNode>,
                         seen: &mut std::collections::BTreeSet<String>,
                         node: GraphNode| {
        if seen.insert(node.id.clone()) {
            nodes.push(node);
        }
    };

    // frontier of (time, feature index) nodes still to expand
    let mut frontier: Vec<(usize, usize)> = Vec::new();
    let mut remaining_depth = query.depth;

    match &query.root {
        InfluenceRoot::Prediction => {
            push_node(
                &mut nodes,
                &mut seen,
                GraphNode {
                    id: "prediction".into(),
                    time: None,
                    feature: None,
                },
            );
            let last = t_len - 1;
            let candidates: Vec<(usize, f64)> = (0..f_len)
                .map(|i| (i, mean_contribution(c, last, i)))
                .collect();
            for (i, w) in top_k(candidates, query.fan_out, feature_names) {
                let id = node_id(last, &feature_names[i]);
                push_node(
                    &mut nodes,
                    &mut seen,
                    GraphNode {
                        id: id.clone(),
                        time: Some(last),
                        feature: Some(feature_names[i].clone()),
                    },
                );
                edges.push(GraphEdge {
                    source: id,
                    target: "prediction".into(),
                    weight: w,
                });
                frontier.push((last, i));
            }
            remaining_depth -= 1;
        }
        InfluenceRoot::Feature { time, feature } => {
            let fi = feature_names
                .iter()
                .position(|n| n == feature)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("unknown root feature '{feature}'"))
                })?;
            if *time >= t_len {
                return Err(Error::InvalidArgument(format!(
                    "root time t{time} out of range (T = {t_len})"
                )));
            }
            push_node(
                &mut nodes,
                &mut seen,
                GraphNode {
                    id: node_id(*time, feature),
                    time: Some(*time),
                    feature: Some(feature.clone()),
                },
            );
            frontier.push((*time, fi));
        }
    }

    let mut truncated = false;
    while remaining_depth > 0 && !frontier.is_empty() {
        let mut next: Vec<(usize, usize)> = Vec::new();
        let mut expanded: std::collections::BTreeSet<(usize, usize)> =
            std::collections::BTreeSet::new();
        for &(t_cur, j) in &frontier {
            if !expanded.insert((t_cur, j)) {
                continue;
            }
            if t_cur == 0 {
                truncated = true;
                continue;
            }
            let t_prev = t_cur - 1;
            let candidates: Vec<(usize, f64)> = (0..f_len)
                .map(|i| {
                    let w = cohort_influence(c, a, t_prev, i, t_cur, j)
                        .expect("indices validated above");
                    (i, w)
                })
                .collect();
            let target_id = node_id(t_cur, &feature_names[j]);
            for (i, w) in top_k(candidates, query.fan_out, feature_names) {
                let id = node_id(t_prev, &feature_names[i]);
                push_node(
                    &mut nodes,
                    &mut seen,
                    GraphNode {
                        id: id.clone(),
                        time: Some(t_prev),
                        feature: Some(feature_names[i].clone()),
                    },
                );
                edges.push(GraphEdge {
                    source: id,
                    target: target_id.clone(),
                    weight: w,
                });
                next.push((t_prev, i));
            }
        }
        frontier = next;
        remaining_depth -= 1;
    }

    Ok(InfluenceGraph {
        nodes,
        edges,
        query: query.clone(),
        truncated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    Dot,
    Json,
}

impl std::str::FromStr for GraphFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(GraphFormat::Dot),
            "json" => Ok(GraphFormat::Json),
            other => Err(Error::InvalidArgument(format!(
                "unknown graph format '{other}', expected dot|json"
            ))),
        }
    }
}

/// Serializes a graph. DOT nodes are labeled "feature@t"; edges are
/// colored blue for positive weight, red for negative. JSON has stable
/// key order and round-trips losslessly.
pub fn export_graph(graph: &InfluenceGraph, format: GraphFormat) -> Result<Vec<u8>> {
    match format {
        GraphFormat::Json => serde_json::to_vec_pretty(graph)
            .map(|mut v| {
                v.push(b'\n');
                v
            })
            .map_err(|e| Error::InvalidArgument(format!("json export: {e}"))),
        GraphFormat::Dot => {
            let mut out = String::from("digraph influence {\n  rankdir=LR;\n");
            for node in &graph.nodes {
                out.push_str(&format!("  \"{}\";\n", node.id));
            }
            for edge in &graph.edges {
                let color = if edge.weight >= 0.0 { "blue" } else { "red" };
                out.push_str(&format!(
                    "  \"{}\" -> \"{}\" [color={color}, label=\"{:.4}\"];\n",
                    edge.source, edge.target, edge.weight
                ));
            }
            out.push_str("}\n");
            Ok(out.into_bytes())
        }
    }
}

/// α as CSV: one row per patient, columns t0..t{T−1}.
pub fn alpha_csv(alpha: &Tensor, patient_ids: &[String]) -> String {
    let t = alpha.shape()[1];
    let mut out = String::from("patient_id");
    for ti in 0..t {
        out.push_str(&format!(",t{ti}"));
    }
    out.push('\n');
    for (pi, id) in patient_ids.iter().enumerate() {
        out.push_str(id);
        for ti in 0..t {
            out.push_str(&format!(",{}", alpha.at2(pi, ti)));
        }
        out.push('\n');
    }
    out
}

/// Importance table as CSV: feature,score, already ranked.
pub fn importance_csv(importance: &FeatureImportance) -> String {
    let mut out = String::from("feature,score\n");
    for (name, score) in &importance.scores {
        out.push_str(&format!("{name},{score}\n"));
    }
    out
}

/// Aggregated attention as CSV: one T×T block per patient, rows are
/// source positions, columns query positions.
pub fn attention_csv(a: &Tensor, patient_ids: &[String]) -> String {
    let t = a.shape()[1];
    let mut out = String::from("patient_id,source");
    for ti in 0..t {
        out.push_str(&format!(",q{ti}"));
    }
    out.push('\n');
    for (pi, id) in patient_ids.iter().enumerate() {
        for src in 0..t {
            out.push_str(&format!("{id},t{src}"));
            for dst in 0..t {
                out.push_str(&format!(",{}", a.at3(pi, src, dst)));
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn aggregate_single_layer_head_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, &[2, 1, 1, 3, 3]);
        let out = aggregate_attention(&x).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn aggregate_two_heads_is_half_sum() {
        let p = [0.2, 0.8, 0.5, 0.5];
        let q = [0.6, 0.4, 0.1, 0.9];
        let mut data = p.to_vec();
        data.extend(q);
        let x = Tensor::new(vec![1, 1, 2, 2, 2], data).unwrap();
        let out = aggregate_attention(&x).unwrap();
        for k in 0..4 {
            assert!((out.data()[k] - (p[k] + q[k]) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn aggregate_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (b, l, h, t) = (2, 2, 3, 4);
        let x = rand_tensor(&mut rng, &[b, l, h, t, t]);
        let out = aggregate_attention(&x).unwrap();
        for bi in 0..b {
            for src in 0..t {
                for dst in 0..t {
                    let mut sum = 0.0;
                    for li in 0..l {
                        for hi in 0..h {
                            let idx = ((((bi * l + li) * h + hi) * t) + src) * t + dst;
                            sum += x.data()[idx];
                        }
                    }
                    let expected = sum / (l * h) as f64;
                    assert!((out.at3(bi, src, dst) - expected).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn aggregate_preserves_query_normalization() {
        // per-head columns normalized over sources → aggregated too
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (b, l, h, t) = (1, 2, 2, 3);
        let mut x = Tensor::zeros(&[b, l, h, t, t]);
        for li in 0..l {
            for hi in 0..h {
                for dst in 0..t {
                    let raw: Vec<f64> = (0..t).map(|_| rng.gen::<f64>() + 0.1).collect();
                    let sum: f64 = raw.iter().sum();
                    for (src, v) in raw.iter().enumerate() {
                        let idx = ((((li) * h + hi) * t) + src) * t + dst;
                        x.data_mut()[idx] = v / sum;
                    }
                }
            }
        }
        let a = aggregate_attention(&x).unwrap();
        for dst in 0..t {
            let col: f64 = (0..t).map(|src| a.at3(0, src, dst)).sum();
            assert!((col - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn influence_zero_factor_gives_zero() {
        let c = Tensor::zeros(&[1, 3, 2]);
        let mut a = Tensor::zeros(&[1, 3, 3]);
        a.data_mut().iter_mut().for_each(|v| *v = 1.0);
        assert_eq!(chained_influence(&c, &a, 0, 0, 0, 2, 1).unwrap(), 0.0);
    }

    #[test]
    fn influence_unit_factors_give_one() {
        let mut c = Tensor::zeros(&[1, 2, 1]);
        c.set3(0, 0, 0, 1.0);
        c.set3(0, 1, 0, 1.0);
        let mut a = Tensor::zeros(&[1, 2, 2]);
        a.set3(0, 0, 1, 1.0);
        assert_eq!(chained_influence(&c, &a, 0, 0, 0, 1, 0).unwrap(), 1.0);
    }

    #[test]
    fn influence_matches_direct_product_on_random_tuples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (b, t, f) = (5, 6, 7);
        let c = rand_tensor(&mut rng, &[b, t, f]);
        let a = rand_tensor(&mut rng, &[b, t, t]);
        for _ in 0..1000 {
            let t0 = rng.gen_range(0..t - 1);
            let t1 = rng.gen_range(t0 + 1..t);
            let (i, j) = (rng.gen_range(0..f), rng.gen_range(0..f));
            let bi = rng.gen_range(0..b);
            let got = chained_influence(&c, &a, bi, t0, i, t1, j).unwrap();
            let want = c.at3(bi, t0, i) * a.at3(bi, t0, t1) * c.at3(bi, t1, j);
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn influence_rejects_reversed_time_order() {
        let c = Tensor::zeros(&[1, 3, 2]);
        let a = Tensor::zeros(&[1, 3, 3]);
        assert!(chained_influence(&c, &a, 0, 2, 0, 1, 0).is_err());
        assert!(chained_influence(&c, &a, 0, 1, 0, 1, 0).is_err());
    }

    #[test]
    fn cohort_influence_is_mean_of_patient_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = rand_tensor(&mut rng, &[4, 3, 2]);
        let a = rand_tensor(&mut rng, &[4, 3, 3]);
        let got = cohort_influence(&c, &a, 0, 1, 2, 0).unwrap();
        let want: f64 = (0..4)
            .map(|bi| chained_influence(&c, &a, bi, 0, 1, 2, 0).unwrap())
            .sum::<f64>()
            / 4.0;
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn profile_single_patient_curves_coincide() {
        let alpha = Tensor::new(vec![1, 3], vec![0.2, 0.3, 0.5]).unwrap();
        let p = temporal_profile(&alpha, &[1.0]).unwrap();
        assert_eq!(p.mean_alpha_all, vec![0.2, 0.3, 0.5]);
        assert_eq!(p.mean_alpha_positive, Some(vec![0.2, 0.3, 0.5]));
        assert_eq!(p.mean_alpha_negative, None);
        assert_eq!(p.warnings.len(), 1);
        assert!(p.crossings.is_empty());
    }

    #[test]
    fn profile_hand_constructed_crossing() {
        let alpha = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let p = temporal_profile(&alpha, &[1.0, 0.0]).unwrap();
        assert_eq!(p.crossings, vec![0]);
    }

    #[test]
    fn profile_uniform_alpha_has_no_crossings() {
        let alpha = Tensor::new(vec![4, 2], vec![0.5; 8]).unwrap();
        let labels = [1.0, 0.0, 1.0, 0.0];
        let p = temporal_profile(&alpha, &labels).unwrap();
        assert!(p.crossings.is_empty());
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn profile_mean_stays_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (b, t) = (10, 5);
        let mut alpha = Tensor::zeros(&[b, t]);
        for bi in 0..b {
            let raw: Vec<f64> = (0..t).map(|_| rng.gen::<f64>() + 0.01).collect();
            let sum: f64 = raw.iter().sum();
            for (ti, v) in raw.iter().enumerate() {
                alpha.set2(bi, ti, v / sum);
            }
        }
        let labels: Vec<f64> = (0..b).map(|i| (i % 2) as f64).collect();
        let p = temporal_profile(&alpha, &labels).unwrap();
        for curve in [
            Some(&p.mean_alpha_all),
            p.mean_alpha_positive.as_ref(),
            p.mean_alpha_negative.as_ref(),
        ]
        .into_iter()
        .flatten()
        {
            assert!((curve.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn importance_zero_matrix_sorts_lexicographically() {
        let c = Tensor::zeros(&[2, 2, 3]);
        let imp = feature_importance(&c, &names(&["c", "a", "b"])).unwrap();
        let order: Vec<&str> = imp.scores.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(order, vec!["a", "b", "c"]);
        assert!(imp.scores.iter().all(|(_, s)| *s == 0.0));
    }

    #[test]
    fn importance_single_entry_scales_by_cells() {
        let mut c = Tensor::zeros(&[1, 1, 2]);
        c.set3(0, 0, 1, 5.0);
        let imp = feature_importance(&c, &names(&["x", "y"])).unwrap();
        assert_eq!(imp.scores[0], ("y".to_string(), 5.0));
    }

    #[test]
    fn importance_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (b, t, f) = (3, 2, 4);
        let c = rand_tensor(&mut rng, &[b, t, f]);
        let feature_names = names(&["f0", "f1", "f2", "f3"]);
        let imp = feature_importance(&c, &feature_names).unwrap();
        for (name, score) in &imp.scores {
            let fi = feature_names.iter().position(|n| n == name).unwrap();
            let mut sum = 0.0;
            for bi in 0..b {
                for ti in 0..t {
                    sum += c.at3(bi, ti, fi).abs();
                }
            }
            assert!((score - sum / (b * t) as f64).abs() < 1e-15);
        }
        for w in imp.scores.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
    }

    fn toy_query(depth: usize, fan_out: usize) -> InfluenceQuery {
        InfluenceQuery {
            root: InfluenceRoot::Prediction,
            depth,
            fan_out,
            scope: Scope::Cohort,
        }
    }

    /// T=3, F=2 fixture with a hand-traced expected graph.
    ///
    /// C (one patient):        A (source rows, query columns):
    ///   t0: [ 0.5, −0.2]        [1.0  0.4  0.2]
    ///   t1: [ 0.1,  0.3]        [ 0   0.6  0.3]
    ///   t2: [ 2.0, −1.0]        [ 0    0   0.5]
    ///
    /// Root=prediction, depth 2, k=1.
    /// Level 1: |C[·,2,·]| = {a: 2.0, b: 1.0} → a@t2, edge weight +2.0.
    /// Level 2 from (t2,a): I(1,i;2,a) = C[1,i]·A[1,2]·C[2,a]
    ///   a: 0.1·0.3·2.0 = 0.06;  b: 0.3·0.3·2.0 = 0.18 → b@t1, +0.18.
    fn toy_fixture() -> (Tensor, Tensor, Vec<String>) {
        let c = Tensor::new(
            vec![1, 3, 2],
            vec![0.5, -0.2, 0.1, 0.3, 2.0, -1.0],
        )
        .unwrap();
        let a = Tensor::new(
            vec![1, 3, 3],
            vec![1.0, 0.4, 0.2, 0.0, 0.6, 0.3, 0.0, 0.0, 0.5],
        )
        .unwrap();
        (c, a, names(&["a", "b"]))
    }

    #[test]
    fn hierarchy_matches_hand_trace() {
        let (c, a, feature_names) = toy_fixture();
        let g = build_influence_hierarchy(&toy_query(2, 1), &c, &a, &feature_names).unwrap();
        let ids: Vec<&str> = g.nodes.iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, vec!["prediction", "a@t2", "b@t1"]);
        assert_eq!(g.edges.len(), 2);
        assert_eq!((g.edges[0].source.as_str(), g.edges[0].target.as_str()), ("a@t2", "prediction"));
        assert!((g.edges[0].weight - 2.0).abs() < 1e-12);
        assert_eq!((g.edges[1].source.as_str(), g.edges[1].target.as_str()), ("b@t1", "a@t2"));
        assert!((g.edges[1].weight - 0.18).abs() < 1e-12);
        assert!(!g.truncated);
    }

    #[test]
    fn hierarchy_depth_one_single_feature_sign() {
        let mut c = Tensor::zeros(&[1, 2, 2]);
        c.set3(0, 1, 0, -3.0);
        let a = Tensor::zeros(&[1, 2, 2]);
        let g = build_influence_hierarchy(&toy_query(1, 1), &c, &a, &names(&["a", "b"])).unwrap();
        assert_eq!(g.nodes.len(), 2);
        assert_eq!(g.edges.len(), 1);
        assert!(g.edges[0].weight < 0.0);
    }

    #[test]
    fn hierarchy_structural_bound_and_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (b, t, f) = (4, 8, 6);
        let c = rand_tensor(&mut rng, &[b, t, f]);
        let a = rand_tensor(&mut rng, &[b, t, t]);
        let feature_names: Vec<String> = (0..f).map(|i| format!("f{i}")).collect();
        let g = build_influence_hierarchy(&toy_query(3, 3), &c, &a, &feature_names).unwrap();
        assert!(g.nodes.len() <= 40, "{} nodes", g.nodes.len());
        let time_of = |id: &str| {
            g.nodes
                .iter()
                .find(|n| n.id == id)
                .and_then(|n| n.time)
        };
        for e in &g.edges {
            match (time_of(&e.source), time_of(&e.target)) {
                (Some(src), Some(dst)) => assert!(src < dst, "{} -> {}", e.source, e.target),
                (Some(_), None) => {} // into the prediction root
                other => panic!("bad edge endpoint times {other:?}"),
            }
        }
    }

    #[test]
    fn hierarchy_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = rand_tensor(&mut rng, &[3, 5, 4]);
        let a = rand_tensor(&mut rng, &[3, 5, 5]);
        let feature_names: Vec<String> = (0..4).map(|i| format!("f{i}")).collect();
        let g1 = build_influence_hierarchy(&toy_query(3, 2), &c, &a, &feature_names).unwrap();
        let g2 = build_influence_hierarchy(&toy_query(3, 2), &c, &a, &feature_names).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn hierarchy_topology_invariant_under_positive_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let c = rand_tensor(&mut rng, &[2, 5, 4]);
        let a = rand_tensor(&mut rng, &[2, 5, 5]);
        let feature_names: Vec<String> = (0..4).map(|i| format!("f{i}")).collect();
        let g1 = build_influence_hierarchy(&toy_query(2, 2), &c, &a, &feature_names).unwrap();
        let scaled = Tensor::new(c.shape().to_vec(), c.data().iter().map(|v| v * 3.0).collect()).unwrap();
        let g2 = build_influence_hierarchy(&toy_query(2, 2), &scaled, &a, &feature_names).unwrap();
        assert_eq!(g1.nodes, g2.nodes);
        for (e1, e2) in g1.edges.iter().zip(&g2.edges) {
            assert_eq!((e1.source.as_str(), e1.target.as_str()), (e2.source.as_str(), e2.target.as_str()));
            // prediction-root edges scale by λ, influence edges by λ²
            let ratio = e2.weight / e1.weight;
            assert!((ratio - 3.0).abs() < 1e-9 || (ratio - 9.0).abs() < 1e-9, "ratio {ratio}");
        }
    }

    #[test]
    fn hierarchy_truncates_at_start_of_history() {
        let (c, a, feature_names) = toy_fixture();
        let q = InfluenceQuery {
            root: InfluenceRoot::Feature {
                time: 1,
                feature: "a".into(),
            },
            depth: 2,
            fan_out: 1,
            scope: Scope::Cohort,
        };
        let g = build_influence_hierarchy(&q, &c, &a, &feature_names).unwrap();
        assert!(g.truncated);
        // only one level could be expanded: root + its t0 child
        assert_eq!(g.nodes.len(), 2);
    }

    #[test]
    fn hierarchy_rejects_excessive_depth() {
        let (c, a, feature_names) = toy_fixture();
        assert!(build_influence_hierarchy(&toy_query(3, 1), &c, &a, &feature_names).is_err());
    }

    #[test]
    fn export_empty_graph_is_valid_in_both_formats() {
        let g = InfluenceGraph {
            nodes: vec![],
            edges: vec![],
            query: toy_query(1, 1),
            truncated: false,
        };
        let dot = String::from_utf8(export_graph(&g, GraphFormat::Dot).unwrap()).unwrap();
        assert!(dot.starts_with("digraph influence {") && dot.trim_end().ends_with('}'));
        let json = export_graph(&g, GraphFormat::Json).unwrap();
        let parsed: InfluenceGraph = serde_json::from_slice(&json).unwrap();
        assert_eq!(parsed, g);
    }

    #[test]
    fn negative_edge_exports_red() {
        let g = InfluenceGraph {
            nodes: vec![
                GraphNode { id: "a@t0".into(), time: Some(0), feature: Some("a".into()) },
                GraphNode { id: "b@t1".into(), time: Some(1), feature: Some("b".into()) },
            ],
            edges: vec![GraphEdge {
                source: "a@t0".into(),
                target: "b@t1".into(),
                weight: -0.5,
            }],
            query: toy_query(1, 1),
            truncated: false,
        };
        let dot = String::from_utf8(export_graph(&g, GraphFormat::Dot).unwrap()).unwrap();
        assert!(dot.contains("color=red"), "{dot}");
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let (c, a, feature_names) = toy_fixture();
        let g = build_influence_hierarchy(&toy_query(2, 2), &c, &a, &feature_names).unwrap();
        let first = export_graph(&g, GraphFormat::Json).unwrap();
        let parsed: InfluenceGraph = serde_json::from_slice(&first).unwrap();
        let second = export_graph(&parsed, GraphFormat::Json).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn csv_dumps_have_expected_shape() {
        let alpha = Tensor::new(vec![1, 2], vec![0.4, 0.6]).unwrap();
        let ids = vec!["p0".to_string()];
        let csv = alpha_csv(&alpha, &ids);
        assert_eq!(csv, "patient_id,t0,t1\np0,0.4,0.6\n");
        let a = Tensor::new(vec![1, 2, 2], vec![1.0, 0.5, 0.0, 0.5]).unwrap();
        let acsv = attention_csv(&a, &ids);
        assert_eq!(acsv, "patient_id,source,q0,q1\np0,t0,1,0.5\np0,t1,0,0.5\n");
        let imp = FeatureImportance {
            scores: vec![("x".into(), 1.5)],
            aggregation: "test".into(),
        };
        assert_eq!(importance_csv(&imp), "feature,score\nx,1.5\n");
    }
}
