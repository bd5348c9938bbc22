//! Phase one, part C: counterfactual generation by abduction, action and
//! prediction on the estimated generalized-linear SCM.
//!
//! With the structural path of node `i` written as
//!
//! ```text
//! struct_i(d) = sum_{j in pa(i)} a[j][i] * fhat(d[j])
//! ```
//!
//! abduction recovers the exogenous residual `u_i = x_i - struct_i(d)`,
//! action flips the sensitive attribute, and prediction re-evaluates nodes
//! in topological order. Substituting the residual back in gives the delta
//! form used here:
//!
//! ```text
//! x_cf[i] = x[i] + struct_i(d_cf) - struct_i(d)
//! ```
//!
//! which generates counterfactuals without ever materializing `u`. The two
//! structural sums run over identical parent values whenever no ancestor of
//! `i` changed, so their difference is exactly zero and the coordinate is
//! returned bit-identical. Coordinates with no directed path from the
//! sensitive node are therefore never perturbed, not even by rounding.
//!
//! A second evaluator decodes through the graph autoencoder's embedding
//! mixing path instead of the refit structural map. It exists for
//! head-to-head comparisons against ground-truth counterfactuals on
//! synthetic benchmarks; the refit path is the one the pipeline uses.

use std::collections::HashMap;

use log::debug;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Matrix;
use crate::scm::{Dataset, Sample};
use crate::structure_learning::{GaeParams, ScmEstimate};

/// Errors from counterfactual generation.
#[derive(Debug, Error)]
pub enum CounterfactualError {
    #[error("adjacency edge {from} -> {to} contradicts the stored topological order")]
    NotTopological { from: usize, to: usize },
    #[error("stored order is not a permutation of 0..{nodes}")]
    MalformedOrder { nodes: usize },
    #[error("sample has {got} profile variables, the graph expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("factual and counterfactual datasets are misaligned: {reason}")]
    Misaligned { reason: String },
}

/// How a counterfactual was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    /// Evaluated on the true SCM with the true exogenous noise.
    GroundTruth,
    /// Generated from a learned [`ScmEstimate`].
    Estimated,
}

/// A factual sample together with its sensitive-flipped counterfactual.
///
/// The counterfactual always carries `s = -factual.s`. Estimated
/// counterfactuals carry no label and no noise; ground-truth ones keep
/// whatever the simulator attached.
#[derive(Clone, Debug, PartialEq)]
pub struct CounterfactualPair {
    pub factual: Sample,
    pub counterfactual: Sample,
    pub provenance: Provenance,
}

/// Generates the counterfactual of one sample on the estimated SCM.
pub fn generate_counterfactual(
    estimate: &ScmEstimate,
    sample: &Sample,
) -> Result<Sample, CounterfactualError> {
    validate_structure(&estimate.a_pruned, &estimate.order)?;
    validate_dims(&estimate.a_pruned, sample.x.len())?;
    Ok(apply_map_path(&estimate.a_pruned, &estimate.order, &|v| estimate.fhat(v), sample))
}

/// Generates the counterfactual of one sample under an explicit scalar map.
///
/// This is the same recursion as [`generate_counterfactual`] with `map` in
/// place of the learned `fhat`, useful when the structural map is known in
/// closed form.
pub fn generate_counterfactual_with(
    adjacency: &Matrix,
    order: &[usize],
    map: &dyn Fn(f64) -> f64,
    sample: &Sample,
) -> Result<Sample, CounterfactualError> {
    validate_structure(adjacency, order)?;
    validate_dims(adjacency, sample.x.len())?;
    Ok(apply_map_path(adjacency, order, map, sample))
}

/// Generates a counterfactual decoding through the autoencoder's embedding
/// mixing path on the pruned graph, instead of the refit structural map.
pub fn generate_counterfactual_gae(
    estimate: &ScmEstimate,
    gae: &GaeParams,
    sample: &Sample,
) -> Result<Sample, CounterfactualError> {
    validate_structure(&estimate.a_pruned, &estimate.order)?;
    validate_dims(&estimate.a_pruned, sample.x.len())?;
    Ok(apply_gae_path(&estimate.a_pruned, &estimate.order, gae, sample))
}

/// Pairs every sample of `data` with its estimated counterfactual.
///
/// Output order matches input order. Counterfactuals are unlabeled; scoring
/// them is the detector's job, not the generator's.
pub fn generate_counterfactual_dataset(
    estimate: &ScmEstimate,
    data: &Dataset,
) -> Result<Vec<CounterfactualPair>, CounterfactualError> {
    validate_structure(&estimate.a_pruned, &estimate.order)?;
    validate_dims(&estimate.a_pruned, data.m())?;
    let pairs = data
        .samples()
        .iter()
        .map(|sample| CounterfactualPair {
            factual: sample.clone(),
            counterfactual: apply_map_path(
                &estimate.a_pruned,
                &estimate.order,
                &|v| estimate.fhat(v),
                sample,
            ),
            provenance: Provenance::Estimated,
        })
        .collect::<Vec<_>>();
    debug!("generated {} counterfactual pairs via the structural map", pairs.len());
    Ok(pairs)
}

/// Dataset variant of [`generate_counterfactual_gae`].
pub fn generate_counterfactual_dataset_gae(
    estimate: &ScmEstimate,
    gae: &GaeParams,
    data: &Dataset,
) -> Result<Vec<CounterfactualPair>, CounterfactualError> {
    validate_structure(&estimate.a_pruned, &estimate.order)?;
    validate_dims(&estimate.a_pruned, data.m())?;
    let pairs = data
        .samples()
        .iter()
        .map(|sample| CounterfactualPair {
            factual: sample.clone(),
            counterfactual: apply_gae_path(&estimate.a_pruned, &estimate.order, gae, sample),
            provenance: Provenance::Estimated,
        })
        .collect::<Vec<_>>();
    debug!("generated {} counterfactual pairs via the embedding mixing path", pairs.len());
    Ok(pairs)
}

/// Zips a dataset with its precomputed ground-truth counterfactuals.
///
/// Rows must correspond by index and differ exactly by a sign flip of the
/// sensitive attribute, as produced by the synthetic benchmark.
pub fn pair_ground_truth(
    factual: &Dataset,
    counterfactual: &Dataset,
) -> Result<Vec<CounterfactualPair>, CounterfactualError> {
    pair_datasets(factual, counterfactual, Provenance::GroundTruth)
}

/// Zips a dataset with counterfactual rows produced elsewhere, for
/// example reloaded from a counterfactual CSV, validating alignment the
/// same way [`pair_ground_truth`] does.
pub fn pair_datasets(
    factual: &Dataset,
    counterfactual: &Dataset,
    provenance: Provenance,
) -> Result<Vec<CounterfactualPair>, CounterfactualError> {
    if factual.len() != counterfactual.len() {
        return Err(CounterfactualError::Misaligned {
            reason: format!("{} factual rows vs {} counterfactual rows", factual.len(), counterfactual.len()),
        });
    }
    if factual.m() != counterfactual.m() {
        return Err(CounterfactualError::Misaligned {
            reason: format!("{} factual variables vs {}", factual.m(), counterfactual.m()),
        });
    }
    factual
        .samples()
        .iter()
        .zip(counterfactual.samples())
        .enumerate()
        .map(|(i, (f, c))| {
            if c.s != -f.s {
                return Err(CounterfactualError::Misaligned {
                    reason: format!("row {i} has s = {} on both sides", f.s),
                });
            }
            Ok(CounterfactualPair { factual: f.clone(), counterfactual: c.clone(), provenance })
        })
        .collect()
}

/// Recovers the exogenous residuals `u_i = x_i - struct_i(d)` of a sample.
///
/// The abduction step of the recursion, exposed for inspection. Residuals
/// align with `sample.x`; the sensitive root has no residual.
pub fn abduct(estimate: &ScmEstimate, sample: &Sample) -> Result<Vec<f64>, CounterfactualError> {
    abduct_with(&estimate.a_pruned, &|v| estimate.fhat(v), sample)
}

/// [`abduct`] under an explicit scalar map.
pub fn abduct_with(
    adjacency: &Matrix,
    map: &dyn Fn(f64) -> f64,
    sample: &Sample,
) -> Result<Vec<f64>, CounterfactualError> {
    validate_dims(adjacency, sample.x.len())?;
    let values = data_vector(sample);
    let mut cache = HashMap::new();
    Ok((1..adjacency.rows())
        .map(|i| values[i] - structural_sum(adjacency, i, &values, map, &mut cache))
        .collect())
}

/// Mean Euclidean distance between the counterfactual profiles of two
/// pairings of the same rows, typically estimated vs ground truth.
///
/// # Panics
/// Panics if the slices are empty or their lengths differ.
pub fn mean_counterfactual_distance(a: &[CounterfactualPair], b: &[CounterfactualPair]) -> f64 {
    assert_eq!(a.len(), b.len(), "pairings cover different row counts");
    assert!(!a.is_empty(), "no rows to compare");
    let total: f64 = a
        .iter()
        .zip(b)
        .map(|(pa, pb)| {
            let (ca, cb) = (&pa.counterfactual.x, &pb.counterfactual.x);
            assert_eq!(ca.len(), cb.len(), "pairings cover different variable counts");
            ca.iter().zip(cb).map(|(va, vb)| (va - vb).powi(2)).sum::<f64>().sqrt()
        })
        .sum();
    total / a.len() as f64
}

/// Checks that `order` is a permutation respecting every edge of `adjacency`.
fn validate_structure(adjacency: &Matrix, order: &[usize]) -> Result<(), CounterfactualError> {
    let n = adjacency.rows();
    assert_eq!(n, adjacency.cols(), "adjacency must be square");
    let mut pos = vec![usize::MAX; n];
    if order.len() != n {
        return Err(CounterfactualError::MalformedOrder { nodes: n });
    }
    for (p, &node) in order.iter().enumerate() {
        if node >= n || pos[node] != usize::MAX {
            return Err(CounterfactualError::MalformedOrder { nodes: n });
        }
        pos[node] = p;
    }
    for from in 0..n {
        for to in 0..n {
            if adjacency.get(from, to) != 0.0 && pos[from] >= pos[to] {
                return Err(CounterfactualError::NotTopological { from, to });
            }
        }
    }
    Ok(())
}

fn validate_dims(adjacency: &Matrix, m: usize) -> Result<(), CounterfactualError> {
    if m + 1 != adjacency.rows() {
        Err(CounterfactualError::DimensionMismatch { expected: adjacency.rows() - 1, got: m })
    } else {
        Ok(())
    }
}

/// The data vector `(s, x...)` of a sample.
fn data_vector(sample: &Sample) -> Vec<f64> {
    let mut values = Vec::with_capacity(sample.x.len() + 1);
    values.push(sample.s);
    values.extend_from_slice(&sample.x);
    values
}

/// `sum_j a[j][i] * map(values[j])`, memoizing `map` by value bits so equal
/// inputs always contribute equal terms.
fn structural_sum(
    adjacency: &Matrix,
    i: usize,
    values: &[f64],
    map: &dyn Fn(f64) -> f64,
    cache: &mut HashMap<u64, f64>,
) -> f64 {
    let mut acc = 0.0;
    for (j, &value) in values.iter().enumerate() {
        let weight = adjacency.get(j, i);
        if weight != 0.0 {
            acc += weight * *cache.entry(value.to_bits()).or_insert_with(|| map(value));
        }
    }
    acc
}

/// Runs the delta-form recursion with per-node structural parts supplied by
/// `structural`. The factual and counterfactual sums see bit-equal inputs
/// for every unchanged ancestor, so an untouched lineage yields a delta of
/// exactly zero and the guard below preserves the coordinate bit-for-bit.
fn apply_delta_recursion(
    order: &[usize],
    structural: &mut dyn FnMut(usize, &[f64]) -> f64,
    sample: &Sample,
) -> Sample {
    let factual = data_vector(sample);
    let mut flipped = factual.clone();
    flipped[0] = -sample.s;
    for &i in order {
        if i == 0 {
            continue;
        }
        let delta = structural(i, &flipped) - structural(i, &factual);
        if delta != 0.0 {
            flipped[i] = factual[i] + delta;
        }
    }
    Sample { s: -sample.s, x: flipped[1..].to_vec(), u: None, y: None }
}

fn apply_map_path(
    adjacency: &Matrix,
    order: &[usize],
    map: &dyn Fn(f64) -> f64,
    sample: &Sample,
) -> Sample {
    let mut cache = HashMap::new();
    let mut structural =
        |i: usize, values: &[f64]| structural_sum(adjacency, i, values, map, &mut cache);
    apply_delta_recursion(order, &mut structural, sample)
}

fn apply_gae_path(adjacency: &Matrix, order: &[usize], gae: &GaeParams, sample: &Sample) -> Sample {
    let k = gae.encoder.output_dim();
    let mut enc_cache: HashMap<u64, Vec<f64>> = HashMap::new();
    let mut structural = |i: usize, values: &[f64]| {
        let mut mixed = vec![0.0; k];
        for (j, &value) in values.iter().enumerate() {
            let weight = adjacency.get(j, i);
            if weight != 0.0 {
                let embedding = enc_cache.entry(value.to_bits()).or_insert_with(|| {
                    gae.encoder.forward(&Matrix::from_vec(1, 1, vec![value])).row(0).to_vec()
                });
                for (acc, e) in mixed.iter_mut().zip(embedding.iter()) {
                    *acc += weight * e;
                }
            }
        }
        gae.decoder.forward(&Matrix::from_vec(1, k, mixed)).get(0, 0)
    };
    apply_delta_recursion(order, &mut structural, sample)
}
