//! Fusing per-scenario plans into one investment decision.
//!
//! Approach 1 takes the elementwise maximum over every scenario plan.
//! Approach 2 clusters the plans (PCA reduction, then a diagonal Gaussian
//! mixture with the cluster count chosen by BIC), drops small clusters, picks
//! the member with the largest PCA contribution in each remaining cluster and
//! takes the maximum over those representatives only.

mod gmm;
mod pca;

use std::collections::BTreeMap;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

pub use gmm::{bic, fit_gmm, parameter_count, restart_rng, GmmFit, MixtureComponent, VARIANCE_FLOOR};
pub use pca::{pca, pca_contributions, Contributions, Pca};

use crate::error::{Error, Result};
use crate::grid::Network;
use crate::linalg::Matrix;
use crate::opf::Polarity;
use crate::planner::{entries_cost, PlanEntry, ScenarioPlan};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    #[default]
    #[serde(rename = "max")]
    MaxCombine,
    #[serde(rename = "cluster")]
    ClusterRepresentative,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    #[default]
    Relaxed,
    Discrete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterOptions {
    pub k_max: usize,
    pub seed: u64,
    /// Share of variance the reduced space must keep.
    pub reduce_var: f64,
    pub restarts: usize,
    pub max_em_iter: usize,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        ClusterOptions {
            k_max: 8,
            seed: 42,
            reduce_var: 0.8,
            restarts: 10,
            max_em_iter: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel<T> {
    pub feature_matrix: Matrix<T>,
    pub pca: Pca<T>,
    pub reduced_dim: usize,
    pub mixture: Vec<MixtureComponent<T>>,
    /// 1-based cluster per row, numbered by first appearance.
    pub assignments: Vec<usize>,
    pub chosen_k: usize,
    /// BIC for k = 1, 2, ... as far as the scan went.
    pub bic_curve: Vec<T>,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl<T: Real> ClusterModel<T> {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == cluster)
            .collect()
    }
}

/// Scenario-by-feature matrix with `(b_plus, b_minus)` in pu per candidate.
///
/// Candidate order follows the first plan's relaxed solution; every plan must
/// cover the same candidates.
pub fn feature_matrix<T: Real>(plans: &[ScenarioPlan<T>], net: &Network<T>, source: FeatureSource) -> Result<Matrix<T>> {
    if plans.len() < 2 {
        return Err(Error::InvalidInput("feature matrix needs at least two plans".into()));
    }
    let buses: Vec<u32> = match source {
        FeatureSource::Relaxed => {
            if plans.iter().any(|p| p.relaxed.is_empty()) {
                return Err(Error::InvalidInput(
                    "relaxed sizes are required to build features; re-run planning with relaxed values kept".into(),
                ));
            }
            plans[0].relaxed.iter().map(|c| c.bus).collect()
        }
        FeatureSource::Discrete => net.candidate_buses().to_vec(),
    };
    let mut rows = Vec::with_capacity(plans.len());
    for p in plans {
        let mut row = vec![T::zero(); 2 * buses.len()];
        match source {
            FeatureSource::Relaxed => {
                let these: Vec<u32> = p.relaxed.iter().map(|c| c.bus).collect();
                if these != buses {
                    return Err(Error::InvalidInput(format!(
                        "plan at {} has a different candidate set",
                        p.timestamp
                    )));
                }
                for (j, c) in p.relaxed.iter().enumerate() {
                    row[2 * j] = c.b_plus;
                    row[2 * j + 1] = c.b_minus;
                }
            }
            FeatureSource::Discrete => {
                for e in &p.entries {
                    let j = buses.iter().position(|&b| b == e.bus).ok_or_else(|| {
                        Error::InvalidInput(format!("plan entry at non-candidate bus {}", e.bus))
                    })?;
                    let col = match e.kind {
                        Polarity::Capacitor => 2 * j,
                        Polarity::Inductor => 2 * j + 1,
                    };
                    row[col] += e.susceptance_pu;
                }
            }
        }
        rows.push(row);
    }
    Ok(Matrix::from_rows(&rows))
}

/// PCA reduction followed by a BIC scan over diagonal Gaussian mixtures.
pub fn cluster_plans<T: Real>(m: &Matrix<T>, opts: &ClusterOptions) -> Result<ClusterModel<T>> {
    let n = m.rows();
    if n < 2 {
        return Err(Error::InvalidInput("clustering needs at least two rows".into()));
    }
    let fit = pca(m)?;
    let d = fit.dims_for(T::lit(opts.reduce_var)).min(n - 1);
    let data: Vec<Vec<T>> = (0..n).map(|i| (0..d).map(|c| fit.scores[(i, c)]).collect()).collect();

    let mut warnings = Vec::new();
    let mut bic_curve = Vec::new();
    let mut best: Option<(usize, T, GmmFit<T>)> = None;
    if d == 0 {
        // No spread at all: a single cluster.
        let comp = MixtureComponent { weight: T::one(), mean: Vec::new(), variance: Vec::new() };
        bic_curve.push(T::zero());
        best = Some((1, T::zero(), GmmFit { components: vec![comp], log_likelihood: T::zero(), trace: vec![], degenerate: false }));
    } else {
        for k in 1..=opts.k_max.min(n) {
            let mut best_k: Option<GmmFit<T>> = None;
            for r in 0..opts.restarts.max(1) {
                let mut rng = restart_rng(opts.seed, k, r);
                let g = fit_gmm(&data, k, &mut rng, opts.max_em_iter);
                debug_assert!(g.trace.windows(2).all(|w| w[1] >= w[0] - T::lit(1e-9) * w[0].abs().max(T::one())));
                if g.degenerate {
                    continue;
                }
                if best_k.as_ref().is_none_or(|b| g.log_likelihood > b.log_likelihood) {
                    best_k = Some(g);
                }
            }
            let Some(g) = best_k else {
                warnings.push(format!(
                    "every mixture fit with {k} components was degenerate; scan stopped at {}",
                    k - 1
                ));
                break;
            };
            let score = bic(g.log_likelihood, k, d, n);
            bic_curve.push(score);
            if best.as_ref().is_none_or(|(_, s, _)| score < *s) {
                best = Some((k, score, g));
            }
        }
    }
    let (chosen_k, _, g) = best.ok_or_else(|| Error::InvalidInput("no usable mixture fit".into()))?;

    // Relabel clusters by first appearance so numbering is stable.
    let raw = if d == 0 { vec![0; n] } else { g.assign(&data) };
    let mut relabel: BTreeMap<usize, usize> = BTreeMap::new();
    let mut order = Vec::new();
    for &c in &raw {
        if !relabel.contains_key(&c) {
            relabel.insert(c, relabel.len() + 1);
            order.push(c);
        }
    }
    let assignments = raw.iter().map(|c| relabel[c]).collect();
    let mut mixture: Vec<MixtureComponent<T>> = order.iter().map(|&c| g.components[c].clone()).collect();
    for (c, comp) in g.components.iter().enumerate() {
        if !relabel.contains_key(&c) {
            mixture.push(comp.clone());
        }
    }

    Ok(ClusterModel {
        feature_matrix: m.clone(),
        pca: fit,
        reduced_dim: d,
        mixture,
        assignments,
        chosen_k,
        bic_curve,
        seed: opts.seed,
        warnings,
    })
}

/// One representative row index per cluster with at least `min_cluster_size` members.
///
/// The representative maximizes the combined PCA contribution within its
/// cluster; ties go to the earlier timestamp.
pub fn select_representatives<T: Real>(
    cm: &ClusterModel<T>,
    timestamps: &[NaiveDateTime],
    min_cluster_size: usize,
) -> Result<Vec<usize>> {
    let n_clusters = cm.assignments.iter().copied().max().unwrap_or(0);
    let mut reps = Vec::new();
    for c in 1..=n_clusters {
        let members = cm.members(c);
        if members.len() < min_cluster_size.max(1) {
            continue;
        }
        if members.len() == 1 {
            reps.push(members[0]);
            continue;
        }
        let rows: Vec<Vec<T>> = members.iter().map(|&i| cm.feature_matrix.row(i).to_vec()).collect();
        let ctr = pca_contributions(&Matrix::from_rows(&rows))?;
        let tie = T::lit(1e-9);
        let mut best = 0;
        for j in 1..members.len() {
            let (a, b) = (ctr.combined[j], ctr.combined[best]);
            if a > b + tie || ((a - b).abs() <= tie && timestamps[members[j]] < timestamps[members[best]]) {
                best = j;
            }
        }
        reps.push(members[best]);
    }
    if reps.is_empty() {
        return Err(Error::InvalidInput(format!(
            "every cluster has fewer than {min_cluster_size} members; lower min_cluster_size"
        )));
    }
    Ok(reps)
}

/// Per bus and polarity, the largest size over all entry lists. Sorted by bus, then polarity.
pub fn combine_entries<T: Real>(lists: &[&[PlanEntry<T>]], mva_base: T) -> Vec<PlanEntry<T>> {
    let mut best: BTreeMap<(u32, Polarity), T> = BTreeMap::new();
    for list in lists {
        for e in *list {
            let v = best.entry((e.bus, e.kind)).or_insert(T::zero());
            *v = v.max(e.size_mvar);
        }
    }
    best.into_iter()
        .filter(|(_, s)| *s > T::zero())
        .map(|((bus, kind), size_mvar)| PlanEntry { bus, kind, size_mvar, susceptance_pu: size_mvar / mva_base })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub timestamp: NaiveDateTime,
    pub cluster: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ClusterProvenance<T> {
    pub assignments: Vec<ClusterAssignment>,
    pub chosen_k: usize,
    pub reduced_dim: usize,
    pub bic_curve: Vec<T>,
    pub representatives: Vec<NaiveDateTime>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FinalPlan<T> {
    pub entries: Vec<PlanEntry<T>>,
    pub cost: T,
    pub approach: Approach,
    pub source_scenarios: Vec<NaiveDateTime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<ClusterProvenance<T>>,
}

impl<T: Real> FinalPlan<T> {
    pub fn empty() -> Self {
        FinalPlan {
            entries: Vec::new(),
            cost: T::zero(),
            approach: Approach::MaxCombine,
            source_scenarios: Vec::new(),
            provenance: None,
        }
    }
}

/// Elementwise maximum of the discrete sizes of every plan.
pub fn combine_max<T: Real>(plans: &[&ScenarioPlan<T>], net: &Network<T>) -> Result<FinalPlan<T>> {
    if plans.is_empty() {
        return Err(Error::InvalidInput("nothing to combine".into()));
    }
    let buses = |p: &ScenarioPlan<T>| p.relaxed.iter().map(|c| c.bus).collect::<Vec<u32>>();
    let first = buses(plans[0]);
    if plans.iter().any(|p| !p.relaxed.is_empty() && !first.is_empty() && buses(p) != first) {
        return Err(Error::InvalidInput("plans were made for different candidate sets".into()));
    }
    let lists: Vec<&[PlanEntry<T>]> = plans.iter().map(|p| p.entries.as_slice()).collect();
    let entries = combine_entries(&lists, net.mva_base());
    Ok(FinalPlan {
        cost: entries_cost(&entries, net.catalog()),
        entries,
        approach: Approach::MaxCombine,
        source_scenarios: plans.iter().map(|p| p.timestamp).collect(),
        provenance: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionOptions {
    pub cluster: ClusterOptions,
    pub min_cluster_size: usize,
    pub features: FeatureSource,
}

impl Default for DecisionOptions {
    fn default() -> Self {
        DecisionOptions {
            cluster: ClusterOptions::default(),
            min_cluster_size: 3,
            features: FeatureSource::Relaxed,
        }
    }
}

pub fn decide<T: Real>(
    plans: &[ScenarioPlan<T>],
    approach: Approach,
    net: &Network<T>,
    opts: &DecisionOptions,
) -> Result<FinalPlan<T>> {
    if plans.is_empty() {
        return Err(Error::InvalidInput("no scenario plans to decide from".into()));
    }
    let all: Vec<&ScenarioPlan<T>> = plans.iter().collect();
    match approach {
        Approach::MaxCombine => combine_max(&all, net),
        Approach::ClusterRepresentative => {
            let timestamps: Vec<NaiveDateTime> = plans.iter().map(|p| p.timestamp).collect();
            if plans.len() == 1 {
                if opts.min_cluster_size > 1 {
                    return Err(Error::InvalidInput(format!(
                        "a single scenario cannot form a cluster of {} members",
                        opts.min_cluster_size
                    )));
                }
                let mut fp = combine_max(&all, net)?;
                fp.approach = Approach::ClusterRepresentative;
                fp.provenance = Some(ClusterProvenance {
                    assignments: vec![ClusterAssignment { timestamp: timestamps[0], cluster: 1 }],
                    chosen_k: 1,
                    reduced_dim: 0,
                    bic_curve: Vec::new(),
                    representatives: timestamps,
                    seed: opts.cluster.seed,
                    warnings: Vec::new(),
                });
                return Ok(fp);
            }
            let m = feature_matrix(plans, net, opts.features)?;
            let cm = cluster_plans(&m, &opts.cluster)?;
            let reps = select_representatives(&cm, &timestamps, opts.min_cluster_size)?;
            let chosen: Vec<&ScenarioPlan<T>> = reps.iter().map(|&i| &plans[i]).collect();
            let mut fp = combine_max(&chosen, net)?;
            fp.approach = Approach::ClusterRepresentative;
            fp.source_scenarios = timestamps.clone();
            fp.provenance = Some(ClusterProvenance {
                assignments: timestamps
                    .iter()
                    .zip(&cm.assignments)
                    .map(|(&timestamp, &cluster)| ClusterAssignment { timestamp, cluster })
                    .collect(),
                chosen_k: cm.chosen_k,
                reduced_dim: cm.reduced_dim,
                bic_curve: cm.bic_curve.clone(),
                representatives: reps.iter().map(|&i| timestamps[i]).collect(),
                seed: cm.seed,
                warnings: cm.warnings.clone(),
            });
            Ok(fp)
        }
    }
}
